//! Differentiable operations and their vector-Jacobian products.

use super::{Tape, Var};
use crate::error::{ensure, shape_err, Error, Result};
use crate::loss::{softmax_rows, LOG_EPS};
use crate::nn::conv::{self, Conv2dDims, TextConvDims};
use crate::nn::norm::{self, BatchStats, NormCache, NormDims};
use crate::nn::resample;
use crate::tensor::{gemm, MatRef, Rng, Scalar, Tensor};

/// Maps the output gradient of a custom operation to one gradient per input.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Tensor<T>>>;

pub(super) enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    MatMul(Var, Var),
    Dense { x: Var, w: Var, b: Var },
    Embed { table: Var, ids: Vec<usize> },
    ConvText { x: Var, w: Var, b: Var, dims: TextConvDims },
    MaxOverTime { x: Var, argmax: Vec<usize> },
    Concat { xs: Vec<Var>, widths: Vec<usize> },
    Upsample { x: Var, planes: usize, from: (usize, usize), to: (usize, usize) },
    Conv2d { x: Var, w: Var, b: Var, dims: Conv2dDims },
    NormTrain { x: Var, gamma: Var, beta: Var, dims: NormDims, cache: NormCache<T> },
    NormInfer { x: Var, gamma: Var, beta: Var, dims: NormDims, mean: Vec<T>, var: Vec<T>, eps: T },
    Dropout { x: Var, mask: Vec<T> },
    Softmax(Var),
    CrossEntropy { probs: Var, labels: Vec<usize> },
    SqErr { x: Var, target: Vec<T>, scale: T },
    Custom { inputs: Vec<Var>, backward: BackwardFn<T> },
}

impl<T: Scalar> Op<T> {
    pub(super) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => vec![*a, *b],
            Scale(a, _) | Sum(a) | Mean(a) | Reshape(a) | Relu(a) | Sigmoid(a) | Softmax(a) => vec![*a],
            Dense { x, w, b } | ConvText { x, w, b, .. } | Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            NormTrain { x, gamma, beta, .. } | NormInfer { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Embed { table, .. } => vec![*table],
            MaxOverTime { x, .. } | Upsample { x, .. } | Dropout { x, .. } | SqErr { x, .. } => vec![*x],
            CrossEntropy { probs, .. } => vec![*probs],
            Concat { xs, .. } => xs.clone(),
            Custom { inputs, .. } => inputs.clone(),
        }
    }
}

fn tensor<T: Scalar>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::from_vec(shape, data).expect("kernel output matches its declared shape")
}

fn expect_rank<T: Scalar>(t: &Tensor<T>, rank: usize, what: &str) -> Result<()> {
    ensure!(
        t.rank() == rank,
        shape_err!("{what} expects rank {rank}, got shape {:?}", t.shape())
    );
    Ok(())
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        ensure!(
            x.shape() == y.shape(),
            shape_err!("{what}: shapes {:?} and {:?} differ", x.shape(), y.shape())
        );
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(tensor(x.shape(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |p, q| p + q)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(v, Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `x [B, in]`, `w [out, in]`, `b [out]` to `x w^T + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        expect_rank(xv, 2, "dense input")?;
        expect_rank(wv, 2, "dense weight")?;
        let (batch, n_in, n_out) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
        ensure!(
            wv.shape()[1] == n_in && bv.shape() == [n_out],
            shape_err!(
                "dense: input {:?}, weight {:?}, bias {:?} disagree",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )
        );
        let mut out: Vec<T> = (0..batch).flat_map(|_| bv.data().iter().copied()).collect();
        gemm(
            T::one(),
            MatRef::new(xv.data(), batch, n_in),
            MatRef::new(wv.data(), n_out, n_in).t(),
            T::one(),
            &mut out,
        );
        Ok(self.push(tensor(&[batch, n_out], out), Op::Dense { x, w, b }))
    }

    /// Gathers rows of `table [V, d]`; `ids` holds `batch * len` entries.
    pub fn embed(&mut self, table: Var, ids: &[usize], batch: usize) -> Result<Var> {
        let tv = self.value(table);
        expect_rank(tv, 2, "embedding table")?;
        let (vocab, dim) = (tv.shape()[0], tv.shape()[1]);
        ensure!(
            batch > 0 && !ids.is_empty() && ids.len() % batch == 0,
            shape_err!("{} ids do not split into {batch} sequences", ids.len())
        );
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            ensure!(id < vocab, Error::Index { index: id, len: vocab });
            out.extend_from_slice(&tv.data()[id * dim..(id + 1) * dim]);
        }
        let v = tensor(&[batch, ids.len() / batch, dim], out);
        Ok(self.push(v, Op::Embed { table, ids: ids.to_vec() }))
    }

    /// Full convolution of `x [B, L, d]` with filters `w [F, m, d]`, giving
    /// `[B, F, L + m - 1]`.
    pub fn conv_text(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        expect_rank(xv, 3, "text convolution input")?;
        expect_rank(wv, 3, "text convolution filters")?;
        let dims = TextConvDims {
            batch: xv.shape()[0],
            len: xv.shape()[1],
            dim: xv.shape()[2],
            filters: wv.shape()[0],
            height: wv.shape()[1],
        };
        ensure!(
            wv.shape()[2] == dims.dim,
            shape_err!("filter depth {} does not match embedding size {}", wv.shape()[2], dims.dim)
        );
        ensure!(
            bv.shape() == [dims.filters],
            shape_err!("bias shape {:?} for {} filters", bv.shape(), dims.filters)
        );
        let out = conv::conv_text_forward(xv.data(), wv.data(), bv.data(), &dims);
        let v = tensor(&[dims.batch, dims.filters, dims.out_len()], out);
        Ok(self.push(v, Op::ConvText { x, w, b, dims }))
    }

    /// Max over the last axis; gradient flows to the first maximal entry.
    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        ensure!(xv.rank() >= 2, shape_err!("max-over-time needs rank >= 2, got {:?}", xv.shape()));
        let len = *xv.shape().last().unwrap();
        let (vals, argmax) = resample::max_over_time_forward(xv.data(), len);
        let shape = &xv.shape()[..xv.rank() - 1];
        let v = tensor(shape, vals);
        Ok(self.push(v, Op::MaxOverTime { x, argmax }))
    }

    /// Concatenates `[B, n_i]` inputs along the feature axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        ensure!(!xs.is_empty(), shape_err!("concat of nothing"));
        let batch = self.value(xs[0]).shape()[0];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let v = self.value(x);
            expect_rank(v, 2, "concat input")?;
            ensure!(v.shape()[0] == batch, shape_err!("concat batch sizes differ"));
            widths.push(v.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(batch * total);
        for b in 0..batch {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[b * w..(b + 1) * w]);
            }
        }
        Ok(self.push(tensor(&[batch, total], out), Op::Concat { xs: xs.to_vec(), widths }))
    }

    /// Nearest-neighbor resize of `[B, C, H, W]` to `[B, C, H', W']`.
    pub fn upsample(&mut self, x: Var, to: (usize, usize)) -> Result<Var> {
        let xv = self.value(x);
        expect_rank(xv, 4, "upsample input")?;
        let s = xv.shape();
        let (h, w) = (s[2], s[3]);
        ensure!(
            to.0 >= h && to.1 >= w,
            Error::Contract(format!("upsample target {to:?} is smaller than {h}x{w}"))
        );
        let planes = s[0] * s[1];
        let out = resample::upsample_forward(xv.data(), planes, h, w, to.0, to.1);
        let v = tensor(&[s[0], s[1], to.0, to.1], out);
        Ok(self.push(v, Op::Upsample { x, planes, from: (h, w), to }))
    }

    /// Cross-correlation of `x [B, C_in, H, W]` with `w [C_out, C_in, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        expect_rank(xv, 4, "conv2d input")?;
        expect_rank(wv, 4, "conv2d weight")?;
        let (xs, ws) = (xv.shape(), wv.shape());
        ensure!(
            ws[1] == xs[1],
            shape_err!("conv2d expects {} input channels, got {}", ws[1], xs[1])
        );
        ensure!(ws[2] == ws[3], shape_err!("conv2d kernels must be square, got {ws:?}"));
        ensure!(bv.shape() == [ws[0]], shape_err!("conv2d bias shape {:?}", bv.shape()));
        ensure!(stride > 0, Error::Config("conv2d stride must be positive".into()));
        ensure!(
            xs[2] + 2 * pad >= ws[2] && xs[3] + 2 * pad >= ws[3],
            shape_err!("conv2d kernel {} larger than padded input {:?}", ws[2], xs)
        );
        let dims = Conv2dDims {
            batch: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ws[0],
            kernel: ws[2],
            stride,
            pad,
        };
        let out = conv::conv2d_forward(xv.data(), wv.data(), bv.data(), &dims);
        let v = tensor(&[dims.batch, dims.c_out, dims.out_h(), dims.out_w()], out);
        Ok(self.push(v, Op::Conv2d { x, w, b, dims }))
    }

    fn norm_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<NormDims> {
        let xv = self.value(x);
        ensure!(xv.rank() >= 2, shape_err!("batch norm needs [B, C, ...], got {:?}", xv.shape()));
        let channels = xv.shape()[1];
        ensure!(
            self.value(gamma).shape() == [channels] && self.value(beta).shape() == [channels],
            shape_err!("batch norm affine parameters must have shape [{channels}]")
        );
        Ok(NormDims {
            batch: xv.shape()[0],
            channels,
            spatial: xv.shape()[2..].iter().product(),
        })
    }

    /// Normalizes with the statistics of this batch and reports them.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let dims = self.norm_dims(x, gamma, beta)?;
        ensure!(
            dims.batch >= 2,
            Error::Contract("train-mode batch norm needs a batch of at least 2".into())
        );
        let (y, cache, stats) = norm::norm_train_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
            &dims,
        );
        let v = tensor(self.value(x).shape(), y);
        let out = self.push(v, Op::NormTrain { x, gamma, beta, dims, cache });
        Ok((out, stats))
    }

    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let dims = self.norm_dims(x, gamma, beta)?;
        ensure!(
            mean.len() == dims.channels && var.len() == dims.channels,
            shape_err!("running statistics do not cover {} channels", dims.channels)
        );
        let y = norm::norm_infer_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            mean,
            var,
            eps,
            &dims,
        );
        let v = tensor(self.value(x).shape(), y);
        Ok(self.push(
            v,
            Op::NormInfer {
                x,
                gamma,
                beta,
                dims,
                mean: mean.to_vec(),
                var: var.to_vec(),
                eps,
            },
        ))
    }

    /// Inverted dropout: each unit is zeroed with probability `p` and
    /// survivors are scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        ensure!(
            (0.0..1.0).contains(&p),
            Error::Config(format!("dropout rate {p} outside [0, 1)"))
        );
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < p { T::zero() } else { keep })
            .collect();
        self.dropout_with_mask(x, tensor(self.value(x).shape(), mask))
    }

    /// Dropout with a caller-supplied multiplicative mask.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        ensure!(
            mask.shape() == xv.shape(),
            shape_err!("dropout mask {:?} for input {:?}", mask.shape(), xv.shape())
        );
        let v = xv.mul(&mask)?;
        Ok(self.push(v, Op::Dropout { x, mask: mask.into_data() }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let k = *xv.shape().last().unwrap();
        let v = tensor(xv.shape(), softmax_rows(xv.data(), k));
        Ok(self.push(v, Op::Softmax(x)))
    }

    /// Batch mean of `-log(p[b, label_b] + eps)` for `probs [B, K]`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        expect_rank(pv, 2, "cross-entropy probabilities")?;
        let (batch, k) = (pv.shape()[0], pv.shape()[1]);
        ensure!(
            labels.len() == batch,
            shape_err!("{} labels for a batch of {batch}", labels.len())
        );
        let mut total = T::zero();
        for (b, &y) in labels.iter().enumerate() {
            ensure!(y < k, Error::Index { index: y, len: k });
            total -= (pv.data()[b * k + y] + T::of(LOG_EPS)).ln();
        }
        let v = Tensor::scalar(total / T::of(batch as f64));
        Ok(self.push(v, Op::CrossEntropy { probs, labels: labels.to_vec() }))
    }

    /// `scale * sum((x - target)^2)`.
    pub fn sq_err(&mut self, x: Var, target: &Tensor<T>, scale: T) -> Result<Var> {
        let xv = self.value(x);
        ensure!(
            xv.shape() == target.shape(),
            shape_err!("squared error: shapes {:?} and {:?} differ", xv.shape(), target.shape())
        );
        let mut total = T::zero();
        for (&a, &b) in xv.data().iter().zip(target.data()) {
            total += (a - b) * (a - b);
        }
        let v = Tensor::scalar(scale * total);
        Ok(self.push(
            v,
            Op::SqErr {
                x,
                target: target.data().to_vec(),
                scale,
            },
        ))
    }

    /// Records an operation whose vector-Jacobian product is supplied by
    /// the caller. `backward` must return one gradient per input, shaped
    /// like that input.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: BackwardFn<T>) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    pub(super) fn backward_op(
        &self,
        out: Var,
        g: &Tensor<T>,
        need: &dyn Fn(Var) -> bool,
    ) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[out.index()];
        let val = |v: Var| self.value(v);
        let like = |v: Var, data: Vec<T>| tensor(val(v).shape(), data);
        let gd = g.data();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.scale(-T::one())));
            }
            Op::Mul(a, b) => {
                res.push((*a, g.mul(val(*b))?));
                res.push((*b, g.mul(val(*a))?));
            }
            Op::Scale(a, s) => res.push((*a, g.scale(*s))),
            Op::Sum(a) => res.push((*a, Tensor::full(val(*a).shape(), gd[0])?)),
            Op::Mean(a) => {
                let n = T::of(val(*a).len() as f64);
                res.push((*a, Tensor::full(val(*a).shape(), gd[0] / n)?));
            }
            Op::Reshape(a) => res.push((*a, g.clone().reshape(val(*a).shape())?)),
            Op::Relu(a) => {
                let d = val(*a)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&x, &gi)| if x > T::zero() { gi } else { T::zero() })
                    .collect();
                res.push((*a, like(*a, d)));
            }
            Op::Sigmoid(a) => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&y, &gi)| gi * y * (T::one() - y))
                    .collect();
                res.push((*a, like(*a, d)));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let gm = MatRef::new(gd, m, n);
                if need(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(T::one(), gm, MatRef::new(bv.data(), k, n).t(), T::zero(), &mut da);
                    res.push((*a, like(*a, da)));
                }
                if need(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(T::one(), MatRef::new(av.data(), m, k).t(), gm, T::zero(), &mut db);
                    res.push((*b, like(*b, db)));
                }
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (batch, n_in, n_out) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                let gm = MatRef::new(gd, batch, n_out);
                if need(*x) {
                    let mut dx = vec![T::zero(); batch * n_in];
                    gemm(T::one(), gm, MatRef::new(wv.data(), n_out, n_in), T::zero(), &mut dx);
                    res.push((*x, like(*x, dx)));
                }
                if need(*w) {
                    let mut dw = vec![T::zero(); n_out * n_in];
                    gemm(T::one(), gm.t(), MatRef::new(xv.data(), batch, n_in), T::zero(), &mut dw);
                    res.push((*w, like(*w, dw)));
                }
                if need(*b) {
                    let mut db = vec![T::zero(); n_out];
                    for row in gd.chunks(n_out) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    res.push((*b, like(*b, db)));
                }
            }
            Op::Embed { table, ids } => {
                let dim = val(*table).shape()[1];
                let mut dt = vec![T::zero(); val(*table).len()];
                for (row, &id) in gd.chunks(dim).zip(ids) {
                    for (acc, &v) in dt[id * dim..(id + 1) * dim].iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                res.push((*table, like(*table, dt)));
            }
            Op::ConvText { x, w, b, dims } => {
                let (dx, dw, db) = conv::conv_text_backward(val(*x).data(), val(*w).data(), gd, dims, need(*x));
                if let Some(dx) = dx {
                    res.push((*x, like(*x, dx)));
                }
                res.push((*w, like(*w, dw)));
                res.push((*b, like(*b, db)));
            }
            Op::MaxOverTime { x, argmax } => {
                let mut dx = vec![T::zero(); val(*x).len()];
                for (&i, &gi) in argmax.iter().zip(gd) {
                    dx[i] += gi;
                }
                res.push((*x, like(*x, dx)));
            }
            Op::Concat { xs, widths } => {
                let total: usize = widths.iter().sum();
                let batch = g.shape()[0];
                let mut offset = 0;
                for (&x, &w) in xs.iter().zip(widths) {
                    let mut dx = Vec::with_capacity(batch * w);
                    for b in 0..batch {
                        dx.extend_from_slice(&gd[b * total + offset..b * total + offset + w]);
                    }
                    offset += w;
                    res.push((x, like(x, dx)));
                }
            }
            Op::Upsample { x, planes, from, to } => {
                let dx = resample::upsample_backward(gd, *planes, from.0, from.1, to.0, to.1);
                res.push((*x, like(*x, dx)));
            }
            Op::Conv2d { x, w, b, dims } => {
                let (dx, dw, db) = conv::conv2d_backward(val(*x).data(), val(*w).data(), gd, dims, need(*x));
                if let Some(dx) = dx {
                    res.push((*x, like(*x, dx)));
                }
                res.push((*w, like(*w, dw)));
                res.push((*b, like(*b, db)));
            }
            Op::NormTrain { x, gamma, beta, dims, cache } => {
                let (dx, dg, db) = norm::norm_train_backward(gd, val(*gamma).data(), cache, dims);
                res.push((*x, like(*x, dx)));
                res.push((*gamma, like(*gamma, dg)));
                res.push((*beta, like(*beta, db)));
            }
            Op::NormInfer { x, gamma, beta, dims, mean, var, eps } => {
                let (dx, dg, db) =
                    norm::norm_infer_backward(gd, val(*x).data(), val(*gamma).data(), mean, var, *eps, dims);
                res.push((*x, like(*x, dx)));
                res.push((*gamma, like(*gamma, dg)));
                res.push((*beta, like(*beta, db)));
            }
            Op::Dropout { x, mask } => {
                let dx = gd.iter().zip(mask).map(|(&gi, &m)| gi * m).collect();
                res.push((*x, like(*x, dx)));
            }
            Op::Softmax(x) => {
                let k = *g.shape().last().unwrap();
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for ((drow, yrow), grow) in dx.chunks_mut(k).zip(y.chunks(k)).zip(gd.chunks(k)) {
                    let dot: T = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    for ((d, &yi), &gi) in drow.iter_mut().zip(yrow).zip(grow) {
                        *d = yi * (gi - dot);
                    }
                }
                res.push((*x, like(*x, dx)));
            }
            Op::CrossEntropy { probs, labels } => {
                let pv = val(*probs);
                let k = pv.shape()[1];
                let scale = gd[0] / T::of(labels.len() as f64);
                let mut dp = vec![T::zero(); pv.len()];
                for (b, &y) in labels.iter().enumerate() {
                    dp[b * k + y] = -scale / (pv.data()[b * k + y] + T::of(LOG_EPS));
                }
                res.push((*probs, like(*probs, dp)));
            }
            Op::SqErr { x, target, scale } => {
                let c = T::of(2.0) * *scale * gd[0];
                let dx = val(*x).data().iter().zip(target).map(|(&a, &t)| c * (a - t)).collect();
                res.push((*x, like(*x, dx)));
            }
            Op::Custom { inputs, backward } => {
                let grads = backward(g);
                ensure!(
                    grads.len() == inputs.len(),
                    Error::Contract("custom backward returned the wrong number of gradients".into())
                );
                for (&x, d) in inputs.iter().zip(grads) {
                    ensure!(
                        d.shape() == val(x).shape(),
                        shape_err!("custom backward gradient {:?} for input {:?}", d.shape(), val(x).shape())
                    );
                    res.push((x, d));
                }
            }
        }
        Ok(res.into_iter().filter(|(v, _)| need(*v)).collect())
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
///
/// The result is clamped to the open interval (0, 1) so saturated inputs
/// never round to exactly 0 or 1.
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    let y = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let hi = T::one() - T::epsilon() / T::of(2.0);
    y.max(T::min_positive_value()).min(hi)
}
