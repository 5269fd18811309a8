//! Dense row-major tensors.
//!
//! Images use the channel-first `[C, H, W]` convention, batches prepend a
//! leading `B` axis.

mod gemm;
mod init;
mod scalar;

pub(crate) use gemm::{gemm, MatRef};
pub use init::{random_init, Init, Rng, RngState};
pub use scalar::{DType, Scalar};

use crate::error::{ensure, shape_err, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: std::fmt::Debug> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const PREVIEW: usize = 8;
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &&self.data[..self.data.len().min(PREVIEW)])
            .finish()
    }
}

fn check_extents(shape: &[usize]) -> Result<usize> {
    ensure!(!shape.is_empty(), shape_err!("tensor rank must be at least 1"));
    ensure!(
        shape.iter().all(|&e| e > 0),
        shape_err!("extents must be positive, got {shape:?}")
    );
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    /// Wraps a row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_extents(shape)?;
        ensure!(
            data.len() == n,
            shape_err!("buffer of length {} does not fit shape {shape:?}", data.len())
        );
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_extents(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    /// Zero tensor. Unlike [`Tensor::full`] this does not validate extents,
    /// so it is meant for shapes taken from existing tensors.
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        ensure!(
            self.data.len() == 1,
            shape_err!("item() on tensor of shape {:?}", self.shape)
        );
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_extents(shape)?;
        ensure!(
            n == self.data.len(),
            shape_err!("cannot reshape {:?} into {shape:?}", self.shape)
        );
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Converts precision, e.g. to run an `f32` model's weights in `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        ensure!(
            self.rank() == 2 && other.rank() == 2,
            shape_err!("matmul needs rank-2 operands, got {:?} and {:?}", self.shape, other.shape)
        );
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        ensure!(
            k == k2,
            shape_err!("matmul inner extents differ: {:?} x {:?}", self.shape, other.shape)
        );
        let mut out = vec![T::zero(); m * n];
        gemm(
            T::one(),
            MatRef::new(&self.data, m, k),
            MatRef::new(&other.data, k, n),
            T::zero(),
            &mut out,
        );
        Tensor::from_vec(&[m, n], out)
    }

    fn zip_with(&self, other: &Tensor<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        ensure!(
            self.shape == other.shape,
            shape_err!("{what}: shapes {:?} and {:?} differ", self.shape, other.shape)
        );
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn max(&self) -> T {
        self.data[self.argmax()]
    }

    /// First index of the largest element.
    pub fn argmax(&self) -> usize {
        first_argmax(&self.data)
    }

    /// Splits the shape around `axis` into (outer, extent, inner) counts.
    fn axis_split(&self, axis: usize) -> Result<(usize, usize, usize)> {
        ensure!(
            axis < self.rank(),
            shape_err!("axis {axis} out of range for rank {}", self.rank())
        );
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    fn reduced_shape(&self, axis: usize) -> Vec<usize> {
        let mut shape = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        shape
    }

    fn fold_axis(&self, axis: usize, f: impl Fn(&mut dyn Iterator<Item = T>) -> T) -> Result<Tensor<T>> {
        let (outer, extent, inner) = self.axis_split(axis)?;
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mut it = (0..extent).map(|e| self.data[base + e * inner]);
                out.push(f(&mut it));
            }
        }
        Tensor::from_vec(&self.reduced_shape(axis), out)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        self.fold_axis(axis, |it| it.fold(T::zero(), |a, b| a + b))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let extent = T::of(self.axis_split(axis)?.1 as f64);
        Ok(self.sum_axis(axis)?.map(|v| v / extent))
    }

    pub fn max_axis(&self, axis: usize) -> Result<Tensor<T>> {
        self.fold_axis(axis, |it| it.fold(T::neg_infinity(), |a, b| if b > a { b } else { a }))
    }

    pub fn argmax_axis(&self, axis: usize) -> Result<Vec<usize>> {
        let (outer, extent, inner) = self.axis_split(axis)?;
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mut best = 0;
                for e in 1..extent {
                    if self.data[base + e * inner] > self.data[base + best * inner] {
                        best = e;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }
}

pub(crate) fn first_argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construct_fill_and_buffer() {
        let z = Tensor::<f32>::full(&[2, 3], 0.0).unwrap();
        assert_eq!(z.shape(), &[2, 3]);
        assert_eq!(z.data(), &[0.0; 6]);
        let s = Tensor::<f32>::from_vec(&[1], vec![7.0]).unwrap();
        assert_eq!(s.item().unwrap(), 7.0);
    }

    #[test]
    fn construct_rejects_bad_buffers() {
        assert!(matches!(
            Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(Tensor::<f32>::full(&[2, 0], 1.0).is_err());
        assert!(Tensor::<f32>::full(&[], 1.0).is_err());
    }

    #[test]
    fn matmul_examples() {
        let eye = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(eye.matmul(&b).unwrap(), b);

        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Tensor::<f64>::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        let p = a.matmul(&ones).unwrap();
        assert_eq!(p.shape(), &[2, 1]);
        assert_eq!(p.data(), &[3.0, 7.0]);

        assert!(b.matmul(&b).is_err());
    }

    #[test]
    fn elementwise_examples() {
        let x = Tensor::<f32>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x.add(&Tensor::zeros(&[3])).unwrap(), x);
        let s = x.scale(0.8);
        for (got, want) in s.data().iter().zip([0.8f32, 1.6, 2.4]) {
            assert!((got - want).abs() < 1e-6);
        }
        let a = Tensor::<f32>::zeros(&[2]);
        assert!(a.mul(&x).is_err());
    }

    #[test]
    fn reduce_examples() {
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x.sum(), 6.0);
        let p = Tensor::<f64>::from_vec(&[3], vec![0.1, 0.9, 0.3]).unwrap();
        assert_eq!(p.argmax(), 1);
        let ones = Tensor::<f32>::full(&[3, 100, 100], 1.0).unwrap();
        assert_eq!(ones.mean(), 1.0);

        let m = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 5.0, 2.0, 7.0, 0.0, 9.0]).unwrap();
        assert_eq!(m.sum_axis(0).unwrap().data(), &[8.0, 5.0, 11.0]);
        assert_eq!(m.sum_axis(1).unwrap().data(), &[8.0, 16.0]);
        assert_eq!(m.max_axis(1).unwrap().data(), &[5.0, 9.0]);
        assert_eq!(m.argmax_axis(1).unwrap(), vec![1, 2]);
        assert_eq!(m.mean_axis(0).unwrap().data(), &[4.0, 2.5, 5.5]);
        assert!(m.sum_axis(2).is_err());
    }

    #[test]
    fn argmax_ties_pick_first() {
        assert_eq!(first_argmax(&[2.0, 2.0, 2.0]), 0);
    }

    #[test]
    fn non_finite_detected() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(t.ensure_finite("t"), Err(Error::Numeric(_))));
    }
}
