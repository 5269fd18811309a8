//! Central finite-difference oracle for checking backward passes.

use super::{Tape, Var};
use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

fn evaluate<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), false);
    let out = f(&mut tape, xv)?;
    let v = tape.value(out).item()?;
    ensure!(
        v.is_finite(),
        Error::Numeric(format!("function value {v} is not finite"))
    );
    Ok(v)
}

/// Largest relative disagreement between the tape gradient of `f` at `x`
/// and the central difference `(f(x + h e_i) - f(x - h e_i)) / 2h`, over
/// the coordinates `coords`. Each error is `|a - n| / max(1, |a|)`.
pub fn grad_check_coords<F>(f: F, x: &Tensor<f64>, h: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    ensure!(
        (1e-7..=1e-2).contains(&h),
        Error::Config(format!("finite-difference step {h} outside [1e-7, 1e-2]"))
    );
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let out = f(&mut tape, xv)?;
    let v = tape.value(out).item()?;
    ensure!(
        v.is_finite(),
        Error::Numeric(format!("function value {v} is not finite"))
    );
    let grads = tape.backward(out)?;
    let zero = Tensor::zeros(x.shape());
    let analytic = grads.get(xv).unwrap_or(&zero);

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for &i in coords {
        ensure!(i < x.len(), Error::Index { index: i, len: x.len() });
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// [`grad_check_coords`] over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_coords(f, x, h, &coords)
}
