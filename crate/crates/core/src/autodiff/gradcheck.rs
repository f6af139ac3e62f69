//! Central-difference gradient checking.

use super::tensor::{no_grad, Tensor};
use crate::error::{Error, Result};

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("finite-difference eps {eps} outside [1e-7, 1e-3]")));
    }
    Ok(())
}

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps` for every component `i`.
pub fn numerical_gradient<F>(f: F, x: &Tensor, eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    check_eps(eps)?;
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = no_grad(|| f(&Tensor::new(x.shape(), probe.clone())?)?.item())?;
        probe[i] = orig - eps;
        let minus = no_grad(|| f(&Tensor::new(x.shape(), probe.clone())?)?.item())?;
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Max over components of `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

/// Compares reverse-mode gradients of scalar `f` at `x` against central
/// differences and returns the worst relative error.
pub fn gradient_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    check_eps(eps)?;
    let leaf = Tensor::param(x.shape(), x.to_vec())?;
    let y = f(&leaf)?;
    y.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
    let numeric = numerical_gradient(&f, x, eps)?;
    Ok(max_relative_error(&analytic, &numeric))
}
