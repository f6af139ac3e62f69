use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `KL(q ‖ softmax(logits))` averaged over non-pad positions, where `q`
/// puts `1 − ε_ls` on the target and spreads `ε_ls` evenly over the other
/// `V − 1` classes.
///
/// `logits` is `[.., V]` with one row per target id (row-major); targets
/// equal to `pad` contribute nothing.
pub fn smoothed_kl_loss(logits: &Tensor, targets: &[usize], eps_ls: f64, pad: usize) -> Result<Tensor> {
    if !(0.0..0.5).contains(&eps_ls) {
        return Err(Error::Config(format!("label smoothing {eps_ls} must lie in [0, 0.5)")));
    }
    let v = *logits.shape().last().unwrap_or(&0);
    if v < 2 || logits.numel() != targets.len() * v {
        return Err(Error::Shape(format!(
            "logits {:?} do not match {} targets",
            logits.shape(),
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= v) {
        return Err(Error::Codec(format!("target id {t} outside {v} classes")));
    }
    let valid = targets.iter().filter(|&&t| t != pad).count();
    if valid == 0 {
        return Err(Error::Contract("every target position is padding".into()));
    }

    let on = 1.0 - eps_ls;
    let off = eps_ls / (v - 1) as f64;
    let xlogx = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    let neg_entropy = valid as f64 * (xlogx(on) + (v - 1) as f64 * xlogx(off));

    let mut q = vec![0.0; targets.len() * v];
    for (row, &t) in targets.iter().enumerate() {
        if t == pad {
            continue;
        }
        q[row * v..(row + 1) * v].fill(off);
        q[row * v + t] = on;
    }
    let q = Tensor::new(&[targets.len(), v], q)?;
    let log_p = logits.reshape(&[targets.len(), v])?.log_softmax(1)?;
    let cross = log_p.mul(&q)?.sum();
    Ok(cross.scale(-1.0 / valid as f64).add_scalar(neg_entropy / valid as f64))
}
