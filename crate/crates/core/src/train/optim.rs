use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub eps: f64,
    /// Multiplier on the adaptive update.
    pub lr: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            rho: 0.9,
            eps: 1e-6,
            lr: 1.0,
        }
    }
}

/// Running averages `E[g²]` and `E[Δx²]` for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Accumulators {
    pub square_grad: Vec<f64>,
    pub square_delta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdadeltaConfig,
    pub steps: u64,
    pub slots: BTreeMap<String, Accumulators>,
}

impl OptimizerState {
    pub fn new(config: AdadeltaConfig, params: &Parameters) -> Self {
        let slots = params
            .iter()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    Accumulators {
                        square_grad: vec![0.0; t.numel()],
                        square_delta: vec![0.0; t.numel()],
                    },
                )
            })
            .collect();
        OptimizerState {
            config,
            steps: 0,
            slots,
        }
    }
}

/// One update using the gradients stored on `params`; a parameter without
/// a gradient is treated as having a zero gradient.
///
/// `Δx = −√(E[Δx²] + ε) / √(E[g²] + ε) · g` and the applied change is
/// `lr · lr_factor · Δx`; the accumulator tracks the unscaled `Δx`.
pub fn adadelta_step(params: &Parameters, state: &mut OptimizerState, lr_factor: f64) -> Result<Parameters> {
    let AdadeltaConfig { rho, eps, lr } = state.config;
    let lr = lr * lr_factor;
    let mut updated = Parameters::new();
    for (name, p) in params.iter() {
        let slot = state
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::Optimizer(format!("no optimizer state for {name}")))?;
        if slot.square_grad.len() != p.numel() {
            return Err(Error::Optimizer(format!("optimizer state for {name} has the wrong size")));
        }
        let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Optimizer(format!("non-finite gradient for {name}")));
        }
        let mut data = p.to_vec();
        for i in 0..data.len() {
            let g = grad[i];
            let sg = rho * slot.square_grad[i] + (1.0 - rho) * g * g;
            let delta = (slot.square_delta[i] + eps).sqrt() / (sg + eps).sqrt() * g;
            slot.square_grad[i] = sg;
            slot.square_delta[i] = rho * slot.square_delta[i] + (1.0 - rho) * delta * delta;
            data[i] -= lr * delta;
        }
        updated.insert(name, Tensor::param(p.shape(), data)?);
    }
    state.steps += 1;
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64, grad: f64) -> Parameters {
        let mut ps = Parameters::new();
        let p = Tensor::param(&[1], vec![value]).unwrap();
        p.scale(grad).sum().backward().unwrap();
        ps.insert("w", p);
        ps
    }

    #[test]
    fn first_step_magnitude() {
        let ps = one_param(0.0, 1.0);
        let mut st = OptimizerState::new(AdadeltaConfig::default(), &ps);
        let next = adadelta_step(&ps, &mut st, 1.0).unwrap();
        let dx = next.get("w").unwrap().data()[0];
        let expected = -(1e-6f64).sqrt() / (0.1f64 + 1e-6).sqrt();
        assert!((dx - expected).abs() < 1e-18);
        assert!((dx + 3.1623e-3).abs() < 1e-7);
        assert_eq!(st.steps, 1);
    }

    #[test]
    fn lr_scales_update_linearly() {
        let ps = one_param(0.0, 1.0);
        let mut a = OptimizerState::new(AdadeltaConfig::default(), &ps);
        let mut b = OptimizerState::new(AdadeltaConfig { lr: 0.1, ..AdadeltaConfig::default() }, &ps);
        let full = adadelta_step(&ps, &mut a, 1.0).unwrap().get("w").unwrap().data()[0];
        let tenth = adadelta_step(&ps, &mut b, 1.0).unwrap().get("w").unwrap().data()[0];
        assert!((tenth - full / 10.0).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let ps = one_param(2.0, 1.0);
        let mut st = OptimizerState::new(AdadeltaConfig::default(), &ps);
        adadelta_step(&ps, &mut st, 1.0).unwrap();
        let before = st.slots["w"].clone();
        let zero = one_param(2.0, 0.0);
        let next = adadelta_step(&zero, &mut st, 1.0).unwrap();
        assert_eq!(next.get("w").unwrap().data()[0], 2.0);
        assert_eq!(st.slots["w"].square_grad[0], 0.9 * before.square_grad[0]);
        assert_eq!(st.slots["w"].square_delta[0], 0.9 * before.square_delta[0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let ps = one_param(0.0, f64::NAN);
        let mut st = OptimizerState::new(AdadeltaConfig::default(), &ps);
        let err = adadelta_step(&ps, &mut st, 1.0).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert!(matches!(err, Error::Optimizer(_)));
    }
}
