use serde::{Deserialize, Serialize};

use super::optim::AdadeltaConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_iterations: usize,
    pub batch_size: usize,
    /// Fractions of `total_iterations` after which the rate drops tenfold.
    pub milestones: Vec<f64>,
    pub label_smoothing: f64,
    pub seed: u64,
    /// Log and evaluate every this many iterations.
    pub eval_every: usize,
    /// Held-out items scored at each evaluation.
    pub eval_samples: usize,
    /// Write an intermediate checkpoint every this many iterations (0: never).
    pub checkpoint_every: usize,
    pub optimizer: AdadeltaConfig,
    /// Sampling weight per training source. Only one source is supported.
    pub source_weights: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iterations: 3000,
            batch_size: 32,
            milestones: vec![0.3, 0.6, 0.8],
            label_smoothing: 0.1,
            seed: 0,
            eval_every: 250,
            eval_samples: 200,
            checkpoint_every: 1000,
            optimizer: AdadeltaConfig::default(),
            source_weights: vec![1.0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive".into());
        }
        let increasing = self.milestones.windows(2).all(|w| w[0] < w[1]);
        if !increasing || self.milestones.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return fail(format!(
                "milestones {:?} must be strictly increasing within (0, 1)",
                self.milestones
            ));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return fail(format!("label_smoothing {} must lie in [0, 0.5)", self.label_smoothing));
        }
        let o = &self.optimizer;
        if !(o.rho > 0.0 && o.rho < 1.0 && o.eps > 0.0 && o.lr > 0.0) {
            return fail(format!("invalid optimizer settings {o:?}"));
        }
        if !(self.source_weights.len() == 1 && self.source_weights[0] > 0.0) {
            return fail("exactly one training source with a positive weight is supported".into());
        }
        Ok(())
    }

    /// Milestone iterations, rounded to the nearest integer.
    pub fn milestone_iterations(&self) -> Vec<usize> {
        self.milestones
            .iter()
            .map(|f| (f * self.total_iterations as f64).round() as usize)
            .collect()
    }
}

/// `0.1^k` where `k` counts the milestones already reached.
pub fn lr_factor(iteration: usize, config: &TrainConfig) -> f64 {
    let passed = config
        .milestone_iterations()
        .into_iter()
        .filter(|&m| iteration >= m)
        .count();
    0.1f64.powi(passed as i32)
}
