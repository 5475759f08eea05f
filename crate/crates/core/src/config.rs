use serde::{Deserialize, Serialize};

use crate::cca::{CcaOptions, GroupWeighting};
use crate::error::{Error, Result};

/// Hyperparameters shared by every method. Linear and kernel methods read
/// only the CCA fields (and the kernel bandwidths).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Canonical components.
    pub k: usize,
    /// Ridge added to both auto-covariances.
    pub r: f64,
    /// Weight of same-venue pairs in the category-combined cross-covariance.
    pub beta: f64,
    pub group_weighting: GroupWeighting,

    pub learning_rate: f64,
    pub batch_size: usize,
    /// Upper bound on training epochs.
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Width of the two hidden layers of each sub-network.
    pub hidden_units: usize,
    /// Width of the linear output layer.
    pub output_dim: usize,
    pub dropout: f64,
    /// Stop once the epoch-mean objective improves by less than `tol` for
    /// `patience` consecutive epochs.
    pub tol: f64,
    pub patience: usize,

    /// Gaussian kernel bandwidths; the median pairwise distance when unset.
    pub sigma_x: Option<f64>,
    pub sigma_y: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 10,
            r: 1e-4,
            beta: 0.3,
            group_weighting: GroupWeighting::SizeWeighted,
            learning_rate: 1e-4,
            batch_size: 100,
            epochs: 30,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            hidden_units: 1024,
            output_dim: 10,
            dropout: 0.5,
            tol: 1e-4,
            patience: 3,
            sigma_x: None,
            sigma_y: None,
        }
    }
}

impl TrainConfig {
    pub fn cca_options(&self) -> CcaOptions {
        CcaOptions {
            k: self.k,
            r: self.r,
            beta: self.beta,
            weighting: self.group_weighting,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return fail("k must be positive".into());
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return fail(format!("r must be >= 0, got {}", self.r));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail(format!("beta must be in [0, 1], got {}", self.beta));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return fail("learning_rate, batch_size and epochs must be positive".into());
        }
        if self.hidden_units == 0 || self.output_dim == 0 {
            return fail("layer widths must be positive".into());
        }
        if self.k > self.output_dim {
            return fail(format!("k = {} exceeds output_dim = {}", self.k, self.output_dim));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return fail("invalid Adam parameters".into());
        }
        for s in [self.sigma_x, self.sigma_y].into_iter().flatten() {
            if !(s > 0.0) {
                return fail(format!("sigma must be > 0, got {s}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.k, c.batch_size, c.hidden_units, c.output_dim), (10, 100, 1024, 10));
        assert_eq!((c.learning_rate, c.r, c.beta), (1e-4, 1e-4, 0.3));
    }

    #[test]
    fn rejects_out_of_range() {
        for c in [
            TrainConfig { beta: 1.2, ..Default::default() },
            TrainConfig { k: 11, ..Default::default() },
            TrainConfig { dropout: 1.0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { sigma_x: Some(0.0), ..Default::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"beta": 1.0, "epochs": 5}"#).unwrap();
        assert_eq!(c.beta, 1.0);
        assert_eq!(c.epochs, 5);
        assert_eq!(c.k, 10);
    }
}
