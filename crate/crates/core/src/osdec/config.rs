use serde::{Deserialize, Serialize};

use super::OsdecError;

/// Divisors applied to raw job and capacity quantities before they enter the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureScales {
    pub cores: f64,
    pub duration: f64,
    /// Used for window slack and lead time.
    pub time: f64,
    pub capacity: f64,
    /// Used for set sizes and deployment counts in the aux summary.
    pub count: f64,
}

impl Default for FeatureScales {
    fn default() -> Self {
        Self { cores: 8.0, duration: 6.0, time: 8.0, capacity: 16.0, count: 8.0 }
    }
}

/// Shape of the policy network and its auxiliary module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Jobs per set visible to the network.
    pub k_max: usize,
    pub d_model: usize,
    pub encoder_layers: usize,
    pub ffn_hidden: usize,
    pub heads: usize,
    pub aux_hidden_dim: usize,
    /// Steps of summary history fed to the GRU.
    pub aux_history_len: usize,
    pub high_dim: usize,
    pub low_dim: usize,
    pub high_coef: f64,
    pub low_coef: f64,
    /// When set, the prior coefficients weight the aux loss and the aux
    /// vectors enter the features unscaled.
    pub prior_coefs_as_loss_weights: bool,
    pub sigma_min: f64,
    pub scales: FeatureScales,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k_max: 32,
            d_model: 64,
            encoder_layers: 2,
            ffn_hidden: 128,
            heads: 1,
            aux_hidden_dim: 32,
            aux_history_len: 16,
            high_dim: 5,
            low_dim: 5,
            high_coef: 10.0,
            low_coef: 10.0,
            prior_coefs_as_loss_weights: false,
            sigma_min: 1e-3,
            scales: FeatureScales::default(),
            init_seed: 0,
        }
    }
}

/// Per-row job fields: cores, duration, slack, lead, remaining runtime.
pub const JOB_FIELDS: usize = 5;
/// Set one-hot (3), global flag, capacity, free capacity.
pub const MARKER_FIELDS: usize = 6;

impl ModelConfig {
    pub fn validate(&self) -> Result<(), OsdecError> {
        let dims = [
            ("k_max", self.k_max),
            ("d_model", self.d_model),
            ("encoder_layers", self.encoder_layers),
            ("ffn_hidden", self.ffn_hidden),
            ("aux_hidden_dim", self.aux_hidden_dim),
            ("aux_history_len", self.aux_history_len),
            ("high_dim", self.high_dim),
            ("low_dim", self.low_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(OsdecError::Config(format!("{name} must be positive")));
        }
        if self.heads != 1 {
            return Err(OsdecError::Config(format!("heads must be 1, got {}", self.heads)));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return Err(OsdecError::Config("sigma_min must be positive".into()));
        }
        if !(self.high_coef.is_finite() && self.low_coef.is_finite()) {
            return Err(OsdecError::Config("prior coefficients must be finite".into()));
        }
        let s = self.scales;
        if [s.cores, s.duration, s.time, s.capacity, s.count].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(OsdecError::Config("feature scales must be positive".into()));
        }
        Ok(())
    }

    /// Width of one feature row.
    pub fn feature_dim(&self) -> usize {
        JOB_FIELDS + MARKER_FIELDS + self.low_dim + self.high_dim
    }

    /// Rows of a padded feature matrix.
    pub fn feature_rows(&self) -> usize {
        3 * self.k_max + 1
    }

    pub(crate) fn feature_coefs(&self) -> (f64, f64) {
        if self.prior_coefs_as_loss_weights {
            (1.0, 1.0)
        } else {
            (self.low_coef, self.high_coef)
        }
    }

    pub(crate) fn aux_loss_weight(&self) -> f64 {
        if self.prior_coefs_as_loss_weights {
            self.high_coef
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.feature_dim(), 21);
        assert_eq!(c.feature_rows(), 97);
    }

    #[test]
    fn rejects_multi_head_and_unknown_keys() {
        let c = ModelConfig { heads: 2, ..ModelConfig::default() };
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<ModelConfig>(r#"{"d_modle": 3}"#).is_err());
    }
}
