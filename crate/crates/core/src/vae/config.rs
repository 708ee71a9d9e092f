use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// GRU width, encoder and decoder.
    pub hidden: usize,
    pub gru_layers: usize,
    /// Width of the first dense layer of each output head.
    pub head_hidden: usize,
    pub beta_max: f64,
    /// KL weight increase per optimizer step.
    pub beta_step: f64,
    pub learning_rate: f64,
    /// Global gradient-norm ceiling per optimizer step; off when absent.
    pub grad_clip: Option<f64>,
    pub batch_size: usize,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub rng_seed: u64,
    /// Train the tensile strain head (its loss term is dropped when false).
    pub predict_tensile: bool,
    pub predict_diameter: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 96,
            hidden: 256,
            gru_layers: 2,
            head_hidden: 128,
            beta_max: 0.006,
            beta_step: 5e-7,
            learning_rate: 0.001,
            grad_clip: None,
            batch_size: 64,
            split: [0.8, 0.1, 0.1],
            early_stop_patience: 10,
            max_epochs: 200,
            rng_seed: 0,
            predict_tensile: true,
            predict_diameter: true,
        }
    }
}

impl ModelConfig {
    /// The small model used for finite-difference gradient checks.
    pub fn tiny() -> Self {
        Self { latent_dim: 4, hidden: 8, head_hidden: 6, batch_size: 2, ..Self::default() }
    }

    /// Sized for the synthetic corpus: small enough to memorize 32 fragments
    /// in a couple of minutes on one core. The latent keeps its full width.
    pub fn toy() -> Self {
        Self {
            hidden: 64,
            head_hidden: 32,
            // Reaches beta_max after 3000 steps, about the length of a 200-epoch run.
            beta_step: 2e-6,
            learning_rate: 0.002,
            grad_clip: Some(5.0),
            batch_size: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.latent_dim < 1 {
            return bad("latent_dim must be >= 1".into());
        }
        if self.hidden < 1 || self.head_hidden < 1 || self.gru_layers < 1 {
            return bad("hidden, head_hidden and gru_layers must be >= 1".into());
        }
        if !(self.beta_step > 0.0) || !(self.beta_max >= 0.0) {
            return bad(format!("beta_step must be > 0 and beta_max >= 0 (got {}, {})", self.beta_step, self.beta_max));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be > 0, got {c}"));
            }
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if self.split.iter().any(|&f| f < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split must be non-negative and sum to 1, got {:?}", self.split));
        }
        Ok(())
    }

    /// KL weight for the optimizer step with zero-based index `batch_index`.
    pub fn beta_at(&self, batch_index: u64) -> f64 {
        beta_schedule(batch_index, self.beta_step, self.beta_max)
    }
}

/// Linear KL annealing: `min(step * batch_index, max)`.
pub fn beta_schedule(batch_index: u64, beta_step: f64, beta_max: f64) -> f64 {
    (beta_step * batch_index as f64).min(beta_max)
}
