//! Projected-gradient attacks against one surrogate or a round-robin
//! ensemble of surrogates.

mod ensemble;
mod pgd;
mod trace;

use serde::{Deserialize, Serialize};

use crate::asv::Embedder;
use crate::error::{Error, Result};

pub use ensemble::ensemble_pgd_attack;
pub use pgd::{pgd_attack, pgd_from, project_linf};
pub use trace::{read_trace_records, write_trace_records, AttackTrace, Termination, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cosine similarity to the enrollment embedding, maximized.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Step size in amplitude units.
    pub alpha: f64,
    pub steps: usize,
    /// L∞ budget in amplitude units, relative to the clean input.
    pub epsilon: f64,
    pub loss: LossKind,
    pub max_ensemble_rounds: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            alpha: 0.004,
            steps: 20,
            epsilon: 0.08,
            loss: LossKind::Cosine,
            max_ensemble_rounds: 10,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidAttackConfig(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidAttackConfig(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.max_ensemble_rounds == 0 {
            return Err(Error::InvalidAttackConfig(
                "max_ensemble_rounds must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A model under attack together with its acceptance threshold.
#[derive(Clone, Copy)]
pub struct Surrogate<'a> {
    pub model: &'a dyn Embedder,
    pub threshold: f64,
}

impl<'a> Surrogate<'a> {
    pub fn new(model: &'a dyn Embedder, threshold: f64) -> Self {
        Self { model, threshold }
    }
}

impl std::fmt::Debug for Surrogate<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Surrogate")
            .field("model", &self.model.model_id())
            .field("threshold", &self.threshold)
            .finish()
    }
}
