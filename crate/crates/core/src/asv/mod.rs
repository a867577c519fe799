//! Speaker-verification core: the embedder abstraction, cosine scoring,
//! input gradients and equal-error-rate computation.

mod container;
mod eer;
mod frontend;
mod threshold;
mod toy;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub use container::{load_model, save_model, ModelHeader, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use eer::{compute_eer, eer_from_scores, EerResult, ScoredTrial};
pub use frontend::{Compression, FrontEnd, Pooling};
pub use threshold::{score_trials, AudioSource, ThresholdCache};
pub use toy::{train_toy_embedder, Architecture, LinearEmbedder, ToyEmbedder, TrainConfig};

/// Norm below which a raw embedding is treated as the zero vector.
const MIN_RAW_NORM: f64 = 1e-12;

/// A speaker-embedding network with access to input gradients.
///
/// Implementations are immutable after construction and must be
/// deterministic; they are shared across attack workers.
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;

    fn embedding_dimension(&self) -> usize;

    fn sample_rate(&self) -> u32;

    /// Shortest input, in samples, the model can embed.
    fn min_input_len(&self) -> usize;

    /// Raw (unnormalized) embedding.
    fn forward(&self, samples: &[f64]) -> Vec<f64>;

    /// Runs the forward pass, asks `cotangent` for dL/du given the raw
    /// embedding u, and returns dL/dx.
    fn differentiate(
        &self,
        samples: &[f64],
        cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let _ = (samples, cotangent);
        Err(Error::NonDifferentiable(self.model_id().to_string()))
    }
}

/// Length-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    vector: Vec<f64>,
    model_id: String,
}

impl SpeakerEmbedding {
    pub fn from_raw(raw: Vec<f64>, model_id: impl Into<String>) -> Result<Self> {
        let norm = l2_norm(&raw);
        if !norm.is_finite() || norm < MIN_RAW_NORM {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(Self {
            vector: raw.into_iter().map(|v| v / norm).collect(),
            model_id: model_id.into(),
        })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dimension(&self) -> usize {
        self.vector.len()
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_input(model: &dyn Embedder, x: &Waveform) -> Result<()> {
    if x.sample_rate() != model.sample_rate() {
        return Err(Error::SampleRateMismatch {
            expected: model.sample_rate(),
            actual: x.sample_rate(),
        });
    }
    if x.len() < model.min_input_len() {
        return Err(Error::InputTooShort {
            len: x.len(),
            min: model.min_input_len(),
        });
    }
    Ok(())
}

pub fn embed(model: &dyn Embedder, x: &Waveform) -> Result<SpeakerEmbedding> {
    check_input(model, x)?;
    SpeakerEmbedding::from_raw(model.forward(x.samples()), model.model_id())
}

/// Cosine similarity, clamped to [-1, 1].
pub fn score(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> Result<f64> {
    cosine(a.vector(), b.vector())
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let denom = l2_norm(a) * l2_norm(b);
    if !denom.is_finite() || denom < MIN_RAW_NORM {
        return Err(Error::DegenerateEmbedding);
    }
    Ok((dot(a, b) / denom).clamp(-1.0, 1.0))
}

/// Cosine loss J = cos(embed(x), target) together with dJ/dx. The target is
/// held constant and normalized here, so any positive rescaling of it leaves
/// the result unchanged.
pub fn loss_and_gradient(
    model: &dyn Embedder,
    x: &Waveform,
    target: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_input(model, x)?;
    if target.len() != model.embedding_dimension() {
        return Err(Error::DimensionMismatch {
            left: model.embedding_dimension(),
            right: target.len(),
        });
    }
    let target_norm = l2_norm(target);
    if !target_norm.is_finite() || target_norm < MIN_RAW_NORM {
        return Err(Error::NonFiniteGradient);
    }
    let b: Vec<f64> = target.iter().map(|v| v / target_norm).collect();
    let mut loss = f64::NAN;
    let grad = model.differentiate(x.samples(), &mut |u: &[f64]| {
        let norm = l2_norm(u);
        if !norm.is_finite() || norm < MIN_RAW_NORM {
            return Err(Error::NonFiniteGradient);
        }
        let cos = dot(u, &b) / norm;
        loss = cos;
        // d/du (u·b / |u|) = (b - cos·u/|u|) / |u|
        Ok(u.iter()
            .zip(&b)
            .map(|(ui, bi)| (bi - cos * ui / norm) / norm)
            .collect())
    })?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok((loss, grad))
}

/// Gradient of cos(embed(x), embed(x_enroll)) with respect to the samples of
/// x; the enrollment branch is treated as a constant.
pub fn input_gradient(model: &dyn Embedder, x: &Waveform, x_enroll: &Waveform) -> Result<Vec<f64>> {
    check_input(model, x_enroll)?;
    let target = model.forward(x_enroll.samples());
    loss_and_gradient(model, x, &target).map(|(_, g)| g)
}
