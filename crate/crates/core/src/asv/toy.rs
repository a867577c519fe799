//! Desk-scale embedders: fixed differentiable front-ends followed by a
//! linear projection fitted with linear discriminant analysis.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::frontend::{Compression, FrontEnd, Pooling};
use super::Embedder;
use crate::audio::Waveform;
use crate::dsp::{mel_filterbank, FrameConfig};
use crate::error::{Error, Result};

/// Front-end families. All use mel bands with mean and standard deviation
/// pooling; the four variants are the even-parity corners of three binary
/// choices (40 or 64 bands, log or power-law compression, 25 or 32 ms
/// frames), so every pair differs in exactly two of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// 40 log-mel bands, 25 ms frames.
    MelStats,
    /// 40 mel bands, power-law compression, 32 ms frames.
    PowerLong,
    /// 64 log-mel bands, 32 ms frames.
    WideLog,
    /// 64 mel bands, power-law compression, 25 ms frames.
    WidePower,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::MelStats,
        Architecture::PowerLong,
        Architecture::WideLog,
        Architecture::WidePower,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::MelStats => "mel-stats",
            Architecture::PowerLong => "power-long",
            Architecture::WideLog => "wide-log",
            Architecture::WidePower => "wide-power",
        }
    }

    pub fn build_front_end(self, sample_rate: u32) -> FrontEnd {
        let sr = sample_rate as f64;
        let short = FrameConfig::STANDARD_16K;
        let long = FrameConfig {
            frame_len: 512,
            hop: 256,
            fft_len: 512,
        };
        let log = Compression::Log { floor: 1e-3 };
        let power = Compression::Power {
            exponent: 0.3,
            floor: 1e-3,
        };
        let (frame, bands, compression) = match self {
            Architecture::MelStats => (short, 40, log),
            Architecture::PowerLong => (long, 40, power),
            Architecture::WideLog => (long, 64, log),
            Architecture::WidePower => (short, 64, power),
        };
        let fb = mel_filterbank(bands, frame.fft_len, sr, 20.0, sr / 2.0);
        FrontEnd::new(frame, fb, compression, None, Pooling::MeanStd)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::parse("architecture", format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model_id: String,
    pub architecture: Architecture,
    pub seed: u64,
    /// Upper bound; the fitted dimension is min(this, speakers − 1).
    pub embedding_dimension: usize,
    /// Ridge added to the within-class scatter, relative to its mean eigenvalue.
    pub regularization: f64,
    pub sample_rate: u32,
}

impl TrainConfig {
    pub fn new(model_id: impl Into<String>, architecture: Architecture, seed: u64) -> Self {
        Self {
            model_id: model_id.into(),
            architecture,
            seed,
            embedding_dimension: 16,
            regularization: 0.5,
            sample_rate: crate::audio::DEFAULT_SAMPLE_RATE,
        }
    }
}

/// A trained toy embedder: front-end features, centering, linear projection.
#[derive(Clone)]
pub struct ToyEmbedder {
    model_id: String,
    architecture: Architecture,
    seed: u64,
    sample_rate: u32,
    front_end: FrontEnd,
    mean: Vec<f64>,
    projection: Vec<Vec<f64>>,
}

impl fmt::Debug for ToyEmbedder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToyEmbedder")
            .field("model_id", &self.model_id)
            .field("architecture", &self.architecture)
            .field("seed", &self.seed)
            .field("dimension", &self.projection.len())
            .finish()
    }
}

impl ToyEmbedder {
    pub fn from_parts(
        model_id: impl Into<String>,
        architecture: Architecture,
        seed: u64,
        sample_rate: u32,
        mean: Vec<f64>,
        projection: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let front_end = architecture.build_front_end(sample_rate);
        let dim = front_end.feature_dimension();
        if mean.len() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: mean.len(),
            });
        }
        if let Some(row) = projection.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: row.len(),
            });
        }
        if projection.is_empty() {
            return Err(Error::Container("empty projection".into()));
        }
        Ok(Self {
            model_id: model_id.into(),
            architecture,
            seed,
            sample_rate,
            front_end,
            mean,
            projection,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn projection(&self) -> &[Vec<f64>] {
        &self.projection
    }

    pub fn front_end(&self) -> &FrontEnd {
        &self.front_end
    }

    fn project(&self, features: &[f64]) -> Vec<f64> {
        self.projection
            .iter()
            .map(|row| {
                row.iter()
                    .zip(features.iter().zip(&self.mean))
                    .map(|(a, (f, m))| a * (f - m))
                    .sum()
            })
            .collect()
    }
}

impl Embedder for ToyEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embedding_dimension(&self) -> usize {
        self.projection.len()
    }

    fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    fn min_input_len(&self) -> usize {
        self.front_end.min_input_len()
    }

    fn forward(&self, samples: &[f64]) -> Vec<f64> {
        self.project(&self.front_end.features(samples))
    }

    fn differentiate(
        &self,
        samples: &[f64],
        cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        self.front_end
            .features_with_backward(samples, &mut |features| {
                let u = self.project(features);
                let du = cotangent(&u)?;
                let mut df = vec![0.0; features.len()];
                for (row, d) in self.projection.iter().zip(&du) {
                    for (o, a) in df.iter_mut().zip(row) {
                        *o += a * d;
                    }
                }
                Ok(df)
            })
    }
}

/// Embedding u = M·x[..n]; the smallest differentiable model, used for
/// closed-form checks.
#[derive(Debug, Clone)]
pub struct LinearEmbedder {
    model_id: String,
    sample_rate: u32,
    matrix: Vec<Vec<f64>>,
}

impl LinearEmbedder {
    pub fn new(
        model_id: impl Into<String>,
        sample_rate: u32,
        matrix: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = matrix.first().map_or(0, Vec::len);
        if n == 0 || matrix.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidAttackConfig(
                "linear embedder needs a rectangular matrix".into(),
            ));
        }
        Ok(Self {
            model_id: model_id.into(),
            sample_rate,
            matrix,
        })
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }
}

impl Embedder for LinearEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embedding_dimension(&self) -> usize {
        self.matrix.len()
    }

    fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    fn min_input_len(&self) -> usize {
        self.matrix[0].len()
    }

    fn forward(&self, samples: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .map(|row| row.iter().zip(samples).map(|(a, x)| a * x).sum())
            .collect()
    }

    fn differentiate(
        &self,
        samples: &[f64],
        cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let du = cotangent(&self.forward(samples))?;
        let mut dx = vec![0.0; samples.len()];
        for (row, d) in self.matrix.iter().zip(&du) {
            for (o, a) in dx.iter_mut().zip(row) {
                *o += a * d;
            }
        }
        Ok(dx)
    }
}

/// Fits a toy embedder on `(speaker, waveform)` pairs.
///
/// Features are standardized, the within-class scatter is whitened (with a
/// ridge), and the leading between-class eigenvectors form the projection.
/// Eigenvector signs are canonicalized so equal inputs give identical bits.
pub fn train_toy_embedder(corpus: &[(String, Waveform)], cfg: &TrainConfig) -> Result<ToyEmbedder> {
    let mut by_speaker: BTreeMap<&str, Vec<&Waveform>> = BTreeMap::new();
    for (spk, wav) in corpus {
        by_speaker.entry(spk.as_str()).or_default().push(wav);
    }
    if by_speaker.len() < 2 {
        return Err(Error::CorpusTooSmall(format!(
            "{} speaker(s); at least 2 required",
            by_speaker.len()
        )));
    }
    if let Some((spk, utts)) = by_speaker.iter().find(|(_, u)| u.len() < 5) {
        return Err(Error::CorpusTooSmall(format!(
            "speaker {spk} has {} utterances; at least 5 required",
            utts.len()
        )));
    }
    let front_end = cfg.architecture.build_front_end(cfg.sample_rate);
    let dim = front_end.feature_dimension();

    let mut classes: Vec<Vec<Vec<f64>>> = Vec::with_capacity(by_speaker.len());
    for utts in by_speaker.values() {
        let mut feats = Vec::with_capacity(utts.len());
        for wav in utts {
            if wav.sample_rate() != cfg.sample_rate {
                return Err(Error::SampleRateMismatch {
                    expected: cfg.sample_rate,
                    actual: wav.sample_rate(),
                });
            }
            if wav.len() < front_end.min_input_len() {
                return Err(Error::InputTooShort {
                    len: wav.len(),
                    min: front_end.min_input_len(),
                });
            }
            feats.push(front_end.features(wav.samples()));
        }
        classes.push(feats);
    }
    let n_total: usize = classes.iter().map(Vec::len).sum();

    let mut mean = vec![0.0; dim];
    for f in classes.iter().flatten() {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n_total as f64;
        }
    }
    let mut scale = vec![0.0; dim];
    for f in classes.iter().flatten() {
        for ((s, v), m) in scale.iter_mut().zip(f).zip(&mean) {
            *s += (v - m).powi(2) / n_total as f64;
        }
    }
    let scale: Vec<f64> = scale.iter().map(|v| v.sqrt().max(1e-6)).collect();
    let standardize = |f: &[f64]| -> DVector<f64> {
        DVector::from_iterator(
            dim,
            f.iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((v, m), s)| (v - m) / s),
        )
    };

    let mut within = DMatrix::<f64>::zeros(dim, dim);
    let mut between = DMatrix::<f64>::zeros(dim, dim);
    for feats in &classes {
        let zs: Vec<DVector<f64>> = feats.iter().map(|f| standardize(f)).collect();
        let class_mean = zs.iter().fold(DVector::zeros(dim), |acc, z| acc + z) / zs.len() as f64;
        for z in &zs {
            let d = z - &class_mean;
            within += &d * d.transpose();
        }
        between += (&class_mean * class_mean.transpose()) * zs.len() as f64;
    }
    within /= n_total as f64;
    between /= n_total as f64;

    let ridge = cfg.regularization * within.trace() / dim as f64;
    for i in 0..dim {
        within[(i, i)] += ridge;
    }
    let w_eig = SymmetricEigen::new(within);
    if w_eig
        .eigenvalues
        .iter()
        .any(|v| !v.is_finite() || *v <= 0.0)
    {
        return Err(Error::TrainingDivergence(
            "within-class scatter not positive definite".into(),
        ));
    }
    let inv_sqrt = DMatrix::from_diagonal(&w_eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    let whitener = &w_eig.eigenvectors * inv_sqrt * w_eig.eigenvectors.transpose();
    let b_white = &whitener * between * &whitener;
    let b_eig = SymmetricEigen::new((&b_white + b_white.transpose()) * 0.5);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        b_eig.eigenvalues[b]
            .total_cmp(&b_eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let out_dim = cfg.embedding_dimension.min(classes.len() - 1).max(1);
    let mut projection = Vec::with_capacity(out_dim);
    for &idx in order.iter().take(out_dim) {
        let mut v = b_eig.eigenvectors.column(idx).into_owned();
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        if pivot < 0.0 {
            v = -v;
        }
        let row = whitener.transpose() * v;
        projection.push(
            row.iter()
                .zip(&scale)
                .map(|(r, s)| r / s)
                .collect::<Vec<f64>>(),
        );
    }
    if projection.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::TrainingDivergence(
            "projection has non-finite entries".into(),
        ));
    }
    debug!(
        model = %cfg.model_id,
        architecture = %cfg.architecture,
        features = dim,
        embedding = out_dim,
        "trained toy embedder"
    );
    ToyEmbedder::from_parts(
        cfg.model_id.clone(),
        cfg.architecture,
        cfg.seed,
        cfg.sample_rate,
        mean,
        projection,
    )
}
