use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{pool_residual, residual_features, FeatureConfig};
use super::resynth::ResynthMethod;
use crate::audio::Waveform;
use crate::error::{Error, Result};

pub const MIN_BONAFIDE: usize = 50;

/// What the bonafide training audio went through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainCondition {
    DigitalBonafide,
    OtaBonafide,
}

impl TrainCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainCondition::DigitalBonafide => "digital-bonafide",
            TrainCondition::OtaBonafide => "ota-bonafide",
        }
    }
}

impl fmt::Display for TrainCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "digital-bonafide" => Ok(TrainCondition::DigitalBonafide),
            "ota-bonafide" => Ok(TrainCondition::OtaBonafide),
            _ => Err(Error::parse(
                "train condition",
                format!("unknown condition {s:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    #[serde(default)]
    pub features: FeatureConfig,
    /// Also fit on codec-resynthesis residuals of the training audio.
    #[serde(default = "DetectorConfig::default_codec_augmentation")]
    pub codec_augmentation: bool,
    /// Ridge added to each whitened direction, relative to the mean variance.
    /// Large values shrink the model toward a standardized distance.
    #[serde(default = "DetectorConfig::default_ridge")]
    pub ridge: f64,
}

impl DetectorConfig {
    fn default_codec_augmentation() -> bool {
        true
    }
    fn default_ridge() -> f64 {
        10.0
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            features: FeatureConfig::default(),
            codec_augmentation: Self::default_codec_augmentation(),
            ridge: Self::default_ridge(),
        }
    }
}

/// One-class scorer: a whitening projection learned from bonafide pooled
/// residuals; the score is the negated squared distance to the bonafide
/// center in the embedded space, so higher means more bonafide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub condition: TrainCondition,
    pub config: DetectorConfig,
    mean: Vec<f64>,
    scale: Vec<f64>,
    projection: Vec<Vec<f64>>,
}

fn pooled(x: &Waveform, method: ResynthMethod, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let r = residual_features(x, method, cfg)?;
    Ok(pool_residual(&r, cfg.bands))
}

pub fn train_detector(
    bonafide: &[Waveform],
    condition: TrainCondition,
    cfg: &DetectorConfig,
) -> Result<DetectorModel> {
    if bonafide.len() < MIN_BONAFIDE {
        return Err(Error::InsufficientData(format!(
            "{} bonafide utterances, need at least {MIN_BONAFIDE}",
            bonafide.len()
        )));
    }
    if !(cfg.ridge.is_finite() && cfg.ridge >= 0.0) {
        return Err(Error::Config(format!(
            "detector ridge {} must be non-negative",
            cfg.ridge
        )));
    }
    let mut methods = vec![ResynthMethod::Vocoder];
    if cfg.codec_augmentation {
        methods.push(ResynthMethod::Codec);
    }
    let jobs: Vec<(&Waveform, ResynthMethod)> = bonafide
        .iter()
        .flat_map(|x| methods.iter().map(move |&m| (x, m)))
        .collect();
    let rows: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|(x, m)| pooled(x, *m, &cfg.features))
        .collect::<Result<_>>()?;

    let n = rows.len() as f64;
    let d = cfg.features.dimension();
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    if scale.iter().all(|&s| s < 1e-12) {
        return Err(Error::DegenerateFeatures(
            "all residual statistics are constant".into(),
        ));
    }
    let scale: Vec<f64> = scale
        .into_iter()
        .map(|s| if s < 1e-12 { 1.0 } else { s })
        .collect();

    let z = DMatrix::from_fn(rows.len(), d, |i, j| (rows[i][j] - mean[j]) / scale[j]);
    let cov = z.transpose() * &z / n;
    let eig = SymmetricEigen::new(cov);
    let avg = eig.eigenvalues.iter().sum::<f64>() / d as f64;
    let ridge = cfg.ridge * avg;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let projection = order
        .into_iter()
        .map(|k| {
            let lambda = eig.eigenvalues[k].max(0.0);
            let col = eig.eigenvectors.column(k);
            // fix the eigenvector sign so training is reproducible
            let pivot = (0..d)
                .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()))
                .unwrap_or(0);
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            let w = sign / (lambda + ridge).sqrt();
            col.iter().map(|v| v * w).collect()
        })
        .collect();
    Ok(DetectorModel {
        condition,
        config: *cfg,
        mean,
        scale,
        projection,
    })
}

impl DetectorModel {
    pub fn score_pooled(&self, f: &[f64]) -> f64 {
        let z: Vec<f64> = f
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        -self
            .projection
            .iter()
            .map(|row| row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>().powi(2))
            .sum::<f64>()
    }

    /// Scores with the vocoder resynthesis used at inference.
    pub fn score(&self, x: &Waveform) -> Result<f64> {
        Ok(self.score_pooled(&pooled(x, ResynthMethod::Vocoder, &self.config.features)?))
    }

    pub fn score_batch(&self, xs: &[Waveform]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.score(x)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
