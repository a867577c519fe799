use serde::{Deserialize, Serialize};

use super::resynth::{resynthesize, ResynthMethod};
use crate::audio::Waveform;
use crate::dsp::{stft_magnitude, FrameConfig};
use crate::error::{Error, Result};

/// Spectrogram difference between an utterance and its resynthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFeature {
    /// frames × bins of |STFT(x)| − |STFT(resynthesize(x))|.
    pub matrix: Vec<Vec<f64>>,
    pub frame: FrameConfig,
    pub utterance: String,
    /// Mean of |STFT(x)|, kept for level normalization.
    pub input_level: f64,
}

impl ResidualFeature {
    pub fn num_frames(&self) -> usize {
        self.matrix.len()
    }

    pub fn num_bins(&self) -> usize {
        self.frame.num_bins()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix
            .iter()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    /// 25 ms / 10 ms at 16 kHz.
    #[serde(default = "FeatureConfig::default_frame")]
    pub frame: FrameConfig,
    /// Equal-width frequency bands used for pooling.
    #[serde(default = "FeatureConfig::default_bands")]
    pub bands: usize,
}

impl FeatureConfig {
    fn default_frame() -> FrameConfig {
        FrameConfig::STANDARD_16K
    }
    fn default_bands() -> usize {
        16
    }

    /// Length of the pooled vector.
    pub fn dimension(&self) -> usize {
        3 * self.bands
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            frame: Self::default_frame(),
            bands: Self::default_bands(),
        }
    }
}

pub fn residual_features(
    x: &Waveform,
    method: ResynthMethod,
    cfg: &FeatureConfig,
) -> Result<ResidualFeature> {
    let y = resynthesize(x, method)?;
    let a = stft_magnitude(x.samples(), cfg.frame);
    let b = stft_magnitude(y.samples(), cfg.frame);
    if a.is_empty() {
        return Err(Error::InputTooShort {
            len: x.len(),
            min: cfg.frame.frame_len,
        });
    }
    let count = (a.len() * cfg.frame.num_bins()) as f64;
    let input_level = a.iter().flatten().sum::<f64>() / count;
    let matrix = a
        .iter()
        .zip(&b)
        .map(|(fa, fb)| fa.iter().zip(fb).map(|(p, q)| p - q).collect())
        .collect();
    Ok(ResidualFeature {
        matrix,
        frame: cfg.frame,
        utterance: x.id().to_string(),
        input_level,
    })
}

/// Per band: mean residual, mean absolute residual and frame-to-frame
/// spread of the band mean, all divided by the input's mean magnitude so
/// playback level does not matter.
pub fn pool_residual(r: &ResidualFeature, bands: usize) -> Vec<f64> {
    let bins = r.num_bins();
    let frames = r.num_frames() as f64;
    let level = r.input_level.max(1e-12);
    let mut out = vec![0.0; 3 * bands];
    for b in 0..bands {
        let lo = 1 + b * (bins - 1) / bands;
        let hi = 1 + (b + 1) * (bins - 1) / bands;
        let width = (hi - lo) as f64;
        let per_frame: Vec<f64> = r
            .matrix
            .iter()
            .map(|f| f[lo..hi].iter().sum::<f64>() / width)
            .collect();
        let mean = per_frame.iter().sum::<f64>() / frames;
        let abs = r
            .matrix
            .iter()
            .map(|f| f[lo..hi].iter().map(|v| v.abs()).sum::<f64>() / width)
            .sum::<f64>()
            / frames;
        let spread = (per_frame.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / frames).sqrt();
        out[b] = mean / level;
        out[bands + b] = abs / level;
        out[2 * bands + b] = spread / level;
    }
    out
}
