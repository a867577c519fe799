//! Mono waveforms and 16-bit PCM WAV I/O.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

const I16_SCALE: f64 = 32768.0;

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
    id: String,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32, id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform(
                "sample rate must be positive".into(),
            ));
        }
        if samples.is_empty() {
            return Err(Error::InvalidWaveform("zero-length waveform".into()));
        }
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(Error::InvalidWaveform(format!(
                "sample {i} = {v} outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            id: id.into(),
        })
    }

    /// Builds a waveform after clamping every sample into [-1, 1].
    pub fn from_clamped(
        samples: Vec<f64>,
        sample_rate: u32,
        id: impl Into<String>,
    ) -> Result<Self> {
        let samples = samples
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(-1.0, 1.0) } else { v })
            .collect();
        Self::new(samples, sample_rate, id)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Same waveform with samples snapped to the 16-bit PCM grid.
    pub fn quantized(&self) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|&v| dequantize(quantize(v)))
                .collect(),
            sample_rate: self.sample_rate,
            id: self.id.clone(),
        }
    }

    /// Resamples with a Hann-windowed sinc interpolator.
    pub fn resample(&self, target_rate: u32) -> Result<Self> {
        if target_rate == 0 {
            return Err(Error::InvalidWaveform(
                "target rate must be positive".into(),
            ));
        }
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        let ratio = target_rate as f64 / self.sample_rate as f64;
        let out_len = ((self.samples.len() as f64) * ratio).round().max(1.0) as usize;
        let cutoff = ratio.min(1.0);
        let half_width = 16.0 / cutoff;
        let n = self.samples.len() as isize;
        let out = (0..out_len)
            .map(|j| {
                let t = j as f64 / ratio;
                let lo = (t - half_width).floor().max(0.0) as isize;
                let hi = ((t + half_width).ceil() as isize).min(n - 1);
                let mut acc = 0.0;
                for i in lo..=hi {
                    let d = t - i as f64;
                    let w = 0.5 + 0.5 * (PI * d / half_width).cos();
                    let arg = PI * d * cutoff;
                    let s = if arg.abs() < 1e-12 {
                        1.0
                    } else {
                        arg.sin() / arg
                    };
                    acc += self.samples[i as usize] * cutoff * s * w;
                }
                acc.clamp(-1.0, 1.0)
            })
            .collect();
        Self::new(out, target_rate, self.id.clone())
    }
}

pub fn quantize(v: f64) -> i16 {
    (v * I16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

pub fn dequantize(q: i16) -> f64 {
    q as f64 / I16_SCALE
}

/// Reads a mono 16-bit PCM WAV. Rates other than `expected_rate` are rejected
/// unless `resample` is set.
pub fn read_wav(path: &Path, expected_rate: u32, resample: bool) -> Result<Waveform> {
    if !path.exists() {
        return Err(Error::MissingResource(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::InvalidWaveform(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::InvalidWaveform(format!(
            "{}: expected 16-bit integer PCM",
            path.display()
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(dequantize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let wav = Waveform::new(samples, spec.sample_rate, id)?;
    if spec.sample_rate != expected_rate {
        if resample {
            return wav.resample(expected_rate);
        }
        return Err(Error::SampleRateMismatch {
            expected: expected_rate,
            actual: spec.sample_rate,
        });
    }
    Ok(wav)
}

pub fn write_wav(path: &Path, wav: &Waveform) -> Result<()> {
    let quantized: Vec<i16> = wav.samples().iter().map(|&v| quantize(v)).collect();
    write_pcm(path, &quantized, wav.sample_rate())
}

/// Rounds an adversarial waveform to the 16-bit grid while keeping every
/// sample inside the L∞ ball of radius `epsilon` around `original`.
pub fn quantize_within(wav: &Waveform, original: &Waveform, epsilon: f64) -> Result<Waveform> {
    let q = quantize_codes_within(wav, original, epsilon)?;
    Waveform::new(
        q.into_iter().map(dequantize).collect(),
        wav.sample_rate(),
        wav.id(),
    )
}

fn quantize_codes_within(wav: &Waveform, original: &Waveform, epsilon: f64) -> Result<Vec<i16>> {
    if wav.len() != original.len() {
        return Err(Error::LengthMismatch {
            left: wav.len(),
            right: original.len(),
        });
    }
    Ok(wav
        .samples()
        .iter()
        .zip(original.samples())
        .map(|(&v, &o)| {
            let mut q = quantize(v);
            while (dequantize(q) - o).abs() > epsilon {
                q = if dequantize(q) > o { q - 1 } else { q + 1 };
            }
            q
        })
        .collect())
}

/// Writes an adversarial waveform so that the quantized file still lies inside
/// the L∞ ball of radius `epsilon` around `original`.
pub fn write_wav_within(
    path: &Path,
    wav: &Waveform,
    original: &Waveform,
    epsilon: f64,
) -> Result<()> {
    let quantized = quantize_codes_within(wav, original, epsilon)?;
    write_pcm(path, &quantized, wav.sample_rate())
}

fn write_pcm(path: &Path, samples: &[i16], sample_rate: u32) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(s)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_samples() {
        assert!(Waveform::new(vec![0.0, 1.5], 16_000, "a").is_err());
        assert!(Waveform::new(vec![f64::NAN], 16_000, "a").is_err());
        assert!(Waveform::new(vec![], 16_000, "a").is_err());
        assert!(Waveform::new(vec![0.1], 0, "a").is_err());
        assert!(Waveform::new(vec![-1.0, 1.0], 16_000, "a").is_ok());
    }

    #[test]
    fn wav_roundtrip_on_pcm_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let samples: Vec<f64> = (0..400).map(|i| 0.5 * (i as f64 * 0.07).sin()).collect();
        let wav = Waveform::new(samples, 16_000, "x").unwrap().quantized();
        write_wav(&path, &wav).unwrap();
        let back = read_wav(&path, 16_000, false).unwrap();
        assert_eq!(back.samples(), wav.samples());
        assert_eq!(back.id(), "x");
    }

    #[test]
    fn other_rates_rejected_unless_resampling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.wav");
        let samples: Vec<f64> = (0..800).map(|i| 0.3 * (i as f64 * 0.05).sin()).collect();
        write_wav(&path, &Waveform::new(samples, 8_000, "y").unwrap()).unwrap();
        assert!(matches!(
            read_wav(&path, 16_000, false),
            Err(Error::SampleRateMismatch {
                expected: 16_000,
                actual: 8_000
            })
        ));
        let up = read_wav(&path, 16_000, true).unwrap();
        assert_eq!(up.sample_rate(), 16_000);
        assert_eq!(up.len(), 1600);
    }

    #[test]
    fn budgeted_write_stays_inside_ball() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        let orig = Waveform::new(
            (0..256)
                .map(|i| dequantize((i * 37 % 2000) as i16 - 1000))
                .collect(),
            16_000,
            "o",
        )
        .unwrap();
        let eps = 0.08;
        let adv: Vec<f64> = orig
            .samples()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + if i % 2 == 0 { eps } else { -eps })
            .collect();
        let adv = Waveform::new(adv, 16_000, "a").unwrap();
        write_wav_within(&path, &adv, &orig, eps).unwrap();
        let back = read_wav(&path, 16_000, false).unwrap();
        for (b, o) in back.samples().iter().zip(orig.samples()) {
            assert!((b - o).abs() <= eps);
        }
    }
}
