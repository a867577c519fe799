use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dsp::{design_fir, filter_zero_phase};
use crate::error::{Error, Result};

/// Taps of the linear-phase filter realizing EQ and band limit.
pub const DEVICE_FIR_TAPS: usize = 255;

/// Order of the Butterworth-shaped band-limit skirts.
const BAND_ORDER: i32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Loudspeaker,
    Microphone,
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceKind::Loudspeaker => "loudspeaker",
            DeviceKind::Microphone => "microphone",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    High,
    Medium,
    Low,
    Ios,
    AndroidHigh,
    AndroidLow,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::High => "high",
            Tier::Medium => "medium",
            Tier::Low => "low",
            Tier::Ios => "ios",
            Tier::AndroidHigh => "android_high",
            Tier::AndroidLow => "android_low",
        }
    }

    pub fn kind(self) -> DeviceKind {
        match self {
            Tier::High | Tier::Medium | Tier::Low => DeviceKind::Loudspeaker,
            Tier::Ios | Tier::AndroidHigh | Tier::AndroidLow => DeviceKind::Microphone,
        }
    }
}

/// One playback or capture device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DevicePreset {
    pub id: String,
    pub kind: DeviceKind,
    pub tier: Tier,
    /// Low and high cutoff in Hz; `None` disables band limiting.
    #[serde(default)]
    pub band_limit: Option<(f64, f64)>,
    /// Soft-clip drive; 0 disables the nonlinearity.
    #[serde(default)]
    pub drive: f64,
    /// Sparse EQ curve as (Hz, dB) points, interpolated on log frequency.
    #[serde(default)]
    pub eq: Vec<(f64, f64)>,
    /// RMS of the self-noise in dBFS (microphones only).
    #[serde(default)]
    pub noise_floor_dbfs: Option<f64>,
}

impl DevicePreset {
    /// Transparent device of the given tier.
    pub fn identity(id: impl Into<String>, tier: Tier) -> Self {
        DevicePreset {
            id: id.into(),
            kind: tier.kind(),
            tier,
            band_limit: None,
            drive: 0.0,
            eq: Vec::new(),
            noise_floor_dbfs: None,
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidPreset(format!("{}: {msg}", self.id)));
        if self.tier.kind() != self.kind {
            return bad(format!("tier {:?} is not a {} tier", self.tier, self.kind));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if let Some((lo, hi)) = self.band_limit {
            if !(lo > 0.0 && lo < hi && hi < nyquist) {
                return bad(format!(
                    "cutoffs ({lo}, {hi}) must satisfy 0 < low < high < {nyquist}"
                ));
            }
        }
        if !(self.drive.is_finite() && self.drive >= 0.0) {
            return bad(format!(
                "drive {} must be finite and non-negative",
                self.drive
            ));
        }
        for &(hz, db) in &self.eq {
            if !(hz > 0.0 && hz < nyquist && db.is_finite()) {
                return bad(format!("eq point ({hz}, {db}) out of range"));
            }
        }
        if self.eq.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("eq points must have increasing frequency".into());
        }
        match (self.kind, self.noise_floor_dbfs) {
            (DeviceKind::Loudspeaker, Some(_)) => {
                bad("noise floor is only defined for microphones".into())
            }
            (_, Some(db)) if !(db.is_finite() && db < 0.0) => {
                bad(format!("noise floor {db} dBFS must be below 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn require_kind(&self, expected: DeviceKind) -> Result<()> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(Error::PresetKindMismatch {
                expected: expected.to_string(),
                actual: self.kind.to_string(),
            })
        }
    }

    fn is_flat(&self) -> bool {
        self.band_limit.is_none() && self.eq.iter().all(|&(_, db)| db == 0.0)
    }

    /// Magnitude response of EQ and band limit at `f` Hz.
    pub fn gain(&self, f: f64) -> f64 {
        let mut g = 10f64.powf(self.eq_db(f) / 20.0);
        if let Some((lo, hi)) = self.band_limit {
            let hp = if f <= 0.0 {
                0.0
            } else {
                1.0 / (1.0 + (lo / f).powi(2 * BAND_ORDER)).sqrt()
            };
            let lp = 1.0 / (1.0 + (f / hi).powi(2 * BAND_ORDER)).sqrt();
            g *= hp * lp;
        }
        g
    }

    fn eq_db(&self, f: f64) -> f64 {
        let (first, last) = match (self.eq.first(), self.eq.last()) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return 0.0,
        };
        if f <= first.0 {
            return first.1;
        }
        if f >= last.0 {
            return last.1;
        }
        let i = self.eq.partition_point(|&(hz, _)| hz <= f);
        let (f0, d0) = self.eq[i - 1];
        let (f1, d1) = self.eq[i];
        let t = (f.ln() - f0.ln()) / (f1.ln() - f0.ln());
        d0 + t * (d1 - d0)
    }

    /// FIR realizing EQ and band limit, or `None` for a flat device.
    pub fn design_filter(&self, sample_rate: u32) -> Option<Vec<f64>> {
        if self.is_flat() {
            return None;
        }
        Some(design_fir(DEVICE_FIR_TAPS, sample_rate as f64, |f| {
            self.gain(f)
        }))
    }

    /// Linear filter (EQ and band limit); a flat device passes `x` through.
    pub fn filter(&self, x: &[f64], sample_rate: u32) -> Vec<f64> {
        match self.design_filter(sample_rate) {
            Some(fir) => filter_zero_phase(x, &fir),
            None => x.to_vec(),
        }
    }

    /// Memoryless tanh saturation with unit small-signal gain, applied
    /// relative to the signal peak so the clipping depth does not depend
    /// on playback level.
    pub fn soft_clip(&self, x: &[f64]) -> Vec<f64> {
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if self.drive == 0.0 || peak == 0.0 {
            return x.to_vec();
        }
        let d = self.drive;
        x.iter()
            .map(|&v| peak * (d * v / peak).tanh() / d)
            .collect()
    }

    /// Filter then saturate; the noise floor is added by the channel.
    pub fn process(&self, x: &[f64], sample_rate: u32) -> Vec<f64> {
        self.soft_clip(&self.filter(x, sample_rate))
    }
}

/// The three loudspeakers and three microphones of the replay grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetRegistry {
    pub speakers: Vec<DevicePreset>,
    pub mics: Vec<DevicePreset>,
}

impl PresetRegistry {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        for p in &self.speakers {
            p.require_kind(DeviceKind::Loudspeaker)?;
            p.validate(sample_rate)?;
        }
        for p in &self.mics {
            p.require_kind(DeviceKind::Microphone)?;
            p.validate(sample_rate)?;
        }
        let mut ids: Vec<&str> = self
            .speakers
            .iter()
            .chain(&self.mics)
            .map(|p| p.id.as_str())
            .collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidPreset("duplicate preset id".into()));
        }
        Ok(())
    }

    /// All (speaker, mic) pairs, speakers outermost.
    pub fn combinations(&self) -> Vec<(&DevicePreset, &DevicePreset)> {
        self.speakers
            .iter()
            .flat_map(|s| self.mics.iter().map(move |m| (s, m)))
            .collect()
    }

    pub fn speaker(&self, id: &str) -> Result<&DevicePreset> {
        self.speakers
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::InvalidPreset(format!("unknown speaker {id:?}")))
    }

    pub fn mic(&self, id: &str) -> Result<&DevicePreset> {
        self.mics
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::InvalidPreset(format!("unknown microphone {id:?}")))
    }
}

/// The shipped presets. Prices are the only thing known about the devices,
/// so the acoustic parameters are invented: cheaper devices get narrower
/// bands, rougher EQ, harder clipping and louder self-noise.
pub fn preset_registry() -> PresetRegistry {
    let speaker = |id: &str, tier, band, drive, eq: &[(f64, f64)]| DevicePreset {
        id: id.into(),
        kind: DeviceKind::Loudspeaker,
        tier,
        band_limit: Some(band),
        drive,
        eq: eq.to_vec(),
        noise_floor_dbfs: None,
    };
    let mic = |id: &str, tier, band, eq: &[(f64, f64)], floor| DevicePreset {
        id: id.into(),
        kind: DeviceKind::Microphone,
        tier,
        band_limit: Some(band),
        drive: 0.0,
        eq: eq.to_vec(),
        noise_floor_dbfs: Some(floor),
    };
    PresetRegistry {
        speakers: vec![
            speaker(
                "speaker_high",
                Tier::High,
                (80.0, 7600.0),
                0.5,
                &[(100.0, 0.0), (3000.0, 1.0), (7000.0, -1.0)],
            ),
            speaker(
                "speaker_medium",
                Tier::Medium,
                (150.0, 6000.0),
                1.5,
                &[(200.0, -2.0), (1000.0, 2.0), (2500.0, -2.0), (5000.0, 3.0)],
            ),
            speaker(
                "speaker_low",
                Tier::Low,
                (300.0, 4500.0),
                3.0,
                &[(400.0, -4.0), (900.0, 5.0), (1800.0, -4.0), (3200.0, 6.0)],
            ),
        ],
        mics: vec![
            mic(
                "mic_ios",
                Tier::Ios,
                (60.0, 7800.0),
                &[(100.0, 0.0), (4000.0, 1.0)],
                -75.0,
            ),
            mic(
                "mic_android_high",
                Tier::AndroidHigh,
                (100.0, 7000.0),
                &[(200.0, -1.0), (2000.0, 2.0), (6000.0, -2.0)],
                -65.0,
            ),
            mic(
                "mic_android_low",
                Tier::AndroidLow,
                (200.0, 5000.0),
                &[(300.0, -3.0), (1500.0, 3.0), (3500.0, -3.0)],
                -55.0,
            ),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::forward_fft;
    use rustfft::num_complex::Complex64;

    /// Harmonic power over fundamental power for a tone at an exact bin.
    fn thd(y: &[f64], f0_bin: usize) -> f64 {
        let n = y.len();
        let mut buf: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        forward_fft(n).process(&mut buf);
        let p = |k: usize| buf[k].norm_sqr();
        let harmonics: f64 = (2..=7)
            .map(|h| h * f0_bin)
            .filter(|&k| k < n / 2)
            .map(p)
            .sum();
        (harmonics / p(f0_bin)).sqrt()
    }

    #[test]
    fn registry_shape() {
        let reg = preset_registry();
        reg.validate(16_000).unwrap();
        assert_eq!(reg.speakers.len(), 3);
        assert_eq!(reg.mics.len(), 3);
        assert_eq!(reg.combinations().len(), 9);
    }

    #[test]
    fn thd_orders_speaker_tiers() {
        // 1 kHz on an exact bin of a 16000-sample FFT
        let sr = 16_000;
        let tone: Vec<f64> = (0..16_000)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / sr as f64).sin())
            .collect();
        let reg = preset_registry();
        let t: Vec<f64> = reg
            .speakers
            .iter()
            .map(|s| thd(&s.soft_clip(&tone), 1000))
            .collect();
        assert!(t[2] > t[1] && t[1] > t[0], "{t:?}");
        let full: Vec<f64> = reg
            .speakers
            .iter()
            .map(|s| thd(&s.process(&tone, sr), 1000))
            .collect();
        assert!(full[2] > full[1] && full[1] > full[0], "{full:?}");
    }

    #[test]
    fn invariants_rejected() {
        let mut p = DevicePreset::identity("x", Tier::Ios);
        p.band_limit = Some((0.0, 100.0));
        assert!(p.validate(16_000).is_err());
        p.band_limit = Some((100.0, 8000.0));
        assert!(p.validate(16_000).is_err());
        p.band_limit = None;
        p.noise_floor_dbfs = Some(3.0);
        assert!(p.validate(16_000).is_err());
        let mut s = DevicePreset::identity("s", Tier::Low);
        s.noise_floor_dbfs = Some(-60.0);
        assert!(s.validate(16_000).is_err());
        s.noise_floor_dbfs = None;
        s.kind = DeviceKind::Microphone;
        assert!(s.validate(16_000).is_err());
    }

    #[test]
    fn eq_interpolates_on_log_frequency() {
        let mut p = DevicePreset::identity("x", Tier::High);
        p.eq = vec![(100.0, 0.0), (1000.0, 10.0)];
        assert!((p.eq_db(50.0) - 0.0).abs() < 1e-12);
        assert!((p.eq_db(316.227_766_016_837_9) - 5.0).abs() < 1e-9);
        assert!((p.eq_db(4000.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn band_limit_attenuates_outside_band() {
        let reg = preset_registry();
        let low = reg.speaker("speaker_low").unwrap();
        assert!(low.gain(100.0) < 0.02);
        assert!(low.gain(7500.0) < reg.speaker("speaker_high").unwrap().gain(7500.0) / 4.0);
        assert!(low.gain(1500.0) > 0.5);
    }
}
