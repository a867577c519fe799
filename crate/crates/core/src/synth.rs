//! Synthetic multi-speaker corpus: a formant synthesizer with
//! speaker-dependent pitch, vocal-tract length, spectral tilt, breathiness
//! and a fixed extra resonance, plus utterance-level background noise.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: String,
    pub f0_hz: f64,
    /// Multiplier on all formant frequencies (shorter tract → larger).
    pub formant_scale: f64,
    /// One-pole coefficient of the glottal low-pass; larger is darker.
    pub tilt: f64,
    pub breathiness: f64,
    pub resonance_hz: f64,
    pub resonance_gain: f64,
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub num_speakers: usize,
    /// Utterances per speaker used to fit the embedders.
    pub train_utterances: usize,
    /// Held-out utterances per speaker that make up the trial list.
    pub eval_utterances: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    /// Background-noise SNR range in dB.
    pub snr_db: (f64, f64),
    /// Speech RMS range before noise.
    pub rms: (f64, f64),
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_speakers: 8,
            train_utterances: 20,
            eval_utterances: 8,
            duration_secs: 0.5,
            sample_rate: DEFAULT_SAMPLE_RATE,
            snr_db: (10.0, 30.0),
            rms: (0.06, 0.12),
            seed: 7,
        }
    }
}

pub fn speaker_profiles(num: usize, seed: u64) -> Vec<SpeakerProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["speakers"]));
    (0..num)
        .map(|i| {
            // alternate low and high pitch ranges
            let f0_hz = if i % 2 == 0 {
                rng.gen_range(90.0..145.0)
            } else {
                rng.gen_range(165.0..240.0)
            };
            SpeakerProfile {
                id: format!("spk{i:02}"),
                f0_hz,
                formant_scale: rng.gen_range(0.82..1.18),
                tilt: rng.gen_range(0.55..0.92),
                breathiness: rng.gen_range(0.02..0.25),
                resonance_hz: rng.gen_range(1200.0..5000.0),
                resonance_gain: rng.gen_range(0.2..0.8),
                jitter: rng.gen_range(0.005..0.03),
            }
        })
        .collect()
}

const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
];
const BANDWIDTHS: [f64; 4] = [80.0, 100.0, 150.0, 250.0];

#[derive(Clone, Copy)]
enum Segment {
    Vowel([f64; 4]),
    Fricative([f64; 4]),
    Pause,
}

/// Two-pole resonator with unity gain at its center frequency.
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Self { y1: 0.0, y2: 0.0 }
    }

    fn tick(&mut self, x: f64, freq: f64, bw: f64, sr: f64) -> f64 {
        let r = (-PI * bw / sr).exp();
        let theta = 2.0 * PI * freq / sr;
        let a1 = 2.0 * r * theta.cos();
        let a2 = -r * r;
        let gain = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
        let y = gain * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Renders one utterance; `utt_seed` selects the phonetic content and noise.
pub fn synthesize_utterance(
    profile: &SpeakerProfile,
    utt_seed: u64,
    cfg: &CorpusConfig,
    id: impl Into<String>,
) -> Result<Waveform> {
    let sr = cfg.sample_rate as f64;
    let n = (cfg.duration_secs * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(utt_seed);

    // segment plan
    let mut plan: Vec<(usize, Segment)> = Vec::new();
    let mut pos = 0;
    while pos < n {
        let roll: f64 = rng.gen();
        let (dur_ms, seg) = if roll < 0.72 {
            let v = VOWELS[rng.gen_range(0..VOWELS.len())];
            let s = profile.formant_scale;
            (
                rng.gen_range(70.0..160.0),
                Segment::Vowel([v[0] * s, v[1] * s, v[2] * s, 3500.0 * s]),
            )
        } else if roll < 0.87 {
            let centre = rng.gen_range(2500.0..5000.0) * profile.formant_scale;
            (
                rng.gen_range(50.0..110.0),
                Segment::Fricative([
                    centre * 0.6,
                    centre,
                    (centre * 1.3).min(sr * 0.45),
                    (centre * 1.5).min(sr * 0.47),
                ]),
            )
        } else {
            (rng.gen_range(25.0..60.0), Segment::Pause)
        };
        let len = ((dur_ms / 1000.0) * sr) as usize;
        plan.push((len.max(1), seg));
        pos += len.max(1);
    }

    let vibrato_phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let mut resonators: Vec<Resonator> = (0..4).map(|_| Resonator::new()).collect();
    let mut extra = Resonator::new();
    let mut formants = match plan[0].1 {
        Segment::Vowel(f) | Segment::Fricative(f) => f,
        Segment::Pause => [500.0, 1500.0, 2500.0, 3500.0],
    };
    let smooth = (-1.0 / (0.012 * sr)).exp();
    let mut phase = 0.0_f64;
    let mut period_jitter = 1.0;
    let mut tilt_state = 0.0;
    let mut prev_glottal = 0.0;
    let ramp = (0.008 * sr) as usize;

    let mut speech = Vec::with_capacity(n);
    let mut t = 0usize;
    for &(len, seg) in &plan {
        let (target, voiced, noise_amp, amp) = match seg {
            Segment::Vowel(f) => (f, 1.0, profile.breathiness, 1.0),
            Segment::Fricative(f) => (f, 0.0, 1.0, 0.35),
            Segment::Pause => (formants, 0.0, 0.3, 0.03),
        };
        for i in 0..len {
            if t >= n {
                break;
            }
            for (f, tgt) in formants.iter_mut().zip(&target) {
                *f = smooth * *f + (1.0 - smooth) * tgt;
            }
            let time = t as f64 / sr;
            let f0 = profile.f0_hz
                * (1.0 + 0.05 * (2.0 * PI * 0.9 * time + vibrato_phase).sin())
                * period_jitter;
            phase += f0 / sr;
            if phase >= 1.0 {
                phase -= 1.0;
                period_jitter = 1.0 + profile.jitter * rng.sample::<f64, _>(StandardNormal);
            }
            // Rosenberg pulse, differentiated for lip radiation
            let glottal = if phase < 0.4 {
                0.5 * (1.0 - (PI * phase / 0.4).cos())
            } else if phase < 0.6 {
                (PI * (phase - 0.4) / 0.4).cos()
            } else {
                0.0
            };
            let source = glottal - prev_glottal;
            prev_glottal = glottal;
            tilt_state = profile.tilt * tilt_state + (1.0 - profile.tilt) * source * 8.0;
            let noise: f64 = rng.sample(StandardNormal);
            let excitation = voiced * tilt_state + noise_amp * 0.08 * noise;

            let mut y = 0.0;
            for (k, res) in resonators.iter_mut().enumerate() {
                let f = formants[k].min(sr * 0.47);
                y += res.tick(excitation, f, BANDWIDTHS[k] * profile.formant_scale, sr)
                    / (k as f64 + 1.0);
            }
            y += profile.resonance_gain * extra.tick(excitation, profile.resonance_hz, 180.0, sr);

            let edge = i.min(len - 1 - i);
            let env = if edge < ramp {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            speech.push(y * amp * (0.3 + 0.7 * env));
            t += 1;
        }
    }
    speech.resize(n, 0.0);

    let rms = (speech.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms <= 0.0 || !rms.is_finite() {
        return Err(Error::InvalidWaveform(
            "synthesizer produced silence".into(),
        ));
    }
    let target_rms = rng.gen_range(cfg.rms.0..=cfg.rms.1);
    let snr_db = rng.gen_range(cfg.snr_db.0..=cfg.snr_db.1);
    let noise_rms = target_rms * 10f64.powf(-snr_db / 20.0);
    let mut colored = 0.0;
    let samples: Vec<f64> = speech
        .iter()
        .map(|v| {
            let w: f64 = rng.sample(StandardNormal);
            colored = 0.5 * colored + w * 0.866;
            (v * target_rms / rms + noise_rms * colored).clamp(-0.99, 0.99)
        })
        .collect();
    Ok(Waveform::new(samples, cfg.sample_rate, id)?.quantized())
}

/// Train and evaluation utterances keyed by `spkNN/uttMMM.wav`.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub speakers: Vec<SpeakerProfile>,
    pub train: BTreeMap<String, Waveform>,
    pub eval: BTreeMap<String, Waveform>,
}

impl SyntheticCorpus {
    pub fn generate(cfg: &CorpusConfig) -> Result<Self> {
        if cfg.num_speakers < 2 {
            return Err(Error::CorpusTooSmall("need at least 2 speakers".into()));
        }
        let speakers = speaker_profiles(cfg.num_speakers, cfg.seed);
        let mut train = BTreeMap::new();
        let mut eval = BTreeMap::new();
        for spk in &speakers {
            for u in 0..cfg.train_utterances + cfg.eval_utterances {
                let key = format!("{}/utt{u:03}.wav", spk.id);
                let wav = synthesize_utterance(
                    spk,
                    derive_seed(cfg.seed, &["utt", &key]),
                    cfg,
                    key.clone(),
                )?;
                if u < cfg.train_utterances {
                    train.insert(key, wav);
                } else {
                    eval.insert(key, wav);
                }
            }
        }
        Ok(Self {
            speakers,
            train,
            eval,
        })
    }

    /// `(speaker, waveform)` pairs for embedder training.
    pub fn training_set(&self) -> Vec<(String, Waveform)> {
        self.train
            .iter()
            .map(|(k, w)| (speaker_from_key(k).to_string(), w.clone()))
            .collect()
    }
}

pub fn speaker_from_key(key: &str) -> &str {
    key.split('/').next().unwrap_or(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterances_are_deterministic_and_in_range() {
        let cfg = CorpusConfig::default();
        let spk = &speaker_profiles(2, 1)[0];
        let a = synthesize_utterance(spk, 99, &cfg, "a").unwrap();
        let b = synthesize_utterance(spk, 99, &cfg, "a").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8000);
        assert!(a.peak() < 1.0);
        assert!(a.rms() > 0.03);
        let c = synthesize_utterance(spk, 100, &cfg, "a").unwrap();
        assert_ne!(a, c);
    }
}
