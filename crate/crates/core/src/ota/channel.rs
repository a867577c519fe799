use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::preset::{DeviceKind, DevicePreset};
use super::room::RoomSetup;
use crate::audio::Waveform;
use crate::dsp::{fft_convolve, filter_zero_phase};
use crate::error::{Error, Result};

/// Replays `x` through loudspeaker, room and microphone.
///
/// Stages: speaker EQ, band limit and soft clip; convolution with the room
/// response (tail truncated); mic EQ and band limit (and soft clip if the
/// mic has a drive); room background noise and mic self-noise; finally the
/// result is rescaled to the peak of `x`. Noise draws come only from
/// `seed`, so equal seeds give bit-identical output.
pub fn apply_channel(
    x: &Waveform,
    speaker: &DevicePreset,
    room: &RoomSetup,
    mic: &DevicePreset,
    seed: u64,
) -> Result<Waveform> {
    ReplayChain::new(speaker, room, mic, x.sample_rate())?.apply(x, seed)
}

/// A device pair and room with the filters designed once, for batch replay.
#[derive(Debug, Clone)]
pub struct ReplayChain {
    speaker: DevicePreset,
    mic: DevicePreset,
    room: RoomSetup,
    sample_rate: u32,
    speaker_fir: Option<Vec<f64>>,
    mic_fir: Option<Vec<f64>>,
}

impl ReplayChain {
    pub fn new(
        speaker: &DevicePreset,
        room: &RoomSetup,
        mic: &DevicePreset,
        sample_rate: u32,
    ) -> Result<Self> {
        speaker.require_kind(DeviceKind::Loudspeaker)?;
        mic.require_kind(DeviceKind::Microphone)?;
        speaker.validate(sample_rate)?;
        mic.validate(sample_rate)?;
        Ok(ReplayChain {
            speaker_fir: speaker.design_filter(sample_rate),
            mic_fir: mic.design_filter(sample_rate),
            speaker: speaker.clone(),
            mic: mic.clone(),
            room: room.clone(),
            sample_rate,
        })
    }

    pub fn speaker(&self) -> &DevicePreset {
        &self.speaker
    }

    pub fn mic(&self) -> &DevicePreset {
        &self.mic
    }

    pub fn apply(&self, x: &Waveform, seed: u64) -> Result<Waveform> {
        if x.sample_rate() != self.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: self.sample_rate,
                actual: x.sample_rate(),
            });
        }
        let filtered = match &self.speaker_fir {
            Some(fir) => filter_zero_phase(x.samples(), fir),
            None => x.samples().to_vec(),
        };
        let played = self.speaker.soft_clip(&filtered);
        let reverberant = convolve_truncated(&played, self.room.impulse_response());
        let captured = match &self.mic_fir {
            Some(fir) => filter_zero_phase(&reverberant, fir),
            None => reverberant,
        };
        let mut y = self.mic.soft_clip(&captured);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for level in [self.room.background_noise_dbfs, self.mic.noise_floor_dbfs]
            .into_iter()
            .flatten()
        {
            let sigma = 10f64.powf(level / 20.0);
            for v in y.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * n;
            }
        }

        let target = x.peak();
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 && target > 0.0 {
            let scale = target / peak;
            for v in y.iter_mut() {
                *v *= scale;
            }
        }
        Waveform::from_clamped(y, self.sample_rate, x.id())
    }
}

/// Causal convolution keeping the first `x.len()` samples. A single-tap
/// response is applied directly so the identity room is exact.
pub fn convolve_truncated(x: &[f64], ir: &[f64]) -> Vec<f64> {
    if ir.len() == 1 {
        return x.iter().map(|v| v * ir[0]).collect();
    }
    let mut full = fft_convolve(x, ir);
    full.truncate(x.len());
    full
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ota::preset::{preset_registry, Tier};
    use crate::ota::room::RoomGeometry;

    fn speech_like(len: usize) -> Waveform {
        let mut s = 12345u64;
        let samples = (0..len)
            .map(|n| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let noise = ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5;
                let t = n as f64 / 16_000.0;
                0.3 * (2.0 * std::f64::consts::PI * 180.0 * t).sin() * (1.0 + (7.0 * t).sin()) / 2.0
                    + 0.05 * noise
            })
            .collect();
        Waveform::new(samples, 16_000, "probe").unwrap()
    }

    fn direct_sum(x: &[f64], h: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|n| (0..h.len().min(n + 1)).map(|k| h[k] * x[n - k]).sum())
            .collect()
    }

    #[test]
    fn identity_channel_is_fixed_point() {
        let x = speech_like(4000);
        let spk = DevicePreset::identity("s", Tier::High);
        let mic = DevicePreset::identity("m", Tier::Ios);
        let y = apply_channel(&x, &spk, &RoomSetup::identity(), &mic, 9).unwrap();
        let err = x
            .samples()
            .iter()
            .zip(y.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn linear_chain_matches_direct_convolution() {
        let x = speech_like(3000);
        let room = RoomSetup::simulate(&RoomGeometry::default(), 16_000, 4).unwrap();
        let spk = DevicePreset::identity("s", Tier::High);
        let mic = DevicePreset::identity("m", Tier::Ios);
        let y = apply_channel(&x, &spk, &room, &mic, 0).unwrap();
        let mut oracle = direct_sum(x.samples(), room.impulse_response());
        let peak = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for v in oracle.iter_mut() {
            *v *= x.peak() / peak;
        }
        let err = oracle
            .iter()
            .zip(y.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn deterministic_length_and_peak() {
        let x = speech_like(4000);
        let reg = preset_registry();
        let room = RoomSetup::simulate(&RoomGeometry::default(), 16_000, 4).unwrap();
        for (s, m) in reg.combinations() {
            let a = apply_channel(&x, s, &room, m, 77).unwrap();
            let b = apply_channel(&x, s, &room, m, 77).unwrap();
            let c = apply_channel(&x, s, &room, m, 78).unwrap();
            assert_eq!(a.samples(), b.samples());
            assert_ne!(a.samples(), c.samples());
            assert_eq!(a.len(), x.len());
            assert!((a.peak() - x.peak()).abs() < 1e-12);
        }
    }

    #[test]
    fn kind_mismatch_rejected() {
        let x = speech_like(1000);
        let reg = preset_registry();
        let err =
            apply_channel(&x, &reg.mics[0], &RoomSetup::identity(), &reg.mics[1], 0).unwrap_err();
        assert!(matches!(err, crate::Error::PresetKindMismatch { .. }));
        let err = apply_channel(
            &x,
            &reg.speakers[0],
            &RoomSetup::identity(),
            &reg.speakers[1],
            0,
        )
        .unwrap_err();
        assert!(matches!(err, crate::Error::PresetKindMismatch { .. }));
    }
}
