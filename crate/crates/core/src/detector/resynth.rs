use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::{dequantize, Waveform};
use crate::dsp::{design_fir, filter_zero_phase, forward_fft, hann, inverse_fft};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResynthMethod {
    /// Harmonic-plus-noise analysis and synthesis.
    Vocoder,
    /// Narrowband low-pass followed by an 8-bit mu-law round trip.
    Codec,
}

impl ResynthMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ResynthMethod::Vocoder => "vocoder",
            ResynthMethod::Codec => "codec",
        }
    }
}

/// Hook for external analysis-synthesis tools.
pub trait Resynthesizer: Send + Sync {
    fn resynthesize(&self, x: &Waveform) -> Result<Waveform>;
}

impl Resynthesizer for ResynthMethod {
    fn resynthesize(&self, x: &Waveform) -> Result<Waveform> {
        resynthesize(x, *self)
    }
}

pub fn resynthesize(x: &Waveform, method: ResynthMethod) -> Result<Waveform> {
    if x.samples().iter().all(|&v| v == 0.0) {
        return Err(Error::SilentInput);
    }
    let y = match method {
        ResynthMethod::Vocoder => vocoder(x.samples(), x.sample_rate()),
        ResynthMethod::Codec => codec(x.samples(), x.sample_rate()),
    };
    Waveform::from_clamped(y, x.sample_rate(), x.id())
}

const FRAME: usize = 512;
const HOP: usize = 128;
const F0_MIN: f64 = 60.0;
const F0_MAX: f64 = 500.0;
const VOICING_THRESHOLD: f64 = 0.5;
/// Half-width in bins of the moving average giving the noise envelope.
const ENVELOPE_HALF_WIDTH: usize = 4;

struct FrameAnalysis {
    spectrum: Vec<Complex64>,
    f0: Option<f64>,
    periodicity: f64,
}

fn vocoder(x: &[f64], sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let window = hann(FRAME);
    let window_sum: f64 = window.iter().sum();
    let fft = forward_fft(FRAME);
    let ifft = inverse_fft(FRAME);
    let corr_fft = forward_fft(2 * FRAME);
    let corr_ifft = inverse_fft(2 * FRAME);
    let window_corr = autocorrelation(&window, &corr_fft, &corr_ifft);
    let half = FRAME / 2;
    let bins = half + 1;
    let num_frames = x.len() / HOP + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);

    let mut out = vec![0.0; x.len()];
    let mut norm = vec![0.0; x.len()];
    // noise frames are independent, so they add in power
    let mut noise_out = vec![0.0; x.len()];
    let mut noise_norm = vec![0.0; x.len()];
    let mut noise_segment = vec![0.0; FRAME];
    let mut phases: Vec<f64> = Vec::new();
    let mut segment = vec![0.0; FRAME];

    for m in 0..num_frames {
        let center = m * HOP;
        let start = center as isize - half as isize;
        let frame: Vec<f64> = (0..FRAME)
            .map(|i| {
                let n = start + i as isize;
                if n >= 0 && (n as usize) < x.len() {
                    x[n as usize] * window[i]
                } else {
                    0.0
                }
            })
            .collect();
        let a = analyze(&frame, sr, &fft, &corr_fft, &corr_ifft, &window_corr);
        let mags: Vec<f64> = a.spectrum[..bins].iter().map(|c| c.norm()).collect();
        segment.iter_mut().for_each(|v| *v = 0.0);
        noise_segment.iter_mut().for_each(|v| *v = 0.0);

        let aperiodic = match a.f0 {
            Some(f0) => {
                let count = ((0.49 * sr) / f0).floor() as usize;
                phases.resize(count, 0.0);
                for h in 1..=count {
                    let freq = h as f64 * f0;
                    let w = 2.0 * PI * freq / sr;
                    let amp = 2.0 * dtft_magnitude(&frame, w) / window_sum;
                    let phase = phases[h - 1];
                    // rotate a phasor instead of calling cos per sample
                    let step = Complex64::from_polar(1.0, w);
                    let mut z = Complex64::from_polar(amp, phase - w * half as f64);
                    for (i, s) in segment.iter_mut().enumerate() {
                        *s += z.re * window[i];
                        z *= step;
                    }
                    phases[h - 1] = (phase + w * HOP as f64).rem_euclid(2.0 * PI);
                }
                (1.0 - a.periodicity).clamp(0.0, 1.0)
            }
            None => {
                phases.clear();
                1.0
            }
        };

        if aperiodic > 0.0 {
            let envelope = smooth(&mags, ENVELOPE_HALF_WIDTH);
            let mut spec = vec![Complex64::new(0.0, 0.0); FRAME];
            for k in 1..half {
                let theta = rng.gen_range(0.0..2.0 * PI);
                spec[k] = Complex64::from_polar(envelope[k] * aperiodic, theta);
                spec[FRAME - k] = spec[k].conj();
            }
            ifft.process(&mut spec);
            let noise: Vec<f64> = spec
                .iter()
                .zip(&window)
                .map(|(c, w)| c.re / FRAME as f64 * w)
                .collect();
            // match the energy of the target windowed frame (Parseval)
            let target: f64 = envelope[1..half]
                .iter()
                .map(|e| 2.0 * (e * aperiodic).powi(2))
                .sum::<f64>()
                / FRAME as f64;
            let got: f64 = noise.iter().map(|v| v * v).sum();
            if got > 0.0 {
                let g = (target / got).sqrt();
                for (s, v) in noise_segment.iter_mut().zip(&noise) {
                    *s += g * v;
                }
            }
        }

        for i in 0..FRAME {
            let n = start + i as isize;
            if n >= 0 && (n as usize) < x.len() {
                out[n as usize] += segment[i];
                norm[n as usize] += window[i];
                noise_out[n as usize] += noise_segment[i];
                noise_norm[n as usize] += window[i] * window[i];
            }
        }
    }
    for (((o, w), no), nw) in out.iter_mut().zip(&norm).zip(&noise_out).zip(&noise_norm) {
        if *w > 1e-9 {
            *o /= w;
        }
        if *nw > 1e-12 {
            *o += no / nw.sqrt();
        }
    }
    out
}

fn autocorrelation(
    frame: &[f64],
    fft: &std::sync::Arc<dyn rustfft::Fft<f64>>,
    ifft: &std::sync::Arc<dyn rustfft::Fft<f64>>,
) -> Vec<f64> {
    let n = 2 * FRAME;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (b, &v) in buf.iter_mut().zip(frame) {
        b.re = v;
    }
    fft.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex64::new(c.norm_sqr(), 0.0);
    }
    ifft.process(&mut buf);
    buf[..FRAME].iter().map(|c| c.re / n as f64).collect()
}

fn analyze(
    frame: &[f64],
    sr: f64,
    fft: &std::sync::Arc<dyn rustfft::Fft<f64>>,
    corr_fft: &std::sync::Arc<dyn rustfft::Fft<f64>>,
    corr_ifft: &std::sync::Arc<dyn rustfft::Fft<f64>>,
    window_corr: &[f64],
) -> FrameAnalysis {
    let mut spectrum: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut spectrum);

    let r = autocorrelation(frame, corr_fft, corr_ifft);
    if r[0] <= 1e-12 {
        return FrameAnalysis {
            spectrum,
            f0: None,
            periodicity: 0.0,
        };
    }
    // unbias by the window's own autocorrelation
    let norm: Vec<f64> = (0..FRAME)
        .map(|l| r[l] / r[0] / (window_corr[l] / window_corr[0]).max(1e-3))
        .collect();
    let lo = (sr / F0_MAX).floor() as usize;
    let hi = ((sr / F0_MIN).ceil() as usize).min(FRAME / 2);
    let best = (lo..=hi)
        .max_by(|&a, &b| norm[a].total_cmp(&norm[b]))
        .unwrap_or(lo);
    let peak = norm[best];
    // earliest lag close to the best one, to avoid picking a sub-harmonic
    let lag = (lo..=best)
        .find(|&l| {
            l > lo
                && l < hi
                && norm[l] >= 0.9 * peak
                && norm[l] >= norm[l - 1]
                && norm[l] >= norm[l + 1]
        })
        .unwrap_or(best);
    let refined = if lag > lo && lag < hi {
        let (a, b, c) = (norm[lag - 1], norm[lag], norm[lag + 1]);
        let d = a - 2.0 * b + c;
        if d.abs() > 1e-12 {
            lag as f64 + 0.5 * (a - c) / d
        } else {
            lag as f64
        }
    } else {
        lag as f64
    };
    let periodicity = norm[lag].clamp(0.0, 1.0);
    FrameAnalysis {
        spectrum,
        f0: (periodicity > VOICING_THRESHOLD).then(|| sr / refined),
        periodicity,
    }
}

/// |Σ frame[n] e^{-iωn}| at an arbitrary frequency, so harmonics between
/// FFT bins keep their level.
fn dtft_magnitude(frame: &[f64], w: f64) -> f64 {
    let step = Complex64::from_polar(1.0, -w);
    let mut z = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for &v in frame {
        acc += z * v;
        z *= step;
    }
    acc.norm()
}

fn smooth(v: &[f64], half_width: usize) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half_width);
            let hi = (i + half_width + 1).min(v.len());
            v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

const CODEC_CUTOFF_HZ: f64 = 4000.0;
const MU: f64 = 255.0;

fn codec(x: &[f64], sample_rate: u32) -> Vec<f64> {
    let fir = design_fir(127, sample_rate as f64, |f| {
        if f <= CODEC_CUTOFF_HZ {
            1.0
        } else {
            0.0
        }
    });
    filter_zero_phase(x, &fir)
        .into_iter()
        .map(|v| {
            let v = v.clamp(-1.0, 1.0);
            let compressed = v.signum() * (1.0 + MU * v.abs()).ln() / (1.0 + MU).ln();
            let code = (compressed * 127.0).round() / 127.0;
            let expanded = code.signum() * ((1.0 + MU).powf(code.abs()) - 1.0) / MU;
            // land on the 16-bit grid like any decoded stream
            dequantize((expanded * 32767.0).round() as i16)
        })
        .collect()
}
