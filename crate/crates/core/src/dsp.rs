//! Small signal-processing toolbox shared by the embedders, the channel
//! simulator and the detector.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn forward_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub fn inverse_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Framing parameters in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_len: usize,
}

impl FrameConfig {
    /// 25 ms frames with a 10 ms hop at 16 kHz.
    pub const STANDARD_16K: FrameConfig = FrameConfig {
        frame_len: 400,
        hop: 160,
        fft_len: 512,
    };

    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.hop
        }
    }

    pub fn num_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }
}

/// Windowed complex spectra for every frame, `num_bins` bins each.
pub fn stft(x: &[f64], cfg: FrameConfig, window: &[f64]) -> Vec<Vec<Complex64>> {
    let fft = forward_fft(cfg.fft_len);
    let bins = cfg.num_bins();
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
    (0..cfg.num_frames(x.len()))
        .map(|t| {
            let start = t * cfg.hop;
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (n, (b, w)) in buf.iter_mut().zip(window).enumerate() {
                b.re = x[start + n] * w;
            }
            fft.process(&mut buf);
            buf[..bins].to_vec()
        })
        .collect()
}

pub fn stft_magnitude(x: &[f64], cfg: FrameConfig) -> Vec<Vec<f64>> {
    let window = hann(cfg.frame_len);
    stft(x, cfg, &window)
        .into_iter()
        .map(|frame| frame.iter().map(|c| c.norm()).collect())
        .collect()
}

/// Full linear convolution through the FFT.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let fft = forward_fft(n);
    let ifft = inverse_fft(n);
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fa.resize(n, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fb.resize(n, Complex64::new(0.0, 0.0));
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft.process(&mut fa);
    fa[..out_len].iter().map(|c| c.re / n as f64).collect()
}

/// Convolves `x` with a linear-phase FIR of odd length and compensates the
/// group delay, so the output stays aligned with the input and has its length.
pub fn filter_zero_phase(x: &[f64], fir: &[f64]) -> Vec<f64> {
    debug_assert!(fir.len() % 2 == 1);
    let delay = fir.len() / 2;
    let full = fft_convolve(x, fir);
    full[delay..delay + x.len()].to_vec()
}

/// Linear-phase FIR approximating the magnitude response `gain(freq_hz)` by
/// frequency sampling with a Hann taper.
pub fn design_fir(num_taps: usize, sample_rate: f64, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    assert!(num_taps % 2 == 1, "FIR length must be odd");
    let grid = 4 * num_taps.next_power_of_two();
    let half = grid / 2;
    let mags: Vec<f64> = (0..=half)
        .map(|k| gain(k as f64 * sample_rate / grid as f64))
        .collect();
    // zero-phase impulse response by inverse real DFT of the sampled magnitude
    let center = num_taps / 2;
    let taper = hann(num_taps + 1);
    (0..num_taps)
        .map(|n| {
            let m = n as f64 - center as f64;
            let mut acc = mags[0];
            for (k, &g) in mags.iter().enumerate().take(half).skip(1) {
                acc += 2.0 * g * (2.0 * PI * k as f64 * m / grid as f64).cos();
            }
            acc += mags[half] * (PI * m).cos();
            acc / grid as f64 * taper[n + 1]
        })
        .collect()
}

/// Index of the largest-magnitude bin of a zero-padded, Hann-windowed FFT,
/// excluding DC.
pub fn dominant_bin(x: &[f64], fft_len: usize) -> usize {
    let fft = forward_fft(fft_len);
    let window = hann(x.len().min(fft_len));
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); fft_len];
    for (i, w) in window.iter().enumerate() {
        buf[i].re = x[i] * w;
    }
    fft.process(&mut buf);
    (1..=fft_len / 2)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .unwrap_or(0)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank as a dense `num_bands × num_bins` matrix.
pub fn mel_filterbank(
    num_bands: usize,
    fft_len: usize,
    sample_rate: f64,
    f_lo: f64,
    f_hi: f64,
) -> Vec<Vec<f64>> {
    let m_lo = hz_to_mel(f_lo);
    let m_hi = hz_to_mel(f_hi);
    let edges: Vec<f64> = (0..num_bands + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (num_bands + 1) as f64))
        .collect();
    triangular_filterbank(&edges, fft_len, sample_rate)
}

/// Band `b` rises from `edges[b]` to a peak at `edges[b + 1]` and falls to `edges[b + 2]`.
fn triangular_filterbank(edges: &[f64], fft_len: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let bins = fft_len / 2 + 1;
    let bin_hz = sample_rate / fft_len as f64;
    edges
        .windows(3)
        .map(|w| {
            let (l, c, r) = (w[0], w[1], w[2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= l || f >= r {
                        0.0
                    } else if f <= c {
                        (f - l) / (c - l)
                    } else {
                        (r - f) / (r - c)
                    }
                })
                .collect()
        })
        .collect()
}
