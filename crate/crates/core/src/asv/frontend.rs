//! Differentiable spectral front-ends: framing, power spectrum, band
//! integration, compression, optional cepstral transform and utterance
//! pooling, with a hand-written backward pass to the input samples.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{forward_fft, hann, FrameConfig};

const VAR_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Compression {
    Log { floor: f64 },
    Power { exponent: f64, floor: f64 },
}

impl Compression {
    fn apply(self, e: f64) -> f64 {
        match self {
            Compression::Log { floor } => (e + floor).ln(),
            Compression::Power { exponent, floor } => (e + floor).powf(exponent),
        }
    }

    fn derivative(self, e: f64) -> f64 {
        match self {
            Compression::Log { floor } => 1.0 / (e + floor),
            Compression::Power { exponent, floor } => exponent * (e + floor).powf(exponent - 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Per-coefficient mean and standard deviation over frames.
    MeanStd,
    /// Per-coefficient mean and RMS of the frame-to-frame difference.
    MeanDelta,
}

/// A band is a contiguous run of FFT-bin weights starting at `start`.
#[derive(Debug, Clone, PartialEq)]
struct Band {
    start: usize,
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FrontEnd {
    frame: FrameConfig,
    window: Vec<f64>,
    bands: Vec<Band>,
    compression: Compression,
    dct: Option<Vec<Vec<f64>>>,
    pooling: Pooling,
}

struct Tape {
    spectra: Vec<Vec<Complex64>>,
    energies: Vec<Vec<f64>>,
    coeffs: Vec<Vec<f64>>,
}

impl FrontEnd {
    /// `band_matrix` is dense `bands × bins`; zero runs at both ends are trimmed.
    pub fn new(
        frame: FrameConfig,
        band_matrix: Vec<Vec<f64>>,
        compression: Compression,
        cepstra: Option<usize>,
        pooling: Pooling,
    ) -> Self {
        let bands: Vec<Band> = band_matrix
            .into_iter()
            .map(|row| {
                let first = row.iter().position(|&w| w != 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w != 0.0).unwrap_or(0);
                Band {
                    start: first,
                    weights: row[first..=last.max(first)].to_vec(),
                }
            })
            .collect();
        let n = bands.len();
        let dct = cepstra.map(|k| {
            (0..k.min(n))
                .map(|j| {
                    let scale = if j == 0 {
                        (1.0 / n as f64).sqrt()
                    } else {
                        (2.0 / n as f64).sqrt()
                    };
                    (0..n)
                        .map(|b| scale * (PI * j as f64 * (b as f64 + 0.5) / n as f64).cos())
                        .collect()
                })
                .collect()
        });
        Self {
            window: hann(frame.frame_len),
            frame,
            bands,
            compression,
            dct,
            pooling,
        }
    }

    pub fn frame_config(&self) -> FrameConfig {
        self.frame
    }

    pub fn num_coefficients(&self) -> usize {
        self.dct.as_ref().map_or(self.bands.len(), Vec::len)
    }

    pub fn feature_dimension(&self) -> usize {
        2 * self.num_coefficients()
    }

    /// Two frames are needed for either pooling statistic.
    pub fn min_input_len(&self) -> usize {
        self.frame.frame_len + self.frame.hop
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.pool(&self.analyze(x).coeffs)
    }

    fn analyze(&self, x: &[f64]) -> Tape {
        let cfg = self.frame;
        let fft = forward_fft(cfg.fft_len);
        let bins = cfg.num_bins();
        let num_frames = cfg.num_frames(x.len());
        let mut spectra = Vec::with_capacity(num_frames);
        let mut energies = Vec::with_capacity(num_frames);
        let mut coeffs = Vec::with_capacity(num_frames);
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
        for t in 0..num_frames {
            let start = t * cfg.hop;
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for n in 0..cfg.frame_len {
                buf[n].re = x[start + n] * self.window[n];
            }
            fft.process(&mut buf);
            let spec = buf[..bins].to_vec();
            let e: Vec<f64> = self
                .bands
                .iter()
                .map(|band| {
                    band.weights
                        .iter()
                        .zip(&spec[band.start..])
                        .map(|(w, c)| w * c.norm_sqr())
                        .sum()
                })
                .collect();
            let compressed: Vec<f64> = e.iter().map(|&v| self.compression.apply(v)).collect();
            let c = match &self.dct {
                Some(dct) => dct
                    .iter()
                    .map(|row| row.iter().zip(&compressed).map(|(a, b)| a * b).sum())
                    .collect(),
                None => compressed,
            };
            spectra.push(spec);
            energies.push(e);
            coeffs.push(c);
        }
        Tape {
            spectra,
            energies,
            coeffs,
        }
    }

    fn pool(&self, coeffs: &[Vec<f64>]) -> Vec<f64> {
        let t = coeffs.len() as f64;
        let k = self.num_coefficients();
        let mut out = vec![0.0; 2 * k];
        for j in 0..k {
            let mean = coeffs.iter().map(|c| c[j]).sum::<f64>() / t;
            let spread = match self.pooling {
                Pooling::MeanStd => coeffs.iter().map(|c| (c[j] - mean).powi(2)).sum::<f64>() / t,
                Pooling::MeanDelta => {
                    coeffs
                        .windows(2)
                        .map(|w| (w[1][j] - w[0][j]).powi(2))
                        .sum::<f64>()
                        / (t - 1.0)
                }
            };
            out[j] = mean;
            out[k + j] = (spread + VAR_EPS).sqrt();
        }
        out
    }

    /// Pooled features and the vector-Jacobian product `d_features -> d_x`.
    pub fn features_with_backward(
        &self,
        x: &[f64],
        d_features: &mut dyn FnMut(&[f64]) -> crate::error::Result<Vec<f64>>,
    ) -> crate::error::Result<Vec<f64>> {
        let tape = self.analyze(x);
        let pooled = self.pool(&tape.coeffs);
        let g = d_features(&pooled)?;
        Ok(self.backward(x.len(), &tape, &pooled, &g))
    }

    fn backward(&self, len: usize, tape: &Tape, pooled: &[f64], g: &[f64]) -> Vec<f64> {
        let cfg = self.frame;
        let k = self.num_coefficients();
        let num_frames = tape.coeffs.len();
        let t = num_frames as f64;

        // pooling
        let mut d_coeffs = vec![vec![0.0; k]; num_frames];
        for j in 0..k {
            let mean = pooled[j];
            let spread = pooled[k + j];
            let g_mean = g[j] / t;
            let g_spread = g[k + j];
            match self.pooling {
                Pooling::MeanStd => {
                    for (d, c) in d_coeffs.iter_mut().zip(&tape.coeffs) {
                        d[j] = g_mean + g_spread * (c[j] - mean) / (t * spread);
                    }
                }
                Pooling::MeanDelta => {
                    let scale = g_spread / (spread * (t - 1.0));
                    for (f, d) in d_coeffs.iter_mut().enumerate() {
                        let mut acc = g_mean;
                        if f > 0 {
                            acc += scale * (tape.coeffs[f][j] - tape.coeffs[f - 1][j]);
                        }
                        if f + 1 < num_frames {
                            acc -= scale * (tape.coeffs[f + 1][j] - tape.coeffs[f][j]);
                        }
                        d[j] = acc;
                    }
                }
            }
        }

        let fft = forward_fft(cfg.fft_len);
        let bins = cfg.num_bins();
        let mut dx = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
        let mut d_power = vec![0.0; bins];
        for (f, dc) in d_coeffs.iter().enumerate() {
            // cepstral transform is orthonormal rows: d_compressed = Dᵀ d_coeffs
            let d_compressed: Vec<f64> = match &self.dct {
                Some(dct) => {
                    let mut out = vec![0.0; self.bands.len()];
                    for (row, &d) in dct.iter().zip(dc) {
                        for (o, r) in out.iter_mut().zip(row) {
                            *o += r * d;
                        }
                    }
                    out
                }
                None => dc.clone(),
            };
            d_power.iter_mut().for_each(|v| *v = 0.0);
            for ((band, &e), &dcomp) in self.bands.iter().zip(&tape.energies[f]).zip(&d_compressed)
            {
                let de = dcomp * self.compression.derivative(e);
                for (p, w) in d_power[band.start..].iter_mut().zip(&band.weights) {
                    *p += w * de;
                }
            }
            // d|X_k|²/dx_n = 2 w_n Re(conj(X_k) e^{-2πikn/N})
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (b, (&dp, spec)) in buf.iter_mut().zip(d_power.iter().zip(&tape.spectra[f])) {
                *b = spec.conj() * dp;
            }
            fft.process(&mut buf);
            let start = f * cfg.hop;
            for n in 0..cfg.frame_len {
                dx[start + n] += 2.0 * self.window[n] * buf[n].re;
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel_filterbank;

    fn signal(len: usize) -> Vec<f64> {
        let mut state = 12345u64;
        (0..len)
            .map(|n| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let noise = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                let t = n as f64 / 16_000.0;
                let env = 0.5 + 0.5 * (2.0 * PI * 3.0 * t).sin();
                0.3 * env * (2.0 * PI * (180.0 + 400.0 * t) * t).sin()
                    + 0.1 * (2.0 * PI * 1730.0 * t).sin()
                    + 0.05 * noise
            })
            .collect()
    }

    fn check_gradient(fe: &FrontEnd) {
        let x = signal(2000);
        let dim = fe.feature_dimension();
        let weights: Vec<f64> = (0..dim)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0)
            .collect();
        let objective = |x: &[f64]| -> f64 {
            fe.features(x)
                .iter()
                .zip(&weights)
                .map(|(a, b)| a * b)
                .sum()
        };
        let grad = fe
            .features_with_backward(&x, &mut |_| Ok(weights.clone()))
            .unwrap();
        let gmax = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for &i in &[3usize, 150, 401, 777, 1024, 1500, 1999] {
            let h = 1e-4;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3 * gmax);
            assert!(err < 1e-3, "sample {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn log_mel_mean_std_gradient() {
        let cfg = FrameConfig::STANDARD_16K;
        let fb = mel_filterbank(20, cfg.fft_len, 16_000.0, 50.0, 8000.0);
        check_gradient(&FrontEnd::new(
            cfg,
            fb,
            Compression::Log { floor: 1e-3 },
            None,
            Pooling::MeanStd,
        ));
    }

    #[test]
    fn cepstral_delta_gradient() {
        let cfg = FrameConfig::STANDARD_16K;
        let fb = mel_filterbank(24, cfg.fft_len, 16_000.0, 50.0, 8000.0);
        check_gradient(&FrontEnd::new(
            cfg,
            fb,
            Compression::Log { floor: 1e-3 },
            Some(12),
            Pooling::MeanDelta,
        ));
    }

    #[test]
    fn power_law_gradient() {
        let cfg = FrameConfig {
            frame_len: 256,
            hop: 128,
            fft_len: 256,
        };
        let fb = mel_filterbank(16, cfg.fft_len, 16_000.0, 0.0, 8000.0);
        check_gradient(&FrontEnd::new(
            cfg,
            fb,
            Compression::Power {
                exponent: 0.33,
                floor: 1e-4,
            },
            None,
            Pooling::MeanStd,
        ));
    }
}
