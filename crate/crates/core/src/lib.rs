//! Adversarial attacks on speaker verification with a simulated over-the-air
//! replay channel and a resynthesis-residual detection baseline.

pub mod asv;
pub mod attack;
pub mod audio;
pub mod campaign;
pub mod detector;
pub mod dsp;
pub mod error;
pub mod ota;
pub mod seed;
pub mod synth;
pub mod trials;

pub use audio::Waveform;
pub use error::{Error, Result};
