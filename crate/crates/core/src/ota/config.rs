//! Structured-text description of the replay setup.
//!
//! ```toml
//! [room]
//! dims = [4.0, 3.5, 2.8]
//! source = [1.6, 1.5, 1.2]
//! distance_m = 0.3
//! angle_deg = 90.0
//! absorption = 0.7
//! seed = 11
//! # impulse_response = "measured.wav"   # replaces the simulation
//!
//! [[speakers]]
//! id = "speaker_high"
//! kind = "loudspeaker"
//! tier = "high"
//! band_limit = [80.0, 7600.0]
//! drive = 0.5
//! eq = [[100.0, 0.0], [3000.0, 1.0]]
//!
//! [[mics]]
//! id = "mic_ios"
//! kind = "microphone"
//! tier = "ios"
//! band_limit = [60.0, 7800.0]
//! noise_floor_dbfs = -75.0
//! ```
//!
//! Omitting `speakers` and `mics` selects the shipped presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::preset::{preset_registry, DevicePreset, PresetRegistry};
use super::room::{RoomGeometry, RoomSetup};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomConfig {
    #[serde(default = "RoomConfig::default_dims")]
    pub dims: [f64; 3],
    #[serde(default = "RoomConfig::default_source")]
    pub source: [f64; 3],
    #[serde(default = "RoomConfig::default_distance")]
    pub distance_m: f64,
    #[serde(default = "RoomConfig::default_angle")]
    pub angle_deg: f64,
    #[serde(default = "RoomConfig::default_absorption")]
    pub absorption: f64,
    #[serde(default)]
    pub seed: u64,
    /// Mono WAV to use instead of the simulated response; relative paths
    /// resolve against the config file's directory.
    #[serde(default)]
    pub impulse_response: Option<PathBuf>,
    #[serde(default)]
    pub background_noise_dbfs: Option<f64>,
}

impl RoomConfig {
    fn default_dims() -> [f64; 3] {
        RoomGeometry::default().dims
    }
    fn default_source() -> [f64; 3] {
        RoomGeometry::default().source
    }
    fn default_distance() -> f64 {
        RoomGeometry::default().distance_m
    }
    fn default_angle() -> f64 {
        RoomGeometry::default().angle_deg
    }
    fn default_absorption() -> f64 {
        RoomGeometry::default().absorption
    }

    pub fn geometry(&self) -> RoomGeometry {
        RoomGeometry {
            dims: self.dims,
            source: self.source,
            distance_m: self.distance_m,
            angle_deg: self.angle_deg,
            absorption: self.absorption,
        }
    }

    pub fn build(&self, sample_rate: u32, base_dir: Option<&Path>) -> Result<RoomSetup> {
        let mut room = match &self.impulse_response {
            Some(p) => {
                let path = match base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                if !path.exists() {
                    return Err(Error::MissingResource(path));
                }
                let mut r = RoomSetup::from_wav(&path, sample_rate, self.seed)?;
                r.distance_m = self.distance_m;
                r.angle_deg = self.angle_deg;
                r
            }
            None => RoomSetup::simulate(&self.geometry(), sample_rate, self.seed)?,
        };
        if let Some(db) = self.background_noise_dbfs {
            if !(db.is_finite() && db < 0.0) {
                return Err(Error::Config(format!(
                    "background noise {db} dBFS must be below 0"
                )));
            }
        }
        room.background_noise_dbfs = self.background_noise_dbfs;
        Ok(room)
    }
}

impl Default for RoomConfig {
    fn default() -> Self {
        let g = RoomGeometry::default();
        RoomConfig {
            dims: g.dims,
            source: g.source,
            distance_m: g.distance_m,
            angle_deg: g.angle_deg,
            absorption: g.absorption,
            seed: 0,
            impulse_response: None,
            background_noise_dbfs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtaConfig {
    #[serde(default)]
    pub room: RoomConfig,
    #[serde(default)]
    pub speakers: Vec<DevicePreset>,
    #[serde(default)]
    pub mics: Vec<DevicePreset>,
}

impl OtaConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("ota config: {e}")))
    }

    /// Configured presets, falling back to the shipped ones per device kind.
    pub fn registry(&self, sample_rate: u32) -> Result<PresetRegistry> {
        let shipped = preset_registry();
        let reg = PresetRegistry {
            speakers: if self.speakers.is_empty() {
                shipped.speakers
            } else {
                self.speakers.clone()
            },
            mics: if self.mics.is_empty() {
                shipped.mics
            } else {
                self.mics.clone()
            },
        };
        reg.validate(sample_rate)?;
        Ok(reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, Waveform};

    #[test]
    fn parses_documented_example() {
        let doc = include_str!("config.rs")
            .lines()
            .take_while(|l| l.starts_with("//!"))
            .map(|l| l.trim_start_matches("//!").strip_prefix(' ').unwrap_or(""))
            .skip_while(|l| !l.starts_with("```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("```"))
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = OtaConfig::from_toml_str(&doc).unwrap();
        assert_eq!(cfg.room.seed, 11);
        let reg = cfg.registry(16_000).unwrap();
        assert_eq!(reg.speakers.len(), 1);
        assert_eq!(reg.mics[0].noise_floor_dbfs, Some(-75.0));
        cfg.room.build(16_000, None).unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_presets_rejected() {
        assert!(OtaConfig::from_toml_str("[room]\nwidth = 3.0\n").is_err());
        let cfg = OtaConfig::from_toml_str(
            "[[mics]]\nid = \"m\"\nkind = \"microphone\"\ntier = \"ios\"\nnoise_floor_dbfs = 6.0\n",
        )
        .unwrap();
        assert!(cfg.registry(16_000).is_err());
    }

    #[test]
    fn empty_config_uses_shipped_presets() {
        let cfg = OtaConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.registry(16_000).unwrap(), preset_registry());
    }

    #[test]
    fn impulse_response_imported_from_wav() {
        let dir = tempfile::tempdir().unwrap();
        let mut ir = vec![0.0; 64];
        ir[10] = 0.5;
        ir[30] = -0.25;
        write_wav(
            &dir.path().join("ir.wav"),
            &Waveform::new(ir, 16_000, "ir").unwrap(),
        )
        .unwrap();
        let cfg = OtaConfig::from_toml_str("[room]\nimpulse_response = \"ir.wav\"\n").unwrap();
        let room = cfg.room.build(16_000, Some(dir.path())).unwrap();
        let h = room.impulse_response();
        assert_eq!(h.len(), 64);
        assert!((h[10] / h[30] + 2.0).abs() < 1e-3);
        let missing =
            OtaConfig::from_toml_str("[room]\nimpulse_response = \"nope.wav\"\n").unwrap();
        assert!(matches!(
            missing.room.build(16_000, Some(dir.path())),
            Err(Error::MissingResource(_))
        ));
    }
}
