use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::read_wav;
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Longest impulse response generated by the image method, in seconds.
pub const MAX_RIR_SECONDS: f64 = 0.25;

/// Loudspeaker-to-microphone spacing of the recording setup.
pub const DEFAULT_DISTANCE_M: f64 = 0.3;
pub const DEFAULT_ANGLE_DEG: f64 = 90.0;

/// Geometry for the image-method simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomGeometry {
    pub dims: [f64; 3],
    pub source: [f64; 3],
    /// Mic distance from the source, in meters.
    #[serde(default = "default_distance")]
    pub distance_m: f64,
    /// Angle between the source axis (+x) and the mic direction, in the
    /// horizontal plane.
    #[serde(default = "default_angle")]
    pub angle_deg: f64,
    /// Wall energy absorption coefficient in (0, 1].
    pub absorption: f64,
}

fn default_distance() -> f64 {
    DEFAULT_DISTANCE_M
}

fn default_angle() -> f64 {
    DEFAULT_ANGLE_DEG
}

impl Default for RoomGeometry {
    /// A small, heavily damped studio.
    fn default() -> Self {
        RoomGeometry {
            dims: [4.0, 3.5, 2.8],
            source: [1.6, 1.5, 1.2],
            distance_m: DEFAULT_DISTANCE_M,
            angle_deg: DEFAULT_ANGLE_DEG,
            absorption: 0.7,
        }
    }
}

impl RoomGeometry {
    pub fn mic_position(&self) -> [f64; 3] {
        let a = self.angle_deg.to_radians();
        [
            self.source[0] + self.distance_m * a.cos(),
            self.source[1] + self.distance_m * a.sin(),
            self.source[2],
        ]
    }
}

/// Acoustic path between loudspeaker and microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomSetup {
    impulse_response: Vec<f64>,
    pub distance_m: f64,
    pub angle_deg: f64,
    pub seed: u64,
    /// Diffuse background noise in dBFS; off in the studio setting.
    pub background_noise_dbfs: Option<f64>,
}

impl RoomSetup {
    /// Wraps an impulse response, scaled to unit energy.
    pub fn from_impulse_response(
        ir: Vec<f64>,
        distance_m: f64,
        angle_deg: f64,
        seed: u64,
    ) -> Result<Self> {
        if ir.is_empty() {
            return Err(Error::DegenerateImpulseResponse("empty".into()));
        }
        if ir.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateImpulseResponse("non-finite tap".into()));
        }
        let energy: f64 = ir.iter().map(|v| v * v).sum();
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(Error::DegenerateImpulseResponse("zero energy".into()));
        }
        let scale = energy.sqrt().recip();
        Ok(RoomSetup {
            impulse_response: ir.into_iter().map(|v| v * scale).collect(),
            distance_m,
            angle_deg,
            seed,
            background_noise_dbfs: None,
        })
    }

    /// Image-method room at the given geometry.
    pub fn simulate(geometry: &RoomGeometry, sample_rate: u32, seed: u64) -> Result<Self> {
        let mic = geometry.mic_position();
        let ir = generate_rir(
            geometry.dims,
            geometry.source,
            mic,
            geometry.absorption,
            sample_rate,
            seed,
        )?;
        RoomSetup::from_impulse_response(ir, geometry.distance_m, geometry.angle_deg, seed)
    }

    /// The unit-impulse room: the channel leaves the signal unchanged.
    pub fn identity() -> Self {
        RoomSetup {
            impulse_response: vec![1.0],
            distance_m: 0.0,
            angle_deg: 0.0,
            seed: 0,
            background_noise_dbfs: None,
        }
    }

    /// Measured response from a mono WAV file.
    pub fn from_wav(path: &Path, sample_rate: u32, seed: u64) -> Result<Self> {
        let wav = read_wav(path, sample_rate, false)?;
        RoomSetup::from_impulse_response(
            wav.into_samples(),
            DEFAULT_DISTANCE_M,
            DEFAULT_ANGLE_DEG,
            seed,
        )
    }

    pub fn impulse_response(&self) -> &[f64] {
        &self.impulse_response
    }
}

fn inside(dims: [f64; 3], p: [f64; 3]) -> bool {
    p.iter().zip(&dims).all(|(&c, &d)| c > 0.0 && c < d)
}

/// Image-source impulse response (Allen and Berkley) with nearest-sample
/// taps. Amplitudes follow 1/r with r in meters, so a free-field source at
/// 1 m gives a unit tap; `RoomSetup` rescales to unit energy. The seed
/// randomizes each reflection's sub-sample position (wall scattering);
/// the direct path is exact.
pub fn generate_rir(
    dims: [f64; 3],
    source: [f64; 3],
    mic: [f64; 3],
    absorption: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<f64>> {
    if dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::OutsideRoom(format!(
            "invalid room dimensions {dims:?}"
        )));
    }
    if !inside(dims, source) {
        return Err(Error::OutsideRoom(format!(
            "source {source:?} not inside {dims:?}"
        )));
    }
    if !inside(dims, mic) {
        return Err(Error::OutsideRoom(format!(
            "mic {mic:?} not inside {dims:?}"
        )));
    }
    if !(absorption > 0.0 && absorption <= 1.0) {
        return Err(Error::DegenerateImpulseResponse(format!(
            "absorption {absorption} outside (0, 1]"
        )));
    }
    let sr = sample_rate as f64;
    let beta = (1.0 - absorption).sqrt();
    let direct = dist(source, mic);
    let direct_delay = (direct / SPEED_OF_SOUND * sr).round() as usize;
    let max_len = ((MAX_RIR_SECONDS * sr) as usize).max(direct_delay + 1);
    let mut ir = vec![0.0; max_len];
    ir[direct_delay] = 1.0 / direct;
    if beta == 0.0 {
        return Ok(ir);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_dist = max_len as f64 / sr * SPEED_OF_SOUND;
    let range: Vec<i64> = dims
        .iter()
        .map(|&d| (max_dist / (2.0 * d)).ceil() as i64 + 1)
        .collect();
    for nx in -range[0]..=range[0] {
        for ny in -range[1]..=range[1] {
            for nz in -range[2]..=range[2] {
                for q in 0..8u8 {
                    let n = [nx, ny, nz];
                    if n == [0, 0, 0] && q == 0 {
                        continue;
                    }
                    let mut img = [0.0; 3];
                    let mut order = 0i64;
                    for d in 0..3 {
                        let flip = (q >> d) & 1;
                        let sign = if flip == 1 { -1.0 } else { 1.0 };
                        img[d] = sign * source[d] + 2.0 * n[d] as f64 * dims[d];
                        order += (n[d] - flip as i64).abs() + n[d].abs();
                    }
                    let r = dist(img, mic);
                    let jitter: f64 = rng.gen_range(-0.5..0.5);
                    let delay = (r / SPEED_OF_SOUND * sr + jitter).round();
                    if delay < 0.0 || delay as usize >= max_len {
                        continue;
                    }
                    ir[delay as usize] += beta.powi(order as i32) / r;
                }
            }
        }
    }
    Ok(ir)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argmax(v: &[f64]) -> usize {
        (0..v.len())
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
            .unwrap()
    }

    #[test]
    fn anechoic_is_single_tap() {
        let g = RoomGeometry::default();
        let ir = generate_rir(g.dims, g.source, g.mic_position(), 1.0, 16_000, 3).unwrap();
        let nonzero: Vec<usize> = (0..ir.len()).filter(|&i| ir[i] != 0.0).collect();
        assert_eq!(nonzero, vec![14]);
    }

    #[test]
    fn direct_path_delay_for_default_spacing() {
        // 0.3 / 343 * 16000 = 13.99
        let g = RoomGeometry::default();
        let ir = generate_rir(g.dims, g.source, g.mic_position(), 0.7, 16_000, 3).unwrap();
        assert_eq!(argmax(&ir), 14);
        assert!(ir[..14].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_distance_costs_six_db() {
        let g = RoomGeometry::default();
        let near = generate_rir(
            g.dims,
            g.source,
            [g.source[0] + 0.5, g.source[1], g.source[2]],
            1.0,
            16_000,
            0,
        )
        .unwrap();
        let far = generate_rir(
            g.dims,
            g.source,
            [g.source[0] + 1.0, g.source[1], g.source[2]],
            1.0,
            16_000,
            0,
        )
        .unwrap();
        let e = |v: &[f64]| v.iter().map(|x| x * x).fold(0.0, f64::max);
        let db = 10.0 * (e(&near) / e(&far)).log10();
        assert!((db - 6.0206).abs() < 0.01, "{db}");
    }

    #[test]
    fn positions_outside_room_rejected() {
        let g = RoomGeometry::default();
        assert!(matches!(
            generate_rir(g.dims, [5.0, 1.0, 1.0], g.mic_position(), 0.5, 16_000, 0),
            Err(Error::OutsideRoom(_))
        ));
        assert!(matches!(
            generate_rir(g.dims, g.source, [1.0, -0.1, 1.0], 0.5, 16_000, 0),
            Err(Error::OutsideRoom(_))
        ));
    }

    #[test]
    fn reflections_decay_and_are_seeded() {
        let g = RoomGeometry::default();
        let a = generate_rir(g.dims, g.source, g.mic_position(), 0.7, 16_000, 1).unwrap();
        let b = generate_rir(g.dims, g.source, g.mic_position(), 0.7, 16_000, 1).unwrap();
        let c = generate_rir(g.dims, g.source, g.mic_position(), 0.7, 16_000, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let early: f64 = a[..800].iter().map(|v| v * v).sum();
        let late: f64 = a[2400..].iter().map(|v| v * v).sum();
        assert!(late < early * 1e-3);
    }

    #[test]
    fn setup_is_unit_energy_and_rejects_degenerate() {
        let room = RoomSetup::simulate(&RoomGeometry::default(), 16_000, 5).unwrap();
        let e: f64 = room.impulse_response().iter().map(|v| v * v).sum();
        assert!((e - 1.0).abs() < 1e-12);
        assert!(RoomSetup::from_impulse_response(vec![0.0; 8], 0.3, 90.0, 0).is_err());
        assert!(RoomSetup::from_impulse_response(vec![], 0.3, 90.0, 0).is_err());
        assert!(RoomSetup::from_impulse_response(vec![f64::NAN], 0.3, 90.0, 0).is_err());
    }
}
