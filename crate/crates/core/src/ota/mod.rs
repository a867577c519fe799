//! Simulated over-the-air replay: loudspeaker, room and microphone.

mod channel;
mod config;
mod preset;
mod room;

pub use channel::{apply_channel, convolve_truncated, ReplayChain};
pub use config::{OtaConfig, RoomConfig};
pub use preset::{
    preset_registry, DeviceKind, DevicePreset, PresetRegistry, Tier, DEVICE_FIR_TAPS,
};
pub use room::{
    generate_rir, RoomGeometry, RoomSetup, DEFAULT_ANGLE_DEG, DEFAULT_DISTANCE_M, SPEED_OF_SOUND,
};
