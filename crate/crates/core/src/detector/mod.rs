//! Resynthesis-residual countermeasure: resynthesize the input, subtract
//! magnitude spectrograms, and score pooled residual statistics with a
//! one-class model fitted on bonafide audio.

mod eval;
mod features;
mod model;
mod resynth;

pub use eval::{
    detection_row, eer_from_entries, eval_detection, read_score_file, render_aligned,
    write_score_file, DetectionLabel, DetectionRow, DetectionTable, ScoreEntry,
};
pub use features::{pool_residual, residual_features, FeatureConfig, ResidualFeature};
pub use model::{train_detector, DetectorConfig, DetectorModel, TrainCondition, MIN_BONAFIDE};
pub use resynth::{resynthesize, ResynthMethod, Resynthesizer};
