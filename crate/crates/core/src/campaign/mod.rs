//! Campaign orchestration: trial subsampling, the attack × replay grid,
//! success matrices, detection inputs and the dataset manifest.

mod config;
mod detect;
mod job;
mod manifest;
mod matrix;
mod record;
mod run;
mod subsample;

pub use config::{CampaignConfig, DataConfig, DetectionSection, ModelSpec, TrialSelection};
pub use detect::{detection_trials, run_detect, DETECTION_TABLE};
pub use job::{
    craft, plan_jobs, replay, row_label, row_surrogates, score_sample, trial_stem, Job, ModelPanel,
    TrialContext,
};
pub use manifest::{
    build_manifest, census, sha256_file, Manifest, ManifestEntry, ManifestPlan, MANIFEST_SCHEMA,
};
pub use matrix::{
    matrix_from_records, render_digital_table, render_ota_table, transfer_matrix, CellKind,
    MatrixCell, SuccessMatrix,
};
pub use record::{
    append_records, read_records, record_key, success_rate, write_records, AttackMethod,
    AttackRecord, DeviceCombo,
};
pub use run::{
    canonicalize_records, device_grid, load_data, load_prepared, manifest_plan, prepare,
    read_manifest, run_attack, run_campaign, run_replay, run_report, CampaignData, CampaignSummary,
    DirAudio, Failure, Layout, MatrixReport, Prepared, RunOptions, Selection, StageSummary,
};
pub use subsample::{largest_remainder, subsample_trials};
