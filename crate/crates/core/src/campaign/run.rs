use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CampaignConfig, DataConfig};
use super::detect::{run_detect, DETECTION_TABLE};
use super::job::{craft, plan_jobs, replay, score_sample, Job, ModelPanel, TrialContext};
use super::manifest::{build_manifest, census, Manifest, ManifestPlan};
use super::matrix::{matrix_from_records, render_digital_table, render_ota_table, SuccessMatrix};
use super::record::{
    append_records, read_records, write_records, AttackMethod, AttackRecord, DeviceCombo,
};
use super::subsample::subsample_trials;
use crate::asv::{
    load_model, save_model, train_toy_embedder, AudioSource, ThresholdCache, ToyEmbedder,
    TrainConfig,
};
use crate::attack::Surrogate;
use crate::audio::{read_wav, write_wav, Waveform};
use crate::detector::{DetectionTable, TrainCondition};
use crate::error::{Error, Result};
use crate::ota::{ReplayChain, RoomSetup};
use crate::seed::derive_seed;
use crate::synth::SyntheticCorpus;
use crate::trials::{format_trial_list, parse_trial_list, synthetic_trial_list, TrialPair};

/// File layout below the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn trials(&self) -> PathBuf {
        self.root.join("prepared/trials.txt")
    }
    pub fn base(&self) -> PathBuf {
        self.root.join("prepared/base.txt")
    }
    pub fn thresholds(&self) -> PathBuf {
        self.root.join("prepared/thresholds.json")
    }
    pub fn model(&self, id: &str) -> PathBuf {
        self.root.join("models").join(format!("{id}.otm"))
    }
    pub fn digital_records(&self) -> PathBuf {
        self.root.join("records/digital.jsonl")
    }
    pub fn ota_records(&self) -> PathBuf {
        self.root.join("records/ota.jsonl")
    }
    pub fn detection(&self) -> PathBuf {
        self.root.join("detection")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn failures(&self) -> PathBuf {
        self.root.join("failures.json")
    }
}

/// Utterance ids resolved as paths below a directory.
pub struct DirAudio {
    pub root: PathBuf,
    pub sample_rate: u32,
}

impl AudioSource for DirAudio {
    fn load(&self, utterance: &str) -> Result<Waveform> {
        read_wav(&self.root.join(utterance), self.sample_rate, false)
    }
}

/// Audio, the full trial list and (for synthetic data) the embedder
/// training set.
pub struct CampaignData {
    pub audio: Box<dyn AudioSource>,
    pub trial_list: Vec<TrialPair>,
    pub train: Option<Vec<(String, Waveform)>>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingResource(path.to_path_buf()),
        _ => e.into(),
    })
}

pub fn load_data(cfg: &CampaignConfig) -> Result<CampaignData> {
    match &cfg.data {
        DataConfig::Synthetic {
            corpus,
            trial_list,
            genuine_per_enroll,
            impostors_per_enroll,
        } => {
            let corpus = SyntheticCorpus::generate(corpus)?;
            let trial_list = match trial_list {
                Some(p) => parse_trial_list(&read_text(&cfg.resolve(p))?)?,
                None => {
                    let utts: Vec<String> = corpus.eval.keys().cloned().collect();
                    synthetic_trial_list(
                        &utts,
                        *genuine_per_enroll,
                        *impostors_per_enroll,
                        derive_seed(cfg.master_seed, &["trial-list"]),
                    )?
                }
            };
            Ok(CampaignData {
                train: Some(corpus.training_set()),
                audio: Box::new(corpus.eval),
                trial_list,
            })
        }
        DataConfig::Files {
            trial_list,
            audio_root,
            sample_rate,
        } => Ok(CampaignData {
            audio: Box::new(DirAudio {
                root: cfg.resolve(audio_root),
                sample_rate: *sample_rate,
            }),
            trial_list: parse_trial_list(&read_text(&cfg.resolve(trial_list))?)?,
            train: None,
        }),
    }
}

/// Outputs of the prepare stage.
pub struct Prepared {
    /// The stratified subset of the trial list.
    pub trials: Vec<TrialPair>,
    /// Impostor trials that get attacked.
    pub base: Vec<TrialPair>,
    pub models: Vec<ToyEmbedder>,
    pub thresholds: BTreeMap<String, f64>,
}

impl Prepared {
    pub fn panel(&self) -> Result<ModelPanel<'_>> {
        ModelPanel::new(
            self.models
                .iter()
                .map(|m| {
                    let id = crate::asv::Embedder::model_id(m);
                    let t = self
                        .thresholds
                        .get(id)
                        .ok_or_else(|| Error::Config(format!("no threshold for model {id:?}")))?;
                    Ok(Surrogate::new(m, *t))
                })
                .collect::<Result<_>>()?,
        )
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models
            .iter()
            .map(|m| crate::asv::Embedder::model_id(m).to_string())
            .collect()
    }
}

/// Subsamples the trial list, builds or loads the models, calibrates
/// their thresholds on the clean subset and writes everything below the
/// output root.
pub fn prepare(cfg: &CampaignConfig, data: &CampaignData) -> Result<Prepared> {
    let layout = Layout::new(cfg.output_dir());
    let mut seen = HashSet::new();
    let mut list = Vec::with_capacity(data.trial_list.len());
    for t in &data.trial_list {
        if seen.insert(t.key()) {
            list.push(t.clone());
        } else {
            tracing::warn!("dropping duplicate trial {t}");
        }
    }
    let trials = subsample_trials(
        &list,
        cfg.trials.fraction,
        derive_seed(cfg.master_seed, &["subsample"]),
    )?;
    let mut base: Vec<TrialPair> = trials
        .iter()
        .filter(|t| !t.label.is_genuine())
        .cloned()
        .collect();
    if let Some(n) = cfg.trials.base_count {
        if base.len() < n {
            return Err(Error::Config(format!(
                "trials.base_count = {n} but the subset has {} impostor trials",
                base.len()
            )));
        }
        base.truncate(n);
    }
    if base.is_empty() {
        return Err(Error::EmptyInput("no impostor trials to attack".into()));
    }

    let mut models = Vec::with_capacity(cfg.models.len());
    for spec in &cfg.models {
        let model = match (&spec.architecture, &spec.path) {
            (Some(arch), None) => {
                let train = data.train.as_ref().ok_or_else(|| {
                    Error::Config(format!("model {:?} needs training audio", spec.id))
                })?;
                let mut tc = TrainConfig::new(spec.id.clone(), *arch, spec.seed);
                tc.sample_rate = cfg.sample_rate();
                train_toy_embedder(train, &tc)?
            }
            (None, Some(path)) => {
                let m = load_model(&cfg.resolve(path))?;
                if crate::asv::Embedder::model_id(&m) != spec.id {
                    return Err(Error::Config(format!(
                        "{} holds model {:?}, config says {:?}",
                        path.display(),
                        crate::asv::Embedder::model_id(&m),
                        spec.id
                    )));
                }
                m
            }
            _ => {
                return Err(Error::Config(format!(
                    "model {:?} needs exactly one of architecture or path",
                    spec.id
                )))
            }
        };
        models.push(model);
    }

    let cache = ThresholdCache::new();
    let mut thresholds = BTreeMap::new();
    for m in &models {
        let t = cache.decision_threshold(m, &trials, data.audio.as_ref())?;
        thresholds.insert(crate::asv::Embedder::model_id(m).to_string(), t);
    }

    std::fs::create_dir_all(layout.root.join("prepared"))?;
    std::fs::write(layout.trials(), format_trial_list(&trials))?;
    std::fs::write(layout.base(), format_trial_list(&base))?;
    std::fs::write(
        layout.thresholds(),
        serde_json::to_string_pretty(&thresholds)? + "\n",
    )?;
    for m in &models {
        save_model(&layout.model(crate::asv::Embedder::model_id(m)), m)?;
    }
    Ok(Prepared {
        trials,
        base,
        models,
        thresholds,
    })
}

/// Reads the prepare stage's outputs.
pub fn load_prepared(cfg: &CampaignConfig) -> Result<Prepared> {
    let layout = Layout::new(cfg.output_dir());
    let trials = parse_trial_list(&read_text(&layout.trials())?)?;
    let base = parse_trial_list(&read_text(&layout.base())?)?;
    let thresholds: BTreeMap<String, f64> =
        serde_json::from_str(&read_text(&layout.thresholds())?)?;
    let models = cfg
        .models
        .iter()
        .map(|m| load_model(&layout.model(&m.id)))
        .collect::<Result<_>>()?;
    Ok(Prepared {
        trials,
        base,
        models,
        thresholds,
    })
}

/// Restricts what a stage works on; `None` means everything.
#[derive(Debug, Clone, Default)]
pub struct Selection {
    pub methods: Option<Vec<AttackMethod>>,
    /// Table rows: the surrogate of PGD rows, the held-out model of
    /// ensemble rows.
    pub targets: Option<Vec<String>>,
    pub victims: Option<Vec<String>>,
    /// Loudspeaker ids or tiers.
    pub speakers: Option<Vec<String>>,
    /// Microphone ids or tiers.
    pub mics: Option<Vec<String>>,
    pub train_conditions: Option<Vec<TrainCondition>>,
}

fn selected(filter: &Option<Vec<String>>, candidates: &[&str]) -> bool {
    filter
        .as_ref()
        .is_none_or(|f| f.iter().any(|x| candidates.contains(&x.as_str())))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after this many new attack or replay items, as if the process
    /// had been interrupted.
    pub max_new_items: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub item: String,
    pub error: String,
    pub missing_resource: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub planned: usize,
    pub skipped: usize,
    pub completed: usize,
    pub failures: Vec<Failure>,
    pub interrupted: bool,
}

impl StageSummary {
    pub(crate) fn new(stage: &str) -> Self {
        Self {
            stage: stage.into(),
            ..Default::default()
        }
    }

    fn fail(&mut self, item: String, err: &Error) {
        tracing::warn!("{} {item}: {err}", self.stage);
        self.failures.push(Failure {
            stage: self.stage.clone(),
            item,
            error: err.to_string(),
            missing_resource: matches!(err, Error::MissingResource(_)),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub stages: Vec<StageSummary>,
}

impl CampaignSummary {
    pub fn failures(&self) -> impl Iterator<Item = &Failure> {
        self.stages.iter().flat_map(|s| &s.failures)
    }

    pub fn interrupted(&self) -> bool {
        self.stages.iter().any(|s| s.interrupted)
    }

    pub fn attacks_performed(&self) -> usize {
        self.stages
            .iter()
            .filter(|s| s.stage == "attack")
            .map(|s| s.completed)
            .sum()
    }

    pub fn write_failures(&self, path: &Path) -> Result<()> {
        let failures: Vec<&Failure> = self.failures().collect();
        if failures.is_empty() {
            if path.exists() {
                std::fs::remove_file(path)?;
            }
            return Ok(());
        }
        std::fs::write(path, serde_json::to_string_pretty(&failures)? + "\n")?;
        Ok(())
    }
}

fn worker_pool(cfg: &CampaignConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Writes through a temporary file so an interrupted run never leaves a
/// truncated sample behind.
fn write_wav_atomic(path: &Path, wav: &Waveform) -> Result<()> {
    let tmp = path.with_extension("wav.tmp");
    write_wav(&tmp, wav)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Jobs grouped by base trial, keeping plan order.
fn by_trial<T>(items: Vec<(usize, T)>) -> Vec<(usize, Vec<T>)> {
    let mut groups: Vec<(usize, Vec<T>)> = Vec::new();
    for (index, item) in items {
        match groups.last_mut() {
            Some((i, g)) if *i == index => g.push(item),
            _ => groups.push((index, vec![item])),
        }
    }
    groups
}

/// Splits groups so their total length stays within `budget`.
fn take_budget<T>(
    groups: Vec<(usize, Vec<T>)>,
    budget: &mut Option<usize>,
) -> (Vec<(usize, Vec<T>)>, bool) {
    let Some(left) = budget.as_mut() else {
        return (groups, false);
    };
    let mut out = Vec::new();
    let mut cut = false;
    for (i, mut g) in groups {
        if *left == 0 {
            cut = true;
            break;
        }
        if g.len() > *left {
            g.truncate(*left);
            cut = true;
        }
        *left -= g.len();
        out.push((i, g));
    }
    (out, cut)
}

fn victim_ids(prep: &Prepared, sel: &Selection) -> Result<Vec<String>> {
    let ids = prep.model_ids();
    if let Some(v) = &sel.victims {
        if let Some(bad) = v.iter().find(|x| !ids.contains(x)) {
            return Err(Error::Config(format!("unknown victim {bad:?}")));
        }
    }
    Ok(ids
        .into_iter()
        .filter(|id| selected(&sel.victims, &[id]))
        .collect())
}

/// The per-trial context error, repeated for every item of the trial.
fn context_error(e: &Error) -> Error {
    match e {
        Error::MissingResource(p) => Error::MissingResource(p.clone()),
        other => Error::InvalidWaveform(format!("trial audio: {other}")),
    }
}

fn file_ok(root: &Path, rel: &str) -> bool {
    root.join(rel).is_file()
}

/// Crafts the digital adversarial samples and scores them with every
/// victim.
pub fn run_attack(
    cfg: &CampaignConfig,
    data: &CampaignData,
    prep: &Prepared,
    sel: &Selection,
    budget: &mut Option<usize>,
) -> Result<StageSummary> {
    let layout = Layout::new(cfg.output_dir());
    let panel = prep.panel()?;
    let ids = prep.model_ids();
    let victims = victim_ids(prep, sel)?;
    if let Some(t) = &sel.targets {
        if let Some(bad) = t.iter().find(|x| !ids.contains(x)) {
            return Err(Error::Config(format!("unknown model {bad:?}")));
        }
    }
    let methods: Vec<AttackMethod> = cfg
        .attack_methods
        .iter()
        .copied()
        .filter(|m| sel.methods.as_ref().is_none_or(|s| s.contains(m)))
        .collect();
    let done: HashSet<String> = read_records(&layout.digital_records())?
        .into_iter()
        .map(|r| r.key)
        .collect();

    let mut summary = StageSummary::new("attack");
    let mut pending = Vec::new();
    for job in plan_jobs(&prep.base, &ids, &methods) {
        if !selected(&sel.targets, &[&job.target]) {
            continue;
        }
        summary.planned += 1;
        let complete = file_ok(&layout.root, &job.digital_path())
            && victims
                .iter()
                .all(|v| done.contains(&job.record_key(v, None, cfg.master_seed)));
        if complete {
            summary.skipped += 1;
        } else {
            pending.push((job.index, job));
        }
    }
    let (groups, cut) = take_budget(by_trial(pending), budget);
    summary.interrupted = cut;

    let pool = worker_pool(cfg)?;
    let attack_cfg = cfg.attack;
    let process = |jobs: &Vec<Job>| -> Vec<(Job, Result<Vec<AttackRecord>>)> {
        let trial = &jobs[0].trial;
        let ctx = data
            .audio
            .load(&trial.test)
            .and_then(|test| Ok((test, data.audio.load(&trial.enroll)?)))
            .and_then(|(test, enroll)| TrialContext::new(&panel, test, enroll));
        jobs.iter()
            .map(|job| {
                let out = match &ctx {
                    Err(e) => Err(context_error(e)),
                    Ok(ctx) => (|| {
                        let sample = craft(job, &panel, ctx, &attack_cfg)?;
                        let path = job.digital_path();
                        let file = layout.root.join(&path);
                        if let Some(parent) = file.parent() {
                            std::fs::create_dir_all(parent)?;
                        }
                        write_wav_atomic(&file, &sample)?;
                        let records =
                            score_sample(job, &panel, ctx, &sample, None, &path, cfg.master_seed)?;
                        Ok(records
                            .into_iter()
                            .filter(|r| victims.contains(&r.victim))
                            .collect())
                    })(),
                };
                (job.clone(), out)
            })
            .collect()
    };
    for chunk in groups.chunks(cfg.workers.max(1) * 2) {
        let results: Vec<Vec<(Job, Result<Vec<AttackRecord>>)>> =
            pool.install(|| chunk.par_iter().map(|(_, jobs)| process(jobs)).collect());
        for (job, res) in results.into_iter().flatten() {
            match res {
                Ok(records) => {
                    append_records(&layout.digital_records(), &records)?;
                    summary.completed += 1;
                }
                Err(e) => summary.fail(job.digital_path(), &e),
            }
        }
    }
    if !summary.interrupted {
        canonicalize_records(&layout.digital_records(), &ids)?;
    }
    Ok(summary)
}

/// The configured device grid in speaker-major order, with its chains.
pub fn device_grid(
    cfg: &CampaignConfig,
    sel: &Selection,
) -> Result<Vec<(DeviceCombo, ReplayChain)>> {
    let sr = cfg.sample_rate();
    let registry = cfg.ota.registry(sr)?;
    let room: RoomSetup = cfg.ota.room.build(sr, Some(&cfg.base_dir))?;
    for (filter, presets, what) in [
        (&sel.speakers, &registry.speakers, "speaker"),
        (&sel.mics, &registry.mics, "microphone"),
    ] {
        if let Some(f) = filter {
            if let Some(bad) = f.iter().find(|x| {
                !presets
                    .iter()
                    .any(|p| &p.id == *x || p.tier.as_str() == x.as_str())
            }) {
                return Err(Error::Config(format!("unknown {what} {bad:?}")));
            }
        }
    }
    registry
        .combinations()
        .into_iter()
        .filter(|(s, m)| {
            selected(&sel.speakers, &[&s.id, s.tier.as_str()])
                && selected(&sel.mics, &[&m.id, m.tier.as_str()])
        })
        .map(|(s, m)| {
            Ok((
                DeviceCombo::new(s.id.clone(), m.id.clone()),
                ReplayChain::new(s, &room, m, sr)?,
            ))
        })
        .collect()
}

/// Replays every persisted digital sample through the device grid and
/// scores the result with the victims of its digital records.
pub fn run_replay(
    cfg: &CampaignConfig,
    data: &CampaignData,
    prep: &Prepared,
    sel: &Selection,
    budget: &mut Option<usize>,
) -> Result<StageSummary> {
    let layout = Layout::new(cfg.output_dir());
    let digital = read_records(&layout.digital_records())?;
    if digital.is_empty() {
        return Err(Error::MissingResource(layout.digital_records()));
    }
    let panel = prep.panel()?;
    let ids = prep.model_ids();
    let grid = device_grid(cfg, sel)?;
    let mut victims_of: HashMap<&str, Vec<&str>> = HashMap::new();
    for r in &digital {
        victims_of
            .entry(r.path.as_str())
            .or_default()
            .push(r.victim.as_str());
    }
    let done: HashSet<String> = read_records(&layout.ota_records())?
        .into_iter()
        .map(|r| r.key)
        .collect();

    let mut summary = StageSummary::new("replay");
    let mut pending = Vec::new();
    for job in plan_jobs(&prep.base, &ids, &cfg.attack_methods) {
        let Some(vs) = victims_of.get(job.digital_path().as_str()) else {
            continue;
        };
        if sel
            .methods
            .as_ref()
            .is_some_and(|m| !m.contains(&job.method))
            || !selected(&sel.targets, &[&job.target])
        {
            continue;
        }
        let vs: Vec<String> = vs
            .iter()
            .filter(|v| selected(&sel.victims, &[v]))
            .map(|v| v.to_string())
            .collect();
        for (gi, (device, _)) in grid.iter().enumerate() {
            summary.planned += 1;
            let complete = file_ok(&layout.root, &job.ota_path(device))
                && vs
                    .iter()
                    .all(|v| done.contains(&job.record_key(v, Some(device), cfg.master_seed)));
            if complete {
                summary.skipped += 1;
            } else {
                pending.push((job.index, (job.clone(), gi, vs.clone())));
            }
        }
    }
    let (groups, cut) = take_budget(by_trial(pending), budget);
    summary.interrupted = cut;

    let pool = worker_pool(cfg)?;
    let sr = cfg.sample_rate();
    type Item = (Job, usize, Vec<String>);
    let process = |items: &Vec<Item>| -> Vec<(String, Result<Vec<AttackRecord>>)> {
        let trial = &items[0].0.trial;
        let ctx = data
            .audio
            .load(&trial.test)
            .and_then(|test| Ok((test, data.audio.load(&trial.enroll)?)))
            .and_then(|(test, enroll)| TrialContext::new(&panel, test, enroll));
        let mut loaded: Option<(String, Waveform)> = None;
        items
            .iter()
            .map(|(job, gi, vs)| {
                let (device, chain) = &grid[*gi];
                let path = job.ota_path(device);
                let out = (|| {
                    let ctx = ctx.as_ref().map_err(context_error)?;
                    let src = job.digital_path();
                    if loaded.as_ref().map(|(p, _)| p) != Some(&src) {
                        loaded = Some((src.clone(), read_wav(&layout.root.join(&src), sr, false)?));
                    }
                    let sample = &loaded.as_ref().expect("loaded above").1;
                    let y = replay(job, chain, device, sample, cfg.master_seed)?;
                    let file = layout.root.join(&path);
                    if let Some(parent) = file.parent() {
                        std::fs::create_dir_all(parent)?;
                    }
                    write_wav_atomic(&file, &y)?;
                    let records =
                        score_sample(job, &panel, ctx, &y, Some(device), &path, cfg.master_seed)?;
                    Ok(records
                        .into_iter()
                        .filter(|r| vs.contains(&r.victim))
                        .collect())
                })();
                (path, out)
            })
            .collect()
    };
    for chunk in groups.chunks(cfg.workers.max(1) * 2) {
        let results: Vec<Vec<(String, Result<Vec<AttackRecord>>)>> =
            pool.install(|| chunk.par_iter().map(|(_, items)| process(items)).collect());
        for (path, res) in results.into_iter().flatten() {
            match res {
                Ok(records) => {
                    append_records(&layout.ota_records(), &records)?;
                    summary.completed += 1;
                }
                Err(e) => summary.fail(path, &e),
            }
        }
    }
    if !summary.interrupted {
        canonicalize_records(&layout.ota_records(), &ids)?;
    }
    Ok(summary)
}

/// Rewrites a record file deduplicated by key and sorted by (path, victim
/// column), so the file does not depend on execution order.
pub fn canonicalize_records(path: &Path, model_ids: &[String]) -> Result<()> {
    let records = read_records(path)?;
    if records.is_empty() {
        return Ok(());
    }
    let rank = |v: &str| model_ids.iter().position(|m| m == v).unwrap_or(usize::MAX);
    let mut seen = HashSet::new();
    let mut unique: Vec<AttackRecord> = records
        .into_iter()
        .filter(|r| seen.insert(r.key.clone()))
        .collect();
    unique.sort_by(|a, b| {
        a.path
            .cmp(&b.path)
            .then(rank(&a.victim).cmp(&rank(&b.victim)))
            .then(a.victim.cmp(&b.victim))
    });
    write_records(path, &unique)
}

/// Matrices recomputed from the persisted records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub digital: Vec<SuccessMatrix>,
    pub ota: Vec<SuccessMatrix>,
}

pub fn manifest_plan(cfg: &CampaignConfig, prep: &Prepared) -> Result<ManifestPlan> {
    let registry = cfg.ota.registry(cfg.sample_rate())?;
    Ok(ManifestPlan {
        base: prep.base.clone(),
        models: prep.model_ids(),
        methods: cfg.attack_methods.clone(),
        speakers: registry.speakers.iter().map(|p| p.id.clone()).collect(),
        mics: registry.mics.iter().map(|p| p.id.clone()).collect(),
        master_seed: cfg.master_seed,
    })
}

/// Success matrices, rendered tables, the detection table (when present)
/// and the hashed manifest.
pub fn run_report(cfg: &CampaignConfig, prep: &Prepared) -> Result<(MatrixReport, StageSummary)> {
    let layout = Layout::new(cfg.output_dir());
    let digital = read_records(&layout.digital_records())?;
    let ota = read_records(&layout.ota_records())?;
    if digital.is_empty() {
        return Err(Error::MissingResource(layout.digital_records()));
    }
    let ids = prep.model_ids();
    let plan = manifest_plan(cfg, prep)?;
    let devices = plan.devices();
    let mut report = MatrixReport {
        digital: Vec::new(),
        ota: Vec::new(),
    };
    for &method in &cfg.attack_methods {
        if digital.iter().any(|r| r.attack_method == method) {
            report
                .digital
                .push(matrix_from_records(&digital, method, &ids, None)?);
        }
        if ota.iter().any(|r| r.attack_method == method) {
            report
                .ota
                .push(matrix_from_records(&ota, method, &ids, Some(&devices))?);
        }
    }
    let dir = layout.reports();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join("matrices.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    std::fs::write(
        dir.join("digital_success.txt"),
        render_digital_table(&report.digital),
    )?;
    if !report.ota.is_empty() {
        std::fs::write(dir.join("ota_success.txt"), render_ota_table(&report.ota))?;
    }
    let table_path = layout.detection().join(DETECTION_TABLE);
    if table_path.exists() {
        let table: DetectionTable = serde_json::from_str(&read_text(&table_path)?)?;
        std::fs::write(dir.join("detection_eer.txt"), table.render())?;
    }

    let mut summary = StageSummary::new("report");
    let mut manifest = build_manifest(&plan)?;
    let missing = manifest.attach_hashes(&layout.root)?;
    summary.planned = manifest.entries.len();
    summary.completed = manifest.entries.len() - missing.len();
    if !missing.is_empty() {
        tracing::warn!("{} manifest entries have no file yet", missing.len());
    }
    manifest.write(&layout.manifest())?;
    let on_disk = census(&layout.root.join("ota"))?;
    if missing.is_empty() && on_disk != manifest.entries.len() {
        tracing::warn!(
            "ota/ holds {on_disk} files, manifest lists {}",
            manifest.entries.len()
        );
    }
    Ok((report, summary))
}

pub fn read_manifest(cfg: &CampaignConfig) -> Result<Manifest> {
    Manifest::read(&Layout::new(cfg.output_dir()).manifest())
}

/// Every stage in order. An exhausted item budget stops the run after the
/// interrupted stage; a rerun picks up where it stopped.
pub fn run_campaign(cfg: &CampaignConfig, opts: &RunOptions) -> Result<CampaignSummary> {
    let layout = Layout::new(cfg.output_dir());
    let data = load_data(cfg)?;
    let prep = prepare(cfg, &data)?;
    let sel = Selection::default();
    let mut budget = opts.max_new_items;
    let mut summary = CampaignSummary::default();

    let attack = run_attack(cfg, &data, &prep, &sel, &mut budget)?;
    let stop = attack.interrupted;
    summary.stages.push(attack);
    if !stop {
        let replay = run_replay(cfg, &data, &prep, &sel, &mut budget)?;
        let stop = replay.interrupted;
        summary.stages.push(replay);
        if !stop {
            if cfg.detection.enabled {
                summary.stages.push(run_detect(cfg, &data, &prep, &sel)?);
            }
            summary.stages.push(run_report(cfg, &prep)?.1);
        }
    }
    summary.write_failures(&layout.failures())?;
    Ok(summary)
}
