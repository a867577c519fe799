use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;

use super::config::CampaignConfig;
use super::record::{read_records, AttackMethod, AttackRecord};
use super::run::{device_grid, CampaignData, Layout, Prepared, Selection, StageSummary};
use crate::audio::{read_wav, Waveform};
use crate::detector::{
    detection_row, pool_residual, residual_features, train_detector, write_score_file,
    DetectionLabel, DetectionRow, DetectionTable, DetectorModel, FeatureConfig, ResynthMethod,
    ScoreEntry, TrainCondition,
};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::synth::SyntheticCorpus;
use crate::trials::TrialPair;

pub const DETECTION_TABLE: &str = "detection_table.json";

/// Canonical row order of the detection table.
const ROW_ORDER: [&str; 7] = ["1", "2a", "2b", "3a", "3b", "4a", "4b"];

fn row_letter(method: AttackMethod) -> &'static str {
    match method {
        AttackMethod::Pgd => "a",
        AttackMethod::EnsemblePgd => "b",
    }
}

/// Evenly spaced base trials used for detection.
pub fn detection_trials(base: &[TrialPair], n: usize) -> Vec<TrialPair> {
    let n = n.min(base.len());
    (0..n).map(|k| base[k * base.len() / n].clone()).collect()
}

struct Scored {
    id: String,
    device: Option<String>,
    features: Vec<f64>,
}

fn features(x: &Waveform, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    Ok(pool_residual(
        &residual_features(x, ResynthMethod::Vocoder, cfg)?,
        cfg.bands,
    ))
}

fn score_all(detector: &DetectorModel, items: &[Scored]) -> Vec<f64> {
    items
        .iter()
        .map(|s| detector.score_pooled(&s.features))
        .collect()
}

fn entries(
    bona: &[Scored],
    bona_scores: &[f64],
    spoof: &[&Scored],
    spoof_scores: &[f64],
) -> Vec<ScoreEntry> {
    let bona = bona
        .iter()
        .zip(bona_scores)
        .map(|(s, &score)| (s, score, DetectionLabel::Bonafide));
    let spoof = spoof
        .iter()
        .zip(spoof_scores)
        .map(|(s, &score)| (*s, score, DetectionLabel::Spoof));
    bona.chain(spoof)
        .map(|(s, score, label)| ScoreEntry {
            id: s.id.clone(),
            score,
            label,
        })
        .collect()
}

/// Trains the one-class detectors and evaluates the detection rows on a
/// subset of the campaign's adversarial samples:
///
/// * 1: replayed bonafide audio, detector trained on digital bonafide;
/// * 2a/2b: digital adversarial samples (PGD / ensemble PGD);
/// * 3a/3b: replayed adversarial samples;
/// * 4a/4b: replayed adversarial samples, detector trained on replayed
///   bonafide audio.
///
/// The bonafide class of every row is the clean trial audio.
pub fn run_detect(
    cfg: &CampaignConfig,
    data: &CampaignData,
    prep: &Prepared,
    sel: &Selection,
) -> Result<StageSummary> {
    let layout = Layout::new(cfg.output_dir());
    let dir = layout.detection();
    let sr = cfg.sample_rate();
    let det_cfg = cfg.detection.detector;
    let feat_cfg = det_cfg.features;
    let conditions: Vec<TrainCondition> = sel
        .train_conditions
        .clone()
        .unwrap_or_else(|| vec![TrainCondition::DigitalBonafide, TrainCondition::OtaBonafide]);
    let grid = device_grid(cfg, &Selection::default())?;
    let columns: Vec<String> = grid.iter().map(|(d, _)| d.to_string()).collect();

    let subset: HashSet<String> = detection_trials(&prep.base, cfg.detection.trials)
        .iter()
        .map(TrialPair::key)
        .collect();
    let pick = |records: Vec<AttackRecord>| -> Vec<(AttackMethod, String, Option<String>)> {
        let mut seen = BTreeSet::new();
        records
            .into_iter()
            .filter(|r| subset.contains(&r.trial.key()))
            .filter(|r| seen.insert(r.path.clone()))
            .map(|r| (r.attack_method, r.path, r.device.map(|d| d.to_string())))
            .collect()
    };
    let digital = pick(read_records(&layout.digital_records())?);
    let ota = pick(read_records(&layout.ota_records())?);
    if digital.is_empty() {
        return Err(Error::MissingResource(layout.digital_records()));
    }
    if ota.is_empty() {
        return Err(Error::MissingResource(layout.ota_records()));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    // bonafide test audio: every utterance of the trial subset
    let utts: BTreeSet<&str> = prep
        .trials
        .iter()
        .flat_map(|t| [t.enroll.as_str(), t.test.as_str()])
        .collect();
    let utts: Vec<&str> = utts.into_iter().collect();
    let (bona, ota_bona, spoof) = pool.install(|| -> Result<_> {
        let bona: Vec<Scored> = utts
            .par_iter()
            .map(|u| {
                Ok(Scored {
                    id: u.to_string(),
                    device: None,
                    features: features(&data.audio.load(u)?, &feat_cfg)?,
                })
            })
            .collect::<Result<_>>()?;
        let pairs: Vec<(&str, usize)> = utts
            .iter()
            .flat_map(|u| (0..grid.len()).map(move |g| (*u, g)))
            .collect();
        let ota_bona: Vec<Scored> = pairs
            .par_iter()
            .map(|&(u, g)| {
                let (device, chain) = &grid[g];
                let seed = derive_seed(
                    cfg.master_seed,
                    &["detect", "bonafide", u, &device.to_string()],
                );
                let y = chain.apply(&data.audio.load(u)?, seed)?.quantized();
                Ok(Scored {
                    id: format!("bonafide/{}/{u}", device.dir_name()),
                    device: Some(device.to_string()),
                    features: features(&y, &feat_cfg)?,
                })
            })
            .collect::<Result<_>>()?;
        let spoof: Vec<(AttackMethod, Scored)> = digital
            .par_iter()
            .chain(ota.par_iter())
            .map(|(method, path, device)| {
                let x = read_wav(&layout.root.join(path), sr, false)?;
                Ok((
                    *method,
                    Scored {
                        id: path.clone(),
                        device: device.clone(),
                        features: features(&x, &feat_cfg)?,
                    },
                ))
            })
            .collect::<Result<_>>()?;
        Ok((bona, ota_bona, spoof))
    })?;

    let train_corpus = SyntheticCorpus::generate(&cfg.detection.train_corpus)?;
    let train_set = train_corpus.training_set();
    std::fs::create_dir_all(dir.join("scores"))?;
    let mut rows: Vec<DetectionRow> = Vec::new();
    let mut summary = StageSummary::new("detect");
    for condition in conditions {
        let train_audio: Vec<Waveform> = match condition {
            TrainCondition::DigitalBonafide => train_set.iter().map(|(_, w)| w.clone()).collect(),
            TrainCondition::OtaBonafide => train_set
                .iter()
                .enumerate()
                .map(|(i, (key, w))| {
                    let (_, chain) = &grid[i % grid.len()];
                    Ok(chain
                        .apply(w, derive_seed(cfg.master_seed, &["detect", "train", key]))?
                        .quantized())
                })
                .collect::<Result<_>>()?,
        };
        let detector = pool.install(|| train_detector(&train_audio, condition, &det_cfg))?;
        std::fs::write(
            dir.join(format!("detector_{condition}.json")),
            detector.to_json()? + "\n",
        )?;
        let bona_scores = score_all(&detector, &bona);

        let mut evaluate =
            |name: String, source: &str, attack: &str, items: Vec<&Scored>| -> Result<()> {
                summary.planned += 1;
                if items.is_empty() {
                    tracing::warn!("detection row {name}: no spoof samples");
                    return Ok(());
                }
                let scores: Vec<f64> = items
                    .iter()
                    .map(|s| detector.score_pooled(&s.features))
                    .collect();
                let tagged: Vec<(Option<String>, f64)> = items
                    .iter()
                    .map(|s| s.device.clone())
                    .zip(scores.iter().copied())
                    .collect();
                rows.push(detection_row(&bona_scores, &tagged, &name, source, attack)?);
                write_score_file(
                    &dir.join("scores").join(format!("row{name}.txt")),
                    &entries(&bona, &bona_scores, &items, &scores),
                )?;
                summary.completed += 1;
                Ok(())
            };
        match condition {
            TrainCondition::DigitalBonafide => {
                evaluate("1".into(), "OTA bonafide", "NA", ota_bona.iter().collect())?;
                for &m in &cfg.attack_methods {
                    let pick = |replayed: bool| {
                        spoof
                            .iter()
                            .filter(|(sm, s)| *sm == m && s.device.is_some() == replayed)
                            .map(|(_, s)| s)
                            .collect::<Vec<_>>()
                    };
                    evaluate(
                        format!("2{}", row_letter(m)),
                        "Digital",
                        m.title(),
                        pick(false),
                    )?;
                    evaluate(format!("3{}", row_letter(m)), "OTA", m.title(), pick(true))?;
                }
            }
            TrainCondition::OtaBonafide => {
                for &m in &cfg.attack_methods {
                    let items = spoof
                        .iter()
                        .filter(|(sm, s)| *sm == m && s.device.is_some())
                        .map(|(_, s)| s)
                        .collect();
                    evaluate(format!("4{}", row_letter(m)), "OTA", m.title(), items)?;
                }
            }
        }
    }

    // merge with rows of earlier runs that used other train conditions
    let table_path = dir.join(DETECTION_TABLE);
    if table_path.exists() {
        let old: DetectionTable = serde_json::from_str(&std::fs::read_to_string(&table_path)?)?;
        for r in old.rows {
            if !rows.iter().any(|n| n.row == r.row) {
                rows.push(r);
            }
        }
    }
    let rank = |name: &str| {
        ROW_ORDER
            .iter()
            .position(|r| *r == name)
            .unwrap_or(usize::MAX)
    };
    rows.sort_by(|a, b| rank(&a.row).cmp(&rank(&b.row)).then(a.row.cmp(&b.row)));
    let table = DetectionTable { columns, rows };
    std::fs::write(&table_path, serde_json::to_string_pretty(&table)? + "\n")?;
    Ok(summary)
}
