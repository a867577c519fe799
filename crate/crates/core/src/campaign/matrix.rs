use serde::{Deserialize, Serialize};

use super::job::{craft, plan_jobs, replay, row_label, score_sample, ModelPanel, TrialContext};
use super::record::{AttackMethod, AttackRecord, DeviceCombo};
use crate::asv::AudioSource;
use crate::attack::AttackConfig;
use crate::detector::render_aligned;
use crate::error::{Error, Result};
use crate::ota::ReplayChain;
use crate::trials::TrialPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// The victim is one of the surrogates.
    WhiteBox,
    Transfer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub target: String,
    pub victim: String,
    pub device: Option<DeviceCombo>,
    pub kind: CellKind,
    pub successes: usize,
    pub total: usize,
    pub rate: f64,
}

/// Success rates of one attack method: rows × victims, optionally × device
/// pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessMatrix {
    pub method: AttackMethod,
    /// Row targets (surrogate, or held-out model for ensembles).
    pub rows: Vec<String>,
    pub victims: Vec<String>,
    /// Empty for the digital matrix.
    pub devices: Vec<DeviceCombo>,
    pub cells: Vec<MatrixCell>,
}

impl SuccessMatrix {
    pub fn cell(
        &self,
        target: &str,
        victim: &str,
        device: Option<&DeviceCombo>,
    ) -> Option<&MatrixCell> {
        self.cells
            .iter()
            .find(|c| c.target == target && c.victim == victim && c.device.as_ref() == device)
    }

    pub fn rate(&self, target: &str, victim: &str, device: Option<&DeviceCombo>) -> Option<f64> {
        self.cell(target, victim, device).map(|c| c.rate)
    }

    /// Rate over every device pair of a (row, victim) cell group.
    pub fn pooled_rate(&self, target: &str, victim: &str) -> Option<f64> {
        let (hits, total) = self
            .cells
            .iter()
            .filter(|c| c.target == target && c.victim == victim)
            .fold((0, 0), |(h, t), c| (h + c.successes, t + c.total));
        (total > 0).then(|| 100.0 * hits as f64 / total as f64)
    }

    /// Rate of one device pair over every (row, victim) cell.
    pub fn device_rate(&self, device: &DeviceCombo) -> Option<f64> {
        let (hits, total) = self
            .cells
            .iter()
            .filter(|c| c.device.as_ref() == Some(device))
            .fold((0, 0), |(h, t), c| (h + c.successes, t + c.total));
        (total > 0).then(|| 100.0 * hits as f64 / total as f64)
    }
}

/// Aggregates records of `method` into a matrix. With `devices` set, only
/// replayed records count and cells are split per device pair; otherwise
/// only digital records count.
pub fn matrix_from_records(
    records: &[AttackRecord],
    method: AttackMethod,
    model_ids: &[String],
    devices: Option<&[DeviceCombo]>,
) -> Result<SuccessMatrix> {
    let device_list: Vec<Option<DeviceCombo>> = match devices {
        Some(ds) => ds.iter().cloned().map(Some).collect(),
        None => vec![None],
    };
    let mut cells = Vec::new();
    for target in model_ids {
        for device in &device_list {
            for victim in model_ids {
                let matching: Vec<&AttackRecord> = records
                    .iter()
                    .filter(|r| {
                        r.attack_method == method
                            && &r.target == target
                            && &r.victim == victim
                            && &r.device == device
                    })
                    .collect();
                if matching.is_empty() {
                    continue;
                }
                let successes = matching.iter().filter(|r| r.success).count();
                cells.push(MatrixCell {
                    target: target.clone(),
                    victim: victim.clone(),
                    device: device.clone(),
                    kind: if matching[0].is_white_box() {
                        CellKind::WhiteBox
                    } else {
                        CellKind::Transfer
                    },
                    successes,
                    total: matching.len(),
                    rate: 100.0 * successes as f64 / matching.len() as f64,
                });
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyInput(format!("no {method} records")));
    }
    Ok(SuccessMatrix {
        method,
        rows: model_ids.to_vec(),
        victims: model_ids.to_vec(),
        devices: devices.map(<[DeviceCombo]>::to_vec).unwrap_or_default(),
        cells,
    })
}

fn fmt_rate(rate: Option<f64>) -> String {
    rate.map_or_else(|| "-".to_string(), |r| format!("{r:.1}"))
}

/// Digital success rates: one block per method, surrogate rows × victim
/// columns.
pub fn render_digital_table(matrices: &[SuccessMatrix]) -> String {
    let Some(first) = matrices.first() else {
        return String::new();
    };
    let mut header = vec!["Attack".to_string(), "S\\V".to_string()];
    header.extend(first.victims.iter().cloned());
    let mut lines = vec![header];
    for m in matrices {
        for target in &m.rows {
            let mut line = vec![m.method.title().to_string(), row_label(m.method, target)];
            line.extend(m.victims.iter().map(|v| fmt_rate(m.rate(target, v, None))));
            lines.push(line);
        }
    }
    render_aligned(&lines)
}

/// Over-the-air success rates: rows are (method, surrogate row, speaker),
/// columns are (victim, mic).
pub fn render_ota_table(matrices: &[SuccessMatrix]) -> String {
    let Some(first) = matrices.first() else {
        return String::new();
    };
    let mut speakers: Vec<&str> = Vec::new();
    let mut mics: Vec<&str> = Vec::new();
    for d in &first.devices {
        if !speakers.contains(&d.speaker.as_str()) {
            speakers.push(&d.speaker);
        }
        if !mics.contains(&d.mic.as_str()) {
            mics.push(&d.mic);
        }
    }
    let mut header = vec![
        "Attack".to_string(),
        "Surrogate".to_string(),
        "Speaker".to_string(),
    ];
    for v in &first.victims {
        header.extend(mics.iter().map(|mic| format!("{v}/{mic}")));
    }
    let mut lines = vec![header];
    for m in matrices {
        for target in &m.rows {
            for spk in &speakers {
                let mut line = vec![
                    m.method.title().to_string(),
                    row_label(m.method, target),
                    spk.to_string(),
                ];
                for v in &m.victims {
                    for mic in &mics {
                        line.push(fmt_rate(m.rate(
                            target,
                            v,
                            Some(&DeviceCombo::new(*spk, *mic)),
                        )));
                    }
                }
                lines.push(line);
            }
        }
    }
    render_aligned(&lines)
}

/// Runs `method` for every row of the panel over `trials` and aggregates
/// the result. With a channel, every sample is also replayed through each
/// device pair and the matrix covers the replayed records.
pub fn transfer_matrix(
    panel: &ModelPanel<'_>,
    method: AttackMethod,
    trials: &[TrialPair],
    audio: &dyn AudioSource,
    cfg: &AttackConfig,
    channel: Option<&[(DeviceCombo, ReplayChain)]>,
    master_seed: u64,
) -> Result<(SuccessMatrix, Vec<AttackRecord>)> {
    let ids = panel.ids();
    if method == AttackMethod::EnsemblePgd && ids.len() < 2 {
        return Err(Error::EmptyModelList);
    }
    let mut records = Vec::new();
    let jobs = plan_jobs(trials, &ids, &[method]);
    let mut current: Option<(usize, TrialContext)> = None;
    for job in &jobs {
        if current.as_ref().map(|(i, _)| *i) != Some(job.index) {
            let ctx = TrialContext::new(
                panel,
                audio.load(&job.trial.test)?,
                audio.load(&job.trial.enroll)?,
            )?;
            current = Some((job.index, ctx));
        }
        let ctx = &current.as_ref().expect("set above").1;
        let sample = craft(job, panel, ctx, cfg)?;
        match channel {
            None => records.extend(score_sample(
                job,
                panel,
                ctx,
                &sample,
                None,
                &job.digital_path(),
                master_seed,
            )?),
            Some(grid) => {
                for (device, chain) in grid {
                    let y = replay(job, chain, device, &sample, master_seed)?;
                    records.extend(score_sample(
                        job,
                        panel,
                        ctx,
                        &y,
                        Some(device),
                        &job.ota_path(device),
                        master_seed,
                    )?);
                }
            }
        }
    }
    let devices: Option<Vec<DeviceCombo>> =
        channel.map(|g| g.iter().map(|(d, _)| d.clone()).collect());
    let matrix = matrix_from_records(&records, method, &ids, devices.as_deref())?;
    Ok((matrix, records))
}
