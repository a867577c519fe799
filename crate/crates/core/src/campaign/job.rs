use sha2::{Digest, Sha256};

use super::record::{record_key, AttackMethod, AttackRecord, DeviceCombo};
use crate::asv::{embed, score, SpeakerEmbedding};
use crate::attack::{ensemble_pgd_attack, pgd_attack, AttackConfig, Surrogate};
use crate::audio::{quantize_within, Waveform};
use crate::error::{Error, Result};
use crate::ota::ReplayChain;
use crate::seed::derive_seed;
use crate::trials::TrialPair;

/// One adversarial sample to craft: a base trial attacked by one row of
/// the success tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    /// Position of the trial in the base list.
    pub index: usize,
    pub trial: TrialPair,
    pub method: AttackMethod,
    pub target: String,
    pub surrogates: Vec<String>,
}

/// Surrogate set of a table row: the model itself for PGD, every other
/// model for a leave-one-out ensemble.
pub fn row_surrogates(method: AttackMethod, target: &str, model_ids: &[String]) -> Vec<String> {
    match method {
        AttackMethod::Pgd => vec![target.to_string()],
        AttackMethod::EnsemblePgd => model_ids.iter().filter(|m| *m != target).cloned().collect(),
    }
}

/// Row label used in rendered tables.
pub fn row_label(method: AttackMethod, target: &str) -> String {
    match method {
        AttackMethod::Pgd => target.to_string(),
        AttackMethod::EnsemblePgd => format!("w/o {target}"),
    }
}

/// Jobs in canonical order: trial, then method, then model.
pub fn plan_jobs(trials: &[TrialPair], model_ids: &[String], methods: &[AttackMethod]) -> Vec<Job> {
    let mut jobs = Vec::with_capacity(trials.len() * model_ids.len() * methods.len());
    for (index, trial) in trials.iter().enumerate() {
        for &method in methods {
            for target in model_ids {
                jobs.push(Job {
                    index,
                    trial: trial.clone(),
                    method,
                    target: target.clone(),
                    surrogates: row_surrogates(method, target, model_ids),
                });
            }
        }
    }
    jobs
}

/// `t00042-1a2b3c4d`: base index plus a digest of the trial line.
pub fn trial_stem(index: usize, trial: &TrialPair) -> String {
    let digest = Sha256::digest(trial.key().as_bytes());
    format!("t{index:05}-{}", &hex::encode(digest)[..8])
}

impl Job {
    pub fn seed(&self, master_seed: u64) -> u64 {
        derive_seed(
            master_seed,
            &["job", &self.trial.key(), self.method.as_str(), &self.target],
        )
    }

    pub fn stem(&self) -> String {
        trial_stem(self.index, &self.trial)
    }

    pub fn digital_path(&self) -> String {
        format!(
            "digital/{}/{}/{}.wav",
            self.method,
            self.target,
            self.stem()
        )
    }

    pub fn ota_path(&self, device: &DeviceCombo) -> String {
        format!(
            "ota/{}/{}/{}/{}.wav",
            self.method,
            self.target,
            device.dir_name(),
            self.stem()
        )
    }

    pub fn ota_seed(&self, master_seed: u64, device: &DeviceCombo) -> u64 {
        derive_seed(self.seed(master_seed), &["ota", &device.to_string()])
    }

    pub fn record_key(
        &self,
        victim: &str,
        device: Option<&DeviceCombo>,
        master_seed: u64,
    ) -> String {
        record_key(
            &self.trial,
            self.method,
            &self.surrogates,
            victim,
            device,
            self.seed(master_seed),
        )
    }
}

/// Victim models with thresholds, in table-column order.
pub struct ModelPanel<'a> {
    pub models: Vec<Surrogate<'a>>,
}

impl<'a> ModelPanel<'a> {
    pub fn new(models: Vec<Surrogate<'a>>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::EmptyModelList);
        }
        let mut ids: Vec<&str> = models.iter().map(|m| m.model.model_id()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate model id".into()));
        }
        Ok(Self { models })
    }

    pub fn ids(&self) -> Vec<String> {
        self.models
            .iter()
            .map(|m| m.model.model_id().to_string())
            .collect()
    }

    pub fn get(&self, id: &str) -> Result<&Surrogate<'a>> {
        self.models
            .iter()
            .find(|m| m.model.model_id() == id)
            .ok_or_else(|| Error::Config(format!("unknown model {id:?}")))
    }
}

/// Clean-trial context shared by every sample derived from one trial.
pub struct TrialContext {
    pub test: Waveform,
    pub enroll: Waveform,
    enroll_embeddings: Vec<SpeakerEmbedding>,
    pre_scores: Vec<f64>,
}

impl TrialContext {
    pub fn new(panel: &ModelPanel<'_>, test: Waveform, enroll: Waveform) -> Result<Self> {
        let mut enroll_embeddings = Vec::new();
        let mut pre_scores = Vec::new();
        for m in &panel.models {
            let e = embed(m.model, &enroll)?;
            pre_scores.push(score(&embed(m.model, &test)?, &e)?);
            enroll_embeddings.push(e);
        }
        Ok(Self {
            test,
            enroll,
            enroll_embeddings,
            pre_scores,
        })
    }
}

/// Runs the job's attack and returns the sample on the 16-bit grid, still
/// inside the budget.
pub fn craft(
    job: &Job,
    panel: &ModelPanel<'_>,
    ctx: &TrialContext,
    cfg: &AttackConfig,
) -> Result<Waveform> {
    let surrogates: Vec<Surrogate<'_>> = job
        .surrogates
        .iter()
        .map(|id| panel.get(id).copied())
        .collect::<Result<_>>()?;
    let (adv, _) = match job.method {
        AttackMethod::Pgd => {
            let [s] = surrogates.as_slice() else {
                return Err(Error::InvalidAttackConfig(
                    "PGD takes exactly one surrogate".into(),
                ));
            };
            pgd_attack(s, &ctx.test, &ctx.enroll, cfg)?
        }
        AttackMethod::EnsemblePgd => ensemble_pgd_attack(&surrogates, &ctx.test, &ctx.enroll, cfg)?,
    };
    quantize_within(&adv, &ctx.test, cfg.epsilon)
}

/// Scores `sample` with every victim of the panel.
pub fn score_sample(
    job: &Job,
    panel: &ModelPanel<'_>,
    ctx: &TrialContext,
    sample: &Waveform,
    device: Option<&DeviceCombo>,
    path: &str,
    master_seed: u64,
) -> Result<Vec<AttackRecord>> {
    let seed = match device {
        Some(d) => job.ota_seed(master_seed, d),
        None => job.seed(master_seed),
    };
    panel
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let post = score(&embed(m.model, sample)?, &ctx.enroll_embeddings[i])?;
            let victim = m.model.model_id().to_string();
            Ok(AttackRecord {
                key: job.record_key(&victim, device, master_seed),
                trial: job.trial.clone(),
                attack_method: job.method,
                target: job.target.clone(),
                surrogates: job.surrogates.clone(),
                victim,
                device: device.cloned(),
                pre_score: ctx.pre_scores[i],
                post_score: post,
                threshold: m.threshold,
                success: post >= m.threshold,
                seed,
                path: path.to_string(),
            })
        })
        .collect()
}

/// Replays a digital sample through one device pair, on the 16-bit grid.
pub fn replay(
    job: &Job,
    chain: &ReplayChain,
    device: &DeviceCombo,
    sample: &Waveform,
    master_seed: u64,
) -> Result<Waveform> {
    Ok(chain
        .apply(sample, job.ota_seed(master_seed, device))?
        .quantized())
}
