use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use super::eer::{compute_eer, ScoredTrial};
use super::{embed, score, Embedder, SpeakerEmbedding};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::trials::TrialPair;

/// Resolves utterance ids from a trial list to audio.
pub trait AudioSource: Sync {
    fn load(&self, utterance: &str) -> Result<Waveform>;
}

impl AudioSource for HashMap<String, Waveform> {
    fn load(&self, utterance: &str) -> Result<Waveform> {
        self.get(utterance)
            .cloned()
            .ok_or_else(|| Error::MissingResource(utterance.into()))
    }
}

impl AudioSource for BTreeMap<String, Waveform> {
    fn load(&self, utterance: &str) -> Result<Waveform> {
        self.get(utterance)
            .cloned()
            .ok_or_else(|| Error::MissingResource(utterance.into()))
    }
}

/// Scores every trial, embedding each distinct utterance once.
pub fn score_trials(
    model: &dyn Embedder,
    trials: &[TrialPair],
    audio: &dyn AudioSource,
) -> Result<Vec<ScoredTrial>> {
    let mut cache: HashMap<&str, SpeakerEmbedding> = HashMap::new();
    let mut out = Vec::with_capacity(trials.len());
    for trial in trials {
        for utt in [trial.enroll.as_str(), trial.test.as_str()] {
            if !cache.contains_key(utt) {
                cache.insert(utt, embed(model, &audio.load(utt)?)?);
            }
        }
        out.push(ScoredTrial {
            trial: trial.clone(),
            score: score(&cache[trial.enroll.as_str()], &cache[trial.test.as_str()])?,
            label: trial.label,
        });
    }
    Ok(out)
}

/// Per-model EER thresholds on clean trials, computed once per model id.
#[derive(Debug, Default)]
pub struct ThresholdCache {
    thresholds: Mutex<HashMap<String, f64>>,
}

impl ThresholdCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn decision_threshold(
        &self,
        model: &dyn Embedder,
        clean_trials: &[TrialPair],
        audio: &dyn AudioSource,
    ) -> Result<f64> {
        if let Some(&t) = self
            .thresholds
            .lock()
            .expect("poisoned")
            .get(model.model_id())
        {
            return Ok(t);
        }
        let scored = score_trials(model, clean_trials, audio)?;
        let threshold = compute_eer(&scored)?.threshold;
        self.thresholds
            .lock()
            .expect("poisoned")
            .insert(model.model_id().to_string(), threshold);
        Ok(threshold)
    }

    pub fn get(&self, model_id: &str) -> Option<f64> {
        self.thresholds
            .lock()
            .expect("poisoned")
            .get(model_id)
            .copied()
    }

    pub fn insert(&self, model_id: impl Into<String>, threshold: f64) {
        self.thresholds
            .lock()
            .expect("poisoned")
            .insert(model_id.into(), threshold);
    }
}
