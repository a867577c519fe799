use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::AttackMethod;
use crate::asv::Architecture;
use crate::attack::AttackConfig;
use crate::detector::{DetectorConfig, MIN_BONAFIDE};
use crate::error::{Error, Result};
use crate::ota::OtaConfig;
use crate::synth::CorpusConfig;

/// Where trials and audio come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Generated speakers; the embedders are fitted on the training split.
    Synthetic {
        corpus: CorpusConfig,
        /// Trial list over the eval split; generated when absent.
        #[serde(default)]
        trial_list: Option<PathBuf>,
        #[serde(default = "default_genuine_per_enroll")]
        genuine_per_enroll: usize,
        #[serde(default = "default_impostors_per_enroll")]
        impostors_per_enroll: usize,
    },
    /// A trial list whose utterance ids are paths under `audio_root`.
    Files {
        trial_list: PathBuf,
        audio_root: PathBuf,
        #[serde(default = "default_sample_rate")]
        sample_rate: u32,
    },
}

fn default_genuine_per_enroll() -> usize {
    2
}
fn default_impostors_per_enroll() -> usize {
    7
}
fn default_sample_rate() -> u32 {
    crate::audio::DEFAULT_SAMPLE_RATE
}

impl DataConfig {
    pub fn sample_rate(&self) -> u32 {
        match self {
            DataConfig::Synthetic { corpus, .. } => corpus.sample_rate,
            DataConfig::Files { sample_rate, .. } => *sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSelection {
    /// Stratified share of the trial list that is kept.
    #[serde(default = "TrialSelection::default_fraction")]
    pub fraction: f64,
    /// Number of impostor trials used as the attack base; all impostors of
    /// the subset when absent.
    #[serde(default)]
    pub base_count: Option<usize>,
}

impl TrialSelection {
    fn default_fraction() -> f64 {
        0.25
    }
}

impl Default for TrialSelection {
    fn default() -> Self {
        Self {
            fraction: Self::default_fraction(),
            base_count: None,
        }
    }
}

/// A victim/surrogate model: either trained from an architecture on the
/// synthetic corpus, or loaded from a model container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    #[serde(default)]
    pub architecture: Option<Architecture>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    #[serde(default = "DetectionSection::default_enabled")]
    pub enabled: bool,
    /// Base trials whose adversarial samples make up the spoof test sets.
    #[serde(default = "DetectionSection::default_trials")]
    pub trials: usize,
    /// Bonafide training audio for the one-class detectors.
    #[serde(default = "DetectionSection::default_train_corpus")]
    pub train_corpus: CorpusConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
}

impl DetectionSection {
    fn default_enabled() -> bool {
        true
    }
    fn default_trials() -> usize {
        32
    }
    fn default_train_corpus() -> CorpusConfig {
        CorpusConfig {
            eval_utterances: 0,
            snr_db: (0.0, 30.0),
            seed: 4242,
            ..CorpusConfig::default()
        }
    }
}

impl Default for DetectionSection {
    fn default() -> Self {
        Self {
            enabled: Self::default_enabled(),
            trials: Self::default_trials(),
            train_corpus: Self::default_train_corpus(),
            detector: DetectorConfig::default(),
        }
    }
}

/// One campaign: every stage reads its section from this file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub output_root: PathBuf,
    pub master_seed: u64,
    #[serde(default = "CampaignConfig::default_workers")]
    pub workers: usize,
    pub data: DataConfig,
    #[serde(default)]
    pub trials: TrialSelection,
    pub models: Vec<ModelSpec>,
    #[serde(default = "CampaignConfig::default_methods")]
    pub attack_methods: Vec<AttackMethod>,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub ota: OtaConfig,
    #[serde(default)]
    pub detection: DetectionSection,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.')
}

impl CampaignConfig {
    fn default_workers() -> usize {
        1
    }
    fn default_methods() -> Vec<AttackMethod> {
        AttackMethod::ALL.to_vec()
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: CampaignConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; relative paths resolve against
    /// its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingResource(path.to_path_buf()),
            _ => e.into(),
        })?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::from_toml_str(&text, dir)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_root)
    }

    pub fn sample_rate(&self) -> u32 {
        self.data.sample_rate()
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.id.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if !(self.trials.fraction > 0.0 && self.trials.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "trials.fraction {} must be in (0, 1]",
                self.trials.fraction
            )));
        }
        if self.trials.base_count == Some(0) {
            return Err(Error::Config("trials.base_count must be >= 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        let mut ids = BTreeSet::new();
        for m in &self.models {
            if !valid_id(&m.id) {
                return Err(Error::Config(format!(
                    "model id {:?} must be [A-Za-z0-9._-]",
                    m.id
                )));
            }
            if !ids.insert(m.id.as_str()) {
                return Err(Error::Config(format!("duplicate model id {:?}", m.id)));
            }
            match (&m.architecture, &m.path, &self.data) {
                (Some(_), Some(_), _) | (None, None, _) => {
                    return Err(Error::Config(format!(
                        "model {:?} needs exactly one of architecture or path",
                        m.id
                    )))
                }
                (Some(_), None, DataConfig::Files { .. }) => {
                    return Err(Error::Config(format!(
                        "model {:?}: training needs synthetic data; give a model path",
                        m.id
                    )))
                }
                _ => {}
            }
        }
        if self.attack_methods.is_empty() {
            return Err(Error::Config("attack_methods is empty".into()));
        }
        if self.attack_methods.iter().collect::<BTreeSet<_>>().len() != self.attack_methods.len() {
            return Err(Error::Config("duplicate attack method".into()));
        }
        if self.attack_methods.contains(&AttackMethod::EnsemblePgd) && self.models.len() < 2 {
            return Err(Error::Config(
                "ensemble attacks need at least two models".into(),
            ));
        }
        self.attack
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let registry = self
            .ota
            .registry(self.sample_rate())
            .map_err(|e| Error::Config(e.to_string()))?;
        for p in registry.speakers.iter().chain(&registry.mics) {
            if !valid_id(&p.id) || p.id.contains("__") {
                return Err(Error::Config(format!(
                    "device id {:?} must be [A-Za-z0-9._-] without \"__\"",
                    p.id
                )));
            }
        }
        if let DataConfig::Synthetic { corpus, .. } = &self.data {
            if corpus.eval_utterances == 0 {
                return Err(Error::Config(
                    "synthetic corpus needs eval utterances".into(),
                ));
            }
        }
        if self.detection.enabled {
            if self.detection.trials == 0 {
                return Err(Error::Config("detection.trials must be >= 1".into()));
            }
            let c = &self.detection.train_corpus;
            if c.num_speakers * c.train_utterances < MIN_BONAFIDE {
                return Err(Error::Config(format!(
                    "detection.train_corpus has {} training utterances, need {MIN_BONAFIDE}",
                    c.num_speakers * c.train_utterances
                )));
            }
            if c.sample_rate != self.sample_rate() {
                return Err(Error::Config(
                    "detection.train_corpus sample rate differs from the data".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_root = "out"
master_seed = 3

[data]
source = "synthetic"
[data.corpus]
num_speakers = 4
train_utterances = 6
eval_utterances = 3
duration_secs = 0.5
sample_rate = 16000
snr_db = [10.0, 30.0]
rms = [0.06, 0.12]
seed = 7

[[models]]
id = "a"
architecture = "mel-stats"

[[models]]
id = "b"
architecture = "wide-log"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = CampaignConfig::from_toml_str(MINIMAL, Path::new("/tmp/c")).unwrap();
        assert_eq!(cfg.output_dir(), PathBuf::from("/tmp/c/out"));
        assert_eq!(cfg.attack_methods, AttackMethod::ALL.to_vec());
        assert_eq!(cfg.trials.fraction, 0.25);
        assert_eq!(cfg.attack, AttackConfig::default());
        assert!(cfg.detection.enabled);
        assert_eq!(cfg.model_ids(), ["a", "b"]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let dir = Path::new(".");
        for bad in [
            format!("{MINIMAL}\nbogus = 1\n"),
            MINIMAL.replace("master_seed = 3", "master_seed = 3\nworkers = 0"),
            MINIMAL.replace("id = \"b\"", "id = \"a\""),
            MINIMAL.replace("id = \"b\"", "id = \"b/c\""),
            MINIMAL.replace(
                "architecture = \"wide-log\"",
                "architecture = \"wide-log\"\npath = \"b.otm\"",
            ),
            format!("{MINIMAL}\n[attack]\nalpha = -1.0\n"),
            format!("{MINIMAL}\n[attack]\nsteps = 20\nbeta = 1\n"),
            format!("{MINIMAL}\n[trials]\nfraction = 0.0\n"),
        ] {
            assert!(
                matches!(
                    CampaignConfig::from_toml_str(&bad, dir),
                    Err(Error::Config(_))
                ),
                "{bad}"
            );
        }
    }

    #[test]
    fn ensemble_needs_two_models() {
        let one = MINIMAL.split("[[models]]\nid = \"b\"").next().unwrap();
        assert!(CampaignConfig::from_toml_str(one, Path::new(".")).is_err());
        let pgd_only = format!("attack_methods = [\"pgd\"]\n{one}");
        CampaignConfig::from_toml_str(&pgd_only, Path::new(".")).unwrap();
    }
}
