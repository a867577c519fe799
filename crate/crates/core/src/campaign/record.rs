use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trials::TrialPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Pgd,
    EnsemblePgd,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 2] = [AttackMethod::Pgd, AttackMethod::EnsemblePgd];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackMethod::Pgd => "pgd",
            AttackMethod::EnsemblePgd => "ensemble_pgd",
        }
    }

    /// Heading used in rendered tables.
    pub fn title(self) -> &'static str {
        match self {
            AttackMethod::Pgd => "PGD",
            AttackMethod::EnsemblePgd => "Ensemble PGD",
        }
    }
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgd" => Ok(AttackMethod::Pgd),
            "ensemble" | "ensemble_pgd" => Ok(AttackMethod::EnsemblePgd),
            _ => Err(Error::parse(
                "attack method",
                format!("unknown method {s:?}"),
            )),
        }
    }
}

/// A loudspeaker/microphone pair of the replay grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeviceCombo {
    pub speaker: String,
    pub mic: String,
}

impl DeviceCombo {
    pub fn new(speaker: impl Into<String>, mic: impl Into<String>) -> Self {
        Self {
            speaker: speaker.into(),
            mic: mic.into(),
        }
    }

    /// Directory name in the dataset layout.
    pub fn dir_name(&self) -> String {
        format!("{}__{}", self.speaker, self.mic)
    }
}

impl fmt::Display for DeviceCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.speaker, self.mic)
    }
}

/// One adversarial sample scored by one victim model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackRecord {
    /// Resume key, see [`record_key`].
    pub key: String,
    pub trial: TrialPair,
    pub attack_method: AttackMethod,
    /// Table row: the surrogate for PGD, the held-out model for a
    /// leave-one-out ensemble.
    pub target: String,
    pub surrogates: Vec<String>,
    pub victim: String,
    /// `None` for the digital sample.
    pub device: Option<DeviceCombo>,
    /// Victim score of the clean test utterance against the enrollment.
    pub pre_score: f64,
    /// Victim score of the persisted sample against the enrollment.
    pub post_score: f64,
    pub threshold: f64,
    pub success: bool,
    pub seed: u64,
    /// Sample path relative to the output root.
    pub path: String,
}

impl AttackRecord {
    /// Success flag recomputed from the stored scores.
    pub fn recomputed_success(&self) -> bool {
        self.post_score >= self.threshold
    }

    pub fn is_white_box(&self) -> bool {
        self.surrogates.iter().any(|s| s == &self.victim)
    }
}

pub fn record_key(
    trial: &TrialPair,
    method: AttackMethod,
    surrogates: &[String],
    victim: &str,
    device: Option<&DeviceCombo>,
    seed: u64,
) -> String {
    let mut h = Sha256::new();
    for part in [
        trial.key().as_str(),
        method.as_str(),
        &surrogates.join(","),
        victim,
        &device
            .map(|d| d.to_string())
            .unwrap_or_else(|| "digital".into()),
        &seed.to_string(),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Percentage of successful records.
pub fn success_rate(records: &[AttackRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no attack records".into()));
    }
    let hits = records.iter().filter(|r| r.success).count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

pub fn append_records(path: &Path, records: &[AttackRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    f.write_all(buf.as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn write_records(path: &Path, records: &[AttackRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for r in records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Reads a JSONL record file. A missing file is an empty list; a torn last
/// line (from an interrupted append) is dropped.
pub fn read_records(path: &Path) -> Result<Vec<AttackRecord>> {
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<String> = std::io::BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => {
                tracing::warn!("dropping torn record line at end of {}", path.display());
            }
            Err(e) => {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("line {}: {e}", i + 1),
                ))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trials::TrialLabel;

    fn record(success: bool) -> AttackRecord {
        let trial = TrialPair::new(TrialLabel::Impostor, "a/1.wav", "b/2.wav").unwrap();
        AttackRecord {
            key: record_key(&trial, AttackMethod::Pgd, &["m".into()], "v", None, 1),
            trial,
            attack_method: AttackMethod::Pgd,
            target: "m".into(),
            surrogates: vec!["m".into()],
            victim: "v".into(),
            device: None,
            pre_score: 0.1,
            post_score: if success { 0.9 } else { 0.2 },
            threshold: 0.5,
            success,
            seed: 1,
            path: "digital/x.wav".into(),
        }
    }

    #[test]
    fn success_rate_counts() {
        assert!(success_rate(&[]).is_err());
        assert_eq!(success_rate(&vec![record(true); 3]).unwrap(), 100.0);
        assert_eq!(success_rate(&vec![record(false); 3]).unwrap(), 0.0);
        let mut rs = vec![record(true); 53];
        rs.extend(vec![record(false); 447]);
        let counted = rs.iter().filter(|r| r.recomputed_success()).count();
        assert_eq!(counted, 53);
        assert!((success_rate(&rs).unwrap() - 10.6).abs() < 1e-12);
    }

    #[test]
    fn key_depends_on_every_field() {
        let t = TrialPair::new(TrialLabel::Impostor, "a/1.wav", "b/2.wav").unwrap();
        let s = vec!["m".to_string()];
        let d = DeviceCombo::new("s", "m");
        let base = record_key(&t, AttackMethod::Pgd, &s, "v", None, 1);
        assert_ne!(
            base,
            record_key(&t, AttackMethod::EnsemblePgd, &s, "v", None, 1)
        );
        assert_ne!(
            base,
            record_key(&t, AttackMethod::Pgd, &["n".into()], "v", None, 1)
        );
        assert_ne!(base, record_key(&t, AttackMethod::Pgd, &s, "w", None, 1));
        assert_ne!(
            base,
            record_key(&t, AttackMethod::Pgd, &s, "v", Some(&d), 1)
        );
        assert_ne!(base, record_key(&t, AttackMethod::Pgd, &s, "v", None, 2));
        assert_eq!(base.len(), 64);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        append_records(&path, &[record(true), record(false)]).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"key\": \"abc");
        std::fs::write(&path, text).unwrap();
        assert_eq!(read_records(&path).unwrap().len(), 2);
        assert!(read_records(&dir.path().join("missing.jsonl"))
            .unwrap()
            .is_empty());
    }
}
