use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AttackConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Plain PGD ran its fixed number of steps.
    #[default]
    StepsExhausted,
    /// Ensemble stopped because every surrogate accepts the sample.
    AllSurrogatesAttacked,
    /// Ensemble hit the round cap first.
    MaxRoundsReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateOutcome {
    pub model_id: String,
    pub score: f64,
    pub threshold: f64,
    pub success: bool,
}

/// Per-iteration diagnostics of one attack.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttackTrace {
    /// Cosine loss before each update.
    pub losses: Vec<f64>,
    /// L∞ distance from the clean input after each update.
    pub linf: Vec<f64>,
    /// Surrogate that produced each iteration's gradient.
    pub models: Vec<String>,
    pub outcomes: Vec<SurrogateOutcome>,
    pub rounds: usize,
    pub termination: Termination,
}

impl AttackTrace {
    pub fn max_linf(&self) -> f64 {
        self.linf.iter().copied().fold(0.0, f64::max)
    }

    pub fn all_success(&self) -> bool {
        !self.outcomes.is_empty() && self.outcomes.iter().all(|o| o.success)
    }
}

/// One persisted trace line: config echo plus the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trial: String,
    pub method: String,
    pub surrogates: Vec<String>,
    pub config: AttackConfig,
    pub trace: AttackTrace,
}

pub fn write_trace_records(path: &Path, records: &[TraceRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace_records(path: &Path) -> Result<Vec<TraceRecord>> {
    if !path.exists() {
        return Err(Error::MissingResource(path.to_path_buf()));
    }
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
