use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::DetectorModel;
use crate::asv::eer_from_scores;
use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionLabel {
    Bonafide,
    Spoof,
}

impl DetectionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectionLabel::Bonafide => "bonafide",
            DetectionLabel::Spoof => "spoof",
        }
    }
}

impl FromStr for DetectionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" => Ok(DetectionLabel::Bonafide),
            "spoof" => Ok(DetectionLabel::Spoof),
            _ => Err(Error::parse("score file", format!("unknown label {s:?}"))),
        }
    }
}

/// One line of a detection score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub id: String,
    pub score: f64,
    pub label: DetectionLabel,
}

/// Writes `id score label` lines; ids must not contain whitespace.
pub fn write_score_file(path: &Path, entries: &[ScoreEntry]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        if e.id.is_empty() || e.id.contains(char::is_whitespace) {
            return Err(Error::parse(
                "score file",
                format!("id {:?} is empty or has whitespace", e.id),
            ));
        }
        writeln!(out, "{} {:.17e} {}", e.id, e.score, e.label.as_str())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_score_file(path: &Path) -> Result<Vec<ScoreEntry>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingResource(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut entries = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, score, label] = fields[..] else {
            return Err(Error::parse(
                "score file",
                format!("line {}: expected `id score label`", n + 1),
            ));
        };
        let score: f64 = score.parse().map_err(|_| {
            Error::parse("score file", format!("line {}: bad score {score:?}", n + 1))
        })?;
        entries.push(ScoreEntry {
            id: id.to_string(),
            score,
            label: label.parse()?,
        });
    }
    Ok(entries)
}

/// EER in percent from score entries, bonafide as the accepted class.
pub fn eer_from_entries(entries: &[ScoreEntry]) -> Result<f64> {
    let (bona, spoof): (Vec<&ScoreEntry>, Vec<&ScoreEntry>) = entries
        .iter()
        .partition(|e| e.label == DetectionLabel::Bonafide);
    let b: Vec<f64> = bona.iter().map(|e| e.score).collect();
    let s: Vec<f64> = spoof.iter().map(|e| e.score).collect();
    Ok(100.0 * eer_from_scores(&b, &s)?.eer)
}

/// One row of the detection table: per-device EER cells and the pooled one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub row: String,
    /// What the spoof class of the test set is, e.g. "OTA" or "Digital".
    pub spoof_source: String,
    /// Attack method, or "NA" for replayed bonafide audio.
    pub attack: String,
    /// Device combination → EER in percent; empty for digital rows.
    pub cells: BTreeMap<String, f64>,
    pub overall: f64,
}

/// Scores test audio and evaluates one row. Spoof items carry their device
/// combination (`None` for digital audio); bonafide audio is pooled with
/// every cell.
pub fn eval_detection(
    detector: &DetectorModel,
    bonafide_test: &[Waveform],
    spoof_test: &[(Option<String>, Waveform)],
    row: &str,
    spoof_source: &str,
    attack: &str,
) -> Result<DetectionRow> {
    let bona = detector.score_batch(bonafide_test)?;
    let spoof_audio: Vec<Waveform> = spoof_test.iter().map(|(_, w)| w.clone()).collect();
    let spoof_scores = detector.score_batch(&spoof_audio)?;
    let spoof: Vec<(Option<String>, f64)> = spoof_test
        .iter()
        .map(|(d, _)| d.clone())
        .zip(spoof_scores)
        .collect();
    detection_row(&bona, &spoof, row, spoof_source, attack)
}

pub fn detection_row(
    bonafide: &[f64],
    spoof: &[(Option<String>, f64)],
    row: &str,
    spoof_source: &str,
    attack: &str,
) -> Result<DetectionRow> {
    if bonafide.is_empty() || spoof.is_empty() {
        return Err(Error::EmptyInput(
            "detection needs bonafide and spoof test audio".into(),
        ));
    }
    let mut by_device: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (device, score) in spoof {
        if let Some(d) = device {
            by_device.entry(d.clone()).or_default().push(*score);
        }
    }
    let mut cells = BTreeMap::new();
    for (device, scores) in by_device {
        cells.insert(device, 100.0 * eer_from_scores(bonafide, &scores)?.eer);
    }
    let all: Vec<f64> = spoof.iter().map(|(_, s)| *s).collect();
    Ok(DetectionRow {
        row: row.to_string(),
        spoof_source: spoof_source.to_string(),
        attack: attack.to_string(),
        cells,
        overall: 100.0 * eer_from_scores(bonafide, &all)?.eer,
    })
}

/// Detection EERs laid out as rows × (device columns + Overall).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTable {
    pub columns: Vec<String>,
    pub rows: Vec<DetectionRow>,
}

impl DetectionTable {
    pub fn row(&self, name: &str) -> Option<&DetectionRow> {
        self.rows.iter().find(|r| r.row == name)
    }

    pub fn render(&self) -> String {
        let mut header = vec!["Row".to_string(), "Spoof".to_string(), "Attack".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("Overall".into());
        let mut lines: Vec<Vec<String>> = vec![header];
        for r in &self.rows {
            let mut line = vec![r.row.clone(), r.spoof_source.clone(), r.attack.clone()];
            for c in &self.columns {
                line.push(
                    r.cells
                        .get(c)
                        .map_or_else(|| "N/A".to_string(), |v| format!("{v:.2}")),
                );
            }
            line.push(format!("{:.2}", r.overall));
            lines.push(line);
        }
        render_aligned(&lines)
    }
}

/// Left-aligned columns separated by two spaces.
pub fn render_aligned(lines: &[Vec<String>]) -> String {
    let cols = lines.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            lines
                .iter()
                .filter_map(|l| l.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for l in lines {
        let cells: Vec<String> = l
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{s:<w$}", w = widths[i]))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
