//! Verification trial lists in the `label enroll test` line format.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialLabel {
    Genuine,
    Impostor,
}

impl TrialLabel {
    pub fn is_genuine(self) -> bool {
        matches!(self, TrialLabel::Genuine)
    }
}

/// One verification trial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrialPair {
    pub label: TrialLabel,
    pub enroll: String,
    pub test: String,
}

impl TrialPair {
    pub fn new(
        label: TrialLabel,
        enroll: impl Into<String>,
        test: impl Into<String>,
    ) -> Result<Self> {
        let trial = Self {
            label,
            enroll: enroll.into(),
            test: test.into(),
        };
        trial.validate()?;
        Ok(trial)
    }

    /// Speaker id is the first path component (`id10270/x6uYqmx31kE/00001.wav`).
    pub fn enroll_speaker(&self) -> Option<&str> {
        speaker_of(&self.enroll)
    }

    pub fn test_speaker(&self) -> Option<&str> {
        speaker_of(&self.test)
    }

    /// Label must agree with speaker-id equality whenever both ids are known.
    pub fn validate(&self) -> Result<()> {
        if let (Some(a), Some(b)) = (self.enroll_speaker(), self.test_speaker()) {
            let same = a == b;
            if same != self.label.is_genuine() {
                return Err(Error::parse(
                    "trial",
                    format!(
                        "label {:?} inconsistent with speakers {a} / {b}",
                        self.label
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Stable identifier used in record keys and file names.
    pub fn key(&self) -> String {
        format!(
            "{} {} {}",
            u8::from(self.label.is_genuine()),
            self.enroll,
            self.test
        )
    }
}

fn speaker_of(path: &str) -> Option<&str> {
    let mut parts = path.split('/');
    let first = parts.next()?;
    parts.next().map(|_| first)
}

impl fmt::Display for TrialPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}",
            u8::from(self.label.is_genuine()),
            self.enroll,
            self.test
        )
    }
}

impl FromStr for TrialPair {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [label, enroll, test] = fields.as_slice() else {
            return Err(Error::parse(
                "trial line",
                format!("expected 3 fields: {line:?}"),
            ));
        };
        let label = match *label {
            "1" => TrialLabel::Genuine,
            "0" => TrialLabel::Impostor,
            other => return Err(Error::parse("trial label", format!("{other:?} is not 0/1"))),
        };
        TrialPair::new(label, *enroll, *test)
    }
}

pub fn parse_trial_list(text: &str) -> Result<Vec<TrialPair>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(str::parse)
        .collect()
}

pub fn format_trial_list(trials: &[TrialPair]) -> String {
    let mut out = String::new();
    for t in trials {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}

/// Builds a trial list over `utterances` (speaker id as first path
/// component): every utterance enrolls `genuine_per_enroll` same-speaker
/// tests and `impostors_per_enroll` other-speaker tests, drawn with a
/// seeded shuffle.
pub fn synthetic_trial_list(
    utterances: &[String],
    genuine_per_enroll: usize,
    impostors_per_enroll: usize,
    seed: u64,
) -> Result<Vec<TrialPair>> {
    if utterances.is_empty() {
        return Err(Error::EmptyInput("no utterances for the trial list".into()));
    }
    let speakers: Vec<&str> = utterances
        .iter()
        .map(|u| {
            speaker_of(u)
                .ok_or_else(|| Error::parse("utterance", format!("no speaker id in {u:?}")))
        })
        .collect::<Result<_>>()?;
    let mut out =
        Vec::with_capacity(utterances.len() * (genuine_per_enroll + impostors_per_enroll));
    for (i, enroll) in utterances.iter().enumerate() {
        for (label, take) in [
            (TrialLabel::Genuine, genuine_per_enroll),
            (TrialLabel::Impostor, impostors_per_enroll),
        ] {
            let mut pool: Vec<&String> = utterances
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i && (speakers[j] == speakers[i]) == label.is_genuine())
                .map(|(_, u)| u)
                .collect();
            if pool.len() < take {
                return Err(Error::Config(format!(
                    "{enroll}: {} {label:?} candidates, need {take}",
                    pool.len()
                )));
            }
            let tag = if label.is_genuine() {
                "genuine"
            } else {
                "impostor"
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["trials", enroll, tag]));
            pool.shuffle(&mut rng);
            for test in &pool[..take] {
                out.push(TrialPair::new(label, enroll.clone(), (*test).clone())?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_voxceleb_style_lines() {
        let text = "1 id10270/x6uYqmx31kE/00001.wav id10270/8jEAjG6SegY/00008.wav\n\
                    0 id10270/x6uYqmx31kE/00001.wav id10300/ize_eiCFEg0/00003.wav\n";
        let trials = parse_trial_list(text).unwrap();
        assert_eq!(trials.len(), 2);
        assert_eq!(trials[0].label, TrialLabel::Genuine);
        assert_eq!(trials[1].test_speaker(), Some("id10300"));
        assert_eq!(format_trial_list(&trials), text);
    }

    #[test]
    fn rejects_inconsistent_label() {
        assert!("1 spk1/a.wav spk2/b.wav".parse::<TrialPair>().is_err());
        assert!("0 spk1/a.wav spk1/b.wav".parse::<TrialPair>().is_err());
        assert!("2 a b".parse::<TrialPair>().is_err());
        assert!("1 a".parse::<TrialPair>().is_err());
        // no speaker ids: nothing to check
        assert!("0 a.wav b.wav".parse::<TrialPair>().is_ok());
    }

    #[test]
    fn synthetic_list_counts() {
        let utts: Vec<String> = (0..4)
            .flat_map(|s| (0..3).map(move |u| format!("spk{s:02}/utt{u:03}.wav")))
            .collect();
        let list = synthetic_trial_list(&utts, 2, 5, 9).unwrap();
        assert_eq!(list.len(), 12 * 7);
        assert_eq!(list.iter().filter(|t| t.label.is_genuine()).count(), 24);
        assert!(list
            .iter()
            .all(|t| t.enroll != t.test && t.validate().is_ok()));
        assert_eq!(list, synthetic_trial_list(&utts, 2, 5, 9).unwrap());
        assert!(synthetic_trial_list(&utts, 3, 0, 9).is_err());
        assert!(synthetic_trial_list(&utts, 0, 10, 9).is_err());
    }
}
