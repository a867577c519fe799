use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::trials::{TrialLabel, TrialPair};

/// Splits `total` across `weights` in proportion, largest remainder first
/// (ties go to the earlier entry).
pub fn largest_remainder(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights
        .iter()
        .map(|&w| w as f64 * total as f64 / sum as f64)
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = total.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if counts[i] < weights[i] {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

/// Keeps `fraction` of the trials with the same enrollment-speaker
/// distribution. Per-speaker quotas use largest-remainder rounding of
/// `fraction × count`; inside a speaker the quota is split between genuine
/// and impostor trials the same way, and trials are drawn with a seeded
/// shuffle. The subset keeps the input order.
pub fn subsample_trials(trials: &[TrialPair], fraction: f64, seed: u64) -> Result<Vec<TrialPair>> {
    if trials.is_empty() {
        return Err(Error::EmptyInput("trial list is empty".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "subsample fraction {fraction} must be in (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(trials.to_vec());
    }
    let mut by_speaker: BTreeMap<&str, [Vec<usize>; 2]> = BTreeMap::new();
    for (i, t) in trials.iter().enumerate() {
        let spk = t.enroll_speaker().unwrap_or(&t.enroll);
        let slot = usize::from(t.label == TrialLabel::Impostor);
        by_speaker.entry(spk).or_default()[slot].push(i);
    }
    let sizes: Vec<usize> = by_speaker
        .values()
        .map(|g| g[0].len() + g[1].len())
        .collect();
    let total = (fraction * trials.len() as f64).round() as usize;
    let quotas = largest_remainder(&sizes, total);

    let mut keep = vec![false; trials.len()];
    for ((spk, groups), quota) in by_speaker.iter().zip(quotas) {
        let split = largest_remainder(&[groups[0].len(), groups[1].len()], quota);
        for (slot, (group, take)) in groups.iter().zip(split).enumerate() {
            let mut idx = group.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &["subsample", spk, &slot.to_string()],
            ));
            idx.shuffle(&mut rng);
            for &i in &idx[..take] {
                keep[i] = true;
            }
        }
    }
    Ok(trials
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(t, _)| t.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn synthetic_list(speakers: usize, per_speaker: usize, genuine_every: usize) -> Vec<TrialPair> {
        let mut out = Vec::new();
        for s in 0..speakers {
            for u in 0..per_speaker {
                let genuine = u % genuine_every == 0;
                let other = if genuine {
                    s
                } else {
                    (s + 1 + u % (speakers - 1)) % speakers
                };
                let label = if genuine {
                    TrialLabel::Genuine
                } else {
                    TrialLabel::Impostor
                };
                out.push(
                    TrialPair::new(
                        label,
                        format!("id{s:05}/e/{u:05}.wav"),
                        format!("id{other:05}/t/{u:05}.wav"),
                    )
                    .unwrap(),
                );
            }
        }
        out
    }

    fn genuine_share(trials: &[TrialPair]) -> f64 {
        100.0 * trials.iter().filter(|t| t.label.is_genuine()).count() as f64 / trials.len() as f64
    }

    #[test]
    fn full_fraction_is_identity() {
        let list = synthetic_list(5, 20, 3);
        assert_eq!(subsample_trials(&list, 1.0, 3).unwrap(), list);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            subsample_trials(&[], 0.25, 0),
            Err(Error::EmptyInput(_))
        ));
        let list = synthetic_list(2, 4, 2);
        assert!(subsample_trials(&list, 0.0, 0).is_err());
        assert!(subsample_trials(&list, 1.5, 0).is_err());
    }

    #[test]
    fn quarter_of_full_size_list() {
        // 41 speakers with uneven trial counts, 18,860 trials in total
        let mut list = Vec::new();
        let mut n = 0;
        for s in 0..41 {
            let count = if s < 40 {
                400 + s
            } else {
                18_860 - (0..40).map(|k| 400 + k).sum::<usize>()
            };
            for u in 0..count {
                let genuine = u % 2 == 0;
                let other = if genuine { s } else { (s + 1) % 41 };
                let label = if genuine {
                    TrialLabel::Genuine
                } else {
                    TrialLabel::Impostor
                };
                list.push(
                    TrialPair::new(
                        label,
                        format!("id{s:05}/e/{u:05}.wav"),
                        format!("id{other:05}/t/{n:05}.wav"),
                    )
                    .unwrap(),
                );
                n += 1;
            }
        }
        assert_eq!(list.len(), 18_860);
        let sub = subsample_trials(&list, 0.25, 1).unwrap();
        assert_eq!(sub.len(), 4_715);
        assert_eq!(sub, subsample_trials(&list, 0.25, 1).unwrap());
        assert_ne!(sub, subsample_trials(&list, 0.25, 2).unwrap());
        assert!((genuine_share(&sub) - genuine_share(&list)).abs() <= 2.0);
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[3, 3, 3], 4), vec![2, 1, 1]);
        assert_eq!(largest_remainder(&[10, 0, 5], 3), vec![2, 0, 1]);
        assert_eq!(largest_remainder(&[0, 0], 0), vec![0, 0]);
    }

    proptest! {
        #[test]
        fn proportions_follow_the_full_list(
            speakers in 2usize..9,
            per_speaker in 8usize..60,
            genuine_every in 2usize..6,
            fraction in 0.1f64..0.9,
            seed in any::<u64>(),
        ) {
            let list = synthetic_list(speakers, per_speaker, genuine_every);
            let sub = subsample_trials(&list, fraction, seed).unwrap();
            prop_assert_eq!(sub.len(), (fraction * list.len() as f64).round() as usize);
            // counting oracle: per-speaker counts within one trial of the exact quota
            let mut full: BTreeMap<String, usize> = BTreeMap::new();
            let mut kept: BTreeMap<String, usize> = BTreeMap::new();
            for t in &list { *full.entry(t.enroll_speaker().unwrap().to_string()).or_default() += 1; }
            for t in &sub { *kept.entry(t.enroll_speaker().unwrap().to_string()).or_default() += 1; }
            let scale = sub.len() as f64 / list.len() as f64;
            for (spk, n) in &full {
                let got = *kept.get(spk).unwrap_or(&0) as f64;
                prop_assert!((got - *n as f64 * scale).abs() < 1.0 + 1e-9, "{} {} {}", spk, got, n);
                let share_full = 100.0 * *n as f64 / list.len() as f64;
                let share_sub = 100.0 * got / sub.len() as f64;
                prop_assert!((share_full - share_sub).abs() <= 2.0 + 100.0 / sub.len() as f64);
            }
            // each speaker's label split is off by less than one trial
            let bound = 100.0 * speakers as f64 / sub.len() as f64 + 100.0 / list.len() as f64;
            prop_assert!((genuine_share(&sub) - genuine_share(&list)).abs() <= bound);
            // subset is an order-preserving subsequence
            let mut it = list.iter();
            for t in &sub { prop_assert!(it.any(|u| u == t)); }
        }
    }
}
