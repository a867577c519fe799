use super::pgd::{outcome, pgd_from};
use super::trace::{AttackTrace, Termination};
use super::{AttackConfig, Surrogate};
use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Round-robin PGD over `surrogates` in declared order.
///
/// Each round runs a full PGD pass against every surrogate in turn, always
/// projecting onto the ε-ball around the clean `x`. After a round the sample
/// is re-scored by every surrogate; the attack stops as soon as all of them
/// accept it, or after `cfg.max_ensemble_rounds` rounds.
pub fn ensemble_pgd_attack(
    surrogates: &[Surrogate<'_>],
    x: &Waveform,
    x_enroll: &Waveform,
    cfg: &AttackConfig,
) -> Result<(Waveform, AttackTrace)> {
    if surrogates.is_empty() {
        return Err(Error::EmptyModelList);
    }
    cfg.validate()?;
    let mut trace = AttackTrace::default();
    let mut adv = x.clone();
    for round in 1..=cfg.max_ensemble_rounds {
        for s in surrogates {
            adv = pgd_from(s, &adv, x, x_enroll, cfg, &mut trace)?;
        }
        trace.rounds = round;
        trace.outcomes = surrogates
            .iter()
            .map(|s| outcome(s, &adv, x_enroll))
            .collect::<Result<_>>()?;
        if trace.all_success() {
            trace.termination = Termination::AllSurrogatesAttacked;
            return Ok((adv, trace));
        }
    }
    trace.termination = Termination::MaxRoundsReached;
    Ok((adv, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asv::{cosine, embed, LinearEmbedder};

    fn wav(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 16_000, "w").unwrap()
    }

    fn model(id: &str, salt: usize) -> LinearEmbedder {
        let m = (0..4)
            .map(|r| {
                (0..32)
                    .map(|c| (((r + salt) * 13 + c * 7) % 17) as f64 / 8.0 - 1.0)
                    .collect()
            })
            .collect();
        LinearEmbedder::new(id, 16_000, m).unwrap()
    }

    #[test]
    fn empty_list_rejected() {
        let x = wav(vec![0.1; 32]);
        assert!(matches!(
            ensemble_pgd_attack(&[], &x, &x, &AttackConfig::default()),
            Err(Error::EmptyModelList)
        ));
    }

    #[test]
    fn single_model_ensemble_is_repeated_pgd_with_early_exit() {
        let m = model("a", 0);
        let x = wav((0..32).map(|i| 0.2 * (i as f64 * 0.3).sin()).collect());
        let e = wav((0..32)
            .map(|i| 0.2 * (i as f64 * 0.7 + 0.5).cos())
            .collect());
        let cfg = AttackConfig {
            steps: 2,
            alpha: 0.002,
            epsilon: 0.05,
            ..AttackConfig::default()
        };
        let s = Surrogate::new(&m, 0.9);
        let (adv, trace) = ensemble_pgd_attack(&[s], &x, &e, &cfg).unwrap();

        let mut manual = x.clone();
        let mut scratch = AttackTrace::default();
        let mut rounds = 0;
        for _ in 0..cfg.max_ensemble_rounds {
            manual = pgd_from(&s, &manual, &x, &e, &cfg, &mut scratch).unwrap();
            rounds += 1;
            let sc = cosine(
                embed(&m, &manual).unwrap().vector(),
                embed(&m, &e).unwrap().vector(),
            )
            .unwrap();
            if sc >= 0.9 {
                break;
            }
        }
        assert_eq!(adv.samples(), manual.samples());
        assert_eq!(trace.rounds, rounds);
        assert_eq!(trace.losses, scratch.losses);
    }

    #[test]
    fn budget_is_relative_to_original_across_rounds() {
        let (a, b, c) = (model("a", 0), model("b", 1), model("c", 2));
        let x = wav((0..32).map(|i| 0.3 * (i as f64 * 0.5).sin()).collect());
        let e = wav((0..32).map(|i| 0.3 * (i as f64 * 0.9).cos()).collect());
        let cfg = AttackConfig {
            max_ensemble_rounds: 4,
            epsilon: 0.03,
            ..AttackConfig::default()
        };
        let s = [
            Surrogate::new(&a, 0.99),
            Surrogate::new(&b, 0.99),
            Surrogate::new(&c, 0.99),
        ];
        let (adv, trace) = ensemble_pgd_attack(&s, &x, &e, &cfg).unwrap();
        assert!(trace.max_linf() <= cfg.epsilon);
        for (v, o) in adv.samples().iter().zip(x.samples()) {
            assert!((v - o).abs() <= cfg.epsilon);
        }
        assert_eq!(trace.outcomes.len(), 3);
        assert!(trace.losses.len() == trace.rounds * 3 * cfg.steps);
    }
}
