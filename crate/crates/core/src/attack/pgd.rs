use super::trace::{AttackTrace, SurrogateOutcome, Termination};
use super::{AttackConfig, Surrogate};
use crate::asv::{cosine, embed, loss_and_gradient};
use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Clamps `x_adv` into `[x_orig − ε, x_orig + ε] ∩ [-1, 1]` elementwise.
pub fn project_linf(x_adv: &Waveform, x_orig: &Waveform, epsilon: f64) -> Result<Waveform> {
    if x_adv.len() != x_orig.len() {
        return Err(Error::LengthMismatch {
            left: x_adv.len(),
            right: x_orig.len(),
        });
    }
    let samples = x_adv
        .samples()
        .iter()
        .zip(x_orig.samples())
        .map(|(&v, &o)| project_sample(v, o, epsilon))
        .collect();
    Waveform::new(samples, x_adv.sample_rate(), x_adv.id())
}

fn project_sample(v: f64, o: f64, epsilon: f64) -> f64 {
    let lo = (o - epsilon).max(-1.0);
    let hi = (o + epsilon).min(1.0);
    let mut p = v.clamp(lo, hi);
    // o ± ε is rounded; walk back until the difference itself is within ε
    while (p - o).abs() > epsilon {
        p = if p > o { p.next_down() } else { p.next_up() };
    }
    p
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Runs `cfg.steps` signed-gradient ascent steps on cos(embed(x), embed(x_enroll))
/// starting from `start`, projecting onto the ε-ball around `original` after
/// every step. Appends per-iteration losses and distances to `trace`.
pub fn pgd_from(
    target: &Surrogate<'_>,
    start: &Waveform,
    original: &Waveform,
    x_enroll: &Waveform,
    cfg: &AttackConfig,
    trace: &mut AttackTrace,
) -> Result<Waveform> {
    cfg.validate()?;
    if start.len() != original.len() {
        return Err(Error::LengthMismatch {
            left: start.len(),
            right: original.len(),
        });
    }
    let model = target.model;
    let enroll_raw = embed(model, x_enroll)?;
    let mut current = start.samples().to_vec();
    for _ in 0..cfg.steps {
        let wav = Waveform::new(current, start.sample_rate(), start.id())?;
        let (loss, grad) = loss_and_gradient(model, &wav, enroll_raw.vector())?;
        current = wav.into_samples();
        for ((v, g), &o) in current.iter_mut().zip(&grad).zip(original.samples()) {
            let step = if *g > 0.0 {
                cfg.alpha
            } else if *g < 0.0 {
                -cfg.alpha
            } else {
                0.0
            };
            *v = project_sample(*v + step, o, cfg.epsilon);
        }
        trace.losses.push(loss);
        trace.linf.push(linf(&current, original.samples()));
        trace.models.push(model.model_id().to_string());
    }
    Waveform::new(current, start.sample_rate(), start.id())
}

pub(crate) fn outcome(
    target: &Surrogate<'_>,
    x: &Waveform,
    x_enroll: &Waveform,
) -> Result<SurrogateOutcome> {
    let a = embed(target.model, x)?;
    let b = embed(target.model, x_enroll)?;
    let score = cosine(a.vector(), b.vector())?;
    Ok(SurrogateOutcome {
        model_id: target.model.model_id().to_string(),
        score,
        threshold: target.threshold,
        success: score >= target.threshold,
    })
}

/// Single-surrogate PGD; runs exactly `cfg.steps` iterations.
pub fn pgd_attack(
    target: &Surrogate<'_>,
    x: &Waveform,
    x_enroll: &Waveform,
    cfg: &AttackConfig,
) -> Result<(Waveform, AttackTrace)> {
    let mut trace = AttackTrace::default();
    let adv = pgd_from(target, x, x, x_enroll, cfg, &mut trace)?;
    trace.rounds = 1;
    trace.termination = Termination::StepsExhausted;
    trace.outcomes.push(outcome(target, &adv, x_enroll)?);
    Ok((adv, trace))
}
