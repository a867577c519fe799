use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trials::{TrialLabel, TrialPair};

/// A trial with its verification score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub trial: TrialPair,
    pub score: f64,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    /// Fraction in [0, 1].
    pub eer: f64,
    /// Accept when score ≥ threshold.
    pub threshold: f64,
}

pub fn compute_eer(trials: &[ScoredTrial]) -> Result<EerResult> {
    let (genuine, impostor): (Vec<&ScoredTrial>, Vec<&ScoredTrial>) =
        trials.iter().partition(|t| t.label.is_genuine());
    let genuine: Vec<f64> = genuine.iter().map(|t| t.score).collect();
    let impostor: Vec<f64> = impostor.iter().map(|t| t.score).collect();
    eer_from_scores(&genuine, &impostor)
}

/// Equal error rate with acceptance `score ≥ θ`.
///
/// Operating points are taken at every unique score plus an accept-nothing
/// point just above the maximum; the crossing of the false-accept and
/// false-reject curves is linearly interpolated between the two adjacent
/// points that bracket it.
pub fn eer_from_scores(genuine: &[f64], impostor: &[f64]) -> Result<EerResult> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::SingleClass);
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(Error::InvalidWaveform("non-finite score".into()));
    }
    let mut gen = genuine.to_vec();
    let mut imp = impostor.to_vec();
    gen.sort_by(f64::total_cmp);
    imp.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = gen.iter().chain(&imp).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let top = *thresholds.last().expect("non-empty");
    thresholds.push(top + 1e-9 * top.abs().max(1.0));

    let (ng, ni) = (gen.len() as f64, imp.len() as f64);
    let rates = |theta: f64| -> (f64, f64) {
        let far = (imp.len() - imp.partition_point(|&s| s < theta)) as f64 / ni;
        let frr = gen.partition_point(|&s| s < theta) as f64 / ng;
        (far, frr)
    };

    let mut prev = (thresholds[0], rates(thresholds[0]));
    for &theta in &thresholds {
        let (far, frr) = rates(theta);
        let diff = far - frr;
        if diff == 0.0 {
            // the operating point holds on (previous score, theta]; report its midpoint
            let below = prev.0.min(theta);
            return Ok(EerResult {
                eer: far,
                threshold: 0.5 * (below + theta),
            });
        }
        if diff < 0.0 {
            let (theta_a, (far_a, frr_a)) = prev;
            let diff_a = far_a - frr_a;
            let t = diff_a / (diff_a - diff);
            let far_x = far_a + t * (far - far_a);
            let frr_x = frr_a + t * (frr - frr_a);
            return Ok(EerResult {
                eer: 0.5 * (far_x + frr_x),
                threshold: theta_a + t * (theta - theta_a),
            });
        }
        prev = (theta, (far, frr));
    }
    unreachable!("the accept-nothing point always has FAR 0 and FRR 1")
}
