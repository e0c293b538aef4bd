//! Goal-point vocabulary, target scores, scorer network, and selection.
//!
//! The planner's long-horizon intent is a goal point (x, y, heading) chosen
//! from a fixed vocabulary clustered over expert trajectory endpoints. Each
//! vocabulary point gets two scores: a distance score (softmax of negative
//! endpoint distance — how close it is to where the expert actually went)
//! and a drivable-area-compliance score (can a vehicle box sit there
//! entirely inside the drivable area). A learned scorer predicts both from
//! the encoded scene; the selected goal maximizes a weighted log sum.

mod file;
mod kmeans;
mod scorer;

pub use file::{load_vocabulary, save_vocabulary, vocabulary_hash, VOCAB_VERSION};
pub use kmeans::{build_vocabulary, build_vocabulary_traced};
pub use scorer::{score_goals, score_goals_graph, GoalScorerIds, GoalScorerSpec};

use serde::{Deserialize, Serialize};

use crate::geom::{self, P2};
use crate::nn::{Id, Tape};
use crate::scenario::{footprint_corners, GoalPoint, Pose};
use crate::{par, Error, Result};

/// Meters-per-radian equivalence used when clustering headings as
/// (cos θ, sin θ) alongside positions.
pub const HEADING_WEIGHT: f64 = 1.0;
/// Lower clamp applied inside every log so scores stay finite.
pub const EPS_CLAMP: f64 = 1e-6;
/// Default inference weight on the distance-score term.
pub const DEFAULT_W1: f64 = 1.0;
/// Default inference weight on the compliance-score term.
pub const DEFAULT_W2: f64 = 0.1;
/// Default training weight on the distance cross-entropy.
pub const DEFAULT_W4: f64 = 1.0;
/// Default training weight on the compliance binary cross-entropy.
pub const DEFAULT_W5: f64 = 0.005;

/// Fixed set of candidate goal points plus the clustering metadata that
/// produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalVocabulary {
    pub points: Vec<GoalPoint>,
    pub seed: u64,
    pub iterations: usize,
    pub inertia: f64,
}

impl GoalVocabulary {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::data(format!(
                "vocabulary needs at least 2 points, has {}",
                self.points.len()
            )));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.heading.is_finite()) {
                return Err(Error::data(format!("vocabulary point {i} is not finite")));
            }
        }
        Ok(())
    }
}

/// Per-vocabulary-point scores: `dis` on the simplex, `dac` in [0, 1], and
/// their weighted-log combination `final_`.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalScoreSet {
    pub dis: Vec<f64>,
    pub dac: Vec<f64>,
    pub final_: Vec<f64>,
}

/// Softmax of negative Euclidean endpoint distance over (x, y).
pub fn target_distance_scores(vocab: &GoalVocabulary, g_gt: &GoalPoint) -> Result<Vec<f64>> {
    if vocab.points.is_empty() {
        return Err(Error::data("distance scores need a nonempty vocabulary"));
    }
    let gt = P2 { x: g_gt.x, y: g_gt.y };
    let neg_dist: Vec<f64> =
        vocab.points.iter().map(|p| -P2 { x: p.x, y: p.y }.dist(gt)).collect();
    let max = neg_dist.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = neg_dist.iter().map(|d| (d - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.iter().map(|e| e / z).collect())
}

/// 1 for each vocabulary point where a vehicle box of the given half-extents,
/// placed at the point's pose, has all four corners strictly inside the
/// drivable area; else 0.
pub fn target_dac_scores(
    vocab: &GoalVocabulary,
    drivable: &[P2],
    half_len: f64,
    half_wid: f64,
) -> Result<Vec<f64>> {
    geom::validate_polygon(drivable)?;
    Ok(par::map_indexed(vocab.points.len(), |i| {
        let g = vocab.points[i];
        let pose = Pose { x: g.x, y: g.y, heading: g.heading };
        let corners = footprint_corners(pose, half_len, half_wid);
        let ok = corners.iter().all(|&c| geom::point_in_polygon_unchecked(c, drivable));
        if ok {
            1.0
        } else {
            0.0
        }
    }))
}

/// Weighted log combination of the two scores, both clamped below at
/// `eps_clamp`, plus the argmax (ties broken toward the lowest index).
pub fn final_scores(
    dis: &[f64],
    dac: &[f64],
    w1: f64,
    w2: f64,
    eps_clamp: f64,
) -> Result<(Vec<f64>, usize)> {
    if dis.is_empty() || dis.len() != dac.len() {
        return Err(Error::shape(format!(
            "final_scores: got {} dis and {} dac entries",
            dis.len(),
            dac.len()
        )));
    }
    if !(w1 >= 0.0 && w2 >= 0.0 && eps_clamp > 0.0) {
        return Err(Error::config("final_scores: weights must be >= 0 and eps_clamp > 0"));
    }
    let scores: Vec<f64> = dis
        .iter()
        .zip(dac)
        .map(|(d, a)| w1 * d.max(eps_clamp).ln() + w2 * a.max(eps_clamp).ln())
        .collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok((scores, best))
}

/// Training loss on the tape: `w4 * CE(dis) + w5 * BCE(dac)`, the latter
/// averaged over vocabulary points.
pub fn goal_losses(
    tape: &mut Tape,
    dis_pred: Id,
    dac_pred: Id,
    target_dis: &[f64],
    target_dac: &[f64],
    w4: f64,
    w5: f64,
) -> Result<Id> {
    let ce = tape.cross_entropy_from_probs(dis_pred, target_dis)?;
    let bce = tape.bce_mean(dac_pred, target_dac)?;
    let a = tape.scale(ce, w4);
    let b = tape.scale(bce, w5);
    tape.add(a, b)
}

#[cfg(test)]
pub(crate) fn vocab_from_points(points: Vec<GoalPoint>) -> GoalVocabulary {
    GoalVocabulary { points, seed: 0, iterations: 0, inertia: 0.0 }
}
