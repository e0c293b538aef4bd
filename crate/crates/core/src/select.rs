//! Candidate-trajectory selection and the shadow-trajectory fallback.
//!
//! Each candidate is scored by `f = -l1 * phi(goal distance) + l2 *
//! phi(progress)`, where `phi` rescales each quantity to [0, 1] across the
//! candidate set (min-max). The goal-independent shadow trajectory replaces
//! the goal-conditioned pick when the two disagree badly — a cheap guard
//! against a mispredicted goal.

use serde::{Deserialize, Serialize};

use crate::geom::{Polyline, P2};
use crate::scenario::{GoalPoint, Trajectory};
use crate::{Error, Result};

/// Default weight on the goal-distance term.
pub const DEFAULT_LAMBDA1: f64 = 1.0;
/// Default weight on the progress term.
pub const DEFAULT_LAMBDA2: f64 = 1.0;
/// Default mean-waypoint-deviation threshold for the shadow fallback.
pub const DEFAULT_SHADOW_THRESHOLD_M: f64 = 2.0;

/// Per-candidate selection quantities: raw endpoint-to-goal distance and
/// centerline progress (meters), their set-normalized values, and the
/// combined score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub f_dis: f64,
    pub f_pg: f64,
    pub phi_dis: f64,
    pub phi_pg: f64,
    pub f: f64,
}

/// Min-max rescaling to [0, 1]; an all-equal set maps to 0.5.
pub fn minimax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::data("minimax_normalize needs at least one value"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("minimax_normalize: non-finite value"));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|v| (v - min) / (max - min)).collect())
}

/// Arc-length progress of a trajectory along the route centerline: the
/// projection of its endpoint. The centerline starts at the ego origin, so
/// this is distance traveled along the route.
pub fn progress_along(centerline: &[P2], traj: &Trajectory) -> Result<f64> {
    let line = Polyline::new(centerline.to_vec())?;
    Ok(line.project_arclen(traj.endpoint().position()))
}

/// Scores every candidate against the goal and centerline; returns the
/// argmax index (ties toward the lowest index) and all scores.
pub fn score_candidates(
    candidates: &[Trajectory],
    centerline: &[P2],
    goal: &GoalPoint,
    lambda1: f64,
    lambda2: f64,
) -> Result<(usize, Vec<CandidateScore>)> {
    if candidates.is_empty() {
        return Err(Error::data("score_candidates needs at least one candidate"));
    }
    let g = P2 { x: goal.x, y: goal.y };
    let f_dis: Vec<f64> =
        candidates.iter().map(|c| c.endpoint().position().dist(g)).collect();
    let f_pg = candidates
        .iter()
        .map(|c| progress_along(centerline, c))
        .collect::<Result<Vec<f64>>>()?;
    let phi_dis = minimax_normalize(&f_dis)?;
    let phi_pg = minimax_normalize(&f_pg)?;
    let scores: Vec<CandidateScore> = (0..candidates.len())
        .map(|i| CandidateScore {
            f_dis: f_dis[i],
            f_pg: f_pg[i],
            phi_dis: phi_dis[i],
            phi_pg: phi_pg[i],
            f: -lambda1 * phi_dis[i] + lambda2 * phi_pg[i],
        })
        .collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.f > scores[best].f {
            best = i;
        }
    }
    Ok((best, scores))
}

/// Falls back to the goal-independent shadow when the goal-conditioned main
/// trajectory deviates from it by strictly more than `threshold_m` mean
/// per-waypoint distance. Returns the chosen trajectory and whether the
/// shadow was used.
pub fn shadow_fallback<'a>(
    main: &'a Trajectory,
    shadow: &'a Trajectory,
    threshold_m: f64,
) -> (&'a Trajectory, bool) {
    if main.mean_deviation(shadow) > threshold_m {
        (shadow, true)
    } else {
        (main, false)
    }
}

/// Index of the most central candidate: the one minimizing the summed mean
/// waypoint deviation to all others. Goal-free selection for the
/// unconditioned baseline. Ties go to the lowest index.
pub fn medoid_index(candidates: &[Trajectory]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::data("medoid of an empty candidate set"));
    }
    let mut best = 0;
    let mut best_sum = f64::INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let sum: f64 = candidates.iter().map(|o| c.mean_deviation(o)).sum();
        if sum < best_sum {
            best_sum = sum;
            best = i;
        }
    }
    Ok(best)
}
