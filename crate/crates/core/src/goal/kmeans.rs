//! Endpoint clustering that builds the goal vocabulary.
//!
//! Each expert endpoint becomes a 4-vector (x, y, w cos θ, w sin θ); centers
//! are seeded with distance-squared-weighted sampling and refined by Lloyd
//! iterations. Cluster headings are recovered with atan2 over the averaged
//! cos/sin components, so they stay valid angles even though the mean of the
//! raw pair may fall inside the unit circle.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{GoalVocabulary, HEADING_WEIGHT};
use crate::scenario::GoalPoint;
use crate::{par, Error, Result};

const MAX_ITERS: usize = 50;
const REL_INERTIA_TOL: f64 = 1e-6;

type Feat = [f64; 4];

fn feature(g: &GoalPoint) -> Feat {
    [g.x, g.y, g.heading.cos() * HEADING_WEIGHT, g.heading.sin() * HEADING_WEIGHT]
}

fn dist2(a: &Feat, b: &Feat) -> f64 {
    (0..4).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Distance-squared-weighted seeding: the first center is uniform, later
/// ones are drawn proportional to squared distance from the nearest chosen
/// center, so coincident points are never re-picked while distinct ones
/// remain.
fn seed_centers(feats: &[Feat], k: usize, rng: &mut ChaCha8Rng) -> Vec<Feat> {
    let mut centers = Vec::with_capacity(k);
    centers.push(feats[rng.gen_range(0..feats.len())]);
    let mut d2: Vec<f64> = feats.iter().map(|f| dist2(f, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let r = rng.gen_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = feats.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > r {
                    pick = i;
                    break;
                }
            }
            feats[pick]
        } else {
            // all points coincide with some center; duplicate one
            feats[rng.gen_range(0..feats.len())]
        };
        for (i, f) in feats.iter().enumerate() {
            d2[i] = d2[i].min(dist2(f, &next));
        }
        centers.push(next);
    }
    centers
}

/// Lloyd iterations; returns the centers and the inertia after each
/// assignment (non-increasing).
pub(super) fn kmeans(feats: &[Feat], k: usize, seed: u64) -> (Vec<Feat>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(feats, k, &mut rng);
    let mut history = Vec::new();
    for _ in 0..MAX_ITERS {
        // assignment: nearest center, ties toward the lowest index
        let assign: Vec<(usize, f64)> = par::map_indexed(feats.len(), |i| {
            let mut best = 0;
            let mut best_d = dist2(&feats[i], &centers[0]);
            for (c, center) in centers.iter().enumerate().skip(1) {
                let d = dist2(&feats[i], center);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            (best, best_d)
        });
        let inertia: f64 = assign.iter().map(|(_, d)| d).sum();
        let converged = history
            .last()
            .is_some_and(|prev: &f64| (prev - inertia).abs() <= REL_INERTIA_TOL * prev.max(1e-12));
        history.push(inertia);
        if converged {
            break;
        }
        // update: mean of each cluster; empty clusters keep their center
        let mut sums = vec![[0.0; 4]; k];
        let mut counts = vec![0usize; k];
        for (i, (c, _)) in assign.iter().enumerate() {
            for j in 0..4 {
                sums[*c][j] += feats[i][j];
            }
            counts[*c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..4 {
                    centers[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
    }
    (centers, history)
}

/// Clusters expert endpoints into an `n`-point goal vocabulary.
pub fn build_vocabulary(endpoints: &[GoalPoint], n: usize, seed: u64) -> Result<GoalVocabulary> {
    build_vocabulary_traced(endpoints, n, seed).map(|(vocab, _)| vocab)
}

/// Like [`build_vocabulary`], but also returns the inertia after each
/// clustering iteration so callers can log convergence.
pub fn build_vocabulary_traced(
    endpoints: &[GoalPoint],
    n: usize,
    seed: u64,
) -> Result<(GoalVocabulary, Vec<f64>)> {
    if n < 2 {
        return Err(Error::config(format!("vocabulary size must be at least 2, got {n}")));
    }
    if endpoints.len() < n {
        return Err(Error::data(format!(
            "cannot build {n} clusters from {} endpoints",
            endpoints.len()
        )));
    }
    for (i, g) in endpoints.iter().enumerate() {
        if !(g.x.is_finite() && g.y.is_finite() && g.heading.is_finite()) {
            return Err(Error::data(format!("endpoint {i} is not finite")));
        }
    }
    let feats: Vec<Feat> = endpoints.iter().map(feature).collect();
    let (centers, history) = kmeans(&feats, n, seed);
    let points = centers
        .iter()
        .map(|c| GoalPoint { x: c[0], y: c[1], heading: c[3].atan2(c[2]) })
        .collect();
    let vocab = GoalVocabulary {
        points,
        seed,
        iterations: history.len(),
        inertia: *history.last().expect("at least one iteration"),
    };
    Ok((vocab, history))
}
