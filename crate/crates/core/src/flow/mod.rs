//! Rectified-flow trajectory generation.
//!
//! Training regresses the straight-line velocity between a Gaussian draw and
//! the normalized expert trajectory: with `x_0 ~ N(0, sigma^2 I)` and
//! `t ~ U[0,1]`, the interpolant is `x_t = (1-t) x_0 + t tau` and the
//! regression target is the constant velocity `v = tau - x_0` (L1 loss).
//! Sampling integrates the learned velocity field from fresh noise with an
//! explicit Euler scheme over a warped (non-uniform) timestep grid;
//! candidates are drawn in parallel from independent noise streams.

mod net;
mod record;
mod sampler;

pub use net::{condition_mask, predict_velocity, Conditioning, FlowNetIds, FlowNetSpec};
pub use record::{load_candidates, save_candidates, CandidateSet, CANDIDATES_VERSION};
pub use sampler::{integrate, sample_trajectories};

use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{Id, ParamStore, Tape, Tensor};
use crate::scenario::Trajectory;
use crate::{Error, Result};

/// Flattened trajectory dimensionality: 8 waypoints x (x, y, heading).
pub const FLAT_DIM: usize = 24;
/// Lower bound applied to per-component standard deviations.
pub const STD_FLOOR: f64 = 1e-6;
/// Default noise scale for `x_0`.
pub const DEFAULT_SIGMA: f64 = 0.1;
/// Default timestep-warp shift (1.0 = uniform grid).
pub const DEFAULT_SHIFT: f64 = 3.0;
/// Default probability of masking each maskable condition during training.
pub const DEFAULT_P_MASK: f64 = 0.1;

/// Per-component z-score statistics over flattened expert trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Trajectory expressed in z-scored units.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedTrajectory {
    pub values: [f64; FLAT_DIM],
}

/// A point on the noise-to-trajectory path: position `x_t` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub x_t: [f64; FLAT_DIM],
    pub t: f64,
}

impl TrajStats {
    /// Zero mean, unit std: normalization is the identity.
    pub fn identity() -> TrajStats {
        TrajStats { mean: vec![0.0; FLAT_DIM], std: vec![1.0; FLAT_DIM] }
    }

    /// Population mean/std per flattened component, std floored at
    /// [`STD_FLOOR`].
    pub fn from_trajectories(trajectories: &[Trajectory]) -> Result<TrajStats> {
        if trajectories.is_empty() {
            return Err(Error::data("trajectory statistics need at least one trajectory"));
        }
        let n = trajectories.len() as f64;
        let mut mean = vec![0.0; FLAT_DIM];
        for tr in trajectories {
            for (m, v) in mean.iter_mut().zip(tr.flatten()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; FLAT_DIM];
        for tr in trajectories {
            for (s, (v, m)) in var.iter_mut().zip(tr.flatten().iter().zip(&mean)) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(TrajStats { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != FLAT_DIM || self.std.len() != FLAT_DIM {
            return Err(Error::shape(format!(
                "trajectory statistics want {FLAT_DIM} components, got {} and {}",
                self.mean.len(),
                self.std.len()
            )));
        }
        let finite = self.mean.iter().chain(&self.std).all(|v| v.is_finite());
        if !finite || self.std.iter().any(|s| *s <= 0.0) {
            return Err(Error::data("trajectory statistics must be finite with positive std"));
        }
        Ok(())
    }

    pub fn normalize(&self, tau: &Trajectory) -> NormalizedTrajectory {
        let mut values = tau.flatten();
        for (v, (m, s)) in values.iter_mut().zip(self.mean.iter().zip(&self.std)) {
            *v = (*v - m) / s;
        }
        NormalizedTrajectory { values }
    }

    pub fn denormalize(&self, norm: &NormalizedTrajectory) -> Trajectory {
        let mut values = norm.values;
        for (v, (m, s)) in values.iter_mut().zip(self.mean.iter().zip(&self.std)) {
            *v = *v * s + m;
        }
        Trajectory::from_flat(&values).expect("FLAT_DIM values")
    }

    /// Persists into the parameter store (upsert), so checkpoints carry it.
    pub fn write_to_store(&self, store: &mut ParamStore) -> Result<()> {
        self.validate()?;
        store.upsert("stats.traj_mean", Tensor::from_vec(&[FLAT_DIM], self.mean.clone())?);
        store.upsert("stats.traj_std", Tensor::from_vec(&[FLAT_DIM], self.std.clone())?);
        Ok(())
    }

    /// Errors when the store has no statistics.
    pub fn read_from_store(store: &ParamStore) -> Result<TrajStats> {
        let stats = TrajStats {
            mean: store.get("stats.traj_mean")?.data.clone(),
            std: store.get("stats.traj_std")?.data.clone(),
        };
        stats.validate()?;
        Ok(stats)
    }
}

/// Draws one training tuple `(x_t, t, v_t)` with `t ~ U[0,1]` and
/// `x_0 ~ N(0, sigma^2 I)`.
pub fn sample_training_pair(
    tau_norm: &NormalizedTrajectory,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<(FlowState, [f64; FLAT_DIM])> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("noise sigma must be positive, got {sigma}")));
    }
    let t: f64 = rng.gen_range(0.0..1.0);
    let mut x_t = [0.0; FLAT_DIM];
    let mut v_t = [0.0; FLAT_DIM];
    for i in 0..FLAT_DIM {
        let x0: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
        v_t[i] = tau_norm.values[i] - x0;
        x_t[i] = (1.0 - t) * x0 + t * tau_norm.values[i];
    }
    Ok((FlowState { x_t, t }, v_t))
}

/// Mean absolute error between predicted and target velocity, on the tape.
pub fn flow_loss(tape: &mut Tape, v_hat: Id, v_t: &[f64]) -> Result<Id> {
    tape.l1_mean(v_hat, v_t)
}

/// Monotone integration grid `0 = t_0 < ... < t_n = 1` from warping a
/// uniform grid with `u -> shift u / (1 + (shift - 1) u)`, plus the step
/// widths. `shift > 1` spends more steps near `t = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub grid: Vec<f64>,
    pub deltas: Vec<f64>,
}

pub fn timestep_schedule(n_steps: usize, shift: f64) -> Result<Schedule> {
    if n_steps == 0 {
        return Err(Error::config("timestep schedule needs at least one step"));
    }
    if !(shift > 0.0 && shift.is_finite()) {
        return Err(Error::config(format!("schedule shift must be positive, got {shift}")));
    }
    let grid: Vec<f64> = (0..=n_steps)
        .map(|i| {
            let u = i as f64 / n_steps as f64;
            shift * u / (1.0 + (shift - 1.0) * u)
        })
        .collect();
    let deltas = grid.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(Schedule { grid, deltas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Pose;
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha8Rng;

    fn traj(mut f: impl FnMut(usize) -> (f64, f64, f64)) -> Trajectory {
        let poses = std::array::from_fn(|i| {
            let (x, y, heading) = f(i);
            Pose { x, y, heading }
        });
        Trajectory { poses }
    }

    fn random_traj(rng: &mut ChaCha8Rng) -> Trajectory {
        traj(|_| (rng.gen_range(-20.0..20.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn two_trajectory_stats_match_hand_computation() {
        // component 0 takes values 2 and 6: mean 4, population std 2;
        // heading channels are identical so std hits the floor
        let a = traj(|i| (2.0 + i as f64, 1.0, 0.5));
        let b = traj(|i| (6.0 + i as f64, 3.0, 0.5));
        let stats = TrajStats::from_trajectories(&[a, b]).unwrap();
        assert_relative_eq!(stats.mean[0], 4.0);
        assert_relative_eq!(stats.std[0], 2.0);
        assert_relative_eq!(stats.mean[1], 2.0);
        assert_relative_eq!(stats.std[1], 1.0);
        assert_relative_eq!(stats.mean[2], 0.5);
        assert_relative_eq!(stats.std[2], STD_FLOOR);
        assert_relative_eq!(stats.mean[3], 5.0); // second waypoint x: (3 + 7) / 2
    }

    #[test]
    fn mean_trajectory_normalizes_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trajectories: Vec<Trajectory> = (0..10).map(|_| random_traj(&mut rng)).collect();
        let stats = TrajStats::from_trajectories(&trajectories).unwrap();
        let mean_traj = Trajectory::from_flat(&stats.mean).unwrap();
        for v in stats.normalize(&mean_traj).values {
            assert_relative_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalization_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trajectories: Vec<Trajectory> = (0..8).map(|_| random_traj(&mut rng)).collect();
        let stats = TrajStats::from_trajectories(&trajectories).unwrap();
        for _ in 0..20 {
            let tau = random_traj(&mut rng);
            let back = stats.denormalize(&stats.normalize(&tau));
            for (a, b) in tau.flatten().iter().zip(back.flatten()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn stats_survive_the_store_and_error_when_absent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trajectories: Vec<Trajectory> = (0..5).map(|_| random_traj(&mut rng)).collect();
        let stats = TrajStats::from_trajectories(&trajectories).unwrap();
        let mut store = ParamStore::new();
        assert!(TrajStats::read_from_store(&store).is_err());
        stats.write_to_store(&mut store).unwrap();
        assert_eq!(TrajStats::read_from_store(&store).unwrap(), stats);
        assert!(TrajStats::from_trajectories(&[]).is_err());
    }

    #[test]
    fn training_pair_endpoints_and_straight_path_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tau = NormalizedTrajectory { values: std::array::from_fn(|i| (i as f64).sin()) };
        assert!(sample_training_pair(&tau, 0.0, &mut rng).is_err());
        for _ in 0..200 {
            let (state, v) = sample_training_pair(&tau, 0.3, &mut rng).unwrap();
            assert!((0.0..1.0).contains(&state.t));
            for i in 0..FLAT_DIM {
                // x_t + (1-t) v = t tau + (1-t)(x_0 + tau - x_0)
                let reconstructed = state.x_t[i] + (1.0 - state.t) * v[i];
                assert!((reconstructed - tau.values[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn training_noise_has_the_requested_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tau = NormalizedTrajectory { values: [0.0; FLAT_DIM] };
        let sigma = 0.4;
        let mut sum_sq = 0.0;
        let draws = 2000;
        for _ in 0..draws {
            let (_, v) = sample_training_pair(&tau, sigma, &mut rng).unwrap();
            // tau = 0 so v = -x_0
            sum_sq += v.iter().map(|x| x * x).sum::<f64>();
        }
        let std = (sum_sq / (draws * FLAT_DIM) as f64).sqrt();
        assert!((std - sigma).abs() < 0.01, "empirical std {std}");
    }

    #[test]
    fn flow_loss_closed_forms_and_zero_subgradient() {
        let mut tape = Tape::new();
        let v = vec![1.0, -2.0, 3.0, 0.0];
        let pred = tape.input(v.clone(), 1, 4).unwrap();
        let loss = flow_loss(&mut tape, pred, &v).unwrap();
        assert_relative_eq!(tape.value(loss)[0], 0.0);
        tape.backward(loss).unwrap();
        assert!(tape.grad(pred).expect("gradient").iter().all(|g| g.is_finite()));

        let mut tape = Tape::inference();
        let pred = tape.input(vec![1.5, -1.5, 3.5, 0.5], 1, 4).unwrap();
        let loss = flow_loss(&mut tape, pred, &v).unwrap();
        assert_relative_eq!(tape.value(loss)[0], 0.5);
    }

    #[test]
    fn unit_shift_gives_the_uniform_grid() {
        let s = timestep_schedule(4, 1.0).unwrap();
        for (i, t) in s.grid.iter().enumerate() {
            assert_relative_eq!(*t, i as f64 / 4.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn schedule_is_monotone_with_exact_endpoints() {
        for &shift in &[0.5, 1.0, 3.0, 10.0] {
            for &n in &[1usize, 2, 5, 20] {
                let s = timestep_schedule(n, shift).unwrap();
                assert_eq!(s.grid[0], 0.0);
                assert_eq!(*s.grid.last().unwrap(), 1.0);
                assert!(s.grid.windows(2).all(|w| w[1] > w[0]));
                assert!((s.deltas.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!(timestep_schedule(0, 3.0).is_err());
        assert!(timestep_schedule(5, 0.0).is_err());
    }

    #[test]
    fn large_shift_spends_steps_late() {
        let s = timestep_schedule(10, 3.0).unwrap();
        // warp is concave for shift > 1: early deltas large, late deltas small
        assert!(s.deltas[0] > s.deltas[9]);
        assert!(s.grid[5] > 0.5, "midpoint should be pushed past 1/2");
    }
}
