//! Synthetic driving scenes: corridor geometry, agents, expert trajectories.
//!
//! Every scene lives in the ego frame at t=0 — ego at the origin, heading
//! along +x. A scene is a drivable corridor polygon, the route centerline,
//! up to four other vehicles, and the ego's kinematic state; a [`Sample`]
//! pairs it with the expert trajectory the planner should imitate and the
//! expert's endpoint as the ground-truth goal.

mod generate;
mod io;

pub use generate::{generate_dataset, KindMix};
pub use io::{load_dataset, save_dataset, Dataset, DATASET_VERSION};

use serde::{Deserialize, Serialize};

use crate::geom::{self, P2};
use crate::{Error, Result};

/// Waypoints per trajectory.
pub const N_WAYPOINTS: usize = 8;
/// Seconds between consecutive waypoints (2 Hz).
pub const STEP_SECONDS: f64 = 0.5;
/// Planning horizon in seconds.
pub const HORIZON_SECONDS: f64 = N_WAYPOINTS as f64 * STEP_SECONDS;

/// A planar pose: position in meters, heading in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn position(&self) -> P2 {
        geom::p2(self.x, self.y)
    }
}

/// Endpoint candidate: where the ego intends to be at the horizon.
/// Structurally a pose; kept as its own name because goal points flow
/// through scoring and conditioning, not through kinematics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalPoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl From<Pose> for GoalPoint {
    fn from(p: Pose) -> GoalPoint {
        GoalPoint {
            x: p.x,
            y: p.y,
            heading: p.heading,
        }
    }
}

/// Ego kinematic state at t=0 plus its box half-extents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoStatus {
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
    pub heading: f64,
    pub half_len: f64,
    pub half_wid: f64,
}

/// Another vehicle: oriented box plus constant velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub center: P2,
    pub heading: f64,
    pub half_len: f64,
    pub half_wid: f64,
    pub velocity: [f64; 2],
}

impl AgentState {
    pub fn corners(&self) -> [P2; 4] {
        geom::obb_corners(self.center, self.heading, self.half_len, self.half_wid)
    }

    /// Box center after `dt` seconds of constant-velocity motion.
    pub fn center_at(&self, dt: f64) -> P2 {
        geom::p2(
            self.center.x + self.velocity[0] * dt,
            self.center.y + self.velocity[1] * dt,
        )
    }

    /// Box corners after `dt` seconds of constant-velocity motion.
    pub fn corners_at(&self, dt: f64) -> [P2; 4] {
        geom::obb_corners(self.center_at(dt), self.heading, self.half_len, self.half_wid)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    Left,
    Right,
    Yield,
}

/// One synthetic driving situation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Simple polygon bounding the drivable area, ego frame, meters.
    pub drivable_area: Vec<P2>,
    /// Route centerline, inside the drivable area.
    pub centerline: Vec<P2>,
    pub agents: Vec<AgentState>,
    pub ego: EgoStatus,
    pub kind: ScenarioKind,
}

/// Fixed-horizon trajectory: 8 poses at 0.5 s spacing, first pose at t=0.5 s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: [Pose; N_WAYPOINTS],
}

impl Trajectory {
    pub fn endpoint(&self) -> Pose {
        self.poses[N_WAYPOINTS - 1]
    }

    /// Flattens to 24 values: (x, y, heading) per waypoint, waypoint-major.
    pub fn flatten(&self) -> [f64; N_WAYPOINTS * 3] {
        let mut out = [0.0; N_WAYPOINTS * 3];
        for (i, p) in self.poses.iter().enumerate() {
            out[i * 3] = p.x;
            out[i * 3 + 1] = p.y;
            out[i * 3 + 2] = p.heading;
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Trajectory> {
        if flat.len() != N_WAYPOINTS * 3 {
            return Err(Error::shape(format!(
                "trajectory wants {} values, got {}",
                N_WAYPOINTS * 3,
                flat.len()
            )));
        }
        let mut poses = [Pose {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        }; N_WAYPOINTS];
        for (i, pose) in poses.iter_mut().enumerate() {
            *pose = Pose {
                x: flat[i * 3],
                y: flat[i * 3 + 1],
                heading: flat[i * 3 + 2],
            };
        }
        Ok(Trajectory { poses })
    }

    /// Mean per-waypoint position distance to another trajectory.
    pub fn mean_deviation(&self, other: &Trajectory) -> f64 {
        self.poses
            .iter()
            .zip(&other.poses)
            .map(|(a, b)| a.position().dist(b.position()))
            .sum::<f64>()
            / N_WAYPOINTS as f64
    }
}

/// A training/evaluation unit: scene, expert trajectory, expert endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scene: Scene,
    pub tau_gt: Trajectory,
    pub goal_gt: GoalPoint,
}

impl Sample {
    /// Structural invariants: valid polygon, finite poses, goal identical to
    /// the expert endpoint.
    pub fn validate(&self) -> Result<()> {
        geom::validate_polygon(&self.scene.drivable_area)?;
        if self.scene.centerline.len() < 2 {
            return Err(Error::data("centerline has fewer than 2 points"));
        }
        for p in &self.tau_gt.poses {
            if !(p.x.is_finite() && p.y.is_finite() && p.heading.is_finite()) {
                return Err(Error::data("non-finite trajectory pose"));
            }
        }
        let end = self.tau_gt.endpoint();
        if self.goal_gt.x != end.x || self.goal_gt.y != end.y || self.goal_gt.heading != end.heading
        {
            return Err(Error::data(
                "goal_gt does not equal the trajectory endpoint",
            ));
        }
        if self.scene.ego.half_len <= 0.0 || self.scene.ego.half_wid <= 0.0 {
            return Err(Error::data("non-positive ego half-extents"));
        }
        Ok(())
    }
}

/// Corners of the vehicle box at a pose, front-left first.
pub fn footprint_corners(pose: Pose, half_len: f64, half_wid: f64) -> [P2; 4] {
    geom::obb_corners(pose.position(), pose.heading, half_len, half_wid)
}
