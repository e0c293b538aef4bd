//! Synthetic scene generation.
//!
//! Each sample is a drivable corridor (straight, left turn, right turn, or a
//! straight corridor in which the expert yields to a stop), a handful of
//! parked or receding agents, and an expert trajectory that stays inside the
//! corridor, respects the kind's speed limit, and keeps curvature bounded by
//! the turn radius. Generation is a pure function of (seed, count, kind mix):
//! every sample draws from its own seed-derived stream, so results do not
//! depend on thread count or iteration order.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    AgentState, EgoStatus, GoalPoint, Pose, Sample, Scene, ScenarioKind, Trajectory, N_WAYPOINTS,
    STEP_SECONDS,
};
use crate::geom::{self, p2, P2};
use crate::rng::derive_seed;
use crate::{par, Error, Result};

/// Ego vehicle half-length in meters.
pub const EGO_HALF_LEN: f64 = 2.3;
/// Ego vehicle half-width in meters.
pub const EGO_HALF_WID: f64 = 0.95;

/// Extra clearance (m) required between the expert sweep and any agent.
const SAFETY_INFLATION: f64 = 0.3;
/// Extra clearance (m) required between two agents.
const AGENT_GAP_INFLATION: f64 = 0.1;
/// Time step (s) of the dense sweep used to reject unsafe agent placements.
const SAFETY_DT: f64 = 0.1;
/// Maximum number of agents in a scene.
const MAX_AGENTS: usize = 4;
/// Spacing (m) between corridor boundary stations.
const BOUNDARY_STEP: f64 = 2.5;
/// Spacing (m) between centerline points.
const CENTERLINE_STEP: f64 = 2.0;

/// Mixture weights over scenario kinds; normalized internally.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindMix {
    pub straight: f64,
    pub left: f64,
    pub right: f64,
    #[serde(rename = "yield")]
    pub yield_: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        KindMix { straight: 0.4, left: 0.2, right: 0.2, yield_: 0.2 }
    }
}

impl KindMix {
    /// Only the given kind, everything else zero.
    pub fn only(kind: ScenarioKind) -> Self {
        let mut m = KindMix { straight: 0.0, left: 0.0, right: 0.0, yield_: 0.0 };
        match kind {
            ScenarioKind::Straight => m.straight = 1.0,
            ScenarioKind::Left => m.left = 1.0,
            ScenarioKind::Right => m.right = 1.0,
            ScenarioKind::Yield => m.yield_ = 1.0,
        }
        m
    }

    fn weights(&self) -> [(ScenarioKind, f64); 4] {
        [
            (ScenarioKind::Straight, self.straight),
            (ScenarioKind::Left, self.left),
            (ScenarioKind::Right, self.right),
            (ScenarioKind::Yield, self.yield_),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let ws = self.weights();
        if ws.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("kind_mix: weights must be finite and non-negative"));
        }
        if ws.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
            return Err(Error::config("kind_mix: weights must not all be zero"));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> ScenarioKind {
        let ws = self.weights();
        let total: f64 = ws.iter().map(|(_, w)| w).sum();
        let mut r = rng.gen_range(0.0..total);
        for (kind, w) in ws {
            if r < w {
                return kind;
            }
            r -= w;
        }
        ScenarioKind::Yield
    }
}

/// Corridor skeleton: arc-length parametrized reference path in the ego frame.
#[derive(Clone, Copy)]
enum PathShape {
    Straight,
    /// Straight lead-in of `lead` meters, then a circular arc; `sign` is +1
    /// for a left turn and -1 for a right turn.
    Arc { lead: f64, radius: f64, sign: f64 },
}

impl PathShape {
    fn point(&self, s: f64) -> P2 {
        match *self {
            PathShape::Straight => p2(s, 0.0),
            PathShape::Arc { lead, radius, sign } => {
                if s <= lead {
                    p2(s, 0.0)
                } else {
                    let phi = (s - lead) / radius;
                    p2(lead + radius * phi.sin(), sign * radius * (1.0 - phi.cos()))
                }
            }
        }
    }

    fn heading(&self, s: f64) -> f64 {
        match *self {
            PathShape::Straight => 0.0,
            PathShape::Arc { lead, radius, sign } => {
                if s <= lead {
                    0.0
                } else {
                    sign * (s - lead) / radius
                }
            }
        }
    }

    /// Point displaced `lat` meters along the left normal of the path.
    fn offset(&self, s: f64, lat: f64) -> P2 {
        let h = self.heading(s);
        let base = self.point(s);
        p2(base.x - lat * h.sin(), base.y + lat * h.cos())
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Expert position at arc length `s`: path point plus a smooth lateral drift
/// that starts at 0 (ego origin) and settles at `o_e` by the end of the ride.
fn expert_point(shape: &PathShape, s: f64, o_e: f64, s_total: f64) -> P2 {
    shape.offset(s, o_e * smoothstep(s / s_total))
}

fn expert_pose(shape: &PathShape, s: f64, o_e: f64, s_total: f64) -> Pose {
    let h = 1e-3;
    let ahead = expert_point(shape, s + h, o_e, s_total);
    let behind = expert_point(shape, s - h, o_e, s_total);
    let p = expert_point(shape, s, o_e, s_total);
    Pose { x: p.x, y: p.y, heading: (ahead.y - behind.y).atan2(ahead.x - behind.x) }
}

fn normal_sample(rng: &mut impl Rng, std: f64) -> f64 {
    Normal::new(0.0, std).expect("std must be positive").sample(rng)
}

/// Ego pose at continuous time `t` (s), linearly interpolating the expert
/// trajectory from the origin pose at t=0.
fn ego_pose_at(poses: &[Pose; N_WAYPOINTS], t: f64) -> (P2, f64) {
    let at = |k: usize| -> (P2, f64) {
        if k == 0 {
            (p2(0.0, 0.0), 0.0)
        } else {
            (poses[k - 1].position(), poses[k - 1].heading)
        }
    };
    let u = (t / STEP_SECONDS).clamp(0.0, N_WAYPOINTS as f64);
    let k = (u.floor() as usize).min(N_WAYPOINTS - 1);
    let frac = u - k as f64;
    let (pa, ha) = at(k);
    let (pb, hb) = at(k + 1);
    let pos = p2(pa.x + (pb.x - pa.x) * frac, pa.y + (pb.y - pa.y) * frac);
    (pos, ha + geom::normalize_angle(hb - ha) * frac)
}

/// Dense-time clearance check for a candidate agent against the expert sweep
/// (inflated by [`SAFETY_INFLATION`]) and the already accepted agents.
fn agent_safe(cand: &AgentState, poses: &[Pose; N_WAYPOINTS], others: &[AgentState]) -> bool {
    let horizon = N_WAYPOINTS as f64 * STEP_SECONDS;
    let mut t = 0.0;
    while t <= horizon + 1e-9 {
        let cand_box = geom::obb_corners(
            cand.center_at(t),
            cand.heading,
            cand.half_len + AGENT_GAP_INFLATION,
            cand.half_wid + AGENT_GAP_INFLATION,
        );
        let (pos, heading) = ego_pose_at(poses, t);
        let ego_box = geom::obb_corners(
            pos,
            heading,
            EGO_HALF_LEN + SAFETY_INFLATION,
            EGO_HALF_WID + SAFETY_INFLATION,
        );
        if geom::obbs_collide(&ego_box, &cand_box) {
            return false;
        }
        for other in others {
            if geom::obbs_collide(&other.corners_at(t), &cand_box) {
                return false;
            }
        }
        t += SAFETY_DT;
    }
    true
}

struct CorridorDraw {
    shape: PathShape,
    width: f64,
    v0: f64,
    v1: f64,
    s_total: f64,
    s_start: f64,
    s_end: f64,
    /// A stopped lead vehicle is the visible reason for a yield.
    caused_yield: bool,
}

/// Draws corridor geometry and the expert speed profile for one kind.
///
/// Speed limits: 10 m/s on straight corridors, and on turns the tightest of
/// a lateral-acceleration bound (v² / R ≤ 4.9), a yaw-rate bound
/// (v / R ≤ 0.95), and the straight limit, each taken at 80%. Trajectory
/// lengths land in [8.4, 40] m so every ride covers meaningful distance.
fn draw_corridor(kind: ScenarioKind, rng: &mut impl Rng) -> CorridorDraw {
    match kind {
        ScenarioKind::Straight => {
            let width = rng.gen_range(6.0..14.0);
            let v0 = rng.gen_range(2.5..9.8);
            let dv: f64 = rng.gen_range(-4.0..4.0);
            let v1 = (v0 + dv).clamp((4.2 - v0).max(0.5), 9.8);
            let s_total = 2.0 * (v0 + v1);
            let s_end = s_total + rng.gen_range(4.0..14.0);
            CorridorDraw {
                shape: PathShape::Straight,
                width,
                v0,
                v1,
                s_total,
                s_start: -5.0,
                s_end,
                caused_yield: false,
            }
        }
        ScenarioKind::Yield => {
            let width = rng.gen_range(6.0..14.0);
            let v0 = rng.gen_range(4.2..6.0);
            let v1 = rng.gen_range(0.0..0.5);
            let s_total = 2.0 * (v0 + v1);
            let caused_yield = rng.gen_bool(0.5);
            // A caused yield needs room for its stopped lead vehicle; an
            // uncaused one ends soon after the stop point, so overshooting
            // planners run out of drivable area.
            let margin =
                if caused_yield { rng.gen_range(11.5..16.0) } else { rng.gen_range(4.0..10.0) };
            CorridorDraw {
                shape: PathShape::Straight,
                width,
                v0,
                v1,
                s_total,
                s_start: -5.0,
                s_end: s_total + margin,
                caused_yield,
            }
        }
        ScenarioKind::Left | ScenarioKind::Right => {
            let sign = if kind == ScenarioKind::Left { 1.0 } else { -1.0 };
            let radius = rng.gen_range(12.0..25.0);
            let width = rng.gen_range(6.0..14.0f64.min(0.8 * radius));
            let lead = rng.gen_range(2.0..6.0);
            let v_cap = 0.8 * (4.9 * radius).sqrt().min(0.95 * radius).min(10.0);
            let mut v0 = rng.gen_range(2.1..v_cap);
            let dv: f64 = rng.gen_range(-2.0..2.0);
            let mut v1 = (v0 + dv).clamp(2.1, v_cap);
            // Keep the swept arc well below a half-circle so the corridor
            // polygon stays simple.
            let s_cap = (2.2 * radius - 10.0).min(40.0);
            let mut s_total = 2.0 * (v0 + v1);
            if s_total > s_cap {
                let k = s_cap / s_total;
                v0 *= k;
                v1 *= k;
                s_total = s_cap;
            }
            let s_end = (s_total + 4.0 + rng.gen_range(0.0..8.0)).min(lead + 2.0 * radius);
            CorridorDraw {
                shape: PathShape::Arc { lead, radius, sign },
                width,
                v0,
                v1,
                s_total,
                s_start: -4.0,
                s_end,
                caused_yield: false,
            }
        }
    }
}

/// Corridor boundary polygon: right edge swept forward, left edge swept back
/// (counterclockwise for a straight corridor).
fn corridor_polygon(shape: &PathShape, width: f64, s_start: f64, s_end: f64) -> Vec<P2> {
    let n_seg = (((s_end - s_start) / BOUNDARY_STEP).ceil() as usize).max(3);
    let step = (s_end - s_start) / n_seg as f64;
    let mut poly = Vec::with_capacity(2 * (n_seg + 1));
    for k in 0..=n_seg {
        poly.push(shape.offset(s_start + step * k as f64, -width / 2.0));
    }
    for k in (0..=n_seg).rev() {
        poly.push(shape.offset(s_start + step * k as f64, width / 2.0));
    }
    poly
}

fn corridor_centerline(shape: &PathShape, s_start: f64, s_end: f64) -> Vec<P2> {
    let lo = s_start + 0.5;
    let hi = s_end - 0.5;
    let n_seg = (((hi - lo) / CENTERLINE_STEP).ceil() as usize).max(1);
    let step = (hi - lo) / n_seg as f64;
    (0..=n_seg).map(|k| shape.offset(lo + step * k as f64, 0.0)).collect()
}

fn draw_agent(rng: &mut impl Rng, d: &CorridorDraw, o_cap: f64) -> Option<AgentState> {
    let half_len = rng.gen_range(1.8..2.4);
    let half_wid = rng.gen_range(0.8..0.95);
    if rng.gen_bool(0.6) {
        // Parked vehicle beside the expert swath. The 0.9 m extra margin
        // keeps constant-velocity forward projections of the ego (used by
        // time-to-collision checks) clear of it; on turns only the inner
        // side is used because those projections sweep toward the outside.
        let lo = o_cap + EGO_HALF_WID + half_wid + 0.9;
        let hi = d.width / 2.0 - half_wid - 0.3;
        if lo < hi {
            let side = match d.shape {
                PathShape::Arc { sign, .. } => sign,
                PathShape::Straight => {
                    if rng.gen_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            let lat = side * rng.gen_range(lo..hi);
            let s_a = rng.gen_range(2.0..(d.s_end - 3.0).max(2.5));
            let heading = d.shape.heading(s_a) + normal_sample(rng, 0.05);
            return Some(AgentState {
                center: d.shape.offset(s_a, lat),
                heading,
                half_len,
                half_wid,
                velocity: [0.0, 0.0],
            });
        }
        // Corridor too narrow to park beside the swath; fall through.
    }
    // Receding lead: starts beyond the expert endpoint and outruns the ego.
    let lo = d.s_total + 3.0;
    let hi = (d.s_total + 7.0).min(d.s_end - half_len - 0.3);
    if hi <= lo {
        return None;
    }
    let s_a = rng.gen_range(lo..hi);
    let heading = d.shape.heading(s_a) + normal_sample(rng, 0.03);
    let speed = rng.gen_range(d.v0.max(d.v1)..12.0);
    Some(AgentState {
        center: d.shape.offset(s_a, normal_sample(rng, 0.3).clamp(-1.0, 1.0)),
        heading,
        half_len,
        half_wid,
        velocity: [speed * heading.cos(), speed * heading.sin()],
    })
}

fn build_sample(seed: u64, mix: &KindMix) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = mix.draw(&mut rng);
    let d = draw_corridor(kind, &mut rng);

    // Lateral drift the expert settles into; bounded well inside the corridor.
    let o_cap = (d.width / 8.0).min(0.9);
    let o_e = rng.gen_range(-1.0..1.0) * o_cap;

    // Linear speed ramp v0 -> v1 over the 4 s horizon.
    let mut poses = [Pose { x: 0.0, y: 0.0, heading: 0.0 }; N_WAYPOINTS];
    for (i, pose) in poses.iter_mut().enumerate() {
        let t = STEP_SECONDS * (i + 1) as f64;
        let s = d.v0 * t + (d.v1 - d.v0) * t * t / 8.0;
        *pose = expert_pose(&d.shape, s, o_e, d.s_total);
    }
    let tau_gt = Trajectory { poses };

    // The reported acceleration is noise, not the ramp: the ego state must
    // not give away how the ride ends, otherwise goals carry no information.
    let ego = EgoStatus {
        velocity: [d.v0, normal_sample(&mut rng, 0.05)],
        acceleration: [normal_sample(&mut rng, 0.2), normal_sample(&mut rng, 0.1)],
        heading: 0.0,
        half_len: EGO_HALF_LEN,
        half_wid: EGO_HALF_WID,
    };

    let drivable_area = corridor_polygon(&d.shape, d.width, d.s_start, d.s_end);
    geom::validate_polygon(&drivable_area)?;
    let centerline = corridor_centerline(&d.shape, d.s_start, d.s_end);

    let mut agents: Vec<AgentState> = Vec::new();
    if d.caused_yield {
        let half_len = rng.gen_range(1.8..2.4);
        let half_wid = rng.gen_range(0.8..0.95);
        let s_a = rng.gen_range(d.s_total + 6.5..d.s_total + 8.0);
        let lat = normal_sample(&mut rng, 0.3).clamp(-1.0, 1.0);
        let heading = d.shape.heading(s_a) + normal_sample(&mut rng, 0.03);
        let lead = AgentState {
            center: d.shape.offset(s_a, lat),
            heading,
            half_len,
            half_wid,
            velocity: [0.0, 0.0],
        };
        if agent_safe(&lead, &poses, &agents) {
            agents.push(lead);
        }
    }
    let n_extra = rng.gen_range(0..=MAX_AGENTS - agents.len());
    for _ in 0..n_extra {
        for _attempt in 0..10 {
            if let Some(cand) = draw_agent(&mut rng, &d, o_cap) {
                if agent_safe(&cand, &poses, &agents) {
                    agents.push(cand);
                    break;
                }
            }
        }
    }

    let goal_gt = GoalPoint::from(poses[N_WAYPOINTS - 1]);
    let sample = Sample {
        scene: Scene { drivable_area, centerline, agents, ego, kind },
        tau_gt,
        goal_gt,
    };
    sample.validate()?;
    Ok(sample)
}

/// Generates `count` independent samples. Pure in (seed, count, mix):
/// identical inputs give identical datasets regardless of thread count.
pub fn generate_dataset(seed: u64, count: usize, mix: &KindMix) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(Error::data("generate_dataset: count must be positive"));
    }
    mix.validate()?;
    par::map_indexed(count, |i| build_sample(derive_seed(seed, &[0x5C, i as u64]), mix))
        .into_iter()
        .collect()
}
