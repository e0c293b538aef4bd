//! Closed-loop evaluation metrics and their aggregate driving score.
//!
//! Five subscores gate or weigh a trajectory executed in a scene: no
//! collisions (NC) and time-to-collision headroom (TTC) against agents
//! propagated at constant velocity, drivable-area compliance (DAC),
//! finite-difference comfort bounds (CF), and route progress relative to
//! the expert (EP). An optional driving-direction check (DDC) compares pose
//! headings against the centerline tangent. The aggregate multiplies the
//! hard gates by a weighted average of the soft terms:
//! `NC * DAC * TTC * (5 EP + 5 CF + 2 DDC) / 12`.

use serde::{Deserialize, Serialize};

use crate::geom::{self, normalize_angle, Polyline, P2};
use crate::scenario::{footprint_corners, Scene, Trajectory, STEP_SECONDS};
use crate::select::progress_along;
use crate::{Error, Result};

/// Look-ahead horizon for the time-to-collision check.
pub const TTC_HORIZON_S: f64 = 1.0;
/// Propagation grain within the TTC horizon.
pub const TTC_DT_S: f64 = 0.1;
/// Inclusive comfort bound on acceleration magnitude, m/s^2.
pub const MAX_ABS_ACCEL: f64 = 4.9;
/// Inclusive comfort bound on jerk magnitude, m/s^3.
pub const MAX_ABS_JERK: f64 = 8.4;
/// Inclusive comfort bound on yaw rate magnitude, rad/s.
pub const MAX_ABS_YAW_RATE: f64 = 0.95;
/// Reference progress below which the progress ratio degenerates to 1.
pub const EP_DEGENERATE_M: f64 = 0.1;

/// All subscores plus the aggregate for one executed trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub s_nc: f64,
    pub s_dac: f64,
    pub s_ttc: f64,
    pub s_ep: f64,
    pub s_cf: f64,
    pub s_ddc: f64,
    pub s_pdm: f64,
}

/// Time of waypoint `k` relative to the plan origin.
fn waypoint_time(k: usize) -> f64 {
    (k + 1) as f64 * STEP_SECONDS
}

/// 1 if no ego footprint along the trajectory overlaps any agent box
/// propagated at constant velocity to the same timestamp; else 0.
///
/// Checks the 8 discrete waypoint times only; sub-waypoint collisions are
/// the dense-time oracle's business (tests document the 0.1 s grain).
pub fn metric_nc(traj: &Trajectory, scene: &Scene) -> f64 {
    for (k, pose) in traj.poses.iter().enumerate() {
        let ego = footprint_corners(*pose, scene.ego.half_len, scene.ego.half_wid);
        let t = waypoint_time(k);
        for agent in &scene.agents {
            if geom::obbs_collide(&ego, &agent.corners_at(t)) {
                return 0.0;
            }
        }
    }
    1.0
}

/// 1 iff all four footprint corners at all 8 poses lie strictly inside the
/// drivable area; else 0.
pub fn metric_dac(traj: &Trajectory, scene: &Scene) -> Result<f64> {
    geom::validate_polygon(&scene.drivable_area)?;
    for pose in &traj.poses {
        let corners = footprint_corners(*pose, scene.ego.half_len, scene.ego.half_wid);
        for c in corners {
            if !geom::point_in_polygon_unchecked(c, &scene.drivable_area) {
                return Ok(0.0);
            }
        }
    }
    Ok(1.0)
}

/// 1 iff propagating the ego from every waypoint at its local
/// finite-difference velocity, and agents at constant velocity, stays
/// overlap-free over `horizon_s` sampled every `dt_s`; else 0. The
/// propagation starts at `dt_s` (time zero is [`metric_nc`]'s job).
pub fn metric_ttc(traj: &Trajectory, scene: &Scene, horizon_s: f64, dt_s: f64) -> Result<f64> {
    if !(dt_s > 0.0 && horizon_s >= dt_s) {
        return Err(Error::config(format!(
            "TTC wants 0 < dt <= horizon, got dt {dt_s} horizon {horizon_s}"
        )));
    }
    let n_sub = (horizon_s / dt_s).round() as usize;
    let mut prev = P2 { x: 0.0, y: 0.0 };
    for (k, pose) in traj.poses.iter().enumerate() {
        let v = pose.position().sub(prev).scale(1.0 / STEP_SECONDS);
        prev = pose.position();
        let t = waypoint_time(k);
        for i in 1..=n_sub {
            let s = i as f64 * dt_s;
            let center = pose.position().add(v.scale(s));
            let ego =
                geom::obb_corners(center, pose.heading, scene.ego.half_len, scene.ego.half_wid);
            for agent in &scene.agents {
                if geom::obbs_collide(&ego, &agent.corners_at(t + s)) {
                    return Ok(0.0);
                }
            }
        }
    }
    Ok(1.0)
}

/// Finite-difference extremes along a trajectory's 8 poses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComfortProfile {
    pub max_accel: f64,
    pub max_jerk: f64,
    pub max_yaw_rate: f64,
}

/// Largest acceleration, jerk, and yaw-rate magnitudes by successive finite
/// differences of the 8 poses (velocities from positions, and so on up).
pub fn comfort_profile(traj: &Trajectory) -> ComfortProfile {
    let dt = STEP_SECONDS;
    let vels: Vec<P2> = traj
        .poses
        .windows(2)
        .map(|w| w[1].position().sub(w[0].position()).scale(1.0 / dt))
        .collect();
    let accels: Vec<P2> = vels.windows(2).map(|w| w[1].sub(w[0]).scale(1.0 / dt)).collect();
    let jerks: Vec<P2> = accels.windows(2).map(|w| w[1].sub(w[0]).scale(1.0 / dt)).collect();
    let max_norm = |v: &[P2]| v.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let max_yaw_rate = traj
        .poses
        .windows(2)
        .map(|w| (normalize_angle(w[1].heading - w[0].heading) / dt).abs())
        .fold(0.0, f64::max);
    ComfortProfile {
        max_accel: max_norm(&accels),
        max_jerk: max_norm(&jerks),
        max_yaw_rate,
    }
}

/// Inclusive comparison against the comfort bounds: values exactly at a
/// bound still pass.
pub fn within_comfort_bounds(profile: &ComfortProfile) -> bool {
    profile.max_accel <= MAX_ABS_ACCEL
        && profile.max_jerk <= MAX_ABS_JERK
        && profile.max_yaw_rate <= MAX_ABS_YAW_RATE
}

/// 1 iff all finite-difference accelerations, jerks, and yaw rates stay
/// within the inclusive comfort bounds; else 0.
pub fn metric_comfort(traj: &Trajectory) -> f64 {
    if within_comfort_bounds(&comfort_profile(traj)) {
        1.0
    } else {
        0.0
    }
}

/// Centerline progress of `traj` relative to the reference trajectory,
/// clipped to [0, 1]. A near-stationary reference (under
/// [`EP_DEGENERATE_M`]) scores 1.
pub fn metric_ep(traj: &Trajectory, reference: &Trajectory, centerline: &[P2]) -> Result<f64> {
    let ref_progress = progress_along(centerline, reference)?;
    if ref_progress < EP_DEGENERATE_M {
        return Ok(1.0);
    }
    Ok((progress_along(centerline, traj)? / ref_progress).clamp(0.0, 1.0))
}

/// 1 iff every pose heading points within 90 degrees (inclusive) of the
/// centerline tangent at its projection; else 0.
pub fn metric_ddc(traj: &Trajectory, centerline: &[P2]) -> Result<f64> {
    let line = Polyline::new(centerline.to_vec())?;
    for pose in &traj.poses {
        let s = line.project_arclen(pose.position());
        let tangent = line.tangent_at(s);
        let heading = P2 { x: pose.heading.cos(), y: pose.heading.sin() };
        if heading.dot(tangent) < 0.0 {
            return Ok(0.0);
        }
    }
    Ok(1.0)
}

/// Aggregate score: `nc * dac * ttc * (5 ep + 5 cf + 2 ddc) / 12`. Errors
/// when any subscore leaves [0, 1].
pub fn pdm_score(nc: f64, dac: f64, ttc: f64, ep: f64, cf: f64, ddc: f64) -> Result<f64> {
    for (name, v) in
        [("nc", nc), ("dac", dac), ("ttc", ttc), ("ep", ep), ("cf", cf), ("ddc", ddc)]
    {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::data(format!("subscore {name} = {v} outside [0, 1]")));
        }
    }
    Ok(nc * dac * ttc * ((5.0 * ep + 5.0 * cf + 2.0 * ddc) / 12.0))
}

/// Runs the full metric suite for a trajectory executed in a scene, against
/// a reference trajectory for progress. `ddc_check` enables the
/// driving-direction subscore; otherwise it is fixed to 1.
pub fn evaluate_trajectory(
    traj: &Trajectory,
    scene: &Scene,
    reference: &Trajectory,
    ddc_check: bool,
) -> Result<MetricReport> {
    let s_nc = metric_nc(traj, scene);
    let s_dac = metric_dac(traj, scene)?;
    let s_ttc = metric_ttc(traj, scene, TTC_HORIZON_S, TTC_DT_S)?;
    let s_ep = metric_ep(traj, reference, &scene.centerline)?;
    let s_cf = metric_comfort(traj);
    let s_ddc = if ddc_check { metric_ddc(traj, &scene.centerline)? } else { 1.0 };
    let s_pdm = pdm_score(s_nc, s_dac, s_ttc, s_ep, s_cf, s_ddc)?;
    Ok(MetricReport { s_nc, s_dac, s_ttc, s_ep, s_cf, s_ddc, s_pdm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::p2;
    use crate::scenario::{
        generate_dataset, AgentState, EgoStatus, KindMix, Pose, ScenarioKind, N_WAYPOINTS,
    };
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Straight constant-speed trajectory along +x reaching `end_x`.
    fn straight(end_x: f64) -> Trajectory {
        let poses = std::array::from_fn(|i| Pose {
            x: end_x * (i + 1) as f64 / 8.0,
            y: 0.0,
            heading: 0.0,
        });
        Trajectory { poses }
    }

    fn empty_scene() -> Scene {
        Scene {
            drivable_area: vec![p2(-10.0, -6.0), p2(60.0, -6.0), p2(60.0, 6.0), p2(-10.0, 6.0)],
            centerline: (0..=30).map(|i| p2(2.0 * i as f64, 0.0)).collect(),
            agents: vec![],
            ego: EgoStatus {
                velocity: [8.0, 0.0],
                acceleration: [0.0, 0.0],
                heading: 0.0,
                half_len: 2.3,
                half_wid: 0.95,
            },
            kind: ScenarioKind::Straight,
        }
    }

    fn parked(x: f64, y: f64) -> AgentState {
        AgentState {
            center: p2(x, y),
            heading: 0.0,
            half_len: 2.3,
            half_wid: 0.95,
            velocity: [0.0, 0.0],
        }
    }

    #[test]
    fn empty_scene_is_collision_free() {
        let scene = empty_scene();
        let traj = straight(24.0);
        assert_eq!(metric_nc(&traj, &scene), 1.0);
        assert_eq!(metric_ttc(&traj, &scene, 1.0, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn agent_on_a_waypoint_footprint_collides() {
        let mut scene = empty_scene();
        let traj = straight(24.0);
        // waypoint index 4 sits at x = 15
        scene.agents.push(parked(traj.poses[4].x, 0.0));
        assert_eq!(metric_nc(&traj, &scene), 0.0);
    }

    #[test]
    fn moving_agent_is_propagated_to_the_waypoint_time() {
        let mut scene = empty_scene();
        let traj = straight(24.0);
        // starts far left of waypoint 3 (x=12, t=2 s) but arrives exactly
        // then: center = -8 + 10*2 = 12
        scene.agents.push(AgentState {
            center: p2(-8.0, 0.0),
            heading: 0.0,
            half_len: 1.0,
            half_wid: 0.5,
            velocity: [10.0, 0.0],
        });
        assert_eq!(metric_nc(&traj, &scene), 0.0);
        // same agent but slower never reaches any ego waypoint in time
        scene.agents[0].velocity = [1.0, 0.0];
        assert_eq!(metric_nc(&traj, &scene), 1.0);
    }

    /// Independent dense-time oracle: linear ego interpolation (origin +
    /// 8 poses) checked against constant-velocity agents every 0.1 s.
    fn nc_oracle(traj: &Trajectory, scene: &Scene) -> f64 {
        let horizon = N_WAYPOINTS as f64 * STEP_SECONDS;
        let mut t = 0.0;
        while t <= horizon + 1e-9 {
            let k = t / STEP_SECONDS; // waypoint coordinate, 0 = origin
            let (lo, frac) = (k.floor() as usize, k.fract());
            let pose_at = |idx: usize| -> Pose {
                if idx == 0 {
                    Pose { x: 0.0, y: 0.0, heading: 0.0 }
                } else {
                    traj.poses[(idx - 1).min(N_WAYPOINTS - 1)]
                }
            };
            let (a, b) = (pose_at(lo), pose_at(lo + 1));
            let pose = Pose {
                x: a.x + frac * (b.x - a.x),
                y: a.y + frac * (b.y - a.y),
                heading: a.heading + frac * normalize_angle(b.heading - a.heading),
            };
            let ego = footprint_corners(pose, scene.ego.half_len, scene.ego.half_wid);
            for agent in &scene.agents {
                if geom::obbs_collide(&ego, &agent.corners_at(t)) {
                    return 0.0;
                }
            }
            t += 0.1;
        }
        1.0
    }

    #[test]
    fn nc_agrees_with_the_dense_time_oracle_on_random_scenes() {
        let samples = generate_dataset(71, 200, &KindMix::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        let mut agreed = 0;
        for sample in &samples {
            // the expert plus a laterally shoved copy (some of which collide)
            let offset = rng.gen_range(-3.0..3.0);
            let mut shoved = sample.tau_gt.clone();
            for p in &mut shoved.poses {
                p.y += offset;
            }
            for traj in [&sample.tau_gt, &shoved] {
                checked += 1;
                let got = metric_nc(traj, &sample.scene);
                let want = nc_oracle(traj, &sample.scene);
                agreed += (got == want) as usize;
            }
        }
        let rate = agreed as f64 / checked as f64;
        assert!(rate >= 0.99, "agreement {agreed}/{checked} = {rate}");
    }

    #[test]
    fn dac_accepts_contained_and_rejects_escaping_trajectories() {
        let scene = empty_scene();
        let traj = straight(24.0);
        assert_eq!(metric_dac(&traj, &scene).unwrap(), 1.0);
        let mut out = traj;
        out.poses[7].y = 5.5; // box corner pokes past y = 6
        assert_eq!(metric_dac(&out, &scene).unwrap(), 0.0);
    }

    /// Winding-number corner oracle (same construction as the goal-target
    /// tests, independent of the ray caster).
    fn dac_oracle(traj: &Trajectory, scene: &Scene) -> f64 {
        let poly = &scene.drivable_area;
        let inside = |p: P2| -> bool {
            let n = poly.len();
            for i in 0..n {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                let ab = b.sub(a);
                let ap = p.sub(a);
                if ab.cross(ap) == 0.0 && ab.dot(ap) >= 0.0 && ab.dot(ap) <= ab.dot(ab) {
                    return false;
                }
            }
            let mut angle = 0.0;
            for i in 0..n {
                let a = poly[i].sub(p);
                let b = poly[(i + 1) % n].sub(p);
                angle += a.cross(b).atan2(a.dot(b));
            }
            angle.abs() > std::f64::consts::PI
        };
        let ok = traj.poses.iter().all(|pose| {
            footprint_corners(*pose, scene.ego.half_len, scene.ego.half_wid)
                .iter()
                .all(|&c| inside(c))
        });
        if ok {
            1.0
        } else {
            0.0
        }
    }

    #[test]
    fn dac_agrees_with_the_corner_oracle_on_random_trajectories() {
        let samples = generate_dataset(72, 50, &KindMix::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut trials = 0;
        for sample in &samples {
            for _ in 0..10 {
                let mut traj = sample.tau_gt.clone();
                let dy = rng.gen_range(-4.0..4.0);
                let dtheta = rng.gen_range(-0.5..0.5);
                for p in &mut traj.poses {
                    p.y += dy;
                    p.heading += dtheta;
                }
                trials += 1;
                assert_eq!(
                    metric_dac(&traj, &sample.scene).unwrap(),
                    dac_oracle(&traj, &sample.scene),
                    "disagreement on sample"
                );
            }
        }
        assert_eq!(trials, 500);
    }

    #[test]
    fn ttc_flags_closing_but_not_receding_agents() {
        let mut scene = empty_scene();
        let traj = straight(32.0); // 8 m/s along +x
        // head-on: at waypoint 0 (x=4, t=0.5) the agent is 8 m ahead closing
        // at 16 m/s relative => overlap ~0.3 s into the horizon
        scene.agents.push(AgentState {
            center: p2(16.0, 0.0),
            heading: 0.0,
            half_len: 1.0,
            half_wid: 0.5,
            velocity: [-8.0, 0.0],
        });
        let mut head_on = scene.clone();
        head_on.agents[0].center = p2(12.0 + 4.0, 0.0);
        assert_eq!(metric_ttc(&traj, &head_on, 1.0, 0.1).unwrap(), 0.0);

        // slower lead far ahead: gap only grows from each waypoint's ghost
        let mut lead = empty_scene();
        lead.agents.push(AgentState {
            center: p2(50.0, 0.0),
            heading: 0.0,
            half_len: 1.0,
            half_wid: 0.5,
            velocity: [6.0, 0.0],
        });
        assert_eq!(metric_ttc(&traj, &lead, 1.0, 0.1).unwrap(), 1.0);
        assert!(metric_ttc(&traj, &lead, 1.0, 0.0).is_err());
        assert!(metric_ttc(&traj, &lead, 0.05, 0.1).is_err());
    }

    #[test]
    fn constant_velocity_is_comfortable() {
        let traj = straight(28.0);
        let profile = comfort_profile(&traj);
        assert_relative_eq!(profile.max_accel, 0.0);
        assert_relative_eq!(profile.max_jerk, 0.0);
        assert_relative_eq!(profile.max_yaw_rate, 0.0);
        assert_eq!(metric_comfort(&traj), 1.0);
    }

    #[test]
    fn zig_zag_blows_the_acceleration_bound() {
        // +-2 m lateral flips: lateral velocity alternates +-8 m/s, so
        // acceleration reaches (8 - -8) / 0.5 = 32 m/s^2
        let poses = std::array::from_fn(|i| Pose {
            x: 4.0 * (i + 1) as f64,
            y: if i % 2 == 0 { 2.0 } else { -2.0 },
            heading: 0.0,
        });
        let traj = Trajectory { poses };
        let profile = comfort_profile(&traj);
        assert_relative_eq!(profile.max_accel, 32.0);
        assert_eq!(metric_comfort(&traj), 0.0);
    }

    #[test]
    fn comfort_bounds_are_inclusive() {
        let at_bounds = ComfortProfile {
            max_accel: MAX_ABS_ACCEL,
            max_jerk: MAX_ABS_JERK,
            max_yaw_rate: MAX_ABS_YAW_RATE,
        };
        assert!(within_comfort_bounds(&at_bounds));
        for (da, dj, dy) in [(1e-9, 0.0, 0.0), (0.0, 1e-9, 0.0), (0.0, 0.0, 1e-9)] {
            let over = ComfortProfile {
                max_accel: MAX_ABS_ACCEL + da,
                max_jerk: MAX_ABS_JERK + dj,
                max_yaw_rate: MAX_ABS_YAW_RATE + dy,
            };
            assert!(!within_comfort_bounds(&over));
        }
    }

    #[test]
    fn gentle_acceleration_stays_comfortable() {
        // speeds up 2 m/s per step: accel 4 < 4.9, jerk 0
        let mut x = 0.0;
        let mut v = 4.0;
        let poses = std::array::from_fn(|_| {
            x += v * STEP_SECONDS;
            v += 2.0;
            Pose { x, y: 0.0, heading: 0.0 }
        });
        let traj = Trajectory { poses };
        let profile = comfort_profile(&traj);
        assert_relative_eq!(profile.max_accel, 4.0, epsilon = 1e-9);
        assert_eq!(metric_comfort(&traj), 1.0);
    }

    #[test]
    fn hard_turns_blow_the_yaw_rate_bound() {
        let poses = std::array::from_fn(|i| Pose {
            x: (i + 1) as f64,
            y: 0.0,
            heading: 0.5 * (i + 1) as f64, // 1 rad/s
        });
        let traj = Trajectory { poses };
        assert_relative_eq!(comfort_profile(&traj).max_yaw_rate, 1.0);
        assert_eq!(metric_comfort(&traj), 0.0);
    }

    #[test]
    fn progress_ratio_hits_the_documented_cases() {
        let scene = empty_scene();
        let reference = straight(16.0);
        assert_relative_eq!(
            metric_ep(&reference, &reference, &scene.centerline).unwrap(),
            1.0
        );
        assert!(
            (metric_ep(&straight(8.0), &reference, &scene.centerline).unwrap() - 0.5).abs()
                < 1e-6
        );
        // overshooting the reference clips to 1
        assert_relative_eq!(
            metric_ep(&straight(32.0), &reference, &scene.centerline).unwrap(),
            1.0
        );
        // near-stationary reference scores 1 regardless
        let stationary = Trajectory {
            poses: std::array::from_fn(|_| Pose { x: 0.01, y: 0.0, heading: 0.0 }),
        };
        assert_relative_eq!(
            metric_ep(&straight(4.0), &stationary, &scene.centerline).unwrap(),
            1.0
        );
    }

    #[test]
    fn driving_direction_check_catches_wrong_way_poses() {
        let scene = empty_scene();
        let forward = straight(24.0);
        assert_eq!(metric_ddc(&forward, &scene.centerline).unwrap(), 1.0);
        let mut backward = forward;
        for p in &mut backward.poses {
            p.heading = std::f64::consts::PI;
        }
        assert_eq!(metric_ddc(&backward, &scene.centerline).unwrap(), 0.0);
    }

    #[test]
    fn pdm_arithmetic_matches_by_hand() {
        assert_relative_eq!(pdm_score(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        // (5*0.5 + 5 + 2) / 12 = 9.5 / 12
        assert_relative_eq!(
            pdm_score(1.0, 1.0, 1.0, 0.5, 1.0, 1.0).unwrap(),
            9.5 / 12.0,
            epsilon = 1e-12
        );
        assert_eq!(pdm_score(0.0, 1.0, 1.0, 0.9, 1.0, 1.0).unwrap(), 0.0);
        assert!(pdm_score(1.1, 1.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(pdm_score(1.0, 1.0, 1.0, -0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn pdm_is_monotone_in_every_subscore() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let s: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
            let base = pdm_score(s[0], s[1], s[2], s[3], s[4], s[5]).unwrap();
            for i in 0..6 {
                let mut bumped = s;
                bumped[i] = (bumped[i] + rng.gen_range(0.0..0.3)).min(1.0);
                let up = pdm_score(
                    bumped[0], bumped[1], bumped[2], bumped[3], bumped[4], bumped[5],
                )
                .unwrap();
                assert!(up >= base - 1e-15, "raising subscore {i} lowered the score");
            }
        }
    }

    #[test]
    fn full_report_on_a_clean_scene_is_perfect() {
        let scene = empty_scene();
        let reference = straight(16.0);
        let report = evaluate_trajectory(&reference, &scene, &reference, true).unwrap();
        assert_eq!(
            report,
            MetricReport {
                s_nc: 1.0,
                s_dac: 1.0,
                s_ttc: 1.0,
                s_ep: 1.0,
                s_cf: 1.0,
                s_ddc: 1.0,
                s_pdm: 1.0
            }
        );
        // ddc disabled fixes the subscore to 1 even for wrong-way poses
        let mut backward = reference.clone();
        for p in &mut backward.poses {
            p.heading = std::f64::consts::PI;
        }
        let report = evaluate_trajectory(&backward, &scene, &reference, false).unwrap();
        assert_eq!(report.s_ddc, 1.0);
        // but the yaw change from pose 0 heading pi is fine (constant), so
        // only ddc_check distinguishes them
        let strict = evaluate_trajectory(&backward, &scene, &reference, true).unwrap();
        assert_eq!(strict.s_ddc, 0.0);
        assert!(strict.s_pdm < report.s_pdm);
    }

    /// Consistency with the goal module's box-in-polygon test on shared
    /// geometry: a trajectory passing DAC implies every pose also passes the
    /// goal-style footprint check.
    #[test]
    fn dac_implies_per_pose_footprint_compliance() {
        use crate::goal::{target_dac_scores, vocab_from_points};
        use crate::scenario::GoalPoint;
        let samples = generate_dataset(73, 20, &KindMix::default()).unwrap();
        for sample in &samples {
            let traj = &sample.tau_gt;
            if metric_dac(traj, &sample.scene).unwrap() != 1.0 {
                continue;
            }
            let points: Vec<GoalPoint> = traj.poses.iter().map(|p| GoalPoint::from(*p)).collect();
            let vocab = vocab_from_points(points);
            let scores = target_dac_scores(
                &vocab,
                &sample.scene.drivable_area,
                sample.scene.ego.half_len,
                sample.scene.ego.half_wid,
            )
            .unwrap();
            assert!(scores.iter().all(|s| *s == 1.0));
        }
    }
}
