//! Scene and ego encoding into a fixed-size token set.
//!
//! A scene becomes 40 tokens of width `d`: 16 drivable-boundary tokens, 16
//! centerline tokens, and 8 agent slots. Boundary and centerline are
//! arc-length resampled to their token counts; agents fill slots in list
//! order and unused slots hold a learned padding embedding. Each group is a
//! linear projection of its geometric features plus a learned type
//! embedding. The ego state projects to a single token, and
//! [`env_condition`] fuses everything into one environment feature via
//! cross-attention from a learned query.

use rand_chacha::ChaCha8Rng;

use crate::geom::{P2, Polyline};
use crate::nn::layers::{
    register_embedding, AttentionIds, AttentionSpec, LinearIds, LinearSpec, multi_head_attention,
};
use crate::nn::{Id, ParamStore, Tape, Tensor};
use crate::scenario::{EgoStatus, Sample, Scene};
use crate::{Error, Result};

/// Tokens devoted to the drivable-area boundary ring.
pub const POLY_TOKENS: usize = 16;
/// Tokens devoted to the centerline.
pub const CENTER_TOKENS: usize = 16;
/// Agent slots (extra agents beyond this are dropped, farthest-index first).
pub const AGENT_TOKENS: usize = 8;
/// Total scene tokens.
pub const N_SCENE_TOKENS: usize = POLY_TOKENS + CENTER_TOKENS + AGENT_TOKENS;

/// Divisor bringing meter-scale coordinates to unit scale.
const POS_SCALE: f64 = 10.0;
/// Divisor bringing m/s velocities to unit scale.
const VEL_SCALE: f64 = 10.0;
/// Boundary/centerline token features: scaled position + unit tangent.
const POINT_FEATURES: usize = 4;
/// Agent token features: scaled center, cos/sin heading, scaled velocity,
/// half extents, validity flag (1 for every real agent).
const AGENT_FEATURES: usize = 9;
/// Ego features: z-scored velocity and acceleration, heading.
const EGO_FEATURES: usize = 5;

/// Floor applied to feature standard deviations so constant channels stay
/// finite under z-scoring.
const STD_FLOOR: f64 = 1e-6;

/// Per-channel z-scoring statistics for the ego velocity and acceleration,
/// in channel order (vx, vy, ax, ay).
#[derive(Clone, Debug, PartialEq)]
pub struct EgoStats {
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl EgoStats {
    /// No-op statistics (mean 0, std 1).
    pub fn identity() -> EgoStats {
        EgoStats { mean: [0.0; 4], std: [1.0; 4] }
    }

    /// Population statistics over a dataset's ego states.
    pub fn from_samples(samples: &[Sample]) -> Result<EgoStats> {
        if samples.is_empty() {
            return Err(Error::data("ego stats need at least one sample"));
        }
        let channels = |e: &EgoStatus| {
            [e.velocity[0], e.velocity[1], e.acceleration[0], e.acceleration[1]]
        };
        let n = samples.len() as f64;
        let mut mean = [0.0; 4];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(channels(&s.scene.ego)) {
                *m += v / n;
            }
        }
        let mut var = [0.0; 4];
        for s in samples {
            for ((v, m), x) in var.iter_mut().zip(mean).zip(channels(&s.scene.ego)) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let mut std = [0.0; 4];
        for (s, v) in std.iter_mut().zip(var) {
            *s = v.sqrt().max(STD_FLOOR);
        }
        Ok(EgoStats { mean, std })
    }

    /// Persists the statistics as (non-trainable) store entries so they ride
    /// along in checkpoints.
    pub fn write_to_store(&self, store: &mut ParamStore) -> Result<()> {
        for (name, vals) in [("stats.ego_mean", self.mean), ("stats.ego_std", self.std)] {
            store.upsert(name, Tensor::from_vec(&[4], vals.to_vec())?);
        }
        Ok(())
    }

    pub fn read_from_store(store: &ParamStore) -> Result<EgoStats> {
        let read = |name: &str| -> Result<[f64; 4]> {
            let t = store.get(name)?;
            t.data.as_slice().try_into().map_err(|_| {
                Error::shape(format!("{name}: expected 4 values, got {}", t.data.len()))
            })
        };
        Ok(EgoStats { mean: read("stats.ego_mean")?, std: read("stats.ego_std")? })
    }
}

/// Parameter layout of the scene/ego encoder.
#[derive(Clone, Debug)]
pub struct EncoderSpec {
    pub d: usize,
    poly: LinearSpec,
    center: LinearSpec,
    agent: LinearSpec,
    ego: LinearSpec,
    env_attn: AttentionSpec,
}

/// Tape bindings for one forward build.
pub struct EncoderIds {
    pub d: usize,
    poly: LinearIds,
    center: LinearIds,
    agent: LinearIds,
    ego: LinearIds,
    e_poly: Id,
    e_center: Id,
    e_agent: Id,
    e_pad: Id,
    q_env: Id,
    env_attn: AttentionIds,
}

const EMBED_NAMES: [&str; 5] =
    ["enc.embed.poly", "enc.embed.center", "enc.embed.agent", "enc.embed.pad", "enc.q_env"];

impl EncoderSpec {
    pub fn new(d: usize, n_heads: usize) -> Result<EncoderSpec> {
        Ok(EncoderSpec {
            d,
            poly: LinearSpec::new("enc.poly", POINT_FEATURES, d),
            center: LinearSpec::new("enc.center", POINT_FEATURES, d),
            agent: LinearSpec::new("enc.agent", AGENT_FEATURES, d),
            ego: LinearSpec::new("enc.ego", EGO_FEATURES, d),
            env_attn: AttentionSpec::new("enc.env_attn", d, n_heads)?,
        })
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        self.poly.register(store, rng)?;
        self.center.register(store, rng)?;
        self.agent.register(store, rng)?;
        self.ego.register(store, rng)?;
        self.env_attn.register(store, rng)?;
        for name in EMBED_NAMES {
            register_embedding(store, name, &[1, self.d], 0.1, rng)?;
        }
        Ok(())
    }

    pub fn bind<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        trainable: bool,
    ) -> Result<EncoderIds> {
        let bind_embed = |tape: &mut Tape<'p>, name: &str| -> Result<Id> {
            let t = store.get(name)?;
            if trainable {
                tape.param(name, t)
            } else {
                tape.frozen(t)
            }
        };
        let e_poly = bind_embed(tape, EMBED_NAMES[0])?;
        let e_center = bind_embed(tape, EMBED_NAMES[1])?;
        let e_agent = bind_embed(tape, EMBED_NAMES[2])?;
        let e_pad = bind_embed(tape, EMBED_NAMES[3])?;
        let q_env = bind_embed(tape, EMBED_NAMES[4])?;
        Ok(EncoderIds {
            d: self.d,
            poly: self.poly.bind(tape, store, trainable)?,
            center: self.center.bind(tape, store, trainable)?,
            agent: self.agent.bind(tape, store, trainable)?,
            ego: self.ego.bind(tape, store, trainable)?,
            e_poly,
            e_center,
            e_agent,
            e_pad,
            q_env,
            env_attn: self.env_attn.bind(tape, store, trainable)?,
        })
    }
}

/// `n` points spaced uniformly in arc length around a closed ring, starting
/// at the first vertex.
fn resample_ring(ring: &[P2], n: usize) -> Result<Vec<P2>> {
    if ring.len() < 3 {
        return Err(Error::Geometry(format!("boundary ring with {} vertices", ring.len())));
    }
    let mut closed = ring.to_vec();
    closed.push(ring[0]);
    let pl = Polyline::new(closed)?;
    let step = pl.length() / n as f64;
    Ok((0..n).map(|k| pl.point_at(step * k as f64)).collect())
}

/// `n` points spaced uniformly in arc length along an open polyline,
/// including both endpoints.
fn resample_line(pts: &[P2], n: usize) -> Result<Vec<P2>> {
    let pl = Polyline::new(pts.to_vec())?;
    let step = pl.length() / (n - 1) as f64;
    Ok((0..n).map(|k| pl.point_at(step * k as f64)).collect())
}

/// Rows of (scaled position, unit tangent) per resampled point.
fn point_features(pts: &[P2], wrap: bool) -> Vec<f64> {
    let n = pts.len();
    let mut out = Vec::with_capacity(n * POINT_FEATURES);
    for i in 0..n {
        let diff = if wrap {
            pts[(i + 1) % n].sub(pts[i])
        } else if i + 1 < n {
            pts[i + 1].sub(pts[i])
        } else {
            pts[i].sub(pts[i - 1])
        };
        let len = diff.norm();
        let (tx, ty) = if len > 1e-12 { (diff.x / len, diff.y / len) } else { (0.0, 0.0) };
        out.extend([pts[i].x / POS_SCALE, pts[i].y / POS_SCALE, tx, ty]);
    }
    out
}

/// Encodes a scene into `[N_SCENE_TOKENS, d]` tokens on the tape.
pub fn encode_scene(tape: &mut Tape, ids: &EncoderIds, scene: &Scene) -> Result<Id> {
    let ring = resample_ring(&scene.drivable_area, POLY_TOKENS)?;
    let poly_in = tape.constant(point_features(&ring, true), POLY_TOKENS, POINT_FEATURES)?;
    let poly_proj = ids.poly.apply(tape, poly_in)?;
    let poly_tok = tape.add_row_broadcast(poly_proj, ids.e_poly)?;

    let line = resample_line(&scene.centerline, CENTER_TOKENS)?;
    let center_in = tape.constant(point_features(&line, false), CENTER_TOKENS, POINT_FEATURES)?;
    let center_proj = ids.center.apply(tape, center_in)?;
    let center_tok = tape.add_row_broadcast(center_proj, ids.e_center)?;

    let mut groups = vec![poly_tok, center_tok];
    let k = scene.agents.len().min(AGENT_TOKENS);
    if k > 0 {
        let mut feat = Vec::with_capacity(k * AGENT_FEATURES);
        for a in &scene.agents[..k] {
            feat.extend([
                a.center.x / POS_SCALE,
                a.center.y / POS_SCALE,
                a.heading.cos(),
                a.heading.sin(),
                a.velocity[0] / VEL_SCALE,
                a.velocity[1] / VEL_SCALE,
                a.half_len,
                a.half_wid,
                1.0,
            ]);
        }
        let agent_in = tape.constant(feat, k, AGENT_FEATURES)?;
        let agent_proj = ids.agent.apply(tape, agent_in)?;
        groups.push(tape.add_row_broadcast(agent_proj, ids.e_agent)?);
    }
    // Empty slots carry the padding embedding itself.
    for _ in k..AGENT_TOKENS {
        groups.push(ids.e_pad);
    }
    tape.concat_rows(&groups)
}

/// Encodes the ego state into a single `[1, d]` token. Velocity and
/// acceleration are z-scored with dataset statistics.
pub fn encode_ego(
    tape: &mut Tape,
    ids: &EncoderIds,
    ego: &EgoStatus,
    stats: &EgoStats,
) -> Result<Id> {
    let raw = [ego.velocity[0], ego.velocity[1], ego.acceleration[0], ego.acceleration[1]];
    let mut feat: Vec<f64> =
        raw.iter().zip(stats.mean).zip(stats.std).map(|((x, m), s)| (x - m) / s).collect();
    feat.push(ego.heading);
    let x = tape.constant(feat, 1, EGO_FEATURES)?;
    ids.ego.apply(tape, x)
}

/// Fuses scene tokens and the ego token into one `[1, d]` environment
/// feature: cross-attention from a learned query against the scene tokens
/// with the ego token broadcast onto every key/value.
pub fn env_condition(
    tape: &mut Tape,
    ids: &EncoderIds,
    scene_tokens: Id,
    ego_token: Id,
) -> Result<Id> {
    let kv = tape.add_row_broadcast(scene_tokens, ego_token)?;
    multi_head_attention(tape, ids.q_env, kv, kv, &ids.env_attn)
}
