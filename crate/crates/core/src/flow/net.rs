//! Velocity-field network and condition masking.
//!
//! Four condition tokens — environment feature, goal encoding, current
//! noisy trajectory, and timestep — pass through a self-attention stack;
//! the trajectory token's final state is projected to the 24-component
//! velocity. The environment and goal tokens can each be replaced by a
//! learned null embedding (randomly during training, making the model
//! usable without either condition; the null token is what unconditional
//! sampling feeds at inference).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::FLAT_DIM;
use crate::nn::encoding::sinusoidal_encode;
use crate::nn::layers::{
    register_embedding, BlockIds, BlockSpec, LayerNormIds, LayerNormSpec, LinearIds, LinearSpec,
};
use crate::nn::{Id, ParamStore, Tape};
use crate::scenario::GoalPoint;
use crate::{Error, Result};

/// Sinusoidal budget for the (x, y, heading) goal encoding.
pub const GOAL_ENC_DIM: usize = 192;
/// Sinusoidal budget for the timestep encoding.
pub const T_ENC_DIM: usize = 64;
/// Timestep multiplier before sinusoidal encoding, spreading [0, 1] across
/// the frequency bands.
pub const T_SCALE: f64 = 1000.0;

/// Row order of the condition tokens inside the stack.
const ROW_TRAJ: usize = 2;

/// Everything the velocity field is conditioned on besides the flow state.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    /// Environment feature from the scene encoder, length `d`.
    pub env: Vec<f64>,
    pub goal: GoalPoint,
    pub mask_env: bool,
    pub mask_goal: bool,
}

impl Conditioning {
    pub fn new(env: Vec<f64>, goal: GoalPoint) -> Conditioning {
        Conditioning { env, goal, mask_env: false, mask_goal: false }
    }
}

/// Independently masks the environment and goal conditions with probability
/// `p_mask` each (training-time augmentation). Already-masked conditions
/// stay masked.
pub fn condition_mask(
    cond: &Conditioning,
    rng: &mut impl Rng,
    p_mask: f64,
) -> Result<Conditioning> {
    if !(0.0..1.0).contains(&p_mask) {
        return Err(Error::config(format!("p_mask must be in [0, 1), got {p_mask}")));
    }
    let mut out = cond.clone();
    out.mask_env |= rng.gen_bool(p_mask);
    out.mask_goal |= rng.gen_bool(p_mask);
    Ok(out)
}

/// Names and shapes of the velocity network's parameters.
#[derive(Clone, Debug)]
pub struct FlowNetSpec {
    pub d: usize,
    env_in: LinearSpec,
    goal_in: LinearSpec,
    traj_in: LinearSpec,
    t_in: LinearSpec,
    blocks: Vec<BlockSpec>,
    ln_f: LayerNormSpec,
    out: LinearSpec,
}

/// Tape bindings for one forward pass.
pub struct FlowNetIds {
    d: usize,
    null_env: Id,
    null_goal: Id,
    env_in: LinearIds,
    goal_in: LinearIds,
    traj_in: LinearIds,
    t_in: LinearIds,
    blocks: Vec<BlockIds>,
    ln_f: LayerNormIds,
    out: LinearIds,
}

impl FlowNetSpec {
    pub fn new(d: usize, n_heads: usize, n_layers: usize) -> Result<FlowNetSpec> {
        if n_layers == 0 {
            return Err(Error::config("velocity network needs at least one layer"));
        }
        let blocks = (0..n_layers)
            .map(|i| BlockSpec::new(format!("flow.block{i}"), d, n_heads))
            .collect::<Result<Vec<_>>>()?;
        Ok(FlowNetSpec {
            d,
            env_in: LinearSpec::new("flow.env", d, d),
            goal_in: LinearSpec::new("flow.goal", GOAL_ENC_DIM, d),
            traj_in: LinearSpec::new("flow.traj", FLAT_DIM, d),
            t_in: LinearSpec::new("flow.t", T_ENC_DIM, d),
            blocks,
            ln_f: LayerNormSpec::new("flow.ln_f", d),
            out: LinearSpec::new("flow.out", d, FLAT_DIM),
        })
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        register_embedding(store, "flow.null_env", &[1, self.d], 0.1, rng)?;
        register_embedding(store, "flow.null_goal", &[1, self.d], 0.1, rng)?;
        self.env_in.register(store, rng)?;
        self.goal_in.register(store, rng)?;
        self.traj_in.register(store, rng)?;
        self.t_in.register(store, rng)?;
        for b in &self.blocks {
            b.register(store, rng)?;
        }
        self.ln_f.register(store)?;
        self.out.register(store, rng)
    }

    pub fn bind<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        trainable: bool,
    ) -> Result<FlowNetIds> {
        let bind_null = |tape: &mut Tape<'p>, name: &str| -> Result<Id> {
            if trainable {
                tape.param(name, store.get(name)?)
            } else {
                tape.frozen(store.get(name)?)
            }
        };
        Ok(FlowNetIds {
            d: self.d,
            null_env: bind_null(tape, "flow.null_env")?,
            null_goal: bind_null(tape, "flow.null_goal")?,
            env_in: self.env_in.bind(tape, store, trainable)?,
            goal_in: self.goal_in.bind(tape, store, trainable)?,
            traj_in: self.traj_in.bind(tape, store, trainable)?,
            t_in: self.t_in.bind(tape, store, trainable)?,
            blocks: self
                .blocks
                .iter()
                .map(|b| b.bind(tape, store, trainable))
                .collect::<Result<Vec<_>>>()?,
            ln_f: self.ln_f.bind(tape, store, trainable)?,
            out: self.out.bind(tape, store, trainable)?,
        })
    }
}

/// Predicted velocity `[1, 24]` for the flow position `x_t` (a `[1, 24]`
/// tape node) at time `t` under the given conditioning.
pub fn predict_velocity(
    tape: &mut Tape,
    ids: &FlowNetIds,
    x_t: Id,
    t: f64,
    cond: &Conditioning,
) -> Result<Id> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::config(format!("flow time must be in [0, 1], got {t}")));
    }
    if cond.env.len() != ids.d {
        return Err(Error::shape(format!(
            "environment feature has {} components, network wants {}",
            cond.env.len(),
            ids.d
        )));
    }
    let env_tok = if cond.mask_env {
        ids.null_env
    } else {
        let raw = tape.constant(cond.env.clone(), 1, ids.d)?;
        ids.env_in.apply(tape, raw)?
    };
    let goal_tok = if cond.mask_goal {
        ids.null_goal
    } else {
        let enc =
            sinusoidal_encode(&[cond.goal.x, cond.goal.y, cond.goal.heading], GOAL_ENC_DIM)?;
        let raw = tape.constant(enc.data, 1, GOAL_ENC_DIM)?;
        ids.goal_in.apply(tape, raw)?
    };
    let traj_tok = ids.traj_in.apply(tape, x_t)?;
    let t_enc = sinusoidal_encode(&[t * T_SCALE], T_ENC_DIM)?;
    let t_raw = tape.constant(t_enc.data, 1, T_ENC_DIM)?;
    let t_tok = ids.t_in.apply(tape, t_raw)?;

    let mut x = tape.concat_rows(&[env_tok, goal_tok, traj_tok, t_tok])?;
    for blk in &ids.blocks {
        x = blk.apply(tape, x, None)?;
    }
    let read = tape.slice_rows(x, ROW_TRAJ, 1)?;
    let read = ids.ln_f.apply(tape, read)?;
    ids.out.apply(tape, read)
}
