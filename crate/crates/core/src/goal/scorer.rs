//! Learned scorer that reads scene tokens and rates every vocabulary point.
//!
//! Each vocabulary point owns a learned feature row; adding the ego token to
//! every row forms the queries, which cross-attend to the scene tokens
//! through residual transformer blocks. Two small heads then emit a softmax
//! distance score (one probability per point) and an independent sigmoid
//! compliance score per point.

use rand_chacha::ChaCha8Rng;

use super::{final_scores, GoalScoreSet};
use crate::nn::layers::{register_embedding, BlockIds, BlockSpec, LinearIds, LinearSpec};
use crate::nn::{Id, ParamStore, Tape};
use crate::{Error, Result};

/// Names and shapes of the scorer's parameters.
#[derive(Clone, Debug)]
pub struct GoalScorerSpec {
    pub d: usize,
    pub n_points: usize,
    blocks: Vec<BlockSpec>,
    dis1: LinearSpec,
    dis2: LinearSpec,
    dac1: LinearSpec,
    dac2: LinearSpec,
}

/// Tape bindings for one forward pass.
pub struct GoalScorerIds {
    pub f_v: Id,
    n_points: usize,
    blocks: Vec<BlockIds>,
    dis1: LinearIds,
    dis2: LinearIds,
    dac1: LinearIds,
    dac2: LinearIds,
}

impl GoalScorerSpec {
    pub fn new(d: usize, n_heads: usize, n_layers: usize, n_points: usize) -> Result<GoalScorerSpec> {
        if n_layers == 0 || n_points < 2 {
            return Err(Error::config(format!(
                "goal scorer needs >=1 layer and >=2 points, got {n_layers} and {n_points}"
            )));
        }
        let blocks = (0..n_layers)
            .map(|i| BlockSpec::new(format!("goal.block{i}"), d, n_heads))
            .collect::<Result<Vec<_>>>()?;
        Ok(GoalScorerSpec {
            d,
            n_points,
            blocks,
            dis1: LinearSpec::new("goal.dis1", d, d),
            dis2: LinearSpec::new("goal.dis2", d, 1),
            dac1: LinearSpec::new("goal.dac1", d, d),
            dac2: LinearSpec::new("goal.dac2", d, 1),
        })
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        register_embedding(store, "goal.f_v", &[self.n_points, self.d], 0.1, rng)?;
        for b in &self.blocks {
            b.register(store, rng)?;
        }
        self.dis1.register(store, rng)?;
        self.dis2.register(store, rng)?;
        self.dac1.register(store, rng)?;
        self.dac2.register(store, rng)
    }

    pub fn bind<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        trainable: bool,
    ) -> Result<GoalScorerIds> {
        let f_v_tensor = store.get("goal.f_v")?;
        if f_v_tensor.shape != [self.n_points, self.d] {
            return Err(Error::shape(format!(
                "goal.f_v has shape {:?}, scorer expects [{}, {}]",
                f_v_tensor.shape, self.n_points, self.d
            )));
        }
        let f_v = if trainable {
            tape.param("goal.f_v", f_v_tensor)?
        } else {
            tape.frozen(f_v_tensor)?
        };
        Ok(GoalScorerIds {
            f_v,
            n_points: self.n_points,
            blocks: self
                .blocks
                .iter()
                .map(|b| b.bind(tape, store, trainable))
                .collect::<Result<Vec<_>>>()?,
            dis1: self.dis1.bind(tape, store, trainable)?,
            dis2: self.dis2.bind(tape, store, trainable)?,
            dac1: self.dac1.bind(tape, store, trainable)?,
            dac2: self.dac2.bind(tape, store, trainable)?,
        })
    }
}

/// Builds the scoring graph; returns `(dis, dac)`, each `[1, N]` — `dis` a
/// softmax row, `dac` independent sigmoids.
pub fn score_goals_graph(
    tape: &mut Tape,
    ids: &GoalScorerIds,
    scene_tokens: Id,
    ego_token: Id,
) -> Result<(Id, Id)> {
    let mut x = tape.add_row_broadcast(ids.f_v, ego_token)?;
    for blk in &ids.blocks {
        x = blk.apply(tape, x, Some(scene_tokens))?;
    }
    let h = ids.dis1.apply(tape, x)?;
    let h = tape.relu(h);
    let s = ids.dis2.apply(tape, h)?;
    let row = tape.reshape(s, 1, ids.n_points)?;
    let dis = tape.softmax_rows(row);

    let h = ids.dac1.apply(tape, x)?;
    let h = tape.relu(h);
    let s = ids.dac2.apply(tape, h)?;
    let sg = tape.sigmoid(s);
    let dac = tape.reshape(sg, 1, ids.n_points)?;
    Ok((dis, dac))
}

/// Runs the scorer and combines the two heads into final scores; returns the
/// score set and the argmax index (ties toward the lowest index).
pub fn score_goals(
    tape: &mut Tape,
    ids: &GoalScorerIds,
    scene_tokens: Id,
    ego_token: Id,
    w1: f64,
    w2: f64,
    eps_clamp: f64,
) -> Result<(GoalScoreSet, usize)> {
    let (dis_id, dac_id) = score_goals_graph(tape, ids, scene_tokens, ego_token)?;
    let dis = tape.value(dis_id).to_vec();
    let dac = tape.value(dac_id).to_vec();
    let (final_, best) = final_scores(&dis, &dac, w1, w2, eps_clamp)?;
    Ok((GoalScoreSet { dis, dac, final_ }, best))
}
