//! Two-stage training with deterministic, resumable state.
//!
//! Stage one trains the scene encoder and goal scorer against vocabulary
//! targets (soft distance scores and per-point drivable-area compliance).
//! Stage two freezes them and trains the flow network to match the
//! straight-path velocity toward normalized expert trajectories, with
//! random condition dropout.
//!
//! Determinism: sample order, noise draws, and dropout decisions are all
//! derived from `(seed, stage, epoch[, sample index])` — never from a
//! shared stream — so a run interrupted at any epoch boundary and resumed
//! from its checkpoint finishes bit-identically to an uninterrupted run,
//! in parallel or sequential mode. Gradients are accumulated per fixed
//! 8-sample chunk and reduced in chunk order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, TrainCursor, TrainStage};
use crate::config::RunConfig;
use crate::encoder::{encode_ego, encode_scene};
use crate::flow::{
    condition_mask, flow_loss, predict_velocity, sample_training_pair, Conditioning,
    NormalizedTrajectory, FLAT_DIM,
};
use crate::goal::{
    goal_losses, score_goals_graph, target_dac_scores, target_distance_scores, GoalVocabulary,
};
use crate::model::PlannerModel;
use crate::nn::adam::AdamState;
use crate::nn::{Adam, Id, Tape};
use crate::par;
use crate::rng::derive_seed;
use crate::scenario::Sample;
use crate::{Error, Result};

/// Seed-derivation tag for everything the trainer draws.
pub const SEED_TAG_TRAIN: u64 = 0x7E;
/// Samples per gradient chunk (one tape each; reduced in chunk order).
const GRAD_CHUNK: usize = 8;

type Grads = BTreeMap<String, Vec<f64>>;

/// One epoch's mean loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub stage: TrainStage,
    /// 1-based epoch number within the stage.
    pub epoch: u64,
    pub loss: f64,
}

/// Trained model plus where training stopped and the optimizer state
/// needed to continue.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: PlannerModel,
    pub cursor: TrainCursor,
    pub adam: Option<AdamState>,
    pub logs: Vec<EpochLog>,
}

impl TrainOutcome {
    /// Snapshot ready for [`crate::checkpoint::save_checkpoint`].
    pub fn to_checkpoint(&self) -> Checkpoint {
        self.model.to_checkpoint(self.cursor, self.adam.clone())
    }
}

/// Shuffled sample order for one epoch, derived — not streamed — so it is
/// identical on resume.
fn epoch_order(n: usize, seed: u64, stage: TrainStage, epoch: u64) -> Vec<usize> {
    let stage_tag = match stage {
        TrainStage::Goal => 1,
        TrainStage::Flow => 2,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SEED_TAG_TRAIN, stage_tag, epoch]));
    order.shuffle(&mut rng);
    order
}

/// Adds `from` into `into` elementwise.
fn accumulate(into: &mut Grads, from: Grads) {
    for (name, g) in from {
        match into.get_mut(&name) {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            None => {
                into.insert(name, g);
            }
        }
    }
}

/// Runs one batch: chunks of `GRAD_CHUNK` samples each build a tape via
/// `forward`, losses are summed per chunk and scaled by `1/batch`, and the
/// chunk gradients are reduced in chunk order. Returns the summed raw loss
/// and the batch gradients; the caller steps the optimizer.
fn run_batch<'p>(
    batch: &[usize],
    forward: impl Fn(&mut Tape<'p>, &[usize]) -> Result<Id> + Sync,
) -> Result<(f64, Grads)> {
    let chunks: Vec<&[usize]> = batch.chunks(GRAD_CHUNK).collect();
    let results = par::map_indexed(chunks.len(), |ci| -> Result<(f64, Grads)> {
        let mut tape = Tape::new();
        let sum = forward(&mut tape, chunks[ci])?;
        let value = tape.value(sum)[0];
        let scaled = tape.scale(sum, 1.0 / batch.len() as f64);
        tape.backward(scaled)?;
        Ok((value, tape.param_grads()))
    });
    let mut grads = Grads::new();
    let mut total = 0.0;
    for r in results {
        let (v, g) = r?;
        total += v;
        accumulate(&mut grads, g);
    }
    Ok((total, grads))
}

/// Per-sample goal targets, fixed for a (vocabulary, dataset) pair.
fn goal_targets(
    vocab: &GoalVocabulary,
    samples: &[Sample],
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    samples
        .iter()
        .map(|s| {
            let dis = target_distance_scores(vocab, &s.goal_gt)?;
            let dac = target_dac_scores(
                vocab,
                &s.scene.drivable_area,
                s.scene.ego.half_len,
                s.scene.ego.half_wid,
            )?;
            Ok((dis, dac))
        })
        .collect()
}

/// One encoder + goal-scorer epoch; returns the mean loss.
fn goal_epoch(
    model: &mut PlannerModel,
    samples: &[Sample],
    targets: &[(Vec<f64>, Vec<f64>)],
    cfg: &RunConfig,
    opt: &mut Adam,
    epoch: u64,
) -> Result<f64> {
    let order = epoch_order(samples.len(), cfg.seed, TrainStage::Goal, epoch);
    let mut total = 0.0;
    for batch in order.chunks(cfg.optim.batch_size) {
        let store = &model.store;
        let (encoder, scorer, ego_stats) = (&model.encoder, &model.scorer, &model.ego_stats);
        let (sum, grads) = run_batch(batch, |tape, chunk| {
            let enc = encoder.bind(tape, store, true)?;
            let ids = scorer.bind(tape, store, true)?;
            let mut sum: Option<Id> = None;
            for &si in chunk {
                let s = &samples[si];
                let scene_tokens = encode_scene(tape, &enc, &s.scene)?;
                let ego_token = encode_ego(tape, &enc, &s.scene.ego, ego_stats)?;
                let (dis, dac) = score_goals_graph(tape, &ids, scene_tokens, ego_token)?;
                let (tdis, tdac) = &targets[si];
                let l = goal_losses(tape, dis, dac, tdis, tdac, cfg.scores.w4, cfg.scores.w5)?;
                sum = Some(match sum {
                    Some(acc) => tape.add(acc, l)?,
                    None => l,
                });
            }
            Ok(sum.expect("batch chunks are nonempty"))
        })?;
        total += sum;
        opt.step(&mut model.store, &grads)?;
    }
    Ok(total / samples.len() as f64)
}

/// One flow-network epoch (encoder and scorer frozen); returns the mean
/// loss. `envs` and `tau_norms` are precomputed per sample.
#[allow(clippy::too_many_arguments)]
fn flow_epoch(
    model: &mut PlannerModel,
    samples: &[Sample],
    envs: &[Vec<f64>],
    tau_norms: &[NormalizedTrajectory],
    cfg: &RunConfig,
    opt: &mut Adam,
    epoch: u64,
) -> Result<f64> {
    let order = epoch_order(samples.len(), cfg.seed, TrainStage::Flow, epoch);
    let mut total = 0.0;
    for batch in order.chunks(cfg.optim.batch_size) {
        let store = &model.store;
        let flow = &model.flow;
        let (sum, grads) = run_batch(batch, |tape, chunk| {
            let ids = flow.bind(tape, store, true)?;
            let mut sum: Option<Id> = None;
            for &si in chunk {
                // draws depend only on (seed, stage, epoch, sample), never
                // on batch composition
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed,
                    &[SEED_TAG_TRAIN, 2, epoch, si as u64],
                ));
                let (state, v_t) =
                    sample_training_pair(&tau_norms[si], cfg.flow.sigma, &mut rng)?;
                let base = Conditioning::new(envs[si].clone(), samples[si].goal_gt);
                let cond = condition_mask(&base, &mut rng, cfg.flow.p_mask)?;
                let x_id = tape.constant(state.x_t.to_vec(), 1, FLAT_DIM)?;
                let v_hat = predict_velocity(tape, &ids, x_id, state.t, &cond)?;
                let l = flow_loss(tape, v_hat, &v_t)?;
                sum = Some(match sum {
                    Some(acc) => tape.add(acc, l)?,
                    None => l,
                });
            }
            Ok(sum.expect("batch chunks are nonempty"))
        })?;
        total += sum;
        opt.step(&mut model.store, &grads)?;
    }
    Ok(total / samples.len() as f64)
}

/// Trains from scratch or continues `resume`. `epoch_budget` caps how many
/// epochs this call runs (across both stages); `None` runs to completion.
pub fn train(
    cfg: &RunConfig,
    samples: &[Sample],
    vocab: GoalVocabulary,
    resume: Option<Checkpoint>,
    epoch_budget: Option<u64>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let (mut model, mut cursor, mut adam_state) = match resume {
        Some(ckpt) => {
            let cursor = ckpt.cursor;
            let adam = ckpt.adam.clone();
            (PlannerModel::from_checkpoint(cfg, vocab, ckpt)?, cursor, adam)
        }
        None => (
            PlannerModel::init(cfg, vocab, samples, cfg.seed)?,
            TrainCursor { stage: TrainStage::Goal, epochs_done: 0 },
            None,
        ),
    };
    let mut budget = epoch_budget.unwrap_or(u64::MAX);
    let mut logs = Vec::new();

    if cursor.stage == TrainStage::Goal {
        if cursor.epochs_done < cfg.optim.goal_epochs && budget > 0 {
            let targets = goal_targets(&model.vocab, samples)?;
            let mut opt = make_adam(cfg, adam_state.take());
            while cursor.epochs_done < cfg.optim.goal_epochs && budget > 0 {
                let loss =
                    goal_epoch(&mut model, samples, &targets, cfg, &mut opt, cursor.epochs_done)?;
                cursor.epochs_done += 1;
                budget -= 1;
                logs.push(EpochLog {
                    stage: TrainStage::Goal,
                    epoch: cursor.epochs_done,
                    loss,
                });
            }
            adam_state = Some(opt.state().clone());
        }
        // stage complete: move on with a fresh optimizer
        if cursor.epochs_done == cfg.optim.goal_epochs {
            cursor = TrainCursor { stage: TrainStage::Flow, epochs_done: 0 };
            adam_state = None;
        }
    }

    if cursor.stage == TrainStage::Flow && cursor.epochs_done < cfg.optim.flow_epochs && budget > 0
    {
        let env_results = par::map_indexed(samples.len(), |i| model.env_vector(&samples[i].scene));
        let envs = env_results.into_iter().collect::<Result<Vec<_>>>()?;
        let tau_norms: Vec<NormalizedTrajectory> =
            samples.iter().map(|s| model.traj_stats.normalize(&s.tau_gt)).collect();
        let mut opt = make_adam(cfg, adam_state.take());
        while cursor.epochs_done < cfg.optim.flow_epochs && budget > 0 {
            let loss = flow_epoch(
                &mut model,
                samples,
                &envs,
                &tau_norms,
                cfg,
                &mut opt,
                cursor.epochs_done,
            )?;
            cursor.epochs_done += 1;
            budget -= 1;
            logs.push(EpochLog { stage: TrainStage::Flow, epoch: cursor.epochs_done, loss });
        }
        adam_state = Some(opt.state().clone());
    }

    Ok(TrainOutcome { model, cursor, adam: adam_state, logs })
}

fn make_adam(cfg: &RunConfig, state: Option<AdamState>) -> Adam {
    let mut opt = match state {
        Some(s) => Adam::with_state(cfg.optim.lr, s),
        None => Adam::new(cfg.optim.lr),
    };
    opt.beta1 = cfg.optim.beta1;
    opt.beta2 = cfg.optim.beta2;
    opt
}
