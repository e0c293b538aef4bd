//! The assembled planner: scene encoder, goal scorer, flow network, and the
//! selection stage, wired into one checkpointable model.
//!
//! [`PlannerModel::plan`] runs the full inference pipeline for one scene:
//! pick a goal (scored from the vocabulary, taken from the expert endpoint,
//! or masked out entirely), sample M candidate trajectories from the flow
//! network, select by distance-to-goal and route progress, and fall back to
//! a goal-masked shadow trajectory when the winner strays too far from it —
//! a sign the goal itself was unreliable.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, TrainCursor};
use crate::config::RunConfig;
use crate::encoder::{encode_ego, encode_scene, env_condition, EgoStats, EncoderSpec};
use crate::flow::{sample_trajectories, Conditioning, FlowNetSpec, TrajStats};
use crate::goal::{
    score_goals, vocabulary_hash, GoalScoreSet, GoalScorerSpec, GoalVocabulary,
};
use crate::nn::adam::AdamState;
use crate::nn::{ParamStore, Tape};
use crate::rng::derive_seed;
use crate::scenario::{GoalPoint, Sample, Scene, Trajectory};
use crate::select::{
    medoid_index, score_candidates, shadow_fallback, CandidateScore,
};
use crate::{Error, Result};

/// Seed-derivation tag for parameter initialization.
pub const SEED_TAG_INIT: u64 = 0x17;

/// How the conditioning goal is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GoalPolicy {
    /// Scorer-selected vocabulary point.
    Predicted,
    /// Expert endpoint (upper bound on goal quality).
    Oracle,
    /// No goal: the condition token is masked and selection is by medoid.
    Unconditioned,
}

/// Inference knobs, usually lifted from a [`RunConfig`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanSettings {
    pub m: usize,
    pub n_steps: usize,
    pub shift: f64,
    pub sigma: f64,
    pub w1: f64,
    pub w2: f64,
    pub eps_clamp: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub shadow_threshold: f64,
}

impl PlanSettings {
    pub fn from_config(cfg: &RunConfig) -> PlanSettings {
        PlanSettings {
            m: cfg.flow.m,
            n_steps: cfg.flow.n_steps,
            shift: cfg.flow.shift,
            sigma: cfg.flow.sigma,
            w1: cfg.scores.w1,
            w2: cfg.scores.w2,
            eps_clamp: cfg.scores.eps_clamp,
            lambda1: cfg.scores.lambda1,
            lambda2: cfg.scores.lambda2,
            shadow_threshold: cfg.scores.shadow_threshold,
        }
    }
}

/// Everything one planning pass produces.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutput {
    /// Conditioning goal (meaningless when `masked_goal` is set).
    pub goal: GoalPoint,
    /// Vocabulary index of the goal under the predicted policy.
    pub goal_index: Option<usize>,
    pub masked_goal: bool,
    pub candidates: Vec<Trajectory>,
    /// Per-candidate selection scores; empty under the unconditioned policy.
    pub scores: Vec<CandidateScore>,
    /// Winning candidate index.
    pub chosen: usize,
    /// Goal-masked fallback (medoid of a masked batch over the same source
    /// noise); the selected candidate itself when the plan is goal-masked.
    pub shadow: Trajectory,
    pub shadow_used: bool,
    /// Final output: the winner, or the shadow if it was used.
    pub selected: Trajectory,
}

/// Generates the goal-masked shadow batch and reduces it to its medoid: the
/// fallback trajectory used when the goal looks unreliable.
///
/// The batch reuses the caller's seed, so each masked candidate shares its
/// source-noise draw with the goal-conditioned candidate of the same index —
/// main-vs-shadow deviation then reflects the goal's influence, not
/// sampling luck.
pub fn masked_shadow(
    model: &PlannerModel,
    env: Vec<f64>,
    settings: &PlanSettings,
    seed: u64,
) -> Result<Trajectory> {
    let masked = Conditioning {
        env,
        goal: GoalPoint { x: 0.0, y: 0.0, heading: 0.0 },
        mask_env: false,
        mask_goal: true,
    };
    let batch = sample_trajectories(
        &model.flow,
        &model.store,
        &model.traj_stats,
        &masked,
        settings.m,
        settings.n_steps,
        settings.shift,
        settings.sigma,
        seed,
    )?;
    Ok(batch[medoid_index(&batch)?])
}

/// Parameters plus the fixed artifacts they were trained against.
#[derive(Clone, Debug)]
pub struct PlannerModel {
    pub encoder: EncoderSpec,
    pub scorer: GoalScorerSpec,
    pub flow: FlowNetSpec,
    pub store: ParamStore,
    pub ego_stats: EgoStats,
    pub traj_stats: TrajStats,
    pub vocab: GoalVocabulary,
    pub vocab_hash: String,
}

impl PlannerModel {
    /// Fresh model: random parameters, normalization statistics from the
    /// training set, bound to `vocab`.
    pub fn init(
        cfg: &RunConfig,
        vocab: GoalVocabulary,
        train: &[Sample],
        seed: u64,
    ) -> Result<PlannerModel> {
        vocab.validate()?;
        let (d, heads, layers) = (cfg.model.d, cfg.model.heads, cfg.model.layers);
        let encoder = EncoderSpec::new(d, heads)?;
        let scorer = GoalScorerSpec::new(d, heads, layers, vocab.n())?;
        let flow = FlowNetSpec::new(d, heads, layers)?;

        let ego_stats = EgoStats::from_samples(train)?;
        let trajs: Vec<Trajectory> = train.iter().map(|s| s.tau_gt.clone()).collect();
        let traj_stats = TrajStats::from_trajectories(&trajs)?;

        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SEED_TAG_INIT]));
        encoder.register(&mut store, &mut rng)?;
        scorer.register(&mut store, &mut rng)?;
        flow.register(&mut store, &mut rng)?;
        ego_stats.write_to_store(&mut store)?;
        traj_stats.write_to_store(&mut store)?;

        let vocab_hash = vocabulary_hash(&vocab)?;
        Ok(PlannerModel { encoder, scorer, flow, store, ego_stats, traj_stats, vocab, vocab_hash })
    }

    /// Rebuilds a model from a checkpoint. The vocabulary must hash to the
    /// value stored at save time.
    pub fn from_checkpoint(
        cfg: &RunConfig,
        vocab: GoalVocabulary,
        ckpt: Checkpoint,
    ) -> Result<PlannerModel> {
        vocab.validate()?;
        let vocab_hash = vocabulary_hash(&vocab)?;
        if vocab_hash != ckpt.vocab_hash {
            return Err(Error::checkpoint(format!(
                "vocabulary hash {} does not match the checkpoint's {}",
                vocab_hash, ckpt.vocab_hash
            )));
        }
        let (d, heads, layers) = (cfg.model.d, cfg.model.heads, cfg.model.layers);
        let f_v = ckpt.params.get("goal.f_v")?;
        if f_v.shape != [vocab.n(), d] {
            return Err(Error::checkpoint(format!(
                "goal embedding shape {:?} does not match vocabulary size {} and hidden size {d}",
                f_v.shape,
                vocab.n()
            )));
        }
        let ego_stats = EgoStats::read_from_store(&ckpt.params)?;
        let traj_stats = TrajStats::read_from_store(&ckpt.params)?;
        Ok(PlannerModel {
            encoder: EncoderSpec::new(d, heads)?,
            scorer: GoalScorerSpec::new(d, heads, layers, vocab.n())?,
            flow: FlowNetSpec::new(d, heads, layers)?,
            store: ckpt.params,
            ego_stats,
            traj_stats,
            vocab,
            vocab_hash,
        })
    }

    /// Snapshot for saving: parameters move out by clone, training state is
    /// attached by the caller.
    pub fn to_checkpoint(&self, cursor: TrainCursor, adam: Option<AdamState>) -> Checkpoint {
        Checkpoint {
            params: self.store.clone(),
            vocab_hash: self.vocab_hash.clone(),
            cursor,
            adam,
        }
    }

    /// Fused environment feature (length `d`) for one scene.
    pub fn env_vector(&self, scene: &Scene) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let ids = self.encoder.bind(&mut tape, &self.store, false)?;
        let scene_tokens = encode_scene(&mut tape, &ids, scene)?;
        let ego_token = encode_ego(&mut tape, &ids, &scene.ego, &self.ego_stats)?;
        let env = env_condition(&mut tape, &ids, scene_tokens, ego_token)?;
        Ok(tape.value(env).to_vec())
    }

    /// Scores every vocabulary point for the scene; returns the score set
    /// and the argmax index.
    pub fn score_scene_goals(
        &self,
        scene: &Scene,
        w1: f64,
        w2: f64,
        eps_clamp: f64,
    ) -> Result<(GoalScoreSet, usize)> {
        let mut tape = Tape::inference();
        let enc = self.encoder.bind(&mut tape, &self.store, false)?;
        let scene_tokens = encode_scene(&mut tape, &enc, scene)?;
        let ego_token = encode_ego(&mut tape, &enc, &scene.ego, &self.ego_stats)?;
        let ids = self.scorer.bind(&mut tape, &self.store, false)?;
        score_goals(&mut tape, &ids, scene_tokens, ego_token, w1, w2, eps_clamp)
    }

    /// Full pipeline for one scene. `tau_gt` is required by the oracle
    /// policy only. Deterministic given (`policy`, `settings`, `seed`).
    pub fn plan(
        &self,
        scene: &Scene,
        policy: GoalPolicy,
        tau_gt: Option<&Trajectory>,
        settings: &PlanSettings,
        seed: u64,
    ) -> Result<PlanOutput> {
        let (goal, goal_index, masked_goal) = match policy {
            GoalPolicy::Predicted => {
                let (_, best) =
                    self.score_scene_goals(scene, settings.w1, settings.w2, settings.eps_clamp)?;
                (self.vocab.points[best], Some(best), false)
            }
            GoalPolicy::Oracle => {
                let gt = tau_gt.ok_or_else(|| {
                    Error::config("oracle goal policy needs the expert trajectory")
                })?;
                (GoalPoint::from(gt.endpoint()), None, false)
            }
            GoalPolicy::Unconditioned => {
                (GoalPoint { x: 0.0, y: 0.0, heading: 0.0 }, None, true)
            }
        };

        let env = self.env_vector(scene)?;
        let cond = Conditioning { env: env.clone(), goal, mask_env: false, mask_goal: masked_goal };
        let candidates = sample_trajectories(
            &self.flow,
            &self.store,
            &self.traj_stats,
            &cond,
            settings.m,
            settings.n_steps,
            settings.shift,
            settings.sigma,
            seed,
        )?;

        let (chosen, scores) = if masked_goal {
            (medoid_index(&candidates)?, Vec::new())
        } else {
            score_candidates(
                &candidates,
                &scene.centerline,
                &goal,
                settings.lambda1,
                settings.lambda2,
            )?
        };

        // An already-masked plan is its own shadow and never falls back.
        let (shadow, shadow_used, selected) = if masked_goal {
            (candidates[chosen], false, candidates[chosen])
        } else {
            let shadow = masked_shadow(self, env, settings, seed)?;
            let (sel, used) =
                shadow_fallback(&candidates[chosen], &shadow, settings.shadow_threshold);
            let selected = *sel;
            (shadow, used, selected)
        };
        Ok(PlanOutput {
            goal,
            goal_index,
            masked_goal,
            candidates,
            scores,
            chosen,
            shadow,
            shadow_used,
            selected,
        })
    }
}
