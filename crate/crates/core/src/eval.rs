//! Dataset-level evaluation: run a policy across samples, score every
//! outcome with the metric suite, and aggregate.
//!
//! Everything here is deterministic given (model, dataset, settings, seed)
//! except the wall-clock timing in ablation rows, which is measured and
//! reported but never feeds back into scores or selection.

use std::time::Instant;

use crate::flow::{sample_trajectories, Conditioning};
use crate::metrics::{evaluate_trajectory, MetricReport};
use crate::model::{masked_shadow, GoalPolicy, PlanSettings, PlannerModel};
use crate::par;
use crate::rng::derive_seed;
use crate::scenario::Sample;
use crate::select::{score_candidates, shadow_fallback};
use crate::{Error, Result};

/// Seed-derivation tag for per-sample evaluation randomness.
pub const SEED_TAG_EVAL: u64 = 0xE4;

/// What drives the trajectory under evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalPolicy {
    /// Full pipeline with the scorer-predicted goal.
    Model,
    /// Full pipeline with the expert endpoint as goal.
    GoalOracle,
    /// Goal-masked sampling with medoid selection.
    Unconditioned,
    /// The expert trajectory itself (upper reference row).
    Expert,
}

/// Stable row label for reports.
pub fn eval_policy_name(policy: EvalPolicy) -> &'static str {
    match policy {
        EvalPolicy::Model => "model",
        EvalPolicy::GoalOracle => "goal_oracle",
        EvalPolicy::Unconditioned => "unconditioned",
        EvalPolicy::Expert => "expert",
    }
}

/// One evaluated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleResult {
    pub index: usize,
    pub report: MetricReport,
    pub shadow_used: bool,
}

/// Componentwise means plus the shadow-fallback rate.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub policy: String,
    pub count: usize,
    pub mean: MetricReport,
    pub shadow_rate: f64,
}

/// A finished evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRun {
    pub policy: String,
    pub results: Vec<SampleResult>,
    pub summary: EvalSummary,
}

/// Componentwise mean of the per-sample reports — in particular the
/// aggregate driving score is the mean of per-sample scores, not a product
/// of mean subscores.
fn summarize(policy: &str, results: &[SampleResult]) -> EvalSummary {
    let n = results.len() as f64;
    let mut sum = MetricReport {
        s_nc: 0.0,
        s_dac: 0.0,
        s_ttc: 0.0,
        s_ep: 0.0,
        s_cf: 0.0,
        s_ddc: 0.0,
        s_pdm: 0.0,
    };
    let mut shadows = 0usize;
    for r in results {
        sum.s_nc += r.report.s_nc;
        sum.s_dac += r.report.s_dac;
        sum.s_ttc += r.report.s_ttc;
        sum.s_ep += r.report.s_ep;
        sum.s_cf += r.report.s_cf;
        sum.s_ddc += r.report.s_ddc;
        sum.s_pdm += r.report.s_pdm;
        shadows += r.shadow_used as usize;
    }
    EvalSummary {
        policy: policy.to_string(),
        count: results.len(),
        mean: MetricReport {
            s_nc: sum.s_nc / n,
            s_dac: sum.s_dac / n,
            s_ttc: sum.s_ttc / n,
            s_ep: sum.s_ep / n,
            s_cf: sum.s_cf / n,
            s_ddc: sum.s_ddc / n,
            s_pdm: sum.s_pdm / n,
        },
        shadow_rate: shadows as f64 / n,
    }
}

/// Evaluates `policy` on every sample. Per-sample seeds are derived from
/// `seed` and the sample index, so results are order-independent and
/// reproducible.
pub fn evaluate_policy(
    model: &PlannerModel,
    samples: &[Sample],
    policy: EvalPolicy,
    settings: &PlanSettings,
    seed: u64,
    ddc_check: bool,
) -> Result<EvalRun> {
    if samples.is_empty() {
        return Err(Error::data("evaluation set is empty"));
    }
    let results = par::map_indexed(samples.len(), |i| -> Result<SampleResult> {
        let s = &samples[i];
        match policy {
            EvalPolicy::Expert => {
                let report = evaluate_trajectory(&s.tau_gt, &s.scene, &s.tau_gt, ddc_check)?;
                Ok(SampleResult { index: i, report, shadow_used: false })
            }
            EvalPolicy::Model | EvalPolicy::GoalOracle | EvalPolicy::Unconditioned => {
                let goal_policy = match policy {
                    EvalPolicy::Model => GoalPolicy::Predicted,
                    EvalPolicy::GoalOracle => GoalPolicy::Oracle,
                    _ => GoalPolicy::Unconditioned,
                };
                let out = model.plan(
                    &s.scene,
                    goal_policy,
                    Some(&s.tau_gt),
                    settings,
                    derive_seed(seed, &[SEED_TAG_EVAL, i as u64]),
                )?;
                let report = evaluate_trajectory(&out.selected, &s.scene, &s.tau_gt, ddc_check)?;
                Ok(SampleResult { index: i, report, shadow_used: out.shadow_used })
            }
        }
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let name = eval_policy_name(policy);
    let summary = summarize(name, &results);
    Ok(EvalRun { policy: name.to_string(), results, summary })
}

/// One ablation measurement: subscore means at a swept value, plus the
/// mean per-sample wall-clock time spent inside trajectory denoising.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub axis: String,
    pub value: f64,
    pub mean: MetricReport,
    pub shadow_rate: f64,
    pub mean_denoise_time_s: f64,
    /// True when this value was evaluated with a model trained at a
    /// different setting.
    pub model_reused: bool,
}

/// Shared ablation loop: predicted-goal pipeline with `settings`, timing
/// only the two denoising calls (goal-conditioned batch + masked shadow
/// batch). Samples run sequentially so the timing is not distorted by outer
/// parallelism. Selection mirrors [`PlannerModel::plan`] exactly — a test
/// pins the two paths to identical scores.
fn ablate_one(
    model: &PlannerModel,
    samples: &[Sample],
    settings: &PlanSettings,
    seed: u64,
    ddc_check: bool,
    axis: &str,
    value: f64,
    model_reused: bool,
) -> Result<AblationRow> {
    if samples.is_empty() {
        return Err(Error::data("ablation set is empty"));
    }
    let mut results = Vec::with_capacity(samples.len());
    let mut denoise = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let (_, best) = model.score_scene_goals(&s.scene, settings.w1, settings.w2, settings.eps_clamp)?;
        let goal = model.vocab.points[best];
        let env = model.env_vector(&s.scene)?;
        let cond =
            Conditioning { env: env.clone(), goal, mask_env: false, mask_goal: false };
        let sample_seed = derive_seed(seed, &[SEED_TAG_EVAL, i as u64]);
        let t0 = Instant::now();
        let candidates = sample_trajectories(
            &model.flow,
            &model.store,
            &model.traj_stats,
            &cond,
            settings.m,
            settings.n_steps,
            settings.shift,
            settings.sigma,
            sample_seed,
        )?;
        let shadow = masked_shadow(model, env, settings, sample_seed)?;
        denoise += t0.elapsed().as_secs_f64();
        let (chosen, _) = score_candidates(
            &candidates,
            &s.scene.centerline,
            &goal,
            settings.lambda1,
            settings.lambda2,
        )?;
        let (sel, shadow_used) =
            shadow_fallback(&candidates[chosen], &shadow, settings.shadow_threshold);
        let report = evaluate_trajectory(sel, &s.scene, &s.tau_gt, ddc_check)?;
        results.push(SampleResult { index: i, report, shadow_used });
    }
    let summary = summarize(axis, &results);
    Ok(AblationRow {
        axis: axis.to_string(),
        value,
        mean: summary.mean,
        shadow_rate: summary.shadow_rate,
        mean_denoise_time_s: denoise / samples.len() as f64,
        model_reused,
    })
}

/// Sweeps the number of denoising steps with one model.
pub fn ablate_steps(
    model: &PlannerModel,
    samples: &[Sample],
    base: &PlanSettings,
    values: &[usize],
    seed: u64,
    ddc_check: bool,
) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::config("steps ablation needs at least one value"));
    }
    values
        .iter()
        .map(|&v| {
            let settings = PlanSettings { n_steps: v, ..*base };
            ablate_one(model, samples, &settings, seed, ddc_check, "n_steps", v as f64, false)
        })
        .collect()
}

/// Sweeps the sampling noise scale. Each entry pairs a σ with the model to
/// evaluate it under and whether that model was trained at a different σ
/// (reuse is reported, not hidden).
pub fn ablate_sigma(
    entries: &[(f64, &PlannerModel, bool)],
    samples: &[Sample],
    base: &PlanSettings,
    seed: u64,
    ddc_check: bool,
) -> Result<Vec<AblationRow>> {
    if entries.is_empty() {
        return Err(Error::config("sigma ablation needs at least one value"));
    }
    entries
        .iter()
        .map(|&(sigma, model, reused)| {
            let settings = PlanSettings { sigma, ..*base };
            ablate_one(model, samples, &settings, seed, ddc_check, "sigma", sigma, reused)
        })
        .collect()
}

/// Fixed-width text table over policy summaries.
pub fn render_text(summaries: &[EvalSummary]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "policy", "n", "S_NC", "S_DAC", "S_TTC", "S_EP", "S_CF", "S_DDC", "S_PDM", "shadow"
    ));
    for s in summaries {
        out.push_str(&format!(
            "{:<16} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            s.policy,
            s.count,
            s.mean.s_nc,
            s.mean.s_dac,
            s.mean.s_ttc,
            s.mean.s_ep,
            s.mean.s_cf,
            s.mean.s_ddc,
            s.mean.s_pdm,
            s.shadow_rate
        ));
    }
    out
}

/// Per-sample CSV across runs. Floats use the shortest exact decimal form,
/// so identical runs produce identical bytes.
pub fn render_csv(runs: &[EvalRun]) -> String {
    let mut out =
        String::from("policy,index,s_nc,s_dac,s_ttc,s_ep,s_cf,s_ddc,s_pdm,shadow_used\n");
    for run in runs {
        for r in &run.results {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                run.policy,
                r.index,
                r.report.s_nc,
                r.report.s_dac,
                r.report.s_ttc,
                r.report.s_ep,
                r.report.s_cf,
                r.report.s_ddc,
                r.report.s_pdm,
                r.shadow_used
            ));
        }
    }
    out
}

/// Ablation CSV: one row per swept value. Contains the one timing column;
/// everything else is deterministic.
pub fn render_ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "axis,value,s_nc,s_dac,s_ttc,s_ep,s_cf,s_ddc,s_pdm,shadow_rate,mean_denoise_time_s,model_reused\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.axis,
            r.value,
            r.mean.s_nc,
            r.mean.s_dac,
            r.mean.s_ttc,
            r.mean.s_ep,
            r.mean.s_cf,
            r.mean.s_ddc,
            r.mean.s_pdm,
            r.shadow_rate,
            r.mean_denoise_time_s,
            r.model_reused
        ));
    }
    out
}
