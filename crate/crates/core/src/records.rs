//! Self-contained planning record: everything needed to audit one planning
//! pass from the file alone — candidates, selection scores and weights, the
//! goal, the centerline the progress term used, and the shadow decision.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::P2;
use crate::model::{GoalPolicy, PlanOutput, PlanSettings};
use crate::scenario::{GoalPoint, Trajectory};
use crate::select::CandidateScore;
use crate::{Error, Result};

/// Version written by [`save_plan_record`]; the only one accepted on load.
pub const PLAN_RECORD_VERSION: u32 = 1;

/// One planning pass, flattened for storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub version: u32,
    pub policy: String,
    pub seed: u64,
    pub n_steps: usize,
    pub sigma: f64,
    pub shift: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub shadow_threshold: f64,
    pub goal: GoalPoint,
    pub goal_index: Option<usize>,
    pub masked_goal: bool,
    pub centerline: Vec<P2>,
    pub candidates: Vec<Trajectory>,
    pub scores: Vec<CandidateScore>,
    pub chosen: usize,
    pub shadow: Trajectory,
    pub shadow_used: bool,
    pub selected: Trajectory,
}

/// Stable name for a goal policy, used in records and reports.
pub fn policy_name(policy: GoalPolicy) -> &'static str {
    match policy {
        GoalPolicy::Predicted => "predicted",
        GoalPolicy::Oracle => "oracle",
        GoalPolicy::Unconditioned => "unconditioned",
    }
}

impl PlanRecord {
    /// Flattens one planning pass and its settings.
    pub fn new(
        out: &PlanOutput,
        policy: GoalPolicy,
        settings: &PlanSettings,
        seed: u64,
        centerline: &[P2],
    ) -> PlanRecord {
        PlanRecord {
            version: PLAN_RECORD_VERSION,
            policy: policy_name(policy).to_string(),
            seed,
            n_steps: settings.n_steps,
            sigma: settings.sigma,
            shift: settings.shift,
            lambda1: settings.lambda1,
            lambda2: settings.lambda2,
            shadow_threshold: settings.shadow_threshold,
            goal: out.goal,
            goal_index: out.goal_index,
            masked_goal: out.masked_goal,
            centerline: centerline.to_vec(),
            candidates: out.candidates.clone(),
            scores: out.scores.clone(),
            chosen: out.chosen,
            shadow: out.shadow.clone(),
            shadow_used: out.shadow_used,
            selected: out.selected.clone(),
        }
    }

    /// Structural checks: counts line up and the chosen index is in range.
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::data("plan record holds no candidates"));
        }
        if !self.masked_goal && self.scores.len() != self.candidates.len() {
            return Err(Error::data(format!(
                "plan record has {} scores for {} candidates",
                self.scores.len(),
                self.candidates.len()
            )));
        }
        if self.chosen >= self.candidates.len() {
            return Err(Error::data(format!(
                "chosen index {} out of range for {} candidates",
                self.chosen,
                self.candidates.len()
            )));
        }
        Ok(())
    }
}

/// Writes a record as pretty JSON.
pub fn save_plan_record(path: &Path, record: &PlanRecord) -> Result<()> {
    record.validate()?;
    let mut text = serde_json::to_string_pretty(record)
        .map_err(|e| Error::data(format!("plan record serialization failed: {e}")))?;
    text.push('\n');
    Ok(std::fs::write(path, text)?)
}

/// Reads and validates a record written by [`save_plan_record`].
pub fn load_plan_record(path: &Path) -> Result<PlanRecord> {
    let text = std::fs::read_to_string(path)?;
    let record: PlanRecord = serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("plan record parse error at line {}: {e}", e.line())))?;
    if record.version != PLAN_RECORD_VERSION {
        return Err(Error::data(format!(
            "plan record version {} unsupported, expected {PLAN_RECORD_VERSION}",
            record.version
        )));
    }
    record.validate()?;
    Ok(record)
}
