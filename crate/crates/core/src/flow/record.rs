//! Candidate-set persistence: the sampler's output plus everything needed
//! to reproduce it.
//!
//! Schema (meters/radians, ego frame):
//! ```json
//! {
//!   "version": 1,
//!   "seed": 7,
//!   "n_steps": 5,
//!   "sigma": 0.1,
//!   "shift": 3.0,
//!   "goal": {"x": ..., "y": ..., "heading": ...},
//!   "trajectories": [{"poses": [{"x": ..., "y": ..., "heading": ...}; 8]}, ...]
//! }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scenario::{GoalPoint, Trajectory};
use crate::{Error, Result};

/// Current candidate-set file version.
pub const CANDIDATES_VERSION: u32 = 1;

/// Sampled candidates plus the sampling configuration that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub version: u32,
    pub seed: u64,
    pub n_steps: usize,
    pub sigma: f64,
    pub shift: f64,
    pub goal: GoalPoint,
    pub trajectories: Vec<Trajectory>,
}

/// Writes a candidate set as versioned, pretty-printed JSON.
pub fn save_candidates(path: impl AsRef<Path>, set: &CandidateSet) -> Result<()> {
    if set.trajectories.is_empty() {
        return Err(Error::data("candidate set has no trajectories"));
    }
    let mut text = serde_json::to_string_pretty(set)
        .map_err(|e| Error::data(format!("candidate serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a candidate set back, validating the version.
pub fn load_candidates(path: impl AsRef<Path>) -> Result<CandidateSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let set: CandidateSet = serde_json::from_str(&text).map_err(|e| {
        Error::data(format!(
            "{}: parse error at line {} column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    if set.version != CANDIDATES_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported candidate-set version {} (expected {CANDIDATES_VERSION})",
            path.display(),
            set.version
        )));
    }
    if set.trajectories.is_empty() {
        return Err(Error::data(format!("{}: candidate set has no trajectories", path.display())));
    }
    Ok(set)
}
