//! Dataset persistence: versioned JSON, tolerant of unknown fields.
//!
//! Schema (all geometry in meters, angles in radians, ego frame):
//! ```json
//! {
//!   "version": 1,
//!   "samples": [
//!     {
//!       "scene": {
//!         "drivable_area": [{"x": ..., "y": ...}, ...],
//!         "centerline":    [{"x": ..., "y": ...}, ...],
//!         "agents": [{"center": {...}, "heading": ..., "half_len": ...,
//!                     "half_wid": ..., "velocity": [vx, vy]}, ...],
//!         "ego": {"velocity": [vx, vy], "acceleration": [ax, ay],
//!                  "heading": ..., "half_len": ..., "half_wid": ...},
//!         "kind": "straight" | "left" | "right" | "yield"
//!       },
//!       "tau_gt": {"poses": [{"x": ..., "y": ..., "heading": ...}; 8]},
//!       "goal_gt": {"x": ..., "y": ..., "heading": ...}
//!     }
//!   ]
//! }
//! ```
//! Readers ignore unknown fields, so files written by newer minor revisions
//! still load; a changed `version` is rejected outright.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::{Error, Result};

/// Current dataset file version.
pub const DATASET_VERSION: u32 = 1;

/// On-disk dataset container.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    pub version: u32,
    pub samples: Vec<Sample>,
}

/// Writes samples as versioned, pretty-printed JSON.
pub fn save_dataset(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let dataset = Dataset { version: DATASET_VERSION, samples: samples.to_vec() };
    let mut text = serde_json::to_string_pretty(&dataset)
        .map_err(|e| Error::data(format!("dataset serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a dataset back, validating the version and every sample. Returns
/// either the full sample list or an error — never a partial dataset.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let dataset: Dataset = serde_json::from_str(&text).map_err(|e| {
        Error::data(format!(
            "{}: parse error at line {} column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    if dataset.version != DATASET_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported dataset version {} (expected {DATASET_VERSION})",
            path.display(),
            dataset.version
        )));
    }
    for (i, sample) in dataset.samples.iter().enumerate() {
        sample
            .validate()
            .map_err(|e| Error::data(format!("{}: sample {i} invalid: {e}", path.display())))?;
    }
    Ok(dataset.samples)
}
