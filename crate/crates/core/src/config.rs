//! Run configuration: one TOML file drives every command.
//!
//! Missing keys fall back to desk-scale defaults (small enough to train on
//! a laptop CPU in minutes); unknown keys are rejected with the offending
//! key named. Command-line flags override file values, which override
//! defaults. [`RunConfig::to_toml_string`] emits the effective
//! configuration, and reloading that text reproduces the config exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scenario::KindMix;
use crate::{Error, Result};

/// Dataset generation: sizes and the scenario-kind mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_count: usize,
    pub eval_count: usize,
    pub kind_mix: KindMix,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { train_count: 2000, eval_count: 200, kind_mix: KindMix::default() }
    }
}

/// Goal vocabulary size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub n: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig { n: 256 }
    }
}

/// Shared network dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d: 128, layers: 4, heads: 4 }
    }
}

/// Flow-matching knobs: noise scale, integration steps, candidate count,
/// timestep warp, and condition-dropout probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub sigma: f64,
    pub n_steps: usize,
    pub m: usize,
    pub shift: f64,
    pub p_mask: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { sigma: 0.1, n_steps: 5, m: 32, shift: 3.0, p_mask: 0.1 }
    }
}

/// Scoring and selection weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub w1: f64,
    pub w2: f64,
    pub w4: f64,
    pub w5: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eps_clamp: f64,
    pub shadow_threshold: f64,
    /// Enables the driving-direction subscore; off, it is fixed to 1.
    pub ddc_check: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            w1: crate::goal::DEFAULT_W1,
            w2: crate::goal::DEFAULT_W2,
            w4: crate::goal::DEFAULT_W4,
            w5: crate::goal::DEFAULT_W5,
            lambda1: crate::select::DEFAULT_LAMBDA1,
            lambda2: crate::select::DEFAULT_LAMBDA2,
            eps_clamp: crate::goal::EPS_CLAMP,
            shadow_threshold: crate::select::DEFAULT_SHADOW_THRESHOLD_M,
            ddc_check: false,
        }
    }
}

/// Optimizer and schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub goal_epochs: u64,
    pub flow_epochs: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, batch_size: 64, goal_epochs: 10, flow_epochs: 10 }
    }
}

/// Everything a run needs, grouped by concern.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    pub flow: FlowConfig,
    pub scores: ScoreConfig,
    pub optim: OptimConfig,
}

impl RunConfig {
    /// Range-checks every field. Called by [`load_config`]; call it again
    /// after applying flag overrides.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(Error::config(format!("{key}: {why}")));
        if self.data.train_count == 0 {
            return bad("data.train_count", "must be positive".into());
        }
        if self.data.eval_count == 0 {
            return bad("data.eval_count", "must be positive".into());
        }
        if self.vocab.n < 2 {
            return bad("vocab.n", format!("vocabulary needs at least 2 points, got {}", self.vocab.n));
        }
        if self.model.d == 0 || self.model.heads == 0 || self.model.d % self.model.heads != 0 {
            return bad(
                "model.d",
                format!("hidden size {} must be a positive multiple of heads {}", self.model.d, self.model.heads),
            );
        }
        if self.model.layers == 0 {
            return bad("model.layers", "needs at least one attention layer".into());
        }
        if !(self.flow.sigma > 0.0 && self.flow.sigma.is_finite()) {
            return bad("flow.sigma", format!("must be positive and finite, got {}", self.flow.sigma));
        }
        if self.flow.n_steps == 0 {
            return bad("flow.n_steps", "needs at least one integration step".into());
        }
        if self.flow.m == 0 {
            return bad("flow.m", "needs at least one candidate".into());
        }
        if !(self.flow.shift > 0.0 && self.flow.shift.is_finite()) {
            return bad("flow.shift", format!("must be positive and finite, got {}", self.flow.shift));
        }
        if !(0.0..1.0).contains(&self.flow.p_mask) {
            return bad("flow.p_mask", format!("must be in [0, 1), got {}", self.flow.p_mask));
        }
        for (key, v) in [
            ("scores.w1", self.scores.w1),
            ("scores.w2", self.scores.w2),
            ("scores.w4", self.scores.w4),
            ("scores.w5", self.scores.w5),
            ("scores.lambda1", self.scores.lambda1),
            ("scores.lambda2", self.scores.lambda2),
        ] {
            if !v.is_finite() {
                return bad(key, format!("must be finite, got {v}"));
            }
        }
        if !(self.scores.eps_clamp > 0.0 && self.scores.eps_clamp < 1.0) {
            return bad("scores.eps_clamp", format!("must be in (0, 1), got {}", self.scores.eps_clamp));
        }
        if !(self.scores.shadow_threshold >= 0.0 && self.scores.shadow_threshold.is_finite()) {
            return bad(
                "scores.shadow_threshold",
                format!("must be non-negative, got {}", self.scores.shadow_threshold),
            );
        }
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return bad("optim.lr", format!("must be positive, got {}", self.optim.lr));
        }
        for (key, b) in [("optim.beta1", self.optim.beta1), ("optim.beta2", self.optim.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(key, format!("must be in [0, 1), got {b}"));
            }
        }
        if self.optim.batch_size == 0 {
            return bad("optim.batch_size", "must be positive".into());
        }
        if self.optim.goal_epochs == 0 && self.optim.flow_epochs == 0 {
            return bad("optim.goal_epochs", "at least one stage needs a positive epoch count".into());
        }
        Ok(())
    }

    /// Effective configuration as TOML; reloading it reproduces `self`.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("serialize config: {e}")))
    }
}

/// Parses and validates a config from TOML text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| Error::config(format!("config: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses, and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.vocab.n, 256);
        assert_eq!(cfg.flow.m, 32);
        assert_eq!(cfg.model.d, 128);
        let text = cfg.to_toml_string().unwrap();
        let back = parse_config(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_files_keep_defaults_for_the_rest() {
        let cfg = parse_config("seed = 9\n[flow]\nsigma = 0.3\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.flow.sigma, 0.3);
        assert_eq!(cfg.flow.n_steps, 5); // untouched default
        assert_eq!(cfg.optim.batch_size, 64);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = parse_config("extra_knob = 1\n").unwrap_err();
        assert!(err.to_string().contains("extra_knob"), "{err}");
        let err = parse_config("[flow]\nsgima = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("sgima"), "{err}");
    }

    #[test]
    fn out_of_range_values_are_rejected_by_key() {
        for (text, key) in [
            ("[flow]\nsigma = 0.0\n", "flow.sigma"),
            ("[flow]\np_mask = 1.0\n", "flow.p_mask"),
            ("[model]\nd = 130\n", "model.d"), // not a multiple of 4 heads
            ("[vocab]\nn = 1\n", "vocab.n"),
            ("[optim]\nlr = 0.0\n", "optim.lr"),
            ("[scores]\neps_clamp = 0.0\n", "scores.eps_clamp"),
        ] {
            let err = parse_config(text).unwrap_err();
            assert!(err.to_string().contains(key), "{text} -> {err}");
        }
    }

    #[test]
    fn nonuniform_floats_survive_the_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.flow.sigma = 0.1234567890123456;
        cfg.scores.w5 = 5e-3;
        cfg.optim.lr = 3.0000000000000004e-4;
        let back = parse_config(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }
}
