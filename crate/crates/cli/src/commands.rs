//! Implementations of the six subcommands.
//!
//! Every command resolves its settings the same way: load the config file
//! when given (defaults otherwise), apply flag overrides on top, validate,
//! then run. `--emit-config` writes the resulting effective config so a run
//! can be reproduced from that file alone.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use flowplan_core::checkpoint::{load_checkpoint, save_checkpoint, TrainStage};
use flowplan_core::config::{load_config, RunConfig};
use flowplan_core::eval::{
    ablate_sigma, ablate_steps, evaluate_policy, render_ablation_csv, render_csv, render_text,
    EvalPolicy,
};
use flowplan_core::goal::{build_vocabulary_traced, load_vocabulary, save_vocabulary};
use flowplan_core::model::{GoalPolicy, PlanSettings, PlannerModel};
use flowplan_core::records::{save_plan_record, PlanRecord};
use flowplan_core::scenario::{generate_dataset, load_dataset, save_dataset, Sample};
use flowplan_core::train::train;
use flowplan_core::{Error, Result};

/// Flags shared by every subcommand.
#[derive(Args, Debug)]
pub struct CommonArgs {
    /// Config file (TOML); missing keys fall back to defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the effective config (defaults + file + flags) to this path
    #[arg(long, value_name = "PATH")]
    pub emit_config: Option<PathBuf>,
}

impl CommonArgs {
    /// Loads the config file (or defaults), hands it to `apply` for flag
    /// overrides, validates, and optionally emits the effective config.
    fn resolve(&self, apply: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        apply(&mut cfg);
        cfg.validate()?;
        if let Some(path) = &self.emit_config {
            fs::write(path, cfg.to_toml_string()?)?;
            println!("wrote effective config to {}", path.display());
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output dataset file
    #[arg(long)]
    pub out: PathBuf,
    /// Generation seed (overrides config)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of samples (overrides config train_count)
    #[arg(long)]
    pub count: Option<usize>,
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let cfg = args.common.resolve(|cfg| {
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(count) = args.count {
            cfg.data.train_count = count;
        }
    })?;
    let samples = generate_dataset(cfg.seed, cfg.data.train_count, &cfg.data.kind_mix)?;
    save_dataset(&args.out, &samples)?;
    println!("wrote {} samples to {} (seed {})", samples.len(), args.out.display(), cfg.seed);
    Ok(())
}

#[derive(Args, Debug)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset whose expert endpoints are clustered
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output vocabulary file
    #[arg(long)]
    pub out: PathBuf,
    /// Vocabulary size (overrides config)
    #[arg(long)]
    pub n: Option<usize>,
    /// Clustering seed (overrides config)
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn build_vocab(args: &BuildVocabArgs) -> Result<()> {
    let cfg = args.common.resolve(|cfg| {
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(n) = args.n {
            cfg.vocab.n = n;
        }
    })?;
    let samples = load_dataset(&args.dataset)?;
    let endpoints: Vec<_> = samples.iter().map(|s| s.goal_gt).collect();
    let (vocab, inertia) = build_vocabulary_traced(&endpoints, cfg.vocab.n, cfg.seed)?;
    for (i, v) in inertia.iter().enumerate() {
        println!("kmeans iter {:>3} inertia={v}", i + 1);
    }
    save_vocabulary(&args.out, &vocab)?;
    println!(
        "wrote {} goal points to {} (seed {}, {} iterations)",
        vocab.n(),
        args.out.display(),
        cfg.seed,
        vocab.iterations
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training dataset
    #[arg(long)]
    pub dataset: PathBuf,
    /// Goal vocabulary file
    #[arg(long)]
    pub vocab: PathBuf,
    /// Output checkpoint file
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint instead of initializing
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs (for interruptible runs)
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Initialization/shuffle seed (overrides config)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learning rate (overrides config)
    #[arg(long)]
    pub lr: Option<f64>,
    /// Batch size (overrides config)
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Goal-stage epochs (overrides config)
    #[arg(long)]
    pub goal_epochs: Option<u64>,
    /// Flow-stage epochs (overrides config)
    #[arg(long)]
    pub flow_epochs: Option<u64>,
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = args.common.resolve(|cfg| {
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(lr) = args.lr {
            cfg.optim.lr = lr;
        }
        if let Some(batch) = args.batch_size {
            cfg.optim.batch_size = batch;
        }
        if let Some(n) = args.goal_epochs {
            cfg.optim.goal_epochs = n;
        }
        if let Some(n) = args.flow_epochs {
            cfg.optim.flow_epochs = n;
        }
    })?;
    let samples = load_dataset(&args.dataset)?;
    let vocab = load_vocabulary(&args.vocab)?;
    let resume = args.resume.as_deref().map(load_checkpoint).transpose()?;
    let outcome = train(&cfg, &samples, vocab, resume, args.epochs)?;
    for log in &outcome.logs {
        match log.stage {
            TrainStage::Goal => {
                println!("stage=goal epoch {:>3}/{} L_goal={}", log.epoch, cfg.optim.goal_epochs, log.loss)
            }
            TrainStage::Flow => {
                println!("stage=flow epoch {:>3}/{} L_planner={}", log.epoch, cfg.optim.flow_epochs, log.loss)
            }
        }
    }
    let ckpt = outcome.to_checkpoint();
    save_checkpoint(&args.out, &ckpt)?;
    println!(
        "saved checkpoint to {} (stage={:?} epochs_done={})",
        args.out.display(),
        outcome.cursor.stage,
        outcome.cursor.epochs_done
    );
    Ok(())
}

/// How `infer` picks the goal point.
#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GoalPolicyArg {
    /// Scorer argmax over the vocabulary
    Predicted,
    /// Expert endpoint from the dataset
    Oracle,
    /// Goal masked out (shadow-style generation)
    Unconditioned,
}

impl From<GoalPolicyArg> for GoalPolicy {
    fn from(p: GoalPolicyArg) -> GoalPolicy {
        match p {
            GoalPolicyArg::Predicted => GoalPolicy::Predicted,
            GoalPolicyArg::Oracle => GoalPolicy::Oracle,
            GoalPolicyArg::Unconditioned => GoalPolicy::Unconditioned,
        }
    }
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Goal vocabulary the checkpoint was trained against
    #[arg(long)]
    pub vocab: PathBuf,
    /// Dataset holding the scene to plan in
    #[arg(long)]
    pub dataset: PathBuf,
    /// Sample index within the dataset
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Output plan-record file (JSON)
    #[arg(long)]
    pub out: PathBuf,
    /// Goal selection policy
    #[arg(long, value_enum, default_value_t = GoalPolicyArg::Predicted)]
    pub policy: GoalPolicyArg,
    /// Sampling seed (overrides config)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Denoising steps (overrides config)
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// Number of candidates (overrides config)
    #[arg(long)]
    pub m: Option<usize>,
    /// Source noise scale (overrides config)
    #[arg(long)]
    pub sigma: Option<f64>,
}

/// Applies the sampling overrides shared by infer/eval/ablate.
fn apply_sampling_flags(
    cfg: &mut RunConfig,
    seed: Option<u64>,
    n_steps: Option<usize>,
    m: Option<usize>,
    sigma: Option<f64>,
) {
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(n) = n_steps {
        cfg.flow.n_steps = n;
    }
    if let Some(m) = m {
        cfg.flow.m = m;
    }
    if let Some(s) = sigma {
        cfg.flow.sigma = s;
    }
}

/// Loads checkpoint + vocabulary and reassembles the model under `cfg`.
fn load_model(cfg: &RunConfig, checkpoint: &Path, vocab: &Path) -> Result<PlannerModel> {
    let vocab = load_vocabulary(vocab)?;
    let ckpt = load_checkpoint(checkpoint)?;
    PlannerModel::from_checkpoint(cfg, vocab, ckpt)
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let cfg = args.common.resolve(|cfg| {
        apply_sampling_flags(cfg, args.seed, args.n_steps, args.m, args.sigma);
    })?;
    let model = load_model(&cfg, &args.checkpoint, &args.vocab)?;
    let samples = load_dataset(&args.dataset)?;
    let sample = samples.get(args.index).ok_or_else(|| {
        Error::config(format!(
            "index {} out of range for dataset of {} samples",
            args.index,
            samples.len()
        ))
    })?;
    let settings = PlanSettings::from_config(&cfg);
    let policy: GoalPolicy = args.policy.into();
    let out = model.plan(&sample.scene, policy, Some(&sample.tau_gt), &settings, cfg.seed)?;
    let record = PlanRecord::new(&out, policy, &settings, cfg.seed, &sample.scene.centerline);
    save_plan_record(&args.out, &record)?;
    println!(
        "policy={} candidates={} chosen={} shadow_used={} goal=({}, {})",
        record.policy,
        record.candidates.len(),
        record.chosen,
        record.shadow_used,
        record.goal.x,
        record.goal.y
    );
    println!("wrote plan record to {}", args.out.display());
    Ok(())
}

/// Which planner variant an eval row measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// Predicted goal, full pipeline
    Model,
    /// Expert endpoint as goal
    #[value(name = "goal_oracle")]
    GoalOracle,
    /// Goal-masked generation, medoid selection
    Unconditioned,
    /// The expert trajectory itself
    Expert,
}

impl From<PolicyArg> for EvalPolicy {
    fn from(p: PolicyArg) -> EvalPolicy {
        match p {
            PolicyArg::Model => EvalPolicy::Model,
            PolicyArg::GoalOracle => EvalPolicy::GoalOracle,
            PolicyArg::Unconditioned => EvalPolicy::Unconditioned,
            PolicyArg::Expert => EvalPolicy::Expert,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Goal vocabulary the checkpoint was trained against
    #[arg(long)]
    pub vocab: PathBuf,
    /// Evaluation dataset
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory for report.txt and report.csv
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Rows to evaluate
    #[arg(long, value_delimiter = ',', default_value = "model,expert")]
    pub policies: Vec<PolicyArg>,
    /// Evaluate only the first k samples
    #[arg(long)]
    pub limit: Option<usize>,
    /// Sampling seed (overrides config)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Denoising steps (overrides config)
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// Number of candidates (overrides config)
    #[arg(long)]
    pub m: Option<usize>,
    /// Source noise scale (overrides config)
    #[arg(long)]
    pub sigma: Option<f64>,
}

/// Loads a dataset and applies an optional prefix limit.
fn load_limited(path: &Path, limit: Option<usize>) -> Result<Vec<Sample>> {
    let mut samples = load_dataset(path)?;
    if let Some(k) = limit {
        samples.truncate(k);
    }
    Ok(samples)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.common.resolve(|cfg| {
        apply_sampling_flags(cfg, args.seed, args.n_steps, args.m, args.sigma);
    })?;
    let model = load_model(&cfg, &args.checkpoint, &args.vocab)?;
    let samples = load_limited(&args.dataset, args.limit)?;
    let settings = PlanSettings::from_config(&cfg);
    let mut runs = Vec::new();
    for &p in &args.policies {
        runs.push(evaluate_policy(
            &model,
            &samples,
            p.into(),
            &settings,
            cfg.seed,
            cfg.scores.ddc_check,
        )?);
    }
    let summaries: Vec<_> = runs.iter().map(|r| r.summary.clone()).collect();
    let mut report = render_text(&summaries);
    report.push('\n');
    for s in &summaries {
        report.push_str(&format!("aggregate {} s_pdm={}\n", s.policy, s.mean.s_pdm));
    }
    fs::create_dir_all(&args.out_dir)?;
    let txt = args.out_dir.join("report.txt");
    let csv = args.out_dir.join("report.csv");
    fs::write(&txt, &report)?;
    fs::write(&csv, render_csv(&runs))?;
    print!("{report}");
    println!("wrote {} and {}", txt.display(), csv.display());
    Ok(())
}

/// Swept dimension for `ablate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    /// Denoising step counts (integers)
    Steps,
    /// Source noise scales
    Sigma,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trained checkpoint (single-model sweeps)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Goal vocabulary the checkpoint(s) were trained against
    #[arg(long)]
    pub vocab: PathBuf,
    /// Evaluation dataset
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output CSV file
    #[arg(long)]
    pub out: PathBuf,
    /// Dimension to sweep
    #[arg(long, value_enum)]
    pub axis: AxisArg,
    /// Swept values, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Sigma axis only: one checkpoint per value, each trained at that sigma
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Vec<PathBuf>,
    /// Evaluate only the first k samples
    #[arg(long)]
    pub limit: Option<usize>,
    /// Sampling seed (overrides config)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of candidates (overrides config)
    #[arg(long)]
    pub m: Option<usize>,
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let cfg = args.common.resolve(|cfg| {
        apply_sampling_flags(cfg, args.seed, None, args.m, None);
    })?;
    let samples = load_limited(&args.dataset, args.limit)?;
    let settings = PlanSettings::from_config(&cfg);
    let ddc = cfg.scores.ddc_check;
    let rows = match args.axis {
        AxisArg::Steps => {
            if !args.checkpoints.is_empty() {
                return Err(Error::config("--checkpoints applies only to --axis sigma"));
            }
            let steps = args
                .values
                .iter()
                .map(|&v| {
                    if v >= 1.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::config(format!("steps value {v} is not a positive integer")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let model = load_model(&cfg, &args.checkpoint, &args.vocab)?;
            ablate_steps(&model, &samples, &settings, &steps, cfg.seed, ddc)?
        }
        AxisArg::Sigma => {
            let models: Vec<(PlannerModel, bool)> = if args.checkpoints.is_empty() {
                // One model reused across the sweep; reuse is flagged for
                // every sigma it was not trained at.
                let model = load_model(&cfg, &args.checkpoint, &args.vocab)?;
                args.values.iter().map(|&v| (model.clone(), v != cfg.flow.sigma)).collect()
            } else {
                if args.checkpoints.len() != args.values.len() {
                    return Err(Error::config(format!(
                        "{} checkpoints given for {} sigma values",
                        args.checkpoints.len(),
                        args.values.len()
                    )));
                }
                args.checkpoints
                    .iter()
                    .map(|p| Ok((load_model(&cfg, p, &args.vocab)?, false)))
                    .collect::<Result<Vec<_>>>()?
            };
            let entries: Vec<(f64, &PlannerModel, bool)> = args
                .values
                .iter()
                .zip(&models)
                .map(|(&v, (m, reused))| (v, m, *reused))
                .collect();
            ablate_sigma(&entries, &samples, &settings, cfg.seed, ddc)?
        }
    };
    let csv = render_ablation_csv(&rows);
    fs::write(&args.out, &csv)?;
    print!("{csv}");
    println!("wrote {}", args.out.display());
    Ok(())
}
