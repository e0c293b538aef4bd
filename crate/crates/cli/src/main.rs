//! `flowplan`: dataset generation, goal-vocabulary building, two-stage
//! training, inference, closed-loop evaluation, and ablation sweeps.
//!
//! Settings resolve as flag > config file > built-in default. Every command
//! is deterministic for a fixed (config, seed) apart from the wall-clock
//! timing column in ablation tables.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data or model error.

mod commands;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use flowplan_core::Error;

#[derive(Parser, Debug)]
#[command(name = "flowplan", version, about = "Goal-conditioned flow planner for synthetic driving scenes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic driving dataset
    GenData(commands::GenDataArgs),
    /// Cluster expert endpoints into a goal-point vocabulary
    BuildVocab(commands::BuildVocabArgs),
    /// Train goal scorer then flow planner; emits a checkpoint
    Train(commands::TrainArgs),
    /// Plan one scene: candidates, selection, shadow fallback
    Infer(commands::InferArgs),
    /// Score a policy on a dataset with the closed-loop metric suite
    Eval(commands::EvalArgs),
    /// Sweep denoising steps or noise scale; emits a CSV table
    Ablate(commands::AblateArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match &cli.cmd {
        Cmd::GenData(args) => commands::gen_data(args),
        Cmd::BuildVocab(args) => commands::build_vocab(args),
        Cmd::Train(args) => commands::train_cmd(args),
        Cmd::Infer(args) => commands::infer(args),
        Cmd::Eval(args) => commands::eval(args),
        Cmd::Ablate(args) => commands::ablate(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        let code = match e {
            Error::Config(_) => 1,
            _ => 2,
        };
        std::process::exit(code);
    }
}
