//! Batch command-line front end for `matting-core`.
//!
//! Every subcommand is deterministic in its inputs, flags and seed, and its
//! JSON reports record the seed and tool version.

pub mod commands;
pub mod config;
pub mod io;
pub mod suite;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::*;

#[derive(Parser, Debug)]
#[command(name = "matting", version, about = "Trimap-guided alpha matting toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    Synth(synth::SynthArgs),
    Trimap(trimap::TrimapArgs),
    Eval(eval::EvalArgs),
    Fuse(fuse::FuseArgs),
    Account(account::AccountArgs),
    Search(account::SearchArgs),
    Attend(attend::AttendArgs),
    Gradcheck(gradcheck::GradcheckArgs),
    TrainToy(train_toy::TrainToyArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Trimap(a) => trimap::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Fuse(a) => fuse::run(a),
        Command::Account(a) => account::run(a),
        Command::Search(a) => account::run_search(a),
        Command::Attend(a) => attend::run(a),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::TrainToy(a) => train_toy::run(a),
    }
}

/// Sizes the global thread pool from `MATTING_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MATTING_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("MATTING_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}
