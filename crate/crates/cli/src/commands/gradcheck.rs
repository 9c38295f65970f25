use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::{overlay, Header};
use crate::io;
use crate::suite::{cases, faulty_case, run_suite, CaseResult};

/// Central-difference check of every differentiable operation.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Draws per case [default: 20].
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Finite-difference step [default: 1e-6].
    #[arg(long)]
    pub step: Option<f64>,
    /// Relative error bound [default: 1e-4].
    #[arg(long)]
    pub tol: Option<f64>,
    /// Only run cases whose name contains this.
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Test hook: append a case with a deliberately wrong gradient.
    #[arg(long, hide = true)]
    #[serde(skip)]
    pub inject_fault: bool,
}

#[derive(Serialize)]
struct Report {
    #[serde(flatten)]
    header: Header,
    step: f64,
    tol: f64,
    passed: bool,
    cases: Vec<CaseResult>,
}

pub fn run(mut args: GradcheckArgs) -> Result<()> {
    overlay!(args: GradcheckArgs; seeds, step, tol, filter, out);
    let (seeds, step, tol) = (args.seeds.unwrap_or(20), args.step.unwrap_or(1e-6), args.tol.unwrap_or(1e-4));
    let mut list = cases();
    if args.inject_fault {
        list.push(faulty_case());
    }
    if let Some(f) = &args.filter {
        list.retain(|c| c.name.contains(f.as_str()));
    }
    let results = run_suite(&list, seeds, step, tol);
    for r in &results {
        println!("{:<34} {} max rel err {:.3e}", r.name, if r.passed { "ok  " } else { "FAIL" }, r.max_rel_error);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if let Some(p) = &args.out {
        io::write_json(p, &Report { header: Header::new(None), step, tol, passed: failed.is_empty(), cases: results.clone() })?;
    }
    if !failed.is_empty() {
        bail!("gradcheck failed for {}", failed.join(", "));
    }
    Ok(())
}
