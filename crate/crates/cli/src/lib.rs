//! Experiment runner for `phikit`: one JSON verdict and one CSV series per experiment.

pub mod config;
pub mod experiments;
pub mod report;

use std::path::Path;

use rayon::prelude::*;

use config::RunConfig;
use report::{write_index, write_verdict, ReportError, Verdict};

/// Runs every configured experiment and writes `<out>/<experiment>/` plus `<out>/index.json`.
/// Verdicts come back in configuration order whatever the thread count.
pub fn run_all(cfg: &RunConfig, out: &Path) -> Result<Vec<Verdict>, ReportError> {
    let verdicts: Vec<Verdict> = cfg.experiments.par_iter().map(|&id| experiments::run_experiment(id, cfg)).collect();
    for v in &verdicts {
        write_verdict(out, v)?;
    }
    write_index(out, &verdicts)?;
    Ok(verdicts)
}
