use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phikit_cli::config::{ConfigError, ExperimentId, RunConfig};
use phikit_cli::run_all;

#[derive(Debug, Parser)]
#[command(name = "phikit", version, about = "Numerical checks for the phi-transform and T1 machinery")]
struct Cli {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Report directory (overrides `out` in the config).
    #[arg(long, global = true, env = "PHIKIT_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; experiments run in parallel.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Comma-separated `key=value` for `[grid]`, e.g. `side=32,samples=128`.
    #[arg(long, global = true)]
    grid_overrides: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiments listed in the config (all of them by default).
    VerifyAll,
    /// Print the effective configuration as TOML.
    PrintConfig,
    /// Littlewood-Paley pair checks.
    LpCheck,
    /// Reconstruction and pairing identities.
    Reconstruct,
    /// Riesz calculus and lifting ratios.
    Norms,
    /// Almost diagonality of I^1 and decay of T(psi_Q).
    Adp,
    /// W product estimate and the double scale sum.
    LemmaChecks,
    /// Kernels synthesized from matrices.
    KernelSynth,
    /// T1 of a convolution operator.
    T1,
    /// Paraproduct identities.
    Paraproduct,
    /// T1 decomposition of I^1 + Pi_b0.
    Decomposition,
    /// Uniform bound of T(eta^j).
    Sharpness,
    /// Growth for the modulated symbol.
    Counterexample,
}

impl Command {
    fn experiment(&self) -> Option<ExperimentId> {
        Some(match self {
            Self::VerifyAll | Self::PrintConfig => return None,
            Self::LpCheck => ExperimentId::LpCheck,
            Self::Reconstruct => ExperimentId::Reconstruct,
            Self::Norms => ExperimentId::Norms,
            Self::Adp => ExperimentId::Adp,
            Self::LemmaChecks => ExperimentId::LemmaChecks,
            Self::KernelSynth => ExperimentId::KernelSynth,
            Self::T1 => ExperimentId::T1,
            Self::Paraproduct => ExperimentId::Paraproduct,
            Self::Decomposition => ExperimentId::Decomposition,
            Self::Sharpness => ExperimentId::Sharpness,
            Self::Counterexample => ExperimentId::Counterexample,
        })
    }
}

fn load(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.grid_overrides {
        cfg.apply_grid_overrides(o)?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("phikit: config: {e}");
            return ExitCode::from(2);
        }
    };
    if let Command::PrintConfig = cli.command {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    if let Some(id) = cli.command.experiment() {
        cfg.experiments = vec![id];
    }
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("phikit: --jobs: {e}");
            return ExitCode::from(2);
        }
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("phikit-out"));
    let verdicts = match run_all(&cfg, &out) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("phikit: {e}");
            return ExitCode::from(2);
        }
    };
    let mut ok = true;
    for v in &verdicts {
        println!("{:<16} {}", v.experiment, if v.passed { "PASS" } else { "FAIL" });
        for f in v.failures() {
            eprintln!("{}: {f}", v.experiment);
        }
        ok &= v.passed;
    }
    if ok { ExitCode::SUCCESS } else { ExitCode::from(1) }
}
