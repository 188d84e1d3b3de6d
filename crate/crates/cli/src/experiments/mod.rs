use std::sync::Arc;

use phikit::lattice::TruncatedLattice;
use phikit::lp_frame::{build_lp_pair, LittlewoodPaleyPair};
use phikit::{GridSpec, PhiError, Result};

use crate::config::{ExperimentId, GridConfig, RunConfig};
use crate::report::Verdict;

mod frame;
mod matrix;
mod t1;

pub(crate) fn grid(g: &GridConfig) -> Result<GridSpec> {
    GridSpec::new(g.dim, g.side, g.samples)
}

/// Top-level grid, default pair and the configured (or widest admissible) lattice.
pub(crate) fn default_setup(cfg: &RunConfig) -> Result<(GridSpec, Arc<LittlewoodPaleyPair>, Arc<TruncatedLattice>)> {
    let g = grid(&cfg.grid)?;
    let pair = Arc::new(build_lp_pair(g, cfg.pair.edges)?);
    let lat = match cfg.lattice {
        Some(spec) => TruncatedLattice::from_spec(g, spec)?,
        None => TruncatedLattice::admissible(g)?,
    };
    Ok((g, pair, Arc::new(lat)))
}

/// Relative change between consecutive values.
pub(crate) fn drifts(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

pub fn property(id: ExperimentId) -> &'static str {
    match id {
        ExperimentId::LpCheck => "Littlewood-Paley pair: annulus support, lower bound, partition of unity",
        ExperimentId::Reconstruct => "reconstruction and pairing identities of the transform",
        ExperimentId::Norms => "Riesz calculus and the lifting property of I^s",
        ExperimentId::Adp => "almost diagonality of I^1 and pointwise decay of T(psi_Q)",
        ExperimentId::LemmaChecks => "product estimate for W and the double scale sum",
        ExperimentId::KernelSynth => "synthesized kernels: I^1 matrix, zero matrix, omega-majorized matrix",
        ExperimentId::T1 => "T1 through regularized pairings for a convolution operator",
        ExperimentId::Paraproduct => "paraproduct: diagonal representation, diagonal bound, Pi_b 1 = b, Pi_b^t 1 = 0",
        ExperimentId::Decomposition => "T = S + Pi_a + Pi_b^t for T = I^1 + Pi_b0",
        ExperimentId::Sharpness => "uniform bound of ||T(eta^j)|| in the F_inf^{1,2} proxy",
        ExperimentId::Counterexample => "modulated symbol: growth on the coherent family, bounded lifting",
    }
}

fn dispatch(id: ExperimentId, cfg: &RunConfig) -> Result<Verdict> {
    match id {
        ExperimentId::LpCheck => frame::lp_check(cfg),
        ExperimentId::Reconstruct => frame::reconstruct(cfg),
        ExperimentId::Norms => frame::norms(cfg),
        ExperimentId::Adp => matrix::adp(cfg),
        ExperimentId::LemmaChecks => matrix::lemma_checks(cfg),
        ExperimentId::KernelSynth => matrix::kernel_synth(cfg),
        ExperimentId::T1 => t1::t1(cfg),
        ExperimentId::Paraproduct => t1::paraproduct_exp(cfg),
        ExperimentId::Decomposition => t1::decomposition(cfg),
        ExperimentId::Sharpness => t1::sharpness(cfg),
        ExperimentId::Counterexample => t1::counterexample(cfg),
    }
}

/// Runs one experiment; an error becomes a failed verdict naming it.
pub fn run_experiment(id: ExperimentId, cfg: &RunConfig) -> Verdict {
    match dispatch(id, cfg) {
        Ok(v) => v,
        Err(e) => Verdict::failed(id.as_str(), property(id), error_text(&e)),
    }
}

fn error_text(e: &PhiError) -> String {
    format!("error: {e}")
}

pub(crate) fn verdict(id: ExperimentId) -> Verdict {
    Verdict::new(id.as_str(), property(id))
}
