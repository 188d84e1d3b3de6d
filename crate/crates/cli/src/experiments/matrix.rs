use std::sync::Arc;

use phikit::almost_diag::{
    adp_verdict, build_matrix, far_scale_max, lemma41_decay_check, lemma51_product_check, lemma52_sum_check,
    refinement_trace, synthetic_omega_matrix, MatrixStorage, OperatorMatrix,
};
use phikit::kernel_lab::{
    calibrate_riesz_constant, check_standard_kernel, kernel_column, match_riesz_kernel, radial_samples, zero_operator_sanity,
    SynthesizedKernel,
};
use phikit::lattice::{DyadicCube, TruncatedLattice};
use phikit::lp_frame::build_lp_pair;
use phikit::operators::Operator;
use phikit::{GridSpec, PhiError, Result};

use super::{drifts, grid, verdict};
use crate::config::{ExperimentId, RunConfig};
use crate::report::{Check, Verdict};

/// Every this many columns are streamed for the independent far-scale check.
const FAR_COLUMN_STRIDE: usize = 8;

fn stored_far_max(a: &OperatorMatrix) -> (usize, f64) {
    match a.storage() {
        MatrixStorage::Blocks(bs) => {
            let far: Vec<_> = bs.iter().filter(|b| (b.nu_q - b.nu_p).abs() >= 2).collect();
            (far.len(), far.iter().flat_map(|b| b.values.iter().map(|v| v.norm())).fold(0.0, f64::max))
        }
        _ => (0, 0.0),
    }
}

pub fn adp(cfg: &RunConfig) -> Result<Verdict> {
    let ac = &cfg.adp;
    let tol = &cfg.tolerances;
    let mut v = verdict(ExperimentId::Adp);
    let mut profiles = Vec::new();
    let mut far = Vec::new();
    for &n in &ac.refinement_samples {
        let g = grid(&ac.grid.with_samples(n))?;
        let pair = build_lp_pair(g, cfg.pair.edges)?;
        let lat = Arc::new(TruncatedLattice::from_spec(g, ac.lattice)?);
        let t = Operator::riesz_potential(g, 1.0);
        let a = build_matrix(&t, &pair, &lat)?;
        let prof = adp_verdict(&a, &ac.eps)?;
        let (blocks, stored) = stored_far_max(&a);
        let cols: Vec<usize> = (0..lat.len()).step_by(FAR_COLUMN_STRIDE).collect();
        let streamed = far_scale_max(&t, &pair, &lat, &cols)?;
        v.check(Check::at_most(format!("N={n}: max |A_QP| stored with |nu_P - nu_Q| >= 2"), stored, 0.0));
        v.check(Check::at_most(format!("N={n}: max |A_QP| streamed with |nu_P - nu_Q| >= 2"), streamed, 0.0));
        for p in &prof.points {
            v.point(&format!("r(eps) N={n}"), p.eps, p.ratio);
        }
        far.push(serde_json::json!({ "samples": n, "far_blocks": blocks, "stored_max": stored, "streamed_columns": cols.len(), "streamed_max": streamed }));
        profiles.push(prof);
    }
    let coarse = &profiles[0];
    let fine = &profiles[profiles.len() - 1];
    let trace = refinement_trace(coarse, fine, tol.refinement);
    let r = fine.at(ac.stable_eps).map_or(f64::INFINITY, |p| p.ratio);
    v.check(Check::holds(format!("r({}) finite and positive", ac.stable_eps), r.is_finite() && r > 0.0));
    let change = trace.iter().find(|t| t.eps == ac.stable_eps).map_or(f64::INFINITY, |t| t.change.abs());
    v.check(Check::at_most(format!("relative change of r({}) under refinement", ac.stable_eps), change, tol.refinement));
    v.data("profiles", &profiles);
    v.data("refinement", &trace);
    v.data("far_scales", far);

    let g = grid(&ac.decay_grid)?;
    let pair = build_lp_pair(g, cfg.pair.edges)?;
    let t = Operator::riesz_potential(g, 1.0);
    let mut decay = Vec::new();
    for (&nu, asserted) in ac.decay_scales.iter().map(|s| (s, true)).chain(ac.decay_data_scales.iter().map(|s| (s, false))) {
        let cube = DyadicCube::new(nu, vec![0; g.dim()]);
        let rep = lemma41_decay_check(&t, &pair, &cube, ac.delta)?;
        if asserted {
            v.check(Check::holds(format!("nu={nu}: |T(psi_Q)|, |T^t(phi_Q)| bounded by C l(Q)|Q|^(-1/2)(1 + |x - x_Q|/l(Q))^(-n-delta)"), rep.constant.is_finite() && rep.warning.is_none()));
            v.check(Check::at_most(format!("nu={nu}: far-field log-log slope"), rep.far_field_slope, rep.slope_limit));
        }
        for s in &rep.envelope {
            v.point(&format!("nu={nu} envelope"), s.distance, s.value);
            v.point(&format!("nu={nu} bound"), s.distance, s.bound);
        }
        decay.push(serde_json::json!({ "asserted": asserted, "report": rep }));
    }
    v.data("decay_grid", ac.decay_grid);
    v.data("decay", decay);
    Ok(v)
}

fn single_scale(dim: usize, side: f64) -> Result<TruncatedLattice> {
    let g = GridSpec::new(dim, side, (2.0 * side) as usize)?;
    TruncatedLattice::new_geometric(g, 0, 0)
}

fn rejected<T>(r: Result<T>) -> bool {
    matches!(r, Err(PhiError::Hypothesis(_)))
}

pub fn lemma_checks(cfg: &RunConfig) -> Result<Verdict> {
    let lc = &cfg.lemmas;
    let tol = &cfg.tolerances;
    let dim = cfg.grid.dim;
    let mut v = verdict(ExperimentId::LemmaChecks);

    let mut prod = Vec::new();
    for (&side, asserted) in lc.sides.iter().map(|s| (s, true)).chain(lc.data_sides.iter().map(|s| (s, false))) {
        let lat = single_scale(dim, side)?;
        let r = lemma51_product_check(lc.beta, lc.gamma1, lc.gamma2, &lat)?;
        v.point("W product constant", r.cubes as f64, r.max_ratio);
        prod.push((asserted, r));
    }
    let asserted: Vec<f64> = prod.iter().filter(|p| p.0).map(|p| p.1.max_ratio).collect();
    let all: Vec<f64> = prod.iter().map(|p| p.1.max_ratio).collect();
    let d = drifts(&asserted);
    v.check(Check::at_most("W product constant: relative change as the lattice grows", d.iter().fold(0.0, |a: f64, b| a.max(b.abs())), tol.lemma_drift));
    v.data("product", prod.iter().map(|p| serde_json::json!({ "asserted": p.0, "report": p.1 })).collect::<Vec<_>>());
    v.data("product_drifts", drifts(&all));

    let (lo, hi) = lc.lambda_half_octaves;
    let lambdas: Vec<f64> = (lo..=hi).map(|k| 2f64.powf(k as f64 / 2.0)).collect();
    let mut sums = Vec::new();
    for &j in &lc.truncations {
        let r = lemma52_sum_check(lc.sum_alpha, lc.sum_beta, lc.sum_eps, &lambdas, j)?;
        v.point("scale sum constant", j as f64, r.constant);
        for s in &r.samples {
            v.point(&format!("lambda^alpha sum J={j}"), s.0, s.2);
        }
        sums.push(r);
    }
    let consts: Vec<f64> = sums.iter().map(|r| r.constant).collect();
    let d = drifts(&consts);
    v.check(Check::at_most("scale sum constant: relative change as J grows", d.iter().fold(0.0, |a: f64, b| a.max(b.abs())), tol.lemma_drift));
    v.data("sum", &sums);
    v.data("sum_drifts", d);

    let small = single_scale(dim, 4.0)?;
    let refusals = [
        rejected(lemma51_product_check(lc.beta, 1.0, 1.0, &small)),
        rejected(lemma51_product_check(2.0, 1.0, 2.0, &small)),
        rejected(lemma51_product_check(0.0, 1.0, 2.0, &small)),
        rejected(lemma52_sum_check(1.0, 0.5, 1.0, &[1.0], 8)),
        rejected(lemma52_sum_check(1.0, 3.0, 0.0, &[1.0], 8)),
        rejected(lemma52_sum_check(0.0, 3.0, 1.0, &[1.0], 8)),
    ];
    v.check(Check::holds("hypothesis-violating inputs rejected", refusals.iter().all(|r| *r)));
    Ok(v)
}

/// The origin and one point off both axes.
fn base_points(g: &GridSpec) -> Vec<Vec<f64>> {
    let mut corner = vec![0.0; g.dim()];
    corner[0] = g.side() / 4.0 + 1.0;
    if g.dim() > 1 {
        corner[1] = g.side() / 8.0;
    }
    vec![vec![0.0; g.dim()], corner]
}

pub fn kernel_synth(cfg: &RunConfig) -> Result<Verdict> {
    let kc = &cfg.kernel;
    let tol = &cfg.tolerances;
    let mut v = verdict(ExperimentId::KernelSynth);

    let g = grid(&kc.grid)?;
    let pair = build_lp_pair(g, cfg.pair.edges)?;
    let lat = Arc::new(TruncatedLattice::new_geometric(g, kc.lattice.nu_min, kc.lattice.nu_max)?);
    let cal = calibrate_riesz_constant(g, 1.0)?;
    v.check(Check::at_most("calibration fit residual", cal.fit.max_residual, tol.calibration));
    let a = build_matrix(&Operator::riesz_potential(g, 1.0), &pair, &lat)?;
    let m = match_riesz_kernel(&a, &pair, cal.fit.c, kc.window)?;
    v.check(Check::at_most("max |K - c* r^(1-n) - background| / (c* r^(1-n)) in the window", m.max_relative_error, tol.kernel_match));
    v.check(Check::at_most("|fitted c / c* - 1|", m.constant_error, tol.kernel_match));
    let col = kernel_column(&a, &pair, &vec![0.0; g.dim()])?;
    let n = g.dim() as f64;
    for (r, k) in radial_samples(col.values(), &g, 0, kc.window.0, kc.window.1) {
        v.point("synthesized", r, k);
        v.point("c* r^(1-n) + background", r, cal.fit.c * r.powf(1.0 - n) + m.fit.b + m.fit.a * r * r);
    }
    v.data("calibration", &cal);
    v.data("match", &m);

    // the zero matrix is checked cube by cube, so it runs on the small T1 grid
    let zg = grid(&cfg.t1.grid)?;
    let zpair = build_lp_pair(zg, cfg.pair.edges)?;
    let zlat = Arc::new(TruncatedLattice::from_spec(zg, cfg.t1.lattice)?);
    let z = zero_operator_sanity(&OperatorMatrix::zero(zlat), &zpair, &base_points(&zg))?;
    v.check(Check::at_most("zero matrix: max |T(psi_P)|", z.max_field, tol.zero_kernel));
    v.check(Check::at_most("zero matrix: max |K(x, y)| sampled", z.max_kernel, tol.zero_kernel));
    v.data("zero", &z);

    let og = grid(&kc.omega_grid)?;
    let opair = build_lp_pair(og, cfg.pair.edges)?;
    let olat = Arc::new(TruncatedLattice::new_geometric(og, kc.omega_lattice.nu_min, kc.omega_lattice.nu_max)?);
    let base = base_points(&og);
    v.check(Check::holds("delta < eps / 2 and delta <= 1", kc.delta < kc.omega_eps / 2.0 && kc.delta <= 1.0));
    let w = synthetic_omega_matrix(olat.clone(), kc.omega_eps)?;
    let k = SynthesizedKernel::new(&w, &opair)?;
    let r = check_standard_kernel(&k, kc.delta, &base)?;
    v.check(Check::holds("omega matrix: size and smoothness constants finite", r.constant.is_finite() && r.constant > 0.0));
    v.check(Check::at_most("omega matrix: growth of stratum constants toward the diagonal", r.max_violation, 0.0));
    for s in &r.strata {
        v.point("size", s.separation, s.size);
        v.point("smooth x", s.separation, s.smooth_x);
        v.point("smooth y", s.separation, s.smooth_y);
    }
    v.data("standard_kernel", &r);
    Ok(v)
}
