use std::sync::Arc;

use phikit::almost_diag::{adp_verdict_streaming, refinement_trace};
use phikit::lattice::TruncatedLattice;
use phikit::lp_frame::{build_counterexample_phi, build_lp_pair, Atom, LittlewoodPaleyPair};
use phikit::operators::Operator;
use phikit::spaces::{band_limited_field, covered_band, tl_norm, SpaceIndex};
use phikit::t1::{
    compute_t1, counterexample_growth, diagonal_bound, full_t1_decomposition, pair_independence, paraproduct, sharpness_experiment,
    sharpness_scales, trig_field, trig_field_with_period, vanishing_integral_check,
};
use phikit::transform::{analyze_with, atom};
use phikit::{GridSpec, Result, SampledField};

use super::{grid, verdict};
use crate::config::{ExperimentId, GridConfig, RunConfig};
use crate::report::{Check, Verdict};

struct Setup {
    g: GridSpec,
    pair: Arc<LittlewoodPaleyPair>,
    lat: Arc<TruncatedLattice>,
}

fn setup(cfg: &RunConfig, gc: &GridConfig) -> Result<Setup> {
    let g = grid(gc)?;
    let pair = Arc::new(build_lp_pair(g, cfg.pair.edges)?);
    let lat = Arc::new(TruncatedLattice::from_spec(g, cfg.t1.lattice)?);
    Ok(Setup { g, pair, lat })
}

/// Seeded trigonometric symbol with modes strictly inside the covered band.
fn symbol(s: &Setup, seed: u64, terms: usize) -> Result<SampledField> {
    let (lo, hi) = covered_band(&s.pair, &s.lat);
    trig_field(s.g, (lo * 1.05, hi * 0.95), seed, terms)
}

fn max_gap(a: &[phikit::Complex64], b: &[phikit::Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn t1(cfg: &RunConfig) -> Result<Verdict> {
    let s = setup(cfg, &cfg.t1.grid)?;
    let tol = &cfg.tolerances;
    let mut v = verdict(ExperimentId::T1);
    let i1 = Operator::riesz_potential(s.g, 1.0);
    let r = compute_t1(&i1, &s.pair, &s.lat)?;
    v.check(Check::holds("I^1: every cube stabilized", r.stabilized()));
    v.check(Check::at_most("I^1: max stabilized pairing", r.max_pairing, tol.t1_zero));
    v.check(Check::at_most("I^1: gap to int T^t(phi_Q)", r.limit_gap, tol.t1_zero));
    for (i, c) in r.phi_pairings.values().iter().enumerate() {
        v.point("I^1 |<T eta^j, phi_Q>|", i as f64, c.norm());
    }
    let z = compute_t1(&Operator::zero(s.g), &s.pair, &s.lat)?;
    v.check(Check::at_most("zero operator: max pairing", z.max_pairing, 0.0));
    let other = build_lp_pair(s.g, cfg.pair.alternate)?;
    let dep = pair_independence(&i1, &s.pair, &other, &s.lat)?;
    v.data("potential", &r);
    v.data("zero", &z);
    v.data("pair_dependence", &dep);
    Ok(v)
}

pub fn paraproduct_exp(cfg: &RunConfig) -> Result<Verdict> {
    let s = setup(cfg, &cfg.t1.grid)?;
    let tol = &cfg.tolerances;
    let mut v = verdict(ExperimentId::Paraproduct);
    let b = symbol(&s, cfg.seed, cfg.t1.symbol_terms)?;
    let pb = paraproduct(&b, s.pair.clone(), &s.lat)?;

    // Pi_b against sum_Q pi_QQ <f, Phi_Q> psi_Q built one atom at a time
    let f = band_limited_field(s.g, (0.2 * covered_band(&s.pair, &s.lat).0, covered_band(&s.pair, &s.lat).1), cfg.seed + 1);
    let c = analyze_with(&b, &s.pair, &s.lat, Atom::Phi)?;
    let mut series = SampledField::zeros(s.g);
    for (i, cube) in s.lat.iter().enumerate() {
        let pi = c.values()[i] / cube.volume().sqrt();
        let m = f.bilinear(&atom(&s.pair, Atom::Mollifier, &cube))?;
        series = series.axpy(pi * m, &atom(&s.pair, Atom::Psi, &cube))?;
        v.point("|pi_QQ|", cube.side(), pi.norm());
    }
    let diag_err = pb.apply(&f)?.sub(&series)?.l2_norm() / series.l2_norm();
    v.check(Check::at_most("||Pi_b f - sum_Q pi_QQ <f, Phi_Q> psi_Q|| / ||sum||", diag_err, tol.diagonal));

    let c0 = diagonal_bound(&c);
    let fine_grid = s.g.with_samples(s.g.samples() * 2)?;
    let fine = Setup { g: fine_grid, pair: Arc::new(s.pair.on_grid(fine_grid)?), lat: Arc::new(s.lat.on_grid(fine_grid)?) };
    let bf = symbol(&fine, cfg.seed, cfg.t1.symbol_terms)?;
    let c1 = diagonal_bound(&analyze_with(&bf, &fine.pair, &fine.lat, Atom::Phi)?);
    v.check(Check::holds("|pi_QQ| <= C l(Q) with C finite and positive", c0.constant.is_finite() && c0.constant > 0.0));
    v.check(Check::at_most("relative change of C under refinement", (c1.constant / c0.constant - 1.0).abs(), tol.refinement));
    v.data("diagonal_bound", [&c0, &c1]);

    let r = compute_t1(&pb, &s.pair, &s.lat)?;
    let want_phi = c.values();
    let want_psi = analyze_with(&b, &s.pair, &s.lat, Atom::Psi)?;
    v.check(Check::holds("Pi_b: every cube stabilized", r.stabilized()));
    let gap = max_gap(r.phi_pairings.values(), want_phi).max(max_gap(r.psi_pairings.values(), want_psi.values()));
    v.check(Check::at_most("Pi_b 1 = b: max per-cube pairing gap", gap, tol.paraproduct_one));
    let rt = compute_t1(&pb.transpose(), &s.pair, &s.lat)?;
    v.check(Check::holds("Pi_b^t: every cube stabilized", rt.stabilized()));
    v.check(Check::at_most("Pi_b^t 1 = 0: max pairing", rt.max_pairing, tol.paraproduct_transpose_one));

    let q0 = s.lat.cube(cfg.t1.probe_cube.min(s.lat.len() - 1));
    let bq = atom(&s.pair, Atom::Phi, &q0).conj();
    let van = vanishing_integral_check(&paraproduct(&bq, s.pair.clone(), &s.lat)?, &s.pair, &s.lat)?;
    v.check(Check::at_least("b = conj(phi_Q0): max |int Pi_b^t(phi_Q)| (must not vanish)", van.max_tt_phi, tol.vanishing));
    let zero = paraproduct(&SampledField::zeros(s.g), s.pair.clone(), &s.lat)?;
    v.check(Check::holds("b = 0 gives the zero operator", zero.is_zero()));
    v.data("t1", &r);
    v.data("tt1", &rt);
    v.data("probe_cube", &q0);
    v.data("probe_vanishing", &van);
    Ok(v)
}

fn decomposition_adp(cfg: &RunConfig, s: &Setup, eps: &[f64]) -> Result<(phikit::t1::Decomposition, phikit::almost_diag::AdpProfile)> {
    let b0 = symbol(s, cfg.seed, cfg.t1.symbol_terms)?;
    let t = Operator::riesz_potential(s.g, 1.0).plus(&paraproduct(&b0, s.pair.clone(), &s.lat)?)?.named("I^1 + Pi_b0");
    let d = full_t1_decomposition(&t, s.pair.clone(), &s.lat, cfg.t1.fields, cfg.seed)?;
    let prof = adp_verdict_streaming(&d.s, &s.pair, &s.lat, eps)?;
    Ok((d, prof))
}

pub fn decomposition(cfg: &RunConfig) -> Result<Verdict> {
    let s = setup(cfg, &cfg.t1.grid)?;
    let tol = &cfg.tolerances;
    let eps = &cfg.adp.eps;
    let mut v = verdict(ExperimentId::Decomposition);
    let (d, coarse) = decomposition_adp(cfg, &s, eps)?;
    let rep = &d.report;
    v.check(Check::at_most("S: max |int S(psi_Q)|", rep.vanishing.max_t_psi, tol.vanishing));
    v.check(Check::at_most("S: max |int S^t(phi_Q)|", rep.vanishing.max_tt_phi, tol.vanishing));
    v.check(Check::at_most("max ||(S + Pi_a + Pi_b^t) f - T f|| / ||T f||", rep.reproduction_error, tol.decomposition));
    let b0 = symbol(&s, cfg.seed, cfg.t1.symbol_terms)?;
    let b0_series = phikit::transform::synthesize(&analyze_with(&b0, &s.pair, &s.lat, Atom::Phi)?, &s.pair)?;
    let a_err = d.a.sub(&b0_series)?.max_abs() / b0_series.max_abs();
    v.check(Check::at_most("a = T1 against T_psi {<b0, phi_Q>}", a_err, tol.paraproduct_one));

    let fine_grid = s.g.with_samples(s.g.samples() * 2)?;
    let fine = Setup { g: fine_grid, pair: Arc::new(s.pair.on_grid(fine_grid)?), lat: Arc::new(s.lat.on_grid(fine_grid)?) };
    let (_, fine_prof) = decomposition_adp(cfg, &fine, eps)?;
    let trace = refinement_trace(&coarse, &fine_prof, tol.refinement);
    let stable = cfg.adp.stable_eps;
    let r = coarse.at(stable).map_or(f64::INFINITY, |p| p.ratio);
    v.check(Check::holds(format!("S: r({stable}) finite"), r.is_finite()));
    let change = trace.iter().find(|t| t.eps == stable).map_or(f64::INFINITY, |t| t.change.abs());
    v.check(Check::at_most(format!("S: relative change of r({stable}) under refinement"), change, tol.refinement));
    for (label, p) in [(s.g.samples(), &coarse), (fine_grid.samples(), &fine_prof)] {
        for pt in &p.points {
            v.point(&format!("S r(eps) N={label}"), pt.eps, pt.ratio);
        }
    }
    v.data("report", rep);
    v.data("a_error", a_err);
    v.data("adp", [&coarse, &fine_prof]);
    v.data("refinement", &trace);
    Ok(v)
}

pub fn sharpness(cfg: &RunConfig) -> Result<Verdict> {
    let sc = &cfg.sharpness;
    let tol = &cfg.tolerances;
    let g = grid(&sc.grid)?;
    let pair = Arc::new(build_lp_pair(g, cfg.pair.edges)?);
    let lat = Arc::new(TruncatedLattice::from_spec(g, sc.lattice)?);
    let mut v = verdict(ExperimentId::Sharpness);
    let js = sharpness_scales(&pair, &lat);
    v.check(Check::at_least("admissible regularizer scales", js.len() as f64, 3.0));
    let (lo, hi) = covered_band(&pair, &lat);
    let b0 = trig_field_with_period(g, (lo * 1.05, hi * 0.95), cfg.seed, sc.symbol_terms, sc.period)?;
    let ops = [Operator::riesz_potential(g, 1.0), paraproduct(&b0, pair.clone(), &lat)?.named("Pi_b0")];
    let mut reports = Vec::new();
    for t in &ops {
        let r = sharpness_experiment(t, &pair, &js)?;
        v.check(Check::at_most(format!("{}: |log-slope of the norm in j|", t.name()), r.slope.abs(), tol.sharpness_slope));
        for (j, n) in r.js.iter().zip(&r.norms) {
            v.point(t.name(), *j as f64, *n);
        }
        reports.push(r);
    }
    let z = sharpness_experiment(&Operator::zero(g), &pair, &js)?;
    v.check(Check::holds("zero operator: every norm is 0", z.norms.iter().all(|n| *n == 0.0)));
    let b_norm = tl_norm(&b0, SpaceIndex::new(1.0, f64::INFINITY, 2.0)?, &pair)?;
    v.data("js", &js);
    v.data("reports", &reports);
    v.data("symbol_proxy_norm", b_norm);
    v.data("paraproduct_sup_over_symbol_norm", reports[1].sup / b_norm);
    Ok(v)
}

pub fn counterexample(cfg: &RunConfig) -> Result<Verdict> {
    let cc = &cfg.counterexample;
    let tol = &cfg.tolerances;
    let mut v = verdict(ExperimentId::Counterexample);
    let g = grid(&cc.grid)?;
    let pair = Arc::new(build_counterexample_phi(g)?);
    let pr = pair.check();
    v.check(Check::holds("counterexample pair is a valid pair", pr.passed));
    let r = counterexample_growth(pair, &cc.ns)?;
    v.check(Check::holds("every requested N fits on the grid", r.ns == cc.ns));
    v.check(Check::at_most("R(N) against the closed form", r.oracle_error, tol.oracle));
    v.check(Check::holds("R(N) strictly increasing", r.strictly_increasing));
    v.check(Check::at_least("log-log slope of R(N)", r.slope, tol.growth_slope_min));
    v.check(Check::at_most("log-log slope of R(N)", r.slope, tol.growth_slope_max));
    v.check(Check::at_most("I^1 contrast: |log-log slope|", r.contrast_slope.abs(), tol.contrast_slope));
    for (i, n) in r.ns.iter().enumerate() {
        v.point("T_a", *n as f64, r.ratios[i]);
        v.point("closed form", *n as f64, r.oracle[i]);
        v.point("I^1", *n as f64, r.contrast[i]);
    }
    v.data("pair", &pr);
    v.data("growth", &r);

    // T_a: F_2^{0,2} -> F_2^{1,2} on the same fields at two resolutions
    let coarse = grid(&cc.ratio_grid)?;
    let finer = coarse.with_samples(coarse.samples() * 2)?;
    let (src, dst) = (SpaceIndex::new(0.0, 2.0, 2.0)?, SpaceIndex::new(1.0, 2.0, 2.0)?);
    let mut ratios = [Vec::new(), Vec::new()];
    let pairs = [Arc::new(build_counterexample_phi(coarse)?), Arc::new(build_counterexample_phi(finer)?)];
    let ops = [Operator::modulated_symbol(pairs[0].clone())?, Operator::modulated_symbol(pairs[1].clone())?];
    for k in 0..cc.ratio_fields as u64 {
        let f = band_limited_field(coarse, cc.ratio_band, cfg.seed + k);
        let fields = [f.clone(), f.resample(finer)?];
        for i in 0..2 {
            let den = tl_norm(&fields[i], src, &pairs[i])?;
            ratios[i].push(tl_norm(&ops[i].apply(&fields[i])?, dst, &pairs[i])? / den);
        }
        v.point(&format!("T_a ratio N={}", coarse.samples()), k as f64, ratios[0][k as usize]);
        v.point(&format!("T_a ratio N={}", finer.samples()), k as f64, ratios[1][k as usize]);
    }
    let stats = |r: &[f64]| {
        let mut s = r.to_vec();
        s.sort_by(f64::total_cmp);
        (s[s.len() / 2], s[s.len() - 1])
    };
    let (m0, x0) = stats(&ratios[0]);
    let (m1, x1) = stats(&ratios[1]);
    v.check(Check::holds("T_a lifting ratios finite", x0.is_finite() && x1.is_finite() && m0 > 0.0));
    v.check(Check::at_most("T_a lifting: relative change of the max ratio under refinement", (x1 / x0 - 1.0).abs(), tol.refinement));
    v.check(Check::at_most("T_a lifting: relative change of the median ratio under refinement", (m1 / m0 - 1.0).abs(), tol.refinement));
    v.data("lifting", serde_json::json!({ "samples": [coarse.samples(), finer.samples()], "median": [m0, m1], "max": [x0, x1] }));
    v.data("outside_paper_scope", g.dim() == 1);
    Ok(v)
}
