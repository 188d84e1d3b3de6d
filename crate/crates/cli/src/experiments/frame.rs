use phikit::lp_frame::build_lp_pair;
use phikit::operators::{gradient_riesz_identity_check, Operator};
use phikit::spaces::{band_limited_field, covered_band, riesz_shift_check};
use phikit::transform::{pairing_expansion, reconstruction_residual};
use phikit::{Result, SampledField};

use super::{default_setup, grid, verdict};
use crate::config::{ExperimentId, RunConfig};
use crate::report::{Check, Verdict};

pub fn lp_check(cfg: &RunConfig) -> Result<Verdict> {
    let g = grid(&cfg.grid)?;
    let pair = build_lp_pair(g, cfg.pair.edges)?;
    let r = pair.check();
    let tol = &cfg.tolerances;
    let mut v = verdict(ExperimentId::LpCheck);
    v.check(Check::holds("phi^ vanishes outside (1/2, 2)", r.support_exact));
    v.check(Check::at_least("min phi^ on [3/5, 5/3]", r.lower_bound, tol.lower_bound));
    v.check(Check::at_most("partition sum deviation on covered modes", r.partition_error, tol.partition));
    v.check(Check::holds("radial symmetry, moments and rho bounds", r.passed));
    v.data("edges", cfg.pair.edges);
    v.data("report", &r);
    let e = cfg.pair.edges;
    for i in 0..=500 {
        let x = 2.5 * i as f64 / 500.0;
        v.point("phi_hat", x, e.phi_hat(x));
        v.point("psi_hat", x, e.psi_hat(x));
        let s: f64 = (-12..=12).map(|k| {
            let y = x * 2f64.powi(k);
            e.phi_hat(y) * e.psi_hat(y)
        }).sum();
        v.point("partition", x, s);
    }
    Ok(v)
}

pub fn reconstruct(cfg: &RunConfig) -> Result<Verdict> {
    let (g, pair, lat) = default_setup(cfg)?;
    let band = covered_band(&pair, &lat);
    let mut v = verdict(ExperimentId::Reconstruct);
    let (mut worst_res, mut worst_pair) = (0.0f64, 0.0f64);
    let mut warnings = 0;
    for k in 0..cfg.reconstruct.fields as u64 {
        let seed = cfg.seed + k;
        let f = band_limited_field(g, band, seed);
        let h = band_limited_field(g, band, seed + 10_000);
        let res = reconstruction_residual(&f, &pair, &lat)?;
        let e = pairing_expansion(&f, &h, &pair, &lat)?;
        let rel = e.abs_error / (f.l2_norm() * h.l2_norm());
        warnings += usize::from(e.coverage_warning.is_some());
        worst_res = worst_res.max(res);
        worst_pair = worst_pair.max(rel);
        v.point("residual", seed as f64, res);
        v.point("pairing", seed as f64, rel);
    }
    let tol = &cfg.tolerances;
    v.check(Check::at_most("max ||f - T_psi S_phi f|| / ||f||", worst_res, tol.reconstruction));
    v.check(Check::at_most("max |sum <f, phi_Q><psi_Q, g> - <f, g>| / (||f|| ||g||)", worst_pair, tol.pairing));
    v.check(Check::holds("fields inside the covered band", warnings == 0));
    v.data("lattice", lat.spec());
    v.data("band", band);
    v.data("fields", cfg.reconstruct.fields);
    Ok(v)
}

fn sup_relative(a: &SampledField, b: &SampledField) -> Result<f64> {
    Ok(a.sub(b)?.max_abs() / b.max_abs().max(f64::MIN_POSITIVE))
}

pub fn norms(cfg: &RunConfig) -> Result<Verdict> {
    let (g, pair, lat) = default_setup(cfg)?;
    let band = covered_band(&pair, &lat);
    let nc = &cfg.norms;
    let tol = &cfg.tolerances;
    let mut v = verdict(ExperimentId::Norms);
    let fields: Vec<SampledField> = (0..nc.fields as u64).map(|k| band_limited_field(g, band, cfg.seed + k)).collect();

    let id = gradient_riesz_identity_check(&fields, tol.riesz_identity)?;
    v.check(Check::at_most("max |d_j I^1 f - R_j f|", id.gradient_error, tol.riesz_identity));
    v.data("gradient_identity", &id);

    let mut worst: f64 = 0.0;
    for &(s, t) in &nc.compositions {
        let (is, it, ist) = (Operator::riesz_potential(g, s), Operator::riesz_potential(g, t), Operator::riesz_potential(g, s + t));
        for f in &fields {
            let two = is.apply(&it.apply(f)?)?;
            let one = ist.apply(f)?;
            worst = worst.max(sup_relative(&two, &one)?);
        }
    }
    v.check(Check::at_most("max |I^s I^t f - I^{s+t} f| / |I^{s+t} f|", worst, tol.riesz_identity));

    let fine_grid = g.with_samples(nc.refined_samples)?;
    let fine_pair = pair.on_grid(fine_grid)?;
    let mut drift: f64 = 0.0;
    let mut rows = Vec::new();
    for f in fields.iter().take(2) {
        let ff = f.resample(fine_grid)?;
        for &s in &nc.shifts {
            for idx in &nc.indices {
                let coarse = riesz_shift_check(f, s, *idx, &pair)?;
                let fine = riesz_shift_check(&ff, s, *idx, &fine_pair)?;
                let change = fine.ratio / coarse.ratio - 1.0;
                drift = drift.max(change.abs());
                let label = format!("s={s} alpha={} p={} q={}", idx.alpha, idx.p, idx.q);
                v.point(&format!("{label} N={}", g.samples()), s, coarse.ratio);
                v.point(&format!("{label} N={}", fine_grid.samples()), s, fine.ratio);
                rows.push((coarse, fine.ratio, change));
            }
        }
    }
    v.check(Check::at_most("max relative change of ||I^s f|| / ||f|| under refinement", drift, tol.refinement));
    v.check(Check::holds("lifting ratios inside [2^{-(|s|+1)}, 2^{|s|+1}]", rows.iter().all(|r| r.0.in_bracket)));
    v.data("shift_ratios", &rows);
    Ok(v)
}
