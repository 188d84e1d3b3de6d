use std::sync::{Arc, OnceLock};

use phikit::almost_diag::{big_w, lemma51_product_check, lemma52_sum, omega};
use phikit::lattice::{DyadicCube, TruncatedLattice};
use phikit::lp_frame::{build_lp_pair, LittlewoodPaleyPair, ProfileEdges};
use phikit::operators::Operator;
use phikit::spaces::{band_limited_field, covered_band, tl_norm, SpaceIndex};
use phikit::transform::{analyze, reconstruction_residual};
use phikit::{Complex64, GridSpec, SampledField};
use proptest::prelude::*;

fn setup() -> &'static (LittlewoodPaleyPair, Arc<TruncatedLattice>) {
    static CELL: OnceLock<(LittlewoodPaleyPair, Arc<TruncatedLattice>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = GridSpec::new(2, 16.0, 64).unwrap();
        let pair = build_lp_pair(g, ProfileEdges::DEFAULT).unwrap();
        let lat = Arc::new(TruncatedLattice::admissible(g).unwrap());
        (pair, lat)
    })
}

fn field(seed: u64) -> SampledField {
    let (pair, lat) = setup();
    band_limited_field(*pair.grid(), covered_band(pair, lat), seed)
}

/// Plain torus distance between cube corners, computed without the library geometry.
fn corner_distance(side: f64, p: &DyadicCube, q: &DyadicCube) -> f64 {
    p.corner()
        .iter()
        .zip(q.corner())
        .map(|(a, b)| {
            let d = (a - b).rem_euclid(side);
            d.min(side - d).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

fn w_oracle(side: f64, n: f64, p: &DyadicCube, q: &DyadicCube, beta: f64, gamma: f64) -> f64 {
    let (lp, lq) = (p.side(), q.side());
    let (lo, hi) = (lp.min(lq), lp.max(lq));
    (lo / hi).powf((n + gamma) / 2.0) / (1.0 + corner_distance(side, p, q) / hi).powf(n + beta)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn band_limited_fields_reconstruct(seed in 0u64..10_000) {
        let (pair, lat) = setup();
        prop_assert!(reconstruction_residual(&field(seed), pair, lat).unwrap() <= 1e-10);
    }

    #[test]
    fn analysis_is_linear(s1 in 0u64..1000, s2 in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (pair, lat) = setup();
        let (f, h) = (field(s1), field(s2 + 5000));
        let (ca, cb) = (Complex64::new(a, 0.5), Complex64::new(b, -1.0));
        let lhs = analyze(&f.scale(ca).add(&h.scale(cb)).unwrap(), pair, lat).unwrap();
        let rhs = analyze(&f, pair, lat).unwrap().combine(ca, &analyze(&h, pair, lat).unwrap(), cb).unwrap();
        let scale = rhs.max_abs().max(1.0);
        for (x, y) in lhs.values().iter().zip(rhs.values()) {
            prop_assert!((x - y).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn norm_is_homogeneous_and_shift_invariant(
        seed in 0u64..1000,
        alpha in -1.0f64..1.0,
        p in prop_oneof![Just(1.0), Just(2.0), Just(3.5)],
        q in prop_oneof![Just(1.0), Just(2.0), Just(f64::INFINITY)],
        c in 0.1f64..10.0,
        shift in (0i64..64, 0i64..64),
    ) {
        let (pair, _) = setup();
        let idx = SpaceIndex::new(alpha, p, q).unwrap();
        let f = field(seed);
        let base = tl_norm(&f, idx, pair).unwrap();
        let scaled = tl_norm(&f.scale(Complex64::new(0.0, c)), idx, pair).unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-9 * c * base);
        let moved = tl_norm(&f.translate(&[shift.0, shift.1]).unwrap(), idx, pair).unwrap();
        prop_assert!((moved - base).abs() <= 1e-9 * base);
    }

    #[test]
    fn riesz_potentials_compose(seed in 0u64..1000, s in -1.5f64..1.5, t in -1.5f64..1.5) {
        let (pair, _) = setup();
        let g = *pair.grid();
        let f = field(seed);
        let two = Operator::riesz_potential(g, s).apply(&Operator::riesz_potential(g, t).apply(&f).unwrap()).unwrap();
        let one = Operator::riesz_potential(g, s + t).apply(&f).unwrap();
        prop_assert!(two.sub(&one).unwrap().l2_norm() <= 1e-9 * one.l2_norm().max(1e-300));
    }

    #[test]
    fn weights_on_the_diagonal(nu in -3i32..4, k in (0i64..8, 0i64..8), beta in 0.1f64..3.0, gamma in 0.1f64..3.0, eps in 0.1f64..3.0) {
        let (pair, _) = setup();
        let g = pair.grid();
        let per_axis = ((g.side() * 2f64.powi(nu)) as i64).max(1);
        let cube = DyadicCube::new(nu, vec![k.0 % per_axis, k.1 % per_axis]);
        prop_assert!((big_w(g, &cube, &cube, beta, gamma).unwrap() - 1.0).abs() < 1e-15);
        prop_assert!((omega(g, &cube, &cube, eps).unwrap() - cube.side()).abs() <= 1e-14 * cube.side());
    }

    #[test]
    fn weights_are_symmetric_and_match_oracle(
        a in (-2i32..3, 0i64..16, 0i64..16),
        b in (-2i32..3, 0i64..16, 0i64..16),
        beta in 0.1f64..3.0,
        gamma in 0.1f64..3.0,
    ) {
        let (pair, _) = setup();
        let g = pair.grid();
        let cube = |(nu, x, y): (i32, i64, i64)| {
            let per_axis = (g.side() * 2f64.powi(nu)) as i64;
            DyadicCube::new(nu, vec![x % per_axis, y % per_axis])
        };
        let (p, q) = (cube(a), cube(b));
        let w = big_w(g, &p, &q, beta, gamma).unwrap();
        prop_assert!((w - big_w(g, &q, &p, beta, gamma).unwrap()).abs() <= 1e-15 * w);
        let o = w_oracle(g.side(), 2.0, &p, &q, beta, gamma);
        prop_assert!((w - o).abs() <= 1e-12 * o);
    }

    #[test]
    fn truncated_sum_grows_with_truncation(alpha in 0.1f64..2.0, excess in 0.1f64..2.0, eps in 0.1f64..2.0, lambda in 0.01f64..100.0, j in 2i32..12) {
        let beta = alpha + excess;
        let short = lemma52_sum(alpha, beta, eps, lambda, j);
        let long = lemma52_sum(alpha, beta, eps, lambda, j + 1);
        prop_assert!(short > 0.0 && long >= short);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn product_estimate_matches_brute_force(beta in 0.2f64..1.5, g1 in 0.2f64..3.0, dg in 0.1f64..2.0) {
        let gamma1 = g1.max(2.0 * beta - g1 + 0.05);
        let gamma2 = gamma1 + dg;
        let g = GridSpec::new(2, 2.0, 16).unwrap();
        let lat = TruncatedLattice::new_geometric(g, -1, 1).unwrap();
        let report = lemma51_product_check(beta, gamma1, gamma2, &lat).unwrap();
        let cubes: Vec<DyadicCube> = lat.iter().collect();
        let w = |p: &DyadicCube, q: &DyadicCube, gamma: f64| w_oracle(g.side(), 2.0, p, q, beta, gamma);
        let mut best: f64 = 0.0;
        for p in &cubes {
            for q in &cubes {
                let s: f64 = cubes.iter().map(|r| w(p, r, gamma1) * w(r, q, gamma2)).sum();
                best = best.max(s / w(p, q, gamma1.min(gamma2)));
            }
        }
        prop_assert_eq!(report.cubes, cubes.len());
        prop_assert!((report.max_ratio - best).abs() <= 1e-10 * best);
        prop_assert!(report.min_diagonal_ratio >= 1.0);
    }
}
