//! `T1` through the regularizers `eta^j`, vanishing integrals, paraproducts,
//! the paraproduct decomposition, the uniform bound on `T(eta^j)` and the
//! growth of the modulated symbol on coherent families.
//!
//! On the torus the limit of `eta^j` is the constant field, so `T1` pairings
//! are computed with the cell-restricted regularizer, which tends to 1 on the
//! whole box. The periodic regularizer never does (it has mean zero) and is
//! only used where dilation covariance matters, in [`sharpness_experiment`].

use crate::almost_diag::OperatorMatrix;
use crate::error::{PhiError, Result};
use crate::field::{GridSpec, SampledField};
use crate::lattice::{DyadicCube, LatticeSpec, TruncatedLattice};
use crate::lp_frame::{frame_scale, Atom, LittlewoodPaleyPair};
use crate::operators::Operator;
use crate::spaces::{band_limited_field, covered_band, tl_norm, SpaceIndex};
use crate::transform::{analyze_with, atom_spectrum, synthesize, CoefficientSequence};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

/// Successive pairings closer than this count as stabilized.
pub const STABILIZATION_TOL: f64 = 1e-9;
/// Iteration continues past stabilization until changes drop below this.
pub const SETTLE_TOL: f64 = 1e-12;
/// `|<T1, A_Q>|` at or below this is reported as zero.
pub const ZERO_PAIRING_TOL: f64 = 1e-8;
pub const VANISHING_TOL: f64 = 1e-9;
/// Lattices up to this size get a direct vanishing-integral evaluation for every cube.
pub const DIRECT_LIMIT: usize = 256;
const CROSS_CHECK_CUBES: usize = 16;
pub const SHARPNESS_SLOPE_TOL: f64 = 0.05;
pub const GROWTH_SLOPE: (f64, f64) = (0.4, 0.6);

/// `int f` from a spectrum in the continuous convention.
fn integral_of_spectrum(g: &GridSpec, spec: &[Complex64]) -> Complex64 {
    spec[0] * (2.0 * PI).powf(g.dim() as f64 / 2.0)
}

/// Up to `count` cubes spread over every scale of the lattice.
fn sample_cubes(lattice: &TruncatedLattice, count: usize) -> Vec<usize> {
    let per_scale = (count / lattice.scale_count()).max(1);
    let mut out = Vec::new();
    for nu in lattice.scales() {
        let r = lattice.range_at(nu);
        let step = (r.len() / per_scale).max(1);
        out.extend(r.step_by(step).take(per_scale));
    }
    out
}

/// Smallest `j` with `eta^j = 1` to double precision on the whole box.
pub fn box_limit(grid: &GridSpec) -> i32 {
    let far = (grid.dim() as f64).sqrt() * grid.side() / 2.0;
    (far / 1e-8).log2().ceil() as i32
}

#[derive(Debug, Clone, Serialize)]
pub struct T1Result {
    pub operator: String,
    pub lattice: LatticeSpec,
    #[serde(skip)]
    pub phi_pairings: CoefficientSequence,
    #[serde(skip)]
    pub psi_pairings: CoefficientSequence,
    pub first_j: i32,
    pub last_j: i32,
    /// First `j` at which every cube changed by less than [`STABILIZATION_TOL`].
    pub stabilized_at: Option<i32>,
    /// Largest change over the last step, both pairing families.
    pub last_change: f64,
    /// Per cube: last change below [`STABILIZATION_TOL`] in both families.
    #[serde(skip)]
    pub converged: Vec<bool>,
    pub inconclusive: usize,
    /// `max |<T eta^j, phi_Q> - int T^t(phi_Q)|` (and the same for `psi_Q`) over sampled cubes.
    pub limit_gap: f64,
    pub max_pairing: f64,
}

impl T1Result {
    pub fn stabilized(&self) -> bool {
        self.inconclusive == 0
    }

    /// Per cube: the stabilized pairing vanishes in both families.
    pub fn zero_verdicts(&self) -> Vec<bool> {
        self.phi_pairings
            .values()
            .iter()
            .zip(self.psi_pairings.values())
            .map(|(a, b)| a.norm() <= ZERO_PAIRING_TOL && b.norm() <= ZERO_PAIRING_TOL)
            .collect()
    }

    /// `T_psi {<T1, phi_Q>}` as a field.
    pub fn field(&self, pair: &LittlewoodPaleyPair) -> Result<SampledField> {
        synthesize(&self.phi_pairings, pair)
    }
}

/// Pairings `<T(eta^j), phi_Q>` and `<T(eta^j), psi_Q>` for increasing `j` until they settle.
pub fn compute_t1(t: &Operator, pair: &LittlewoodPaleyPair, lattice: &Arc<TruncatedLattice>) -> Result<T1Result> {
    let g = *pair.grid();
    if t.grid() != &g || lattice.grid() != &g {
        return Err(PhiError::GridMismatch("operator, pair and lattice must share a grid".into()));
    }
    let first = pair.min_cell_regularizer_scale();
    let limit = box_limit(&g).max(first + 1);
    let mut prev: Option<(CoefficientSequence, CoefficientSequence)> = None;
    let mut stabilized_at = None;
    let mut converged = vec![false; lattice.len()];
    let mut last_change = f64::INFINITY;
    let mut last_j = first;
    for j in first..=limit {
        let eta = pair.regularizer_cell(j)?;
        let te = t.apply(&eta)?;
        let phi = analyze_with(&te, pair, lattice, Atom::Phi)?;
        let psi = analyze_with(&te, pair, lattice, Atom::Psi)?;
        last_j = j;
        if let Some((p0, s0)) = &prev {
            let mut worst: f64 = 0.0;
            for (i, c) in converged.iter_mut().enumerate() {
                let d = (phi.values()[i] - p0.values()[i]).norm().max((psi.values()[i] - s0.values()[i]).norm());
                *c = d < STABILIZATION_TOL;
                worst = worst.max(d);
            }
            if stabilized_at.is_none() && worst < STABILIZATION_TOL {
                stabilized_at = Some(j);
            }
            // past stabilization, stop once settled or once rounding stops the decrease
            let done = worst < SETTLE_TOL || (worst < STABILIZATION_TOL && worst >= last_change);
            last_change = worst;
            prev = Some((phi, psi));
            if done {
                break;
            }
        } else {
            prev = Some((phi, psi));
        }
    }
    let (phi, psi) = prev.expect("at least one regularizer step");
    let tt = t.transpose();
    let mut gap: f64 = 0.0;
    for idx in sample_cubes(lattice, CROSS_CHECK_CUBES) {
        let cube = lattice.cube(idx);
        for (atom, seq) in [(Atom::Phi, &phi), (Atom::Psi, &psi)] {
            let spec = tt.apply_spectrum(&atom_spectrum(pair, atom, &cube))?;
            gap = gap.max((integral_of_spectrum(&g, &spec) - seq.values()[idx]).norm());
        }
    }
    let max_pairing = phi.max_abs().max(psi.max_abs());
    Ok(T1Result {
        operator: t.name().to_string(),
        lattice: lattice.spec(),
        inconclusive: converged.iter().filter(|c| !**c).count(),
        phi_pairings: phi,
        psi_pairings: psi,
        first_j: first,
        last_j,
        stabilized_at,
        last_change,
        converged,
        limit_gap: gap,
        max_pairing,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VanishingReport {
    pub operator: String,
    /// `max_Q |int T(psi_Q)|`.
    pub max_t_psi: f64,
    pub witness_t_psi: Option<DyadicCube>,
    /// `max_Q |int T^t(phi_Q)|`.
    pub max_tt_phi: f64,
    pub witness_tt_phi: Option<DyadicCube>,
    /// `direct` or `pairing` (integrals as pairings with `T 1`, `T^t 1`, sampled cubes cross-checked).
    pub method: &'static str,
    pub cross_check_gap: f64,
    pub cubes: usize,
    pub passed: bool,
}

fn argmax(values: &[Complex64]) -> (f64, Option<usize>) {
    values.iter().enumerate().fold((0.0, None), |best, (i, v)| if v.norm() > best.0 { (v.norm(), Some(i)) } else { best })
}

/// Zero-frequency coefficients of `T(psi_Q)` and `T^t(phi_Q)` for every lattice cube.
pub fn vanishing_integral_check(t: &Operator, pair: &LittlewoodPaleyPair, lattice: &Arc<TruncatedLattice>) -> Result<VanishingReport> {
    let g = *pair.grid();
    if t.grid() != &g || lattice.grid() != &g {
        return Err(PhiError::GridMismatch("operator, pair and lattice must share a grid".into()));
    }
    let tt = t.transpose();
    let direct = |idx: usize| -> Result<(Complex64, Complex64)> {
        let cube = lattice.cube(idx);
        let a = integral_of_spectrum(&g, &t.apply_spectrum(&atom_spectrum(pair, Atom::Psi, &cube))?);
        let b = integral_of_spectrum(&g, &tt.apply_spectrum(&atom_spectrum(pair, Atom::Phi, &cube))?);
        Ok((a, b))
    };
    let (t_psi, tt_phi, method, gap) = if lattice.len() <= DIRECT_LIMIT {
        let pairs: Vec<(Complex64, Complex64)> = (0..lattice.len()).map(direct).collect::<Result<_>>()?;
        (pairs.iter().map(|p| p.0).collect::<Vec<_>>(), pairs.iter().map(|p| p.1).collect::<Vec<_>>(), "direct", 0.0)
    } else {
        let one = SampledField::constant(g, Complex64::new(1.0, 0.0));
        let t_psi = analyze_with(&tt.apply(&one)?, pair, lattice, Atom::Psi)?.values().to_vec();
        let tt_phi = analyze_with(&t.apply(&one)?, pair, lattice, Atom::Phi)?.values().to_vec();
        let mut gap: f64 = 0.0;
        for idx in sample_cubes(lattice, CROSS_CHECK_CUBES) {
            let (a, b) = direct(idx)?;
            gap = gap.max((a - t_psi[idx]).norm()).max((b - tt_phi[idx]).norm());
        }
        (t_psi, tt_phi, "pairing", gap)
    };
    let (max_t_psi, wa) = argmax(&t_psi);
    let (max_tt_phi, wb) = argmax(&tt_phi);
    Ok(VanishingReport {
        operator: t.name().to_string(),
        max_t_psi,
        witness_t_psi: wa.map(|i| lattice.cube(i)),
        max_tt_phi,
        witness_tt_phi: wb.map(|i| lattice.cube(i)),
        method,
        cross_check_gap: gap,
        cubes: lattice.len(),
        passed: max_t_psi <= VANISHING_TOL && max_tt_phi <= VANISHING_TOL,
    })
}

/// `Pi f = sum_Q c_Q |Q|^{-1/2} <f, Phi_Q> psi_Q` for given pairings `c_Q = <b, phi_Q>`.
pub fn paraproduct_from_pairings(pairings: &CoefficientSequence, pair: Arc<LittlewoodPaleyPair>, name: &str) -> Result<Operator> {
    let lattice = pairings.lattice().clone();
    let diag: Vec<Complex64> = pairings
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| v / lattice.cube(i).volume().sqrt())
        .collect();
    let matrix = Arc::new(OperatorMatrix::diagonal(lattice, diag, name, &pair.profile_hash()));
    Operator::matrix_with_atoms(name, matrix, pair, Atom::Mollifier, Atom::Psi, Complex64::new(1.0, 0.0))
}

/// `Pi_b`.
pub fn paraproduct(b: &SampledField, pair: Arc<LittlewoodPaleyPair>, lattice: &Arc<TruncatedLattice>) -> Result<Operator> {
    let c = analyze_with(b, &pair, lattice, Atom::Phi)?;
    if c.values().iter().all(|v| *v == Complex64::default()) {
        return Ok(Operator::zero(*pair.grid()).named("paraproduct(0)"));
    }
    paraproduct_from_pairings(&c, pair, "paraproduct")
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagonalBound {
    /// `max_Q |pi_{Q,Q}| / l(Q)`.
    pub constant: f64,
    pub witness: Option<DyadicCube>,
}

/// `C` in `|pi_{Q,Q}| <= C l(Q)` with `pi_{Q,Q} = <b, phi_Q> |Q|^{-1/2}`.
pub fn diagonal_bound(pairings: &CoefficientSequence) -> DiagonalBound {
    let lat = pairings.lattice();
    let mut best = (0.0, None);
    for (i, v) in pairings.values().iter().enumerate() {
        let q = lat.cube(i);
        let r = v.norm() / q.volume().sqrt() / q.side();
        if r > best.0 {
            best = (r, Some(q));
        }
    }
    DiagonalBound { constant: best.0, witness: best.1 }
}

/// `b(x) = sum_k a_k cos(xi_k . x + theta_k)` with `terms` seeded modes in the band.
/// The same seed gives the same function on every grid with the same box.
pub fn trig_field(grid: GridSpec, band: (f64, f64), seed: u64, terms: usize) -> Result<SampledField> {
    trig_field_with_period(grid, band, seed, terms, grid.side())
}

/// [`trig_field`] with modes on the lattice `2 pi / period`; `period` must divide `L`.
pub fn trig_field_with_period(grid: GridSpec, band: (f64, f64), seed: u64, terms: usize, period: f64) -> Result<SampledField> {
    let ratio = grid.side() / period;
    if !(period > 0.0) || (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
        return Err(PhiError::RejectedInput(format!("period {period} does not divide the box")));
    }
    let h = 2.0 * PI / period;
    let top = (band.1 / h).floor() as i64;
    if band.0 >= band.1 || top < 1 || band.1 >= grid.nyquist() {
        return Err(PhiError::RejectedInput(format!("band {band:?} holds no resolvable mode")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::with_capacity(terms);
    let mut tries = 0;
    while modes.len() < terms {
        tries += 1;
        if tries > 100_000 {
            return Err(PhiError::RejectedInput(format!("band {band:?} holds too few modes")));
        }
        let m: Vec<i64> = (0..grid.dim()).map(|_| rng.random_range(-top..=top)).collect();
        let r = m.iter().map(|&v| (v as f64 * h).powi(2)).sum::<f64>().sqrt();
        if r < band.0 || r > band.1 {
            continue;
        }
        let a: f64 = StandardNormal.sample(&mut rng);
        let theta = rng.random_range(0.0..2.0 * PI);
        modes.push((m, a, theta));
    }
    SampledField::from_fn(grid, |x| {
        let v: f64 = modes
            .iter()
            .map(|(m, a, th)| a * (m.iter().zip(x).map(|(&k, &y)| k as f64 * h * y).sum::<f64>() + th).cos())
            .sum();
        Complex64::new(v, 0.0)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub t1: T1Result,
    pub tt1: T1Result,
    pub vanishing: VanishingReport,
    /// `max ||(S + Pi_a + Pi_b^t) f - T f|| / ||T f||` over seeded fields.
    pub reproduction_error: f64,
    pub fields: usize,
}

pub struct Decomposition {
    pub s: Operator,
    pub pi_a: Operator,
    pub pi_b_t: Operator,
    /// `a = T1` and `b = T^t 1` as fields.
    pub a: SampledField,
    pub b: SampledField,
    pub report: DecompositionReport,
}

/// `S = T - Pi_a - Pi_b^t` with `a = T1`, `b = T^t 1`.
pub fn full_t1_decomposition(
    t: &Operator,
    pair: Arc<LittlewoodPaleyPair>,
    lattice: &Arc<TruncatedLattice>,
    fields: usize,
    seed: u64,
) -> Result<Decomposition> {
    let t1 = compute_t1(t, &pair, lattice)?;
    let tt1 = compute_t1(&t.transpose(), &pair, lattice)?;
    for r in [&t1, &tt1] {
        if !r.stabilized() {
            return Err(PhiError::NotStabilized(format!(
                "{}: {} cubes inconclusive at j = {} (last change {:.3e})",
                r.operator, r.inconclusive, r.last_j, r.last_change
            )));
        }
    }
    let pi_a = paraproduct_from_pairings(&t1.phi_pairings, pair.clone(), "paraproduct(T1)")?;
    let pi_b_t = paraproduct_from_pairings(&tt1.phi_pairings, pair.clone(), "paraproduct(T^t 1)")?.transpose();
    let one = Complex64::new(1.0, 0.0);
    let s = Operator::sum(format!("S[{}]", t.name()), vec![(one, t.clone()), (-one, pi_a.clone()), (-one, pi_b_t.clone())])?;
    let vanishing = vanishing_integral_check(&s, &pair, lattice)?;
    let sum = Operator::sum("S+Pi_a+Pi_b^t", vec![(one, s.clone()), (one, pi_a.clone()), (one, pi_b_t.clone())])?;
    let band = covered_band(&pair, lattice);
    let mut worst: f64 = 0.0;
    for k in 0..fields as u64 {
        let f = band_limited_field(*pair.grid(), band, seed + k);
        let tf = t.apply(&f)?;
        let d = sum.apply(&f)?.sub(&tf)?.l2_norm();
        let norm = tf.l2_norm();
        worst = worst.max(if norm > 0.0 { d / norm } else { d });
    }
    let a = t1.field(&pair)?;
    let b = tt1.field(&pair)?;
    Ok(Decomposition {
        s,
        pi_a,
        pi_b_t,
        a,
        b,
        report: DecompositionReport { t1, tt1, vanishing, reproduction_error: worst, fields },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SharpnessReport {
    pub operator: String,
    pub js: Vec<i32>,
    /// `||T(eta^j)||` in the `F_inf^{1,2}` proxy.
    pub norms: Vec<f64>,
    pub sup: f64,
    /// Least-squares slope of `ln ||T(eta^j)||` against `j`.
    pub slope: f64,
    pub inconclusive: bool,
    pub passed: bool,
}

/// `j >= 0` whose dilated annulus starts at least one fundamental mode out and ends
/// below half the Nyquist frequency.
/// Regularizer scales that the box resolves and whose spectrum lies below every `psi_Q` band of the lattice.
pub fn sharpness_scales(pair: &LittlewoodPaleyPair, lattice: &TruncatedLattice) -> Vec<i32> {
    let g = pair.grid();
    let e = pair.edges();
    let below = (e.r3 / e.r0).log2().ceil() as i32 - lattice.nu_min();
    (below.max(0)..=g.side().log2().ceil() as i32)
        .filter(|&j| {
            let s = 2f64.powi(-j);
            e.r0 * s >= g.mode_spacing() && e.r3 * s <= g.nyquist() / 2.0 && pair.regularizer(j).is_ok()
        })
        .collect()
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// `||T(eta^j)||_{F_inf^{1,2}}` over the periodic regularizers, with no growth allowed in `j`.
pub fn sharpness_experiment(t: &Operator, pair: &LittlewoodPaleyPair, js: &[i32]) -> Result<SharpnessReport> {
    let idx = SpaceIndex::new(1.0, f64::INFINITY, 2.0)?;
    let mut norms = Vec::with_capacity(js.len());
    for &j in js {
        norms.push(tl_norm(&t.apply(&pair.regularizer(j)?)?, idx, pair)?);
    }
    let sup = norms.iter().copied().fold(0.0, f64::max);
    let inconclusive = js.len() < 3;
    let slope = if inconclusive || norms.iter().any(|v| *v <= 0.0) {
        0.0
    } else {
        let xs: Vec<f64> = js.iter().map(|&j| j as f64).collect();
        let ys: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
        log_slope(&xs, &ys)
    };
    Ok(SharpnessReport {
        operator: t.name().to_string(),
        js: js.to_vec(),
        norms,
        sup,
        slope,
        inconclusive,
        passed: !inconclusive && slope.abs() <= SHARPNESS_SLOPE_TOL,
    })
}

/// Radius of the bump placed at each `2^nu e_1`; inside `B(0, 2 eps_cex)`.
pub fn coherent_bump_radius(pair: &LittlewoodPaleyPair) -> Result<f64> {
    let eps = pair.counterexample_radius().ok_or_else(|| PhiError::RejectedInput("pair is not a counterexample pair".into()))?;
    Ok(1.8 * eps)
}

fn bump(r: f64, radius: f64) -> f64 {
    crate::lp_frame::smooth_step(1.0 - r / radius)
}

/// Bands `nu` with `2^nu e_1` on the mode lattice and the shifted bump below 0.9 Nyquist.
fn coherent_bands(pair: &LittlewoodPaleyPair, radius: f64, wanted: usize) -> Vec<i32> {
    let g = pair.grid();
    (1..=wanted as i32)
        .take_while(|&nu| {
            let s = 2f64.powi(nu);
            let shift = s / g.mode_spacing();
            (shift - shift.round()).abs() < 1e-9 && s + radius < 0.9 * g.nyquist()
        })
        .collect()
}

/// `f_N^ = sum_{nu=1}^N 2^nu b(xi - 2^nu e_1)` for a fixed bump `b`.
pub fn coherent_family(pair: &LittlewoodPaleyPair, n: usize) -> Result<SampledField> {
    let g = *pair.grid();
    let radius = coherent_bump_radius(pair)?;
    let bands = coherent_bands(pair, radius, n);
    if bands.len() < n {
        return Err(PhiError::ScaleOutOfRange { scale: n as i32, reason: "band beyond the grid".into() });
    }
    let h = g.mode_spacing();
    let reach = (radius / h).ceil() as i64;
    let mut spec = vec![Complex64::default(); g.len()];
    for nu in bands {
        let s = 2f64.powi(nu);
        let centre = (s / h).round() as i64;
        for_each_offset(g.dim(), reach, |off| {
            let r = off.iter().map(|&v| (v as f64 * h).powi(2)).sum::<f64>().sqrt();
            let w = bump(r, radius);
            if w > 0.0 {
                let mut m = off.to_vec();
                m[0] += centre;
                if let Some(i) = g.mode_index(&m) {
                    spec[i] += Complex64::new(s * w, 0.0);
                }
            }
        });
    }
    SampledField::from_spectrum(g, spec)
}

fn for_each_offset(dim: usize, reach: i64, mut f: impl FnMut(&[i64])) {
    let side = 2 * reach + 1;
    let total = (side as usize).pow(dim as u32);
    let mut off = vec![0i64; dim];
    for mut k in 0..total {
        for v in off.iter_mut() {
            *v = (k % side as usize) as i64 - reach;
            k /= side as usize;
        }
        f(&off);
    }
}

/// Closed forms for the coherent family: `||f_N||_{F_2^{-1,2}} = sqrt(N B)` and
/// `||T_a f_N||_{F_2^{0,2}} = N sqrt(A)`, so `R(N) = sqrt(N A / B)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoherentOracle {
    pub a: f64,
    pub b: f64,
}

impl CoherentOracle {
    pub fn ratio(&self, n: usize) -> f64 {
        (n as f64 * self.a / self.b).sqrt()
    }
}

/// The oracle constants, summed directly over the bump modes.
pub fn coherent_oracle(pair: &LittlewoodPaleyPair) -> Result<CoherentOracle> {
    let g = *pair.grid();
    let radius = coherent_bump_radius(pair)?;
    let h = g.mode_spacing();
    let reach = (radius / h).ceil() as i64;
    let fs = frame_scale(g.dim());
    let e = pair.edges();
    let (mut a, mut b) = (0.0, 0.0);
    for_each_offset(g.dim(), reach, |off| {
        let r = off.iter().map(|&v| (v as f64 * h).powi(2)).sum::<f64>().sqrt();
        let w = bump(r, radius);
        b += w * w;
        a += (fs * w).powi(2) * e.rho(r);
    });
    let mv = g.mode_volume();
    Ok(CoherentOracle { a: a * mv, b: b * mv })
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub ns: Vec<usize>,
    /// `R(N) = ||T_a f_N||_{F_2^{0,2}} / ||f_N||_{F_2^{-1,2}}`.
    pub ratios: Vec<f64>,
    pub oracle: Vec<f64>,
    /// `max |R(N) / oracle(N) - 1|`.
    pub oracle_error: f64,
    pub slope: f64,
    pub oracle_slope: f64,
    pub strictly_increasing: bool,
    /// The same ratio with `I^1` in place of `T_a`.
    pub contrast: Vec<f64>,
    pub contrast_slope: f64,
    pub warning: Option<String>,
    pub outside_paper_scope: bool,
    pub passed: bool,
}

fn loglog_slope(ns: &[usize], ys: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    log_slope(&xs, &ys)
}

/// `R(N)` for the coherent family under the modulated symbol, against the closed form.
pub fn counterexample_growth(pair: Arc<LittlewoodPaleyPair>, ns: &[usize]) -> Result<GrowthReport> {
    let g = *pair.grid();
    let t = Operator::modulated_symbol(pair.clone())?;
    let i1 = Operator::riesz_potential(g, 1.0);
    let radius = coherent_bump_radius(&pair)?;
    let wanted = ns.iter().copied().max().unwrap_or(0);
    let available = coherent_bands(&pair, radius, wanted).len();
    let (kept, warning): (Vec<usize>, _) = if available < wanted {
        (
            ns.iter().copied().filter(|&n| n <= available).collect(),
            Some(format!("bands beyond {available} leave the grid; N truncated")),
        )
    } else {
        (ns.to_vec(), None)
    };
    let src = SpaceIndex::new(-1.0, 2.0, 2.0)?;
    let dst = SpaceIndex::new(0.0, 2.0, 2.0)?;
    let oracle_c = coherent_oracle(&pair)?;
    let mut ratios = Vec::new();
    let mut contrast = Vec::new();
    for &n in &kept {
        let f = coherent_family(&pair, n)?;
        let den = tl_norm(&f, src, &pair)?;
        ratios.push(tl_norm(&t.apply(&f)?, dst, &pair)? / den);
        contrast.push(tl_norm(&i1.apply(&f)?, dst, &pair)? / den);
    }
    let oracle: Vec<f64> = kept.iter().map(|&n| oracle_c.ratio(n)).collect();
    let oracle_error = ratios.iter().zip(&oracle).map(|(r, o)| (r / o - 1.0).abs()).fold(0.0, f64::max);
    let strictly_increasing = ratios.windows(2).all(|w| w[1] > w[0]);
    let enough = kept.len() >= 2;
    let slope = if enough { loglog_slope(&kept, &ratios) } else { 0.0 };
    let oracle_slope = if enough { loglog_slope(&kept, &oracle) } else { 0.0 };
    let contrast_slope = if enough { loglog_slope(&kept, &contrast) } else { 0.0 };
    let passed = enough && strictly_increasing && slope >= GROWTH_SLOPE.0 && slope <= GROWTH_SLOPE.1;
    Ok(GrowthReport {
        ns: kept,
        ratios,
        oracle,
        oracle_error,
        slope,
        oracle_slope,
        strictly_increasing,
        contrast,
        contrast_slope,
        warning,
        outside_paper_scope: g.dim() == 1,
        passed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PairIndependence {
    pub operator: String,
    pub cubes: usize,
    /// Cubes on which the two pairs give the same zero/nonzero verdict.
    pub agreeing: usize,
    pub first_zero: usize,
    pub second_zero: usize,
}

/// Zero/nonzero `T1` verdicts per cube under two pairs, reported as data.
pub fn pair_independence(
    t: &Operator,
    first: &LittlewoodPaleyPair,
    second: &LittlewoodPaleyPair,
    lattice: &Arc<TruncatedLattice>,
) -> Result<PairIndependence> {
    let a = compute_t1(t, first, lattice)?.zero_verdicts();
    let b = compute_t1(t, second, lattice)?.zero_verdicts();
    Ok(PairIndependence {
        operator: t.name().to_string(),
        cubes: a.len(),
        agreeing: a.iter().zip(&b).filter(|(x, y)| x == y).count(),
        first_zero: a.iter().filter(|v| **v).count(),
        second_zero: b.iter().filter(|v| **v).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp_frame::{build_counterexample_phi, build_lp_pair, ProfileEdges};
    use crate::transform::atom;

    fn setup(nu: (i32, i32)) -> (Arc<LittlewoodPaleyPair>, Arc<TruncatedLattice>) {
        let g = GridSpec::new(2, 16.0, 64).unwrap();
        let pair = Arc::new(build_lp_pair(g, ProfileEdges::DEFAULT).unwrap());
        let lat = Arc::new(TruncatedLattice::new(g, nu.0, nu.1).unwrap());
        (pair, lat)
    }

    fn symbol(pair: &LittlewoodPaleyPair, lat: &TruncatedLattice, seed: u64) -> SampledField {
        let (lo, hi) = covered_band(pair, lat);
        trig_field(*pair.grid(), (lo * 1.05, hi * 0.95), seed, 6).unwrap()
    }

    #[test]
    fn convolution_has_vanishing_t1() {
        let (pair, lat) = setup((0, 1));
        let r = compute_t1(&Operator::riesz_potential(*pair.grid(), 1.0), &pair, &lat).unwrap();
        assert!(r.stabilized(), "{r:?}");
        assert!(r.max_pairing < ZERO_PAIRING_TOL, "{}", r.max_pairing);
        assert!(r.limit_gap < 1e-9, "{}", r.limit_gap);
        assert!(r.zero_verdicts().iter().all(|v| *v));
    }

    #[test]
    fn zero_operator_pairings_vanish_at_every_step() {
        let (pair, lat) = setup((0, 0));
        let r = compute_t1(&Operator::zero(*pair.grid()), &pair, &lat).unwrap();
        assert_eq!(r.max_pairing, 0.0);
        assert_eq!(r.stabilized_at, Some(r.first_j + 1));
    }

    #[test]
    fn paraproduct_reproduces_its_symbol() {
        let (pair, lat) = setup((0, 1));
        let b = symbol(&pair, &lat, 3);
        let pb = paraproduct(&b, pair.clone(), &lat).unwrap();
        let r = compute_t1(&pb, &pair, &lat).unwrap();
        assert!(r.stabilized());
        let want_phi = analyze_with(&b, &pair, &lat, Atom::Phi).unwrap();
        let want_psi = analyze_with(&b, &pair, &lat, Atom::Psi).unwrap();
        let e1 = r.phi_pairings.values().iter().zip(want_phi.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        let e2 = r.psi_pairings.values().iter().zip(want_psi.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(e1 < 1e-6 && e2 < 1e-6, "{e1} {e2}");
        assert!(want_phi.max_abs() > 0.1);
        let rt = compute_t1(&pb.transpose(), &pair, &lat).unwrap();
        assert!(rt.stabilized());
        assert!(rt.max_pairing < 1e-9, "{}", rt.max_pairing);
    }

    #[test]
    fn paraproduct_matches_its_series() {
        let (pair, lat) = setup((0, 0));
        let g = *pair.grid();
        let b = trig_field(g, (0.5, 2.0), 5, 6).unwrap();
        let pb = paraproduct(&b, pair.clone(), &lat).unwrap();
        let f = band_limited_field(g, (0.2, 3.0), 9);
        // sum_Q <b, phi_Q> |Q|^{-1/2} <f, Phi_Q> psi_Q, one atom at a time
        let mut acc = SampledField::zeros(g);
        for cube in lat.iter() {
            let c = b.bilinear(&atom(&pair, Atom::Phi, &cube)).unwrap() / cube.volume().sqrt();
            let m = f.bilinear(&atom(&pair, Atom::Mollifier, &cube)).unwrap();
            acc = acc.axpy(c * m, &atom(&pair, Atom::Psi, &cube)).unwrap();
        }
        let got = pb.apply(&f).unwrap();
        let err = got.sub(&acc).unwrap().l2_norm() / acc.l2_norm();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn paraproduct_trivial_cases() {
        let (pair, lat) = setup((0, 0));
        let g = *pair.grid();
        assert!(paraproduct(&SampledField::zeros(g), pair.clone(), &lat).unwrap().is_zero());
        // spectrum beyond every Phi_Q support
        let b = trig_field(g, (0.5, 2.0), 1, 6).unwrap();
        let f = band_limited_field(g, (1.0, 3.0), 2);
        let out = paraproduct(&b, pair, &lat).unwrap().apply(&f).unwrap();
        assert!(out.max_abs() < 1e-14, "{}", out.max_abs());
    }

    #[test]
    fn diagonal_bound_is_refinement_stable() {
        let (pair, lat) = setup((0, 1));
        let b = symbol(&pair, &lat, 7);
        let c0 = diagonal_bound(&analyze_with(&b, &pair, &lat, Atom::Phi).unwrap());
        let fine = Arc::new(lat.refined().unwrap());
        let fpair = pair.on_grid(*fine.grid()).unwrap();
        let bf = trig_field(*fine.grid(), { let (lo, hi) = covered_band(&pair, &lat); (lo * 1.05, hi * 0.95) }, 7, 6).unwrap();
        let c1 = diagonal_bound(&analyze_with(&bf, &fpair, &fine, Atom::Phi).unwrap());
        assert!(c0.constant > 0.0);
        assert!((c1.constant / c0.constant - 1.0).abs() < 1e-9, "{} {}", c0.constant, c1.constant);
    }

    #[test]
    fn trig_field_restricts_between_grids() {
        let g = GridSpec::new(2, 16.0, 32).unwrap();
        let a = trig_field(g, (0.5, 2.0), 4, 5).unwrap();
        let b = trig_field(g.with_samples(64).unwrap(), (0.5, 2.0), 4, 5).unwrap();
        let g2 = *b.grid();
        for i in (0..g.len()).step_by(37) {
            let c = g.coords(i);
            let j = g2.flat(&c.iter().map(|v| 2 * v).collect::<Vec<_>>());
            assert!((a.values()[i] - b.values()[j]).norm() < 1e-12);
        }
    }

    #[test]
    fn vanishing_integrals() {
        let (pair, lat) = setup((0, 0));
        let g = *pair.grid();
        let r = vanishing_integral_check(&Operator::riesz_potential(g, 1.0), &pair, &lat).unwrap();
        assert!(r.passed && r.method == "direct", "{r:?}");
        assert!(vanishing_integral_check(&Operator::zero(g), &pair, &lat).unwrap().passed);
        let q0 = lat.cube(5);
        let b = atom(&pair, Atom::Phi, &q0).conj();
        let r = vanishing_integral_check(&paraproduct(&b, pair.clone(), &lat).unwrap(), &pair, &lat).unwrap();
        assert!(!r.passed);
        assert!(r.max_t_psi < VANISHING_TOL, "synthesis by psi keeps int T(psi_Q) = 0");
        assert!(r.max_tt_phi > 1e-3);
    }

    #[test]
    fn vanishing_pairing_path_agrees_with_direct() {
        let (pair, lat) = setup((0, 1));
        let b = symbol(&pair, &lat, 2);
        let t = paraproduct(&b, pair.clone(), &lat).unwrap();
        let r = vanishing_integral_check(&t, &pair, &lat).unwrap();
        assert_eq!(r.method, "pairing");
        assert!(r.cross_check_gap < 1e-12, "{}", r.cross_check_gap);
        assert!(!r.passed);
    }

    #[test]
    fn decomposition_of_paraproduct_and_potential() {
        let (pair, lat) = setup((0, 1));
        let g = *pair.grid();
        let b0 = symbol(&pair, &lat, 11);
        let pb = paraproduct(&b0, pair.clone(), &lat).unwrap();
        let i1 = Operator::riesz_potential(g, 1.0);

        let d = full_t1_decomposition(&i1, pair.clone(), &lat, 3, 1).unwrap();
        assert!(d.a.max_abs() < 1e-8 && d.b.max_abs() < 1e-8);

        let d = full_t1_decomposition(&pb, pair.clone(), &lat, 3, 1).unwrap();
        let f = band_limited_field(g, covered_band(&pair, &lat), 4);
        let s = d.s.apply(&f).unwrap().l2_norm() / pb.apply(&f).unwrap().l2_norm();
        assert!(s < 1e-8, "{s}");

        let t = i1.plus(&pb).unwrap();
        let d = full_t1_decomposition(&t, pair.clone(), &lat, 5, 1).unwrap();
        assert!(d.report.vanishing.passed, "{:?}", d.report.vanishing);
        assert!(d.report.reproduction_error < 1e-8);
        let a_err = d.a.sub(&synthesize(&analyze_with(&b0, &pair, &lat, Atom::Phi).unwrap(), &pair).unwrap()).unwrap().max_abs();
        assert!(a_err < 1e-6, "{a_err}");
    }

    #[test]
    fn coherent_family_follows_closed_form() {
        let g = GridSpec::new(1, 2.0 * PI * 16.0, 1 << 12).unwrap();
        let pair = Arc::new(build_counterexample_phi(g).unwrap());
        let r = counterexample_growth(pair.clone(), &[1, 2, 4]).unwrap();
        assert!(r.oracle_error < 1e-9, "{r:?}");
        assert!((r.oracle_slope - 0.5).abs() < 1e-12);
        assert!(r.strictly_increasing && r.passed && r.outside_paper_scope);
        assert!(r.contrast_slope.abs() < 0.05, "{:?}", r.contrast);
        // source norm: each band carries the same weight
        let o = coherent_oracle(&pair).unwrap();
        let f = coherent_family(&pair, 3).unwrap();
        let src = tl_norm(&f, SpaceIndex::new(-1.0, 2.0, 2.0).unwrap(), &pair).unwrap();
        assert!((src / (3.0 * o.b).sqrt() - 1.0).abs() < 1e-12);
        let wide = counterexample_growth(pair, &[1, 64]).unwrap();
        assert!(wide.warning.is_some() && wide.ns == vec![1]);
    }

    #[test]
    fn sharpness_of_potential_and_zero() {
        let g = GridSpec::new(2, 256.0, 512).unwrap();
        let pair = Arc::new(build_lp_pair(g, ProfileEdges::DEFAULT).unwrap());
        let lat = Arc::new(TruncatedLattice::new(g, 0, 1).unwrap());
        let js = sharpness_scales(&pair, &lat);
        assert_eq!(js, vec![2, 3, 4]);
        let r = sharpness_experiment(&Operator::riesz_potential(g, 1.0), &pair, &js).unwrap();
        assert!(r.passed, "{r:?}");
        let (lo, hi) = covered_band(&pair, &lat);
        for seed in 0..2 {
            let b = trig_field_with_period(g, (lo * 1.05, hi * 0.95), seed, 6, 4.0).unwrap();
            let pb = paraproduct(&b, pair.clone(), &lat).unwrap();
            let r = sharpness_experiment(&pb, &pair, &js).unwrap();
            assert!(r.passed, "{r:?}");
        }
        let z = sharpness_experiment(&Operator::zero(g), &pair, &js).unwrap();
        assert!(z.norms.iter().all(|v| *v == 0.0));
        assert!(sharpness_experiment(&Operator::zero(g), &pair, &js[..2]).unwrap().inconclusive);
    }

    #[test]
    fn pair_verdicts_for_convolution_agree() {
        let (pair, lat) = setup((0, 0));
        let other = build_lp_pair(*pair.grid(), ProfileEdges { r0: 0.52, r1: 0.58, r2: 1.7, r3: 1.95 }).unwrap();
        let r = pair_independence(&Operator::riesz_potential(*pair.grid(), 1.0), &pair, &other, &lat).unwrap();
        assert_eq!(r.agreeing, r.cubes);
    }
}
