//! Littlewood-Paley pairs `(phi, psi)`, the paraproduct mollifier and the
//! regularizers `eta^j`.

use crate::error::{PhiError, Result};
use crate::field::{GridSpec, SampledField};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

/// Largest `|y|` at which the radial series for `phi(y)` is evaluated.
pub const SERIES_RADIUS: f64 = 4.0;
const SERIES_TERMS: usize = 64;
const MOMENT_NODES: usize = 20_000;

/// `s(t) = e(t) / (e(t) + e(1 - t))` with `e(t) = exp(-1/t)`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

/// `(2 pi)^{-n/2}`: profiles are transforms in the `int f e^{-i x . xi}` sense, so a field
/// built from a profile carries this factor in its unitary spectrum.
pub fn frame_scale(dim: usize) -> f64 {
    (2.0 * PI).powf(-(dim as f64) / 2.0)
}

/// Radial transition edges `r0 < r1 <= 3/5`, `5/3 <= r2 < r3` inside `(1/2, 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEdges {
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

impl ProfileEdges {
    pub const DEFAULT: ProfileEdges = ProfileEdges { r0: 0.501, r1: 0.6, r2: 5.0 / 3.0, r3: 1.999 };
    pub const COUNTEREXAMPLE: ProfileEdges = ProfileEdges { r0: 0.55, r1: 0.6, r2: 5.0 / 3.0, r3: 1.85 };

    pub fn validate(&self) -> Result<()> {
        let ProfileEdges { r0, r1, r2, r3 } = *self;
        let ok = 0.5 < r0 && r0 < r1 && r1 <= 0.6 && 5.0 / 3.0 <= r2 && r2 < r3 && r3 < 2.0;
        if ok {
            Ok(())
        } else {
            Err(PhiError::InvalidProfile(format!(
                "need 1/2 < r0 < r1 <= 3/5 and 5/3 <= r2 < r3 < 2, got ({r0}, {r1}, {r2}, {r3})"
            )))
        }
    }

    pub fn phi_hat(&self, r: f64) -> f64 {
        smooth_step((r - self.r0) / (self.r1 - self.r0)) * smooth_step((self.r3 - r) / (self.r3 - self.r2))
    }

    /// `rho(r) = sum_nu phi^(2^nu r)^2`, summed over every nonzero term.
    pub fn rho(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let lo = (self.r0 / r).log2().floor() as i32 - 1;
        let hi = (self.r3 / r).log2().ceil() as i32 + 1;
        (lo..=hi).map(|nu| self.phi_hat(r * 2f64.powi(nu)).powi(2)).sum()
    }

    pub fn psi_hat(&self, r: f64) -> f64 {
        let p = self.phi_hat(r);
        if p == 0.0 {
            0.0
        } else {
            p / self.rho(r)
        }
    }
}

impl Default for ProfileEdges {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Which frame function a coefficient refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Atom {
    Phi,
    Psi,
    Mollifier,
}

/// Radial bump with `Phi^ = 1` on `B(0, inner)` and support in `B(0, outer)`.
#[derive(Debug, Clone)]
pub struct Mollifier {
    inner: f64,
    outer: f64,
    field: SampledField,
}

impl Mollifier {
    pub const INNER: f64 = 0.5;
    pub const OUTER: f64 = 0.95;

    pub fn profile(&self, r: f64) -> f64 {
        smooth_step((self.outer - r) / (self.outer - self.inner))
    }

    pub fn field(&self) -> &SampledField {
        &self.field
    }

    pub fn support_radius(&self) -> f64 {
        self.outer
    }
}

pub fn build_mollifier(grid: GridSpec) -> Mollifier {
    let inner = Mollifier::INNER;
    let outer = Mollifier::OUTER;
    let radii = grid.mode_radii();
    let fs = frame_scale(grid.dim());
    let spec = radii.iter().map(|&r| Complex64::new(fs * smooth_step((outer - r) / (outer - inner)), 0.0)).collect();
    Mollifier { inner, outer, field: SampledField::from_spectrum_unchecked(grid, spec) }
}

/// Measured Littlewood-Paley conditions of a pair.
#[derive(Debug, Clone, Serialize)]
pub struct PairReport {
    /// `phi^` vanishes at every grid mode and radial sample outside `(1/2, 2)`.
    pub support_exact: bool,
    /// Minimum of `phi^` over `[3/5, 5/3]`.
    pub lower_bound: f64,
    /// Largest deviation of the full partition sum from 1 over nonzero grid modes.
    pub partition_error: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Largest difference of `phi^` under axis permutations and reflections.
    pub radial_error: f64,
    /// Largest moment of `phi` through order 4, from spectral differences at the origin.
    pub moment_max: f64,
    pub phi_at_origin: f64,
    /// For counterexample pairs: `max |phi^(2 xi)| + |phi^(xi / 2)|` over grid modes of `B(e1, eps)`.
    pub counterexample_leak: Option<f64>,
    /// For counterexample pairs: `max |phi^ - 1|` over grid modes of `B(e1, eps)`.
    pub counterexample_flatness: Option<f64>,
    pub passed: bool,
}

#[derive(Debug)]
pub struct LittlewoodPaleyPair {
    grid: GridSpec,
    edges: ProfileEdges,
    lower_bound: f64,
    counterexample_radius: Option<f64>,
    phi: SampledField,
    psi: SampledField,
    rho_samples: Vec<f64>,
    radii: Arc<Vec<f64>>,
    mollifier: Mollifier,
    moments: Vec<f64>,
    cache: Mutex<HashMap<(Atom, i32), Arc<Vec<f64>>>>,
}

pub fn build_lp_pair(grid: GridSpec, edges: ProfileEdges) -> Result<LittlewoodPaleyPair> {
    edges.validate()?;
    Ok(LittlewoodPaleyPair::assemble(grid, edges, None))
}

pub fn build_counterexample_phi(grid: GridSpec) -> Result<LittlewoodPaleyPair> {
    let eps = 0.05;
    let turns = grid.side() / (2.0 * PI);
    if (turns - turns.round()).abs() > 1e-9 || turns.round() < 1.0 {
        return Err(PhiError::InvalidGrid(format!(
            "counterexample needs e1 on the mode lattice, i.e. L / 2pi integral (got {turns})"
        )));
    }
    let need = 2.0 * (1.0 + eps);
    if grid.nyquist() <= need {
        let required = ((need * grid.side() / PI).floor() as usize + 1).next_power_of_two();
        return Err(PhiError::GridTooCoarse {
            reason: format!("Nyquist {} cannot resolve 2 B(e1, {eps})", grid.nyquist()),
            required_n: required,
        });
    }
    Ok(LittlewoodPaleyPair::assemble(grid, ProfileEdges::COUNTEREXAMPLE, Some(eps)))
}

impl LittlewoodPaleyPair {
    fn assemble(grid: GridSpec, edges: ProfileEdges, counterexample_radius: Option<f64>) -> Self {
        let radii = Arc::new(grid.mode_radii());
        let fs = frame_scale(grid.dim());
        let phi_spec: Vec<Complex64> = radii.iter().map(|&r| Complex64::new(fs * edges.phi_hat(r), 0.0)).collect();
        let psi_spec: Vec<Complex64> = radii.iter().map(|&r| Complex64::new(fs * edges.psi_hat(r), 0.0)).collect();
        let rho_samples = radii.iter().map(|&r| edges.rho(r)).collect();
        let lower_bound = (0..=2000)
            .map(|i| edges.phi_hat(0.6 + (5.0 / 3.0 - 0.6) * i as f64 / 2000.0))
            .fold(f64::INFINITY, f64::min);
        let n = grid.dim() as f64;
        let h = (edges.r3 - edges.r0) / MOMENT_NODES as f64;
        let moments = (0..SERIES_TERMS)
            .map(|k| {
                (1..MOMENT_NODES)
                    .map(|i| {
                        let r = edges.r0 + h * i as f64;
                        edges.phi_hat(r) * r.powf(2.0 * k as f64 + n - 1.0)
                    })
                    .sum::<f64>()
                    * h
            })
            .collect();
        Self {
            grid,
            edges,
            lower_bound,
            counterexample_radius,
            phi: SampledField::from_spectrum_unchecked(grid, phi_spec),
            psi: SampledField::from_spectrum_unchecked(grid, psi_spec),
            rho_samples,
            radii,
            mollifier: build_mollifier(grid),
            moments,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn edges(&self) -> ProfileEdges {
        self.edges
    }
    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }
    pub fn counterexample_radius(&self) -> Option<f64> {
        self.counterexample_radius
    }
    pub fn is_counterexample(&self) -> bool {
        self.counterexample_radius.is_some()
    }
    pub fn phi(&self) -> &SampledField {
        &self.phi
    }
    pub fn psi(&self) -> &SampledField {
        &self.psi
    }
    pub fn mollifier(&self) -> &Mollifier {
        &self.mollifier
    }
    pub fn rho_samples(&self) -> &[f64] {
        &self.rho_samples
    }
    /// `|xi_m|` for every flat mode of the pair's grid.
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Same profile rebuilt on another grid.
    pub fn on_grid(&self, grid: GridSpec) -> Result<Self> {
        match self.counterexample_radius {
            Some(_) => build_counterexample_phi(grid),
            None => build_lp_pair(grid, self.edges),
        }
    }

    /// Short stable identifier of the profile, used in report headers.
    pub fn profile_hash(&self) -> String {
        let e = self.edges;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in [e.r0, e.r1, e.r2, e.r3, self.counterexample_radius.unwrap_or(0.0)] {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }

    pub fn profile(&self, atom: Atom, r: f64) -> f64 {
        match atom {
            Atom::Phi => self.edges.phi_hat(r),
            Atom::Psi => self.edges.psi_hat(r),
            Atom::Mollifier => self.mollifier.profile(r),
        }
    }

    /// Radial frequency interval outside which `profile(atom, .)` vanishes.
    pub fn support(&self, atom: Atom) -> (f64, f64) {
        match atom {
            Atom::Phi | Atom::Psi => (self.edges.r0, self.edges.r3),
            Atom::Mollifier => (0.0, self.mollifier.outer),
        }
    }

    /// `profile(atom, 2^{-nu} |xi_m|)` for every grid mode, cached.
    pub fn scaled_profile(&self, atom: Atom, nu: i32) -> Arc<Vec<f64>> {
        if let Some(v) = self.cache.lock().expect("profile cache poisoned").get(&(atom, nu)) {
            return v.clone();
        }
        let s = 2f64.powi(-nu);
        let v: Arc<Vec<f64>> = Arc::new(self.radii.iter().map(|&r| self.profile(atom, r * s)).collect());
        self.cache.lock().expect("profile cache poisoned").insert((atom, nu), v.clone());
        v
    }

    /// Whether any grid mode sees a nonzero `phi^(2^{-nu} xi)`.
    pub fn scale_touches_grid(&self, nu: i32) -> bool {
        let s = 2f64.powi(nu);
        let (lo, hi) = (self.edges.r0 * s, self.edges.r3 * s);
        self.radii.iter().any(|&r| r > lo && r < hi)
    }

    /// Every scale whose `phi` annulus meets a grid mode.
    pub fn resolvable_scales(&self) -> Vec<i32> {
        let lo = (self.grid.mode_spacing() / 2.0).log2().floor() as i32 - 1;
        let hi = (self.grid.nyquist() * (self.grid.dim() as f64).sqrt()).log2().ceil() as i32 + 1;
        (lo..=hi).filter(|&nu| self.scale_touches_grid(nu)).collect()
    }

    /// `sum_{nu in [lo, hi]} phi^ psi^(2^{-nu} xi)` at every grid mode.
    pub fn partition_sum(&self, lo: i32, hi: i32) -> Vec<f64> {
        let mut acc = vec![0.0; self.grid.len()];
        for nu in lo..=hi {
            let p = self.scaled_profile(Atom::Phi, nu);
            let q = self.scaled_profile(Atom::Psi, nu);
            for ((a, x), y) in acc.iter_mut().zip(p.iter()).zip(q.iter()) {
                *a += x * y;
            }
        }
        acc
    }

    pub fn check(&self) -> PairReport {
        let e = self.edges;
        let support_grid = self.radii.iter().all(|&r| r > 0.5 && r < 2.0 || e.phi_hat(r) == 0.0);
        let support_radial = (0..=4000).all(|i| {
            let r = 3.0 * i as f64 / 4000.0;
            r > 0.5 && r < 2.0 || e.phi_hat(r) == 0.0
        });
        let mut partition_error: f64 = 0.0;
        let mut rho_min = f64::INFINITY;
        let mut rho_max: f64 = 0.0;
        for &r in self.radii.iter().filter(|&&r| r > 0.0) {
            let rho = e.rho(r);
            rho_min = rho_min.min(rho);
            rho_max = rho_max.max(rho);
            let lo = (e.r0 / r).log2().floor() as i32 - 1;
            let hi = (e.r3 / r).log2().ceil() as i32 + 1;
            let s: f64 = (lo..=hi)
                .map(|nu| {
                    let x = r * 2f64.powi(nu);
                    e.phi_hat(x) * e.psi_hat(x)
                })
                .sum();
            partition_error = partition_error.max((s - 1.0).abs());
        }
        let g = self.grid;
        let spec = self.phi.spectrum();
        let mut radial_error: f64 = 0.0;
        for i in 0..g.len() {
            let m = g.mode_numbers(i);
            let mut images = vec![m.iter().map(|v| -v).collect::<Vec<_>>(), m.iter().rev().copied().collect()];
            if m.len() > 1 {
                let mut sw = m.clone();
                sw.swap(0, 1);
                sw[0] = -sw[0];
                images.push(sw);
            }
            for img in images {
                if let Some(j) = g.mode_index(&img) {
                    radial_error = radial_error.max((spec[i] - spec[j]).norm());
                }
            }
        }
        let moment_max = spectral_moment_max(&self.phi, 4);
        let phi_at_origin = self.phi_at_origin();
        let (leak, flat) = match self.counterexample_radius {
            Some(eps) => {
                let mut leak: f64 = 0.0;
                let mut flat: f64 = 0.0;
                for i in 0..g.len() {
                    let xi = g.mode(i);
                    let d2: f64 = xi.iter().enumerate().map(|(a, v)| if a == 0 { (v - 1.0).powi(2) } else { v * v }).sum();
                    if d2 < eps * eps {
                        let r = self.radii[i];
                        leak = leak.max(e.phi_hat(2.0 * r).abs() + e.phi_hat(r / 2.0).abs());
                        flat = flat.max((e.phi_hat(r) - 1.0).abs());
                    }
                }
                (Some(leak), Some(flat))
            }
            None => (None, None),
        };
        let passed = support_grid
            && support_radial
            && self.lower_bound > 0.0
            && partition_error <= 1e-10
            && rho_min >= self.lower_bound.powi(2) * (1.0 - 1e-12)
            && rho_max <= 2.0 + 1e-12
            && radial_error <= 1e-12
            && moment_max <= 1e-9
            && phi_at_origin > 0.0
            && leak.map_or(true, |l| l == 0.0)
            && flat.map_or(true, |f| f == 0.0);
        PairReport {
            support_exact: support_grid && support_radial,
            lower_bound: self.lower_bound,
            partition_error,
            rho_min,
            rho_max,
            radial_error,
            moment_max,
            phi_at_origin,
            counterexample_leak: leak,
            counterexample_flatness: flat,
            passed,
        }
    }

    /// `phi(0)` of the continuous profile.
    pub fn phi_at_origin(&self) -> f64 {
        let n = self.grid.dim() as f64;
        (2.0 * PI).powf(-n) * sphere_area(self.grid.dim()) * self.moments[0]
    }

    /// `phi(y) / phi(0)` for `|y| <= SERIES_RADIUS`, from the radial Taylor series.
    pub fn phi_ratio(&self, radius: f64) -> Result<f64> {
        if radius > SERIES_RADIUS {
            return Err(PhiError::RejectedInput(format!("radius {radius} beyond series range {SERIES_RADIUS}")));
        }
        let n = self.grid.dim() as f64;
        let y2 = radius * radius;
        let mut coeff = 1.0;
        let mut pow = 1.0;
        let mut sum = 0.0;
        for k in 0..SERIES_TERMS {
            if k > 0 {
                let kf = k as f64;
                coeff *= -1.0 / (2.0 * kf * (n + 2.0 * kf - 2.0));
                pow *= y2;
            }
            let term = coeff * pow * self.moments[k] / self.moments[0];
            sum += term;
            if k > 4 && term.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        Ok(sum)
    }

    /// Spectral regularizer: the periodized `phi(x / 2^j)`, normalized to 1 at the origin.
    pub fn regularizer(&self, j: i32) -> Result<SampledField> {
        let g = self.grid;
        let s = 2f64.powi(j);
        let spec: Vec<Complex64> = self.radii.iter().map(|&r| Complex64::new(self.edges.phi_hat(r * s), 0.0)).collect();
        let top = self.edges.r3 / s;
        if top > 0.9 * g.nyquist() {
            return Err(PhiError::ScaleOutOfRange { scale: j, reason: "dilated annulus passes 0.9 Nyquist".into() });
        }
        let at_origin: f64 = spec.iter().map(|v| v.re).sum::<f64>() * g.inverse_scale();
        if at_origin <= 0.0 {
            return Err(PhiError::ScaleOutOfRange {
                scale: j,
                reason: "dilated annulus holds no grid mode; use the cell regularizer".into(),
            });
        }
        let spec = spec.into_iter().map(|v| v / at_origin).collect();
        Ok(SampledField::from_spectrum_unchecked(g, spec))
    }

    /// Cell-restricted regularizer `eta^j(x) = phi(x / 2^j) / phi(0)` on `[-L/2, L/2)^n`.
    pub fn regularizer_cell(&self, j: i32) -> Result<SampledField> {
        let g = self.grid;
        let s = 2f64.powi(-j);
        let far = (g.dim() as f64).sqrt() * g.side() / 2.0 * s;
        if far > SERIES_RADIUS {
            return Err(PhiError::ScaleOutOfRange { scale: j, reason: "cell corner beyond the series radius".into() });
        }
        let mut values = Vec::with_capacity(g.len());
        for i in 0..g.len() {
            let r = g.centered_point(i).iter().map(|v| v * v).sum::<f64>().sqrt() * s;
            values.push(Complex64::new(self.phi_ratio(r)?, 0.0));
        }
        Ok(SampledField::from_values_unchecked(g, values))
    }

    /// Smallest `j` accepted by [`Self::regularizer_cell`].
    pub fn min_cell_regularizer_scale(&self) -> i32 {
        let far = (self.grid.dim() as f64).sqrt() * self.grid.side() / 2.0;
        (far / SERIES_RADIUS).log2().ceil() as i32
    }
}

/// Surface area of the unit sphere in `R^n`.
pub fn sphere_area(n: usize) -> f64 {
    let mut a = [2.0, 2.0 * PI];
    if n <= 2 {
        return a[n - 1];
    }
    for k in 3..=n {
        let next = 2.0 * PI * a[0] / (k as f64 - 2.0);
        a = [a[1], next];
    }
    a[1]
}

/// Largest modulus of `\int x^alpha f` for `|alpha| <= order`, from centered
/// differences of the spectrum at the origin.
pub fn spectral_moment_max(f: &SampledField, order: usize) -> f64 {
    let g = f.grid();
    let spec = f.spectrum();
    let h = g.mode_spacing();
    let n = g.dim();
    // central difference stencils for derivatives 0..=4
    let stencils: [&[(i64, f64)]; 5] = [
        &[(0, 1.0)],
        &[(-1, -0.5), (1, 0.5)],
        &[(-1, 1.0), (0, -2.0), (1, 1.0)],
        &[(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
        &[(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)],
    ];
    let mut worst: f64 = 0.0;
    let mut alpha = vec![0usize; n];
    loop {
        let total: usize = alpha.iter().sum();
        if total <= order {
            let mut acc = Complex64::default();
            let mut idx = vec![0usize; n];
            let lens: Vec<usize> = alpha.iter().map(|&a| stencils[a.min(4)].len()).collect();
            'outer: loop {
                let mut w = 1.0;
                let mut m = vec![0i64; n];
                for a in 0..n {
                    let (off, c) = stencils[alpha[a].min(4)][idx[a]];
                    m[a] = off;
                    w *= c;
                }
                if let Some(j) = g.mode_index(&m) {
                    acc += spec[j] * w;
                }
                for a in 0..n {
                    idx[a] += 1;
                    if idx[a] < lens[a] {
                        continue 'outer;
                    }
                    idx[a] = 0;
                }
                break;
            }
            let scale = (2.0 * PI).powf(n as f64 / 2.0) / h.powi(total as i32);
            worst = worst.max(acc.norm() * scale);
        }
        let mut a = 0;
        loop {
            if a == n {
                return worst;
            }
            alpha[a] += 1;
            if alpha[a] <= order {
                break;
            }
            alpha[a] = 0;
            a += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(2, 32.0, 64).unwrap()
    }

    #[test]
    fn edges_are_validated() {
        assert!(ProfileEdges::DEFAULT.validate().is_ok());
        assert!(ProfileEdges::COUNTEREXAMPLE.validate().is_ok());
        let bad = ProfileEdges { r0: 0.6, r1: 0.55, r2: 1.7, r3: 1.9 };
        assert!(matches!(build_lp_pair(grid(), bad), Err(PhiError::InvalidProfile(_))));
        let bad = ProfileEdges { r0: 0.45, r1: 0.55, r2: 1.7, r3: 1.9 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn values_at_unit_frequency() {
        let e = ProfileEdges::DEFAULT;
        assert_eq!(e.phi_hat(1.0), 1.0);
        // direct sum over nu in [-3, 3]
        let rho: f64 = (-3..=3).map(|nu| e.phi_hat(2f64.powi(nu)).powi(2)).sum();
        assert_eq!(rho, 1.0);
        assert_eq!(e.rho(1.0), 1.0);
        assert_eq!(e.psi_hat(1.0), 1.0);
    }

    #[test]
    fn partition_sum_at_random_frequencies() {
        use rand::{Rng, SeedableRng};
        let e = ProfileEdges::DEFAULT;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let r: f64 = 2f64.powf(rng.random_range(-8.0..8.0));
            let s: f64 = (-20..=20).map(|nu| {
                let x = r * 2f64.powi(-nu);
                e.phi_hat(x) * e.psi_hat(x)
            })
            .sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn default_pair_passes_every_check() {
        let pair = build_lp_pair(grid(), ProfileEdges::DEFAULT).unwrap();
        let rep = pair.check();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.lower_bound, 1.0);
        assert!(pair.phi().spectrum()[0].norm() == 0.0);
        assert!(rep.moment_max <= 1e-9);
    }

    #[test]
    fn counterexample_pair_conditions() {
        let g = GridSpec::new(2, 2.0 * PI * 16.0, 128).unwrap();
        let pair = build_counterexample_phi(g).unwrap();
        let e = pair.edges();
        assert_eq!(e.phi_hat(1.0), 1.0);
        assert_eq!(e.phi_hat(2.0), 0.0);
        assert_eq!(e.phi_hat(0.5), 0.0);
        let rep = pair.check();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.counterexample_leak, Some(0.0));
        // exhaustive scan on a finer ball
        for i in 0..=400 {
            let t = 2.0 * PI * i as f64 / 400.0;
            for rr in [0.0, 0.01, 0.03, 0.0499] {
                let (x, y) = (1.0 + rr * t.cos(), rr * t.sin());
                let r = (x * x + y * y).sqrt();
                assert_eq!(e.phi_hat(r), 1.0);
                assert_eq!(e.phi_hat(2.0 * r) + e.phi_hat(r / 2.0), 0.0);
            }
        }
    }

    #[test]
    fn counterexample_grid_requirements() {
        let g = GridSpec::new(2, 2.0 * PI * 16.0, 32).unwrap();
        match build_counterexample_phi(g) {
            Err(PhiError::GridTooCoarse { required_n, .. }) => assert!(required_n >= 64),
            other => panic!("unexpected {other:?}"),
        }
        assert!(build_counterexample_phi(GridSpec::new(2, 64.0, 256).unwrap()).is_err());
    }

    #[test]
    fn mollifier_examples() {
        let g = grid();
        let m = build_mollifier(g);
        assert_eq!(m.profile(0.0), 1.0);
        assert_eq!(m.profile(0.5), 1.0);
        assert_eq!(m.profile(1.0), 0.0);
        assert_eq!(m.profile(0.95), 0.0);
        // int Phi = Phi^(0) = 1
        assert!((m.field().integral().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_regularizer_examples() {
        let pair = build_lp_pair(grid(), ProfileEdges::DEFAULT).unwrap();
        for j in 0..3 {
            let eta = pair.regularizer(j).unwrap();
            assert!((eta.values()[0].re - 1.0).abs() < 1e-12);
            let lim = 2f64.powi(1 - j);
            for (v, r) in eta.spectrum().iter().zip(pair.radii()) {
                if *r >= lim {
                    assert_eq!(v.norm(), 0.0);
                }
            }
        }
        assert!(matches!(pair.regularizer(8), Err(PhiError::ScaleOutOfRange { .. })));
    }

    #[test]
    fn series_matches_grid_field_near_origin() {
        // phi on a large box is close to the continuous profile near 0
        let g = GridSpec::new(2, 256.0, 512).unwrap();
        let pair = build_lp_pair(g, ProfileEdges::DEFAULT).unwrap();
        let phi0 = pair.phi().values()[0].re;
        // the torus copies of phi contribute about 1e-5 at this box size
        assert!((phi0 - pair.phi_at_origin()).abs() < 5e-5 * phi0.abs());
        for k in [1usize, 3, 6] {
            let idx = g.flat(&[k, 0]);
            let r = k as f64 * g.dx();
            let grid_ratio = pair.phi().values()[idx].re / phi0;
            assert!((grid_ratio - pair.phi_ratio(r).unwrap()).abs() < 5e-5, "r = {r}");
        }
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(1) - 2.0).abs() < 1e-15);
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-15);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
    }
}
