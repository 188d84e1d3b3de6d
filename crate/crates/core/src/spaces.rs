//! Sequence norms, Triebel-Lizorkin norms, Riesz shifts and boundedness ratios.

use crate::error::{PhiError, Result};
use crate::field::{GridSpec, SampledField};
use crate::lattice::{DyadicCube, TruncatedLattice};
use crate::lp_frame::{Atom, LittlewoodPaleyPair};
use crate::operators::Operator;
use crate::transform::CoefficientSequence;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// `(alpha, p, q)` with `1 <= p, q <= inf`; infinity is `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceIndex {
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
}

impl SpaceIndex {
    pub fn new(alpha: f64, p: f64, q: f64) -> Result<Self> {
        let idx = Self { alpha, p, q };
        idx.validate()?;
        Ok(idx)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(PhiError::InvalidIndex(format!("alpha must be finite, got {}", self.alpha)));
        }
        for (name, v) in [("p", self.p), ("q", self.q)] {
            if v.is_nan() || v < 1.0 {
                return Err(PhiError::InvalidIndex(format!("{name} must lie in [1, inf], got {v}")));
            }
        }
        Ok(())
    }

    /// `(p, q) = (1, inf)` or `(inf, 1)`, the pairs left out of the boundedness corollary.
    pub fn excluded_pair(&self) -> bool {
        (self.p == 1.0 && self.q.is_infinite()) || (self.p.is_infinite() && self.q == 1.0)
    }

    pub fn shifted(&self, s: f64) -> Self {
        Self { alpha: self.alpha + s, ..*self }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceNormReport {
    pub value: f64,
    /// Cube attaining the supremum in the `p = inf` branches.
    pub witness: Option<DyadicCube>,
    /// For `p = inf, q < inf`: share of the witness sum carried by the finest
    /// lattice scale, i.e. how hard the witness presses on the truncation wall.
    pub wall_fraction: Option<f64>,
}

fn parent_local(dim: usize, c_child: usize, mut local: usize) -> usize {
    let c_parent = c_child / 2;
    let mut out = 0usize;
    let mut mul = 1usize;
    for _ in 0..dim {
        out += ((local % c_child) / 2) * mul;
        local /= c_child;
        mul *= c_parent;
    }
    out
}

pub fn sequence_norm(s: &CoefficientSequence, idx: SpaceIndex) -> Result<f64> {
    Ok(sequence_norm_report(s, idx)?.value)
}

pub fn sequence_norm_report(s: &CoefficientSequence, idx: SpaceIndex) -> Result<SequenceNormReport> {
    idx.validate()?;
    let lat = s.lattice();
    let n = lat.grid().dim() as f64;
    let dim = lat.grid().dim();
    let vol = |nu: i32| 2f64.powi(-nu * dim as i32);
    let SpaceIndex { alpha, p, q } = idx;

    if p.is_infinite() && q.is_infinite() {
        let mut best = (0.0, None);
        for (i, v) in s.values().iter().enumerate() {
            let nu = lat.scale_of(i);
            let w = vol(nu).powf(-alpha / n - 0.5) * v.norm();
            if w > best.0 {
                best = (w, Some(i));
            }
        }
        return Ok(SequenceNormReport { value: best.0, witness: best.1.map(|i| lat.cube(i)), wall_fraction: None });
    }

    if p.is_infinite() {
        // sup_P (|P|^{-1} sum_{Q in P} (|Q|^{-alpha/n - 1/2 + 1/q} |s_Q|)^q)^{1/q}
        let mut sub: Vec<f64> = s
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (vol(lat.scale_of(i)).powf(-alpha / n - 0.5 + 1.0 / q) * v.norm()).powf(q))
            .collect();
        let finest: Vec<f64> = sub[lat.range_at(lat.nu_max())].to_vec();
        let mut wall = vec![0.0; sub.len()];
        wall[lat.range_at(lat.nu_max())].copy_from_slice(&finest);
        for nu in (lat.nu_min() + 1..=lat.nu_max()).rev() {
            let c = lat.per_axis(nu);
            let (start, pstart) = (lat.range_at(nu).start, lat.range_at(nu - 1).start);
            for local in 0..lat.count_at(nu) {
                let pi = pstart + parent_local(dim, c, local);
                sub[pi] += sub[start + local];
                wall[pi] += wall[start + local];
            }
        }
        let mut best = (0.0, None);
        for (i, v) in sub.iter().enumerate() {
            let val = (v / vol(lat.scale_of(i))).powf(1.0 / q);
            if val > best.0 {
                best = (val, Some(i));
            }
        }
        let wall_fraction = best.1.map(|i| if sub[i] > 0.0 { wall[i] / sub[i] } else { 0.0 });
        return Ok(SequenceNormReport { value: best.0, witness: best.1.map(|i| lat.cube(i)), wall_fraction });
    }

    // p < inf: the function sum_Q (|Q|^{-alpha/n} |s_Q| chi~_Q)^q is constant on finest cubes
    let mut acc: Vec<f64> = vec![0.0; lat.count_at(lat.nu_min())];
    for nu in lat.scales() {
        let c = lat.per_axis(nu);
        let vals = s.at_scale(nu);
        let w = vol(nu).powf(-alpha / n - 0.5);
        let next: Vec<f64> = (0..lat.count_at(nu))
            .map(|local| {
                let inherited = if nu == lat.nu_min() { 0.0 } else { acc[parent_local(dim, c, local)] };
                let own = w * vals[local].norm();
                if q.is_infinite() {
                    inherited.max(own)
                } else {
                    inherited + own.powf(q)
                }
            })
            .collect();
        acc = next;
    }
    let cell = vol(lat.nu_max());
    let total: f64 = acc
        .iter()
        .map(|&a| {
            let g = if q.is_infinite() { a } else { a.powf(1.0 / q) };
            g.powf(p) * cell
        })
        .sum();
    Ok(SequenceNormReport { value: total.powf(1.0 / p), witness: None, wall_fraction: None })
}

#[derive(Debug, Clone, Serialize)]
pub struct TlNormReport {
    pub value: f64,
    pub scales: Vec<i32>,
    /// Cube attaining the supremum in the `p = inf, q < inf` branch.
    pub witness: Option<DyadicCube>,
}

/// `(phi_nu * f)^ = phi^(2^{-nu} xi) f^`.
pub fn lp_piece(f: &SampledField, pair: &LittlewoodPaleyPair, nu: i32) -> SampledField {
    let g = *f.grid();
    let prof = pair.scaled_profile(Atom::Phi, nu);
    let spec = f.spectrum().iter().zip(prof.iter()).map(|(v, p)| v * *p).collect();
    SampledField::from_spectrum_unchecked(g, spec)
}

pub fn tl_norm(f: &SampledField, idx: SpaceIndex, pair: &LittlewoodPaleyPair) -> Result<f64> {
    Ok(tl_norm_report(f, idx, pair)?.value)
}

/// `|| (sum_nu (2^{nu alpha} |phi_nu * f|)^q)^{1/q} ||_p` over every scale whose annulus meets the grid.
pub fn tl_norm_report(f: &SampledField, idx: SpaceIndex, pair: &LittlewoodPaleyPair) -> Result<TlNormReport> {
    idx.validate()?;
    if f.grid() != pair.grid() {
        return Err(PhiError::GridMismatch("field and pair grids differ".into()));
    }
    let g = *f.grid();
    let scales = pair.resolvable_scales();
    let SpaceIndex { alpha, p, q } = idx;
    if p == 2.0 && q == 2.0 {
        return Ok(TlNormReport { value: tl_norm_22(f, alpha, pair, &scales), scales, witness: None });
    }
    let stack: Vec<Vec<f64>> = scales
        .iter()
        .map(|&nu| {
            let w = 2f64.powf(nu as f64 * alpha);
            lp_piece(f, pair, nu).values().iter().map(|v| w * v.norm()).collect()
        })
        .collect();
    if p.is_infinite() && q.is_infinite() {
        let value = stack.iter().flat_map(|s| s.iter().copied()).fold(0.0, f64::max);
        return Ok(TlNormReport { value, scales, witness: None });
    }
    if p.is_infinite() {
        let (value, witness) = tl_sup_branch(&g, &scales, &stack, q)?;
        return Ok(TlNormReport { value, scales, witness });
    }
    let cell = g.cell_volume();
    let total: f64 = (0..g.len())
        .map(|i| {
            let v = if q.is_infinite() {
                stack.iter().map(|s| s[i]).fold(0.0, f64::max)
            } else {
                stack.iter().map(|s| s[i].powf(q)).sum::<f64>().powf(1.0 / q)
            };
            v.powf(p) * cell
        })
        .sum();
    Ok(TlNormReport { value: total.powf(1.0 / p), scales, witness: None })
}

/// `p = q = 2` by Parseval, touching only the nonzero modes of `f`.
fn tl_norm_22(f: &SampledField, alpha: f64, pair: &LittlewoodPaleyPair, scales: &[i32]) -> f64 {
    let g = *f.grid();
    let (lo, hi) = pair.support(Atom::Phi);
    let c = g.mode_volume();
    let radii = pair.radii();
    let mut total = 0.0;
    for (i, v) in f.spectrum().iter().enumerate() {
        if *v == Complex64::default() {
            continue;
        }
        let r = radii[i];
        let mut w = 0.0;
        for &nu in scales {
            let t = r * 2f64.powi(-nu);
            if t > lo && t < hi {
                w += 2f64.powf(2.0 * nu as f64 * alpha) * pair.edges().phi_hat(t).powi(2);
            }
        }
        total += w * v.norm_sqr();
    }
    (total * c).sqrt()
}

/// `sup_P (|P|^{-1} int_P sum_{nu >= -log2 l(P)} F_nu^q)^{1/q}` over all grid-aligned dyadic cubes.
/// The cube integrals use the tensor trapezoid rule: a sample on a cube face is shared
/// with the neighbouring cube, so peaks sitting on cube corners are not over-weighted.
fn tl_sup_branch(g: &GridSpec, scales: &[i32], stack: &[Vec<f64>], q: f64) -> Result<(f64, Option<DyadicCube>)> {
    let lat_lo = -(g.side().log2().round() as i32);
    let lat_hi = ((g.samples() as f64 / g.side()).log2().floor()) as i32;
    let lat = TruncatedLattice::new_geometric(*g, lat_lo, lat_hi)?;
    let dim = g.dim();
    let mut best = (0.0, None);
    // suffix sums over scales, finest first
    let mut h = vec![0.0; g.len()];
    let mut next = scales.len();
    for nu_p in (lat_lo..=lat_hi).rev() {
        while next > 0 && scales[next - 1] >= nu_p {
            next -= 1;
            for (a, v) in h.iter_mut().zip(&stack[next]) {
                *a += v.powf(q);
            }
        }
        let stride = lat.stride(nu_p);
        let c = lat.per_axis(nu_p);
        let mut sums = vec![0.0; lat.count_at(nu_p)];
        let mut cell = vec![0usize; dim];
        for (i, v) in h.iter().enumerate() {
            let mut faces = Vec::with_capacity(dim);
            for (a, slot) in cell.iter_mut().enumerate() {
                let x = g.coord(i, a);
                *slot = x / stride;
                if x % stride == 0 {
                    faces.push(a);
                }
            }
            let w = v / (1usize << faces.len()) as f64;
            for mask in 0..(1usize << faces.len()) {
                let local = (0..dim).fold(0usize, |acc, a| {
                    let back = faces.iter().position(|&f| f == a).is_some_and(|k| mask >> k & 1 == 1);
                    let k = if back { (cell[a] + c - 1) % c } else { cell[a] };
                    acc * c + k
                });
                sums[local] += w;
            }
        }
        let start = lat.range_at(nu_p).start;
        let cells = (stride as f64).powi(dim as i32);
        for (local, s) in sums.iter().enumerate() {
            let val = (s / cells).powf(1.0 / q);
            if val > best.0 {
                best = (val, Some(lat.cube(start + local)));
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize)]
pub struct RieszShiftReport {
    pub s: f64,
    pub source: SpaceIndex,
    pub ratio: f64,
    /// `[2^{-(|s|+1)}, 2^{|s|+1}]`.
    pub bracket: (f64, f64),
    pub in_bracket: bool,
}

/// `||I^s f||_{F_p^{alpha+s,q}} / ||f||_{F_p^{alpha q}}`.
pub fn riesz_shift_check(f: &SampledField, s: f64, idx: SpaceIndex, pair: &LittlewoodPaleyPair) -> Result<RieszShiftReport> {
    let g = *f.grid();
    let spec = f.spectrum();
    let peak = spec.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if spec[0].norm() > 1e-12 * peak {
        return Err(PhiError::RejectedInput("spectrum touches 0, |xi|^{-s} is singular there".into()));
    }
    let is = Operator::riesz_potential(g, s).apply(f)?;
    let num = tl_norm(&is, idx.shifted(s), pair)?;
    let den = tl_norm(f, idx, pair)?;
    let ratio = if s == 0.0 { 1.0 } else { num / den };
    let b = 2f64.powf(s.abs() + 1.0);
    let bracket = (1.0 / b, b);
    Ok(RieszShiftReport { s, source: idx, ratio, bracket, in_bracket: ratio >= bracket.0 && ratio <= bracket.1 })
}

/// Real field whose spectrum is a seeded complex Gaussian on `lo <= |xi| <= hi`.
pub fn band_limited_field(grid: GridSpec, band: (f64, f64), seed: u64) -> SampledField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radii = grid.mode_radii();
    let raw: Vec<Complex64> = radii
        .iter()
        .map(|&r| {
            if r >= band.0 && r <= band.1 {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(a, b)
            } else {
                Complex64::default()
            }
        })
        .collect();
    let spec: Vec<Complex64> = (0..grid.len())
        .map(|i| {
            let neg: Vec<i64> = (0..grid.dim()).map(|a| -(grid.coord(i, a) as i64)).collect();
            let j = grid.flat_wrapped(&neg);
            (raw[i] + raw[j].conj()) * 0.5
        })
        .collect();
    let f = SampledField::from_spectrum_unchecked(grid, spec);
    f.map(|v| Complex64::new(v.re, 0.0))
}

/// Radii on which the lattice partition sum is exactly 1.
pub fn covered_band(pair: &LittlewoodPaleyPair, lattice: &TruncatedLattice) -> (f64, f64) {
    let e = pair.edges();
    (e.r3 * 2f64.powi(lattice.nu_min() - 1), e.r0 * 2f64.powi(lattice.nu_max() + 1))
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioReport {
    pub operator: String,
    pub source: SpaceIndex,
    pub target: SpaceIndex,
    pub max_ratio: f64,
    pub min_ratio: f64,
    /// 10%, 50% and 90% quantiles.
    pub quantiles: [f64; 3],
    pub seeds: Vec<u64>,
    pub skipped: usize,
}

fn quantile(sorted: &[f64], t: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = t * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// `||Tf||_target / ||f||_source` over seeded band-limited real fields.
pub fn boundedness_ratio(
    t: &Operator,
    source: SpaceIndex,
    target: SpaceIndex,
    pair: &LittlewoodPaleyPair,
    band: (f64, f64),
    samples: usize,
    seed: u64,
) -> Result<RatioReport> {
    let g = *pair.grid();
    let mut ratios = Vec::with_capacity(samples);
    let mut seeds = Vec::with_capacity(samples);
    let mut skipped = 0;
    for i in 0..samples as u64 {
        let f = band_limited_field(g, band, seed + i);
        let den = tl_norm(&f, source, pair)?;
        if den == 0.0 {
            skipped += 1;
            continue;
        }
        let num = tl_norm(&t.apply(&f)?, target, pair)?;
        ratios.push(num / den);
        seeds.push(seed + i);
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(RatioReport {
        operator: t.name().to_string(),
        source,
        target,
        max_ratio: sorted.last().copied().unwrap_or(0.0),
        min_ratio: sorted.first().copied().unwrap_or(0.0),
        quantiles: [quantile(&sorted, 0.1), quantile(&sorted, 0.5), quantile(&sorted, 0.9)],
        seeds,
        skipped,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SobolevReport {
    pub p: f64,
    /// Range of `||I^{-1} f||_p / ||grad f||_p` over the fields.
    pub bracket: (f64, f64),
    pub fields: usize,
}

/// `||I^{-1} f||_p` against `||grad f||_p`.
pub fn sobolev_proxy(fields: &[SampledField], p: f64) -> Result<SobolevReport> {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for f in fields {
        let g = *f.grid();
        let lhs = Operator::riesz_potential(g, -1.0).apply(f)?.lp_norm(p)?;
        let grads: Vec<SampledField> = (0..g.dim()).map(|j| Operator::derivative(g, j).apply(f)).collect::<Result<_>>()?;
        let modulus: Vec<f64> = (0..g.len()).map(|i| grads.iter().map(|d| d.values()[i].norm_sqr()).sum::<f64>().sqrt()).collect();
        let rhs = SampledField::from_real(g, &modulus)?.lp_norm(p)?;
        if rhs > 0.0 {
            lo = lo.min(lhs / rhs);
            hi = hi.max(lhs / rhs);
        }
    }
    Ok(SobolevReport { p, bracket: (lo, hi), fields: fields.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp_frame::{build_lp_pair, ProfileEdges};
    use std::sync::Arc;

    fn unit_lattice() -> Arc<TruncatedLattice> {
        let g = GridSpec::new(2, 4.0, 16).unwrap();
        Arc::new(TruncatedLattice::new_geometric(g, 0, 2).unwrap())
    }

    fn unit_at(lat: &Arc<TruncatedLattice>, cubes: &[DyadicCube]) -> CoefficientSequence {
        let mut s = CoefficientSequence::zeros(lat.clone());
        for q in cubes {
            let i = lat.index(q).unwrap();
            s.values_mut()[i] = Complex64::new(1.0, 0.0);
        }
        s
    }

    #[test]
    fn sequence_norm_examples() {
        let lat = unit_lattice();
        let one = unit_at(&lat, &[DyadicCube::new(0, vec![0, 0])]);
        for alpha in [-1.0, 0.0, 0.7] {
            for (p, q) in [(1.0, 1.0), (2.0, 3.0), (1.5, 2.0)] {
                let v = sequence_norm(&one, SpaceIndex::new(alpha, p, q).unwrap()).unwrap();
                assert!((v - 1.0).abs() < 1e-14);
            }
        }
        let two = unit_at(&lat, &[DyadicCube::new(0, vec![0, 0]), DyadicCube::new(0, vec![2, 1])]);
        let v = sequence_norm(&two, SpaceIndex::new(0.0, 2.0, 2.0).unwrap()).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-14);
        let r = sequence_norm_report(&one, SpaceIndex::new(1.0, f64::INFINITY, 2.0).unwrap()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-14);
        assert_eq!(r.witness, Some(DyadicCube::new(0, vec![0, 0])));
    }

    /// Brute force over every P and every Q inside it.
    fn brute_sup(s: &CoefficientSequence, idx: SpaceIndex) -> f64 {
        let lat = s.lattice();
        let n = 2.0;
        let mut best: f64 = 0.0;
        for pi in 0..lat.len() {
            let p = lat.cube(pi);
            let mut sum = 0.0;
            for qi in 0..lat.len() {
                let q = lat.cube(qi);
                if q.scale < p.scale {
                    continue;
                }
                let sh = q.scale - p.scale;
                if q.k.iter().zip(&p.k).all(|(a, b)| a >> sh == *b) {
                    let w = q.volume().powf(-idx.alpha / n - 0.5 + 1.0 / idx.q) * s.values()[qi].norm();
                    sum += if idx.q.is_infinite() { 0.0 } else { w.powf(idx.q) };
                }
            }
            best = best.max((sum / p.volume()).powf(1.0 / idx.q));
        }
        best
    }

    /// Brute force of the `p < inf` branch at every sample of the finest cubes.
    fn brute_finite(s: &CoefficientSequence, idx: SpaceIndex) -> f64 {
        let lat = s.lattice();
        let fine = lat.nu_max();
        let mut total = 0.0;
        for r in 0..lat.count_at(fine) {
            let rk = lat.local_k(fine, r);
            let mut acc: f64 = 0.0;
            for qi in 0..lat.len() {
                let q = lat.cube(qi);
                let sh = fine - q.scale;
                if rk.iter().zip(&q.k).all(|(a, b)| a >> sh == *b) {
                    let w = q.volume().powf(-idx.alpha / 2.0 - 0.5) * s.values()[qi].norm();
                    if idx.q.is_infinite() {
                        acc = acc.max(w);
                    } else {
                        acc += w.powf(idx.q);
                    }
                }
            }
            let g = if idx.q.is_infinite() { acc } else { acc.powf(1.0 / idx.q) };
            total += g.powf(idx.p) * 2f64.powi(-2 * fine);
        }
        total.powf(1.0 / idx.p)
    }

    #[test]
    fn sequence_norm_branches_match_brute_force() {
        let g = GridSpec::new(2, 2.0, 16).unwrap();
        let lat = Arc::new(TruncatedLattice::new_geometric(g, 0, 2).unwrap());
        assert!(lat.len() <= 84);
        let vals = (0..lat.len()).map(|i| Complex64::new(((i * 7919) % 13) as f64 / 13.0 - 0.4, ((i * 31) % 5) as f64 * 0.1)).collect();
        let s = CoefficientSequence::from_values(lat, vals).unwrap();
        for idx in [
            SpaceIndex::new(0.5, f64::INFINITY, 2.0).unwrap(),
            SpaceIndex::new(-1.0, f64::INFINITY, 1.0).unwrap(),
        ] {
            let fast = sequence_norm(&s, idx).unwrap();
            assert!((fast - brute_sup(&s, idx)).abs() < 1e-12 * fast, "{idx:?}");
        }
        for idx in [
            SpaceIndex::new(0.5, 2.0, f64::INFINITY).unwrap(),
            SpaceIndex::new(0.0, 1.0, 2.0).unwrap(),
            SpaceIndex::new(-0.5, 3.0, 1.5).unwrap(),
        ] {
            let fast = sequence_norm(&s, idx).unwrap();
            assert!((fast - brute_finite(&s, idx)).abs() < 1e-12 * fast, "{idx:?}");
        }
        let inf = sequence_norm(&s, SpaceIndex::new(0.3, f64::INFINITY, f64::INFINITY).unwrap()).unwrap();
        let brute = (0..s.len())
            .map(|i| s.lattice().cube(i).volume().powf(-0.15 - 0.5) * s.values()[i].norm())
            .fold(0.0, f64::max);
        assert!((inf - brute).abs() < 1e-14);
    }

    #[test]
    fn invalid_indices_are_rejected() {
        assert!(SpaceIndex::new(0.0, 0.5, 2.0).is_err());
        assert!(SpaceIndex::new(0.0, 2.0, f64::NAN).is_err());
        assert!(SpaceIndex::new(f64::INFINITY, 2.0, 2.0).is_err());
        assert!(SpaceIndex::new(0.0, 1.0, f64::INFINITY).unwrap().excluded_pair());
    }

    fn pair() -> LittlewoodPaleyPair {
        build_lp_pair(GridSpec::new(2, 32.0, 64).unwrap(), ProfileEdges::DEFAULT).unwrap()
    }

    #[test]
    fn tl_norm_single_annulus() {
        let pair = pair();
        let g = *pair.grid();
        // |xi| in (1.2, 1.5): only nu = 0 and nu = 1 see it
        let f = band_limited_field(g, (1.2, 1.5), 11);
        assert!(lp_piece(&f, &pair, -1).max_abs() < 1e-14);
        assert!(lp_piece(&f, &pair, 2).max_abs() < 1e-14);
        let direct = lp_piece(&f, &pair, 0).l2_norm().hypot(lp_piece(&f, &pair, 1).l2_norm());
        let v = tl_norm(&f, SpaceIndex::new(0.0, 2.0, 2.0).unwrap(), &pair).unwrap();
        assert!((v - direct).abs() < 1e-10 * v);
        // the general path agrees with the Parseval path
        let idx = SpaceIndex::new(0.4, 2.0, 2.0).unwrap();
        let f = band_limited_field(g, (0.3, 3.0), 12);
        let fast = tl_norm(&f, idx, &pair).unwrap();
        let slow: f64 = pair
            .resolvable_scales()
            .iter()
            .map(|&nu| (2f64.powf(nu as f64 * 0.4) * lp_piece(&f, &pair, nu).l2_norm()).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((fast - slow).abs() < 1e-10 * fast);
    }

    #[test]
    fn tl_norm_is_homogeneous_and_subadditive() {
        let pair = pair();
        let g = *pair.grid();
        let f = band_limited_field(g, (0.3, 3.0), 1);
        let h = band_limited_field(g, (0.3, 3.0), 2);
        for idx in [
            SpaceIndex::new(0.0, 2.0, 2.0).unwrap(),
            SpaceIndex::new(1.0, 1.5, 3.0).unwrap(),
            SpaceIndex::new(1.0, f64::INFINITY, 2.0).unwrap(),
            SpaceIndex::new(0.0, 2.0, f64::INFINITY).unwrap(),
            SpaceIndex::new(-1.0, f64::INFINITY, f64::INFINITY).unwrap(),
        ] {
            let a = tl_norm(&f, idx, &pair).unwrap();
            let b = tl_norm(&f.scale(Complex64::new(-2.0, 1.0)), idx, &pair).unwrap();
            assert!((b - 5f64.sqrt() * a).abs() < 1e-10 * b, "{idx:?}");
            let s = tl_norm(&f.add(&h).unwrap(), idx, &pair).unwrap();
            assert!(s <= a + tl_norm(&h, idx, &pair).unwrap() + 1e-12, "{idx:?}");
        }
    }

    #[test]
    fn riesz_shift_examples() {
        let pair = pair();
        let g = *pair.grid();
        let f = band_limited_field(g, (1.2, 1.5), 3);
        let idx = SpaceIndex::new(0.0, 2.0, 2.0).unwrap();
        assert_eq!(riesz_shift_check(&f, 0.0, idx, &pair).unwrap().ratio, 1.0);
        for s in [-1.5, 0.5, 1.0] {
            let r = riesz_shift_check(&f, s, idx, &pair).unwrap();
            assert!(r.in_bracket, "{r:?}");
        }
        let there = Operator::riesz_potential(g, 0.8).apply(&f).unwrap();
        let back = Operator::riesz_potential(g, -0.8).apply(&there).unwrap();
        let a = tl_norm(&f, idx, &pair).unwrap();
        assert!((tl_norm(&back, idx, &pair).unwrap() - a).abs() < 1e-10 * a);
        let with_mean = f.map(|v| v + 1.0);
        assert!(riesz_shift_check(&with_mean, 1.0, idx, &pair).is_err());
    }

    #[test]
    fn identity_ratio_is_one() {
        let pair = pair();
        let g = *pair.grid();
        let idx = SpaceIndex::new(0.0, 2.0, 2.0).unwrap();
        let r = boundedness_ratio(&Operator::identity(g), idx, idx, &pair, (0.3, 3.0), 5, 0).unwrap();
        assert!((r.max_ratio - 1.0).abs() < 1e-10 && (r.min_ratio - 1.0).abs() < 1e-10);
    }

    #[test]
    fn band_limited_fields_are_real_and_seeded() {
        let g = GridSpec::new(2, 16.0, 32).unwrap();
        let a = band_limited_field(g, (0.5, 2.0), 5);
        assert_eq!(a, band_limited_field(g, (0.5, 2.0), 5));
        assert_ne!(a, band_limited_field(g, (0.5, 2.0), 6));
        assert!(a.values().iter().all(|v| v.im == 0.0));
        let radii = g.mode_radii();
        for (v, r) in a.spectrum().iter().zip(radii) {
            if r < 0.5 - 1e-12 || r > 2.0 + 1e-12 {
                assert!(v.norm() < 1e-12);
            }
        }
    }
}
