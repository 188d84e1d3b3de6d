//! The phi-transform `S_phi`, its left inverse `T_psi`, and reconstruction diagnostics.
//!
//! Every coefficient is computed in frequency. At scale `nu` the lattice has
//! `c = L 2^nu` cubes per axis, so `<f, phi_Q>` for all `Q` at that scale is
//! one inverse FFT of size `c^n` applied to the spectrum folded modulo `c`.

use crate::error::{PhiError, Result};
use crate::fft;
use crate::field::{GridSpec, SampledField};
use crate::lattice::{corner_phases, DyadicCube, TruncatedLattice};
use crate::lp_frame::{frame_scale, Atom, LittlewoodPaleyPair};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::io::{BufRead, Write};
use std::sync::Arc;

/// Complex values `s_Q`, one per cube of a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSequence {
    lattice: Arc<TruncatedLattice>,
    values: Vec<Complex64>,
}

impl CoefficientSequence {
    pub fn zeros(lattice: Arc<TruncatedLattice>) -> Self {
        let n = lattice.len();
        Self { lattice, values: vec![Complex64::default(); n] }
    }

    pub fn from_values(lattice: Arc<TruncatedLattice>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(PhiError::LatticeMismatch(format!("{} values for {} cubes", values.len(), lattice.len())));
        }
        Ok(Self { lattice, values })
    }

    /// Single unit entry at `index`.
    pub fn unit(lattice: Arc<TruncatedLattice>, index: usize) -> Self {
        let mut s = Self::zeros(lattice);
        s.values[index] = Complex64::new(1.0, 0.0);
        s
    }

    pub fn lattice(&self) -> &Arc<TruncatedLattice> {
        &self.lattice
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn get(&self, cube: &DyadicCube) -> Option<Complex64> {
        self.lattice.index(cube).map(|i| self.values[i])
    }
    pub fn at_scale(&self, nu: i32) -> &[Complex64] {
        &self.values[self.lattice.range_at(nu)]
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.lattice != other.lattice {
            return Err(PhiError::LatticeMismatch("sequences on different lattices".into()));
        }
        Ok(())
    }

    /// `a self + b other`.
    pub fn combine(&self, a: Complex64, other: &Self, b: Complex64) -> Result<Self> {
        self.check_same(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(Self { lattice: self.lattice.clone(), values })
    }

    pub fn scale(&self, a: Complex64) -> Self {
        Self { lattice: self.lattice.clone(), values: self.values.iter().map(|v| v * a).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Columnar text: one `nu k_1 .. k_n re im` record per cube.
    pub fn write_columnar<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let spec = self.lattice.spec();
        let g = self.lattice.grid();
        writeln!(w, "# dim={} side={:?} samples={} nu_min={} nu_max={}", g.dim(), g.side(), g.samples(), spec.nu_min, spec.nu_max)?;
        for (i, v) in self.values.iter().enumerate() {
            let q = self.lattice.cube(i);
            write!(w, "{}", q.scale)?;
            for k in &q.k {
                write!(w, " {k}")?;
            }
            writeln!(w, " {:?} {:?}", v.re, v.im)?;
        }
        Ok(())
    }

    pub fn read_columnar<R: BufRead>(lattice: Arc<TruncatedLattice>, r: R) -> Result<Self> {
        let mut s = Self::zeros(lattice.clone());
        let dim = lattice.grid().dim();
        for line in r.lines() {
            let line = line.map_err(|e| PhiError::RejectedInput(e.to_string()))?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != dim + 3 {
                return Err(PhiError::RejectedInput(format!("malformed record: {line}")));
            }
            let bad = |_| PhiError::RejectedInput(format!("malformed record: {line}"));
            let nu: i32 = parts[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            let k = parts[1..=dim]
                .iter()
                .map(|p| p.parse::<i64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let re: f64 = parts[dim + 1].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
            let im: f64 = parts[dim + 2].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
            let idx = lattice
                .index(&DyadicCube::new(nu, k))
                .ok_or_else(|| PhiError::LatticeMismatch(format!("cube outside lattice: {line}")))?;
            s.values[idx] = Complex64::new(re, im);
        }
        Ok(s)
    }
}

fn check_grid(pair: &LittlewoodPaleyPair, grid: &GridSpec) -> Result<()> {
    if pair.grid() != grid {
        return Err(PhiError::GridMismatch("pair and field grids differ".into()));
    }
    Ok(())
}

/// Folded index of a flat grid index modulo `c` cubes per axis.
#[inline]
fn fold_index(grid: &GridSpec, flat: usize, c: usize) -> usize {
    (0..grid.dim()).fold(0usize, |acc, a| acc * c + grid.coord(flat, a) % c)
}

/// `<f, A_Q>` at one scale for a spectrum `spec`, returned in local cube order.
pub fn analyze_scale(spec: &[Complex64], pair: &LittlewoodPaleyPair, lattice: &TruncatedLattice, atom: Atom, nu: i32) -> Vec<Complex64> {
    let g = lattice.grid();
    let c = lattice.per_axis(nu);
    let profile = pair.scaled_profile(atom, nu);
    let mut small = vec![Complex64::default(); lattice.count_at(nu)];
    for (i, (s, p)) in spec.iter().zip(profile.iter()).enumerate() {
        if *p != 0.0 {
            small[fold_index(g, i, c)] += s * p;
        }
    }
    fft::inverse(&mut small, c, g.dim());
    let w = g.mode_volume() * frame_scale(g.dim()) * 2f64.powi(-nu * g.dim() as i32).sqrt();
    for v in small.iter_mut() {
        *v *= w;
    }
    small
}

/// Spectrum of `sum_Q s_Q A_Q` over the cubes of one scale (`coeffs` in local order).
pub fn synthesize_scale_into(
    acc: &mut [Complex64],
    coeffs: &[Complex64],
    pair: &LittlewoodPaleyPair,
    lattice: &TruncatedLattice,
    atom: Atom,
    nu: i32,
) {
    let g = lattice.grid();
    let c = lattice.per_axis(nu);
    let mut small = coeffs.to_vec();
    fft::forward(&mut small, c, g.dim());
    let profile = pair.scaled_profile(atom, nu);
    let w = frame_scale(g.dim()) * 2f64.powi(-nu * g.dim() as i32).sqrt();
    for (i, (a, p)) in acc.iter_mut().zip(profile.iter()).enumerate() {
        if *p != 0.0 {
            *a += small[fold_index(g, i, c)] * (p * w);
        }
    }
}

/// `<f, A_Q>` for every lattice cube, from a spectrum.
pub fn analyze_spectrum(spec: &[Complex64], pair: &LittlewoodPaleyPair, lattice: &Arc<TruncatedLattice>, atom: Atom) -> CoefficientSequence {
    let parts: Vec<Vec<Complex64>> = lattice
        .scales()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&nu| analyze_scale(spec, pair, lattice, atom, nu))
        .collect();
    CoefficientSequence { lattice: lattice.clone(), values: parts.concat() }
}

/// `sum_Q s_Q A_Q` as a spectrum.
pub fn synthesize_spectrum(s: &CoefficientSequence, pair: &LittlewoodPaleyPair, atom: Atom) -> Vec<Complex64> {
    let lattice = s.lattice();
    let g = lattice.grid();
    let mut acc = vec![Complex64::default(); g.len()];
    for nu in lattice.scales() {
        synthesize_scale_into(&mut acc, s.at_scale(nu), pair, lattice, atom, nu);
    }
    acc
}

/// `S_phi f = {<f, phi_Q>}`.
pub fn analyze(f: &SampledField, pair: &LittlewoodPaleyPair, lattice: &Arc<TruncatedLattice>) -> Result<CoefficientSequence> {
    analyze_with(f, pair, lattice, Atom::Phi)
}

/// `{<f, A_Q>}` for the chosen atom family.
pub fn analyze_with(f: &SampledField, pair: &LittlewoodPaleyPair, lattice: &Arc<TruncatedLattice>, atom: Atom) -> Result<CoefficientSequence> {
    check_grid(pair, f.grid())?;
    check_grid(pair, lattice.grid())?;
    Ok(analyze_spectrum(f.spectrum(), pair, lattice, atom))
}

/// `T_psi s = sum_Q s_Q psi_Q`.
pub fn synthesize(s: &CoefficientSequence, pair: &LittlewoodPaleyPair) -> Result<SampledField> {
    synthesize_with(s, pair, Atom::Psi)
}

pub fn synthesize_with(s: &CoefficientSequence, pair: &LittlewoodPaleyPair, atom: Atom) -> Result<SampledField> {
    check_grid(pair, s.lattice().grid())?;
    Ok(SampledField::from_spectrum_unchecked(*pair.grid(), synthesize_spectrum(s, pair, atom)))
}

/// Spectrum of the atom `A_Q`: `(2 pi)^{-n/2} |Q|^{1/2} e^{-i x_Q . xi} A^(2^{-nu} xi)`.
pub fn atom_spectrum(pair: &LittlewoodPaleyPair, atom: Atom, cube: &DyadicCube) -> Vec<Complex64> {
    let g = pair.grid();
    let phases = corner_phases(g, cube);
    let profile = pair.scaled_profile(atom, cube.scale);
    let amp = frame_scale(g.dim()) * cube.volume().sqrt();
    profile
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if p == 0.0 {
                return Complex64::default();
            }
            let ph = (0..g.dim()).fold(Complex64::new(amp * p, 0.0), |acc, a| acc * phases[a][g.coord(i, a)]);
            ph
        })
        .collect()
}

/// The atom `A_Q` as a field.
pub fn atom(pair: &LittlewoodPaleyPair, atom: Atom, cube: &DyadicCube) -> SampledField {
    SampledField::from_spectrum_unchecked(*pair.grid(), atom_spectrum(pair, atom, cube))
}

/// `sum_{nu in lattice} phi^ psi^(2^{-nu} xi)` per mode.
pub fn coverage(pair: &LittlewoodPaleyPair, lattice: &TruncatedLattice) -> Vec<f64> {
    pair.partition_sum(lattice.nu_min(), lattice.nu_max())
}

/// `|| (1 - coverage) f^ || / || f^ ||`: the part of `f` the lattice cannot reproduce.
pub fn uncovered_fraction(f: &SampledField, pair: &LittlewoodPaleyPair, lattice: &TruncatedLattice) -> f64 {
    let cov = coverage(pair, lattice);
    let spec = f.spectrum();
    let total: f64 = spec.iter().map(|v| v.norm_sqr()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let miss: f64 = spec.iter().zip(&cov).map(|(v, c)| (v * (1.0 - c)).norm_sqr()).sum();
    (miss / total).sqrt()
}

/// `||f - T_psi S_phi f||_2 / ||f||_2`, or the absolute residual when `f = 0`.
pub fn reconstruction_residual(f: &SampledField, pair: &LittlewoodPaleyPair, lattice: &Arc<TruncatedLattice>) -> Result<f64> {
    let s = analyze(f, pair, lattice)?;
    let r = synthesize(&s, pair)?;
    let diff = f.sub(&r)?.l2_norm();
    let norm = f.l2_norm();
    Ok(if norm == 0.0 { diff } else { diff / norm })
}

#[derive(Debug, Clone, Serialize)]
pub struct PairingExpansion {
    /// `sum_Q <f, phi_Q> <psi_Q, g>`.
    pub expansion: Complex64,
    /// `<f, g>`.
    pub direct: Complex64,
    pub abs_error: f64,
    /// Set when `g` has spectrum where the lattice partition sum is not 1.
    pub coverage_warning: Option<String>,
}

pub fn pairing_expansion(
    f: &SampledField,
    g: &SampledField,
    pair: &LittlewoodPaleyPair,
    lattice: &Arc<TruncatedLattice>,
) -> Result<PairingExpansion> {
    let a = analyze(f, pair, lattice)?;
    let b = analyze_with(g, pair, lattice, Atom::Psi)?;
    let expansion: Complex64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y.conj()).sum();
    let direct = f.inner(g)?;
    let cov = coverage(pair, lattice);
    let spec = g.spectrum();
    let peak = spec.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let bad = spec
        .iter()
        .zip(&cov)
        .filter(|(v, c)| v.norm() > 1e-14 * peak && (**c - 1.0).abs() > 1e-12)
        .count();
    let coverage_warning = (bad > 0).then(|| format!("g has {bad} modes outside the lattice coverage"));
    Ok(PairingExpansion { expansion, direct, abs_error: (expansion - direct).norm(), coverage_warning })
}
