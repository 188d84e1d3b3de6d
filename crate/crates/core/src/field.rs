//! Sampled periodic fields on the torus `[0, L)^n`.
//!
//! Spectra use the continuous convention
//! `f^(xi) = (2 pi)^{-n/2} \int f(x) e^{-i x.xi} dx`, discretized as
//! `f^_m = (2 pi)^{-n/2} dx^n sum_j f_j e^{-i x_j . xi_m}` with `xi_m = (2 pi / L) m`.
//! The inverse is `f_j = (2 pi)^{-n/2} (2 pi / L)^n sum_m f^_m e^{i x_j . xi_m}`.

use crate::error::{PhiError, Result};
use crate::fft;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Relative L2 mass a dilation may push out of the representable range.
pub const DILATION_MASS_TOL: f64 = 1e-20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    side: f64,
    samples: usize,
}

impl GridSpec {
    pub fn new(dim: usize, side: f64, samples: usize) -> Result<Self> {
        if dim == 0 {
            return Err(PhiError::InvalidGrid("dimension must be at least 1".into()));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(PhiError::InvalidGrid(format!("box side must be positive, got {side}")));
        }
        if samples < 2 || !samples.is_power_of_two() {
            return Err(PhiError::InvalidGrid(format!("samples per axis must be a power of two >= 2, got {samples}")));
        }
        let total = (samples as u128).checked_pow(dim as u32);
        if total.map_or(true, |t| t > (1u128 << 31)) {
            return Err(PhiError::InvalidGrid("grid has too many samples".into()));
        }
        Ok(Self { dim, side, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn side(&self) -> f64 {
        self.side
    }
    pub fn samples(&self) -> usize {
        self.samples
    }
    pub fn dx(&self) -> f64 {
        self.side / self.samples as f64
    }
    pub fn len(&self) -> usize {
        self.samples.pow(self.dim as u32)
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }
    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }
    /// Spacing `2 pi / L` of the frequency lattice.
    pub fn mode_spacing(&self) -> f64 {
        2.0 * PI / self.side
    }
    pub fn nyquist(&self) -> f64 {
        PI / self.dx()
    }
    /// `(2 pi)^{-n/2} dx^n`, the forward quadrature constant.
    pub fn forward_scale(&self) -> f64 {
        (2.0 * PI).powf(-(self.dim as f64) / 2.0) * self.cell_volume()
    }
    /// `(2 pi)^{-n/2} (2 pi / L)^n`, the inverse quadrature constant.
    pub fn inverse_scale(&self) -> f64 {
        (2.0 * PI).powf(-(self.dim as f64) / 2.0) * self.mode_spacing().powi(self.dim as i32)
    }
    /// Weight of one mode in Parseval sums: `(2 pi / L)^n`.
    pub fn mode_volume(&self) -> f64 {
        self.mode_spacing().powi(self.dim as i32)
    }
    pub fn log2_samples(&self) -> u32 {
        self.samples.trailing_zeros()
    }

    /// Per-axis sample index of a flat index (axis 0 is slowest).
    #[inline]
    pub fn coord(&self, flat: usize, axis: usize) -> usize {
        let bits = self.log2_samples() as usize;
        (flat >> (bits * (self.dim - 1 - axis))) & (self.samples - 1)
    }

    pub fn coords(&self, flat: usize) -> Vec<usize> {
        (0..self.dim).map(|a| self.coord(flat, a)).collect()
    }

    pub fn flat(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0usize, |acc, &c| acc * self.samples + (c % self.samples))
    }

    /// Flat index of an integer lattice offset, wrapped periodically.
    pub fn flat_wrapped(&self, coords: &[i64]) -> usize {
        let n = self.samples as i64;
        coords.iter().fold(0usize, |acc, &c| acc * self.samples + c.rem_euclid(n) as usize)
    }

    /// Signed mode number of an FFT index.
    #[inline]
    pub fn signed(&self, idx: usize) -> i64 {
        if idx < self.samples / 2 {
            idx as i64
        } else {
            idx as i64 - self.samples as i64
        }
    }

    /// Integer mode vector `m` of a flat spectral index.
    pub fn mode_numbers(&self, flat: usize) -> Vec<i64> {
        (0..self.dim).map(|a| self.signed(self.coord(flat, a))).collect()
    }

    /// Frequency `xi_m` of a flat spectral index.
    pub fn mode(&self, flat: usize) -> Vec<f64> {
        let h = self.mode_spacing();
        (0..self.dim).map(|a| self.signed(self.coord(flat, a)) as f64 * h).collect()
    }

    /// Flat index of mode numbers `m`, if representable in `[-N/2, N/2)`.
    pub fn mode_index(&self, m: &[i64]) -> Option<usize> {
        let half = (self.samples / 2) as i64;
        let mut acc = 0usize;
        for &mi in m {
            if mi < -half || mi >= half {
                return None;
            }
            acc = acc * self.samples + mi.rem_euclid(self.samples as i64) as usize;
        }
        Some(acc)
    }

    /// `|xi_m|` for every flat spectral index.
    pub fn mode_radii(&self) -> Vec<f64> {
        let h = self.mode_spacing();
        (0..self.len())
            .map(|f| {
                (0..self.dim)
                    .map(|a| {
                        let m = self.signed(self.coord(f, a)) as f64 * h;
                        m * m
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Component `axis` of `xi_m` for every flat spectral index.
    pub fn mode_component(&self, axis: usize) -> Vec<f64> {
        let h = self.mode_spacing();
        (0..self.len()).map(|f| self.signed(self.coord(f, axis)) as f64 * h).collect()
    }

    /// Sample point in `[0, L)^n`.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        let dx = self.dx();
        (0..self.dim).map(|a| self.coord(flat, a) as f64 * dx).collect()
    }

    /// Sample point in the centered cell `[-L/2, L/2)^n`.
    pub fn centered_point(&self, flat: usize) -> Vec<f64> {
        let dx = self.dx();
        (0..self.dim).map(|a| self.signed(self.coord(flat, a)) as f64 * dx).collect()
    }

    /// Torus distance between two points.
    pub fn torus_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let d = (x - y).rem_euclid(self.side);
                let d = d.min(self.side - d);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Same box and dimension with a different sample count.
    pub fn with_samples(&self, samples: usize) -> Result<Self> {
        Self::new(self.dim, self.side, samples)
    }

    pub fn same_box(&self, other: &GridSpec) -> bool {
        self.dim == other.dim && self.side == other.side
    }
}

#[derive(Debug, Clone)]
pub struct SampledField {
    grid: GridSpec,
    values: Vec<Complex64>,
    spectrum: OnceLock<Vec<Complex64>>,
}

impl PartialEq for SampledField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

fn check_finite(values: &[Complex64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(PhiError::RejectedInput(format!("non-finite sample at index {i}")));
    }
    Ok(())
}

impl SampledField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::from_values_unchecked(grid, vec![Complex64::default(); grid.len()])
    }

    pub fn constant(grid: GridSpec, c: Complex64) -> Self {
        Self::from_values_unchecked(grid, vec![c; grid.len()])
    }

    pub fn from_values(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(PhiError::RejectedInput(format!("expected {} samples, got {}", grid.len(), values.len())));
        }
        check_finite(&values)?;
        Ok(Self::from_values_unchecked(grid, values))
    }

    pub(crate) fn from_values_unchecked(grid: GridSpec, values: Vec<Complex64>) -> Self {
        Self { grid, values, spectrum: OnceLock::new() }
    }

    pub fn from_real(grid: GridSpec, values: &[f64]) -> Result<Self> {
        Self::from_values(grid, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    /// Samples `f` at points of `[0, L)^n`.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> Complex64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self::from_values(grid, values)
    }

    /// Samples `f` at points of the centered cell `[-L/2, L/2)^n`.
    pub fn from_fn_centered(grid: GridSpec, f: impl Fn(&[f64]) -> Complex64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.centered_point(i))).collect();
        Self::from_values(grid, values)
    }

    /// Builds a field from spectral coefficients in the continuous convention.
    pub fn from_spectrum(grid: GridSpec, spectrum: Vec<Complex64>) -> Result<Self> {
        if spectrum.len() != grid.len() {
            return Err(PhiError::RejectedInput(format!("expected {} modes, got {}", grid.len(), spectrum.len())));
        }
        check_finite(&spectrum)?;
        Ok(Self::from_spectrum_unchecked(grid, spectrum))
    }

    pub(crate) fn from_spectrum_unchecked(grid: GridSpec, spectrum: Vec<Complex64>) -> Self {
        let mut values = spectrum.clone();
        fft::inverse(&mut values, grid.samples(), grid.dim());
        let s = grid.inverse_scale();
        for v in values.iter_mut() {
            *v *= s;
        }
        let cell = OnceLock::new();
        let _ = cell.set(spectrum);
        Self { grid, values, spectrum: cell }
    }

    /// Builds a field from a spectrum given as a function of `xi`.
    pub fn from_spectrum_fn(grid: GridSpec, f: impl Fn(&[f64]) -> Complex64) -> Result<Self> {
        let spectrum = (0..grid.len()).map(|i| f(&grid.mode(i))).collect();
        Self::from_spectrum(grid, spectrum)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Spectrum in the continuous convention, computed once and cached.
    pub fn spectrum(&self) -> &[Complex64] {
        self.spectrum.get_or_init(|| {
            let mut s = self.values.clone();
            fft::forward(&mut s, self.grid.samples(), self.grid.dim());
            let c = self.grid.forward_scale();
            for v in s.iter_mut() {
                *v *= c;
            }
            s
        })
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self::from_values_unchecked(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(PhiError::GridMismatch("fields live on different grids".into()));
        }
        Ok(Self::from_values_unchecked(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: Complex64, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + c * b)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|v| v * c)
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    pub fn abs(&self) -> Self {
        self.map(|v| Complex64::new(v.norm(), 0.0))
    }

    /// Multiplies the spectrum by `m` (one value per flat mode).
    pub fn apply_multiplier(&self, m: &[Complex64]) -> Result<Self> {
        if m.len() != self.grid.len() {
            return Err(PhiError::GridMismatch("multiplier length differs from grid".into()));
        }
        let s: Vec<Complex64> = self.spectrum().iter().zip(m).map(|(a, b)| a * b).collect();
        Ok(Self::from_spectrum_unchecked(self.grid, s))
    }

    /// Multiplies the spectrum by a real profile.
    pub fn apply_real_multiplier(&self, m: &[f64]) -> Result<Self> {
        if m.len() != self.grid.len() {
            return Err(PhiError::GridMismatch("multiplier length differs from grid".into()));
        }
        let s: Vec<Complex64> = self.spectrum().iter().zip(m).map(|(a, b)| a * b).collect();
        Ok(Self::from_spectrum_unchecked(self.grid, s))
    }

    /// `\int f` over the box.
    pub fn integral(&self) -> Complex64 {
        self.values.iter().sum::<Complex64>() * self.grid.cell_volume()
    }

    /// Sesquilinear pairing `\int f conj(g)`.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        if self.grid != other.grid {
            return Err(PhiError::GridMismatch("fields live on different grids".into()));
        }
        let s: Complex64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum();
        Ok(s * self.grid.cell_volume())
    }

    /// Bilinear pairing `\int f g`.
    pub fn bilinear(&self, other: &Self) -> Result<Complex64> {
        if self.grid != other.grid {
            return Err(PhiError::GridMismatch("fields live on different grids".into()));
        }
        let s: Complex64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok(s * self.grid.cell_volume())
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// L2 norm computed from the spectrum.
    pub fn spectral_l2_norm(&self) -> f64 {
        (self.spectrum().iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.mode_volume()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Riemann-sum `L^p` norm; `p = f64::INFINITY` gives the max modulus.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(PhiError::RejectedInput(format!("L^p norm needs p >= 1, got {p}")));
        }
        if p.is_infinite() {
            return Ok(self.max_abs());
        }
        let s: f64 = self.values.iter().map(|v| v.norm().powf(p)).sum();
        Ok((s * self.grid.cell_volume()).powf(1.0 / p))
    }

    /// `tau_h f(x) = f(x - h)` for a lattice vector `h` in samples.
    pub fn translate(&self, h: &[i64]) -> Result<Self> {
        if h.len() != self.grid.dim() {
            return Err(PhiError::RejectedInput("translation vector has wrong dimension".into()));
        }
        let g = self.grid;
        let mut out = vec![Complex64::default(); g.len()];
        let mut c = vec![0i64; g.dim()];
        for (i, o) in out.iter_mut().enumerate() {
            for (a, ca) in c.iter_mut().enumerate() {
                *ca = g.coord(i, a) as i64 - h[a];
            }
            *o = self.values[g.flat_wrapped(&c)];
        }
        Ok(Self::from_values_unchecked(g, out))
    }

    /// Multiplies by `e^{i xi_m . x}` for integer mode numbers `m`.
    pub fn modulate(&self, m: &[i64]) -> Result<Self> {
        if m.len() != self.grid.dim() {
            return Err(PhiError::RejectedInput("mode vector has wrong dimension".into()));
        }
        let g = self.grid;
        let n = g.samples() as i64;
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let phase: i64 = (0..g.dim()).map(|a| (g.coord(i, a) as i64 * m[a]).rem_euclid(n)).sum();
                v * Complex64::from_polar(1.0, 2.0 * PI * (phase.rem_euclid(n)) as f64 / n as f64)
            })
            .collect();
        Ok(Self::from_values_unchecked(g, values))
    }

    /// `Delta_h f = tau_{-h} f + tau_h f - 2 f`.
    pub fn second_difference(&self, h: &[i64]) -> Result<Self> {
        let minus: Vec<i64> = h.iter().map(|v| -v).collect();
        let a = self.translate(&minus)?;
        let b = self.translate(h)?;
        a.add(&b)?.axpy(Complex64::new(-2.0, 0.0), self)
    }

    /// `f_nu(x) = 2^{nu n} f(2^nu x)`; spectrally `(f_nu)^(xi) = f^(2^{-nu} xi)`.
    ///
    /// Negative scales sample the spectrum on a coarser mode lattice; positive
    /// scales compress the centered cell in space.
    pub fn dilate(&self, nu: i32) -> Result<Self> {
        let g = self.grid;
        if nu == 0 {
            return Ok(self.clone());
        }
        let factor = 1usize
            .checked_shl(nu.unsigned_abs())
            .filter(|f| *f < g.samples())
            .ok_or_else(|| PhiError::ScaleOutOfRange { scale: nu, reason: "dilation factor exceeds the grid".into() })?;
        let total: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        if nu < 0 {
            // spatial support must fit after stretching
            let half = (g.samples() / (2 * factor)) as i64;
            let outside: f64 = (0..g.len())
                .filter(|&i| (0..g.dim()).any(|a| {
                    let s = g.signed(g.coord(i, a));
                    s < -half || s >= half
                }))
                .map(|i| self.values[i].norm_sqr())
                .sum();
            if outside > DILATION_MASS_TOL * total {
                return Err(PhiError::ScaleOutOfRange { scale: nu, reason: "stretched support leaves the box".into() });
            }
            let spec = self.spectrum();
            let f = factor as i64;
            let s = (0..g.len())
                .map(|i| {
                    let m: Vec<i64> = g.mode_numbers(i).iter().map(|v| v * f).collect();
                    g.mode_index(&m).map_or(Complex64::default(), |j| spec[j])
                })
                .collect();
            Ok(Self::from_spectrum_unchecked(g, s))
        } else {
            let limit = (g.samples() / (2 * factor)) as i64;
            let spec = self.spectrum();
            let spec_total: f64 = spec.iter().map(|v| v.norm_sqr()).sum();
            let outside: f64 = (0..g.len())
                .filter(|&i| (0..g.dim()).any(|a| {
                    let s = g.signed(g.coord(i, a));
                    s <= -limit || s >= limit
                }))
                .map(|i| spec[i].norm_sqr())
                .sum();
            if outside > DILATION_MASS_TOL * spec_total {
                return Err(PhiError::ScaleOutOfRange { scale: nu, reason: "compressed spectrum passes Nyquist".into() });
            }
            let amp = (factor as f64).powi(g.dim() as i32);
            let half = (g.samples() / 2) as i64;
            let f = factor as i64;
            let mut c = vec![0i64; g.dim()];
            let values = (0..g.len())
                .map(|i| {
                    for (a, ca) in c.iter_mut().enumerate() {
                        *ca = g.signed(g.coord(i, a)) * f;
                    }
                    if c.iter().all(|&v| v >= -half && v < half) {
                        self.values[g.flat_wrapped(&c)] * amp
                    } else {
                        Complex64::default()
                    }
                })
                .collect();
            Ok(Self::from_values_unchecked(g, values))
        }
    }

    /// Discrete Hardy-Littlewood maximal function over centered cubes of
    /// `2r + 1` samples per side, `r` in `{0, 1, 2, 4, ...}`.
    pub fn hl_maximal(&self) -> Self {
        let g = self.grid;
        let abs: Vec<f64> = self.values.iter().map(|v| v.norm()).collect();
        let mut best = abs.clone();
        let mut r = 1usize;
        while 2 * r < g.samples() {
            let mut cur = abs.clone();
            for axis in 0..g.dim() {
                cur = box_sum_axis(&g, &cur, axis, r);
            }
            let w = ((2 * r + 1) as f64).powi(g.dim() as i32);
            for (b, c) in best.iter_mut().zip(&cur) {
                *b = b.max(c / w);
            }
            r *= 2;
        }
        Self::from_values_unchecked(g, best.into_iter().map(|v| Complex64::new(v, 0.0)).collect())
    }

    /// Spectral resampling onto a grid with the same box (zero padding or truncation).
    pub fn resample(&self, target: GridSpec) -> Result<Self> {
        if !self.grid.same_box(&target) {
            return Err(PhiError::GridMismatch("resampling needs the same box".into()));
        }
        let spec = self.spectrum();
        let mut out = vec![Complex64::default(); target.len()];
        for (i, v) in spec.iter().enumerate() {
            if let Some(j) = target.mode_index(&self.grid.mode_numbers(i)) {
                out[j] = *v;
            }
        }
        Ok(Self::from_spectrum_unchecked(target, out))
    }
}

/// Circular moving sum of half-width `r` along one axis.
fn box_sum_axis(g: &GridSpec, data: &[f64], axis: usize, r: usize) -> Vec<f64> {
    let n = g.samples();
    let stride = n.pow((g.dim() - 1 - axis) as u32);
    let block = stride * n;
    let mut out = vec![0.0; data.len()];
    let mut line = vec![0.0; n];
    let mut prefix = vec![0.0; n + 1];
    for start in (0..data.len()).step_by(block) {
        for inner in 0..stride {
            let base = start + inner;
            for (i, l) in line.iter_mut().enumerate() {
                *l = data[base + i * stride];
            }
            for i in 0..n {
                prefix[i + 1] = prefix[i] + line[i];
            }
            let total = prefix[n];
            let width = 2 * r + 1;
            for i in 0..n {
                let lo = (i + n - r) % n;
                let hi = lo + width;
                let s = if hi <= n {
                    prefix[hi] - prefix[lo]
                } else {
                    total - prefix[lo] + prefix[hi - n]
                };
                out[base + i * stride] = s;
            }
        }
    }
    out
}

/// Forward transform with finiteness check.
pub fn forward_transform(f: &SampledField) -> Result<Vec<Complex64>> {
    check_finite(f.values())?;
    Ok(f.spectrum().to_vec())
}

/// Inverse of [`forward_transform`].
pub fn inverse_transform(grid: GridSpec, spectrum: Vec<Complex64>) -> Result<SampledField> {
    SampledField::from_spectrum(grid, spectrum)
}
