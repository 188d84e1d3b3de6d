//! Operator backends: Fourier multipliers, convolution and quadrature kernels,
//! the modulated symbol `T_a`, and operators synthesized from cube matrices.
//!
//! `transpose` is the bilinear transpose `<Tf, g> = <f, T^t g>` with
//! `<u, v> = \int u v`. A multiplier `m(xi)` therefore becomes `m(-xi)`.

use crate::almost_diag::OperatorMatrix;
use crate::error::{PhiError, Result};
use crate::field::{GridSpec, SampledField};
use crate::fft;
use crate::lp_frame::{frame_scale, Atom, LittlewoodPaleyPair};
use crate::transform::{analyze_spectrum, synthesize_spectrum};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

pub type PairKernel = Arc<dyn Fn(&[f64], &[f64]) -> Complex64 + Send + Sync>;
pub type DifferenceKernel = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendTag {
    Multiplier,
    ConvolutionKernel,
    QuadratureKernel,
    ModulatedSymbol,
    MatrixSynthesized,
    Sum,
    Zero,
}

#[derive(Clone)]
enum Backend {
    /// `m(xi_m)` per flat mode. Convolution and difference-kernel quadrature
    /// operators are stored this way too, with their own tag.
    Multiplier(Arc<Vec<Complex64>>),
    /// Dense `sum_{y != x} K(x, y) f(y) dx^n`.
    Pairwise(PairKernel),
    Modulated { pair: Arc<LittlewoodPaleyPair>, scales: Vec<i32> },
    Matrix { matrix: Arc<OperatorMatrix>, pair: Arc<LittlewoodPaleyPair>, analysis: Atom, synthesis: Atom, factor: Complex64 },
    Sum(Vec<(Complex64, Operator)>),
    Zero,
}

#[derive(Clone)]
pub struct Operator {
    name: String,
    tag: BackendTag,
    grid: GridSpec,
    backend: Backend,
    transposed: bool,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Operator").field("name", &self.name).field("tag", &self.tag).field("transposed", &self.transposed).finish()
    }
}

fn reflect(grid: &GridSpec, m: &[Complex64]) -> Vec<Complex64> {
    (0..grid.len())
        .map(|i| {
            let neg: Vec<i64> = (0..grid.dim()).map(|a| -(grid.coord(i, a) as i64)).collect();
            m[grid.flat_wrapped(&neg)]
        })
        .collect()
}

impl Operator {
    fn new(name: impl Into<String>, tag: BackendTag, grid: GridSpec, backend: Backend) -> Self {
        Self { name: name.into(), tag, grid, backend, transposed: false }
    }

    /// Fourier multiplier with symbol sampled at every grid mode.
    pub fn multiplier(grid: GridSpec, name: impl Into<String>, symbol: Vec<Complex64>) -> Result<Self> {
        if symbol.len() != grid.len() {
            return Err(PhiError::GridMismatch("symbol length differs from grid".into()));
        }
        if symbol.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(PhiError::RejectedInput("non-finite multiplier".into()));
        }
        Ok(Self::new(name, BackendTag::Multiplier, grid, Backend::Multiplier(Arc::new(symbol))))
    }

    pub fn multiplier_fn(grid: GridSpec, name: impl Into<String>, m: impl Fn(&[f64]) -> Complex64) -> Result<Self> {
        let symbol = (0..grid.len()).map(|i| m(&grid.mode(i))).collect();
        Self::multiplier(grid, name, symbol)
    }

    pub fn identity(grid: GridSpec) -> Self {
        Self::new("identity", BackendTag::Multiplier, grid, Backend::Multiplier(Arc::new(vec![Complex64::new(1.0, 0.0); grid.len()])))
    }

    pub fn zero(grid: GridSpec) -> Self {
        Self::new("zero", BackendTag::Zero, grid, Backend::Zero)
    }

    /// `I^s`: multiplier `|xi|^{-s}` with `m(0) = 0`.
    pub fn riesz_potential(grid: GridSpec, s: f64) -> Self {
        let symbol = grid
            .mode_radii()
            .into_iter()
            .map(|r| Complex64::new(if r == 0.0 { 0.0 } else { r.powf(-s) }, 0.0))
            .collect();
        Self::new(format!("riesz-potential(s={s})"), BackendTag::Multiplier, grid, Backend::Multiplier(Arc::new(symbol)))
    }

    /// `d/dx_j`: multiplier `i xi_j`.
    pub fn derivative(grid: GridSpec, axis: usize) -> Self {
        let symbol = grid.mode_component(axis).into_iter().map(|x| Complex64::new(0.0, x)).collect();
        Self::new(format!("derivative({axis})"), BackendTag::Multiplier, grid, Backend::Multiplier(Arc::new(symbol)))
    }

    /// `R_j`: multiplier `i xi_j / |xi|` with `m(0) = 0`.
    pub fn riesz_transform(grid: GridSpec, axis: usize) -> Self {
        let radii = grid.mode_radii();
        let symbol = grid
            .mode_component(axis)
            .into_iter()
            .zip(radii)
            .map(|(x, r)| Complex64::new(0.0, if r == 0.0 { 0.0 } else { x / r }))
            .collect();
        Self::new(format!("riesz-transform({axis})"), BackendTag::Multiplier, grid, Backend::Multiplier(Arc::new(symbol)))
    }

    /// `Tf = g * f` for a sampled kernel `g`.
    pub fn convolution(name: impl Into<String>, kernel: &SampledField) -> Self {
        let g = *kernel.grid();
        let c = (2.0 * std::f64::consts::PI).powf(g.dim() as f64 / 2.0);
        let symbol = kernel.spectrum().iter().map(|v| v * c).collect();
        Self::new(name, BackendTag::ConvolutionKernel, g, Backend::Multiplier(Arc::new(symbol)))
    }

    /// Dense quadrature `Tf(x) = sum_{y != x} K(x, y) f(y) dx^n`; cost `N^{2n}`.
    pub fn quadrature(grid: GridSpec, name: impl Into<String>, kernel: PairKernel) -> Self {
        Self::new(name, BackendTag::QuadratureKernel, grid, Backend::Pairwise(kernel))
    }

    /// Quadrature for `K(x, y) = k(x - y)`, with `x - y` the torus-minimal
    /// difference. Same sum as [`Operator::quadrature`], evaluated by FFT.
    pub fn quadrature_difference(grid: GridSpec, name: impl Into<String>, kernel: DifferenceKernel) -> Result<Self> {
        let mut samples = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            if i == 0 {
                samples.push(Complex64::default());
                continue;
            }
            let v = kernel(&grid.centered_point(i));
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(PhiError::RejectedInput(format!("kernel non-finite at offset {:?}", grid.centered_point(i))));
            }
            samples.push(v);
        }
        fft::forward(&mut samples, grid.samples(), grid.dim());
        let w = grid.cell_volume();
        for v in samples.iter_mut() {
            *v *= w;
        }
        Ok(Self::new(name, BackendTag::QuadratureKernel, grid, Backend::Multiplier(Arc::new(samples))))
    }

    /// `T_a f = (2 pi)^{-n/2} sum_nu 2^{-nu} e^{-i 2^nu x_1} (phi_nu * f)` over the
    /// scales whose shift `2^nu e_1` is a grid mode and whose annulus meets the grid.
    pub fn modulated_symbol(pair: Arc<LittlewoodPaleyPair>) -> Result<Self> {
        if !pair.is_counterexample() {
            return Err(PhiError::RejectedInput("modulated symbol needs a counterexample pair".into()));
        }
        let g = *pair.grid();
        let scales = pair
            .resolvable_scales()
            .into_iter()
            .filter(|&nu| {
                let shift = 2f64.powi(nu) / g.mode_spacing();
                shift >= 1.0 && (shift - shift.round()).abs() < 1e-9 && shift < g.samples() as f64 / 2.0
            })
            .collect();
        Ok(Self::new("modulated-symbol", BackendTag::ModulatedSymbol, g, Backend::Modulated { pair, scales }))
    }

    /// `T = T_psi A S_phi`.
    pub fn matrix_operator(matrix: Arc<OperatorMatrix>, pair: Arc<LittlewoodPaleyPair>) -> Result<Self> {
        Self::matrix_with_atoms("matrix", matrix, pair, Atom::Phi, Atom::Psi, Complex64::new(1.0, 0.0))
    }

    /// `f -> factor * sum_Q (A {<f, B_P>})_Q C_Q` for analysis atoms `B` and synthesis atoms `C`.
    pub fn matrix_with_atoms(
        name: impl Into<String>,
        matrix: Arc<OperatorMatrix>,
        pair: Arc<LittlewoodPaleyPair>,
        analysis: Atom,
        synthesis: Atom,
        factor: Complex64,
    ) -> Result<Self> {
        if matrix.lattice().grid() != pair.grid() {
            return Err(PhiError::LatticeMismatch("matrix lattice and pair live on different grids".into()));
        }
        let g = *pair.grid();
        Ok(Self::new(name, BackendTag::MatrixSynthesized, g, Backend::Matrix { matrix, pair, analysis, synthesis, factor }))
    }

    /// `sum_i c_i T_i`.
    pub fn sum(name: impl Into<String>, parts: Vec<(Complex64, Operator)>) -> Result<Self> {
        let grid = match parts.first() {
            Some((_, op)) => op.grid,
            None => return Err(PhiError::RejectedInput("empty operator sum".into())),
        };
        if parts.iter().any(|(_, op)| op.grid != grid) {
            return Err(PhiError::GridMismatch("summands live on different grids".into()));
        }
        Ok(Self::new(name, BackendTag::Sum, grid, Backend::Sum(parts)))
    }

    pub fn plus(&self, other: &Operator) -> Result<Self> {
        let one = Complex64::new(1.0, 0.0);
        Self::sum(format!("{}+{}", self.name, other.name), vec![(one, self.clone()), (one, other.clone())])
    }

    pub fn minus(&self, other: &Operator) -> Result<Self> {
        let one = Complex64::new(1.0, 0.0);
        Self::sum(format!("{}-{}", self.name, other.name), vec![(one, self.clone()), (-one, other.clone())])
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn tag(&self) -> BackendTag {
        self.tag
    }
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn is_transposed(&self) -> bool {
        self.transposed
    }

    pub fn transpose(&self) -> Self {
        let backend = match &self.backend {
            Backend::Sum(parts) => Backend::Sum(parts.iter().map(|(c, op)| (*c, op.transpose())).collect()),
            other => other.clone(),
        };
        let name = match self.name.strip_suffix("^t") {
            Some(base) => base.to_string(),
            None => format!("{}^t", self.name),
        };
        Self { name, tag: self.tag, grid: self.grid, backend, transposed: !self.transposed }
    }

    /// The symbol when the operator is a Fourier multiplier (translation invariant).
    pub fn as_multiplier(&self) -> Option<Vec<Complex64>> {
        match &self.backend {
            Backend::Multiplier(m) => Some(if self.transposed { reflect(&self.grid, m) } else { m.to_vec() }),
            Backend::Zero => Some(vec![Complex64::default(); self.grid.len()]),
            Backend::Sum(parts) => {
                let mut acc = vec![Complex64::default(); self.grid.len()];
                for (c, op) in parts {
                    let m = op.as_multiplier()?;
                    for (a, b) in acc.iter_mut().zip(m) {
                        *a += c * b;
                    }
                }
                Some(acc)
            }
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.backend, Backend::Zero)
    }

    fn check(&self, f: &SampledField) -> Result<()> {
        if *f.grid() != self.grid {
            return Err(PhiError::GridMismatch(format!("operator {} lives on another grid", self.name)));
        }
        Ok(())
    }

    pub fn apply(&self, f: &SampledField) -> Result<SampledField> {
        self.check(f)?;
        match &self.backend {
            Backend::Pairwise(k) => self.apply_pairwise(k, f),
            _ => Ok(SampledField::from_spectrum_unchecked(self.grid, self.apply_spectrum(f.spectrum())?)),
        }
    }

    /// Spectrum of `Tf` from the spectrum of `f`.
    pub fn apply_spectrum(&self, spec: &[Complex64]) -> Result<Vec<Complex64>> {
        let g = self.grid;
        match &self.backend {
            Backend::Zero => Ok(vec![Complex64::default(); g.len()]),
            Backend::Multiplier(m) => {
                if self.transposed {
                    let r = reflect(&g, m);
                    Ok(spec.iter().zip(&r).map(|(a, b)| a * b).collect())
                } else {
                    Ok(spec.iter().zip(m.iter()).map(|(a, b)| a * b).collect())
                }
            }
            Backend::Pairwise(k) => {
                let f = SampledField::from_spectrum_unchecked(g, spec.to_vec());
                Ok(self.apply_pairwise(k, &f)?.spectrum().to_vec())
            }
            Backend::Modulated { pair, scales } => Ok(self.apply_modulated(pair, scales, spec)),
            Backend::Matrix { matrix, pair, analysis, synthesis, factor } => {
                let (a, s) = if self.transposed { (*synthesis, *analysis) } else { (*analysis, *synthesis) };
                let coeffs = analyze_spectrum(spec, pair, matrix.lattice(), a);
                let out = if self.transposed { matrix.apply_transpose(&coeffs)? } else { matrix.apply(&coeffs)? };
                let mut res = synthesize_spectrum(&out, pair, s);
                for v in res.iter_mut() {
                    *v *= factor;
                }
                Ok(res)
            }
            Backend::Sum(parts) => {
                let mut acc = vec![Complex64::default(); g.len()];
                for (c, op) in parts {
                    let part = op.apply_spectrum(spec)?;
                    for (a, b) in acc.iter_mut().zip(part) {
                        *a += c * b;
                    }
                }
                Ok(acc)
            }
        }
    }

    fn apply_pairwise(&self, k: &PairKernel, f: &SampledField) -> Result<SampledField> {
        let g = self.grid;
        let points: Vec<Vec<f64>> = (0..g.len()).map(|i| g.point(i)).collect();
        let w = g.cell_volume();
        let fv = f.values();
        let transposed = self.transposed;
        let out: Vec<Result<Complex64>> = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let mut acc = Complex64::default();
                for (j, y) in points.iter().enumerate() {
                    if j == i || fv[j] == Complex64::default() {
                        continue;
                    }
                    let kv = if transposed { k(y, &points[i]) } else { k(&points[i], y) };
                    if !(kv.re.is_finite() && kv.im.is_finite()) {
                        return Err(PhiError::RejectedInput(format!("kernel non-finite at {:?}, {:?}", points[i], y)));
                    }
                    acc += kv * fv[j];
                }
                Ok(acc * w)
            })
            .collect();
        SampledField::from_values(g, out.into_iter().collect::<Result<Vec<_>>>()?)
    }

    /// `(T_a f)^(xi) = sum_nu 2^{-nu} phi^(2^{-nu} xi + e_1) f^(xi + 2^nu e_1)`
    /// and `(T_a^t g)^(xi) = sum_nu 2^{-nu} phi^(2^{-nu} xi) g^(xi + 2^nu e_1)`.
    /// Modes shifted off the grid are dropped.
    fn apply_modulated(&self, pair: &LittlewoodPaleyPair, scales: &[i32], spec: &[Complex64]) -> Vec<Complex64> {
        let g = self.grid;
        let half = (g.samples() / 2) as i64;
        let (lo, hi) = pair.support(Atom::Phi);
        let fs = frame_scale(g.dim());
        let mut out = vec![Complex64::default(); g.len()];
        let nz: Vec<usize> = (0..g.len()).filter(|&i| spec[i] != Complex64::default()).collect();
        for &nu in scales {
            let s = 2f64.powi(nu);
            let shift = (s / g.mode_spacing()).round() as i64;
            for &i in &nz {
                let mut m = g.mode_numbers(i);
                m[0] -= shift;
                if m[0] < -half || m[0] >= half {
                    continue;
                }
                // weight at the input mode for T_a, at the output mode for T_a^t
                let r = if self.transposed {
                    m.iter().map(|&v| (v as f64 * g.mode_spacing()).powi(2)).sum::<f64>().sqrt()
                } else {
                    pair.radii()[i]
                } / s;
                if r <= lo || r >= hi {
                    continue;
                }
                let o = g.mode_index(&m).expect("mode inside the grid");
                out[o] += spec[i] * (fs * pair.edges().phi_hat(r) / s);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RieszIdentityReport {
    /// `max_j max |d_j I^1 f - R_j f|` over the seeded fields.
    pub gradient_error: f64,
    /// `max |sum_j R_j^2 f + f|` for zero-mean `f`.
    pub square_sum_error: f64,
    /// `max |Im R_j f|` for real `f`.
    pub reality_error: f64,
    pub fields: usize,
    pub passed: bool,
}

/// `d_j I^1 = R_j` on seeded band-limited real fields.
pub fn gradient_riesz_identity_check(fields: &[SampledField], tolerance: f64) -> Result<RieszIdentityReport> {
    let mut gradient_error: f64 = 0.0;
    let mut square_sum_error: f64 = 0.0;
    let mut reality_error: f64 = 0.0;
    for f in fields {
        let g = *f.grid();
        let i1 = Operator::riesz_potential(g, 1.0).apply(f)?;
        let mut sq = SampledField::zeros(g);
        let mean = f.integral() / g.volume();
        let f0 = f.map(|v| v - mean);
        for j in 0..g.dim() {
            let lhs = Operator::derivative(g, j).apply(&i1)?;
            let rj = Operator::riesz_transform(g, j);
            let rhs = rj.apply(f)?;
            gradient_error = gradient_error.max(lhs.sub(&rhs)?.max_abs());
            reality_error = reality_error.max(rhs.values().iter().map(|v| v.im.abs()).fold(0.0, f64::max));
            sq = sq.add(&rj.apply(&rj.apply(&f0)?)?)?;
        }
        square_sum_error = square_sum_error.max(sq.add(&f0)?.max_abs());
    }
    let passed = gradient_error <= tolerance && square_sum_error <= tolerance && reality_error <= tolerance;
    Ok(RieszIdentityReport { gradient_error, square_sum_error, reality_error, fields: fields.len(), passed })
}

#[derive(Debug, Clone, Serialize)]
pub struct MaximalInequalityReport {
    pub kernel_constant: f64,
    /// `max_x (|Tf(x)| / (C_K I(|f|)(x)) - 1)_+`, with `I` the quadrature of `|x - y|^{1-n}`.
    pub slack: f64,
    pub passed: bool,
}

/// `|Tf(x)| <= C_K I^1(|f|)(x) (1 + slack)` for a quadrature operator with
/// `|K(x, y)| <= C_K |x - y|^{1-n}`; the slack target is 10%.
pub fn maximal_inequality_check(t: &Operator, kernel_constant: f64, fields: &[SampledField]) -> Result<MaximalInequalityReport> {
    let g = *t.grid();
    let n = g.dim() as f64;
    let riesz = Operator::quadrature_difference(
        g,
        "riesz-quadrature",
        Arc::new(move |d: &[f64]| Complex64::new(d.iter().map(|v| v * v).sum::<f64>().sqrt().powf(1.0 - n), 0.0)),
    )?;
    let mut slack: f64 = 0.0;
    for f in fields {
        let tf = t.apply(f)?;
        let bound = riesz.apply(&f.abs())?;
        for (a, b) in tf.values().iter().zip(bound.values()) {
            let b = kernel_constant * b.re;
            if b > 0.0 {
                slack = slack.max(a.norm() / b - 1.0);
            } else if a.norm() > 0.0 {
                slack = f64::INFINITY;
            }
        }
    }
    Ok(MaximalInequalityReport { kernel_constant, slack, passed: slack <= 0.1 })
}
