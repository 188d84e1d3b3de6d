//! Almost-diagonality weights, operator matrices `A_{Q,P} = <T(psi_P), phi_Q>`,
//! ADP verdicts and numerical checks of the decay and summation lemmas.

use crate::error::{PhiError, Result};
use crate::fft;
use crate::field::{GridSpec, SampledField};
use crate::lattice::{cube_geometry, DyadicCube, TruncatedLattice};
use crate::lp_frame::{frame_scale, Atom, LittlewoodPaleyPair};
use crate::operators::Operator;
use crate::spaces::{sequence_norm, SpaceIndex};
use crate::transform::{analyze_spectrum, atom, atom_spectrum, CoefficientSequence};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

/// Largest lattice stored densely (`len^2` complex entries).
pub const DENSE_LIMIT: usize = 2048;

/// Default verdict grid for `epsilon`.
pub const EPS_GRID: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

fn omega_raw(n: f64, lmin: f64, lmax: f64, dist: f64, eps: f64) -> f64 {
    lmin.powf(1.0 + (n + eps) / 2.0) / lmax.powf((n + eps) / 2.0) * (1.0 + dist / lmax).powf(-(n + eps))
}

fn big_w_raw(n: f64, lmin: f64, lmax: f64, dist: f64, beta: f64, gamma: f64) -> f64 {
    (lmin / lmax).powf((n + gamma) / 2.0) * (1.0 + dist / lmax).powf(-(n + beta))
}

/// `omega_{P,Q}(eps)` with the torus distance between corners.
pub fn omega(grid: &GridSpec, p: &DyadicCube, q: &DyadicCube, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(PhiError::RejectedInput(format!("epsilon must be positive, got {eps}")));
    }
    let g = cube_geometry(grid, p, q);
    Ok(omega_raw(grid.dim() as f64, g.min_side, g.max_side, g.distance, eps))
}

/// `W_{P,Q}(beta, gamma) = 2^{-|nu - mu|(n + gamma)/2} (1 + |x_Q - x_P| / (l(Q) v l(P)))^{-(n + beta)}`.
pub fn big_w(grid: &GridSpec, p: &DyadicCube, q: &DyadicCube, beta: f64, gamma: f64) -> Result<f64> {
    if !(beta > 0.0) || !(gamma > 0.0) {
        return Err(PhiError::RejectedInput(format!("beta and gamma must be positive, got {beta}, {gamma}")));
    }
    let g = cube_geometry(grid, p, q);
    Ok(big_w_raw(grid.dim() as f64, g.min_side, g.max_side, g.distance, beta, gamma))
}

/// Entries `G(x_Q - x_P)` for one pair of scales, on the offset lattice of the finer scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationBlock {
    pub nu_q: i32,
    pub nu_p: i32,
    /// Offsets per axis: `L 2^{max(nu_q, nu_p)}`.
    pub per_axis: usize,
    pub values: Vec<Complex64>,
    spectrum: Vec<Complex64>,
}

impl TranslationBlock {
    fn new(nu_q: i32, nu_p: i32, per_axis: usize, dim: usize, values: Vec<Complex64>) -> Self {
        let mut spectrum = values.clone();
        fft::forward(&mut spectrum, per_axis, dim);
        Self { nu_q, nu_p, per_axis, values, spectrum }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixStorage {
    Zero,
    /// Row-major, row `Q`, column `P`.
    Dense(Vec<Complex64>),
    Diagonal(Vec<Complex64>),
    /// Translation-invariant entries; scale pairs without a block are exactly zero.
    Blocks(Vec<TranslationBlock>),
}

/// `A_{Q,P}` over a truncated lattice, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    lattice: Arc<TruncatedLattice>,
    storage: MatrixStorage,
    operator_id: String,
    pair_hash: String,
}

/// Flat index on a `big^dim` grid of the `local`-th point of a `small^dim` grid scaled by `ratio`.
fn scatter_index(dim: usize, small: usize, ratio: usize, big: usize, mut local: usize) -> usize {
    let mut digits = vec![0usize; dim];
    for a in (0..dim).rev() {
        digits[a] = local % small;
        local /= small;
    }
    digits.iter().fold(0usize, |acc, &d| acc * big + d * ratio)
}

impl OperatorMatrix {
    pub fn zero(lattice: Arc<TruncatedLattice>) -> Self {
        Self { lattice, storage: MatrixStorage::Zero, operator_id: "zero".into(), pair_hash: String::new() }
    }

    pub fn identity(lattice: Arc<TruncatedLattice>) -> Self {
        let n = lattice.len();
        Self::diagonal(lattice, vec![Complex64::new(1.0, 0.0); n], "identity", "")
    }

    pub fn diagonal(lattice: Arc<TruncatedLattice>, values: Vec<Complex64>, id: &str, pair_hash: &str) -> Self {
        Self { lattice, storage: MatrixStorage::Diagonal(values), operator_id: id.into(), pair_hash: pair_hash.into() }
    }

    pub fn dense(lattice: Arc<TruncatedLattice>, values: Vec<Complex64>, id: &str, pair_hash: &str) -> Result<Self> {
        if values.len() != lattice.len() * lattice.len() {
            return Err(PhiError::LatticeMismatch("dense matrix size differs from lattice".into()));
        }
        Ok(Self { lattice, storage: MatrixStorage::Dense(values), operator_id: id.into(), pair_hash: pair_hash.into() })
    }

    pub fn lattice(&self) -> &Arc<TruncatedLattice> {
        &self.lattice
    }
    pub fn storage(&self) -> &MatrixStorage {
        &self.storage
    }
    pub fn operator_id(&self) -> &str {
        &self.operator_id
    }
    pub fn pair_hash(&self) -> &str {
        &self.pair_hash
    }

    fn block(&self, nu_q: i32, nu_p: i32) -> Option<&TranslationBlock> {
        match &self.storage {
            MatrixStorage::Blocks(b) => b.iter().find(|b| b.nu_q == nu_q && b.nu_p == nu_p),
            _ => None,
        }
    }

    fn block_offset(&self, b: &TranslationBlock, q: usize, p: usize) -> usize {
        let lat = &self.lattice;
        let (cq, cp) = (lat.per_axis(b.nu_q), lat.per_axis(b.nu_p));
        let c = b.per_axis as i64;
        let kq = lat.local_k(b.nu_q, q - lat.range_at(b.nu_q).start);
        let kp = lat.local_k(b.nu_p, p - lat.range_at(b.nu_p).start);
        let (rq, rp) = ((b.per_axis / cq) as i64, (b.per_axis / cp) as i64);
        kq.iter().zip(&kp).fold(0usize, |acc, (a, bb)| acc * b.per_axis + (a * rq - bb * rp).rem_euclid(c) as usize)
    }

    pub fn entry(&self, q: usize, p: usize) -> Complex64 {
        match &self.storage {
            MatrixStorage::Zero => Complex64::default(),
            MatrixStorage::Dense(v) => v[q * self.lattice.len() + p],
            MatrixStorage::Diagonal(v) => {
                if q == p {
                    v[q]
                } else {
                    Complex64::default()
                }
            }
            MatrixStorage::Blocks(_) => {
                let (nq, np) = (self.lattice.scale_of(q), self.lattice.scale_of(p));
                match self.block(nq, np) {
                    Some(b) => b.values[self.block_offset(b, q, p)],
                    None => Complex64::default(),
                }
            }
        }
    }

    /// Column `P`: `A_{., P}`.
    pub fn column(&self, p: usize) -> Vec<Complex64> {
        (0..self.lattice.len()).map(|q| self.entry(q, p)).collect()
    }

    fn check(&self, s: &CoefficientSequence) -> Result<()> {
        if **s.lattice() != *self.lattice {
            return Err(PhiError::LatticeMismatch("sequence and matrix lattices differ".into()));
        }
        Ok(())
    }

    /// `(A s)_Q = sum_P A_{Q,P} s_P`.
    pub fn apply(&self, s: &CoefficientSequence) -> Result<CoefficientSequence> {
        self.apply_inner(s, false)
    }

    /// `(A^T s)_P = sum_Q A_{Q,P} s_Q`.
    pub fn apply_transpose(&self, s: &CoefficientSequence) -> Result<CoefficientSequence> {
        self.apply_inner(s, true)
    }

    fn apply_inner(&self, s: &CoefficientSequence, transpose: bool) -> Result<CoefficientSequence> {
        self.check(s)?;
        let lat = &self.lattice;
        let len = lat.len();
        let mut out = vec![Complex64::default(); len];
        match &self.storage {
            MatrixStorage::Zero => {}
            MatrixStorage::Diagonal(d) => {
                for ((o, a), b) in out.iter_mut().zip(d).zip(s.values()) {
                    *o = a * b;
                }
            }
            MatrixStorage::Dense(v) => {
                let sv = s.values();
                if transpose {
                    for (q, row) in v.chunks_exact(len).enumerate() {
                        let x = sv[q];
                        if x != Complex64::default() {
                            for (o, a) in out.iter_mut().zip(row) {
                                *o += a * x;
                            }
                        }
                    }
                } else {
                    out.par_iter_mut().zip(v.par_chunks_exact(len)).for_each(|(o, row)| {
                        *o = row.iter().zip(sv).map(|(a, b)| a * b).sum();
                    });
                }
            }
            MatrixStorage::Blocks(blocks) => {
                let dim = lat.grid().dim();
                for b in blocks {
                    // transpose: input lives on the Q scale, output on the P scale
                    let (nu_in, nu_out) = if transpose { (b.nu_q, b.nu_p) } else { (b.nu_p, b.nu_q) };
                    let c = b.per_axis;
                    let (c_in, c_out) = (lat.per_axis(nu_in), lat.per_axis(nu_out));
                    let mut u = vec![Complex64::default(); c.pow(dim as u32)];
                    let input = s.at_scale(nu_in);
                    for (local, v) in input.iter().enumerate() {
                        u[scatter_index(dim, c_in, c / c_in, c, local)] = *v;
                    }
                    fft::forward(&mut u, c, dim);
                    if transpose {
                        for (k, x) in u.iter_mut().enumerate() {
                            let neg: usize = {
                                let mut rem = k;
                                let mut digits = vec![0usize; dim];
                                for a in (0..dim).rev() {
                                    digits[a] = (c - rem % c) % c;
                                    rem /= c;
                                }
                                digits.iter().fold(0usize, |acc, &d| acc * c + d)
                            };
                            *x *= b.spectrum[neg];
                        }
                    } else {
                        for (x, g) in u.iter_mut().zip(&b.spectrum) {
                            *x *= g;
                        }
                    }
                    fft::inverse(&mut u, c, dim);
                    let scale = 1.0 / u.len() as f64;
                    let start = lat.range_at(nu_out).start;
                    for local in 0..lat.count_at(nu_out) {
                        out[start + local] += u[scatter_index(dim, c_out, c / c_out, c, local)] * scale;
                    }
                }
            }
        }
        CoefficientSequence::from_values(lat.clone(), out)
    }

    /// Entry-wise `a A + b B` for matrices with dense or diagonal storage.
    pub fn to_dense(&self) -> Result<Vec<Complex64>> {
        let len = self.lattice.len();
        if len > DENSE_LIMIT {
            return Err(PhiError::Unsupported(format!("{len} cubes exceed the dense limit {DENSE_LIMIT}")));
        }
        let mut v = vec![Complex64::default(); len * len];
        for p in 0..len {
            for q in 0..len {
                v[q * len + p] = self.entry(q, p);
            }
        }
        Ok(v)
    }

    /// Columnar text: a header, then `nu_Q k_Q nu_P k_P re im` per nonzero entry.
    pub fn write_columnar<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| PhiError::RejectedInput(e.to_string());
        let g = self.lattice.grid();
        let len = self.lattice.len();
        if len > DENSE_LIMIT {
            return Err(PhiError::Unsupported(format!("{len} cubes exceed the serialization limit {DENSE_LIMIT}")));
        }
        writeln!(
            w,
            "# dim={} side={:?} samples={} nu_min={} nu_max={} pair={} operator={}",
            g.dim(),
            g.side(),
            g.samples(),
            self.lattice.nu_min(),
            self.lattice.nu_max(),
            self.pair_hash,
            self.operator_id
        )
        .map_err(io)?;
        for q in 0..len {
            for p in 0..len {
                let v = self.entry(q, p);
                if v == Complex64::default() {
                    continue;
                }
                let (cq, cp) = (self.lattice.cube(q), self.lattice.cube(p));
                let kq: Vec<String> = cq.k.iter().map(|k| k.to_string()).collect();
                let kp: Vec<String> = cp.k.iter().map(|k| k.to_string()).collect();
                writeln!(w, "{} {} {} {} {:?} {:?}", cq.scale, kq.join(" "), cp.scale, kp.join(" "), v.re, v.im).map_err(io)?;
            }
        }
        Ok(())
    }

    /// Reads the columnar format into dense storage; the header must match `lattice`.
    pub fn read_columnar<R: BufRead>(lattice: Arc<TruncatedLattice>, r: R) -> Result<Self> {
        let len = lattice.len();
        if len > DENSE_LIMIT {
            return Err(PhiError::Unsupported(format!("{len} cubes exceed the dense limit {DENSE_LIMIT}")));
        }
        let dim = lattice.grid().dim();
        let mut values = vec![Complex64::default(); len * len];
        let mut pair_hash = String::new();
        let mut operator_id = String::new();
        for line in r.lines() {
            let line = line.map_err(|e| PhiError::RejectedInput(e.to_string()))?;
            if let Some(h) = line.strip_prefix("# ") {
                for kv in h.split_whitespace() {
                    let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                    let expect = |want: String| {
                        if v == want {
                            Ok(())
                        } else {
                            Err(PhiError::LatticeMismatch(format!("header {k}={v}, expected {want}")))
                        }
                    };
                    match k {
                        "dim" => expect(dim.to_string())?,
                        "side" => expect(format!("{:?}", lattice.grid().side()))?,
                        "samples" => expect(lattice.grid().samples().to_string())?,
                        "nu_min" => expect(lattice.nu_min().to_string())?,
                        "nu_max" => expect(lattice.nu_max().to_string())?,
                        "pair" => pair_hash = v.to_string(),
                        "operator" => operator_id = v.to_string(),
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || PhiError::RejectedInput(format!("malformed record: {line}"));
            if parts.len() != 2 * dim + 4 {
                return Err(bad());
            }
            let int = |s: &str| s.parse::<i64>().map_err(|_| bad());
            let cq = DyadicCube::new(int(parts[0])? as i32, parts[1..=dim].iter().map(|s| int(s)).collect::<Result<_>>()?);
            let cp = DyadicCube::new(int(parts[dim + 1])? as i32, parts[dim + 2..2 * dim + 2].iter().map(|s| int(s)).collect::<Result<_>>()?);
            let re: f64 = parts[2 * dim + 2].parse().map_err(|_| bad())?;
            let im: f64 = parts[2 * dim + 3].parse().map_err(|_| bad())?;
            let q = lattice.index(&cq).ok_or_else(bad)?;
            let p = lattice.index(&cp).ok_or_else(bad)?;
            values[q * len + p] = Complex64::new(re, im);
        }
        Ok(Self { lattice, storage: MatrixStorage::Dense(values), operator_id, pair_hash })
    }
}

/// Blocks `G_{nu mu}(d) = (2 pi)^{-n} (2 pi / L)^n |P|^{1/2} |Q|^{1/2} sum_xi m psi^(2^{-mu} xi) phi^(2^{-nu} xi) e^{i d . xi}`.
fn multiplier_blocks(m: &[Complex64], pair: &LittlewoodPaleyPair, lattice: &TruncatedLattice) -> Vec<TranslationBlock> {
    let g = lattice.grid();
    let dim = g.dim();
    let pairs: Vec<(i32, i32)> = lattice.scales().flat_map(|nq| lattice.scales().map(move |np| (nq, np))).collect();
    pairs
        .par_iter()
        .filter_map(|&(nq, np)| {
            let fine = nq.max(np);
            let c = lattice.per_axis(fine);
            let phi = pair.scaled_profile(Atom::Phi, nq);
            let psi = pair.scaled_profile(Atom::Psi, np);
            let w = g.mode_volume() * frame_scale(dim).powi(2) * 2f64.powi(-(nq + np) * dim as i32).sqrt();
            let mut folded = vec![Complex64::default(); c.pow(dim as u32)];
            let mut any = false;
            for i in 0..g.len() {
                let a = phi[i] * psi[i];
                if a == 0.0 || m[i] == Complex64::default() {
                    continue;
                }
                any = true;
                let f = (0..dim).fold(0usize, |acc, ax| acc * c + g.coord(i, ax) % c);
                folded[f] += m[i] * (a * w);
            }
            if !any {
                return None;
            }
            fft::inverse(&mut folded, c, dim);
            Some(TranslationBlock::new(nq, np, c, dim, folded))
        })
        .collect()
}

/// Calls `visit(P, column)` for every lattice cube `P` in order, with
/// `column = {<T(psi_P), phi_Q>}_Q`. Columns are computed in parallel batches.
pub fn for_each_column(
    t: &Operator,
    pair: &LittlewoodPaleyPair,
    lattice: &Arc<TruncatedLattice>,
    mut visit: impl FnMut(usize, &[Complex64]) -> Result<()>,
) -> Result<()> {
    const BATCH: usize = 64;
    let len = lattice.len();
    let mut start = 0;
    while start < len {
        let end = (start + BATCH).min(len);
        let cols: Vec<Result<CoefficientSequence>> = (start..end)
            .into_par_iter()
            .map(|p| {
                let spec = atom_spectrum(pair, Atom::Psi, &lattice.cube(p));
                let out = t.apply_spectrum(&spec)?;
                Ok(analyze_spectrum(&out, pair, lattice, Atom::Phi))
            })
            .collect();
        for (i, col) in cols.into_iter().enumerate() {
            visit(start + i, col?.values())?;
        }
        start = end;
    }
    Ok(())
}

/// `A_{Q,P} = <T(psi_P), phi_Q>` for every pair of lattice cubes.
/// Multipliers get translation blocks; other operators are streamed column by column.
pub fn build_matrix(t: &Operator, pair: &LittlewoodPaleyPair, lattice: &Arc<TruncatedLattice>) -> Result<OperatorMatrix> {
    if t.grid() != lattice.grid() || pair.grid() != lattice.grid() {
        return Err(PhiError::GridMismatch("operator, pair and lattice must share a grid".into()));
    }
    let id = t.name().to_string();
    let hash = pair.profile_hash();
    if t.is_zero() {
        return Ok(OperatorMatrix { lattice: lattice.clone(), storage: MatrixStorage::Zero, operator_id: id, pair_hash: hash });
    }
    if let Some(m) = t.as_multiplier() {
        let blocks = multiplier_blocks(&m, pair, lattice);
        return Ok(OperatorMatrix { lattice: lattice.clone(), storage: MatrixStorage::Blocks(blocks), operator_id: id, pair_hash: hash });
    }
    let len = lattice.len();
    if len > DENSE_LIMIT {
        return Err(PhiError::Unsupported(format!(
            "{id}: {len} cubes exceed the dense limit {DENSE_LIMIT}; use the streaming verdicts"
        )));
    }
    let mut values = vec![Complex64::default(); len * len];
    for_each_column(t, pair, lattice, |p, col| {
        for (q, v) in col.iter().enumerate() {
            values[q * len + p] = *v;
        }
        Ok(())
    })?;
    OperatorMatrix::dense(lattice.clone(), values, &id, &hash)
}

/// Translation blocks with entries `omega_{P,Q}(eps)` at every pair of scales.
pub fn synthetic_omega_matrix(lattice: Arc<TruncatedLattice>, eps: f64) -> Result<OperatorMatrix> {
    if !(eps > 0.0) {
        return Err(PhiError::RejectedInput(format!("epsilon must be positive, got {eps}")));
    }
    let g = *lattice.grid();
    let dim = g.dim();
    let n = dim as f64;
    let mut blocks = Vec::new();
    for nq in lattice.scales() {
        for np in lattice.scales() {
            let fine = nq.max(np);
            let c = lattice.per_axis(fine);
            let step = g.side() / c as f64;
            let (lq, lp) = (2f64.powi(-nq), 2f64.powi(-np));
            let values = (0..c.pow(dim as u32))
                .map(|i| {
                    let mut rem = i;
                    let mut d2 = 0.0;
                    for _ in 0..dim {
                        let k = rem % c;
                        rem /= c;
                        let k = if k >= c / 2 { k as f64 - c as f64 } else { k as f64 };
                        d2 += (k * step).powi(2);
                    }
                    Complex64::new(omega_raw(n, lq.min(lp), lq.max(lp), d2.sqrt(), eps), 0.0)
                })
                .collect();
            blocks.push(TranslationBlock::new(nq, np, c, dim, values));
        }
    }
    Ok(OperatorMatrix { lattice, storage: MatrixStorage::Blocks(blocks), operator_id: format!("omega({eps})"), pair_hash: String::new() })
}

#[derive(Debug, Clone, Serialize)]
pub struct AdpPoint {
    pub eps: f64,
    /// `max |A_{Q,P}| / omega_{P,Q}(eps)`.
    pub ratio: f64,
    /// `(Q, P)` attaining the maximum.
    pub witness: Option<(DyadicCube, DyadicCube)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdpProfile {
    pub operator: String,
    pub lattice: crate::lattice::LatticeSpec,
    pub samples: usize,
    pub points: Vec<AdpPoint>,
    /// `r(eps)` non-decreasing along the grid.
    pub monotone: bool,
}

impl AdpProfile {
    pub fn at(&self, eps: f64) -> Option<&AdpPoint> {
        self.points.iter().find(|p| p.eps == eps)
    }
}

struct AdpAccumulator {
    n: f64,
    eps: Vec<f64>,
    best: Vec<(f64, Option<(usize, usize)>)>,
}

impl AdpAccumulator {
    fn new(n: f64, eps: &[f64]) -> Result<Self> {
        if let Some(e) = eps.iter().find(|e| !(**e > 0.0)) {
            return Err(PhiError::RejectedInput(format!("epsilon must be positive, got {e}")));
        }
        Ok(Self { n, eps: eps.to_vec(), best: vec![(0.0, None); eps.len()] })
    }

    fn push(&mut self, value: f64, lmin: f64, lmax: f64, dist: f64, q: usize, p: usize) {
        if value == 0.0 {
            return;
        }
        for (k, e) in self.eps.iter().enumerate() {
            let r = value / omega_raw(self.n, lmin, lmax, dist, *e);
            if r > self.best[k].0 {
                self.best[k] = (r, Some((q, p)));
            }
        }
    }

    fn finish(self, lattice: &TruncatedLattice, operator: &str) -> AdpProfile {
        let points: Vec<AdpPoint> = self
            .eps
            .iter()
            .zip(self.best)
            .map(|(e, (ratio, w))| AdpPoint { eps: *e, ratio, witness: w.map(|(q, p)| (lattice.cube(q), lattice.cube(p))) })
            .collect();
        let monotone = points.windows(2).all(|w| w[0].eps > w[1].eps || w[1].ratio >= w[0].ratio * (1.0 - 1e-12));
        AdpProfile { operator: operator.to_string(), lattice: lattice.spec(), samples: lattice.grid().samples(), points, monotone }
    }
}

/// `r(eps) = max_{P,Q} |A_{Q,P}| / omega_{P,Q}(eps)` for each `eps`.
pub fn adp_verdict(a: &OperatorMatrix, eps: &[f64]) -> Result<AdpProfile> {
    let lat = a.lattice();
    let g = *lat.grid();
    let mut acc = AdpAccumulator::new(g.dim() as f64, eps)?;
    match a.storage() {
        MatrixStorage::Zero => {}
        MatrixStorage::Diagonal(d) => {
            for (i, v) in d.iter().enumerate() {
                let l = lat.cube(i).side();
                acc.push(v.norm(), l, l, 0.0, i, i);
            }
        }
        MatrixStorage::Dense(_) => {
            for q in 0..lat.len() {
                for p in 0..lat.len() {
                    let v = a.entry(q, p).norm();
                    if v > 0.0 {
                        let geo = cube_geometry(&g, &lat.cube(p), &lat.cube(q));
                        acc.push(v, geo.min_side, geo.max_side, geo.distance, q, p);
                    }
                }
            }
        }
        MatrixStorage::Blocks(blocks) => {
            let dim = g.dim();
            for b in blocks {
                let c = b.per_axis;
                let step = g.side() / c as f64;
                let (lq, lp) = (2f64.powi(-b.nu_q), 2f64.powi(-b.nu_p));
                for (i, v) in b.values.iter().enumerate() {
                    let mut rem = i;
                    let mut k = vec![0i64; dim];
                    for a in (0..dim).rev() {
                        k[a] = (rem % c) as i64;
                        rem /= c;
                    }
                    let d2: f64 = k.iter().map(|&x| {
                        let x = if x >= c as i64 / 2 { x - c as i64 } else { x };
                        (x as f64 * step).powi(2)
                    }).sum();
                    // a realizing pair: the coarser cube at the origin
                    let (qi, pi) = if b.nu_q >= b.nu_p {
                        (lat.index(&DyadicCube::new(b.nu_q, k.clone())), lat.index(&DyadicCube::new(b.nu_p, vec![0; dim])))
                    } else {
                        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
                        (lat.index(&DyadicCube::new(b.nu_q, vec![0; dim])), lat.index(&DyadicCube::new(b.nu_p, neg)))
                    };
                    acc.push(v.norm(), lq.min(lp), lq.max(lp), d2.sqrt(), qi.unwrap_or(0), pi.unwrap_or(0));
                }
            }
        }
    }
    Ok(acc.finish(lat, a.operator_id()))
}

/// [`adp_verdict`] for operators whose matrix is too large to store: columns are streamed.
pub fn adp_verdict_streaming(t: &Operator, pair: &LittlewoodPaleyPair, lattice: &Arc<TruncatedLattice>, eps: &[f64]) -> Result<AdpProfile> {
    let g = *lattice.grid();
    let mut acc = AdpAccumulator::new(g.dim() as f64, eps)?;
    let cubes: Vec<DyadicCube> = lattice.iter().collect();
    for_each_column(t, pair, lattice, |p, col| {
        for (q, v) in col.iter().enumerate() {
            let v = v.norm();
            if v > 0.0 {
                let geo = cube_geometry(&g, &cubes[p], &cubes[q]);
                acc.push(v, geo.min_side, geo.max_side, geo.distance, q, p);
            }
        }
        Ok(())
    })?;
    Ok(acc.finish(lattice, t.name()))
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementTrace {
    pub eps: f64,
    pub coarse: f64,
    pub fine: f64,
    /// `fine / coarse - 1`.
    pub change: f64,
    pub stable: bool,
}

/// Compares `r(eps)` before and after one refinement step.
pub fn refinement_trace(coarse: &AdpProfile, fine: &AdpProfile, tolerance: f64) -> Vec<RefinementTrace> {
    coarse
        .points
        .iter()
        .filter_map(|c| {
            let f = fine.at(c.eps)?;
            let change = if c.ratio == 0.0 { if f.ratio == 0.0 { 0.0 } else { f64::INFINITY } } else { f.ratio / c.ratio - 1.0 };
            Some(RefinementTrace { eps: c.eps, coarse: c.ratio, fine: f.ratio, change, stable: change.abs() <= tolerance })
        })
        .collect()
}

/// Largest modulus `|A_{Q,P}|` over scale pairs with `|nu_Q - nu_P| >= 2`, from streamed columns.
pub fn far_scale_max(t: &Operator, pair: &LittlewoodPaleyPair, lattice: &Arc<TruncatedLattice>, columns: &[usize]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &p in columns {
        let spec = atom_spectrum(pair, Atom::Psi, &lattice.cube(p));
        let out = t.apply_spectrum(&spec)?;
        let col = analyze_spectrum(&out, pair, lattice, Atom::Phi);
        let np = lattice.scale_of(p);
        for nq in lattice.scales().filter(|nq| (nq - np).abs() >= 2) {
            worst = worst.max(col.at_scale(nq).iter().map(|v| v.norm()).fold(0.0, f64::max));
        }
    }
    Ok(worst)
}

/// Radial envelope of `|u|` around `center`: max per logarithmic bin of `1 + |x - center| / l`.
fn radial_envelope(u: &SampledField, center: &[f64], l: f64) -> Vec<(f64, f64)> {
    let g = *u.grid();
    const BINS_PER_OCTAVE: f64 = 4.0;
    let mut bins: std::collections::BTreeMap<i64, (f64, f64)> = std::collections::BTreeMap::new();
    for (i, v) in u.values().iter().enumerate() {
        let d = g.torus_distance(&g.point(i), center);
        let t = 1.0 + d / l;
        let key = (t.log2() * BINS_PER_OCTAVE).floor() as i64;
        let e = bins.entry(key).or_insert((d, 0.0));
        if v.norm() > e.1 {
            *e = (d, v.norm());
        }
    }
    bins.into_values().collect()
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Serialize)]
pub struct DecaySample {
    pub distance: f64,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma41Report {
    pub cube: DyadicCube,
    pub delta: f64,
    /// `max |T(psi_Q)(x)| / (l(Q) |Q|^{-1/2} (1 + |x - x_Q| / l(Q))^{-(n + delta)})`.
    pub constant_t_psi: f64,
    /// Same for `T^t(phi_Q)`.
    pub constant_tt_phi: f64,
    pub constant: f64,
    /// `|T(psi_Q)(x_Q)| / (l(Q) |Q|^{-1/2})`.
    pub near_field: f64,
    /// Log-log slope of the radial envelope over the far field.
    pub far_field_slope: f64,
    pub slope_limit: f64,
    /// Far-field window in units of `l(Q)`.
    pub far_field_window: (f64, f64),
    pub envelope: Vec<DecaySample>,
    pub warning: Option<String>,
    pub passed: bool,
}

/// Start of the far field in units of `l(Q)`.
pub const FAR_FIELD_START: f64 = 8.0;
/// Envelope values below this fraction of the peak are treated as round-off.
pub const ENVELOPE_FLOOR: f64 = 1e-13;

/// Pointwise decay of `T(psi_Q)` and `T^t(phi_Q)` away from `x_Q`.
pub fn lemma41_decay_check(t: &Operator, pair: &LittlewoodPaleyPair, cube: &DyadicCube, delta: f64) -> Result<Lemma41Report> {
    let g = *pair.grid();
    let n = g.dim() as f64;
    let l = cube.side();
    let xq = cube.corner();
    let amp = l * cube.volume().powf(-0.5);
    let u = t.apply(&atom(pair, Atom::Psi, cube))?;
    let v = t.transpose().apply(&atom(pair, Atom::Phi, cube))?;
    let bound_at = |d: f64| amp * (1.0 + d / l).powf(-(n + delta));
    let fit = |f: &SampledField| {
        f.values()
            .iter()
            .enumerate()
            .map(|(i, x)| x.norm() / bound_at(g.torus_distance(&g.point(i), &xq)))
            .fold(0.0, f64::max)
    };
    let (cu, cv) = (fit(&u), fit(&v));
    let constant = cu.max(cv);
    let origin = g.flat_wrapped(&xq.iter().map(|x| (x / g.dx()).round() as i64).collect::<Vec<_>>());
    let near_field = u.values()[origin].norm() / amp;

    let env_u = radial_envelope(&u, &xq, l);
    let env_v = radial_envelope(&v, &xq, l);
    let env: Vec<(f64, f64)> = env_u.iter().zip(&env_v).map(|(a, b)| (a.0, a.1 + b.1)).collect();
    let peak = env.iter().map(|e| e.1).fold(0.0, f64::max);
    let reach = g.side() / 2.0 / l;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut hi: f64 = FAR_FIELD_START;
    for &(d, val) in &env {
        let t = 1.0 + d / l;
        if d / l >= FAR_FIELD_START && d / l <= reach && val > ENVELOPE_FLOOR * peak {
            xs.push(t.ln());
            ys.push(val.ln());
            hi = hi.max(d / l);
        }
    }
    let far_field_slope = fit_slope(&xs, &ys);
    let slope_limit = -(n + delta);
    let envelope = env.iter().map(|&(d, val)| DecaySample { distance: d, value: val, bound: constant * bound_at(d) }).collect();
    let mut warning = None;
    let lo_edge = pair.edges().r0 * 2f64.powi(cube.scale) <= g.mode_spacing();
    let hi_edge = pair.edges().r3 * 2f64.powi(cube.scale) >= crate::lattice::NYQUIST_SAFETY * g.nyquist();
    if lo_edge || hi_edge {
        warning = Some(format!("scale {} touches the edge of the resolvable band", cube.scale));
    }
    if xs.len() < 3 {
        warning = Some(format!("only {} far-field bins above the round-off floor", xs.len()));
    }
    let passed = constant.is_finite() && xs.len() >= 3 && far_field_slope <= slope_limit;
    Ok(Lemma41Report {
        cube: cube.clone(),
        delta,
        constant_t_psi: cu,
        constant_tt_phi: cv,
        constant,
        near_field,
        far_field_slope,
        slope_limit,
        far_field_window: (FAR_FIELD_START, hi),
        envelope,
        warning,
        passed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma45Report {
    pub nu: i32,
    pub mu: i32,
    pub delta: f64,
    /// Measured size and regularity constant of `g`.
    pub c_g: f64,
    /// Measured size constant of `h`.
    pub c_h: f64,
    /// `max |g * h(x)| / (2^{-(mu - nu)(n/2 + delta/2)} (1 + 2^nu |x - x_1|)^{-(n + delta)})`.
    pub constant: f64,
    /// `constant / (c_g c_h)`.
    pub relative: f64,
    /// `|g * h(x_1)|`.
    pub peak: f64,
}

/// Decay of `g * h` for a `nu`-scale `g` and a `mu`-scale, mean-zero `h` centred at `x_1`.
pub fn lemma45_convolution_check(g: &SampledField, h: &SampledField, nu: i32, mu: i32, delta: f64, x1: &[f64]) -> Result<Lemma45Report> {
    if nu > mu {
        return Err(PhiError::Hypothesis(format!("need nu <= mu, got nu = {nu}, mu = {mu}")));
    }
    if !(delta > 0.0) {
        return Err(PhiError::Hypothesis(format!("need delta > 0, got {delta}")));
    }
    let grid = *g.grid();
    if *h.grid() != grid {
        return Err(PhiError::GridMismatch("g and h live on different grids".into()));
    }
    let n = grid.dim() as f64;
    let mass: f64 = h.values().iter().map(|v| v.norm()).sum::<f64>() * grid.cell_volume();
    let integral = h.integral().norm();
    if integral > 1e-10 * mass.max(f64::MIN_POSITIVE) {
        return Err(PhiError::Hypothesis(format!("h must have vanishing integral, got |int h| = {integral:e}")));
    }
    let s_nu = 2f64.powi(nu);
    let s_mu = 2f64.powi(mu);
    let origin = vec![0.0; grid.dim()];
    let env = |s: f64, d: f64| (1.0 + s * d).powf(-(n + delta));
    let mut c_g: f64 = 0.0;
    for (i, v) in g.values().iter().enumerate() {
        let d = grid.torus_distance(&grid.point(i), &origin);
        c_g = c_g.max(v.norm() / (s_nu.powf(n / 2.0) * env(s_nu, d)));
    }
    // regularity on axis offsets of 1, 2, 4, ... samples
    let mut step = 1i64;
    while (step as f64) * grid.dx() < grid.side() / 4.0 {
        for axis in 0..grid.dim() {
            let mut shift = vec![0i64; grid.dim()];
            shift[axis] = step;
            let moved = g.translate(&shift)?;
            let dist = step as f64 * grid.dx();
            for i in 0..grid.len() {
                let x = grid.point(i);
                let d = grid.torus_distance(&x, &origin);
                let sup = env(s_nu, (d - dist).max(0.0));
                let lhs = (g.values()[i] - moved.values()[i]).norm();
                c_g = c_g.max(lhs / (s_nu.powf(n / 2.0 + delta / 2.0) * dist.powf(delta / 2.0) * sup));
            }
        }
        step *= 2;
    }
    let mut c_h: f64 = 0.0;
    for (i, v) in h.values().iter().enumerate() {
        let d = grid.torus_distance(&grid.point(i), x1);
        c_h = c_h.max(v.norm() / (s_mu.powf(n / 2.0) * env(s_mu, d)));
    }
    let c = (2.0 * PI).powf(n / 2.0);
    let spec: Vec<Complex64> = g.spectrum().iter().zip(h.spectrum()).map(|(a, b)| a * b * c).collect();
    let conv = SampledField::from_spectrum(grid, spec)?;
    let decay = 2f64.powf(-((mu - nu) as f64) * (n / 2.0 + delta / 2.0));
    let mut constant: f64 = 0.0;
    for (i, v) in conv.values().iter().enumerate() {
        let d = grid.torus_distance(&grid.point(i), x1);
        constant = constant.max(v.norm() / (decay * env(s_nu, d)));
    }
    let at = grid.flat_wrapped(&x1.iter().map(|x| (x / grid.dx()).round() as i64).collect::<Vec<_>>());
    Ok(Lemma45Report { nu, mu, delta, c_g, c_h, constant, relative: constant / (c_g * c_h), peak: conv.values()[at].norm() })
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma51Report {
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub cubes: usize,
    /// `max_{P,Q} sum_R W_{P,R}(beta, gamma_1) W_{R,Q}(beta, gamma_2) / W_{P,Q}(beta, gamma_1 ^ gamma_2)`.
    pub max_ratio: f64,
    pub witness: (DyadicCube, DyadicCube),
    /// Smallest ratio over `P = Q`.
    pub min_diagonal_ratio: f64,
}

/// Product estimate for the weights `W` over every pair of a small lattice.
pub fn lemma51_product_check(beta: f64, gamma1: f64, gamma2: f64, lattice: &TruncatedLattice) -> Result<Lemma51Report> {
    for (name, v) in [("beta", beta), ("gamma_1", gamma1), ("gamma_2", gamma2)] {
        if !(v > 0.0) {
            return Err(PhiError::Hypothesis(format!("{name} > 0 fails ({name} = {v})")));
        }
    }
    if gamma1 == gamma2 {
        return Err(PhiError::Hypothesis(format!("gamma_1 != gamma_2 fails (both {gamma1})")));
    }
    if !(gamma1 + gamma2 > 2.0 * beta) {
        return Err(PhiError::Hypothesis(format!("gamma_1 + gamma_2 > 2 beta fails ({gamma1} + {gamma2} <= {})", 2.0 * beta)));
    }
    let g = *lattice.grid();
    let cubes: Vec<DyadicCube> = lattice.iter().collect();
    let len = cubes.len();
    let w = |a: usize, b: usize, gamma: f64| big_w(&g, &cubes[a], &cubes[b], beta, gamma).expect("validated parameters");
    let w1: Vec<f64> = (0..len * len).into_par_iter().map(|i| w(i / len, i % len, gamma1)).collect();
    let w2: Vec<f64> = (0..len * len).into_par_iter().map(|i| w(i / len, i % len, gamma2)).collect();
    let gmin = gamma1.min(gamma2);
    let rows: Vec<(f64, usize, f64)> = (0..len)
        .into_par_iter()
        .map(|p| {
            let mut best = (0.0, 0usize);
            let mut diag = f64::INFINITY;
            for q in 0..len {
                let s: f64 = (0..len).map(|r| w1[p * len + r] * w2[r * len + q]).sum();
                let ratio = s / w(p, q, gmin);
                if ratio > best.0 {
                    best = (ratio, q);
                }
                if p == q {
                    diag = ratio;
                }
            }
            (best.0, best.1, diag)
        })
        .collect();
    let (mut max_ratio, mut witness) = (0.0, (0, 0));
    let mut min_diag = f64::INFINITY;
    for (p, (r, q, d)) in rows.into_iter().enumerate() {
        if r > max_ratio {
            max_ratio = r;
            witness = (p, q);
        }
        min_diag = min_diag.min(d);
    }
    Ok(Lemma51Report {
        beta,
        gamma1,
        gamma2,
        cubes: len,
        max_ratio,
        witness: (cubes[witness.0].clone(), cubes[witness.1].clone()),
        min_diagonal_ratio: min_diag,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma52Report {
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub truncation: i32,
    /// `(lambda, sum, sum lambda^alpha)` samples.
    pub samples: Vec<(f64, f64, f64)>,
    /// `max_lambda sum lambda^alpha`.
    pub constant: f64,
}

/// `sum_{nu, mu in [-J, J]} 2^{-|nu - mu| eps} 2^{(mu ^ nu) alpha} (1 + (2^mu ^ 2^nu) lambda)^{-beta}`.
pub fn lemma52_sum(alpha: f64, beta: f64, eps: f64, lambda: f64, truncation: i32) -> f64 {
    let mut s = 0.0;
    for nu in -truncation..=truncation {
        for mu in -truncation..=truncation {
            let m = nu.min(mu);
            s += 2f64.powf(-((nu - mu).abs() as f64) * eps) * 2f64.powf(m as f64 * alpha) * (1.0 + 2f64.powi(m) * lambda).powf(-beta);
        }
    }
    s
}

pub fn lemma52_sum_check(alpha: f64, beta: f64, eps: f64, lambdas: &[f64], truncation: i32) -> Result<Lemma52Report> {
    if !(alpha > 0.0) {
        return Err(PhiError::Hypothesis(format!("alpha > 0 fails (alpha = {alpha})")));
    }
    if !(beta > alpha) {
        return Err(PhiError::Hypothesis(format!("beta > alpha fails ({beta} <= {alpha})")));
    }
    if !(eps > 0.0) {
        return Err(PhiError::Hypothesis(format!("epsilon > 0 fails (epsilon = {eps})")));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0)) {
        return Err(PhiError::Hypothesis(format!("lambda > 0 fails (lambda = {l})")));
    }
    let samples: Vec<(f64, f64, f64)> = lambdas
        .iter()
        .map(|&l| {
            let s = lemma52_sum(alpha, beta, eps, l, truncation);
            (l, s, s * l.powf(alpha))
        })
        .collect();
    let constant = samples.iter().map(|s| s.2).fold(0.0, f64::max);
    Ok(Lemma52Report { alpha, beta, eps, truncation, samples, constant })
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixApplyReport {
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
    pub input_norm: f64,
    pub output_norm: f64,
    pub ratio: f64,
    /// Index outside `-1 <= alpha <= 0`, `1 <= p, q < inf`.
    pub extrapolation: bool,
}

/// `||A s||_{f_p^{1+alpha, q}} / ||s||_{f_p^{alpha q}}`.
pub fn matrix_apply_bound(a: &OperatorMatrix, s: &CoefficientSequence, alpha: f64, p: f64, q: f64) -> Result<MatrixApplyReport> {
    let src = SpaceIndex::new(alpha, p, q)?;
    let extrapolation = !(-1.0..=0.0).contains(&alpha) || p.is_infinite() || q.is_infinite();
    let input_norm = sequence_norm(s, src)?;
    let output_norm = sequence_norm(&a.apply(s)?, src.shifted(1.0))?;
    let ratio = if input_norm > 0.0 { output_norm / input_norm } else { 0.0 };
    Ok(MatrixApplyReport { alpha, p, q, input_norm, output_norm, ratio, extrapolation })
}

/// Largest [`matrix_apply_bound`] ratio over seeded complex Gaussian sequences.
pub fn matrix_apply_batch(a: &OperatorMatrix, alpha: f64, p: f64, q: f64, seed: u64, count: usize) -> Result<MatrixApplyReport> {
    let mut worst: Option<MatrixApplyReport> = None;
    for i in 0..count as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + i);
        let vals = (0..a.lattice().len())
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect();
        let s = CoefficientSequence::from_values(a.lattice().clone(), vals)?;
        let r = matrix_apply_bound(a, &s, alpha, p, q)?;
        if worst.as_ref().is_none_or(|w| r.ratio > w.ratio) {
            worst = Some(r);
        }
    }
    worst.ok_or_else(|| PhiError::RejectedInput("empty batch".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp_frame::{build_lp_pair, ProfileEdges};
    use crate::transform::{synthesize, analyze};
    use crate::spaces::band_limited_field;

    #[test]
    fn omega_examples() {
        let g = GridSpec::new(2, 8.0, 32).unwrap();
        let q = DyadicCube::new(0, vec![0, 0]);
        assert_eq!(omega(&g, &q, &q, 1.0).unwrap(), 1.0);
        let h = DyadicCube::new(1, vec![3, 5]);
        assert!((omega(&g, &h, &h, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let p = DyadicCube::new(0, vec![3, 0]);
        assert!((omega(&g, &q, &p, 1.0).unwrap() - 1.0 / 64.0).abs() < 1e-15);
        assert!(omega(&g, &q, &p, 0.0).is_err());
    }

    #[test]
    fn big_w_examples() {
        let g = GridSpec::new(2, 8.0, 32).unwrap();
        let q = DyadicCube::new(0, vec![1, 1]);
        assert_eq!(big_w(&g, &q, &q, 1.0, 2.0).unwrap(), 1.0);
        let child = DyadicCube::new(1, vec![2, 2]);
        assert!((big_w(&g, &q, &child, 0.5, 1.0).unwrap() - 2f64.powf(-1.5)).abs() < 1e-15);
        assert!(big_w(&g, &q, &child, 0.0, 1.0).is_err());
        assert!(big_w(&g, &q, &child, 1.0, -1.0).is_err());
        let lat = TruncatedLattice::new_geometric(g, -1, 2).unwrap();
        for i in 0..100usize {
            let (a, b) = (lat.cube((i * 7919) % lat.len()), lat.cube((i * 104729 + 13) % lat.len()));
            let geo = cube_geometry(&g, &a, &b);
            let lhs = geo.min_side * big_w(&g, &a, &b, 0.7, 0.7).unwrap();
            assert!((lhs - omega(&g, &a, &b, 0.7).unwrap()).abs() <= 1e-15 * lhs);
        }
    }

    fn setup() -> (Arc<LittlewoodPaleyPair>, Arc<TruncatedLattice>) {
        let g = GridSpec::new(2, 16.0, 64).unwrap();
        let pair = Arc::new(build_lp_pair(g, ProfileEdges::DEFAULT).unwrap());
        let lat = Arc::new(TruncatedLattice::new(g, 0, 1).unwrap());
        (pair, lat)
    }

    #[test]
    fn blocks_match_streamed_columns() {
        let (pair, lat) = setup();
        let g = *pair.grid();
        let t = Operator::riesz_potential(g, 1.0);
        let blocks = build_matrix(&t, &pair, &lat).unwrap();
        assert!(matches!(blocks.storage(), MatrixStorage::Blocks(_)));
        // the same operator hidden behind a sum with a dense-only part forces streaming
        let dense = build_matrix(&t.plus(&Operator::zero(g)).unwrap(), &pair, &lat).unwrap();
        let mut worst: f64 = 0.0;
        for_each_column(&t, &pair, &lat, |p, col| {
            for (q, v) in col.iter().enumerate() {
                worst = worst.max((blocks.entry(q, p) - v).norm());
            }
            Ok(())
        })
        .unwrap();
        assert!(worst < 1e-13, "{worst}");
        let _ = dense;
    }

    #[test]
    fn block_apply_matches_dense_apply() {
        let (pair, lat) = setup();
        let g = *pair.grid();
        let t = Operator::multiplier_fn(g, "skew", |xi| Complex64::new(1.0 / (1.0 + xi[0] * xi[0] + xi[1] * xi[1]), xi[0] * 0.2)).unwrap();
        let a = build_matrix(&t, &pair, &lat).unwrap();
        let d = OperatorMatrix::dense(lat.clone(), a.to_dense().unwrap(), "d", "").unwrap();
        let vals = (0..lat.len()).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        let s = CoefficientSequence::from_values(lat.clone(), vals).unwrap();
        for transpose in [false, true] {
            let (x, y) = if transpose { (a.apply_transpose(&s).unwrap(), d.apply_transpose(&s).unwrap()) } else { (a.apply(&s).unwrap(), d.apply(&s).unwrap()) };
            let err = x.combine(Complex64::new(1.0, 0.0), &y, Complex64::new(-1.0, 0.0)).unwrap().max_abs();
            assert!(err < 1e-13, "transpose {transpose}: {err}");
        }
    }

    #[test]
    fn riesz_matrix_scale_covariance_and_band() {
        let g = GridSpec::new(2, 32.0, 128).unwrap();
        let pair = Arc::new(build_lp_pair(g, ProfileEdges::DEFAULT).unwrap());
        let lat = Arc::new(TruncatedLattice::admissible(g).unwrap());
        let t = Operator::riesz_potential(g, 1.0);
        let a = build_matrix(&t, &pair, &lat).unwrap();
        // direct frequency integral for the diagonal entry at scale nu
        let direct = |nu: i32| -> f64 {
            let radii = g.mode_radii();
            radii.iter().filter(|r| **r > 0.0).map(|&r| {
                let x = r * 2f64.powi(-nu);
                pair.edges().phi_hat(x) * pair.edges().psi_hat(x) / r
            }).sum::<f64>() * g.mode_volume() * frame_scale(2).powi(2) * 2f64.powi(-2 * nu)
        };
        let (lo, hi) = (lat.nu_min(), lat.nu_max());
        for nu in [lo, hi] {
            let i = lat.index(&DyadicCube::new(nu, vec![0, 0])).unwrap();
            assert!((a.entry(i, i).re - direct(nu)).abs() < 1e-12 * direct(nu));
        }
        if let MatrixStorage::Blocks(b) = a.storage() {
            assert!(b.iter().all(|b| (b.nu_q - b.nu_p).abs() <= 1));
        }
        let cols: Vec<usize> = (0..lat.len()).step_by(97).collect();
        assert_eq!(far_scale_max(&t, &pair, &lat, &cols).unwrap(), 0.0);
    }

    #[test]
    fn identity_and_zero_verdicts() {
        let (_, lat) = setup();
        let id = OperatorMatrix::identity(lat.clone());
        let v = adp_verdict(&id, &EPS_GRID).unwrap();
        for p in &v.points {
            assert!((p.ratio - 2f64.powi(lat.nu_max())).abs() < 1e-12);
        }
        let z = adp_verdict(&OperatorMatrix::zero(lat), &EPS_GRID).unwrap();
        assert!(z.points.iter().all(|p| p.ratio == 0.0));
    }

    #[test]
    fn identity_matrix_operator_reconstructs() {
        let (pair, lat) = setup();
        let g = *pair.grid();
        let op = Operator::matrix_operator(Arc::new(OperatorMatrix::identity(lat.clone())), pair.clone()).unwrap();
        let band = crate::spaces::covered_band(&pair, &lat);
        let f = band_limited_field(g, band, 3);
        let r = op.apply(&f).unwrap();
        let rel = r.sub(&f).unwrap().l2_norm() / f.l2_norm();
        assert!(rel <= 1e-8, "{rel} {band:?}");
        let s = analyze(&f, &pair, &lat).unwrap();
        assert!(synthesize(&s, &pair).unwrap().sub(&r).unwrap().max_abs() < 1e-13);
        let zero = Operator::matrix_operator(Arc::new(OperatorMatrix::zero(lat)), pair).unwrap();
        assert_eq!(zero.apply(&f).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn matrix_roundtrip_is_lossless() {
        let (pair, lat) = setup();
        let g = *pair.grid();
        let a = build_matrix(&Operator::riesz_potential(g, 1.0), &pair, &lat).unwrap();
        let mut buf = Vec::new();
        a.write_columnar(&mut buf).unwrap();
        let back = OperatorMatrix::read_columnar(lat.clone(), buf.as_slice()).unwrap();
        assert_eq!(back.to_dense().unwrap(), a.to_dense().unwrap());
        assert_eq!(back.pair_hash(), a.pair_hash());
        let other = Arc::new(TruncatedLattice::new(g, 1, 1).unwrap());
        assert!(OperatorMatrix::read_columnar(other, buf.as_slice()).is_err());
    }

    #[test]
    fn lemma51_hypotheses() {
        let g = GridSpec::new(2, 4.0, 16).unwrap();
        let lat = TruncatedLattice::new_geometric(g, -1, 0).unwrap();
        assert!(lemma51_product_check(2.0, 1.0, 1.0, &lat).is_err());
        assert!(lemma51_product_check(2.0, 1.0, 1.5, &lat).is_err());
        let single = TruncatedLattice::new_geometric(g, 0, 0).unwrap();
        let r = lemma51_product_check(1.0, 1.0, 2.0, &single).unwrap();
        assert!(r.min_diagonal_ratio >= 1.0);
    }

    #[test]
    fn lemma52_examples() {
        assert!(lemma52_sum_check(1.0, 0.5, 1.0, &[1.0], 8).is_err());
        assert!(lemma52_sum_check(1.0, 3.0, 0.0, &[1.0], 8).is_err());
        // single-term comparison at nu = mu = 0
        let l: f64 = 1e3;
        let term = (1.0 + l).powf(-3.0);
        assert!(term <= l.powf(-1.0));
        let s = lemma52_sum(1.0, 3.0, 0.5, l, 24);
        assert!(s >= term);
        let s2 = lemma52_sum(1.0, 3.0, 0.5, 2.0 * l, 24);
        assert!((s2 / s - 0.5).abs() < 0.1 * 0.5);
    }

    #[test]
    fn lemma45_rejects_non_zero_mean() {
        let g = GridSpec::new(2, 16.0, 64).unwrap();
        let bump = SampledField::from_fn_centered(g, |x| Complex64::new((-(x[0] * x[0] + x[1] * x[1])).exp(), 0.0)).unwrap();
        assert!(matches!(lemma45_convolution_check(&bump, &bump, 0, 0, 1.0, &[0.0, 0.0]), Err(PhiError::Hypothesis(_))));
        assert!(lemma45_convolution_check(&bump, &bump, 1, 0, 1.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn matrix_apply_single_column() {
        let (pair, lat) = setup();
        let g = *pair.grid();
        let a = build_matrix(&Operator::riesz_potential(g, 1.0), &pair, &lat).unwrap();
        let p = lat.len() / 3;
        let s = CoefficientSequence::unit(lat.clone(), p);
        let full = a.apply(&s).unwrap();
        let col = a.column(p);
        for (x, y) in full.values().iter().zip(&col) {
            assert!((x - y).norm() < 1e-12);
        }
        let z = matrix_apply_bound(&OperatorMatrix::zero(lat), &s, 0.0, 2.0, 2.0).unwrap();
        assert_eq!(z.ratio, 0.0);
    }
}
