//! Dyadic cubes `Q_{nu k}` on the torus and finite lattices of them.

use crate::error::{PhiError, Result};
use crate::field::{GridSpec, SampledField};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Fraction of Nyquist the finest annulus must stay below.
pub const NYQUIST_SAFETY: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub scale: i32,
    pub k: Vec<i64>,
}

impl DyadicCube {
    pub fn new(scale: i32, k: Vec<i64>) -> Self {
        Self { scale, k }
    }

    /// `l(Q) = 2^{-nu}`.
    pub fn side(&self) -> f64 {
        2f64.powi(-self.scale)
    }

    /// `|Q| = 2^{-nu n}`.
    pub fn volume(&self) -> f64 {
        self.side().powi(self.k.len() as i32)
    }

    /// `x_Q = 2^{-nu} k`.
    pub fn corner(&self) -> Vec<f64> {
        let s = self.side();
        self.k.iter().map(|&v| v as f64 * s).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CubeGeometry {
    pub min_side: f64,
    pub max_side: f64,
    pub distance: f64,
}

/// `(l(P) ^ l(Q), l(P) v l(Q), |x_P - x_Q|)` with the torus metric.
pub fn cube_geometry(grid: &GridSpec, p: &DyadicCube, q: &DyadicCube) -> CubeGeometry {
    let (a, b) = (p.side(), q.side());
    CubeGeometry { min_side: a.min(b), max_side: a.max(b), distance: grid.torus_distance(&p.corner(), &q.corner()) }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub nu_min: i32,
    pub nu_max: i32,
}

/// All cubes `Q_{nu k}` with `nu_min <= nu <= nu_max`, indexed scale by scale.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedLattice {
    grid: GridSpec,
    nu_min: i32,
    nu_max: i32,
    offsets: Vec<usize>,
}

fn is_power_of_two_real(x: f64) -> bool {
    x > 0.0 && x.log2().fract() == 0.0
}

impl TruncatedLattice {
    /// Lattice whose every annulus `(2^{nu-1}, 2^{nu+1})` lies strictly inside
    /// `(2 pi / L, 0.9 Nyquist)` and whose cubes are grid-aligned.
    pub fn new(grid: GridSpec, nu_min: i32, nu_max: i32) -> Result<Self> {
        let lat = Self::new_geometric(grid, nu_min, nu_max)?;
        for nu in nu_min..=nu_max {
            if 2f64.powi(nu - 1) <= grid.mode_spacing() {
                return Err(PhiError::InvalidLattice(format!("scale {nu}: annulus reaches the fundamental mode")));
            }
            if 2f64.powi(nu + 1) >= NYQUIST_SAFETY * grid.nyquist() {
                return Err(PhiError::InvalidLattice(format!("scale {nu}: annulus passes {NYQUIST_SAFETY} Nyquist")));
            }
        }
        Ok(lat)
    }

    /// Lattice with only the geometric requirements (grid-aligned cubes that
    /// tile the box); used where the lowest annuli must reach the fundamental.
    pub fn new_geometric(grid: GridSpec, nu_min: i32, nu_max: i32) -> Result<Self> {
        if nu_min > nu_max {
            return Err(PhiError::InvalidLattice(format!("empty scale range [{nu_min}, {nu_max}]")));
        }
        if !is_power_of_two_real(grid.side()) {
            return Err(PhiError::InvalidLattice(format!(
                "box side {} is not a power of two, dyadic cubes cannot tile it",
                grid.side()
            )));
        }
        if grid.side() * 2f64.powi(nu_min) < 1.0 {
            return Err(PhiError::InvalidLattice(format!("scale {nu_min}: cube larger than the box")));
        }
        if 2f64.powi(-nu_max) < grid.dx() {
            return Err(PhiError::InvalidLattice(format!("scale {nu_max}: cube smaller than one sample")));
        }
        let mut offsets = vec![0usize];
        for nu in nu_min..=nu_max {
            let per_axis = (grid.side() * 2f64.powi(nu)) as usize;
            let last = *offsets.last().unwrap_or(&0);
            offsets.push(last + per_axis.pow(grid.dim() as u32));
        }
        Ok(Self { grid, nu_min, nu_max, offsets })
    }

    /// Widest strict lattice for the grid.
    pub fn admissible(grid: GridSpec) -> Result<Self> {
        let lo = (2.0 * grid.mode_spacing()).log2().floor() as i32 + 1;
        let mut hi = lo;
        while 2f64.powi(hi + 2) < NYQUIST_SAFETY * grid.nyquist() && 2f64.powi(-(hi + 1)) >= grid.dx() {
            hi += 1;
        }
        Self::new(grid, lo, hi)
    }

    pub fn from_spec(grid: GridSpec, spec: LatticeSpec) -> Result<Self> {
        Self::new(grid, spec.nu_min, spec.nu_max)
    }

    pub fn spec(&self) -> LatticeSpec {
        LatticeSpec { nu_min: self.nu_min, nu_max: self.nu_max }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn nu_min(&self) -> i32 {
        self.nu_min
    }
    pub fn nu_max(&self) -> i32 {
        self.nu_max
    }
    pub fn scales(&self) -> std::ops::RangeInclusive<i32> {
        self.nu_min..=self.nu_max
    }
    pub fn scale_count(&self) -> usize {
        (self.nu_max - self.nu_min + 1) as usize
    }
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cubes per axis at scale `nu`: `L 2^nu`.
    pub fn per_axis(&self, nu: i32) -> usize {
        (self.grid.side() * 2f64.powi(nu)) as usize
    }

    pub fn count_at(&self, nu: i32) -> usize {
        self.per_axis(nu).pow(self.grid.dim() as u32)
    }

    /// Flat index range of the cubes at scale `nu`.
    pub fn range_at(&self, nu: i32) -> std::ops::Range<usize> {
        let i = (nu - self.nu_min) as usize;
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Samples per cube side at scale `nu`.
    pub fn stride(&self, nu: i32) -> usize {
        self.grid.samples() / self.per_axis(nu)
    }

    pub fn scale_of(&self, index: usize) -> i32 {
        let pos = self.offsets.partition_point(|&o| o <= index) - 1;
        self.nu_min + pos as i32
    }

    pub fn cube(&self, index: usize) -> DyadicCube {
        let nu = self.scale_of(index);
        let local = index - self.range_at(nu).start;
        DyadicCube::new(nu, self.local_k(nu, local))
    }

    /// Integer position of the `local`-th cube at scale `nu` (axis 0 slowest).
    pub fn local_k(&self, nu: i32, mut local: usize) -> Vec<i64> {
        let c = self.per_axis(nu);
        let mut k = vec![0i64; self.grid.dim()];
        for a in (0..self.grid.dim()).rev() {
            k[a] = (local % c) as i64;
            local /= c;
        }
        k
    }

    pub fn index(&self, cube: &DyadicCube) -> Option<usize> {
        if cube.scale < self.nu_min || cube.scale > self.nu_max || cube.k.len() != self.grid.dim() {
            return None;
        }
        let c = self.per_axis(cube.scale) as i64;
        let local = cube.k.iter().fold(0usize, |acc, &v| acc * c as usize + v.rem_euclid(c) as usize);
        Some(self.range_at(cube.scale).start + local)
    }

    /// Flat grid index of the corner of the `local`-th cube at scale `nu`.
    pub fn corner_sample(&self, nu: i32, local: usize) -> usize {
        let c = self.per_axis(nu);
        let st = self.stride(nu);
        let n = self.grid.samples();
        let mut rem = local;
        let mut flat = 0usize;
        let mut mul = 1usize;
        for _ in 0..self.grid.dim() {
            flat += (rem % c) * st * mul;
            rem /= c;
            mul *= n;
        }
        flat
    }

    pub fn iter(&self) -> impl Iterator<Item = DyadicCube> + '_ {
        (0..self.len()).map(move |i| self.cube(i))
    }

    /// Index of the cube at scale `nu` containing the grid sample `flat`.
    pub fn containing(&self, nu: i32, flat: usize) -> usize {
        let st = self.stride(nu);
        let c = self.per_axis(nu);
        let local = (0..self.grid.dim()).fold(0usize, |acc, a| acc * c + self.grid.coord(flat, a) / st);
        self.range_at(nu).start + local
    }

    /// Index of the parent (scale `nu - 1`) of a cube, if it is in the lattice.
    pub fn parent(&self, index: usize) -> Option<usize> {
        let q = self.cube(index);
        if q.scale == self.nu_min {
            return None;
        }
        let k = q.k.iter().map(|v| v.div_euclid(2)).collect();
        self.index(&DyadicCube::new(q.scale - 1, k))
    }

    /// Same scale range on another grid with the same box.
    pub fn on_grid(&self, grid: GridSpec) -> Result<Self> {
        Self::new(grid, self.nu_min, self.nu_max)
    }

    /// One refinement step: same box, twice the samples, one more fine scale.
    pub fn refined(&self) -> Result<Self> {
        let g = self.grid.with_samples(self.grid.samples() * 2)?;
        Self::new(g, self.nu_min, self.nu_max + 1)
    }
}

/// `f_Q = |Q|^{1/2} f_nu(x - x_Q)`, with `(f_Q)^(xi) = |Q|^{1/2} e^{-i x_Q . xi} f^(2^{-nu} xi)`.
pub fn localize(f: &SampledField, cube: &DyadicCube) -> Result<SampledField> {
    let g = *f.grid();
    if cube.k.len() != g.dim() {
        return Err(PhiError::RejectedInput("cube dimension differs from grid".into()));
    }
    let shift = cube_shift(&g, cube)?;
    let d = f.dilate(cube.scale)?;
    Ok(d.translate(&shift)?.scale(Complex64::new(cube.volume().sqrt(), 0.0)))
}

fn cube_shift(g: &GridSpec, cube: &DyadicCube) -> Result<Vec<i64>> {
    let steps = cube.side() / g.dx();
    if steps < 1.0 || steps.fract() != 0.0 {
        return Err(PhiError::ScaleOutOfRange { scale: cube.scale, reason: "cube corner off the sample lattice".into() });
    }
    Ok(cube.k.iter().map(|&k| k * steps as i64).collect())
}

/// `|Q|^{-1/2} chi_Q` sampled on the grid.
pub fn normalized_indicator(grid: GridSpec, cube: &DyadicCube) -> Result<SampledField> {
    let shift = cube_shift(&grid, cube)?;
    let steps = (cube.side() / grid.dx()) as i64;
    let n = grid.samples() as i64;
    let h = cube.volume().powf(-0.5);
    let values = (0..grid.len())
        .map(|i| {
            let inside = (0..grid.dim()).all(|a| (grid.coord(i, a) as i64 - shift[a]).rem_euclid(n) < steps);
            Complex64::new(if inside { h } else { 0.0 }, 0.0)
        })
        .collect();
    SampledField::from_values(grid, values)
}

/// Per-axis phase tables `e^{-i x_Q,a xi_m}` for cube corners, used to build atom spectra quickly.
pub fn corner_phases(grid: &GridSpec, cube: &DyadicCube) -> Vec<Vec<Complex64>> {
    let h = grid.mode_spacing();
    cube.k
        .iter()
        .map(|&k| {
            let x = k as f64 * cube.side();
            (0..grid.samples())
                .map(|i| {
                    let m = grid.signed(i) as f64;
                    let ph = -(h * m * x).rem_euclid(2.0 * PI);
                    Complex64::from_polar(1.0, ph)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_basics() {
        let q = DyadicCube::new(1, vec![3, 1]);
        assert_eq!(q.side(), 0.5);
        assert_eq!(q.volume(), 0.25);
        assert_eq!(q.corner(), vec![1.5, 0.5]);
    }

    #[test]
    fn geometry_examples() {
        let g = GridSpec::new(2, 16.0, 32).unwrap();
        let p = DyadicCube::new(0, vec![0, 0]);
        let q = DyadicCube::new(0, vec![3, 0]);
        assert_eq!(cube_geometry(&g, &p, &p), CubeGeometry { min_side: 1.0, max_side: 1.0, distance: 0.0 });
        assert_eq!(cube_geometry(&g, &p, &q), CubeGeometry { min_side: 1.0, max_side: 1.0, distance: 3.0 });
        assert_eq!(cube_geometry(&g, &p, &q), cube_geometry(&g, &q, &p));
        // wrap-around distance
        let r = DyadicCube::new(0, vec![15, 0]);
        assert_eq!(cube_geometry(&g, &p, &r).distance, 1.0);
    }

    #[test]
    fn default_lattice_shape() {
        let g = GridSpec::new(2, 64.0, 256).unwrap();
        let lat = TruncatedLattice::admissible(g).unwrap();
        assert_eq!((lat.nu_min(), lat.nu_max()), (-2, 2));
        let expected: usize = (-2..=2).map(|nu| (64.0 * 2f64.powi(nu)).powi(2) as usize).sum();
        assert_eq!(lat.len(), expected);
        assert_eq!(lat.len(), 87_296);
        let coarse = TruncatedLattice::admissible(g.with_samples(128).unwrap()).unwrap();
        assert_eq!((coarse.nu_min(), coarse.nu_max()), (-2, 1));
    }

    #[test]
    fn lattice_rejections() {
        let g = GridSpec::new(2, 2.0 * PI * 16.0, 256).unwrap();
        assert!(matches!(TruncatedLattice::new(g, 0, 1), Err(PhiError::InvalidLattice(_))));
        let g = GridSpec::new(2, 64.0, 256).unwrap();
        assert!(TruncatedLattice::new(g, -3, 1).is_err());
        assert!(TruncatedLattice::new(g, -2, 3).is_err());
        assert!(TruncatedLattice::new(g, 1, 0).is_err());
    }

    #[test]
    fn index_roundtrip_and_parents() {
        let g = GridSpec::new(2, 8.0, 64).unwrap();
        let lat = TruncatedLattice::new_geometric(g, 0, 2).unwrap();
        for i in 0..lat.len() {
            let q = lat.cube(i);
            assert_eq!(lat.index(&q), Some(i));
            if let Some(p) = lat.parent(i) {
                let pc = lat.cube(p);
                assert_eq!(pc.scale, q.scale - 1);
                for (a, b) in pc.k.iter().zip(&q.k) {
                    assert_eq!(*a, b / 2);
                }
            }
            let flat = lat.corner_sample(q.scale, i - lat.range_at(q.scale).start);
            let x = g.point(flat);
            assert_eq!(x, q.corner());
            assert_eq!(lat.containing(q.scale, flat), i);
        }
    }

    #[test]
    fn indicators_tile_the_box() {
        let g = GridSpec::new(2, 4.0, 16).unwrap();
        let lat = TruncatedLattice::new_geometric(g, 0, 2).unwrap();
        for nu in lat.scales() {
            let mut acc = SampledField::zeros(g);
            for i in lat.range_at(nu) {
                let q = lat.cube(i);
                let chi = normalized_indicator(g, &q).unwrap().scale(Complex64::new(q.volume().sqrt(), 0.0));
                acc = acc.add(&chi).unwrap();
            }
            assert!(acc.values().iter().all(|v| (v.re - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn indicator_examples() {
        let g = GridSpec::new(2, 4.0, 16).unwrap();
        let q = DyadicCube::new(1, vec![1, 2]);
        let chi = normalized_indicator(g, &q).unwrap();
        assert!((chi.l2_norm() - 1.0).abs() < 1e-10);
        assert!((chi.lp_norm(1.0).unwrap() - q.volume().sqrt()).abs() < 1e-12);
        let other = normalized_indicator(g, &DyadicCube::new(1, vec![2, 2])).unwrap();
        assert_eq!(chi.inner(&other).unwrap().norm(), 0.0);
        assert!(normalized_indicator(g, &DyadicCube::new(3, vec![0, 0])).is_err());
    }

    #[test]
    fn localize_examples() {
        let g = GridSpec::new(2, 128.0, 256).unwrap();
        let f = SampledField::from_fn_centered(g, |x| Complex64::new((-(x[0] * x[0] + x[1] * x[1]) / 18.0).exp(), 0.0)).unwrap();
        assert_eq!(localize(&f, &DyadicCube::new(0, vec![0, 0])).unwrap(), f);
        for q in [DyadicCube::new(1, vec![5, 7]), DyadicCube::new(-1, vec![3, 1]), DyadicCube::new(0, vec![-2, 9])] {
            let fq = localize(&f, &q).unwrap();
            assert!((fq.l2_norm() - f.l2_norm()).abs() < 1e-8 * f.l2_norm());
            let x = q.corner();
            let s = 2f64.powi(-q.scale);
            for i in (0..g.len()).step_by(391) {
                let xi = g.mode(i);
                let ph: f64 = xi.iter().zip(&x).map(|(a, b)| a * b).sum();
                // f^ is a Gaussian of the radius, sampled at 2^{-nu} xi
                let r2: f64 = xi.iter().map(|v| (v * s) * (v * s)).sum();
                let fhat = 9.0 * (-4.5 * r2).exp();
                let expected = Complex64::from_polar(q.volume().sqrt() * fhat, -ph);
                assert!((fq.spectrum()[i] - expected).norm() < 1e-8, "{q:?} mode {i}");
            }
        }
    }
}
