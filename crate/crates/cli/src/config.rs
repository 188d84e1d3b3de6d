use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use phikit::lattice::LatticeSpec;
use phikit::lp_frame::ProfileEdges;
use phikit::spaces::SpaceIndex;
use phikit::GridSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    LpCheck,
    Reconstruct,
    Norms,
    Adp,
    LemmaChecks,
    KernelSynth,
    T1,
    Paraproduct,
    Decomposition,
    Sharpness,
    Counterexample,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 11] = [
        Self::LpCheck,
        Self::Reconstruct,
        Self::Norms,
        Self::Adp,
        Self::LemmaChecks,
        Self::KernelSynth,
        Self::T1,
        Self::Paraproduct,
        Self::Decomposition,
        Self::Sharpness,
        Self::Counterexample,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LpCheck => "lp-check",
            Self::Reconstruct => "reconstruct",
            Self::Norms => "norms",
            Self::Adp => "adp",
            Self::LemmaChecks => "lemma-checks",
            Self::KernelSynth => "kernel-synth",
            Self::T1 => "t1",
            Self::Paraproduct => "paraproduct",
            Self::Decomposition => "decomposition",
            Self::Sharpness => "sharpness",
            Self::Counterexample => "counterexample",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.iter().copied().find(|e| e.as_str() == s).ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

/// `dim`-dimensional torus `[0, side)^dim` with `samples` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub side: f64,
    pub samples: usize,
}

impl GridConfig {
    pub const fn new(dim: usize, side: f64, samples: usize) -> Self {
        Self { dim, side, samples }
    }

    pub fn spec(&self, field: &str) -> Result<GridSpec, ConfigError> {
        GridSpec::new(self.dim, self.side, self.samples).map_err(|e| invalid(field, e.to_string()))
    }

    pub fn with_samples(&self, samples: usize) -> Self {
        Self { samples, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub edges: ProfileEdges,
    /// Second profile for the pair-dependence run.
    pub alternate: ProfileEdges,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self { edges: ProfileEdges::DEFAULT, alternate: ProfileEdges { r0: 0.52, r1: 0.58, r2: 1.7, r3: 1.95 } }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub partition: f64,
    pub lower_bound: f64,
    pub reconstruction: f64,
    pub pairing: f64,
    pub riesz_identity: f64,
    pub refinement: f64,
    pub lemma_drift: f64,
    pub kernel_match: f64,
    pub calibration: f64,
    pub zero_kernel: f64,
    pub diagonal: f64,
    pub paraproduct_one: f64,
    pub paraproduct_transpose_one: f64,
    pub vanishing: f64,
    pub t1_zero: f64,
    pub decomposition: f64,
    pub sharpness_slope: f64,
    pub growth_slope_min: f64,
    pub growth_slope_max: f64,
    pub contrast_slope: f64,
    pub oracle: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            partition: 1e-10,
            lower_bound: 0.5,
            reconstruction: 1e-8,
            pairing: 1e-8,
            riesz_identity: 1e-12,
            refinement: 0.05,
            lemma_drift: 0.10,
            kernel_match: 0.02,
            calibration: 0.05,
            zero_kernel: 1e-9,
            diagonal: 1e-12,
            paraproduct_one: 1e-6,
            paraproduct_transpose_one: 1e-9,
            vanishing: 1e-9,
            t1_zero: 1e-8,
            decomposition: 1e-8,
            sharpness_slope: 0.05,
            growth_slope_min: 0.4,
            growth_slope_max: 0.6,
            contrast_slope: 0.1,
            oracle: 1e-9,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 21] {
        [
            ("partition", self.partition),
            ("lower_bound", self.lower_bound),
            ("reconstruction", self.reconstruction),
            ("pairing", self.pairing),
            ("riesz_identity", self.riesz_identity),
            ("refinement", self.refinement),
            ("lemma_drift", self.lemma_drift),
            ("kernel_match", self.kernel_match),
            ("calibration", self.calibration),
            ("zero_kernel", self.zero_kernel),
            ("diagonal", self.diagonal),
            ("paraproduct_one", self.paraproduct_one),
            ("paraproduct_transpose_one", self.paraproduct_transpose_one),
            ("vanishing", self.vanishing),
            ("t1_zero", self.t1_zero),
            ("decomposition", self.decomposition),
            ("sharpness_slope", self.sharpness_slope),
            ("growth_slope_min", self.growth_slope_min),
            ("growth_slope_max", self.growth_slope_max),
            ("contrast_slope", self.contrast_slope),
            ("oracle", self.oracle),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    pub fields: usize,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self { fields: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormsConfig {
    pub fields: usize,
    /// Orders `(s, t)` for `I^s I^t = I^{s+t}`.
    pub compositions: Vec<(f64, f64)>,
    pub shifts: Vec<f64>,
    pub indices: Vec<SpaceIndex>,
    /// Samples per axis of the refined grid.
    pub refined_samples: usize,
}

impl Default for NormsConfig {
    fn default() -> Self {
        Self {
            fields: 8,
            compositions: vec![(1.0, 1.0), (0.5, -1.5), (-1.0, 0.25)],
            shifts: vec![-1.0, 0.5, 1.0],
            indices: vec![
                SpaceIndex { alpha: 0.0, p: 2.0, q: 2.0 },
                SpaceIndex { alpha: 0.5, p: 1.5, q: 2.0 },
                SpaceIndex { alpha: 0.0, p: 2.0, q: f64::INFINITY },
                SpaceIndex { alpha: 0.0, p: f64::INFINITY, q: 2.0 },
            ],
            refined_samples: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdpConfig {
    /// Box for the refinement pair; `samples` runs over `refinement_samples`.
    pub grid: GridConfig,
    pub refinement_samples: Vec<usize>,
    pub lattice: LatticeSpec,
    pub eps: Vec<f64>,
    /// The `epsilon` whose ratio must be refinement-stable.
    pub stable_eps: f64,
    pub decay_grid: GridConfig,
    pub delta: f64,
    /// Cube scales whose far-field slope is asserted.
    pub decay_scales: Vec<i32>,
    /// Cube scales reported without a verdict.
    pub decay_data_scales: Vec<i32>,
}

impl Default for AdpConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::new(2, 64.0, 128),
            refinement_samples: vec![128, 256],
            lattice: LatticeSpec { nu_min: -2, nu_max: 0 },
            eps: vec![0.25, 0.5, 1.0, 2.0],
            stable_eps: 1.0,
            decay_grid: GridConfig::new(2, 64.0, 2048),
            delta: 1.0,
            decay_scales: vec![4, 5],
            decay_data_scales: vec![3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaConfig {
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Box sides of the single-scale lattices whose constants must agree.
    pub sides: Vec<f64>,
    /// Further box sides reported without a verdict.
    pub data_sides: Vec<f64>,
    pub sum_alpha: f64,
    pub sum_beta: f64,
    pub sum_eps: f64,
    pub truncations: Vec<i32>,
    /// `lambda = 2^{k / 2}` for `k` in this range.
    pub lambda_half_octaves: (i32, i32),
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma1: 1.0,
            gamma2: 2.0,
            sides: vec![8.0, 16.0],
            data_sides: vec![32.0],
            sum_alpha: 1.0,
            sum_beta: 3.0,
            sum_eps: 0.5,
            truncations: vec![8, 12, 16],
            lambda_half_octaves: (-16, 16),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub grid: GridConfig,
    pub lattice: LatticeSpec,
    /// Radial window of the kernel comparison.
    pub window: (f64, f64),
    pub omega_grid: GridConfig,
    pub omega_lattice: LatticeSpec,
    pub omega_eps: f64,
    pub delta: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::new(2, 32.0, 2048),
            lattice: LatticeSpec { nu_min: -5, nu_max: 5 },
            window: (2.0, 8.0),
            omega_grid: GridConfig::new(2, 32.0, 512),
            omega_lattice: LatticeSpec { nu_min: -5, nu_max: 3 },
            omega_eps: 1.0,
            delta: 0.4,
        }
    }
}

/// Shared by the `t1`, `paraproduct` and `decomposition` experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct T1Config {
    pub grid: GridConfig,
    pub lattice: LatticeSpec,
    pub symbol_terms: usize,
    pub fields: usize,
    /// Lattice index of the cube `Q0` in `b = conj(phi_Q0)`.
    pub probe_cube: usize,
}

impl Default for T1Config {
    fn default() -> Self {
        Self { grid: GridConfig::new(2, 16.0, 64), lattice: LatticeSpec { nu_min: 0, nu_max: 1 }, symbol_terms: 6, fields: 20, probe_cube: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharpnessConfig {
    pub grid: GridConfig,
    pub lattice: LatticeSpec,
    /// Spatial period of the symbol `b0`.
    pub period: f64,
    pub symbol_terms: usize,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        Self { grid: GridConfig::new(2, 256.0, 512), lattice: LatticeSpec { nu_min: 0, nu_max: 1 }, period: 4.0, symbol_terms: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleConfig {
    pub grid: GridConfig,
    pub ns: Vec<usize>,
    /// Coarse grid for the boundedness ratios; refined once.
    pub ratio_grid: GridConfig,
    pub ratio_band: (f64, f64),
    pub ratio_fields: usize,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::new(1, 2.0 * PI * 16.0, 1 << 22),
            ns: vec![1, 2, 4, 8, 16],
            ratio_grid: GridConfig::new(1, 2.0 * PI * 16.0, 1 << 12),
            ratio_band: (0.5, 32.0),
            ratio_fields: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "all_experiments")]
    pub experiments: Vec<ExperimentId>,
    #[serde(default = "default_grid")]
    pub grid: GridConfig,
    #[serde(default)]
    pub pair: PairConfig,
    /// Lattice on the default grid; the widest admissible one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub reconstruct: ReconstructConfig,
    #[serde(default)]
    pub norms: NormsConfig,
    #[serde(default)]
    pub adp: AdpConfig,
    #[serde(default)]
    pub lemmas: LemmaConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub t1: T1Config,
    #[serde(default)]
    pub sharpness: SharpnessConfig,
    #[serde(default)]
    pub counterexample: CounterexampleConfig,
}

fn all_experiments() -> Vec<ExperimentId> {
    ExperimentId::ALL.to_vec()
}

fn default_grid() -> GridConfig {
    GridConfig::new(2, 64.0, 256)
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            experiments: all_experiments(),
            grid: default_grid(),
            pair: PairConfig::default(),
            lattice: None,
            tolerances: Tolerances::default(),
            reconstruct: ReconstructConfig::default(),
            norms: NormsConfig::default(),
            adp: AdpConfig::default(),
            lemmas: LemmaConfig::default(),
            kernel: KernelConfig::default(),
            t1: T1Config::default(),
            sharpness: SharpnessConfig::default(),
            counterexample: CounterexampleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `key=value` pairs separated by commas, applied to `[grid]`.
    pub fn apply_grid_overrides(&mut self, overrides: &str) -> Result<(), ConfigError> {
        for item in overrides.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item.split_once('=').ok_or_else(|| invalid("--grid-overrides", format!("expected key=value, got `{item}`")))?;
            let field = format!("grid.{}", key.trim());
            let bad = |e: &dyn fmt::Display| invalid(field.clone(), e.to_string());
            match key.trim() {
                "dim" => self.grid.dim = value.trim().parse().map_err(|e| bad(&e))?,
                "side" => self.grid.side = value.trim().parse().map_err(|e| bad(&e))?,
                "samples" => self.grid.samples = value.trim().parse().map_err(|e| bad(&e))?,
                other => return Err(invalid("--grid-overrides", format!("unknown grid key `{other}`"))),
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in self.tolerances.entries() {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("tolerances.{name}"), format!("must be positive, got {v}")));
            }
        }
        if self.tolerances.growth_slope_min >= self.tolerances.growth_slope_max {
            return Err(invalid("tolerances.growth_slope_min", "must lie below growth_slope_max"));
        }
        let grids = [
            ("grid", self.grid),
            ("adp.grid", self.adp.grid),
            ("adp.decay_grid", self.adp.decay_grid),
            ("kernel.grid", self.kernel.grid),
            ("kernel.omega_grid", self.kernel.omega_grid),
            ("t1.grid", self.t1.grid),
            ("sharpness.grid", self.sharpness.grid),
            ("counterexample.grid", self.counterexample.grid),
            ("counterexample.ratio_grid", self.counterexample.ratio_grid),
        ];
        for (name, g) in grids {
            g.spec(name)?;
        }
        for (name, e) in [("pair.edges", self.pair.edges), ("pair.alternate", self.pair.alternate)] {
            e.validate().map_err(|err| invalid(name, err.to_string()))?;
        }
        for (name, l) in [
            Some(("lattice", self.lattice)),
            Some(("adp.lattice", Some(self.adp.lattice))),
            Some(("kernel.lattice", Some(self.kernel.lattice))),
            Some(("kernel.omega_lattice", Some(self.kernel.omega_lattice))),
            Some(("t1.lattice", Some(self.t1.lattice))),
            Some(("sharpness.lattice", Some(self.sharpness.lattice))),
        ]
        .into_iter()
        .flatten()
        {
            if let Some(l) = l {
                if l.nu_min > l.nu_max {
                    return Err(invalid(name, format!("nu_min {} exceeds nu_max {}", l.nu_min, l.nu_max)));
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.experiments {
            if !seen.insert(*e) {
                return Err(invalid("experiments", format!("`{e}` listed twice")));
            }
        }
        if self.reconstruct.fields == 0 {
            return Err(invalid("reconstruct.fields", "must be at least 1"));
        }
        if self.norms.fields == 0 {
            return Err(invalid("norms.fields", "must be at least 1"));
        }
        for idx in &self.norms.indices {
            idx.validate().map_err(|e| invalid("norms.indices", e.to_string()))?;
        }
        if self.adp.refinement_samples.len() < 2 {
            return Err(invalid("adp.refinement_samples", "needs a coarse and a refined grid"));
        }
        if !self.adp.eps.contains(&self.adp.stable_eps) {
            return Err(invalid("adp.stable_eps", "must be one of adp.eps"));
        }
        if self.lemmas.sides.len() < 2 {
            return Err(invalid("lemmas.sides", "needs at least two lattices"));
        }
        if self.lemmas.truncations.len() < 2 {
            return Err(invalid("lemmas.truncations", "needs at least two truncations"));
        }
        if self.lemmas.lambda_half_octaves.0 > self.lemmas.lambda_half_octaves.1 {
            return Err(invalid("lemmas.lambda_half_octaves", "empty range"));
        }
        let w = self.kernel.window;
        if !(w.0 > 0.0 && w.0 < w.1) {
            return Err(invalid("kernel.window", format!("need 0 < lo < hi, got {w:?}")));
        }
        if !(self.kernel.delta > 0.0 && self.kernel.delta <= 1.0) {
            return Err(invalid("kernel.delta", "must lie in (0, 1]"));
        }
        if !(self.kernel.omega_eps > 0.0) {
            return Err(invalid("kernel.omega_eps", "must be positive"));
        }
        if self.t1.fields == 0 {
            return Err(invalid("t1.fields", "must be at least 1"));
        }
        if !(self.sharpness.period > 0.0) {
            return Err(invalid("sharpness.period", "must be positive"));
        }
        if self.counterexample.ns.is_empty() {
            return Err(invalid("counterexample.ns", "must not be empty"));
        }
        let b = self.counterexample.ratio_band;
        if !(b.0 > 0.0 && b.0 < b.1) {
            return Err(invalid("counterexample.ratio_band", format!("need 0 < lo < hi, got {b:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[grid]\ndim = 2\nside = 64.0\nsamples = 256\nwidth = 3\n").unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
        let err = RunConfig::from_toml("experiments = [\"lp-check\", \"plots\"]").unwrap_err();
        assert!(err.to_string().contains("plots"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = RunConfig::from_toml("[tolerances]\npartition = -1.0\n").unwrap_err();
        assert!(err.to_string().starts_with("tolerances.partition"), "{err}");
        let err = RunConfig::from_toml("[grid]\ndim = 2\nside = 64.0\nsamples = 100\n").unwrap_err();
        assert!(err.to_string().starts_with("grid:"), "{err}");
        let err = RunConfig::from_toml("experiments = [\"t1\", \"t1\"]").unwrap_err();
        assert!(err.to_string().starts_with("experiments"), "{err}");
    }

    #[test]
    fn grid_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_grid_overrides("side=32, samples=128").unwrap();
        assert_eq!(cfg.grid, GridConfig::new(2, 32.0, 128));
        assert!(cfg.apply_grid_overrides("samples=100").is_err());
        assert!(cfg.apply_grid_overrides("depth=1").is_err());
    }
}
