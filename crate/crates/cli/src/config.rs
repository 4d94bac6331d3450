//! Experiment configuration: the versioned JSON schema, defaults, cross-field
//! validation and the canonical hash.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use fracshe_core::clt::truncation_limit;
use fracshe_core::inequalities::{GronwallPlan, MalliavinPlan};
use fracshe_core::noise::{Family, ModelSpec};
use fracshe_core::solver::{SigmaSpec, SolverConfig};
use fracshe_core::{CovarianceModel, GridSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// Tolerances a config may override, with their defaults.
pub const TOLERANCE_KEYS: [(&str, f64); 4] = [
    ("variance_slope", fracshe_core::clt::VARIANCE_SLOPE_TOLERANCE),
    ("limit_covariance", fracshe_core::clt::LIMIT_COVARIANCE_TOLERANCE),
    ("tightness_spread", fracshe_core::clt::TIGHTNESS_SPREAD),
    ("sampler_z", fracshe_core::noise::SAMPLER_Z_LIMIT),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Kernel,
    NoiseValidate,
    Simulate,
    Constants,
    Clt,
    Fclt,
    Tightness,
    Inequalities,
    All,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Kernel => "kernel",
            Kind::NoiseValidate => "noise-validate",
            Kind::Simulate => "simulate",
            Kind::Constants => "constants",
            Kind::Clt => "clt",
            Kind::Fclt => "fclt",
            Kind::Tightness => "tightness",
            Kind::Inequalities => "inequalities",
            Kind::All => "all",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dim: usize,
    pub half_length: f64,
    pub points_per_axis: usize,
}

impl GridBlock {
    pub fn spec(&self) -> Result<GridSpec, String> {
        GridSpec::new(self.dim, self.half_length, self.points_per_axis).map_err(|e| e.to_string())
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub alpha: f64,
    pub dt: f64,
    pub horizon: f64,
    pub sigma: SigmaSpec,
    #[serde(default = "one")]
    pub noise_substeps: usize,
    #[serde(default)]
    pub embed_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelBlock {
    pub dims: Vec<usize>,
    pub alphas: Vec<f64>,
    pub times: Vec<f64>,
}

impl Default for KernelBlock {
    fn default() -> Self {
        Self {
            dims: vec![1, 2],
            alphas: vec![0.8, 1.0, 1.5, 2.0],
            times: vec![0.1, 1.0, 10.0],
        }
    }
}

fn default_models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::WhiteNoise,
        ModelSpec::RieszKernel { beta: 0.5, mu: vec![] },
        ModelSpec::IntegrableDensity {
            family: Family::Gaussian,
            length: 1.0,
            r_exponent: None,
        },
    ]
}

/// Sampler battery: one-dimensional models on their own grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseBlock {
    pub grid: GridBlock,
    pub alpha: f64,
    pub models: Vec<ModelSpec>,
    pub draws: usize,
}

impl Default for NoiseBlock {
    fn default() -> Self {
        Self {
            grid: GridBlock {
                dim: 1,
                half_length: 32.0,
                points_per_axis: 512,
            },
            alpha: 1.5,
            models: default_models(),
            draws: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsBlock {
    /// `(d, β)` pairs for `k_β`.
    pub k_beta: Vec<(usize, f64)>,
}

impl Default for ConstantsBlock {
    fn default() -> Self {
        Self {
            k_beta: vec![(1, 0.5), (1, 1.0), (2, 1.0), (2, 2.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvolutionBlock {
    pub grid: GridBlock,
    pub models: Vec<ModelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingBlock {
    pub grid: GridBlock,
    pub beta: f64,
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalliavinBlock {
    pub grid: GridBlock,
    pub solver: SolverBlock,
    pub plan: MalliavinPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InequalityBlock {
    pub alpha: f64,
    pub convolution: ConvolutionBlock,
    pub smoothing: SmoothingBlock,
    pub gronwall: GronwallPlan,
    pub gamma_terms: usize,
    pub malliavin: MalliavinBlock,
}

impl Default for ConvolutionBlock {
    fn default() -> Self {
        Self {
            grid: GridBlock {
                dim: 1,
                half_length: 16.0,
                points_per_axis: 1024,
            },
            models: vec![
                ModelSpec::WhiteNoise,
                ModelSpec::RieszKernel { beta: 0.5, mu: vec![] },
                ModelSpec::IntegrableDensity {
                    family: Family::Gaussian,
                    length: 1.0,
                    r_exponent: Some(2.0),
                },
            ],
        }
    }
}

impl Default for SmoothingBlock {
    fn default() -> Self {
        Self {
            grid: GridBlock {
                dim: 2,
                half_length: 16.0,
                points_per_axis: 512,
            },
            beta: 0.5,
            times: vec![0.1, 0.3, 1.0, 3.0, 10.0],
            radii: vec![0.5, 1.0, 2.0, 4.0],
        }
    }
}

impl Default for InequalityBlock {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            convolution: ConvolutionBlock::default(),
            smoothing: SmoothingBlock::default(),
            gronwall: GronwallPlan {
                half_length: 8.0,
                points: 1024,
                horizon: 1.0,
                time_steps: 64,
                iterations: 25,
                t_min: 0.1,
            },
            gamma_terms: 40,
            malliavin: MalliavinBlock {
                grid: GridBlock {
                    dim: 1,
                    half_length: 8.0,
                    points_per_axis: 512,
                },
                solver: SolverBlock {
                    alpha: 1.5,
                    dt: 1.0 / 320.0,
                    horizon: 0.5,
                    sigma: SigmaSpec::Sine { c: 0.5, d: 0.3 },
                    noise_substeps: 1,
                    embed_points: None,
                },
                plan: MalliavinPlan {
                    r: 0.1,
                    lags: [0.05, 0.1, 0.2, 0.4],
                    offsets: [0.0, 0.25, 0.5, 1.0, 2.0],
                    replicas: 2000,
                    seed: 5,
                },
            },
        }
    }
}

/// Coupled reruns of the main ensemble at half the time step and on a torus
/// of twice the size (white noise only, where the noise can be embedded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineeringBlock {
    pub replicas: u64,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub kind: Option<Kind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub grid: Option<GridBlock>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub solver: Option<SolverBlock>,
    /// Radii for distances, covariances and the path CLT.
    #[serde(default)]
    pub radii: Vec<f64>,
    /// Radii for the variance fit; defaults to `radii`.
    #[serde(default)]
    pub variance_radii: Option<Vec<f64>>,
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    /// Replicas written out as raw snapshots by `simulate`.
    #[serde(default = "default_snapshots")]
    pub snapshots: u64,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub kernel: KernelBlock,
    #[serde(default)]
    pub noise: NoiseBlock,
    #[serde(default)]
    pub constants: ConstantsBlock,
    #[serde(default)]
    pub inequalities: InequalityBlock,
    #[serde(default)]
    pub engineering: Option<EngineeringBlock>,
}

fn default_replicas() -> u64 {
    10_000
}

fn default_snapshots() -> u64 {
    2
}

/// Every problem found while loading a config.
#[derive(Debug, Clone, PartialEq)]
pub struct Violations(pub Vec<String>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} config violation(s):", self.0.len())?;
        for v in &self.0 {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Violations {}

/// The simulation pieces of a validated config.
pub struct Regime {
    pub grid: GridSpec,
    pub model: CovarianceModel,
    pub solver: SolverConfig,
}

impl ExperimentConfig {
    pub fn kind(&self) -> Kind {
        self.kind.unwrap_or(Kind::All)
    }

    pub fn variance_radii(&self) -> &[f64] {
        self.variance_radii.as_deref().unwrap_or(&self.radii)
    }

    pub fn tolerance(&self, key: &str) -> f64 {
        self.tolerances.get(key).copied().unwrap_or_else(|| {
            TOLERANCE_KEYS
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .expect("tolerance keys are fixed")
        })
    }

    /// Builds grid, model and solver when all three blocks are present.
    pub fn regime(&self) -> Option<Result<Regime, Vec<String>>> {
        let (g, m, s) = (self.grid.as_ref()?, self.model.as_ref()?, self.solver.as_ref()?);
        Some(build_regime(g, m, s))
    }

    /// Whether the simulation blocks are needed by this kind.
    fn needs_regime(&self) -> bool {
        matches!(self.kind(), Kind::Simulate | Kind::Clt | Kind::Fclt | Kind::Tightness)
    }

    /// Canonical hash: SHA-256 over sorted-key compact JSON of the normalized
    /// config, leaving out where outputs go and how many threads run.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.workers = None;
        let value = serde_json::to_value(&c).expect("config serializes");
        let text = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Fills defaults that depend on other fields.
    fn normalize(&mut self) {
        if self.times.is_empty() {
            if let Some(s) = &self.solver {
                self.times = vec![s.horizon];
            }
        }
        if self.variance_radii.is_none() && !self.radii.is_empty() {
            self.variance_radii = Some(self.radii.clone());
        }
    }

    /// All rule violations of a parsed config.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            v.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.workers == Some(0) {
            v.push("workers must be at least 1".into());
        }
        for (k, x) in &self.tolerances {
            if !TOLERANCE_KEYS.iter().any(|(key, _)| key == k) {
                let known: Vec<&str> = TOLERANCE_KEYS.iter().map(|(k, _)| *k).collect();
                v.push(format!("unknown tolerance override '{k}' (known: {})", known.join(", ")));
            } else if !(*x > 0.0 && x.is_finite()) {
                v.push(format!("tolerance override '{k}' must be positive, got {x}"));
            }
        }
        let needs = self.needs_regime();
        if needs {
            for (name, present) in [
                ("grid", self.grid.is_some()),
                ("model", self.model.is_some()),
                ("solver", self.solver.is_some()),
            ] {
                if !present {
                    v.push(format!("kind '{}' requires a {name} block", self.kind()));
                }
            }
        }
        let partial = [self.grid.is_some(), self.model.is_some(), self.solver.is_some()];
        if !needs && partial.iter().any(|&p| p) && !partial.iter().all(|&p| p) {
            v.push("grid, model and solver blocks must be given together".into());
        }
        if let Some(regime) = self.regime() {
            match regime {
                Err(errs) => v.extend(errs),
                Ok(r) => v.extend(self.ensemble_violations(&r)),
            }
        }
        v.extend(self.kernel_violations());
        v.extend(self.noise_violations());
        v.extend(self.inequality_violations());
        for &(d, beta) in &self.constants.k_beta {
            if !(d == 1 || d == 2) || !(beta > 0.0 && beta <= d as f64) {
                v.push(format!("k_beta pair (d = {d}, beta = {beta}) needs d ∈ {{1, 2}} and 0 < beta ≤ d"));
            }
        }
        v
    }

    fn ensemble_violations(&self, r: &Regime) -> Vec<String> {
        let mut v = Vec::new();
        let kind = self.kind();
        let ensemble = matches!(kind, Kind::Clt | Kind::Fclt | Kind::All | Kind::Constants);
        if ensemble && self.radii.is_empty() && kind != Kind::Constants {
            v.push(format!("kind '{kind}' requires at least one radius"));
        }
        if kind == Kind::Fclt && self.times.len() < 2 {
            v.push("the path CLT needs at least two times".into());
        }
        if self.replicas < 2 {
            v.push(format!("replicas must be at least 2, got {}", self.replicas));
        }
        let limit = truncation_limit(&r.grid, r.solver.alpha, r.solver.horizon);
        let mut radii: Vec<f64> = self.radii.clone();
        radii.extend_from_slice(self.variance_radii());
        if let Some(e) = &self.engineering {
            radii.extend_from_slice(&e.radii);
        }
        for &x in &radii {
            if !(x > 0.0) {
                v.push(format!("radius {x} must be positive"));
            } else if x > limit {
                v.push(format!(
                    "truncation rule: radius {x} exceeds L − 4T^(1/alpha) = {limit:.3}"
                ));
            }
        }
        for w in self.times.windows(2) {
            if w[1] <= w[0] {
                v.push("times must increase".into());
                break;
            }
        }
        for &t in &self.times {
            if !(t > 0.0) || t > r.solver.horizon + 1e-12 {
                v.push(format!("time {t} must lie in (0, horizon = {}]", r.solver.horizon));
            } else if let Err(e) = r.solver.steps_to(t) {
                v.push(format!("dt rule: {e}"));
            }
        }
        if let Some(e) = &self.engineering {
            if !matches!(r.model.spec(), ModelSpec::WhiteNoise) {
                v.push("engineering checks need white noise (the torus coupling embeds the noise)".into());
            }
            if e.replicas < 2 || e.radii.is_empty() {
                v.push("engineering block needs replicas ≥ 2 and at least one radius".into());
            }
        }
        v
    }

    fn kernel_violations(&self) -> Vec<String> {
        let k = &self.kernel;
        let mut v = Vec::new();
        if k.dims.iter().any(|d| !(1..=2).contains(d)) {
            v.push("kernel dims must be 1 or 2".into());
        }
        if k.alphas.iter().any(|a| !(*a > 0.0 && *a <= 2.0)) {
            v.push("kernel alphas must lie in (0, 2]".into());
        }
        if k.times.iter().any(|t| !(*t > 0.0)) {
            v.push("kernel times must be positive".into());
        }
        v
    }

    fn noise_violations(&self) -> Vec<String> {
        let n = &self.noise;
        let mut v = Vec::new();
        if n.grid.dim != 1 {
            v.push("the sampler battery runs in d = 1".into());
        }
        if let Err(e) = n.grid.spec() {
            v.push(format!("noise grid: {e}"));
        }
        if n.draws < 2 {
            v.push("noise draws must be at least 2".into());
        }
        for m in &n.models {
            for e in m.violations(1, n.alpha) {
                v.push(format!("noise model {}: {e}", model_label(m)));
            }
        }
        v
    }

    fn inequality_violations(&self) -> Vec<String> {
        let q = &self.inequalities;
        let mut v = Vec::new();
        for m in &q.convolution.models {
            for e in m.violations(1, q.alpha) {
                v.push(format!("convolution model {}: {e}", model_label(m)));
            }
        }
        if q.convolution.grid.dim != 1 {
            v.push("the convolution battery runs in d = 1".into());
        }
        if q.smoothing.grid.dim != 2 {
            v.push("the smoothing battery runs in d = 2".into());
        }
        if !(q.smoothing.beta > 0.0 && q.smoothing.beta < q.alpha.min(2.0)) {
            v.push(format!(
                "smoothing needs 0 < beta < alpha ∧ d, got beta = {}",
                q.smoothing.beta
            ));
        }
        let m = &q.malliavin;
        let model = ModelSpec::WhiteNoise;
        if let Err(errs) = build_regime(&m.grid, &model, &m.solver) {
            v.extend(errs.into_iter().map(|e| format!("malliavin: {e}")));
        }
        v
    }
}

pub fn model_label(m: &ModelSpec) -> String {
    match m {
        ModelSpec::WhiteNoise => "white_noise".into(),
        ModelSpec::RieszKernel { beta, .. } => format!("riesz(beta={beta})"),
        ModelSpec::IntegrableDensity { family, length, .. } => format!("{family:?}(length={length})").to_lowercase(),
    }
}

pub fn build_regime(g: &GridBlock, m: &ModelSpec, s: &SolverBlock) -> Result<Regime, Vec<String>> {
    let mut v = Vec::new();
    let grid = g.spec().map_err(|e| vec![format!("grid: {e}")])?;
    v.extend(m.violations(grid.dim(), s.alpha));
    if !v.is_empty() {
        return Err(v);
    }
    let model = CovarianceModel::new(grid.dim(), s.alpha, m.clone()).map_err(|e| vec![format!("model: {e}")])?;
    let mut solver = SolverConfig::new(s.alpha, s.dt, s.horizon, grid, s.sigma, model.clone());
    solver.noise_substeps = s.noise_substeps;
    solver.embed_points = s.embed_points;
    v.extend(solver.violations());
    if let Some(e) = s.embed_points {
        if !matches!(m, ModelSpec::WhiteNoise) || e <= grid.points_per_axis() {
            v.push("embed_points needs white noise and more nodes than the grid".into());
        }
    }
    if v.is_empty() {
        Ok(Regime { grid, model, solver })
    } else {
        Err(v)
    }
}

/// Parses, normalizes and validates a config; `kind` (from the subcommand)
/// fills in or must agree with the config's own kind.
pub fn load_and_validate(path: &Path, kind: Option<Kind>) -> Result<ExperimentConfig, Violations> {
    let text = std::fs::read_to_string(path).map_err(|e| Violations(vec![format!("cannot read {}: {e}", path.display())]))?;
    parse_and_validate(&text, kind)
}

pub fn parse_and_validate(text: &str, kind: Option<Kind>) -> Result<ExperimentConfig, Violations> {
    let mut cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| Violations(vec![format!("schema: {e}")]))?;
    let mut v = Vec::new();
    match (cfg.kind, kind) {
        (Some(a), Some(b)) if a != b => v.push(format!("config kind '{a}' does not match the subcommand '{b}'")),
        (None, Some(b)) => cfg.kind = Some(b),
        (None, None) => cfg.kind = Some(Kind::All),
        _ => {}
    }
    cfg.normalize();
    v.extend(cfg.violations());
    if v.is_empty() {
        for (k, x) in &cfg.tolerances {
            log::warn!("tolerance override in effect: {k} = {x}");
        }
        Ok(cfg)
    } else {
        Err(Violations(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"schema_version": 1, "kind": "kernel"}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_and_validate(MINIMAL, None).unwrap();
        assert_eq!(c.kernel, KernelBlock::default());
        assert_eq!(c.replicas, 10_000);
        assert_eq!(c.tolerance("variance_slope"), 0.15);
    }

    #[test]
    fn hash_ignores_whitespace_and_key_order() {
        let a = parse_and_validate(MINIMAL, None).unwrap();
        let b = parse_and_validate("{\n  \"kind\" : \"kernel\",\n\t\"schema_version\":1 }", None).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse_and_validate(r#"{"schema_version": 1, "kind": "kernel", "seed": 2}"#, None).unwrap();
        assert_ne!(a.hash(), c.hash());
        let d = parse_and_validate(r#"{"schema_version": 1, "kind": "kernel", "workers": 3}"#, None).unwrap();
        assert_eq!(a.hash(), d.hash());
    }

    #[test]
    fn all_violations_are_reported() {
        let text = r#"{
            "schema_version": 2,
            "kind": "clt",
            "grid": {"dim": 2, "half_length": 10, "points_per_axis": 64},
            "model": {"variant": "white_noise"},
            "solver": {"alpha": 1.5, "dt": 0.01, "horizon": 0.5, "sigma": {"kind": "linear", "a": 1, "b": 0}},
            "tolerances": {"nonsense": 1}
        }"#;
        let err = parse_and_validate(text, None).unwrap_err();
        let all = err.0.join("\n");
        assert!(all.contains("schema_version 2"), "{all}");
        assert!(all.contains("case (ii) requires d = 1"), "{all}");
        assert!(all.contains("unknown tolerance override"), "{all}");
    }

    #[test]
    fn subcommand_must_match() {
        let err = parse_and_validate(MINIMAL, Some(Kind::Clt)).unwrap_err();
        assert!(err.0[0].contains("does not match"));
        assert_eq!(parse_and_validate(MINIMAL, Some(Kind::Kernel)).unwrap().kind(), Kind::Kernel);
    }

    #[test]
    fn unknown_fields_are_schema_errors() {
        let err = parse_and_validate(r#"{"schema_version": 1, "colour": 3}"#, None).unwrap_err();
        assert!(err.0[0].starts_with("schema:"));
    }
}
