//! Run configuration: parsing, defaults and fail-fast validation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use degensolve_core::barriers::{BarrierSearch, ConcaveProfile, PowerLaw};
use degensolve_core::conditions::{ConditionName, SampleLattice};
use degensolve_core::oracle::SharpnessExample;
use degensolve_core::solver::SolverConfig;
use degensolve_core::{make_builtin_family, BoundaryData, BuiltinFamily, StructuredGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    CheckConditions,
    Oracle,
    Barrier,
    Convergence,
    Report,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::CheckConditions => "check-conditions",
            Self::Oracle => "oracle",
            Self::Barrier => "barrier",
            Self::Convergence => "convergence",
            Self::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub family: Option<FamilySpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub dirichlet: Option<DirichletSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub checks: ChecksSpec,
    #[serde(default)]
    pub conditions: Option<ConditionsSpec>,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    #[serde(default)]
    pub barrier: Option<BarrierSpec>,
    #[serde(default)]
    pub convergence: Option<ConvergenceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
    #[serde(default)]
    pub zero_order_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lows: Vec<f64>,
    pub highs: Vec<f64>,
    pub counts: Vec<usize>,
}

/// `amplitude · sin(π k·x + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub amplitude: f64,
    pub wavenumbers: Vec<f64>,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DirichletSpec {
    Constant {
        value: f64,
    },
    Linear {
        coeffs: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    Trig {
        terms: Vec<TrigTerm>,
    },
    /// Boundary values of the sharpness example (family must be `sharpness`).
    Oracle,
    /// Seeded random trig sum.
    RandomSmooth {
        #[serde(default = "default_modes")]
        modes: usize,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
}

fn default_modes() -> usize {
    3
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSpec {
    pub maximum_principle: bool,
    pub m_matrix: bool,
    pub regularity: Option<RegularitySpec>,
    pub comparison: Option<ComparisonSpec>,
    pub boundary_modulus: Option<BoundaryModulusConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularitySpec {
    pub shrink: f64,
}

/// Compares the solution for `φ` with the one for `φ − shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryModulusConfig {
    pub x0: Vec<f64>,
    pub sigma: f64,
    #[serde(default = "one")]
    pub kappa0: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsSpec {
    pub flags: Vec<ConditionName>,
    /// Defaults to the grid box.
    #[serde(default)]
    pub region: Option<GridBox>,
    pub z_range: [f64; 2],
    #[serde(default = "default_lattice")]
    pub lattice: SampleLattice,
    #[serde(default)]
    pub bounds: BTreeMap<ConditionName, f64>,
    #[serde(default = "one")]
    pub super_exponent: f64,
    #[serde(default)]
    pub nondegeneracy: Option<NondegeneracySpec>,
}

fn default_lattice() -> SampleLattice {
    SampleLattice::Uniform { per_axis: 9 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBox {
    pub lows: Vec<f64>,
    pub highs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NondegeneracySpec {
    pub points: Vec<Vec<f64>>,
    pub epsilon: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_face_samples")]
    pub samples_per_axis: usize,
}

fn default_budget() -> usize {
    10_000
}

fn default_face_samples() -> usize {
    9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub m: u32,
    #[serde(default = "default_exclusion")]
    pub exclusion_radius: f64,
    #[serde(default = "default_kmin")]
    pub holder_kmin: i32,
    #[serde(default = "default_kmax")]
    pub holder_kmax: i32,
    #[serde(default = "default_holder_tol")]
    pub holder_tol: f64,
    #[serde(default = "default_true")]
    pub write_field: bool,
}

fn default_exclusion() -> f64 {
    0.1
}

fn default_kmin() -> i32 {
    2
}

fn default_kmax() -> i32 {
    20
}

fn default_holder_tol() -> f64 {
    0.005
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Power {
        coeff: f64,
        exponent: f64,
        r_max: f64,
    },
    /// Concave majorant of the given samples.
    Samples {
        radii: Vec<f64>,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSpec {
    pub profile: ProfileSpec,
    #[serde(default = "one")]
    pub kappa0: f64,
    #[serde(default = "one")]
    pub m0: f64,
    #[serde(default = "one")]
    pub k: f64,
    #[serde(default)]
    pub origin: Option<Vec<f64>>,
    #[serde(default)]
    pub search: BarrierSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    /// Nodes per axis for each grid, coarse to fine.
    pub counts: Vec<usize>,
    #[serde(default)]
    pub max_error: Option<f64>,
    #[serde(default)]
    pub min_order: Option<f64>,
}

fn config_error(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

/// Parses TOML (or JSON for `.json` files); unknown keys and type errors
/// are reported with their key path.
pub fn parse_config_str(text: &str, json: bool) -> Result<RunConfig, CliError> {
    let parsed: RunConfig = if json {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| config_error(&e.path().to_string(), e.inner()))?
    } else {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let msg = e.inner().message().to_string();
            config_error(&e.path().to_string(), msg)
        })?
    };
    Ok(parsed)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let json = path.extension().is_some_and(|e| e == "json");
    parse_config_str(&text, json)
}

/// Everything a run needs, resolved before any computation starts.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub command: Command,
    pub config: RunConfig,
    pub family: Option<BuiltinFamily>,
    pub grid: Option<StructuredGrid>,
    pub dirichlet: Option<BoundaryData>,
}

fn need<'a, T>(v: &'a Option<T>, path: &str, command: Command) -> Result<&'a T, CliError> {
    v.as_ref()
        .ok_or_else(|| config_error(path, format!("required by `{}`", command.as_str())))
}

fn resolve_family(spec: &FamilySpec) -> Result<BuiltinFamily, CliError> {
    let mut f = make_builtin_family(&spec.name, &spec.params).map_err(|e| config_error("family", e))?;
    if let Some(d) = &spec.drift {
        f = f.with_drift(d.clone()).map_err(|e| config_error("family.drift", e))?;
    }
    if spec.zero_order_slope != 0.0 {
        f = f.with_zero_order_slope(spec.zero_order_slope);
    }
    Ok(f)
}

fn resolve_grid(spec: &GridSpec) -> Result<StructuredGrid, CliError> {
    StructuredGrid::new(spec.lows.clone(), spec.highs.clone(), spec.counts.clone())
        .map_err(|e| config_error("grid", e))
}

/// Evaluates named boundary data at a point.
pub fn dirichlet_function(
    spec: &DirichletSpec,
    family: Option<&FamilySpec>,
    dim: usize,
    seed: u64,
) -> Result<Box<dyn Fn(&[f64]) -> f64 + Send + Sync>, CliError> {
    let path = "dirichlet";
    Ok(match spec.clone() {
        DirichletSpec::Constant { value } => Box::new(move |_| value),
        DirichletSpec::Linear { coeffs, offset } => {
            if coeffs.len() != dim {
                return Err(config_error("dirichlet.coeffs", format!("expected {dim} entries")));
            }
            Box::new(move |x| offset + coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>())
        }
        DirichletSpec::Trig { terms } => {
            for (i, t) in terms.iter().enumerate() {
                if t.wavenumbers.len() != dim {
                    return Err(config_error(
                        &format!("dirichlet.terms[{i}].wavenumbers"),
                        format!("expected {dim} entries"),
                    ));
                }
            }
            Box::new(move |x| trig_sum(&terms, x))
        }
        DirichletSpec::RandomSmooth { modes, amplitude } => {
            let terms = random_terms(seed, dim, modes, amplitude);
            Box::new(move |x| trig_sum(&terms, x))
        }
        DirichletSpec::Oracle => {
            let m = match family {
                Some(f) if f.name == "sharpness" => f.params.first().copied().unwrap_or(0.0),
                _ => return Err(config_error(path, "oracle data need the sharpness family")),
            };
            let ex = SharpnessExample::new(m as u32).map_err(|e| config_error("family.params", e))?;
            if dim != 2 {
                return Err(config_error(path, "oracle data need a 2D grid"));
            }
            Box::new(move |x| degensolve_core::oracle::sharpness_w(&ex, x[0], x[1]).unwrap_or(f64::NAN))
        }
    })
}

fn trig_sum(terms: &[TrigTerm], x: &[f64]) -> f64 {
    terms
        .iter()
        .map(|t| {
            let arg: f64 = t.wavenumbers.iter().zip(x).map(|(k, v)| k * v).sum();
            t.amplitude * (PI * arg + t.phase).sin()
        })
        .sum()
}

/// Random trig terms with wavenumbers in `[−2, 2]`, decaying amplitudes.
pub fn random_terms(seed: u64, dim: usize, modes: usize, amplitude: f64) -> Vec<TrigTerm> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..modes)
        .map(|j| TrigTerm {
            amplitude: amplitude * rng.random_range(-1.0..1.0) / (j + 1) as f64,
            wavenumbers: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect()
}

pub fn profile_from_spec(spec: &ProfileSpec) -> Result<std::sync::Arc<dyn ConcaveProfile>, CliError> {
    Ok(match spec {
        ProfileSpec::Power {
            coeff,
            exponent,
            r_max,
        } => std::sync::Arc::new(
            PowerLaw::new(*coeff, *exponent, *r_max).map_err(|e| config_error("barrier.profile", e))?,
        ),
        ProfileSpec::Samples { radii, values } => {
            let m = degensolve_core::barriers::Modulus::new(radii.clone(), values.clone())
                .map_err(|e| config_error("barrier.profile", e))?;
            std::sync::Arc::new(
                degensolve_core::barriers::concave_majorant(&m)
                    .map_err(|e| config_error("barrier.profile", e))?,
            )
        }
    })
}

/// Validates the whole configuration for `command` and builds the
/// family, grid and boundary data.
pub fn resolve(mut config: RunConfig, command: Option<Command>, seed: Option<u64>) -> Result<Resolved, CliError> {
    let command = match (command, config.command) {
        (Some(c), _) | (None, Some(c)) => c,
        (None, None) => return Err(config_error("command", "no command given")),
    };
    config.command = Some(command);
    if let Some(s) = seed {
        config.seed = s;
    }
    config
        .solver
        .validate()
        .map_err(solver_error)?;

    let family = config.family.as_ref().map(resolve_family).transpose()?;
    let grid = config.grid.as_ref().map(resolve_grid).transpose()?;
    if let (Some(f), Some(g)) = (&family, &grid) {
        use degensolve_core::CoefficientField;
        if f.dim() != g.dim() {
            return Err(config_error("grid", format!("family dimension {} but grid dimension {}", f.dim(), g.dim())));
        }
    }
    let mut dirichlet = None;
    if let (Some(spec), Some(g)) = (&config.dirichlet, &grid) {
        let phi = dirichlet_function(spec, config.family.as_ref(), g.dim(), config.seed)?;
        let data = BoundaryData::from_fn(g, |x| phi(x));
        if data.values().iter().any(|v| !v.is_finite()) {
            return Err(config_error("dirichlet", "boundary data are not finite"));
        }
        dirichlet = Some(data);
    }

    match command {
        Command::Solve => {
            need(&family, "family", command)?;
            need(&grid, "grid", command)?;
            need(&config.dirichlet, "dirichlet", command)?;
            if let Some(r) = &config.checks.regularity {
                if !(r.shrink > 0.0 && r.shrink < 1.0) {
                    return Err(config_error("checks.regularity.shrink", "must lie in (0, 1)"));
                }
                if config.solver.eps_ladder.len() < 3 {
                    return Err(config_error("solver.eps_ladder", "regularity check needs at least 3 rungs"));
                }
            }
            if let Some(c) = &config.checks.comparison {
                if !(c.shift >= 0.0 && c.shift.is_finite()) {
                    return Err(config_error("checks.comparison.shift", "must be nonnegative"));
                }
            }
            if let Some(b) = &config.checks.boundary_modulus {
                let g = grid.as_ref().unwrap();
                degensolve_core::barriers::BoundaryModulusSpec::on_box_face(g, b.x0.clone(), b.sigma, b.kappa0)
                    .map_err(|e| config_error("checks.boundary_modulus.x0", e))?;
                if !(b.sigma > 0.0) {
                    return Err(config_error("checks.boundary_modulus.sigma", "must be positive"));
                }
            }
        }
        Command::CheckConditions => {
            need(&family, "family", command)?;
            let c = need(&config.conditions, "conditions", command)?;
            if c.region.is_none() {
                need(&grid, "grid", command)?;
            }
            if c.flags.contains(&ConditionName::Nondegeneracy) && c.nondegeneracy.is_none() {
                return Err(config_error("conditions.nondegeneracy", "required by the nondegeneracy flag"));
            }
            if !(c.z_range[0] <= c.z_range[1]) {
                return Err(config_error("conditions.z_range", "lower end exceeds upper end"));
            }
        }
        Command::Oracle => {
            let o = need(&config.oracle, "oracle", command)?;
            let g = need(&grid, "grid", command)?;
            SharpnessExample::new(o.m).map_err(|e| config_error("oracle.m", e))?;
            if g.dim() != 2 {
                return Err(config_error("grid", "oracle needs a 2D grid"));
            }
            if o.holder_kmax - o.holder_kmin < 3 {
                return Err(config_error("oracle.holder_kmax", "needs at least 4 Hölder samples"));
            }
        }
        Command::Barrier => {
            let b = need(&config.barrier, "barrier", command)?;
            profile_from_spec(&b.profile)?;
            if !(b.kappa0 > 0.0) {
                return Err(config_error("barrier.kappa0", "must be positive"));
            }
            if !(b.m0 > 0.0) {
                return Err(config_error("barrier.m0", "must be positive"));
            }
            if config.family.is_none() {
                config.family = Some(FamilySpec {
                    name: "identity".into(),
                    params: vec![],
                    drift: None,
                    zero_order_slope: 0.0,
                });
            }
        }
        Command::Convergence => {
            let f = need(&config.family, "family", command)?;
            let g = need(&config.grid, "grid", command)?;
            if f.name != "sharpness" {
                return Err(config_error("family.name", "convergence runs use the sharpness family"));
            }
            let c = need(&config.convergence, "convergence", command)?;
            if c.counts.len() < 2 || c.counts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(config_error("convergence.counts", "need at least two increasing counts"));
            }
            if g.lows.len() != 2 {
                return Err(config_error("grid", "convergence runs need a 2D grid"));
            }
        }
        Command::Report => {}
    }
    let family = match family {
        Some(f) => Some(f),
        None => config.family.as_ref().map(resolve_family).transpose()?,
    };
    Ok(Resolved {
        command,
        config,
        family,
        grid,
        dirichlet,
    })
}

fn solver_error(e: degensolve_core::Error) -> CliError {
    let msg = e.to_string();
    let key = ["eps_ladder", "newton_tol", "max_newton_iters", "backtrack", "min_step", "truncation"]
        .into_iter()
        .find(|k| msg.contains(k));
    match key {
        Some(k) => config_error(&format!("solver.{k}"), msg),
        None => config_error("solver", msg),
    }
}
