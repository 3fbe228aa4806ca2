//! Scenario files: strict TOML schema and validation into runnable plans.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use edlab_core::contextuality::{
    mermin_square, parse_table, to_matrix, ObservableTable, PauliString,
};
use edlab_core::evolution::{
    DensityField, Grid1D, HamiltonianSpec, PhaseField, RECOMMENDED_STEP_FRACTION,
    STABILITY_CONSTANT,
};
use edlab_core::inference::{CMatrix, HermitianOperator, StateVector};
use edlab_core::kernel::{
    Configuration, ConstantDrift, DriftPotential, KernelParams, LinearDrift, QuadraticDrift,
};
use num_complex::Complex;
use serde::Deserialize;

/// Environment variable holding the default output directory.
pub const OUTPUT_ENV: &str = "EDLAB_OUT";
/// Output directory used when neither the config nor the environment sets one.
pub const DEFAULT_OUTPUT_DIR: &str = "edlab-out";

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Sample,
    Evolve,
    Compare,
    Measure,
    Weak,
    Ks,
    Hybrid,
    Context,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::Sample,
        Kind::Evolve,
        Kind::Compare,
        Kind::Measure,
        Kind::Weak,
        Kind::Ks,
        Kind::Hybrid,
        Kind::Context,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Sample => "sample",
            Kind::Evolve => "evolve",
            Kind::Compare => "compare",
            Kind::Measure => "measure",
            Kind::Weak => "weak",
            Kind::Ks => "ks",
            Kind::Hybrid => "hybrid",
            Kind::Context => "context",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub label: Option<String>,
    pub sample: Option<SampleParams>,
    pub evolve: Option<FieldParams>,
    pub compare: Option<FieldParams>,
    pub measure: Option<MeasureParams>,
    pub weak: Option<WeakParams>,
    pub ks: Option<TableParams>,
    pub hybrid: Option<HybridParams>,
    pub context: Option<ContextParams>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleParams {
    pub masses: Vec<f64>,
    #[serde(default = "one")]
    pub eta: f64,
    pub dt: f64,
    #[serde(default)]
    pub drift: DriftParams,
    pub start: Vec<f64>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    pub ensemble: Option<EnsembleParams>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DriftParams {
    #[default]
    Constant,
    Linear {
        slope: Vec<f64>,
    },
    Quadratic {
        curvature: Vec<f64>,
        #[serde(default)]
        center: Vec<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleParams {
    pub size: usize,
    pub steps: usize,
    #[serde(default)]
    pub axis: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    pub range: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldParams {
    pub grid: GridParams,
    #[serde(default = "one")]
    pub mass: f64,
    pub hbar: Option<f64>,
    pub xi: Option<f64>,
    #[serde(default)]
    pub potential: PotentialParams,
    pub initial: InitialParams,
    pub t_final: f64,
    #[serde(default = "default_step_fraction")]
    pub step_fraction: f64,
    #[serde(default = "default_outputs")]
    pub outputs: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PotentialParams {
    #[default]
    Free,
    Harmonic {
        omega: f64,
        #[serde(default)]
        center: f64,
    },
    Values {
        values: Vec<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialParams {
    #[serde(default)]
    pub center: f64,
    pub sigma: f64,
    #[serde(default)]
    pub momentum: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateParams {
    pub amplitudes: Option<Vec<[f64; 2]>>,
    pub random_dim: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorParams {
    pub pauli: Option<String>,
    pub matrix: Option<Vec<Vec<[f64; 2]>>>,
    pub diagonal: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureParams {
    pub state: StateParams,
    pub operator: OperatorParams,
    pub cell_positions: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub detector: DetectorParams,
    pub detections: Option<Vec<usize>>,
    pub n_detections: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    #[serde(default)]
    pub sigma: f64,
    pub edges: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakParams {
    pub pre: StateParams,
    pub post: StateParams,
    pub operator: OperatorParams,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableParams {
    pub table: Option<String>,
    pub table_text: Option<String>,
    pub table_file: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridParams {
    pub table: Option<String>,
    pub table_text: Option<String>,
    pub table_file: Option<PathBuf>,
    pub x0: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextParams {
    pub table: Option<String>,
    pub table_text: Option<String>,
    pub table_file: Option<PathBuf>,
    pub state: Option<StateParams>,
    pub contexts: Option<Vec<usize>>,
}

fn one() -> f64 {
    1.0
}

fn default_samples() -> usize {
    100_000
}

fn default_bins() -> usize {
    50
}

fn default_step_fraction() -> f64 {
    RECOMMENDED_STEP_FRACTION
}

fn default_outputs() -> usize {
    10
}

/// A config rejected before anything ran, with the key path at fault.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.to_string(),
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." {
            "<root>".to_string()
        } else {
            path
        };
        invalid(path, e.inner().message().trim())
    })
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

pub struct SamplePlan {
    pub params: KernelParams<f64>,
    pub start: Configuration<f64>,
    pub n_samples: usize,
    pub ensemble: Option<EnsembleParams>,
}

pub struct FieldPlan {
    pub grid: Grid1D<f64>,
    pub spec: HamiltonianSpec<f64>,
    pub rho0: DensityField<f64>,
    pub phi0: PhaseField<f64>,
    pub t_final: f64,
    pub dt: f64,
    pub outputs: usize,
}

pub struct MeasurePlan {
    pub state: StateVector<f64>,
    pub operator: HermitianOperator<f64>,
    pub positions: Vec<f64>,
    pub detector_sigma: f64,
    pub edges: Option<Vec<f64>>,
    pub detections: Detections,
}

pub enum Detections {
    Explicit(Vec<usize>),
    Sampled(usize),
}

pub struct WeakPlan {
    pub pre: StateVector<f64>,
    pub post: StateVector<f64>,
    pub operator: HermitianOperator<f64>,
}

pub struct HybridPlan {
    pub table: ObservableTable,
    pub x0: Vec<usize>,
}

pub struct ContextPlan {
    pub table: ObservableTable,
    pub state: StateVector<f64>,
    pub contexts: Vec<usize>,
}

pub enum Plan {
    Sample(SamplePlan),
    Evolve(FieldPlan),
    Compare(FieldPlan),
    Measure(MeasurePlan),
    Weak(WeakPlan),
    Ks(ObservableTable),
    Hybrid(HybridPlan),
    Context(ContextPlan),
}

/// A validated scenario, ready to run.
pub struct Scenario {
    pub kind: Kind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub label: String,
    pub plan: Plan,
}

impl Scenario {
    pub fn artifact_dir(&self) -> PathBuf {
        self.output_dir.join(self.kind.name()).join(&self.label)
    }
}

/// Options that override the config file from the command line.
#[derive(Debug, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub label: Option<String>,
}

/// Checks every parameter against the core preconditions and builds the plan.
/// `base` resolves relative file references in the config.
pub fn prepare(
    config: ScenarioConfig,
    base: &Path,
    overrides: Overrides,
) -> Result<Scenario, ConfigError> {
    let kind = config.kind;
    let blocks = [
        (Kind::Sample, config.sample.is_some()),
        (Kind::Evolve, config.evolve.is_some()),
        (Kind::Compare, config.compare.is_some()),
        (Kind::Measure, config.measure.is_some()),
        (Kind::Weak, config.weak.is_some()),
        (Kind::Ks, config.ks.is_some()),
        (Kind::Hybrid, config.hybrid.is_some()),
        (Kind::Context, config.context.is_some()),
    ];
    for (k, present) in blocks {
        if present && k != kind {
            return Err(invalid(
                k.name(),
                format!("block does not belong to a `{kind}` scenario"),
            ));
        }
    }
    let seed = config.seed;
    let missing = || invalid(kind.name(), "missing parameter block");
    let plan = match kind {
        Kind::Sample => Plan::Sample(sample_plan(config.sample.ok_or_else(missing)?)?),
        Kind::Evolve => Plan::Evolve(field_plan("evolve", config.evolve.ok_or_else(missing)?)?),
        Kind::Compare => Plan::Compare(field_plan("compare", config.compare.ok_or_else(missing)?)?),
        Kind::Measure => Plan::Measure(measure_plan(config.measure.ok_or_else(missing)?, seed)?),
        Kind::Weak => Plan::Weak(weak_plan(config.weak.ok_or_else(missing)?, seed)?),
        Kind::Ks => {
            let p = config.ks.unwrap_or_default();
            Plan::Ks(table_from("ks", p.table, p.table_text, p.table_file, base)?)
        }
        Kind::Hybrid => {
            let p = config.hybrid.unwrap_or_default();
            let table = table_from("hybrid", p.table, p.table_text, p.table_file, base)?;
            let dim = 1usize << table.n_qubits();
            let x0 = p.x0.unwrap_or_else(|| (0..dim).collect());
            if let Some(&bad) = x0.iter().find(|&&x| x >= dim) {
                return Err(invalid(
                    "hybrid.x0",
                    format!("basis index {bad} is outside 0..{dim}"),
                ));
            }
            Plan::Hybrid(HybridPlan { table, x0 })
        }
        Kind::Context => {
            let p = config.context.unwrap_or_default();
            let table = table_from("context", p.table, p.table_text, p.table_file, base)?;
            let dim = 1usize << table.n_qubits();
            let state_params = p.state.unwrap_or(StateParams {
                random_dim: Some(dim),
                ..StateParams::default()
            });
            let state = state_from("context.state", &state_params, seed)?;
            if state.dim() != dim {
                return Err(invalid(
                    "context.state",
                    format!("dimension {} does not match the table's {dim}", state.dim()),
                ));
            }
            let n = table.contexts().len();
            let contexts = p.contexts.unwrap_or_else(|| (0..n).collect());
            if let Some(&bad) = contexts.iter().find(|&&c| c >= n) {
                return Err(invalid(
                    "context.contexts",
                    format!("context {bad} is outside 0..{n}"),
                ));
            }
            Plan::Context(ContextPlan {
                table,
                state,
                contexts,
            })
        }
    };
    let output_dir = overrides
        .output_dir
        .or(config.output_dir)
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let label = overrides
        .label
        .or(config.label)
        .unwrap_or_else(|| chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string());
    if label.is_empty() || label.contains(['/', '\\']) || label == "." || label == ".." {
        return Err(invalid("label", "must be a nonempty single path component"));
    }
    Ok(Scenario {
        kind,
        seed,
        output_dir,
        label,
        plan,
    })
}

fn positive(path: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(
            path,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn finite(path: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(path, format!("must be finite, got {v}")))
    }
}

fn sample_plan(p: SampleParams) -> Result<SamplePlan, ConfigError> {
    let n = p.masses.len();
    if n == 0 {
        return Err(invalid(
            "sample.masses",
            "at least one particle is required",
        ));
    }
    for (i, &m) in p.masses.iter().enumerate() {
        positive(&format!("sample.masses[{i}]"), m)?;
    }
    positive("sample.eta", p.eta)?;
    positive("sample.dt", p.dt)?;
    let dim = 3 * n;
    if p.start.len() != dim {
        return Err(invalid(
            "sample.start",
            format!(
                "needs {dim} coordinates (3 per particle), got {}",
                p.start.len()
            ),
        ));
    }
    let check_len = |path: &str, v: &[f64]| {
        if v.len() > dim {
            Err(invalid(
                path,
                format!("has {} entries, more than the {dim} coordinates", v.len()),
            ))
        } else if let Some(x) = v.iter().find(|x| !x.is_finite()) {
            Err(invalid(path, format!("must be finite, got {x}")))
        } else {
            Ok(())
        }
    };
    let drift: Arc<dyn DriftPotential<f64>> = match p.drift {
        DriftParams::Constant => Arc::new(ConstantDrift(0.0)),
        DriftParams::Linear { slope } => {
            check_len("sample.drift.slope", &slope)?;
            Arc::new(LinearDrift { slope })
        }
        DriftParams::Quadratic { curvature, center } => {
            check_len("sample.drift.curvature", &curvature)?;
            check_len("sample.drift.center", &center)?;
            Arc::new(QuadraticDrift { curvature, center })
        }
    };
    let params =
        KernelParams::new(p.masses, p.eta, p.dt, drift).map_err(|e| invalid("sample", e))?;
    let start = Configuration::new(p.start, n).map_err(|e| invalid("sample.start", e))?;
    if p.n_samples < 100 {
        return Err(invalid(
            "sample.n_samples",
            "at least 100 samples are required",
        ));
    }
    if let Some(e) = &p.ensemble {
        if e.size == 0 {
            return Err(invalid("sample.ensemble.size", "must be positive"));
        }
        if e.axis >= dim {
            return Err(invalid(
                "sample.ensemble.axis",
                format!("must be below {dim}"),
            ));
        }
        if e.bins == 0 {
            return Err(invalid("sample.ensemble.bins", "must be positive"));
        }
        if !(e.range[0].is_finite() && e.range[1].is_finite() && e.range[0] < e.range[1]) {
            return Err(invalid(
                "sample.ensemble.range",
                "must be a finite increasing pair",
            ));
        }
    }
    Ok(SamplePlan {
        params,
        start,
        n_samples: p.n_samples,
        ensemble: p.ensemble,
    })
}

fn field_plan(block: &str, p: FieldParams) -> Result<FieldPlan, ConfigError> {
    let at = |key: &str| format!("{block}.{key}");
    finite(&at("grid.x_min"), p.grid.x_min)?;
    finite(&at("grid.x_max"), p.grid.x_max)?;
    let grid =
        Grid1D::new(p.grid.x_min, p.grid.x_max, p.grid.n).map_err(|e| invalid(at("grid"), e))?;
    let mass = positive(&at("mass"), p.mass)?;
    let potential = match p.potential {
        PotentialParams::Free => vec![0.0; grid.n_points()],
        PotentialParams::Harmonic { omega, center } => {
            positive(&at("potential.omega"), omega)?;
            finite(&at("potential.center"), center)?;
            grid.points()
                .iter()
                .map(|x| 0.5 * mass * omega * omega * (x - center) * (x - center))
                .collect()
        }
        PotentialParams::Values { values } => values,
    };
    let spec = match (p.hbar, p.xi) {
        (Some(_), Some(_)) => return Err(invalid(at("hbar"), "give either hbar or xi, not both")),
        (Some(h), None) => HamiltonianSpec::with_hbar(mass, potential, positive(&at("hbar"), h)?),
        (None, Some(xi)) => HamiltonianSpec::new(mass, potential, positive(&at("xi"), xi)?),
        (None, None) => HamiltonianSpec::with_hbar(mass, potential, 1.0),
    }
    .map_err(|e| invalid(at("potential"), e))?;
    if spec.potential().len() != grid.n_points() {
        return Err(invalid(
            at("potential.values"),
            format!(
                "needs {} values, got {}",
                grid.n_points(),
                spec.potential().len()
            ),
        ));
    }
    let init = &p.initial;
    finite(&at("initial.center"), init.center)?;
    positive(&at("initial.sigma"), init.sigma)?;
    finite(&at("initial.momentum"), init.momentum)?;
    // A plane-wave factor is periodic on the grid only for whole windings.
    let turns = init.momentum * grid.length() / (2.0 * std::f64::consts::PI * spec.hbar());
    if (turns - turns.round()).abs() > 1e-9 * turns.abs().max(1.0) {
        return Err(invalid(
            at("initial.momentum"),
            format!("p L / (2π ħ) = {turns} must be an integer on a periodic grid"),
        ));
    }
    let rho0 = DensityField::gaussian(grid.clone(), init.center, init.sigma)
        .map_err(|e| invalid(at("initial"), e))?;
    let phi0 = if init.momentum == 0.0 {
        PhaseField::constant(grid.clone(), 0.0)
    } else {
        PhaseField::linear(grid.clone(), init.momentum)
    }
    .map_err(|e| invalid(at("initial.momentum"), e))?;
    if !(p.t_final >= 0.0 && p.t_final.is_finite()) {
        return Err(invalid(at("t_final"), "must be nonnegative and finite"));
    }
    if !(p.step_fraction > 0.0 && p.step_fraction <= STABILITY_CONSTANT) {
        return Err(invalid(
            at("step_fraction"),
            format!(
                "must lie in (0, {STABILITY_CONSTANT}], got {}",
                p.step_fraction
            ),
        ));
    }
    if p.outputs == 0 {
        return Err(invalid(at("outputs"), "must be positive"));
    }
    let dt = p.step_fraction * mass * grid.dx() * grid.dx() / spec.hbar();
    Ok(FieldPlan {
        grid,
        spec,
        rho0,
        phi0,
        t_final: p.t_final,
        dt,
        outputs: p.outputs,
    })
}

fn state_from(
    path: &str,
    p: &StateParams,
    default_seed: u64,
) -> Result<StateVector<f64>, ConfigError> {
    match (&p.amplitudes, p.random_dim) {
        (Some(amps), None) => {
            if p.seed.is_some() {
                return Err(invalid(
                    format!("{path}.seed"),
                    "only applies to random states",
                ));
            }
            let values = amps.iter().map(|&[re, im]| Complex::new(re, im)).collect();
            StateVector::normalize(values).map_err(|e| invalid(format!("{path}.amplitudes"), e))
        }
        (None, Some(dim)) => StateVector::random(dim, p.seed.unwrap_or(default_seed))
            .map_err(|e| invalid(format!("{path}.random_dim"), e)),
        _ => Err(invalid(
            path,
            "give exactly one of amplitudes or random_dim",
        )),
    }
}

fn operator_from(path: &str, p: &OperatorParams) -> Result<HermitianOperator<f64>, ConfigError> {
    let matrix: CMatrix<f64> = match (&p.pauli, &p.matrix, &p.diagonal) {
        (Some(text), None, None) => {
            let at = format!("{path}.pauli");
            let s: PauliString = text.parse().map_err(|e| invalid(&at, e))?;
            to_matrix(&s).map_err(|e| invalid(&at, e))?
        }
        (None, Some(rows), None) => {
            let n = rows.len();
            if n == 0 || rows.iter().any(|r| r.len() != n) {
                return Err(invalid(
                    format!("{path}.matrix"),
                    "must be a nonempty square matrix",
                ));
            }
            CMatrix::from_fn(n, n, |i, j| Complex::new(rows[i][j][0], rows[i][j][1]))
        }
        (None, None, Some(d)) => {
            return HermitianOperator::diagonal(d)
                .map_err(|e| invalid(format!("{path}.diagonal"), e));
        }
        _ => {
            return Err(invalid(
                path,
                "give exactly one of pauli, matrix or diagonal",
            ))
        }
    };
    HermitianOperator::new(matrix).map_err(|e| invalid(path, e))
}

fn measure_plan(p: MeasureParams, seed: u64) -> Result<MeasurePlan, ConfigError> {
    let state = state_from("measure.state", &p.state, seed)?;
    let operator = operator_from("measure.operator", &p.operator)?;
    let dim = operator.dim();
    if state.dim() != dim {
        return Err(invalid(
            "measure.state",
            format!(
                "dimension {} does not match the operator's {dim}",
                state.dim()
            ),
        ));
    }
    let positions = match &p.cell_positions {
        None => (0..dim).map(|i| i as f64).collect(),
        Some(map) => {
            let mut out = Vec::with_capacity(dim);
            for i in 0..dim {
                let key = format!("x{i}");
                let x = *map.get(&key).ok_or_else(|| {
                    invalid("measure.cell_positions", format!("missing cell `{key}`"))
                })?;
                out.push(finite(&format!("measure.cell_positions.{key}"), x)?);
            }
            if let Some(extra) = map
                .keys()
                .find(|k| !(0..dim).any(|i| format!("x{i}") == **k))
            {
                return Err(invalid(
                    "measure.cell_positions",
                    format!("unknown cell `{extra}`"),
                ));
            }
            out
        }
    };
    let sigma = p.detector.sigma;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(
            "measure.detector.sigma",
            "must be nonnegative and finite",
        ));
    }
    if sigma == 0.0 && p.detector.edges.is_some() {
        return Err(invalid(
            "measure.detector.edges",
            "only used with a positive sigma",
        ));
    }
    if let Some(edges) = &p.detector.edges {
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid(
                "measure.detector.edges",
                "must be finite and strictly increasing",
            ));
        }
    }
    let n_outcomes = if sigma == 0.0 {
        dim
    } else {
        p.detector.edges.as_ref().map_or(dim, |e| e.len() + 1)
    };
    let detections = match (p.detections, p.n_detections) {
        (Some(list), None) => {
            if list.is_empty() {
                return Err(invalid("measure.detections", "must not be empty"));
            }
            if let Some(&bad) = list.iter().find(|&&d| d >= n_outcomes) {
                return Err(invalid(
                    "measure.detections",
                    format!("outcome {bad} is outside 0..{n_outcomes}"),
                ));
            }
            Detections::Explicit(list)
        }
        (None, Some(0)) => return Err(invalid("measure.n_detections", "must be positive")),
        (None, Some(n)) => Detections::Sampled(n),
        _ => {
            return Err(invalid(
                "measure",
                "give exactly one of detections or n_detections",
            ))
        }
    };
    Ok(MeasurePlan {
        state,
        operator,
        positions,
        detector_sigma: sigma,
        edges: p.detector.edges,
        detections,
    })
}

fn weak_plan(p: WeakParams, seed: u64) -> Result<WeakPlan, ConfigError> {
    let pre = state_from("weak.pre", &p.pre, seed)?;
    let post = state_from("weak.post", &p.post, seed.wrapping_add(1))?;
    let operator = operator_from("weak.operator", &p.operator)?;
    if pre.dim() != operator.dim() || post.dim() != operator.dim() {
        return Err(invalid("weak", "pre, post and operator dimensions differ"));
    }
    Ok(WeakPlan {
        pre,
        post,
        operator,
    })
}

fn table_from(
    block: &str,
    builtin: Option<String>,
    text: Option<String>,
    file: Option<PathBuf>,
    base: &Path,
) -> Result<ObservableTable, ConfigError> {
    match (builtin, text, file) {
        (None, None, None) => Ok(mermin_square()),
        (Some(name), None, None) => match name.as_str() {
            "mermin" => Ok(mermin_square()),
            other => Err(invalid(
                format!("{block}.table"),
                format!("unknown built-in table `{other}` (known: mermin)"),
            )),
        },
        (None, Some(text), None) => {
            parse_table(&text).map_err(|e| invalid(format!("{block}.table_text"), e))
        }
        (None, None, Some(file)) => {
            let path = base.join(file);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                invalid(
                    format!("{block}.table_file"),
                    format!("{}: {e}", path.display()),
                )
            })?;
            parse_table(&text).map_err(|e| invalid(format!("{block}.table_file"), e))
        }
        _ => Err(invalid(
            block,
            "give at most one of table, table_text or table_file",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prepare_text(text: &str, overrides: Overrides) -> Result<Scenario, ConfigError> {
        prepare(parse_config(text)?, Path::new("."), overrides)
    }

    #[test]
    fn command_line_beats_config_for_output_and_label() {
        let text = "kind = \"ks\"\noutput_dir = \"cfg\"\nlabel = \"a\"\n";
        let s = prepare_text(text, Overrides::default()).unwrap();
        assert_eq!(s.artifact_dir(), Path::new("cfg/ks/a"));
        let s = prepare_text(
            text,
            Overrides {
                output_dir: Some("cli".into()),
                label: Some("b".into()),
            },
        )
        .unwrap();
        assert_eq!(s.artifact_dir(), Path::new("cli/ks/b"));
    }

    #[test]
    fn labels_must_be_single_components() {
        for bad in ["", "..", "a/b"] {
            let text = format!("kind = \"ks\"\nlabel = \"{bad}\"\n");
            assert!(matches!(
                prepare_text(&text, Overrides::default()),
                Err(ConfigError::Invalid { .. })
            ));
        }
    }

    #[test]
    fn missing_block_is_reported() {
        let err = prepare_text("kind = \"compare\"\n", Overrides::default())
            .err()
            .unwrap();
        assert_eq!(err.to_string(), "compare: missing parameter block");
    }

    #[test]
    fn step_defaults_to_recommended_fraction() {
        let text = "kind = \"evolve\"\n[evolve]\nt_final = 0.1\n[evolve.grid]\nx_min = -8.0\nx_max = 8.0\nn = 64\n[evolve.initial]\nsigma = 1.0\n";
        let s = prepare_text(text, Overrides::default()).unwrap();
        let Plan::Evolve(p) = s.plan else {
            panic!("wrong plan")
        };
        assert!((p.dt - RECOMMENDED_STEP_FRACTION * 0.25 * 0.25).abs() < 1e-15);
    }
}
