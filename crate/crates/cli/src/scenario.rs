//! Execution of a parsed scenario.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use hydrogeo::curvature::{
    harmonic_flux_correction, riemann_1d, riemann_general, sectional, CurvatureReport, Method,
};
use hydrogeo::dynamics::{
    distance, geodesic_flow, gradient_flow, parallel_transport, RunStatus, Trajectory,
};
use hydrogeo::grid::fmt_f64;
use hydrogeo::operator::{PotentialField, ResponseOperator};
use hydrogeo::oracle::{compare_report, Quantity};
use hydrogeo::{DensityField, Field, Grid, HydroError, MobilityModel, VERSION};

use crate::config::{ConfigError, Scenario, ScenarioKind};
use crate::output::{stage, write_all, write_manifest, Artifact, RunManifest};
use crate::suite::{identity_suite, SuiteSettings};

/// Exit status of the process.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const SUITE: i32 = 4;
}

/// Failure before any output was written.
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Library {
        context: String,
        error: HydroError,
    },
    Io {
        context: String,
        error: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => exit::CONFIG,
            RunError::Library { error, .. } => match error {
                e if e.is_numeric() => exit::NUMERIC,
                HydroError::ModelVerification { .. } => exit::NUMERIC,
                HydroError::Io(_) => exit::IO,
                _ => exit::CONFIG,
            },
            RunError::Io { .. } => exit::IO,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            exit::CONFIG => "config",
            exit::NUMERIC => "numeric",
            _ => "io",
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            RunError::Config(e) => e.line,
            _ => None,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => e.fmt(f),
            RunError::Library { context, error } => write!(f, "{context}: {error}"),
            RunError::Io { context, error } => write!(f, "{context}: {error}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

fn lib<T>(context: &str, r: hydrogeo::Result<T>) -> Result<T, RunError> {
    r.map_err(|error| RunError::Library {
        context: context.to_string(),
        error,
    })
}

/// A run that wrote its outputs but did not succeed.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Numeric(String),
    Suite { failed: usize },
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Numeric(_) => exit::NUMERIC,
            Failure::Suite { .. } => exit::SUITE,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub failure: Option<Failure>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.failure
            .as_ref()
            .map_or(exit::SUCCESS, Failure::exit_code)
    }
}

pub struct RunOptions {
    pub out_dir: PathBuf,
    pub threads: usize,
    /// Time spent reading and parsing the config, reported in the manifest.
    pub parse_time: Duration,
}

struct Computed {
    artifacts: Vec<Artifact>,
    failure: Option<Failure>,
}

/// Runs `s`, writes its artifacts and the manifest into `opts.out_dir`.
pub fn run_scenario(s: &Scenario, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let mut stages = vec![stage("parse", opts.parse_time)];
    let t = Instant::now();
    let computed = compute(s)?;
    stages.push(stage("compute", t.elapsed()));

    let t = Instant::now();
    let files = write_all(&opts.out_dir, &computed.artifacts).map_err(|error| RunError::Io {
        context: format!("writing {}", opts.out_dir.display()),
        error,
    })?;
    stages.push(stage("write", t.elapsed()));

    let status = match &computed.failure {
        None => "completed".to_string(),
        Some(Failure::Numeric(m)) => format!("numeric_failure: {m}"),
        Some(Failure::Suite { failed }) => format!("suite_failure: {failed} rows failed"),
    };
    let manifest = RunManifest {
        tool: "hydrogeo",
        library_version: VERSION,
        kind: s.kind.as_str().to_string(),
        seed: s.seed,
        status,
        threads: opts.threads,
        config: s.echo(),
        stages,
        files,
    };
    let manifest_path = write_manifest(&opts.out_dir, &manifest).map_err(|error| RunError::Io {
        context: "writing manifest".into(),
        error,
    })?;
    Ok(RunOutcome {
        manifest,
        manifest_path,
        failure: computed.failure,
    })
}

struct Setup {
    model: MobilityModel,
    grid: Arc<Grid>,
}

impl Setup {
    fn new(s: &Scenario) -> Result<Setup, RunError> {
        let model = lib("model", MobilityModel::builtin(s.model()))?;
        let grid = lib(
            "grid",
            Grid::new(s.grid.n, s.length_for(s.model()), s.grid.dealias),
        )?;
        Ok(Setup { model, grid })
    }

    fn density(&self, s: &Scenario, name: &str) -> Result<DensityField, RunError> {
        let spec = s.field(name).expect("validated scenario has its fields");
        let f = Field::fourier_series(&self.grid, spec.mean, &spec.modes);
        DensityField::for_model(f, &self.model).map_err(|e| {
            RunError::Config(ConfigError {
                line: None,
                message: format!("field `{name}`: {e}"),
            })
        })
    }

    fn potential(&self, s: &Scenario, name: &str) -> Option<PotentialField> {
        s.field(name)
            .map(|spec| PotentialField::from_fourier(&self.grid, &spec.modes))
    }
}

fn csv(name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Artifact {
    let mut bytes = Vec::new();
    write(&mut bytes).expect("writing to memory cannot fail");
    Artifact::new(name, bytes)
}

fn write_wide(
    out: &mut Vec<u8>,
    grid: &Grid,
    times: &[f64],
    fields: &[&Field],
) -> std::io::Result<()> {
    write!(out, "x")?;
    for t in times {
        write!(out, ",t={}", fmt_f64(*t))?;
    }
    writeln!(out)?;
    for k in 0..grid.n() {
        write!(out, "{}", fmt_f64(grid.node(k)))?;
        for f in fields {
            write!(out, ",{}", fmt_f64(f.values()[k]))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrajectorySummary {
    status: &'static str,
    exit_time: Option<f64>,
    final_time: f64,
    stored_states: usize,
    dt_reductions: usize,
}

fn summarize(tr: &Trajectory) -> TrajectorySummary {
    TrajectorySummary {
        status: tr.status.label(),
        exit_time: match tr.status {
            RunStatus::AdmissibilityExit { time } => Some(time),
            _ => None,
        },
        final_time: tr.times.last().copied().unwrap_or(0.0),
        stored_states: tr.times.len(),
        dt_reductions: tr.dt_reductions,
    }
}

fn status_failure(tr: &Trajectory) -> Option<Failure> {
    match &tr.status {
        RunStatus::Completed => None,
        RunStatus::AdmissibilityExit { time } => Some(Failure::Numeric(format!(
            "density left the admissible interval at t = {time}"
        ))),
        RunStatus::NotConverged {
            iterations,
            gradient_norm,
        } => Some(Failure::Numeric(format!(
            "optimizer stopped after {iterations} iterations with gradient norm {gradient_norm:e}"
        ))),
    }
}

fn trajectory_artifacts(tr: &Trajectory, with_potentials: bool) -> Vec<Artifact> {
    let mut out = vec![
        csv("densities.csv", |w| tr.write_densities_csv(w)),
        csv("diagnostics.csv", |w| tr.write_diagnostics_csv(w)),
    ];
    if with_potentials && !tr.potentials.is_empty() {
        let grid = Arc::clone(tr.potentials[0].grid());
        let fields: Vec<&Field> = tr.potentials.iter().map(PotentialField::field).collect();
        out.push(csv("potentials.csv", |w| {
            write_wide(w, &grid, &tr.times, &fields)
        }));
    }
    out.push(Artifact::json("summary.json", &summarize(tr)));
    out
}

#[derive(Serialize)]
struct RouteValues {
    general: f64,
    closed_form: f64,
    harmonic_correction: f64,
}

#[derive(Serialize)]
struct CurvatureOutput {
    model: String,
    n: usize,
    length: f64,
    dealias: f64,
    sectional_general: CurvatureReport,
    sectional_closed_form: CurvatureReport,
    /// `R(V₁,V₂,V₂,V₁)` by both routes and their bridge.
    numerator: RouteValues,
    /// `⟨R(V₁,V₂)V₃,V₄⟩` when `phi3` and `phi4` are given.
    tensor: Option<RouteValues>,
}

fn curvature(s: &Scenario) -> Result<Computed, RunError> {
    let st = Setup::new(s)?;
    let rho = st.density(s, "rho0")?;
    let op = lib("response operator", ResponseOperator::new(&st.model, &rho))?;
    let p1 = st.potential(s, "phi1").expect("required").into_field();
    let p2 = st.potential(s, "phi2").expect("required").into_field();
    let general = lib(
        "sectional curvature",
        sectional(&op, &p1, &p2, Method::General),
    )?;
    let closed = lib(
        "sectional curvature",
        sectional(&op, &p1, &p2, Method::ClosedForm1d),
    )?;
    let (a, b) = (p1.dealias(), p2.dealias());
    let numerator = RouteValues {
        general: general.numerator,
        closed_form: closed.numerator,
        harmonic_correction: harmonic_flux_correction(&op, [&a, &b, &b, &a]),
    };
    let tensor = match (st.potential(s, "phi3"), st.potential(s, "phi4")) {
        (Some(p3), Some(p4)) => {
            let f = [&p1, &p2, p3.field(), p4.field()];
            Some(RouteValues {
                general: lib("riemann tensor", riemann_general(&op, f))?.value,
                closed_form: riemann_1d(&op, f).value,
                harmonic_correction: harmonic_flux_correction(&op, f),
            })
        }
        (None, None) => None,
        _ => {
            return Err(RunError::Config(ConfigError {
                line: None,
                message: "fields `phi3` and `phi4` must be given together".into(),
            }))
        }
    };
    let out = CurvatureOutput {
        model: s.model().to_string(),
        n: s.grid.n,
        length: st.grid.length(),
        dealias: s.grid.dealias,
        sectional_general: general,
        sectional_closed_form: closed,
        numerator,
        tensor,
    };
    Ok(Computed {
        artifacts: vec![Artifact::json("curvature.json", &out)],
        failure: None,
    })
}

fn flow(s: &Scenario) -> Result<Computed, RunError> {
    let st = Setup::new(s)?;
    let rho0 = st.density(s, "rho0")?;
    let pi = st.density(s, "pi")?;
    let tr = lib(
        "gradient flow",
        gradient_flow(&st.model, &rho0, &pi, &s.run.flow.to_config()),
    )?;
    Ok(Computed {
        failure: status_failure(&tr),
        artifacts: trajectory_artifacts(&tr, false),
    })
}

fn geodesic(s: &Scenario) -> Result<Computed, RunError> {
    let st = Setup::new(s)?;
    let rho0 = st.density(s, "rho0")?;
    let phi = st.potential(s, "phi1").expect("required");
    let tr = lib(
        "geodesic",
        geodesic_flow(&st.model, &rho0, &phi, &s.run.flow.to_config()),
    )?;
    Ok(Computed {
        failure: status_failure(&tr),
        artifacts: trajectory_artifacts(&tr, true),
    })
}

#[derive(Serialize)]
struct TransportSummary {
    base: TrajectorySummary,
    transported_states: usize,
    norm_initial: f64,
    norm_final: f64,
    max_relative_norm_drift: f64,
    max_relative_velocity_inner_drift: f64,
}

fn transport(s: &Scenario) -> Result<Computed, RunError> {
    let st = Setup::new(s)?;
    let rho0 = st.density(s, "rho0")?;
    let phi = st.potential(s, "phi1").expect("required");
    let eta = st.potential(s, "eta0").expect("required");
    let base = lib(
        "geodesic",
        geodesic_flow(&st.model, &rho0, &phi, &s.run.flow.to_config()),
    )?;
    let mut artifacts = trajectory_artifacts(&base, true);
    if let Some(f) = status_failure(&base) {
        return Ok(Computed {
            artifacts,
            failure: Some(f),
        });
    }
    if base.dt_reductions > 0 {
        let msg = format!(
            "stability limit cut dt on {} steps, transport needs a uniform step; lower dt",
            base.dt_reductions
        );
        return Ok(Computed {
            artifacts,
            failure: Some(Failure::Numeric(msg)),
        });
    }
    let moved = lib(
        "parallel transport",
        parallel_transport(&st.model, &base, &eta),
    )?;

    let mut diag = Vec::new();
    writeln!(diag, "time,name,value").expect("memory write");
    let mut norms = Vec::with_capacity(moved.times.len());
    let mut inners = Vec::with_capacity(moved.times.len());
    for (i, (t, e)) in moved.times.iter().zip(&moved.etas).enumerate() {
        let op = lib(
            "response operator",
            ResponseOperator::new(&st.model, &base.densities[2 * i]),
        )?;
        let nn = op.metric_inner(e, e);
        let nv = op.metric_inner(e, &base.potentials[2 * i]);
        norms.push(nn);
        inners.push(nv);
        writeln!(diag, "{},norm_sq,{}", fmt_f64(*t), fmt_f64(nn)).expect("memory write");
        writeln!(diag, "{},velocity_inner,{}", fmt_f64(*t), fmt_f64(nv)).expect("memory write");
    }
    let speed0 = base.series("speed").first().map_or(0.0, |p| p.1);
    let drift = |v: &[f64], scale: f64| {
        v.iter().map(|x| (x - v[0]).abs()).fold(0.0, f64::max) / scale.max(f64::MIN_POSITIVE)
    };
    let summary = TransportSummary {
        base: summarize(&base),
        transported_states: moved.times.len(),
        norm_initial: norms[0],
        norm_final: *norms.last().expect("transport has an initial state"),
        max_relative_norm_drift: drift(&norms, norms[0]),
        max_relative_velocity_inner_drift: drift(&inners, (norms[0] * speed0).sqrt()),
    };
    let fields: Vec<&Field> = moved.etas.iter().map(PotentialField::field).collect();
    artifacts.push(csv("transport.csv", |w| {
        write_wide(w, &st.grid, &moved.times, &fields)
    }));
    artifacts.push(Artifact::new("transport_diagnostics.csv", diag));
    artifacts.push(Artifact::json("transport_summary.json", &summary));
    Ok(Computed {
        artifacts,
        failure: None,
    })
}

#[derive(Serialize)]
struct DistanceOutput {
    model: String,
    n: usize,
    n_time: usize,
    distance: f64,
    action: f64,
    iterations: usize,
    status: &'static str,
}

fn distance_run(s: &Scenario) -> Result<Computed, RunError> {
    let st = Setup::new(s)?;
    let rho0 = st.density(s, "rho0")?;
    let rho1 = st.density(s, "rho1")?;
    let r = lib(
        "distance",
        distance(
            &st.model,
            &rho0,
            &rho1,
            s.run.n_time,
            &s.run.optimizer.to_config(),
        ),
    )?;
    let out = DistanceOutput {
        model: s.model().to_string(),
        n: s.grid.n,
        n_time: s.run.n_time,
        distance: r.value,
        action: r.action,
        iterations: r.iterations,
        status: r.path.status.label(),
    };
    let artifacts = vec![
        Artifact::json("distance.json", &out),
        csv("path.csv", |w| r.path.write_densities_csv(w)),
        csv("diagnostics.csv", |w| r.path.write_diagnostics_csv(w)),
    ];
    Ok(Computed {
        failure: status_failure(&r.path),
        artifacts,
    })
}

#[derive(Serialize)]
struct OracleSummary {
    seed: u64,
    oracle_n: Vec<usize>,
    /// Largest relative gap per model, quantity and grid size.
    max_relative_gap: BTreeMap<String, BTreeMap<String, BTreeMap<usize, f64>>>,
}

fn oracle(s: &Scenario) -> Result<Computed, RunError> {
    let mut artifacts = Vec::new();
    let mut gaps = BTreeMap::new();
    for name in &s.models {
        let model = lib("model", MobilityModel::builtin(name))?;
        let table = lib(
            &format!("oracle comparison for {name}"),
            compare_report(&s.run.oracle_n, &model, s.seed),
        )?;
        let mut per_q = BTreeMap::new();
        for q in [Quantity::Metric, Quantity::Connection, Quantity::Sectional] {
            let mut per_n = BTreeMap::new();
            for row in table.rows_for(q) {
                let e = per_n.entry(row.n).or_insert(0.0f64);
                *e = e.max(row.rel_gap());
            }
            per_q.insert(q.as_str().to_string(), per_n);
        }
        gaps.insert(name.clone(), per_q);
        artifacts.push(csv(&format!("oracle_{name}.csv"), |w| table.write_csv(w)));
    }
    let summary = OracleSummary {
        seed: s.seed,
        oracle_n: s.run.oracle_n.clone(),
        max_relative_gap: gaps,
    };
    artifacts.push(Artifact::json("oracle_summary.json", &summary));
    Ok(Computed {
        artifacts,
        failure: None,
    })
}

fn suite(s: &Scenario) -> Result<Computed, RunError> {
    let length = |m: &str| s.length_for(m);
    let settings = SuiteSettings {
        models: &s.models,
        n: s.grid.n,
        length: &length,
        dealias: s.grid.dealias,
        samples: s.run.samples,
        max_mode: s.run.max_mode,
        seed: s.seed,
    };
    let table = lib("identity suite", identity_suite(&settings))?;
    let failed = table.failures();
    let artifacts = vec![
        csv("identities.csv", |w| table.write_csv(w)),
        Artifact::json("identities.json", &table),
    ];
    Ok(Computed {
        artifacts,
        failure: (failed > 0).then_some(Failure::Suite { failed }),
    })
}

fn compute(s: &Scenario) -> Result<Computed, RunError> {
    match s.kind {
        ScenarioKind::Curvature => curvature(s),
        ScenarioKind::Flow => flow(s),
        ScenarioKind::Geodesic => geodesic(s),
        ScenarioKind::Transport => transport(s),
        ScenarioKind::Distance => distance_run(s),
        ScenarioKind::Oracle => oracle(s),
        ScenarioKind::IdentitySuite => suite(s),
    }
}

/// Default output directory when neither the command line nor the config names one.
pub fn default_out_dir(s: &Scenario) -> PathBuf {
    Path::new("hydrogeo-out").join(s.kind.as_str())
}
