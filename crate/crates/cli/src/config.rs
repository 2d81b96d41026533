//! Scenario files.
//!
//! The format is line oriented. `#` starts a comment, `[name]` opens a
//! section and every other non-blank line is `key = value`. Fields are
//! truncated Fourier series written as `;`-separated terms, each either
//! `k a b` (meaning `a cos(2πkx/L) + b sin(2πkx/L)`) or `mean m`. See
//! `docs/config.md` for the full grammar.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;

use hydrogeo::dynamics::{FlowConfig, OptimizerConfig};
use hydrogeo::grid::MIN_POINTS;
use hydrogeo::oracle::{torus_length, MAX_ORACLE_N};
use hydrogeo::MobilityModel;

pub const BUILTIN_MODELS: [&str; 3] = ["independent", "sep", "kmp"];
pub const DEFAULT_DEALIAS: f64 = 2.0 / 3.0;
pub const DEFAULT_SAMPLES: usize = 20;
pub const DEFAULT_N_TIME: usize = 16;
pub const DEFAULT_ORACLE_N: [usize; 3] = [8, 12, 16];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: Some(line),
            message: message.into(),
        }
    }

    fn general(message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError {
                line: Some(l),
                message,
            } => write!(f, "line {l}: {message}"),
            ConfigError {
                line: None,
                message,
            } => f.write_str(message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Curvature,
    Flow,
    Geodesic,
    Transport,
    Distance,
    Oracle,
    IdentitySuite,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::Curvature,
        ScenarioKind::Flow,
        ScenarioKind::Geodesic,
        ScenarioKind::Transport,
        ScenarioKind::Distance,
        ScenarioKind::Oracle,
        ScenarioKind::IdentitySuite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Curvature => "curvature",
            ScenarioKind::Flow => "flow",
            ScenarioKind::Geodesic => "geodesic",
            ScenarioKind::Transport => "transport",
            ScenarioKind::Distance => "distance",
            ScenarioKind::Oracle => "oracle",
            ScenarioKind::IdentitySuite => "identity_suite",
        }
    }

    fn parse(s: &str) -> Option<ScenarioKind> {
        ScenarioKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Fields the kind must be given.
    pub fn required_fields(self) -> &'static [&'static str] {
        match self {
            ScenarioKind::Curvature => &["phi1", "phi2"],
            ScenarioKind::Flow => &["rho0", "pi"],
            ScenarioKind::Geodesic => &["phi1"],
            ScenarioKind::Transport => &["phi1", "eta0"],
            ScenarioKind::Distance => &["rho0", "rho1"],
            ScenarioKind::Oracle | ScenarioKind::IdentitySuite => &[],
        }
    }

    /// Fields the kind accepts. `rho0` defaults to the uniform density.
    pub fn allowed_fields(self) -> &'static [&'static str] {
        match self {
            ScenarioKind::Curvature => &["rho0", "phi1", "phi2", "phi3", "phi4"],
            ScenarioKind::Flow => &["rho0", "pi"],
            ScenarioKind::Geodesic => &["rho0", "phi1"],
            ScenarioKind::Transport => &["rho0", "phi1", "eta0"],
            ScenarioKind::Distance => &["rho0", "rho1"],
            ScenarioKind::Oracle | ScenarioKind::IdentitySuite => &[],
        }
    }

    /// Whether the kind takes several models.
    fn multi_model(self) -> bool {
        matches!(self, ScenarioKind::Oracle | ScenarioKind::IdentitySuite)
    }

    fn needs_grid(self) -> bool {
        self != ScenarioKind::Oracle
    }
}

const FIELD_NAMES: [&str; 8] = ["rho0", "rho1", "pi", "phi1", "phi2", "phi3", "phi4", "eta0"];

fn is_density(name: &str) -> bool {
    matches!(name, "rho0" | "rho1" | "pi")
}

/// Truncated Fourier series `mean + Σ a_k cos(2πkx/L) + b_k sin(2πkx/L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSpec {
    pub mean: f64,
    pub modes: Vec<(u32, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    /// `None` means the model's default torus length.
    pub length: Option<f64>,
    pub dealias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub flow: FlowSettings,
    pub optimizer: OptimizerSettings,
    pub n_time: usize,
    pub oracle_n: Vec<usize>,
    pub samples: usize,
    pub max_mode: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSettings {
    pub dt: f64,
    pub t_end: f64,
    pub store_every: usize,
    pub cfl_safety: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub memory: usize,
    pub penalty: f64,
}

impl FlowSettings {
    pub fn to_config(&self) -> FlowConfig {
        FlowConfig {
            dt: self.dt,
            t_end: self.t_end,
            store_every: self.store_every,
            cfl_safety: self.cfl_safety,
            ..FlowConfig::default()
        }
    }
}

impl OptimizerSettings {
    pub fn to_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            memory: self.memory,
            penalty: self.penalty,
        }
    }
}

impl Default for RunSpec {
    fn default() -> Self {
        let f = FlowConfig::default();
        let o = OptimizerConfig::default();
        RunSpec {
            flow: FlowSettings {
                dt: f.dt,
                t_end: f.t_end,
                store_every: f.store_every,
                cfl_safety: f.cfl_safety,
            },
            optimizer: OptimizerSettings {
                max_iterations: o.max_iterations,
                gradient_tolerance: o.gradient_tolerance,
                memory: o.memory,
                penalty: o.penalty,
            },
            n_time: DEFAULT_N_TIME,
            oracle_n: DEFAULT_ORACLE_N.to_vec(),
            samples: DEFAULT_SAMPLES,
            max_mode: 0,
        }
    }
}

/// A validated scenario with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub models: Vec<String>,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub grid: GridSpec,
    pub fields: BTreeMap<String, FourierSpec>,
    pub run: RunSpec,
    /// Adjustments made while validating (echoed as comments).
    pub notes: Vec<String>,
}

impl Scenario {
    /// The single model of a one-model kind.
    pub fn model(&self) -> &str {
        &self.models[0]
    }

    /// Torus length for `model`.
    pub fn length_for(&self, model: &str) -> f64 {
        self.grid.length.unwrap_or_else(|| default_length(model))
    }

    pub fn field(&self, name: &str) -> Option<&FourierSpec> {
        self.fields.get(name)
    }

    /// Canonical text of the scenario. Parsing it yields the same scenario.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for n in &self.notes {
            let _ = writeln!(s, "# note: {n}");
        }
        let _ = writeln!(s, "[scenario]");
        let _ = writeln!(s, "kind = {}", self.kind.as_str());
        let _ = writeln!(s, "model = {}", self.models.join(" "));
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(d) = &self.out_dir {
            let _ = writeln!(s, "out_dir = {}", d.display());
        }
        if self.kind.needs_grid() {
            let _ = writeln!(s, "\n[grid]");
            let _ = writeln!(s, "n = {}", self.grid.n);
            if let Some(l) = self.grid.length {
                let _ = writeln!(s, "length = {}", num(l));
            }
            let _ = writeln!(s, "dealias = {}", num(self.grid.dealias));
        }
        if !self.fields.is_empty() {
            let _ = writeln!(s, "\n[fields]");
            for name in FIELD_NAMES {
                if let Some(f) = self.fields.get(name) {
                    let _ = writeln!(s, "{name} = {}", fourier_text(f, is_density(name)));
                }
            }
        }
        let _ = writeln!(s, "\n[run]");
        let r = &self.run;
        match self.kind {
            ScenarioKind::Flow | ScenarioKind::Geodesic | ScenarioKind::Transport => {
                let _ = writeln!(s, "dt = {}", num(r.flow.dt));
                let _ = writeln!(s, "t_end = {}", num(r.flow.t_end));
                let _ = writeln!(s, "store_every = {}", r.flow.store_every);
                let _ = writeln!(s, "cfl_safety = {}", num(r.flow.cfl_safety));
            }
            ScenarioKind::Distance => {
                let _ = writeln!(s, "n_time = {}", r.n_time);
                let _ = writeln!(s, "max_iterations = {}", r.optimizer.max_iterations);
                let _ = writeln!(
                    s,
                    "gradient_tolerance = {}",
                    num(r.optimizer.gradient_tolerance)
                );
                let _ = writeln!(s, "memory = {}", r.optimizer.memory);
                let _ = writeln!(s, "penalty = {}", num(r.optimizer.penalty));
            }
            ScenarioKind::Oracle => {
                let ns: Vec<String> = r.oracle_n.iter().map(|n| n.to_string()).collect();
                let _ = writeln!(s, "oracle_n = {}", ns.join(" "));
            }
            ScenarioKind::IdentitySuite => {
                let _ = writeln!(s, "samples = {}", r.samples);
                let _ = writeln!(s, "max_mode = {}", r.max_mode);
            }
            ScenarioKind::Curvature => {}
        }
        s
    }
}

/// Default highest potential mode of the identity suite: inside the
/// two-thirds band but high enough that products alias when dealiasing is off.
pub fn default_max_mode(n: usize) -> u32 {
    (3 * n / 16).max(1) as u32
}

/// Default torus length of a builtin model: 2 when densities are bounded by 1.
pub fn default_length(model: &str) -> f64 {
    MobilityModel::builtin(model)
        .map(|m| torus_length(&m))
        .unwrap_or(1.0)
}

fn num(v: f64) -> String {
    // Shortest representation that parses back to the same value.
    format!("{v:?}")
}

fn fourier_text(f: &FourierSpec, density: bool) -> String {
    let mut terms = Vec::new();
    if density {
        terms.push(format!("mean {}", num(f.mean)));
    }
    for &(k, a, b) in &f.modes {
        terms.push(format!("{k} {} {}", num(a), num(b)));
    }
    if terms.is_empty() {
        "0 0 0".to_string()
    } else {
        terms.join("; ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Scenario,
    Grid,
    Fields,
    Run,
}

impl Section {
    fn parse(s: &str) -> Option<Section> {
        match s {
            "scenario" => Some(Section::Scenario),
            "grid" => Some(Section::Grid),
            "fields" => Some(Section::Fields),
            "run" => Some(Section::Run),
            _ => None,
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            Section::Scenario => &["kind", "model", "seed", "out_dir"],
            Section::Grid => &["n", "length", "dealias"],
            Section::Fields => &FIELD_NAMES,
            Section::Run => &[
                "dt",
                "t_end",
                "store_every",
                "cfl_safety",
                "n_time",
                "max_iterations",
                "gradient_tolerance",
                "memory",
                "penalty",
                "oracle_n",
                "samples",
                "max_mode",
            ],
        }
    }

    fn name(self) -> &'static str {
        match self {
            Section::Scenario => "scenario",
            Section::Grid => "grid",
            Section::Fields => "fields",
            Section::Run => "run",
        }
    }
}

/// Run keys that each kind reads.
fn run_keys(kind: ScenarioKind) -> &'static [&'static str] {
    match kind {
        ScenarioKind::Flow | ScenarioKind::Geodesic | ScenarioKind::Transport => {
            &["dt", "t_end", "store_every", "cfl_safety"]
        }
        ScenarioKind::Distance => &[
            "n_time",
            "max_iterations",
            "gradient_tolerance",
            "memory",
            "penalty",
        ],
        ScenarioKind::Oracle => &["oracle_n"],
        ScenarioKind::IdentitySuite => &["samples", "max_mode"],
        ScenarioKind::Curvature => &[],
    }
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

type Table = BTreeMap<(&'static str, &'static str), Entry>;

fn tokenize(text: &str) -> Result<Table, ConfigError> {
    let mut section: Option<Section> = None;
    let mut table = Table::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| {
                    ConfigError::at(line, format!("malformed section header `{content}`"))
                })?
                .trim();
            section = Some(
                Section::parse(name)
                    .ok_or_else(|| ConfigError::at(line, format!("unknown section `[{name}]`")))?,
            );
            continue;
        }
        let sec = section.ok_or_else(|| ConfigError::at(line, "key outside of any section"))?;
        let (key, value) = content.split_once('=').ok_or_else(|| {
            ConfigError::at(line, format!("expected `key = value`, got `{content}`"))
        })?;
        let key = key.trim();
        let value = value.trim();
        let known = sec.keys().iter().find(|k| **k == key).ok_or_else(|| {
            ConfigError::at(
                line,
                format!(
                    "unknown key `{key}` in [{}] (expected one of: {})",
                    sec.name(),
                    sec.keys().join(", ")
                ),
            )
        })?;
        if value.is_empty() {
            return Err(ConfigError::at(line, format!("key `{key}` has no value")));
        }
        if let Some(prev) = table.insert(
            (sec.name(), known),
            Entry {
                line,
                value: value.to_string(),
            },
        ) {
            return Err(ConfigError::at(
                line,
                format!("duplicate key `{key}` (first set on line {})", prev.line),
            ));
        }
    }
    Ok(table)
}

fn parse_num<T: std::str::FromStr>(e: &Entry, key: &str, what: &str) -> Result<T, ConfigError> {
    e.value
        .parse()
        .map_err(|_| ConfigError::at(e.line, format!("`{key}` must be {what}, got `{}`", e.value)))
}

fn parse_real(e: &Entry, key: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse_num(e, key, "a number")?;
    if !v.is_finite() {
        return Err(ConfigError::at(e.line, format!("`{key}` must be finite")));
    }
    Ok(v)
}

fn parse_positive(e: &Entry, key: &str) -> Result<f64, ConfigError> {
    let v = parse_real(e, key)?;
    if v <= 0.0 {
        return Err(ConfigError::at(
            e.line,
            format!("`{key}` must be positive, got {v}"),
        ));
    }
    Ok(v)
}

fn parse_count(e: &Entry, key: &str, min: usize) -> Result<usize, ConfigError> {
    let v: i64 = parse_num(e, key, "an integer")?;
    if v < min as i64 {
        return Err(ConfigError::at(
            e.line,
            format!("`{key}` must be at least {min}, got {v}"),
        ));
    }
    Ok(v as usize)
}

fn parse_fourier(e: &Entry, key: &str, density: bool) -> Result<FourierSpec, ConfigError> {
    let mut mean = None;
    let mut modes: Vec<(u32, f64, f64)> = Vec::new();
    for term in e.value.split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let parts: Vec<&str> = term.split_whitespace().collect();
        let bad =
            |why: &str| ConfigError::at(e.line, format!("field `{key}`: {why} in term `{term}`"));
        match parts.as_slice() {
            ["mean", m] => {
                if mean.is_some() {
                    return Err(bad("repeated mean"));
                }
                mean = Some(m.parse::<f64>().map_err(|_| bad("mean is not a number"))?);
            }
            [k, a, b] => {
                let k: u32 = k
                    .parse()
                    .map_err(|_| bad("wavenumber must be a non-negative integer"))?;
                let a: f64 = a
                    .parse()
                    .map_err(|_| bad("cosine coefficient is not a number"))?;
                let b: f64 = b
                    .parse()
                    .map_err(|_| bad("sine coefficient is not a number"))?;
                if !(a.is_finite() && b.is_finite()) {
                    return Err(bad("coefficients must be finite"));
                }
                if k == 0 {
                    // A zero mode is a constant; use `mean` for densities.
                    if a != 0.0 || b != 0.0 {
                        return Err(bad("wavenumber 0 is not allowed, use `mean m`"));
                    }
                    continue;
                }
                if modes.iter().any(|m| m.0 == k) {
                    return Err(bad("repeated wavenumber"));
                }
                modes.push((k, a, b));
            }
            _ => return Err(bad("expected `k a b` or `mean m`")),
        }
    }
    modes.sort_by_key(|m| m.0);
    if !density && mean.is_some() {
        return Err(ConfigError::at(
            e.line,
            format!("field `{key}` is a potential and takes no mean"),
        ));
    }
    Ok(FourierSpec {
        mean: mean.unwrap_or(f64::NAN),
        modes,
    })
}

/// Parses and validates a scenario file.
pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    let table = tokenize(text)?;
    let get = |s: &'static str, k: &'static str| table.get(&(s, k));

    let kind_entry = get("scenario", "kind")
        .ok_or_else(|| ConfigError::general("missing required key `kind` in [scenario]"))?;
    let kind = ScenarioKind::parse(&kind_entry.value).ok_or_else(|| {
        let names: Vec<&str> = ScenarioKind::ALL.iter().map(|k| k.as_str()).collect();
        ConfigError::at(
            kind_entry.line,
            format!(
                "unknown scenario kind `{}` (expected one of: {})",
                kind_entry.value,
                names.join(", ")
            ),
        )
    })?;

    let models: Vec<String> = match get("scenario", "model") {
        Some(e) => {
            let mut names = Vec::new();
            for name in e.value.split_whitespace() {
                if name == "all" {
                    names.extend(BUILTIN_MODELS.iter().map(|s| s.to_string()));
                } else if BUILTIN_MODELS.contains(&name) {
                    names.push(name.to_string());
                } else {
                    return Err(ConfigError::at(
                        e.line,
                        format!(
                            "unknown model `{name}` (expected one of: {}; custom models are library-only)",
                            BUILTIN_MODELS.join(", ")
                        ),
                    ));
                }
            }
            let mut seen = Vec::new();
            names.retain(|n| {
                let fresh = !seen.contains(n);
                seen.push(n.clone());
                fresh
            });
            if !kind.multi_model() && names.len() != 1 {
                return Err(ConfigError::at(
                    e.line,
                    format!("kind {} takes exactly one model", kind.as_str()),
                ));
            }
            names
        }
        None if kind.multi_model() => BUILTIN_MODELS.iter().map(|s| s.to_string()).collect(),
        None => {
            return Err(ConfigError::general(
                "missing required key `model` in [scenario]",
            ))
        }
    };

    let seed = match get("scenario", "seed") {
        Some(e) => parse_num::<u64>(e, "seed", "a non-negative integer")?,
        None => 0,
    };
    let out_dir = get("scenario", "out_dir").map(|e| PathBuf::from(&e.value));

    let mut notes = Vec::new();
    let grid = if kind.needs_grid() {
        let e = get("grid", "n")
            .ok_or_else(|| ConfigError::general("missing required key `n` in [grid]"))?;
        let n: i64 = parse_num(e, "n", "an integer")?;
        if n <= 0 {
            return Err(ConfigError::at(
                e.line,
                format!("`n` must be positive, got {n}"),
            ));
        }
        if n % 2 != 0 {
            return Err(ConfigError::at(
                e.line,
                format!("`n` must be even (parity rule), got {n}"),
            ));
        }
        if (n as usize) < MIN_POINTS {
            return Err(ConfigError::at(
                e.line,
                format!("`n` must be at least {MIN_POINTS}, got {n}"),
            ));
        }
        let length = get("grid", "length")
            .map(|e| parse_positive(e, "length"))
            .transpose()?;
        let dealias = match get("grid", "dealias") {
            Some(e) if e.value == "none" => 1.0,
            Some(e) => {
                let d = parse_positive(e, "dealias")?;
                if d > 1.0 {
                    return Err(ConfigError::at(
                        e.line,
                        format!("`dealias` must lie in (0, 1] or be `none`, got {d}"),
                    ));
                }
                d
            }
            None => DEFAULT_DEALIAS,
        };
        GridSpec {
            n: n as usize,
            length,
            dealias,
        }
    } else {
        for key in ["n", "length", "dealias"] {
            if let Some(e) = get("grid", key) {
                return Err(ConfigError::at(
                    e.line,
                    format!("kind {} does not use [grid] `{key}`", kind.as_str()),
                ));
            }
        }
        GridSpec {
            n: 0,
            length: None,
            dealias: DEFAULT_DEALIAS,
        }
    };

    let mut fields = BTreeMap::new();
    for name in FIELD_NAMES {
        let Some(e) = get("fields", name) else {
            continue;
        };
        if !kind.allowed_fields().contains(&name) {
            return Err(ConfigError::at(
                e.line,
                format!("field `{name}` is not used by kind {}", kind.as_str()),
            ));
        }
        let mut spec = parse_fourier(e, name, is_density(name))?;
        let half = grid.n / 2;
        if let Some(&(k, _, _)) = spec.modes.iter().find(|m| m.0 as usize >= half) {
            return Err(ConfigError::at(
                e.line,
                format!(
                    "field `{name}`: wavenumber {k} is not resolved on n = {} (need k < n/2)",
                    grid.n
                ),
            ));
        }
        if is_density(name) {
            let target = 1.0
                / models
                    .first()
                    .map(|m| grid.length.unwrap_or_else(|| default_length(m)))
                    .unwrap_or(1.0);
            if spec.mean.is_nan() {
                notes.push(format!(
                    "{name}: mean omitted, set to 1/length = {}",
                    num(target)
                ));
            } else if spec.mean != target {
                notes.push(format!(
                    "{name}: mean {} adjusted to 1/length = {} for unit mass",
                    num(spec.mean),
                    num(target)
                ));
            }
            spec.mean = target;
        } else {
            spec.mean = 0.0;
        }
        fields.insert(name.to_string(), spec);
    }
    for name in kind.required_fields() {
        if !fields.contains_key(*name) {
            return Err(ConfigError::general(format!(
                "missing required field `{name}` in [fields] for kind {}",
                kind.as_str()
            )));
        }
    }
    if kind.allowed_fields().contains(&"rho0") && !fields.contains_key("rho0") {
        let target = 1.0 / grid.length.unwrap_or_else(|| default_length(&models[0]));
        notes.push(format!(
            "rho0: omitted, uniform density {} used",
            num(target)
        ));
        fields.insert(
            "rho0".into(),
            FourierSpec {
                mean: target,
                modes: Vec::new(),
            },
        );
    }

    let mut run = RunSpec {
        max_mode: default_max_mode(grid.n),
        ..RunSpec::default()
    };
    let allowed_run = run_keys(kind);
    for key in Section::Run.keys() {
        let Some(e) = get("run", key) else { continue };
        if !allowed_run.contains(key) {
            return Err(ConfigError::at(
                e.line,
                format!("[run] `{key}` is not used by kind {}", kind.as_str()),
            ));
        }
        match *key {
            "dt" => run.flow.dt = parse_positive(e, key)?,
            "t_end" => {
                run.flow.t_end = parse_real(e, key)?;
                if run.flow.t_end < 0.0 {
                    return Err(ConfigError::at(e.line, "`t_end` must be non-negative"));
                }
            }
            "store_every" => run.flow.store_every = parse_count(e, key, 1)?,
            "cfl_safety" => {
                run.flow.cfl_safety = parse_positive(e, key)?;
                if run.flow.cfl_safety > 1.0 {
                    return Err(ConfigError::at(e.line, "`cfl_safety` must lie in (0, 1]"));
                }
            }
            "n_time" => run.n_time = parse_count(e, key, 1)?,
            "max_iterations" => run.optimizer.max_iterations = parse_count(e, key, 1)?,
            "gradient_tolerance" => run.optimizer.gradient_tolerance = parse_positive(e, key)?,
            "memory" => run.optimizer.memory = parse_count(e, key, 1)?,
            "penalty" => run.optimizer.penalty = parse_positive(e, key)?,
            "oracle_n" => {
                let mut ns = Vec::new();
                for tok in e.value.split_whitespace() {
                    let n: usize = tok.parse().map_err(|_| {
                        ConfigError::at(
                            e.line,
                            format!("`oracle_n` entries must be integers, got `{tok}`"),
                        )
                    })?;
                    if n % 2 != 0 || !(MIN_POINTS..=MAX_ORACLE_N).contains(&n) {
                        return Err(ConfigError::at(
                            e.line,
                            format!("`oracle_n` entries must be even and in [{MIN_POINTS}, {MAX_ORACLE_N}], got {n}"),
                        ));
                    }
                    ns.push(n);
                }
                run.oracle_n = ns;
            }
            "samples" => run.samples = parse_count(e, key, 0)?,
            "max_mode" => {
                let m = parse_count(e, key, 1)?;
                if m >= grid.n / 2 {
                    return Err(ConfigError::at(
                        e.line,
                        format!("`max_mode` must be below n/2 = {}", grid.n / 2),
                    ));
                }
                run.max_mode = m as u32;
            }
            _ => unreachable!("run keys are matched exhaustively"),
        }
    }
    if kind == ScenarioKind::Transport {
        // RK4 transport advances two stored steps at a time.
        let steps = run.flow.t_end / run.flow.dt;
        let line = get("run", "dt").or(get("run", "t_end")).map(|e| e.line);
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0)
            || (steps.round() as u64) % 2 != 0
            || steps < 2.0
        {
            return Err(ConfigError {
                line,
                message: format!("transport needs t_end/dt to be an even integer, got {steps}"),
            });
        }
        if run.flow.store_every != 1 {
            let line = get("run", "store_every").map(|e| e.line);
            return Err(ConfigError {
                line,
                message: "transport needs store_every = 1".into(),
            });
        }
    }

    Ok(Scenario {
        kind,
        models,
        seed,
        out_dir,
        grid,
        fields,
        run,
        notes,
    })
}
