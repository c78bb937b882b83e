//! Batch front-end: a flat `key = value` configuration format, the named
//! experiments, and CSV output with a JSON provenance sidecar.
//!
//! ```text
//! # overlap scan over the feedback amplitude
//! command = scan-A
//! N = 4
//! gamma = 1e-3
//! A_grid = 0:0.1:6.4
//! ```

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Parser;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::dynamics::{self, SimConfig, RNG_ALGORITHM};
use crate::error::Error;
use crate::feedback::{
    epsilon_pair_feedback, local_drive_feedback, schematic_feedback, validate_strategy, FeedbackScheme, Schematic,
};
use crate::hilbert::{collective, Collective, DensityMatrix, OperatorMatrix, StateVector, MAX_QUBITS};
use crate::measures::{self, cn_concurrence};
use crate::spin::{self, build_coupled_basis};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Library(#[from] Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Library(Error::IntegrationFailure { .. }) => 3,
            _ => 1,
        }
    }
}

fn config_err(key: &str, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("key '{key}': {msg}"))
}

#[derive(Parser, Debug, Clone)]
#[command(name = "jumpfeedback", version, about = "Quantum-jump feedback stabilization of many-body singlet states")]
pub struct Args {
    /// Configuration file (`key = value` lines); `-` reads stdin.
    #[arg(long)]
    pub config: PathBuf,
    /// Output CSV path; a `<out>.json` sidecar is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for trajectory ensembles, grids and restarts.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Suppress the summary on stderr.
    #[arg(long)]
    pub quiet: bool,
}

/// A typed configuration value.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Str(String),
    /// `start:step:stop`, inclusive of `stop`.
    Range { start: f64, step: f64, stop: f64 },
    List(Vec<f64>),
}

impl Value {
    fn parse(raw: &str) -> std::result::Result<Value, String> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err("missing value".into());
        }
        if let Some(inner) = raw.strip_prefix('"') {
            return inner
                .strip_suffix('"')
                .map(|s| Value::Str(s.to_string()))
                .ok_or_else(|| "unterminated string".to_string());
        }
        if raw.contains(':') {
            let parts: Vec<&str> = raw.split(':').collect();
            if parts.len() != 3 {
                return Err(format!("range '{raw}' must be start:step:stop"));
            }
            let nums = parts.iter().map(|p| parse_real(p)).collect::<std::result::Result<Vec<_>, _>>()?;
            return Ok(Value::Range { start: nums[0], step: nums[1], stop: nums[2] });
        }
        if raw.contains(',') || raw.starts_with('[') {
            let body = raw.trim_start_matches('[').trim_end_matches(']');
            let nums = body
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(parse_real)
                .collect::<std::result::Result<Vec<_>, _>>()?;
            return Ok(Value::List(nums));
        }
        if let Ok(i) = raw.parse::<i64>() {
            return Ok(Value::Int(i));
        }
        if let Ok(x) = parse_real(raw) {
            return Ok(Value::Real(x));
        }
        Ok(Value::Str(raw.to_string()))
    }

    fn kind(&self) -> &'static str {
        match self {
            Value::Int(_) => "integer",
            Value::Real(_) => "real",
            Value::Str(_) => "string",
            Value::Range { .. } => "range",
            Value::List(_) => "list",
        }
    }
}

/// Reals, with `pi` accepted as a factor: `pi`, `2pi`, `pi/2`, `0.5*pi`.
fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if let Ok(x) = s.parse::<f64>() {
        return Ok(x);
    }
    let bad = || format!("'{s}' is not a number");
    let (num, den) = match s.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim().parse::<f64>().map_err(|_| bad())?),
        None => (s, 1.0),
    };
    let coef = num.strip_suffix("pi").ok_or_else(bad)?.trim().trim_end_matches('*').trim();
    let coef = if coef.is_empty() {
        1.0
    } else if coef == "-" {
        -1.0
    } else {
        coef.parse::<f64>().map_err(|_| bad())?
    };
    Ok(coef * PI / den)
}

/// Drops a `#` comment unless the `#` sits inside a quoted string.
fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Raw `key = value` document; errors cite the offending line.
pub fn parse_document(text: &str) -> Result<BTreeMap<String, Value>, CliError> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = strip_comment(line).trim();
        if line.is_empty() {
            continue;
        }
        let (key, raw) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got '{line}'", lineno + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", lineno + 1)));
        }
        let value = Value::parse(raw).map_err(|m| config_err(key, format!("line {}: {m}", lineno + 1)))?;
        if out.insert(key.to_string(), value).is_some() {
            return Err(config_err(key, format!("line {}: duplicate key", lineno + 1)));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Command {
    #[serde(rename = "dark-basis")]
    DarkBasis,
    #[serde(rename = "validate")]
    Validate,
    #[serde(rename = "evolve")]
    Evolve,
    #[serde(rename = "trajectory")]
    Trajectory,
    #[serde(rename = "ensemble")]
    Ensemble,
    #[serde(rename = "scan-A")]
    ScanA,
    #[serde(rename = "scan-A-eps")]
    ScanAEps,
    #[serde(rename = "concurrence-range")]
    ConcurrenceRange,
}

impl Command {
    const ALL: [Command; 8] = [
        Command::DarkBasis,
        Command::Validate,
        Command::Evolve,
        Command::Trajectory,
        Command::Ensemble,
        Command::ScanA,
        Command::ScanAEps,
        Command::ConcurrenceRange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::DarkBasis => "dark-basis",
            Command::Validate => "validate",
            Command::Evolve => "evolve",
            Command::Trajectory => "trajectory",
            Command::Ensemble => "ensemble",
            Command::ScanA => "scan-A",
            Command::ScanAEps => "scan-A-eps",
            Command::ConcurrenceRange => "concurrence-range",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<_> = Command::ALL.iter().map(|c| c.name()).collect();
            format!("unknown command '{s}' (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackChoice {
    Identity,
    LocalDrive,
    EpsilonPair,
    OneWay,
    TwoWay,
}

impl FromStr for FeedbackChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "identity" | "none" => FeedbackChoice::Identity,
            "local_drive" => FeedbackChoice::LocalDrive,
            "epsilon_pair" => FeedbackChoice::EpsilonPair,
            "one_way" => FeedbackChoice::OneWay,
            "two_way" => FeedbackChoice::TwoWay,
            other => {
                return Err(format!(
                    "unknown feedback '{other}' (expected identity, local_drive, epsilon_pair, one_way, two_way)"
                ))
            }
        })
    }
}

/// Fully resolved experiment: every knob has a value, defaults included.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentSpec {
    pub command: Command,
    #[serde(rename = "N")]
    pub n_qubits: usize,
    #[serde(rename = "Omega")]
    pub omega: f64,
    #[serde(rename = "Gamma")]
    pub gamma_collective: f64,
    pub gamma: Vec<f64>,
    pub feedback: FeedbackChoice,
    pub a: Vec<f64>,
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub eps: f64,
    #[serde(rename = "T")]
    pub duration: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub samples: usize,
    pub n_traj: usize,
    #[serde(rename = "A_grid")]
    pub a_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub initial: String,
    pub t_max: f64,
    pub restarts: usize,
    pub output: Option<PathBuf>,
}

const KNOWN_KEYS: [&str; 20] = [
    "command", "N", "Omega", "Gamma", "gamma", "feedback", "a", "A", "eps", "T", "tolerance", "seed", "samples",
    "n_traj", "A_grid", "eps_grid", "initial", "t_max", "restarts", "output",
];

/// Expands `start:step:stop` to its points, `stop` included when it lies on
/// the grid.
pub fn expand_range(start: f64, step: f64, stop: f64) -> std::result::Result<Vec<f64>, String> {
    if step.is_nan() || step <= 0.0 || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(format!("bad range {start}:{step}:{stop}"));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if count > 1_000_000 {
        return Err(format!("range {start}:{step}:{stop} has {count} points"));
    }
    Ok((0..count).map(|k| start + step * k as f64).collect())
}

struct Reader {
    doc: BTreeMap<String, Value>,
}

impl Reader {
    fn real(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.doc.get(key) {
            None => Ok(default),
            Some(Value::Int(i)) => Ok(*i as f64),
            Some(Value::Real(x)) => Ok(*x),
            Some(v) => Err(config_err(key, format!("expected a real, got a {}", v.kind()))),
        }
    }

    fn int(&self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.doc.get(key) {
            None => Ok(default),
            Some(Value::Int(i)) if *i >= 0 => Ok(*i as u64),
            Some(Value::Int(i)) => Err(config_err(key, format!("must be non-negative, got {i}"))),
            Some(v) => Err(config_err(key, format!("expected an integer, got a {}", v.kind()))),
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.doc.get(key) {
            None => Ok(None),
            Some(Value::Str(s)) => Ok(Some(s.clone())),
            Some(Value::Int(i)) => Ok(Some(i.to_string())),
            Some(v) => Err(config_err(key, format!("expected a string, got a {}", v.kind()))),
        }
    }

    fn grid(&self, key: &str, default: (f64, f64, f64)) -> Result<Vec<f64>, CliError> {
        let points = match self.doc.get(key) {
            None => expand_range(default.0, default.1, default.2).map_err(|m| config_err(key, m))?,
            Some(Value::Range { start, step, stop }) => expand_range(*start, *step, *stop).map_err(|m| config_err(key, m))?,
            Some(Value::List(xs)) => xs.clone(),
            Some(Value::Int(i)) => vec![*i as f64],
            Some(Value::Real(x)) => vec![*x],
            Some(v) => return Err(config_err(key, format!("expected a range or list, got a {}", v.kind()))),
        };
        if points.is_empty() {
            return Err(config_err(key, "grid is empty"));
        }
        Ok(points)
    }

    fn reals(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.doc.get(key) {
            None => Ok(None),
            Some(Value::List(xs)) => Ok(Some(xs.clone())),
            Some(Value::Int(i)) => Ok(Some(vec![*i as f64])),
            Some(Value::Real(x)) => Ok(Some(vec![*x])),
            Some(v) => Err(config_err(key, format!("expected a list of reals, got a {}", v.kind()))),
        }
    }
}

/// Parses and validates a configuration document, filling in defaults:
/// `Ω = Γ = 1`, `γ = 10⁻³`, tolerance `10⁻⁸`, seed 42.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, CliError> {
    let doc = parse_document(text)?;
    if let Some(key) = doc.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(config_err(key, "unknown key"));
    }
    let r = Reader { doc };
    let command: Command = r
        .string("command")?
        .ok_or_else(|| config_err("command", "required"))?
        .parse()
        .map_err(|m| config_err("command", m))?;
    let n = r.int("N", 4)? as usize;
    if !(1..=MAX_QUBITS).contains(&n) {
        return Err(config_err("N", format!("must be between 1 and {MAX_QUBITS}, got {n}")));
    }
    let gamma = match r.reals("gamma")? {
        None => vec![1e-3; n],
        Some(g) if g.len() == 1 => vec![g[0]; n],
        Some(g) if g.len() == n => g,
        Some(g) => return Err(config_err("gamma", format!("expected 1 or {n} rates, got {}", g.len()))),
    };
    let feedback: FeedbackChoice = match r.string("feedback")? {
        Some(s) => s.parse().map_err(|m| config_err("feedback", m))?,
        None if matches!(command, Command::ScanA | Command::ScanAEps) => FeedbackChoice::EpsilonPair,
        None => FeedbackChoice::Identity,
    };
    let spec = ExperimentSpec {
        command,
        n_qubits: n,
        omega: r.real("Omega", 1.0)?,
        gamma_collective: r.real("Gamma", 1.0)?,
        gamma,
        feedback,
        a: r.reals("a")?.unwrap_or_default(),
        amplitude: r.real("A", FRAC_PI_2)?,
        eps: r.real("eps", 0.0)?,
        duration: r.real("T", 100.0)?,
        tolerance: r.real("tolerance", 1e-8)?,
        seed: r.int("seed", 42)?,
        samples: r.int("samples", 100)? as usize,
        n_traj: r.int("n_traj", 100)? as usize,
        a_grid: r.grid("A_grid", (0.0, 0.1, 2.0 * PI))?,
        eps_grid: r.grid("eps_grid", (0.0, 0.05, 0.5))?,
        initial: r.string("initial")?.unwrap_or_else(|| "ground".into()),
        t_max: r.real("t_max", 1e6)?,
        restarts: r.int("restarts", 100)? as usize,
        output: r.string("output")?.map(PathBuf::from),
    };
    spec.check()?;
    Ok(spec)
}

impl ExperimentSpec {
    fn check(&self) -> Result<(), CliError> {
        let nonneg = |key: &str, x: f64| {
            if x.is_finite() && x >= 0.0 {
                Ok(())
            } else {
                Err(config_err(key, format!("must be finite and non-negative, got {x}")))
            }
        };
        let positive = |key: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(config_err(key, format!("must be positive, got {x}")))
            }
        };
        nonneg("Omega", self.omega)?;
        nonneg("Gamma", self.gamma_collective)?;
        for &g in &self.gamma {
            nonneg("gamma", g)?;
        }
        positive("T", self.duration)?;
        positive("tolerance", self.tolerance)?;
        positive("t_max", self.t_max)?;
        for (key, v) in [("samples", self.samples), ("n_traj", self.n_traj), ("restarts", self.restarts)] {
            if v == 0 {
                return Err(config_err(key, "must be at least 1"));
            }
        }
        let scan = matches!(self.command, Command::ScanA | Command::ScanAEps);
        if (self.feedback == FeedbackChoice::EpsilonPair || scan) && self.n_qubits != 4 {
            let key = if scan { "N" } else { "feedback" };
            return Err(config_err(key, format!("the ε-pair feedback acts on exactly 4 qubits, N = {}", self.n_qubits)));
        }
        if scan && self.feedback != FeedbackChoice::EpsilonPair {
            return Err(config_err("feedback", "scans sweep the epsilon_pair feedback"));
        }
        if self.feedback == FeedbackChoice::LocalDrive && self.a.len() != self.n_qubits {
            return Err(config_err("a", format!("local_drive needs {} amplitudes, got {}", self.n_qubits, self.a.len())));
        }
        if matches!(self.feedback, FeedbackChoice::OneWay | FeedbackChoice::TwoWay) && self.n_qubits % 2 == 1 {
            return Err(config_err("feedback", "schematic feedback needs a singlet target (even N)"));
        }
        if self.command == Command::ConcurrenceRange && !matches!(self.n_qubits, 2 | 4 | 6 | 8) {
            return Err(config_err("N", "concurrence-range supports N = 2, 4, 6, 8"));
        }
        if matches!(self.command, Command::DarkBasis | Command::Validate) && self.n_qubits % 2 == 1 {
            return Err(config_err("N", "there is no singlet sector for odd N"));
        }
        let needs_pure = matches!(self.command, Command::Trajectory | Command::Ensemble);
        self.initial_state(needs_pure).map(|_| ())
    }

    /// Target of overlaps and feedback: `ψ_t` for four qubits, otherwise the
    /// first dark basis vector; `None` for odd `N`.
    pub fn target(&self) -> Option<StateVector> {
        match self.n_qubits {
            4 => Some(spin::target_singlet()),
            n if n % 2 == 0 => spin::dark_basis(n).ok().and_then(|b| b.into_iter().next()),
            _ => None,
        }
    }

    fn initial_state(&self, pure: bool) -> Result<DensityMatrix, CliError> {
        let n = self.n_qubits;
        let bad = |m: &str| config_err("initial", m);
        let psi = match self.initial.as_str() {
            "ground" => StateVector::ground(n),
            "excited" => StateVector::basis(&"e".repeat(n))?,
            "mixed" if pure => return Err(bad("trajectories need a pure initial state")),
            "mixed" => return Ok(DensityMatrix::maximally_mixed(n)),
            "target" => self.target().ok_or_else(|| bad("no singlet target for odd N"))?,
            "bell_pair" if n == 4 => spin::bell_pair_singlet(),
            label if label.len() == n && label.chars().all(|c| matches!(c, 'g' | 'e' | '0' | '1')) => {
                StateVector::basis(label)?
            }
            other => {
                return Err(bad(&format!(
                    "'{other}' is not ground, excited, mixed, target, bell_pair or a {n}-letter g/e label"
                )))
            }
        };
        Ok(psi.projector())
    }

    fn initial_pure(&self) -> Result<StateVector, CliError> {
        let rho = self.initial_state(true)?;
        // rank one by construction; recover the vector from its eigensystem
        let (values, vectors) = crate::linalg::eigh(&rho.entries().view());
        let top = values.len() - 1;
        Ok(StateVector::new(vectors.column(top).to_owned())?)
    }

    pub fn scheme_with(&self, amplitude: f64, eps: f64) -> Result<FeedbackScheme, CliError> {
        Ok(match self.feedback {
            FeedbackChoice::Identity => FeedbackScheme::identity(self.n_qubits),
            FeedbackChoice::LocalDrive => local_drive_feedback(&self.a)?,
            FeedbackChoice::EpsilonPair => epsilon_pair_feedback(amplitude, eps)?,
            FeedbackChoice::OneWay | FeedbackChoice::TwoWay => {
                let kind = if self.feedback == FeedbackChoice::OneWay { Schematic::OneWay } else { Schematic::TwoWay };
                let target = self.target().ok_or_else(|| config_err("feedback", "no singlet target"))?;
                schematic_feedback(kind, &build_coupled_basis(self.n_qubits)?, &target)?
            }
        })
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        self.sim_config_with(self.scheme_with(self.amplitude, self.eps)?)
    }

    fn sim_config_with(&self, scheme: FeedbackScheme) -> Result<SimConfig, CliError> {
        let cfg = SimConfig {
            n_qubits: self.n_qubits,
            omega: self.omega,
            gamma_collective: self.gamma_collective,
            gamma_spont: self.gamma.clone(),
            scheme,
            duration: self.duration,
            tolerance: self.tolerance,
            seed: self.seed,
            samples: self.samples,
            t_max: self.t_max,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The spec written back as a configuration document.
    pub fn to_config_text(&self) -> String {
        let list = |xs: &[f64]| xs.iter().map(|x| fmt_real(*x)).collect::<Vec<_>>().join(", ");
        let mut lines = vec![
            format!("command = {}", self.command.name()),
            format!("N = {}", self.n_qubits),
            format!("Omega = {}", fmt_real(self.omega)),
            format!("Gamma = {}", fmt_real(self.gamma_collective)),
            format!("gamma = [{}]", list(&self.gamma)),
            format!("feedback = {}", serde_json::to_value(self.feedback).expect("enum").as_str().expect("string")),
            format!("A = {}", fmt_real(self.amplitude)),
            format!("eps = {}", fmt_real(self.eps)),
            format!("T = {}", fmt_real(self.duration)),
            format!("tolerance = {}", fmt_real(self.tolerance)),
            format!("seed = {}", self.seed),
            format!("samples = {}", self.samples),
            format!("n_traj = {}", self.n_traj),
            format!("A_grid = [{}]", list(&self.a_grid)),
            format!("eps_grid = [{}]", list(&self.eps_grid)),
            format!("initial = \"{}\"", self.initial),
            format!("t_max = {}", fmt_real(self.t_max)),
            format!("restarts = {}", self.restarts),
        ];
        if !self.a.is_empty() {
            lines.push(format!("a = [{}]", list(&self.a)));
        }
        lines.join("\n") + "\n"
    }
}

/// 17 significant digits: enough for an exact `f64` round trip.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// What a command produced: CSV columns and rows plus extra sidecar data.
#[derive(Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub extra: serde_json::Value,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
    /// Set when some numerical result did not converge.
    pub non_converged: usize,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            extra: json!({}),
            summary: Vec::new(),
            non_converged: 0,
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

fn overlap_or_nan<S: measures::Overlap>(state: &S, target: &Option<StateVector>) -> Result<f64, CliError> {
    match target {
        Some(t) => Ok(measures::overlap(state, t)?),
        None => Ok(f64::NAN),
    }
}

fn jz_operator(n: usize) -> Result<OperatorMatrix, CliError> {
    Ok(collective(Collective::Z, n)?.scale(crate::linalg::C64::new(0.5, 0.0)))
}

fn run_dark_basis(spec: &ExperimentSpec) -> Result<Table, CliError> {
    let n = spec.n_qubits;
    let dark = spin::dark_basis(n)?;
    let mut table = Table::new(&["vector", "basis_state", "re", "im"]);
    for (k, v) in dark.iter().enumerate() {
        for (i, z) in v.amplitudes().iter().enumerate() {
            if z.norm() > 1e-15 {
                table.push(vec![k.to_string(), crate::hilbert::basis_label(i, n), fmt_real(z.re), fmt_real(z.im)]);
            }
        }
    }
    let basis = build_coupled_basis(n)?;
    let multiplicities: BTreeMap<String, usize> = basis
        .multiplicities()
        .into_iter()
        .map(|(twice_j, m)| (spin::HalfInt::from_doubled(twice_j).to_string(), m))
        .collect();
    table.extra = json!({ "dark_dimension": dark.len(), "sector_multiplicities": multiplicities });
    table.summary.push(format!("N = {n}: dark subspace of dimension {}", dark.len()));
    Ok(table)
}

fn run_validate(spec: &ExperimentSpec) -> Result<Table, CliError> {
    let cfg = spec.sim_config()?;
    let target = spec.target().ok_or_else(|| config_err("N", "no singlet target for odd N"))?;
    let basis = build_coupled_basis(spec.n_qubits)?;
    let report = validate_strategy(cfg.scheme.unitary(), &target, &basis)?;
    let mut table = Table::new(&["from", "to", "kind"]);
    for e in &report.edges {
        let kind = serde_json::to_value(e.kind)?.as_str().unwrap_or_default().to_string();
        table.push(vec![e.from.to_string(), e.to.to_string(), kind]);
    }
    table.summary.push(format!(
        "protected = {}, reachable = {}, max_leak = {:.3e}, blocking = [{}]",
        report.protected,
        report.reachable,
        report.max_leak,
        report.blocking_sectors.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("; ")
    ));
    table.extra = json!({ "report": report.to_json(), "has_jump_cycle": report.has_jump_cycle() });
    Ok(table)
}

fn run_evolve(spec: &ExperimentSpec) -> Result<Table, CliError> {
    let cfg = spec.sim_config()?;
    let rho0 = spec.initial_state(false)?;
    let run = dynamics::evolve_master(&rho0, spec.duration, &cfg)?;
    let target = spec.target();
    let jz = jz_operator(spec.n_qubits)?;
    let mut table = Table::new(&["t", "overlap", "purity", "jz"]);
    for (t, rho) in run.times.iter().zip(&run.states) {
        let ov = overlap_or_nan(rho, &target)?;
        let m = crate::hilbert::expectation(&jz, rho)?.re;
        table.push(vec![fmt_real(*t), fmt_real(ov), fmt_real(rho.purity()), fmt_real(m)]);
    }
    let last = run.final_state();
    table.summary.push(format!(
        "t = {}: overlap {:.6}, purity {:.6}",
        spec.duration,
        overlap_or_nan(last, &target)?,
        last.purity()
    ));
    table.extra = json!({
        "steps": run.steps,
        "max_trace_drift": run.max_trace_drift,
        "max_hermitian_deviation": run.max_hermitian_deviation,
    });
    Ok(table)
}

fn run_trajectory_cmd(spec: &ExperimentSpec) -> Result<Table, CliError> {
    let cfg = spec.sim_config()?;
    let psi0 = spec.initial_pure()?;
    let rec = dynamics::run_trajectory(&psi0, spec.duration, spec.seed, &cfg)?;
    let target = spec.target();
    let jz = jz_operator(spec.n_qubits)?;
    let mut table = Table::new(&["t", "overlap", "jz", "jumps_so_far"]);
    for (t, psi) in rec.sample_times.iter().zip(&rec.states) {
        let so_far = rec.jumps.iter().filter(|j| j.time <= *t).count();
        let m = crate::hilbert::expectation(&jz, psi)?.re;
        table.push(vec![fmt_real(*t), fmt_real(overlap_or_nan(psi, &target)?), fmt_real(m), so_far.to_string()]);
    }
    table.summary.push(format!("{} jumps up to t = {}", rec.n_jumps(), spec.duration));
    table.extra = json!({ "jumps": rec.jumps });
    Ok(table)
}

fn run_ensemble_cmd(spec: &ExperimentSpec) -> Result<Table, CliError> {
    let cfg = spec.sim_config()?;
    let psi0 = spec.initial_pure()?;
    let target = spec.target();
    let mut observables = vec![jz_operator(spec.n_qubits)?];
    if let Some(t) = &target {
        observables.push(OperatorMatrix::new(t.projector().into_entries())?);
    }
    let est = dynamics::ensemble_average(&psi0, spec.duration, spec.n_traj, spec.seed, &cfg, &observables)?;
    let mut table = Table::new(&["t", "overlap_mean", "overlap_stderr", "jz_mean", "jz_stderr", "purity"]);
    for (i, t) in est.sample_times.iter().enumerate() {
        let (ov, ov_se) = if target.is_some() {
            (est.observable_means[1][i], est.observable_std_errors[1][i])
        } else {
            (f64::NAN, f64::NAN)
        };
        table.push(vec![
            fmt_real(*t),
            fmt_real(ov),
            fmt_real(ov_se),
            fmt_real(est.observable_means[0][i]),
            fmt_real(est.observable_std_errors[0][i]),
            fmt_real(est.rho_hat[i].purity()),
        ]);
    }
    table.summary.push(format!("{} trajectories, {} jumps in total", est.n_trajectories, est.total_jumps));
    table.extra = json!({ "n_trajectories": est.n_trajectories, "total_jumps": est.total_jumps });
    Ok(table)
}

struct Point {
    overlap: f64,
    converged: bool,
    residual: f64,
}

fn steady_overlap(spec: &ExperimentSpec, amplitude: f64, eps: f64, gamma: &[f64]) -> Result<Point, CliError> {
    let mut cfg = spec.sim_config_with(epsilon_pair_feedback(amplitude, eps)?)?;
    cfg.gamma_spont = gamma.to_vec();
    let rho0 = spec.initial_state(false)?;
    let ss = dynamics::steady_state(&cfg, &rho0)?;
    let target = spin::target_singlet();
    Ok(Point { overlap: measures::overlap(&ss.state, &target)?, converged: ss.converged, residual: ss.residual })
}

fn run_scan_a(spec: &ExperimentSpec) -> Result<Table, CliError> {
    let zero = vec![0.0; spec.n_qubits];
    let points: Vec<Result<(Point, Point), CliError>> = spec
        .a_grid
        .par_iter()
        .map(|&a| Ok((steady_overlap(spec, a, spec.eps, &zero)?, steady_overlap(spec, a, spec.eps, &spec.gamma)?)))
        .collect();
    let mut table =
        Table::new(&["A", "overlap_no_se", "overlap_with_se", "converged_no_se", "converged_with_se", "max_residual"]);
    for (&a, p) in spec.a_grid.iter().zip(points) {
        let (off, on) = p?;
        table.non_converged += usize::from(!off.converged) + usize::from(!on.converged);
        table.push(vec![
            fmt_real(a),
            fmt_real(off.overlap),
            fmt_real(on.overlap),
            off.converged.to_string(),
            on.converged.to_string(),
            fmt_real(off.residual.max(on.residual)),
        ]);
    }
    table.summary.push(format!("{} grid points, {} unconverged solves", spec.a_grid.len(), table.non_converged));
    Ok(table)
}

fn run_scan_a_eps(spec: &ExperimentSpec) -> Result<Table, CliError> {
    let grid: Vec<(f64, f64)> =
        spec.a_grid.iter().flat_map(|&a| spec.eps_grid.iter().map(move |&e| (a, e))).collect();
    let points: Vec<Result<Point, CliError>> =
        grid.par_iter().map(|&(a, e)| steady_overlap(spec, a, e, &spec.gamma)).collect();
    let mut table = Table::new(&["A", "eps", "overlap", "converged", "residual"]);
    for (&(a, e), p) in grid.iter().zip(points) {
        let p = p?;
        table.non_converged += usize::from(!p.converged);
        table.push(vec![fmt_real(a), fmt_real(e), fmt_real(p.overlap), p.converged.to_string(), fmt_real(p.residual)]);
    }
    table.summary.push(format!("{} grid points, {} unconverged solves", grid.len(), table.non_converged));
    Ok(table)
}

fn run_concurrence_range(spec: &ExperimentSpec) -> Result<Table, CliError> {
    let range = measures::dark_concurrence_range(spec.n_qubits, spec.restarts, spec.seed)?;
    let mut table = Table::new(&["N", "min", "max", "n_restarts", "seed"]);
    table.push(vec![
        spec.n_qubits.to_string(),
        fmt_real(range.minimum),
        fmt_real(range.maximum),
        range.restarts.to_string(),
        range.seed.to_string(),
    ]);
    let references: BTreeMap<String, f64> = [
        measures::ReferenceKind::Ghz,
        measures::ReferenceKind::W,
        measures::ReferenceKind::LinearCluster,
    ]
    .into_iter()
    .map(|k| Ok((k.to_string(), cn_concurrence(&measures::reference_state(k, spec.n_qubits)?)?)))
    .collect::<Result<_, Error>>()?;
    table.summary.push(format!("C_N over the dark subspace: [{:.8}, {:.8}]", range.minimum, range.maximum));
    table.extra = json!({
        "local_minima": range.local_minima,
        "local_maxima": range.local_maxima,
        "reference_values": references,
        "cap": measures::cn_cap(spec.n_qubits),
    });
    Ok(table)
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Numerical(format!("serialization failed: {e}"))
    }
}

/// Runs the experiment described by `spec`.
pub fn execute(spec: &ExperimentSpec) -> Result<Table, CliError> {
    match spec.command {
        Command::DarkBasis => run_dark_basis(spec),
        Command::Validate => run_validate(spec),
        Command::Evolve => run_evolve(spec),
        Command::Trajectory => run_trajectory_cmd(spec),
        Command::Ensemble => run_ensemble_cmd(spec),
        Command::ScanA => run_scan_a(spec),
        Command::ScanAEps => run_scan_a_eps(spec),
        Command::ConcurrenceRange => run_concurrence_range(spec),
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the CSV and its `<out>.json` sidecar.
pub fn write_outputs(spec: &ExperimentSpec, table: &Table, out: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;
    let sidecar = json!({
        "spec": spec,
        "config": spec.to_config_text(),
        "code_version": env!("CARGO_PKG_VERSION"),
        "rng": { "algorithm": RNG_ALGORITHM, "seed": spec.seed },
        "results": table.extra,
        "non_converged": table.non_converged,
    });
    let path = sidecar_path(out);
    fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n").map_err(|source| CliError::Io { path, source })
}

/// Whole CLI run; the returned error carries the exit code.
pub fn run(args: &Args) -> Result<(), CliError> {
    let text = if args.config.as_os_str() == "-" {
        std::io::read_to_string(std::io::stdin()).map_err(|source| CliError::Io { path: "-".into(), source })?
    } else {
        fs::read_to_string(&args.config).map_err(|source| CliError::Io { path: args.config.clone(), source })?
    };
    let mut spec = parse_config(&text)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(out) = &args.out {
        spec.output = Some(out.clone());
    }
    let out = spec.output.clone().unwrap_or_else(|| PathBuf::from(format!("{}.csv", spec.command.name())));
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let table = execute(&spec)?;
    write_outputs(&spec, &table, &out)?;
    if !args.quiet {
        for line in &table.summary {
            eprintln!("{line}");
        }
        eprintln!("wrote {} and {}", out.display(), sidecar_path(&out).display());
    }
    if table.non_converged > 0 {
        return Err(CliError::Numerical(format!(
            "{} steady-state solves did not converge within t_max (flagged in {})",
            table.non_converged,
            out.display()
        )));
    }
    Ok(())
}
