//! `ccmp` command-line front end.
//!
//! Settings resolve as built-in defaults, then a JSON config file, then
//! flags. Every result file carries the resolved settings and the tool
//! version; CSV results get a JSON sidecar for that purpose.

use crate::agent::{control_law, elevation_grid, intervention_threshold, AgentConfig, AgentError, Driver, WindProfile};
use crate::chance::{safe_mass, ChanceConstraintSpec, SafeRegion, DEFAULT_DELTA, DEFAULT_MAX_ITERATIONS};
use crate::gaussian::Gaussian1D;
use crate::output::{self, format_float, Cell};
use crate::simulator::{monte_carlo, run_episode, EnvironmentConfig, SimulationError};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::ffi::OsString;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TOOL: &str = "ccmp";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `|a_t|` below this counts as "no action" when locating the threshold.
pub const THRESHOLD_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("inference failed: {0}")]
    Inference(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Inference(_) => 2,
            CliError::Io { .. } => 3,
        }
    }

    fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Inference(e.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Agent(a) => a.into(),
            SimulationError::AllFailed(_) => CliError::Inference(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ccmp", version, about = "Chance-constrained active-inference drone benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// First action as a function of elevation, for one or more variants.
    ControlLaw(ControlLawArgs),
    /// One closed-loop episode.
    Simulate(EpisodeArgs),
    /// Many episodes; per-time violation ratios.
    Mc(MonteCarloArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    Chance,
    Goal,
}

/// Model flags shared by all subcommands. List-valued flags accept comma
/// separated values; only `control-law` may pass more than one.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// JSON settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short = 'T', long, value_delimiter = ',')]
    pub horizon: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Vec<f64>,
    #[arg(long = "wind-var", value_delimiter = ',')]
    pub wind_var: Vec<f64>,
    /// Control prior precision.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    #[arg(long, value_enum)]
    pub driver: Option<DriverKind>,
    /// Goal prior mean.
    #[arg(long = "m-x", allow_hyphen_values = true)]
    pub m_x: Option<f64>,
    /// Goal prior variance.
    #[arg(long = "var-x")]
    pub var_x: Option<f64>,
    /// Lower edge of the safe region; `-inf` for none.
    #[arg(long = "safe-lower", allow_hyphen_values = true)]
    pub safe_lower: Option<f64>,
    /// Upper edge of the safe region; `inf` for none.
    #[arg(long = "safe-upper", allow_hyphen_values = true)]
    pub safe_upper: Option<f64>,
    /// Slack of the iterative chance correction.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ControlLawArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Parameter to vary: T, epsilon, v_w or lambda.
    #[arg(long)]
    pub vary: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub values: Vec<f64>,
    #[arg(long = "x-min", allow_hyphen_values = true)]
    pub x_min: Option<f64>,
    #[arg(long = "x-max", allow_hyphen_values = true)]
    pub x_max: Option<f64>,
    #[arg(long = "x-step")]
    pub x_step: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct EpisodeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Episode length in steps.
    #[arg(long)]
    pub length: Option<usize>,
    /// Initial elevation.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long)]
    pub runs: Option<usize>,
}

/// Fully resolved settings; this is what every output echoes. A config
/// file is a partial object with these keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub horizon: usize,
    pub epsilon: f64,
    pub wind_variance: f64,
    pub control_precision: f64,
    pub driver: DriverKind,
    pub goal_mean: f64,
    pub goal_variance: f64,
    /// `null` means unbounded.
    pub safe_lower: Option<f64>,
    pub safe_upper: Option<f64>,
    pub delta: f64,
    pub chance_max_iterations: usize,
    pub em_max_iters: usize,
    pub em_tol: f64,
    /// Used by `simulate` and `mc`; `control-law` always runs in calm air.
    pub wind: WindProfile,
    pub length: usize,
    pub initial_elevation: f64,
    pub seed: u64,
    pub runs: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub x_step: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let agent = AgentConfig::default();
        let env = EnvironmentConfig::default();
        let Driver::Goal { mean, variance } = Driver::reference_goal() else {
            unreachable!()
        };
        Settings {
            horizon: agent.horizon,
            epsilon: 0.01,
            wind_variance: agent.wind_variance,
            control_precision: agent.control_precision,
            driver: DriverKind::Chance,
            goal_mean: mean,
            goal_variance: variance,
            safe_lower: Some(1.0),
            safe_upper: None,
            delta: DEFAULT_DELTA,
            chance_max_iterations: DEFAULT_MAX_ITERATIONS,
            em_max_iters: agent.em_max_iters,
            em_tol: agent.em_tol,
            wind: env.wind,
            length: env.length,
            initial_elevation: env.initial_elevation,
            seed: env.seed,
            runs: 1000,
            x_min: 0.0,
            x_max: 5.0,
            x_step: 0.01,
        }
    }
}

fn bound(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl Settings {
    /// Defaults overlaid with the top-level keys of a JSON object.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let overlay: Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))?;
        let Value::Object(overlay) = overlay else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        let Value::Object(mut base) = serde_json::to_value(Settings::default()).expect("settings serialize") else {
            unreachable!()
        };
        base.extend(overlay);
        serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Config(format!("malformed config: {e}")))
    }

    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Settings::default()),
            Some(p) => Settings::from_json(&std::fs::read_to_string(p).map_err(CliError::io(p))?),
        }
    }

    /// Applies single-valued model flags.
    fn apply(&mut self, m: &ModelArgs) -> Result<(), CliError> {
        fn single<T: Copy>(name: &str, v: &[T]) -> Result<Option<T>, CliError> {
            match v {
                [] => Ok(None),
                [x] => Ok(Some(*x)),
                _ => Err(CliError::Config(format!("--{name} takes a single value here"))),
            }
        }
        if let Some(x) = single("horizon", &m.horizon)? {
            self.horizon = x;
        }
        if let Some(x) = single("epsilon", &m.epsilon)? {
            self.epsilon = x;
        }
        if let Some(x) = single("wind-var", &m.wind_var)? {
            self.wind_variance = x;
        }
        if let Some(x) = single("lambda", &m.lambda)? {
            self.control_precision = x;
        }
        self.apply_scalars(m);
        Ok(())
    }

    fn apply_scalars(&mut self, m: &ModelArgs) {
        if let Some(d) = m.driver {
            self.driver = d;
        }
        if let Some(x) = m.m_x {
            self.goal_mean = x;
        }
        if let Some(x) = m.var_x {
            self.goal_variance = x;
        }
        if let Some(x) = m.safe_lower {
            self.safe_lower = bound(x);
        }
        if let Some(x) = m.safe_upper {
            self.safe_upper = bound(x);
        }
        if let Some(x) = m.delta {
            self.delta = x;
        }
    }

    fn apply_episode(&mut self, e: &EpisodeArgs) -> Result<(), CliError> {
        self.apply(&e.model)?;
        if let Some(s) = e.seed {
            self.seed = s;
        }
        if let Some(l) = e.length {
            self.length = l;
        }
        if let Some(x) = e.x0 {
            self.initial_elevation = x;
        }
        Ok(())
    }

    pub fn safe_region(&self) -> Result<SafeRegion, CliError> {
        SafeRegion::new(
            self.safe_lower.unwrap_or(f64::NEG_INFINITY),
            self.safe_upper.unwrap_or(f64::INFINITY),
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn agent_config(&self) -> Result<AgentConfig, CliError> {
        let driver = match self.driver {
            DriverKind::Chance => Driver::Chance(
                ChanceConstraintSpec::new(self.safe_region()?, self.epsilon)
                    .with_delta(self.delta)
                    .with_max_iterations(self.chance_max_iterations),
            ),
            DriverKind::Goal => Driver::Goal {
                mean: self.goal_mean,
                variance: self.goal_variance,
            },
        };
        let config = AgentConfig {
            horizon: self.horizon,
            wind: self.wind.clone(),
            wind_variance: self.wind_variance,
            control_precision: self.control_precision,
            driver,
            em_max_iters: self.em_max_iters,
            em_tol: self.em_tol,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn environment(&self) -> Result<EnvironmentConfig, CliError> {
        let env = EnvironmentConfig {
            wind: self.wind.clone(),
            wind_variance: self.wind_variance,
            length: self.length,
            initial_elevation: self.initial_elevation,
            seed: self.seed,
            safe_region: self.safe_region()?,
        };
        env.validate()?;
        Ok(env)
    }

    /// Probability the constrained variable may leave the safe region: `ε`
    /// for the chance driver, the goal prior's outside mass otherwise.
    pub fn violation_budget(&self) -> Result<f64, CliError> {
        match self.driver {
            DriverKind::Chance => Ok(self.epsilon),
            DriverKind::Goal => {
                let g = Gaussian1D::new(self.goal_mean, self.goal_variance)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                Ok(1.0 - safe_mass(&g, &self.safe_region()?))
            }
        }
    }
}

/// A parameter swept by `control-law`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Varied {
    Horizon,
    Epsilon,
    WindVariance,
    Lambda,
}

impl Varied {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "T" | "horizon" => Ok(Varied::Horizon),
            "epsilon" | "eps" => Ok(Varied::Epsilon),
            "v_w" | "wind-var" | "wind_variance" => Ok(Varied::WindVariance),
            "lambda" => Ok(Varied::Lambda),
            other => Err(CliError::Config(format!(
                "cannot vary '{other}'; expected one of T, epsilon, v_w, lambda"
            ))),
        }
    }

    fn label(self) -> &'static str {
        match self {
            Varied::Horizon => "T",
            Varied::Epsilon => "epsilon",
            Varied::WindVariance => "v_w",
            Varied::Lambda => "lambda",
        }
    }

    fn set(self, s: &mut Settings, value: f64) -> Result<(), CliError> {
        match self {
            Varied::Horizon => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(CliError::Config(format!("T must be a positive integer, got {value}")));
                }
                s.horizon = value as usize;
            }
            Varied::Epsilon => s.epsilon = value,
            Varied::WindVariance => s.wind_variance = value,
            Varied::Lambda => s.control_precision = value,
        }
        Ok(())
    }
}

/// Works out which parameter is swept, from `--vary/--values` or from a
/// single list-valued model flag.
fn variants(args: &ControlLawArgs) -> Result<Option<(Varied, Vec<f64>)>, CliError> {
    let m = &args.model;
    let lists: Vec<(Varied, Vec<f64>)> = [
        (Varied::Horizon, m.horizon.iter().map(|&t| t as f64).collect::<Vec<_>>()),
        (Varied::Epsilon, m.epsilon.clone()),
        (Varied::WindVariance, m.wind_var.clone()),
        (Varied::Lambda, m.lambda.clone()),
    ]
    .into_iter()
    .filter(|(_, v)| v.len() > 1)
    .collect();
    match (&args.vary, lists.as_slice()) {
        (Some(name), []) => {
            let p = Varied::parse(name)?;
            if args.values.is_empty() {
                return Err(usage(format!("--vary {name} needs --values")));
            }
            Ok(Some((p, args.values.clone())))
        }
        (Some(_), _) => Err(CliError::Config("use either --vary/--values or a list-valued flag, not both".into())),
        (None, []) if !args.values.is_empty() => Err(CliError::Config("--values needs --vary".into())),
        (None, []) => Ok(None),
        (None, [one]) => Ok(Some(one.clone())),
        (None, _) => Err(CliError::Config("only one parameter can be varied at a time".into())),
    }
}

fn usage(msg: String) -> CliError {
    let mut cmd = Cli::command();
    let sub = cmd
        .find_subcommand_mut("control-law")
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default();
    CliError::Usage(format!("{msg}\n\n{sub}"))
}

fn echo(command: &str, settings: &Settings) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("tool".into(), json!(TOOL));
    m.insert("version".into(), json!(VERSION));
    m.insert("command".into(), json!(command));
    m.insert("settings".into(), serde_json::to_value(settings).expect("settings serialize"));
    m
}

/// Environment settings still at values chosen by this repository rather
/// than supplied by the user; echoed so results are not mistaken for
/// reference magnitudes.
fn repo_defaults(settings: &Settings) -> Vec<&'static str> {
    let d = Settings::default();
    let mut keys = Vec::new();
    if settings.wind == d.wind {
        keys.push("wind");
    }
    if settings.length == d.length {
        keys.push("length");
    }
    if settings.initial_elevation == d.initial_elevation {
        keys.push("initial_elevation");
    }
    keys
}

fn write_json(path: &Path, doc: serde_json::Map<String, Value>) -> Result<(), CliError> {
    output::write_json(path, &Value::Object(doc)).map_err(CliError::io(path))
}

fn default_out(out: &Option<PathBuf>, name: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from(name))
}

pub fn cmd_control_law(args: &ControlLawArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut base = Settings::load(args.model.config.as_deref())?;
    let sweep = variants(args)?;
    // List-valued flags are consumed by the sweep; the rest apply as usual.
    let mut single = args.model.clone();
    if let Some((p, _)) = &sweep {
        match p {
            Varied::Horizon => single.horizon.clear(),
            Varied::Epsilon => single.epsilon.clear(),
            Varied::WindVariance => single.wind_var.clear(),
            Varied::Lambda => single.lambda.clear(),
        }
    }
    base.apply(&single)?;
    if let Some(x) = args.x_min {
        base.x_min = x;
    }
    if let Some(x) = args.x_max {
        base.x_max = x;
    }
    if let Some(x) = args.x_step {
        base.x_step = x;
    }
    let grid = elevation_grid(base.x_min, base.x_max, base.x_step);
    if grid.is_empty() {
        return Err(usage(format!(
            "empty elevation grid (x-min {}, x-max {}, x-step {})",
            base.x_min, base.x_max, base.x_step
        )));
    }
    let runs: Vec<(String, Settings)> = match &sweep {
        None => vec![("reference".to_string(), base.clone())],
        Some((p, values)) => values
            .iter()
            .map(|&v| {
                let mut s = base.clone();
                p.set(&mut s, v)?;
                Ok((format!("{}={}", p.label(), format_float(v)), s))
            })
            .collect::<Result<_, CliError>>()?,
    };

    let mut rows = Vec::new();
    let mut meta_variants = Vec::new();
    for (label, s) in &runs {
        let config = s.agent_config()?;
        let law = control_law(&config, &grid, 0)?;
        if let Some(bad) = law.iter().find(|p| p.error.is_some()) {
            return Err(CliError::Inference(format!(
                "{label}, x = {}: {}",
                bad.elevation,
                bad.error.as_deref().unwrap_or_default()
            )));
        }
        for p in &law {
            rows.push(vec![
                Cell::Float(p.elevation),
                Cell::Float(p.action.unwrap_or(f64::NAN)),
                Cell::Text(label.clone()),
            ]);
        }
        meta_variants.push(json!({
            "label": label,
            "agent": config,
            "intervention_threshold": intervention_threshold(&law, THRESHOLD_TOL),
            "not_converged": law.iter().filter(|p| !p.converged).count(),
        }));
    }

    let out = default_out(&args.model.out, "control_law.csv");
    output::write_csv(&out, &["x_t", "a_t", "variant"], &rows).map_err(CliError::io(&out))?;
    let meta_path = output::sidecar_path(&out, "meta.json");
    let mut meta = echo("control-law", &base);
    meta.insert(
        "varied".into(),
        json!(sweep.as_ref().map(|(p, v)| json!({"parameter": p.label(), "values": v}))),
    );
    meta.insert("threshold_tolerance".into(), json!(THRESHOLD_TOL));
    meta.insert("variants".into(), Value::Array(meta_variants));
    write_json(&meta_path, meta)?;
    Ok(vec![out, meta_path])
}

pub fn cmd_simulate(args: &EpisodeArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut s = Settings::load(args.model.config.as_deref())?;
    s.apply_episode(args)?;
    let agent = s.agent_config()?;
    let env = s.environment()?;
    let record = run_episode(&env, &agent)?;
    let out = default_out(&args.model.out, "episode.json");
    let mut doc = echo("simulate", &s);
    doc.insert("repo_defaults".into(), json!(repo_defaults(&s)));
    doc.insert("agent".into(), json!(agent));
    doc.insert("environment".into(), json!(env));
    doc.insert("record".into(), json!(record));
    write_json(&out, doc)?;
    match record.error {
        Some(e) => Err(CliError::Inference(format!("{e} (partial record written to {})", out.display()))),
        None => Ok(vec![out]),
    }
}

pub fn cmd_monte_carlo(args: &MonteCarloArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut s = Settings::load(args.episode.model.config.as_deref())?;
    s.apply_episode(&args.episode)?;
    if let Some(r) = args.runs {
        s.runs = r;
    }
    if s.runs == 0 {
        return Err(CliError::Config("--runs must be at least 1".into()));
    }
    let agent = s.agent_config()?;
    let env = s.environment()?;
    let budget = s.violation_budget()?;
    let summary = monte_carlo(&env, &agent, s.runs)?;
    if summary.failed_runs > 0 {
        log::warn!("{} of {} episodes failed", summary.failed_runs, s.runs);
    }

    let rows: Vec<Vec<Cell>> = summary
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let band = summary.elevation_bands[t];
            vec![
                Cell::Int(t as u64),
                Cell::Float(summary.violation_ratio[i]),
                Cell::Int(summary.violating_runs[i] as u64),
                Cell::Float(band.q05),
                Cell::Float(band.q50),
                Cell::Float(band.q95),
            ]
        })
        .collect();
    let out = default_out(&args.episode.model.out, "mc.csv");
    output::write_csv(
        &out,
        &["t", "violation_ratio", "violating_runs", "x_q05", "x_q50", "x_q95"],
        &rows,
    )
    .map_err(CliError::io(&out))?;

    let summary_path = output::sidecar_path(&out, "summary.json");
    let mut doc = echo("mc", &s);
    doc.insert("repo_defaults".into(), json!(repo_defaults(&s)));
    doc.insert("agent".into(), json!(agent));
    doc.insert("environment".into(), json!(env));
    doc.insert("max_violation".into(), json!(summary.max_violation));
    doc.insert("violation_budget".into(), json!(budget));
    doc.insert("exceeds_budget".into(), json!(summary.max_violation > budget));
    doc.insert("summary".into(), json!(summary));
    write_json(&summary_path, doc)?;
    Ok(vec![out, summary_path])
}

pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    match &cli.command {
        Command::ControlLaw(a) => cmd_control_law(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Mc(a) => cmd_monte_carlo(a),
    }
}

/// Parses, runs and reports; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
