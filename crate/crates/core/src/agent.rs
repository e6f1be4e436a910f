//! Lookahead controller for the vertical-drone benchmark.
//!
//! The agent models `T` future transitions
//! `x_{k+1} ~ N(x_k + u_k + m_{w,k}, v_w)` with control prior
//! `u_k ~ N(0, 1/λ)` and attaches an auxiliary node to every future state:
//! either a chance constraint (chance-driven agent) or a fixed Gaussian goal
//! prior (goal-driven agent). Each transition is expanded into a Gaussian
//! node on the control branch and two additions, and inference alternates
//! forward-backward sweeps with re-clamping the controls to the mode of
//! their posterior.

use crate::chance::{ChanceConstraintSpec, CorrectionDiagnostics, SafeRegion};
use crate::gaussian::{Canonical, Gaussian1D, GaussianError};
use crate::graph::{
    run_schedule, Assignments, DirectedEdge, FactorGraph, FactorId, GraphError, Message, MessageBoard, ModelSpec,
    NodeKind, Rule, Schedule, ScheduleError, SignPattern, VariableId,
};
use crate::rules::control_prior;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EM_MAX_ITERS: usize = 50;
pub const DEFAULT_EM_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("control posterior of slice {0} is not normalizable")]
    ControlPosterior(usize),
}

/// Expected wind velocity over time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindProfile {
    Constant { mean: f64 },
    /// `strength` on `start <= t < end`, zero elsewhere.
    Draft { start: usize, end: usize, strength: f64 },
    /// Explicit values; zero past the end.
    Series { means: Vec<f64> },
}

impl WindProfile {
    pub fn calm() -> Self {
        WindProfile::Constant { mean: 0.0 }
    }

    /// Downdraft of -1 on `5 <= t < 10`. A repository default, not a
    /// published setting.
    pub fn default_downdraft() -> Self {
        WindProfile::Draft {
            start: 5,
            end: 10,
            strength: -1.0,
        }
    }

    pub fn mean_at(&self, t: usize) -> f64 {
        match self {
            WindProfile::Constant { mean } => *mean,
            WindProfile::Draft { start, end, strength } => {
                if (*start..*end).contains(&t) {
                    *strength
                } else {
                    0.0
                }
            }
            WindProfile::Series { means } => means.get(t).copied().unwrap_or(0.0),
        }
    }
}

/// What drives the agent toward the safe region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Driver {
    Chance(ChanceConstraintSpec),
    Goal { mean: f64, variance: f64 },
}

impl Driver {
    /// Reference chance constraint: `S = (1, ∞)`, `ε = 0.01`.
    pub fn reference_chance() -> Self {
        Driver::Chance(ChanceConstraintSpec::new(SafeRegion::above(1.0), 0.01))
    }

    /// Goal prior `N(2, 0.18478)`, whose mass below 1 is about 0.01.
    pub fn reference_goal() -> Self {
        Driver::Goal {
            mean: 2.0,
            variance: 0.18478,
        }
    }

    fn node(&self) -> Result<NodeKind, AgentError> {
        Ok(match self {
            Driver::Chance(spec) => NodeKind::ChanceConstraint(*spec),
            Driver::Goal { mean, variance } => NodeKind::GoalPrior(Gaussian1D::new(*mean, *variance)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub horizon: usize,
    pub wind: WindProfile,
    pub wind_variance: f64,
    pub control_precision: f64,
    pub driver: Driver,
    pub em_max_iters: usize,
    pub em_tol: f64,
}

impl Default for AgentConfig {
    /// `T = 1, ε = 0.01, v_w = 0.2, λ = 1e-12`, calm wind.
    fn default() -> Self {
        AgentConfig {
            horizon: 1,
            wind: WindProfile::calm(),
            wind_variance: 0.2,
            control_precision: 1e-12,
            driver: Driver::reference_chance(),
            em_max_iters: DEFAULT_EM_MAX_ITERS,
            em_tol: DEFAULT_EM_TOL,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |s: String| Err(AgentError::Config(s));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.wind_variance.is_finite() && self.wind_variance > 0.0) {
            return bad(format!("wind variance must be positive, got {}", self.wind_variance));
        }
        if !(self.control_precision.is_finite() && self.control_precision > 0.0) {
            return bad(format!("control precision must be positive, got {}", self.control_precision));
        }
        if self.em_max_iters == 0 || !(self.em_tol > 0.0) {
            return bad("EM iteration limit and tolerance must be positive".into());
        }
        match &self.driver {
            Driver::Chance(spec) => spec.validate().map_err(|e| AgentError::Config(e.to_string())),
            Driver::Goal { variance, .. } if !(*variance > 0.0 && variance.is_finite()) => {
                bad(format!("goal variance must be positive, got {variance}"))
            }
            Driver::Goal { .. } => Ok(()),
        }
    }
}

/// Node and edge handles of one transition slice.
#[derive(Clone, Debug)]
pub struct Slice {
    pub control: VariableId,
    pub wind: VariableId,
    pub next_state: VariableId,
    pub auxiliary: FactorId,
    /// Variational message toward the control.
    pub control_message: DirectedEdge,
    /// Control prior message.
    pub prior_message: DirectedEdge,
}

/// The agent's augmented factor graph and its forward-backward schedule.
#[derive(Clone, Debug)]
pub struct AgentModel {
    pub graph: FactorGraph,
    pub schedule: Schedule,
    pub current_state: VariableId,
    pub slices: Vec<Slice>,
}

impl AgentModel {
    pub fn new(config: &AgentConfig) -> Result<Self, AgentError> {
        config.validate()?;
        let t_len = config.horizon;
        let state = |k: usize| format!("x{k}");
        let mut spec = ModelSpec::default();
        spec.variable(state(0));
        spec.factor("obs_x0", NodeKind::PointMassInput, &[&state(0)]);
        let prior = NodeKind::Prior(control_prior(config.control_precision)?);
        let aux = config.driver.node()?;
        for k in 0..t_len {
            let (u, su, sx, w, x, xn) = (
                format!("u{k}"),
                format!("su{k}"),
                format!("sx{k}"),
                format!("w{k}"),
                state(k),
                state(k + 1),
            );
            for v in [&u, &su, &sx, &w, &xn] {
                spec.variable(v.clone());
            }
            spec.factor(format!("pu{k}"), prior.clone(), &[&u]);
            spec.factor(
                format!("n{k}"),
                NodeKind::Gaussian {
                    variance: config.wind_variance,
                },
                &[&u, &su],
            );
            spec.factor(format!("addu{k}"), NodeKind::Addition(SignPattern::SUM), &[&x, &su, &sx]);
            spec.factor(format!("addm{k}"), NodeKind::Addition(SignPattern::SUM), &[&sx, &w, &xn]);
            spec.factor(format!("obs_w{k}"), NodeKind::PointMassInput, &[&w]);
            spec.factor(format!("g{k}"), aux.clone(), &[&xn]);
        }
        spec.factor("end", NodeKind::Terminal, &[&state(t_len)]);
        let graph = FactorGraph::build(&spec)?;

        let var = |name: String| graph.variable_id(&name).expect("declared");
        let fac = |name: String| graph.factor_id(&name).expect("declared");
        let to_f = |v: VariableId, f: FactorId| graph.to_factor(v, f).expect("adjacent");
        let to_v = |f: FactorId, v: VariableId| graph.to_variable(f, v).expect("adjacent");
        let chance = matches!(config.driver, Driver::Chance(_));

        let mut schedule = Schedule::new();
        let mut slices = Vec::with_capacity(t_len);
        // Forward pass.
        for k in 0..t_len {
            let (x, u, su, sx, w, xn) = (
                var(state(k)),
                var(format!("u{k}")),
                var(format!("su{k}")),
                var(format!("sx{k}")),
                var(format!("w{k}")),
                var(state(k + 1)),
            );
            let (pu, n, addu, addm, g) = (
                fac(format!("pu{k}")),
                fac(format!("n{k}")),
                fac(format!("addu{k}")),
                fac(format!("addm{k}")),
                fac(format!("g{k}")),
            );
            let next_factor = if k + 1 < t_len { fac(format!("addu{}", k + 1)) } else { fac("end".into()) };
            if k == 0 {
                schedule.push(to_f(x, addu), Rule::Clamp, "1@0");
            }
            schedule.push(to_f(u, n), Rule::Clamp, format!("2@{k}"));
            schedule.push(to_v(n, su), Rule::Variational, format!("3@{k}"));
            schedule.push(to_v(addu, sx), Rule::SumProduct, format!("4@{k}"));
            schedule.push(to_v(addm, xn), Rule::SumProduct, format!("5@{k}"));
            let aux_rule = if chance { Rule::ChanceConstraint } else { Rule::SumProduct };
            schedule.push(to_v(g, xn), aux_rule, format!("6@{k}"));
            schedule.push(to_f(xn, next_factor), Rule::SumProduct, format!("7@{k}"));
            slices.push(Slice {
                control: u,
                wind: w,
                next_state: xn,
                auxiliary: g,
                control_message: to_v(n, u),
                prior_message: to_v(pu, u),
            });
        }
        // Backward pass.
        for k in (0..t_len).rev() {
            let (x, u, sx, w, xn) = (
                var(state(k)),
                var(format!("u{k}")),
                var(format!("sx{k}")),
                var(format!("w{k}")),
                var(state(k + 1)),
            );
            let su = var(format!("su{k}"));
            let (pu, n, addu, addm, g) = (
                fac(format!("pu{k}")),
                fac(format!("n{k}")),
                fac(format!("addu{k}")),
                fac(format!("addm{k}")),
                fac(format!("g{k}")),
            );
            if k + 1 == t_len {
                schedule.push(to_v(fac("end".into()), xn), Rule::SumProduct, format!("A@{k}"));
            }
            schedule.push(to_f(xn, g), Rule::SumProduct, format!("B@{k}"));
            schedule.push(to_f(xn, addm), Rule::SumProduct, format!("C@{k}"));
            schedule.push(to_v(addm, sx), Rule::SumProduct, format!("D@{k}"));
            schedule.push(to_v(addu, su), Rule::SumProduct, format!("E@{k}"));
            schedule.push(
                to_v(n, u),
                Rule::VariationalControl {
                    previous: x,
                    next: xn,
                    offset: w,
                },
                format!("F@{k}"),
            );
            schedule.push(to_v(pu, u), Rule::SumProduct, format!("G@{k}"));
            schedule.push(to_v(addu, x), Rule::SumProduct, format!("H@{k}"));
        }
        schedule.validate(&graph)?;
        let current_state = var(state(0));

        Ok(AgentModel {
            graph,
            schedule,
            current_state,
            slices,
        })
    }

    /// Clamps for inference at time `t` from elevation `x_t`.
    pub fn assignments(&self, config: &AgentConfig, current_elevation: f64, current_time: usize) -> Assignments {
        let mut a = Assignments::new(&self.graph);
        a.set(self.current_state, current_elevation);
        for (k, s) in self.slices.iter().enumerate() {
            a.set(s.wind, config.wind.mean_at(current_time + k));
            a.set(s.control, 0.0);
        }
        a
    }
}

/// Builds the agent graph and the clamps for inference at time `t`.
pub fn build_agent_graph(
    config: &AgentConfig,
    current_elevation: f64,
    current_time: usize,
) -> Result<(AgentModel, Assignments), AgentError> {
    let model = AgentModel::new(config)?;
    let assignments = model.assignments(config, current_elevation, current_time);
    Ok((model, assignments))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// `a_t, ..., a_{t+T-1}`
    pub actions: Vec<f64>,
    /// Auxiliary-node diagnostics per slice from the final sweep.
    pub diagnostics: Vec<CorrectionDiagnostics>,
    pub em_iterations: usize,
    pub converged: bool,
    /// Backward messages are carried over between EM iterations.
    pub warm_start: bool,
}

/// A configured agent; the graph is built once and re-clamped per step.
#[derive(Clone, Debug)]
pub struct Agent {
    config: AgentConfig,
    model: AgentModel,
}

impl Agent {
    pub fn new(config: AgentConfig) -> Result<Self, AgentError> {
        let model = AgentModel::new(&config)?;
        Ok(Agent { config, model })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn model(&self) -> &AgentModel {
        &self.model
    }

    /// EM over forward-backward sweeps: clamp controls, sweep, re-clamp to
    /// the control posterior's mode, until the actions stop moving.
    ///
    /// Non-convergence is not an error; the last iterate is returned with
    /// `converged = false`.
    pub fn infer_policy(&self, current_elevation: f64, current_time: usize) -> Result<Policy, AgentError> {
        let model = &self.model;
        let mut assignments = model.assignments(&self.config, current_elevation, current_time);
        let mut board = MessageBoard::new(&model.graph);
        let mut actions = vec![0.0; model.slices.len()];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < self.config.em_max_iters {
            iterations += 1;
            for (s, &a) in model.slices.iter().zip(&actions) {
                assignments.set(s.control, a);
            }
            run_schedule(&model.graph, &mut board, &assignments, &model.schedule)?;
            let mut change: f64 = 0.0;
            for (k, s) in model.slices.iter().enumerate() {
                let a = control_mode(&board.get(s.control_message), &board.get(s.prior_message))
                    .ok_or(AgentError::ControlPosterior(k))?;
                change = change.max((a - actions[k]).abs());
                actions[k] = a;
            }
            if change < self.config.em_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            log::debug!("EM did not converge at x = {current_elevation} after {iterations} iterations");
        }
        let diagnostics = model
            .slices
            .iter()
            .map(|s| {
                board
                    .diagnostics(s.auxiliary)
                    .cloned()
                    .unwrap_or_else(CorrectionDiagnostics::skipped)
            })
            .collect();
        Ok(Policy {
            actions,
            diagnostics,
            em_iterations: iterations,
            converged,
            warm_start: true,
        })
    }
}

/// Mode of `q(u) ∝ μ_F(u) μ_G(u)`; falls back to `μ_F` when the prior
/// message is flat.
fn control_mode(variational: &Message, prior: &Message) -> Option<f64> {
    let f = variational.canonical()?;
    let g = prior.canonical()?;
    let joint: Canonical = f.product(g);
    joint.mode().ok().or_else(|| f.mode().ok())
}

pub fn infer_policy(config: &AgentConfig, current_elevation: f64, current_time: usize) -> Result<Policy, AgentError> {
    Agent::new(config.clone())?.infer_policy(current_elevation, current_time)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlLawPoint {
    pub elevation: f64,
    pub action: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

/// First action as a function of the current elevation. The wind profile
/// is ignored: the law is evaluated in calm air.
pub fn control_law(config: &AgentConfig, elevations: &[f64], t: usize) -> Result<Vec<ControlLawPoint>, AgentError> {
    let mut calm = config.clone();
    calm.wind = WindProfile::calm();
    let agent = Agent::new(calm)?;
    Ok(elevations
        .par_iter()
        .map(|&x| match agent.infer_policy(x, t) {
            Ok(p) => ControlLawPoint {
                elevation: x,
                action: Some(p.actions[0]),
                converged: p.converged,
                error: None,
            },
            Err(e) => ControlLawPoint {
                elevation: x,
                action: None,
                converged: false,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

/// Evenly spaced grid from `start` to `stop` inclusive.
pub fn elevation_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Vec::new();
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

/// Lowest grid elevation from which every higher grid point proposes no
/// action (`|a| <= tol`). `None` if the last point still intervenes.
pub fn intervention_threshold(law: &[ControlLawPoint], tol: f64) -> Option<f64> {
    let mut threshold = None;
    for p in law.iter().rev() {
        match p.action {
            Some(a) if a.abs() <= tol => threshold = Some(p.elevation),
            _ => break,
        }
    }
    threshold
}
