//! Closed-loop environment and Monte-Carlo harness.
//!
//! The environment is `x_{t+1} = x_t + a_t + w_t` with
//! `w_t ~ N(m_{w,t}, v_w)`. Each step the agent observes `x_t`, infers a
//! policy, and the first action is executed.

use crate::agent::{Agent, AgentConfig, AgentError, WindProfile};
use crate::chance::SafeRegion;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid environment: {0}")]
    Config(String),
    #[error("agent and environment disagree on {0}")]
    Mismatch(&'static str),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("all {0} episodes failed")]
    AllFailed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    pub wind: WindProfile,
    pub wind_variance: f64,
    /// Number of steps `L`.
    pub length: usize,
    pub initial_elevation: f64,
    pub seed: u64,
    /// Region used to flag realized violations.
    pub safe_region: SafeRegion,
}

impl Default for EnvironmentConfig {
    /// Repository defaults: downdraft of -1 on `5 <= t < 10`, `L = 20`,
    /// `x_0 = 2`, `v_w = 0.2`.
    fn default() -> Self {
        EnvironmentConfig {
            wind: WindProfile::default_downdraft(),
            wind_variance: 0.2,
            length: 20,
            initial_elevation: 2.0,
            seed: 0,
            safe_region: SafeRegion::above(1.0),
        }
    }
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.length == 0 {
            return Err(SimulationError::Config("length must be at least 1".into()));
        }
        if !(self.wind_variance.is_finite() && self.wind_variance > 0.0) {
            return Err(SimulationError::Config(format!(
                "wind variance must be positive, got {}",
                self.wind_variance
            )));
        }
        if !self.initial_elevation.is_finite() {
            return Err(SimulationError::Config("initial elevation must be finite".into()));
        }
        Ok(())
    }
}

/// Reproducible standard-normal stream: ChaCha20 keystream words mapped to
/// open-interval uniforms and pushed through the inverse normal CDF.
#[derive(Clone, Debug)]
pub struct WindSampler {
    rng: ChaCha20Rng,
    standard: Normal,
}

impl WindSampler {
    pub fn new(seed: u64) -> Self {
        WindSampler {
            rng: ChaCha20Rng::seed_from_u64(seed),
            standard: Normal::standard(),
        }
    }

    /// Uniform on `(0, 1)` from the top 53 bits of the next word.
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u = self.uniform();
        self.standard.inverse_cdf(u)
    }
}

/// Samples `w_t` and returns `(x_{t+1}, w_t)`.
pub fn step(
    elevation: f64,
    action: f64,
    t: usize,
    env: &EnvironmentConfig,
    sampler: &mut WindSampler,
) -> (f64, f64) {
    let w = env.wind.mean_at(t) + env.wind_variance.sqrt() * sampler.standard_normal();
    (elevation + action + w, w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub seed: u64,
    /// `x_0 ..= x_L`
    pub elevations: Vec<f64>,
    /// `a_0 .. a_{L-1}`
    pub actions: Vec<f64>,
    pub winds: Vec<f64>,
    pub wind_means: Vec<f64>,
    /// Whether `x_t` lies outside the safe region, for `t = 1 ..= L`.
    pub violations: Vec<bool>,
    pub em_iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// Set when inference failed and the episode was cut short.
    pub error: Option<String>,
}

impl SimulationRecord {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }
}

fn check_shared(env: &EnvironmentConfig, agent: &AgentConfig) -> Result<(), SimulationError> {
    env.validate()?;
    if env.wind_variance != agent.wind_variance {
        return Err(SimulationError::Mismatch("wind variance"));
    }
    if env.wind != agent.wind {
        return Err(SimulationError::Mismatch("wind profile"));
    }
    Ok(())
}

/// Observe, infer, act, execute for `L` steps.
pub fn run_episode(env: &EnvironmentConfig, agent_config: &AgentConfig) -> Result<SimulationRecord, SimulationError> {
    check_shared(env, agent_config)?;
    let agent = Agent::new(agent_config.clone())?;
    Ok(episode(env, &agent, env.seed))
}

fn episode(env: &EnvironmentConfig, agent: &Agent, seed: u64) -> SimulationRecord {
    let mut sampler = WindSampler::new(seed);
    let mut rec = SimulationRecord {
        seed,
        elevations: vec![env.initial_elevation],
        actions: Vec::with_capacity(env.length),
        winds: Vec::with_capacity(env.length),
        wind_means: Vec::with_capacity(env.length),
        violations: Vec::with_capacity(env.length),
        em_iterations: Vec::with_capacity(env.length),
        converged: Vec::with_capacity(env.length),
        error: None,
    };
    let mut x = env.initial_elevation;
    for t in 0..env.length {
        let policy = match agent.infer_policy(x, t) {
            Ok(p) => p,
            Err(e) => {
                rec.error = Some(format!("t = {t}: {e}"));
                break;
            }
        };
        let a = policy.actions[0];
        let (next, w) = step(x, a, t, env, &mut sampler);
        rec.actions.push(a);
        rec.winds.push(w);
        rec.wind_means.push(env.wind.mean_at(t));
        rec.em_iterations.push(policy.em_iterations);
        rec.converged.push(policy.converged);
        rec.elevations.push(next);
        rec.violations.push(!env.safe_region.contains(next));
        x = next;
    }
    rec
}

/// 5%, 50% and 95% quantiles across runs at one time index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

impl Band {
    fn from_values(values: &mut [f64]) -> Self {
        values.sort_by(f64::total_cmp);
        Band {
            q05: quantile(values, 0.05),
            q50: quantile(values, 0.5),
            q95: quantile(values, 0.95),
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    /// Episodes that completed; ratios are relative to this count.
    pub runs: usize,
    pub failed_runs: usize,
    pub base_seed: u64,
    /// Times `t = 1 ..= L` at which violations are counted.
    pub times: Vec<usize>,
    pub violating_runs: Vec<usize>,
    pub violation_ratio: Vec<f64>,
    pub max_violation: f64,
    /// Per time `0 ..= L`.
    pub elevation_bands: Vec<Band>,
    /// Per time `0 .. L`.
    pub action_bands: Vec<Band>,
    pub failures: Vec<String>,
}

/// Runs `runs` independent episodes with seeds `base_seed + i`.
pub fn monte_carlo(
    env: &EnvironmentConfig,
    agent_config: &AgentConfig,
    runs: usize,
) -> Result<MonteCarloSummary, SimulationError> {
    if runs == 0 {
        return Err(SimulationError::Config("runs must be at least 1".into()));
    }
    check_shared(env, agent_config)?;
    let agent = Agent::new(agent_config.clone())?;
    let records: Vec<SimulationRecord> = (0..runs as u64)
        .into_par_iter()
        .map(|i| episode(env, &agent, env.seed.wrapping_add(i)))
        .collect();
    summarize(&records, env)
}

/// Aggregates completed records in index order.
pub fn summarize(records: &[SimulationRecord], env: &EnvironmentConfig) -> Result<MonteCarloSummary, SimulationError> {
    let (ok, failed): (Vec<_>, Vec<_>) = records.iter().partition(|r| r.is_complete());
    if ok.is_empty() {
        return Err(SimulationError::AllFailed(records.len()));
    }
    let l = env.length;
    let n = ok.len();
    let violating_runs: Vec<usize> = (0..l).map(|t| ok.iter().filter(|r| r.violations[t]).count()).collect();
    let violation_ratio: Vec<f64> = violating_runs.iter().map(|&v| v as f64 / n as f64).collect();
    let max_violation = violation_ratio.iter().cloned().fold(0.0, f64::max);
    let elevation_bands = (0..=l)
        .map(|t| Band::from_values(&mut ok.iter().map(|r| r.elevations[t]).collect::<Vec<_>>()))
        .collect();
    let action_bands = (0..l)
        .map(|t| Band::from_values(&mut ok.iter().map(|r| r.actions[t]).collect::<Vec<_>>()))
        .collect();
    Ok(MonteCarloSummary {
        runs: n,
        failed_runs: failed.len(),
        base_seed: env.seed,
        times: (1..=l).collect(),
        violating_runs,
        violation_ratio,
        max_violation,
        elevation_bands,
        action_bands,
        failures: failed
            .iter()
            .map(|r| format!("seed {}: {}", r.seed, r.error.as_deref().unwrap_or("")))
            .collect(),
    })
}
