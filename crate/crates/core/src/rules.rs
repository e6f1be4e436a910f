//! Local message update rules.
//!
//! Sum-product rules for the linear-Gaussian nodes, and the mean-field
//! variational rule used on the control branch of the agent model.

use crate::gaussian::{Canonical, Gaussian1D, GaussianError};
use crate::graph::{Message, NodeKind, SignPattern};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("improper message cannot be propagated through a {0} node")]
    ImproperInput(&'static str),
    #[error("variance parameter must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("missing marginal: {0}")]
    MissingMarginal(&'static str),
    #[error("{0} node has no prior message")]
    NotAPrior(&'static str),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

/// Which addend a backward addition message targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Addend {
    First,
    Second,
}

/// Moment view of an input: `(mean, variance)` with point masses at zero
/// variance and improper messages at negative variance. `None` for
/// uninformative inputs.
fn moments(m: &Message, node: &'static str) -> Result<Option<(f64, f64)>, RuleError> {
    match m {
        Message::Gaussian(g) => Ok(Some((g.mean(), g.variance()))),
        Message::PointMass { value } => Ok(Some((*value, 0.0))),
        Message::Uninformative => Ok(None),
        Message::Improper(c) if c.precision < 0.0 => Ok(Some((c.weighted_mean / c.precision, 1.0 / c.precision))),
        Message::Improper(_) => Err(RuleError::ImproperInput(node)),
    }
}

/// Linear-Gaussian rules are applied formally to negative variances, as in
/// expectation propagation; the outcome may be proper or improper. A sum
/// that cancels to (numerically) zero has no meaningful representation.
fn from_moments(mean: f64, variance: f64, abs_sum: f64, node: &'static str) -> Result<Message, RuleError> {
    // Equal only when no input carried a negative variance.
    if variance == abs_sum {
        return if variance == 0.0 {
            Ok(Message::point_mass(mean))
        } else {
            Ok(Message::Gaussian(Gaussian1D::new(mean, variance)?))
        };
    }
    if variance.abs() <= 1e-12 * abs_sum {
        Err(RuleError::ImproperInput(node))
    } else if variance > 0.0 {
        Ok(Message::Gaussian(Gaussian1D::new(mean, variance)?))
    } else {
        Ok(Message::Improper(Canonical {
            precision: 1.0 / variance,
            weighted_mean: mean / variance,
        }))
    }
}

/// Message toward the sum of an addition node `out = s0 * a + s1 * b`.
pub fn bp_addition_forward(a: &Message, b: &Message, signs: SignPattern) -> Result<Message, RuleError> {
    let (Some((ma, va)), Some((mb, vb))) = (moments(a, "addition")?, moments(b, "addition")?) else {
        if a.is_uninformative() && b.is_uninformative() {
            log::debug!("addition forward: both inputs uninformative");
        }
        return Ok(Message::Uninformative);
    };
    from_moments(signs.0.value() * ma + signs.1.value() * mb, va + vb, va.abs() + vb.abs(), "addition")
}

/// Message toward one addend, given the message from the sum and from the
/// other addend.
pub fn bp_addition_backward(
    sum: &Message,
    other: &Message,
    toward: Addend,
    signs: SignPattern,
) -> Result<Message, RuleError> {
    let (Some((ms, vs)), Some((mo, vo))) = (moments(sum, "addition")?, moments(other, "addition")?) else {
        if sum.is_uninformative() && other.is_uninformative() {
            log::debug!("addition backward: both inputs uninformative");
        }
        return Ok(Message::Uninformative);
    };
    let (s_target, s_other) = match toward {
        Addend::First => (signs.0.value(), signs.1.value()),
        Addend::Second => (signs.1.value(), signs.0.value()),
    };
    from_moments(s_target * (ms - s_other * mo), vs + vo, vs.abs() + vo.abs(), "addition")
}

/// Message through a fixed-variance Gaussian node, in either direction.
pub fn bp_gaussian_node(input: &Message, fixed_variance: f64) -> Result<Message, RuleError> {
    if !(fixed_variance.is_finite() && fixed_variance > 0.0) {
        return Err(RuleError::NonPositiveVariance(fixed_variance));
    }
    match moments(input, "gaussian")? {
        Some((m, v)) => from_moments(m, v + fixed_variance, v.abs() + fixed_variance, "gaussian"),
        None => Ok(Message::Uninformative),
    }
}

/// Mean-field message through a fixed-variance Gaussian node:
/// `exp E_q[log N(y | x, v)]` is `N(y | E_q[x], v)` regardless of the
/// spread of `q`.
pub fn variational_gaussian_node(opposite_mean: f64, fixed_variance: f64) -> Result<Message, RuleError> {
    if !(fixed_variance.is_finite() && fixed_variance > 0.0) {
        return Err(RuleError::NonPositiveVariance(fixed_variance));
    }
    Ok(Message::Gaussian(Gaussian1D::new(opposite_mean, fixed_variance)?))
}

/// Variational message toward the control `u_k` of the transition
/// `N(x_{k+1} | x_k + u_k + m_w, v_w)` under the current state marginals.
///
/// Only the state means enter; `q_prev` is a point mass for the observed
/// current state.
pub fn variational_control_message(
    q_prev: &Message,
    q_next: &Gaussian1D,
    wind_mean: f64,
    wind_variance: f64,
) -> Result<Message, RuleError> {
    let prev_mean = match q_prev {
        Message::Gaussian(g) => g.mean(),
        Message::PointMass { value } => *value,
        _ => return Err(RuleError::MissingMarginal("previous state")),
    };
    variational_gaussian_node(q_next.mean() - prev_mean - wind_mean, wind_variance)
}

pub fn prior_message(node: &NodeKind) -> Result<Message, RuleError> {
    match node {
        NodeKind::Prior(g) | NodeKind::GoalPrior(g) => Ok(Message::Gaussian(*g)),
        other => Err(RuleError::NotAPrior(other.name())),
    }
}

/// `N(0, 1/λ)` control prior.
pub fn control_prior(precision: f64) -> Result<Gaussian1D, GaussianError> {
    Gaussian1D::new(0.0, 1.0 / precision)
}
