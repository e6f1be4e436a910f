//! Chance constraints as auxiliary factor nodes.
//!
//! A chance constraint asks that a belief `q(x)` places at least `1 - ε` of
//! its mass inside a safe region `S`. When the unconstrained belief violates
//! this, the optimal correction rescales the belief piecewise: by
//! `(1 - ε)/Φ` inside `S` and by `ε/(1 - Φ)` outside, where `Φ` is the
//! uncorrected safe mass. Otherwise the constraint is inactive and the
//! belief is left untouched.
//!
//! Because the corrected belief is discontinuous, [`chance_message`]
//! approximates it with a moment-matched Gaussian, re-correcting until the
//! approximation itself satisfies the constraint to within `δ`, and returns
//! the quotient of that Gaussian by the inbound message.

use crate::gaussian::{self, divide, truncated_moments, Gaussian1D, GaussianError, TruncatedMoments};
use crate::graph::Message;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DELTA: f64 = 1e-5;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChanceError {
    #[error("invalid safe region ({lower}, {upper})")]
    InvalidRegion { lower: f64, upper: f64 },
    #[error("invalid constraint: {0}")]
    InvalidSpec(String),
    #[error("belief has no mass in the safe region; widen the priors")]
    SafeMassUnderflow,
    #[error("inbound message must be Gaussian or uninformative, got {0}")]
    UnsupportedInbound(&'static str),
    #[error("re-correction did not reach the target after {} iterations (safe mass {:.6})", .0.iterations, .0.safe_mass_final)]
    NotConverged(CorrectionDiagnostics),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

/// Interval `(lower, upper)`; either bound may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRegion", into = "RawRegion")]
pub struct SafeRegion {
    lower: f64,
    upper: f64,
}

/// JSON has no infinities, so unbounded sides serialize as `null`.
#[derive(Serialize, Deserialize)]
struct RawRegion {
    lower: Option<f64>,
    upper: Option<f64>,
}

impl TryFrom<RawRegion> for SafeRegion {
    type Error = ChanceError;

    fn try_from(r: RawRegion) -> Result<Self, Self::Error> {
        SafeRegion::new(
            r.lower.unwrap_or(f64::NEG_INFINITY),
            r.upper.unwrap_or(f64::INFINITY),
        )
    }
}

impl From<SafeRegion> for RawRegion {
    fn from(s: SafeRegion) -> Self {
        RawRegion {
            lower: s.lower.is_finite().then_some(s.lower),
            upper: s.upper.is_finite().then_some(s.upper),
        }
    }
}

impl SafeRegion {
    pub fn new(lower: f64, upper: f64) -> Result<Self, ChanceError> {
        if lower.is_nan() || upper.is_nan() || lower >= upper || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(ChanceError::InvalidRegion { lower, upper });
        }
        Ok(SafeRegion { lower, upper })
    }

    /// `(threshold, ∞)`
    pub fn above(threshold: f64) -> Self {
        SafeRegion::new(threshold, f64::INFINITY).expect("finite threshold")
    }

    /// `(-∞, threshold)`
    pub fn below(threshold: f64) -> Self {
        SafeRegion::new(f64::NEG_INFINITY, threshold).expect("finite threshold")
    }

    pub fn everything() -> Self {
        SafeRegion {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn is_everything(&self) -> bool {
        self.lower == f64::NEG_INFINITY && self.upper == f64::INFINITY
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    /// Pieces of the real line outside the region.
    pub fn complement(&self) -> impl Iterator<Item = (f64, f64)> {
        let below = self.lower.is_finite().then_some((f64::NEG_INFINITY, self.lower));
        let above = self.upper.is_finite().then_some((self.upper, f64::INFINITY));
        below.into_iter().chain(above)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChanceConstraintSpec {
    pub region: SafeRegion,
    /// Admissible probability of leaving the safe region.
    pub epsilon: f64,
    /// Slack on the re-correction loop guard.
    pub delta: f64,
    pub max_iterations: usize,
}

impl ChanceConstraintSpec {
    pub fn new(region: SafeRegion, epsilon: f64) -> Self {
        ChanceConstraintSpec {
            region,
            epsilon,
            delta: DEFAULT_DELTA,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn validate(&self) -> Result<(), ChanceError> {
        let bad = |s: String| Err(ChanceError::InvalidSpec(s));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.delta >= 0.0) {
            return bad(format!("delta must be non-negative, got {}", self.delta));
        }
        if self.epsilon + self.delta >= 1.0 {
            return bad(format!("epsilon + delta must be below 1, got {}", self.epsilon + self.delta));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        Ok(())
    }

    /// Whether a belief with this safe mass violates the constraint.
    pub fn is_active(&self, safe_mass: f64) -> bool {
        !self.region.is_everything() && safe_mass < 1.0 - self.epsilon
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionDiagnostics {
    pub iterations: usize,
    pub safe_mass_initial: f64,
    pub safe_mass_final: f64,
    /// Optimal multiplier; zero when the constraint is inactive.
    pub eta_star: f64,
    pub activated: bool,
    /// False if the safe mass ever decreased between re-corrections.
    pub monotone: bool,
}

impl CorrectionDiagnostics {
    /// Diagnostics for an uninformative inbound message.
    pub fn skipped() -> Self {
        CorrectionDiagnostics {
            iterations: 0,
            safe_mass_initial: f64::NAN,
            safe_mass_final: f64::NAN,
            eta_star: 0.0,
            activated: false,
            monotone: true,
        }
    }
}

pub fn safe_mass(belief: &Gaussian1D, region: &SafeRegion) -> f64 {
    if region.is_everything() {
        return 1.0;
    }
    truncated_moments(belief, region.lower, region.upper)
        .map(|t| t.mass)
        .unwrap_or(0.0)
}

/// One piece of a piecewise-rescaled Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedPiece {
    pub lower: f64,
    pub upper: f64,
    /// Mass the piece carries after correction.
    pub weight: f64,
    /// The base belief restricted to this piece.
    pub moments: TruncatedMoments,
}

impl WeightedPiece {
    /// Multiplier applied to the base density on this piece.
    pub fn scale(&self) -> f64 {
        if self.moments.mass > 0.0 {
            self.weight / self.moments.mass
        } else {
            0.0
        }
    }
}

/// Exact corrected belief: the base Gaussian rescaled piecewise.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectedBelief {
    pub base: Gaussian1D,
    pub region: SafeRegion,
    /// Safe mass of the base belief.
    pub phi: f64,
    pub active: bool,
    /// The safe piece first, then the unsafe pieces below and above.
    pub pieces: Vec<WeightedPiece>,
}

impl CorrectedBelief {
    pub fn safe_scale(&self) -> f64 {
        self.pieces[0].scale()
    }

    /// Common multiplier of all unsafe pieces.
    pub fn unsafe_scale(&self) -> f64 {
        self.pieces[1..]
            .iter()
            .find(|p| p.moments.mass > 0.0)
            .map(WeightedPiece::scale)
            .unwrap_or(0.0)
    }

    pub fn density(&self, x: f64) -> f64 {
        let scale = if self.region.contains(x) {
            self.safe_scale()
        } else {
            self.unsafe_scale()
        };
        scale * self.base.pdf(x)
    }

    pub fn safe_weight(&self) -> f64 {
        self.pieces[0].weight
    }

    pub fn total_weight(&self) -> f64 {
        self.pieces.iter().map(|p| p.weight).sum()
    }

    /// Mean and variance of the mixture of truncated pieces.
    pub fn moments(&self) -> (f64, f64) {
        let total = self.total_weight();
        let mean = self
            .pieces
            .iter()
            .map(|p| p.weight * p.moments.mean)
            .sum::<f64>()
            / total;
        let var = self
            .pieces
            .iter()
            .map(|p| p.weight * (p.moments.variance + (p.moments.mean - mean).powi(2)))
            .sum::<f64>()
            / total;
        (mean, var)
    }
}

/// Optimal correction of `belief` under `spec`, as a piecewise rescaling.
pub fn correct_belief(belief: &Gaussian1D, spec: &ChanceConstraintSpec) -> Result<CorrectedBelief, ChanceError> {
    let region = spec.region;
    let safe = truncated_moments(belief, region.lower, region.upper)?;
    let mut unsafe_pieces = Vec::with_capacity(2);
    for (lo, hi) in region.complement() {
        unsafe_pieces.push((lo, hi, truncated_moments(belief, lo, hi)?));
    }
    let phi = safe.mass;
    let active = spec.is_active(phi);
    if active && safe.underflow {
        return Err(ChanceError::SafeMassUnderflow);
    }
    let unsafe_mass: f64 = unsafe_pieces.iter().map(|(_, _, t)| t.mass).sum();

    let (safe_weight, unsafe_factor) = if active {
        // The unsafe budget ε is split in proportion to each side's mass,
        // which is a single common multiplier ε/(1 - Φ) on the density.
        (1.0 - spec.epsilon, spec.epsilon / unsafe_mass)
    } else {
        (phi, 1.0)
    };
    let mut pieces = vec![WeightedPiece {
        lower: region.lower,
        upper: region.upper,
        weight: safe_weight,
        moments: safe,
    }];
    pieces.extend(unsafe_pieces.into_iter().map(|(lower, upper, t)| WeightedPiece {
        lower,
        upper,
        weight: t.mass * unsafe_factor,
        moments: t,
    }));
    Ok(CorrectedBelief {
        base: *belief,
        region,
        phi,
        active,
        pieces,
    })
}

/// Gaussian with the mean and variance of the corrected belief.
pub fn moment_match_correction(belief: &Gaussian1D, spec: &ChanceConstraintSpec) -> Result<Gaussian1D, ChanceError> {
    let corrected = correct_belief(belief, spec)?;
    if !corrected.active {
        return Ok(*belief);
    }
    debug_assert!((corrected.safe_weight() - (1.0 - spec.epsilon)).abs() < 1e-12);
    let (mean, var) = corrected.moments();
    Ok(Gaussian1D::new(mean, var)?)
}

/// Optimal multiplier of the active constraint.
pub fn eta_star(phi0: f64, epsilon: f64) -> Result<f64, ChanceError> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(phi0 > 0.0 && phi0 <= 1.0 - epsilon) {
        return Err(ChanceError::InvalidSpec(format!(
            "eta* needs 0 < phi0 <= 1 - epsilon < 1, got phi0 = {phi0}, epsilon = {epsilon}"
        )));
    }
    Ok((epsilon * phi0).ln() - (1.0 - epsilon).ln() - (1.0 - phi0).ln())
}

/// Outbound message of a chance-constraint node given the message flowing
/// into it from its variable.
///
/// The returned message may be an improper Gaussian; it recombines with the
/// inbound message into the moment-matched corrected belief.
pub fn chance_message(
    inbound: &Message,
    spec: &ChanceConstraintSpec,
) -> Result<(Message, CorrectionDiagnostics), ChanceError> {
    spec.validate()?;
    let q0 = match inbound {
        Message::Uninformative => return Ok((Message::Uninformative, CorrectionDiagnostics::skipped())),
        Message::Gaussian(g) => *g,
        Message::PointMass { .. } => return Err(ChanceError::UnsupportedInbound("point mass")),
        Message::Improper(_) => return Err(ChanceError::UnsupportedInbound("improper Gaussian")),
    };

    let phi0 = safe_mass(&q0, &spec.region);
    let mut diag = CorrectionDiagnostics {
        iterations: 0,
        safe_mass_initial: phi0,
        safe_mass_final: phi0,
        eta_star: 0.0,
        activated: spec.is_active(phi0),
        monotone: true,
    };
    if !diag.activated {
        return Ok((Message::Uninformative, diag));
    }
    if phi0 <= gaussian::MASS_UNDERFLOW {
        return Err(ChanceError::SafeMassUnderflow);
    }
    diag.eta_star = eta_star(phi0, spec.epsilon)?;

    let mut approx = q0;
    let mut phi = phi0;
    while spec.epsilon + spec.delta < 1.0 - phi {
        if diag.iterations == spec.max_iterations {
            return Err(ChanceError::NotConverged(diag));
        }
        diag.iterations += 1;
        approx = moment_match_correction(&approx, spec)?;
        let next = safe_mass(&approx, &spec.region);
        if next < phi {
            diag.monotone = false;
            log::warn!(
                "safe mass decreased during re-correction: {phi:.9} -> {next:.9} at iteration {}",
                diag.iterations
            );
        }
        phi = next;
        diag.safe_mass_final = phi;
    }

    if diag.iterations == 0 {
        return Ok((Message::Uninformative, diag));
    }
    Ok((divide(&approx, &q0)?.into(), diag))
}
