//! Univariate Gaussian arithmetic and truncated-normal moments.
//!
//! Every message and belief in the engine is ultimately a [`Gaussian1D`].
//! Products and quotients are carried out on canonical statistics
//! (precision, precision-weighted mean); quotients may leave the proper
//! cone, in which case the result is an improper [`Canonical`] carrier
//! that only becomes a density again after being multiplied back.

use serde::{Deserialize, Serialize};
use libm::{erf, erfc};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use thiserror::Error;

/// Variances below this are clamped on construction. Point masses are
/// represented explicitly elsewhere and never as degenerate Gaussians.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Probability mass below which a truncation is reported as underflowed.
pub const MASS_UNDERFLOW: f64 = 1e-300;

/// Relative size below which a canonical difference is treated as zero.
const CANCELLATION_TOL: f64 = 1e-12;

/// Beyond this standardized distance the upper-tail ratio is evaluated by
/// continued fraction instead of through `erfc`.
const TAIL_SWITCH: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("non-finite Gaussian parameters (mean {mean}, variance {variance})")]
    NonFinite { mean: f64, variance: f64 },
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("improper Gaussian: precision {0} is not positive")]
    Improper(f64),
    #[error("zero-precision quotient with residual tilt {0}")]
    FlatTilt(f64),
    #[error("invalid interval ({lower}, {upper})")]
    InvalidInterval { lower: f64, upper: f64 },
}

/// Univariate Gaussian in moment form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGaussian", into = "RawGaussian")]
pub struct Gaussian1D {
    mean: f64,
    variance: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGaussian {
    mean: f64,
    variance: f64,
}

impl TryFrom<RawGaussian> for Gaussian1D {
    type Error = GaussianError;

    fn try_from(raw: RawGaussian) -> Result<Self, Self::Error> {
        Gaussian1D::new(raw.mean, raw.variance)
    }
}

impl From<Gaussian1D> for RawGaussian {
    fn from(g: Gaussian1D) -> Self {
        RawGaussian {
            mean: g.mean,
            variance: g.variance,
        }
    }
}

impl Gaussian1D {
    pub fn new(mean: f64, variance: f64) -> Result<Self, GaussianError> {
        if !mean.is_finite() || !variance.is_finite() {
            return Err(GaussianError::NonFinite { mean, variance });
        }
        if variance <= 0.0 {
            return Err(GaussianError::NonPositiveVariance(variance));
        }
        Ok(Gaussian1D {
            mean,
            variance: variance.max(VARIANCE_FLOOR),
        })
    }

    pub fn standard() -> Self {
        Gaussian1D {
            mean: 0.0,
            variance: 1.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn precision(&self) -> f64 {
        1.0 / self.variance
    }

    pub fn weighted_mean(&self) -> f64 {
        self.mean / self.variance
    }

    pub fn canonical(&self) -> Canonical {
        Canonical {
            precision: self.precision(),
            weighted_mean: self.weighted_mean(),
        }
    }

    pub fn from_canonical(c: Canonical) -> Result<Self, GaussianError> {
        if !c.precision.is_finite() || !c.weighted_mean.is_finite() {
            return Err(GaussianError::NonFinite {
                mean: c.weighted_mean / c.precision,
                variance: 1.0 / c.precision,
            });
        }
        if c.precision <= 0.0 {
            return Err(GaussianError::Improper(c.precision));
        }
        Gaussian1D::new(c.weighted_mean / c.precision, 1.0 / c.precision)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std_dev();
        std_normal_pdf(z) / self.std_dev()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        normal_cdf((x - self.mean) / self.std_dev())
    }
}

/// Canonical (natural) statistics of a possibly improper Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Canonical {
    pub precision: f64,
    pub weighted_mean: f64,
}

impl Canonical {
    pub const FLAT: Canonical = Canonical {
        precision: 0.0,
        weighted_mean: 0.0,
    };

    pub fn new(precision: f64, weighted_mean: f64) -> Self {
        Canonical {
            precision,
            weighted_mean,
        }
    }

    pub fn is_proper(&self) -> bool {
        self.precision > 0.0
    }

    pub fn is_flat(&self) -> bool {
        self.precision == 0.0 && self.weighted_mean == 0.0
    }

    pub fn product(self, other: Canonical) -> Canonical {
        Canonical {
            precision: self.precision + other.precision,
            weighted_mean: self.weighted_mean + other.weighted_mean,
        }
    }

    /// Mode of the (normalized) density, defined only when proper.
    pub fn mode(&self) -> Result<f64, GaussianError> {
        Gaussian1D::from_canonical(*self).map(|g| g.mean())
    }
}

/// Truncated-normal statistics of a Gaussian restricted to an interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedMoments {
    pub mass: f64,
    pub mean: f64,
    pub variance: f64,
    /// Set when the interval mass fell below [`MASS_UNDERFLOW`].
    pub underflow: bool,
}

/// Result of dividing two Gaussians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Quotient {
    Proper(Gaussian1D),
    Improper(Canonical),
    Flat,
}

impl Quotient {
    pub fn canonical(&self) -> Canonical {
        match self {
            Quotient::Proper(g) => g.canonical(),
            Quotient::Improper(c) => *c,
            Quotient::Flat => Canonical::FLAT,
        }
    }

    pub fn is_improper(&self) -> bool {
        matches!(self, Quotient::Improper(_))
    }
}

pub fn multiply(a: &Gaussian1D, b: &Gaussian1D) -> Gaussian1D {
    let precision = a.precision() + b.precision();
    let weighted_mean = a.weighted_mean() + b.weighted_mean();
    Gaussian1D {
        mean: weighted_mean / precision,
        variance: (1.0 / precision).max(VARIANCE_FLOOR),
    }
}

/// Divides `num` by `den` by subtracting canonical statistics.
///
/// A non-positive precision yields an improper carrier rather than an
/// error. Exact cancellation of both statistics yields [`Quotient::Flat`];
/// cancellation of the precision alone leaves an unnormalizable linear
/// tilt and is reported as [`GaussianError::FlatTilt`].
pub fn divide(num: &Gaussian1D, den: &Gaussian1D) -> Result<Quotient, GaussianError> {
    divide_canonical(num.canonical(), den.canonical())
}

pub fn divide_canonical(num: Canonical, den: Canonical) -> Result<Quotient, GaussianError> {
    let precision = num.precision - den.precision;
    let weighted_mean = num.weighted_mean - den.weighted_mean;
    let precision_scale = num.precision.abs().max(den.precision.abs());
    let tilt_scale = num.weighted_mean.abs().max(den.weighted_mean.abs());
    if precision.abs() <= CANCELLATION_TOL * precision_scale {
        if weighted_mean.abs() <= CANCELLATION_TOL * tilt_scale {
            return Ok(Quotient::Flat);
        }
        return Err(GaussianError::FlatTilt(weighted_mean));
    }
    let c = Canonical::new(precision, weighted_mean);
    if precision > 0.0 {
        Ok(Quotient::Proper(Gaussian1D::from_canonical(c)?))
    } else {
        Ok(Quotient::Improper(c))
    }
}

/// Mode of the normalized product `a * b`.
pub fn mode_of_product(a: &Gaussian1D, b: &Gaussian1D) -> f64 {
    multiply(a, b).mean()
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF via `erfc`, accurate deep into the lower tail.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 - Φ(z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// Mills ratio `(1 - Φ(z)) / φ(z)` for `z >= 0`.
fn mills_ratio(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z.is_infinite() {
        return 0.0;
    }
    if z < TAIL_SWITCH {
        return normal_sf(z) / std_normal_pdf(z);
    }
    // R(z) = 1/(z + 1/(z + 2/(z + 3/(z + ...))))
    let mut t = z;
    for k in (1..=120).rev() {
        t = z + k as f64 / t;
    }
    1.0 / t
}

/// Standardized moments `(mass, mean, variance)` of N(0,1) on `[lo, hi]`.
fn standard_truncation(lo: f64, hi: f64) -> (f64, f64, f64) {
    if lo >= 0.0 {
        upper_tail_truncation(lo, hi)
    } else if hi <= 0.0 {
        let (mass, mean, var) = upper_tail_truncation(-hi, -lo);
        (mass, -mean, var)
    } else {
        // Interval straddles zero: no tail cancellation in the mass.
        let mass = 0.5 * (erf_scaled(hi) - erf_scaled(lo));
        let (pdf_lo, lo_pdf_lo) = pdf_terms(lo);
        let (pdf_hi, hi_pdf_hi) = pdf_terms(hi);
        let mean = (pdf_lo - pdf_hi) / mass;
        let var = 1.0 + (lo_pdf_lo - hi_pdf_hi) / mass - mean * mean;
        (mass, mean, var)
    }
}

fn erf_scaled(z: f64) -> f64 {
    if z == f64::INFINITY {
        1.0
    } else if z == f64::NEG_INFINITY {
        -1.0
    } else {
        erf(z * FRAC_1_SQRT_2)
    }
}

/// `(φ(z), z φ(z))`, both zero at ±∞.
fn pdf_terms(z: f64) -> (f64, f64) {
    if z.is_infinite() {
        (0.0, 0.0)
    } else {
        let p = std_normal_pdf(z);
        (p, z * p)
    }
}

/// Truncation to `[lo, hi]` with `0 <= lo < hi`, computed relative to φ(lo)
/// so that far-tail intervals keep full relative accuracy.
fn upper_tail_truncation(lo: f64, hi: f64) -> (f64, f64, f64) {
    // e = φ(hi)/φ(lo)
    let e = if hi.is_infinite() {
        0.0
    } else {
        (-0.5 * (hi - lo) * (hi + lo)).exp()
    };
    let scaled_mass = mills_ratio(lo) - if e > 0.0 { mills_ratio(hi) * e } else { 0.0 };
    let mass = std_normal_pdf(lo) * scaled_mass;
    let mean = (1.0 - e) / scaled_mass;
    let hi_e = if e > 0.0 { hi * e } else { 0.0 };
    let var = 1.0 + (lo - hi_e) / scaled_mass - mean * mean;
    (mass, mean, var)
}

/// Mass, mean and variance of `g` restricted to `(lower, upper)`.
pub fn truncated_moments(
    g: &Gaussian1D,
    lower: f64,
    upper: f64,
) -> Result<TruncatedMoments, GaussianError> {
    if lower.is_nan() || upper.is_nan() || lower >= upper {
        return Err(GaussianError::InvalidInterval { lower, upper });
    }
    let sd = g.std_dev();
    let lo = (lower - g.mean) / sd;
    let hi = (upper - g.mean) / sd;
    let (mass, mean, var) = standard_truncation(lo, hi);
    if !(mass >= MASS_UNDERFLOW) || !mean.is_finite() || !var.is_finite() {
        let nearest = if (g.mean - lower).abs() <= (g.mean - upper).abs() {
            lower
        } else {
            upper
        };
        return Ok(TruncatedMoments {
            mass: 0.0,
            mean: nearest,
            variance: 0.0,
            underflow: true,
        });
    }
    Ok(TruncatedMoments {
        mass: mass.min(1.0),
        mean: g.mean + sd * mean,
        variance: (g.variance * var).clamp(0.0, g.variance),
        underflow: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use proptest::prelude::*;

    fn g(m: f64, v: f64) -> Gaussian1D {
        Gaussian1D::new(m, v).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Gaussian1D::new(0.0, 0.0).is_err());
        assert!(Gaussian1D::new(0.0, -1.0).is_err());
        assert!(Gaussian1D::new(f64::NAN, 1.0).is_err());
        assert!(Gaussian1D::new(0.0, f64::INFINITY).is_err());
        assert_eq!(g(0.0, 1e-20).variance(), VARIANCE_FLOOR);
    }

    #[test]
    fn multiply_examples() {
        let p = multiply(&g(0.0, 1.0), &g(0.0, 1.0));
        assert_eq!((p.mean(), p.variance()), (0.0, 0.5));
        let p = multiply(&g(1.0, 2.0), &g(3.0, 2.0));
        assert!((p.mean() - 2.0).abs() < 1e-15 && (p.variance() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn multiply_matches_quadrature() {
        let (a, b) = (g(0.3, 0.7), g(-1.1, 2.5));
        let f = |x: f64| a.pdf(x) * b.pdf(x);
        let (lo, hi) = (-30.0, 30.0);
        let z = oracle::integrate(f, lo, hi, 1e-15);
        let m1 = oracle::integrate(|x| x * f(x), lo, hi, 1e-15) / z;
        let m2 = oracle::integrate(|x| (x - m1).powi(2) * f(x), lo, hi, 1e-15) / z;
        let p = multiply(&a, &b);
        assert!((p.mean() - m1).abs() < 1e-12, "{} vs {}", p.mean(), m1);
        assert!((p.variance() - m2).abs() < 1e-12, "{} vs {}", p.variance(), m2);
    }

    #[test]
    fn divide_examples() {
        assert_eq!(divide(&g(2.0, 1.0), &g(2.0, 1.0)).unwrap(), Quotient::Flat);

        let (a, b) = (g(0.4, 1.3), g(-2.0, 0.6));
        match divide(&multiply(&a, &b), &b).unwrap() {
            Quotient::Proper(r) => {
                assert!((r.mean() - a.mean()).abs() < 1e-12);
                assert!((r.variance() - a.variance()).abs() < 1e-12);
            }
            other => panic!("expected proper quotient, got {other:?}"),
        }

        match divide(&g(0.0, 0.5), &g(0.0, 0.4)).unwrap() {
            Quotient::Improper(c) => {
                assert!((c.precision + 0.5).abs() < 1e-12);
                assert_eq!(c.weighted_mean, 0.0);
            }
            other => panic!("expected improper quotient, got {other:?}"),
        }
    }

    #[test]
    fn divide_pure_tilt_is_error() {
        assert!(matches!(
            divide(&g(1.0, 1.0), &g(2.0, 1.0)),
            Err(GaussianError::FlatTilt(_))
        ));
    }

    #[test]
    fn improper_carrier_recombines() {
        let q = divide(&g(0.0, 0.5), &g(0.0, 0.4)).unwrap();
        let back = q.canonical().product(g(0.0, 0.4).canonical());
        let r = Gaussian1D::from_canonical(back).unwrap();
        assert!((r.variance() - 0.5).abs() < 1e-12);
        assert!(Gaussian1D::from_canonical(q.canonical()).is_err());
    }

    #[test]
    fn truncated_examples() {
        let n = Gaussian1D::standard();
        let t = truncated_moments(&n, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert!((t.mass - 1.0).abs() < 1e-15 && t.mean.abs() < 1e-15);
        assert!((t.variance - 1.0).abs() < 1e-14);

        let t = truncated_moments(&n, 0.0, f64::INFINITY).unwrap();
        assert!((t.mass - 0.5).abs() < 1e-15);
        assert!((t.mean - 0.7978845608028654).abs() < 1e-12);
        assert!((t.variance - 0.3633802276324186).abs() < 1e-12);

        let t = truncated_moments(&g(3.0, 1.0), 2.0, f64::INFINITY).unwrap();
        assert!((t.mass - 0.8413447460685429).abs() < 1e-12);
    }

    #[test]
    fn half_normal_matches_quadrature() {
        let n = Gaussian1D::standard();
        let t = truncated_moments(&n, 0.0, f64::INFINITY).unwrap();
        let (m0, m1, m2) = oracle::truncated_moments(|x| n.pdf(x), 0.0, 40.0);
        assert!((t.mass - m0).abs() < 1e-12);
        assert!((t.mean - m1).abs() < 1e-12);
        assert!((t.variance - m2).abs() < 1e-12);
    }

    #[test]
    fn far_tail_does_not_underflow() {
        // 30 standard deviations out: φ ~ 1e-196, still representable.
        let t = truncated_moments(&Gaussian1D::standard(), 30.0, f64::INFINITY).unwrap();
        assert!(!t.underflow);
        assert!(t.mass > 0.0 && t.mass < 1e-190);
        // Mean of the far tail approaches lo + 1/lo.
        assert!((t.mean - 30.033).abs() < 1e-3);
        assert!(t.variance > 0.0 && t.variance < 1.2e-3);

        let lower_tail = truncated_moments(&Gaussian1D::standard(), f64::NEG_INFINITY, -30.0).unwrap();
        assert!((lower_tail.mean + t.mean).abs() < 1e-12);
    }

    #[test]
    fn underflow_is_flagged() {
        let t = truncated_moments(&g(0.0, 1.0), 60.0, f64::INFINITY).unwrap();
        assert!(t.underflow);
        assert_eq!((t.mass, t.mean, t.variance), (0.0, 60.0, 0.0));
        let t = truncated_moments(&g(100.0, 1.0), f64::NEG_INFINITY, 20.0).unwrap();
        assert!(t.underflow);
        assert_eq!(t.mean, 20.0);
    }

    #[test]
    fn invalid_interval() {
        let n = Gaussian1D::standard();
        assert!(truncated_moments(&n, 1.0, 1.0).is_err());
        assert!(truncated_moments(&n, 2.0, 1.0).is_err());
        assert!(truncated_moments(&n, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn mode_examples() {
        assert_eq!(mode_of_product(&g(1.0, 1.0), &g(1.0, 1.0)), 1.0);
        assert!((mode_of_product(&g(0.0, 1e12), &g(-0.8, 0.2)) + 0.8).abs() < 1e-6);
        assert!((mode_of_product(&g(0.0, 0.5), &g(2.0, 0.5)) - 1.0).abs() < 1e-15);
        assert!(Canonical::new(-1.0, 0.0).mode().is_err());
    }

    fn gaussian() -> impl Strategy<Value = Gaussian1D> {
        (-50.0..50.0f64, -6.0..6.0f64).prop_map(|(m, lv)| g(m, 10f64.powf(lv)))
    }

    proptest! {
        #[test]
        fn canonical_round_trip(a in gaussian()) {
            let r = Gaussian1D::from_canonical(a.canonical()).unwrap();
            prop_assert!((r.mean() - a.mean()).abs() <= 1e-14 * a.mean().abs().max(1e-300) + 1e-300);
            prop_assert!((r.variance() - a.variance()).abs() <= 1e-14 * a.variance());
        }

        #[test]
        fn multiply_commutes_and_associates(a in gaussian(), b in gaussian(), c in gaussian()) {
            let ab = multiply(&a, &b);
            let ba = multiply(&b, &a);
            prop_assert_eq!(ab, ba);
            let l = multiply(&ab, &c);
            let r = multiply(&a, &multiply(&b, &c));
            let scale = l.mean().abs().max(1.0);
            prop_assert!((l.mean() - r.mean()).abs() <= 1e-12 * scale);
            prop_assert!((l.variance() - r.variance()).abs() <= 1e-12 * l.variance());
        }

        #[test]
        fn divide_inverts_multiply(a in gaussian(), b in gaussian()) {
            // Keep the divisor from dominating the product by more than 1e4 in
            // precision, beyond which the subtraction loses the digits of `a`.
            prop_assume!(b.precision() < 1e4 * a.precision());
            let q = divide(&multiply(&a, &b), &b).unwrap();
            let Quotient::Proper(r) = q else { panic!("expected proper, got {q:?}") };
            let scale = a.mean().abs().max(a.std_dev());
            prop_assert!((r.mean() - a.mean()).abs() <= 1e-10 * scale);
            prop_assert!((r.variance() - a.variance()).abs() <= 1e-10 * a.variance());
        }

        #[test]
        fn truncation_never_widens(a in gaussian(), lo in -60.0..60.0f64, w in 0.01..100.0f64) {
            let t = truncated_moments(&a, lo, lo + w).unwrap();
            prop_assert!(t.variance <= a.variance());
            prop_assert!((0.0..=1.0).contains(&t.mass));
        }
    }
}
