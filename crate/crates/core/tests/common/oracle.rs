//! Independent numerical oracles used only by tests: adaptive
//! Gauss-Kronrod quadrature, grid integration and bisection.
#![allow(dead_code)]

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

#[derive(PartialEq)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

const INITIAL_PANELS: usize = 16;
const MAX_SPLITS: usize = 50_000;

/// Global adaptive G7/K15 quadrature of `f` on a finite interval: the panel
/// with the largest error estimate is bisected until the summed estimate
/// drops below `tol`, or below roundoff relative to the integral.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut heap = std::collections::BinaryHeap::new();
    let w = (b - a) / INITIAL_PANELS as f64;
    for i in 0..INITIAL_PANELS {
        let lo = a + i as f64 * w;
        let hi = if i + 1 == INITIAL_PANELS { b } else { lo + w };
        let (value, err) = gk15(&f, lo, hi);
        heap.push(Panel { a: lo, b: hi, value, err });
    }
    let (mut total, mut err): (f64, f64) = heap.iter().fold((0.0, 0.0), |(t, e), p| (t + p.value, e + p.err));
    for _ in 0..MAX_SPLITS {
        if err <= tol.max(1e-15 * total.abs()) {
            break;
        }
        let worst = heap.pop().expect("non-empty");
        total -= worst.value;
        err -= worst.err;
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            heap.push(worst);
            break;
        }
        for (lo, hi) in [(worst.a, m), (m, worst.b)] {
            let (value, e) = gk15(&f, lo, hi);
            total += value;
            err += e;
            heap.push(Panel { a: lo, b: hi, value, err: e });
        }
    }
    // Sum small panels first.
    let mut values: Vec<f64> = heap.into_iter().map(|p| p.value).collect();
    values.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    values.iter().sum()
}

/// Integrates over `[a, b]` splitting at every breakpoint inside the range.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    pts.push(b);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.windows(2)
        .map(|w| integrate(&f, w[0], w[1], tol))
        .sum()
}

/// Mass, mean and variance of a density on `[a, b]` by quadrature.
pub fn truncated_moments<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> (f64, f64, f64) {
    let m0 = integrate(&f, a, b, 1e-15);
    let m1 = integrate(|x| x * f(x), a, b, 1e-15) / m0;
    let m2 = integrate(|x| (x - m1).powi(2) * f(x), a, b, 1e-15) / m0;
    (m0, m1, m2)
}

/// Finite window `[mean - k sd, mean + k sd]` intersected with `[lo, hi]`.
pub fn window(mean: f64, sd: f64, lo: f64, hi: f64, k: f64) -> (f64, f64) {
    (lo.max(mean - k * sd), hi.min(mean + k * sd))
}

/// Normal density written out directly, independent of the library.
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Normal CDF by quadrature from a far-left cutoff.
pub fn normal_cdf(x: f64, mean: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    let lo = mean - 40.0 * sd;
    if x <= lo {
        return 0.0;
    }
    if x > mean {
        return 1.0 - integrate(|t| normal_pdf(t, mean, var), x, mean + 40.0 * sd, 1e-16);
    }
    integrate(|t| normal_pdf(t, mean, var), lo, x, 1e-16)
}

/// Bisection root of a monotone function on `[lo, hi]`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    assert!(flo * f(hi) <= 0.0, "root not bracketed");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Inverse of the standard normal CDF by bisection on the quadrature CDF.
pub fn normal_quantile(p: f64) -> f64 {
    bisect(|z| normal_cdf(z, 0.0, 1.0) - p, -40.0, 40.0)
}
