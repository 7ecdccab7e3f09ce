//! Numerical integration: fixed Gauss–Legendre rules and adaptive
//! Gauss–Kronrod (7/15) on finite and semi-infinite intervals.

use std::collections::BinaryHeap;
use std::cmp::Ordering;
use std::f64::consts::PI;
use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("quadrature did not converge on [{lower}, {upper}]: estimate {estimate:e}, error {error:e} after {intervals} subintervals")]
pub struct QuadratureError {
    pub lower: f64,
    pub upper: f64,
    pub estimate: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / dp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Cached 64-point Gauss–Legendre rule.
pub fn gauss_legendre_64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(64))
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    let value = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    (value, err)
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]`. Stops when the
/// summed error estimate is below `max(abs_tol, rel_tol * |value|)`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<Integral, QuadratureError> {
    if a == b {
        return Ok(Integral { value: 0.0, error: 0.0, intervals: 0 });
    }
    let (v, e) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value: v, error: e });
    let mut total = v;
    let mut total_err = e;
    let mut count = 1;
    while total_err > abs_tol.max(rel_tol * total.abs()) {
        if count >= max_intervals {
            return Err(QuadratureError { lower: a, upper: b, estimate: total, error: total_err, intervals: count });
        }
        let seg = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (seg.a + seg.b);
        let (v1, e1) = gk15(&f, seg.a, mid);
        let (v2, e2) = gk15(&f, mid, seg.b);
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.error;
        heap.push(Segment { a: seg.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: seg.b, value: v2, error: e2 });
        count += 1;
        if count % 64 == 0 {
            // Re-sum to stop drift from the incremental updates.
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
    Ok(Integral { value: total, error: total_err, intervals: count })
}

/// Adaptive integration over `[a, inf)` via `x = a + t / (1 - t)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<Integral, QuadratureError> {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t;
        let v = f(a + t / s) / (s * s);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, abs_tol, rel_tol, max_intervals).map_err(|mut e| {
        e.lower = a;
        e.upper = f64::INFINITY;
        e
    })
}

/// `2 * int_0^inf cos(omega * x) w(omega) d omega` for an even, integrable,
/// nonnegative weight `w` that decreases in the tail.
///
/// The frequency axis is truncated where the envelope tail drops below
/// `abs_tol`, then split into panels of one half-period of the cosine.
pub fn cosine_transform<F: Fn(f64) -> f64>(w: F, x: f64, abs_tol: f64) -> Result<Integral, QuadratureError> {
    let x = x.abs();
    let tail = |cut: f64| integrate_to_infinity(&w, cut, abs_tol * 0.1, 1e-10, 2_000).map(|i| i.value);
    let mut cut = 1.0;
    while tail(cut)? > 0.25 * abs_tol {
        cut *= 2.0;
        if cut > 1e12 {
            return Err(QuadratureError { lower: 0.0, upper: cut, estimate: f64::NAN, error: f64::INFINITY, intervals: 0 });
        }
    }
    let tail_err = tail(cut)?;
    if x * cut < PI {
        let r = integrate(|o| (o * x).cos() * w(o), 0.0, cut, abs_tol * 0.25, 1e-13, 20_000)?;
        return Ok(Integral { value: 2.0 * r.value, error: 2.0 * (r.error + tail_err), intervals: r.intervals });
    }
    let panel = PI / x;
    let panels = (cut / panel).ceil() as usize;
    if panels > 2_000_000 {
        return Err(QuadratureError { lower: 0.0, upper: cut, estimate: f64::NAN, error: f64::INFINITY, intervals: panels });
    }
    let per_panel_tol = 0.25 * abs_tol / panels as f64;
    let mut value = 0.0;
    let mut error = 0.0;
    let mut intervals = 0;
    for k in 0..panels {
        let lo = k as f64 * panel;
        let hi = ((k + 1) as f64 * panel).min(cut);
        let r = integrate(|o| (o * x).cos() * w(o), lo, hi, per_panel_tol, 1e-13, 200)?;
        value += r.value;
        error += r.error;
        intervals += r.intervals;
    }
    Ok(Integral { value: 2.0 * value, error: 2.0 * (error + tail_err), intervals })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
        let (x, w) = gauss_legendre_64();
        let s: f64 = x.iter().zip(w).map(|(x, w)| w * (x * 3.0).cos()).sum();
        assert!((s - 2.0 * 3f64.sin() / 3.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_peaks() {
        let r = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-12, 1e-12, 10_000).unwrap();
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((r.value - exact).abs() / exact < 1e-11);
    }

    #[test]
    fn semi_infinite() {
        let r = integrate_to_infinity(|x| (-x).exp(), 0.0, 1e-13, 1e-13, 1000).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_transform_of_matern_spectrum() {
        // int cos(w x) 2a^3 / (pi (a^2 + w^2)^2) dw = (1 + a|x|) e^{-a|x|}
        let a: f64 = 1.3;
        for &x in &[0.0, 0.2, 1.0, 4.0] {
            let r = cosine_transform(|w| 2.0 * a.powi(3) / (PI * (a * a + w * w).powi(2)), x, 1e-10).unwrap();
            let exact = (1.0 + a * x) * (-a * x).exp();
            assert!((r.value - exact).abs() < 1e-9, "x = {x}: {}", r.value);
        }
    }
}
