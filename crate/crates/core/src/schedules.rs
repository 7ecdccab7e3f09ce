//! Smoothing scale, stopping time and weight decay schedules as functions of
//! the sample size `n`, ambient dimension `D`, intrinsic dimension `d`, kernel
//! smoothness `m0` and target smoothness `m_f`.
//!
//! Every `≍` relation carries the proportionality constant `c_prop`. Logs are
//! natural. Stopping times can be astronomically large (`n^(2 m_eps / ...)`
//! with `m_eps ~ log n`), so they are also reported as logarithms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("schedule domain error: {0}")]
pub struct ScheduleError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    PolySmoothing,
    GaussianSmoothing,
    TensorPolySmoothing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOptions {
    pub c_prop: f64,
    /// Step size constant in `beta = c1 / n`.
    pub c1: f64,
    /// Constant in the weight decay iteration count.
    pub c2: f64,
    /// Polynomial smoothing: use the `n^(-2 m_f/(2 m_f + d) + a)` branch.
    pub a: Option<f64>,
    /// Override the noise shape. Required to be set for nothing; defaults are
    /// the log-growing shape (polynomial) and `max(m_f - m0, 1)` (tensor).
    pub m_eps: Option<f64>,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self { c_prop: 1.0, c1: 0.5, c2: 1.0, a: None, m_eps: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub regime: Regime,
    pub n: usize,
    pub sigma_n: f64,
    /// Exponent of `n` in `sigma_n` (zero when `sigma_n` is constant).
    pub nu: f64,
    /// Noise shape; `None` for Gaussian smoothing.
    pub m_eps: Option<f64>,
    /// Early stopping time without weight decay, saturating at `u64::MAX`.
    pub t_star: u64,
    pub ln_t_star: f64,
    /// Weight decay strength for the weight decay variant.
    pub alpha_star: f64,
    /// Iterations required with weight decay `alpha_star`.
    pub t_weight_decay: u64,
    pub beta: f64,
    /// `(beta t_star)^-1 / n`.
    pub lambda_n: f64,
    /// Exponent `e` in the rate `n^e` of the squared L2 error.
    pub rate_exponent: f64,
    pub c_prop: f64,
}

fn check(n: usize, dim: usize, d: usize, m0: f64, mf: f64) -> Result<(), ScheduleError> {
    if n < 2 {
        return Err(ScheduleError(format!("need n >= 2, got {n}")));
    }
    if d < 1 || d > dim {
        return Err(ScheduleError(format!("need 1 <= d <= D, got d = {d}, D = {dim}")));
    }
    let half = dim as f64 / 2.0;
    if !(m0 > half) {
        return Err(ScheduleError(format!("need m0 > D/2 = {half}, got {m0}")));
    }
    if !(mf > half) {
        return Err(ScheduleError(format!("need m_f > D/2 = {half}, got {mf}")));
    }
    Ok(())
}

fn saturating_exp(ln: f64) -> u64 {
    if ln >= (u64::MAX as f64).ln() {
        u64::MAX
    } else {
        ln.exp().round().max(1.0) as u64
    }
}

/// Noise shape `2 d^-1 (2 D max(m0, m_f) + m0 d) ln n - m0`.
pub fn poly_m_eps(n: usize, dim: usize, d: usize, m0: f64, mf: f64) -> f64 {
    let (dd, d) = (dim as f64, d as f64);
    2.0 / d * (2.0 * dd * m0.max(mf) + m0 * d) * (n as f64).ln() - m0
}

/// Exponent of `sigma_n` for polynomial smoothing; `factor` is
/// `1 - 1/ln n` or `1 - (2 m_f + d) a / d`.
pub fn poly_nu(dim: usize, d: usize, m0: f64, mf: f64, m_eps: f64, factor: f64) -> f64 {
    if dim == d {
        return 0.0;
    }
    let (dd, d) = (dim as f64, d as f64);
    let s = 2.0 * m0 + 2.0 * m_eps;
    let num = 2.0 * s * dd - (s - dd) * d;
    let den = (2.0 * mf + d) * (4.0 * m_eps * dd - (2.0 * m0 + 2.0 * factor * m_eps - dd) * d);
    -num / den
}

/// Weight decay iterations `c2 (m_f / (2 m_f + d) + 1/2) ln n / |ln(1 - alpha)|`.
pub fn weight_decay_iterations(n: usize, d_eff: f64, mf: f64, alpha: f64, c2: f64) -> u64 {
    let t = c2 * (mf / (2.0 * mf + d_eff) + 0.5) * (n as f64).ln() / (-(-alpha).ln_1p());
    if !t.is_finite() {
        return u64::MAX;
    }
    (t.ceil().max(1.0)).min(u64::MAX as f64) as u64
}

pub fn schedule(regime: Regime, n: usize, dim: usize, d: usize, m0: f64, mf: f64, opts: &ScheduleOptions) -> Result<ScheduleParams, ScheduleError> {
    check(n, dim, d, m0, mf)?;
    if !(opts.c_prop > 0.0) {
        return Err(ScheduleError(format!("c_prop must be positive, got {}", opts.c_prop)));
    }
    let ln_n = (n as f64).ln();
    let ln_c = opts.c_prop.ln();
    let (df, dimf) = (d as f64, dim as f64);
    let beta = opts.c1 / n as f64;

    let (sigma_n, nu, m_eps, ln_t, ln_alpha, d_eff, rate) = match regime {
        Regime::PolySmoothing => {
            let m_eps = opts.m_eps.unwrap_or_else(|| poly_m_eps(n, dim, d, m0, mf));
            if !(m_eps > dimf / 2.0) {
                return Err(ScheduleError(format!("noise shape {m_eps} must exceed D/2 = {}", dimf / 2.0)));
            }
            let factor = match opts.a {
                Some(a) => 1.0 - (2.0 * mf + df) * a / df,
                None => 1.0 - 1.0 / ln_n,
            };
            let nu = poly_nu(dim, d, m0, mf, m_eps, factor);
            let ln_sigma = ln_c + nu * ln_n;
            let e = 2.0 * (m0 + m_eps) / (2.0 * mf + df);
            let ln_t = ln_c + e * ln_n + 2.0 * m_eps * ln_sigma;
            let ln_alpha = ln_c - (1.0 + e) * ln_n - 2.0 * m_eps * ln_sigma;
            let rate = -2.0 * mf / (2.0 * mf + df) + opts.a.unwrap_or(0.0);
            (ln_sigma.exp(), nu, Some(m_eps), ln_t, ln_alpha, df, rate)
        }
        Regime::GaussianSmoothing => {
            let nu = -1.0 / (2.0 * mf + df);
            let e = (2.0 * m0 + 2.0 * mf) / (2.0 * mf + df);
            // alpha is taken as 1 / (n t*), the same relation as the other regimes.
            let ln_alpha = ln_c - (1.0 + e) * ln_n;
            ((ln_c + nu * ln_n).exp(), nu, None, ln_c + e * ln_n, ln_alpha, df, -2.0 * mf / (2.0 * mf + df))
        }
        Regime::TensorPolySmoothing => {
            let m_eps = opts.m_eps.unwrap_or((mf - m0).max(1.0));
            if !(m_eps > 0.5) {
                return Err(ScheduleError(format!("tensor noise shape {m_eps} must exceed 1/2")));
            }
            if m_eps + m0 < mf {
                return Err(ScheduleError(format!("need m_eps + m0 >= m_f, got {m_eps} + {m0} < {mf}")));
            }
            let s = m0 + m_eps;
            let log_pow = (2.0 * (dimf - 1.0) * s + 1.0) / (2.0 * mf + 1.0);
            let ln_ln_n = ln_n.ln();
            let ln_t = ln_c + 2.0 * s / (2.0 * mf + 1.0) * ln_n + log_pow * ln_ln_n;
            let ln_alpha = ln_c - (1.0 + 2.0 * s / (2.0 * mf + df)) * ln_n + log_pow * ln_ln_n;
            (opts.c_prop, 0.0, Some(m_eps), ln_t, ln_alpha, 1.0, -2.0 * mf / (2.0 * mf + 1.0))
        }
    };
    let ln_t = ln_t.max(0.0);
    let t_star = saturating_exp(ln_t);
    let alpha_star = ln_alpha.exp().min(0.5);
    Ok(ScheduleParams {
        regime,
        n,
        sigma_n,
        nu,
        m_eps,
        t_star,
        ln_t_star: ln_t,
        alpha_star,
        t_weight_decay: weight_decay_iterations(n, d_eff, mf, alpha_star, opts.c2),
        beta,
        lambda_n: (-(beta.ln() + ln_t)).exp() / n as f64,
        rate_exponent: rate,
        c_prop: opts.c_prop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_plug_in() {
        let p = schedule(Regime::GaussianSmoothing, 100, 1, 1, 1.5, 2.0, &ScheduleOptions::default()).unwrap();
        assert!((p.sigma_n - 100f64.powf(-0.2)).abs() < 1e-12);
        assert!((p.sigma_n - 0.398107).abs() < 1e-6);
        assert_eq!(p.t_star, 100f64.powf((3.0 + 4.0) / 5.0).round() as u64);
        assert!((p.rate_exponent + 0.8).abs() < 1e-15);
    }

    #[test]
    fn full_dimension_has_constant_scale() {
        let p = schedule(Regime::PolySmoothing, 500, 2, 2, 1.5, 2.0, &ScheduleOptions { c_prop: 0.3, ..Default::default() }).unwrap();
        assert_eq!(p.nu, 0.0);
        assert!((p.sigma_n - 0.3).abs() < 1e-15);
    }

    #[test]
    fn noise_shape_formula() {
        let n = 200;
        let p = schedule(Regime::PolySmoothing, n, 3, 2, 2.0, 2.5, &ScheduleOptions::default()).unwrap();
        let expect = 2.0 / 2.0 * (2.0 * 3.0 * 2.5 + 2.0 * 2.0) * (n as f64).ln() - 2.0;
        assert!((p.m_eps.unwrap() - expect).abs() < 1e-12);
        assert!(p.nu < 0.0);
        let ln_n = (n as f64).ln();
        let me = p.m_eps.unwrap();
        let e = 2.0 * (2.0 + me) / 7.0;
        assert!((p.ln_t_star - (e * ln_n + 2.0 * me * p.sigma_n.ln())).abs() < 1e-9);
    }

    #[test]
    fn doubling_n_raises_t_star() {
        let o = ScheduleOptions::default();
        for regime in [Regime::PolySmoothing, Regime::GaussianSmoothing, Regime::TensorPolySmoothing] {
            for n in [10, 50, 400] {
                let a = schedule(regime, n, 2, 1, 1.5, 2.0, &o).unwrap();
                let b = schedule(regime, 2 * n, 2, 1, 1.5, 2.0, &o).unwrap();
                assert!(b.ln_t_star > a.ln_t_star, "{regime:?} n={n}");
                assert!(b.t_star >= a.t_star);
            }
        }
    }

    #[test]
    fn preconditions() {
        let o = ScheduleOptions::default();
        assert!(schedule(Regime::GaussianSmoothing, 1, 1, 1, 1.0, 1.0, &o).is_err());
        assert!(schedule(Regime::GaussianSmoothing, 10, 2, 1, 1.0, 1.5, &o).is_err());
        assert!(schedule(Regime::GaussianSmoothing, 10, 1, 2, 1.0, 1.5, &o).is_err());
        let bad = ScheduleOptions { m_eps: Some(0.6), ..Default::default() };
        assert!(schedule(Regime::TensorPolySmoothing, 10, 2, 1, 1.0, 2.0, &bad).is_err());
    }

    #[test]
    fn weight_decay_needs_few_iterations() {
        let p = schedule(Regime::GaussianSmoothing, 400, 1, 1, 2.0, 2.5, &ScheduleOptions::default()).unwrap();
        assert!(p.t_weight_decay > 1);
        assert!(p.alpha_star > 0.0 && p.alpha_star < 1.0);
        let lam = 1.0 / (p.beta * p.t_star as f64) / 400.0;
        assert!((p.lambda_n - lam).abs() < 1e-9 * lam);
    }
}
