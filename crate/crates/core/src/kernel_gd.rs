//! Kernel gradient descent on `theta = sqrt(K) w`, with optional weight decay,
//! validation early stopping, a kernel ridge baseline and the comparison audit
//! between the two.
//!
//! In the eigenbasis `K = sum_j eta_j v_j v_j^T` the update
//! `theta <- theta - beta (K theta - sqrt(K) y) - alpha theta` gives
//! `v_j^T f_t(X) = c_j(t) v_j^T y` with
//! `c_j(t) = beta eta_j / (alpha + beta eta_j) * (1 - (1 - alpha - beta eta_j)^t)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::points::PointSet;
use crate::smoothing::{SmoothedGram, SmoothingError};

#[derive(Debug, Error)]
pub enum GdError {
    #[error("step size too large: beta * eta_1 + alpha = {0} >= 1")]
    StepTooLarge(f64),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("response length {got} does not match {expected} training points")]
    Length { expected: usize, got: usize },
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error("comparison inequality violated: {0}")]
    Violation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum StopRule {
    FixedT { t: u64 },
    /// Evaluate the validation loss every `check_every` steps, keep the best
    /// iterate, and stop after `patience` checks without improvement (never
    /// when `None`) or at `t_max`.
    ValidationEarlyStop { check_every: u64, patience: Option<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Iterative,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub beta: f64,
    pub alpha: f64,
    pub t_max: u64,
    pub stop_rule: StopRule,
    /// Number of augmentations the Gram was built with (recorded for replay).
    pub n_aug: usize,
    pub mode: Mode,
}

impl TrainConfig {
    pub fn fixed(beta: f64, alpha: f64, t: u64) -> Self {
        Self { beta, alpha, t_max: t, stop_rule: StopRule::FixedT { t }, n_aug: 1, mode: Mode::ClosedForm }
    }

    pub fn early_stopping(beta: f64, alpha: f64) -> Self {
        Self {
            beta,
            alpha,
            t_max: 100_000,
            stop_rule: StopRule::ValidationEarlyStop { check_every: 200, patience: None },
            n_aug: 1,
            mode: Mode::ClosedForm,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Checks `beta > 0`, `alpha >= 0` and `beta eta_1 + alpha < 1`.
    pub fn validate(&self, eta_max: f64) -> Result<(), GdError> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(GdError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.alpha >= 0.0) {
            return Err(GdError::Config(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if let StopRule::ValidationEarlyStop { check_every, .. } = self.stop_rule {
            if check_every == 0 {
                return Err(GdError::Config("check_every must be positive".into()));
            }
        }
        let s = self.beta * eta_max.max(0.0) + self.alpha;
        if s >= 1.0 {
            return Err(GdError::StepTooLarge(s));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub w: Vec<f64>,
    pub theta: Vec<f64>,
    pub t_used: u64,
    /// `L_n` at `t = 0, 1, ..., t_used` (every step, or every check under
    /// validation early stopping).
    pub loss_trajectory: Vec<f64>,
    /// Validation losses at the checks, if early stopping was used.
    pub val_trajectory: Vec<f64>,
    pub fitted_values: Vec<f64>,
    /// Eigenmodes dropped by the pseudo-inverse threshold.
    pub truncated_modes: usize,
    pub config: Option<TrainConfig>,
    pub seed: Option<u64>,
}

/// Pseudo-inverse threshold relative to the largest eigenvalue.
pub const PINV_RTOL: f64 = 1e-12;

struct Eig<'a> {
    eta: &'a DVector<f64>,
    v: &'a DMatrix<f64>,
    keep: Vec<bool>,
}

impl<'a> Eig<'a> {
    fn new(gram: &'a SmoothedGram) -> Self {
        let eta = gram.eigenvalues();
        let cut = PINV_RTOL * eta[0].max(0.0);
        let keep = eta.iter().map(|&e| e > cut).collect();
        Self { eta, v: gram.eigenvectors(), keep }
    }

    fn truncated(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }

    fn eta(&self, j: usize) -> f64 {
        self.eta[j].max(0.0)
    }

    /// Assemble `sum_j g_j v_j`.
    fn synth(&self, coords: &[f64]) -> DVector<f64> {
        self.v * DVector::from_column_slice(coords)
    }
}

/// `c(t)` for one mode.
pub fn mode_coefficient(eta: f64, beta: f64, alpha: f64, t: u64) -> f64 {
    let be = beta * eta;
    if be + alpha == 0.0 {
        return 0.0;
    }
    let r = 1.0 - alpha - be;
    let decay = if t == 0 { 1.0 } else { pow_u64(r, t) };
    be / (alpha + be) * (1.0 - decay)
}

fn pow_u64(x: f64, t: u64) -> f64 {
    if t <= i32::MAX as u64 {
        x.powi(t as i32)
    } else {
        x.powf(t as f64)
    }
}

fn check_len(gram: &SmoothedGram, y: &[f64]) -> Result<(), GdError> {
    if y.len() != gram.n() {
        return Err(GdError::Length { expected: gram.n(), got: y.len() });
    }
    Ok(())
}

/// Assemble a fit from per-mode coefficients `c_j` applied to `b = V^T y`.
fn from_coefficients(eig: &Eig, b: &DVector<f64>, c: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = b.len();
    let mut fc = vec![0.0; n];
    let mut wc = vec![0.0; n];
    let mut tc = vec![0.0; n];
    for j in 0..n {
        if eig.keep[j] {
            let e = eig.eta(j);
            fc[j] = c[j] * b[j];
            wc[j] = fc[j] / e;
            tc[j] = fc[j] / e.sqrt();
        }
    }
    let f = eig.synth(&fc);
    let w = eig.synth(&wc);
    let th = eig.synth(&tc);
    (f.as_slice().to_vec(), w.as_slice().to_vec(), th.as_slice().to_vec())
}

fn half_mse(f: &[f64], y: &[f64]) -> f64 {
    f.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * y.len() as f64)
}

/// Fit with a fixed number of steps. Validation early stopping needs
/// [`gd_fit_validated`].
pub fn gd_fit(gram: &SmoothedGram, y: &[f64], cfg: &TrainConfig) -> Result<FitResult, GdError> {
    match cfg.stop_rule {
        StopRule::FixedT { t } => run(gram, y, cfg, t.min(cfg.t_max), None),
        StopRule::ValidationEarlyStop { .. } => {
            Err(GdError::Config("validation early stopping needs a validation set; use gd_fit_validated".into()))
        }
    }
}

/// Fit with validation early stopping (or a fixed `t`, in which case the
/// validation set only fills `val_trajectory` at the end).
pub fn gd_fit_validated(gram: &SmoothedGram, y: &[f64], cfg: &TrainConfig, val_x: &PointSet, val_y: &[f64]) -> Result<FitResult, GdError> {
    let kv = gram.cross_matrix(val_x)?;
    if val_y.len() != val_x.len() {
        return Err(GdError::Length { expected: val_x.len(), got: val_y.len() });
    }
    match cfg.stop_rule {
        StopRule::FixedT { t } => {
            let mut fit = run(gram, y, cfg, t.min(cfg.t_max), None)?;
            let pred = &kv * DVector::from_column_slice(&fit.w);
            fit.val_trajectory.push(half_mse(pred.as_slice(), val_y) * 2.0);
            Ok(fit)
        }
        StopRule::ValidationEarlyStop { .. } => run(gram, y, cfg, cfg.t_max, Some((&kv, val_y))),
    }
}

fn run(gram: &SmoothedGram, y: &[f64], cfg: &TrainConfig, t_max: u64, val: Option<(&DMatrix<f64>, &[f64])>) -> Result<FitResult, GdError> {
    check_len(gram, y)?;
    cfg.validate(gram.eta_max())?;
    let eig = Eig::new(gram);
    let n = gram.n();
    let b = eig.v.transpose() * DVector::from_column_slice(y);
    let coef = |t: u64| -> Vec<f64> { (0..n).map(|j| mode_coefficient(eig.eta(j), cfg.beta, cfg.alpha, t)).collect() };
    let loss_at = |c: &[f64]| -> f64 {
        // Residual y - f in the eigenbasis; dropped modes keep c = 0.
        (0..n).map(|j| {
            let cj = if eig.keep[j] { c[j] } else { 0.0 };
            let r = b[j] * (1.0 - cj);
            r * r
        }).sum::<f64>() / (2.0 * n as f64)
    };

    let (check_every, patience) = match cfg.stop_rule {
        StopRule::ValidationEarlyStop { check_every, patience } if val.is_some() => (Some(check_every), patience),
        _ => (None, None),
    };
    // Validation predictions are (K_val V) diag(1 / eta) (V^T f).
    let kvv = val.map(|(kv, _)| kv * eig.v);
    let val_loss_f = |fc: &[f64]| -> f64 {
        let (_, vy) = val.expect("validation set");
        let kvv = kvv.as_ref().expect("validation set");
        let g: Vec<f64> = (0..n).map(|j| if eig.keep[j] { fc[j] / eig.eta(j) } else { 0.0 }).collect();
        let p = kvv * DVector::from_column_slice(&g);
        p.iter().zip(vy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / vy.len() as f64
    };
    let val_loss = |c: &[f64]| -> f64 {
        let fc: Vec<f64> = (0..n).map(|j| c[j] * b[j]).collect();
        val_loss_f(&fc)
    };

    let mut losses = Vec::new();
    let mut vals = Vec::new();
    let (t_used, c_final, f_iter) = match cfg.mode {
        Mode::ClosedForm => {
            if let Some(every) = check_every {
                let mut since = 0u64;
                let mut t = 0u64;
                losses.push(loss_at(&coef(0)));
                vals.push(val_loss(&coef(0)));
                let mut best = (0u64, vals[0]);
                while t < t_max {
                    t = (t + every).min(t_max);
                    let c = coef(t);
                    losses.push(loss_at(&c));
                    let v = val_loss(&c);
                    vals.push(v);
                    if v < best.1 {
                        best = (t, v);
                        since = 0;
                    } else {
                        since += 1;
                        if patience.is_some_and(|p| since >= p) {
                            break;
                        }
                    }
                }
                (best.0, coef(best.0), None)
            } else {
                // The trajectory costs O(n) per step from the eigenbasis.
                let mut decay: Vec<f64> = (0..n).map(|_| 1.0).collect();
                losses.reserve(t_max as usize + 1);
                losses.push(loss_at(&vec![0.0; n]));
                let ratio: Vec<f64> = (0..n).map(|j| 1.0 - cfg.alpha - cfg.beta * eig.eta(j)).collect();
                let lim: Vec<f64> = (0..n).map(|j| {
                    let be = cfg.beta * eig.eta(j);
                    if be + cfg.alpha == 0.0 { 0.0 } else { be / (cfg.alpha + be) }
                }).collect();
                let mut c = vec![0.0; n];
                for _ in 0..t_max {
                    for j in 0..n {
                        decay[j] *= ratio[j];
                        c[j] = lim[j] * (1.0 - decay[j]);
                    }
                    losses.push(loss_at(&c));
                }
                // Exact powers for the returned fit.
                (t_max, coef(t_max), None)
            }
        }
        Mode::Iterative => {
            let sqrt_k = eig.v * DMatrix::from_diagonal(&DVector::from_iterator(n, (0..n).map(|j| eig.eta(j).sqrt()))) * eig.v.transpose();
            let k = gram.matrix();
            let yv = DVector::from_column_slice(y);
            let sky = &sqrt_k * &yv;
            let mut theta = DVector::zeros(n);
            let mut f = DVector::zeros(n);
            losses.push(half_mse(f.as_slice(), y));
            let mut best: Option<(u64, f64, DVector<f64>)> = None;
            let mut since = 0u64;
            let mut stop_t = t_max;
            let coords_of = |f: &DVector<f64>| -> Vec<f64> { (eig.v.transpose() * f).as_slice().to_vec() };
            if check_every.is_some() {
                let v = val_loss_f(&coords_of(&f));
                vals.push(v);
                best = Some((0, v, f.clone()));
            }
            for t in 1..=t_max {
                let grad = k * &theta - &sky;
                theta = &theta - cfg.beta * grad - cfg.alpha * &theta;
                f = &sqrt_k * &theta;
                losses.push(half_mse(f.as_slice(), y));
                if let Some(every) = check_every {
                    if t % every == 0 || t == t_max {
                        let v = val_loss_f(&coords_of(&f));
                        vals.push(v);
                        let (_, bv, _) = best.as_ref().expect("initialized");
                        if v < *bv {
                            best = Some((t, v, f.clone()));
                            since = 0;
                        } else {
                            since += 1;
                            if patience.is_some_and(|p| since >= p) {
                                stop_t = t;
                                break;
                            }
                        }
                    }
                }
                stop_t = t;
            }
            match best {
                Some((t, _, fb)) => (t, Vec::new(), Some(fb)),
                None => (stop_t, Vec::new(), Some(f)),
            }
        }
    };

    let (fitted, w, theta) = match f_iter {
        None => from_coefficients(&eig, &b, &c_final),
        Some(f) => {
            // Recover w = K^+ f and theta = K^{+1/2} f from the iterate.
            let bf = eig.v.transpose() * &f;
            let mut fc = vec![0.0; n];
            let mut wc = vec![0.0; n];
            let mut tc = vec![0.0; n];
            for j in 0..n {
                if eig.keep[j] {
                    fc[j] = bf[j];
                    wc[j] = bf[j] / eig.eta(j);
                    tc[j] = bf[j] / eig.eta(j).sqrt();
                }
            }
            (eig.synth(&fc).as_slice().to_vec(), eig.synth(&wc).as_slice().to_vec(), eig.synth(&tc).as_slice().to_vec())
        }
    };
    Ok(FitResult {
        w,
        theta,
        t_used,
        loss_trajectory: losses,
        val_trajectory: vals,
        fitted_values: fitted,
        truncated_modes: eig.truncated(),
        config: Some(cfg.clone()),
        seed: None,
    })
}

/// `f_t(x) = sum_j w_j K_S(x - x_j)`.
pub fn predict(gram: &SmoothedGram, fit: &FitResult, x: &[f64]) -> Result<f64, GdError> {
    let k = gram.kernel_vector(x)?;
    Ok(k.iter().zip(&fit.w).map(|(a, b)| a * b).sum())
}

/// Predictions at every row of `xs`.
pub fn predict_many(gram: &SmoothedGram, fit: &FitResult, xs: &PointSet) -> Result<Vec<f64>, GdError> {
    let k = gram.cross_matrix(xs)?;
    Ok((k * DVector::from_column_slice(&fit.w)).as_slice().to_vec())
}

/// Kernel ridge regression `w = (K + n lambda I)^-1 y`.
pub fn krr_fit(gram: &SmoothedGram, y: &[f64], lambda: f64) -> Result<FitResult, GdError> {
    check_len(gram, y)?;
    if !(lambda > 0.0) {
        return Err(GdError::Config(format!("lambda must be positive, got {lambda}")));
    }
    let eig = Eig::new(gram);
    let n = gram.n();
    let nl = n as f64 * lambda;
    let b = eig.v.transpose() * DVector::from_column_slice(y);
    let mut fc = vec![0.0; n];
    let mut wc = vec![0.0; n];
    let mut tc = vec![0.0; n];
    for j in 0..n {
        let e = eig.eta(j);
        wc[j] = b[j] / (e + nl);
        fc[j] = e * wc[j];
        tc[j] = e.sqrt() * wc[j];
    }
    let fitted = eig.synth(&fc).as_slice().to_vec();
    Ok(FitResult {
        loss_trajectory: vec![half_mse(&fitted, y)],
        w: eig.synth(&wc).as_slice().to_vec(),
        theta: eig.synth(&tc).as_slice().to_vec(),
        t_used: 0,
        val_trajectory: Vec::new(),
        fitted_values: fitted,
        truncated_modes: 0,
        config: None,
        seed: None,
    })
}

// ---------------------------------------------------------------------------
// Early stopping versus kernel ridge regression

/// Both sides of the two per-eigenvalue inequalities at `(eta, beta, t)`:
/// (i) `(1 - beta eta)^(2t) <= 2e ((beta t)^-1 / ((beta t)^-1 + eta))^2` and
/// (ii) `(1 - (1 - beta eta)^t)^2 <= 4 (beta t eta / (1 + beta t eta))^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarComparison {
    pub bias_lhs: f64,
    pub bias_rhs: f64,
    pub var_lhs: f64,
    pub var_rhs: f64,
}

impl ScalarComparison {
    pub fn holds(&self) -> bool {
        self.bias_lhs <= self.bias_rhs && self.var_lhs <= self.var_rhs
    }
}

pub fn scalar_comparison(eta: f64, beta: f64, t: u64) -> ScalarComparison {
    let x = beta * eta;
    let decay = pow_u64(1.0 - x, t);
    let lam = 1.0 / (beta * t as f64);
    let u = beta * t as f64 * eta;
    let r = lam / (lam + eta);
    let s = u / (1.0 + u);
    ScalarComparison {
        bias_lhs: decay * decay,
        bias_rhs: 2.0 * std::f64::consts::E * r * r,
        var_lhs: (1.0 - decay) * (1.0 - decay),
        var_rhs: 4.0 * s * s,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub beta: f64,
    pub t: u64,
    /// `n lambda = (beta t)^-1`.
    pub n_lambda: f64,
    /// Smallest `rhs - lhs` over eigenvalues for (i) and (ii).
    pub min_bias_slack: f64,
    pub min_var_slack: f64,
    /// `|g_t|_H^2` and `|g~|_H^2`.
    pub norm_gd: f64,
    pub norm_krr: f64,
    pub violations: Vec<String>,
}

impl ComparisonReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the per-eigenvalue inequalities and `|g_t|_H^2 <= 4 |g~|_H^2` for
/// the Gram's spectrum and the response `y`.
pub fn comparison_audit(gram: &SmoothedGram, y: &[f64], beta: f64, t: u64) -> Result<ComparisonReport, GdError> {
    check_len(gram, y)?;
    if t == 0 {
        return Err(GdError::Config("t must be at least 1".into()));
    }
    if !(beta > 0.0) || beta * gram.eta_max() >= 1.0 + 1e-15 {
        return Err(GdError::StepTooLarge(beta * gram.eta_max()));
    }
    let eig = Eig::new(gram);
    let b = eig.v.transpose() * DVector::from_column_slice(y);
    let n_lambda = 1.0 / (beta * t as f64);
    let mut report = ComparisonReport {
        beta,
        t,
        n_lambda,
        min_bias_slack: f64::INFINITY,
        min_var_slack: f64::INFINITY,
        norm_gd: 0.0,
        norm_krr: 0.0,
        violations: Vec::new(),
    };
    for j in 0..gram.n() {
        let e = eig.eta(j);
        let s = scalar_comparison(e, beta, t);
        report.min_bias_slack = report.min_bias_slack.min(s.bias_rhs - s.bias_lhs);
        report.min_var_slack = report.min_var_slack.min(s.var_rhs - s.var_lhs);
        if !s.holds() {
            report.violations.push(format!("eta = {e:e}: {s:?}"));
        }
        if eig.keep[j] {
            report.norm_gd += s.var_lhs * b[j] * b[j] / e;
            report.norm_krr += e * b[j] * b[j] / ((e + n_lambda) * (e + n_lambda));
        }
    }
    if report.norm_gd > 4.0 * report.norm_krr {
        report.violations.push(format!("RKHS norms: {} > 4 * {}", report.norm_gd, report.norm_krr));
    }
    Ok(report)
}

/// `(L_n, L'_n, L'_n - L_n)` from `h(x_j + eps_k)` stored as an `n x N`
/// matrix. The gap is computed independently from its pairwise form.
pub fn augmented_loss(y: &[f64], h: &DMatrix<f64>) -> (f64, f64, f64) {
    let n = y.len();
    assert_eq!(h.nrows(), n, "one row of h values per response");
    let m = h.ncols() as f64;
    let (mut ln, mut lpn, mut gap) = (0.0, 0.0, 0.0);
    for j in 0..n {
        let row = h.row(j);
        let mean = row.iter().sum::<f64>() / m;
        ln += (mean - y[j]).powi(2);
        lpn += row.iter().map(|v| (v - y[j]).powi(2)).sum::<f64>() / m;
        let mut pair = 0.0;
        for a in row.iter() {
            for b in row.iter() {
                pair += (a - b) * (a - b);
            }
        }
        gap += pair / (2.0 * m * m);
    }
    let s = 1.0 / (2.0 * n as f64);
    (s * ln, s * lpn, s * gap)
}
