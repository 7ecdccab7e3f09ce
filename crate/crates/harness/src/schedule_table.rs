//! Schedules of every regime over a grid of sample sizes.

use serde::Serialize;
use smoothgd::schedules::{self, Regime, ScheduleOptions};

use crate::config::ExperimentConfig;
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub regime: Regime,
    pub n: usize,
    pub sigma_n: f64,
    pub nu: f64,
    pub m_eps: Option<f64>,
    pub t_star: u64,
    pub ln_t_star: f64,
    pub alpha_star: f64,
    pub t_weight_decay: u64,
    pub beta: f64,
    pub lambda_n: f64,
    pub rate_exponent: f64,
}

/// Rows sorted by (regime, n). Regimes whose preconditions fail for the
/// configured smoothness are reported as errors.
pub fn schedule_table(cfg: &ExperimentConfig) -> Result<Vec<ScheduleRow>, HarnessError> {
    let s = &cfg.schedule;
    let opts = ScheduleOptions { c_prop: s.c_prop, ..ScheduleOptions::default() };
    let mut rows = Vec::new();
    for regime in [Regime::PolySmoothing, Regime::GaussianSmoothing, Regime::TensorPolySmoothing] {
        for &n in &s.sizes {
            let p = schedules::schedule(regime, n, s.dim, s.intrinsic_dim, s.m0, s.mf, &opts)
                .map_err(|e| HarnessError::learner(format!("{regime:?} n={n}"), e))?;
            rows.push(ScheduleRow {
                regime,
                n,
                sigma_n: p.sigma_n,
                nu: p.nu,
                m_eps: p.m_eps,
                t_star: p.t_star,
                ln_t_star: p.ln_t_star,
                alpha_star: p.alpha_star,
                t_weight_decay: p.t_weight_decay,
                beta: p.beta,
                lambda_n: p.lambda_n,
                rate_exponent: p.rate_exponent,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_is_complete_and_monotone() {
        let cfg = ExperimentConfig::default();
        let rows = schedule_table(&cfg).unwrap();
        assert_eq!(rows.len(), 3 * cfg.schedule.sizes.len());
        for w in rows.windows(2).filter(|w| w[0].regime == w[1].regime) {
            assert!(w[1].ln_t_star >= w[0].ln_t_star);
            assert!(w[1].beta < w[0].beta);
        }
    }
}
