//! Empirical convergence rate of scheduled kernel GD: mean squared test error
//! against n on a log-log scale.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smoothgd::datagen::{self, Dataset, ManifoldSpec};
use smoothgd::kernel_gd::{self, TrainConfig};
use smoothgd::kernels::KernelSpec;
use smoothgd::mlp::mse;
use smoothgd::noise::NoiseSpec;
use smoothgd::schedules::{self, Regime, ScheduleOptions, ScheduleParams};
use smoothgd::smoothing::{ls_slope, SmoothedGram};

use crate::config::ExperimentConfig;
use crate::experiments::{mean_stderr, truth_covariance};
use crate::pool::par_map;
use crate::seeds::sub_seed;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatePredictor {
    /// Kernel GD with the scheduled smoothing scale and stopping time.
    ScheduledGd,
    /// The training mean; its error does not shrink with n.
    ConstantMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub sigma_n: f64,
    pub t_star: u64,
    pub mean_sq_l2: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub predictor: RatePredictor,
    pub points: Vec<RatePoint>,
    /// Slope of `ln(mean squared L2)` against `ln n`.
    pub slope: f64,
    /// The same for the root of the mean squared loss (half of `slope`).
    pub slope_unsquared: f64,
    pub theory: f64,
    pub ratio: f64,
}

impl RateReport {
    /// Negative, and between 0.4 and 1.5 times the theoretical exponent.
    pub fn in_band(&self) -> bool {
        self.slope < 0.0 && (0.4..=1.5).contains(&self.ratio)
    }
}

struct Setup {
    manifold: ManifoldSpec,
    d: usize,
    kernel: KernelSpec,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup, HarnessError> {
    let r = &cfg.rate;
    let manifold = ManifoldSpec::for_dim(r.dim).map_err(|e| HarnessError::Config(e.to_string()))?;
    let d = manifold.intrinsic_dim();
    let kernel = KernelSpec::matern(r.dim, r.m0, r.phi).map_err(|e| HarnessError::Config(format!("rate kernel: {e}")))?;
    Ok(Setup { manifold, d, kernel })
}

pub fn rate_schedule(cfg: &ExperimentConfig, n: usize) -> Result<ScheduleParams, HarnessError> {
    let r = &cfg.rate;
    let opts = ScheduleOptions { c_prop: r.c_prop, ..ScheduleOptions::default() };
    let d = ManifoldSpec::for_dim(r.dim).map_err(|e| HarnessError::Config(e.to_string()))?.intrinsic_dim();
    schedules::schedule(r.regime, n, r.dim, d, r.m0, r.mf, &opts).map_err(|e| HarnessError::Config(e.to_string()))
}

fn smoothing_noise(regime: Regime, dim: usize, p: &ScheduleParams) -> Result<NoiseSpec, HarnessError> {
    let s = match regime {
        Regime::GaussianSmoothing => NoiseSpec::gaussian(dim, p.sigma_n),
        Regime::PolySmoothing => NoiseSpec::generalized_laplace(dim, p.sigma_n, p.m_eps.unwrap_or(1.0)),
        Regime::TensorPolySmoothing => NoiseSpec::tensor_laplace(dim, p.sigma_n, p.m_eps.unwrap_or(1.0)),
    };
    s.map_err(|e| HarnessError::Config(e.to_string()))
}

/// Squared test error of one fit. Responses and truth are multiplied by
/// `y_scale` before fitting.
fn one_fit(cfg: &ExperimentConfig, s: &Setup, ds: &Dataset, predictor: RatePredictor, y_scale: f64, seed: u64) -> Result<f64, HarnessError> {
    let n = ds.train.len();
    let y: Vec<f64> = ds.train.y.iter().map(|v| v * y_scale).collect();
    let f: Vec<f64> = ds.test.f.iter().map(|v| v * y_scale).collect();
    let cell = || format!("rate n={n}");
    match predictor {
        RatePredictor::ConstantMean => {
            let m = y.iter().sum::<f64>() / n as f64;
            Ok(mse(&vec![m; f.len()], &f))
        }
        RatePredictor::ScheduledGd => {
            let p = rate_schedule(cfg, n)?;
            let noise = smoothing_noise(cfg.rate.regime, cfg.rate.dim, &p)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gram = SmoothedGram::build(&s.kernel, &noise, cfg.rate.n_aug, &ds.train.x, &mut rng)
                .map_err(|e| HarnessError::learner(cell(), e))?;
            let tc = TrainConfig::fixed(p.beta, 0.0, p.t_star);
            let fit = kernel_gd::gd_fit(&gram, &y, &tc).map_err(|e| HarnessError::learner(cell(), e))?;
            let pred = kernel_gd::predict_many(&gram, &fit, &ds.test.x).map_err(|e| HarnessError::learner(cell(), e))?;
            Ok(mse(&pred, &f))
        }
    }
}

/// Runs every (n, rep) fit. One ground truth per rep is shared across n.
pub fn run_rate_with(cfg: &ExperimentConfig, predictor: RatePredictor, y_scale: f64) -> Result<RateReport, HarnessError> {
    let r = &cfg.rate;
    if r.sizes.len() < 2 {
        return Err(HarnessError::Config("rate needs at least two sizes".into()));
    }
    let s = setup(cfg)?;
    let cov = truth_covariance(cfg, r.dim)?;
    let reps: Vec<u64> = (0..r.reps).collect();
    let truths = par_map(&reps, cfg.workers, |&rep| {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.master_seed, "rate-truth", &[rep]));
        datagen::draw_ground_truth(&s.manifold, &cov, cfg.truth.anchors, cfg.truth.jitter, &mut rng)
            .map_err(|e| HarnessError::learner(format!("rate truth rep={rep}"), e))
    });
    let truths = truths.into_iter().collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, u64)> = r.sizes.iter().flat_map(|&n| reps.iter().map(move |&k| (n, k))).collect();
    let losses = par_map(&jobs, cfg.workers, |&(n, rep)| {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.master_seed, "rate-data", &[n as u64, rep]));
        let ds = datagen::make_dataset(&truths[rep as usize], n, cfg.noise_var, cfg.test_size, &mut rng)
            .map_err(|e| HarnessError::learner(format!("rate data n={n}"), e))?;
        one_fit(cfg, &s, &ds, predictor, y_scale, sub_seed(cfg.master_seed, "rate-fit", &[n as u64, rep]))
    });
    let losses = losses.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut points = Vec::new();
    for (i, &n) in r.sizes.iter().enumerate() {
        let chunk = &losses[i * reps.len()..(i + 1) * reps.len()];
        let (m, se) = mean_stderr(chunk);
        let (sigma_n, t_star) = match predictor {
            RatePredictor::ScheduledGd => {
                let p = rate_schedule(cfg, n)?;
                (p.sigma_n, p.t_star)
            }
            RatePredictor::ConstantMean => (0.0, 0),
        };
        points.push(RatePoint { n, sigma_n, t_star, mean_sq_l2: m, stderr: se });
    }
    let lx: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.mean_sq_l2.ln()).collect();
    let slope = ls_slope(&lx, &ly);
    let theory = -2.0 * r.mf / (2.0 * r.mf + s.d as f64);
    Ok(RateReport { predictor, points, slope, slope_unsquared: slope / 2.0, theory, ratio: slope / theory })
}

pub fn run_rate(cfg: &ExperimentConfig) -> Result<RateReport, HarnessError> {
    run_rate_with(cfg, RatePredictor::ScheduledGd, 1.0)
}
