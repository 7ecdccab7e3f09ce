//! The learner grid: every (learner, D, noise type, regularizer, n, sigma,
//! seed) cell is an independent job. Ground truths are shared across cells
//! with the same (D, seed), and training randomness is shared across sigma
//! and noise type so that curves over sigma compare like with like.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smoothgd::datagen::{self, Dataset, GroundTruth, ManifoldSpec};
use smoothgd::kernel_gd::{self, TrainConfig};
use smoothgd::kernels::KernelSpec;
use smoothgd::mlp::{self, Mlp, Regularizer, SgdConfig};
use smoothgd::noise::NoiseSpec;
use smoothgd::smoothing::SmoothedGram;

use crate::config::{ExperimentConfig, Learner, NoiseType};
use crate::pool::par_map;
use crate::seeds::sub_seed;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub learner: Learner,
    pub dim: usize,
    pub noise: NoiseType,
    pub regularizer: Regularizer,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
}

type JobKey = (Learner, usize, NoiseType, Regularizer, usize, u64, u64);

impl Job {
    /// A zero smoothing scale is the no-smoothing run whatever the law.
    pub fn canonical(mut self) -> Self {
        if self.sigma == 0.0 || self.noise == NoiseType::N {
            self.sigma = 0.0;
            self.noise = NoiseType::N;
        }
        self
    }

    fn key(&self) -> JobKey {
        (self.learner, self.dim, self.noise, self.regularizer, self.n, self.sigma.to_bits(), self.seed)
    }

    pub fn label(&self) -> String {
        format!(
            "{:?} D={} {} {:?} n={} sigma={} seed={}",
            self.learner,
            self.dim,
            self.noise.label(),
            self.regularizer,
            self.n,
            self.sigma,
            self.seed
        )
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec, HarnessError> {
        let spec = match self.noise {
            _ if self.sigma == 0.0 => Ok(NoiseSpec::none(self.dim)),
            NoiseType::N => Ok(NoiseSpec::none(self.dim)),
            NoiseType::G => NoiseSpec::gaussian(self.dim, self.sigma),
            // Laplace(0, b) coordinates with the variance of N(0, sigma^2).
            NoiseType::L => NoiseSpec::laplace(self.dim, self.sigma / std::f64::consts::SQRT_2),
        };
        spec.map_err(|e| HarnessError::learner(self.label(), e))
    }
}

/// One row per job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub learner: Learner,
    pub dim: usize,
    pub noise: NoiseType,
    pub regularizer: Regularizer,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub test_l2: f64,
    pub val_l2: f64,
    pub t_used: u64,
}

impl ResultRow {
    fn key(&self) -> JobKey {
        (self.learner, self.dim, self.noise, self.regularizer, self.n, self.sigma.to_bits(), self.seed)
    }
}

/// Sorts and removes duplicate jobs after canonicalizing them.
pub fn normalize_jobs(jobs: impl IntoIterator<Item = Job>) -> Vec<Job> {
    let mut map = BTreeMap::new();
    for j in jobs {
        let j = j.canonical();
        map.insert(j.key(), j);
    }
    map.into_values().collect()
}

/// Every job of the configured grid.
pub fn grid_jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &dim in &cfg.dims {
        for &noise in &cfg.noise_types {
            for &regularizer in &cfg.regularizers {
                for &n in &cfg.sizes {
                    for seed in 0..cfg.seeds {
                        let sigmas: &[f64] = if noise == NoiseType::N { &[0.0] } else { &cfg.sigma_grid };
                        for &sigma in sigmas {
                            jobs.push(Job { learner: cfg.learner, dim, noise, regularizer, n, sigma, seed });
                        }
                    }
                }
            }
        }
    }
    normalize_jobs(jobs)
}

pub fn truth_covariance(cfg: &ExperimentConfig, dim: usize) -> Result<KernelSpec, HarnessError> {
    KernelSpec::matern_classical(dim, cfg.truth.nu, cfg.truth.rho, cfg.truth.variance)
        .map_err(|e| HarnessError::Config(format!("truth covariance: {e}")))
}

pub fn ground_truth(cfg: &ExperimentConfig, dim: usize, seed: u64) -> Result<GroundTruth, HarnessError> {
    let man = ManifoldSpec::for_dim(dim).map_err(|e| HarnessError::Config(e.to_string()))?;
    let cov = truth_covariance(cfg, dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.master_seed, "truth", &[dim as u64, seed]));
    datagen::draw_ground_truth(&man, &cov, cfg.truth.anchors, cfg.truth.jitter, &mut rng)
        .map_err(|e| HarnessError::learner(format!("truth D={dim} seed={seed}"), e))
}

pub fn dataset(cfg: &ExperimentConfig, gt: &GroundTruth, dim: usize, n: usize, seed: u64) -> Result<Dataset, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.master_seed, "data", &[dim as u64, n as u64, seed]));
    datagen::make_dataset(gt, n, cfg.noise_var, cfg.test_size, &mut rng)
        .map_err(|e| HarnessError::learner(format!("data D={dim} n={n} seed={seed}"), e))
}

fn train_seed(cfg: &ExperimentConfig, job: &Job) -> u64 {
    sub_seed(cfg.master_seed, "train", &[job.dim as u64, job.n as u64, job.seed, job.regularizer as u64])
}

pub fn sgd_config(cfg: &ExperimentConfig, reg: Regularizer, weight_decay: f64, seed: u64) -> SgdConfig {
    let m = &cfg.mlp;
    let mut s = SgdConfig::for_regularizer(reg);
    s.lr = m.lr;
    s.momentum = m.momentum;
    s.batch_size = m.batch_size;
    s.eval_every = m.eval_every;
    s.augment_per_example = m.augment_per_example;
    s.eval_augment = m.eval_augment;
    s.antithetic = m.antithetic;
    s.loss = m.loss;
    s.seed = seed;
    match reg {
        Regularizer::WeightDecay => {
            s.weight_decay = weight_decay;
            s.max_iters = m.weight_decay_iters;
        }
        Regularizer::EarlyStopping => {
            s.weight_decay = 0.0;
            s.max_iters = m.early_stop_max_iters;
            s.patience = m.patience;
        }
    }
    s
}

pub fn run_mlp_job(cfg: &ExperimentConfig, job: &Job, ds: &Dataset) -> Result<ResultRow, HarnessError> {
    let noise = job.noise_spec()?;
    let seed = train_seed(cfg, job);
    let decays: Vec<f64> = match job.regularizer {
        Regularizer::WeightDecay => cfg.mlp.weight_decays.clone(),
        Regularizer::EarlyStopping => vec![0.0],
    };
    let mut best: Option<mlp::TrainResult> = None;
    for wd in decays {
        let sgd = sgd_config(cfg, job.regularizer, wd, seed);
        let model = Mlp::standard(job.dim, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        let r = mlp::train_augmented(model, &ds.train, &ds.val, &noise, cfg.n_aug, &sgd)
            .map_err(|e| HarnessError::learner(job.label(), e))?;
        if best.as_ref().map_or(true, |b| r.val_loss < b.val_loss) {
            best = Some(r);
        }
    }
    let r = best.expect("at least one candidate");
    let test_l2 = mlp::mse(&r.predictor.predict(&ds.test.x), &ds.test.f);
    Ok(row(job, test_l2, r.val_loss, r.t_used))
}

pub fn run_kernel_job(cfg: &ExperimentConfig, job: &Job, ds: &Dataset) -> Result<ResultRow, HarnessError> {
    let k = &cfg.kernel;
    let err = |e: &dyn std::fmt::Display| HarnessError::Other(format!("{}: {e}", job.label()));
    let kspec = KernelSpec::matern(job.dim, k.nu + job.dim as f64 / 2.0, k.phi).map_err(|e| err(&e))?;
    let noise = job.noise_spec()?;
    let mut rng = ChaCha8Rng::seed_from_u64(train_seed(cfg, job));
    let gram = SmoothedGram::build(&kspec, &noise, k.n_aug, &ds.train.x, &mut rng).map_err(|e| err(&e))?;
    let beta = k.step_scale / gram.eta_max();
    let mut tc = match job.regularizer {
        Regularizer::WeightDecay => TrainConfig::fixed(beta, k.weight_decay, k.weight_decay_iters),
        Regularizer::EarlyStopping => {
            let mut t = TrainConfig::early_stopping(beta, 0.0);
            t.t_max = k.early_stop_max_iters;
            t.stop_rule = kernel_gd::StopRule::ValidationEarlyStop { check_every: k.eval_every, patience: None };
            t
        }
    };
    tc.n_aug = k.n_aug;
    let fit = kernel_gd::gd_fit_validated(&gram, &ds.train.y, &tc, &ds.val.x, &ds.val.y).map_err(|e| err(&e))?;
    let pred = kernel_gd::predict_many(&gram, &fit, &ds.test.x).map_err(|e| err(&e))?;
    let val = fit.val_trajectory.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(row(job, mlp::mse(&pred, &ds.test.f), val, fit.t_used))
}

fn row(job: &Job, test_l2: f64, val_l2: f64, t_used: u64) -> ResultRow {
    ResultRow {
        learner: job.learner,
        dim: job.dim,
        noise: job.noise,
        regularizer: job.regularizer,
        n: job.n,
        sigma: job.sigma,
        seed: job.seed,
        test_l2,
        val_l2,
        t_used,
    }
}

/// Runs the jobs on the worker pool; rows come back sorted by key.
pub fn run_jobs(cfg: &ExperimentConfig, jobs: &[Job]) -> Result<Vec<ResultRow>, HarnessError> {
    let jobs = normalize_jobs(jobs.iter().copied());
    let mut truth_keys: Vec<(usize, u64)> = jobs.iter().map(|j| (j.dim, j.seed)).collect();
    truth_keys.sort_unstable();
    truth_keys.dedup();
    let truths = par_map(&truth_keys, cfg.workers, |&(d, s)| ground_truth(cfg, d, s));
    let mut truth_map = HashMap::new();
    for (k, t) in truth_keys.into_iter().zip(truths) {
        truth_map.insert(k, t?);
    }
    let mut data_keys: Vec<(usize, usize, u64)> = jobs.iter().map(|j| (j.dim, j.n, j.seed)).collect();
    data_keys.sort_unstable();
    data_keys.dedup();
    let mut data_map = HashMap::new();
    for &(d, n, s) in &data_keys {
        data_map.insert((d, n, s), dataset(cfg, &truth_map[&(d, s)], d, n, s)?);
    }
    let rows = par_map(&jobs, cfg.workers, |job| {
        let ds = &data_map[&(job.dim, job.n, job.seed)];
        match job.learner {
            Learner::Mlp => run_mlp_job(cfg, job, ds),
            Learner::KernelGd => run_kernel_job(cfg, job, ds),
        }
    });
    let mut rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    rows.sort_by_key(|r| r.key());
    Ok(rows)
}

type CellKey = (Learner, usize, NoiseType, Regularizer, usize);

/// The validation-selected run of one (cell, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub learner: Learner,
    pub dim: usize,
    pub noise: NoiseType,
    pub regularizer: Regularizer,
    pub n: usize,
    pub seed: u64,
    pub sigma: f64,
    pub test_l2: f64,
    pub val_l2: f64,
}

/// Candidates for a smoothing type are its own rows plus the sigma = 0 run;
/// ties go to the smaller sigma.
pub fn select(rows: &[ResultRow], noise_types: &[NoiseType]) -> Vec<Selection> {
    let mut groups: BTreeMap<(CellKey, u64), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        for &t in noise_types {
            if r.noise == t || r.noise == NoiseType::N {
                groups.entry(((r.learner, r.dim, t, r.regularizer, r.n), r.seed)).or_default().push(r);
            }
        }
    }
    let mut out = Vec::new();
    for (((learner, dim, noise, regularizer, n), seed), mut cands) in groups {
        if noise != NoiseType::N && !cands.iter().any(|r| r.noise == noise) {
            continue;
        }
        if noise == NoiseType::N && cands.is_empty() {
            continue;
        }
        cands.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
        let best = cands.iter().fold(cands[0], |b, r| if r.val_l2 < b.val_l2 { r } else { b });
        out.push(Selection {
            learner,
            dim,
            noise,
            regularizer,
            n,
            seed,
            sigma: best.sigma,
            test_l2: best.test_l2,
            val_l2: best.val_l2,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Cell {
    pub learner: Learner,
    pub dim: usize,
    pub noise: NoiseType,
    pub regularizer: Regularizer,
    pub n: usize,
    pub mean_test_l2: f64,
    pub stderr: f64,
    pub seeds: usize,
    pub median_sigma: f64,
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn table1_cells(selections: &[Selection]) -> Vec<Table1Cell> {
    let mut groups: BTreeMap<CellKey, Vec<&Selection>> = BTreeMap::new();
    for s in selections {
        groups.entry((s.learner, s.dim, s.noise, s.regularizer, s.n)).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|((learner, dim, noise, regularizer, n), sel)| {
            let tests: Vec<f64> = sel.iter().map(|s| s.test_l2).collect();
            let sigmas: Vec<f64> = sel.iter().map(|s| s.sigma).collect();
            let (m, se) = mean_stderr(&tests);
            Table1Cell { learner, dim, noise, regularizer, n, mean_test_l2: m, stderr: se, seeds: sel.len(), median_sigma: median(&sigmas) }
        })
        .collect()
}

/// One point of a loss-versus-sigma curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub learner: Learner,
    pub dim: usize,
    pub noise: NoiseType,
    pub regularizer: Regularizer,
    pub n: usize,
    pub sigma: f64,
    pub mean_test_l2: f64,
    pub stderr: f64,
    pub mean_val_l2: f64,
    /// Seeds whose validation-selected sigma is this one.
    pub times_selected: usize,
    /// Minimizer of the mean validation loss over the grid.
    pub selected: bool,
}

pub fn ucurve(rows: &[ResultRow], noise_types: &[NoiseType]) -> Vec<CurvePoint> {
    let sel = select(rows, noise_types);
    let mut out = Vec::new();
    for &t in noise_types.iter().filter(|t| **t != NoiseType::N) {
        let mut groups: BTreeMap<(Learner, usize, Regularizer, usize), BTreeMap<u64, Vec<&ResultRow>>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.noise == t || r.noise == NoiseType::N) {
            groups.entry((r.learner, r.dim, r.regularizer, r.n)).or_default().entry(r.sigma.to_bits()).or_default().push(r);
        }
        for ((learner, dim, regularizer, n), by_sigma) in groups {
            if !by_sigma.values().flatten().any(|r| r.noise == t) {
                continue;
            }
            let start = out.len();
            for (bits, rs) in by_sigma {
                let sigma = f64::from_bits(bits);
                let tests: Vec<f64> = rs.iter().map(|r| r.test_l2).collect();
                let (m, se) = mean_stderr(&tests);
                let mv = rs.iter().map(|r| r.val_l2).sum::<f64>() / rs.len() as f64;
                let times_selected = sel
                    .iter()
                    .filter(|s| (s.learner, s.dim, s.noise, s.regularizer, s.n) == (learner, dim, t, regularizer, n) && s.sigma == sigma)
                    .count();
                out.push(CurvePoint {
                    learner,
                    dim,
                    noise: t,
                    regularizer,
                    n,
                    sigma,
                    mean_test_l2: m,
                    stderr: se,
                    mean_val_l2: mv,
                    times_selected,
                    selected: false,
                });
            }
            let best = (start..out.len()).fold(start, |b, i| if out[i].mean_val_l2 < out[b].mean_val_l2 { i } else { b });
            out[best].selected = true;
        }
    }
    out
}

/// Raw rows, per-seed selections and the averaged cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1Output {
    pub rows: Vec<ResultRow>,
    pub selections: Vec<Selection>,
    pub cells: Vec<Table1Cell>,
}

pub fn run_table1(cfg: &ExperimentConfig) -> Result<Table1Output, HarnessError> {
    let rows = run_jobs(cfg, &grid_jobs(cfg))?;
    let selections = select(&rows, &cfg.noise_types);
    let cells = table1_cells(&selections);
    Ok(Table1Output { rows, selections, cells })
}

pub fn run_ucurve(cfg: &ExperimentConfig) -> Result<(Vec<ResultRow>, Vec<CurvePoint>), HarnessError> {
    let rows = run_jobs(cfg, &grid_jobs(cfg))?;
    let curve = ucurve(&rows, &cfg.noise_types);
    Ok((rows, curve))
}

/// Cells (matched on everything but the noise type) where `worse` has the
/// larger mean test loss, and the number of matched cells.
pub fn ordering_count(cells: &[Table1Cell], better: NoiseType, worse: NoiseType) -> (usize, usize) {
    let (mut wins, mut total) = (0, 0);
    for b in cells.iter().filter(|c| c.noise == better) {
        if let Some(w) = cells.iter().find(|c| c.noise == worse && (c.learner, c.dim, c.regularizer, c.n) == (b.learner, b.dim, b.regularizer, b.n)) {
            total += 1;
            if w.mean_test_l2 > b.mean_test_l2 {
                wins += 1;
            }
        }
    }
    (wins, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(noise: NoiseType, sigma: f64, seed: u64, val: f64, test: f64) -> ResultRow {
        ResultRow {
            learner: Learner::Mlp,
            dim: 1,
            noise,
            regularizer: Regularizer::EarlyStopping,
            n: 50,
            sigma,
            seed,
            test_l2: test,
            val_l2: val,
            t_used: 1,
        }
    }

    #[test]
    fn zero_sigma_is_the_plain_run() {
        let cfg = ExperimentConfig { dims: vec![1], sizes: vec![50], seeds: 2, ..ExperimentConfig::quick() };
        let jobs = grid_jobs(&cfg);
        // per (reg, seed): 7 G, 7 L, 1 N
        assert_eq!(jobs.len(), 2 * 2 * 15);
        assert_eq!(jobs.iter().filter(|j| j.sigma == 0.0).count(), 4);
        assert!(jobs.iter().all(|j| j.sigma > 0.0 || j.noise == NoiseType::N));
    }

    #[test]
    fn selection_uses_validation_and_prefers_small_sigma() {
        let rows = vec![
            r(NoiseType::N, 0.0, 0, 0.3, 9.0),
            r(NoiseType::G, 0.1, 0, 0.2, 1.0),
            r(NoiseType::G, 0.2, 0, 0.2, 5.0),
            r(NoiseType::N, 0.0, 1, 0.1, 2.0),
            r(NoiseType::G, 0.1, 1, 0.4, 1.0),
        ];
        let sel = select(&rows, &[NoiseType::G, NoiseType::N]);
        let g: Vec<_> = sel.iter().filter(|s| s.noise == NoiseType::G).collect();
        assert_eq!(g.len(), 2);
        assert_eq!((g[0].sigma, g[0].test_l2), (0.1, 1.0));
        assert_eq!((g[1].sigma, g[1].test_l2), (0.0, 2.0));
        let cells = table1_cells(&sel);
        let gc = cells.iter().find(|c| c.noise == NoiseType::G).unwrap();
        assert_eq!(gc.mean_test_l2, 1.5);
        let curve = ucurve(&rows, &[NoiseType::G]);
        assert_eq!(curve.len(), 3);
        assert_eq!(curve[0].sigma, 0.0);
        assert_eq!(curve[0].mean_test_l2, 5.5);
        assert_eq!(curve.iter().map(|c| c.times_selected).sum::<usize>(), 2);
        assert_eq!(curve.iter().filter(|c| c.selected).count(), 1);
    }

    #[test]
    fn stats() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, se) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
