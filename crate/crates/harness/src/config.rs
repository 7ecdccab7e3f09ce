//! Experiment configuration, read from TOML. Every field has a default, so an
//! empty file (or no file) gives the full protocol.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smoothgd::mlp::{AugLoss, Regularizer};
use smoothgd::schedules::Regime;

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    KernelGd,
    Mlp,
}

/// Augmentation noise used by a run: Gaussian, Laplace or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NoiseType {
    G,
    L,
    N,
}

impl NoiseType {
    pub fn label(self) -> &'static str {
        match self {
            NoiseType::G => "G",
            NoiseType::L => "L",
            NoiseType::N => "N",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    /// Matérn smoothness of the ground-truth process.
    pub nu: f64,
    pub rho: f64,
    pub variance: f64,
    pub anchors: usize,
    pub jitter: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self { nu: 5.0, rho: 1.0, variance: 1.0, anchors: 2000, jitter: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Candidate weight decay strengths; with more than one, the strength is
    /// chosen per run by validation loss.
    pub weight_decays: Vec<f64>,
    pub weight_decay_iters: u64,
    pub early_stop_max_iters: u64,
    pub eval_every: u64,
    pub patience: Option<u64>,
    pub augment_per_example: usize,
    pub eval_augment: Option<usize>,
    pub antithetic: bool,
    pub loss: AugLoss,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            batch_size: 10,
            weight_decays: vec![1e-4],
            weight_decay_iters: 10_000,
            early_stop_max_iters: 100_000,
            eval_every: 200,
            patience: None,
            augment_per_example: 8,
            eval_augment: None,
            antithetic: true,
            loss: AugLoss::Averaged,
        }
    }
}

/// Kernel gradient descent learner: Matérn base kernel with Bessel order
/// `nu` (so `m0 = nu + D/2`) smoothed with shared augmentations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub nu: f64,
    pub phi: f64,
    pub n_aug: usize,
    /// `beta = step_scale / eta_max`.
    pub step_scale: f64,
    pub weight_decay: f64,
    pub weight_decay_iters: u64,
    pub early_stop_max_iters: u64,
    pub eval_every: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            nu: 1.5,
            phi: 1.0,
            n_aug: 100,
            step_scale: 0.5,
            weight_decay: 1e-4,
            weight_decay_iters: 10_000,
            early_stop_max_iters: 100_000,
            eval_every: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub sizes: Vec<usize>,
    pub reps: u64,
    pub dim: usize,
    pub regime: Regime,
    /// Smoothness of the base Matérn kernel.
    pub m0: f64,
    pub phi: f64,
    /// Target smoothness used by the schedule.
    pub mf: f64,
    pub c_prop: f64,
    pub n_aug: usize,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            sizes: vec![25, 50, 100, 200, 400],
            reps: 20,
            dim: 1,
            regime: Regime::GaussianSmoothing,
            m0: 1.0,
            phi: 1.0,
            mf: 5.0,
            c_prop: 1.0,
            n_aug: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub intrinsic_dim: usize,
    pub m0: f64,
    pub mf: f64,
    pub c_prop: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { sizes: vec![50, 100, 200, 400, 800, 1600], dim: 2, intrinsic_dim: 1, m0: 2.0, mf: 2.5, c_prop: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub learner: Learner,
    pub dims: Vec<usize>,
    pub noise_types: Vec<NoiseType>,
    pub regularizers: Vec<Regularizer>,
    pub sizes: Vec<usize>,
    pub sigma_grid: Vec<f64>,
    pub seeds: u64,
    pub master_seed: u64,
    pub n_aug: usize,
    pub noise_var: f64,
    pub test_size: usize,
    pub truth: TruthConfig,
    pub mlp: MlpConfig,
    pub kernel: KernelConfig,
    pub rate: RateConfig,
    pub schedule: ScheduleConfig,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub out_dir: PathBuf,
}

pub fn default_sigma_grid() -> Vec<f64> {
    (0..=12).map(|i| i as f64 * 0.05).collect()
}

pub fn quick_sigma_grid() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.6]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            learner: Learner::Mlp,
            dims: vec![1, 2, 3],
            noise_types: vec![NoiseType::G, NoiseType::L, NoiseType::N],
            regularizers: vec![Regularizer::WeightDecay, Regularizer::EarlyStopping],
            sizes: vec![50, 100, 200],
            sigma_grid: default_sigma_grid(),
            seeds: 15,
            master_seed: 20240601,
            n_aug: 1000,
            noise_var: smoothgd::datagen::NOISE_VAR,
            test_size: smoothgd::datagen::TEST_SIZE,
            truth: TruthConfig::default(),
            mlp: MlpConfig::default(),
            kernel: KernelConfig::default(),
            rate: RateConfig::default(),
            schedule: ScheduleConfig::default(),
            workers: 0,
            out_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    /// Reduced grid: coarser sigma grid, sizes {50, 200}, bounded early
    /// stopping and cheaper predictor averaging.
    pub fn quick() -> Self {
        let mut c = Self::default();
        c.make_quick();
        c
    }

    pub fn make_quick(&mut self) {
        self.sigma_grid = quick_sigma_grid();
        self.sizes = vec![50, 200];
        self.mlp.patience = Some(10);
        self.mlp.early_stop_max_iters = 20_000;
        self.mlp.eval_augment = Some(100);
        self.mlp.augment_per_example = 4;
        self.kernel.n_aug = 50;
        self.kernel.early_stop_max_iters = 20_000;
        self.rate.reps = 8;
    }

    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let c: Self = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let s = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if self.sigma_grid.is_empty() || self.sigma_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("sigma_grid must be non-empty and strictly ascending".into());
        }
        if self.sigma_grid.iter().any(|s| !(*s >= 0.0)) {
            return bad("sigma_grid entries must be nonnegative".into());
        }
        if let Some(d) = self.dims.iter().find(|d| !(1..=3).contains(*d)) {
            return bad(format!("dimension {d} has no manifold; use 1, 2 or 3"));
        }
        if self.sizes.iter().any(|&n| n < 2) {
            return bad("training sizes must be at least 2".into());
        }
        if self.n_aug == 0 {
            return bad("n_aug must be positive".into());
        }
        if self.mlp.weight_decays.is_empty() {
            return bad("mlp.weight_decays must list at least one strength".into());
        }
        if !(self.noise_var >= 0.0) {
            return bad("noise_var must be nonnegative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.sigma_grid.len(), 13);
        assert!((c.sigma_grid[12] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = ExperimentConfig::from_toml_str("seeds = 3\n[mlp]\nlr = 0.05\n").unwrap();
        assert_eq!(c.seeds, 3);
        assert_eq!(c.mlp.lr, 0.05);
        assert_eq!(c.mlp.momentum, 0.9);
        assert_eq!(c.sizes, vec![50, 100, 200]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(ExperimentConfig::from_toml_str("sigma_grid = [0.1, 0.05]").is_err());
        assert!(ExperimentConfig::from_toml_str("seeds = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("dims = [4]").is_err());
        assert!(ExperimentConfig::from_toml_str("nonsense = 1").is_err());
    }
}
