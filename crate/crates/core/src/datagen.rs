//! Designs on the line, circle and sphere, Gaussian-process ground truths and
//! noisy observations.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{Kernel, KernelError, KernelSpec};
use crate::points::PointSet;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("covariance factorization failed with jitter {0:e}; increase the jitter")]
    Factorization(f64),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manifold {
    Line,
    Circle,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub kind: Manifold,
    #[serde(default = "one")]
    pub radius: f64,
}

fn one() -> f64 {
    1.0
}

impl ManifoldSpec {
    pub fn new(kind: Manifold) -> Self {
        Self { kind, radius: 1.0 }
    }

    /// The manifold used in ambient dimension `dim` (1, 2 or 3).
    pub fn for_dim(dim: usize) -> Result<Self, DatagenError> {
        match dim {
            1 => Ok(Self::new(Manifold::Line)),
            2 => Ok(Self::new(Manifold::Circle)),
            3 => Ok(Self::new(Manifold::Sphere)),
            _ => Err(DatagenError::Invalid(format!("no manifold for D = {dim}"))),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            Manifold::Line => 1,
            Manifold::Circle => 2,
            Manifold::Sphere => 3,
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self.kind {
            Manifold::Sphere => 2,
            _ => 1,
        }
    }

    /// Deterministic quasi-uniform grid of `m` points.
    pub fn grid(&self, m: usize) -> PointSet {
        let r = self.radius;
        let mut out = PointSet::zeros(self.ambient_dim(), m);
        for i in 0..m {
            let row = out.row_mut(i);
            match self.kind {
                Manifold::Line => row[0] = if m == 1 { 0.5 } else { r * i as f64 / (m - 1) as f64 },
                Manifold::Circle => {
                    let a = 2.0 * PI * i as f64 / m as f64;
                    row[0] = r * a.cos();
                    row[1] = r * a.sin();
                }
                Manifold::Sphere => {
                    // Fibonacci lattice
                    let golden = PI * (3.0 - 5f64.sqrt());
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / m as f64;
                    let s = (1.0 - z * z).sqrt();
                    let a = golden * i as f64;
                    row[0] = r * s * a.cos();
                    row[1] = r * s * a.sin();
                    row[2] = r * z;
                }
            }
        }
        out
    }
}

/// Uniform draws: `[0, radius]` on the line, uniform angle on the circle,
/// normalized Gaussians on the sphere.
pub fn sample_manifold<R: Rng + ?Sized>(spec: &ManifoldSpec, n: usize, rng: &mut R) -> PointSet {
    let r = spec.radius;
    let mut out = PointSet::zeros(spec.ambient_dim(), n);
    for i in 0..n {
        let row = out.row_mut(i);
        match spec.kind {
            Manifold::Line => row[0] = r * rng.gen::<f64>(),
            Manifold::Circle => {
                let a = 2.0 * PI * rng.gen::<f64>();
                row[0] = r * a.cos();
                row[1] = r * a.sin();
            }
            Manifold::Sphere => loop {
                for x in row.iter_mut() {
                    *x = StandardNormal.sample(rng);
                }
                let nrm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if nrm > 1e-8 {
                    row.iter_mut().for_each(|x| *x *= r / nrm);
                    break;
                }
            },
        }
    }
    out
}

/// A sample path of a zero-mean Gaussian process, stored through its values at
/// dense anchors and evaluated anywhere by conditioning on them.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub manifold: ManifoldSpec,
    pub covariance: KernelSpec,
    pub anchors: PointSet,
    /// Path values at the anchors.
    pub values: Vec<f64>,
    /// `L^-T z` for the draw `L z`, `L L^T = Sigma + jitter I`.
    pub weights: Vec<f64>,
    pub jitter: f64,
    kernel: Kernel,
}

pub const DEFAULT_ANCHORS: usize = 2000;
pub const DEFAULT_JITTER: f64 = 1e-10;

pub fn draw_ground_truth<R: Rng + ?Sized>(
    manifold: &ManifoldSpec,
    covariance: &KernelSpec,
    m: usize,
    jitter: f64,
    rng: &mut R,
) -> Result<GroundTruth, DatagenError> {
    if m < 2 {
        return Err(DatagenError::Invalid(format!("need at least 2 anchors, got {m}")));
    }
    if covariance.dim != manifold.ambient_dim() {
        return Err(DatagenError::Invalid(format!(
            "covariance is {}-dimensional, manifold lives in {}",
            covariance.dim,
            manifold.ambient_dim()
        )));
    }
    let kernel = covariance.compile()?;
    let anchors = manifold.grid(m);
    let sigma = gram(&kernel, &anchors, jitter);
    let chol = sigma.cholesky().ok_or(DatagenError::Factorization(jitter))?;
    let z = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
    // Sigma^-1 L z = L^-T z. The path is x -> k(x, Z) w; its anchor values
    // are L z - jitter w, a jitter-sized perturbation of the draw L z.
    let weights = chol.l().transpose().solve_upper_triangular(&z).ok_or(DatagenError::Factorization(jitter))?;
    let mut gt = GroundTruth {
        manifold: *manifold,
        covariance: covariance.clone(),
        anchors,
        values: Vec::new(),
        weights: weights.as_slice().to_vec(),
        jitter,
        kernel,
    };
    gt.values = gt.eval_many(&gt.anchors);
    Ok(gt)
}

fn gram(kernel: &Kernel, pts: &PointSet, jitter: f64) -> DMatrix<f64> {
    let m = pts.len();
    let mut out = DMatrix::zeros(m, m);
    let mut diff = vec![0.0; pts.dim()];
    for i in 0..m {
        out[(i, i)] = kernel.variance() + jitter;
        for j in 0..i {
            for (k, d) in diff.iter_mut().enumerate() {
                *d = pts.row(i)[k] - pts.row(j)[k];
            }
            let v = kernel.eval(&diff);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

impl GroundTruth {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut diff = vec![0.0; x.len()];
        let mut acc = 0.0;
        for (z, w) in self.anchors.rows().zip(&self.weights) {
            for k in 0..x.len() {
                diff[k] = x[k] - z[k];
            }
            acc += w * self.kernel.eval(&diff);
        }
        acc
    }

    pub fn eval_many(&self, xs: &PointSet) -> Vec<f64> {
        xs.rows().map(|x| self.eval(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub x: PointSet,
    /// Observed responses (noiseless for the test split).
    pub y: Vec<f64>,
    /// Noiseless `f*(x)`.
    pub f: Vec<f64>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub noise_var: f64,
}

pub const NOISE_VAR: f64 = 0.01;
pub const TEST_SIZE: usize = 500;

pub fn validation_size(n_train: usize) -> usize {
    n_train.div_ceil(2)
}

fn split<R: Rng + ?Sized>(gt: &GroundTruth, n: usize, noise_sd: f64, rng: &mut R) -> Split {
    let x = sample_manifold(&gt.manifold, n, rng);
    let f = gt.eval_many(&x);
    let y = f
        .iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(rng);
            v + noise_sd * e
        })
        .collect();
    Split { x, y, f }
}

/// Train and validation sets with `N(0, noise_var)` responses, and a noiseless
/// test set. The three splits are independent draws.
pub fn make_dataset<R: Rng + ?Sized>(
    gt: &GroundTruth,
    n_train: usize,
    noise_var: f64,
    test_size: usize,
    rng: &mut R,
) -> Result<Dataset, DatagenError> {
    if n_train < 2 {
        return Err(DatagenError::Invalid(format!("need n_train >= 2, got {n_train}")));
    }
    if !(noise_var >= 0.0) {
        return Err(DatagenError::Invalid(format!("noise variance must be nonnegative, got {noise_var}")));
    }
    let sd = noise_var.sqrt();
    let train = split(gt, n_train, sd, rng);
    let val = split(gt, validation_size(n_train), sd, rng);
    let test = split(gt, test_size, 0.0, rng);
    Ok(Dataset { train, val, test, noise_var })
}

impl Dataset {
    /// Columns `x0..x{D-1}, y, f, split`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), DatagenError> {
        let dim = self.train.x.dim();
        let mut header: Vec<String> = (0..dim).map(|k| format!("x{k}")).collect();
        header.extend(["y".into(), "f".into(), "split".into()]);
        writeln!(w, "{}", header.join(","))?;
        for (name, s) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for i in 0..s.len() {
                let xs: Vec<String> = s.x.row(i).iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{},{:e},{:e},{name}", xs.join(","), s.y[i], s.f[i])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn circle_and_sphere_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [Manifold::Circle, Manifold::Sphere] {
            let spec = ManifoldSpec { kind, radius: 1.7 };
            let pts = sample_manifold(&spec, 1000, &mut rng);
            for p in pts.rows() {
                assert!((crate::points::norm(p) - 1.7).abs() < 1e-12);
            }
            for p in spec.grid(300).rows() {
                assert!((crate::points::norm(p) - 1.7).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn line_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut xs: Vec<f64> = sample_manifold(&ManifoldSpec::new(Manifold::Line), n, &mut rng).as_slice().to_vec();
        xs.sort_by(f64::total_cmp);
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, x)| ((i + 1) as f64 / n as f64 - x).abs().max((i as f64 / n as f64 - x).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "{ks}");
    }

    #[test]
    fn sphere_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let pts = sample_manifold(&ManifoldSpec::new(Manifold::Sphere), n, &mut rng);
        for k in 0..3 {
            let m = pts.rows().map(|p| p[k]).sum::<f64>() / n as f64;
            assert!(m.abs() < 4.0 / (n as f64).sqrt(), "{m}");
        }
    }

    fn small_truth(seed: u64) -> GroundTruth {
        let cov = KernelSpec::matern_classical(1, 5.0, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        draw_ground_truth(&ManifoldSpec::new(Manifold::Line), &cov, 200, DEFAULT_JITTER, &mut rng).unwrap()
    }

    #[test]
    fn interpolates_anchors() {
        let gt = small_truth(4);
        for i in (0..200).step_by(17) {
            let v = gt.eval(gt.anchors.row(i));
            assert!((v - gt.values[i]).abs() < 1e-8, "{i}: {v} vs {}", gt.values[i]);
        }
    }

    #[test]
    fn dataset_sizes_and_determinism() {
        let gt = small_truth(5);
        let mk = || make_dataset(&gt, 50, NOISE_VAR, TEST_SIZE, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let a = mk();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (50, 25, 500));
        assert_eq!(a, mk());
        assert_eq!(a.test.y, a.test.f);
        let clean = make_dataset(&gt, 7, 0.0, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(clean.train.y, clean.train.f);
        assert_eq!(clean.val.len(), 4);
    }

    #[test]
    fn csv_has_all_rows() {
        let gt = small_truth(6);
        let ds = make_dataset(&gt, 4, NOISE_VAR, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 1 + 4 + 2 + 3);
        assert!(s.starts_with("x0,y,f,split\n"));
    }
}
