//! Empirical and expected smoothing kernels and their Gram matrices.
//!
//! With a noise list `eps_1..eps_N` the empirical smoothing kernel is
//! `K_S(d) = N^-2 sum_a sum_b K(d + eps_a - eps_b)`; its expectation over the
//! noise is `K~_S = K * p_eps * p_eps`, whose spectral density is
//! `S(omega) |phi_eps(omega)|^2`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernels::{spectral_density, Family, Kernel, KernelError, KernelSpec, Radial};
use crate::noise::{self, characteristic_fn, NoiseLaw, NoiseSpec};
use crate::points::PointSet;
use crate::quadrature::{cosine_transform, QuadratureError};

#[derive(Debug, Error)]
pub enum SmoothingError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Noise(#[from] noise::NoiseError),
    #[error("expected smoothing kernel quadrature failed at diff {diff:?}: {source}")]
    Quadrature { diff: Vec<f64>, source: QuadratureError },
    #[error("points {0} and {1} coincide (separation distance is zero)")]
    DuplicatePoints(usize, usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("need at least one {0}")]
    Empty(&'static str),
}

// ---------------------------------------------------------------------------
// Source sums S(z) = sum_b K(z - e_b)

/// Precomputed sums over a list of noise sources, with exact fast paths in
/// one dimension.
#[derive(Debug, Clone)]
enum Sources {
    Direct { points: PointSet },
    /// Half-integer Matérn in 1-D: left and right exponential moments.
    ExpPoly(ExpPolySources),
    /// Compact support in 1-D.
    Window { sorted: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone)]
struct ExpPolySources {
    sorted: Vec<f64>,
    rate: f64,
    coef: Vec<f64>,
    binom: Vec<Vec<f64>>,
    /// left[i * m + k] = sum_{b <= i} exp(-rate (e_i - e_b)) (e_i - e_b)^k
    left: Vec<f64>,
    /// right[i * m + k] = sum_{b >= i} exp(-rate (e_b - e_i)) (e_b - e_i)^k
    right: Vec<f64>,
}

impl ExpPolySources {
    fn new(mut sorted: Vec<f64>, rate: f64, coef: Vec<f64>) -> Self {
        sorted.sort_by(f64::total_cmp);
        let m = coef.len();
        let n = sorted.len();
        let mut binom = vec![vec![0.0; m]; m];
        for k in 0..m {
            binom[k][0] = 1.0;
            for j in 1..=k {
                binom[k][j] = binom[k - 1][j - 1] + if j < k { binom[k - 1][j] } else { 0.0 };
            }
        }
        let mut left = vec![0.0; n * m];
        let mut right = vec![0.0; n * m];
        let mut pw = vec![0.0; m];
        for i in 0..n {
            left[i * m] = 1.0;
            if i > 0 {
                let delta = sorted[i] - sorted[i - 1];
                shift(&binom, delta, rate, &left[(i - 1) * m..i * m], &mut pw);
                for k in 0..m {
                    left[i * m + k] += pw[k];
                }
            }
        }
        for i in (0..n).rev() {
            right[i * m] = 1.0;
            if i + 1 < n {
                let delta = sorted[i + 1] - sorted[i];
                shift(&binom, delta, rate, &right[(i + 1) * m..(i + 2) * m], &mut pw);
                for k in 0..m {
                    right[i * m + k] += pw[k];
                }
            }
        }
        Self { sorted, rate, coef, binom, left, right }
    }

    fn combine(&self, moments: &[f64], delta: f64, scratch: &mut [f64]) -> f64 {
        shift(&self.binom, delta, self.rate, moments, scratch);
        self.coef.iter().zip(scratch.iter()).map(|(c, s)| c * s).sum()
    }

    /// Sum over all sources at query `z`, where `split` is the number of
    /// sources `<= z`.
    fn eval_split(&self, z: f64, split: usize, scratch: &mut [f64]) -> f64 {
        let m = self.coef.len();
        let mut total = 0.0;
        if split > 0 {
            let i = split - 1;
            total += self.combine(&self.left[i * m..(i + 1) * m], z - self.sorted[i], scratch);
        }
        if split < self.sorted.len() {
            let i = split;
            total += self.combine(&self.right[i * m..(i + 1) * m], self.sorted[i] - z, scratch);
        }
        total
    }
}

/// Moments re-centred by `delta`:
/// `out[k] = exp(-rate delta) sum_j C(k, j) delta^(k-j) m[j]`.
fn shift(binom: &[Vec<f64>], delta: f64, rate: f64, m: &[f64], out: &mut [f64]) {
    let e = (-rate * delta).exp();
    let len = m.len();
    let mut dp = [1.0f64; 32];
    for k in 1..len {
        dp[k] = dp[k - 1] * delta;
    }
    for k in 0..len {
        let mut s = 0.0;
        for j in 0..=k {
            s += binom[k][j] * dp[k - j] * m[j];
        }
        out[k] = e * s;
    }
}

impl Sources {
    fn new(kernel: &Kernel, noise: &PointSet) -> Self {
        if kernel.dim() == 1 {
            let vals = noise.as_slice().to_vec();
            match kernel.radial() {
                Some(Radial::ExpPoly { rate, coef }) if coef.len() <= 32 => {
                    return Sources::ExpPoly(ExpPolySources::new(vals, *rate, coef.clone()));
                }
                _ => {}
            }
            if let Some(radius) = kernel.support_radius() {
                let mut sorted = vals;
                sorted.sort_by(f64::total_cmp);
                return Sources::Window { sorted, radius };
            }
        }
        Sources::Direct { points: noise.clone() }
    }

    fn len(&self) -> usize {
        match self {
            Sources::Direct { points } => points.len(),
            Sources::ExpPoly(s) => s.sorted.len(),
            Sources::Window { sorted, .. } => sorted.len(),
        }
    }

    /// `sum_a sum_b K(d + q_a - e_b)` for query offsets `q` (sorted ascending
    /// in one dimension).
    fn double_sum(&self, kernel: &Kernel, d: &[f64], q: &PointSet) -> f64 {
        match self {
            Sources::Direct { points } => {
                let dim = d.len();
                let mut z = vec![0.0; dim];
                let mut total = 0.0;
                for qa in q.rows() {
                    for eb in points.rows() {
                        for c in 0..dim {
                            z[c] = d[c] + qa[c] - eb[c];
                        }
                        total += kernel.eval(&z);
                    }
                }
                total
            }
            Sources::ExpPoly(s) => {
                let mut scratch = vec![0.0; s.coef.len()];
                let mut split = 0usize;
                let mut total = 0.0;
                let n = s.sorted.len();
                for &qa in q.as_slice() {
                    let z = d[0] + qa;
                    while split < n && s.sorted[split] <= z {
                        split += 1;
                    }
                    total += s.eval_split(z, split, &mut scratch);
                }
                total * kernel.variance()
            }
            Sources::Window { sorted, radius } => {
                let mut total = 0.0;
                let mut lo = 0usize;
                for &qa in q.as_slice() {
                    let z = d[0] + qa;
                    while lo < sorted.len() && sorted[lo] <= z - radius {
                        lo += 1;
                    }
                    let mut b = lo;
                    while b < sorted.len() && sorted[b] < z + radius {
                        total += kernel.eval(&[z - sorted[b]]);
                        b += 1;
                    }
                }
                total
            }
        }
    }

    /// Noise offsets in the order the fast paths expect.
    fn queries(&self, noise: &PointSet) -> PointSet {
        match self {
            Sources::Direct { .. } => noise.clone(),
            _ => sorted_1d(noise),
        }
    }
}

fn sorted_1d(noise: &PointSet) -> PointSet {
    let mut v = noise.as_slice().to_vec();
    v.sort_by(f64::total_cmp);
    PointSet::new(1, v)
}

/// The empirical smoothing kernel for a fixed noise list.
#[derive(Debug, Clone)]
pub struct SmoothingKernel {
    kernel: Kernel,
    sources: Sources,
    queries: PointSet,
}

impl SmoothingKernel {
    pub fn new(kernel: Kernel, noise: &PointSet) -> Result<Self, SmoothingError> {
        if noise.is_empty() {
            return Err(SmoothingError::Empty("noise draw"));
        }
        if noise.dim() != kernel.dim() {
            return Err(SmoothingError::Dimension { expected: kernel.dim(), got: noise.dim() });
        }
        let sources = Sources::new(&kernel, noise);
        let queries = sources.queries(noise);
        Ok(Self { kernel, sources, queries })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn n_aug(&self) -> usize {
        self.sources.len()
    }

    /// `K_S(d)`.
    pub fn eval(&self, d: &[f64]) -> f64 {
        let n = self.n_aug() as f64;
        self.sources.double_sum(&self.kernel, d, &self.queries) / (n * n)
    }

    /// `N^-1 M^-1 sum_a sum_b K(d + q_a - e_b)` with `q` drawn separately
    /// from this kernel's own list `e`.
    pub fn cross(&self, d: &[f64], other_noise: &PointSet) -> f64 {
        let q = self.sources.queries(other_noise);
        let norm = (self.n_aug() * q.len()) as f64;
        self.sources.double_sum(&self.kernel, d, &q) / norm
    }
}

/// `K_S(diff)` for an explicit noise list.
pub fn empirical_smoothing_kernel(kspec: &KernelSpec, noise: &PointSet, diff: &[f64]) -> Result<f64, SmoothingError> {
    if diff.len() != kspec.dim {
        return Err(SmoothingError::Dimension { expected: kspec.dim, got: diff.len() });
    }
    Ok(SmoothingKernel::new(kspec.compile()?, noise)?.eval(diff))
}

// ---------------------------------------------------------------------------
// Expected smoothing kernel

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedMethod {
    /// No smoothing: the base kernel.
    Plain,
    /// Gaussian kernel with Gaussian noise.
    ClosedForm,
    /// One-dimensional spectral quadrature, or a product of them.
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expected {
    pub value: f64,
    /// Quadrature error estimate or Monte Carlo standard error.
    pub error: f64,
    pub method: ExpectedMethod,
}

/// Number of paired draws used by the Monte Carlo fallback.
pub const MC_DRAWS: usize = 200_000;
const MC_SEED: u64 = 0x5eed_0f_5a;
const QUAD_TOL: f64 = 1e-13;

#[derive(Debug, Clone)]
enum Plan {
    Plain,
    GaussClosed { var: f64, amp: f64, inv4s2: f64 },
    /// Product of one-dimensional factors, each (unit-variance kernel, noise).
    Separable { var: f64, factors: Vec<(KernelSpec, NoiseSpec)> },
    MonteCarlo,
}

/// The expected smoothing kernel `K~_S`.
#[derive(Debug, Clone)]
pub struct ExpectedKernel {
    kernel: Kernel,
    noise: NoiseSpec,
    plan: Plan,
}

impl ExpectedKernel {
    pub fn new(kspec: &KernelSpec, nspec: &NoiseSpec) -> Result<Self, SmoothingError> {
        let kernel = kspec.compile()?;
        nspec.validate()?;
        if nspec.dim != kspec.dim {
            return Err(SmoothingError::Dimension { expected: kspec.dim, got: nspec.dim });
        }
        let plan = Self::plan(kspec, nspec);
        Ok(Self { kernel, noise: nspec.clone(), plan })
    }

    fn plan(k: &KernelSpec, n: &NoiseSpec) -> Plan {
        if n.is_trivial() {
            return Plan::Plain;
        }
        if let (Family::Gaussian { sigma }, NoiseLaw::Gaussian) = (&k.family, n.law) {
            let s2 = sigma * sigma + n.sigma_n * n.sigma_n;
            let amp = (sigma * sigma / s2).powf(k.dim as f64 / 2.0);
            return Plan::GaussClosed { var: k.variance, amp, inv4s2: 1.0 / (4.0 * s2) };
        }
        let noise_separable = k.dim == 1 || matches!(n.law, NoiseLaw::Gaussian | NoiseLaw::TensorGeneralizedLaplace);
        if !noise_separable || !k.has_spectrum() {
            return Plan::MonteCarlo;
        }
        let n1 = NoiseSpec { law: n.law, sigma_n: n.sigma_n, m_eps: n.m_eps, dim: 1 };
        let n1 = if n1.law == NoiseLaw::GeneralizedLaplace { NoiseSpec { law: NoiseLaw::TensorGeneralizedLaplace, ..n1 } } else { n1 };
        let unit = |f: &KernelSpec| KernelSpec { variance: 1.0, ..f.clone() };
        match &k.family {
            Family::TensorProduct { factors } => Plan::Separable {
                var: k.value_at_zero(),
                factors: factors.iter().map(|f| (unit(f), n1.clone())).collect(),
            },
            Family::Gaussian { sigma } => Plan::Separable {
                var: k.variance,
                factors: (0..k.dim).map(|_| (KernelSpec::gaussian(1, *sigma).expect("valid"), n1.clone())).collect(),
            },
            _ if k.dim == 1 => Plan::Separable { var: k.variance, factors: vec![(unit(k), n1)] },
            _ => Plan::MonteCarlo,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn method(&self) -> ExpectedMethod {
        match self.plan {
            Plan::Plain => ExpectedMethod::Plain,
            Plan::GaussClosed { .. } => ExpectedMethod::ClosedForm,
            Plan::Separable { .. } => ExpectedMethod::Quadrature,
            Plan::MonteCarlo => ExpectedMethod::MonteCarlo,
        }
    }

    pub fn eval(&self, diff: &[f64]) -> Result<Expected, SmoothingError> {
        if diff.len() != self.kernel.dim() {
            return Err(SmoothingError::Dimension { expected: self.kernel.dim(), got: diff.len() });
        }
        match &self.plan {
            Plan::Plain => Ok(Expected { value: self.kernel.eval(diff), error: 0.0, method: ExpectedMethod::Plain }),
            Plan::GaussClosed { var, amp, inv4s2 } => {
                let r2: f64 = diff.iter().map(|x| x * x).sum();
                Ok(Expected { value: var * amp * (-r2 * inv4s2).exp(), error: 0.0, method: ExpectedMethod::ClosedForm })
            }
            Plan::Separable { var, factors } => {
                let mut value = *var;
                let mut rel = 0.0;
                for ((k, n), x) in factors.iter().zip(diff) {
                    let (v, e) = spectral_1d(k, n, *x).map_err(|source| SmoothingError::Quadrature { diff: diff.to_vec(), source })?;
                    value *= v;
                    rel += e / v.abs().max(1e-300);
                }
                Ok(Expected { value, error: value.abs() * rel, method: ExpectedMethod::Quadrature })
            }
            Plan::MonteCarlo => {
                let mut rng = ChaCha8Rng::seed_from_u64(MC_SEED);
                let (value, error) = monte_carlo(&self.kernel, &self.noise, diff, MC_DRAWS, &mut rng);
                Ok(Expected { value, error, method: ExpectedMethod::MonteCarlo })
            }
        }
    }
}

/// One-dimensional `K~_S(x)` by quadrature of `c S(w) |phi(w)|^2`.
fn spectral_1d(k: &KernelSpec, n: &NoiseSpec, x: f64) -> Result<(f64, f64), QuadratureError> {
    if n.is_trivial() {
        return Ok((k.compile().expect("valid").eval(&[x]), 0.0));
    }
    if let (Family::Gaussian { sigma }, NoiseLaw::Gaussian) = (&k.family, n.law) {
        let s2 = sigma * sigma + n.sigma_n * n.sigma_n;
        return Ok(((sigma * sigma / s2).sqrt() * (-x * x / (4.0 * s2)).exp(), 0.0));
    }
    let c = k.inversion_constant().expect("has spectrum");
    let w = |o: f64| {
        let phi = characteristic_fn(n, &[o]);
        c * spectral_density(k, &[o]).expect("has spectrum") * phi * phi
    };
    let r = cosine_transform(w, x, QUAD_TOL)?;
    Ok((r.value, r.error))
}

/// Mean and standard error of `K(diff + eps - eps')` over paired draws.
pub fn monte_carlo<R: Rng + ?Sized>(kernel: &Kernel, nspec: &NoiseSpec, diff: &[f64], draws: usize, rng: &mut R) -> (f64, f64) {
    let a = noise::sample(nspec, draws, rng);
    let b = noise::sample(nspec, draws, rng);
    let mut z = vec![0.0; diff.len()];
    let (mut s, mut s2) = (0.0, 0.0);
    for (ea, eb) in a.rows().zip(b.rows()) {
        for c in 0..z.len() {
            z[c] = diff[c] + ea[c] - eb[c];
        }
        let v = kernel.eval(&z);
        s += v;
        s2 += v * v;
    }
    let m = draws as f64;
    let mean = s / m;
    let var = (s2 / m - mean * mean).max(0.0) * m / (m - 1.0).max(1.0);
    (mean, (var / m).sqrt())
}

/// `K~_S(diff)`.
pub fn expected_smoothing_kernel(kspec: &KernelSpec, nspec: &NoiseSpec, diff: &[f64]) -> Result<Expected, SmoothingError> {
    ExpectedKernel::new(kspec, nspec)?.eval(diff)
}

// ---------------------------------------------------------------------------
// Gram matrices

/// How the smoothing noise enters the Gram matrix.
#[derive(Debug, Clone)]
pub enum NoiseDraws {
    /// One list shared by every point.
    Shared(PointSet),
    /// An independent list per training point; `test` is used at prediction.
    PerPoint { lists: Vec<PointSet>, test: PointSet },
    /// The expectation over the noise.
    Expected,
    /// A matrix supplied directly.
    None,
}

#[derive(Debug, Clone)]
enum Evaluator {
    Shared(SmoothingKernel),
    PerPoint { kernels: Vec<SmoothingKernel>, test: PointSet },
    Expected(ExpectedKernel),
    None,
}

/// A smoothed Gram matrix with its eigendecomposition, eigenvalues sorted in
/// decreasing order.
#[derive(Debug, Clone)]
pub struct SmoothedGram {
    points: PointSet,
    gram: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    noise: NoiseDraws,
    kernel: Option<KernelSpec>,
    noise_spec: Option<NoiseSpec>,
    evaluator: Evaluator,
}

fn check_points(points: &PointSet, dim: usize) -> Result<(), SmoothingError> {
    if points.is_empty() {
        return Err(SmoothingError::Empty("point"));
    }
    if points.dim() != dim {
        return Err(SmoothingError::Dimension { expected: dim, got: points.dim() });
    }
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            if points.row(i) == points.row(j) {
                return Err(SmoothingError::DuplicatePoints(i, j));
            }
        }
    }
    Ok(())
}

/// Fill a symmetric matrix from its upper triangle, splitting rows across
/// the available cores.
fn fill_symmetric<F>(n: usize, f: F) -> Result<DMatrix<f64>, SmoothingError>
where
    F: Fn(usize, usize) -> Result<f64, SmoothingError> + Sync,
{
    let workers = std::thread::available_parallelism().map(|w| w.get()).unwrap_or(1).min(n.max(1));
    let rows: Vec<Result<Vec<f64>, SmoothingError>> = if workers <= 1 {
        (0..n).map(|i| (i..n).map(|j| f(i, j)).collect()).collect()
    } else {
        let mut out: Vec<Option<Result<Vec<f64>, SmoothingError>>> = (0..n).map(|_| None).collect();
        std::thread::scope(|s| {
            let chunks: Vec<_> = out.chunks_mut(n.div_ceil(workers)).enumerate().collect();
            let chunk_len = n.div_ceil(workers);
            for (c, chunk) in chunks {
                let f = &f;
                s.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        let i = c * chunk_len + k;
                        *slot = Some((i..n).map(|j| f(i, j)).collect());
                    }
                });
            }
        });
        out.into_iter().map(|r| r.expect("filled")).collect()
    };
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row?.into_iter().enumerate() {
            let j = i + k;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

fn diff_of(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

impl SmoothedGram {
    fn finish(points: PointSet, gram: DMatrix<f64>, noise: NoiseDraws, kernel: Option<KernelSpec>, noise_spec: Option<NoiseSpec>, evaluator: Evaluator) -> Self {
        let eig = SymmetricEigen::new(gram.clone());
        let n = gram.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Self { points, gram, eigenvalues, eigenvectors, noise, kernel, noise_spec, evaluator }
    }

    /// Gram of `K_S` with one shared noise list of `n_aug` draws.
    pub fn build<R: Rng + ?Sized>(kspec: &KernelSpec, nspec: &NoiseSpec, n_aug: usize, points: &PointSet, rng: &mut R) -> Result<Self, SmoothingError> {
        nspec.validate()?;
        let noise = noise::sample(nspec, n_aug.max(1), rng);
        Self::with_noise(kspec, nspec, noise, points)
    }

    /// Gram of `K_S` for a given shared noise list.
    pub fn with_noise(kspec: &KernelSpec, nspec: &NoiseSpec, noise: PointSet, points: &PointSet) -> Result<Self, SmoothingError> {
        check_points(points, kspec.dim)?;
        let sk = SmoothingKernel::new(kspec.compile()?, &noise)?;
        let diag = sk.eval(&vec![0.0; kspec.dim]);
        let gram = fill_symmetric(points.len(), |i, j| {
            Ok(if i == j { diag } else { sk.eval(&diff_of(points.row(i), points.row(j))) })
        })?;
        Ok(Self::finish(points.clone(), gram, NoiseDraws::Shared(noise), Some(kspec.clone()), Some(nspec.clone()), Evaluator::Shared(sk)))
    }

    /// Gram with an independent noise list for every point.
    pub fn build_per_point<R: Rng + ?Sized>(kspec: &KernelSpec, nspec: &NoiseSpec, n_aug: usize, points: &PointSet, rng: &mut R) -> Result<Self, SmoothingError> {
        nspec.validate()?;
        check_points(points, kspec.dim)?;
        let kernel = kspec.compile()?;
        let lists: Vec<PointSet> = (0..points.len()).map(|_| noise::sample(nspec, n_aug.max(1), rng)).collect();
        let test = noise::sample(nspec, n_aug.max(1), rng);
        let kernels = lists.iter().map(|l| SmoothingKernel::new(kernel.clone(), l)).collect::<Result<Vec<_>, _>>()?;
        let gram = fill_symmetric(points.len(), |i, j| Ok(kernels[j].cross(&diff_of(points.row(i), points.row(j)), &lists[i])))?;
        Ok(Self::finish(
            points.clone(),
            gram,
            NoiseDraws::PerPoint { lists, test: test.clone() },
            Some(kspec.clone()),
            Some(nspec.clone()),
            Evaluator::PerPoint { kernels, test },
        ))
    }

    /// Gram of the expected smoothing kernel `K~_S`.
    pub fn expected(kspec: &KernelSpec, nspec: &NoiseSpec, points: &PointSet) -> Result<Self, SmoothingError> {
        check_points(points, kspec.dim)?;
        let ek = ExpectedKernel::new(kspec, nspec)?;
        let diag = ek.eval(&vec![0.0; kspec.dim])?.value;
        let gram = fill_symmetric(points.len(), |i, j| {
            if i == j {
                Ok(diag)
            } else {
                Ok(ek.eval(&diff_of(points.row(i), points.row(j)))?.value)
            }
        })?;
        Ok(Self::finish(points.clone(), gram, NoiseDraws::Expected, Some(kspec.clone()), Some(nspec.clone()), Evaluator::Expected(ek)))
    }

    /// Wrap a symmetric matrix. Prediction is unavailable.
    pub fn from_matrix(gram: DMatrix<f64>) -> Self {
        assert!(gram.is_square(), "Gram matrix must be square");
        let n = gram.nrows();
        let sym = DMatrix::from_fn(n, n, |i, j| if i <= j { gram[(i, j)] } else { gram[(j, i)] });
        Self::finish(PointSet::zeros(1, n), sym, NoiseDraws::None, None, None, Evaluator::None)
    }

    pub fn n(&self) -> usize {
        self.gram.nrows()
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn eta_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn eta_min(&self) -> f64 {
        self.eigenvalues[self.n() - 1]
    }

    pub fn noise_used(&self) -> &NoiseDraws {
        &self.noise
    }

    pub fn kernel_spec(&self) -> Option<&KernelSpec> {
        self.kernel.as_ref()
    }

    pub fn noise_spec(&self) -> Option<&NoiseSpec> {
        self.noise_spec.as_ref()
    }

    /// Smallest eigenvalue is below `1e-12` times the largest.
    pub fn is_rank_deficient(&self) -> bool {
        self.eta_min() < 1e-12 * self.eta_max()
    }

    /// Relative Frobenius error of `V diag(eta) V^T` against the Gram.
    pub fn reconstruction_error(&self) -> f64 {
        let v = &self.eigenvectors;
        let r = v * DMatrix::from_diagonal(&self.eigenvalues) * v.transpose();
        (r - &self.gram).norm() / self.gram.norm().max(f64::MIN_POSITIVE)
    }

    /// `(K_S(x - x_j))_j`, reusing the stored noise.
    pub fn kernel_vector(&self, x: &[f64]) -> Result<DVector<f64>, SmoothingError> {
        let n = self.n();
        if x.len() != self.points.dim() {
            return Err(SmoothingError::Dimension { expected: self.points.dim(), got: x.len() });
        }
        let mut out = DVector::zeros(n);
        for j in 0..n {
            let d = diff_of(x, self.points.row(j));
            out[j] = match &self.evaluator {
                Evaluator::Shared(sk) => sk.eval(&d),
                Evaluator::PerPoint { kernels, test } => kernels[j].cross(&d, test),
                Evaluator::Expected(ek) => ek.eval(&d)?.value,
                Evaluator::None => return Err(SmoothingError::Empty("kernel to evaluate")),
            };
        }
        Ok(out)
    }

    /// Row `i` holds the kernel vector of `xs.row(i)`.
    pub fn cross_matrix(&self, xs: &PointSet) -> Result<DMatrix<f64>, SmoothingError> {
        let mut m = DMatrix::zeros(xs.len(), self.n());
        for (i, x) in xs.rows().enumerate() {
            let k = self.kernel_vector(x)?;
            m.row_mut(i).copy_from(&k.transpose());
        }
        Ok(m)
    }

    /// Row-major CSV dump of the matrix.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.n()).map(|j| format!("{:e}", self.gram[(i, j)])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Binary dump: `n` as little-endian u64, then `n * n` little-endian f64
    /// in row-major order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.n();
        w.write_all(&(n as u64).to_le_bytes())?;
        for i in 0..n {
            for j in 0..n {
                w.write_all(&self.gram[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: io::Read>(mut r: R) -> io::Result<DMatrix<f64>> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let n = u64::from_le_bytes(b) as usize;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                r.read_exact(&mut b)?;
                m[(i, j)] = f64::from_le_bytes(b);
            }
        }
        Ok(m)
    }
}

/// Gram of `K_S` with a shared list of `n_aug` noise draws.
pub fn build_gram<R: Rng + ?Sized>(kspec: &KernelSpec, nspec: &NoiseSpec, n_aug: usize, points: &PointSet, rng: &mut R) -> Result<SmoothedGram, SmoothingError> {
    SmoothedGram::build(kspec, nspec, n_aug, points, rng)
}

// ---------------------------------------------------------------------------
// Convergence of K_S to K~_S

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapRow {
    pub n_aug: usize,
    pub mean_gap: f64,
}

/// For each `N`, the mean over `reps` noise redraws of
/// `max_{d in diff_grid} |K~_S(d) - K_S(d)|`.
pub fn sup_gap_estimate<R: Rng + ?Sized>(
    kspec: &KernelSpec,
    nspec: &NoiseSpec,
    n_grid: &[usize],
    diff_grid: &[Vec<f64>],
    reps: usize,
    rng: &mut R,
) -> Result<Vec<GapRow>, SmoothingError> {
    if n_grid.is_empty() || diff_grid.is_empty() {
        return Err(SmoothingError::Empty("grid entry"));
    }
    let ek = ExpectedKernel::new(kspec, nspec)?;
    let target = diff_grid.iter().map(|d| ek.eval(d).map(|e| e.value)).collect::<Result<Vec<_>, _>>()?;
    let kernel = kspec.compile()?;
    let mut out = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut total = 0.0;
        for _ in 0..reps.max(1) {
            let noise = noise::sample(nspec, n.max(1), rng);
            let sk = SmoothingKernel::new(kernel.clone(), &noise)?;
            let gap = diff_grid.iter().zip(&target).map(|(d, t)| (sk.eval(d) - t).abs()).fold(0.0, f64::max);
            total += gap;
        }
        out.push(GapRow { n_aug: n, mean_gap: total / reps.max(1) as f64 });
    }
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    ls_slope(&lx, &ly)
}

pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matern(m0: f64) -> KernelSpec {
        KernelSpec::matern(1, m0, 1.3).unwrap()
    }

    fn brute(k: &Kernel, noise: &PointSet, d: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in noise.rows() {
            for b in noise.rows() {
                let z: Vec<f64> = d.iter().zip(a).zip(b).map(|((x, p), q)| x + p - q).collect();
                s += k.eval(&z);
            }
        }
        s / (noise.len() * noise.len()) as f64
    }

    #[test]
    fn fast_paths_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nspec = NoiseSpec::gaussian(1, 0.4).unwrap();
        let noise = noise::sample(&nspec, 300, &mut rng);
        for spec in [matern(1.0), matern(2.0), matern(4.0), KernelSpec::wendland(1, 1.5, 3.0, 1.2).unwrap()] {
            let k = spec.compile().unwrap();
            let sk = SmoothingKernel::new(k.clone(), &noise).unwrap();
            assert!(!matches!(sk.sources, Sources::Direct { .. }));
            for &d in &[0.0, 0.05, 0.37, 1.4, -2.2] {
                let (a, b) = (sk.eval(&[d]), brute(&k, &noise, &[d]));
                assert!((a - b).abs() < 1e-12, "{spec:?} d = {d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn single_draw_or_zero_noise_is_base_kernel() {
        let k = matern(1.7);
        let one = PointSet::new(1, vec![0.81]);
        let zeros = PointSet::zeros(1, 4);
        let base = crate::kernels::kernel_eval(&k, &[0.3]).unwrap();
        assert!((empirical_smoothing_kernel(&k, &one, &[0.3]).unwrap() - base).abs() < 1e-15);
        assert!((empirical_smoothing_kernel(&k, &zeros, &[0.3]).unwrap() - base).abs() < 1e-15);
    }

    #[test]
    fn gaussian_closed_form_matches_quadrature() {
        let k = KernelSpec::gaussian(1, 0.5).unwrap();
        let n = NoiseSpec::gaussian(1, 0.3).unwrap();
        let closed = expected_smoothing_kernel(&k, &n, &[0.7]).unwrap();
        assert_eq!(closed.method, ExpectedMethod::ClosedForm);
        let c = k.inversion_constant().unwrap();
        let w = |o: f64| c * spectral_density(&k, &[o]).unwrap() * characteristic_fn(&n, &[o]).powi(2);
        let q = cosine_transform(w, 0.7, 1e-13).unwrap();
        assert!((closed.value - q.value).abs() < 1e-10);
    }

    #[test]
    fn gram_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = PointSet::new(1, (0..12).map(|i| i as f64 / 11.0).collect());
        let g = build_gram(&matern(2.0), &NoiseSpec::gaussian(1, 0.2).unwrap(), 50, &pts, &mut rng).unwrap();
        let m = g.matrix();
        assert_eq!(m, &m.transpose());
        assert!(g.eta_min() >= -1e-10 * g.eta_max());
        assert!(g.reconstruction_error() < 1e-9);
        let k = g.kernel_vector(pts.row(3)).unwrap();
        for j in 0..12 {
            assert!((k[j] - m[(3, j)]).abs() < 1e-14);
        }
    }

    #[test]
    fn duplicate_points_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = PointSet::new(1, vec![0.1, 0.5, 0.1]);
        let r = build_gram(&matern(2.0), &NoiseSpec::none(1), 1, &pts, &mut rng);
        assert!(matches!(r, Err(SmoothingError::DuplicatePoints(0, 2))));
    }

    #[test]
    fn binary_dump_round_trip() {
        let g = SmoothedGram::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        assert_eq!(SmoothedGram::read_binary(&buf[..]).unwrap(), *g.matrix());
        let mut csv = Vec::new();
        g.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Lower bounds on the smallest eigenvalue of the expected Gram

/// Noise conditions under which the eigenvalue floor is stated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorCase {
    /// Matérn kernel, generalized Laplace noise.
    Laplace,
    /// Tensor Matérn kernel, tensor generalized Laplace noise.
    TensorLaplace,
    /// Matérn kernel, Gaussian noise.
    Gaussian,
}

impl FloorCase {
    pub const ALL: [FloorCase; 3] = [FloorCase::Laplace, FloorCase::TensorLaplace, FloorCase::Gaussian];

    /// Frozen `ln C` from `examples/calibrate_floors.rs`.
    pub fn ln_constant(self) -> f64 {
        match self {
            FloorCase::Laplace => crate::floor_constants::LN_C_LAPLACE,
            FloorCase::TensorLaplace => crate::floor_constants::LN_C_TENSOR_LAPLACE,
            FloorCase::Gaussian => crate::floor_constants::LN_C_GAUSSIAN,
        }
    }
}

/// `M = (12 / q) (pi Gamma(D/2 + 1)^2 / 9)^(1 / (D + 1))`.
pub fn floor_scale(dim: usize, q: f64) -> f64 {
    let d = dim as f64;
    let g = crate::special::gamma_fn(d / 2.0 + 1.0).expect("small argument");
    12.0 / q * (std::f64::consts::PI * g * g / 9.0).powf(1.0 / (d + 1.0))
}

/// Logarithm of the eigenvalue floor without its constant, for separation
/// distance `q`. `m0` is the per-factor smoothness in the tensor case.
pub fn ln_floor_shape(case: FloorCase, dim: usize, m0: f64, m_eps: f64, sigma_n: f64, q: f64) -> f64 {
    let d = dim as f64;
    let m = floor_scale(dim, q);
    let m2 = m * m;
    let s2 = sigma_n * sigma_n;
    let base = d * m.ln();
    match case {
        FloorCase::Laplace => base - m0 * (1.0 + 4.0 * m2).ln() - m_eps * (1.0 + 4.0 * s2 * m2).ln(),
        FloorCase::TensorLaplace => base - m0 * d * (1.0 + 4.0 * m2).ln() - m_eps * d * (1.0 + 4.0 * s2 * m2).ln(),
        FloorCase::Gaussian => base - m0 * (1.0 + 4.0 * m2).ln() - 8.0 * s2 * m2,
    }
}

/// The calibrated floor `C * shape` in log form.
pub fn ln_eigen_floor(case: FloorCase, dim: usize, m0: f64, m_eps: f64, sigma_n: f64, q: f64) -> f64 {
    case.ln_constant() + ln_floor_shape(case, dim, m0, m_eps, sigma_n, q)
}

/// The kernel, noise and design distribution a floor constant is
/// calibrated for.
#[derive(Debug, Clone)]
pub struct FloorSetup {
    pub case: FloorCase,
    pub kernel: KernelSpec,
    pub m_eps: f64,
    pub sigmas: Vec<f64>,
    pub n_range: (usize, usize),
}

/// Outcome of one design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorCheck {
    pub eta_min: f64,
    /// Round-off and quadrature error bound on `eta_min`.
    pub tolerance: f64,
    pub ln_shape: f64,
    pub sigma_n: f64,
    pub n: usize,
}

impl FloorCheck {
    /// `ln(eta_min / shape)`; the constant must not exceed this.
    pub fn ln_ratio(&self) -> f64 {
        self.eta_min.ln() - self.ln_shape
    }

    /// Whether `eta_min` is resolved well enough for its ratio to be meaningful.
    pub fn resolved(&self) -> bool {
        self.eta_min > 1e3 * self.tolerance
    }

    /// `eta_min >= C * shape`, up to the numerical error in `eta_min`.
    pub fn holds(&self, ln_c: f64) -> bool {
        (ln_c + self.ln_shape).exp() <= self.eta_min + self.tolerance
    }
}

impl FloorSetup {
    pub fn standard(case: FloorCase) -> Self {
        let factor = KernelSpec::matern(1, 1.0, 2.0).expect("valid");
        let kernel = match case {
            FloorCase::TensorLaplace => KernelSpec::tensor(vec![factor.clone(), factor]).expect("valid"),
            _ => factor,
        };
        Self { case, kernel, m_eps: 1.0, sigmas: vec![0.02, 0.05, 0.1], n_range: (3, 8) }
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim
    }

    pub fn noise(&self, sigma_n: f64) -> NoiseSpec {
        let d = self.dim();
        match self.case {
            FloorCase::Laplace => NoiseSpec::generalized_laplace(d, sigma_n, self.m_eps),
            FloorCase::TensorLaplace => NoiseSpec::tensor_laplace(d, sigma_n, self.m_eps),
            FloorCase::Gaussian => NoiseSpec::gaussian(d, sigma_n),
        }
        .expect("valid noise")
    }

    /// Uniform design on the unit cube with a random size and noise scale.
    pub fn random_design<R: Rng + ?Sized>(&self, rng: &mut R) -> (PointSet, f64) {
        let n = rng.gen_range(self.n_range.0..=self.n_range.1);
        let sigma = self.sigmas[rng.gen_range(0..self.sigmas.len())];
        let pts = PointSet::new(self.dim(), (0..n * self.dim()).map(|_| rng.gen::<f64>()).collect());
        (pts, sigma)
    }

    /// Per-factor smoothness.
    fn m0(&self) -> f64 {
        match &self.kernel.family {
            Family::TensorProduct { factors } => factors[0].m0(),
            _ => self.kernel.m0(),
        }
    }

    pub fn check(&self, points: &PointSet, sigma_n: f64) -> Result<FloorCheck, SmoothingError> {
        let g = SmoothedGram::expected(&self.kernel, &self.noise(sigma_n), points)?;
        let q = points.separation_distance();
        let n = points.len() as f64;
        Ok(FloorCheck {
            eta_min: g.eta_min(),
            tolerance: n * (4.0 * QUAD_TOL + 1e-15 * g.eta_max()),
            ln_shape: ln_floor_shape(self.case, self.dim(), self.m0(), self.m_eps, sigma_n, q),
            sigma_n,
            n: points.len(),
        })
    }
}
