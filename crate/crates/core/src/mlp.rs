//! Fully connected ReLU network trained by SGD with momentum on the augmented
//! squared loss.
//!
//! Activations are stored feature-major: a `width x batch` row-major buffer,
//! so a layer is one GEMM `Z = W A`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Split;
use crate::noise::{self, NoiseSpec};
use crate::points::PointSet;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("training diverged at iteration {iter}: loss {loss:e}")]
    Diverged { iter: u64, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: network input is {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Noise(#[from] noise::NoiseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const HIDDEN: usize = 100;
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// `out x in` weights, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, w: vec![0.0; n_in * n_out], b: vec![0.0; n_out] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// `c (m x n) = alpha a (m x k) b (k x n) + beta c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, beta: f64, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides describe in-bounds views of `a`, `b` and `c`.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, alpha, a.as_ptr(), rsa as isize, csa as isize, b.as_ptr(), rsb as isize, csb as isize, beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

impl Mlp {
    /// Widths `[D, h1, ..., 1]`, all weights zero.
    pub fn zeros(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        Self { layers: widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() }
    }

    /// Kaiming (fan-in) normal weights `N(0, 2 / fan_in)`, zero biases.
    pub fn kaiming<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let mut m = Self::zeros(widths);
        for l in &mut m.layers {
            let normal = Normal::new(0.0, (2.0 / l.n_in as f64).sqrt()).expect("positive sd");
            l.w.iter_mut().for_each(|w| *w = normal.sample(rng));
        }
        m
    }

    /// The `[D, 100, 100, 1]` network.
    pub fn standard<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self::kaiming(&[dim, HIDDEN, HIDDEN, 1], rng)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.n_out));
        w
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut ws = Workspace::default();
        self.forward_cols(x, 1, &mut ws)[0]
    }

    /// Outputs for the rows of `xs`.
    pub fn forward_batch(&self, xs: &PointSet) -> Vec<f64> {
        let mut ws = Workspace::default();
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.as_slice().chunks(EVAL_CHUNK * xs.dim()) {
            let cols = chunk.len() / xs.dim();
            let x = transpose(chunk, cols, xs.dim());
            out.extend_from_slice(self.forward_cols(&x, cols, &mut ws));
        }
        out
    }

    /// Forward pass on a `D x bs` feature-major input, keeping activations.
    fn forward_cols<'a>(&self, x: &[f64], bs: usize, ws: &'a mut Workspace) -> &'a [f64] {
        let nl = self.layers.len();
        ws.acts.resize(nl + 1, Vec::new());
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        for (li, l) in self.layers.iter().enumerate() {
            let (prev, rest) = ws.acts.split_at_mut(li + 1);
            let a = &prev[li];
            let z = &mut rest[0];
            z.resize(l.n_out * bs, 0.0);
            gemm(l.n_out, l.n_in, bs, 1.0, &l.w, l.n_in, 1, a, bs, 1, 0.0, z);
            let last = li + 1 == nl;
            for (o, row) in z.chunks_mut(bs).enumerate() {
                let bias = l.b[o];
                if last {
                    row.iter_mut().for_each(|v| *v += bias);
                } else {
                    row.iter_mut().for_each(|v| *v = (*v + bias).max(0.0));
                }
            }
        }
        &ws.acts[nl]
    }

    /// Columns come in consecutive groups of `group`, one group per target.
    /// Returns the mean over groups of `(mean_group h - y)^2 / 2` and writes
    /// its gradient into `grad`.
    fn loss_grad(&self, x: &[f64], y: &[f64], bs: usize, group: usize, ws: &mut Workspace, grad: &mut Mlp) -> f64 {
        let nl = self.layers.len();
        self.forward_cols(x, bs, ws);
        let out = &ws.acts[nl];
        let ng = bs / group;
        let mut loss = 0.0;
        ws.delta.clear();
        for (j, cols) in out.chunks(group).enumerate() {
            let r = cols.iter().sum::<f64>() / group as f64 - y[j];
            loss += 0.5 * r * r;
            let dr = r / (ng * group) as f64;
            ws.delta.extend(std::iter::repeat(dr).take(group));
        }
        for li in (0..nl).rev() {
            let l = &self.layers[li];
            let g = &mut grad.layers[li];
            let a_prev = &ws.acts[li];
            // dW = delta (out x bs) a_prev^T (bs x in)
            gemm(l.n_out, bs, l.n_in, 1.0, &ws.delta, bs, 1, a_prev, 1, bs, 0.0, &mut g.w);
            for (o, row) in ws.delta.chunks(bs).enumerate() {
                g.b[o] = row.iter().sum();
            }
            if li > 0 {
                // delta_prev = (W^T delta) * relu'(z_prev); a_prev > 0 iff z_prev > 0
                ws.scratch.resize(l.n_in * bs, 0.0);
                gemm(l.n_in, l.n_out, bs, 1.0, &l.w, 1, l.n_in, &ws.delta, bs, 1, 0.0, &mut ws.scratch);
                for (s, a) in ws.scratch.iter_mut().zip(a_prev) {
                    if *a <= 0.0 {
                        *s = 0.0;
                    }
                }
                std::mem::swap(&mut ws.delta, &mut ws.scratch);
            }
        }
        loss / ng as f64
    }

    /// Squared-loss gradient at one example, as a flat vector in `params` order.
    pub fn gradient(&self, x: &[f64], y: f64) -> Vec<f64> {
        let mut ws = Workspace::default();
        let mut g = Mlp::zeros(&self.widths());
        self.loss_grad(x, &[y], 1, 1, &mut ws, &mut g);
        g.params().copied().collect()
    }

    /// Preactivations of every hidden unit at `x`.
    pub fn preactivations(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        let mut a = x.to_vec();
        for l in &self.layers[..self.layers.len() - 1] {
            let z: Vec<f64> = (0..l.n_out)
                .map(|o| l.b[o] + l.w[o * l.n_in..(o + 1) * l.n_in].iter().zip(&a).map(|(w, v)| w * v).sum::<f64>())
                .collect();
            out.extend_from_slice(&z);
            a = z.into_iter().map(|v| v.max(0.0)).collect();
        }
        out
    }
}

const EVAL_CHUNK: usize = 4096;

fn transpose(rows: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows.len()];
    for i in 0..n {
        for k in 0..d {
            out[k * n + i] = rows[i * d + k];
        }
    }
    out
}

#[derive(Debug, Default)]
struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    scratch: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Smallest `|preactivation|` over hidden units; small values mean the
    /// finite differences may straddle a kink.
    pub min_abs_preactivation: f64,
}

/// Backprop gradient of `(h(x) - y)^2 / 2` against central differences.
pub fn grad_check(model: &Mlp, x: &[f64], y: f64) -> GradCheck {
    const H: f64 = 1e-5;
    let g = model.gradient(x, y);
    let loss = |m: &Mlp| {
        let r = m.forward(x) - y;
        0.5 * r * r
    };
    let mut m = model.clone();
    let mut worst = 0.0f64;
    for (i, &gi) in g.iter().enumerate() {
        let orig = *m.params_mut().nth(i).unwrap();
        *m.params_mut().nth(i).unwrap() = orig + H;
        let lp = loss(&m);
        *m.params_mut().nth(i).unwrap() = orig - H;
        let lm = loss(&m);
        *m.params_mut().nth(i).unwrap() = orig;
        let fd = (lp - lm) / (2.0 * H);
        let scale = gi.abs().max(fd.abs());
        if scale > 1e-8 {
            worst = worst.max((gi - fd).abs() / scale);
        }
    }
    let min_pre = model.preactivations(x).iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    GradCheck { max_rel_error: worst, min_abs_preactivation: min_pre }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// Constant weight decay, fixed iteration count, final model kept.
    WeightDecay,
    /// No weight decay, best validation snapshot kept.
    #[serde(rename = "early_stop")]
    EarlyStopping,
}

/// How augmented copies of an example enter the squared loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugLoss {
    /// `(mean_k h(x + eps_k) - y)^2`: the loss of the averaged predictor.
    Averaged,
    /// `mean_k (h(x + eps_k) - y)^2`.
    PerAugmentation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_iters: u64,
    pub eval_every: u64,
    pub regularizer: Regularizer,
    /// Stop early stopping runs after this many checks without improvement.
    pub patience: Option<u64>,
    pub loss: AugLoss,
    /// Augmentations drawn per example per step.
    pub augment_per_example: usize,
    /// Stored augmentations averaged by the predictor; `None` uses all.
    pub eval_augment: Option<usize>,
    /// Store augmentations as pairs `(eps, -eps)` and draw them in pairs.
    pub antithetic: bool,
    pub seed: u64,
}

impl SgdConfig {
    pub fn weight_decay() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            batch_size: 10,
            weight_decay: 1e-4,
            max_iters: 10_000,
            eval_every: 200,
            regularizer: Regularizer::WeightDecay,
            patience: None,
            loss: AugLoss::Averaged,
            augment_per_example: 8,
            eval_augment: None,
            antithetic: true,
            seed: 0,
        }
    }

    pub fn early_stopping() -> Self {
        Self { weight_decay: 0.0, max_iters: 100_000, regularizer: Regularizer::EarlyStopping, ..Self::weight_decay() }
    }

    pub fn for_regularizer(r: Regularizer) -> Self {
        match r {
            Regularizer::WeightDecay => Self::weight_decay(),
            Regularizer::EarlyStopping => Self::early_stopping(),
        }
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: String| Err(MlpError::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be nonnegative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.augment_per_example == 0 || self.eval_every == 0 {
            return bad("batch size, augmentations per example and eval interval must be positive".into());
        }
        if self.eval_augment == Some(0) {
            return bad("eval_augment must be positive".into());
        }
        Ok(())
    }
}

/// A network together with the augmentations its predictor averages over:
/// `f(x) = (1/M) sum_k h(x + eps_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedMlp {
    pub model: Mlp,
    pub augment: PointSet,
}

impl SmoothedMlp {
    pub fn predict(&self, xs: &PointSet) -> Vec<f64> {
        smoothed_predict(&self.model, &self.augment, xs)
    }
}

/// `(1/M) sum_k h(x + eps_k)` for every row of `xs`.
pub fn smoothed_predict(model: &Mlp, augment: &PointSet, xs: &PointSet) -> Vec<f64> {
    let d = xs.dim();
    let m = augment.len().max(1);
    let trivial = augment.as_slice().iter().all(|&v| v == 0.0);
    if trivial {
        return model.forward_batch(xs);
    }
    let mut ws = Workspace::default();
    let per = (EVAL_CHUNK / m).max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut x = Vec::new();
    for start in (0..xs.len()).step_by(per) {
        let end = (start + per).min(xs.len());
        let cols = (end - start) * m;
        x.clear();
        x.resize(d * cols, 0.0);
        for i in start..end {
            for (k, e) in augment.rows().enumerate() {
                let c = (i - start) * m + k;
                for q in 0..d {
                    x[q * cols + c] = xs.row(i)[q] + e[q];
                }
            }
        }
        let h = model.forward_cols(&x, cols, &mut ws);
        out.extend(h.chunks(m).map(|c| c.iter().sum::<f64>() / m as f64));
    }
    out
}

/// `count` draws arranged as `eps_1, -eps_1, eps_2, -eps_2, ...`.
pub fn antithetic_sample<R: Rng + ?Sized>(noise: &NoiseSpec, count: usize, rng: &mut R) -> PointSet {
    let half = noise::sample(noise, count.div_ceil(2), rng);
    let d = noise.dim;
    let mut data = Vec::with_capacity(count * d);
    for e in half.rows() {
        data.extend_from_slice(e);
        data.extend(e.iter().map(|v| -v));
    }
    data.truncate(count * d);
    PointSet::new(d, data)
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iter: u64,
    /// Mean minibatch augmented loss since the previous check.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    pub predictor: SmoothedMlp,
    /// Iteration of the returned snapshot.
    pub t_used: u64,
    pub iters_run: u64,
    pub val_loss: f64,
    pub curve: Vec<CurvePoint>,
}

impl TrainResult {
    pub fn write_curve_csv<W: Write>(&self, mut w: W) -> Result<(), MlpError> {
        writeln!(w, "iter,train_loss,val_loss")?;
        for p in &self.curve {
            writeln!(w, "{},{:e},{:e}", p.iter, p.train_loss, p.val_loss)?;
        }
        Ok(())
    }
}

/// SGD with momentum on a minibatch augmented squared loss (see [`AugLoss`]).
///
/// `n_aug` augmentations are drawn once; each step uses
/// `augment_per_example` of them per example, drawn uniformly, so the
/// averaged loss uses an `A`-sample estimate of the smoothed predictor. The validation
/// loss of the smoothed predictor is computed every `eval_every` steps.
pub fn train_augmented(
    model: Mlp,
    train: &Split,
    val: &Split,
    noise: &NoiseSpec,
    n_aug: usize,
    cfg: &SgdConfig,
) -> Result<TrainResult, MlpError> {
    cfg.validate()?;
    noise.validate()?;
    let d = model.input_dim();
    for got in [train.x.dim(), val.x.dim(), noise.dim] {
        if got != d {
            return Err(MlpError::Dimension { expected: d, got });
        }
    }
    if n_aug == 0 || train.is_empty() {
        return Err(MlpError::Config("need at least one augmentation and one training point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let trivial = noise.is_trivial();
    let augment = if trivial {
        PointSet::zeros(d, 1)
    } else if cfg.antithetic {
        antithetic_sample(noise, n_aug, &mut rng)
    } else {
        noise::sample(noise, n_aug, &mut rng)
    };
    let pairs = cfg.antithetic && !trivial && augment.len() >= 2;
    let eval_aug = match cfg.eval_augment {
        Some(m) if m < augment.len() => PointSet::new(d, augment.as_slice()[..m * d].to_vec()),
        _ => augment.clone(),
    };
    let a = if trivial { 1 } else { cfg.augment_per_example };

    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut pos = n;
    let mut model = model;
    let mut grad = Mlp::zeros(&model.widths());
    let mut vel = Mlp::zeros(&model.widths());
    let mut ws = Workspace::default();
    let mut x = Vec::new();
    let mut y = Vec::new();

    let mut best: Option<(Mlp, u64, f64)> = None;
    let mut curve = Vec::new();
    let mut since_best = 0u64;
    let mut acc_loss = 0.0;
    let mut acc_steps = 0u64;
    let mut it = 0u64;

    let val_loss = |m: &Mlp| mse(&smoothed_predict(m, &eval_aug, &val.x), &val.y);

    while it < cfg.max_iters {
        // batch indices from shuffled epochs
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(n) {
            if pos == n {
                order.shuffle(&mut rng);
                pos = 0;
            }
            batch.push(order[pos]);
            pos += 1;
        }
        let bs = batch.len() * a;
        x.clear();
        x.resize(d * bs, 0.0);
        y.clear();
        for (bi, &j) in batch.iter().enumerate() {
            let mut k = 0;
            for r in 0..a {
                let c = bi * a + r;
                let e = if trivial {
                    None
                } else {
                    k = if pairs && r % 2 == 1 {
                        k ^ 1
                    } else if pairs {
                        2 * rng.gen_range(0..augment.len() / 2)
                    } else {
                        rng.gen_range(0..augment.len())
                    };
                    Some(augment.row(k))
                };
                for q in 0..d {
                    x[q * bs + c] = train.x.row(j)[q] + e.map_or(0.0, |e| e[q]);
                }
                if cfg.loss == AugLoss::PerAugmentation {
                    y.push(train.y[j]);
                }
            }
            if cfg.loss == AugLoss::Averaged {
                y.push(train.y[j]);
            }
        }
        let group = if cfg.loss == AugLoss::Averaged { a } else { 1 };
        let loss = model.loss_grad(&x, &y, bs, group, &mut ws, &mut grad);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(MlpError::Diverged { iter: it, loss });
        }
        for ((p, g), v) in model.params_mut().zip(grad.params()).zip(vel.params_mut()) {
            *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
            *p -= cfg.lr * *v;
        }
        it += 1;
        acc_loss += loss;
        acc_steps += 1;

        let check = it % cfg.eval_every == 0 || it == cfg.max_iters;
        if check && (cfg.regularizer == Regularizer::EarlyStopping || it == cfg.max_iters) {
            let vl = val_loss(&model);
            curve.push(CurvePoint { iter: it, train_loss: acc_loss / acc_steps as f64, val_loss: vl });
            acc_loss = 0.0;
            acc_steps = 0;
            if cfg.regularizer == Regularizer::EarlyStopping {
                if best.as_ref().map_or(true, |b| vl < b.2) {
                    best = Some((model.clone(), it, vl));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if cfg.patience.is_some_and(|p| since_best >= p) {
                        break;
                    }
                }
            }
        } else if check {
            curve.push(CurvePoint { iter: it, train_loss: acc_loss / acc_steps as f64, val_loss: f64::NAN });
            acc_loss = 0.0;
            acc_steps = 0;
        }
    }
    let (model, t_used, vl) = match cfg.regularizer {
        Regularizer::EarlyStopping => best.unwrap_or_else(|| {
            let vl = val_loss(&model);
            (model, it, vl)
        }),
        Regularizer::WeightDecay => {
            let vl = curve.last().map(|c| c.val_loss).filter(|v| v.is_finite()).unwrap_or_else(|| val_loss(&model));
            (model, it, vl)
        }
    };
    Ok(TrainResult { predictor: SmoothedMlp { model, augment: eval_aug }, t_used, iters_run: it, val_loss: vl, curve })
}
