//! Deterministic property checks: sup-gap rate, comparison audit, closed form
//! versus iterative GD, spectral identities, noise characteristic functions,
//! MLP gradients and eigenvalue floors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use smoothgd::kernel_gd::{self, Mode, TrainConfig};
use smoothgd::kernels::{spectral_density, KernelSpec};
use smoothgd::mlp::{self, Mlp};
use smoothgd::noise::{self, NoiseSpec};
use smoothgd::points::PointSet;
use smoothgd::quadrature::cosine_transform;
use smoothgd::smoothing::{self, ExpectedKernel, ExpectedMethod, FloorCase, FloorSetup, SmoothedGram};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }

    fn failed(name: &str, e: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {e}"))
    }

    pub fn line(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn logspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..k).map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp()).collect()
}

/// Log-spaced integers in `[1, hi]`, deduplicated.
fn log_steps(hi: u64, k: usize) -> Vec<u64> {
    let mut v: Vec<u64> = logspace(1.0, hi as f64, k).iter().map(|x| x.round() as u64).collect();
    v.dedup();
    v
}

/// Slope of the mean sup-gap `|K_S - K~_S|` against `N`.
pub fn sup_gap_slope(n_grid: &[usize], reps: usize, seed: u64) -> Check {
    const NAME: &str = "sup-gap rate";
    let run = || -> Result<Check, smoothing::SmoothingError> {
        let k = KernelSpec::matern(1, 2.0, 1.0)?;
        let nz = NoiseSpec::gaussian(1, 0.3)?;
        let grid: Vec<Vec<f64>> = (0..=40).map(|i| vec![i as f64 * 0.05]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = smoothing::sup_gap_estimate(&k, &nz, n_grid, &grid, reps, &mut rng)?;
        let x: Vec<f64> = rows.iter().map(|r| r.n_aug as f64).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.mean_gap).collect();
        let slope = smoothing::loglog_slope(&x, &y);
        let gaps: Vec<String> = y.iter().map(|g| format!("{g:.3e}")).collect();
        Ok(Check::new(NAME, (-0.65..=-0.35).contains(&slope), format!("slope {slope:.3} in [-0.65, -0.35]; gaps {}", gaps.join(" "))))
    };
    run().unwrap_or_else(|e| Check::failed(NAME, e))
}

/// Per-eigenvalue inequalities over a spectrum grid, then the RKHS-norm
/// comparison on random smoothed Grams.
pub fn comparison_audit(eta_points: usize, t_max: u64, t_points: usize, seed: u64) -> Check {
    const NAME: &str = "GD vs ridge comparison";
    let etas = logspace(1e-6, 1e2, eta_points);
    let eta1 = etas[etas.len() - 1];
    let beta = 0.9 / eta1;
    let ts = log_steps(t_max, t_points);
    let mut violations = 0usize;
    let mut first = None;
    for &t in &ts {
        for &e in &etas {
            let s = kernel_gd::scalar_comparison(e, beta, t);
            if !s.holds() {
                violations += 1;
                first.get_or_insert(format!("eta {e:e} t {t}"));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut norm_checks = 0usize;
    for p in 0..5 {
        let n = 10 + 8 * p;
        let pts = PointSet::new(1, (0..n).map(|_| rng.gen::<f64>()).collect());
        let k = KernelSpec::matern(1, 1.5 + p as f64 * 0.5, 1.0).expect("valid");
        let nz = NoiseSpec::gaussian(1, 0.05 * (p + 1) as f64).expect("valid");
        let g = match SmoothedGram::build(&k, &nz, 20, &pts, &mut rng) {
            Ok(g) => g,
            Err(e) => return Check::failed(NAME, e),
        };
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = 0.9 / g.eta_max();
        for &t in &ts {
            match kernel_gd::comparison_audit(&g, &y, b, t) {
                Ok(r) => {
                    norm_checks += 1;
                    if !r.passed() {
                        violations += r.violations.len();
                        first.get_or_insert(format!("gram {p} t {t}: {}", r.violations[0]));
                    }
                }
                Err(e) => return Check::failed(NAME, e),
            }
        }
    }
    let cases = etas.len() * ts.len();
    let detail = match first {
        None => format!("0 violations over {cases} (eta, t) pairs and {norm_checks} norm audits"),
        Some(f) => format!("{violations} violations, first at {f}"),
    };
    Check::new(NAME, violations == 0, detail)
}

/// Closed-form spectral GD against explicit iteration.
pub fn closed_form_vs_iterative(problems: usize, seed: u64) -> Check {
    const NAME: &str = "closed form vs iterative GD";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut runs = 0;
    for _ in 0..problems {
        let n = rng.gen_range(5..=50);
        let dim = rng.gen_range(1..=2);
        let pts = PointSet::new(dim, (0..n * dim).map(|_| rng.gen::<f64>()).collect());
        let k = KernelSpec::matern(dim, rng.gen_range(1.0..3.0) + dim as f64 / 2.0, rng.gen_range(0.5..3.0)).expect("valid");
        let nz = NoiseSpec::gaussian(dim, rng.gen_range(0.01..0.3)).expect("valid");
        let g = match SmoothedGram::build(&k, &nz, 10, &pts, &mut rng) {
            Ok(g) => g,
            Err(e) => return Check::failed(NAME, e),
        };
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let beta = rng.gen_range(0.1..0.9) / g.eta_max();
        for t in [1u64, 10, 1000] {
            for alpha in [0.0, 1e-3] {
                let cfg = TrainConfig::fixed(beta, alpha, t);
                let a = kernel_gd::gd_fit(&g, &y, &cfg.clone().with_mode(Mode::ClosedForm));
                let b = kernel_gd::gd_fit(&g, &y, &cfg.with_mode(Mode::Iterative));
                let (a, b) = match (a, b) {
                    (Ok(a), Ok(b)) => (a, b),
                    (Err(e), _) | (_, Err(e)) => return Check::failed(NAME, e),
                };
                let num: f64 = a.fitted_values.iter().zip(&b.fitted_values).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                let den: f64 = b.fitted_values.iter().map(|q| q * q).sum::<f64>().sqrt().max(1e-300);
                worst = worst.max(num / den);
                runs += 1;
            }
        }
    }
    Check::new(NAME, worst <= 1e-8, format!("max relative disagreement {worst:.2e} over {runs} fits (tol 1e-8)"))
}

/// Gaussian kernel with Gaussian noise: closed form against spectral
/// quadrature and against Monte Carlo.
pub fn gaussian_convolution(mc_draws: usize, seed: u64) -> Check {
    const NAME: &str = "Gaussian convolution identity";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut quad_err = 0.0f64;
    let mut worst_z = 0.0f64;
    let mut evals = 0;
    for &(dim, ks, ns) in &[(1usize, 0.5, 0.3), (1, 0.2, 0.1), (2, 0.4, 0.2), (3, 0.3, 0.25)] {
        let k = KernelSpec::gaussian(dim, ks).expect("valid");
        let nz = NoiseSpec::gaussian(dim, ns).expect("valid");
        let ek = match ExpectedKernel::new(&k, &nz) {
            Ok(e) if e.method() == ExpectedMethod::ClosedForm => e,
            Ok(_) => return Check::new(NAME, false, "closed form not selected".into()),
            Err(e) => return Check::failed(NAME, e),
        };
        // Spectral side: product of one-dimensional cosine transforms.
        let k1 = KernelSpec::gaussian(1, ks).expect("valid");
        let n1 = NoiseSpec::gaussian(1, ns).expect("valid");
        let c = k1.inversion_constant().expect("has spectrum");
        let w = |o: f64| c * spectral_density(&k1, &[o]).expect("spectrum") * noise::characteristic_fn(&n1, &[o]).powi(2);
        let kern = k.compile().expect("valid");
        for i in 0..6 {
            let diff: Vec<f64> = (0..dim).map(|j| 0.15 * (i + j) as f64 - 0.2).collect();
            let closed = ek.eval(&diff).expect("closed form").value;
            let mut spectral = 1.0;
            for &x in &diff {
                match cosine_transform(w, x, 1e-13) {
                    Ok(r) => spectral *= r.value,
                    Err(e) => return Check::failed(NAME, e),
                }
            }
            quad_err = quad_err.max((closed - spectral).abs());
            let (mean, se) = smoothing::monte_carlo(&kern, &nz, &diff, mc_draws, &mut rng);
            worst_z = worst_z.max((mean - closed).abs() / se.max(1e-300));
            evals += 1;
        }
    }
    Check::new(
        NAME,
        quad_err <= 1e-6 && worst_z <= 3.0,
        format!("{evals} points: max |closed - spectral| {quad_err:.2e} (tol 1e-6), max MC z-score {worst_z:.2} (tol 3) at {mc_draws} draws"),
    )
}

/// Empirical characteristic functions of all noise samplers.
pub fn noise_cf(draws: usize, freqs: usize, seed: u64) -> Check {
    const NAME: &str = "noise characteristic functions";
    let dim = 2;
    let specs = [
        ("gaussian", NoiseSpec::gaussian(dim, 0.4)),
        ("generalized Laplace", NoiseSpec::generalized_laplace(dim, 0.4, 1.5)),
        ("tensor Laplace", NoiseSpec::tensor_laplace(dim, 0.4, 1.0)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 3.0 / (draws as f64).sqrt();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, spec) in specs {
        let spec = match spec {
            Ok(s) => s,
            Err(e) => return Check::failed(NAME, e),
        };
        let samples = noise::sample(&spec, draws, &mut rng);
        let mut w = 0.0f64;
        for i in 0..freqs {
            let r = 0.25 + 0.3 * i as f64;
            let a = 0.7 * i as f64;
            let omega = [r * a.cos(), r * a.sin()];
            w = w.max((noise::empirical_cf(&samples, &omega) - noise::characteristic_fn(&spec, &omega)).abs());
        }
        parts.push(format!("{name} {w:.2e}"));
        worst = worst.max(w);
    }
    Check::new(NAME, worst <= tol, format!("max error {worst:.2e} (tol {tol:.2e}); {}", parts.join(", ")))
}

/// Backprop against central differences away from ReLU kinks.
pub fn mlp_gradients(models: usize, seed: u64) -> Check {
    const NAME: &str = "MLP gradient check";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let (mut used, mut skipped) = (0, 0);
    for i in 0..models {
        let dim = 1 + i % 3;
        let model = Mlp::standard(dim, &mut rng);
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = rng.gen_range(-1.0..1.0);
        let g = mlp::grad_check(&model, &x, y);
        if g.min_abs_preactivation < 1e-4 {
            skipped += 1;
            continue;
        }
        used += 1;
        worst = worst.max(g.max_rel_error);
    }
    Check::new(NAME, used > 0 && worst < 1e-4, format!("max relative error {worst:.2e} over {used} models (tol 1e-4), {skipped} near kinks skipped"))
}

/// Smallest eigenvalue of expected-kernel Grams against the calibrated floor.
pub fn eigen_floors(designs: usize, seed: u64) -> Check {
    const NAME: &str = "eigenvalue floors";
    let mut parts = Vec::new();
    let mut total = 0usize;
    for case in FloorCase::ALL {
        let setup = FloorSetup::standard(case);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (case as u64 + 1).wrapping_mul(0x9e37_79b9));
        let (mut bad, mut done) = (0, 0);
        while done < designs {
            let (pts, sigma) = setup.random_design(&mut rng);
            if pts.separation_distance() == 0.0 {
                continue;
            }
            match setup.check(&pts, sigma) {
                Ok(c) => {
                    if !c.holds(case.ln_constant()) {
                        bad += 1;
                    }
                }
                Err(e) => return Check::failed(NAME, e),
            }
            done += 1;
        }
        total += bad;
        parts.push(format!("{case:?} {bad}/{done}"));
    }
    Check::new(NAME, total == 0, format!("violations: {}", parts.join(", ")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

/// Runs every check. `Full` uses the acceptance sizes.
pub fn run_verify(level: Level, seed: u64) -> Vec<Check> {
    let full = level == Level::Full;
    let s = |k: u64| crate::seeds::sub_seed(seed, "verify", &[k]);
    vec![
        if full { sup_gap_slope(&[100, 1_000, 10_000, 100_000], 20, s(4)) } else { sup_gap_slope(&[100, 1_000, 10_000], 20, s(4)) },
        if full { comparison_audit(200, 100_000, 60, s(5)) } else { comparison_audit(60, 100_000, 20, s(5)) },
        closed_form_vs_iterative(if full { 20 } else { 5 }, s(6)),
        gaussian_convolution(if full { 100_000 } else { 20_000 }, s(7)),
        noise_cf(if full { 100_000 } else { 20_000 }, 20, s(8)),
        mlp_gradients(if full { 50 } else { 10 }, s(9)),
        eigen_floors(if full { 100 } else { 10 }, s(10)),
    ]
}
