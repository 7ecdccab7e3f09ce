use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smoothgd::datagen::{sample_manifold, ManifoldSpec};
use smoothgd::kernel_gd::{gd_fit, Mode, TrainConfig};
use smoothgd::kernels::{kernel_eval, KernelSpec};
use smoothgd::mlp::{grad_check, Mlp};
use smoothgd::noise::{self, NoiseSpec};
use smoothgd::points::PointSet;
use smoothgd::schedules::{schedule, Regime, ScheduleOptions};
use smoothgd::smoothing::{expected_smoothing_kernel, SmoothedGram};
use smoothgd::special::{bessel_k, gamma_fn};

fn kernel_strategy(dim: usize) -> impl Strategy<Value = KernelSpec> {
    let half = dim as f64 / 2.0;
    prop_oneof![
        (0.6f64..4.0, 0.3f64..3.0).prop_map(move |(s, phi)| KernelSpec::matern(dim, half + s, phi).unwrap()),
        (0.1f64..2.0).prop_map(move |s| KernelSpec::gaussian(dim, s).unwrap()),
        (0.5f64..2.0, 0.0f64..2.0, 0.3f64..2.0)
            .prop_map(move |(k, extra, phi)| KernelSpec::wendland(dim, k, (dim as f64 + 1.0) / 2.0 + k + extra, phi).unwrap()),
    ]
}

fn noise_strategy(dim: usize) -> impl Strategy<Value = NoiseSpec> {
    prop_oneof![
        (0.01f64..0.5).prop_map(move |s| NoiseSpec::gaussian(dim, s).unwrap()),
        (0.01f64..0.5, 0.6f64..3.0).prop_map(move |(s, m)| NoiseSpec::generalized_laplace(dim, s, m + dim as f64 / 2.0).unwrap()),
        (0.01f64..0.5, 0.6f64..3.0).prop_map(move |(s, m)| NoiseSpec::tensor_laplace(dim, s, m).unwrap()),
        Just(NoiseSpec::none(dim)),
    ]
}

fn design(dim: usize, n: usize, seed: u64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointSet::new(dim, (0..n * dim).map(|_| rng.gen::<f64>()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gamma_recurrence(x in 0.1f64..80.0) {
        let lhs = gamma_fn(x + 1.0).unwrap();
        let rhs = x * gamma_fn(x).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs());
    }

    #[test]
    fn bessel_even_and_recurrent(nu in 0.05f64..6.0, x in 0.05f64..30.0) {
        let k = |v: f64| bessel_k(v, x).unwrap();
        prop_assert!((k(nu) - k(-nu)).abs() <= 1e-8 * k(nu));
        let rhs = k(nu - 1.0) + 2.0 * nu / x * k(nu);
        prop_assert!((k(nu + 1.0) - rhs).abs() <= 1e-7 * k(nu + 1.0));
    }

    #[test]
    fn bessel_decreasing(nu in 0.0f64..8.0, x in 0.01f64..50.0, dx in 1e-3f64..5.0) {
        prop_assert!(bessel_k(nu, x + dx).unwrap() < bessel_k(nu, x).unwrap());
    }

    #[test]
    fn kernels_are_symmetric(dim in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = KernelSpec::matern(dim, dim as f64 / 2.0 + rng.gen_range(0.6..4.0), rng.gen_range(0.3..3.0)).unwrap();
        for _ in 0..20 {
            let d: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let neg: Vec<f64> = d.iter().map(|v| -v).collect();
            prop_assert_eq!(kernel_eval(&k, &d).unwrap().to_bits(), kernel_eval(&k, &neg).unwrap().to_bits());
        }
    }

    #[test]
    fn kernel_grams_are_psd((k, n, seed) in (1usize..=3).prop_flat_map(|d| (kernel_strategy(d), 2usize..=30, any::<u64>()))) {
        let pts = design(k.dim, n, seed);
        let kern = k.compile().unwrap();
        let g = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            let d: Vec<f64> = pts.row(i).iter().zip(pts.row(j)).map(|(a, b)| a - b).collect();
            kern.eval(&d)
        });
        let e = g.clone().symmetric_eigenvalues();
        prop_assert!(e.min() >= -1e-10 * g.trace());
    }

    #[test]
    fn smoothed_grams_are_psd((k, nz, n, seed) in (1usize..=2).prop_flat_map(|d| (kernel_strategy(d), noise_strategy(d), 2usize..=20, any::<u64>()))) {
        let pts = design(k.dim, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let g = SmoothedGram::build(&k, &nz, 15, &pts, &mut rng).unwrap();
        prop_assert!(g.eta_min() >= -1e-10 * g.eta_max());
    }

    #[test]
    fn smoothing_lowers_kernel_at_origin(s in 0.01f64..1.0, m0 in 1.1f64..4.0, mf in 0.6f64..3.0) {
        let k = KernelSpec::matern(1, m0, 1.0).unwrap();
        for nz in [NoiseSpec::gaussian(1, s).unwrap(), NoiseSpec::tensor_laplace(1, s, mf).unwrap()] {
            let e = expected_smoothing_kernel(&k, &nz, &[0.0]).unwrap();
            prop_assert!(e.value <= 1.0 + e.error + 1e-12);
        }
    }

    #[test]
    fn noise_is_reproducible(seed in any::<u64>(), dim in 1usize..=3) {
        let spec = NoiseSpec::generalized_laplace(dim, 0.3, 1.5 + dim as f64 / 2.0).unwrap();
        let a = noise::sample(&spec, 50, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = noise::sample(&spec, 50, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn closed_form_matches_iteration(n in 2usize..=25, seed in any::<u64>(), t in 1u64..300, wd in prop::bool::ANY) {
        let pts = design(1, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let g = SmoothedGram::build(&KernelSpec::matern(1, 1.5, 1.0).unwrap(), &NoiseSpec::gaussian(1, 0.05).unwrap(), 10, &pts, &mut rng).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = TrainConfig::fixed(0.8 / g.eta_max(), if wd { 1e-3 } else { 0.0 }, t);
        let a = gd_fit(&g, &y, &cfg.clone().with_mode(Mode::ClosedForm)).unwrap();
        let b = gd_fit(&g, &y, &cfg.with_mode(Mode::Iterative)).unwrap();
        let num: f64 = a.fitted_values.iter().zip(&b.fitted_values).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.fitted_values.iter().map(|q| q * q).sum::<f64>().sqrt();
        prop_assert!(num <= 1e-8 * den.max(1e-12));
    }

    #[test]
    fn schedule_scale_never_grows(n in 10usize..100_000, dim in 1usize..=4, d_off in 0usize..3, extra in 0.1f64..3.0) {
        let d = dim.saturating_sub(d_off).max(1);
        let half = dim as f64 / 2.0;
        let p = schedule(Regime::PolySmoothing, n, dim, d, half + extra, half + extra + 0.5, &ScheduleOptions::default()).unwrap();
        prop_assert!(p.nu <= 0.0);
        if dim > d {
            prop_assert!(p.nu < 0.0);
        }
        let g = schedule(Regime::GaussianSmoothing, n, dim, d, half + extra, half + extra + 0.5, &ScheduleOptions::default()).unwrap();
        prop_assert!(g.nu < 0.0);
    }

    #[test]
    fn rate_slows_with_intrinsic_dimension(n in 10usize..10_000, mf in 2.1f64..6.0) {
        let rates: Vec<f64> = (1..=4)
            .map(|d| schedule(Regime::PolySmoothing, n, 4, d, 2.5, mf, &ScheduleOptions::default()).unwrap().rate_exponent)
            .collect();
        prop_assert!(rates.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn tensor_requires_enough_noise_smoothness(m0 in 0.6f64..3.0, gap in 0.1f64..2.0) {
        let opts = ScheduleOptions { m_eps: Some(1.0), ..ScheduleOptions::default() };
        let mf = m0 + 1.0 + gap;
        prop_assert!(schedule(Regime::TensorPolySmoothing, 100, 1, 1, m0, mf, &opts).is_err());
        prop_assert!(schedule(Regime::TensorPolySmoothing, 100, 1, 1, m0, m0 + 1.0, &opts).is_ok());
    }

    #[test]
    fn backprop_matches_differences(dim in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Mlp::standard(dim, &mut rng);
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = grad_check(&m, &x, rng.gen_range(-1.0..1.0));
        prop_assume!(g.min_abs_preactivation > 1e-3);
        prop_assert!(g.max_rel_error < 1e-4);
    }

    #[test]
    fn manifold_points_satisfy_constraint(dim in 1usize..=3, seed in any::<u64>()) {
        let spec = ManifoldSpec::for_dim(dim).unwrap();
        let pts = sample_manifold(&spec, 200, &mut ChaCha8Rng::seed_from_u64(seed));
        for x in pts.rows() {
            if dim == 1 {
                prop_assert!((0.0..=1.0).contains(&x[0]));
            } else {
                let r: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((r - 1.0).abs() <= 1e-12);
            }
        }
    }
}
