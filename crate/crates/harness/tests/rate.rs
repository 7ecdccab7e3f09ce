use smoothgd_harness::config::ExperimentConfig;
use smoothgd_harness::rate::{run_rate_with, RatePredictor};

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.rate.reps = 3;
    c.rate.n_aug = 40;
    c.truth.anchors = 300;
    c.test_size = 200;
    c
}

#[test]
fn constant_predictor_has_flat_rate() {
    let r = run_rate_with(&small(), RatePredictor::ConstantMean, 1.0).unwrap();
    assert!(r.slope.abs() <= 0.1, "{}", r.slope);
}

#[test]
fn doubling_responses_quadruples_losses() {
    let cfg = small();
    let a = run_rate_with(&cfg, RatePredictor::ScheduledGd, 1.0).unwrap();
    let b = run_rate_with(&cfg, RatePredictor::ScheduledGd, 2.0).unwrap();
    for (p, q) in a.points.iter().zip(&b.points) {
        assert!((q.mean_sq_l2 / p.mean_sq_l2 - 4.0).abs() < 1e-9);
    }
    assert!((a.slope - b.slope).abs() < 1e-9);
    assert!((a.slope_unsquared * 2.0 - a.slope).abs() < 1e-15);
    assert!((a.theory + 10.0 / 11.0).abs() < 1e-12);
}
