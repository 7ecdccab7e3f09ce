//! Acceptance criteria, one PASS/FAIL line each. The MLP grid runs at the
//! quick settings on a single shared job set; expect around half an hour on
//! one core.

use std::time::Instant;

use smoothgd::mlp::Regularizer;
use smoothgd_harness::config::{ExperimentConfig, Learner, NoiseType};
use smoothgd_harness::experiments::{grid_jobs, median, run_jobs, select, table1_cells, ResultRow, Selection};
use smoothgd_harness::rate::run_rate;
use smoothgd_harness::verify::{self, Check};

const SEEDS: u64 = 15;
/// Seeds per cell for the 18-row size comparison.
const ROW_SEEDS: u64 = 5;
const TABLE_VALUE_D1: f64 = 5.8775e-4;

fn line(id: &str, c: &Check) -> String {
    format!("{} {id} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

fn mlp_rows(base: &ExperimentConfig) -> Vec<ResultRow> {
    let mut jobs = Vec::new();
    // Every (D, type, regularizer) row at both sizes.
    let rows_cfg = ExperimentConfig { seeds: ROW_SEEDS, ..base.clone() };
    jobs.extend(grid_jobs(&rows_cfg));
    // Gaussian against none with early stopping, all seeds.
    let es = ExperimentConfig {
        seeds: SEEDS,
        noise_types: vec![NoiseType::G, NoiseType::N],
        regularizers: vec![Regularizer::EarlyStopping],
        ..base.clone()
    };
    jobs.extend(grid_jobs(&ExperimentConfig { sizes: vec![200], ..es.clone() }));
    jobs.extend(grid_jobs(&ExperimentConfig { sizes: vec![50], dims: vec![1], ..es }));
    run_jobs(base, &jobs).expect("grid runs")
}

fn es_selections(rows: &[ResultRow], dim: usize, n: usize) -> Vec<Selection> {
    let sub: Vec<ResultRow> = rows
        .iter()
        .filter(|r| r.dim == dim && r.n == n && r.regularizer == Regularizer::EarlyStopping && r.seed < SEEDS)
        .filter(|r| matches!(r.noise, NoiseType::G | NoiseType::N))
        .cloned()
        .collect();
    select(&sub, &[NoiseType::G, NoiseType::N])
}

fn mean_for(sel: &[Selection], t: NoiseType) -> (f64, usize) {
    let v: Vec<f64> = sel.iter().filter(|s| s.noise == t).map(|s| s.test_l2).collect();
    (v.iter().sum::<f64>() / v.len() as f64, v.len())
}

fn smoothing_beats_none(rows: &[ResultRow]) -> (Check, Check) {
    let mut wins = 0;
    let mut parts = Vec::new();
    let mut d1 = f64::NAN;
    for dim in 1..=3 {
        let sel = es_selections(rows, dim, 200);
        let (g, kg) = mean_for(&sel, NoiseType::G);
        let (n, kn) = mean_for(&sel, NoiseType::N);
        let gain = 1.0 - g / n;
        if gain >= 0.10 && kg == SEEDS as usize && kn == SEEDS as usize {
            wins += 1;
        }
        if dim == 1 {
            d1 = g;
        }
        parts.push(format!("D={dim} G {g:.3e} N {n:.3e} gain {:.0}%", 100.0 * gain));
    }
    let c1 = check("smoothing beats none", wins >= 2, format!("{wins}/3 dims with gain >= 10%; {}", parts.join("; ")));
    let ratio = d1 / TABLE_VALUE_D1;
    let band = check(
        "D=1 early-stop magnitude",
        (1.0 / 3.0..=3.0).contains(&ratio),
        format!("selected G mean {d1:.3e}, reference {TABLE_VALUE_D1:.4e}, ratio {ratio:.2} (band factor 3)"),
    );
    (c1, band)
}

fn monotone_in_n(rows: &[ResultRow]) -> (Check, Check) {
    let sub: Vec<ResultRow> = rows.iter().filter(|r| r.seed < ROW_SEEDS).cloned().collect();
    let types = [NoiseType::G, NoiseType::L, NoiseType::N];
    let cells = table1_cells(&select(&sub, &types));
    let mut ok = 0;
    let mut total = 0;
    let mut bad = Vec::new();
    for dim in 1..=3 {
        for t in types {
            for reg in [Regularizer::WeightDecay, Regularizer::EarlyStopping] {
                let get = |n: usize| {
                    cells.iter().find(|c| c.dim == dim && c.noise == t && c.regularizer == reg && c.n == n).map(|c| c.mean_test_l2)
                };
                if let (Some(a), Some(b)) = (get(50), get(200)) {
                    total += 1;
                    if b < a {
                        ok += 1;
                    } else {
                        bad.push(format!("D={dim} {} {reg:?}", t.label()));
                    }
                }
            }
        }
    }
    let c2 = check(
        "monotone in n",
        total == 18 && ok >= 16,
        format!("{ok}/{total} rows with loss(200) < loss(50) over {ROW_SEEDS} seeds; failing: [{}]", bad.join(", ")),
    );
    // N worse than G, cell by cell (two sizes here).
    let mut wins = 0;
    let mut pairs = 0;
    for g in cells.iter().filter(|c| c.noise == NoiseType::G) {
        if let Some(n) = cells.iter().find(|c| c.noise == NoiseType::N && (c.dim, c.regularizer, c.n) == (g.dim, g.regularizer, g.n)) {
            pairs += 1;
            wins += (n.mean_test_l2 > g.mean_test_l2) as usize;
        }
    }
    let order = check(
        "none worse than Gaussian",
        pairs > 0 && wins * 18 >= 14 * pairs,
        format!("{wins}/{pairs} cells with mean(N) > mean(G) (threshold 14/18 of cells)"),
    );
    (c2, order)
}

fn u_curve(rows: &[ResultRow], grid_max: f64) -> Check {
    let at = |n: usize| -> Vec<f64> { es_selections(rows, 1, n).iter().filter(|s| s.noise == NoiseType::G).map(|s| s.sigma).collect() };
    let s200 = at(200);
    let s50 = at(50);
    let interior = s200.iter().filter(|&&s| s > 0.0 && s < grid_max).count();
    let (m200, m50) = (median(&s200), median(&s50));
    check(
        "U-curve",
        s200.len() == SEEDS as usize && interior >= 10 && m200 <= m50,
        format!("interior minimizer in {interior}/{} seeds at n=200; median sigma {m200} (n=200) vs {m50} (n=50)", s200.len()),
    )
}

#[test]
fn acceptance_criteria() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut all = true;
    let mut report = |id: &str, c: Check| {
        let l = line(id, &c);
        println!("{l}");
        all &= c.passed;
        lines.push(l);
    };

    let cfg = ExperimentConfig { learner: Learner::Mlp, ..ExperimentConfig::quick() };
    let rows = mlp_rows(&cfg);
    let mlp_time = start.elapsed();
    let (c1, band) = smoothing_beats_none(&rows);
    let (c2, order) = monotone_in_n(&rows);
    report("1", c1);
    report("2", c2);
    report("3", u_curve(&rows, *cfg.sigma_grid.last().unwrap()));

    let seed = cfg.master_seed;
    let s = |k: u64| smoothgd_harness::seeds::sub_seed(seed, "verify", &[k]);
    let t = Instant::now();
    let c4 = verify::sup_gap_slope(&[100, 1_000, 10_000, 100_000], 20, s(4));
    report("4", check(&c4.name, c4.passed && t.elapsed().as_secs() <= 120, format!("{} ({:.1}s)", c4.detail, t.elapsed().as_secs_f64())));
    let t = Instant::now();
    let c5 = verify::comparison_audit(200, 100_000, 60, s(5));
    report("5", check(&c5.name, c5.passed && t.elapsed().as_secs() <= 10, format!("{} ({:.1}s)", c5.detail, t.elapsed().as_secs_f64())));
    report("6", verify::closed_form_vs_iterative(20, s(6)));
    report("7", verify::gaussian_convolution(100_000, s(7)));
    report("8", verify::noise_cf(100_000, 20, s(8)));
    report("9", verify::mlp_gradients(50, s(9)));
    report("10", verify::eigen_floors(100, s(10)));

    // Reported alongside: table magnitude, type ordering and the rate band.
    report("extra", band);
    report("extra", order);
    let rate = run_rate(&ExperimentConfig::default()).expect("rate runs");
    report(
        "extra",
        check(
            "rate exponent band",
            rate.in_band(),
            format!("slope {:.3} vs theory {:.3}, ratio {:.2} (band [0.4, 1.5])", rate.slope, rate.theory, rate.ratio),
        ),
    );
    println!("MLP grid {:.0}s, total {:.0}s", mlp_time.as_secs_f64(), start.elapsed().as_secs_f64());
    assert!(all, "failing criteria:\n{}", lines.iter().filter(|l| l.starts_with("FAIL")).cloned().collect::<Vec<_>>().join("\n"));
}
