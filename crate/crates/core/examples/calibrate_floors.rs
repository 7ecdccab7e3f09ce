//! Calibrates the eigenvalue floor constants and prints `floor_constants.rs`.
//!
//! Usage: cargo run --release -p smoothgd --example calibrate_floors [designs]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smoothgd::points::PointSet;
use smoothgd::smoothing::{FloorCase, FloorSetup};

const CALIBRATION_SEED: u64 = 0xca11_b2a7e;

fn main() {
    let designs: usize = std::env::args().nth(1).map(|s| s.parse().expect("design count")).unwrap_or(1000);
    println!("//! Eigenvalue floor constants, produced by `examples/calibrate_floors.rs`.");
    println!("//! Each is half the smallest observed ratio `eta_min / shape` over the");
    println!("//! calibration designs, stored as a natural logarithm.");
    println!();
    for case in FloorCase::ALL {
        let setup = FloorSetup::standard(case);
        let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED ^ case as u64);
        let mut min_ratio = f64::INFINITY;
        let mut min_eta = f64::INFINITY;
        let mut record = |pts: &PointSet, sigma: f64| {
            let c = setup.check(pts, sigma).expect("expected Gram");
            if !c.resolved() {
                return;
            }
            min_ratio = min_ratio.min(c.ln_ratio());
            min_eta = min_eta.min(c.eta_min);
        };
        // Regular grids are the best-separated designs, so they bound the ratio.
        for n in setup.n_range.0..=setup.n_range.1 {
            for &sigma in &setup.sigmas {
                let per = if setup.dim() == 1 { n } else { (n as f64).sqrt().ceil() as usize };
                let mut rows = Vec::new();
                for i in 0..per.pow(setup.dim() as u32) {
                    let mut r = Vec::new();
                    let mut k = i;
                    for _ in 0..setup.dim() {
                        r.push((k % per) as f64 / (per - 1).max(1) as f64);
                        k /= per;
                    }
                    rows.push(r);
                }
                record(&PointSet::from_rows(setup.dim(), &rows), sigma);
            }
        }
        for _ in 0..designs {
            let (pts, sigma) = setup.random_design(&mut rng);
            if pts.separation_distance() == 0.0 {
                continue;
            }
            record(&pts, sigma);
        }
        let name = match case {
            FloorCase::Laplace => "LN_C_LAPLACE",
            FloorCase::TensorLaplace => "LN_C_TENSOR_LAPLACE",
            FloorCase::Gaussian => "LN_C_GAUSSIAN",
        };
        eprintln!("{case:?}: min ln ratio {min_ratio:.6}, smallest eigenvalue {min_eta:.3e}");
        println!("pub const {name}: f64 = {:.6};", min_ratio - std::f64::consts::LN_2);
    }
}
