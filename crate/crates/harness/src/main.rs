use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use smoothgd_harness::config::{ExperimentConfig, NoiseType};
use smoothgd_harness::experiments::{self, ordering_count};
use smoothgd_harness::output::{write_csv, write_table1_wide, Manifest};
use smoothgd_harness::rate::run_rate;
use smoothgd_harness::schedule_table::schedule_table;
use smoothgd_harness::verify::{run_verify, Level};
use smoothgd_harness::HarnessError;

#[derive(Parser)]
#[command(name = "smoothgd", version, about = "Random smoothing experiments for kernel GD and MLPs")]
struct Cli {
    /// TOML experiment configuration; defaults fill anything missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Reduced grids.
    #[arg(long, global = true)]
    quick: bool,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validation-selected test losses per (D, noise type, regularizer, n).
    Table1,
    /// Test loss as a function of the smoothing scale.
    Ucurve,
    /// Fitted convergence exponent of scheduled kernel GD.
    Rate,
    /// Smoothing scale, stopping time and weight decay schedules.
    Schedule,
    /// Property checks; exits 1 on any failure.
    Verify,
    /// Ground truths and train/validation/test splits as CSV.
    Simulate,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.quick {
        cfg.make_quick();
    }
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(name: &str, cfg: &ExperimentConfig, quick: bool, start: Instant, outputs: &[PathBuf]) -> Result<(), HarnessError> {
    let m = Manifest::new(name, cfg, quick, start.elapsed(), outputs).write(&cfg.out_dir)?;
    for p in outputs {
        println!("wrote {}", p.display());
    }
    println!("wrote {}", m.display());
    Ok(())
}

fn out(cfg: &ExperimentConfig, file: &str) -> PathBuf {
    Path::new(&cfg.out_dir).join(file)
}

fn run(cli: &Cli) -> Result<bool, HarnessError> {
    let start = Instant::now();
    let cfg = load(cli)?;
    match cli.command {
        Command::Table1 => {
            let t = experiments::run_table1(&cfg)?;
            let files = [out(&cfg, "table1_raw.csv"), out(&cfg, "table1_selected.csv"), out(&cfg, "table1_cells.csv"), out(&cfg, "table1.csv")];
            write_csv(&files[0], &t.rows)?;
            write_csv(&files[1], &t.selections)?;
            write_csv(&files[2], &t.cells)?;
            write_table1_wide(&files[3], &t.cells)?;
            for c in &t.cells {
                println!("D={} {} {:?} n={}: {:.4e} +- {:.1e}", c.dim, c.noise.label(), c.regularizer, c.n, c.mean_test_l2, c.stderr);
            }
            let (w, n) = ordering_count(&t.cells, NoiseType::G, NoiseType::N);
            println!("no smoothing worse than Gaussian smoothing in {w}/{n} cells");
            finish("table1", &cfg, cli.quick, start, &files)?;
        }
        Command::Ucurve => {
            let (rows, curve) = experiments::run_ucurve(&cfg)?;
            let files = [out(&cfg, "ucurve_raw.csv"), out(&cfg, "ucurve.csv")];
            write_csv(&files[0], &rows)?;
            write_csv(&files[1], &curve)?;
            finish("ucurve", &cfg, cli.quick, start, &files)?;
        }
        Command::Rate => {
            let r = run_rate(&cfg)?;
            let files = [out(&cfg, "rate.csv"), out(&cfg, "rate_fit.json")];
            write_csv(&files[0], &r.points)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            std::fs::write(&files[1], serde_json::to_string_pretty(&r)?)?;
            println!(
                "slope {:.3} (unsquared {:.3}), theory {:.3}, ratio {:.2}: {}",
                r.slope,
                r.slope_unsquared,
                r.theory,
                r.ratio,
                if r.in_band() { "within band" } else { "outside band" }
            );
            finish("rate", &cfg, cli.quick, start, &files)?;
            return Ok(r.in_band());
        }
        Command::Schedule => {
            let rows = schedule_table(&cfg)?;
            let files = [out(&cfg, "schedule.csv")];
            write_csv(&files[0], &rows)?;
            finish("schedule", &cfg, cli.quick, start, &files)?;
        }
        Command::Verify => {
            let level = if cli.quick { Level::Quick } else { Level::Full };
            let checks = run_verify(level, cfg.master_seed);
            for c in &checks {
                println!("{}", c.line());
            }
            let files = [out(&cfg, "verify.json")];
            std::fs::create_dir_all(&cfg.out_dir)?;
            std::fs::write(&files[0], serde_json::to_string_pretty(&checks)?)?;
            finish("verify", &cfg, cli.quick, start, &files)?;
            return Ok(checks.iter().all(|c| c.passed));
        }
        Command::Simulate => {
            let mut files = Vec::new();
            for &dim in &cfg.dims {
                for seed in 0..cfg.seeds {
                    let gt = experiments::ground_truth(&cfg, dim, seed)?;
                    for &n in &cfg.sizes {
                        let ds = experiments::dataset(&cfg, &gt, dim, n, seed)?;
                        let p = out(&cfg, &format!("data_D{dim}_n{n}_seed{seed}.csv"));
                        std::fs::create_dir_all(&cfg.out_dir)?;
                        let f = std::fs::File::create(&p)?;
                        ds.write_csv(std::io::BufWriter::new(f)).map_err(|e| HarnessError::learner(p.display().to_string(), e))?;
                        files.push(p);
                    }
                }
            }
            finish("simulate", &cfg, cli.quick, start, &files)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
