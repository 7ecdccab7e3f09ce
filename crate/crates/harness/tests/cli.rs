use std::fs;
use std::path::Path;
use std::process::Command;

const TINY: &str = r#"
dims = [1]
sizes = [20]
seeds = 1
sigma_grid = [0.0, 0.1]
n_aug = 20
test_size = 50
regularizers = ["early_stop"]
workers = 1

[truth]
anchors = 100

[mlp]
early_stop_max_iters = 400
eval_every = 100
patience = 2
eval_augment = 10
augment_per_example = 2

[kernel]
n_aug = 10
early_stop_max_iters = 500
eval_every = 50
"#;

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_smoothgd")).args(args).arg("--out").arg(dir).output().expect("binary runs")
}

fn tiny_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, format!("{extra}\n{TINY}")).unwrap();
    p.display().to_string()
}

#[test]
fn table1_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = run(d, &["table1", "--config", &cfg, "--seed", "7"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["table1_raw.csv", "table1_selected.csv", "table1_cells.csv", "table1.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let raw = fs::read_to_string(a.join("table1_raw.csv")).unwrap();
    let mut lines = raw.lines();
    assert_eq!(lines.next().unwrap(), "learner,dim,noise,regularizer,n,sigma,seed,test_l2,val_l2,t_used");
    // G and L at 0.1 plus the shared sigma = 0 run.
    assert_eq!(lines.clone().count(), 3);
    assert!(lines.all(|l| l.starts_with("mlp,1,")));
    let wide = fs::read_to_string(a.join("table1.csv")).unwrap();
    assert!(wide.starts_with("learner,dim,noise,regularizer,mean_n20,stderr_n20"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("table1_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 7);
    assert!(manifest["wall_time_secs"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["config"]["sizes"][0], 20);
}

#[test]
fn kernel_learner_grid_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "learner = \"kernel_gd\"");
    let out = run(tmp.path(), &["ucurve", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let curve = fs::read_to_string(tmp.path().join("ucurve.csv")).unwrap();
    let rows: Vec<&str> = curve.lines().skip(1).collect();
    // One curve each for G and L, two sigma values each.
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.starts_with("kernel_gd,1,")));
    assert_eq!(rows.iter().filter(|r| r.ends_with(",true")).count(), 2);
}

#[test]
fn schedule_and_simulate_write_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["schedule"]);
    assert!(out.status.success());
    let s = fs::read_to_string(tmp.path().join("schedule.csv")).unwrap();
    assert!(s.starts_with("regime,n,sigma_n,nu,m_eps,t_star,ln_t_star,alpha_star,t_weight_decay,beta,lambda_n,rate_exponent"));
    assert_eq!(s.lines().count(), 1 + 3 * 6);

    let cfg = tiny_config(tmp.path(), "");
    let out = run(tmp.path(), &["simulate", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data = fs::read_to_string(tmp.path().join("data_D1_n20_seed0.csv")).unwrap();
    assert!(data.starts_with("x0,y,f,split"));
    assert!(data.lines().filter(|l| l.ends_with(",train")).count() == 20);
    assert!(tmp.path().join("simulate_manifest.json").exists());
}

#[test]
fn quick_verify_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["verify", "--quick"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 7);
}

#[test]
fn bad_config_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.toml");
    fs::write(&p, "sigma_grid = [0.3, 0.1]").unwrap();
    let out = run(tmp.path(), &["table1", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ascending"));
}
