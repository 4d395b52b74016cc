use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regime_mm::intensity::IntensityFamily;
use regime_mm::model::{Generator, RegimeSpec};
use regime_mm::{config, ModelSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_regime-mm"))
}

fn write_config(dir: &Path, name: &str, spec: &ModelSpec) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, config::to_string(spec)).unwrap();
    path
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("--out").arg(out).args(args).output().unwrap()
}

fn stdout_value(o: &Output, key: &str) -> String {
    let text = String::from_utf8_lossy(&o.stdout);
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
}

fn out_dir(o: &Output) -> PathBuf {
    PathBuf::from(stdout_value(o, "out_dir"))
}

#[test]
fn attractor_roots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ref.conf", &ModelSpec::two_regime_reference(1.0, 0.0));
    for (beta, want) in [("1", 0.572), ("2", 0.636)] {
        let o = run(tmp.path(), &["attractor", cfg.to_str().unwrap(), "--beta", beta]);
        assert!(o.status.success());
        let got: f64 = stdout_value(&o, "pi_star").parse().unwrap();
        assert!((got - want).abs() < 1e-3, "β={beta}: {got}");
    }

    // Equal liquidity in both regimes leaves the symmetric chain's midpoint.
    let mut flat = ModelSpec::two_regime_reference(1.0, 0.0);
    flat.regimes[1] = RegimeSpec::symmetric("same", IntensityFamily::Exponential { a: 2.0, b: 25.0 });
    let cfg = write_config(tmp.path(), "flat.conf", &flat);
    let o = run(tmp.path(), &["attractor", cfg.to_str().unwrap(), "--beta", "2"]);
    let got: f64 = stdout_value(&o, "pi_star").parse().unwrap();
    assert!((got - 0.5).abs() < 1e-9);

    let cost = write_config(tmp.path(), "cost.conf", &ModelSpec::two_regime_reference(1.0, 0.01));
    assert_eq!(run(tmp.path(), &["attractor", cost.to_str().unwrap(), "--beta", "2"]).status.code(), Some(2));
    assert_eq!(run(tmp.path(), &["attractor", cost.to_str().unwrap(), "--beta", "3"]).status.code(), Some(2));
}

#[test]
fn solve_full_writes_every_node() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ref.conf", &ModelSpec::two_regime_reference(0.5, 0.0));
    let o = run(tmp.path(), &["solve-full", cfg.to_str().unwrap(), "--steps", "100"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = out_dir(&o);
    let hash = dir.file_name().unwrap().to_str().unwrap().to_string();
    assert!(dir.starts_with(tmp.path().join("solve-full")));

    let csv = fs::read_to_string(dir.join("surface_full.csv")).unwrap();
    assert!(csv.contains(&format!("# manifest_hash={hash}")));
    let rows = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, 7 * 2 * 101);
    let manifest = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains(&format!("manifest_hash={hash}")));
    assert!(manifest.contains("outputs=surface_full.csv"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["solve-full", "/definitely/not/here.conf"]);
    assert_eq!(o.status.code(), Some(2));

    let mut bad = ModelSpec::two_regime_reference(1.0, 0.0);
    bad.inventory_cap = regime_mm::InventoryCap::Unbounded;
    bad.risk_aversion = 0.5;
    let cfg = write_config(tmp.path(), "bad.conf", &bad);
    let o = run(tmp.path(), &["solve-full", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unbounded inventory requires"));

    let garbled = tmp.path().join("garbled.conf");
    let text = config::to_string(&ModelSpec::two_regime_reference(1.0, 0.0)).replace("vol_sigma = 0.1", "vol_sigma = lots");
    fs::write(&garbled, text).unwrap();
    let o = run(tmp.path(), &["solve-full", garbled.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3: key `vol_sigma`"));

    let mut three = ModelSpec::two_regime_reference(1.0, 0.0);
    three.regimes.push(RegimeSpec::symmetric("third", IntensityFamily::Exponential { a: 5.0, b: 25.0 }));
    three.generator = Generator::new(vec![vec![-2.0, 1.0, 1.0], vec![1.0, -2.0, 1.0], vec![1.0, 1.0, -2.0]]);
    three.initial_filter = vec![0.2, 0.3, 0.5];
    let cfg = write_config(tmp.path(), "three.conf", &three);
    let o = run(tmp.path(), &["solve-partial", cfg.to_str().unwrap(), "--mpi", "20"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("2 regimes"));
    // The full-information solver handles any k.
    assert!(run(tmp.path(), &["solve-full", cfg.to_str().unwrap(), "--steps", "50"]).status.success());
}

#[test]
fn simulate_is_reproducible_and_uses_saved_surfaces() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = ModelSpec::two_regime_reference(0.3, 0.0);
    let cfg = write_config(tmp.path(), "ref.conf", &spec);
    let cfg = cfg.to_str().unwrap();

    let solved = run(tmp.path(), &["solve-partial", cfg, "--mpi", "40"]);
    assert!(solved.status.success());
    let surface = out_dir(&solved).join("surface_partial.csv");
    assert!(out_dir(&solved).join("spreads_t0.csv").exists());

    let args = ["simulate", cfg, "--policy", "partial", "--paths", "200", "--seed", "7", "--surface"];
    let a = run(tmp.path(), &[&args[..], &[surface.to_str().unwrap()]].concat());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let dir = out_dir(&a);
    let first = fs::read(dir.join("path_1.csv")).unwrap();
    let summary = fs::read_to_string(dir.join("summary.txt")).unwrap();
    for i in 1..=4 {
        assert!(dir.join(format!("path_{i}.csv")).exists());
    }
    assert!(!dir.join("path_5.csv").exists());
    for key in ["mean_pnl=", "stderr=", "paths=200", "fills_bid=", "fills_ask="] {
        assert!(summary.contains(key), "{key}");
    }

    let b = run(tmp.path(), &[&args[..], &[surface.to_str().unwrap()]].concat());
    assert_eq!(out_dir(&b), dir);
    assert_eq!(fs::read(dir.join("path_1.csv")).unwrap(), first);
    assert_eq!(fs::read_to_string(dir.join("summary.txt")).unwrap(), summary);

    // A surface for another model is refused; a missing one is a numerical failure.
    let other = write_config(tmp.path(), "other.conf", &ModelSpec::two_regime_reference(0.4, 0.0));
    let o = run(
        tmp.path(),
        &["simulate", other.to_str().unwrap(), "--policy", "partial", "--paths", "10", "--surface", surface.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = run(tmp.path(), &["simulate", cfg, "--policy", "partial", "--paths", "10", "--surface", "/no/such.csv"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_fixed_and_full_policies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ref.conf", &ModelSpec::two_regime_reference(0.3, 0.0));
    let cfg = cfg.to_str().unwrap();
    for policy in ["fixed:0.04", "full"] {
        let o = run(tmp.path(), &["simulate", cfg, "--policy", policy, "--paths", "100", "--record", "1", "--steps", "300"]);
        assert!(o.status.success(), "{policy}: {}", String::from_utf8_lossy(&o.stderr));
        let dir = out_dir(&o);
        assert!(dir.join("path_1.csv").exists() && !dir.join("path_2.csv").exists());
        let path = fs::read_to_string(dir.join("path_1.csv")).unwrap();
        assert!(path.lines().any(|l| l == "t,S,N,X,pi1,spread_bid,spread_ask,event_side"));
    }
    let o = run(tmp.path(), &["simulate", cfg, "--policy", "fixed:0.04", "--paths", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(tmp.path(), &["simulate", cfg, "--policy", "greedy"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_series_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ref.conf", &ModelSpec::two_regime_reference(0.5, 0.0));
    let o = run(tmp.path(), &["compare", cfg.to_str().unwrap(), "--mpi", "40", "--points", "11", "--steps", "200"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = out_dir(&o);
    let csv = fs::read_to_string(dir.join("compare.csv")).unwrap();
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(
        lines.next().unwrap(),
        "t,n,side,partial_pi_0,partial_pi_0.6,partial_pi_1,full_regime_1,full_regime_2"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 11 * 7 * 2);
    // At the short limit the ask side is blocked in every series.
    let blocked = rows.iter().find(|r| r.contains(",-3,ask,")).unwrap();
    assert!(blocked.ends_with("stub,stub,stub,stub,stub"));
    let t0 = fs::read_to_string(dir.join("compare_t0.txt")).unwrap();
    assert!(t0.contains("excess_ask_n0_regime1=") && t0.contains("min_excess_ask="));
}
