use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use imc::estimation::{Partition, RegimeModel};
use imc::index::IndexFunction;
use imc::market_data::DiscretizationMap;
use imc::simulation::{simulate_imc, InitialWindow, SimulationConfig};
use imc::StochasticMatrix;
use serde_json::Value;
use tempfile::TempDir;

fn imc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imc"))
        .current_dir(dir)
        .env_remove("IMC_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = imc(dir, args);
    assert!(
        out.status.success(),
        "imc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

fn planted_model(thresholds: Vec<f64>) -> RegimeModel {
    let calm = StochasticMatrix::from_rows(vec![
        vec![0.06, 0.16, 0.56, 0.16, 0.06],
        vec![0.04, 0.17, 0.6, 0.15, 0.04],
        vec![0.05, 0.15, 0.6, 0.15, 0.05],
        vec![0.04, 0.15, 0.6, 0.17, 0.04],
        vec![0.06, 0.16, 0.56, 0.16, 0.06],
    ])
    .unwrap();
    let mid = StochasticMatrix::from_rows(vec![vec![0.12, 0.2, 0.36, 0.2, 0.12]; 5]).unwrap();
    let wild = StochasticMatrix::from_rows(vec![vec![0.22, 0.18, 0.2, 0.18, 0.22]; 5]).unwrap();
    let matrices = if thresholds.len() == 1 { vec![calm, wild] } else { vec![calm, mid, wild] };
    let map = DiscretizationMap::new(1.0, 2, 2).unwrap();
    RegimeModel::new(map, 10, IndexFunction::Square, Partition::new(thresholds).unwrap(), matrices).unwrap()
}

/// `returns.csv` and `map.json` simulated from a planted model.
fn planted_data(thresholds: Vec<f64>, length: usize, seed: u64) -> TempDir {
    let dir = TempDir::new().unwrap();
    let model = planted_model(thresholds);
    let cfg = SimulationConfig { length, seed, initial: InitialWindow::Zeros };
    let series = simulate_imc(&model, &cfg).unwrap();
    series.write_csv(fs::File::create(dir.path().join("returns.csv")).unwrap()).unwrap();
    fs::write(dir.path().join("map.json"), serde_json::to_string(&model.map).unwrap()).unwrap();
    dir
}

const FIT: &[&str] = &["--returns", "returns.csv", "--memory", "10", "--grid-size", "20"];

fn cat<'a>(parts: &[&[&'a str]]) -> Vec<&'a str> {
    parts.concat()
}

#[test]
fn fit_auto_recovers_planted_thresholds() {
    // The index moves on a 0.1 lattice; a 30-point quantile grid resolves
    // every well-populated lattice value, so the planted split is representable.
    let truth = [0.9, 1.6];
    let dir = planted_data(truth.to_vec(), 200_000, 5);
    let args = ["fit", "--returns", "returns.csv", "--memory", "10", "--grid-size", "30", "--auto", "--out", "out"];
    ok(dir.path(), &args);
    let model = json(dir.path().join("out/model.json"));
    let fit = json(dir.path().join("out/fit.json"));
    assert_eq!(model["provenance"]["tool"], "imc");
    let thresholds: Vec<f64> = serde_json::from_value(model["model"]["thresholds"].clone()).unwrap();
    let grid: Vec<f64> = serde_json::from_value(fit["fit"]["grid"].clone()).unwrap();
    assert_eq!(thresholds.len(), 2, "{fit:#}");
    for (t, psi) in truth.iter().zip(&thresholds) {
        let cell = |x: f64| grid.iter().filter(|&&g| g < x).count() as isize;
        assert!((cell(*t) - cell(*psi)).abs() <= 1, "ψ̂ = {psi} for {t}, grid {grid:?}");
    }
    let trace = fs::read_to_string(dir.path().join("out/trace.csv")).unwrap();
    assert!(trace.starts_with("# imc "));
    assert!(trace.lines().nth(1).unwrap().starts_with("k,D,"));
}

#[test]
fn matdist_of_identical_files_is_zero() {
    let dir = TempDir::new().unwrap();
    let m = "[[0.5, 0.5, 0.0], [0.2, 0.6, 0.2], [0.1, 0.1, 0.8]]";
    fs::write(dir.path().join("a.json"), m).unwrap();
    fs::write(dir.path().join("b.json"), m).unwrap();
    let out = ok(dir.path(), &["matdist", "a.json", "b.json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["rsmd_pct"], 0.0);
    assert_eq!(v[0]["mad_pct"], 0.0);
}

#[test]
fn matdist_compares_models_regime_by_regime() {
    let dir = planted_data(vec![1.2], 20_000, 1);
    ok(dir.path(), &cat(&[&["fit"], FIT, &["--out", "out"]]));
    let out = ok(dir.path(), &["matdist", "out/model.json", "out/model.json", "--out", "out"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    let saved = json(dir.path().join("out/matdist.json"));
    assert_eq!(saved["distances"], v);
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let dir = TempDir::new().unwrap();
    let out = imc(dir.path(), &["fit", "--returns", "nowhere/returns.csv", "--map", "nowhere/map.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere/map.json"), "{err}");

    let out = imc(dir.path(), &["ingest", "--input", "ticks-missing.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ticks-missing.csv"));
}

#[test]
fn stochastic_commands_require_a_seed() {
    let dir = planted_data(vec![1.2], 5_000, 2);
    let out = imc(dir.path(), &["test", "--returns", "returns.csv", "--memory", "10", "--grid-size", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn no_admissible_candidate_is_a_statistical_failure() {
    let dir = planted_data(vec![1.2], 5_000, 3);
    let out = imc(
        dir.path(),
        &["fit", "--returns", "returns.csv", "--memory", "10", "--grid-size", "10", "--min-exposure", "1000000"],
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = planted_data(vec![1.2], 20_000, 4);
    for out in ["one", "two"] {
        ok(dir.path(), &cat(&[&["test"], FIT, &["--bootstrap", "20", "--seed", "9", "--out", out]]));
    }
    for name in ["test.json", "bootstrap.csv"] {
        let a = fs::read(dir.path().join("one").join(name)).unwrap();
        let b = fs::read(dir.path().join("two").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
    let test = json(dir.path().join("one/test.json"));
    assert_eq!(test["test"]["result"]["replicates"], 20);
    assert!(test["test"]["result"]["p_value"].as_f64().unwrap() < 0.1);
}

#[test]
fn threads_do_not_change_results() {
    let dir = planted_data(vec![1.2], 10_000, 6);
    for (out, threads) in [("a", "1"), ("b", "3")] {
        ok(dir.path(), &cat(&[&["--threads", threads, "test"], FIT, &["--bootstrap", "16", "--seed", "3", "--out", out]]));
    }
    assert_eq!(
        fs::read(dir.path().join("a/bootstrap.csv")).unwrap(),
        fs::read(dir.path().join("b/bootstrap.csv")).unwrap()
    );
}

#[test]
fn config_file_supplies_defaults_and_flags_override_it() {
    let dir = planted_data(vec![0.9, 1.6], 50_000, 7);
    fs::write(
        dir.path().join("run.toml"),
        "returns = \"returns.csv\"\nmemory = 10\ngrid-size = 20\nk = 1\nout = \"from-config\"\n",
    )
    .unwrap();
    ok(dir.path(), &["--config", "run.toml", "fit"]);
    let fit = json(dir.path().join("from-config/fit.json"));
    assert_eq!(fit["fit"]["k"], 1);

    ok(dir.path(), &["--config", "run.toml", "fit", "--k", "2", "--out", "override"]);
    let over = json(dir.path().join("override/fit.json"));
    assert_eq!(over["fit"]["k"], 2);
    assert_ne!(fit["provenance"]["config_hash"], over["provenance"]["config_hash"]);

    fs::write(dir.path().join("bad.toml"), "memroy = 10\n").unwrap();
    let out = imc(dir.path(), &["--config", "bad.toml", "fit"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("memroy"));
}

#[test]
fn failed_command_removes_partial_artifacts() {
    let dir = planted_data(vec![1.2], 20_000, 8);
    fs::create_dir_all(dir.path().join("out/trace.csv")).unwrap();
    let out = imc(
        dir.path(),
        &["fit", "--returns", "returns.csv", "--memory", "10", "--grid-size", "20", "--auto", "--out", "out"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out/model.json").exists());
    assert!(!dir.path().join("out/fit.json").exists());
}

#[test]
fn ingest_writes_returns_and_map() {
    let dir = TempDir::new().unwrap();
    let mut ticks = String::from("timestamp,price\n");
    let mut price = 100.0f64;
    let mut x: u64 = 12345;
    for k in 0..3000u64 {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let u = (x >> 11) as f64 / (1u64 << 53) as f64;
        price *= 1.0 + 0.002 * (u - 0.5);
        ticks.push_str(&format!("{},{price:.5}\n", k * 20_000));
    }
    ticks.push_str("garbage,row\n");
    fs::write(dir.path().join("ticks.csv"), ticks).unwrap();
    ok(dir.path(), &["ingest", "--input", "ticks.csv", "--period-ms", "60000", "--out", "data"]);
    let summary = json(dir.path().join("data/ingest.json"));
    assert_eq!(summary["ingest"]["load"]["malformed"], 1);
    assert_eq!(summary["ingest"]["delta_estimated"], true);
    let returns = fs::read_to_string(dir.path().join("data/returns.csv")).unwrap();
    assert!(returns.starts_with("# imc "));
    assert_eq!(returns.lines().count(), 2 + summary["ingest"]["returns"].as_u64().unwrap() as usize);
    let map = json(dir.path().join("data/map.json"));
    assert_eq!(map["map"]["z_min"], 2);
}

#[test]
fn simulate_fpt_and_acf_pipeline() {
    let dir = planted_data(vec![1.2], 20_000, 9);
    ok(dir.path(), &cat(&[&["fit"], FIT, &["--out", "out"]]));
    ok(dir.path(), &["simulate", "--model", "out/model.json", "--length", "3000", "--seed", "4", "--out", "sim"]);
    let traj = fs::read_to_string(dir.path().join("sim/traj.csv")).unwrap();
    assert_eq!(traj.lines().count(), 3002);

    let fpt = ["fpt", "--model", "out/model.json", "--target-regime", "2", "--horizon", "5", "--window", "from-data", "--returns", "returns.csv"];
    let exact: Vec<&str> = fpt.iter().copied().chain(["--out", "fpt"]).collect();
    let out = imc(dir.path(), &exact);
    // m = 10 over 5 states is 5^10 windows, beyond the exact solver.
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Monte Carlo"));
    let mc: Vec<&str> = fpt.iter().copied().chain(["--mc", "2000", "--seed", "1", "--out", "fpt"]).collect();
    ok(dir.path(), &mc);
    let csv = fs::read_to_string(dir.path().join("fpt/fpt.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("n,g,stderr"));
    assert_eq!(csv.lines().count(), 7);
    let summary = json(dir.path().join("fpt/fpt.json"));
    let total = summary["first-passage"]["total_mass"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&total));

    ok(dir.path(), &["acf", "--returns", "returns.csv", "--max-lag", "50", "--out", "acf"]);
    let acf = fs::read_to_string(dir.path().join("acf/acf.csv")).unwrap();
    assert_eq!(acf.lines().count(), 52);
}

#[test]
fn fpt_exact_on_a_small_model() {
    let dir = TempDir::new().unwrap();
    let map = DiscretizationMap::new(1.0, 1, 1).unwrap();
    let p = StochasticMatrix::from_rows(vec![vec![0.2, 0.6, 0.2]; 3]).unwrap();
    let q = StochasticMatrix::from_rows(vec![vec![0.4, 0.2, 0.4]; 3]).unwrap();
    let model = RegimeModel::new(map, 2, IndexFunction::Square, Partition::new(vec![0.5]).unwrap(), vec![p, q]).unwrap();
    fs::write(dir.path().join("model.json"), serde_json::to_string(&model).unwrap()).unwrap();
    ok(
        dir.path(),
        &["fpt", "--model", "model.json", "--target-regime", "1", "--horizon", "3", "--window", "1,1", "--exact"],
    );
    let csv = fs::read_to_string(dir.path().join("fpt.csv")).unwrap();
    let g1: f64 = csv.lines().nth(2).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    // From (1, 1) the index is 1, and falls to 0.5 only on a zero return.
    assert!((g1 - 0.2).abs() < 1e-12, "{csv}");
}

#[test]
fn report_writes_json_and_markdown() {
    let dir = planted_data(vec![0.9, 1.6], 60_000, 10);
    ok(dir.path(), &cat(&[&["report"], FIT, &["--bootstrap", "20", "--seed", "2", "--k-max", "3", "--out", "rep"]]));
    let md = fs::read_to_string(dir.path().join("rep/report.md")).unwrap();
    for heading in ["## One change point", "### Bootstrap test", "## Number of change points", "## Selected model", "%RSMD between regimes", "## Regime structure"] {
        assert!(md.contains(heading), "missing {heading}");
    }
    let report = json(dir.path().join("rep/report.json"));
    assert_eq!(report["report"]["selected_k"], 2);
    assert!(dir.path().join("rep/bootstrap.csv").exists());
}

#[test]
fn help_documents_every_command() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["ingest", "fit", "test", "simulate", "fpt", "acf", "matdist", "report"] {
        assert!(text.contains(cmd), "{cmd} missing from --help");
    }
    let out = ok(dir.path(), &["fit", "--help"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("--improvement-floor"));
}
