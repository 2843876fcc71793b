//! End-to-end tests of the pipeline binary. Every invocation runs in
//! its own scratch directory with relative paths, so determinism
//! checks can compare whole output trees byte for byte.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Output;

use thermonet::select::SelectionPlan;

/// Four-node chain machine, small enough that training finishes in
/// well under a second per model.
const TINY_MACHINE: &str = r#"
dt = 30.0
steps = 140
sensors = "all"

[[nodes]]
id = "a"
capacitance = 2.0e4

[[nodes]]
id = "b"
capacitance = 2.0e4

[[nodes]]
id = "c"
capacitance = 2.0e4

[[nodes]]
id = "d"
capacitance = 2.0e4

[[edges]]
a = "a"
b = "b"
conductance = 40.0

[[edges]]
a = "b"
b = "c"
conductance = 40.0

[[edges]]
a = "c"
b = "d"
conductance = 40.0

[[convection]]
node = "a"
area = 0.4
h = 15.0
bath = "ambient"

[[convection]]
node = "d"
area = 0.4
h = 15.0
bath = "ambient"

[[sources]]
node = "b"
area = 0.05
"#;

const TINY_CHAIN: &str = r#"
[[element]]
id = "col"
axis = "z"
length = 1.0
cte = 1.1e-5
youngs_modulus = 2.0e11
nodes = ["a", "b"]
"#;

fn run_in(dir: &Path, envs: &[(&str, &str)], args: &[&str]) -> Output {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_thermonet"));
    cmd.current_dir(dir).env_remove("THERMO_SEED").args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary must spawn");
    assert!(
        out.stdout.is_empty(),
        "data must go to files, not stdout: {:?}",
        String::from_utf8_lossy(&out.stdout)
    );
    out
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Relative file name -> bytes for every file under `dir`, recursively.
fn tree_snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, sink: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, sink);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                sink.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut sink = BTreeMap::new();
    walk(dir, dir, &mut sink);
    sink
}

fn write_tiny_machine(dir: &Path) {
    std::fs::write(dir.join("machine.toml"), TINY_MACHINE).unwrap();
}

fn simulate_tiny(dir: &Path, runs: usize) {
    write_tiny_machine(dir);
    let out = run_in(
        dir,
        &[],
        &[
            "simulate",
            "--config",
            "machine.toml",
            "--runs",
            &runs.to_string(),
            "--out",
            "data",
        ],
    );
    assert_ok(&out);
}

/// Shared pinned flags that make a train invocation fast.
fn fast_train_flags<'a>(arch: &'a str, protocol: &'a str) -> Vec<&'a str> {
    vec![
        "train",
        "--data",
        "data",
        "--arch",
        arch,
        "--protocol",
        protocol,
        "--search",
        "trials=1",
        "--epochs",
        "1",
        "--seq-len",
        "6",
        "--hidden",
        "8",
        "--layers",
        "1",
        "--dropout",
        "0.1",
        "--lr",
        "0.005",
        "--wd",
        "1e-6",
        "--out",
        "trained",
    ]
}

#[test]
fn simulate_writes_paired_csvs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    simulate_tiny(dir.path(), 3);
    let data = dir.path().join("data");
    for run in ["RUN1", "RUN2", "RUN3"] {
        for quantity in ["temperature", "heat_flux"] {
            let path = data.join(format!("{run}_{quantity}.csv"));
            assert!(path.is_file(), "missing {path:?}");
            let text = std::fs::read_to_string(&path).unwrap();
            assert!(text.starts_with("time,a,b,c,d"));
            assert_eq!(text.lines().count(), 142, "header plus 141 rows");
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("initial_conditions.json")).unwrap())
            .unwrap();
    assert_eq!(manifest.as_object().unwrap().len(), 3);
    assert!(manifest["RUN1"]["ambient_temp"].as_f64().unwrap() > 280.0);
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("config_resolved.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["command"], "simulate");
    assert_eq!(sidecar["runs"], 3);
    assert_eq!(sidecar["seed"], 42);
    assert_eq!(sidecar["seed_source"], "default");
}

#[test]
fn simulate_rejects_zero_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_machine(dir.path());
    let out = run_in(
        dir.path(),
        &[],
        &["simulate", "--config", "machine.toml", "--runs", "0", "--out", "data"],
    );
    assert_code(&out, 2);
    assert!(stderr_of(&out).contains("--runs"));
}

#[test]
fn identical_invocations_write_identical_trees() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    simulate_tiny(first.path(), 2);
    simulate_tiny(second.path(), 2);
    let a = tree_snapshot(&first.path().join("data"));
    let b = tree_snapshot(&second.path().join("data"));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert_eq!(bytes, &b[name], "{name} differs between identical invocations");
    }
}

#[test]
fn seed_flag_beats_env_which_beats_default() {
    let args = |seed_flag: Option<&'static str>| {
        let mut v = vec!["simulate", "--config", "machine.toml", "--runs", "1", "--out", "data"];
        if let Some(s) = seed_flag {
            v.extend(["--seed", s]);
        }
        v
    };
    let manifest = |envs: &[(&str, &str)], seed_flag: Option<&'static str>| {
        let dir = tempfile::tempdir().unwrap();
        write_tiny_machine(dir.path());
        let out = run_in(dir.path(), envs, &args(seed_flag));
        assert_ok(&out);
        std::fs::read(dir.path().join("data/initial_conditions.json")).unwrap()
    };
    let flag7 = manifest(&[], Some("7"));
    let env7 = manifest(&[("THERMO_SEED", "7")], None);
    let env9_flag7 = manifest(&[("THERMO_SEED", "9")], Some("7"));
    let env9 = manifest(&[("THERMO_SEED", "9")], None);
    let default = manifest(&[], None);
    assert_eq!(flag7, env7, "flag and env with the same seed must agree");
    assert_eq!(flag7, env9_flag7, "the flag must override the env var");
    assert_ne!(flag7, env9);
    assert_ne!(default, flag7);

    let dir = tempfile::tempdir().unwrap();
    write_tiny_machine(dir.path());
    let out = run_in(dir.path(), &[("THERMO_SEED", "not-a-number")], &args(None));
    assert_code(&out, 2);
    assert!(stderr_of(&out).contains("THERMO_SEED"));
}

#[test]
fn select_echoes_tau_and_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    simulate_tiny(dir.path(), 2);
    let out = run_in(
        dir.path(),
        &[],
        &["select", "--data", "data", "--tau", "0.9", "--out", "plan.json"],
    );
    assert_ok(&out);
    let plan_path = dir.path().join("plan.json");
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&plan_path).unwrap()).unwrap();
    assert_eq!(parsed["tau"], 0.9);
    assert!(dir.path().join("plan.config_resolved.json").is_file());

    let plan = SelectionPlan::load_json(&plan_path).unwrap();
    let copy_path = dir.path().join("copy.json");
    plan.save_json(&copy_path).unwrap();
    assert_eq!(
        std::fs::read(&plan_path).unwrap(),
        std::fs::read(&copy_path).unwrap(),
        "plan JSON must round-trip byte for byte"
    );

    let rerun = run_in(
        dir.path(),
        &[],
        &["select", "--data", "data", "--tau", "0.9", "--out", "plan2.json"],
    );
    assert_ok(&rerun);
    assert_eq!(
        std::fs::read(&plan_path).unwrap(),
        std::fs::read(dir.path().join("plan2.json")).unwrap()
    );
}

#[test]
fn select_rejects_tau_outside_open_interval() {
    let dir = tempfile::tempdir().unwrap();
    simulate_tiny(dir.path(), 1);
    for tau in ["1.0", "1.5", "0"] {
        let out = run_in(
            dir.path(),
            &[],
            &["select", "--data", "data", "--tau", tau, "--out", "plan.json"],
        );
        assert_code(&out, 2);
        assert!(stderr_of(&out).contains("--tau"));
    }
}

#[test]
fn train_writes_metrics_configs_and_trial_logs() {
    let dir = tempfile::tempdir().unwrap();
    simulate_tiny(dir.path(), 2);
    let out = run_in(dir.path(), &[], &fast_train_flags("gru", "specialised"));
    assert_ok(&out);
    let trained = dir.path().join("trained");
    let metrics =
        std::fs::read_to_string(trained.join("metrics_specialised_temperature_gru.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "target,model,mse_mean,mse_std,n_repeats,wall_time");
    assert_eq!(lines.len(), 3, "one row per run");
    assert!(lines[1].starts_with("RUN1,GRU,"));
    assert!(lines[2].starts_with("RUN2,GRU,"));
    let configs =
        std::fs::read_to_string(trained.join("best_configs_specialised_temperature_gru.csv"))
            .unwrap();
    assert!(configs.contains("RUN1,GRU,0.005,0.000001,0.1,8,1,"));
    for run in ["RUN1", "RUN2"] {
        let log = trained.join(format!("trials_specialised_temperature_gru_{run}.csv"));
        let text = std::fs::read_to_string(&log).unwrap();
        assert_eq!(text.lines().count(), 2, "one trial plus header in {log:?}");
    }
    let sidecar: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(trained.join("config_resolved.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sidecar["command"], "train");
    assert_eq!(sidecar["search"]["trials"], 1);
    assert_eq!(sidecar["pinned"]["hidden"], 8);
    assert_eq!(sidecar["pinned"]["heads"], serde_json::Value::Null);
}

#[test]
fn train_generalised_reports_held_out_targets() {
    let dir = tempfile::tempdir().unwrap();
    simulate_tiny(dir.path(), 2);
    let out = run_in(dir.path(), &[], &fast_train_flags("gru", "generalised"));
    assert_ok(&out);
    let trained = dir.path().join("trained");
    let metrics =
        std::fs::read_to_string(trained.join("metrics_generalised_temperature_gru.csv")).unwrap();
    assert!(metrics.contains("RUN1,GRU,"));
    assert!(metrics.contains("RUN2,GRU,"));
    assert!(trained
        .join("trials_generalised_temperature_gru_loo.csv")
        .is_file());
}

#[test]
fn train_rejects_unknown_architecture_listing_valid_kinds() {
    let dir = tempfile::tempdir().unwrap();
    simulate_tiny(dir.path(), 1);
    let mut flags = fast_train_flags("mamba", "specialised");
    flags[4] = "mamba";
    let out = run_in(dir.path(), &[], &flags);
    assert_code(&out, 2);
    let err = stderr_of(&out);
    for token in ["rnn", "lstm", "gru", "bilstm", "transformer", "tcn"] {
        assert!(err.contains(token), "{err:?} must list {token}");
    }
}

#[test]
fn train_rejects_malformed_search_spec() {
    let dir = tempfile::tempdir().unwrap();
    simulate_tiny(dir.path(), 1);
    for bad in ["trials=zero", "n=3", "trials=0"] {
        let mut flags = fast_train_flags("gru", "specialised");
        let pos = flags.iter().position(|f| *f == "trials=1").unwrap();
        flags[pos] = bad;
        let out = run_in(dir.path(), &[], &flags);
        assert_code(&out, 2);
        assert!(stderr_of(&out).contains("--search"));
    }
}

#[test]
fn benchmark_merges_architectures_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    simulate_tiny(dir.path(), 2);
    for arch in ["gru", "rnn"] {
        let out = run_in(dir.path(), &[], &fast_train_flags(arch, "specialised"));
        assert_ok(&out);
    }
    let bench = |out_dir: &str| {
        let out = run_in(
            dir.path(),
            &[],
            &["benchmark", "--data", "trained", "--out", out_dir],
        );
        assert_ok(&out);
    };
    bench("report");
    let report_dir = dir.path().join("report");
    let text = std::fs::read_to_string(report_dir.join("report.txt")).unwrap();
    assert!(text.contains("Dataset"));
    assert!(text.contains("RUN1"));
    assert!(text.contains("RNN"));
    assert!(text.contains("GRU"));
    assert!(text.contains('\u{b1}'));
    assert!(text.contains("Average"));
    let csv = std::fs::read_to_string(report_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("protocol,quantity,dataset,architecture,"));
    assert_eq!(
        csv.lines().count(),
        1 + 3 * 2,
        "two runs plus the average row, two architectures each"
    );
    let configs = std::fs::read_to_string(report_dir.join("best_configs.csv")).unwrap();
    assert_eq!(configs.lines().count(), 5, "header plus 2 runs x 2 architectures");
    assert!(configs.contains("RUN1,RNN,"));
    assert!(configs.contains("RUN2,GRU,"));

    bench("report_again");
    let first = tree_snapshot(&report_dir);
    let second = tree_snapshot(&dir.path().join("report_again"));
    for (name, bytes) in &first {
        if name == "config_resolved.json" {
            continue; // echoes --out, which differs by construction
        }
        assert_eq!(bytes, &second[name], "{name} must re-render byte-identically");
    }
}

#[test]
fn benchmark_on_empty_directory_reports_empty() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("trained")).unwrap();
    let out = run_in(
        dir.path(),
        &[],
        &["benchmark", "--data", "trained", "--out", "report"],
    );
    assert_code(&out, 1);
    assert!(stderr_of(&out).contains("no rows"));
}

fn write_predictions(dir: &Path, temps: &[(f64, f64)]) {
    let mut text = String::from("time,a,b\n");
    for (i, (ta, tb)) in temps.iter().enumerate() {
        text.push_str(&format!("{i},{ta},{tb}\n"));
    }
    std::fs::write(dir.join("predictions.csv"), text).unwrap();
}

#[test]
fn compensate_zero_delta_t_gives_zero_offsets() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("chain.toml"), TINY_CHAIN).unwrap();
    write_predictions(dir.path(), &[(293.15, 293.15); 3]);
    let out = run_in(
        dir.path(),
        &[],
        &[
            "compensate",
            "--predictions",
            "predictions.csv",
            "--chain",
            "chain.toml",
            "--out",
            "offsets.csv",
        ],
    );
    assert_ok(&out);
    let text = std::fs::read_to_string(dir.path().join("offsets.csv")).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        for cell in line.split(',').skip(1) {
            assert_eq!(cell.parse::<f64>().unwrap(), 0.0);
        }
        rows += 1;
    }
    assert_eq!(rows, 3);
    assert!(dir.path().join("offsets.config_resolved.json").is_file());
}

#[test]
fn compensate_offsets_negate_recomputed_drifts() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("chain.toml"), TINY_CHAIN).unwrap();
    let temps = [(297.15, 295.15), (298.65, 297.15), (293.15, 303.15)];
    write_predictions(dir.path(), &temps);
    let out = run_in(
        dir.path(),
        &[],
        &[
            "compensate",
            "--predictions",
            "predictions.csv",
            "--chain",
            "chain.toml",
            "--out",
            "offsets.csv",
            "--drift-out",
            "drifts.csv",
        ],
    );
    assert_ok(&out);
    let offsets = std::fs::read_to_string(dir.path().join("offsets.csv")).unwrap();
    let drifts = std::fs::read_to_string(dir.path().join("drifts.csv")).unwrap();
    for (i, (off_line, drift_line)) in offsets.lines().skip(1).zip(drifts.lines().skip(1)).enumerate() {
        let off: Vec<f64> = off_line.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        let drift: Vec<f64> = drift_line.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        // Independent recomputation: dz = length * cte * (mean - ref).
        let (ta, tb) = temps[i];
        let expected = 1.0 * 1.1e-5 * ((ta + tb) / 2.0 - 293.15);
        assert!((drift[2] - expected).abs() < 1e-12, "row {i}: {} vs {expected}", drift[2]);
        for (o, d) in off.iter().zip(&drift) {
            assert_eq!(*o, -d, "row {i}: offsets must negate drifts");
        }
    }
}

#[test]
fn compensate_fails_on_unmapped_chain_node() {
    let dir = tempfile::tempdir().unwrap();
    let chain = TINY_CHAIN.replace("\"a\", \"b\"", "\"a\", \"ghost\"");
    std::fs::write(dir.path().join("chain.toml"), chain).unwrap();
    write_predictions(dir.path(), &[(293.15, 293.15); 3]);
    let out = run_in(
        dir.path(),
        &[],
        &[
            "compensate",
            "--predictions",
            "predictions.csv",
            "--chain",
            "chain.toml",
            "--out",
            "offsets.csv",
        ],
    );
    assert_code(&out, 1);
    assert!(stderr_of(&out).contains("ghost"));
}
