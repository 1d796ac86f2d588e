use std::path::{Path, PathBuf};
use std::process::Command;

use zeno_cli::config::{self, parse};
use zeno_cli::experiments::write_sweep;
use zeno_cli::{run, Overrides};
use zeno_core::sde::{zeno_sweep, SweepConfig};
use zeno_core::ModelParams;

const SMALL_SWEEP: &str = r#"
experiment = "zeno-sweep"
seed = 99

[model]
epsilon = 0.5
alpha_x = 1.0

[numerics]
dt = 1e-2
t_end = 20.0
n_traj = 4
alpha_y_values = [0.0, 0.5, 1.0]
"#;

const SMALL_CYCLE: &str = r#"
experiment = "entropy-components"

[model]
epsilon = 10.0
alpha_x = { offset = 2.0, amplitude = 1.0, period = 0.1 }

[numerics]
n_cells = 64
dt = 1e-4
record_stride = 50
sum_rule_tolerance = 0.05
alpha_grid = { start = 1.0, stop = 3.0, count = 11 }
"#;

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run_into(text: &str, dir: &Path) -> PathBuf {
    let cfg = parse(text).unwrap();
    let report = run(
        &cfg,
        &Overrides {
            out: Some(dir.to_path_buf()),
            ..Overrides::default()
        },
    )
    .unwrap();
    report.outcome.files[0].clone()
}

#[test]
fn shipped_configs_validate() {
    let dir = workspace_root().join("configs");
    let mut count = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = config::load(&path).unwrap();
            let diags = config::validate(&cfg);
            assert!(diags.is_empty(), "{}: {diags:?}", path.display());
            count += 1;
        }
    }
    assert_eq!(count, 6);
}

#[test]
fn reruns_are_byte_identical() {
    for text in [SMALL_SWEEP, SMALL_CYCLE] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = run_into(text, a.path());
        let fb = run_into(text, b.path());
        assert_eq!(std::fs::read(&fa).unwrap(), std::fs::read(&fb).unwrap());
    }
}

#[test]
fn sweep_table_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let file = run_into(SMALL_SWEEP, dir.path());
    let rows = zeno_sweep(
        &ModelParams::constant(0.5, 1.0, 0.0).unwrap(),
        &[0.0, 0.5, 1.0],
        &SweepConfig {
            dt: 1e-2,
            t_end: 20.0,
            n_traj: 4,
            batches: 10,
            seed: 99,
            initial_phi: 0.0,
        },
    )
    .unwrap();
    let mut expected = Vec::new();
    write_sweep(&rows, &mut expected).unwrap();
    assert_eq!(std::fs::read(&file).unwrap(), expected);

    let mut reader = csv::Reader::from_path(&file).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["alpha_y", "mean_rate", "stderr"]);
    for (record, row) in reader.records().zip(&rows) {
        let record = record.unwrap();
        let parsed: Vec<f64> = record.iter().map(|f| f.parse().unwrap()).collect();
        assert_eq!(parsed[0], row.alpha_y);
        assert!((parsed[1] - row.mean_rate).abs() <= 1e-14 * row.mean_rate.abs());
        let se = row.stderr.unwrap();
        assert!((parsed[2] - se).abs() <= 1e-14 * se);
    }
}

#[test]
fn ledger_and_manifest_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let file = run_into(SMALL_CYCLE, dir.path());
    let mut reader = csv::Reader::from_path(&file).unwrap();
    assert_eq!(
        reader.headers().unwrap(),
        vec!["t", "s1", "s2", "s3", "s_tot", "S_G"]
    );
    let rows: Vec<Vec<f64>> = reader
        .records()
        .map(|r| r.unwrap().iter().map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 1 + 1000 / 50);
    assert!(rows.windows(2).all(|w| w[1][4] >= w[0][4]));

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_format"], 1);
    assert_eq!(manifest["experiment"], "entropy-components");
    assert_eq!(manifest["config"]["numerics"]["max_periods"], 200);
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn trajectory_and_pdf_experiments_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let traj = run_into(
        r#"
experiment = "trajectory"
[model]
epsilon = 0.5
alpha_x = 1.0
[numerics]
dt = 1e-3
t_end = 1.0
record_stride = 100
representation = "bloch"
"#,
        &dir.path().join("traj"),
    );
    let mut reader = csv::Reader::from_path(&traj).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["t", "x", "y", "z"]);
    assert_eq!(reader.records().count(), 11);

    let pdf = run_into(
        r#"
experiment = "evolve-pdf"
[model]
epsilon = 0.5
alpha_x = 1.0
[numerics]
n_cells = 32
dt = 1e-3
t_end = 0.1
record_stride = 50
initial_pdf = { kind = "gaussian", center = 1.0, width = 0.3 }
"#,
        &dir.path().join("pdf"),
    );
    let mut reader = csv::Reader::from_path(&pdf).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["t", "phi", "p"]);
    assert_eq!(reader.records().count(), 3 * 32);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_zeno");
    let dir = tempfile::tempdir().unwrap();

    let good = dir.path().join("good.toml");
    std::fs::write(&good, SMALL_SWEEP).unwrap();
    let status = Command::new(bin).args(["validate"]).arg(&good).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let out = dir.path().join("out");
    let status = Command::new(bin)
        .args(["run"])
        .arg(&good)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "5"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("zeno_sweep.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 5);

    let missing = dir.path().join("missing.toml");
    std::fs::write(&missing, SMALL_SWEEP.replace("alpha_x = 1.0", "")).unwrap();
    let output = Command::new(bin).args(["validate"]).arg(&missing).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("model.alpha_x"));

    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "experiment = \"zeno-sweep\"\n[model\n").unwrap();
    let output = Command::new(bin).args(["run"]).arg(&broken).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("line"));

    let stuck = dir.path().join("stuck.toml");
    std::fs::write(
        &stuck,
        SMALL_CYCLE
            .replace("entropy-components", "periodic-cycle")
            .replace("sum_rule_tolerance = 0.05\n", "")
            .replace("alpha_grid = { start = 1.0, stop = 3.0, count = 11 }\n", "max_periods = 1\ntolerance = 1e-12\n"),
    )
    .unwrap();
    let output = Command::new(bin)
        .args(["run"])
        .arg(&stuck)
        .arg("--out")
        .arg(dir.path().join("stuck"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3), "{}", String::from_utf8_lossy(&output.stderr));
}
