use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fedlab() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fedlab"));
    c.env_remove("FEDLAB_OUT");
    c
}

fn config(d: usize, lr: f64) -> String {
    format!(
        r#"{{
  "name": "tiny",
  "data": {{"synthetic": {{"kind": "binary", "density": 0.5, "d": {d}, "classes": 2, "seed": 3}}}},
  "training": {{"clients": 2, "samples_per_client": 10, "batch_size": 2, "n_updates": 2, "t_max": 2,
               "learning_rate": {lr}, "seed": 0, "hidden": 8}},
  "seeds": [0, 1]
}}"#
    )
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn train(dir: &Path, cfg: &Path, out: &str, extra: &[&str]) -> Output {
    run(fedlab()
        .current_dir(dir)
        .args(["train", "--config"])
        .arg(cfg)
        .args(["--out", out])
        .args(extra))
}

fn traces(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn minimal_config_writes_one_trace() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "min.json",
        &config(10, 0.1).replace("\"t_max\": 2", "\"t_max\": 1").replace("[0, 1]", "[0]"),
    );
    let out = train(tmp.path(), &cfg, "o", &[]);
    assert!(out.status.success());
    assert_eq!(traces(&tmp.path().join("o/traces")).len(), 1);
    for f in ["config.json", "dataset.json", "partition.json", "heldout.json", "accuracy.json"] {
        assert!(tmp.path().join("o").join(f).is_file(), "{f}");
    }
}

#[test]
fn training_and_sweeps_are_byte_identical_on_rerun() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", &config(10, 0.1));
    assert!(train(tmp.path(), &cfg, "a", &["--oracle"]).status.success());
    assert!(train(tmp.path(), &cfg, "b", &["--oracle"]).status.success());
    let (a, b) = (traces(&tmp.path().join("a/traces")), traces(&tmp.path().join("b/traces")));
    assert_eq!(a.len(), 2);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }

    write(
        tmp.path(),
        "s.json",
        &format!(r#"{{"base": {}, "axis": "alpha", "values": [0.1, 10], "repetitions": 2}}"#, config(10, 0.1)),
    );
    for out in ["s1", "s2"] {
        let o = run(fedlab()
            .current_dir(tmp.path())
            .args(["sweep", "--config", "s.json", "--baseline", "--out", out]));
        assert!(o.status.success());
    }
    let csv = fs::read_to_string(tmp.path().join("s1/summary.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(tmp.path().join("s2/summary.csv")).unwrap());
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("version,experiment,axis,axis_value,repetition,"));
}

#[test]
fn attack_reads_traces_and_attaches_oracle_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", &config(10, 0.1));
    assert!(train(tmp.path(), &cfg, "t", &["--oracle"]).status.success());
    let o = run(fedlab()
        .current_dir(tmp.path())
        .args(["attack", "t/traces", "--oracle", "--baseline", "--nmax", "5", "--out", "r"]));
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("r/report.json")).unwrap()).unwrap();
    assert_eq!(report["traces"], 2);
    let oracle = &report["oracle"];
    assert_eq!(oracle["first_activation_violations"].as_array().unwrap().len(), 0);
    assert!(oracle["decomposition"]["batch_max_deviation"].as_f64().unwrap() < 1e-9);
    let csv = fs::read_to_string(tmp.path().join("r/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn zero_learning_rate_gives_zero_metrics() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", &config(10, 0.0));
    assert!(train(tmp.path(), &cfg, "t", &[]).status.success());
    let o = run(fedlab().current_dir(tmp.path()).args(["attack", "t/traces", "--out", "r"]));
    assert!(o.status.success());
    let mut rdr = csv::Reader::from_path(tmp.path().join("r/summary.csv")).unwrap();
    let row: csv::StringRecord = rdr.records().next().unwrap().unwrap();
    let header = rdr.headers().unwrap().clone();
    for col in ["rho_recovered", "rho_matched", "v_normalized"] {
        let i = header.iter().position(|h| h == col).unwrap();
        assert_eq!(row[i].parse::<f64>().unwrap(), 0.0, "{col}");
    }
}

#[test]
fn out_dir_from_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", &config(10, 0.1));
    let o = run(fedlab()
        .current_dir(tmp.path())
        .env("FEDLAB_OUT", "from-env")
        .args(["train", "--config"])
        .arg(&cfg));
    assert!(o.status.success());
    assert!(tmp.path().join("from-env/traces").is_dir());
}

#[test]
fn schema_errors_exit_2_with_field_path() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", &config(10, 0.1).replace("\"hidden\": 8", "\"hidden\": \"wide\""));
    let o = train(tmp.path(), &cfg, "o", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("training.hidden"));

    let cfg = write(tmp.path(), "u.json", &config(10, 0.1).replace("\"seeds\"", "\"sedes\""));
    assert_eq!(train(tmp.path(), &cfg, "o", &[]).status.code(), Some(2));

    let o = train(tmp.path(), &cfg, "o", &["--defense", "q:many"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_files_exit_3() {
    let tmp = TempDir::new().unwrap();
    let o = train(tmp.path(), Path::new("absent.json"), "o", &[]);
    assert_eq!(o.status.code(), Some(3));
    let o = run(fedlab().current_dir(tmp.path()).args(["attack", "absent.fltrace"]));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn mismatched_trace_dimensions_exit_2() {
    let tmp = TempDir::new().unwrap();
    let a = write(tmp.path(), "a.json", &config(10, 0.1));
    let b = write(tmp.path(), "b.json", &config(12, 0.1));
    assert!(train(tmp.path(), &a, "a", &[]).status.success());
    assert!(train(tmp.path(), &b, "b", &[]).status.success());
    let o = run(fedlab()
        .current_dir(tmp.path())
        .args(["attack", "a/traces", "b/traces", "--out", "r"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dimension"));
}

#[test]
fn unknown_sweep_axis_exits_2() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "s.json",
        &format!(r#"{{"base": {}, "axis": "momentum", "values": [0.9]}}"#, config(10, 0.1)),
    );
    let o = run(fedlab().current_dir(tmp.path()).args(["sweep", "--config", "s.json"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown axis"));
}

#[test]
fn single_point_sweep_is_one_row() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "s.json",
        &format!(r#"{{"base": {}, "axis": "batch_size", "values": [4]}}"#, config(10, 0.1)),
    );
    let o = run(fedlab()
        .current_dir(tmp.path())
        .args(["sweep", "--config", "s.json", "--defense", "q:4", "--out", "s"]));
    assert!(o.status.success());
    let csv = fs::read_to_string(tmp.path().join("s/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().contains(",batch_size,4,0,"));
}
