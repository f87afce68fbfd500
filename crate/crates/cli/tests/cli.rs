use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[data]
n = 40
n_test = 60
[model.projector]
kind = "inverse_distance"
patterns = 32
[budget]
max_steps = 20
[probe]
invariance_points = 30
schedule = 2
"#;

fn memlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memlab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_with_zero_budget_reports_not_memorized() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = memlab(&["train", "--out", out.to_str().unwrap(), "--set", "budget.max_steps=0", "--set", "data.n=30"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("records.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains("not_memorized"), "{csv}");
    let snapshot = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(snapshot.contains("learning_rate = 0.004"), "{snapshot}");
    assert!(out.join("model.ckpt").exists());
}

#[test]
fn unknown_keys_and_bad_types_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[optimizer]\nlearnig_rate = 0.1\n");
    let out = tmp.path().join("run");
    let o = memlab(&["train", "-c", &cfg, "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learnig_rate"), "{}", stderr(&o));
    let o = memlab(&["train", "-o", out.to_str().unwrap(), "--set", "optimizer.batch_size=\"many\""]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("optimizer.batch_size"), "{}", stderr(&o));
}

#[test]
fn sweep_without_values_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sweep.toml", "axis = \"classes\"\nvalues = []\nseeds = [0]\n");
    let o = memlab(&["sweep", "-c", &cfg, "-o", tmp.path().join("s").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let cfg = write_config(tmp.path(), "sweep2.toml", "axis = \"classes\"\nseeds = [0]\n");
    let o = memlab(&["sweep", "-c", &cfg, "-o", tmp.path().join("s2").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("run");
    let out = out.to_str().unwrap();
    assert_eq!(memlab(&["train", "-c", &cfg, "-o", out]).status.code(), Some(0));
    let o = memlab(&["train", "-c", &cfg, "-o", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"));
    assert_eq!(memlab(&["train", "-c", &cfg, "-o", out, "--force"]).status.code(), Some(0));
}

#[test]
fn reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = memlab(&["train", "-c", &cfg, "-o", dir.to_str().unwrap(), "--seed", "4"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for name in ["records.csv", "probes.csv", "history.csv", "records.json", "model.ckpt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn data_probe_and_decompose_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let o = memlab(&["gen-data", "-c", &cfg, "-o", data.to_str().unwrap(), "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = memlab(&["train", "-c", &cfg, "-o", run.to_str().unwrap(), "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let ckpt = run.join("model.ckpt");
    let train = data.join("train.csv");
    let probe_out = tmp.path().join("probe");
    let o = memlab(&[
        "probe",
        "-c",
        &cfg,
        "-o",
        probe_out.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        train.to_str().unwrap(),
        "--test",
        data.join("test.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let probes = fs::read_to_string(probe_out.join("probes.csv")).unwrap();
    // Header plus clean and random rows for the embedding and output layers.
    assert_eq!(probes.lines().count(), 5, "{probes}");

    // The clean probe of the embedding matches the probe_final of the run.
    let records = fs::read_to_string(run.join("records.csv")).unwrap();
    let header: Vec<&str> = records.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = records.lines().nth(1).unwrap().split(',').collect();
    let probe_final = row[header.iter().position(|h| *h == "probe_final").unwrap()];
    let embedding_clean = probes.lines().find(|l| l.starts_with("embedding,clean")).unwrap();
    assert_eq!(embedding_clean.split(',').nth(3).unwrap(), probe_final);

    let dec = tmp.path().join("dec");
    let o = memlab(&[
        "decompose",
        "-c",
        &cfg,
        "-o",
        dec.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        train.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dec.join("decomposition.json")).unwrap()).unwrap();
    let l = report["l_super"].as_f64().unwrap();
    let r = report["residual"].as_f64().unwrap();
    assert!(r.abs() <= 1e-10 * (1.0 + l));
}

#[test]
fn small_sweep_and_grid_emit_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = format!("axis = \"views\"\nvalues = [1, 2]\nseeds = [0, 1]\n{}", SMALL.replace('[', "[base."));
    let cfg = write_config(tmp.path(), "sweep.toml", &sweep);
    let out = tmp.path().join("sweep");
    let o = memlab(&["sweep", "-c", &cfg, "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dat = fs::read_to_string(out.join("views.dat")).unwrap();
    // Header plus two values times two policies.
    assert_eq!(dat.lines().count(), 5, "{dat}");
    assert_eq!(fs::read_to_string(out.join("records.csv")).unwrap().lines().count(), 9);

    let grid = format!("n_values = [20]\nb_values = [1, 2]\nseeds = [0]\n{}", SMALL.replace('[', "[base."));
    let cfg = write_config(tmp.path(), "grid.toml", &grid);
    let out = tmp.path().join("grid");
    let o = memlab(&["grid", "-c", &cfg, "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("grid.dat").exists());
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("grid.json")).unwrap()).unwrap();
    assert_eq!(summary["cells"].as_array().unwrap().len(), 2);
}

#[test]
fn check_passes_on_a_fresh_build() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("check");
    let o = memlab(&["check", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("mean_deviation_identity") && text.contains("knn_oracle"), "{text}");
    assert!(!text.contains("FAIL"));
}
