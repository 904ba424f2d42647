use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn meson(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meson")).args(args).current_dir(cwd).output().expect("spawn meson")
}

fn ok(args: &[&str], cwd: &Path) {
    let out = meson(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).skip(1).map(String::from).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(meson(&["--help"], tmp.path()).status.code(), Some(0));
    assert_eq!(meson(&["--version"], tmp.path()).status.code(), Some(0));
    assert_eq!(meson(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(meson(&["quench", "--set", "model.L=1"], tmp.path()).status.code(), Some(1));
    assert_eq!(meson(&["quench", "--config", "missing.cfg"], tmp.path()).status.code(), Some(1));
    fs::write(tmp.path().join("bad.cfg"), "model.L = twelve\n").unwrap();
    assert_eq!(meson(&["ed", "--config", "bad.cfg"], tmp.path()).status.code(), Some(1));
    assert_eq!(meson(&["quench", "--set", "plan.dt=0"], tmp.path()).status.code(), Some(1));
}

#[test]
fn quench_trace_has_one_row_per_step() {
    let tmp = TempDir::new().unwrap();
    ok(&["quench", "--out", "q"], tmp.path());
    let rows = data_rows(&tmp.path().join("q/quench.csv"));
    assert_eq!(rows.len(), 101);
    assert!(rows[0].starts_with("0,1,0"));
    let text = fs::read_to_string(tmp.path().join("q/quench.csv")).unwrap();
    assert!(text.starts_with("# L=12 g=0.5 h=0.3 dt=0.4 n_steps=100"));
    assert_eq!(text.lines().nth(1), Some("t,sigma_x,sigma_y"));
    let doc = json(&tmp.path().join("q/quench.json"));
    assert_eq!(doc["record"]["times"].as_array().unwrap().len(), 101);
    assert_eq!(doc["record"]["native_gate_counts"]["cnot"], 24);
}

#[test]
fn sampled_quench_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let args = |dir: &'static str| ["quench", "--out", dir, "--seed", "17", "--set", "plan.shots=100000", "--format", "csv"];
    ok(&args("a"), tmp.path());
    ok(&args("b"), tmp.path());
    let a = fs::read(tmp.path().join("a/quench.csv")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b/quench.csv")).unwrap());
    assert!(!tmp.path().join("a/quench.json").exists());
    ok(&["quench", "--out", "c", "--seed", "18", "--set", "plan.shots=100000", "--format", "csv"], tmp.path());
    assert_ne!(a, fs::read(tmp.path().join("c/quench.csv")).unwrap());
}

#[test]
fn ed_outputs() {
    let tmp = TempDir::new().unwrap();
    ok(&["ed", "--out", "a", "--set", "model.g=0.25", "--set", "spectro.n_low=6"], tmp.path());
    let doc = json(&tmp.path().join("a/levels.json"));
    assert_eq!(doc["e"].as_array().unwrap().len(), 6);
    assert_eq!(doc["sector"], "k=0");
    assert!(doc.get("free_fermion_check").is_none());

    ok(&["ed", "--out", "b", "--set", "model.L=3", "--set", "model.g=0", "--set", "model.h=0"], tmp.path());
    let e0 = json(&tmp.path().join("b/levels.json"))["E"][0].as_f64().unwrap();
    assert!((e0 + 3.0).abs() < 1e-12);

    ok(&["ed", "--out", "c", "--set", "model.L=8", "--set", "model.h=0"], tmp.path());
    assert_eq!(json(&tmp.path().join("c/levels.json"))["free_fermion_check"], true);
}

#[test]
fn synthetic_trace_gives_one_unassigned_peak() {
    let tmp = TempDir::new().unwrap();
    let mut csv = String::from("t,sigma_y\n");
    for k in 0..256 {
        let t = k as f64 * 0.4;
        csv.push_str(&format!("{t},{}\n", (2.0 * t).cos()));
    }
    fs::write(tmp.path().join("tone.csv"), csv).unwrap();
    ok(&["spectrum", "--input", "tone.csv", "--out", "s"], tmp.path());
    let doc = json(&tmp.path().join("s/peaks.json"));
    let peaks = doc["peaks"].as_array().unwrap();
    assert_eq!(peaks.len(), 1);
    assert_eq!(peaks[0]["label"]["kind"], "unassigned");
    assert!((peaks[0]["omega"].as_f64().unwrap() - 2.0).abs() < doc["resolution"].as_f64().unwrap());
    assert!(doc.get("levels").is_none());
    assert!(data_rows(&tmp.path().join("s/spectrum.csv")).len() > 1000);
}

#[test]
fn quench_then_spectrum_labels_e1() {
    let tmp = TempDir::new().unwrap();
    ok(&["quench", "--out", "q", "--set", "plan.axes=y"], tmp.path());
    ok(&["spectrum", "--input", "q/quench.csv", "--out", "s"], tmp.path());
    let doc = json(&tmp.path().join("s/peaks.json"));
    let e1 = doc["levels"]["e"][0].as_f64().unwrap();
    let labeled = doc["peaks"].as_array().unwrap().iter().find(|p| p["label"]["kind"] == "gap" && p["label"]["n"] == 1);
    let peak = labeled.expect("a peak labeled e1");
    assert!((peak["omega"].as_f64().unwrap() - e1).abs() <= doc["tolerance"].as_f64().unwrap());
}

#[test]
fn missing_input_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = meson(&["spectrum", "--input", "absent.csv", "--out", "s"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("s").exists());
    fs::write(tmp.path().join("broken.csv"), "t,sigma_y\n0,1\n0.4,oops\n").unwrap();
    let out = meson(&["spectrum", "--input", "broken.csv", "--out", "s"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("s").exists());
}

#[test]
fn full_sweep_table() {
    let tmp = TempDir::new().unwrap();
    ok(&["sweep", "--out", "w", "--format", "csv"], tmp.path());
    let text = fs::read_to_string(tmp.path().join("w/sweep.csv")).unwrap();
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.starts_with("g,h,eta,e1,e1_err,e2,e2_err"));
    let rows = data_rows(&tmp.path().join("w/sweep.csv"));
    assert_eq!(rows.len(), 11);
    let eta: f64 = rows[0].split(',').nth(2).unwrap().parse().unwrap();
    assert!((eta - 8.956).abs() < 1e-3);
}

#[test]
fn sweep_bytes_do_not_depend_on_threads() {
    let tmp = TempDir::new().unwrap();
    let grid = "sweep.g=0.3,0.5,0.7";
    ok(&["sweep", "--out", "serial", "--parallel", "1", "--set", grid, "--set", "model.L=8"], tmp.path());
    ok(&["sweep", "--out", "par", "--parallel", "4", "--set", grid, "--set", "model.L=8"], tmp.path());
    for f in ["sweep.csv", "sweep.json"] {
        assert_eq!(fs::read(tmp.path().join("serial").join(f)).unwrap(), fs::read(tmp.path().join("par").join(f)).unwrap());
    }
}

#[test]
fn single_point_sweep_matches_quench_and_spectrum() {
    let tmp = TempDir::new().unwrap();
    let set = ["--set", "model.L=10", "--set", "model.g=0.4", "--set", "sweep.g=0.4", "--set", "sweep.h=0.3"];
    let with = |cmd: &'static str, extra: &[&'static str]| -> Vec<&'static str> {
        let mut v = vec![cmd];
        v.extend_from_slice(extra);
        v.extend_from_slice(&set);
        v
    };
    ok(&with("sweep", &["--out", "w"]), tmp.path());
    ok(&with("quench", &["--out", "q"]), tmp.path());
    ok(&with("spectrum", &["--out", "s", "--input", "q/quench.csv"]), tmp.path());
    let sweep = json(&tmp.path().join("w/sweep.json"));
    let peaks = json(&tmp.path().join("s/peaks.json"));
    assert_eq!(sweep[0]["peaks"]["peaks"], peaks["peaks"]);
    assert_eq!(sweep[0]["reference"]["e"], peaks["levels"]["e"]);
}

#[test]
fn correlate_outputs() {
    let tmp = TempDir::new().unwrap();
    ok(&["correlate", "--out", "free", "--set", "model.g=0.25", "--set", "model.h=0"], tmp.path());
    let free = json(&tmp.path().join("free/front.json"));
    let v = free["velocity"].as_f64().unwrap();
    assert!(v > 0.0 && v <= 1.2 * free["velocity_bound"].as_f64().unwrap());
    assert_eq!(free["stalled"], false);
    for row in data_rows(&tmp.path().join("free/correlator.csv")).iter().take(6) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], "0");
        assert_eq!(cols[2].parse::<f64>().unwrap().abs(), 0.0);
    }

    ok(&["correlate", "--out", "conf", "--set", "model.g=0.25", "--set", "model.h=0.2"], tmp.path());
    assert_eq!(json(&tmp.path().join("conf/front.json"))["stalled"], true);
}

#[test]
fn writes_only_inside_output_dir() {
    let tmp = TempDir::new().unwrap();
    ok(&["ed", "--out", "nested/dir", "--set", "model.L=6"], tmp.path());
    let top: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(top, ["nested"]);
    let mut files: Vec<_> = fs::read_dir(tmp.path().join("nested/dir")).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files, ["levels.csv", "levels.json"]);
}

#[test]
fn config_file_round_trips_through_binary() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("run.cfg"), "# custom\nmodel.L = 10\nnoise.p01 = 0.08\nnoise.p10 = 0.03\nsweep.g = 0.3,0.6\n").unwrap();
    let first = meson(&["config", "--config", "run.cfg"], tmp.path());
    assert!(first.status.success());
    fs::write(tmp.path().join("norm.cfg"), &first.stdout).unwrap();
    let second = meson(&["config", "--config", "norm.cfg"], tmp.path());
    assert_eq!(first.stdout, second.stdout);
    assert!(String::from_utf8_lossy(&first.stdout).contains("noise.p01 = 0.08"));
}
