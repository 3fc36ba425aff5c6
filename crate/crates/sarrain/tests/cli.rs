use std::fs;
use std::path::Path;

use sarrain::cli;
use serde_json::Value;

fn sarrain(args: &[&str]) -> (i32, String, String) {
    let argv = std::iter::once("sarrain").chain(args.iter().copied());
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn ok(args: &[&str]) -> String {
    let (code, out, err) = sarrain(args);
    assert_eq!(code, 0, "{args:?} failed: {err}");
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_json(err: &str) -> Value {
    serde_json::from_str(err.lines().next().unwrap()).unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

fn write_corpus_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("corpus.json");
    let cfg = serde_json::json!({
        "seed": 3,
        "n_swaths": 6,
        "n_cells_range": [3, 6],
        "max_shift_px": 3,
        "template": {"size_px": 96},
        "rules": {"tile_px": 64}
    });
    fs::write(&p, cfg.to_string()).unwrap();
    p
}

#[test]
fn no_arguments_is_a_usage_error() {
    let (code, _, err) = sarrain(&[]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(sarrain(&["segment"]).0, 2);
}

#[test]
fn missing_input_reports_path_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.json");
    let (code, _, err) = sarrain(&["synth", "--corpus", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 1);
    let v = error_json(&err);
    assert_eq!(v["error"], "io");
    assert_eq!(v["path"], s(&missing));
}

#[test]
fn malformed_config_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, "{ not json").unwrap();
    let (code, _, err) = sarrain(&["synth", "--config", s(&p), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 1);
    assert_eq!(error_json(&err)["path"], s(&p));
}

#[test]
fn koch_below_200m_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = sarrain(&["train-koch", "--data", s(dir.path()), "--resolution", "100", "--out", s(&dir.path().join("p.json"))]);
    assert_eq!(code, 2);
    assert_eq!(error_json(&err)["error"], "usage");
}

#[test]
fn zero_workers_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = sarrain(&["--workers", "0", "split", "--data", s(dir.path())]);
    assert_eq!(code, 2);
}

#[test]
fn synth_manifest_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_corpus_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--corpus", s(&cfg), "--out", s(&a)]);
    ok(&["synth", "--corpus", s(&cfg), "--out", s(&b)]);
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["config_sha256"], mb["config_sha256"]);
    assert_eq!(ma["seed"], 3);
    assert_eq!(ma["subcommand"], "synth");
    let shifts = |d: &Path| fs::read_to_string(d.join("injected_shifts.csv")).unwrap();
    assert_eq!(shifts(&a), shifts(&b));
    assert_eq!(fs::read(a.join("manifest.csv")).unwrap(), fs::read(b.join("manifest.csv")).unwrap());
}

#[test]
fn scenes_extract_into_patches() {
    let dir = tempfile::tempdir().unwrap();
    let swaths = dir.path().join("swaths");
    for seed in [1, 2] {
        let cfg = dir.path().join(format!("scene{seed}.json"));
        fs::write(&cfg, serde_json::json!({"seed": seed, "size_px": 128, "n_cells": 5}).to_string()).unwrap();
        ok(&["synth", "--config", s(&cfg), "--out", s(&swaths.join(format!("s{seed}"))), "--radar-lag-s", "-300"]);
    }
    let data = dir.path().join("data");
    let out = ok(&["extract", "--swaths", s(&swaths), "--out", s(&data), "--resolution", "800"]);
    let summary: Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert!(summary["patches"].as_u64().unwrap() >= 1, "{summary}");
    let m = manifest(&data);
    assert_eq!(m["subcommand"], "extract");
    assert_eq!(m["config"]["rules"]["tile_px"], 32);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_corpus_config(root);
    let data = root.join("data");
    ok(&["synth", "--corpus", s(&cfg), "--out", s(&data)]);
    assert!(data.join("manifest.csv").is_file());

    ok(&["split", "--data", s(&data), "--seed", "1"]);
    assert!(data.join("split.json").is_file());

    // A manual override pins one patch.
    let first = fs::read_to_string(data.join("manifest.csv")).unwrap();
    let row: Vec<&str> = first.lines().nth(1).unwrap().split(',').collect();
    let ov = root.join("override.csv");
    fs::write(&ov, format!("swath,patch,d_row,d_col\n{},{},2,-1\n", row[0], row[1])).unwrap();
    let reg = root.join("reg");
    let out = ok(&["register", "--data", s(&data), "--radius", "4", "--override", s(&ov), "--out", s(&reg)]);
    assert!(out.contains("\"overridden\":1"), "{out}");
    let offsets = fs::read_to_string(reg.join("offsets.csv")).unwrap();
    assert!(offsets.contains(&format!("{},{},2,-1", row[0], row[1])), "{offsets}");

    let params = root.join("model").join("koch.json");
    ok(&["train-koch", "--data", s(&data), "--resolution", "400", "--epochs", "3", "--runs", "2", "--out", s(&params)]);
    let p0 = root.join("model").join("koch.seed0.json");
    let p1 = root.join("model").join("koch.seed1.json");
    assert!(params.is_file() && p0.is_file() && p1.is_file());

    let pred = root.join("pred");
    ok(&["predict", "--data", s(&data), "--params", s(&p0), s(&p1), "--subset", "all", "--out", s(&pred)]);
    assert!(pred.join("run0").is_dir() && pred.join("run1").is_dir());

    let eval = root.join("eval");
    let out = ok(&[
        "eval", "--pred", s(&pred), "--runs", "2", "--truth", s(&data), "--subset", "all", "--strat", "wind", "--baseline",
        s(&root.join("model").join("koch.init.json")), "--out", s(&eval),
    ]);
    let line = out.lines().find(|l| l.starts_with("macro_f1:")).expect(&out);
    // "macro_f1: m (s)"
    let (m, rest) = line["macro_f1:".len()..].trim().split_once(' ').unwrap();
    assert!((0.0..=1.0).contains(&m.parse::<f64>().unwrap()));
    assert!(rest.starts_with('(') && rest.ends_with(')'));
    assert!(eval.join("report.csv").is_file() && eval.join("strat_wind.csv").is_file());

    let rep = root.join("report");
    ok(&["report", "--inputs", s(&eval.join("report.csv")), "--split", s(&data.join("split.json")), "--out", s(&rep)]);
    assert!(rep.join("table.csv").is_file());
    assert_eq!(manifest(&rep)["subcommand"], "report");
}

#[test]
fn glm_cluster_writes_mask_and_flashes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scene.json");
    fs::write(&cfg, serde_json::json!({"seed": 4, "size_px": 64, "n_cells": 1, "timestamp": 1000}).to_string()).unwrap();
    let scene = dir.path().join("scene");
    ok(&["synth", "--config", s(&cfg), "--out", s(&scene)]);
    let grid = sarrain::sgrid::read_grid(&scene.join("s0.sgrd")).unwrap();
    let geo = *grid.geometry();
    let at = |r: f64, c: f64| geo.pixel_to_latlon(r + 0.5, c + 0.5);
    let (a, b, far) = (at(10.0, 10.0), at(11.0, 11.0), at(55.0, 55.0));
    // Two events in touching pixels make one cluster and one flash; the
    // third is far away in space, and the fourth falls outside the window.
    let csv = format!(
        "time_s,lat,lon\n1000.0,{},{}\n1000.1,{},{}\n1000.2,{},{}\n9000.0,{},{}\n",
        a.0, a.1, b.0, b.1, far.0, far.1, a.0, a.1
    );
    let events = dir.path().join("events.csv");
    fs::write(&events, csv).unwrap();
    let out = dir.path().join("glm");
    let line = ok(&["glm-cluster", "--events", s(&events), "--grid", s(&scene.join("s0.sgrd")), "--out", s(&out)]);
    let v: Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(v["events"], 4, "{v}");
    let mask = sarrain::sgrid::read_grid(&out.join("glm_mask.sgrd")).unwrap();
    assert_eq!(mask.values().iter().filter(|&&x| x == 1.0).count(), 3);
    let flashes = fs::read_to_string(out.join("flashes.csv")).unwrap();
    assert_eq!(flashes.lines().count(), 1 + 3);
}
