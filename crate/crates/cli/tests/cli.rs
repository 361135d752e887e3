use std::path::Path;
use std::process::{Command, Output};

use mhinv_core::experiments::{generate_data, invert_data, preset, ExperimentConfig, Scale};
use mhinv_core::observation::ObservationSet;

fn mhinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhinv")).args(args).env("MHINV_THREADS", "1").output().unwrap()
}

fn small_overrides() -> serde_json::Value {
    serde_json::json!({
        "models": ["B"],
        "strategies": ["analytic", "two-stage"],
        "eps": "1/20",
        "h": "1/160",
        "delta": "3/20",
        "k": "1/320"
    })
}

fn small_config() -> ExperimentConfig {
    preset("table-inverr", Scale::Desk).unwrap().with_overrides(&small_overrides()).unwrap()
}

fn write_json(path: &Path, v: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// CSV text with the `seconds` column blanked.
fn without_timing(csv: &str) -> String {
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "seconds");
    csv.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            if let Some(c) = col {
                f[c] = "";
            }
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn lists_every_preset() {
    let out = mhinv(&["list-presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["fig-erreps", "table-inverr", "table-inverrrand", "table-helm", "table-mcontinuous2M"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn unknown_preset_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = mhinv(&["preset", "table-unknown", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
}

#[test]
fn bad_scale_and_bad_override_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(mhinv(&["preset", "table-inverr", "--scale", "huge", "--out", d]).status.code(), Some(2));
    let over = dir.path().join("over.json");
    write_json(&over, &serde_json::json!({ "h": "1/10" }));
    let out = mhinv(&["preset", "table-inverr", "--config", over.to_str().unwrap(), "--out", d]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, "{ \"preset\": 3 ").unwrap();
    let out = mhinv(&["forward", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn forward_then_invert_matches_in_memory_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let cfg_path = dir.path().join("cfg.json");
    write_json(&cfg_path, &cfg);
    let d = dir.path().to_str().unwrap();
    let out = mhinv(&["forward", "--config", cfg_path.to_str().unwrap(), "--out", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data_path = dir.path().join("data.json");
    let from_file = ObservationSet::from_json(&std::fs::read_to_string(&data_path).unwrap()).unwrap();
    let in_memory = generate_data(&cfg, cfg.seeds[0]).unwrap();
    assert_eq!(from_file, in_memory);
    assert!(dir.path().join("data.csv").exists());

    let out = mhinv(&["invert", "--data", data_path.to_str().unwrap(), "--config", cfg_path.to_str().unwrap(), "--out", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("inversion.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let expected = invert_data(&in_memory, &cfg, cfg.seeds[0]).unwrap();
    assert_eq!(rows.len(), expected.len());
    for (row, e) in rows.iter().zip(&expected) {
        assert_eq!(row[0], "B");
        assert_eq!(row[4], "0.05", "ε of the data is echoed");
        let err: f64 = row[6].parse().unwrap();
        assert!((err - e.result.rel_error.unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn corrupted_data_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let cfg_path = dir.path().join("cfg.json");
    write_json(&cfg_path, &cfg);
    let data = generate_data(&cfg, 0).unwrap();
    let mut v = serde_json::to_value(&data).unwrap();
    v["descriptor"]["fingerprint"] = serde_json::json!("0000");
    let bad = dir.path().join("bad.json");
    write_json(&bad, &v);
    let d = dir.path().to_str().unwrap();
    let out = mhinv(&["invert", "--data", bad.to_str().unwrap(), "--config", cfg_path.to_str().unwrap(), "--out", d]);
    assert_eq!(out.status.code(), Some(2));

    let truncated = dir.path().join("trunc.json");
    std::fs::write(&truncated, "{\"descriptor\": {\"operator\"").unwrap();
    let out = mhinv(&["invert", "--data", truncated.to_str().unwrap(), "--config", cfg_path.to_str().unwrap(), "--out", d]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mismatched_operator_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let data = generate_data(&cfg, 0).unwrap();
    let data_path = dir.path().join("data.json");
    std::fs::write(&data_path, data.to_json().unwrap()).unwrap();
    let other = cfg.with_overrides(&serde_json::json!({ "h_macro": "1/4" })).unwrap();
    let cfg_path = dir.path().join("cfg.json");
    write_json(&cfg_path, &other);
    let d = dir.path().to_str().unwrap();
    let out = mhinv(&["invert", "--data", data_path.to_str().unwrap(), "--config", cfg_path.to_str().unwrap(), "--out", d]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn preset_runs_are_deterministic_and_write_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let over = dir.path().join("over.json");
    write_json(&over, &small_overrides());
    let mut tables = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = mhinv(&[
            "preset",
            "table-inverr",
            "--config",
            over.to_str().unwrap(),
            "--seed",
            "11",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        tables.push(std::fs::read_to_string(out_dir.join("table-inverr.csv")).unwrap());
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join("table-inverr.manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["config"]["eps"], "1/20");
        assert_eq!(manifest["config"]["seeds"], serde_json::json!([11]));
        assert_eq!(manifest["threads"], 1);
    }
    assert_eq!(without_timing(&tables[0]), without_timing(&tables[1]));
    assert!(tables[0].starts_with("model,strategy,M,N,eps,delta,rel_error,residual,iters,seconds,seed\n"));
    assert_eq!(tables[0].lines().count(), 3);
}

#[test]
fn eps_list_flag_drives_the_error_study() {
    let dir = tempfile::tempdir().unwrap();
    let out = mhinv(&[
        "preset",
        "fig-erreps",
        "--eps-list",
        "1/8,1/16",
        "--models",
        "A",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("fig-erreps_A.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "eps_or_delta,err_hom,err_hmm");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.125,"));
}

#[test]
fn invalid_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_mhinv")).arg("list-presets").env("MHINV_THREADS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
