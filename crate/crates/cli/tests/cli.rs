use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fixture(name: &str) -> String {
    fixtures().join(name).display().to_string()
}

/// Runs `hspr` with a whitespace-separated argument line.
fn hspr(line: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hspr"))
        .args(line.split_whitespace())
        .env("SOURCE_DATE_EPOCH", "0")
        .env_remove("HSPR_LOG")
        .output()
        .expect("binary runs")
}

fn ok(line: &str) -> Output {
    let out = hspr(line);
    assert!(
        out.status.success(),
        "hspr {line} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn build_kb_on_fixture_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("kb.json");
    ok(&format!(
        "build-kb --scenes {} --out {}",
        fixture("scenes"),
        kb.display()
    ));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&kb).unwrap()).unwrap();
    let rows = json["P_r"].as_array().unwrap();
    assert_eq!(rows.len(), 12);
    for row in rows {
        for v in row.as_array().unwrap() {
            let v = v.as_f64().unwrap();
            assert!((0.0..=0.95).contains(&v));
        }
    }
    assert_eq!(json["provenance"]["scene_count"], 5);
    assert_eq!(json["provenance"]["built_at_unix"], 0);
}

fn pipeline(root: &Path, parallel: usize) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let r = root.display();
    ok(&format!(
        "gen-scenes --kb {} --n 6 --seed 3 --out {r}/scenes",
        fixture("house_kb.json")
    ));
    ok(&format!("build-kb --scenes {r}/scenes --out {r}/kb.json"));
    ok(&format!(
        "gen-episodes --scenes {r}/scenes --per-scene 2 --seed 4 --out {r}/episodes.json"
    ));
    ok(&format!(
        "run --scenes {r}/scenes --kb {r}/kb.json --episodes {r}/episodes.json --policy hspr \
         --confusion identity --seed 9 --parallel {parallel} --out {r}/traj.jsonl"
    ));
    let printed = ok(&format!(
        "eval --scenes {r}/scenes --episodes {r}/episodes.json --traj {r}/traj.jsonl --out {r}/report"
    ));
    let text = std::fs::read(root.join("report/report.txt")).unwrap();
    assert_eq!(printed.stdout, text);
    (
        std::fs::read(root.join("traj.jsonl")).unwrap(),
        std::fs::read(root.join("report/report.json")).unwrap(),
        text,
    )
}

#[test]
fn pipeline_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path(), 1);
    let second = pipeline(b.path(), 4);
    assert_eq!(first, second);
    let text = String::from_utf8(first.2).unwrap();
    assert!(text.contains("TL") && text.contains("RGSPL"));
}

#[test]
fn trace_adds_score_tables() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().display();
    ok(&format!(
        "gen-episodes --scenes {} --per-scene 1 --seed 1 --out {r}/episodes.json",
        fixture("scenes")
    ));
    ok(&format!(
        "run --scenes {} --kb {} --episodes {r}/episodes.json --trace --fusion dynamic --steps 2 \
         --beta visited --out {r}/traj.jsonl",
        fixture("scenes"),
        fixture("house_kb.json")
    ));
    let text = std::fs::read_to_string(dir.path().join("traj.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 5);
    for line in text.lines() {
        let t: serde_json::Value = serde_json::from_str(line).unwrap();
        let steps = t["trace"].as_array().unwrap();
        assert!(!steps.is_empty());
        assert_eq!(steps[0]["scores"][0]["action"], "stop");
    }
}

#[test]
fn ablate_steps_prints_one_row_per_value() {
    let out = ok("ablate --sweep steps=1..5 --bench-scenes 8 --parallel 2");
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    assert_eq!(header, ["steps", "TL", "NE", "OSR", "SR", "SPL", "RGS", "RGSPL"]);
    for (k, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&(k + 1).to_string()));
        assert_eq!(line.split_whitespace().count(), 8);
    }
}

#[test]
fn ablate_fusion_on_files() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().display();
    ok(&format!(
        "gen-episodes --scenes {} --per-scene 2 --seed 5 --out {r}/episodes.json",
        fixture("scenes")
    ));
    let out = ok(&format!(
        "ablate --sweep fusion=average,dynamic,residual --scenes {} --kb {} --episodes {r}/episodes.json",
        fixture("scenes"),
        fixture("house_kb.json")
    ));
    let text = String::from_utf8(out.stdout).unwrap();
    let labels: Vec<&str> = text
        .lines()
        .skip(1)
        .filter_map(|l| l.split_whitespace().next())
        .collect();
    assert_eq!(labels, ["average", "dynamic", "residual"]);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(hspr("build-kb --bogus").status.code(), Some(2));
    assert_eq!(hspr("frobnicate").status.code(), Some(2));
    assert_eq!(hspr("ablate --sweep depth=3").status.code(), Some(2));
    assert_eq!(hspr("--help").status.code(), Some(0));
}

#[test]
fn input_errors_exit_3_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().display();
    let missing = hspr(&format!("build-kb --scenes {r}/nope --out {r}/kb.json"));
    assert_eq!(missing.status.code(), Some(3));
    let stderr = String::from_utf8(missing.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.contains("nope"));

    let mut json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fixtures().join("house_kb.json")).unwrap()).unwrap();
    json["schema_version"] = 99.into();
    std::fs::write(dir.path().join("bad.json"), json.to_string()).unwrap();
    let out = hspr(&format!("gen-scenes --kb {r}/bad.json --n 1 --seed 1 --out {r}/o"));
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("schema_version"));

    let out = hspr(&format!(
        "run --scenes {} --kb {} --episodes {r}/missing.json",
        fixture("scenes"),
        fixture("house_kb.json")
    ));
    assert_eq!(out.status.code(), Some(3));
}
