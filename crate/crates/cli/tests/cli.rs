//! Runs the binary on a deliberately small configuration.

use std::path::Path;
use std::process::Command;

const SMALL: &str = r#"{
  "seed": 11,
  "drivers": 3,
  "runs_per_pair": 3,
  "scenarios": ["car_following", "stop_and_go"],
  "reward": { "stride": 40, "train": { "epochs": 2 } },
  "planner": { "expert_runs": 1, "stride": 40, "train": { "epochs": 2 } },
  "finetune": { "targets": ["driver01"], "eval_runs": 1, "stride": 40, "epochs": 2 },
  "rollout": { "seeds": 1 }
}"#;

fn drivestyle(out: &Path, config: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_drivestyle"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, config: &Path, args: &[&str]) {
    let o = drivestyle(out, config, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

const STAGES: [&[&str]; 8] = [
    &["gen-data"],
    &["extract"],
    &["select-indicators"],
    &["eval-style"],
    &["train-reward"],
    &["pretrain-planner"],
    &["finetune", "--no-safety"],
    &["rollout", "--scenario", "car_following"],
];

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn stages_run_and_rerun_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(&config, SMALL).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        for stage in STAGES {
            ok(out, &config, stage);
        }
        ok(out, &config, &["report"]);
    }
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.iter().any(|(p, _)| p.ends_with("report.json")));
    assert!(fa.iter().any(|(p, _)| p == "report.md"));
    assert_eq!(fa.len(), fb.len());
    for ((pa, ba), (pb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{pa} differs between reruns");
    }
}

#[test]
fn finetune_report_carries_the_requested_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(&config, SMALL).unwrap();
    let out = tmp.path().join("out");
    for stage in &STAGES[..6] {
        ok(&out, &config, stage);
    }
    for variant in ["dft", "pdsa"] {
        ok(&out, &config, &["finetune", "--no-safety", "--driver", "driver01", "--variant", variant]);
        let path = out.join("finetune/driver01").join(variant).join("report.json");
        let report = drivestyle::FinetuneReport::from_json(&std::fs::read(path).unwrap()).unwrap();
        assert_eq!(report.variant.as_str(), variant);
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(&config, SMALL).unwrap();
    let out = tmp.path().join("out");
    // nothing generated yet
    assert_eq!(drivestyle(&out, &config, &["extract"]).status.code(), Some(4));
    // unknown config field
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"sede": 1}"#).unwrap();
    assert_eq!(drivestyle(&out, &bad, &["gen-data"]).status.code(), Some(2));
    // corpus generated under another seed
    ok(&out, &config, &["gen-data"]);
    let o = Command::new(env!("CARGO_BIN_EXE_drivestyle"))
        .args(["extract", "--seed", "12", "--out"])
        .arg(&out)
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
