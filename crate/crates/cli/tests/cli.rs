use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fgmdm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgmdm"))
        .args(args)
        .current_dir(dir)
        .env_remove("FGMDM_API_KEY")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL: &str = "[dataset]\nvariations_per_template = 2\n\n[training]\nbatch = 2\nsteps = 3\ncheckpoint_interval = 2\n";

fn small_config(dir: &Path) {
    fs::write(dir.join("small.toml"), SMALL).unwrap();
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fgmdm(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(fgmdm(&[], dir.path()).status.code(), Some(2));
}

#[test]
fn invalid_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            "bad_type.toml",
            "[training]\nbatch = \"lots\"\n",
            "training.batch",
        ),
        ("unknown.toml", "[training]\nbatchsize = 3\n", "batchsize"),
        (
            "range.toml",
            "[diffusion]\nguidance_scale = -1.0\n",
            "guidance_scale",
        ),
    ];
    for (name, body, key) in cases {
        fs::write(dir.path().join(name), body).unwrap();
        let out = fgmdm(
            &["--config", name, "dataset", "generate", "--out", "d.jsonl"],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(2), "{name}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(key), "{name}: {err}");
    }
    let out = fgmdm(
        &[
            "--config",
            "missing.toml",
            "dataset",
            "generate",
            "--out",
            "d.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fgmdm(
        &["export-bvh", "--input", "nope.jsonl", "--out", "bvh"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn online_without_key_fails_before_any_request() {
    let dir = tempfile::tempdir().unwrap();
    let out = fgmdm(
        &[
            "--online",
            "--endpoint",
            "http://127.0.0.1:9/v1",
            "paraphrase",
            "--text",
            "A person nods.",
        ],
        dir.path(),
    );
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FGMDM_API_KEY"));
}

#[test]
fn offline_paraphrase_writes_parts() {
    let dir = tempfile::tempdir().unwrap();
    let out = fgmdm(
        &[
            "paraphrase",
            "--text",
            "A person nods.",
            "--text",
            "A person marches.",
        ],
        dir.path(),
    );
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["sentence"], "A person nods.");
    assert!(lines[0]["parts"]["neck"].as_str().unwrap().contains("neck"));
    assert_eq!(lines[1]["degraded"], false);
}

#[test]
fn pipeline_is_deterministic_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    let cfg = ["--config", "small.toml"];
    let run = |args: &[&str]| {
        let all: Vec<&str> = cfg.iter().chain(args).copied().collect();
        let out = fgmdm(&all, d);
        ok(&out);
    };

    run(&["dataset", "generate", "--out", "data.jsonl"]);
    assert!(d.join("data.jsonl.manifest.json").exists());
    run(&["train", "--data", "data.jsonl", "--out", "run-a"]);
    run(&["train", "--data", "data.jsonl", "--out", "run-b"]);
    let ck = |run: &str| fs::read(d.join(run).join("checkpoint.bin")).unwrap();
    assert_eq!(ck("run-a"), ck("run-b"));
    assert!(d.join("run-a/ckpt-000002.bin").exists());
    let telemetry = fs::read_to_string(d.join("run-a/telemetry.csv")).unwrap();
    assert_eq!(telemetry.lines().count(), 4);
    assert!(telemetry.starts_with("step,"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run-a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");

    let sample = |out: &str| {
        run(&[
            "sample",
            "--checkpoint",
            "run-a/checkpoint.bin",
            "--text",
            "A person waves the right arm.",
            "--num-samples",
            "2",
            "--frames",
            "16",
            "--out",
            out,
        ])
    };
    sample("s1.jsonl");
    sample("s2.jsonl");
    let s1 = fs::read(d.join("s1.jsonl")).unwrap();
    assert_eq!(s1, fs::read(d.join("s2.jsonl")).unwrap());
    assert_eq!(String::from_utf8(s1).unwrap().lines().count(), 2);

    run(&[
        "evaluate",
        "--reference",
        "data.jsonl",
        "--generated",
        "s1.jsonl",
        "--out",
        "eval.jsonl",
    ]);
    run(&[
        "evaluate",
        "--reference",
        "data.jsonl",
        "--generated",
        "s1.jsonl",
        "--out",
        "eval.jsonl",
    ]);
    let reports = fs::read_to_string(d.join("eval.jsonl")).unwrap();
    let lines: Vec<&str> = reports.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], lines[1]);
    let report: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert!(report["fid"].as_f64().unwrap().is_finite());

    run(&["export-bvh", "--input", "s1.jsonl", "--out", "bvh"]);
    let bvh: Vec<_> = fs::read_dir(d.join("bvh"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "bvh"))
        .collect();
    assert_eq!(bvh.len(), 2);
    assert!(fs::read_to_string(bvh[0].path())
        .unwrap()
        .starts_with("HIERARCHY"));
}

#[test]
fn resume_continues_to_the_requested_step() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    ok(&fgmdm(
        &[
            "--config",
            "small.toml",
            "--steps",
            "4",
            "train",
            "--out",
            "straight",
        ],
        d,
    ));
    ok(&fgmdm(
        &[
            "--config",
            "small.toml",
            "--steps",
            "2",
            "train",
            "--out",
            "part",
        ],
        d,
    ));
    ok(&fgmdm(
        &[
            "--config",
            "small.toml",
            "--steps",
            "4",
            "train",
            "--resume",
            "part/checkpoint.bin",
            "--out",
            "part",
        ],
        d,
    ));
    assert_eq!(
        fs::read(d.join("straight/checkpoint.bin")).unwrap(),
        fs::read(d.join("part/checkpoint.bin")).unwrap()
    );
}
