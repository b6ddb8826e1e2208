use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "subjects=5",
    "--set",
    "splits=2",
    "--set",
    "offline_dwell=1.5",
    "--set",
    "online_dwell_min=1.5",
    "--set",
    "online_dwell_max=2",
    "--set",
    "max_epochs=20",
];

fn irisswap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irisswap"))
        .args(args)
        .env_remove("IRISSWAP_CONFIG")
        .output()
        .unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn identical_templates_authenticate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut args = SMALL.to_vec();
    args.extend(["synth", "--mode", "offline", "--out", s(&data)]);
    assert!(irisswap(&args).status.success());

    let frame = data.join("subject_0").join("frames").join("frame_00000.pgm");
    let template = dir.path().join("t.bin");
    let out = irisswap(&["segment", s(&frame), "--template-out", s(&template)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = irisswap(&["authenticate", s(&template), s(&template)]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["decision"], "accept");
    assert_eq!(v["hd"], 0.0);
}

#[test]
fn missing_config_exits_2() {
    let out = irisswap(&["--config", "/nonexistent/irisswap.conf", "experiment"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "ConfigError");
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = irisswap(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "UnknownSubcommand");
}

#[test]
fn missing_input_is_reported_as_json() {
    let out = irisswap(&["segment", "/nonexistent/eye.pgm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["message"].is_string());
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn experiment_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let mut args = SMALL.to_vec();
        args.extend(["--seed", "7", "--set", "modes=offline", "experiment", "--out", s(out)]);
        let res = irisswap(&args);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert!(ta.iter().any(|(p, _)| p == "report.json"));
    assert_eq!(ta, tb);

    let out = irisswap(&["report", s(&a.join("report.json"))]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("offline"));
}
