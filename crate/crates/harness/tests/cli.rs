use std::fs;
use std::process::Command;

fn hetnet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hetnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn missing_stage_is_reported_machine_readably() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = hetnet(&["evaluate", "--out", out]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    let line = err.lines().find(|l| l.starts_with("error ")).unwrap();
    assert!(line.starts_with("error kind=missing_stage message="), "{line}");
    assert!(line.contains("deploy"), "{line}");
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[online]\ntrails = 3\n").unwrap();
    let o = hetnet(&["deploy", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8(o.stderr).unwrap().contains("error kind=config"));
}

#[test]
fn stages_chain_and_write_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for cmd in ["deploy", "train-offline", "train-dnn", "train-online", "evaluate", "oracle"] {
        let o = hetnet(&[cmd, "--out", out, "--seed", "3", "--preset", "desk"]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["deploy.json", "offline.json", "dnn.json", "online.json", "evaluate.json", "oracle.json", "dnn_training.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("command,seed,config_hash,metric,value"));
    assert!(lines.all(|l| l.split(',').nth(1) == Some("3")));
    assert!(metrics.contains("evaluate,3,"));
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("evaluate.json")).unwrap()).unwrap();
    assert_eq!(eval["version"], 1);
    assert_eq!(eval["stage"], "evaluate");
    assert_eq!(eval["seed"], 3);
}
