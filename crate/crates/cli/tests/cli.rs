use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "[data]\nclasses = 12\nper_class = 8\ninput_dim = 6\ninformative_dims = 3\n\
[model]\nhidden = 12\nembed = 6\n[batch]\nB = 12\n[schedule]\nmax_projections = 4\neval_every = 2\n[run]\nseed = 3\n";

fn profs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_profs")).args(args).output().expect("run profs")
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.ini");
    std::fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(profs(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(profs(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(profs(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_config_exits_one_with_key_name() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.ini");
    std::fs::write(&p, "[schedule]\nlambda = -1\n").unwrap();
    let out = profs(&["train", "--config", s(&p), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda must be >= 0"));

    std::fs::write(&p, "[schedule]\nM = 4\nrho = 6\n").unwrap();
    let out = profs(&["train", "--config", s(&p), "--print-config"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let first = profs(&["train", "--config", &cfg, "--print-config"]);
    assert_eq!(first.status.code(), Some(0));
    let echoed = dir.path().join("echo.ini");
    std::fs::write(&echoed, &first.stdout).unwrap();
    let second = profs(&["train", "--config", s(&echoed), "--print-config"]);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn train_writes_run_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for run in ["a", "b"] {
        let out = profs(&["train", "--config", &cfg, "--out", s(&dir.path().join(run))]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["config.ini", "metrics.tsv", "steps.tsv", "timing.tsv", "checkpoint.json", "manifest.json"] {
        assert!(dir.path().join("a").join(f).exists(), "{f} missing");
    }
    for f in ["metrics.tsv", "steps.tsv", "checkpoint.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let metrics = std::fs::read_to_string(dir.path().join("a/metrics.tsv")).unwrap();
    assert!(metrics.starts_with("k\tR@1\tR@2\tR@4\tR@8\tnmi\tf1"));
    // evaluated after projections 2 and 4
    assert_eq!(metrics.lines().count(), 1 + 2);
}

#[test]
fn evaluate_appends_and_feasibility_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data.txt");
    assert_eq!(profs(&["generate", "--config", &cfg, "--seed", "77", "--out", s(&data)]).status.code(), Some(0));
    let run = dir.path().join("run");
    assert_eq!(profs(&["train", "--config", &cfg, "--out", s(&run)]).status.code(), Some(0));
    let ck = run.join("checkpoint.json");
    let before = std::fs::read_to_string(run.join("metrics.tsv")).unwrap().lines().count();
    let out = profs(&["evaluate", "--checkpoint", s(&ck), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(0));
    let after = std::fs::read_to_string(run.join("metrics.tsv")).unwrap().lines().count();
    assert_eq!(after, before + 1);

    let out = profs(&["feasibility-check", "--checkpoint", s(&ck), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("full") && text.contains("relaxed"));
}

#[test]
fn missing_checkpoint_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = profs(&["evaluate", "--checkpoint", s(&dir.path().join("nope.json")), "--data", s(&dir.path().join("d"))]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn sweep_writes_one_cell_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("sweep");
    let out = profs(&["sweep", "--config", &cfg, "--out", s(&out_dir), "--lambda", "0,1", "--m", "1,2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("sweep.tsv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4);
    assert!(out_dir.join("lambda=1_M=2/metrics.tsv").exists());
    assert_eq!(profs(&["sweep", "--config", &cfg, "--out", s(&out_dir)]).status.code(), Some(1));
}
