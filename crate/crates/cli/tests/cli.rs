use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rpattn(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rpattn"));
    cmd.args(args).env_remove("RPATTN_THREADS");
    if let Some(t) = threads {
        cmd.env("RPATTN_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn no_arguments_prints_usage() {
    let o = rpattn(&[], None);
    assert_eq!(o.status.code(), Some(2));
    let text = format!("{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(text.contains("Usage"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(rpattn(&["frobnicate"], None).status.code(), Some(2));
}

#[test]
fn flops_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = rpattn(&["flops", "--n", "196", "--m", "49", "--c", "192", "--k", "3", "--out", out], None);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("total=39381888"));
    let csv = fs::read_to_string(dir.path().join("flops.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("196,49,192,3,28901376,5531904,921984,3687936,338688,39381888"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad = config(dir.path(), "bad.json", r#"{"stepz": 3}"#);
    assert_eq!(rpattn(&["train", "--config", &bad, "--out", out], None).status.code(), Some(2));
    let zero_lr = config(dir.path(), "lr.json", r#"{"lr": 0.0}"#);
    assert_eq!(rpattn(&["train", "--config", &zero_lr, "--out", out], None).status.code(), Some(2));
    let variant = config(dir.path(), "v.json", r#"{"variant": "dense"}"#);
    assert_eq!(rpattn(&["train", "--config", &variant, "--out", out], None).status.code(), Some(2));
    let heads = config(dir.path(), "h.json", r#"{"layer": {"channels": 9}}"#);
    assert_eq!(rpattn(&["gradcheck", "--config", &heads, "--out", out], None).status.code(), Some(2));
    assert_eq!(rpattn(&["emcheck", "--config", "/nonexistent.json"], None).status.code(), Some(2));
    assert_eq!(rpattn(&["emcheck", "--out", out], Some("many")).status.code(), Some(2));
}

#[test]
fn gradcheck_exit_code_follows_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let loose = config(dir.path(), "loose.json", r#"{"seeds": [0], "tolerance": 1.0}"#);
    let o = rpattn(&["gradcheck", "--config", &loose, "--out", out], None);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert!(csv.starts_with("seed,parameter,max_rel_error,max_abs_error,skipped,pass\n"));
    assert_eq!(csv.lines().count(), 1 + 15);
    let strict = config(dir.path(), "strict.json", r#"{"seeds": [0], "tolerance": 0.0}"#);
    assert_eq!(rpattn(&["gradcheck", "--config", &strict, "--out", out], None).status.code(), Some(1));
}

#[test]
fn emcheck_and_maps_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = rpattn(&["emcheck", "--out", out], None);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(dir.path().join("emcheck.csv")).unwrap().lines().count(), 21);
    let cfg = config(dir.path(), "maps.json", r#"{"image_size": 16, "num_representatives": 2}"#);
    let maps = dir.path().join("maps");
    let o = rpattn(&["maps", "--config", &cfg, "--out", maps.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0));
    let pgm = fs::read(maps.join("assign_b0_h1_m1.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
    assert_eq!(fs::read_dir(&maps).unwrap().count(), 4);
}

#[test]
fn runs_are_byte_identical_across_thread_caps() {
    let cfg_json = r#"{"steps": 15, "train_samples": 16, "batch_size": 8, "eval_samples": 16, "variants": ["full", "kmeans"]}"#;
    let mut outputs = Vec::new();
    for threads in [None, Some("0"), Some("3")] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), "t.json", cfg_json);
        let out = dir.path().join("o");
        let o = rpattn(&["ablate", "--config", &cfg, "--out", out.to_str().unwrap()], threads);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        let o = rpattn(&["shift", "--out", out.to_str().unwrap()], threads);
        assert_eq!(o.status.code(), Some(0));
        outputs.push(
            ["ablation.csv", "ablate_full.csv", "ablate_kmeans.csv", "shift.csv"]
                .map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn train_writes_curve_and_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "t.json",
        r#"{"steps": 30, "variant": "gather_distribute", "task": {"clusters": 3}}"#,
    );
    let out = dir.path().join("o");
    let o = rpattn(&["train", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("train PASS gather_distribute"));
    let curve = fs::read_to_string(out.join("train_gather_distribute.csv")).unwrap();
    assert_eq!(curve.lines().count(), 31);
    let params = fs::read(out.join("params_gather_distribute.rptn")).unwrap();
    assert_eq!(&params[..4], b"RPTN");
}
