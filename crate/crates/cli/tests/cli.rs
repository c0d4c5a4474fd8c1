use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
harness = "regression"
seeds = [0, 1]

[network]
hidden = [8]
sigma_bias = 1.28
activation = { kind = "elephant", a = 0.08, h = 1.0, d = 8, learnable = false }

[regression]
stream_size = 10
updates_per_sample = 1
test_points = 20
ntk_steps = [5]
"#;

fn elephant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elephant"))
        .args(args)
        .env("ELEPHANT_WORKERS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_prints_one_line_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let out_dir = dir.path().join("out");
    let o = elephant(&["run", &cfg, "--output-dir", out_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.contains("test_mse =")).count(), 2, "{text}");
    let hash_dir = std::fs::read_dir(&out_dir).unwrap().next().unwrap().unwrap().path();
    assert!(hash_dir.join("0").join("report.json").exists());
    assert!(hash_dir.join("1").join("net.bin").exists());

    let resumed = elephant(&["run", &cfg, "--output-dir", out_dir.to_str().unwrap(), "--resume", "--seeds", "1"]);
    assert!(resumed.status.success());
    assert!(stdout(&resumed).contains("seed   1"));
}

#[test]
fn json_configs_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "tiny.json",
        r#"{"harness": "regression", "seeds": [3], "network": {"hidden": [4]},
            "regression": {"stream_size": 5, "test_points": 10, "ntk_steps": []}}"#,
    );
    let o = elephant(&["run", &cfg, "--output-dir", dir.path().join("o").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("seed   3"));
}

#[test]
fn unknown_keys_fail_with_the_key_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "harness = \"regression\"\n[network]\nwidth = 3\n");
    let o = elephant(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("width"), "{}", stderr(&o));
}

#[test]
fn sweep_writes_summary_and_marks_the_best_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let out_dir = dir.path().join("out");
    let args = [
        "sweep",
        &cfg,
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--grid",
        "optimizer.learning_rate=1e-3,1e-2",
        "--grid",
        "network.sigma_bias=0.5",
    ];
    let o = elephant(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.contains(" cell ")).count(), 2, "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with('*')).count(), 1, "{text}");
    let sweeps = out_dir.join("sweeps");
    let id = std::fs::read_dir(&sweeps).unwrap().next().unwrap().unwrap().path();
    let summary = std::fs::read_to_string(id.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let mut resume = args.to_vec();
    resume.push("--resume");
    let again = elephant(&resume);
    assert_eq!(stdout(&again), text);

    let bad = elephant(&["sweep", &cfg, "--grid", "optimizer.nope=1"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("optimizer.nope"));
}

#[test]
fn diag_analyses_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let out_dir = dir.path().join("out");
    assert!(elephant(&["run", &cfg, "--seeds", "0", "--output-dir", out_dir.to_str().unwrap()]).status.success());
    let hash_dir = std::fs::read_dir(&out_dir).unwrap().next().unwrap().unwrap().path();
    let ckpt = hash_dir.join("0").join("net.bin");
    let diag_cfg = write(
        dir.path(),
        "diag.toml",
        "harness = \"diagnostics\"\nseeds = [0]\n[diagnostics]\nntk_anchors = [1.0]\nntk_points = 11\ncovariance_source = \"sine\"\ncovariance_samples = 4\n",
    );
    let o = elephant(&[
        "diag",
        &diag_cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--output-dir",
        dir.path().join("diag").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("covariance_mean_abs_offdiag"));
    assert!(stdout(&o).contains("ntk_anchor0_self"));
}

#[test]
fn fetch_verify_only_reports_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = elephant(&["data", "fetch-mnist", dir.path().to_str().unwrap(), "--verify-only"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train-images-idx3-ubyte"), "{}", stderr(&o));
}

#[test]
fn aborted_runs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "wild.toml",
        &format!("{TINY}\n[optimizer]\nkind = \"sgd\"\nlearning_rate = 100.0\n")
            .replace("ntk_steps = [5]", "ntk_steps = [5]\ndivergence_mse = 1.0"),
    );
    let o = elephant(&["run", &cfg, "--output-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("ABORTED"));
}
