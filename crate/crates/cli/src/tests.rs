use std::path::{Path, PathBuf};

use clap::Parser;

use crate::{exit_code, run, Cli};

const TINY: &str = r#"
schema_version = 1
seed = 7

[scenario.grid]
nx = 11
ny = 6
length_x = 1020.0
length_y = 1020.0
dt = 0.5
n_steps = 20
specific_storage = 1e-4

[sampling]
n_data = 40
n_ic = 10
n_bc = 10
n_pde = 60
n_ec = 20
n_ek = 20
train_window = 5.0

[model]
hidden_layers = 2
width = 6
activation = "tanh"

[trainer]
mode = "dual"
weights = [1.0, 1.0, 1.0, 100.0, 1.0, 1.0]
max_epochs = 3
step_size = 1.25

[trainer.adam]
learning_rate = 0.001
beta1 = 0.9
beta2 = 0.999
epsilon = 1e-8

[trainer.stopping]
rule = "fixed"
"#;

struct Output {
    code: u8,
    stderr: String,
}

fn tgnn(args: &[&str]) -> Output {
    let cli = match Cli::try_parse_from(std::iter::once("tgnn").chain(args.iter().copied())) {
        Ok(cli) => cli,
        Err(e) => {
            return Output {
                code: 2,
                stderr: e.to_string(),
            }
        }
    };
    match run(cli) {
        Ok(_) => Output {
            code: 0,
            stderr: String::new(),
        },
        Err(e) => Output {
            code: exit_code(&e),
            stderr: format!("error: {e}"),
        },
    }
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_ok(args: &[&str]) -> Output {
    let out = tgnn(args);
    assert_eq!(out.code, 0, "{args:?}: {}", out.stderr);
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn field_and_sim_rerun_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&["--config", s(&cfg), "--seed", "7", "--out", s(out), "sim"]);
    }
    for f in ["field.txt", "solution.txt", "solution.csv", "seeds.txt"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    // The resolved configs differ only in where they were written.
    let strip = |p: &Path| {
        read(p.join("config.resolved.toml"))
            .lines()
            .filter(|l| !l.starts_with("output_dir"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
    // The resolved config alone reproduces the run.
    let c = dir.path().join("c");
    run_ok(&["--config", s(&a.join("config.resolved.toml")), "--out", s(&c), "sim"]);
    assert_eq!(read(a.join("solution.txt")), read(c.join("solution.txt")));
}

#[test]
fn field_only_writes_no_solution() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    run_ok(&["--seed", "7", "--out", s(&out), "field"]);
    assert!(out.join("field.txt").exists() && !out.join("solution.txt").exists());
    assert!(read(out.join("manifest.txt")).contains("field.txt"));
}

#[test]
fn zero_variance_run_approaches_the_linear_profile() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("dt = 0.5\nn_steps = 20", "dt = 10.0\nn_steps = 100").replace(
        "[sampling]",
        "[scenario.covariance]\nlength_x = 1020.0\nlength_y = 1020.0\ncorrelation_length = 408.0\nvariance = 0.0\nmean = 0.0\n\n[sampling]",
    );
    let cfg = write_config(dir.path(), "h.toml", &text);
    let out = dir.path().join("h");
    run_ok(&["--config", s(&cfg), "--out", s(&out), "sim"]);
    let csv = read(out.join("solution.csv"));
    let mut checked = 0;
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        if v[0] == 1000.0 {
            assert!((v[3] - (1.0 - v[1] / 1020.0)).abs() < 1e-6, "{line}");
            checked += 1;
        }
    }
    assert_eq!(checked, 66);
}

#[test]
fn missing_grid_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &TINY.replace("nx = 11\n", ""));
    let out = tgnn(&["--config", s(&cfg), "--out", s(&dir.path().join("o")), "sim"]);
    assert_eq!(out.code, 2);
    let err = &out.stderr;
    assert!(err.contains("nx"), "{err}");
}

#[test]
fn unknown_key_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &TINY.replace("width = 6", "width = 6\ndepth = 2"));
    let out = tgnn(&["--config", s(&cfg), "--out", s(&dir.path().join("o")), "field"]);
    assert_eq!(out.code, 2);
    let err = &out.stderr;
    assert!(err.contains("depth") && err.contains("line 26"), "{err}");
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "lr.toml",
        &TINY.replace("learning_rate = 0.001", "learning_rate = 1e300"),
    );
    let out = tgnn(&["--config", s(&cfg), "--out", s(&dir.path().join("o")), "train"]);
    assert_eq!(out.code, 3, "{}", out.stderr);
}

#[test]
fn outputs_are_write_once() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w");
    run_ok(&["--seed", "3", "--out", s(&out), "field"]);
    let before = read(out.join("field.txt"));
    let again = tgnn(&["--seed", "4", "--out", s(&out), "field"]);
    assert!(again.code != 0);
    assert_eq!(read(out.join("field.txt")), before);
}

#[test]
fn train_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", TINY);
    let t = dir.path().join("t");
    run_ok(&["--config", s(&cfg), "--out", s(&t), "train"]);
    assert_eq!(read(t.join("log.csv")).lines().count(), 4);
    let e = dir.path().join("e");
    run_ok(&[
        "--config",
        s(&cfg),
        "--out",
        s(&e),
        "eval",
        "--checkpoint",
        s(&t.join("checkpoint.txt")),
        "--solution",
        s(&t.join("solution.txt")),
    ]);
    assert_eq!(read(t.join("eval.csv")), read(e.join("eval.csv")));
}

#[test]
fn compare_smoke_with_one_epoch_and_zero_noise_suite_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &TINY.replace("max_epochs = 3", "max_epochs = 1"));
    let c = dir.path().join("c");
    run_ok(&["--config", s(&cfg), "--out", s(&c), "compare"]);
    let table = rows(&read(c.join("compare.csv")));
    assert_eq!(table.len(), 3);
    let methods: Vec<&str> = table.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(methods, ["TgNN-LD", "TgNN", "TgNN-1"]);
    for r in &table {
        for k in [6, 7, 8] {
            assert!(r[k].parse::<f64>().unwrap().is_finite());
        }
    }
    assert!(c.join("seed_7/TgNN/log.csv").exists());
    assert_eq!(rows(&read(c.join("timing_compare.csv"))).len(), 3);

    let n = dir.path().join("n");
    run_ok(&["--config", s(&cfg), "--out", s(&n), "noise-suite", "--levels", "0"]);
    assert_eq!(read(n.join("noise.csv")), read(c.join("compare.csv")));
}

#[test]
fn multi_seed_compare_emits_medians() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("max_epochs = 3", "max_epochs = 1")
        + "\n[experiments]\nseeds = [1, 2, 3]\nsweep_epochs = [1]\nreplay_multipliers = [1.0, 1.0, 1.0]\n";
    let cfg = write_config(dir.path(), "m.toml", &text);
    let out = dir.path().join("m");
    run_ok(&["--config", s(&cfg), "--out", s(&out), "--threads", "2", "compare"]);
    assert_eq!(rows(&read(out.join("compare.csv"))).len(), 9);
    let summary = rows(&read(out.join("compare_summary.csv")));
    assert_eq!(summary.len(), 3);
    assert!(summary.iter().all(|r| r[2] == "3"));
}

#[test]
fn noise_suite_has_nine_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &TINY.replace("max_epochs = 3", "max_epochs = 1"));
    let out = dir.path().join("n");
    run_ok(&["--config", s(&cfg), "--out", s(&out), "noise-suite"]);
    let table = rows(&read(out.join("noise.csv")));
    assert_eq!(table.len(), 9);
    // Noise changes the data, so the fingerprints differ across levels.
    assert_ne!(table[0][13], table[3][13]);
}

#[test]
fn sweep_rows_follow_the_epoch_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", TINY);
    let out = dir.path().join("s");
    run_ok(&["--config", s(&cfg), "--out", s(&out), "sweep-epochs", "--epochs", "1,4"]);
    let table = rows(&read(out.join("sweep.csv")));
    assert_eq!(table.iter().map(|r| r[4].as_str()).collect::<Vec<_>>(), ["1", "4"]);
    assert_eq!(table[0][13], table[1][13]);
}

#[test]
fn replay_pairs_share_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", TINY);
    let out = dir.path().join("r");
    run_ok(&["--config", s(&cfg), "--out", s(&out), "replay-multipliers", "--lambda", "0,0,0"]);
    let table = rows(&read(out.join("replay.csv")));
    assert_eq!(table.len(), 2);
    assert_eq!(table[0][2], "fixed-multipliers");
    assert_eq!(table[0][13], table[1][13]);
    assert_eq!(&table[0][10..13], ["0.0000000000000000e0"; 3]);
}
