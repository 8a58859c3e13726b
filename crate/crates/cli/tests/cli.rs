use std::fs;
use std::path::Path;
use std::process::Command;

use fedhist_cli::report::{parse_metrics_csv, CurveSummary};
use fedhist_cli::Summary;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedhist"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("cfg.toml");
    fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = "n = 6\nk = 2\nrounds = 10\nseed = 3\nhistory = 2\nhidden = 8\n\n[data]\nclasses = 3\ndim = 4\nper_class = 30\n";

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn run_writes_one_row_per_round_and_consistent_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("[data]", "targets = [0.4, 0.99]\n\n[data]"));
    let out = dir.path().join("out");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    let rows = parse_metrics_csv(&csv).unwrap();
    let summary: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();

    // The curve part of the summary is reproducible from the CSV alone.
    assert_eq!(CurveSummary::from_rows(&rows, &[0.4, 0.99]).unwrap(), summary.curve);
    assert_eq!(summary.clients.len(), 6);
    assert_eq!(summary.n_over_2k, 1.5);
    let submissions: usize = summary.clients.iter().map(|c| c.submissions).sum();
    assert_eq!(submissions, 20);
}

#[test]
fn seed_flag_beats_file_and_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("o");
    run_ok(&[
        "run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--set", "seed=5", "--seed", "7",
    ]);
    let summary: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.seed, 7);
}

#[test]
fn repeated_runs_are_byte_identical_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("k = 2", "k = 3"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--workers", "3"]);
    for f in ["metrics.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn compare_self_speedup_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("rounds = 10", "rounds = 25"));
    let out = dir.path().join("c");
    run_ok(&[
        "compare", "--config", cfg.to_str().unwrap(), "--strategies", "fedavg", "--seeds", "1,2", "--target", "0.1",
        "--out", out.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "fedavg");
    assert_eq!(row[1], "2");
    assert_eq!(row[6], "1", "{csv}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 2);
}

#[test]
fn compare_jobs_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, jobs) in [(&a, "1"), (&b, "4")] {
        run_ok(&[
            "compare", "--config", cfg.to_str().unwrap(), "--strategies", "fedhist,twafl,dynsgd", "--seeds", "1,2",
            "--jobs", jobs, "--out", out.to_str().unwrap(),
        ]);
    }
    for f in ["comparison.csv", "comparison.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_data_output_feeds_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("blobs.csv");
    run_ok(&[
        "gen-data", "--classes", "3", "--dim", "4", "--per-class", "20", "--seed", "9", "--out", data.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().next().unwrap(), "f1,f2,f3,f4,label");
    assert_eq!(text.lines().count(), 61);

    let cfg = write_config(dir.path(), "n = 4\nk = 2\nrounds = 5\nhidden = 0\n\n[data]\ncsv = \"blobs.csv\"\n");
    let out = dir.path().join("o");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 6);
}

#[test]
fn errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("n = 3\nk = 4\n", "`k`"),
        ("gamma = 2.0\n", "gamma"),
        ("bogus = 1\n", "bogus"),
        ("[data]\ncsv = \"absent.csv\"\n", "data.csv"),
        ("strategy = \"fedsgd\"\n", "fedsgd"),
    ];
    for (body, needle) in cases {
        let cfg = write_config(dir.path(), body);
        let out = bin().args(["run", "--config", cfg.to_str().unwrap(), "--out"]).arg(dir.path().join("x")).output().unwrap();
        assert!(!out.status.success(), "{body}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{body}: {err}");
    }

    // unwritable output location: a regular file where the directory should be
    let cfg = write_config(dir.path(), SMALL);
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let out = bin().args(["run", "--config", cfg.to_str().unwrap(), "--out"]).arg(&blocker).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("blocker"));
}
