use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const FAST: &str = "grid_points = 40\ntree_max_iters = 100\n";

fn stochctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochctl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = stochctl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    stochctl(args).status.code().unwrap()
}

fn fast_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("fast.txt");
    fs::write(&p, format!("{FAST}{extra}")).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path and contents of every CSV below `dir`, sorted.
fn csv_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn manifest(dir: &Path) -> String {
    fs::read_to_string(dir.join("manifest.txt")).unwrap()
}

#[test]
fn gen_writes_scenarios_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("gen");
    ok(&["gen", "--n-scenarios", "7", "--out", s(&out), "--quiet"]);
    let train = fs::read_to_string(out.join("train.csv")).unwrap();
    let rows = train.lines().filter(|l| !l.starts_with('#')).count() - 1;
    // stage 0 carries the initial state, stages 1..=24 inflow and demand
    assert_eq!(rows, 7 * (1 + 24 * 2));
    assert!(train.starts_with('#'));
    let m = manifest(&out);
    assert!(m.contains("status = complete"));
    assert!(m.contains("output = train.csv") && m.contains("output = test.csv"));
    assert!(m.contains("seed = 1"));
}

#[test]
fn gen_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["gen", "--n-scenarios", "9", "--seed", "5", "--out", s(&a)]);
    ok(&["gen", "--n-scenarios", "9", "--seed", "5", "--out", s(&b)]);
    assert_eq!(csv_files(&a), csv_files(&b));
    let c = tmp.path().join("c");
    ok(&["gen", "--n-scenarios", "9", "--seed", "6", "--out", s(&c)]);
    assert_ne!(csv_files(&a), csv_files(&c));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = fast_config(tmp.path(), "");
    for method in ["sdp", "particle", "tree"] {
        let mut runs = Vec::new();
        for workers in ["1", "4", "4"] {
            let out = tmp.path().join(format!("{method}-{workers}-{}", runs.len()));
            ok(&[
                "solve", "--method", method, "--config", s(&cfg), "--n-scenarios", "40", "--max-iters", "15",
                "--workers", workers, "--out", s(&out), "--quiet",
            ]);
            runs.push(csv_files(&out));
        }
        assert!(!runs[0].is_empty());
        assert_eq!(runs[0], runs[1], "{method}: 1 vs 4 workers");
        assert_eq!(runs[1], runs[2], "{method}: repeat");
    }
}

#[test]
fn zero_iterations_keep_the_initial_policy() {
    let tmp = TempDir::new().unwrap();
    for (init, value) in [("lower", 0.0), ("midpoint", 0.5)] {
        let cfg = fast_config(tmp.path(), &format!("initial_control = {init}\n"));
        let out = tmp.path().join(init);
        ok(&[
            "solve", "--method", "particle", "--config", s(&cfg), "--n-scenarios", "6", "--max-iters", "0",
            "--out", s(&out), "--quiet",
        ]);
        for t in [0, 11, 23] {
            let text = fs::read_to_string(out.join(format!("scatter/stage_{t:03}.csv"))).unwrap();
            for line in text.lines().skip_while(|l| l.starts_with('#')).skip(1) {
                let control: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
                assert_eq!(control, value, "{init} stage {t}");
            }
        }
        let log = fs::read_to_string(out.join("iterations.csv")).unwrap();
        assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 1);
    }
}

#[test]
fn tree_scatter_has_two_root_points() {
    let tmp = TempDir::new().unwrap();
    let cfg = fast_config(tmp.path(), "");
    let out = tmp.path().join("tree");
    ok(&[
        "solve", "--method", "tree", "--config", s(&cfg), "--n-scenarios", "20", "--out", s(&out), "--quiet",
    ]);
    let text = fs::read_to_string(out.join("scatter/stage_000.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2);
    assert!(out.join("tree.csv").exists());
}

#[test]
fn single_scenario_pipeline_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = fast_config(tmp.path(), "");
    let gen = tmp.path().join("gen");
    ok(&["gen", "--n-scenarios", "1", "--out", s(&gen), "--quiet"]);
    let mut dirs = Vec::new();
    for method in ["sdp", "particle", "tree"] {
        let out = tmp.path().join(method);
        ok(&[
            "solve", "--method", method, "--config", s(&cfg), "--scenarios", s(&gen), "--max-iters", "5",
            "--out", s(&out), "--quiet",
        ]);
        dirs.push(out);
    }
    let cmp = tmp.path().join("cmp");
    ok(&["compare", "--runs", s(&dirs[0]), s(&dirs[1]), s(&dirs[2]), "--out", s(&cmp), "--quiet"]);
    assert!(cmp.join("summary.csv").exists());
}

#[test]
fn sdp_against_itself_is_exact() {
    let tmp = TempDir::new().unwrap();
    let cfg = fast_config(tmp.path(), "");
    let sdp = tmp.path().join("sdp");
    ok(&[
        "solve", "--method", "sdp", "--config", s(&cfg), "--n-scenarios", "15", "--out", s(&sdp), "--quiet",
    ]);
    let bellman = fs::read_to_string(sdp.join("bellman.csv")).unwrap();
    assert_eq!(bellman.lines().filter(|l| !l.starts_with('#')).count(), 1 + 25 * 40);
    let cmp = tmp.path().join("cmp");
    let stdout = ok(&["compare", "--runs", s(&sdp), "--out", s(&cmp)]);
    assert!(stdout.contains("gap   +0.000%"), "{stdout}");
    let report = fs::read_to_string(cmp.join("compare_sdp.csv")).unwrap();
    for line in report.lines().skip_while(|l| l.starts_with('#')).skip(1) {
        let rms: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(rms, 0.0);
    }
}

#[test]
fn compare_rejects_different_test_sets_and_missing_reference() {
    let tmp = TempDir::new().unwrap();
    let cfg = fast_config(tmp.path(), "");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        ok(&[
            "solve", "--method", "sdp", "--config", s(&cfg), "--n-scenarios", "5", "--seed", seed, "--out", s(out),
            "--quiet",
        ]);
    }
    assert_eq!(code(&["compare", "--runs", s(&a), s(&b), "--out", s(&tmp.path().join("c1"))]), 1);
    let p = tmp.path().join("p");
    ok(&[
        "solve", "--method", "particle", "--config", s(&cfg), "--n-scenarios", "5", "--max-iters", "1", "--out",
        s(&p), "--quiet",
    ]);
    assert_eq!(code(&["compare", "--runs", s(&p), "--out", s(&tmp.path().join("c2"))]), 1);
    assert_eq!(code(&["compare", "--runs", s(&tmp.path().join("nope")), "--out", s(&tmp.path().join("c3"))]), 3);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&["solve", "--method", "sdp", "--bogus", "--out", s(&out)]), 1);
    assert_eq!(code(&["solve", "--method", "simplex", "--out", s(&out)]), 1);
    let bad_key = tmp.path().join("bad.txt");
    fs::write(&bad_key, "no_such_key = 3\n").unwrap();
    assert_eq!(code(&["gen", "--config", s(&bad_key), "--out", s(&out)]), 1);
    assert_eq!(code(&["gen", "--config", s(&tmp.path().join("missing.txt")), "--out", s(&out)]), 3);
    assert_eq!(
        code(&["solve", "--method", "sdp", "--scenarios", s(&tmp.path().join("none")), "--out", s(&out)]),
        3
    );
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn numerical_failure_removes_partial_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = fast_config(tmp.path(), "final_weight = 1e308\n");
    let out = tmp.path().join("inf");
    let status = code(&[
        "solve", "--method", "particle", "--config", s(&cfg), "--n-scenarios", "4", "--max-iters", "3", "--out",
        s(&out), "--quiet",
    ]);
    assert_eq!(status, 2);
    let left: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(left, vec!["manifest.txt".to_string()]);
    let m = manifest(&out);
    assert!(m.contains("status = failed") && !m.contains("output ="));
}

#[test]
fn resolved_config_replays_the_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = fast_config(tmp.path(), "particle_step = 0.003\n");
    let a = tmp.path().join("a");
    ok(&[
        "solve", "--method", "particle", "--config", s(&cfg), "--n-scenarios", "10", "--max-iters", "4", "--out",
        s(&a), "--quiet",
    ]);
    assert!(fs::read_to_string(a.join("config.txt")).unwrap().contains("particle_step = 0.003"));
    let b = tmp.path().join("b");
    ok(&[
        "solve", "--method", "particle", "--config", s(&a.join("config.txt")), "--n-scenarios", "10", "--out",
        s(&b), "--quiet",
    ]);
    assert_eq!(csv_files(&a), csv_files(&b));
}
