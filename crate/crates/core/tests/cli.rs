use std::fs;
use std::path::Path;
use std::process::Command;

use opsim::cli::cli_main;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("opsim").chain(args.iter().copied());
    let code = cli_main(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_opsim"));
    cmd.env_remove("OPSIM_SEED");
    cmd
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn missing_config_is_io_error() {
    let (code, _, err) = run(&["run", "--config", "/definitely/not/here.cfg"]);
    assert_eq!(code, 2);
    assert!(err.contains("here.cfg"), "{err}");
}

#[test]
fn negative_acuity_is_validation_error() {
    let (code, _, err) = run(&["run", "--fa", "-1"]);
    assert_eq!(code, 1);
    assert!(err.contains("fa"), "{err}");
}

#[test]
fn bad_config_file_names_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "# comment\noperator.nd = 5\noperator.fa = -0.5\n").unwrap();
    let (code, _, err) = run(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("operator.fa") && err.contains('3'), "{err}");
}

#[test]
fn unknown_flag_and_preset_are_validation_errors() {
    assert_eq!(run(&["run", "--bogus"]).0, 1);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["scan", "--preset", "nope", "--out", out]).0, 1);
}

#[test]
fn help_goes_to_stdout() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("scan"));
}

#[test]
fn run_prints_a_row_per_sample() {
    let (code, out, _) = run(&["run", "--seed", "3"]);
    assert_eq!(code, 0);
    let rows = out
        .lines()
        .filter(|l| l.starts_with('s') && l[1..].starts_with(|c: char| c.is_ascii_digit()))
        .count();
    assert_eq!(rows, 5);
    assert!(out.contains("ReachedTE"));
}

#[test]
fn presets_are_listed() {
    let (code, out, _) = run(&["presets"]);
    assert_eq!(code, 0);
    for p in ["fig7-left", "fig7-right", "fig8", "fig9"] {
        assert!(out.contains(p));
    }
}

#[test]
fn scan_writes_bundle_and_is_repeatable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = dir.path().to_str().unwrap();
        let args = ["scan", "--preset", "fig7-left", "--seed", "42", "--replications", "4", "--out", out];
        assert_eq!(run(&args).0, 0);
    }
    let names: Vec<String> = read_all(a.path()).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["fig7-left.svg", "manifest.json", "runs.csv", "summary.csv"]);
    assert_eq!(read_all(a.path()), read_all(b.path()));
    let runs = fs::read_to_string(a.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 3 * 5);
}

#[test]
fn manifest_reproduces_bundle() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let out = first.path().to_str().unwrap();
    let args = ["scan", "--preset", "fig9", "--seed", "9", "--replications", "3", "--out", out];
    assert_eq!(run(&args).0, 0);
    let manifest = first.path().join("manifest.json");
    let args = [
        "scan",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        second.path().to_str().unwrap(),
    ];
    assert_eq!(run(&args).0, 0);
    assert_eq!(read_all(first.path()), read_all(second.path()));
}

#[test]
fn plot_rerenders_saved_csv() {
    let scan = tempfile::tempdir().unwrap();
    let plots = tempfile::tempdir().unwrap();
    let out = scan.path().to_str().unwrap();
    assert_eq!(run(&["scan", "--preset", "fig8", "--replications", "2", "--out", out]).0, 0);
    let csv = scan.path().join("runs.csv");
    let args = [
        "plot",
        "--input",
        csv.to_str().unwrap(),
        "--name",
        "fig8",
        "--out",
        plots.path().to_str().unwrap(),
    ];
    assert_eq!(run(&args).0, 0);
    for (name, body) in read_all(plots.path()) {
        assert_eq!(fs::read(scan.path().join(&name)).unwrap(), body, "{name}");
    }
    let missing = ["plot", "--input", "/no/such/runs.csv"];
    assert_eq!(run(&missing).0, 2);
}

#[test]
fn seed_precedence() {
    let run_with = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = bin();
        cmd.arg("run");
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        if let Some(s) = env {
            cmd.env("OPSIM_SEED", s);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    assert!(run_with(Some("17"), None).starts_with("seed=17 "));
    assert!(run_with(Some("17"), Some("5")).starts_with("seed=5 "));
    assert!(run_with(None, None).starts_with("seed=0 "));
    assert_eq!(run_with(Some("17"), None), run_with(None, Some("17")));

    let bad = bin().arg("run").env("OPSIM_SEED", "abc").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn binary_exit_codes() {
    let io = bin().args(["run", "--config", "/nope.cfg"]).output().unwrap();
    assert_eq!(io.status.code(), Some(2));
    let bad = bin().args(["run", "--nd", "x"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("nd"));
}

#[test]
fn manifest_excludes_other_scan_inputs() {
    let (code, _, err) = run(&["scan", "--manifest", "m.json", "--seed", "3"]);
    assert_eq!(code, 1);
    assert!(err.contains("--seed"), "{err}");
}
