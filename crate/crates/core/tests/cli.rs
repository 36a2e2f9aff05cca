//! End-to-end checks of the `ctxsurvey` binary.

use std::path::Path;
use std::process::{Command, Output};

fn ctxsurvey(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxsurvey"))
        .args(args)
        .output()
        .expect("spawn ctxsurvey")
}

fn ok(args: &[&str]) -> String {
    let out = ctxsurvey(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) {
    ok(&[
        "synth",
        "--out",
        p(dir),
        "--rows",
        "14",
        "--cols",
        "14",
        "--cluster-radius",
        "2",
        "--seed",
        "3",
    ]);
}

#[test]
fn synth_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for f in [
        "site.manifest",
        "site.emb",
        "target.exemplars",
        "synth_report.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let report = std::fs::read_to_string(dir.path().join("synth_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 14 * 14 + 1);
    let out = ok(&["validate", "--site", p(&dir.path().join("site.manifest"))]);
    assert!(out.starts_with("ok: 14x14"));
}

#[test]
fn run_writes_one_row_per_config_trial_step() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = dir.path().join("out");
    ok(&[
        "run",
        "--site",
        p(&dir.path().join("site.manifest")),
        "--exemplars",
        p(&dir.path().join("target.exemplars")),
        "--policy",
        "greedy",
        "--signal",
        "target,target+ec",
        "--trials",
        "3",
        "--steps",
        "10",
        "--out",
        p(&out),
    ]);
    let trials = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    let mut lines = trials.lines();
    assert_eq!(
        lines.next().unwrap(),
        "policy,signal,context_mode,seed,step,normalized_time,cumulative_fraction"
    );
    assert_eq!(lines.count(), 2 * 3 * 10);
    let aggregate = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let mut lines = aggregate.lines();
    assert_eq!(
        lines.next().unwrap(),
        "policy,signal,context_mode,step,normalized_time,mean_fraction,std_fraction,n_trials"
    );
    assert_eq!(lines.count(), 2 * 10);
}

#[test]
fn curves_reproduces_run_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = dir.path().join("out");
    ok(&[
        "run",
        "--site",
        p(&dir.path().join("site.manifest")),
        "--exemplars",
        p(&dir.path().join("target.exemplars")),
        "--policy",
        "lawnmower,greedy,random",
        "--signal",
        "target+ec",
        "--context-mode",
        "running,fixed",
        "--trials",
        "4",
        "--seed",
        "8",
        "--out",
        p(&out),
    ]);
    let again = dir.path().join("again.csv");
    ok(&[
        "curves",
        "--trials",
        p(&out.join("trials.csv")),
        "--out",
        p(&again),
    ]);
    let a = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let b = std::fs::read_to_string(&again).unwrap();
    let sorted = |s: &str| {
        let mut v: Vec<String> = s.lines().map(str::to_string).collect();
        v.sort();
        v
    };
    assert_eq!(sorted(&a), sorted(&b));
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let site = dir.path().join("site.manifest");
    let ex = dir.path().join("target.exemplars");
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec![
            "run",
            "--site",
            p(&site),
            "--exemplars",
            p(&ex),
            "--trials",
            "5",
            "--seed",
            "1",
            "--out",
            p(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        std::fs::read(out.join("trials.csv")).unwrap()
    };
    assert_eq!(run("par", &[]), run("seq", &["--sequential"]));
}

#[test]
fn analyze_prints_fit_and_pairs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let pairs = dir.path().join("pairs.csv");
    let out = ok(&[
        "analyze",
        "--site",
        p(&dir.path().join("site.manifest")),
        "--exemplars",
        p(&dir.path().join("target.exemplars")),
        "--out",
        p(&pairs),
    ]);
    assert!(out.starts_with("slope="), "{out}");
    let csv = std::fs::read_to_string(&pairs).unwrap();
    assert!(csv.starts_with("target,context\n"));
    assert_eq!(csv.lines().count(), 14 * 14 + 1);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let manifest = dir.path().join("site.manifest");
    let ex = dir.path().join("target.exemplars");
    let code = |args: &[&str]| ctxsurvey(args).status.code().unwrap();

    assert_eq!(code(&["run", "--bogus"]), 2);
    assert_eq!(
        code(&[
            "validate",
            "--site",
            p(&dir.path().join("missing.manifest"))
        ]),
        3
    );
    assert_eq!(
        code(&[
            "run",
            "--site",
            p(&manifest),
            "--exemplars",
            p(&ex),
            "--signal",
            "sonar",
            "--out",
            p(&dir.path().join("x")),
        ]),
        11
    );

    let emb = dir.path().join("site.emb");
    let bytes = std::fs::read(&emb).unwrap();
    std::fs::write(&emb, &bytes[..bytes.len() - 1]).unwrap();
    assert_eq!(code(&["validate", "--site", p(&manifest)]), 9);
    std::fs::write(&emb, &bytes).unwrap();

    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(
        &manifest,
        text.replacen("format_version = 1", "format_version = 7", 1),
    )
    .unwrap();
    assert_eq!(code(&["validate", "--site", p(&manifest)]), 5);

    std::fs::write(&manifest, &text).unwrap();

    // A zero patch passes every format check but fails content validation;
    // `validate` lists the violation and exits 10.
    let mut zeroed = bytes.clone();
    zeroed[20..20 + 64 * 4].fill(0);
    std::fs::write(&emb, &zeroed).unwrap();
    let out = ctxsurvey(&["validate", "--site", p(&manifest)]);
    assert_eq!(out.status.code(), Some(10));
    assert!(String::from_utf8_lossy(&out.stdout).contains("(0,0)"));
}
