use std::process::Command;

fn relfeed(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_relfeed"))
        .args(args)
        .env_remove("RELFEED_NEWSGROUPS")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "relfeed {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_simulate_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("tree");
    let results = dir.path().join("results.csv");
    let plot = dir.path().join("plot.csv");
    let tree_s = tree.to_str().unwrap();

    relfeed(&["synth-corpus", "--out", tree_s, "--groups", "3", "--per-group", "40"]);
    assert_eq!(std::fs::read_dir(&tree).unwrap().count(), 3);

    let stdout = relfeed(&[
        "simulate",
        "--dataset-path",
        tree_s,
        "--groups",
        "3",
        "--per-group",
        "40",
        "--model",
        "ard,lg",
        "--scenario",
        "b",
        "--sessions",
        "2",
        "--steps",
        "3",
        "--list-size",
        "10",
        "--out",
        results.to_str().unwrap(),
    ]);
    assert!(stdout.contains("ARD") && stdout.contains("LG"), "{stdout}");
    let csv = std::fs::read_to_string(&results).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,scenario,step,mean_f1,stderr_f1,mean_step_seconds");
    assert_eq!(lines.len(), 1 + 2 * 3);

    relfeed(&[
        "plotdata",
        "--input",
        results.to_str().unwrap(),
        "--metric",
        "seconds",
        "--out",
        plot.to_str().unwrap(),
    ]);
    let plot = std::fs::read_to_string(&plot).unwrap();
    assert_eq!(plot.lines().next().unwrap(), "step,ARD/B,LG/B");
    assert_eq!(plot.lines().count(), 4);
}

#[test]
fn rejects_unknown_model() {
    let out = Command::new(env!("CARGO_BIN_EXE_relfeed"))
        .args(["simulate", "--model", "svm", "--sessions", "1", "--steps", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model"));
}
