use std::path::Path;
use std::process::{Command, Output};

fn hub(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hub"))
        .args(args)
        .env("HUB_WORKERS", "1")
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hub(dir, args);
    assert!(
        out.status.success(),
        "hub {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn generate_run_plot_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate-tasks", "--count", "2", "--seed", "4", "--out", "suite"]);
    assert!(d.join("suite/manifest.json").exists());
    assert_eq!(std::fs::read_dir(d.join("suite")).unwrap().count(), 3);

    let stdout = ok(
        d,
        &[
            "run",
            "--suite",
            "suite",
            "--profile",
            "smoke",
            "--horizon",
            "60",
            "--alg",
            "ats-specific,naive[20],random-arms",
            "--out",
            "out",
            "--preferences",
            "prefs.csv",
            "--diagnostics",
            "diag.csv",
        ],
    );
    assert!(
        stdout.contains("ATS-specific") && stdout.contains("Naive[20]"),
        "{stdout}"
    );

    let reward = read(d.join("out/discounted_reward.csv"));
    assert!(reward.starts_with("algorithm,step,mean,q25,q75\n"));
    assert_eq!(reward.lines().count(), 1 + 3 * 60);
    assert!(read(d.join("prefs.csv")).starts_with("teacher,item_i,item_j,preferred\n"));
    let diag = read(d.join("diag.csv"));
    assert_eq!(diag.lines().count(), 1 + 2 * 60);

    let manifest: serde_json::Value = serde_json::from_str(&read(d.join("out/manifest.json"))).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(!manifest["seeds"].as_array().unwrap().is_empty());

    for fig in ["fig3a", "fig3b", "fig3c", "fig4a", "fig4b", "fig5a", "fig5b"] {
        std::fs::remove_file(d.join(format!("out/{fig}.svg"))).unwrap();
    }
    ok(d, &["plot", "--dir", "out"]);
    let svg = read(d.join("out/fig3a.svg"));
    assert!(svg.starts_with("<svg") && svg.contains("ATS-specific"));

    let report = ok(d, &["estimate-beta", "--log", "prefs.csv", "--out", "beta.json"]);
    assert!(report.contains("T3"), "{report}");
    let json: serde_json::Value = serde_json::from_str(&read(d.join("beta.json"))).unwrap();
    assert!(json.is_object());
}

#[test]
fn covid_sweep_and_rollouts_write_their_figures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate-tasks", "--domain", "covid", "--out", "covid"]);
    ok(
        d,
        &[
            "run",
            "--suite",
            "covid",
            "--profile",
            "smoke",
            "--horizon",
            "30",
            "--alg",
            "ats-specific,random-arms",
            "--out",
            "run",
        ],
    );
    for f in ["fig7a.svg", "fig7b.svg"] {
        assert!(d.join("run").join(f).exists(), "missing {f}");
    }
    ok(
        d,
        &[
            "sweep-costs",
            "--suite",
            "covid",
            "--profile",
            "smoke",
            "--horizon",
            "20",
            "--multipliers",
            "0,2",
            "--out",
            "sweep",
        ],
    );
    for f in ["fig9a.svg", "fig9b.svg", "fig9c.svg"] {
        assert!(d.join("sweep").join(f).exists(), "missing {f}");
    }
    let q = read(d.join("sweep/query.csv"));
    assert!(q.contains("cost x0,") && q.contains("cost x2,"));
    ok(
        d,
        &[
            "compare-rollouts",
            "--suite",
            "covid",
            "--profile",
            "smoke",
            "--horizon",
            "20",
            "--out",
            "roll",
        ],
    );
    assert!(d.join("roll/fig8.svg").exists());
}

#[test]
fn describe_reports_state_space_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["describe", "--domain", "recommendation"]);
    assert!(out.contains("729000"), "{out}");
    let out = ok(tmp.path(), &["describe", "--domain", "covid"]);
    assert!(out.contains("3375000"), "{out}");
    assert!(out.contains("round trip"), "{out}");
}

#[test]
fn beta_from_sensitivities() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["estimate-beta", "--covid-defaults"]);
    assert!(
        out.contains("0.0941") && out.contains("0.1927") && out.contains("0.3272"),
        "{out}"
    );
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = hub(d, &["run", "--suite", "missing", "--out", "x"]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).contains("panicked"));
    let out = hub(d, &["run", "--suite", "missing", "--profile", "huge", "--out", "x"]);
    assert!(!out.status.success());
    let out = hub(d, &["estimate-beta"]);
    assert!(!out.status.success());
}
