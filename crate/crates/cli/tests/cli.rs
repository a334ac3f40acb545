use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn medshift(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_medshift"));
    cmd.args(args).env("RUST_LOG", "error");
    if let Some(t) = threads {
        cmd.env("MEDSHIFT_THREADS", t);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = medshift(args, None);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn simulate_dataset_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--n", "100", "--seed", "1", "--out-dir", s(&a)]);
    ok(&["simulate", "--n", "100", "--seed", "1", "--out-dir", s(&b)]);
    let x = std::fs::read(a.join("data.csv")).unwrap();
    assert_eq!(x, std::fs::read(b.join("data.csv")).unwrap());
    let rows = csv_rows(&a.join("data.csv"));
    assert_eq!(rows[0], ["W1", "W2", "W3", "A", "L", "Z", "Y"]);
    assert_eq!(rows.len(), 101);
    let c = dir.path().join("c");
    ok(&["simulate", "--n", "100", "--seed", "2", "--out-dir", s(&c)]);
    assert_ne!(x, std::fs::read(c.join("data.csv")).unwrap());
}

#[test]
fn simulate_then_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["simulate", "--n", "600", "--seed", "3", "--out-dir", s(p)]);
    let data = p.join("data.csv");
    let out = p.join("est");
    ok(&["estimate", "--input", s(&data), "--delta-grid", "0.5,1,2", "--write-eif", "--out-dir", s(&out)]);
    let rows = csv_rows(&out.join("estimates.csv"));
    assert_eq!(rows[0][0], "estimator");
    assert_eq!(rows.len(), 1 + 6);
    let col = |name: &str| rows[0].iter().position(|h| h == name).unwrap();
    for r in &rows[1..] {
        if r[col("delta")] == "1" {
            let d: f64 = r[col("psi_d")].parse().unwrap();
            let i: f64 = r[col("psi_i")].parse().unwrap();
            assert!((d + i).abs() < 1e-12, "{r:?}");
        }
        if r[col("estimator")] == "tmle" {
            assert_eq!(r[col("converged")], "true");
        }
    }
    let json: Value = serde_json::from_str(&std::fs::read_to_string(out.join("estimates.json")).unwrap()).unwrap();
    assert_eq!(json["estimates"].as_array().unwrap().len(), 6);
    assert_eq!(json["provenance"]["command"], "estimate");
    assert!(out.join("eif_0_onestep.csv").exists());

    // Same inputs, same bytes.
    let again = p.join("again");
    ok(&["estimate", "--input", s(&data), "--delta-grid", "0.5,1,2", "--write-eif", "--out-dir", s(&again)]);
    assert_eq!(std::fs::read(out.join("estimates.csv")).unwrap(), std::fs::read(again.join("estimates.csv")).unwrap());
}

#[test]
fn estimate_reads_config_and_grid_syntax() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["simulate", "--n", "300", "--seed", "5", "--out-dir", s(p)]);
    let cfg = p.join("cfg.json");
    std::fs::write(
        &cfg,
        format!(r#"{{"input": "{}", "intervention": "exp_tilt", "estimator": "onestep", "folds": 3}}"#, s(&p.join("data.csv"))),
    )
    .unwrap();
    let out = p.join("o");
    ok(&["estimate", "--config", s(&cfg), "--delta-grid", "-1:1:0.5", "--out-dir", s(&out)]);
    let rows = csv_rows(&out.join("estimates.csv"));
    let deltas: Vec<&str> = rows[1..].iter().map(|r| r[2].as_str()).collect();
    assert_eq!(deltas, ["-1", "-0.5", "0", "0.5", "1"]);
    assert!(rows[1..].iter().all(|r| r[0] == "onestep"));
}

#[test]
fn missing_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.csv");
    std::fs::write(&f, "W1,A,L,Y\n0,1,0,1\n1,0,1,0\n").unwrap();
    let out = medshift(&["estimate", "--input", s(&f), "--delta", "2", "--out-dir", s(dir.path())], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains('Z'), "{}", stderr(&out));
}

#[test]
fn invalid_arm_lists_the_valid_ones() {
    let out = medshift(&["simulate", "--arms", "none,q", "--reps", "2"], None);
    assert_eq!(out.status.code(), Some(1));
    let e = stderr(&out);
    assert!(e.contains("none, m, g, e, b, d"), "{e}");
}

#[test]
fn targeted_estimator_refuses_discrete_shift() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["simulate", "--n", "200", "--seed", "1", "--law", "shift", "--out-dir", s(p)]);
    let out = medshift(
        &[
            "estimate",
            "--input",
            s(&p.join("data.csv")),
            "--intervention",
            "discrete_shift",
            "--delta",
            "1",
            "--estimator",
            "tmle",
            "--out-dir",
            s(p),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!p.join("estimates.csv").exists());
    let out = medshift(&["simulate", "--law", "shift", "--intervention", "discrete_shift", "--delta", "1", "--estimator", "tmle"], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_exits_one() {
    assert_eq!(medshift(&["simulate", "--bogus"], None).status.code(), Some(1));
    assert_eq!(medshift(&["--help"], None).status.code(), Some(0));
}

#[test]
fn oracle_truths() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["oracle", "--intervention", "identity", "--out-dir", s(p)]);
    let j: Value = serde_json::from_str(&std::fs::read_to_string(p.join("oracle.json")).unwrap()).unwrap();
    let t = &j["truth"][0];
    assert!((t["psi_d"].as_f64().unwrap() + t["psi_i"].as_f64().unwrap()).abs() < 1e-15);

    ok(&["oracle", "--delta", "2", "--robustness", "1", "--out-dir", s(p)]);
    let j: Value = serde_json::from_str(&std::fs::read_to_string(p.join("oracle.json")).unwrap()).unwrap();
    let t = &j["truth"][0];
    let close = |k: &str, v: f64, tol: f64| assert!((t[k].as_f64().unwrap() - v).abs() < tol, "{k}: {}", t[k]);
    close("theta1_null", 8.074506846030483e-1, 1e-12);
    close("theta1_delta", 8.036510748445094e-1, 1e-12);
    close("theta2_delta", 8.037735250590591e-1, 1e-12);
    close("var_d", 4.009299522681731e-3, 1e-10);
    close("var_i", 7.489915809444920e-4, 1e-10);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(p.join("robustness.json")).unwrap()).unwrap();
    assert_eq!(r["checks"].as_array().unwrap().len(), 1);
    assert_eq!(r["checks"][0]["pass"], true);

    let bad = medshift(&["oracle", "--delta", "2", "--robustness", "5", "--out-dir", s(p)], None);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn monte_carlo_output_ignores_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = medshift(
            &[
                "simulate",
                "--sizes",
                "200",
                "--reps",
                "6",
                "--arms",
                "none,g",
                "--seed",
                "11",
                "--out-dir",
                s(&out),
            ],
            Some(threads),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        (std::fs::read(out.join("metrics.csv")).unwrap(), std::fs::read(out.join("metrics.json")).unwrap())
    };
    let one = run("t1", "1");
    let four = run("t4", "4");
    assert_eq!(one, four);
    let text = String::from_utf8(one.0).unwrap();
    assert!(text.lines().any(|l| l.starts_with("onestep,none,")));
    assert!(text.lines().any(|l| l.starts_with("tmle,g,")));
}
