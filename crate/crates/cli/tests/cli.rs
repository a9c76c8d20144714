use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phi4_core::gaussian::z_minus_zl_oracle;
use phi4_core::noise::compact_bump;
use phi4_core::TorusGrid;
use serde_json::Value;

fn phi4(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phi4"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env_remove("PHI4_SEED")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run_config(command: &str, text: &str, extra: &[&str]) -> (tempfile::TempDir, Output) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("out");
    let mut args = vec![command, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = phi4(&args, &out);
    (tmp, o)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
[model]
lambda = 1.0
mu = 0.0

[grid]
half_length = 1.0
n = 8

[run]
dt = 0.01
horizon = 0.1
snapshot_every = 5
"#;

#[test]
fn simulate_counts_steps_and_snapshots() {
    let (tmp, o) = run_config("simulate", SMALL, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    let csv = fs::read_to_string(out.join("observables.csv")).unwrap();
    let steps: Vec<usize> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(steps, (0..=10).collect::<Vec<_>>());
    let mut snaps: Vec<String> = fs::read_dir(out.join("snapshots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    snaps.sort();
    assert_eq!(snaps, ["r000_s000005.bin", "r000_s000010.bin"]);
    let snap = fs::read(out.join("snapshots/r000_s000010.bin")).unwrap();
    let field = phi4_core::grid::read_snapshot(&snap[..]).unwrap();
    assert_eq!(field.grid().n(), 8);
    assert!(out.join("manifest.json").exists());
    assert!(!out.join("PARTIAL").exists());
}

#[test]
fn negative_lambda_is_a_config_error() {
    let (_tmp, o) = run_config(
        "simulate",
        &SMALL.replace("lambda = 1.0", "lambda = -1.0"),
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("lambda must be positive"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn unknown_keys_report_their_path() {
    let (_tmp, o) = run_config("simulate", &SMALL.replace("horizon", "horizn"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run"), "{}", stderr(&o));
}

#[test]
fn rerun_reproduces_output_hashes() {
    let text = SMALL.replace("[run]", "[run]\nreplicas = 3");
    let (a, oa) = run_config("simulate", &text, &["--seed", "11"]);
    let (b, ob) = run_config("simulate", &text, &["--seed", "11"]);
    assert!(oa.status.success() && ob.status.success());
    let ha = fs::read_to_string(a.path().join("out/outputs.sha256")).unwrap();
    let hb = fs::read_to_string(b.path().join("out/outputs.sha256")).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(ha.lines().count(), 1 + 3 * 2);
    let (c, _) = run_config("simulate", &text, &["--seed", "12"]);
    assert_ne!(
        ha,
        fs::read_to_string(c.path().join("out/outputs.sha256")).unwrap()
    );
}

#[test]
fn seed_flag_beats_environment_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("[run]", "[run]\nseed = 5"));
    let manifest = |args: &[&str], env: Option<&str>| -> Value {
        let out = tmp.path().join("out");
        let mut c = Command::new(env!("CARGO_BIN_EXE_phi4"));
        c.args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .args(args);
        match env {
            Some(v) => c.env("PHI4_SEED", v),
            None => c.env_remove("PHI4_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
    };
    let m = manifest(&[], None);
    assert_eq!(
        (
            m["seed_policy"]["seed"].as_u64(),
            m["seed_policy"]["source"].as_str()
        ),
        (Some(5), Some("config"))
    );
    let m = manifest(&[], Some("7"));
    assert_eq!(
        (
            m["seed_policy"]["seed"].as_u64(),
            m["seed_policy"]["source"].as_str()
        ),
        (Some(7), Some("env"))
    );
    let m = manifest(&["--seed", "9"], Some("7"));
    assert_eq!(
        (
            m["seed_policy"]["seed"].as_u64(),
            m["seed_policy"]["source"].as_str()
        ),
        (Some(9), Some("flag"))
    );
}

const PROPAGATION: &str = r#"
[model]
lambda = LAMBDA
mu = 0.0

[grid]
half_length = 4.0
n = 32

[run]
dt = 0.01
replicas = 400

[[tests]]
kind = "compact"
radius = 0.8

[propagation]
sub_half_lengths = SUBS
times = [0.25, 0.5]
"#;

#[test]
fn master_volume_gives_an_all_zero_table() {
    let text = PROPAGATION
        .replace("LAMBDA", "1.0")
        .replace("SUBS", "[4.0]");
    let (tmp, o) = run_config("propagation", &text, &["--replicas", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/propagation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(
            r.split(',')
                .skip(3)
                .all(|v| v.parse::<f64>().unwrap() == 0.0),
            "{r}"
        );
    }
    let fit: Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("out/propagation_fit.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(fit["monotone_in_volume"], Value::Bool(true));
}

/// With λ = μ = 0 and φ0 = 0 the remainder vanishes, so the pathwise second
/// moment is the OU variance under the restriction coupling.
#[test]
fn linear_propagation_matches_ou_oracle() {
    let text = PROPAGATION
        .replace("LAMBDA", "0.0")
        .replace("SUBS", "[2.0, 4.0]");
    let (tmp, o) = run_config("propagation", &text, &["--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let g = TorusGrid::new(4.0, 32).unwrap();
    let f = compact_bump(&g, [0.0, 0.0], 0.8, [0.0, 0.0]);
    let csv = fs::read_to_string(tmp.path().join("out/propagation.csv")).unwrap();
    let mut checked = 0;
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let (l, t, sq, se) = (v[0], v[1], v[7], v[8]);
        let oracle = z_minus_zl_oracle(&f, l, t).unwrap();
        if l == 4.0 {
            assert_eq!(sq, 0.0);
            continue;
        }
        assert!(oracle > 0.0);
        assert!(
            (sq - oracle).abs() < 4.0 * se,
            "L={l} t={t}: {sq} ± {se} vs {oracle}"
        );
        checked += 1;
    }
    assert_eq!(checked, 2);
}

const ENTROPY: &str = r#"
[model]
lambda = LAMBDA
mu = MU

[grid]
half_length = 1.0
n = 8

[run]
dt = 0.01
replicas = 1000

[entropy]
t = 0.5
gff_samples = 500
"#;

fn entropy(lambda: &str, mu: &str) -> (bool, Value) {
    let (tmp, o) = run_config(
        "entropy",
        &ENTROPY.replace("LAMBDA", lambda).replace("MU", mu),
        &[],
    );
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let v = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/entropy.json")).unwrap())
        .unwrap();
    (o.status.success(), v)
}

#[test]
fn entropy_without_drift_is_purely_gaussian() {
    let (ok, v) = entropy("0.0", "1.0");
    assert!(ok, "{v}");
    assert_eq!(
        v["report"]["girsanov"]["bound"]["value"].as_f64(),
        Some(0.0)
    );
    assert_eq!(v["checks"]["gaussian_terms_matched"], Value::Bool(true));
    let closed = v["checks"]["gaussian_closed_form"].as_f64().unwrap();
    let g = &v["report"]["gaussian"];
    let total: f64 = ["fredholm", "mean_quadratic", "quadratic", "cross"]
        .iter()
        .map(|k| g[k]["value"].as_f64().unwrap())
        .sum();
    let se = g["quadratic"]["stderr"].as_f64().unwrap();
    assert!(
        (total - closed).abs() <= 3.0 * se + 1e-12,
        "{total} vs {closed} ± {se}"
    );
}

#[test]
fn entropy_linear_family_dominance() {
    let (ok, v) = entropy("0.0", "2.0");
    assert!(ok, "{v}");
    assert_eq!(v["checks"]["dominance"], Value::Bool(true));
    let girsanov = v["checks"]["linear_family_girsanov"].as_f64().unwrap();
    let exact = v["checks"]["linear_family_exact_entropy"].as_f64().unwrap();
    assert!(girsanov > exact && exact > 0.0);
}

#[test]
fn entropy_full_model_is_finite() {
    let (ok, v) = entropy("1.0", "1.0");
    assert!(ok, "{v}");
    let r = &v["report"];
    assert!(r["total"].as_f64().unwrap().is_finite());
    assert!(r["girsanov"]["bound"]["value"].as_f64().unwrap() > 0.0);
    assert!(r["pinsker"].as_f64().unwrap() >= 0.0);
}

#[test]
fn unknown_suite_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = phi4(&["checks", "everything"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown suite"), "{}", stderr(&o));
}

#[test]
fn quick_gaussian_checks_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let o = phi4(&["checks", "gaussian", "--quick"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(
        stdout.lines().filter(|l| l.starts_with("PASS")).count(),
        2,
        "{stdout}"
    );
    let report: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("checks.json")).unwrap()).unwrap();
    let ids: Vec<u64> = report
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, [1, 4]);
    let m: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["quick"], Value::Bool(true));
}

#[test]
fn commands_without_config_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let o = phi4(&["simulate"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_run_leaves_manifest_and_partial_marker() {
    // the test function reaches past two thirds of the smallest sub-torus
    let text = PROPAGATION
        .replace("LAMBDA", "1.0")
        .replace("SUBS", "[1.0, 4.0]");
    let (tmp, o) = run_config("propagation", &text, &["--replicas", "4"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let out = tmp.path().join("out");
    let m: Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let id = m["experiment_id"].as_str().unwrap();
    assert_eq!(fs::read_to_string(out.join("PARTIAL")).unwrap().trim(), id);
    assert!(!out.join("outputs.sha256").exists());
}
