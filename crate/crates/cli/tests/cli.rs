//! End-to-end tests of the command-line interface: output schemas, exit
//! codes, manifests, and agreement with in-process library calls.

use std::path::PathBuf;
use std::process::{Command, Output};

use covint::builtin;
use covint::fusion::esci_fuse_common_noise;

fn covint_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covint"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("valid JSON on stdout")
}

fn temp_path(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("covint-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn fuse_identity_setup_optimized() {
    let out = covint_cmd(&[
        "fuse",
        "--builtin",
        "toy-identity",
        "--rule",
        "sci",
        "--optimize",
        "--cost",
        "trace",
    ]);
    let v = stdout_json(&out);
    assert!((v["omega"][0].as_f64().unwrap() - 0.5).abs() < 1e-6);
    assert!((v["cost"].as_f64().unwrap() - 3.0).abs() < 1e-8);
    assert!((v["bound"]["rows"][0][0].as_f64().unwrap() - 1.5).abs() < 1e-9);
}

#[test]
fn fuse_esci_without_unknown_components_equals_optimal_fusion() {
    // P^(1) = 0 makes the bound weight-independent and optimal.
    let problem = r#"{
        "d": 1,
        "estimates": [
            {"mean": [0.0], "unknownCov": {"dim":1,"rows":[[0.0]]}, "knownCov": {"dim":1,"rows":[[1.0]]}},
            {"mean": [2.0], "unknownCov": {"dim":1,"rows":[[0.0]]}, "knownCov": {"dim":1,"rows":[[1.0]]}}
        ],
        "knownCentralCov": {"dim":2,"rows":[[1.0,0.0],[0.0,1.0]]}
    }"#;
    let path = temp_path("p1zero.json");
    std::fs::write(&path, problem).unwrap();
    let out = covint_cmd(&[
        "fuse",
        "--config",
        path.to_str().unwrap(),
        "--rule",
        "esci",
        "--omega",
        "0.3,0.7",
    ]);
    let v = stdout_json(&out);
    // independent scalars: optimal bound 0.5, mean 1, regardless of omega
    assert!((v["bound"]["rows"][0][0].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((v["mean"][0].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn fuse_fig1_matches_library_bit_for_bit() {
    let out = covint_cmd(&[
        "fuse", "--builtin", "fig1", "--rule", "esci", "--omega", "0.5,0.5",
    ]);
    let v = stdout_json(&out);
    let problem = builtin::fig1().unwrap();
    let lib = esci_fuse_common_noise(&problem, &[0.5, 0.5]).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let cli_v = v["bound"]["rows"][i][j].as_f64().unwrap();
            assert_eq!(cli_v, lib.bound.get(i, j), "bound[{i}][{j}]");
        }
        assert_eq!(v["mean"][i].as_f64().unwrap(), lib.mean[i], "mean[{i}]");
    }
}

#[test]
fn fuse_flag_validation() {
    let both = covint_cmd(&[
        "fuse", "--builtin", "fig1", "--rule", "ci", "--omega", "0.5,0.5", "--optimize",
    ]);
    assert_eq!(both.status.code(), Some(2));
    let neither = covint_cmd(&["fuse", "--builtin", "fig1", "--rule", "ci"]);
    assert_eq!(neither.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&neither.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "input");
}

#[test]
fn fuse_numeric_failure_exits_three() {
    let problem = r#"{
        "d": 1,
        "estimates": [
            {"mean": [0.0], "unknownCov": {"dim":1,"rows":[[0.0]]}, "knownCov": {"dim":1,"rows":[[0.0]]}},
            {"mean": [1.0], "unknownCov": {"dim":1,"rows":[[1.0]]}, "knownCov": {"dim":1,"rows":[[0.0]]}}
        ],
        "knownCentralCov": {"dim":2,"rows":[[0.0,0.0],[0.0,0.0]]}
    }"#;
    let path = temp_path("singular.json");
    std::fs::write(&path, problem).unwrap();
    let out = covint_cmd(&[
        "fuse",
        "--config",
        path.to_str().unwrap(),
        "--rule",
        "ci",
        "--omega",
        "0.5,0.5",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "numeric");
}

#[test]
fn unknown_builtin_exits_two() {
    let out = covint_cmd(&["fuse", "--builtin", "nope", "--rule", "ci", "--omega", "1.0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_outputs_grid_and_ellipses() {
    let out_path = temp_path("sweep.csv");
    let out = covint_cmd(&[
        "sweep",
        "--builtin",
        "fig1",
        "--rule",
        "esci",
        "--grid",
        "6",
        "--points",
        "90",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "omega,trace,logdet");
    assert_eq!(lines.len(), 7, "header + six grid rows");
    assert!(lines[1].starts_with("0,"));
    assert!(lines[6].starts_with("1,"));

    // six bound ellipses at 90 points each
    let epath = temp_path("sweep_ellipses.csv");
    let etext = std::fs::read_to_string(&epath).unwrap();
    assert_eq!(etext.lines().count(), 1 + 6 * 90);

    // manifest alongside
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(temp_path("sweep.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["subcommand"], "sweep");
    assert_eq!(manifest["configHash"].as_str().unwrap().len(), 64);

    // the min-trace grid row agrees with --optimize up to grid resolution
    let min_trace = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    let opt = covint_cmd(&[
        "fuse", "--builtin", "fig1", "--rule", "esci", "--optimize",
    ]);
    let v = stdout_json(&opt);
    let opt_cost = v["cost"].as_f64().unwrap();
    assert!(opt_cost <= min_trace + 1e-12);
    assert!(min_trace - opt_cost <= 0.1, "grid at resolution 6 stays close");
}

#[test]
fn sweep_grid_two_hits_exclusion_endpoints() {
    let out_path = temp_path("sweep2.csv");
    let out = covint_cmd(&[
        "sweep",
        "--builtin",
        "toy-identity",
        "--rule",
        "sci",
        "--grid",
        "2",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&out_path).unwrap();
    // both endpoints exclude one estimator: bound = 2 I, trace 4
    for line in text.lines().skip(1) {
        let trace: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((trace - 4.0).abs() < 1e-9);
    }
}

#[test]
fn verify_fig1_passes_and_shrink_fails() {
    let out = covint_cmd(&[
        "verify", "--builtin", "fig1", "--suite", "all", "--budget", "300", "--seed", "3",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["pass"], true);
    assert_eq!(out.status.code(), Some(0));

    let bad = covint_cmd(&[
        "verify",
        "--builtin",
        "fig1",
        "--suite",
        "conservatism",
        "--budget",
        "300",
        "--inject-shrink",
        "0.9",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(v["pass"], false);
}

#[test]
fn simulate_is_deterministic_across_thread_counts() {
    let out1 = temp_path("sim1.csv");
    let out2 = temp_path("sim2.csv");
    for (threads, path) in [("1", &out1), ("2", &out2)] {
        let out = covint_cmd(&[
            "simulate",
            "--builtin",
            "ring4",
            "--trials",
            "8",
            "--steps",
            "6",
            "--seed",
            "7",
            "--threads",
            threads,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(&out1).unwrap();
    let b = std::fs::read(&out2).unwrap();
    assert_eq!(a, b, "identical seed must give byte-identical CSV");

    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("rule,node,step,coord,bound_mean,mse\n"));
    assert_eq!(text.lines().count(), 1 + 4 * 6 * 3);

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(temp_path("sim1.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn ellipse_subcommand_exports_boundary() {
    let path = temp_path("mat.json");
    std::fs::write(&path, r#"{"dim":2,"rows":[[8.0,3.0],[3.0,2.0]]}"#).unwrap();
    let out_path = temp_path("ellipse.csv");
    let out = covint_cmd(&[
        "ellipse",
        "--config",
        path.to_str().unwrap(),
        "--points",
        "16",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 17);
    // singular matrix is a numeric error
    std::fs::write(&path, r#"{"dim":2,"rows":[[1.0,1.0],[1.0,1.0]]}"#).unwrap();
    let bad = covint_cmd(&[
        "ellipse",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(3));
}
