//! End-to-end command tests against the shipped fixtures: exit codes,
//! output files, and byte determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_syncopt")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("syncopt-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn CLI")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn optimize_complete_graph() {
    let out_dir = tmp_dir("optimize");
    let out = run(&[
        "optimize",
        "--graph",
        fixture("k4.graph").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = fs::read_to_string(out_dir.join("solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "i,j,y,w");
    // Six edges, each with y = 1/4.
    let mut edges = 0;
    for line in lines.by_ref() {
        if line.is_empty() {
            break;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let y: f64 = cols[2].parse().unwrap();
        assert!((y - 0.25).abs() < 1e-6, "y = {y}");
        edges += 1;
    }
    assert_eq!(edges, 6);
    assert_eq!(
        lines.next().unwrap(),
        "t_star,lambda2,lambdaN,gap,iterations"
    );
    let summary: Vec<&str> = lines.next().unwrap().split(',').collect();
    let t: f64 = summary[0].parse().unwrap();
    assert!((t - 1.0).abs() < 1e-6);
    assert!(out_dir.join("kkt_report.txt").exists());
}

#[test]
fn optimize_is_byte_deterministic() {
    let dir_a = tmp_dir("det-a");
    let dir_b = tmp_dir("det-b");
    for dir in [&dir_a, &dir_b] {
        let out = run(&[
            "optimize",
            "--graph",
            fixture("mesh8.graph").to_str().unwrap(),
            "--params",
            fixture("solver.params").to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
    }
    let a = fs::read(dir_a.join("solution.csv")).unwrap();
    let b = fs::read(dir_b.join("solution.csv")).unwrap();
    assert_eq!(a, b, "solution.csv must be byte-identical across runs");
}

#[test]
fn optimize_rejects_disconnected_graph() {
    let dir = tmp_dir("disconnected");
    let graph = dir.join("g.graph");
    fs::write(&graph, "nodes 4\nedge 1 2\nedge 3 4\n").unwrap();
    let out = run(&[
        "optimize",
        "--graph",
        graph.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn optimize_rejects_bad_params() {
    let dir = tmp_dir("badparams");
    let params = dir.join("p.params");
    fs::write(&params, "theta = 1.5\n").unwrap();
    let out = run(&[
        "optimize",
        "--graph",
        fixture("k4.graph").to_str().unwrap(),
        "--params",
        params.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn gain_writes_controller_matrices() {
    let dir = tmp_dir("gain");
    let out = run(&[
        "gain",
        "--graph",
        fixture("ring4.graph").to_str().unwrap(),
        "--system",
        fixture("bench.sys").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = fs::read_to_string(dir.join("controller.csv")).unwrap();
    assert!(csv.starts_with("name,i,j,value\n"));
    assert!(csv.lines().any(|l| l.starts_with("P,1,1,")));
    assert!(csv.lines().any(|l| l.starts_with("K,1,2,")));
    assert!(csv.lines().any(|l| l.starts_with("lambda2,")));
}

#[test]
fn bounds_reports_nonnegative_slacks() {
    let dir = tmp_dir("bounds");
    let out = run(&[
        "bounds",
        "--graph",
        fixture("ring4.graph").to_str().unwrap(),
        "--system",
        fixture("bench.sys").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = fs::read_to_string(dir.join("bounds.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let lower: f64 = cols[cols.len() - 2].parse().unwrap();
        let upper: f64 = cols[cols.len() - 1].parse().unwrap();
        assert!(lower >= -1e-8, "lower slack {lower}");
        assert!(upper >= -1e-8, "upper slack {upper}");
        rows += 1;
    }
    assert_eq!(rows, 3); // modes 2..4 on the 4-node ring
}

#[test]
fn simulate_consensual_start_costs_nothing() {
    let dir = tmp_dir("simulate");
    let out = run(&[
        "simulate",
        "--graph",
        fixture("ring4.graph").to_str().unwrap(),
        "--system",
        fixture("bench.sys").to_str().unwrap(),
        "--x0",
        fixture("x0_ring4_consensual.txt").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    let summary = csv
        .lines()
        .skip_while(|l| *l != "J_numeric,J_analytic")
        .nth(1)
        .expect("summary row");
    let j: f64 = summary.split(',').next().unwrap().parse().unwrap();
    assert_eq!(j, 0.0);
}

#[test]
fn simulate_rejects_wrong_x0_length() {
    let dir = tmp_dir("badx0");
    let x0 = dir.join("x0.txt");
    fs::write(&x0, "1 2 3\n").unwrap();
    let out = run(&[
        "simulate",
        "--graph",
        fixture("ring4.graph").to_str().unwrap(),
        "--system",
        fixture("bench.sys").to_str().unwrap(),
        "--x0",
        x0.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn analyze_edge_with_verification() {
    let dir = tmp_dir("edge");
    let out = run(&[
        "analyze-edge",
        "--graph",
        fixture("mesh8.graph").to_str().unwrap(),
        "--edge",
        "7,8",
        "--verify",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let report = fs::read_to_string(dir.join("edge_report.txt")).unwrap();
    assert!(
        report.contains("verdict NEGATIVE_EXISTS"),
        "report:\n{report}"
    );
    assert!(report.contains("passed true"), "report:\n{report}");
}

#[test]
fn analyze_edge_rejects_existing_edge() {
    let dir = tmp_dir("edge-dup");
    let out = run(&[
        "analyze-edge",
        "--graph",
        fixture("mesh8.graph").to_str().unwrap(),
        "--edge",
        "1,2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn analyze_edge_on_complete_graph_reports_full_set() {
    let dir = tmp_dir("edge-full");
    let out = run(&[
        "analyze-edge",
        "--graph",
        fixture("k4.graph").to_str().unwrap(),
        "--edge",
        "1,2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let report = fs::read_to_string(dir.join("edge_report.txt")).unwrap();
    assert!(report.contains("edge set full"));
}

#[test]
fn distributed_ring_matches_centralized_weights() {
    let dir = tmp_dir("distributed");
    let out = run(&[
        "distributed",
        "--graph",
        fixture("ring4.graph").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = fs::read_to_string(dir.join("distributed_solution.csv")).unwrap();
    for line in csv.lines().skip(1).take(4) {
        let cols: Vec<&str> = line.split(',').collect();
        let y: f64 = cols[2].parse().unwrap();
        assert!((y - 0.5).abs() < 1e-2, "y = {y}");
    }
    assert!(dir.join("runlog.csv").exists());
    let log = fs::read_to_string(dir.join("runlog.csv")).unwrap();
    assert!(log
        .starts_with("outer_iter,inner_iter,rho,M,alpha,max_consensus_residual,max_kkt_residual"));
}

#[test]
fn distributed_rejects_irregular_graph() {
    let dir = tmp_dir("irregular");
    let graph = dir.join("star.graph");
    fs::write(&graph, "nodes 4\nedge 1 2\nedge 1 3\nedge 1 4\n").unwrap();
    let out = run(&[
        "distributed",
        "--graph",
        graph.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn sweep_is_monotone() {
    let dir = tmp_dir("sweep");
    let out = run(&[
        "sweep",
        "--graph",
        fixture("k3_equal.graph").to_str().unwrap(),
        "--system",
        fixture("bench.sys").to_str().unwrap(),
        "--x0",
        fixture("x0_k3_modal.txt").to_str().unwrap(),
        "--epsilons",
        "0:1:0.5",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let js: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(js.len(), 3);
    assert!(js.windows(2).all(|p| p[1] >= p[0] - 1e-9), "{js:?}");
}

#[test]
fn sweep_rejects_bad_range() {
    let dir = tmp_dir("sweep-bad");
    let out = run(&[
        "sweep",
        "--graph",
        fixture("k3_equal.graph").to_str().unwrap(),
        "--system",
        fixture("bench.sys").to_str().unwrap(),
        "--x0",
        fixture("x0_k3_modal.txt").to_str().unwrap(),
        "--epsilons",
        "1:0:0.5",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}
