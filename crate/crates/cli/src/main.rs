//! Command-line front end: wires the solver, controller synthesis, edge
//! analysis, the distributed run, and closed-loop simulation into
//! reproducible experiments with CSV outputs.
//!
//! Exit codes: 0 success, 2 input error, 3 convergence/numerical error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use syncopt::distributed::{run_distributed, DistributedError, DistributedParams};
use syncopt::edge_analysis::{analyze_edge, verify_prediction, EdgeAnalysisError};
use syncopt::graph::{spectrum, GraphError, WeightedGraph};
use syncopt::riccati::{control_gain, energy_blocks, solve_are, RiccatiError, SystemModel};
use syncopt::sdp::{
    assemble_problem, kkt_residuals, recover_weights, solve_sdp, ParamsFile, SdpError, SdpSolution,
    SolverParams,
};
use syncopt::simulate::{
    epsilon_sweep, reconstruct_state, run_closed_loop, SimOptions, SimulateError,
};

#[derive(Parser)]
#[command(
    name = "syncopt",
    about = "Consensus-controller synthesis and Laplacian eigenratio optimization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonIo {
    /// Graph file (`nodes N` + `edge i j [w]` lines).
    #[arg(long)]
    graph: PathBuf,
    /// Parameter file (key=value lines).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output directory for generated files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the Laplacian eigenratio over edge weights.
    Optimize {
        #[command(flatten)]
        io: CommonIo,
    },
    /// Solve the Riccati equation and print the relative-state gain.
    Gain {
        #[command(flatten)]
        io: CommonIo,
        /// System file (A, B, optional Q sections).
        #[arg(long)]
        system: PathBuf,
    },
    /// Per-mode energy blocks with their interval-bound slack eigenvalues.
    Bounds {
        #[command(flatten)]
        io: CommonIo,
        #[arg(long)]
        system: PathBuf,
    },
    /// Closed-loop simulation with numeric energy measurement.
    Simulate {
        #[command(flatten)]
        io: CommonIo,
        #[arg(long)]
        system: PathBuf,
        /// Initial state file: N·n values (stacked) or (N-1)·n values
        /// (disagreement modes).
        #[arg(long)]
        x0: PathBuf,
        /// Keep every STRIDE-th trajectory row in the CSV.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Also emit a gnuplot script next to the CSV.
        #[arg(long)]
        gnuplot: bool,
    },
    /// Classify a candidate edge by its dual indicator.
    AnalyzeEdge {
        #[command(flatten)]
        io: CommonIo,
        /// Candidate edge as `i,j`.
        #[arg(long)]
        edge: String,
        /// Re-solve with the edge added and check the prediction.
        #[arg(long)]
        verify: bool,
    },
    /// Run the per-node interior-point method (regular graphs).
    Distributed {
        #[command(flatten)]
        io: CommonIo,
    },
    /// Sweep the Riccati weight Q = εI and report the analytic energy.
    Sweep {
        #[command(flatten)]
        io: CommonIo,
        #[arg(long)]
        system: PathBuf,
        /// Modal initial value file ((N-1)·n values).
        #[arg(long)]
        x0: PathBuf,
        /// Range `start:end:step` (inclusive end).
        #[arg(long)]
        epsilons: String,
        #[arg(long)]
        gnuplot: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => m,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        input(e)
    }
}

impl From<SdpError> for CliError {
    fn from(e: SdpError) -> Self {
        match e {
            SdpError::Convergence { .. }
            | SdpError::Numerical(_)
            | SdpError::RealizationMismatch { .. } => numerical(e),
            SdpError::Distributed(d) => d.into(),
            other => input(other),
        }
    }
}

impl From<RiccatiError> for CliError {
    fn from(e: RiccatiError) -> Self {
        match e {
            RiccatiError::NoStabilizingSolution
            | RiccatiError::SolutionCheck(_)
            | RiccatiError::NotHurwitz(_)
            | RiccatiError::ClosedLoopUnstable { .. } => numerical(e),
            other => input(other),
        }
    }
}

impl From<DistributedError> for CliError {
    fn from(e: DistributedError) -> Self {
        match e {
            DistributedError::NotConnected
            | DistributedError::NotRegular
            | DistributedError::BadNode(_)
            | DistributedError::BadParams(_)
            | DistributedError::Graph(_)
            | DistributedError::Algebra(_) => input(e),
            other => numerical(other),
        }
    }
}

impl From<EdgeAnalysisError> for CliError {
    fn from(e: EdgeAnalysisError) -> Self {
        match e {
            EdgeAnalysisError::Sdp(s) => s.into(),
            other => input(other),
        }
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::Divergence(_) | SimulateError::HorizonTooShort { .. } => numerical(e),
            SimulateError::Riccati(r) => r.into(),
            other => input(other),
        }
    }
}

/// 12-significant-digit float formatting (stable across runs).
fn sig12(x: f64) -> String {
    format!("{:.11e}", x)
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| input(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn load_graph(path: &Path) -> Result<WeightedGraph, CliError> {
    read_file(path)?
        .parse::<WeightedGraph>()
        .map_err(CliError::from)
}

fn load_system(path: &Path) -> Result<SystemModel, CliError> {
    SystemModel::from_file_str(&read_file(path)?).map_err(CliError::from)
}

fn load_params(path: &Option<PathBuf>) -> Result<ParamsFile, CliError> {
    match path {
        None => Ok(ParamsFile::default()),
        Some(p) => read_file(p)?.parse::<ParamsFile>().map_err(CliError::from),
    }
}

fn solver_params(file: &ParamsFile) -> Result<SolverParams, CliError> {
    SolverParams::from_params_file(file).map_err(CliError::from)
}

fn distributed_params(file: &ParamsFile) -> Result<DistributedParams, CliError> {
    let mut p = DistributedParams::default();
    if let Some(v) = file.get("m0") {
        p.m0 = v;
    }
    if let Some(v) = file.get("eps") {
        p.eps = v;
    }
    if let Some(v) = file.get("theta") {
        p.theta = v;
    }
    if let Some(v) = file.get("rho0") {
        p.rho0 = v;
    }
    if let Some(v) = file.get("xi") {
        p.xi = v;
    }
    if let Some(v) = file.get("tol") {
        p.tol = v;
    }
    if let Some(v) = file.get("tau") {
        p.tau = v;
    }
    if let Some(v) = file.get("lin_tol") {
        p.lin_tol = v;
    }
    if let Some(v) = file.get("lin_rounds_per_node") {
        p.lin_rounds_per_node = v as usize;
    }
    if let Some(v) = file.get("max_outer") {
        p.max_outer = v as usize;
    }
    p.validate().map_err(CliError::from)?;
    Ok(p)
}

fn load_vector(path: &Path) -> Result<DVector<f64>, CliError> {
    let text = read_file(path)?;
    let vals: Result<Vec<f64>, _> = text.split_whitespace().map(str::parse::<f64>).collect();
    let vals = vals.map_err(|e| input(format!("{}: bad number: {e}", path.display())))?;
    if vals.is_empty() {
        return Err(input(format!("{}: empty vector", path.display())));
    }
    Ok(DVector::from_vec(vals))
}

fn parse_edge(spec: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 2 {
        return Err(input(format!("--edge expects `i,j`, got `{spec}`")));
    }
    let i = parts[0]
        .trim()
        .parse()
        .map_err(|e| input(format!("bad edge endpoint: {e}")))?;
    let j = parts[1]
        .trim()
        .parse()
        .map_err(|e| input(format!("bad edge endpoint: {e}")))?;
    Ok((i, j))
}

fn parse_epsilons(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(input(format!(
            "--epsilons expects `start:end:step`, got `{spec}`"
        )));
    }
    let nums: Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse::<f64>()).collect();
    let nums = nums.map_err(|e| input(format!("bad epsilon bound: {e}")))?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || end < start {
        return Err(input(
            "--epsilons needs step > 0 and end >= start".to_string(),
        ));
    }
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let e = start + step * k as f64;
        if e > end + 1e-12 {
            break;
        }
        out.push(e);
        k += 1;
    }
    Ok(out)
}

/// Per-edge solution CSV plus summary block.
fn solution_csv(
    g: &WeightedGraph,
    sol: &SdpSolution,
    w: &[f64],
    lambda2: f64,
    lambda_n: f64,
) -> String {
    let mut s = String::from("i,j,y,w\n");
    for (k, &(i, j)) in g.edges().iter().enumerate() {
        s.push_str(&format!("{i},{j},{},{}\n", sig12(sol.y[k]), sig12(w[k])));
    }
    s.push('\n');
    s.push_str("t_star,lambda2,lambdaN,gap,iterations\n");
    s.push_str(&format!(
        "{},{},{},{},{}\n",
        sig12(sol.t_star),
        sig12(lambda2),
        sig12(lambda_n),
        sig12(sol.gap),
        sol.iterations
    ));
    s
}

fn matrix_rows(name: &str, m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            s.push_str(&format!(
                "{name},{},{},{}\n",
                i + 1,
                j + 1,
                sig12(m[(i, j)])
            ));
        }
    }
    s
}

fn weighted_laplacian(g: &WeightedGraph) -> Result<(DMatrix<f64>, f64, Vec<f64>), CliError> {
    let l = g.laplacian();
    let s = spectrum(&l)?;
    let lambda2 = s.lambda2;
    if s.synchronizability.is_none() {
        return Err(input(
            "graph Laplacian has no positive algebraic connectivity",
        ));
    }
    let sigmas: Vec<f64> = s.eigenvalues[1..].iter().map(|v| v / lambda2).collect();
    Ok((l, lambda2, sigmas))
}

fn cmd_optimize(io: &CommonIo) -> Result<(), CliError> {
    let g = load_graph(&io.graph)?;
    let params = solver_params(&load_params(&io.params)?)?;
    let problem = assemble_problem(&g)?;
    let sol = solve_sdp(&problem, &params)?;
    let real = recover_weights(&sol, &problem)?;
    let csv = solution_csv(&g, &sol, &real.w, real.lambda2, real.lambda_n);
    let path = write_file(&io.out, "solution.csv", &csv)?;

    let rep = kkt_residuals(&sol, &problem);
    let mut report = String::new();
    for (name, v) in rep.lines() {
        report.push_str(&format!("{name} {}\n", sig12(v)));
    }
    report.push_str(&format!("max_violation {}\n", sig12(rep.max_violation())));
    let rep_path = write_file(&io.out, "kkt_report.txt", &report)?;

    println!(
        "t* = {:.9}, lambda2 = {:.9}, lambdaN = {:.9} ({} iterations)",
        sol.t_star, real.lambda2, real.lambda_n, sol.iterations
    );
    println!("wrote {} and {}", path.display(), rep_path.display());
    Ok(())
}

fn cmd_gain(io: &CommonIo, system: &Path) -> Result<(), CliError> {
    let g = load_graph(&io.graph)?;
    let sys = load_system(system)?;
    let (_, lambda2, _) = weighted_laplacian(&g)?;
    let p = solve_are(&sys)?;
    let k = control_gain(&p, sys.b(), lambda2)?;
    let mut csv = String::from("name,i,j,value\n");
    csv.push_str(&matrix_rows("P", &p));
    csv.push_str(&matrix_rows("K", &k));
    csv.push_str(&format!("lambda2,1,1,{}\n", sig12(lambda2)));
    let path = write_file(&io.out, "controller.csv", &csv)?;
    println!("lambda2 = {lambda2:.9}");
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_bounds(io: &CommonIo, system: &Path) -> Result<(), CliError> {
    let g = load_graph(&io.graph)?;
    let sys = load_system(system)?;
    let (_, _, sigmas) = weighted_laplacian(&g)?;
    let p = solve_are(&sys)?;
    let p0 = solve_are(&sys.with_q(DMatrix::zeros(sys.state_dim(), sys.state_dim()))?)?;
    let blocks = energy_blocks(&sys, &p, &sigmas)?;
    let n = sys.state_dim();

    let min_eig = |m: &DMatrix<f64>| {
        ((m + m.transpose()) * 0.5)
            .symmetric_eigen()
            .eigenvalues
            .min()
    };
    let mut header = String::from("mode,sigma");
    for i in 1..=n {
        for j in 1..=n {
            header.push_str(&format!(",h_{i}_{j}"));
        }
    }
    header.push_str(",lower_slack_min_eig,upper_slack_min_eig\n");
    let mut csv = header;
    for (idx, sigma) in blocks.sigmas.iter().enumerate() {
        let h = &blocks.blocks[idx];
        let upper = &p * (sigma * sigma / (2.0 * sigma - 1.0));
        let mut row = format!("{},{}", idx + 2, sig12(*sigma));
        for i in 0..n {
            for j in 0..n {
                row.push_str(&format!(",{}", sig12(h[(i, j)])));
            }
        }
        row.push_str(&format!(
            ",{},{}\n",
            sig12(min_eig(&(h - &p0))),
            sig12(min_eig(&(upper - h)))
        ));
        csv.push_str(&row);
    }
    let path = write_file(&io.out, "bounds.csv", &csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_simulate(
    io: &CommonIo,
    system: &Path,
    x0_path: &Path,
    stride: usize,
    gnuplot: bool,
) -> Result<(), CliError> {
    if stride == 0 {
        return Err(input("--stride must be at least 1"));
    }
    let g = load_graph(&io.graph)?;
    let sys = load_system(system)?;
    let (l, lambda2, sigmas) = weighted_laplacian(&g)?;
    let p = solve_are(&sys)?;
    let k = control_gain(&p, sys.b(), lambda2)?;
    let blocks = energy_blocks(&sys, &p, &sigmas)?;

    let n_agents = g.n_nodes();
    let dim = sys.state_dim();
    let raw = load_vector(x0_path)?;
    let x0 = if raw.len() == n_agents * dim {
        raw
    } else if raw.len() == (n_agents - 1) * dim {
        reconstruct_state(&DVector::zeros(dim), &raw, &l)?
    } else {
        return Err(input(format!(
            "initial state must have {} (stacked) or {} (modal) entries, got {}",
            n_agents * dim,
            (n_agents - 1) * dim,
            raw.len()
        )));
    };

    let res = run_closed_loop(
        sys.a(),
        sys.b(),
        &k,
        &l,
        &x0,
        Some(&blocks),
        &SimOptions::default(),
    )?;

    let gain = l.kronecker(&k);
    let mut csv = String::from("t");
    for i in 1..=n_agents {
        for j in 1..=dim {
            csv.push_str(&format!(",x_{i}_{j}"));
        }
    }
    csv.push_str(",disagreement,u_norm_sq\n");
    for (idx, (t, x)) in res
        .trajectory
        .times
        .iter()
        .zip(res.trajectory.states.iter())
        .enumerate()
    {
        let last = idx + 1 == res.trajectory.times.len();
        if idx % stride != 0 && !last {
            continue;
        }
        let u = &gain * x;
        let mut row = sig12(*t);
        for v in x.iter() {
            row.push_str(&format!(",{}", sig12(*v)));
        }
        row.push_str(&format!(
            ",{},{}\n",
            sig12(res.disagreement[idx]),
            sig12(u.norm_squared())
        ));
        csv.push_str(&row);
    }
    csv.push('\n');
    csv.push_str("J_numeric,J_analytic\n");
    csv.push_str(&format!(
        "{},{}\n",
        sig12(res.j_numeric),
        sig12(res.j_analytic.unwrap_or(f64::NAN))
    ));
    let path = write_file(&io.out, "trajectory.csv", &csv)?;
    println!(
        "J_numeric = {:.9}, J_analytic = {:.9}, horizon = {:.3}",
        res.j_numeric,
        res.j_analytic.unwrap_or(f64::NAN),
        res.trajectory.times.last().unwrap()
    );
    println!("wrote {}", path.display());
    if gnuplot {
        let script = "set datafile separator ','\n\
             set key autotitle columnhead\n\
             plot 'trajectory.csv' using 1:(column('disagreement')) with lines\n";
        let gp = write_file(&io.out, "trajectory.gp", script)?;
        println!("wrote {}", gp.display());
    }
    Ok(())
}

fn cmd_analyze_edge(io: &CommonIo, edge_spec: &str, verify: bool) -> Result<(), CliError> {
    let g = load_graph(&io.graph)?;
    let params = solver_params(&load_params(&io.params)?)?;
    if g.addable_edges().is_empty() {
        let report = "edge set full: every node pair is already connected\n";
        let path = write_file(&io.out, "edge_report.txt", report)?;
        println!("{}", report.trim_end());
        println!("wrote {}", path.display());
        return Ok(());
    }
    let edge = parse_edge(edge_spec)?;
    let problem = assemble_problem(&g)?;
    let sol = solve_sdp(&problem, &params)?;
    let cls = analyze_edge(&g, &sol, edge)?;

    let mut report = format!(
        "edge ({}, {})\nindicator {}\nzero_tol {}\nverdict {}\ncertificates: {}\n",
        edge.0,
        edge.1,
        sig12(cls.indicator),
        sig12(cls.zero_tol),
        cls.verdict,
        cls.dual_note
    );
    println!(
        "edge ({}, {}): indicator = {:.6e}, verdict = {}",
        edge.0, edge.1, cls.indicator, cls.verdict
    );
    if verify {
        let v = verify_prediction(&g, edge, &cls, &params)?;
        report.push_str(&format!(
            "verification:\n  old_t_star {}\n  new_t_star {}\n  new_edge_y {}\n  passed {}\n  {}\n",
            sig12(v.old_t_star),
            sig12(v.new_t_star),
            sig12(v.new_edge_y),
            v.passed,
            v.detail
        ));
        println!(
            "verify: t* {:.9} -> {:.9}, y_new = {:.6e}, passed = {}",
            v.old_t_star, v.new_t_star, v.new_edge_y, v.passed
        );
    }
    let path = write_file(&io.out, "edge_report.txt", &report)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_distributed(io: &CommonIo) -> Result<(), CliError> {
    let g = load_graph(&io.graph)?;
    let params = distributed_params(&load_params(&io.params)?)?;
    let rep = run_distributed(&g, &params)?;

    let mut log =
        String::from("outer_iter,inner_iter,rho,M,alpha,max_consensus_residual,max_kkt_residual\n");
    for row in &rep.log {
        log.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.outer,
            row.inner,
            sig12(row.rho),
            sig12(row.m),
            sig12(row.alpha),
            sig12(row.max_consensus_residual),
            sig12(row.max_kkt_residual)
        ));
    }
    let log_path = write_file(&io.out, "runlog.csv", &log)?;

    let norm: f64 = rep.edge_weights.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut csv = String::from("i,j,y,w,y_node_i,y_node_j\n");
    for (k, &(i, j)) in g.edges().iter().enumerate() {
        let y = rep.edge_weights[k];
        let w = if norm > 0.0 { y / norm } else { 0.0 };
        csv.push_str(&format!(
            "{i},{j},{},{},{},{}\n",
            sig12(y),
            sig12(w),
            sig12(rep.per_node_y[&i][&k]),
            sig12(rep.per_node_y[&j][&k])
        ));
    }
    csv.push('\n');
    csv.push_str("t_star,lambda2,lambdaN,consensus_residual,outer_iterations,inner_iterations\n");
    let lambda2 = if norm > 0.0 { 1.0 / norm } else { f64::NAN };
    csv.push_str(&format!(
        "{},{},{},{},{},{}\n",
        sig12(rep.t_star_estimate),
        sig12(lambda2),
        sig12(rep.t_star_estimate * lambda2),
        sig12(rep.consensus_residual),
        rep.outer_iterations,
        rep.inner_iterations
    ));
    let sol_path = write_file(&io.out, "distributed_solution.csv", &csv)?;

    println!(
        "t* estimate = {:.6}, consensus residual = {:.3e} ({} outer / {} inner iterations)",
        rep.t_star_estimate, rep.consensus_residual, rep.outer_iterations, rep.inner_iterations
    );
    println!("wrote {} and {}", log_path.display(), sol_path.display());
    Ok(())
}

fn cmd_sweep(
    io: &CommonIo,
    system: &Path,
    x0_path: &Path,
    epsilons: &str,
    gnuplot: bool,
) -> Result<(), CliError> {
    let g = load_graph(&io.graph)?;
    let sys = load_system(system)?;
    let xhat = load_vector(x0_path)?;
    let eps = parse_epsilons(epsilons)?;
    let sweep = epsilon_sweep(&sys, &xhat, &g, &eps)?;
    let mut csv = String::from("epsilon,J\n");
    for (e, j) in &sweep {
        csv.push_str(&format!("{},{}\n", sig12(*e), sig12(*j)));
    }
    let path = write_file(&io.out, "sweep.csv", &csv)?;
    for (e, j) in &sweep {
        println!("epsilon = {e:.3}: J = {j:.9}");
    }
    println!("wrote {}", path.display());
    if gnuplot {
        let script = "set datafile separator ','\n\
             set key autotitle columnhead\n\
             plot 'sweep.csv' using 1:2 with linespoints\n";
        let gp = write_file(&io.out, "sweep.gp", script)?;
        println!("wrote {}", gp.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Optimize { io } => cmd_optimize(io),
        Command::Gain { io, system } => cmd_gain(io, system),
        Command::Bounds { io, system } => cmd_bounds(io, system),
        Command::Simulate {
            io,
            system,
            x0,
            stride,
            gnuplot,
        } => cmd_simulate(io, system, x0, *stride, *gnuplot),
        Command::AnalyzeEdge { io, edge, verify } => cmd_analyze_edge(io, edge, *verify),
        Command::Distributed { io } => cmd_distributed(io),
        Command::Sweep {
            io,
            system,
            x0,
            epsilons,
            gnuplot,
        } => cmd_sweep(io, system, x0, epsilons, *gnuplot),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
