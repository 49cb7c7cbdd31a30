//! Command line front end: `solve`, `evaluate`, `cluster` and `generate`.
//!
//! Exit codes: 0 on success, 2 for invalid input, 3 when a solve stops
//! before meeting its tolerance (its output is still written).

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use smoothrig::baselines::{solve_linear_smooth, solve_quartic_per_frame, LinearSmoothConfig};
use smoothrig::cluster::{heuristic_cluster, solve_clustered, ClusterOptions, ClusterScaling, Execution};
use smoothrig::io;
use smoothrig::metrics::{MetricsReport, DEFAULT_CARDINALITY_EPS};
use smoothrig::solver::{solve, SolveConfig};
use smoothrig::synth::{generate, SynthSpec};
use smoothrig::{QpOptions, WeightMatrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Library(#[from] smoothrig::Error),
    #[error("{0}")]
    Usage(String),
    #[error("output error: {0}")]
    Output(#[from] std::io::Error),
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotConverged(_) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "smoothrig", version, about = "Inverse rig solver for blendshape faces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for weights that reproduce a target mesh sequence.
    Solve(SolveArgs),
    /// Recompute metrics for an existing weights file.
    Evaluate(EvaluateArgs),
    /// Partition a rig into vertex/blendshape clusters.
    Cluster(ClusterArgs),
    /// Write a seeded synthetic rig, ground-truth weights and targets.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Joint solve over all frames with the full rig and a roughness penalty.
    QuarticSmooth,
    /// Frame-by-frame linear solve penalizing change from the previous frame.
    LinearSmooth,
    /// Frame-by-frame solve with the full rig.
    Quartic,
}

impl Method {
    /// Default `(alpha, beta)`. These were tuned on a production face rig and
    /// are a starting point only.
    pub fn defaults(self) -> (f64, f64) {
        match self {
            Method::QuarticSmooth => (0.0078, 1.0),
            Method::LinearSmooth => (0.01, 0.0),
            Method::Quartic => (0.9, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scaling {
    /// Normalize each cluster by its own vertex and blendshape counts.
    Local,
    /// Normalize every cluster by the full rig's counts.
    Global,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub rig: PathBuf,
    /// Targets, CSV or `.bin`.
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long, value_enum, default_value = "quartic-smooth")]
    pub method: Method,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Cluster assignment file; solves clusters independently.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Worker threads for the clustered solve.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum, default_value = "local")]
    pub cluster_scaling: Scaling,
    #[arg(long, default_value_t = 20)]
    pub max_sweeps: usize,
    /// Relative objective decrease per sweep below which the solve stops.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub qp_tol: f64,
    /// Weights CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics output; `key=value` lines, or a CSV row for a `.csv` path.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CARDINALITY_EPS)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub rig: PathBuf,
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CARDINALITY_EPS)]
    pub eps: f64,
    /// Also write the record here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub rig: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 300)]
    pub vertices: usize,
    #[arg(long, default_value_t = 12)]
    pub controllers: usize,
    #[arg(long, default_value_t = 40)]
    pub frames: usize,
    #[arg(long, default_value_t = 12)]
    pub pairs: usize,
    #[arg(long, default_value_t = 6)]
    pub triples: usize,
    #[arg(long, default_value_t = 3)]
    pub quads: usize,
    /// Expected active controllers per frame.
    #[arg(long, default_value_t = 6)]
    pub active: usize,
    #[arg(long, default_value_t = 1)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0.25)]
    pub radius_min: f64,
    #[arg(long, default_value_t = 0.45)]
    pub radius_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub rig_out: PathBuf,
    #[arg(long)]
    pub weights_out: PathBuf,
    /// Targets output, CSV or `.bin`.
    #[arg(long)]
    pub targets_out: PathBuf,
    /// Also write the planted block partition.
    #[arg(long)]
    pub assignment_out: Option<PathBuf>,
}

/// Runs one command. The metrics record goes to `stdout`; warnings go to
/// `stderr`.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(args) => run_solve(args, stdout, stderr),
        Command::Evaluate(args) => run_evaluate(args, stdout),
        Command::Cluster(args) => run_cluster(args),
        Command::Generate(args) => run_generate(args),
    }
}

fn run_solve(args: SolveArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let rig = io::load_rig(&args.rig)?;
    let targets = io::load_targets(&args.targets)?;
    if targets.num_coords() != rig.dim() {
        return Err(CliError::Usage(format!(
            "targets have {} coordinate rows but the rig has {}",
            targets.num_coords(),
            rig.dim()
        )));
    }
    let (default_alpha, default_beta) = args.method.defaults();
    if args.alpha.is_none() || (args.beta.is_none() && args.method != Method::Quartic) {
        writeln!(
            stderr,
            "warning: using default alpha={default_alpha} beta={default_beta} for this method; \
             they were tuned on a production face rig and may not suit this data"
        )?;
    }
    let alpha = args.alpha.unwrap_or(default_alpha);
    let beta = args.beta.unwrap_or(default_beta);
    if args.threads == Some(0) {
        return Err(CliError::Usage("--threads must be positive".into()));
    }
    if args.clusters.is_some() && args.method != Method::QuarticSmooth {
        return Err(CliError::Usage("--clusters requires --method quartic-smooth".into()));
    }
    if args.threads.is_some() && args.clusters.is_none() {
        writeln!(stderr, "warning: --threads only affects clustered solves; ignored")?;
    }
    let qp = QpOptions {
        tol: args.qp_tol,
        ..QpOptions::default()
    };
    let config = SolveConfig {
        alpha,
        beta,
        max_sweeps: args.max_sweeps,
        objective_tol: args.tol,
        qp,
        initial: None,
    };

    let (weights, wall_time, shortfall): (WeightMatrix, f64, Option<String>) = match args.method {
        Method::QuarticSmooth => match &args.clusters {
            None => {
                let report = solve(&rig, &targets, &config)?;
                let shortfall = (!report.converged).then(|| {
                    format!("solve stopped after {} sweeps without meeting --tol", report.sweeps)
                });
                (report.weights, report.wall_time, shortfall)
            }
            Some(path) => {
                let assignment = io::load_assignment(path)?;
                assignment.check_rig(&rig)?;
                let dropped = assignment.cross_cluster_correctives(&rig);
                if dropped > 0 {
                    writeln!(
                        stderr,
                        "warning: {dropped} corrective terms span clusters and are left out of the cluster solves"
                    )?;
                }
                let options = ClusterOptions {
                    scaling: match args.cluster_scaling {
                        Scaling::Local => ClusterScaling::Local,
                        Scaling::Global => ClusterScaling::Global,
                    },
                    execution: match args.threads {
                        Some(n) => Execution::ParallelWith(n),
                        None => Execution::Parallel,
                    },
                };
                let report = solve_clustered(&rig, &targets, &config, &assignment, &options)?;
                for c in &report.clusters {
                    if let Some(e) = &c.error {
                        writeln!(stderr, "warning: cluster {} failed: {e}", c.cluster)?;
                    }
                }
                writeln!(
                    stderr,
                    "clusters: {} parallel cost {:.6}s, sequential cost {:.6}s",
                    report.clusters.len(),
                    report.parallel_cost,
                    report.sequential_cost
                )?;
                let failed = report.failures().count();
                let unconverged = report.clusters.iter().filter(|c| !c.converged && c.error.is_none()).count();
                let shortfall = (failed + unconverged > 0).then(|| {
                    format!("{failed} clusters failed and {unconverged} stopped without meeting --tol")
                });
                (report.weights, report.wall_time, shortfall)
            }
        },
        Method::LinearSmooth => {
            if rig.has_correctives() {
                writeln!(
                    stderr,
                    "warning: linear-smooth ignores the rig's {} corrective terms",
                    rig.correctives().len()
                )?;
            }
            let report = solve_linear_smooth(&rig, &targets, &LinearSmoothConfig { alpha, beta, qp })?;
            let shortfall = (!report.converged).then(|| "a frame QP stopped on its iteration cap".to_owned());
            (report.weights, report.wall_time, shortfall)
        }
        Method::Quartic => {
            if args.beta.is_some() {
                writeln!(stderr, "warning: --beta has no effect with --method quartic")?;
            }
            let report = solve_quartic_per_frame(&rig, &targets, &config)?;
            let shortfall = (!report.converged)
                .then(|| "some frames stopped without meeting --tol".to_owned());
            (report.weights, report.wall_time, shortfall)
        }
    };

    io::save_weights(&args.out, &rig, &weights)?;
    let report = MetricsReport::compute(&rig, &weights, &targets, args.eps, wall_time)?;
    if let Some(path) = &args.metrics {
        io::save_metrics(path, &report)?;
    }
    stdout.write_all(report.to_record().as_bytes())?;
    match shortfall {
        Some(msg) => Err(CliError::NotConverged(format!("{msg}; output written"))),
        None => Ok(()),
    }
}

fn run_evaluate(args: EvaluateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let rig = io::load_rig(&args.rig)?;
    let targets = io::load_targets(&args.targets)?;
    let weights = io::load_weights(&args.weights, &rig)?;
    let report = MetricsReport::compute(&rig, &weights, &targets, args.eps, 0.0)?;
    if let Some(path) = &args.out {
        io::save_metrics(path, &report)?;
    }
    stdout.write_all(report.to_record().as_bytes())?;
    Ok(())
}

fn run_cluster(args: ClusterArgs) -> Result<(), CliError> {
    let rig = io::load_rig(&args.rig)?;
    let assignment = heuristic_cluster(&rig, args.k, args.seed)?;
    io::save_assignment(&args.out, &assignment)?;
    Ok(())
}

fn run_generate(args: GenerateArgs) -> Result<(), CliError> {
    let data = generate(&SynthSpec {
        vertices: args.vertices,
        controllers: args.controllers,
        frames: args.frames,
        pairs: args.pairs,
        triples: args.triples,
        quads: args.quads,
        active: args.active,
        blocks: args.blocks,
        patch_radius: (args.radius_min, args.radius_max),
        seed: args.seed,
    })?;
    io::save_rig(&args.rig_out, &data.rig)?;
    io::save_weights(&args.weights_out, &data.rig, &data.weights)?;
    io::save_targets(&args.targets_out, &data.targets)?;
    if let Some(path) = &args.assignment_out {
        let assignment = smoothrig::ClusterAssignment::new(
            args.blocks,
            data.vertex_block.clone(),
            data.controller_block.clone(),
        )?;
        io::save_assignment(path, &assignment)?;
    }
    Ok(())
}
