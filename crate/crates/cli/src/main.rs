use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use paramprune::dataset::Dataset;
use paramprune::dynamics::Mechanism;
use paramprune::excitation::{optimize_set, ExcitationConfig, TrajectorySet};
use paramprune::heuristics::{self, Heuristic, SelectionTrace};
use paramprune::jsonio;
use paramprune::pipeline::{self, Evaluation, PipelineConfig};
use paramprune::reduction::{ProblemFile, RegressionProblem, RANK_TOL};
use paramprune::symdag::{op_counts_for_selection, trace_ddm, trace_idm};
use paramprune::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "paramprune", version, about = "Parameter reduction of multibody dynamic models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or export a model description.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Optimize excitation trajectories.
    #[command(subcommand)]
    Traj(TrajCmd),
    /// Sample datasets and assemble regression problems.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Run one selection heuristic on an assembled problem.
    Reduce(ReduceArgs),
    /// Operation counts of a reduced model.
    Opcount(OpcountArgs),
    /// Curves, orderings and summary tables from saved artifacts.
    Report(ReportArgs),
    /// End-to-end runs.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Subcommand)]
enum ModelCmd {
    Build {
        /// puma560 or hexaglide.
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum TrajCmd {
    Optimize {
        /// Model file or built-in name.
        #[arg(long)]
        model: String,
        /// Excitation config JSON; defaults to the model's standard setup.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    Sample {
        #[arg(long)]
        model: String,
        #[arg(long)]
        traj: PathBuf,
        /// Samples per trajectory; defaults to the model's standard setup.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weighted, compressed estimation and validation problems.
    Assemble {
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    heuristic: Heuristic,
    #[arg(long, default_value_t = 1e-2)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OpcountArgs {
    #[arg(long)]
    model: String,
    /// Trace JSON whose k-parameter model is counted.
    #[arg(long)]
    selected: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write straight-line listings of the reduced functions to this directory.
    #[arg(long)]
    emit_source: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "trace", required = true)]
    traces: Vec<PathBuf>,
    /// Model size for the summary row; defaults to 18 (open chain) or 17 (closed loop).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = RANK_TOL)]
    rank_tol: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum PipelineCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn mechanism(spec: &str) -> anyhow::Result<Mechanism> {
    let model = pipeline::resolve_model(spec).with_context(|| format!("loading model `{spec}`"))?;
    Ok(Mechanism::new(model)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Model(ModelCmd::Build { name, out }) => {
            let model = match name.as_str() {
                "puma560" | "puma" => paramprune::mbmodel::build_puma560(),
                "hexaglide" => paramprune::mbmodel::build_hexaglide(),
                _ => return Err(Error::Invalid(format!("unknown built-in model `{name}`")).into()),
            };
            model.validate()?;
            model.save(&out)?;
        }
        Command::Traj(TrajCmd::Optimize { model, config, seed, out }) => {
            let mech = mechanism(&model)?;
            let cfg = match config {
                Some(p) => jsonio::read_file::<ExcitationConfig>(&p)?,
                None => ExcitationConfig::for_mechanism(&mech),
            };
            let set = optimize_set(&mech, &cfg, seed)?;
            jsonio::write_file(&out, &set)?;
            let k: Vec<f64> = set.estimation.iter().map(|o| o.kappa).collect();
            eprintln!("optimized {} + {} trajectories, kappa {:?}", set.estimation.len(), set.validation.len(), k);
        }
        Command::Dataset(DatasetCmd::Sample { model, traj, samples, out }) => {
            let mech = mechanism(&model)?;
            let set: TrajectorySet = jsonio::read_file(&traj)?;
            let n = samples.unwrap_or_else(|| ExcitationConfig::for_mechanism(&mech).samples_per_traj);
            Dataset::sample(&mech, &set, n)?.write_csv(&out)?;
        }
        Command::Dataset(DatasetCmd::Assemble { model, data, out }) => {
            let mech = mechanism(&model)?;
            let ds = Dataset::read_csv(&data)?;
            let est = RegressionProblem::assemble(&mech, &ds.estimation)?.compress();
            let val = if ds.validation.is_empty() {
                None
            } else {
                Some(RegressionProblem::assemble(&mech, &ds.validation)?.compress())
            };
            ProblemFile { estimation: est, validation: val, phi_full: mech.phi_full().values }.save(&out)?;
        }
        Command::Reduce(a) => {
            if !(a.tol > 0.0 && a.tol < 1.0) {
                bail!(Error::Invalid(format!("tol must lie in (0, 1), got {}", a.tol)));
            }
            let p = ProblemFile::load(&a.problem)?;
            let trace = heuristics::run(a.heuristic, &p.estimation, p.validation.as_ref(), a.tol);
            jsonio::write_file(&a.out, &trace)?;
            eprintln!("{}: tolerance reached at k = {:?}", a.heuristic, trace.reached_k);
        }
        Command::Opcount(a) => opcount(a)?,
        Command::Report(a) => {
            let mech = mechanism(&a.model)?;
            let ds = Dataset::read_csv(&a.data)?;
            let traces = a.traces.iter().map(|p| jsonio::read_file(p)).collect::<Result<Vec<SelectionTrace>, _>>()?;
            let eval = Evaluation::new(&mech, &ds, a.rank_tol, None)?;
            let k = a.k.unwrap_or_else(|| pipeline::default_summary_k(&mech));
            let name = Path::new(&a.model).file_stem().map_or(a.model.clone(), |s| s.to_string_lossy().into_owned());
            pipeline::write_reports(&eval, &name, &traces, k, &a.out_dir)?;
        }
        Command::Pipeline(PipelineCmd::Run { config }) => {
            let cfg = PipelineConfig::load(&config)?;
            let out = pipeline::run_pipeline(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&out.summary)?);
        }
    }
    Ok(())
}

fn opcount(a: OpcountArgs) -> anyhow::Result<()> {
    let mech = mechanism(&a.model)?;
    let trace: SelectionTrace = jsonio::read_file(&a.selected)?;
    if a.k > trace.n_params() {
        bail!(Error::Invalid(format!("k = {} exceeds the {} traced parameters", a.k, trace.n_params())));
    }
    let selected: Vec<String> = trace.selection(a.k).iter().map(|&i| trace_label(&trace, i)).collect();
    let idm = trace_idm(&mech).simplify();
    let ddm = trace_ddm(&mech).simplify();
    let full = op_counts_for_selection(&idm, &ddm, &mech.labels)?;
    let reduced = op_counts_for_selection(&idm, &ddm, &selected)?;
    jsonio::write_file(&a.out, &json!({ "k": a.k, "selected": selected, "full": full, "reduced": reduced }))?;
    if let Some(dir) = a.emit_source {
        std::fs::create_dir_all(&dir)?;
        let zeros: HashMap<String, f64> =
            mech.labels.iter().filter(|l| !selected.contains(l)).map(|l| (l.clone(), 0.0)).collect();
        std::fs::write(dir.join("idm.txt"), idm.substitute_params(&zeros)?.simplify().emit_source())?;
        std::fs::write(dir.join("ddm.txt"), ddm.substitute_params(&zeros)?.simplify().emit_source())?;
    }
    Ok(())
}

/// Label of column `i`, recovered from the ordering.
fn trace_label(trace: &SelectionTrace, i: usize) -> String {
    let pos = trace.order.iter().position(|&o| o == i).expect("selection drawn from the ordering");
    trace.ordering[pos].clone()
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("PARAMPRUNE_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::Invalid(format!("PARAMPRUNE_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            bail!(Error::Invalid("PARAMPRUNE_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(err) if err.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
