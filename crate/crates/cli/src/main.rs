//! `btm`: disaggregate behind-the-meter PV generation and native demand from net readings.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use btm_core::pipeline::{
    run_eval, run_fit, run_pipeline, run_solve, run_sweep, Evaluation, PartitionMode, PipelineError, RunConfig,
    RunSummary,
};
use btm_core::synth::{generate, ScenarioConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "btm", version, about)]
struct Cli {
    /// JSON configuration; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for every output artifact.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit, solve every customer, reconstruct and report.
    Run(RunArgs),
    /// Fit the demand mixture only.
    Fit(RunArgs),
    /// Solve every customer against a saved model.
    Solve(RunArgs),
    /// Generate a synthetic feeder with ground truth.
    Synth,
    /// Score a previous run's per-customer estimates against actuals.
    Eval(EvalArgs),
    /// Solve every customer over a ladder of penalty weights.
    SweepLambda(RunArgs),
}

#[derive(Debug, Args, Default)]
struct RunArgs {
    /// Native demand of customers without PV.
    #[arg(long)]
    native: Option<PathBuf>,
    /// Exemplar generation, production positive.
    #[arg(long)]
    exemplars: Option<PathBuf>,
    /// Net demand of customers with PV.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Saved model from `fit`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Saved partition from `fit`.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Actual generation for evaluation, production positive.
    #[arg(long)]
    actual_generation: Option<PathBuf>,
    /// Actual native demand for evaluation.
    #[arg(long)]
    actual_native: Option<PathBuf>,
    /// Derived-partition threshold as a fraction of the monthly peak.
    #[arg(long, conflicts_with = "fixed_window")]
    threshold: Option<f64>,
    /// Same diurnal window every month, `FIRST-LAST` inclusive hours.
    #[arg(long, value_parser = parse_window)]
    fixed_window: Option<[u32; 2]>,
    /// Candidate mixture sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    components: Option<Vec<usize>>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Penalty weight on negative native demand.
    #[arg(long)]
    lambda: Option<f64>,
    /// Forbid negative native demand instead of penalizing it.
    #[arg(long)]
    hard_constraint: bool,
    /// Also record the penalty ladder per customer.
    #[arg(long)]
    sweep: bool,
    /// Penalty ladder, comma separated.
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<f64>>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Output directory of the run to score.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    actual_generation: Option<PathBuf>,
    #[arg(long)]
    actual_native: Option<PathBuf>,
}

fn parse_window(s: &str) -> Result<[u32; 2], String> {
    let (a, b) = s.split_once('-').ok_or("expected FIRST-LAST")?;
    let parse = |x: &str| x.trim().parse::<u32>().map_err(|e| e.to_string());
    Ok([parse(a)?, parse(b)?])
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, PipelineError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

impl RunArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let inputs = &mut cfg.inputs;
        set_path(&mut inputs.native, self.native);
        set_path(&mut inputs.exemplars, self.exemplars);
        set_path(&mut inputs.net, self.net);
        set_path(&mut inputs.model, self.model);
        set_path(&mut inputs.partition, self.partition);
        set_path(&mut inputs.actual_generation, self.actual_generation);
        set_path(&mut inputs.actual_native, self.actual_native);
        if let Some(threshold) = self.threshold {
            cfg.partition = PartitionMode::Derived { threshold };
        }
        if let Some(w) = self.fixed_window {
            cfg.partition = PartitionMode::Fixed { windows: vec![w; 12] };
        }
        set(&mut cfg.gmm.candidates, self.components);
        set(&mut cfg.gmm.restarts, self.restarts);
        set(&mut cfg.solver.lambda, self.lambda);
        cfg.solver.hard_constraint |= self.hard_constraint;
        cfg.solver.sweep |= self.sweep;
        set(&mut cfg.solver.lambda_ladder, self.ladder);
        set(&mut cfg.solver.starts, self.starts);
        set(&mut cfg.solver.tol, self.tol);
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
    }
}

fn print_summary(summary: &RunSummary) {
    let converged = summary.customers.iter().filter(|c| c.converged).count();
    println!(
        "solved {} customer(s), {} converged, {} failed",
        summary.customers.len(),
        converged,
        summary.failures.len()
    );
    if let Some(ev) = &summary.evaluation {
        print_evaluation(ev);
    }
}

fn print_evaluation(ev: &Evaluation) {
    println!(
        "median generation MAPE {:.2}%, median native MAPE {:.2}% over {} customer(s)",
        ev.median_generation_mape,
        ev.median_native_mape,
        ev.report.customers.len()
    );
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let config_path = cli.config.as_deref();
    if let Command::Synth = cli.command {
        let mut scenario: ScenarioConfig = read_config(config_path)?;
        set(&mut scenario.seed, cli.seed);
        let out = cli.out_dir.unwrap_or_else(|| PathBuf::from("scenario"));
        let sc = generate(&scenario).map_err(|e| PipelineError::Config(e.to_string()))?;
        sc.write(&out).map_err(|e| PipelineError::Config(e.to_string()))?;
        println!(
            "wrote {} native, {} exemplar and {} net series to {}",
            sc.native.len(),
            sc.exemplars.len(),
            sc.net.len(),
            out.display()
        );
        return Ok(());
    }

    let mut cfg: RunConfig = read_config(config_path)?;
    set(&mut cfg.out_dir, cli.out_dir);
    set(&mut cfg.seed, cli.seed);
    match cli.command {
        Command::Run(args) => {
            args.apply(&mut cfg);
            match run_pipeline(&cfg)? {
                Some(summary) => print_summary(&summary),
                None => println!("no net-metered customers; wrote the fitted model only"),
            }
        }
        Command::Fit(args) => {
            args.apply(&mut cfg);
            let (model, fit, _) = run_fit(&cfg)?;
            println!("fitted {} component(s) to {} monthly sample(s)", model.len(), fit.samples);
        }
        Command::Solve(args) => {
            args.apply(&mut cfg);
            print_summary(&run_solve(&cfg)?);
        }
        Command::SweepLambda(args) => {
            args.apply(&mut cfg);
            let sweeps = run_sweep(&cfg)?;
            for (id, points) in &sweeps {
                let counts: Vec<String> = points
                    .iter()
                    .map(|p| format!("{}:{}", p.lambda, p.negative_native_count))
                    .collect();
                println!("{id} {}", counts.join(" "));
            }
        }
        Command::Eval(args) => {
            set_path(&mut cfg.inputs.actual_generation, args.actual_generation);
            set_path(&mut cfg.inputs.actual_native, args.actual_native);
            print_evaluation(&run_eval(&cfg, &args.run_dir)?);
        }
        Command::Synth => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = e.stage();
            eprintln!("error [{}]: {e}", serde_json::to_value(stage).unwrap().as_str().unwrap());
            ExitCode::from(stage.exit_code() as u8)
        }
    }
}
