//! End-to-end orchestration: ingest, partition, fit, solve, reconstruct, report.
//!
//! The in-memory stages ([`fit_stage`], [`solve_stage`], [`evaluate_stage`])
//! are what the file-based entry points compose. Outputs are deterministic for
//! a given configuration: customers are processed in parallel but every
//! result is keyed and emitted in customer-id order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disagg::{
    solve, solve_unpenalized, sweep_lambda, DisaggError, DisaggProblem, DisaggSolution, ExemplarSet, LambdaPoint,
    Orientation, SolverConfig,
};
use crate::gmm::{fit_select, points, EmOptions, FitReport, GmmError, GmmModel};
use crate::ingest::{parse_timestamp, read_series_file, GapPolicy, IngestError, TIMESTAMP_FORMAT};
use crate::metrics::{evaluate_customer, CustomerMetrics, ErrorReport, MetricsError};
use crate::rng::{label_tag, stream_seed};
use crate::series::{
    aggregate_monthly, derive_partition, negate_generation, DayNightPartition, HourMask, HourlySeries, Role,
    SeriesError, YearMonth,
};

/// Stage that failed; maps onto the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Ingest,
    Fit,
    Solve,
    Eval,
    Output,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Ingest | Stage::Config => 2,
            Stage::Fit => 3,
            Stage::Solve => 4,
            Stage::Eval | Stage::Output => 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("ingestion: {0}")]
    Ingest(#[from] IngestError),
    #[error("ingestion: {0}")]
    Series(#[from] SeriesError),
    #[error("ingestion: customer `{customer}` covers {start} + {hours} h, exemplars cover {expected_start} + {expected_hours} h")]
    Horizon {
        customer: String,
        start: chrono::NaiveDateTime,
        hours: usize,
        expected_start: chrono::NaiveDateTime,
        expected_hours: usize,
    },
    #[error("fit: {0}")]
    Fit(#[from] GmmError),
    #[error("fit: {0}")]
    FitInput(String),
    #[error("solve: customer `{customer}`: {source}")]
    Solve {
        customer: String,
        #[source]
        source: DisaggError,
    },
    #[error("solve: exemplars: {0}")]
    Exemplars(#[source] DisaggError),
    #[error("solve: {failed} customer(s) failed; see summary")]
    Customers { failed: usize },
    #[error("eval: customer `{customer}`: {source}")]
    Eval {
        customer: String,
        #[source]
        source: MetricsError,
    },
    #[error("eval: {0}")]
    EvalInput(String),
    #[error("output {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::Config(_) => Stage::Config,
            PipelineError::Ingest(_) | PipelineError::Series(_) | PipelineError::Horizon { .. } => Stage::Ingest,
            PipelineError::Fit(_) | PipelineError::FitInput(_) => Stage::Fit,
            PipelineError::Solve { .. } | PipelineError::Exemplars(_) | PipelineError::Customers { .. } => {
                Stage::Solve
            }
            PipelineError::Eval { .. } | PipelineError::EvalInput(_) => Stage::Eval,
            PipelineError::Output { .. } => Stage::Output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PartitionMode {
    /// Diurnal hours are those where average exemplar output exceeds `threshold` × the month's peak.
    Derived { threshold: f64 },
    /// Inclusive `[first, last]` diurnal hour per calendar month, January first.
    Fixed { windows: Vec<[u32; 2]> },
}

impl Default for PartitionMode {
    fn default() -> Self {
        PartitionMode::Derived { threshold: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmSettings {
    /// Candidate component counts, selected by BIC.
    pub candidates: Vec<usize>,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GmmSettings {
    fn default() -> Self {
        Self {
            candidates: (1..=8).collect(),
            restarts: 4,
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub lambda: f64,
    /// Enforce non-negative native demand as a hard constraint instead of the penalty.
    pub hard_constraint: bool,
    /// Also run the diagnostic penalty ladder for every customer.
    pub sweep: bool,
    pub lambda_ladder: Vec<f64>,
    pub starts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub distinct_floor: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let base = SolverConfig::default();
        Self {
            lambda: 1.0,
            hard_constraint: false,
            sweep: false,
            lambda_ladder: vec![0.1, 1.0, 10.0, 100.0],
            starts: base.starts,
            tol: base.tol,
            max_iter: base.max_iter,
            distinct_floor: base.distinct_floor,
        }
    }
}

impl SolverSettings {
    pub fn solver_config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            starts: self.starts,
            tol: self.tol,
            max_iter: self.max_iter,
            seed,
            distinct_floor: self.distinct_floor,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputPaths {
    /// Native demand of customers without PV.
    pub native: Option<PathBuf>,
    /// Exemplar generation in raw meter convention (production positive).
    pub exemplars: Option<PathBuf>,
    /// Net demand of customers with PV.
    pub net: Option<PathBuf>,
    /// Saved mixture model, used instead of fitting.
    pub model: Option<PathBuf>,
    /// Saved partition, used instead of deriving one.
    pub partition: Option<PathBuf>,
    /// Actual generation (raw convention) for evaluation.
    pub actual_generation: Option<PathBuf>,
    /// Actual native demand for evaluation.
    pub actual_native: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub inputs: InputPaths,
    /// Orientation label per exemplar, in input order (metadata only).
    pub exemplar_orientations: Vec<Orientation>,
    pub partition: PartitionMode,
    pub gmm: GmmSettings,
    pub solver: SolverSettings,
    pub gaps: GapPolicy,
    /// Worker threads; `None` uses all available cores.
    pub workers: Option<usize>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: InputPaths::default(),
            exemplar_orientations: Vec::new(),
            partition: PartitionMode::default(),
            gmm: GmmSettings::default(),
            solver: SolverSettings::default(),
            gaps: GapPolicy::default(),
            workers: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if let PartitionMode::Derived { threshold } = self.partition {
            if !(threshold > 0.0 && threshold < 1.0) {
                return bad(format!("partition threshold {threshold} must be in (0, 1)"));
            }
        }
        if let PartitionMode::Fixed { windows } = &self.partition {
            if windows.len() != 12 {
                return bad(format!("fixed partition needs 12 windows, got {}", windows.len()));
            }
        }
        if self.gmm.candidates.is_empty() || self.gmm.candidates.contains(&0) {
            return bad("GMM candidates must be non-empty positive counts".into());
        }
        if !(self.gmm.tol > 0.0) || self.gmm.max_iter == 0 {
            return bad("GMM tolerance and iteration cap must be positive".into());
        }
        let s = &self.solver;
        if !(s.lambda.is_finite() && s.lambda >= 0.0) || s.lambda_ladder.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("penalty weights must be finite and non-negative".into());
        }
        if s.starts == 0 || !(s.tol > 0.0) || s.max_iter == 0 || !(s.distinct_floor >= 0.0) {
            return bad("solver starts, tolerance and iteration cap must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("worker count must be positive".into());
        }
        for (name, path) in [
            ("native", &self.inputs.native),
            ("exemplars", &self.inputs.exemplars),
            ("net", &self.inputs.net),
            ("model", &self.inputs.model),
            ("partition", &self.inputs.partition),
            ("actual_generation", &self.inputs.actual_generation),
            ("actual_native", &self.inputs.actual_native),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return bad(format!("{name} input {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }

    fn gmm_options(&self) -> EmOptions {
        EmOptions {
            tol: self.gmm.tol,
            max_iter: self.gmm.max_iter,
            seed: stream_seed(self.seed, label_tag("gmm"), 0),
        }
    }
}

/// Runs `f` on a pool of `workers` threads (or the global pool).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

fn read(path: &Path, role: Role, gaps: GapPolicy) -> Result<Vec<HourlySeries>, PipelineError> {
    let ingested = read_series_file(path, Some(role), gaps)?;
    for s in &ingested {
        if !s.filled.is_empty() {
            log::warn!("`{}`: interpolated {} missing hour(s)", s.series.customer_id(), s.filled.len());
        }
    }
    Ok(ingested.into_iter().map(|s| s.series).collect())
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, PipelineError> {
    path.as_deref()
        .ok_or_else(|| PipelineError::Config(format!("missing {what} input path")))
}

/// Reads raw exemplar generation and converts it to the internal (non-positive) convention.
pub fn load_exemplars(cfg: &RunConfig) -> Result<Vec<HourlySeries>, PipelineError> {
    let raw = read(require(&cfg.inputs.exemplars, "exemplars")?, Role::Generation, cfg.gaps)?;
    Ok(raw.iter().map(negate_generation).collect::<Result<_, _>>()?)
}

pub fn exemplar_set(exemplars: Vec<HourlySeries>, orientations: &[Orientation], partition: &DayNightPartition) -> Result<ExemplarSet, PipelineError> {
    let labels = if orientations.is_empty() {
        vec![Orientation::Unknown; exemplars.len()]
    } else {
        orientations.to_vec()
    };
    ExemplarSet::new(exemplars, labels)
        .and_then(|e| e.with_partition(partition))
        .map_err(PipelineError::Exemplars)
}

/// Every net-metered series must share the exemplars' horizon.
pub fn check_horizons(net: &[HourlySeries], exemplars: &[HourlySeries]) -> Result<(), PipelineError> {
    let Some(reference) = exemplars.first() else {
        return Ok(());
    };
    for s in net.iter().chain(exemplars) {
        if !s.same_horizon(reference) {
            return Err(PipelineError::Horizon {
                customer: s.customer_id().to_string(),
                start: s.start(),
                hours: s.len(),
                expected_start: reference.start(),
                expected_hours: reference.len(),
            });
        }
    }
    Ok(())
}

pub fn build_partition(exemplars: &[HourlySeries], mode: &PartitionMode) -> Result<DayNightPartition, PipelineError> {
    Ok(match mode {
        PartitionMode::Derived { threshold } => derive_partition(exemplars, *threshold)?,
        PartitionMode::Fixed { windows } => {
            let mut masks = [HourMask::empty(); 12];
            for (m, [first, last]) in masks.iter_mut().zip(windows) {
                *m = HourMask::range(*first, *last)?;
            }
            DayNightPartition::fixed(masks)?
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutput {
    pub model: GmmModel,
    pub report: FitReport,
    pub samples: usize,
    /// Partial months dropped per customer.
    pub partial_months: BTreeMap<String, Vec<YearMonth>>,
}

/// Fits the demand mixture to the monthly (nocturnal, diurnal) pairs of every non-PV customer.
pub fn fit_stage(native: &[HourlySeries], partition: &DayNightPartition, settings: &GmmSettings, opts: &EmOptions) -> Result<FitOutput, PipelineError> {
    if native.is_empty() {
        return Err(PipelineError::FitInput("no native-demand customers to fit".into()));
    }
    let mut pairs = Vec::new();
    let mut partial_months = BTreeMap::new();
    for s in native {
        match aggregate_monthly(s, partition) {
            Ok(agg) => {
                if !agg.partial.is_empty() {
                    partial_months.insert(s.customer_id().to_string(), agg.partial);
                }
                pairs.extend(agg.pairs);
            }
            Err(SeriesError::NoCompleteMonths { id }) => {
                log::warn!("native customer `{id}` covers no complete month; skipped");
            }
            Err(e) => return Err(e.into()),
        }
    }
    let samples = points(&pairs);
    let (model, report) = fit_select(&samples, &settings.candidates, settings.restarts, opts)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(FitOutput {
        model,
        report,
        samples: samples.len(),
        partial_months,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CustomerResult {
    pub customer_id: String,
    pub net: HourlySeries,
    pub solution: DisaggSolution,
    pub partial_months: Vec<YearMonth>,
    pub sweep: Option<Vec<LambdaPoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerFailure {
    pub customer_id: String,
    pub stage: Stage,
    pub message: String,
}

fn solve_one(
    net: &HourlySeries,
    exemplars: &ExemplarSet,
    model: &GmmModel,
    partition: &DayNightPartition,
    settings: &SolverSettings,
    seed: u64,
) -> Result<CustomerResult, DisaggError> {
    let partial_months = aggregate_monthly(net, partition)?.partial;
    let problem = DisaggProblem::new(net, exemplars, model, partition, settings.lambda)?;
    let config = settings.solver_config(seed);
    let solution = if settings.hard_constraint {
        solve_unpenalized(&problem, &config)?
    } else {
        solve(&problem, &config)?
    };
    let sweep = if settings.sweep {
        Some(sweep_lambda(&problem, &settings.lambda_ladder, &config)?)
    } else {
        None
    };
    Ok(CustomerResult {
        customer_id: net.customer_id().to_string(),
        net: net.clone(),
        solution,
        partial_months,
        sweep,
    })
}

/// Solves every customer in parallel; results are ordered by customer id.
pub fn solve_stage(
    net: &[HourlySeries],
    exemplars: &ExemplarSet,
    model: &GmmModel,
    partition: &DayNightPartition,
    settings: &SolverSettings,
    seed: u64,
) -> (Vec<CustomerResult>, Vec<CustomerFailure>) {
    let mut outcomes: Vec<(String, Result<CustomerResult, DisaggError>)> = net
        .par_iter()
        .map(|n| {
            (
                n.customer_id().to_string(),
                solve_one(n, exemplars, model, partition, settings, seed),
            )
        })
        .collect();
    outcomes.sort_by(|a, b| a.0.cmp(&b.0));
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (customer_id, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => {
                log::error!("customer `{customer_id}`: {e}");
                failures.push(CustomerFailure {
                    customer_id,
                    stage: Stage::Solve,
                    message: e.to_string(),
                });
            }
        }
    }
    (results, failures)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: ErrorReport,
    pub median_generation_mape: f64,
    pub median_native_mape: f64,
    /// Customers without any actual generation, for which MAPE is undefined.
    pub skipped: Vec<String>,
}

/// Scores estimates against actuals. `actual_generation` is in raw convention;
/// estimates are converted from the internal sign before comparison.
pub fn evaluate_stage(
    estimates: &[(HourlySeries, HourlySeries)],
    actual_generation: &[HourlySeries],
    actual_native: &[HourlySeries],
) -> Result<Evaluation, PipelineError> {
    let gen_by_id: BTreeMap<&str, &HourlySeries> = actual_generation.iter().map(|s| (s.customer_id(), s)).collect();
    let native_by_id: BTreeMap<&str, &HourlySeries> = actual_native.iter().map(|s| (s.customer_id(), s)).collect();
    let mut rows: Vec<CustomerMetrics> = Vec::new();
    let mut skipped = Vec::new();
    for (gen_est, native_est) in estimates {
        let id = gen_est.customer_id();
        let missing = || PipelineError::EvalInput(format!("no actuals for customer `{id}`"));
        let ag = gen_by_id.get(id).ok_or_else(missing)?;
        let an = native_by_id.get(id).ok_or_else(missing)?;
        if ag.values().iter().all(|v| *v == 0.0) {
            skipped.push(id.to_string());
            continue;
        }
        let raw_est = gen_est.with_values(gen_est.values().iter().map(|v| 0.0 - v).collect(), Role::Generation)?;
        let metrics = evaluate_customer(ag, &raw_est, an, native_est).map_err(|source| PipelineError::Eval {
            customer: id.to_string(),
            source,
        })?;
        rows.push(metrics);
    }
    if rows.is_empty() {
        return Err(PipelineError::EvalInput("no customer with actual generation to evaluate".into()));
    }
    let report = ErrorReport::new(rows).map_err(|source| PipelineError::Eval {
        customer: String::new(),
        source,
    })?;
    let (median_generation_mape, median_native_mape) = report.median_mape();
    Ok(Evaluation {
        report,
        median_generation_mape,
        median_native_mape,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub components: usize,
    pub samples: usize,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub bic: Vec<crate::gmm::BicScore>,
    pub warnings: Vec<String>,
}

/// Per-customer sidecar and summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerSummary {
    pub customer_id: String,
    pub omega: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub negative_native_count: usize,
    pub lambda: f64,
    pub kkt_residual: f64,
    pub hard_constraint: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partial_months: Vec<YearMonth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub model: Option<ModelSummary>,
    pub customers: Vec<CustomerSummary>,
    pub failures: Vec<CustomerFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<Evaluation>,
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|source| PipelineError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn customer_summary(r: &CustomerResult, hard: bool) -> CustomerSummary {
    let s = &r.solution;
    CustomerSummary {
        customer_id: r.customer_id.clone(),
        omega: s.weights.clone(),
        objective: s.objective,
        converged: s.diagnostics.converged,
        iterations: s.diagnostics.iterations,
        negative_native_count: s.negative_native_count,
        lambda: s.lambda,
        kkt_residual: s.diagnostics.kkt_residual,
        hard_constraint: hard,
        partial_months: r.partial_months.clone(),
    }
}

/// `timestamp,net_kwh,gen_est_kwh,native_est_kwh`, generation in raw (positive) convention.
pub fn customer_csv(r: &CustomerResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["timestamp", "net_kwh", "gen_est_kwh", "native_est_kwh"])
        .expect("in-memory write");
    let (g, p) = (r.solution.generation.values(), r.solution.native.values());
    for (t, (ts, net)) in r.net.iter().enumerate() {
        w.write_record([
            ts.format(TIMESTAMP_FORMAT).to_string(),
            net.to_string(),
            (0.0 - g[t]).to_string(),
            p[t].to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Reads a per-customer CSV back into (generation in internal convention, native) series.
pub fn read_customer_csv(path: &Path, customer_id: &str) -> Result<(HourlySeries, HourlySeries), PipelineError> {
    let bad = |m: String| PipelineError::EvalInput(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let (mut start, mut gen, mut native) = (None, Vec::new(), Vec::new());
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let field = |k: usize| row.get(k).ok_or_else(|| bad(format!("row {} is short", i + 2)));
        if start.is_none() {
            start = Some(parse_timestamp(field(0)?).ok_or_else(|| bad("bad timestamp".into()))?);
        }
        let num = |k: usize| -> Result<f64, PipelineError> {
            field(k)?.parse::<f64>().map_err(|e| bad(format!("row {}: {e}", i + 2)))
        };
        gen.push(0.0 - num(2)?);
        native.push(num(3)?);
    }
    let start = start.ok_or_else(|| bad("no rows".into()))?;
    Ok((
        HourlySeries::new(customer_id, start, gen, Role::Generation)?,
        HourlySeries::new(customer_id, start, native, Role::Native)?,
    ))
}

pub mod outputs {
    pub const MODEL: &str = "model.json";
    pub const PARTITION: &str = "partition.json";
    pub const FIT_REPORT: &str = "fit_report.json";
    pub const SUMMARY: &str = "summary.json";
    pub const CUSTOMERS: &str = "customers";
    pub const EVALUATION: &str = "evaluation.json";
    pub const EVALUATION_CSV: &str = "evaluation.csv";
    pub const LAMBDA_SWEEP: &str = "lambda_sweep.json";
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn partition_from_inputs(cfg: &RunConfig, exemplars: &[HourlySeries]) -> Result<DayNightPartition, PipelineError> {
    match &cfg.inputs.partition {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
        }
        None => build_partition(exemplars, &cfg.partition),
    }
}

/// Artifacts of the fit stage, written to `out_dir`.
pub fn run_fit(cfg: &RunConfig) -> Result<(GmmModel, FitOutput, DayNightPartition), PipelineError> {
    cfg.validate()?;
    with_workers(cfg.workers, || {
        let exemplars = load_exemplars(cfg)?;
        let native = read(require(&cfg.inputs.native, "native")?, Role::Native, cfg.gaps)?;
        let partition = partition_from_inputs(cfg, &exemplars)?;
        let fit = fit_stage(&native, &partition, &cfg.gmm, &cfg.gmm_options())?;
        ensure_dir(&cfg.out_dir)?;
        write_file(&cfg.out_dir.join(outputs::MODEL), &(fit.model.to_json() + "\n"))?;
        write_file(&cfg.out_dir.join(outputs::PARTITION), &json(&partition))?;
        write_file(&cfg.out_dir.join(outputs::FIT_REPORT), &json(&fit.report))?;
        Ok((fit.model.clone(), fit, partition))
    })
}

fn model_summary(fit: &FitOutput) -> ModelSummary {
    ModelSummary {
        components: fit.model.len(),
        samples: fit.samples,
        log_likelihood: fit.report.log_likelihood,
        iterations: fit.report.iterations,
        converged: fit.report.converged,
        bic: fit.report.bic.clone(),
        warnings: fit.report.warnings.clone(),
    }
}

fn load_model(path: &Path) -> Result<GmmModel, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    GmmModel::from_json(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// Solve stage against a model: writes per-customer outputs, the summary and,
/// when actuals are configured, the evaluation.
fn solve_and_report(
    cfg: &RunConfig,
    model: &GmmModel,
    model_summary: Option<ModelSummary>,
    exemplars: Vec<HourlySeries>,
    partition: &DayNightPartition,
) -> Result<RunSummary, PipelineError> {
    let net = read(require(&cfg.inputs.net, "net")?, Role::Net, cfg.gaps)?;
    check_horizons(&net, &exemplars)?;
    let set = exemplar_set(exemplars, &cfg.exemplar_orientations, partition)?;
    let (results, failures) = solve_stage(&net, &set, model, partition, &cfg.solver, cfg.seed);

    let dir = cfg.out_dir.join(outputs::CUSTOMERS);
    ensure_dir(&dir)?;
    for r in &results {
        write_file(&dir.join(format!("{}.csv", r.customer_id)), &customer_csv(r))?;
        write_file(
            &dir.join(format!("{}.json", r.customer_id)),
            &json(&customer_summary(r, cfg.solver.hard_constraint)),
        )?;
    }
    if cfg.solver.sweep {
        let sweep: BTreeMap<&str, &Vec<LambdaPoint>> = results
            .iter()
            .filter_map(|r| r.sweep.as_ref().map(|s| (r.customer_id.as_str(), s)))
            .collect();
        write_file(&cfg.out_dir.join(outputs::LAMBDA_SWEEP), &json(&sweep))?;
    }

    let evaluation = match (&cfg.inputs.actual_generation, &cfg.inputs.actual_native) {
        (Some(g), Some(n)) => {
            let ag = read(g, Role::Generation, cfg.gaps)?;
            let an = read(n, Role::Native, cfg.gaps)?;
            let est: Vec<(HourlySeries, HourlySeries)> = results
                .iter()
                .map(|r| (r.solution.generation.clone(), r.solution.native.clone()))
                .collect();
            let ev = evaluate_stage(&est, &ag, &an)?;
            write_evaluation(&cfg.out_dir, &ev)?;
            Some(ev)
        }
        (None, None) => None,
        _ => return Err(PipelineError::Config("evaluation needs both actual generation and actual native".into())),
    };

    let summary = RunSummary {
        seed: cfg.seed,
        model: model_summary,
        customers: results.iter().map(|r| customer_summary(r, cfg.solver.hard_constraint)).collect(),
        failures,
        evaluation,
    };
    write_file(&cfg.out_dir.join(outputs::SUMMARY), &json(&summary))?;
    if !summary.failures.is_empty() {
        return Err(PipelineError::Customers {
            failed: summary.failures.len(),
        });
    }
    Ok(summary)
}

fn write_evaluation(dir: &Path, ev: &Evaluation) -> Result<(), PipelineError> {
    write_file(&dir.join(outputs::EVALUATION), &json(ev))?;
    let mut buf = Vec::new();
    ev.report.write_csv(&mut buf).expect("in-memory write");
    write_file(&dir.join(outputs::EVALUATION_CSV), &String::from_utf8(buf).expect("utf8"))
}

/// Full pipeline. With no net-metered input the run stops after the fit.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Option<RunSummary>, PipelineError> {
    let (model, fit, partition) = run_fit(cfg)?;
    let has_net = match &cfg.inputs.net {
        Some(p) => !read(p, Role::Net, cfg.gaps)?.is_empty(),
        None => false,
    };
    if !has_net {
        log::info!("no net-metered customers; stopping after the fit");
        return Ok(None);
    }
    with_workers(cfg.workers, || {
        let exemplars = load_exemplars(cfg)?;
        solve_and_report(cfg, &model, Some(model_summary(&fit)), exemplars, &partition).map(Some)
    })
}

/// Solve stage from a saved model (and optionally a saved partition).
pub fn run_solve(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let model = load_model(require(&cfg.inputs.model, "model")?)?;
    with_workers(cfg.workers, || {
        let exemplars = load_exemplars(cfg)?;
        let partition = partition_from_inputs(cfg, &exemplars)?;
        ensure_dir(&cfg.out_dir)?;
        solve_and_report(cfg, &model, None, exemplars, &partition)
    })
}

/// Evaluates per-customer CSVs in `run_dir` against actuals.
pub fn run_eval(cfg: &RunConfig, run_dir: &Path) -> Result<Evaluation, PipelineError> {
    cfg.validate()?;
    let ag = read(require(&cfg.inputs.actual_generation, "actual generation")?, Role::Generation, cfg.gaps)?;
    let an = read(require(&cfg.inputs.actual_native, "actual native")?, Role::Native, cfg.gaps)?;
    let dir = run_dir.join(outputs::CUSTOMERS);
    let mut est = Vec::new();
    for actual in &ag {
        let path = dir.join(format!("{}.csv", actual.customer_id()));
        if path.exists() {
            est.push(read_customer_csv(&path, actual.customer_id())?);
        }
    }
    let ev = evaluate_stage(&est, &ag, &an)?;
    ensure_dir(&cfg.out_dir)?;
    write_evaluation(&cfg.out_dir, &ev)?;
    Ok(ev)
}

/// Penalty ladder per customer; model from `inputs.model` or fitted on the fly.
pub fn run_sweep(cfg: &RunConfig) -> Result<BTreeMap<String, Vec<LambdaPoint>>, PipelineError> {
    cfg.validate()?;
    let model = match &cfg.inputs.model {
        Some(p) => load_model(p)?,
        None => run_fit(cfg)?.0,
    };
    with_workers(cfg.workers, || {
        let exemplars = load_exemplars(cfg)?;
        let partition = partition_from_inputs(cfg, &exemplars)?;
        let net = read(require(&cfg.inputs.net, "net")?, Role::Net, cfg.gaps)?;
        check_horizons(&net, &exemplars)?;
        let set = exemplar_set(exemplars, &cfg.exemplar_orientations, &partition)?;
        let config = cfg.solver.solver_config(cfg.seed);
        let sweeps: Vec<(String, Result<Vec<LambdaPoint>, DisaggError>)> = net
            .par_iter()
            .map(|n| {
                let out = DisaggProblem::new(n, &set, &model, &partition, cfg.solver.lambda)
                    .and_then(|p| sweep_lambda(&p, &cfg.solver.lambda_ladder, &config));
                (n.customer_id().to_string(), out)
            })
            .collect();
        let mut map = BTreeMap::new();
        for (id, r) in sweeps {
            let points = r.map_err(|source| PipelineError::Solve {
                customer: id.clone(),
                source,
            })?;
            map.insert(id, points);
        }
        ensure_dir(&cfg.out_dir)?;
        write_file(&cfg.out_dir.join(outputs::LAMBDA_SWEEP), &json(&map))?;
        Ok(map)
    })
}
