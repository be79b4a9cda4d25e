//! Command-line front end: preprocess, calibrate, run, simulate, metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rand_distr::{Distribution, Normal, Uniform};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analytics::{self, BatchSummary, MetricsReport, DEFAULT_SHIFT_THRESHOLD};
use crate::bank::{ItemBank, BANK_SCHEMA_VERSION};
use crate::calibration::{calibrate_bank, CalibrationConfig};
use crate::cat::{self, CatConfig, MANIFEST_SCHEMA_VERSION, SESSION_LOG_SCHEMA_VERSION};
use crate::data::{preprocess, FilterConfig, ResponseMatrix};
use crate::irt::{AbilityEstimate, InfoForm};
use crate::respondents::{
    load_item_content, ExternalResponder, ItemContent, MatrixResponder, Responder, ResponderSpec, SimulatedResponder,
    DEFAULT_EXTERNAL_TIMEOUT,
};
use crate::rng::substream;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CALIBRATION: i32 = 3;
pub const EXIT_NO_SESSIONS: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl fmt::Display) -> Self {
        Self { code: EXIT_INPUT, message: message.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = Result<T, CliError>;

fn version_string() -> &'static str {
    Box::leak(
        format!(
            "{}\nbank schema {BANK_SCHEMA_VERSION}\nsession log schema {SESSION_LOG_SCHEMA_VERSION}\nmanifest schema {MANIFEST_SCHEMA_VERSION}\nmetrics schema {}",
            env!("CARGO_PKG_VERSION"),
            analytics::METRICS_SCHEMA_VERSION
        )
        .into_boxed_str(),
    )
}

#[derive(Debug, Parser)]
#[command(name = "adaptest", version = version_string(), about = "IRT calibration and adaptive testing for benchmark item banks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Screen a response matrix for incomplete/extreme models and weak items.
    Preprocess(PreprocessArgs),
    /// Fit 3PL parameters by partition, link them, and score every model.
    Calibrate(CalibrateArgs),
    /// Run adaptive sessions against stored responses or an external command.
    Run(RunArgs),
    /// Run adaptive sessions for simulated respondents and report recovery.
    Simulate(SimulateArgs),
    /// Compute evaluation metrics over stored session logs.
    Metrics(MetricsArgs),
}

/// JSON configuration file; every section and key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub filter: FilterConfig,
    pub calibration: CalibrationConfig,
    pub cat: CatConfig,
}

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => read_json(p),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Writes pretty JSON and reads it back as `T` before returning.
fn write_json<T: Serialize + DeserializeOwned>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, &text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    read_json::<T>(path).map(|_| ())
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_matrix(path: &Path) -> CliResult<ResponseMatrix> {
    ResponseMatrix::load(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_bank(path: &Path) -> CliResult<ItemBank> {
    ItemBank::load(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Response matrix CSV (`model_id`, then one 0/1 column per item).
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of lowest-scoring models to drop.
    #[arg(long)]
    pub percentile_floor: Option<f64>,
    #[arg(long)]
    pub sd_floor: Option<f64>,
    #[arg(long)]
    pub acc_ceiling: Option<f64>,
    #[arg(long)]
    pub rpb_floor: Option<f64>,
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> CliResult<()> {
    let mut cfg = load_config(args.config.as_deref())?.filter;
    cfg.percentile_floor = args.percentile_floor.unwrap_or(cfg.percentile_floor);
    cfg.sd_floor = args.sd_floor.unwrap_or(cfg.sd_floor);
    cfg.acc_ceiling = args.acc_ceiling.unwrap_or(cfg.acc_ceiling);
    cfg.rpb_floor = args.rpb_floor.unwrap_or(cfg.rpb_floor);
    let matrix = load_matrix(&args.matrix)?;
    let (filtered, report) = preprocess(&matrix, &cfg).map_err(CliError::input)?;
    create_dir(&args.out)?;
    let csv_path = args.out.join("filtered.csv");
    filtered.save(&csv_path).map_err(CliError::input)?;
    load_matrix(&csv_path)?;
    write_json(&args.out.join("filter_report.json"), &report)?;
    log::info!(
        "retained {} of {} models and {} of {} items",
        report.retained_models,
        report.input_models,
        report.retained_items,
        report.input_items
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Items per partition (at least 100).
    #[arg(long)]
    pub partition_min_size: Option<usize>,
    #[arg(long)]
    pub max_em_iterations: Option<usize>,
    #[arg(long)]
    pub em_tolerance: Option<f64>,
    #[arg(long)]
    pub quadrature_nodes: Option<usize>,
    /// Disable the Beta prior on guessing.
    #[arg(long)]
    pub no_c_prior: bool,
    #[arg(long)]
    pub info_form: Option<InfoForm>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PartitionReport {
    partition: usize,
    items: usize,
    converged: bool,
    iterations: usize,
    degenerate_items: Vec<String>,
    final_objective: Option<f64>,
    final_log_likelihood: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RefRow {
    model_id: String,
    theta: f64,
    se: f64,
}

pub fn write_references(path: &Path, refs: &BTreeMap<String, AbilityEstimate>) -> CliResult<()> {
    let err = |e: csv::Error| CliError::input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for (id, est) in refs {
        w.serialize(RefRow { model_id: id.clone(), theta: est.theta, se: est.se }).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    read_references(path).map(|_| ())
}

/// `model_id,theta,se` CSV.
pub fn read_references(path: &Path) -> CliResult<BTreeMap<String, f64>> {
    let err = |e: csv::Error| CliError::input(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let mut out = BTreeMap::new();
    for row in r.deserialize::<RefRow>() {
        let row = row.map_err(err)?;
        if out.insert(row.model_id.clone(), row.theta).is_some() {
            return Err(CliError::input(format!("{}: duplicate model_id `{}`", path.display(), row.model_id)));
        }
    }
    Ok(out)
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<()> {
    let mut cfg = load_config(args.config.as_deref())?.calibration;
    cfg.partition_min_size = args.partition_min_size.unwrap_or(cfg.partition_min_size);
    cfg.max_em_iterations = args.max_em_iterations.unwrap_or(cfg.max_em_iterations);
    cfg.em_tolerance = args.em_tolerance.unwrap_or(cfg.em_tolerance);
    cfg.quadrature_nodes = args.quadrature_nodes.unwrap_or(cfg.quadrature_nodes);
    cfg.info_form = args.info_form.unwrap_or(cfg.info_form);
    if args.no_c_prior {
        cfg.c_prior = None;
    }
    cfg.validate().map_err(CliError::input)?;
    let matrix = load_matrix(&args.matrix)?;
    let cal = calibrate_bank(&matrix, &cfg).map_err(|e| CliError { code: EXIT_CALIBRATION, message: e.to_string() })?;
    for w in &cal.bank.metadata.warnings {
        log::warn!("{w}");
    }
    create_dir(&args.out)?;
    cal.bank.save(args.out.join("bank.json")).map_err(CliError::input)?;
    write_references(&args.out.join("refs.csv"), &cal.references)?;
    let report: Vec<PartitionReport> = cal
        .fits
        .iter()
        .enumerate()
        .map(|(k, f)| PartitionReport {
            partition: k,
            items: f.item_ids.len(),
            converged: f.converged,
            iterations: f.iterations,
            degenerate_items: f.degenerate_items.clone(),
            final_objective: f.objective_trace.last().copied(),
            final_log_likelihood: f.log_likelihood_trace.last().copied(),
        })
        .collect();
    write_json(&args.out.join("calibration_report.json"), &report)?;
    log::info!(
        "{} items in {} partitions, {} operational",
        cal.bank.len(),
        cal.bank.metadata.partitions,
        cal.bank.operational_count()
    );
    Ok(())
}

/// Adaptive-test flags shared by `run` and `simulate`.
#[derive(Debug, Clone, Default, Args)]
pub struct CatFlags {
    /// Stopping SE threshold(s); several values run one batch each.
    #[arg(long, value_delimiter = ',')]
    pub se_threshold: Vec<f64>,
    #[arg(long)]
    pub min_items: Option<usize>,
    #[arg(long)]
    pub max_items: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub info_form: Option<InfoForm>,
    #[arg(long)]
    pub quadrature_nodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl CatFlags {
    /// One configuration per threshold, flags over file over defaults.
    pub fn configs(&self) -> CliResult<Vec<CatConfig>> {
        let mut base = load_config(self.config.as_deref())?.cat;
        base.min_items = self.min_items.unwrap_or(base.min_items);
        base.max_items = self.max_items.unwrap_or(base.max_items);
        base.top_k = self.top_k.unwrap_or(base.top_k);
        base.info_form = self.info_form.unwrap_or(base.info_form);
        base.quadrature_nodes = self.quadrature_nodes.unwrap_or(base.quadrature_nodes);
        base.rng_seed = self.seed.unwrap_or(base.rng_seed);
        let thresholds = if self.se_threshold.is_empty() { vec![base.se_threshold] } else { self.se_threshold.clone() };
        thresholds
            .into_iter()
            .map(|t| {
                let c = CatConfig { se_threshold: t, ..base.clone() };
                c.validate().map(|_| c).map_err(CliError::input)
            })
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// Replay responses from this matrix.
    #[arg(long, conflicts_with_all = ["responders", "external_cmd"])]
    pub matrix: Option<PathBuf>,
    /// Restrict matrix replay to these model ids.
    #[arg(long, value_delimiter = ',', requires = "matrix")]
    pub models: Vec<String>,
    /// JSON list of responder specifications.
    #[arg(long, conflicts_with = "external_cmd")]
    pub responders: Option<PathBuf>,
    /// Shell command answering one item; `{item_id}` and `{respondent_id}` are substituted.
    #[arg(long, requires = "respondent")]
    pub external_cmd: Option<String>,
    /// Respondent ids for the external command.
    #[arg(long, value_delimiter = ',')]
    pub respondent: Vec<String>,
    #[arg(long)]
    pub items_content: Option<PathBuf>,
    /// Per-item timeout of the external command, in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Reference abilities (`model_id,theta,se`) for MAE rows.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    #[command(flatten)]
    pub cat: CatFlags,
    #[arg(long)]
    pub out: PathBuf,
}

/// One Table-style line per threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub se_threshold: f64,
    pub n_sessions: usize,
    pub completed: usize,
    pub converged_fraction: f64,
    pub avg_items: f64,
    pub mae: Option<f64>,
    pub sessions_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rows: Vec<SummaryRow>,
}

type ResponderFactory<'a> = dyn Fn() -> CliResult<Vec<Box<dyn Responder>>> + 'a;

fn threshold_dir(out: &Path, n_configs: usize, cfg: &CatConfig) -> PathBuf {
    if n_configs == 1 {
        out.to_path_buf()
    } else {
        out.join(format!("se_{}", cfg.se_threshold))
    }
}

/// Runs one batch per configuration and writes logs, manifests and a summary.
fn run_batches(
    bank: Arc<ItemBank>,
    configs: &[CatConfig],
    make: &ResponderFactory<'_>,
    refs: Option<&BTreeMap<String, f64>>,
    out: &Path,
) -> CliResult<(RunSummary, Vec<cat::BatchResult>)> {
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for cfg in configs {
        let dir = threshold_dir(out, configs.len(), cfg);
        let sessions_dir = dir.join("sessions");
        create_dir(&sessions_dir)?;
        let result = cat::batch_run(Arc::clone(&bank), cfg, make()?).map_err(CliError::input)?;
        cat::write_session_logs(&result.outcomes, &sessions_dir).map_err(CliError::input)?;
        write_json(&dir.join("manifest.json"), &result.manifest)?;
        for o in result.outcomes.iter().filter(|o| !o.completed()) {
            log::warn!("session `{}` aborted: {}", o.respondent_id, o.error.as_deref().unwrap_or(""));
        }
        let completed: Vec<&cat::SessionOutcome> = result.outcomes.iter().filter(|o| o.completed()).collect();
        let mae = match refs {
            Some(r) if !completed.is_empty() => {
                let est: BTreeMap<String, f64> =
                    completed.iter().filter(|o| r.contains_key(&o.respondent_id)).map(|o| (o.respondent_id.clone(), o.estimate.theta)).collect();
                let sub: BTreeMap<String, f64> = est.keys().map(|k| (k.clone(), r[k])).collect();
                if est.len() < completed.len() {
                    log::warn!("{} completed sessions have no reference ability", completed.len() - est.len());
                }
                analytics::mae(&est, &sub).ok()
            }
            _ => None,
        };
        let n = completed.len();
        rows.push(SummaryRow {
            se_threshold: cfg.se_threshold,
            n_sessions: result.outcomes.len(),
            completed: n,
            converged_fraction: if n == 0 {
                0.0
            } else {
                completed.iter().filter(|o| o.status == cat::SessionStatus::Converged).count() as f64 / n as f64
            },
            avg_items: if n == 0 { 0.0 } else { completed.iter().map(|o| o.record.len()).sum::<usize>() as f64 / n as f64 },
            mae,
            sessions_dir: sessions_dir.strip_prefix(out).unwrap_or(&sessions_dir).display().to_string(),
        });
        results.push(result);
    }
    let summary = RunSummary { rows };
    write_json(&out.join("summary.json"), &summary)?;
    for r in &summary.rows {
        let mae = r.mae.map(|m| format!("{m:.3}")).unwrap_or_else(|| "-".into());
        log::info!("SE ≤ {}: MAE {mae}, avg items {:.1}, {} / {} completed", r.se_threshold, r.avg_items, r.completed, r.n_sessions);
    }
    Ok((summary, results))
}

pub fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let configs = args.cat.configs()?;
    let bank = Arc::new(load_bank(&args.bank)?);
    let refs = args.refs.as_deref().map(read_references).transpose()?;
    let factory: Box<ResponderFactory<'_>> = if let Some(path) = &args.matrix {
        let matrix = Arc::new(load_matrix(path)?);
        let models: Vec<String> = if args.models.is_empty() { matrix.model_ids().to_vec() } else { args.models.clone() };
        for m in &models {
            if matrix.model_index(m).is_none() {
                return Err(CliError::input(format!("{}: unknown model `{m}`", path.display())));
            }
        }
        let missing = bank.operational().filter(|i| matrix.item_index(&i.item_id).is_none()).count();
        if missing > 0 {
            log::warn!("{missing} operational bank items are absent from the matrix");
        }
        Box::new(move || {
            models
                .iter()
                .map(|m| MatrixResponder::new(Arc::clone(&matrix), m).map(|r| Box::new(r) as Box<dyn Responder>).map_err(CliError::input))
                .collect()
        })
    } else if let Some(path) = &args.responders {
        let specs: Vec<ResponderSpec> = read_json(path)?;
        let bank = Arc::clone(&bank);
        Box::new(move || specs.iter().map(|s| s.build(&bank).map_err(CliError::input)).collect())
    } else if let Some(cmd) = &args.external_cmd {
        let content = match &args.items_content {
            Some(p) => load_item_content(p).map_err(CliError::input)?,
            None => ItemContent::new(),
        };
        let content = Arc::new(content);
        let timeout = args.timeout.map(Duration::from_secs_f64).unwrap_or(DEFAULT_EXTERNAL_TIMEOUT);
        let ids = args.respondent.clone();
        let cmd = cmd.clone();
        Box::new(move || {
            Ok(ids
                .iter()
                .map(|id| Box::new(ExternalResponder::new(id.clone(), cmd.clone(), timeout, Arc::clone(&content))) as Box<dyn Responder>)
                .collect())
        })
    } else {
        return Err(CliError::input("one of --matrix, --responders or --external-cmd is required"));
    };
    create_dir(&args.out)?;
    let (summary, _) = run_batches(bank, &configs, factory.as_ref(), refs.as_ref(), &args.out)?;
    let attempted: usize = summary.rows.iter().map(|r| r.n_sessions).sum();
    if attempted > 0 && summary.rows.iter().all(|r| r.completed == 0) {
        return Err(CliError { code: EXIT_NO_SESSIONS, message: "no session completed".into() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaDistribution {
    Normal,
    Uniform,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// Number of simulated respondents.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = ThetaDistribution::Normal)]
    pub theta_dist: ThetaDistribution,
    /// Mean (normal) or lower bound (uniform).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub theta_loc: f64,
    /// Standard deviation (normal) or upper bound (uniform).
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub theta_scale: f64,
    #[command(flatten)]
    pub cat: CatFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub se_threshold: f64,
    pub n: usize,
    pub mae: Option<f64>,
    pub stop_rate: f64,
    pub avg_items: f64,
    pub exposure_avg: Option<f64>,
    pub exposure_max: Option<f64>,
    pub overlap_chen: Option<f64>,
    pub overlap_jaccard: Option<f64>,
}

/// True abilities for `n` respondents from the `population` stream.
pub fn sample_population(n: usize, dist: ThetaDistribution, loc: f64, scale: f64, seed: u64) -> CliResult<Vec<(String, f64)>> {
    let mut rng = substream(seed, "population");
    let width = n.saturating_sub(1).to_string().len().max(4);
    let ids = (0..n).map(|i| format!("sim{i:0width$}"));
    let thetas: Vec<f64> = match dist {
        ThetaDistribution::Normal => {
            let d = Normal::new(loc, scale).map_err(|e| CliError::input(format!("theta distribution: {e}")))?;
            (0..n).map(|_| d.sample(&mut rng)).collect()
        }
        ThetaDistribution::Uniform => {
            if !(loc < scale) {
                return Err(CliError::input(format!("uniform theta needs loc < scale, got {loc}, {scale}")));
            }
            let d = Uniform::new(loc, scale);
            (0..n).map(|_| d.sample(&mut rng)).collect()
        }
    };
    Ok(ids.zip(thetas).collect())
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let configs = args.cat.configs()?;
    let bank = Arc::new(load_bank(&args.bank)?);
    let seed = configs[0].rng_seed;
    let population = sample_population(args.n, args.theta_dist, args.theta_loc, args.theta_scale, seed)?;
    create_dir(&args.out)?;
    {
        let path = args.out.join("truths.csv");
        let err = |e: csv::Error| CliError::input(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(["respondent_id", "theta_true"]).map_err(err)?;
        for (id, t) in &population {
            w.write_record([id.as_str(), &t.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::input(e.to_string()))?;
    }
    let truths: BTreeMap<String, f64> = population.iter().cloned().collect();
    let factory = || -> CliResult<Vec<Box<dyn Responder>>> {
        Ok(population
            .iter()
            .map(|(id, t)| Box::new(SimulatedResponder::new(id.clone(), *t, Arc::clone(&bank), seed)) as Box<dyn Responder>)
            .collect())
    };
    let (_, results) = run_batches(Arc::clone(&bank), &configs, &factory, Some(&truths), &args.out)?;
    let universe: Vec<String> = bank.operational().map(|i| i.item_id.clone()).collect();
    let rows: Vec<RecoveryRow> = configs
        .iter()
        .zip(&results)
        .map(|(cfg, r)| {
            let batch = BatchSummary::from_outcomes(&r.outcomes, universe.clone());
            let exposure = analytics::exposure_rates(&batch).ok();
            RecoveryRow {
                se_threshold: cfg.se_threshold,
                n: r.outcomes.len(),
                mae: analytics::mae(&batch.thetas(), &truths).ok(),
                stop_rate: batch.converged_fraction(),
                avg_items: batch.mean_length(),
                exposure_avg: exposure.as_ref().map(|e| e.avg),
                exposure_max: exposure.as_ref().and_then(|e| e.per_item.values().copied().reduce(f64::max)),
                overlap_chen: analytics::overlap_chen(&batch).ok(),
                overlap_jaccard: analytics::overlap_jaccard(&batch).ok(),
            }
        })
        .collect();
    write_json(&args.out.join("recovery.json"), &rows)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Directory of `*.jsonl` session logs.
    #[arg(long)]
    pub sessions: PathBuf,
    /// Reference abilities (`model_id,theta,se`); MAE and correlations need it.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Bank whose operational items form the exposure denominator.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Response matrix for accuracy-based rank shifts.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SHIFT_THRESHOLD)]
    pub shift_threshold: f64,
    /// Also write a flat `metrics.csv`.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Row accuracy over the observed cells.
pub fn accuracy_by_model(matrix: &ResponseMatrix) -> BTreeMap<String, f64> {
    (0..matrix.n_models())
        .filter_map(|m| {
            let observed: Vec<bool> = matrix.row(m).iter().flatten().copied().collect();
            (!observed.is_empty()).then(|| {
                (matrix.model_ids()[m].clone(), observed.iter().filter(|&&y| y).count() as f64 / observed.len() as f64)
            })
        })
        .collect()
}

pub fn compute_metrics(args: &MetricsArgs) -> CliResult<MetricsReport> {
    let logs = cat::read_session_dir(&args.sessions).map_err(CliError::input)?;
    let universe = match &args.bank {
        Some(p) => Some(load_bank(p)?.operational().map(|i| i.item_id.clone()).collect()),
        None => None,
    };
    let batch = BatchSummary::from_logs(&logs, universe);
    let refs = match &args.refs {
        Some(p) if p.exists() => Some(read_references(p)?),
        Some(p) => {
            log::warn!("{}: not found, MAE omitted", p.display());
            None
        }
        None => None,
    };
    let accuracy = args.matrix.as_deref().map(load_matrix).transpose()?.map(|m| accuracy_by_model(&m));
    analytics::metrics_report(&batch, refs.as_ref(), accuracy.as_ref(), args.shift_threshold).map_err(CliError::input)
}

pub fn cmd_metrics(args: &MetricsArgs) -> CliResult<()> {
    let report = compute_metrics(args)?;
    create_dir(&args.out)?;
    write_json(&args.out.join("metrics.json"), &report)?;
    if args.csv {
        let path = args.out.join("metrics.csv");
        let file = fs::File::create(&path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        report.write_csv(file).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Run(a) => cmd_run(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Metrics(a) => cmd_metrics(a),
    }
}
