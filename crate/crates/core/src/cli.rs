//! The `matchlab` command line.
//!
//! [`run`] parses arguments, executes one pipeline stage and returns the
//! process exit code: 0 on success, 1 for usage and validation errors, 2 for
//! I/O errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::balance::{self, BalanceReport, IntersectionalReport};
use crate::benchmark::{self, BiasReport, DistanceKind, EmbeddingTable};
use crate::dataset::{load_dataset, save_dataset, Dataset};
use crate::disentangle::{self, AttributeMatrix, CorrelationPrior, MapperKind, Split, TrainConfig, TrainMetrics};
use crate::error::{Error, Result};
use crate::latent::{self, LatentCode, LinearForwardModel, ProjectionConfig, TargetDistanceModel};
use crate::matching::{self, MatchConstraints, MatchSet, Metric};
use crate::optim::DescentConfig;
use crate::propensity::{self, CaliperConfig, LogisticConfig, PropensityModel};
use crate::report::{self, Envelope};
use crate::synth::{self, SynthConfig};

pub const LOG_ENV: &str = "MATCHLAB_LOG";

#[derive(Debug, Parser)]
#[command(name = "matchlab", version, about = "Matched sample selection and attribute disentanglement")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// error, warn, info, debug or trace; MATCHLAB_LOG takes precedence.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a confounded synthetic dataset.
    Synth(SynthArgs),
    /// Project a target into the latent space.
    Project(ProjectArgs),
    /// Greedy latent-distance matching.
    Match(MatchArgs),
    /// Propensity scores and caliper matching.
    Propensity(PropensityArgs),
    /// Covariate balance before and after matching.
    Balance(BalanceArgs),
    /// Train correlation-penalized attribute mappers.
    Disentangle(DisentangleArgs),
    /// Same-identity recognition distance gaps.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// JSON generator configuration; defaults apply to absent fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProjectArgs {
    /// Target latent code (.mlat or .csv); the forward model is the identity.
    #[arg(long, conflicts_with = "map")]
    pub target: Option<PathBuf>,
    /// Linear forward model, P rows by L*D columns (headerless CSV).
    #[arg(long, requires_all = ["target_vector", "levels", "dims"])]
    pub map: Option<PathBuf>,
    /// Target output of the linear model, one value per line or per column.
    #[arg(long)]
    pub target_vector: Option<PathBuf>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub dims: Option<usize>,
    /// Initial code; defaults to zeros.
    #[arg(long, conflicts_with = "init_restricted")]
    pub init: Option<PathBuf>,
    /// Restricted vector broadcast to every level as the initial code.
    #[arg(long)]
    pub init_restricted: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step_size: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub grad_tolerance: f64,
    /// Projected code (.mlat, or .csv).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConstraintArgs {
    /// Maximum recognition-embedding distance within a pair.
    #[arg(long)]
    pub facerec_threshold: Option<f64>,
    /// Both members need a reference image of the same identity.
    #[arg(long)]
    pub require_references: bool,
    /// References must pass the default-attributes filter.
    #[arg(long)]
    pub require_default_attrs: bool,
}

impl ConstraintArgs {
    fn constraints(&self) -> MatchConstraints {
        MatchConstraints {
            facerec_threshold: self.facerec_threshold,
            require_references: self.require_references,
            require_default_attrs: self.require_default_attrs,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MatchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub constraints: ConstraintArgs,
    /// Stop after this many pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PropensityArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = propensity::DEFAULT_CALIPER)]
    pub caliper: f64,
    #[arg(long, default_value_t = propensity::DEFAULT_L2)]
    pub l2: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Folds for the reported cross-validated accuracy; 0 skips it.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Score each sample with the fold model that did not train on it.
    #[arg(long)]
    pub cv_scores: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub constraints: ConstraintArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV with columns sample_id, score.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnMetric {
    Gan,
    Facerec,
    Combined,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BalanceArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output of `match` or `propensity`.
    #[arg(long)]
    pub matches: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Tidy CSV: covariate, group, stage, mean, lo, hi.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    /// Binary covariates for the joint-distribution report (at most 4).
    #[arg(long, value_delimiter = ',')]
    pub intersectional: Vec<String>,
    /// Covariates whose preservation among nearest neighbors is measured.
    #[arg(long, value_delimiter = ',')]
    pub knn_attrs: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub knn_k: usize,
    #[arg(long, value_enum, default_value_t = KnnMetric::Gan)]
    pub knn_metric: KnnMetric,
    #[arg(long, default_value_t = matching::DEFAULT_FACEREC_THRESHOLD)]
    pub knn_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DisentangleArgs {
    /// CSV with header: sample_id followed by latent columns.
    #[arg(long)]
    pub latents: PathBuf,
    /// CSV with header: sample_id followed by attribute columns.
    #[arg(long)]
    pub attrs: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Linear)]
    pub kind: KindArg,
    #[arg(long, default_value_t = disentangle::DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Comma-separated lambdas; overrides --lambda.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<f64>,
    #[arg(long, default_value_t = disentangle::DEFAULT_TRAIN_FRACTION)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    /// Use the squared Frobenius error.
    #[arg(long)]
    pub squared_mse: bool,
    /// JSON correlation prior: {"entries": [{"i": 1, "j": 0, "target": 0.3}]}.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// CSV with one row per lambda and split.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub matches: PathBuf,
    /// Embedding CSVs (sample_id, v1, ...), one per model; the manifest's
    /// recognition embeddings are used when none are given.
    #[arg(long, num_args = 1..)]
    pub embeddings: Vec<PathBuf>,
    /// Cosine instead of Euclidean distance.
    #[arg(long)]
    pub cosine: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolved configuration embedded in every report. Thread count and log
/// level are left out because they never change results.
#[derive(Serialize)]
struct Resolved<'a, T: Serialize> {
    seed: u64,
    #[serde(flatten)]
    args: &'a T,
}

fn envelope<T: Serialize, A: Serialize>(
    command: &str,
    seed: u64,
    args: &A,
    inputs: BTreeMap<String, String>,
    result: T,
) -> Envelope<T> {
    Envelope::new(command, &Resolved { seed, args }, inputs, result)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSummary {
    pub config: SynthConfig,
    pub n_samples: usize,
    pub n_identities: usize,
    pub group_sizes: [usize; 2],
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub levels: usize,
    pub dims: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub deviation_penalty: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensitySummary {
    pub model: PropensityModel,
    pub score_source: String,
    pub train_accuracy: f64,
    pub cv_accuracy: Option<f64>,
    /// Group mean scores `[group 0, group 1]` over all samples.
    pub mean_score_original: [f64; 2],
    pub mean_score_matched: Option<[f64; 2]>,
    pub matches: MatchSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntersectionalPair {
    pub original: IntersectionalReport,
    pub matched: IntersectionalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceSummary {
    pub n_pairs: usize,
    pub balance: BalanceReport,
    pub intersectional: Option<IntersectionalPair>,
    pub knn_errors: Option<IndexMap<String, balance::AttributeError>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub matched: BiasReport,
    pub original: BiasReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisentangleSummary {
    pub kind: String,
    pub attributes: Vec<String>,
    pub runs: Vec<TrainMetrics>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit code. Errors are reported on standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(&cli.log_level);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("matchlab: error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn init_logging(level: &str) {
    let filter = std::env::var(LOG_ENV).unwrap_or_else(|_| level.to_string());
    let _ = env_logger::Builder::new()
        .parse_filters(&filter)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Runs a parsed command, inside a dedicated thread pool when `--threads`
/// is given.
pub fn execute(cli: &Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::InvalidConfig("--threads must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            pool.install(|| dispatch(cli))
        }
        None => dispatch(cli),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, cli.seed),
        Command::Project(a) => cmd_project(a, seed),
        Command::Match(a) => cmd_match(a, seed),
        Command::Propensity(a) => cmd_propensity(a, seed),
        Command::Balance(a) => cmd_balance(a, seed),
        Command::Disentangle(a) => cmd_disentangle(a, seed),
        Command::Benchmark(a) => cmd_benchmark(a, seed),
    }
}

fn path_key(p: &Path) -> String {
    p.display().to_string()
}

fn load_manifest(path: &Path, inputs: &mut BTreeMap<String, String>) -> Result<Dataset> {
    let ds = load_dataset(path)?;
    inputs.insert(format!("dataset:{}", path_key(path)), report::dataset_hash(&ds));
    log::info!("loaded {} samples from {}", ds.len(), path.display());
    Ok(ds)
}

fn hash_input(path: &Path, inputs: &mut BTreeMap<String, String>) -> Result<()> {
    inputs.insert(path_key(path), report::sha256_input(path)?);
    Ok(())
}

/// Reads a match set from a `match` or `propensity` report, or a bare
/// serialized [`MatchSet`].
pub fn load_match_set(path: &Path) -> Result<MatchSet> {
    let value: serde_json::Value = report::read_json(path)?;
    let ctx = path.display().to_string();
    let candidate = match value.get("result") {
        Some(r) if r.get("pairs").is_some() => r.clone(),
        Some(r) if r.get("matches").is_some() => r["matches"].clone(),
        _ => value,
    };
    serde_json::from_value(candidate).map_err(|e| Error::parse(ctx, e))
}

fn cmd_synth(a: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut inputs = BTreeMap::new();
    let mut cfg = match &a.config {
        Some(p) => {
            hash_input(p, &mut inputs)?;
            report::read_json::<SynthConfig>(p)?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (ds, truth) = synth::generate(&cfg)?;
    let manifest = save_dataset(&ds, &a.out_dir)?;

    let ids: Vec<String> = ds.samples().iter().map(|s| s.sample_id.clone()).collect();
    let latents_csv = a.out_dir.join("latents.csv");
    write_table(&latents_csv, "z", &ids, &ds.restricted_matrix())?;
    let attrs_csv = a.out_dir.join("attributes.csv");
    write_named_table(&attrs_csv, &ids, truth.attributes.names(), truth.attributes.values())?;

    let (g0, g1) = crate::dataset::group_split(&ds);
    let mut files = BTreeMap::new();
    files.insert("manifest".into(), "manifest.csv".into());
    files.insert("latents".into(), "latents.csv".into());
    files.insert("attributes".into(), "attributes.csv".into());
    let summary = SynthSummary {
        config: cfg.clone(),
        n_samples: ds.len(),
        n_identities: ds.identity_index().len(),
        group_sizes: [g0.len(), g1.len()],
        files,
    };
    let env = envelope("synth", cfg.seed, a, inputs, summary);
    report::write_json(&a.out_dir.join("synth.json"), &env)?;
    log::info!("wrote {}", manifest.display());
    Ok(())
}

fn write_table(path: &Path, prefix: &str, ids: &[String], m: &Array2<f64>) -> Result<()> {
    let names: Vec<String> = (0..m.ncols()).map(|k| format!("{prefix}{k}")).collect();
    write_named_table(path, ids, &names, m)
}

fn write_named_table(path: &Path, ids: &[String], names: &[String], m: &Array2<f64>) -> Result<()> {
    let ctx = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(&ctx, e))?;
    let mut header = vec!["sample_id".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::parse(&ctx, e))?;
    for (id, row) in ids.iter().zip(m.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::parse(&ctx, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `sample_id,col1,col2,...` table with a header.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    let ctx = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = r.headers().map_err(|e| Error::parse(&ctx, e))?.clone();
    if header.len() < 2 {
        return Err(Error::parse(&ctx, "expected sample_id and at least one value column"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(&ctx, e))?;
        ids.push(rec[0].to_string());
        for cell in rec.iter().skip(1) {
            values.push(
                cell.parse::<f64>()
                    .map_err(|e| Error::parse(format!("{ctx} row {}", line + 2), format!("`{cell}`: {e}")))?,
            );
        }
    }
    let m = Array2::from_shape_vec((ids.len(), names.len()), values).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((ids, names, m))
}

fn read_vector(path: &Path) -> Result<Array1<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = latent::parse_csv_matrix(&text, &path.display().to_string())?;
    Ok(rows.into_iter().flatten().collect())
}

fn cmd_project(a: &ProjectArgs, seed: u64) -> Result<()> {
    let mut inputs = BTreeMap::new();
    let cfg = ProjectionConfig {
        lambda: a.lambda,
        step_size: a.step_size,
        max_iters: a.max_iters,
        grad_tolerance: a.grad_tolerance,
    };
    let target_code;
    let linear;
    let model: &dyn latent::ForwardModel = match (&a.target, &a.map) {
        (Some(t), None) => {
            hash_input(t, &mut inputs)?;
            target_code = TargetDistanceModel::new(LatentCode::read(t)?);
            &target_code
        }
        (None, Some(m)) => {
            let tv = a.target_vector.as_ref().expect("required by clap");
            hash_input(m, &mut inputs)?;
            hash_input(tv, &mut inputs)?;
            let text = fs::read_to_string(m).map_err(|e| Error::io(m, e))?;
            let rows = latent::parse_csv_matrix(&text, &path_key(m))?;
            let cols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != cols) {
                return Err(Error::parse(path_key(m), "ragged rows"));
            }
            let map = Array2::from_shape_vec((rows.len(), cols), rows.into_iter().flatten().collect())
                .map_err(|e| Error::Shape(e.to_string()))?;
            let shape = (a.levels.expect("required"), a.dims.expect("required"));
            linear = LinearForwardModel::new(map, read_vector(tv)?, shape)?;
            &linear
        }
        _ => return Err(Error::InvalidConfig("give either --target or --map".into())),
    };
    let (levels, dims) = model.shape();
    let init = if let Some(p) = &a.init {
        hash_input(p, &mut inputs)?;
        LatentCode::read(p)?
    } else if let Some(p) = &a.init_restricted {
        hash_input(p, &mut inputs)?;
        LatentCode::broadcast(read_vector(p)?.view(), levels)?
    } else {
        LatentCode::zeros(levels, dims)?
    };
    let out = latent::project(model, &init, &cfg)?;
    out.code.write(&a.out)?;
    let summary = ProjectionSummary {
        levels,
        dims,
        initial_objective: out.trace[0],
        final_objective: *out.trace.last().expect("trace is nonempty"),
        deviation_penalty: latent::deviation_penalty(&out.code),
        iterations: out.iterations,
        converged: out.converged,
        trace: out.trace,
    };
    log::info!(
        "projection: {} -> {} in {} iterations",
        summary.initial_objective,
        summary.final_objective,
        summary.iterations
    );
    if let Some(r) = &a.report {
        report::write_json(r, &envelope("project", seed, a, inputs, summary))?;
    }
    Ok(())
}

fn cmd_match(a: &MatchArgs, seed: u64) -> Result<()> {
    let mut inputs = BTreeMap::new();
    let ds = load_manifest(&a.manifest, &mut inputs)?;
    if a.pairs == Some(0) {
        return Err(Error::InvalidConfig("--pairs must be positive".into()));
    }
    let ms = matching::greedy_match(&ds, &a.constraints.constraints(), a.pairs)?;
    log::info!("accepted {} pairs", ms.len());
    report::write_json(&a.out, &envelope("match", seed, a, inputs, ms))
}

fn cmd_propensity(a: &PropensityArgs, seed: u64) -> Result<()> {
    let mut inputs = BTreeMap::new();
    let ds = load_manifest(&a.manifest, &mut inputs)?;
    let cfg = LogisticConfig { l2: a.l2, max_iters: a.max_iters, tol: a.tol };
    let features = ds.restricted_matrix();
    let labels = ds.attributes();
    let model = propensity::fit_logistic(&features, &labels, &cfg)?;
    let train_accuracy =
        labels.iter().enumerate().filter(|&(i, &l)| (model.score(features.row(i)) > 0.5) == (l == 1)).count() as f64
            / labels.len() as f64;
    let cv_accuracy = match a.folds {
        0 => None,
        1 => return Err(Error::InvalidConfig("--folds must be 0 or at least 2".into())),
        k => Some(propensity::cross_validate(&features, &labels, k, &cfg, seed)?),
    };
    let (scores, score_source) = if a.cv_scores {
        if a.folds < 2 {
            return Err(Error::InvalidConfig("--cv-scores needs --folds of at least 2".into()));
        }
        (propensity::cross_fitted_scores(&ds, a.folds, &cfg, seed)?, "cross_fitted")
    } else {
        (propensity::propensity_scores(&model, &ds)?, "full_fit")
    };
    let ms = propensity::caliper_match(
        &scores,
        &ds,
        &CaliperConfig { caliper: a.caliper, seed, constraints: a.constraints.constraints() },
    )?;
    let all: Vec<String> = ds.samples().iter().map(|s| s.sample_id.clone()).collect();
    let (o0, o1) = propensity::group_mean_scores(&scores, &ds, &all)?;
    let matched_ids: Vec<String> = ms.members(0).into_iter().chain(ms.members(1)).collect();
    let mean_score_matched = if ms.is_empty() {
        None
    } else {
        let (m0, m1) = propensity::group_mean_scores(&scores, &ds, &matched_ids)?;
        Some([m0, m1])
    };
    if let Some(p) = &a.scores_out {
        #[derive(Serialize)]
        struct Row<'a> {
            sample_id: &'a str,
            score: f64,
        }
        let rows: Vec<Row> = scores.iter().map(|(id, &score)| Row { sample_id: id, score }).collect();
        report::write_csv(p, &rows)?;
    }
    log::info!("caliper matching accepted {} pairs", ms.len());
    let summary = PropensitySummary {
        model,
        score_source: score_source.into(),
        train_accuracy,
        cv_accuracy,
        mean_score_original: [o0, o1],
        mean_score_matched,
        matches: ms,
    };
    report::write_json(&a.out, &envelope("propensity", seed, a, inputs, summary))
}

fn cmd_balance(a: &BalanceArgs, seed: u64) -> Result<()> {
    let mut inputs = BTreeMap::new();
    let ds = load_manifest(&a.manifest, &mut inputs)?;
    hash_input(&a.matches, &mut inputs)?;
    let ms = load_match_set(&a.matches)?;
    ms.validate(&ds)?;
    let report = balance::balance_report(&ds, &ms)?;
    if let Some(p) = &a.plot_data {
        report::write_csv(p, &report.plot_rows())?;
    }
    let intersectional = if a.intersectional.is_empty() {
        None
    } else {
        let names: Vec<&str> = a.intersectional.iter().map(String::as_str).collect();
        let ids: Vec<String> = ms.members(0).into_iter().chain(ms.members(1)).collect();
        Some(IntersectionalPair {
            original: balance::intersectional_report(&ds, None, &names)?,
            matched: balance::intersectional_report(&ds, Some(&ids), &names)?,
        })
    };
    let knn_errors = if a.knn_attrs.is_empty() {
        None
    } else {
        let metric = match a.knn_metric {
            KnnMetric::Gan => Metric::Gan,
            KnnMetric::Facerec => Metric::Facerec,
            KnnMetric::Combined => Metric::Combined { threshold: a.knn_threshold },
        };
        let names: Vec<&str> = a.knn_attrs.iter().map(String::as_str).collect();
        Some(balance::knn_attribute_errors(&ds, metric, a.knn_k, &names)?)
    };
    let summary = BalanceSummary { n_pairs: ms.len(), balance: report, intersectional, knn_errors };
    report::write_json(&a.out, &envelope("balance", seed, a, inputs, summary))
}

fn cmd_disentangle(a: &DisentangleArgs, seed: u64) -> Result<()> {
    let mut inputs = BTreeMap::new();
    hash_input(&a.latents, &mut inputs)?;
    hash_input(&a.attrs, &mut inputs)?;
    let (z_ids, _, z) = read_table(&a.latents)?;
    let (a_ids, names, a_raw) = read_table(&a.attrs)?;
    let pos: std::collections::HashMap<&str, usize> =
        a_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let rows = z_ids
        .iter()
        .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| Error::UnknownId(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    let attrs = AttributeMatrix::new(a_raw.select(ndarray::Axis(0), &rows), names.clone())?;
    let prior = match &a.prior {
        Some(p) => {
            hash_input(p, &mut inputs)?;
            Some(report::read_json::<CorrelationPrior>(p)?)
        }
        None => None,
    };
    let kind = match a.kind {
        KindArg::Linear => MapperKind::Linear,
        KindArg::Mlp => MapperKind::Mlp { hidden: a.hidden },
    };
    let cfg = TrainConfig {
        kind,
        lambda: a.lambda,
        split: Split::Fraction(a.train_fraction),
        descent: DescentConfig { max_iters: a.max_iters, ..TrainConfig::default().descent },
        squared_mse: a.squared_mse,
        seed,
    };
    let lambdas = if a.sweep.is_empty() { vec![a.lambda] } else { a.sweep.clone() };
    let runs = disentangle::lambda_sweep(&z, &attrs, prior.as_ref(), &cfg, &lambdas)?;

    let ctx = path_key(&a.out);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| Error::parse(&ctx, e))?;
    let mut header: Vec<String> = ["lambda", "split", "mse", "mean_abs_corr"].map(String::from).to_vec();
    header.extend(names.iter().map(|n| format!("pearson_{n}")));
    header.extend(names.iter().map(|n| format!("spearman_{n}")));
    w.write_record(&header).map_err(|e| Error::parse(&ctx, e))?;
    for run in &runs {
        for (split, m) in [("train", &run.train), ("test", &run.test)] {
            let mut rec =
                vec![run.lambda.to_string(), split.to_string(), m.mse.to_string(), m.mean_abs_corr.to_string()];
            rec.extend(m.pearson.iter().map(f64::to_string));
            rec.extend(m.spearman.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| Error::parse(&ctx, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    if let Some(r) = &a.report {
        let summary = DisentangleSummary { kind: kind.name().to_string(), attributes: names, runs };
        report::write_json(r, &envelope("disentangle", seed, a, inputs, summary))?;
    }
    Ok(())
}

fn cmd_benchmark(a: &BenchmarkArgs, seed: u64) -> Result<()> {
    let mut inputs = BTreeMap::new();
    let ds = load_manifest(&a.manifest, &mut inputs)?;
    hash_input(&a.matches, &mut inputs)?;
    let ms = load_match_set(&a.matches)?;
    ms.validate(&ds)?;
    let tables = if a.embeddings.is_empty() {
        vec![EmbeddingTable::from_dataset("facerec", &ds)?]
    } else {
        a.embeddings
            .iter()
            .map(|p| {
                hash_input(p, &mut inputs)?;
                EmbeddingTable::load(p)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let kind = if a.cosine { DistanceKind::Cosine } else { DistanceKind::Euclidean };
    let summary = BenchmarkSummary {
        matched: benchmark::bias_report(&ms, &ds, &tables, kind)?,
        original: benchmark::unmatched_report(&ds, &tables, kind, seed)?,
    };
    report::write_json(&a.out, &envelope("benchmark", seed, a, inputs, summary))
}
