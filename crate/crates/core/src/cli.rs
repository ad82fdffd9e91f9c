//! Experiment configuration and the `generate`, `train`, `evaluate` and
//! `verify` commands behind the `dysnet` binary.
//!
//! An experiment is described by one TOML file:
//!
//! ```toml
//! output_dir = "runs/grid5"
//!
//! [problem]
//! kind = "grid_pyepo"      # grid_pyepo | grid_linear | knapsack_pyepo
//! size = 5                 # grid side, or number of knapsack items
//! constraints = 2          # knapsack only
//!
//! [data]
//! records = 1000
//! test_records = 1000
//! seed = 1
//! deg = 4
//! noise_width = 0.5
//! capacity_ratio = 0.4
//!
//! [model]
//! hidden = [10]
//! dropout = 0.0
//! leaky_slope = 0.01
//! seed = 0
//!
//! [dys]
//! alpha = 0.05
//! gamma = 5e-4
//! max_iter = 1000
//! tol = 0.01
//!
//! [train]
//! epochs = 100
//! batch_size = 32
//! learning_rate = 1e-3
//! plateau_factor = 0.1
//! plateau_patience = 10
//! weight_decay = 5e-4
//! validation_fraction = 0.1
//! seed = 0
//! time_budget = 1800       # optional, seconds; unset by default
//! ```
//!
//! Every section and field except `problem.kind` and `problem.size` has the
//! default shown above; unknown fields are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::dys::DysConfig;
use crate::error::{Error, Result};
use crate::predictor::{init_params, MlpConfig, MlpParams, DEFAULT_LEAKY_SLOPE};
use crate::problems::dataset::{gen_records, Dataset, DatasetMeta, CONTEXT_DIM};
use crate::problems::DatasetKind;
use crate::train::{evaluate, train_from, EvalMetrics, TrainConfig};
use crate::verify::{run_all, Level};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "DYSNET_OUTPUT_DIR";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub problem: ProblemSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub dys: DysSection,
    #[serde(default)]
    pub train: TrainSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: String,
    pub size: usize,
    #[serde(default)]
    pub constraints: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub records: usize,
    pub test_records: usize,
    pub seed: u64,
    pub deg: u32,
    pub noise_width: f64,
    pub capacity_ratio: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            records: 1000,
            test_records: 1000,
            seed: 1,
            deg: 4,
            noise_width: 0.5,
            capacity_ratio: 0.4,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![10],
            dropout: 0.0,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DysSection {
    pub alpha: f64,
    pub gamma: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for DysSection {
    fn default() -> Self {
        let d = DysConfig::default();
        Self {
            alpha: d.alpha,
            gamma: d.gamma,
            max_iter: d.max_iter,
            tol: d.tol,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub weight_decay: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub time_budget: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            plateau_factor: d.plateau_factor,
            plateau_patience: d.plateau_patience,
            weight_decay: d.weight_decay,
            validation_fraction: d.validation_fraction,
            seed: d.seed,
            time_budget: d.time_budget,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn kind(&self) -> Result<DatasetKind> {
        self.problem.kind.parse()
    }

    pub fn dataset_meta(&self) -> Result<DatasetMeta> {
        let kind = self.kind()?;
        let meta = DatasetMeta {
            kind,
            size: self.problem.size,
            constraints: if kind.is_grid() { 0 } else { self.problem.constraints },
            seed: self.data.seed,
            deg: self.data.deg,
            noise_width: self.data.noise_width,
            capacity_ratio: self.data.capacity_ratio,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn mlp_config(&self) -> Result<MlpConfig> {
        let meta = self.dataset_meta()?;
        let mut dims = vec![CONTEXT_DIM];
        dims.extend(&self.model.hidden);
        dims.push(meta.cost_dim());
        let cfg = MlpConfig {
            layer_dims: dims,
            leaky_slope: self.model.leaky_slope,
            dropout_rate: self.model.dropout,
            seed: self.model.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dys_config(&self) -> DysConfig {
        DysConfig::new(self.dys.alpha, self.dys.gamma, self.dys.max_iter, self.dys.tol)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            plateau_factor: t.plateau_factor,
            plateau_patience: t.plateau_patience,
            weight_decay: t.weight_decay,
            dys: self.dys_config(),
            validation_fraction: t.validation_fraction,
            seed: t.seed,
            time_budget: t.time_budget,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_meta()?;
        if self.data.records == 0 {
            return Err(Error::InvalidConfig("data.records must be at least 1".into()));
        }
        self.mlp_config()?;
        self.train_config().validate()
    }

    pub fn train_path(&self) -> PathBuf {
        self.output_dir.join("train.txt")
    }

    pub fn test_path(&self) -> PathBuf {
        self.output_dir.join("test.txt")
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dysnet",
    version,
    about = "Decision-focused learning with a Davis-Yin splitting layer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory, overriding the config and DYSNET_OUTPUT_DIR.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Seed override: data seed for `generate`, model and training seeds
    /// for `train`, suite seed for `verify`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Wall-clock cap for training, in seconds.
    #[arg(long, global = true)]
    pub time_budget: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate training and test datasets.
    Generate,
    /// Train a predictor on the generated training set.
    Train {
        /// Continue from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Evaluate {
        /// Defaults to `best.ckpt` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `test.txt` in the output directory.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run the property suites.
    Verify {
        #[arg(long, value_enum, default_value_t = VerifyLevel::Fast)]
        level: VerifyLevel,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifyLevel {
    Fast,
    Full,
}

/// Loads the config named by `--config`, applying the output-directory overrides.
pub fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.output_dir = PathBuf::from(dir);
        }
    }
    if let Some(dir) = &global.output {
        cfg.output_dir = dir.clone();
    }
    if let Some(t) = global.time_budget {
        cfg.train.time_budget = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes `train.txt` and `test.txt`; returns a one-line summary per file.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let meta = cfg.dataset_meta()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut lines = Vec::new();
    let train = gen_records(&meta, 0, cfg.data.records)?;
    train.write(&cfg.train_path())?;
    lines.push(summary_line(&train, &cfg.train_path()));
    if cfg.data.test_records > 0 {
        let test = gen_records(&meta, cfg.data.records, cfg.data.test_records)?;
        test.write(&cfg.test_path())?;
        lines.push(summary_line(&test, &cfg.test_path()));
    }
    Ok(lines)
}

fn summary_line(ds: &Dataset, path: &Path) -> String {
    format!(
        "kind={} n={} N={} seed={} -> {}",
        ds.meta.kind,
        ds.cost_dim(),
        ds.len(),
        ds.meta.seed,
        path.display()
    )
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::InvalidConfig(format!(
            "dataset {} does not exist; run `dysnet generate` first",
            path.display()
        )));
    }
    Dataset::read(path)
}

/// Trains on `train.txt`, writing `initial.ckpt`, `best.ckpt`, `final.ckpt`
/// and `metrics.csv` to the output directory.
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>, mut log: impl FnMut(&str)) -> Result<TrainSummary> {
    let dataset = read_dataset(&cfg.train_path())?;
    check_dataset_matches(cfg, &dataset)?;
    let problem = dataset.problem()?;
    let params = match resume {
        Some(path) => MlpParams::load(path)?,
        None => init_params(&cfg.mlp_config()?)?,
    };
    if params.output_dim() != problem.cost_dim() || params.input_dim() != CONTEXT_DIM {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint maps {} -> {} but the dataset needs {} -> {}",
            params.input_dim(),
            params.output_dim(),
            CONTEXT_DIM,
            problem.cost_dim()
        )));
    }
    fs::create_dir_all(&cfg.output_dir)?;
    params.save(&cfg.output_dir.join("initial.ckpt"))?;
    let tc = cfg.train_config();
    let report = train_from(params, &problem, &dataset, &tc, |e| {
        log(&format!(
            "epoch {:>3}  train_loss {:.5}  val_loss {:.5}  val_nregret {:.5}  lr {:.1e}  {:.1}s",
            e.epoch, e.train_loss, e.val_loss, e.val_normalized_regret, e.learning_rate, e.seconds
        ))
    })?;
    report.write_metrics(&cfg.output_dir.join("metrics.csv"))?;
    report.best_params.save(&cfg.output_dir.join("best.ckpt"))?;
    report.final_params.save(&cfg.output_dir.join("final.ckpt"))?;
    Ok(TrainSummary {
        initial_val_normalized_regret: report.initial.normalized_regret,
        best_epoch: report.best_epoch,
        best_val_normalized_regret: report.best_val_normalized_regret(),
        epochs_run: report.epochs.len(),
        timed_out: report.timed_out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    pub initial_val_normalized_regret: f64,
    pub best_epoch: usize,
    pub best_val_normalized_regret: f64,
    pub epochs_run: usize,
    pub timed_out: bool,
}

fn check_dataset_matches(cfg: &ExperimentConfig, ds: &Dataset) -> Result<()> {
    let meta = cfg.dataset_meta()?;
    if ds.meta.kind != meta.kind || ds.meta.size != meta.size || ds.meta.constraints != meta.constraints {
        return Err(Error::ShapeMismatch(format!(
            "dataset is {} size {} constraints {}, config asks for {} size {} constraints {}",
            ds.meta.kind, ds.meta.size, ds.meta.constraints, meta.kind, meta.size, meta.constraints
        )));
    }
    Ok(())
}

/// Evaluates a checkpoint and writes `evaluation.txt` next to it in the output directory.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: Option<&Path>, dataset: Option<&Path>) -> Result<EvalMetrics> {
    let ckpt = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("best.ckpt"));
    let data_path = dataset.map(Path::to_path_buf).unwrap_or_else(|| cfg.test_path());
    let params = MlpParams::load(&ckpt)?;
    let ds = read_dataset(&data_path)?;
    let problem = ds.problem()?;
    if params.output_dim() != problem.cost_dim() || params.input_dim() != CONTEXT_DIM {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint {} maps {} -> {} but dataset {} has contexts of length {} and {} costs",
            ckpt.display(),
            params.input_dim(),
            params.output_dim(),
            data_path.display(),
            CONTEXT_DIM,
            problem.cost_dim()
        )));
    }
    let metrics = evaluate(&params, &problem, &ds.records, &cfg.dys_config())?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(
        cfg.output_dir.join("evaluation.txt"),
        format_eval(&metrics, &ckpt, &data_path),
    )?;
    Ok(metrics)
}

pub fn format_eval(m: &EvalMetrics, ckpt: &Path, data: &Path) -> String {
    format!(
        "checkpoint {}\ndataset {}\nnormalized_regret {}\nmean_regret {}\nmean_l2_loss {}\nexact_match {}\noptimal {}\n",
        ckpt.display(),
        data.display(),
        m.normalized_regret,
        m.mean_regret,
        m.mean_loss,
        m.exact_match,
        m.optimal
    )
}

/// Runs the property suites; returns the report lines and whether all passed.
pub fn cmd_verify(level: VerifyLevel, seed: u64) -> Result<(Vec<String>, bool)> {
    let level = match level {
        VerifyLevel::Fast => Level::Fast,
        VerifyLevel::Full => Level::Full,
    };
    let outcomes = run_all(level, seed)?;
    let all = outcomes.iter().all(|o| o.passed);
    Ok((outcomes.iter().map(|o| o.to_string()).collect(), all))
}

/// Process exit code for an error: 2 for numerical failures, 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return 1;
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Generate => {
            let mut cfg = load_config(g)?;
            if let Some(s) = g.seed {
                cfg.data.seed = s;
            }
            for line in cmd_generate(&cfg)? {
                println!("{line}");
            }
        }
        Command::Train { resume } => {
            let mut cfg = load_config(g)?;
            if let Some(s) = g.seed {
                cfg.train.seed = s;
                cfg.model.seed = s;
            }
            let s = cmd_train(&cfg, resume.as_deref(), |line| println!("{line}"))?;
            println!(
                "best epoch {} val normalized regret {:.5} (untrained {:.5}){}",
                s.best_epoch,
                s.best_val_normalized_regret,
                s.initial_val_normalized_regret,
                if s.timed_out { ", stopped on time budget" } else { "" }
            );
        }
        Command::Evaluate { checkpoint, dataset } => {
            let cfg = load_config(g)?;
            let m = cmd_evaluate(&cfg, checkpoint.as_deref(), dataset.as_deref())?;
            println!(
                "normalized_regret {:.6}  mean_regret {:.6}  mean_l2_loss {:.6}  exact_match {:.3}  optimal {:.3}",
                m.normalized_regret, m.mean_regret, m.mean_loss, m.exact_match, m.optimal
            );
        }
        Command::Verify { level } => {
            let (lines, all) = cmd_verify(*level, g.seed.unwrap_or(0))?;
            for line in &lines {
                println!("{line}");
            }
            return Ok(if all { 0 } else { 1 });
        }
    }
    Ok(0)
}
