//! Command-line front end: configuration resolution, pipeline commands and
//! report emission.
//!
//! Every command works inside one run directory (`--out`, default
//! `runs/default`). `pretrain` fixes the dataset split and the full-size
//! model there; `search`, `sweep`, `baseline`, `evaluate` and `export` reuse
//! them.
//!
//! Configuration is JSON with flat dotted keys (`"search.iterations": 10`).
//! Nested objects are accepted and flattened. `--set key=value` overrides
//! the file, `BET_SEED` overrides the file's master seed, and an explicit
//! `--set seed=...` wins over both. The fully resolved configuration is
//! echoed to `config.json` in the run directory.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::backbone::{Backbone, ScorerKind, TrainConfig, TrainRecord};
use crate::dataset::{self, generate_synthetic, InteractionDataset, Split, SplitRatios, SyntheticConfig};
use crate::embedding::MaskedEmbeddingTable;
use crate::error::{BetError, Result};
use crate::metrics::{eval_ensemble, EvalResult};
use crate::plot::{line_chart, Series};
use crate::predictor::Population;
use crate::sampler::{ActionSampler, SizeAction};
use crate::search::{run_search, selective_retrain, train_under_action, IterationRecord, RetrainEntry, SearchConfig};
use crate::seed::{derive_seed, derived_rng, STREAM_BASELINE, STREAM_PRETRAIN, STREAM_SWEEP};

pub const DATASET_DIR: &str = "dataset";
pub const PRETRAINED_FILE: &str = "pretrained.bets";
pub const CONFIG_FILE: &str = "config.json";
pub const POPULATION_FILE: &str = "population.json";
pub const ITERATIONS_FILE: &str = "iterations.jsonl";
pub const FINAL_TABLE_FILE: &str = "final.bets";

/// Dataset source: a raw `user<TAB>item` file when `path` is set, the
/// synthetic generator otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub num_users: usize,
    pub num_items: usize,
    pub interactions: usize,
    pub popularity_exponent: f64,
    pub ratios: SplitRatios,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        Self {
            path: None,
            num_users: s.num_users,
            num_items: s.num_items,
            interactions: s.interactions,
            popularity_exponent: s.popularity_exponent,
            ratios: s.ratios,
        }
    }
}

impl DataConfig {
    pub fn synthetic(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            num_users: self.num_users,
            num_items: self.num_items,
            interactions: self.interactions,
            popularity_exponent: self.popularity_exponent,
            seed,
            ratios: self.ratios,
        }
    }

    pub fn build(&self, seed: u64) -> Result<InteractionDataset> {
        match &self.path {
            Some(p) => dataset::split(&dataset::load_interactions(p)?, self.ratios, seed),
            None => generate_synthetic(&self.synthetic(seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub dataset: DataConfig,
    pub backbone: ScorerKind,
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DataConfig::default(),
            backbone: ScorerKind::Mf,
            train: TrainConfig::default(),
            search: SearchConfig::default(),
            output_dir: PathBuf::from("runs/default"),
            threads: None,
        }
    }
}

fn flatten_into(prefix: &str, value: &Value, out: &mut Map<String, Value>) {
    match value {
        Value::Object(map) if !map.is_empty() => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        v => {
            out.insert(prefix.to_owned(), v.clone());
        }
    }
}

/// `{"a": {"b": 1}}` → `{"a.b": 1}`.
pub fn flatten(value: &Value) -> Map<String, Value> {
    let mut out = Map::new();
    flatten_into("", value, &mut out);
    out
}

/// `{"a.b": 1}` → `{"a": {"b": 1}}`.
pub fn unflatten(flat: &Map<String, Value>) -> Result<Value> {
    let mut root = Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for part in &parts[..parts.len() - 1] {
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            node = entry
                .as_object_mut()
                .ok_or_else(|| BetError::Config(format!("key {key:?} conflicts with a scalar value")))?;
        }
        node.insert(parts[parts.len() - 1].to_owned(), v.clone());
    }
    Ok(Value::Object(root))
}

fn parse_override(item: &str) -> Result<(String, Value)> {
    let (k, v) = item
        .split_once('=')
        .ok_or_else(|| BetError::Config(format!("override {item:?} is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
    Ok((k.trim().to_owned(), value))
}

impl RunConfig {
    /// Defaults, then `file`, then `BET_SEED`, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut flat = flatten(&serde_json::to_value(RunConfig::default())?);
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| BetError::Config(format!("{}: {e}", path.display())))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| BetError::Config(format!("{}: {e}", path.display())))?;
            if !value.is_object() {
                return Err(BetError::Config(format!("{}: expected a JSON object", path.display())));
            }
            flat.extend(flatten(&value));
        }
        if let Some(s) = env_seed {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| BetError::Config(format!("BET_SEED={s:?} is not an unsigned integer")))?;
            flat.insert("seed".to_owned(), Value::from(seed));
        }
        for item in overrides {
            let (k, v) = parse_override(item)?;
            flat.insert(k, v);
        }
        // A backbone switch must not inherit another kind's fields.
        if flat.get("backbone.kind").and_then(Value::as_str) == Some("mf") {
            flat.remove("backbone.layers");
        } else if !flat.contains_key("backbone.layers") {
            flat.insert("backbone.layers".to_owned(), Value::from(3));
        }
        let mut cfg: RunConfig = serde_json::from_value(unflatten(&flat)?)
            .map_err(|e| BetError::Config(e.to_string()))?;
        cfg.search.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.search.validate()?;
        self.dataset.ratios.validate()?;
        if self.threads == Some(0) {
            return Err(BetError::Config("threads must be >= 1".to_owned()));
        }
        Ok(())
    }

    /// The resolved configuration as flat dotted keys.
    pub fn to_flat_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Value::Object(flatten(&serde_json::to_value(self)?)))?)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn prepare_run_dir(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_flat_json()? + "\n")?;
    Ok(())
}

/// The run's split: loaded from `out/dataset` when present, otherwise built
/// from the configuration and saved there.
pub fn load_or_build_dataset(cfg: &RunConfig, out: &Path) -> Result<InteractionDataset> {
    let dir = out.join(DATASET_DIR);
    if dir.join("header.json").exists() {
        log::info!("reusing split in {}", dir.display());
        return InteractionDataset::load_dir(&dir);
    }
    let ds = cfg.dataset.build(cfg.seed)?;
    ds.save_dir(&dir)?;
    Ok(ds)
}

fn load_pretrained(cfg: &RunConfig, out: &Path, ds: &InteractionDataset) -> Result<Backbone> {
    let path = out.join(PRETRAINED_FILE);
    if !path.exists() {
        return Err(BetError::Config(format!(
            "{} not found; run `bet pretrain` first",
            path.display()
        )));
    }
    let table = MaskedEmbeddingTable::import_sparse(&path)?;
    Backbone::from_table(ds, cfg.backbone, table)
}

/// Writes the dataset split to `out` without training anything.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<InteractionDataset> {
    prepare_run_dir(cfg, out)?;
    let ds = cfg.dataset.build(cfg.seed)?;
    ds.save_dir(out.join(DATASET_DIR))?;
    println!(
        "{} users, {} items, {}/{}/{} train/val/test interactions -> {}",
        ds.num_users,
        ds.num_items,
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        out.join(DATASET_DIR).display()
    );
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub steps: usize,
    /// Validation result of the full model: the fitness-ratio denominator.
    pub val: EvalResult,
    pub test: EvalResult,
    pub records: Vec<TrainRecord>,
}

pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<PretrainReport> {
    prepare_run_dir(cfg, out)?;
    let ds = load_or_build_dataset(cfg, out)?;
    let mut model = Backbone::new(
        &ds,
        cfg.backbone,
        cfg.search.d_max,
        cfg.train.init_scale,
        derive_seed(cfg.seed, &[STREAM_PRETRAIN]),
    )?;
    let report = model.train(&ds, &cfg.train, &mut derived_rng(cfg.seed, &[STREAM_PRETRAIN, 1]))?;
    let full = vec![cfg.search.d_max as u32; ds.num_entities()];
    model.apply_sizes(&full)?;
    model.table().export_sparse(out.join(PRETRAINED_FILE))?;

    // Scores come from the stored (f32-rounded) table so later commands agree.
    let stored = load_pretrained(cfg, out, &ds)?;
    let summary = PretrainReport {
        best_epoch: report.best_epoch,
        epochs_run: report.records.len(),
        steps: report.steps,
        val: eval_ensemble(&stored, &ds, Split::Val, &cfg.train.metric_ks)?,
        test: eval_ensemble(&stored, &ds, Split::Test, &cfg.train.metric_ks)?,
        records: report.records,
    };
    write_json(&out.join("pretrain_report.json"), &summary)?;
    println!(
        "pretrained {} epochs (best {:?}); val ensemble {:.5}, test ensemble {:.5}",
        summary.epochs_run, summary.best_epoch, summary.val.ensemble, summary.test.ensemble
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub budget: u64,
    pub retained_params: u64,
    pub total_params: u64,
    pub sparsity: f64,
    pub finetunes: usize,
    pub population_index: usize,
    pub fitness: f64,
    pub val: EvalResult,
    pub test: EvalResult,
    pub retrained: Vec<RetrainEntry>,
}

fn plot_search(out: &Path, records: &[IterationRecord]) -> Result<()> {
    let pts = |f: fn(&IterationRecord) -> f64| records.iter().map(|r| (r.t as f64, f(r))).collect();
    let fitness = line_chart(
        "fitness per iteration",
        "iteration",
        "fitness ratio",
        &[
            Series { name: "measured".into(), points: pts(|r| r.fitness) },
            Series { name: "predicted".into(), points: pts(|r| r.predicted_fitness) },
        ],
    );
    fs::write(out.join("fitness.svg"), fitness)?;
    let loss = line_chart(
        "predictor loss per iteration",
        "iteration",
        "squared error",
        &[Series { name: "predictor".into(), points: pts(|r| r.predictor_loss) }],
    );
    fs::write(out.join("predictor_loss.svg"), loss)?;
    Ok(())
}

/// Search, selective retraining and export of the final sparse table.
pub fn cmd_search(cfg: &RunConfig, out: &Path, export: Option<&Path>, plot: bool) -> Result<SearchSummary> {
    prepare_run_dir(cfg, out)?;
    let ds = load_or_build_dataset(cfg, out)?;
    let pretrained = load_pretrained(cfg, out, &ds)?;

    let iterations_path = out.join(ITERATIONS_FILE);
    File::create(&iterations_path)?;
    let population_path = out.join(POPULATION_FILE);
    let mut flush = |record: &IterationRecord, population: &Population| -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(&iterations_path)?;
        writeln!(f, "{}", serde_json::to_string(record)?)?;
        fs::write(&population_path, population.to_json()? + "\n")?;
        Ok(())
    };
    let outcome = run_search(&ds, &pretrained, &cfg.train, &cfg.search, &mut flush)?;
    outcome.predictor.save(out.join("predictor.betp"))?;
    if plot {
        plot_search(out, &outcome.records)?;
    }

    let retrain = selective_retrain(
        &outcome.population,
        &ds,
        cfg.backbone,
        &cfg.train,
        cfg.search.retrain_top_k,
        cfg.seed,
    )?;
    let table = retrain.model.table();
    table.export_sparse(out.join(FINAL_TABLE_FILE))?;
    if let Some(path) = export {
        table.export_sparse(path)?;
    }
    let summary = SearchSummary {
        budget: retrain.action.budget,
        retained_params: table.retained_params(),
        total_params: (table.num_rows() * table.d_max()) as u64,
        sparsity: table.sparsity(),
        finetunes: outcome.finetunes,
        population_index: retrain.population_index,
        fitness: outcome.population.fitness(retrain.population_index),
        val: retrain.eval.clone(),
        test: eval_ensemble(&retrain.model, &ds, Split::Test, &cfg.train.metric_ks)?,
        retrained: retrain.entries,
    };
    write_json(&out.join("search_report.json"), &summary)?;
    println!(
        "retained {} of {} parameters (budget {}, sparsity {:.4}); val ensemble {:.5}, test ensemble {:.5}",
        summary.retained_params,
        summary.total_params,
        summary.budget,
        summary.sparsity,
        summary.val.ensemble,
        summary.test.ensemble
    );
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    /// Equal size for every entity.
    Su,
    /// Sizes from uniformly random probabilities.
    Sr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub kind: BaselineKind,
    pub sparsity_target: f64,
    pub budget: u64,
    pub retained_params: u64,
    pub val: EvalResult,
    pub test: EvalResult,
    pub action: SizeAction,
}

/// The SU or SR action for the run's dataset.
pub fn baseline_action(cfg: &RunConfig, ds: &InteractionDataset, kind: BaselineKind) -> Result<SizeAction> {
    let sampler = ActionSampler::new(&ds.user_freq, &ds.item_freq, cfg.search.d_max, cfg.search.sparsity)?;
    match kind {
        BaselineKind::Su => Ok(sampler.su()),
        BaselineKind::Sr => sampler.sr(&mut derived_rng(cfg.seed, &[STREAM_BASELINE, 1])),
    }
}

pub fn cmd_baseline(cfg: &RunConfig, out: &Path, kind: BaselineKind, export: Option<&Path>) -> Result<BaselineReport> {
    prepare_run_dir(cfg, out)?;
    let ds = load_or_build_dataset(cfg, out)?;
    let action = baseline_action(cfg, &ds, kind)?;
    let stream = match kind {
        BaselineKind::Su => 2,
        BaselineKind::Sr => 3,
    };
    let (model, _, val) = train_under_action(
        &ds,
        cfg.backbone,
        &action,
        &cfg.train,
        derive_seed(cfg.seed, &[STREAM_BASELINE, stream]),
    )?;
    if let Some(path) = export {
        model.table().export_sparse(path)?;
    }
    let report = BaselineReport {
        kind,
        sparsity_target: cfg.search.sparsity,
        budget: action.budget,
        retained_params: action.total_params(),
        test: eval_ensemble(&model, &ds, Split::Test, &cfg.train.metric_ks)?,
        val,
        action,
    };
    let name = match kind {
        BaselineKind::Su => "baseline_su.json",
        BaselineKind::Sr => "baseline_sr.json",
    };
    write_json(&out.join(name), &report)?;
    println!(
        "{kind:?}: retained {} (budget {}); val ensemble {:.5}, test ensemble {:.5}",
        report.retained_params, report.budget, report.val.ensemble, report.test.ensemble
    );
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub model: PathBuf,
    pub split: String,
    pub retained_params: u64,
    pub sparsity: f64,
    pub result: EvalResult,
}

/// Evaluates a `BETS` table against the run's split.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path, model_path: &Path, split: SplitArg) -> Result<EvaluateReport> {
    let ds = load_or_build_dataset(cfg, out)?;
    let table = MaskedEmbeddingTable::import_sparse(model_path)?;
    let model = Backbone::from_table(&ds, cfg.backbone, table)?;
    let which = match split {
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let report = EvaluateReport {
        model: model_path.to_path_buf(),
        split: format!("{which:?}").to_lowercase(),
        retained_params: model.table().retained_params(),
        sparsity: model.table().sparsity(),
        result: eval_ensemble(&model, &ds, which, &cfg.train.metric_ks)?,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report)
}

/// Applies a `SizeAction` (JSON) to a table and writes the sparse result.
pub fn cmd_export(model_path: &Path, action_path: &Path, output: &Path) -> Result<u64> {
    let action: SizeAction = serde_json::from_str(&fs::read_to_string(action_path)?)?;
    action.validate()?;
    let mut table = MaskedEmbeddingTable::import_sparse(model_path)?;
    table.apply_action(&action)?;
    table.export_sparse(output)?;
    let retained = table.retained_params();
    println!(
        "wrote {} ({} retained parameters, sparsity {:.4})",
        output.display(),
        retained,
        table.sparsity()
    );
    Ok(retained)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum SweepAxis {
    /// Candidates per iteration.
    #[value(name = "m")]
    M,
    /// Search iterations.
    #[value(name = "T")]
    T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub seed: u64,
    pub best_fitness: f64,
    pub val_ensemble: f64,
    pub test_ensemble: f64,
}

/// One full search per value against the shared pretrained model.
pub fn cmd_sweep(cfg: &RunConfig, out: &Path, axis: SweepAxis, values: &[usize]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(BetError::Config("sweep needs at least one value".to_owned()));
    }
    prepare_run_dir(cfg, out)?;
    let ds = load_or_build_dataset(cfg, out)?;
    let pretrained = load_pretrained(cfg, out, &ds)?;
    let mut rows = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let seed = derive_seed(cfg.seed, &[STREAM_SWEEP, i as u64]);
        let mut search = SearchConfig { seed, ..cfg.search.clone() };
        match axis {
            SweepAxis::M => search.candidates = value,
            SweepAxis::T => search.iterations = value,
        }
        let outcome = run_search(&ds, &pretrained, &cfg.train, &search, &mut ())?;
        let retrain = selective_retrain(&outcome.population, &ds, cfg.backbone, &cfg.train, search.retrain_top_k, seed)?;
        let row = SweepRow {
            value,
            seed,
            best_fitness: outcome.population.fitness(outcome.population.best().unwrap()),
            val_ensemble: retrain.eval.ensemble,
            test_ensemble: eval_ensemble(&retrain.model, &ds, Split::Test, &cfg.train.metric_ks)?.ensemble,
        };
        log::info!("sweep {axis:?}={value}: val {:.5}", row.val_ensemble);
        rows.push(row);
    }
    let name = match axis {
        SweepAxis::M => "m",
        SweepAxis::T => "T",
    };
    let mut csv = format!("{name},seed,best_fitness,val_ensemble,test_ensemble\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.value, r.seed, r.best_fitness, r.val_ensemble, r.test_ensemble
        ));
    }
    fs::write(out.join(format!("sweep_{name}.csv")), &csv)?;
    print!("{csv}");
    Ok(rows)
}

#[derive(Debug, Parser)]
#[command(name = "bet", version, about = "Budgeted embedding-size search for recommenders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file (flat dotted keys).
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set search.iterations=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Run directory (defaults to the configured `output_dir`).
    #[arg(short, long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or load and split) the dataset into the run directory.
    Synth,
    /// Train the full-size backbone to convergence.
    Pretrain,
    /// Search, retrain the top actions and export the final sparse table.
    Search {
        /// Extra copy of the final table.
        #[arg(long)]
        export: Option<PathBuf>,
        /// Write SVG charts of fitness and predictor loss.
        #[arg(long)]
        plot: bool,
    },
    /// Train from scratch under the SU or SR baseline action.
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Evaluate a BETS table on the validation or test split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Apply a size action to a table and write the sparse result.
    Export {
        #[arg(long)]
        action: PathBuf,
        /// Source table (defaults to the run's pretrained model).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// One search per value of `m` or `T`; writes a CSV.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    let env_seed = std::env::var("BET_SEED").ok();
    let mut overrides = cli.overrides.clone();
    if let Some(n) = cli.threads {
        overrides.push(format!("threads={n}"));
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides, env_seed.as_deref())?;
    if let Some(n) = cfg.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("thread pool already initialized; --threads ignored");
        }
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    match cli.command {
        Command::Synth => cmd_synth(&cfg, &out).map(drop),
        Command::Pretrain => cmd_pretrain(&cfg, &out).map(drop),
        Command::Search { export, plot } => cmd_search(&cfg, &out, export.as_deref(), plot).map(drop),
        Command::Baseline { kind, export } => cmd_baseline(&cfg, &out, kind, export.as_deref()).map(drop),
        Command::Evaluate { model, split } => cmd_evaluate(&cfg, &out, &model, split).map(drop),
        Command::Export { action, model, output } => {
            let model = model.unwrap_or_else(|| out.join(PRETRAINED_FILE));
            cmd_export(&model, &action, &output).map(drop)
        }
        Command::Sweep { axis, values } => cmd_sweep(&cfg, &out, axis, &values).map(drop),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run_from(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trip() {
        let v = serde_json::json!({"a": {"b": 1, "c": {"d": "x"}}, "e": [1, 2]});
        let flat = flatten(&v);
        assert_eq!(flat["a.c.d"], Value::from("x"));
        assert_eq!(unflatten(&flat).unwrap(), v);
    }

    #[test]
    fn defaults_materialize() {
        let cfg = RunConfig::resolve(None, &[], None).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let flat: Map<String, Value> = serde_json::from_str(&cfg.to_flat_json().unwrap()).unwrap();
        assert_eq!(flat["search.iterations"], Value::from(10));
        assert_eq!(flat["train.initial_lr"], Value::from(0.03));
    }

    #[test]
    fn precedence_file_env_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 4, "search.iterations": 7, "search": {"candidates": 3}}"#).unwrap();
        let cfg = RunConfig::resolve(Some(&path), &[], None).unwrap();
        assert_eq!((cfg.seed, cfg.search.iterations, cfg.search.candidates), (4, 7, 3));
        assert_eq!(cfg.search.seed, 4);
        let cfg = RunConfig::resolve(Some(&path), &[], Some("9")).unwrap();
        assert_eq!(cfg.seed, 9);
        let cfg = RunConfig::resolve(Some(&path), &["seed=11".into(), "search.iterations=2".into()], Some("9")).unwrap();
        assert_eq!((cfg.seed, cfg.search.iterations), (11, 2));
    }

    #[test]
    fn backbone_switch() {
        let cfg = RunConfig::resolve(None, &["backbone.kind=lightgcn".into()], None).unwrap();
        assert_eq!(cfg.backbone, ScorerKind::LightGcn { layers: 3 });
        let cfg = RunConfig::resolve(None, &["backbone.kind=lightgcn".into(), "backbone.layers=2".into()], None).unwrap();
        assert_eq!(cfg.backbone, ScorerKind::LightGcn { layers: 2 });
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(RunConfig::resolve(None, &["search.iteration=3".into()], None).is_err());
        assert!(RunConfig::resolve(None, &["search.sparsity=1.5".into()], None).is_err());
        assert!(RunConfig::resolve(None, &["nokey".into()], None).is_err());
        assert!(RunConfig::resolve(None, &[], Some("abc")).is_err());
        let e = RunConfig::resolve(None, &["threads=0".into()], None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_from(["bet", "sweep", "--axis", "q", "--values", "1"]), 2);
        assert_eq!(run_from(["bet", "frobnicate"]), 2);
    }
}
