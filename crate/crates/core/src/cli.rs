//! `icl-seg` command line: `build`, `split`, `embed`, `predict`, `eval` and
//! `sweep` over the on-disk dataset layouts.
//!
//! Every run resolves one [`RunConfig`] from an optional TOML file plus flags
//! (flags win) and writes it next to its outputs; `--config <that file>`
//! replays the run.
//!
//! Exit status: 0 success, 1 prediction or evaluation failure, 2 input or
//! configuration error.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    self, census, class_dir, construct_binary_datasets, load_binary_datasets, load_semantic_dir,
    read_split_manifest, split_dataset, write_binary_datasets, write_split_manifest, BinaryDataset, ClassSplit,
    CENSUS_FILE, SPLIT_MANIFEST,
};
use crate::encoder::{load_embedding_store, write_embedding_store, EncoderConfig, GlobalEmbedder, ToyEncoder};
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalOptions, EvalReport};
use crate::io;
use crate::predictor::{
    write_logit_dump, Aggregation, BankCache, Embeddings, Predictor, PredictorConfig, Query, DEFAULT_CACHE_ENTRIES,
};
use crate::selection::{SelectionResult, Strategy};

pub const CACHE_DIR_ENV: &str = "ICL_SEG_CACHE_DIR";
pub const RUN_CONFIG_FILE: &str = "run_config.toml";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Semantic layout root (`build` input).
    pub semantic_root: Option<PathBuf>,
    /// Binary layout root.
    pub root: Option<PathBuf>,
    pub min_pixels: usize,
    pub eval_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            semantic_root: None,
            root: None,
            min_pixels: dataset::DEFAULT_MIN_PIXELS,
            eval_fraction: dataset::DEFAULT_EVAL_FRACTION,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// `EMB1` store used for knn selection.
    pub store: Option<PathBuf>,
    /// Compute embeddings with the toy embedder instead of a store.
    pub toy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub include_background: bool,
    /// Store `wall_time` in reports (makes them differ between runs).
    pub record_timing: bool,
    pub support_sizes: Vec<usize>,
    pub strategies: Vec<Strategy>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            include_background: false,
            record_timing: false,
            support_sizes: vec![1, 2, 5, 10, 20, 50],
            strategies: vec![Strategy::Knn, Strategy::Random],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub out: Option<PathBuf>,
    /// Also write raw logits for `predict`.
    pub dump_logits: bool,
}

/// Everything a run depends on. Every field has a default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub predictor: PredictorConfig,
    pub embeddings: EmbeddingConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "icl-seg", version, about = "In-context binary segmentation with a key/value memory")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build per-class binary datasets from a semantic dataset.
    Build(BuildArgs),
    /// Write a seeded meta-support / eval split manifest for every class.
    Split(SplitArgs),
    /// Compute toy embeddings of every pair into an EMB1 store.
    Embed(EmbedArgs),
    /// Segment query images with one class's meta-support set.
    Predict(PredictArgs),
    /// Evaluate one configuration on every class.
    Eval(EvalArgs),
    /// Evaluate a grid of support sizes and selection strategies.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Semantic dataset root (`images/`, `annotations/`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output binary dataset root.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub min_pixels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub eval_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output EMB1 file (ids go to `<out>.json`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct PredictorArgs {
    #[arg(long)]
    pub support_size: Option<usize>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Entries kept per query patch (0 keeps all).
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// EMB1 embedding store for knn selection.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Compute knn embeddings with the toy embedder.
    #[arg(long)]
    pub toy_embedder: bool,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Class whose meta-support set is used.
    #[arg(long)]
    pub class: u32,
    /// Query image; repeatable. Defaults to the class's eval pairs.
    #[arg(long = "query")]
    pub queries: Vec<PathBuf>,
    /// Output directory for masks.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write `<id>.lgt` logit dumps.
    #[arg(long)]
    pub dump_logits: bool,
    #[command(flatten)]
    pub predictor: PredictorArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Report JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Average foreground and background IoU.
    #[arg(long)]
    pub include_background_iou: bool,
    /// Record wall time in the report.
    #[arg(long)]
    pub record_timing: bool,
    #[command(flatten)]
    pub predictor: PredictorArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (`reports.json`, `sweep.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub support_sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<Strategy>>,
    #[arg(long)]
    pub include_background_iou: bool,
    #[arg(long)]
    pub record_timing: bool,
    #[command(flatten)]
    pub predictor: PredictorArgs,
}

impl PredictorArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.predictor;
        set(&mut p.support_size, self.support_size);
        set(&mut p.strategy, self.strategy);
        set(&mut p.aggregation, self.aggregation);
        set(&mut p.temperature, self.temperature);
        set(&mut p.top_k, self.top_k);
        set(&mut p.threshold, self.threshold);
        set(&mut p.seed, self.seed);
        set(&mut cfg.encoder.stride, self.stride);
        if let Some(path) = &self.embeddings {
            cfg.embeddings.store = Some(path.clone());
        }
        if self.toy_embedder {
            cfg.embeddings.toy = true;
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        *slot = value.clone();
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("missing `{flag}` (flag or config file)")))
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        eprintln!("error: --threads must be ≥ 1");
        return EXIT_INPUT;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: could not start worker threads: {e}");
            return EXIT_FAILURE;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Build(a) => {
            set_path(&mut cfg.data.semantic_root, &a.input);
            set_path(&mut cfg.data.root, &a.out);
            set(&mut cfg.data.min_pixels, a.min_pixels);
            cmd_build(&cfg)
        }
        Command::Split(a) => {
            set_path(&mut cfg.data.root, &a.data);
            set(&mut cfg.data.eval_fraction, a.eval_fraction);
            set(&mut cfg.data.split_seed, a.seed);
            cmd_split(&cfg)
        }
        Command::Embed(a) => {
            set_path(&mut cfg.data.root, &a.data);
            set_path(&mut cfg.output.out, &a.out);
            cmd_embed(&cfg)
        }
        Command::Predict(a) => {
            set_path(&mut cfg.data.root, &a.data);
            set_path(&mut cfg.output.out, &a.out);
            cfg.output.dump_logits |= a.dump_logits;
            a.predictor.apply(&mut cfg);
            cmd_predict(&cfg, a.class, &a.queries)
        }
        Command::Eval(a) => {
            set_path(&mut cfg.data.root, &a.data);
            set_path(&mut cfg.output.out, &a.out);
            cfg.eval.include_background |= a.include_background_iou;
            cfg.eval.record_timing |= a.record_timing;
            a.predictor.apply(&mut cfg);
            cmd_eval(&cfg)
        }
        Command::Sweep(a) => {
            set_path(&mut cfg.data.root, &a.data);
            set_path(&mut cfg.output.out, &a.out);
            set(&mut cfg.eval.support_sizes, a.support_sizes.clone());
            set(&mut cfg.eval.strategies, a.strategies.clone());
            cfg.eval.include_background |= a.include_background_iou;
            cfg.eval.record_timing |= a.record_timing;
            a.predictor.apply(&mut cfg);
            cmd_sweep(&cfg)
        }
    }
}

fn write_run_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    io::write_atomic(path, cfg.to_toml()?.as_bytes())
}

/// `report.json` → `report.run_config.toml`.
fn config_path_for_file(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.{RUN_CONFIG_FILE}"))
}

pub fn cmd_build(cfg: &RunConfig) -> Result<i32> {
    let input = required(&cfg.data.semantic_root, "--input")?;
    let out = required(&cfg.data.root, "--out")?;
    let samples = load_semantic_dir(input)?;
    let datasets = construct_binary_datasets(&samples, cfg.data.min_pixels)?;
    write_binary_datasets(out, &datasets)?;
    let c = census(&datasets, samples.len(), cfg.data.min_pixels);
    io::write_json(&out.join(CENSUS_FILE), &c)?;
    write_run_config(&out.join(RUN_CONFIG_FILE), cfg)?;
    println!(
        "{} samples → {} classes, {} pairs",
        c.samples,
        c.classes.len(),
        c.total_pairs
    );
    Ok(EXIT_OK)
}

fn load_datasets(root: &Path) -> Result<Vec<BinaryDataset>> {
    let datasets = load_binary_datasets(root)?;
    if datasets.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no class directories found under {}",
            root.display()
        )));
    }
    Ok(datasets)
}

pub fn cmd_split(cfg: &RunConfig) -> Result<i32> {
    let root = required(&cfg.data.root, "--data")?;
    for ds in load_datasets(root)? {
        let split = split_dataset(&ds.pairs, cfg.data.eval_fraction, cfg.data.split_seed)
            .map_err(|e| Error::InvalidInput(format!("class {}: {e}", ds.class_id)))?;
        write_split_manifest(&class_dir(root, ds.class_id).join(SPLIT_MANIFEST), &split)?;
        println!(
            "class {}: {} meta-support, {} eval",
            ds.class_id,
            split.meta_support.len(),
            split.eval.len()
        );
    }
    write_run_config(&root.join(format!("split.{RUN_CONFIG_FILE}")), cfg)?;
    Ok(EXIT_OK)
}

pub fn cmd_embed(cfg: &RunConfig) -> Result<i32> {
    let root = required(&cfg.data.root, "--data")?;
    let out = required(&cfg.output.out, "--out")?;
    let embedder = ToyEncoder::new(cfg.encoder.clone())?;
    let mut seen = HashSet::new();
    let mut embeddings = Vec::new();
    for ds in load_datasets(root)? {
        for p in ds.pairs {
            if seen.insert(p.id.clone()) {
                embeddings.push(embedder.embed_global(&p.id, &p.image)?);
            }
        }
    }
    write_embedding_store(out, &embeddings)?;
    write_run_config(&config_path_for_file(out), cfg)?;
    println!("{} embeddings → {}", embeddings.len(), out.display());
    Ok(EXIT_OK)
}

/// Builds the predictor a run config describes, wiring the bank cache to
/// `ICL_SEG_CACHE_DIR` when set. `strategies` are the selection strategies
/// the run will use.
pub fn build_predictor(cfg: &RunConfig, strategies: &[Strategy]) -> Result<Predictor> {
    let encoder = Arc::new(ToyEncoder::new(cfg.encoder.clone())?);
    let mut predictor = Predictor::new(encoder, cfg.predictor.clone())?;
    let uses_knn = strategies.contains(&Strategy::Knn);
    let embeddings = match (&cfg.embeddings.store, cfg.embeddings.toy) {
        (Some(path), _) => Some(Embeddings::store(load_embedding_store(path)?)),
        (None, true) => Some(Embeddings::embedder(Arc::new(ToyEncoder::new(cfg.encoder.clone())?))),
        (None, false) => None,
    };
    match embeddings {
        Some(e) => predictor = predictor.with_embeddings(Arc::new(e)),
        None if uses_knn => {
            return Err(Error::Config(
                "strategy knn needs image embeddings: pass `--embeddings <file.emb>` (see `icl-seg embed`) \
                 or `--toy-embedder`, or choose `--strategy random|full`"
                    .into(),
            ))
        }
        None => {}
    }
    let mut cache = BankCache::new(DEFAULT_CACHE_ENTRIES);
    if let Some(dir) = std::env::var_os(CACHE_DIR_ENV).filter(|d| !d.is_empty()) {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        cache = cache.with_spill_dir(dir);
    }
    Ok(predictor.with_cache(Arc::new(cache)))
}

/// Per-class splits from the `split.json` manifests under `root`.
pub fn load_class_splits(root: &Path) -> Result<Vec<ClassSplit>> {
    load_datasets(root)?
        .into_iter()
        .map(|ds| {
            let manifest_path = class_dir(root, ds.class_id).join(SPLIT_MANIFEST);
            if !manifest_path.is_file() {
                return Err(Error::InvalidInput(format!(
                    "{} not found; run `icl-seg split --data {}` first",
                    manifest_path.display(),
                    root.display()
                )));
            }
            let split = read_split_manifest(&manifest_path)?.apply(&ds.pairs)?;
            Ok(ClassSplit {
                class_id: ds.class_id,
                class_name: ds.class_name,
                split,
            })
        })
        .collect()
}

fn dataset_name(root: &Path) -> String {
    root.file_name()
        .map_or_else(|| root.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn eval_options(cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        include_background: cfg.eval.include_background,
        record_timing: cfg.eval.record_timing,
    }
}

fn config_value(cfg: &RunConfig) -> Result<serde_json::Value> {
    serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))
}

pub fn cmd_predict(cfg: &RunConfig, class_id: u32, query_paths: &[PathBuf]) -> Result<i32> {
    let root = required(&cfg.data.root, "--data")?;
    let out = required(&cfg.output.out, "--out")?;
    let ds = load_datasets(root)?
        .into_iter()
        .find(|d| d.class_id == class_id)
        .ok_or_else(|| Error::InvalidInput(format!("class {class_id} not found under {}", root.display())))?;
    let manifest_path = class_dir(root, class_id).join(SPLIT_MANIFEST);
    let (meta_support, eval) = if manifest_path.is_file() {
        let split = read_split_manifest(&manifest_path)?.apply(&ds.pairs)?;
        (split.meta_support, split.eval)
    } else {
        (ds.pairs, Vec::new())
    };
    let queries: Vec<Query> = if query_paths.is_empty() {
        if eval.is_empty() {
            return Err(Error::InvalidInput(
                "no --query given and the class has no split manifest with eval pairs".into(),
            ));
        }
        eval.iter().map(Query::from).collect()
    } else {
        query_paths
            .iter()
            .map(|p| {
                let id = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .ok_or_else(|| Error::InvalidInput(format!("bad query path {}", p.display())))?;
                Ok(Query::new(id, io::read_image(p)?))
            })
            .collect::<Result<_>>()?
    };

    let predictor = build_predictor(cfg, &[cfg.predictor.strategy])?;
    let meta = predictor.prepare(&meta_support)?;
    let results = predictor.predict_batch(&queries, &meta);
    let mut selections: Vec<SelectionResult> = Vec::new();
    let mut failed = 0;
    for (q, r) in queries.iter().zip(results) {
        match r {
            Ok(pred) => {
                io::write_mask(&out.join(format!("{}.png", q.id)), &pred.mask)?;
                if cfg.output.dump_logits {
                    write_logit_dump(&out.join(format!("{}.lgt", q.id)), &q.id, &pred.logits, cfg.predictor.threshold)?;
                }
                selections.push(pred.selection);
            }
            Err(e) => {
                failed += 1;
                eprintln!("query `{}` failed: {e}", q.id);
            }
        }
    }
    io::write_json(&out.join("selections.json"), &selections)?;
    write_run_config(&out.join(RUN_CONFIG_FILE), cfg)?;
    println!("{} of {} queries segmented → {}", queries.len() - failed, queries.len(), out.display());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
}

fn report_status(reports: &[EvalReport]) -> i32 {
    if reports.iter().any(|r| !r.failures.is_empty()) {
        EXIT_FAILURE
    } else {
        EXIT_OK
    }
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<i32> {
    let root = required(&cfg.data.root, "--data")?;
    let out = required(&cfg.output.out, "--out")?;
    let classes = load_class_splits(root)?;
    let predictor = build_predictor(cfg, &[cfg.predictor.strategy])?;
    let mut report = evaluation::evaluate(&predictor, &classes, &dataset_name(root), eval_options(cfg))?;
    report.config = Some(config_value(cfg)?);
    io::write_json(out, &report)?;
    write_run_config(&config_path_for_file(out), cfg)?;
    println!(
        "support_size={} strategy={} aggregation={} mean_miou={:.4}",
        report.support_size, report.strategy, report.aggregation, report.mean_miou
    );
    Ok(report_status(std::slice::from_ref(&report)))
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<i32> {
    let root = required(&cfg.data.root, "--data")?;
    let out = required(&cfg.output.out, "--out")?;
    let classes = load_class_splits(root)?;
    let predictor = build_predictor(cfg, &cfg.eval.strategies)?;
    let mut reports = evaluation::sweep(
        &predictor,
        &classes,
        &dataset_name(root),
        &cfg.eval.support_sizes,
        &cfg.eval.strategies,
        eval_options(cfg),
    )?;
    let value = config_value(cfg)?;
    for r in &mut reports {
        r.config = Some(value.clone());
        println!(
            "support_size={} strategy={} mean_miou={:.4}",
            r.support_size, r.strategy, r.mean_miou
        );
    }
    io::write_json(&out.join("reports.json"), &reports)?;
    evaluation::write_sweep_csv(&out.join("sweep.csv"), &reports)?;
    write_run_config(&out.join(RUN_CONFIG_FILE), cfg)?;
    Ok(report_status(&reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig {
            data: DataConfig {
                root: Some("data".into()),
                ..Default::default()
            },
            ..Default::default()
        };
        let text = cfg.to_toml().unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str("[predictor]\nsupport_size = 3\nstrategy = \"random\"\n").unwrap();
        assert_eq!(cfg.predictor.support_size, 3);
        assert_eq!(cfg.predictor.strategy, Strategy::Random);
        assert_eq!(cfg.predictor.threshold, PredictorConfig::default().threshold);
        assert!(toml::from_str::<RunConfig>("[predictor]\nbogus = 1\n").is_err());
    }

    #[test]
    fn flags_override_config() {
        let mut cfg = RunConfig::default();
        let args = PredictorArgs {
            support_size: Some(7),
            strategy: Some(Strategy::Full),
            toy_embedder: true,
            ..Default::default()
        };
        args.apply(&mut cfg);
        assert_eq!(cfg.predictor.support_size, 7);
        assert_eq!(cfg.predictor.strategy, Strategy::Full);
        assert!(cfg.embeddings.toy);
        assert_eq!(cfg.predictor.top_k, PredictorConfig::default().top_k);
    }

    #[test]
    fn knn_without_embeddings_is_a_config_error() {
        let err = build_predictor(&RunConfig::default(), &[Strategy::Knn]).err().unwrap();
        assert!(err.is_input_error());
        assert!(err.to_string().contains("--toy-embedder"));
    }

    #[test]
    fn config_paths() {
        assert_eq!(
            config_path_for_file(Path::new("/x/report.json")),
            PathBuf::from("/x/report.run_config.toml")
        );
    }
}
