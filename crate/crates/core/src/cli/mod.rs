//! Command-line interface: one subcommand per pipeline stage plus a
//! config-driven runner.

mod output;
pub mod pipeline;
pub mod stages;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::corpus::{
    build_coinco_pairs, load_instances, load_judgments, load_paraphrases, load_pool, load_substitutes, read_pairs,
    check_pairs, open, write_pairs, write_substitutes, InstancePair,
};
use crate::error::{Error, Result};
use crate::eval::{self, load_predictions, scatter_svg, write_predictions, Grouping};
use crate::features::{
    binary_default_specs, build_feature_matrix, graded_default_specs, FeatureMatrix, Provenance, SubstituteSource,
};
use crate::model::{
    self, run_ablation, run_binary, LogisticConfig, LooConfig, ModelConfig, RegressionModel, Selection,
};
use crate::par;
use crate::repr::{direct_usim, ReprSpec};
use crate::subst::{FilterConfig, FilterResources, ScoringMode};

pub use output::{config_hash, sidecar_path, write_atomic, RunLog};
use stages::{parse_named_path, PoolKind, ResourcePaths};

#[derive(Debug, Parser)]
#[command(name = "usimkit", version, about = "Word usage similarity from embeddings and lexical substitutes")]
pub struct Cli {
    /// Upper bound on worker threads for per-pair and per-fold stages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank and filter candidate substitutes for every instance.
    Annotate(AnnotateArgs),
    /// Cosine of two instances' representations as a direct usage similarity.
    Direct(DirectArgs),
    /// Compute the pair feature matrix.
    Features(FeaturesArgs),
    /// Train a graded linear model; optionally run leave-one-lemma-out.
    TrainGraded(TrainGradedArgs),
    /// Train a binary logistic model on fixed train/dev/test splits.
    TrainBinary(TrainBinaryArgs),
    /// Apply a trained model to a feature matrix.
    Predict(PredictArgs),
    /// Score predictions against gold pairs.
    Evaluate(EvaluateArgs),
    /// Build balanced same/different pairs from substitute annotations.
    BuildCoinco(BuildCoincoArgs),
    /// Compare substitute filters against gold substitutes.
    FilterEval(FilterEvalArgs),
    /// Retrain without each feature in turn.
    Ablate(AblateArgs),
    /// Per-lemma inter-annotator agreement and mid-range proportion.
    Agreement(AgreementArgs),
    /// Run a full experiment described by a TOML config.
    Run(RunArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ResourceArgs {
    /// Static embeddings in word2vec/GloVe text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// `word<TAB>count` unigram counts for SIF weighting.
    #[arg(long)]
    pub frequencies: Option<PathBuf>,
    /// Contextual vector bundles (JSONL).
    #[arg(long)]
    pub bundles: Option<PathBuf>,
    /// Named external sentence vectors, `NAME=PATH` (JSONL); repeatable.
    #[arg(long = "sentence-vectors", value_name = "NAME=PATH", value_parser = parse_named_path)]
    pub sentence_vectors: Vec<(String, PathBuf)>,
    /// SIF smoothing constant.
    #[arg(long)]
    pub sif_a: Option<f64>,
}

impl ResourceArgs {
    fn paths(&self) -> ResourcePaths {
        ResourcePaths {
            embeddings: self.embeddings.clone(),
            frequencies: self.frequencies.clone(),
            bundles: self.bundles.clone(),
            sentence_vectors: self.sentence_vectors.clone(),
            sif_a: self.sif_a,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub instances: PathBuf,
    /// Candidate pool TSV (`lemma.pos<TAB>candidate`).
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, value_enum, default_value = "curated")]
    pub pool_kind: PoolKind,
    /// Paraphrase pairs, required by the `ppdb` filter.
    #[arg(long)]
    pub paraphrases: Option<PathBuf>,
    /// `context-only` or `full-eq1`; defaults by pool kind.
    #[arg(long)]
    #[serde(serialize_with = "ser_display_opt")]
    pub scoring: Option<ScoringArg>,
    /// `none`, `ppdb`, `embedding:T=0.2`, `score-gap` or `top:k=N`; defaults by pool kind.
    #[arg(long)]
    #[serde(serialize_with = "ser_display_opt")]
    pub filter: Option<FilterConfig>,
    #[command(flatten)]
    pub resources: ResourceArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Scoring mode accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoringArg(pub ScoringMode);

impl std::str::FromStr for ScoringArg {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.parse().map(ScoringArg)
    }
}

impl std::fmt::Display for ScoringArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self.0 {
            ScoringMode::ContextOnly => "context-only",
            ScoringMode::FullEq1 => "full-eq1",
        })
    }
}

fn ser_display_opt<T: std::fmt::Display, S: serde::Serializer>(v: &Option<T>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.collect_str(v),
        None => s.serialize_none(),
    }
}

fn ser_display_vec<T: std::fmt::Display, S: serde::Serializer>(v: &[T], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.to_string()))
}

#[derive(Debug, Args, Serialize)]
pub struct DirectArgs {
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Representation, e.g. `contextual-target:av4` or `static-average:w=3`.
    #[arg(long)]
    #[serde(serialize_with = "ser_display")]
    pub repr: ReprSpec,
    #[command(flatten)]
    pub resources: ResourceArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn ser_display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaName {
    /// Contextual target vectors and blank-slot sentence vectors.
    Graded,
    /// Contextual target vectors and `use` sentence vectors.
    Binary,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Representations to compare; overrides `--schema`. Repeatable.
    #[arg(long)]
    #[serde(serialize_with = "ser_display_vec")]
    pub repr: Vec<ReprSpec>,
    #[arg(long, value_enum, default_value = "graded")]
    pub schema: SchemaName,
    /// Substitute annotations (JSONL); adds the substitute features.
    #[arg(long)]
    pub substitutes: Option<PathBuf>,
    #[arg(long, default_value = "gold")]
    pub provenance: Provenance,
    #[command(flatten)]
    pub resources: ResourceArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainGradedArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Graded pairs TSV.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Additional binary pairs mixed into training with targets 5 and 1.
    #[arg(long)]
    pub extra_pairs: Option<PathBuf>,
    /// Fraction of each lemma's pairs kept out of training as development data.
    #[arg(long, default_value_t = 0.1)]
    pub dev_fraction: f64,
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    /// Also run leave-one-lemma-out and write its test predictions here.
    #[arg(long)]
    pub loo: Option<PathBuf>,
    /// Model trained on all non-development pairs (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LogisticArgs {
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
}

impl LogisticArgs {
    fn config(&self) -> LogisticConfig {
        LogisticConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            l2: self.l2,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainBinaryArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated feature names; skips development-set selection.
    #[arg(long, value_delimiter = ',')]
    pub select: Vec<String>,
    #[command(flatten)]
    pub logistic: LogisticArgs,
    /// Test-set probabilities TSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Test-set decisions TSV (`pair_id<TAB>T|F`).
    #[arg(long)]
    pub decisions: Option<PathBuf>,
    /// Trained model (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold pairs TSV.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, default_value = "by-lemma")]
    #[serde(serialize_with = "ser_display")]
    pub group: Grouping,
    /// Report TSV; the JSON summary goes next to it with a `.json` suffix.
    /// Both are printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG scatter plot of predicted against gold scores.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildCoincoArgs {
    #[arg(long)]
    pub instances: PathBuf,
    /// Gold substitutes (JSONL).
    #[arg(long)]
    pub substitutes: PathBuf,
    /// Word list or embedding file restricting target words.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FilterEvalArgs {
    /// Unfiltered rankings (substitutes JSONL, weights are scores).
    #[arg(long)]
    pub rankings: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Filters to compare; repeatable. Defaults to all applicable ones.
    #[arg(long)]
    #[serde(serialize_with = "ser_display_vec")]
    pub filter: Vec<FilterConfig>,
    #[arg(long)]
    pub paraphrases: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Training pairs; with `--dev` omitted, a seeded per-lemma sample of
    /// them becomes the development set.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Additional binary pairs mixed into graded training.
    #[arg(long)]
    pub extra_pairs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "linear")]
    pub model: ModelArg,
    #[arg(long, default_value_t = 0.1)]
    pub dev_fraction: f64,
    /// Seeds the development sample and the logistic initialisation.
    #[command(flatten)]
    pub logistic: LogisticArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    Linear,
    Logistic,
}

#[derive(Debug, Args, Serialize)]
pub struct AgreementArgs {
    #[arg(long)]
    pub judgments: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    pub config: PathBuf,
}

/// Entry point; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let jobs = cli.jobs;
    match par::with_jobs(jobs, || execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("usimkit: error: {e}");
            e.exit_code()
        }
    }
}

fn read_pairs_file(path: &Path) -> Result<Vec<InstancePair>> {
    read_pairs(open(path)?, &path.display().to_string())
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("json");
    out.push(b'\n');
    out
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Annotate(a) => annotate(a),
        Command::Direct(a) => direct(a),
        Command::Features(a) => features(a),
        Command::TrainGraded(a) => train_graded(a),
        Command::TrainBinary(a) => train_binary(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::BuildCoinco(a) => build_coinco(a),
        Command::FilterEval(a) => filter_eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Agreement(a) => agreement(a),
        Command::Run(a) => pipeline::run_config(&a.config),
    }
}

fn annotate(a: AnnotateArgs) -> Result<()> {
    let mut log = RunLog::new("annotate", &a);
    let mut inputs = vec![a.instances.as_path(), a.pool.as_path()];
    inputs.extend(a.paraphrases.as_deref());
    let resource_paths = a.resources.paths();
    inputs.extend(resource_paths.files());
    log.inputs(inputs)?;

    let instances = load_instances(&a.instances)?;
    let pool = load_pool(&a.pool)?;
    let paraphrases = a.paraphrases.as_deref().map(load_paraphrases).transpose()?;
    let vocab = stages::vocabulary(&instances, pool.keys().flat_map(|k| pool.get(k).into_iter().flatten().map(String::as_str)));
    let res = stages::load_resources(&a.resources.paths(), &instances, &vocab, false)?;
    let scoring = a.scoring.map_or(a.pool_kind.default_scoring(), |s| s.0);
    let filter = a.filter.unwrap_or(a.pool_kind.default_filter());
    let ann = stages::annotate(&instances, &pool, &res.view(), paraphrases.as_ref(), scoring, filter)?;

    log.detail("scoring", ScoringArg(scoring).to_string());
    log.detail("filter", filter.to_string());
    log.detail("annotated", ann.sets.len());
    log.detail("fallback_context_vectors", json!(ann.fallback_context));
    log.detail("skipped", json!(ann.skipped));
    log.write_output(&a.out, &to_bytes(|b| write_substitutes(b, &ann.sets))?)?;
    log::info!("annotated {} instances ({} skipped)", ann.sets.len(), ann.skipped.len());
    Ok(())
}

fn direct(a: DirectArgs) -> Result<()> {
    let mut log = RunLog::new("direct", &a);
    let mut inputs = vec![a.instances.as_path(), a.pairs.as_path()];
    let resource_paths = a.resources.paths();
    inputs.extend(resource_paths.files());
    log.inputs(inputs)?;
    let instances = load_instances(&a.instances)?;
    let pairs = read_pairs_file(&a.pairs)?;
    check_pairs(&pairs, &instances)?;
    let specs = [a.repr.clone()];
    let vocab = stages::vocabulary(&instances, []);
    let res = stages::load_resources(&a.resources.paths(), &instances, &vocab, stages::needs_sif(&specs))?;
    let preds = direct_usim(&pairs, &instances, &a.repr, &res.view())?;
    log.write_output(&a.out, &to_bytes(|b| write_predictions(b, &preds))?)?;
    if pairs.iter().all(|p| p.gold.score().is_some()) {
        if let Ok(r) = eval::report(&preds, &pairs, Grouping::ByLemma) {
            log::info!("mean per-lemma spearman: {:?}", r.aggregate);
        }
    }
    Ok(())
}

pub(crate) fn feature_specs(repr: &[ReprSpec], schema: SchemaName) -> Vec<ReprSpec> {
    if !repr.is_empty() {
        return repr.to_vec();
    }
    match schema {
        SchemaName::Graded => graded_default_specs(),
        SchemaName::Binary => binary_default_specs(),
    }
}

fn features(a: FeaturesArgs) -> Result<()> {
    let mut log = RunLog::new("features", &a);
    let mut inputs = vec![a.instances.as_path(), a.pairs.as_path()];
    inputs.extend(a.substitutes.as_deref());
    let resource_paths = a.resources.paths();
    inputs.extend(resource_paths.files());
    log.inputs(inputs)?;

    let instances = load_instances(&a.instances)?;
    let pairs = read_pairs_file(&a.pairs)?;
    check_pairs(&pairs, &instances)?;
    let specs = feature_specs(&a.repr, a.schema);
    let subs = a
        .substitutes
        .as_deref()
        .map(|p| load_substitutes(p, Some(&instances)))
        .transpose()?;
    let vocab = stages::vocabulary(
        &instances,
        subs.iter().flatten().flat_map(|s| s.entries.iter().map(|e| e.word.as_str())),
    );
    let res = stages::load_resources(&a.resources.paths(), &instances, &vocab, stages::needs_sif(&specs))?;
    let source = subs.map(|s| SubstituteSource::new(a.provenance, s));
    let matrix = build_feature_matrix(&pairs, &instances, source.as_ref(), &specs, &res.view())?;
    let masked = matrix.rows.iter().filter(|r| r.masked().next().is_some()).count();
    log.detail("schema", json!(matrix.schema));
    log.detail("rows", matrix.len());
    log.detail("rows_with_masked_features", masked);
    log.write_output(&a.out, matrix.to_tsv_string().as_bytes())?;
    Ok(())
}

fn train_graded(a: TrainGradedArgs) -> Result<()> {
    let mut log = RunLog::new("train-graded", &a);
    let mut inputs = vec![a.features.as_path(), a.pairs.as_path()];
    inputs.extend(a.extra_pairs.as_deref());
    log.inputs(inputs)?;

    let matrix = FeatureMatrix::load(&a.features)?;
    let pairs = read_pairs_file(&a.pairs)?;
    let extra = a.extra_pairs.as_deref().map(read_pairs_file).transpose()?.unwrap_or_default();
    let loo = LooConfig {
        dev_fraction: a.dev_fraction,
        seed: a.seed,
    };
    let out = pipeline::graded_training(&pairs, &extra, &matrix, &loo, a.loo.is_some())?;
    if let (Some(path), Some(result)) = (&a.loo, &out.loo) {
        let mut loo_log = log.clone();
        loo_log.detail("folds", json!(result.folds));
        loo_log.detail("report", result.report.summary_json());
        loo_log.write_output(path, &to_bytes(|b| write_predictions(b, &result.predictions))?)?;
        println!("mean per-lemma spearman: {}", fmt_opt(result.report.aggregate));
    }
    log.detail("training_pairs", out.model.metadata.get("training_rows").cloned().unwrap_or_default());
    log.write_output(&a.out, &json_bytes(&out.model))?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |v| v.to_string())
}

fn train_binary(a: TrainBinaryArgs) -> Result<()> {
    let mut log = RunLog::new("train-binary", &a);
    let mut inputs = vec![a.features.as_path(), a.train.as_path(), a.test.as_path()];
    inputs.extend(a.dev.as_deref());
    log.inputs(inputs)?;

    let matrix = FeatureMatrix::load(&a.features)?;
    let train = read_pairs_file(&a.train)?;
    let dev = a.dev.as_deref().map(read_pairs_file).transpose()?.unwrap_or_default();
    let test = read_pairs_file(&a.test)?;
    let selection = if a.select.is_empty() {
        Selection::Registered
    } else {
        Selection::Fixed(a.select.clone())
    };
    let r = run_binary(&train, &dev, &test, &matrix, &selection, &a.logistic.config())?;
    log.detail("selected", json!(r.selected));
    log.detail(
        "dev_candidates",
        json!(r.candidates.iter().map(|(c, acc)| json!({"features": c, "accuracy": acc})).collect::<Vec<_>>()),
    );
    log.detail("test_accuracy", r.test_accuracy);
    log.detail("backoff_routed", r.backoff_routed);
    if let Some(p) = &a.predictions {
        log.write_output(p, &to_bytes(|b| write_predictions(b, &r.predictions))?)?;
    }
    if let Some(p) = &a.decisions {
        let text: String = r
            .decisions
            .iter()
            .map(|(id, d)| format!("{id}\t{}\n", if *d { "T" } else { "F" }))
            .collect();
        log.write_output(p, text.as_bytes())?;
    }
    log.write_output(&a.out, &json_bytes(&r.model))?;
    println!(
        "test accuracy: {:.4} (features: {}; {} pairs routed to backoff)",
        r.test_accuracy,
        r.selected.join(","),
        r.backoff_routed
    );
    Ok(())
}

pub(crate) fn load_model(path: &Path) -> Result<RegressionModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path.display().to_string(), e.line(), e.to_string()))
}

fn predict(a: PredictArgs) -> Result<()> {
    let mut log = RunLog::new("predict", &a);
    log.inputs([a.model.as_path(), a.features.as_path()])?;
    let m = load_model(&a.model)?;
    let matrix = FeatureMatrix::load(&a.features)?;
    let (preds, routed) = model::predict_matrix(&m, &matrix)?;
    log.detail("backoff_routed", routed);
    log.write_output(&a.out, &to_bytes(|b| write_predictions(b, &preds))?)?;
    log::info!("{} predictions, {routed} from the backoff model", preds.len());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut log = RunLog::new("evaluate", &a);
    log.inputs([a.pred.as_path(), a.gold.as_path()])?;
    let preds = load_predictions(&a.pred)?;
    let gold = read_pairs_file(&a.gold)?;
    let mut report = eval::report(&preds, &gold, a.group)?;
    report.metadata.insert("config_hash".into(), log.config_hash().to_string());
    report.metadata.insert("dataset".into(), a.gold.display().to_string());
    let tsv = report.to_tsv_string();
    let summary = serde_json::to_string_pretty(&report.summary_json()).expect("json") + "\n";
    match &a.out {
        Some(out) => {
            log.write_output(out, tsv.as_bytes())?;
            let mut json_path = out.as_os_str().to_owned();
            json_path.push(".json");
            write_atomic(Path::new(&json_path), summary.as_bytes())?;
        }
        None => {
            print!("{tsv}");
            print!("{summary}");
        }
    }
    if let Some(plot) = &a.plot {
        write_atomic(plot, scatter_svg(&preds, &gold)?.as_bytes())?;
    }
    Ok(())
}

fn build_coinco(a: BuildCoincoArgs) -> Result<()> {
    let mut log = RunLog::new("build-coinco", &a);
    let mut inputs = vec![a.instances.as_path(), a.substitutes.as_path()];
    inputs.extend(a.vocab.as_deref());
    log.inputs(inputs)?;
    let instances = load_instances(&a.instances)?;
    let subs = load_substitutes(&a.substitutes, Some(&instances))?;
    let vocab = a.vocab.as_deref().map(stages::load_word_list).transpose()?;
    let built = build_coinco_pairs(&instances, &subs, vocab.as_ref())?;
    let mut all = built.same.clone();
    all.extend(built.diff.iter().cloned());
    log.detail("same", built.same.len());
    log.detail("diff", built.diff.len());
    log.write_output(&a.out, &to_bytes(|b| write_pairs(b, &all))?)?;
    Ok(())
}

fn filter_eval(a: FilterEvalArgs) -> Result<()> {
    let mut log = RunLog::new("filter-eval", &a);
    let mut inputs = vec![a.rankings.as_path(), a.gold.as_path()];
    inputs.extend(a.paraphrases.as_deref());
    inputs.extend(a.embeddings.as_deref());
    log.inputs(inputs)?;

    let rankings = load_substitutes(&a.rankings, None)?;
    let gold = load_substitutes(&a.gold, None)?;
    let paraphrases = a.paraphrases.as_deref().map(load_paraphrases).transpose()?;
    let table = match &a.embeddings {
        Some(p) => {
            let words: std::collections::HashSet<String> = rankings
                .iter()
                .flat_map(|s| s.words())
                .flat_map(|w| std::iter::once(w.to_string()).chain(w.split_whitespace().map(str::to_string)))
                .collect();
            let keep = |w: &str| words.contains(w);
            Some(crate::repr::EmbeddingTable::load_text(p, Some(&keep))?)
        }
        None => None,
    };
    let filters = if a.filter.is_empty() {
        let mut f = vec![FilterConfig::None];
        if paraphrases.is_some() {
            f.push(FilterConfig::PpdbAdjacent);
        }
        if table.is_some() {
            f.push(FilterConfig::EmbeddingAdjacent { threshold: 0.2 });
        }
        f.push(FilterConfig::ScoreGap);
        f
    } else {
        a.filter.clone()
    };
    let fres = FilterResources {
        paraphrases: paraphrases.as_ref(),
        table: table.as_ref(),
    };
    let rows = stages::filter_study(&rankings, &gold, &filters, &fres)?;
    let text = stages::filter_table(&rows);
    log.write_output(&a.out, text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut log = RunLog::new("ablate", &a);
    let mut inputs = vec![a.features.as_path(), a.train.as_path()];
    inputs.extend(a.dev.as_deref());
    inputs.extend(a.extra_pairs.as_deref());
    log.inputs(inputs)?;

    let matrix = FeatureMatrix::load(&a.features)?;
    let pairs = read_pairs_file(&a.train)?;
    let extra = a.extra_pairs.as_deref().map(read_pairs_file).transpose()?.unwrap_or_default();
    let (mut train, dev) = match &a.dev {
        Some(p) => (pairs, read_pairs_file(p)?),
        None => {
            let dev_ids = model::dev_sample(&pairs, a.dev_fraction, a.logistic.seed);
            pairs.into_iter().partition(|p| !dev_ids.contains(&p.pair_id))
        }
    };
    train.extend(extra);
    let config = match a.model {
        ModelArg::Linear => ModelConfig::Linear,
        ModelArg::Logistic => ModelConfig::Logistic(a.logistic.config()),
    };
    let rows = run_ablation(&train, &dev, &matrix, &config)?;
    let text = pipeline::ablation_table(&rows);
    log.write_output(&a.out, text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn agreement(a: AgreementArgs) -> Result<()> {
    let mut log = RunLog::new("agreement", &a);
    log.inputs([a.judgments.as_path()])?;
    let table = load_judgments(&a.judgments)?;
    log.write_output(&a.out, stages::agreement_table(&table).as_bytes())?;
    Ok(())
}
