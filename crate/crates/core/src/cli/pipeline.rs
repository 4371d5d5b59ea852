//! Config-driven experiment runner with a content-addressed stage cache.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::output::{config_hash, write_atomic, RunLog};
use super::stages::{self, PoolKind, ResourcePaths};
use super::{feature_specs, SchemaName};
use crate::corpus::{
    load_instances, load_paraphrases, load_pool, load_substitutes, open, read_pairs, write_substitutes, InstanceIndex,
    InstancePair, SubstituteSet,
};
use crate::digest::{file_sha256, sha256_hex};
use crate::error::{Error, Result};
use crate::eval::{self, write_predictions, Grouping};
use crate::features::{build_feature_matrix, FeatureMatrix, Provenance, SubstituteSource};
use crate::model::{
    dev_sample, run_binary, run_loo_graded, train, AblationRow, LogisticConfig, LooConfig, LooResult, ModelConfig,
    RegressionModel, Selection,
};
use crate::repr::ReprSpec;
use crate::subst::{FilterConfig, ScoringMode};

/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "USIMKIT_CACHE_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl OneOrMany {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            OneOrMany::One(p) => vec![p.as_path()],
            OneOrMany::Many(v) => v.iter().map(PathBuf::as_path).collect(),
        }
    }

    fn resolve(&mut self, base: &Path) {
        match self {
            OneOrMany::One(p) => *p = base.join(&*p),
            OneOrMany::Many(v) => v.iter_mut().for_each(|p| *p = base.join(&*p)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub instances: OneOrMany,
    /// Graded pairs for the leave-one-lemma-out protocol.
    pub pairs: Option<PathBuf>,
    /// Binary pairs mixed into graded training.
    pub extra_pairs: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub frequencies: Option<PathBuf>,
    pub bundles: Option<PathBuf>,
    #[serde(default)]
    pub sentence_vectors: BTreeMap<String, PathBuf>,
    pub sif_a: Option<f64>,
    pub paraphrases: Option<PathBuf>,
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubstituteMode {
    None,
    Gold,
    Auto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubstituteConfig {
    pub source: SubstituteMode,
    pub gold: Option<OneOrMany>,
    #[serde(default = "default_pool_kind")]
    pub pool_kind: PoolKind,
    pub scoring: Option<String>,
    pub filter: Option<String>,
}

fn default_pool_kind() -> PoolKind {
    PoolKind::Curated
}

impl Default for SubstituteConfig {
    fn default() -> Self {
        Self {
            source: SubstituteMode::None,
            gold: None,
            pool_kind: PoolKind::Curated,
            scoring: None,
            filter: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    #[serde(default)]
    pub repr: Vec<String>,
    #[serde(default = "default_schema")]
    pub schema: SchemaName,
}

fn default_schema() -> SchemaName {
    SchemaName::Graded
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            repr: Vec::new(),
            schema: SchemaName::Graded,
        }
    }
}

impl<'de> Deserialize<'de> for SchemaName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "graded" => Ok(SchemaName::Graded),
            "binary" => Ok(SchemaName::Binary),
            other => Err(serde::de::Error::custom(format!("unknown schema `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Loo,
    Binary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub protocol: Protocol,
    #[serde(default)]
    pub loo: LooConfig,
    #[serde(default)]
    pub logistic: LogisticConfig,
    /// Fixed feature selection for the binary protocol.
    #[serde(default)]
    pub select: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_grouping")]
    pub grouping: Grouping,
    #[serde(default)]
    pub plot: bool,
}

fn default_grouping() -> Grouping {
    Grouping::ByLemma
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            grouping: Grouping::ByLemma,
            plot: false,
        }
    }
}

/// A full experiment: data, substitutes, features, model and metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub substitutes: SubstituteConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    pub model: ModelSection,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(source_name, line, e.message().to_string())
        })
    }

    /// Makes every relative path relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                *p = base.join(&*p);
            }
        };
        self.output_dir = base.join(&self.output_dir);
        let d = &mut self.data;
        d.instances.resolve(base);
        for p in [
            &mut d.pairs,
            &mut d.extra_pairs,
            &mut d.train,
            &mut d.dev,
            &mut d.test,
            &mut d.embeddings,
            &mut d.frequencies,
            &mut d.bundles,
            &mut d.paraphrases,
            &mut d.pool,
        ] {
            fix(p);
        }
        for p in d.sentence_vectors.values_mut() {
            *p = base.join(&*p);
        }
        if let Some(g) = &mut self.substitutes.gold {
            g.resolve(base);
        }
    }

    fn resources(&self) -> ResourcePaths {
        ResourcePaths {
            embeddings: self.data.embeddings.clone(),
            frequencies: self.data.frequencies.clone(),
            bundles: self.data.bundles.clone(),
            sentence_vectors: self.data.sentence_vectors.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            sif_a: self.data.sif_a,
        }
    }
}

/// Content-addressed store of stage outputs.
pub struct StageCache {
    dir: PathBuf,
}

impl StageCache {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn from_env(default: PathBuf) -> Self {
        Self::new(std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or(default))
    }

    /// Returns the cached artifact for `stage` under `key`, computing and
    /// storing it on a miss.
    pub fn get_or_compute(&self, stage: &str, key: &str, compute: impl FnOnce() -> Result<Vec<u8>>) -> Result<Vec<u8>> {
        let path = self.dir.join(format!("{stage}-{key}"));
        if let Ok(bytes) = fs::read(&path) {
            log::info!("cache hit: {stage} ({})", &key[..12]);
            return Ok(bytes);
        }
        log::info!("cache miss: {stage} ({}), computing", &key[..12]);
        let bytes = compute()?;
        write_atomic(&path, &bytes)?;
        Ok(bytes)
    }
}

fn stage_key(stage: &str, parts: &serde_json::Value) -> String {
    sha256_hex(format!("{stage}\n{parts}").as_bytes())
}

fn checksums<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<BTreeMap<String, String>> {
    paths
        .into_iter()
        .map(|p| Ok((p.display().to_string(), file_sha256(p)?)))
        .collect()
}

fn read_pairs_file(path: &Path) -> Result<Vec<InstancePair>> {
    read_pairs(open(path)?, &path.display().to_string())
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Invalid(format!("config is missing `data.{what}`")))
}

fn load_all_instances(paths: &[&Path]) -> Result<InstanceIndex> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(load_instances(p)?.iter().cloned());
    }
    InstanceIndex::new(all)
}

pub struct GradedOutput {
    pub model: RegressionModel,
    pub loo: Option<LooResult>,
}

/// Trains the graded model on every non-development pair (plus extras) and
/// optionally runs leave-one-lemma-out.
pub fn graded_training(
    pairs: &[InstancePair],
    extra: &[InstancePair],
    matrix: &FeatureMatrix,
    loo: &LooConfig,
    run_loo: bool,
) -> Result<GradedOutput> {
    let dev = dev_sample(pairs, loo.dev_fraction, loo.seed);
    let mut train_pairs: Vec<InstancePair> = pairs.iter().filter(|p| !dev.contains(&p.pair_id)).cloned().collect();
    train_pairs.extend_from_slice(extra);
    let targets = crate::model::graded_targets(&train_pairs)?;
    let ids: Vec<&str> = train_pairs.iter().map(|p| p.pair_id.as_str()).collect();
    let mut model = train(matrix, &ids, &targets, &ModelConfig::Linear)?;
    model.metadata.insert("loo".into(), serde_json::to_value(loo).expect("plain struct"));
    let loo = if run_loo {
        Some(run_loo_graded(pairs, extra, matrix, loo, &ModelConfig::Linear)?)
    } else {
        None
    };
    Ok(GradedOutput { model, loo })
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |v| v.to_string());
    let mut s = String::from("removed\tmetric\tdelta\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}", r.removed, fmt(r.metric), fmt(r.delta));
    }
    s
}

/// Runs annotate, features, train/predict and evaluate for a config file.
pub fn run_config(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = RunConfig::parse(&text, &path.display().to_string())?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    cfg.resolve(base);
    run(&cfg)
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let cache = StageCache::from_env(cfg.output_dir.join(".cache"));
    let out = |name: &str| cfg.output_dir.join(name);
    let resources = cfg.resources();
    let instance_paths = cfg.data.instances.paths();

    // Every declared input must exist before any work starts.
    let mut inputs: Vec<&Path> = instance_paths.clone();
    let d = &cfg.data;
    inputs.extend(
        [&d.pairs, &d.extra_pairs, &d.train, &d.dev, &d.test, &d.paraphrases, &d.pool]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path),
    );
    inputs.extend(resources.files());
    if let Some(g) = &cfg.substitutes.gold {
        inputs.extend(g.paths());
    }
    let sums = checksums(inputs.iter().copied())?;
    let mut log = RunLog::new("run", cfg);
    log.inputs(inputs.iter().copied())?;

    let instances = load_all_instances(&instance_paths)?;
    let (eval_pairs, extra, splits) = match cfg.model.protocol {
        Protocol::Loo => {
            let pairs = read_pairs_file(require(&d.pairs, "pairs")?)?;
            let extra = d.extra_pairs.as_deref().map(read_pairs_file).transpose()?.unwrap_or_default();
            (pairs, extra, None)
        }
        Protocol::Binary => {
            let train = read_pairs_file(require(&d.train, "train")?)?;
            let dev = d.dev.as_deref().map(read_pairs_file).transpose()?.unwrap_or_default();
            let test = read_pairs_file(require(&d.test, "test")?)?;
            (test.clone(), Vec::new(), Some((train, dev, test)))
        }
    };
    let all_pairs = match &splits {
        Some((tr, dv, te)) => [tr.as_slice(), dv, te].concat(),
        None => [eval_pairs.as_slice(), &extra].concat(),
    };
    crate::corpus::check_pairs(&all_pairs, &instances)?;

    let specs: Vec<ReprSpec> = cfg
        .features
        .repr
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;
    let specs = feature_specs(&specs, cfg.features.schema);
    let spec_names: Vec<String> = specs.iter().map(|s| s.to_string()).collect();
    let instance_sums: Vec<&String> = instance_paths.iter().map(|p| &sums[&p.display().to_string()]).collect();
    let resource_sums: Vec<&String> = resources.files().iter().map(|p| &sums[&p.display().to_string()]).collect();

    // Substitutes: gold annotations, automatic annotation, or none.
    let subs: Option<(Provenance, Vec<u8>)> = match cfg.substitutes.source {
        SubstituteMode::None => None,
        SubstituteMode::Gold => {
            let gold = cfg
                .substitutes
                .gold
                .as_ref()
                .ok_or_else(|| Error::Invalid("config is missing `substitutes.gold`".into()))?;
            let mut sets: Vec<SubstituteSet> = Vec::new();
            for p in gold.paths() {
                sets.extend(load_substitutes(p, Some(&instances))?);
            }
            let mut bytes = Vec::new();
            write_substitutes(&mut bytes, &sets)?;
            Some((Provenance::Gold, bytes))
        }
        SubstituteMode::Auto => {
            let pool_path = require(&d.pool, "pool")?;
            let kind = cfg.substitutes.pool_kind;
            let scoring: ScoringMode = match &cfg.substitutes.scoring {
                Some(s) => s.parse()?,
                None => kind.default_scoring(),
            };
            let filter: FilterConfig = match &cfg.substitutes.filter {
                Some(s) => s.parse()?,
                None => kind.default_filter(),
            };
            let key = stage_key(
                "annotate",
                &json!({
                    "instances": instance_sums,
                    "pool": sums[&pool_path.display().to_string()],
                    "paraphrases": d.paraphrases.as_ref().map(|p| &sums[&p.display().to_string()]),
                    "resources": resource_sums,
                    "scoring": format!("{scoring:?}"),
                    "filter": filter.to_string(),
                }),
            );
            let bytes = cache.get_or_compute("annotate", &key, || {
                let pool = load_pool(pool_path)?;
                let paraphrases = d.paraphrases.as_deref().map(load_paraphrases).transpose()?;
                let vocab = stages::vocabulary(
                    &instances,
                    pool.keys().flat_map(|k| pool.get(k).into_iter().flatten().map(String::as_str)),
                );
                let res = stages::load_resources(&resources, &instances, &vocab, false)?;
                let ann = stages::annotate(&instances, &pool, &res.view(), paraphrases.as_ref(), scoring, filter)?;
                let mut bytes = Vec::new();
                write_substitutes(&mut bytes, &ann.sets)?;
                Ok(bytes)
            })?;
            write_atomic(&out("substitutes.jsonl"), &bytes)?;
            let provenance = match kind {
                PoolKind::Curated => Provenance::AutoCurated,
                PoolKind::Paraphrase => Provenance::AutoParaphrase,
            };
            Some((provenance, bytes))
        }
    };

    let mut pair_bytes = Vec::new();
    crate::corpus::write_pairs(&mut pair_bytes, &all_pairs)?;
    let feature_key = stage_key(
        "features",
        &json!({
            "instances": instance_sums,
            "pairs": sha256_hex(&pair_bytes),
            "resources": resource_sums,
            "sif_a": resources.sif_a,
            "specs": spec_names,
            "substitutes": subs.as_ref().map(|(p, b)| json!([p, sha256_hex(b)])),
        }),
    );
    let feature_bytes = cache.get_or_compute("features", &feature_key, || {
        let sets = match &subs {
            Some((_, b)) => Some(crate::corpus::read_substitutes(b.as_slice(), "<substitutes>")?),
            None => None,
        };
        let vocab = stages::vocabulary(
            &instances,
            sets.iter().flatten().flat_map(|s| s.entries.iter().map(|e| e.word.as_str())),
        );
        let res = stages::load_resources(&resources, &instances, &vocab, stages::needs_sif(&specs))?;
        let source = sets.map(|s| SubstituteSource::new(subs.as_ref().expect("present").0, s));
        let matrix = build_feature_matrix(&all_pairs, &instances, source.as_ref(), &specs, &res.view())?;
        Ok(matrix.to_tsv_string().into_bytes())
    })?;
    write_atomic(&out("features.tsv"), &feature_bytes)?;
    let matrix = FeatureMatrix::read_tsv(feature_bytes.as_slice(), "<features>")?;

    let model_key = stage_key(
        "model",
        &json!({
            "features": sha256_hex(&feature_bytes),
            "pairs": sha256_hex(&pair_bytes),
            "model": cfg.model,
        }),
    );
    let pred_bytes = cache.get_or_compute("model", &model_key, || {
        let (preds, model_json, details) = match &splits {
            None => {
                let g = graded_training(&eval_pairs, &extra, &matrix, &cfg.model.loo, true)?;
                let loo = g.loo.expect("requested");
                (loo.predictions, serde_json::to_value(&g.model).expect("json"), json!({"folds": loo.folds}))
            }
            Some((train, dev, test)) => {
                let selection = if cfg.model.select.is_empty() {
                    Selection::Registered
                } else {
                    Selection::Fixed(cfg.model.select.clone())
                };
                let r = run_binary(train, dev, test, &matrix, &selection, &cfg.model.logistic)?;
                let details = json!({
                    "selected": r.selected,
                    "backoff_routed": r.backoff_routed,
                    "dev_candidates": r.candidates.iter().map(|(c, a)| json!({"features": c, "accuracy": a})).collect::<Vec<_>>(),
                });
                (r.predictions, serde_json::to_value(&r.model).expect("json"), details)
            }
        };
        let mut bytes = Vec::new();
        write_predictions(&mut bytes, &preds)?;
        let bundle = json!({"predictions": String::from_utf8(bytes).expect("utf-8"), "model": model_json, "details": details});
        Ok(serde_json::to_vec(&bundle).expect("json"))
    })?;
    let bundle: serde_json::Value =
        serde_json::from_slice(&pred_bytes).map_err(|e| Error::Invalid(format!("corrupt cache entry: {e}")))?;
    let predictions_text = bundle["predictions"].as_str().unwrap_or_default();
    write_atomic(&out("predictions.tsv"), predictions_text.as_bytes())?;
    let mut model_json = serde_json::to_vec_pretty(&bundle["model"]).expect("json");
    model_json.push(b'\n');
    write_atomic(&out("model.json"), &model_json)?;

    let preds = eval::read_predictions(predictions_text.as_bytes(), "<predictions>")?;
    let mut report = eval::report(&preds, &eval_pairs, cfg.metrics.grouping)?;
    report.metadata.insert("config_hash".into(), config_hash(cfg));
    write_atomic(&out("report.tsv"), report.to_tsv_string().as_bytes())?;
    let summary = serde_json::to_string_pretty(&report.summary_json()).expect("json") + "\n";
    write_atomic(&out("report.json"), summary.as_bytes())?;
    if cfg.metrics.plot {
        write_atomic(&out("scatter.svg"), eval::scatter_svg(&preds, &eval_pairs)?.as_bytes())?;
    }

    log.detail("stage_keys", json!({"features": feature_key, "model": model_key}));
    log.detail("model", bundle["details"].clone());
    log.detail("aggregate", json!(report.aggregate));
    let mut meta = serde_json::to_vec_pretty(&log.to_json()).expect("json");
    meta.push(b'\n');
    write_atomic(&out("run.meta.json"), &meta)?;
    println!(
        "{} ({}): {}",
        report.metric,
        report.grouping,
        report.aggregate.map_or("NA".to_string(), |v| format!("{v:.4}"))
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_and_resolves() {
        let text = r#"
output_dir = "out"
[data]
instances = ["a.jsonl", "b.jsonl"]
pairs = "p.tsv"
bundles = "b.jsonl"
[data.sentence_vectors]
use = "u.jsonl"
[substitutes]
source = "gold"
gold = "g.jsonl"
[features]
repr = ["contextual-target:av4"]
[model]
protocol = "loo"
[model.loo]
dev_fraction = 0.2
"#;
        let mut cfg = RunConfig::parse(text, "t").unwrap();
        cfg.resolve(Path::new("/base"));
        assert_eq!(cfg.data.instances.paths(), vec![Path::new("/base/a.jsonl"), Path::new("/base/b.jsonl")]);
        assert_eq!(cfg.model.loo.dev_fraction, 0.2);
        assert_eq!(cfg.model.loo.seed, 13);
        assert_eq!(cfg.data.sentence_vectors["use"], PathBuf::from("/base/u.jsonl"));
    }

    #[test]
    fn config_errors_name_the_line() {
        let err = RunConfig::parse("output_dir = \"o\"\n[data]\nbogus = 1\n", "cfg.toml").unwrap_err();
        assert!(err.to_string().starts_with("cfg.toml:"), "{err}");
    }
}
