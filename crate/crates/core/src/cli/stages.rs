//! Pipeline stages shared by the subcommands and the config-driven runner.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{lines, open, CandidatePool, InstanceIndex, ParaphraseStore, SubstituteSet};
use crate::error::{Error, Result};
use crate::eval::{uiaa, umid};
use crate::corpus::JudgmentTable;
use crate::par;
use crate::repr::{
    fit_sif_on_instances, load_bundles, load_sentence_vectors, BundleIndex, EmbeddingTable, ReprSpec, Resources,
    SentenceVectors, SifConfig, SifState, Source,
};
use crate::subst::{
    apply_filter, context_vector, evaluate_filter, rank_candidates, FilterConfig, FilterResources, FilterScores,
    ScoringMode, SubstituteRanking,
};

/// Paths of the representation resources.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResourcePaths {
    pub embeddings: Option<PathBuf>,
    pub frequencies: Option<PathBuf>,
    pub bundles: Option<PathBuf>,
    /// Named external sentence vectors.
    pub sentence_vectors: Vec<(String, PathBuf)>,
    pub sif_a: Option<f64>,
}

impl ResourcePaths {
    pub fn files(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = [&self.embeddings, &self.frequencies, &self.bundles]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect();
        out.extend(self.sentence_vectors.iter().map(|(_, p)| p.as_path()));
        out
    }
}

pub fn parse_named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected NAME=PATH, got `{s}`"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected NAME=PATH, got `{s}`"));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

#[derive(Debug, Default)]
pub struct LoadedResources {
    pub table: Option<EmbeddingTable>,
    pub bundles: Option<BundleIndex>,
    pub sentence_vectors: Option<HashMap<String, SentenceVectors>>,
    pub sif: Option<SifState>,
}

impl LoadedResources {
    pub fn view(&self) -> Resources<'_> {
        Resources {
            table: self.table.as_ref(),
            bundles: self.bundles.as_ref(),
            sentence_vectors: self.sentence_vectors.as_ref(),
            sif: self.sif.as_ref(),
        }
    }
}

/// Lowercased words (and their space-separated parts) an embedding table
/// must cover for the given instances and extra words.
pub fn vocabulary<'a>(instances: &InstanceIndex, extra: impl IntoIterator<Item = &'a str>) -> HashSet<String> {
    let mut out = HashSet::new();
    let mut add = |w: &str| {
        let w = w.to_lowercase();
        for part in w.split_whitespace() {
            out.insert(part.to_string());
        }
        out.insert(w);
    };
    for inst in instances.iter() {
        add(&inst.lemma);
        for t in &inst.tokens {
            add(t);
        }
    }
    for w in extra {
        add(w);
    }
    out
}

/// Loads whatever resources are configured. The embedding table keeps only
/// `vocab` words; SIF is fitted over all `instances` when `fit_sif` is set.
pub fn load_resources(
    paths: &ResourcePaths,
    instances: &InstanceIndex,
    vocab: &HashSet<String>,
    fit_sif: bool,
) -> Result<LoadedResources> {
    let mut out = LoadedResources::default();
    if let Some(p) = &paths.embeddings {
        let keep = |w: &str| vocab.contains(w);
        let mut table = EmbeddingTable::load_text(p, Some(&keep))?;
        log::info!("loaded {} embeddings of dimension {} from {}", table.len(), table.dimension(), p.display());
        if let Some(f) = &paths.frequencies {
            table.load_frequencies(f)?;
        }
        out.table = Some(table);
    } else if paths.frequencies.is_some() {
        return Err(Error::Invalid("--frequencies requires --embeddings".into()));
    }
    if let Some(p) = &paths.bundles {
        let b = load_bundles(p, Some(instances))?;
        log::info!("loaded {} contextual bundles from {}", b.len(), p.display());
        out.bundles = Some(b);
    }
    if !paths.sentence_vectors.is_empty() {
        let mut map = HashMap::new();
        for (name, p) in &paths.sentence_vectors {
            if map.insert(name.clone(), load_sentence_vectors(p)?).is_some() {
                return Err(Error::Invalid(format!("sentence vectors `{name}` given twice")));
            }
        }
        out.sentence_vectors = Some(map);
    }
    if fit_sif {
        let table = out
            .table
            .as_ref()
            .ok_or_else(|| Error::Invalid("SIF representations require --embeddings".into()))?;
        if paths.frequencies.is_none() {
            log::warn!("no word frequencies given; SIF weights are uniform");
        }
        let config = SifConfig {
            a: paths.sif_a.unwrap_or(SifConfig::default().a),
        };
        out.sif = Some(fit_sif_on_instances(instances.iter(), table, config)?);
    }
    Ok(out)
}

pub fn needs_sif(specs: &[ReprSpec]) -> bool {
    specs.iter().any(|s| s.source == Source::Sif)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PoolKind {
    /// Curated substitute lists; ranked by context fit only and filtered by
    /// embedding similarity.
    Curated,
    /// Paraphrase-database candidates; ranked by the full score and filtered
    /// by paraphrase adjacency.
    Paraphrase,
}

impl PoolKind {
    pub fn default_scoring(self) -> ScoringMode {
        match self {
            PoolKind::Curated => ScoringMode::ContextOnly,
            PoolKind::Paraphrase => ScoringMode::FullEq1,
        }
    }

    pub fn default_filter(self) -> FilterConfig {
        match self {
            PoolKind::Curated => FilterConfig::EmbeddingAdjacent { threshold: 0.2 },
            PoolKind::Paraphrase => FilterConfig::PpdbAdjacent,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Annotation {
    pub sets: Vec<SubstituteSet>,
    /// Instances whose context vector came from the static fallback.
    pub fallback_context: Vec<String>,
    /// Instances left without substitutes, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Ranks each instance's pool candidates and filters the ranking.
pub fn annotate(
    instances: &InstanceIndex,
    pool: &CandidatePool,
    res: &Resources<'_>,
    paraphrases: Option<&ParaphraseStore>,
    scoring: ScoringMode,
    filter: FilterConfig,
) -> Result<Annotation> {
    let table = res
        .table
        .ok_or_else(|| Error::Invalid("annotation requires static embeddings".into()))?;
    if filter == FilterConfig::PpdbAdjacent && paraphrases.is_none() {
        return Err(Error::Invalid("the ppdb filter requires --paraphrases".into()));
    }
    let fres = FilterResources {
        paraphrases,
        table: Some(table),
    };
    enum Outcome {
        Done(SubstituteSet, bool),
        Skipped(String, String),
    }
    let outcomes = par::try_map(instances.as_slice(), |inst| -> Result<Outcome> {
        let Some(cands) = pool.for_instance(inst) else {
            return Ok(Outcome::Skipped(inst.instance_id.clone(), format!("no candidate pool for `{}`", inst.pool_key())));
        };
        let (cv, fallback) = context_vector(inst, res)?;
        let ranking = match rank_candidates(inst, cands, table, &cv, scoring) {
            Ok(r) => r,
            Err(e @ Error::NoScorableCandidates(_)) => return Ok(Outcome::Skipped(inst.instance_id.clone(), e.to_string())),
            Err(e) => return Err(e),
        };
        let filtered = apply_filter(&ranking, filter, &fres)?;
        Ok(Outcome::Done(filtered.to_set(), fallback))
    })?;
    let mut out = Annotation::default();
    for o in outcomes {
        match o {
            Outcome::Done(set, fallback) => {
                if fallback {
                    out.fallback_context.push(set.instance_id.clone());
                }
                out.sets.push(set);
            }
            Outcome::Skipped(id, why) => {
                log::warn!("`{id}` left without substitutes: {why}");
                out.skipped.push((id, why));
            }
        }
    }
    Ok(out)
}

/// Applies each filter to the rankings and scores the result against gold.
pub fn filter_study(
    rankings: &[SubstituteSet],
    gold: &[SubstituteSet],
    filters: &[FilterConfig],
    fres: &FilterResources<'_>,
) -> Result<Vec<(FilterConfig, FilterScores)>> {
    let gold: std::collections::BTreeMap<String, SubstituteSet> =
        gold.iter().map(|s| (s.instance_id.clone(), s.clone())).collect();
    let ranked: Vec<SubstituteRanking> = rankings
        .iter()
        .filter(|s| gold.contains_key(&s.instance_id))
        .map(SubstituteRanking::from_set)
        .collect();
    let mut out = Vec::new();
    for &f in filters {
        let predicted = par::try_map(&ranked, |r| apply_filter(r, f, fres))?
            .into_iter()
            .map(|r| (r.instance_id.clone(), r))
            .collect();
        out.push((f, evaluate_filter(&predicted, &gold)?));
    }
    Ok(out)
}

pub fn filter_table(rows: &[(FilterConfig, FilterScores)]) -> String {
    let mut s = String::from("filter\tf1\tfp_ratio\ttp\tfp\tfn\n");
    for (f, r) in rows {
        let _ = writeln!(
            s,
            "{f}\t{}\t{}\t{}\t{}\t{}",
            r.f1, r.fp_ratio, r.true_positives, r.false_positives, r.false_negatives
        );
    }
    s
}

/// Reads a word list: the first whitespace-separated field of each line.
/// An embedding file works too; its optional `count dim` header is skipped.
pub fn read_word_list<R: BufRead>(reader: R, source_name: &str) -> Result<HashSet<String>> {
    let mut out = HashSet::new();
    for item in lines(reader, source_name) {
        let (no, line) = item?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if no == 1 && fields.len() == 2 && fields.iter().all(|f| usize::from_str(f).is_ok()) {
            continue;
        }
        if let Some(w) = fields.first() {
            out.insert(w.to_lowercase());
        }
    }
    Ok(out)
}

pub fn load_word_list(path: &Path) -> Result<HashSet<String>> {
    read_word_list(open(path)?, &path.display().to_string())
}

/// Per-lemma inter-annotator agreement and mid-range proportion.
pub fn agreement_table(table: &JudgmentTable) -> String {
    let mut s = String::from("lemma\tuiaa\tumid\tannotators\tjudgments\n");
    for j in table.by_lemma() {
        let u = uiaa(&j).map_or("NA".to_string(), |v| v.to_string());
        let _ = writeln!(
            s,
            "{}\t{u}\t{}\t{}\t{}",
            j.lemma,
            umid(&j),
            j.annotators().count(),
            j.judgments().count()
        );
    }
    s
}
