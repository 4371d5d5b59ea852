//! Ranking of candidate substitutes in context, ranking filters, and filter
//! evaluation against gold substitutes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::{Instance, ParaphraseStore, SubstituteSet};
use crate::error::{Error, Result};
use crate::repr::{cosine, static_average, EmbeddingTable, Resources};

/// Candidates ordered by score, highest first. Ties are ordered by word.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstituteRanking {
    pub instance_id: String,
    pub items: Vec<(String, f64)>,
}

impl SubstituteRanking {
    /// Sorts `items` by score descending, then word ascending.
    pub fn new(instance_id: impl Into<String>, mut items: Vec<(String, f64)>) -> Self {
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self {
            instance_id: instance_id.into(),
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(w, _)| w.as_str())
    }

    fn prefix(&self, n: usize) -> Self {
        Self {
            instance_id: self.instance_id.clone(),
            items: self.items[..n.min(self.items.len())].to_vec(),
        }
    }

    /// The ranking as a substitute set with scores as weights.
    pub fn to_set(&self) -> SubstituteSet {
        SubstituteSet::new(self.instance_id.clone(), self.items.clone())
    }

    /// Orders a weighted set into a ranking (weight descending, then word).
    pub fn from_set(set: &SubstituteSet) -> Self {
        Self::new(
            set.instance_id.clone(),
            set.entries.iter().map(|e| (e.word.clone(), e.weight)).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// Fit to the context only; used with curated candidate pools.
    ContextOnly,
    /// Fit to the context times similarity to the target; used with noisy
    /// paraphrase pools.
    FullEq1,
}

impl FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "context-only" => Ok(ScoringMode::ContextOnly),
            "full-eq1" | "full" => Ok(ScoringMode::FullEq1),
            other => Err(Error::Invalid(format!("unknown scoring mode `{other}`"))),
        }
    }
}

/// `(cos + 1) / 2`, a cosine mapped to [0, 1].
fn unit(cos: f64) -> f64 {
    ((cos + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Substitute score from its cosine to the target word and to the context.
pub fn eq1_score(cos_target: f64, cos_context: f64) -> f64 {
    unit(cos_target) * unit(cos_context)
}

pub fn context_only_score(cos_context: f64) -> f64 {
    unit(cos_context)
}

/// Scores every candidate that has a vector and returns them ranked.
/// Multiword candidates use the mean of their component vectors.
pub fn rank_candidates<'c>(
    instance: &Instance,
    candidates: impl IntoIterator<Item = &'c String>,
    table: &EmbeddingTable,
    context_vector: &[f64],
    mode: ScoringMode,
) -> Result<SubstituteRanking> {
    let target = match mode {
        ScoringMode::ContextOnly => None,
        ScoringMode::FullEq1 => Some(
            table
                .phrase_vector(instance.target_word())
                .or_else(|| table.phrase_vector(&instance.lemma))
                .ok_or_else(|| {
                    Error::Invalid(format!(
                        "target word `{}` of `{}` has no vector",
                        instance.target_word(),
                        instance.instance_id
                    ))
                })?,
        ),
    };
    let mut items = Vec::new();
    for cand in candidates {
        let Some(s) = table.phrase_vector(cand) else {
            continue;
        };
        let c_ctx = cosine(&s, context_vector)?;
        let score = match &target {
            None => context_only_score(c_ctx),
            Some(t) => eq1_score(cosine(&s, t)?, c_ctx),
        };
        items.push((cand.clone(), score));
    }
    if items.is_empty() {
        return Err(Error::NoScorableCandidates(instance.instance_id.clone()));
    }
    Ok(SubstituteRanking::new(instance.instance_id.clone(), items))
}

/// Context vector for ranking: the bundle's blank-slot vector when present,
/// otherwise the static average of the sentence without the target. The
/// flag is true when the fallback was used.
pub fn context_vector(instance: &Instance, res: &Resources<'_>) -> Result<(Vec<f64>, bool)> {
    if let Some(cv) = res
        .bundles
        .and_then(|b| b.get(&instance.instance_id))
        .and_then(|b| b.context_vector.as_ref())
    {
        return Ok((cv.iter().map(|&x| x as f64).collect(), false));
    }
    let table = res.table.ok_or_else(|| {
        Error::Invalid(format!(
            "no context vector for `{}` and no embedding table to fall back on",
            instance.instance_id
        ))
    })?;
    let idx: Vec<usize> = (0..instance.tokens.len())
        .filter(|&i| i != instance.target_index)
        .collect();
    Ok((static_average(instance, &idx, table)?, true))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterConfig {
    None,
    PpdbAdjacent,
    /// Lower-bound similarity `threshold` in [0, 1).
    EmbeddingAdjacent { threshold: f64 },
    ScoreGap,
    TopK(usize),
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FilterConfig::EmbeddingAdjacent { threshold } if !(0.0..1.0).contains(&threshold) => {
                Err(Error::Invalid(format!("threshold {threshold} not in [0, 1)")))
            }
            FilterConfig::TopK(0) => Err(Error::Invalid("top-k needs k ≥ 1".into())),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FilterConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterConfig::None => f.write_str("none"),
            FilterConfig::PpdbAdjacent => f.write_str("ppdb"),
            FilterConfig::EmbeddingAdjacent { threshold } => write!(f, "embedding:T={threshold}"),
            FilterConfig::ScoreGap => f.write_str("score-gap"),
            FilterConfig::TopK(k) => write!(f, "top:k={k}"),
        }
    }
}

impl FromStr for FilterConfig {
    type Err = Error;

    /// `none`, `ppdb`, `embedding:T=0.2`, `score-gap`, `top:k=5`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("invalid filter `{s}`"));
        let cfg = match s.split_once(':') {
            None => match s {
                "none" => FilterConfig::None,
                "ppdb" | "ppdb-adjacent" => FilterConfig::PpdbAdjacent,
                "score-gap" | "c2v-score" => FilterConfig::ScoreGap,
                "embedding" | "embedding-adjacent" => FilterConfig::EmbeddingAdjacent { threshold: 0.2 },
                _ => return Err(bad()),
            },
            Some(("embedding" | "embedding-adjacent", arg)) => {
                let t = arg.strip_prefix("T=").ok_or_else(bad)?;
                FilterConfig::EmbeddingAdjacent {
                    threshold: t.parse().map_err(|_| bad())?,
                }
            }
            Some(("top" | "top-k", arg)) => {
                let k = arg.strip_prefix("k=").unwrap_or(arg);
                FilterConfig::TopK(k.parse().map_err(|_| bad())?)
            }
            _ => return Err(bad()),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Keeps the ranking down to the first adjacent pair that is not a known
/// paraphrase pair.
pub fn filter_ppdb(r: &SubstituteRanking, store: &ParaphraseStore) -> SubstituteRanking {
    let cut = r
        .items
        .windows(2)
        .position(|w| !store.contains(&w[0].0, &w[1].0))
        .map_or(r.len(), |i| i + 1);
    r.prefix(cut)
}

fn pair_similarity(a: &str, b: &str, table: &EmbeddingTable) -> f64 {
    match (table.phrase_vector(a), table.phrase_vector(b)) {
        (Some(x), Some(y)) => cosine(&x, &y).unwrap_or(0.0),
        _ => 0.0,
    }
}

/// Adjacent-similarity filter. The similarity of the top two substitutes
/// is the reference `S`; if it is below `threshold` only the first is kept.
/// Otherwise the ranking is cut after the first later pair whose similarity
/// drops below the midpoint `(threshold + S) / 2`.
pub fn filter_embedding(r: &SubstituteRanking, table: &EmbeddingTable, threshold: f64) -> SubstituteRanking {
    if r.len() < 2 {
        return r.clone();
    }
    let sim = |i: usize| pair_similarity(&r.items[i].0, &r.items[i + 1].0, table);
    let reference = sim(0);
    if reference < threshold {
        return r.prefix(1);
    }
    let midpoint = (threshold + reference) / 2.0;
    let cut = (1..r.len() - 1)
        .find(|&i| sim(i) < midpoint)
        .map_or(r.len(), |i| i + 1);
    r.prefix(cut)
}

/// Cuts the ranking at the largest drop in score between neighbours.
pub fn filter_score_gap(r: &SubstituteRanking) -> SubstituteRanking {
    if r.len() < 2 {
        return r.clone();
    }
    let mut best = 0;
    let mut best_gap = f64::NEG_INFINITY;
    for (i, w) in r.items.windows(2).enumerate() {
        let gap = w[0].1 - w[1].1;
        if gap > best_gap {
            best_gap = gap;
            best = i;
        }
    }
    r.prefix(best + 1)
}

pub fn filter_top_k(r: &SubstituteRanking, k: usize) -> SubstituteRanking {
    r.prefix(k)
}

/// Resources the filters may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct FilterResources<'a> {
    pub paraphrases: Option<&'a ParaphraseStore>,
    pub table: Option<&'a EmbeddingTable>,
}

pub fn apply_filter(r: &SubstituteRanking, cfg: FilterConfig, res: &FilterResources<'_>) -> Result<SubstituteRanking> {
    Ok(match cfg {
        FilterConfig::None => r.clone(),
        FilterConfig::PpdbAdjacent => {
            let store = res
                .paraphrases
                .ok_or_else(|| Error::Invalid("ppdb filter needs a paraphrase store".into()))?;
            filter_ppdb(r, store)
        }
        FilterConfig::EmbeddingAdjacent { threshold } => {
            let table = res
                .table
                .ok_or_else(|| Error::Invalid("embedding filter needs an embedding table".into()))?;
            filter_embedding(r, table, threshold)
        }
        FilterConfig::ScoreGap => filter_score_gap(r),
        FilterConfig::TopK(k) => filter_top_k(r, k),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterScores {
    pub f1: f64,
    /// FP / (TP + FP); 0 when nothing was predicted.
    pub fp_ratio: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Micro-averaged F1 and false-positive proportion of predicted substitutes
/// against gold substitutes, over the predicted instances.
pub fn evaluate_filter(
    predicted: &BTreeMap<String, SubstituteRanking>,
    gold: &BTreeMap<String, SubstituteSet>,
) -> Result<FilterScores> {
    let missing: Vec<String> = predicted
        .keys()
        .filter(|id| !gold.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGold(missing));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (id, ranking) in predicted {
        let pred: HashSet<&str> = ranking.words().collect();
        let g = gold[id].word_set();
        let hit = pred.intersection(&g).count();
        tp += hit;
        fp += pred.len() - hit;
        fneg += g.len() - hit;
    }
    if tp + fp + fneg == 0 {
        return Err(Error::NothingToEvaluate);
    }
    let f1 = 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
    let fp_ratio = if tp + fp == 0 { 0.0 } else { fp as f64 / (tp + fp) as f64 };
    Ok(FilterScores {
        f1,
        fp_ratio,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
    })
}
