//! Vector representations of instances and cosine-based usage similarity.
//!
//! Static word vectors come from a text embedding table; contextual vectors
//! are read from precomputed per-instance bundles (one vector per corpus
//! token per layer). A [`ReprSpec`] selects the source, the layer
//! combination, and an optional context window around the target.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{lines, open, Instance, InstanceIndex, InstancePair};
use crate::error::{Error, Result};
use crate::linalg::{add_assign, dot, norm, scale};
use crate::par;

/// Static word vectors with optional unigram probabilities.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f32>,
    probabilities: Option<HashMap<String, f64>>,
    fallback_probability: f64,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut table = Self::new(dim);
        for (w, v) in entries {
            table.insert(w.into(), v)?;
        }
        Ok(table)
    }

    /// Adds a vector; the word is lower-cased and the first vector seen for
    /// a word wins. Returns whether the vector was stored.
    pub fn insert(&mut self, word: String, vector: Vec<f32>) -> Result<bool> {
        if self.dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        let word = word.to_lowercase();
        if self.index.contains_key(&word) {
            return Ok(false);
        }
        self.index.insert(word, self.index.len());
        self.data.extend_from_slice(&vector);
        Ok(true)
    }

    /// Reads `word v1 … vd` lines. A leading `count dim` header is skipped;
    /// words containing spaces are recovered from the declared dimension.
    /// When `keep` is given, only words it accepts are stored.
    pub fn read_text<R: BufRead>(
        reader: R,
        source_name: &str,
        keep: Option<&dyn Fn(&str) -> bool>,
    ) -> Result<Self> {
        let mut table = Self::default();
        for item in lines(reader, source_name) {
            let (no, line) = item?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if table.dim == 0 {
                if no == 1
                    && fields.len() == 2
                    && fields.iter().all(|f| f.parse::<usize>().is_ok())
                {
                    continue;
                }
                if fields.len() < 2 {
                    return Err(Error::parse(source_name, no, "embedding line without values"));
                }
                table.dim = fields.len() - 1;
            }
            if fields.len() < table.dim + 1 {
                return Err(Error::parse(
                    source_name,
                    no,
                    format!("expected {} values, found {}", table.dim, fields.len().saturating_sub(1)),
                ));
            }
            let split = fields.len() - table.dim;
            let word = fields[..split].join(" ");
            if let Some(keep) = keep {
                if !keep(&word.to_lowercase()) {
                    continue;
                }
            }
            let vector = fields[split..]
                .iter()
                .map(|f| f.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(source_name, no, format!("bad value: {e}")))?;
            table.insert(word, vector)?;
        }
        if table.dim == 0 {
            return Err(Error::Invalid(format!("{source_name}: no embeddings")));
        }
        table.fallback_probability = 1.0 / table.len().max(1) as f64;
        Ok(table)
    }

    pub fn load_text(path: &Path, keep: Option<&dyn Fn(&str) -> bool>) -> Result<Self> {
        Self::read_text(open(path)?, &path.display().to_string(), keep)
    }

    /// Reads a `word<TAB>count` file and attaches normalized frequencies as
    /// unigram probabilities. Words missing from the file get the smallest
    /// observed probability.
    pub fn load_frequencies(&mut self, path: &Path) -> Result<()> {
        let name = path.display().to_string();
        let mut counts = HashMap::new();
        for item in lines(open(path)?, &name) {
            let (no, line) = item?;
            let (w, c) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&name, no, "expected `word<TAB>count`"))?;
            let c: f64 = c
                .trim()
                .parse()
                .map_err(|_| Error::parse(&name, no, format!("invalid count `{c}`")))?;
            if c <= 0.0 {
                return Err(Error::parse(&name, no, "counts must be positive"));
            }
            *counts.entry(w.to_lowercase()).or_insert(0.0) += c;
        }
        let total: f64 = counts.values().sum();
        self.set_probabilities(counts.into_iter().map(|(w, c)| (w, c / total)).collect())
    }

    pub fn set_probabilities(&mut self, probs: HashMap<String, f64>) -> Result<()> {
        if let Some((w, p)) = probs.iter().find(|(_, &p)| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Invalid(format!("probability {p} of `{w}` not in (0, 1]")));
        }
        self.fallback_probability = probs.values().copied().fold(f64::INFINITY, f64::min);
        if !self.fallback_probability.is_finite() {
            self.fallback_probability = 1.0 / self.len().max(1) as f64;
        }
        self.probabilities = Some(probs);
        Ok(())
    }

    /// Unigram probability; uniform over the vocabulary when no frequencies
    /// were attached.
    pub fn probability(&self, word: &str) -> f64 {
        match &self.probabilities {
            Some(p) => p.get(word).copied().unwrap_or(self.fallback_probability),
            None => 1.0 / self.len().max(1) as f64,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn vector(&self, word: &str) -> Option<Vec<f64>> {
        self.get(word).map(to_f64)
    }

    /// Vector of a possibly multiword expression: the mean of the vectors
    /// of its components that are in the table.
    pub fn phrase_vector(&self, phrase: &str) -> Option<Vec<f64>> {
        if let Some(v) = self.vector(phrase) {
            return Some(v);
        }
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for part in phrase.split_whitespace() {
            if let Some(v) = self.get(part) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += *x as f64;
                }
                n += 1;
            }
        }
        (n > 0).then(|| {
            scale(&mut acc, 1.0 / n as f64);
            acc
        })
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Per-token contextual vectors of one instance, layer by layer, plus an
/// optional vector of the sentence with the target blanked out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualVectorBundle {
    pub instance_id: String,
    pub layers: IndexMap<String, Vec<Vec<f32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_vector: Option<Vec<f32>>,
}

impl ContextualVectorBundle {
    /// Layers ordered shallow to deep: numerically when every layer name is
    /// an integer, otherwise in file order.
    pub fn ordered_layers(&self) -> Vec<&Vec<Vec<f32>>> {
        let numeric: Option<Vec<(i64, &Vec<Vec<f32>>)>> = self
            .layers
            .iter()
            .map(|(k, v)| k.parse::<i64>().ok().map(|n| (n, v)))
            .collect();
        match numeric {
            Some(mut v) => {
                v.sort_by_key(|(n, _)| *n);
                v.into_iter().map(|(_, l)| l).collect()
            }
            None => self.layers.values().collect(),
        }
    }

    pub fn token_count(&self) -> Option<usize> {
        self.layers.values().next().map(Vec::len)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let n = self.token_count();
        for (name, layer) in &self.layers {
            if Some(layer.len()) != n {
                return Err(format!(
                    "layer `{name}` of `{}` has {} tokens, expected {}",
                    self.instance_id,
                    layer.len(),
                    n.unwrap_or(0)
                ));
            }
            if let Some(first) = layer.first() {
                if first.is_empty() || layer.iter().any(|v| v.len() != first.len()) {
                    return Err(format!(
                        "layer `{name}` of `{}` has inconsistent dimensions",
                        self.instance_id
                    ));
                }
            }
        }
        if let Some(cv) = &self.context_vector {
            if cv.is_empty() {
                return Err(format!("empty context vector for `{}`", self.instance_id));
            }
        }
        Ok(())
    }

    /// Combined vector of the token at `index`.
    pub fn token_vector(&self, index: usize, combo: LayerCombination) -> Result<Vec<f64>> {
        let layers = self.ordered_layers();
        let need = combo.layers_needed();
        if layers.len() < need {
            return Err(Error::Invalid(format!(
                "`{combo}` needs {need} layers, bundle `{}` has {}",
                self.instance_id,
                layers.len()
            )));
        }
        fn pick<'l>(layer: &'l [Vec<f32>], index: usize, id: &str) -> Result<&'l [f32]> {
            layer.get(index).map(Vec::as_slice).ok_or_else(|| {
                Error::Invalid(format!(
                    "token {index} out of range in bundle `{id}`"
                ))
            })
        }
        let token = |l: usize| pick(layers[l], index, &self.instance_id);
        let last = layers.len() - 1;
        Ok(match combo {
            LayerCombination::Top => to_f64(token(last)?),
            LayerCombination::SecondToLast => to_f64(token(last - 1)?),
            LayerCombination::AverageLast4 => {
                let take = layers.len().min(4);
                let mut acc = to_f64(token(last)?);
                for l in layers.len() - take..last {
                    let v = token(l)?;
                    if v.len() != acc.len() {
                        return Err(Error::DimensionMismatch {
                            expected: acc.len(),
                            found: v.len(),
                        });
                    }
                    add_assign(&mut acc, &to_f64(v));
                }
                scale(&mut acc, 1.0 / take as f64);
                acc
            }
            LayerCombination::ConcatLast4 => {
                let mut out = Vec::new();
                for l in (layers.len() - 4..layers.len()).rev() {
                    out.extend(token(l)?.iter().map(|&x| x as f64));
                }
                out
            }
        })
    }
}

/// Bundles keyed by instance id.
pub type BundleIndex = HashMap<String, ContextualVectorBundle>;

pub fn read_bundles<R: BufRead>(
    reader: R,
    source_name: &str,
    instances: Option<&InstanceIndex>,
) -> Result<BundleIndex> {
    let mut out = BundleIndex::new();
    for item in lines(reader, source_name) {
        let (no, line) = item?;
        let bundle: ContextualVectorBundle = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source_name, no, e.to_string()))?;
        bundle
            .validate()
            .map_err(|m| Error::parse(source_name, no, m))?;
        if let Some(index) = instances {
            let Some(inst) = index.get(&bundle.instance_id) else {
                log::debug!("bundle for unknown instance `{}` ignored", bundle.instance_id);
                continue;
            };
            if let Some(n) = bundle.token_count() {
                if n != inst.tokens.len() {
                    return Err(Error::parse(
                        source_name,
                        no,
                        format!(
                            "bundle `{}` has {n} token vectors, instance has {} tokens",
                            bundle.instance_id,
                            inst.tokens.len()
                        ),
                    ));
                }
            }
        }
        if out.contains_key(&bundle.instance_id) {
            return Err(Error::parse(
                source_name,
                no,
                format!("duplicate id `{}`", bundle.instance_id),
            ));
        }
        out.insert(bundle.instance_id.clone(), bundle);
    }
    Ok(out)
}

pub fn load_bundles(path: &Path, instances: Option<&InstanceIndex>) -> Result<BundleIndex> {
    read_bundles(open(path)?, &path.display().to_string(), instances)
}

/// Externally produced per-instance sentence vectors.
pub type SentenceVectors = HashMap<String, Vec<f32>>;

#[derive(Deserialize)]
struct SentenceVectorLine {
    instance_id: String,
    vector: Vec<f32>,
}

/// Reads `{"instance_id","vector":[...]}` lines.
pub fn load_sentence_vectors(path: &Path) -> Result<SentenceVectors> {
    let name = path.display().to_string();
    let mut out = SentenceVectors::new();
    let mut dim = None;
    for item in lines(open(path)?, &name) {
        let (no, line) = item?;
        let rec: SentenceVectorLine =
            serde_json::from_str(&line).map_err(|e| Error::parse(&name, no, e.to_string()))?;
        if *dim.get_or_insert(rec.vector.len()) != rec.vector.len() || rec.vector.is_empty() {
            return Err(Error::parse(&name, no, "inconsistent sentence vector dimension"));
        }
        if out.insert(rec.instance_id.clone(), rec.vector).is_some() {
            return Err(Error::parse(&name, no, format!("duplicate id `{}`", rec.instance_id)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerCombination {
    Top,
    AverageLast4,
    /// Deepest of the four layers first.
    ConcatLast4,
    SecondToLast,
}

impl LayerCombination {
    fn layers_needed(self) -> usize {
        match self {
            LayerCombination::Top | LayerCombination::AverageLast4 => 1,
            LayerCombination::SecondToLast => 2,
            LayerCombination::ConcatLast4 => 4,
        }
    }

    fn slug(self) -> &'static str {
        match self {
            LayerCombination::Top => "top",
            LayerCombination::AverageLast4 => "av4",
            LayerCombination::ConcatLast4 => "concat4",
            LayerCombination::SecondToLast => "second_to_last",
        }
    }
}

impl fmt::Display for LayerCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerCombination::Top => "top",
            LayerCombination::AverageLast4 => "av4",
            LayerCombination::ConcatLast4 => "concat4",
            LayerCombination::SecondToLast => "second-to-last",
        })
    }
}

impl FromStr for LayerCombination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "top" => LayerCombination::Top,
            "av4" | "average-of-last-4" | "average-of-layers" => LayerCombination::AverageLast4,
            "concat4" | "concat-last-4" => LayerCombination::ConcatLast4,
            "second-to-last" | "2nd-to-last" => LayerCombination::SecondToLast,
            other => return Err(Error::Invalid(format!("unknown layer combination `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Source {
    StaticAverage,
    Sif,
    ContextualTarget,
    ContextualAverage,
    /// `None` uses the bundle's context vector; `Some(name)` a named set of
    /// externally supplied sentence vectors.
    SentenceVector(Option<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub size: usize,
    pub include_target: bool,
}

/// Which representation to build for an instance.
///
/// String form: `source[:layers][:w=N[+t]]`, for example `static-average`,
/// `static-average:w=3+t`, `sif`, `contextual-target:av4`,
/// `contextual-average:top:w=2`, `sentence-vector`, `sentence-vector:use`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReprSpec {
    pub source: Source,
    pub layers: Option<LayerCombination>,
    pub window: Option<Window>,
}

impl ReprSpec {
    pub fn new(source: Source, layers: Option<LayerCombination>, window: Option<Window>) -> Result<Self> {
        let spec = Self { source, layers, window };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let contextual = matches!(self.source, Source::ContextualTarget | Source::ContextualAverage);
        if contextual != self.layers.is_some() {
            return Err(Error::Invalid(format!(
                "layer combination is {} for `{}`",
                if contextual { "required" } else { "not allowed" },
                self
            )));
        }
        if let Some(w) = self.window {
            if !matches!(self.source, Source::StaticAverage | Source::ContextualAverage) {
                return Err(Error::Invalid(format!("window not allowed for `{self}`")));
            }
            if w.size == 0 {
                return Err(Error::Invalid("window size must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// Name of the cosine feature built from this representation.
    pub fn feature_name(&self) -> String {
        let mut name = String::from("cos_");
        name.push_str(match &self.source {
            Source::StaticAverage => "static_average",
            Source::Sif => "sif",
            Source::ContextualTarget => "contextual_target",
            Source::ContextualAverage => "contextual_average",
            Source::SentenceVector(_) => "sentence_vector",
        });
        if let Source::SentenceVector(Some(n)) = &self.source {
            name.push('_');
            name.push_str(&n.replace('-', "_"));
        }
        if let Some(l) = self.layers {
            name.push('_');
            name.push_str(l.slug());
        }
        if let Some(w) = self.window {
            name.push_str(&format!("_w{}", w.size));
            if w.include_target {
                name.push('t');
            }
        }
        name
    }
}

impl fmt::Display for ReprSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            Source::StaticAverage => f.write_str("static-average")?,
            Source::Sif => f.write_str("sif")?,
            Source::ContextualTarget => f.write_str("contextual-target")?,
            Source::ContextualAverage => f.write_str("contextual-average")?,
            Source::SentenceVector(None) => f.write_str("sentence-vector")?,
            Source::SentenceVector(Some(n)) => write!(f, "sentence-vector:{n}")?,
        }
        if let Some(l) = self.layers {
            write!(f, ":{l}")?;
        }
        if let Some(w) = self.window {
            write!(f, ":w={}", w.size)?;
            if w.include_target {
                f.write_str("+t")?;
            }
        }
        Ok(())
    }
}

impl FromStr for ReprSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or_default();
        let mut source = match head {
            "static-average" | "static" => Source::StaticAverage,
            "sif" => Source::Sif,
            "contextual-target" => Source::ContextualTarget,
            "contextual-average" => Source::ContextualAverage,
            "sentence-vector" => Source::SentenceVector(None),
            other => return Err(Error::Invalid(format!("unknown representation source `{other}`"))),
        };
        let mut layers = None;
        let mut window = None;
        for part in parts {
            if let Some(w) = part.strip_prefix("w=") {
                let (n, include_target) = match w.strip_suffix("+t") {
                    Some(n) => (n, true),
                    None => (w, false),
                };
                let size = n
                    .parse()
                    .map_err(|_| Error::Invalid(format!("invalid window `{part}` in `{s}`")))?;
                window = Some(Window { size, include_target });
            } else if let Source::SentenceVector(name @ None) = &mut source {
                *name = Some(part.to_string());
            } else {
                layers = Some(part.parse()?);
            }
        }
        Self::new(source, layers, window)
    }
}

/// Fitted SIF parameters: the weighting constant and the common direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SifState {
    pub a: f64,
    /// First principal direction, unit norm.
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SifConfig {
    pub a: f64,
}

impl Default for SifConfig {
    fn default() -> Self {
        Self { a: 1e-3 }
    }
}

/// Weight `a / (a + p(w))` of a word with unigram probability `p`.
pub fn sif_weight(a: f64, p: f64) -> f64 {
    a / (a + p)
}

/// SIF-weighted average of the in-vocabulary tokens of `instance`.
pub fn sif_average(instance: &Instance, table: &EmbeddingTable, a: f64) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; table.dimension()];
    let mut n = 0usize;
    for tok in &instance.tokens {
        if let Some(v) = table.get(tok) {
            let w = sif_weight(a, table.probability(tok));
            for (s, x) in acc.iter_mut().zip(v) {
                *s += w * *x as f64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyRepresentation(instance.instance_id.clone()));
    }
    scale(&mut acc, 1.0 / n as f64);
    Ok(acc)
}

const POWER_ITERATIONS: usize = 10_000;
const POWER_TOLERANCE: f64 = 1e-13;

/// First principal direction of the stacked (uncentered) sentence vectors,
/// by power iteration on `Xᵀ(X v)`.
pub fn fit_sif(sentence_vectors: &[Vec<f64>], config: SifConfig) -> Result<SifState> {
    if !(config.a > 0.0) {
        return Err(Error::Invalid(format!("SIF parameter a = {} must be positive", config.a)));
    }
    if sentence_vectors.len() < 2 {
        return Err(Error::DegenerateSif(format!(
            "need at least 2 sentence vectors, got {}",
            sentence_vectors.len()
        )));
    }
    let dim = sentence_vectors[0].len();
    if let Some(v) = sentence_vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
    }
    let start = sentence_vectors
        .iter()
        .max_by(|a, b| norm(a).total_cmp(&norm(b)))
        .expect("non-empty");
    let start_norm = norm(start);
    if start_norm == 0.0 {
        return Err(Error::DegenerateSif("all sentence vectors are zero".into()));
    }
    let mut v: Vec<f64> = start.iter().map(|x| x / start_norm).collect();
    for _ in 0..POWER_ITERATIONS {
        let mut next = vec![0.0; dim];
        for row in sentence_vectors {
            let p = dot(row, &v);
            for (n, x) in next.iter_mut().zip(row) {
                *n += p * x;
            }
        }
        let nn = norm(&next);
        if nn == 0.0 || !nn.is_finite() {
            return Err(Error::DegenerateSif("power iteration collapsed".into()));
        }
        scale(&mut next, 1.0 / nn);
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = next;
        if delta < POWER_TOLERANCE {
            break;
        }
    }
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);
    if pivot < 0.0 {
        scale(&mut v, -1.0);
    }
    Ok(SifState { a: config.a, direction: v })
}

/// Removes the projection of `v` on the fitted direction: `v − u(uᵀv)`.
pub fn apply_sif(v: &[f64], state: &SifState) -> Result<Vec<f64>> {
    let u = &state.direction;
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    let p = dot(u, v);
    Ok(v.iter().zip(u).map(|(x, ui)| x - ui * p).collect())
}

/// Fits the SIF direction over every instance of a dataset. Instances with
/// no in-vocabulary token are left out of the fit.
pub fn fit_sif_on_instances<'a>(
    instances: impl IntoIterator<Item = &'a Instance>,
    table: &EmbeddingTable,
    config: SifConfig,
) -> Result<SifState> {
    let insts: Vec<&Instance> = instances.into_iter().collect();
    let averages = par::map(&insts, |inst| sif_average(inst, table, config.a));
    let vectors: Vec<Vec<f64>> = averages
        .into_iter()
        .filter_map(|r| match r {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("left out of SIF fit: {e}");
                None
            }
        })
        .collect();
    fit_sif(&vectors, config)
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 || ny == 0.0 {
        log::warn!("cosine of a zero-norm vector taken as 0");
        return Ok(0.0);
    }
    Ok((dot(x, y) / (nx * ny)).clamp(-1.0, 1.0))
}

/// Token indices within `w` positions of the target, clipped to the
/// sentence.
pub fn window_indices(instance: &Instance, w: usize, include_target: bool) -> Vec<usize> {
    let t = instance.target_index;
    let lo = t.saturating_sub(w);
    let hi = (t + w).min(instance.tokens.len() - 1);
    (lo..=hi).filter(|&i| include_target || i != t).collect()
}

/// Everything a representation may draw on.
#[derive(Debug, Clone, Copy, Default)]
pub struct Resources<'a> {
    pub table: Option<&'a EmbeddingTable>,
    pub bundles: Option<&'a BundleIndex>,
    pub sentence_vectors: Option<&'a HashMap<String, SentenceVectors>>,
    pub sif: Option<&'a SifState>,
}

fn need<'a, T>(r: Option<&'a T>, what: &str, spec: &ReprSpec) -> Result<&'a T> {
    r.ok_or_else(|| Error::Invalid(format!("`{spec}` requires {what}")))
}

fn selected_indices(instance: &Instance, window: Option<Window>) -> Vec<usize> {
    match window {
        Some(w) => window_indices(instance, w.size, w.include_target),
        None => (0..instance.tokens.len()).collect(),
    }
}

fn bundle_for<'a>(instance: &Instance, res: &Resources<'a>, spec: &ReprSpec) -> Result<&'a ContextualVectorBundle> {
    let bundles = need(res.bundles, "contextual vector bundles", spec)?;
    let b = bundles.get(&instance.instance_id).ok_or_else(|| {
        Error::Invalid(format!("no contextual bundle for `{}`", instance.instance_id))
    })?;
    if b.token_count() != Some(instance.tokens.len()) {
        return Err(Error::Invalid(format!(
            "bundle `{}` has {} token vectors, instance has {} tokens",
            instance.instance_id,
            b.token_count().unwrap_or(0),
            instance.tokens.len()
        )));
    }
    Ok(b)
}

/// Mean of the static vectors of the selected tokens; out-of-vocabulary
/// tokens are skipped.
pub fn static_average(instance: &Instance, indices: &[usize], table: &EmbeddingTable) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; table.dimension()];
    let mut n = 0usize;
    for &i in indices {
        if let Some(v) = table.get(&instance.tokens[i]) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += *x as f64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyRepresentation(instance.instance_id.clone()));
    }
    scale(&mut acc, 1.0 / n as f64);
    Ok(acc)
}

pub fn represent(instance: &Instance, spec: &ReprSpec, res: &Resources<'_>) -> Result<Vec<f64>> {
    match &spec.source {
        Source::StaticAverage => {
            let table = need(res.table, "an embedding table", spec)?;
            static_average(instance, &selected_indices(instance, spec.window), table)
        }
        Source::Sif => {
            let table = need(res.table, "an embedding table", spec)?;
            let state = need(res.sif, "a fitted SIF state", spec)?;
            apply_sif(&sif_average(instance, table, state.a)?, state)
        }
        Source::ContextualTarget => {
            let b = bundle_for(instance, res, spec)?;
            b.token_vector(instance.target_index, spec.layers.expect("validated"))
        }
        Source::ContextualAverage => {
            let b = bundle_for(instance, res, spec)?;
            let combo = spec.layers.expect("validated");
            let idx = selected_indices(instance, spec.window);
            if idx.is_empty() {
                return Err(Error::EmptyRepresentation(instance.instance_id.clone()));
            }
            let mut acc: Option<Vec<f64>> = None;
            for &i in &idx {
                let v = b.token_vector(i, combo)?;
                match &mut acc {
                    None => acc = Some(v),
                    Some(a) => add_assign(a, &v),
                }
            }
            let mut acc = acc.expect("non-empty");
            scale(&mut acc, 1.0 / idx.len() as f64);
            Ok(acc)
        }
        Source::SentenceVector(None) => {
            let b = bundle_for(instance, res, spec)?;
            b.context_vector.as_deref().map(to_f64).ok_or_else(|| {
                Error::Invalid(format!("bundle `{}` has no context vector", instance.instance_id))
            })
        }
        Source::SentenceVector(Some(name)) => {
            let sets = need(res.sentence_vectors, "sentence vectors", spec)?;
            let set = sets
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("no sentence vectors named `{name}`")))?;
            set.get(&instance.instance_id).map(|v| to_f64(v)).ok_or_else(|| {
                Error::Invalid(format!("no `{name}` sentence vector for `{}`", instance.instance_id))
            })
        }
    }
}

/// Cosine of the two instances' representations, per pair, in input order.
pub fn direct_usim(
    pairs: &[InstancePair],
    instances: &InstanceIndex,
    spec: &ReprSpec,
    res: &Resources<'_>,
) -> Result<Vec<(String, f64)>> {
    par::try_map(pairs, |p| {
        pair_cosine(p, instances, spec, res).map(|c| (p.pair_id.clone(), c))
    })
}

pub fn pair_cosine(
    pair: &InstancePair,
    instances: &InstanceIndex,
    spec: &ReprSpec,
    res: &Resources<'_>,
) -> Result<f64> {
    let run = || -> Result<f64> {
        let a = represent(instances.require(&pair.first)?, spec, res)?;
        let b = represent(instances.require(&pair.second)?, spec, res)?;
        cosine(&a, &b)
    };
    run().map_err(|e| e.context(format!("pair `{}`", pair.pair_id)))
}
