//! Datasets and lexical resources: loading, validation, serialization, and
//! construction of SAME/DIFF training pairs from substitute annotations.
//!
//! Every format is line-oriented UTF-8. Words (tokens, lemmas, substitutes,
//! candidates, paraphrases) are lower-cased on ingestion, so a file
//! round-trips byte-for-byte once it is in canonical form: lower-cased,
//! no blank lines, floats in shortest round-trip notation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One tokenized sentence with a marked occurrence of the target word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub lemma: String,
    pub pos: String,
    pub tokens: Vec<String>,
    pub target_index: usize,
}

impl Instance {
    pub fn target_word(&self) -> &str {
        &self.tokens[self.target_index]
    }

    /// Key under which candidate pools are stored (`lemma.pos`).
    pub fn pool_key(&self) -> String {
        format!("{}.{}", self.lemma, self.pos)
    }

    fn normalize(&mut self) {
        self.lemma = self.lemma.to_lowercase();
        for t in &mut self.tokens {
            *t = t.to_lowercase();
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.instance_id.is_empty() {
            return Err("empty instance_id".into());
        }
        if self.tokens.is_empty() {
            return Err(format!("instance `{}` has no tokens", self.instance_id));
        }
        if self.target_index >= self.tokens.len() {
            return Err(format!(
                "target index out of range: {} for {} tokens in `{}`",
                self.target_index,
                self.tokens.len(),
                self.instance_id
            ));
        }
        Ok(())
    }
}

/// Instances indexed by id, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstanceIndex {
    instances: Vec<Instance>,
    by_id: HashMap<String, usize>,
}

impl InstanceIndex {
    pub fn new(instances: Vec<Instance>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            inst.validate().map_err(Error::Invalid)?;
            if by_id.insert(inst.instance_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(inst.instance_id.clone()));
            }
        }
        Ok(Self { instances, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.by_id.get(id).map(|&i| &self.instances[i])
    }

    pub fn require(&self, id: &str) -> Result<&Instance> {
        self.get(id).ok_or_else(|| Error::UnknownInstance(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Instance> {
        self.instances.iter()
    }

    pub fn as_slice(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Gold annotation attached to a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gold {
    /// Graded judgment on the 1–5 scale.
    Score(f64),
    /// Binary same (`T`) / different (`F`) meaning.
    Label(bool),
    Unlabeled,
}

impl Gold {
    pub fn score(&self) -> Option<f64> {
        match *self {
            Gold::Score(s) => Some(s),
            _ => None,
        }
    }

    pub fn label(&self) -> Option<bool> {
        match *self {
            Gold::Label(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for Gold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gold::Score(s) => write!(f, "{s}"),
            Gold::Label(true) => f.write_str("T"),
            Gold::Label(false) => f.write_str("F"),
            Gold::Unlabeled => f.write_str("-"),
        }
    }
}

impl FromStr for Gold {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "T" => Ok(Gold::Label(true)),
            "F" => Ok(Gold::Label(false)),
            "-" => Ok(Gold::Unlabeled),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| format!("invalid gold value `{other}`"))?;
                if !(1.0..=5.0).contains(&v) {
                    return Err(format!("gold score {v} outside [1, 5]"));
                }
                Ok(Gold::Score(v))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstancePair {
    pub pair_id: String,
    pub lemma: String,
    pub first: String,
    pub second: String,
    pub gold: Gold,
}

impl InstancePair {
    /// Checks that both instances exist, differ, and share the pair's lemma.
    pub fn check_references(&self, instances: &InstanceIndex) -> Result<()> {
        let a = instances.require(&self.first)?;
        let b = instances.require(&self.second)?;
        if self.first == self.second {
            return Err(Error::Invalid(format!(
                "pair `{}` pairs instance `{}` with itself",
                self.pair_id, self.first
            )));
        }
        if a.lemma != self.lemma || b.lemma != self.lemma {
            return Err(Error::Invalid(format!(
                "pair `{}` has lemma `{}` but instances have `{}` and `{}`",
                self.pair_id, self.lemma, a.lemma, b.lemma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substitute {
    pub word: String,
    pub weight: f64,
}

/// Weighted substitutes of one instance. For gold data the weight is the
/// number of annotators who proposed the word; for automatic annotations it
/// is the ranking score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstituteSet {
    pub instance_id: String,
    #[serde(rename = "substitutes")]
    pub entries: Vec<Substitute>,
}

impl SubstituteSet {
    pub fn new(instance_id: impl Into<String>, entries: Vec<(String, f64)>) -> Self {
        Self {
            instance_id: instance_id.into(),
            entries: entries
                .into_iter()
                .map(|(word, weight)| Substitute { word, weight })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.word.as_str())
    }

    pub fn word_set(&self) -> HashSet<&str> {
        self.words().collect()
    }

    pub fn weight_of(&self, word: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.word == word).map(|e| e.weight)
    }

    fn normalize(&mut self) {
        for e in &mut self.entries {
            e.word = e.word.to_lowercase();
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.word.as_str()) {
                return Err(format!(
                    "duplicate substitute `{}` for `{}`",
                    e.word, self.instance_id
                ));
            }
            if !(e.weight.is_finite() && e.weight >= 0.0) {
                return Err(format!(
                    "substitute `{}` of `{}` has invalid weight {}",
                    e.word, self.instance_id, e.weight
                ));
            }
        }
        Ok(())
    }

    /// Gold sets carry annotator counts: integers ≥ 1.
    pub fn validate_gold(&self) -> Result<()> {
        for e in &self.entries {
            if e.weight < 1.0 || e.weight.fract() != 0.0 {
                return Err(Error::Invalid(format!(
                    "gold substitute `{}` of `{}` has non-count weight {}",
                    e.word, self.instance_id, e.weight
                )));
            }
        }
        Ok(())
    }
}

/// Closed candidate sets keyed by `lemma.pos`, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidatePool {
    pools: IndexMap<String, IndexSet<String>>,
}

impl CandidatePool {
    /// Builds a pool; candidates equal to the key's lemma are dropped.
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut pool = Self::default();
        for (key, cand) in entries {
            pool.insert(key, cand)?;
        }
        Ok(pool)
    }

    fn insert(&mut self, key: String, candidate: String) -> Result<bool> {
        let key = key.to_lowercase();
        let candidate = candidate.to_lowercase();
        if candidate.is_empty() {
            return Err(Error::Invalid(format!("empty candidate under `{key}`")));
        }
        if lemma_of_key(&key) == candidate {
            return Ok(false);
        }
        let set = self.pools.entry(key.clone()).or_default();
        if !set.insert(candidate.clone()) {
            return Err(Error::DuplicateId(format!("{key}\t{candidate}")));
        }
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<&IndexSet<String>> {
        self.pools.get(key).filter(|s| !s.is_empty())
    }

    pub fn for_instance(&self, instance: &Instance) -> Option<&IndexSet<String>> {
        self.get(&instance.pool_key())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pools.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.pools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }
}

fn lemma_of_key(key: &str) -> &str {
    key.rsplit_once('.').map_or(key, |(lemma, _)| lemma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paraphrase {
    pub first: String,
    pub second: String,
    pub score: Option<f64>,
}

/// Unordered paraphrase pairs. Entries keep file order (both orientations
/// of a pair may appear); membership is symmetric.
#[derive(Debug, Clone, Default)]
pub struct ParaphraseStore {
    entries: Vec<Paraphrase>,
    index: HashSet<(String, String)>,
}

impl PartialEq for ParaphraseStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl ParaphraseStore {
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = Paraphrase>,
    {
        let mut store = Self::default();
        let mut seen = HashSet::new();
        for mut p in entries {
            p.first = p.first.to_lowercase();
            p.second = p.second.to_lowercase();
            if !seen.insert((p.first.clone(), p.second.clone())) {
                return Err(Error::DuplicateId(format!("{}\t{}", p.first, p.second)));
            }
            store.index.insert(unordered(&p.first, &p.second));
            store.entries.push(p);
        }
        Ok(store)
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.index.contains(&unordered(a, b))
    }

    pub fn entries(&self) -> &[Paraphrase] {
        &self.entries
    }

    /// Number of distinct unordered pairs.
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentRow {
    pub lemma: String,
    pub pair_id: String,
    pub annotator_id: String,
    pub score: f64,
}

/// Per-annotator judgments for one lemma: annotator → pair → score.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorJudgments {
    pub lemma: String,
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
}

impl AnnotatorJudgments {
    pub fn annotators(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    pub fn judgments(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.values().flat_map(|m| m.values().copied())
    }

    /// Checks every judged pair belongs to this lemma.
    pub fn check_pairs(&self, pairs: &[InstancePair]) -> Result<()> {
        let lemma_of: HashMap<&str, &str> = pairs
            .iter()
            .map(|p| (p.pair_id.as_str(), p.lemma.as_str()))
            .collect();
        for pair_id in self.scores.values().flat_map(|m| m.keys()) {
            match lemma_of.get(pair_id.as_str()) {
                None => return Err(Error::Invalid(format!("judged pair `{pair_id}` unknown"))),
                Some(l) if *l != self.lemma => {
                    return Err(Error::Invalid(format!(
                        "judged pair `{pair_id}` belongs to `{l}`, not `{}`",
                        self.lemma
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JudgmentTable {
    pub rows: Vec<JudgmentRow>,
}

impl JudgmentTable {
    pub fn new(rows: Vec<JudgmentRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !(1.0..=5.0).contains(&r.score) {
                return Err(Error::Invalid(format!(
                    "judgment {} for `{}` by `{}` outside [1, 5]",
                    r.score, r.pair_id, r.annotator_id
                )));
            }
            if !seen.insert((r.annotator_id.as_str(), r.pair_id.as_str())) {
                return Err(Error::DuplicateId(format!(
                    "{}/{}",
                    r.annotator_id, r.pair_id
                )));
            }
        }
        Ok(Self { rows })
    }

    /// Groups the rows per lemma, lemmas in sorted order.
    pub fn by_lemma(&self) -> Vec<AnnotatorJudgments> {
        let mut grouped: BTreeMap<&str, BTreeMap<String, BTreeMap<String, f64>>> = BTreeMap::new();
        for r in &self.rows {
            grouped
                .entry(&r.lemma)
                .or_default()
                .entry(r.annotator_id.clone())
                .or_default()
                .insert(r.pair_id.clone(), r.score);
        }
        grouped
            .into_iter()
            .map(|(lemma, scores)| AnnotatorJudgments {
                lemma: lemma.to_string(),
                scores,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Loading and serialization

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    UsimPairs,
    WicPairs,
    Instances,
    GoldSubstitutes,
    CandidatePool,
    Paraphrases,
    AnnotatorJudgments,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "usim-pairs" => DatasetKind::UsimPairs,
            "wic-pairs" => DatasetKind::WicPairs,
            "instances" => DatasetKind::Instances,
            "gold-substitutes" => DatasetKind::GoldSubstitutes,
            "candidate-pool" => DatasetKind::CandidatePool,
            "paraphrases" => DatasetKind::Paraphrases,
            "annotator-judgments" => DatasetKind::AnnotatorJudgments,
            other => return Err(Error::Invalid(format!("unknown dataset kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Pairs(Vec<InstancePair>),
    Instances(InstanceIndex),
    Substitutes(Vec<SubstituteSet>),
    Pool(CandidatePool),
    Paraphrases(ParaphraseStore),
    Judgments(JudgmentTable),
}

impl Dataset {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        match self {
            Dataset::Pairs(p) => write_pairs(w, p),
            Dataset::Instances(i) => write_instances(w, i),
            Dataset::Substitutes(s) => write_substitutes(w, s),
            Dataset::Pool(p) => write_pool(w, p),
            Dataset::Paraphrases(p) => write_paraphrases(w, p),
            Dataset::Judgments(j) => write_judgments(w, j),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

/// Loads and validates a dataset file. When `instances` is given, instance
/// references in pair and substitute files are checked against it.
pub fn load_dataset(
    path: &Path,
    kind: DatasetKind,
    instances: Option<&InstanceIndex>,
) -> Result<Dataset> {
    let reader = open(path)?;
    let name = path.display().to_string();
    read_dataset(reader, &name, kind, instances)
}

pub fn read_dataset<R: BufRead>(
    reader: R,
    source_name: &str,
    kind: DatasetKind,
    instances: Option<&InstanceIndex>,
) -> Result<Dataset> {
    Ok(match kind {
        DatasetKind::UsimPairs | DatasetKind::WicPairs => {
            let pairs = read_pairs(reader, source_name)?;
            for p in &pairs {
                let labeled_ok = match (kind, p.gold) {
                    (_, Gold::Unlabeled) => true,
                    (DatasetKind::UsimPairs, Gold::Score(_)) => true,
                    (DatasetKind::WicPairs, Gold::Label(_)) => true,
                    _ => false,
                };
                if !labeled_ok {
                    return Err(Error::Invalid(format!(
                        "pair `{}` has gold `{}` which does not fit {:?}",
                        p.pair_id, p.gold, kind
                    )));
                }
            }
            if let Some(index) = instances {
                check_pairs(&pairs, index)?;
            }
            Dataset::Pairs(pairs)
        }
        DatasetKind::Instances => Dataset::Instances(read_instances(reader, source_name)?),
        DatasetKind::GoldSubstitutes => {
            let sets = read_substitutes(reader, source_name)?;
            if let Some(index) = instances {
                for s in &sets {
                    index.require(&s.instance_id)?;
                }
            }
            Dataset::Substitutes(sets)
        }
        DatasetKind::CandidatePool => Dataset::Pool(read_pool(reader, source_name)?),
        DatasetKind::Paraphrases => Dataset::Paraphrases(read_paraphrases(reader, source_name)?),
        DatasetKind::AnnotatorJudgments => {
            Dataset::Judgments(read_judgments(reader, source_name)?)
        }
    })
}

pub fn check_pairs(pairs: &[InstancePair], instances: &InstanceIndex) -> Result<()> {
    for p in pairs {
        p.check_references(instances)
            .map_err(|e| e.context(format!("pair `{}`", p.pair_id)))?;
    }
    Ok(())
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Iterates non-empty lines with 1-based line numbers.
pub(crate) fn lines<'a, R: BufRead + 'a>(
    reader: R,
    source_name: &'a str,
) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Err(e) => Some(Err(Error::parse(source_name, i + 1, e.to_string()))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok((i + 1, l))),
        })
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

pub fn read_instances<R: BufRead>(reader: R, source_name: &str) -> Result<InstanceIndex> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for item in lines(reader, source_name) {
        let (no, line) = item?;
        let mut inst: Instance = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source_name, no, e.to_string()))?;
        inst.normalize();
        inst.validate()
            .map_err(|m| Error::parse(source_name, no, m))?;
        if !seen.insert(inst.instance_id.clone()) {
            return Err(Error::parse(
                source_name,
                no,
                format!("duplicate id `{}`", inst.instance_id),
            ));
        }
        out.push(inst);
    }
    InstanceIndex::new(out)
}

pub fn write_instances<W: Write>(mut w: W, instances: &InstanceIndex) -> Result<()> {
    for inst in instances.iter() {
        serde_json::to_writer(&mut w, inst).map_err(|e| Error::Invalid(e.to_string()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

pub fn load_instances(path: &Path) -> Result<InstanceIndex> {
    read_instances(open(path)?, &path.display().to_string())
}

pub fn read_pairs<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<InstancePair>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for item in lines(reader, source_name) {
        let (no, line) = item?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse(
                source_name,
                no,
                format!("expected 5 tab-separated columns, found {}", cols.len()),
            ));
        }
        let gold: Gold = cols[4]
            .parse()
            .map_err(|m: String| Error::parse(source_name, no, m))?;
        let pair = InstancePair {
            pair_id: cols[0].to_string(),
            lemma: cols[1].to_lowercase(),
            first: cols[2].to_string(),
            second: cols[3].to_string(),
            gold,
        };
        if pair.pair_id.is_empty() {
            return Err(Error::parse(source_name, no, "empty pair_id"));
        }
        if !seen.insert(pair.pair_id.clone()) {
            return Err(Error::parse(
                source_name,
                no,
                format!("duplicate id `{}`", pair.pair_id),
            ));
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn write_pairs<W: Write>(mut w: W, pairs: &[InstancePair]) -> Result<()> {
    for p in pairs {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            p.pair_id, p.lemma, p.first, p.second, p.gold
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Loads a pairs file (either flavour) and checks it against `instances`.
pub fn load_pairs(path: &Path, instances: &InstanceIndex) -> Result<Vec<InstancePair>> {
    let pairs = read_pairs(open(path)?, &path.display().to_string())?;
    check_pairs(&pairs, instances)?;
    Ok(pairs)
}

pub fn read_substitutes<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<SubstituteSet>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for item in lines(reader, source_name) {
        let (no, line) = item?;
        let mut set: SubstituteSet = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source_name, no, e.to_string()))?;
        set.normalize();
        set.validate()
            .map_err(|m| Error::parse(source_name, no, m))?;
        if !seen.insert(set.instance_id.clone()) {
            return Err(Error::parse(
                source_name,
                no,
                format!("duplicate id `{}`", set.instance_id),
            ));
        }
        out.push(set);
    }
    Ok(out)
}

pub fn write_substitutes<W: Write>(mut w: W, sets: &[SubstituteSet]) -> Result<()> {
    for s in sets {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::Invalid(e.to_string()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

pub fn load_substitutes(path: &Path, instances: Option<&InstanceIndex>) -> Result<Vec<SubstituteSet>> {
    match load_dataset(path, DatasetKind::GoldSubstitutes, instances)? {
        Dataset::Substitutes(s) => Ok(s),
        _ => unreachable!(),
    }
}

pub fn read_pool<R: BufRead>(reader: R, source_name: &str) -> Result<CandidatePool> {
    let mut pool = CandidatePool::default();
    for item in lines(reader, source_name) {
        let (no, line) = item?;
        let (key, cand) = line.split_once('\t').ok_or_else(|| {
            Error::parse(source_name, no, "expected `lemma.pos<TAB>candidate`")
        })?;
        if cand.contains('\t') {
            return Err(Error::parse(source_name, no, "too many columns"));
        }
        if !key.contains('.') {
            return Err(Error::parse(
                source_name,
                no,
                format!("pool key `{key}` is not of the form lemma.pos"),
            ));
        }
        pool.insert(key.to_string(), cand.to_string())
            .map_err(|e| Error::parse(source_name, no, e.to_string()))?;
    }
    Ok(pool)
}

pub fn write_pool<W: Write>(mut w: W, pool: &CandidatePool) -> Result<()> {
    for (key, cands) in &pool.pools {
        for c in cands {
            writeln!(w, "{key}\t{c}").map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn load_pool(path: &Path) -> Result<CandidatePool> {
    read_pool(open(path)?, &path.display().to_string())
}

pub fn read_paraphrases<R: BufRead>(reader: R, source_name: &str) -> Result<ParaphraseStore> {
    let mut entries = Vec::new();
    for item in lines(reader, source_name) {
        let (no, line) = item?;
        let cols: Vec<&str> = line.split('\t').collect();
        let score = match cols.len() {
            2 => None,
            3 if cols[2] == "-" => None,
            3 => Some(cols[2].parse::<f64>().map_err(|_| {
                Error::parse(source_name, no, format!("invalid score `{}`", cols[2]))
            })?),
            n => {
                return Err(Error::parse(
                    source_name,
                    no,
                    format!("expected 2 or 3 columns, found {n}"),
                ))
            }
        };
        if cols[0].is_empty() || cols[1].is_empty() {
            return Err(Error::parse(source_name, no, "empty paraphrase word"));
        }
        entries.push((
            no,
            Paraphrase {
                first: cols[0].to_string(),
                second: cols[1].to_string(),
                score,
            },
        ));
    }
    let mut seen = HashSet::new();
    for (no, p) in &entries {
        if !seen.insert((p.first.to_lowercase(), p.second.to_lowercase())) {
            return Err(Error::parse(
                source_name,
                *no,
                format!("duplicate id `{}\t{}`", p.first, p.second),
            ));
        }
    }
    ParaphraseStore::from_entries(entries.into_iter().map(|(_, p)| p))
}

pub fn write_paraphrases<W: Write>(mut w: W, store: &ParaphraseStore) -> Result<()> {
    for p in &store.entries {
        match p.score {
            Some(s) => writeln!(w, "{}\t{}\t{s}", p.first, p.second),
            None => writeln!(w, "{}\t{}", p.first, p.second),
        }
        .map_err(io_err)?;
    }
    Ok(())
}

pub fn load_paraphrases(path: &Path) -> Result<ParaphraseStore> {
    read_paraphrases(open(path)?, &path.display().to_string())
}

pub fn read_judgments<R: BufRead>(reader: R, source_name: &str) -> Result<JudgmentTable> {
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for item in lines(reader, source_name) {
        let (no, line) = item?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                source_name,
                no,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let score: f64 = cols[3]
            .parse()
            .map_err(|_| Error::parse(source_name, no, format!("invalid score `{}`", cols[3])))?;
        if !(1.0..=5.0).contains(&score) {
            return Err(Error::parse(source_name, no, format!("score {score} outside [1, 5]")));
        }
        if !seen.insert((cols[2].to_string(), cols[1].to_string())) {
            return Err(Error::parse(
                source_name,
                no,
                format!("duplicate id `{}/{}`", cols[2], cols[1]),
            ));
        }
        rows.push(JudgmentRow {
            lemma: cols[0].to_lowercase(),
            pair_id: cols[1].to_string(),
            annotator_id: cols[2].to_string(),
            score,
        });
    }
    JudgmentTable::new(rows)
}

pub fn write_judgments<W: Write>(mut w: W, table: &JudgmentTable) -> Result<()> {
    for r in &table.rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            r.lemma, r.pair_id, r.annotator_id, r.score
        )
        .map_err(io_err)?;
    }
    Ok(())
}

pub fn load_judgments(path: &Path) -> Result<JudgmentTable> {
    read_judgments(open(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// SAME/DIFF pair construction

/// Instances need at least this many distinct substitute words to be paired.
pub const MIN_SUBSTITUTES: usize = 4;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoincoPairs {
    pub same: Vec<InstancePair>,
    pub diff: Vec<InstancePair>,
}

/// `|A ∩ B| / min(|A|, |B|)` over distinct words, ignoring weights.
pub fn overlap_ratio(a: &SubstituteSet, b: &SubstituteSet) -> f64 {
    let (inter, min) = overlap_counts(a, b);
    if min == 0 {
        0.0
    } else {
        inter as f64 / min as f64
    }
}

fn overlap_counts(a: &SubstituteSet, b: &SubstituteSet) -> (usize, usize) {
    let wa = a.word_set();
    let wb = b.word_set();
    (wa.intersection(&wb).count(), wa.len().min(wb.len()))
}

/// Canonical id of an unordered instance pair.
pub fn canonical_pair(a: &str, b: &str) -> (String, String, String) {
    let (x, y) = if a <= b { (a, b) } else { (b, a) };
    (format!("{x}|{y}"), x.to_string(), y.to_string())
}

/// Builds SAME (overlap ≥ 75%) and DIFF (no overlap) pairs from substitute
/// annotations, drops pairs whose target words are outside `vocabulary`, and
/// balances the classes by keeping the pairs with the most substitutes.
///
/// SAME pairs are labelled `T`, DIFF pairs `F`. Both lists come back sorted
/// by pair id.
pub fn build_coinco_pairs(
    instances: &InstanceIndex,
    substitute_sets: &[SubstituteSet],
    vocabulary: Option<&HashSet<String>>,
) -> Result<CoincoPairs> {
    let mut by_lemma: BTreeMap<&str, Vec<(&Instance, &SubstituteSet)>> = BTreeMap::new();
    for set in substitute_sets {
        let inst = instances.require(&set.instance_id)?;
        if set.word_set().len() >= MIN_SUBSTITUTES {
            by_lemma.entry(&inst.lemma).or_default().push((inst, set));
        }
    }

    let in_vocab = |inst: &Instance| vocabulary.is_none_or(|v| v.contains(inst.target_word()));

    // (combined substitute count, pair)
    let mut same: Vec<(usize, InstancePair)> = Vec::new();
    let mut diff: Vec<(usize, InstancePair)> = Vec::new();
    for (lemma, mut members) in by_lemma {
        members.sort_by(|a, b| a.0.instance_id.cmp(&b.0.instance_id));
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                let (ia, sa) = members[i];
                let (ib, sb) = members[j];
                let (inter, min) = overlap_counts(sa, sb);
                let is_same = 4 * inter >= 3 * min;
                let is_diff = inter == 0;
                if !(is_same || is_diff) || !in_vocab(ia) || !in_vocab(ib) {
                    continue;
                }
                let (pair_id, first, second) = canonical_pair(&ia.instance_id, &ib.instance_id);
                let count = sa.len() + sb.len();
                let pair = InstancePair {
                    pair_id,
                    lemma: lemma.to_string(),
                    first,
                    second,
                    gold: Gold::Label(is_same),
                };
                if is_same {
                    same.push((count, pair));
                } else {
                    diff.push((count, pair));
                }
            }
        }
    }

    let n = same.len().min(diff.len());
    let mut same = keep_largest(same, n);
    let mut diff = keep_largest(diff, n);
    same.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    diff.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    Ok(CoincoPairs { same, diff })
}

fn keep_largest(mut pairs: Vec<(usize, InstancePair)>, n: usize) -> Vec<InstancePair> {
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.pair_id.cmp(&b.1.pair_id)));
    pairs.truncate(n);
    pairs.into_iter().map(|(_, p)| p).collect()
}
