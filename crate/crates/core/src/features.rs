//! Per-pair features: substitute overlap measures and representation
//! cosines, plus the TSV feature-matrix format.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{lines, open, InstanceIndex, InstancePair, SubstituteSet};
use crate::error::{Error, Result};
use crate::par;
use crate::repr::{cosine, pair_cosine, EmbeddingTable, ReprSpec, Resources};
use crate::subst::SubstituteRanking;

pub const COMMON: &str = "common";
pub const GAP: &str = "gap";
pub const SUB_COSINE: &str = "sub_cosine";
pub const SUBSTITUTE_FEATURES: [&str; 3] = [COMMON, GAP, SUB_COSINE];

pub fn is_substitute_feature(name: &str) -> bool {
    SUBSTITUTE_FEATURES.contains(&name)
}

/// Jaccard overlap of the substitute words; 0 when both sets are empty.
pub fn common_substitutes(a: &SubstituteSet, b: &SubstituteSet) -> f64 {
    let wa = a.word_set();
    let wb = b.word_set();
    let union = wa.union(&wb).count();
    if union == 0 {
        return 0.0;
    }
    wa.intersection(&wb).count() as f64 / union as f64
}

/// Generalized average precision of a system ranking against weighted gold
/// substitutes. Items missing from gold (or with zero gold weight) score 0
/// but still take up their rank.
pub fn gap(system: &SubstituteRanking, gold: &SubstituteSet) -> Result<f64> {
    let mut weights: HashMap<&str, f64> = HashMap::new();
    for e in &gold.entries {
        if !(e.weight >= 0.0) {
            return Err(Error::Invalid(format!(
                "negative gold weight {} for `{}`",
                e.weight, e.word
            )));
        }
        if e.weight > 0.0 {
            weights.insert(e.word.as_str(), e.weight);
        }
    }
    if weights.is_empty() {
        return Ok(0.0);
    }

    let mut numerator = 0.0;
    let mut cumulative = 0.0;
    for (i, word) in system.words().enumerate() {
        let x = weights.get(word).copied().unwrap_or(0.0);
        cumulative += x;
        if x > 0.0 {
            numerator += cumulative / (i + 1) as f64;
        }
    }
    if numerator == 0.0 {
        return Ok(0.0);
    }

    let mut ideal: Vec<f64> = weights.into_values().collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let mut denominator = 0.0;
    let mut cumulative = 0.0;
    for (i, y) in ideal.iter().enumerate() {
        cumulative += y;
        denominator += cumulative / (i + 1) as f64;
    }
    Ok(numerator / denominator)
}

/// Mean of GAP in both directions.
pub fn gap_bidirectional(
    a_rank: &SubstituteRanking,
    a_set: &SubstituteSet,
    b_rank: &SubstituteRanking,
    b_set: &SubstituteSet,
) -> Result<f64> {
    Ok((gap(a_rank, b_set)? + gap(b_rank, a_set)?) / 2.0)
}

/// Mean cosine over all pairs of embeddable substitutes across the two
/// sets; `None` when either side has none.
pub fn substitute_cosine(a: &SubstituteSet, b: &SubstituteSet, table: &EmbeddingTable) -> Option<f64> {
    let va: Vec<Vec<f64>> = a.words().filter_map(|w| table.phrase_vector(w)).collect();
    let vb: Vec<Vec<f64>> = b.words().filter_map(|w| table.phrase_vector(w)).collect();
    if va.is_empty() || vb.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for x in &va {
        for y in &vb {
            sum += cosine(x, y).expect("vectors from one table share a dimension");
        }
    }
    Some(sum / (va.len() * vb.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Gold,
    AutoCurated,
    AutoParaphrase,
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gold" => Ok(Provenance::Gold),
            "auto-curated" | "auto-lscnc" => Ok(Provenance::AutoCurated),
            "auto-paraphrase" | "auto-ppdb" => Ok(Provenance::AutoParaphrase),
            other => Err(Error::Invalid(format!("unknown provenance `{other}`"))),
        }
    }
}

/// Substitute annotations (gold or automatic) keyed by instance id.
#[derive(Debug, Clone)]
pub struct SubstituteSource {
    pub provenance: Provenance,
    sets: HashMap<String, (SubstituteSet, SubstituteRanking)>,
}

impl SubstituteSource {
    pub fn new(provenance: Provenance, sets: Vec<SubstituteSet>) -> Self {
        let sets = sets
            .into_iter()
            .map(|s| {
                let r = SubstituteRanking::from_set(&s);
                (s.instance_id.clone(), (s, r))
            })
            .collect();
        Self { provenance, sets }
    }

    fn get(&self, id: &str) -> Option<&(SubstituteSet, SubstituteRanking)> {
        self.sets.get(id).filter(|(s, _)| !s.is_empty())
    }
}

/// Named feature values of one pair; `None` marks a masked feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub pair_id: String,
    pub values: IndexMap<String, Option<f64>>,
    pub provenance: Option<Provenance>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<Option<f64>> {
        self.values.get(name).copied()
    }

    pub fn masked(&self) -> impl Iterator<Item = &str> {
        self.values
            .iter()
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| k.as_str())
    }
}

/// Feature schema for a set of representations, with or without the
/// substitute features.
pub fn schema_for(specs: &[ReprSpec], with_substitutes: bool) -> Result<Vec<String>> {
    let mut names: Vec<String> = specs.iter().map(ReprSpec::feature_name).collect();
    if with_substitutes {
        names.extend(SUBSTITUTE_FEATURES.iter().map(|s| s.to_string()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
        return Err(Error::Invalid(format!("feature `{dup}` requested twice")));
    }
    Ok(names)
}

/// Representations of the default graded model: target-word contextual
/// vectors averaged over the last four layers, and blank-slot sentence
/// vectors.
pub fn graded_default_specs() -> Vec<ReprSpec> {
    vec![
        "contextual-target:av4".parse().expect("static spec"),
        "sentence-vector".parse().expect("static spec"),
    ]
}

/// Representations of the default binary model: target-word contextual
/// vectors and externally supplied `use` sentence vectors.
pub fn binary_default_specs() -> Vec<ReprSpec> {
    vec![
        "contextual-target:av4".parse().expect("static spec"),
        "sentence-vector:use".parse().expect("static spec"),
    ]
}

pub fn build_features(
    pair: &InstancePair,
    instances: &InstanceIndex,
    substitutes: Option<&SubstituteSource>,
    specs: &[ReprSpec],
    res: &Resources<'_>,
) -> Result<FeatureVector> {
    let mut values = IndexMap::new();
    for spec in specs {
        values.insert(spec.feature_name(), Some(pair_cosine(pair, instances, spec, res)?));
    }
    if let Some(src) = substitutes {
        let sub = match (src.get(&pair.first), src.get(&pair.second)) {
            (Some((sa, ra)), Some((sb, rb))) => Some((
                common_substitutes(sa, sb),
                gap_bidirectional(ra, sa, rb, sb)
                    .map_err(|e| e.context(format!("pair `{}`", pair.pair_id)))?,
                res.table.and_then(|t| substitute_cosine(sa, sb, t)),
            )),
            _ => None,
        };
        values.insert(COMMON.to_string(), sub.map(|s| s.0));
        values.insert(GAP.to_string(), sub.map(|s| s.1));
        values.insert(SUB_COSINE.to_string(), sub.and_then(|s| s.2));
    }
    Ok(FeatureVector {
        pair_id: pair.pair_id.clone(),
        values,
        provenance: substitutes.map(|s| s.provenance),
    })
}

/// Feature rows sharing one schema.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub schema: Vec<String>,
    pub rows: Vec<FeatureVector>,
}

impl FeatureMatrix {
    pub fn new(schema: Vec<String>, rows: Vec<FeatureVector>) -> Result<Self> {
        for r in &rows {
            if !r.values.keys().eq(schema.iter()) {
                return Err(Error::Invalid(format!(
                    "row `{}` does not follow the schema",
                    r.pair_id
                )));
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn by_pair(&self) -> HashMap<&str, &FeatureVector> {
        self.rows.iter().map(|r| (r.pair_id.as_str(), r)).collect()
    }

    /// Keeps only the named features, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        if let Some(missing) = names.iter().find(|n| !self.schema.contains(n)) {
            return Err(Error::UnknownFeature(missing.clone()));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| FeatureVector {
                pair_id: r.pair_id.clone(),
                values: names.iter().map(|n| (n.clone(), r.values[n])).collect(),
                provenance: r.provenance,
            })
            .collect();
        Ok(Self {
            schema: names.to_vec(),
            rows,
        })
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<features>", e);
        write!(w, "pair_id").map_err(io)?;
        for name in &self.schema {
            write!(w, "\t{name}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for r in &self.rows {
            write!(w, "{}", r.pair_id).map_err(io)?;
            for v in r.values.values() {
                match v {
                    Some(x) => write!(w, "\t{x}"),
                    None => write!(w, "\tNA"),
                }
                .map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut it = lines(reader, source_name);
        let (_, header) = it
            .next()
            .ok_or_else(|| Error::parse(source_name, 1, "missing header"))??;
        let mut cols = header.split('\t');
        if cols.next() != Some("pair_id") {
            return Err(Error::parse(source_name, 1, "header must start with `pair_id`"));
        }
        let schema: Vec<String> = cols.map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for item in it {
            let (no, line) = item?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != schema.len() + 1 {
                return Err(Error::parse(
                    source_name,
                    no,
                    format!("expected {} columns, found {}", schema.len() + 1, fields.len()),
                ));
            }
            if !seen.insert(fields[0].to_string()) {
                return Err(Error::parse(source_name, no, format!("duplicate id `{}`", fields[0])));
            }
            let mut values = IndexMap::new();
            for (name, f) in schema.iter().zip(&fields[1..]) {
                let v = match *f {
                    "NA" => None,
                    s => Some(s.parse::<f64>().map_err(|_| {
                        Error::parse(source_name, no, format!("invalid value `{s}` for `{name}`"))
                    })?),
                };
                values.insert(name.clone(), v);
            }
            rows.push(FeatureVector {
                pair_id: fields[0].to_string(),
                values,
                provenance: None,
            });
        }
        Ok(Self { schema, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_tsv(open(path)?, &path.display().to_string())
    }

    pub fn to_tsv_string(&self) -> String {
        let mut out = Vec::new();
        self.write_tsv(&mut out).expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("utf-8")
    }
}

/// Features for every pair, in input order.
pub fn build_feature_matrix(
    pairs: &[InstancePair],
    instances: &InstanceIndex,
    substitutes: Option<&SubstituteSource>,
    specs: &[ReprSpec],
    res: &Resources<'_>,
) -> Result<FeatureMatrix> {
    let schema = schema_for(specs, substitutes.is_some())?;
    let rows = par::try_map(pairs, |p| build_features(p, instances, substitutes, specs, res))?;
    FeatureMatrix::new(schema, rows)
}
