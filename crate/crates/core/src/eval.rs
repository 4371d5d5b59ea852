//! Correlation and agreement metrics and per-lemma reports.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{lines, open, AnnotatorJudgments, Gold, InstancePair};
use crate::error::{Error, Result};
use crate::par;

/// Average (fractional) ranks, 1-based; tied values share the mean of the
/// ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} observations", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn accuracy(pred: &[bool], gold: &[bool]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::NothingToEvaluate);
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Mean pairwise Spearman between annotators over the pairs both scored.
/// Annotator pairs with fewer than two shared pairs or an undefined
/// correlation are skipped; `None` when no annotator pair remains.
pub fn uiaa(j: &AnnotatorJudgments) -> Option<f64> {
    let annotators: Vec<&BTreeMap<String, f64>> = j.scores.values().collect();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, a) in annotators.iter().enumerate() {
        for b in &annotators[i + 1..] {
            let (xs, ys): (Vec<f64>, Vec<f64>) = a
                .iter()
                .filter_map(|(pair, &x)| b.get(pair).map(|&y| (x, y)))
                .unzip();
            if xs.len() < 2 {
                continue;
            }
            if let Ok(r) = spearman(&xs, &ys) {
                sum += r;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Fraction of individual judgments strictly between the scale extremes
/// (1 < s < 5); 0 when there are no judgments.
pub fn umid(j: &AnnotatorJudgments) -> f64 {
    let (mut mid, mut total) = (0usize, 0usize);
    for s in j.judgments() {
        total += 1;
        if s > 1.0 && s < 5.0 {
            mid += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        mid as f64 / total as f64
    }
}

/// Probability threshold at or above which a binary prediction means `T`.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub fn read_predictions<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for item in lines(reader, source_name) {
        let (no, line) = item?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(Error::parse(
                source_name,
                no,
                format!("expected 2 tab-separated columns, found {}", cols.len()),
            ));
        }
        let v: f64 = cols[1]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::parse(source_name, no, format!("invalid prediction `{}`", cols[1])))?;
        if !seen.insert(cols[0].to_string()) {
            return Err(Error::parse(source_name, no, format!("duplicate id `{}`", cols[0])));
        }
        out.push((cols[0].to_string(), v));
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<(String, f64)>> {
    read_predictions(open(path)?, &path.display().to_string())
}

pub fn write_predictions<W: Write>(mut w: W, preds: &[(String, f64)]) -> Result<()> {
    for (id, v) in preds {
        writeln!(w, "{id}\t{v}").map_err(|e| Error::io("<predictions>", e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    ByLemma,
    Pooled,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::ByLemma => "by-lemma",
            Grouping::Pooled => "pooled",
        })
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "by-lemma" => Ok(Grouping::ByLemma),
            "pooled" => Ok(Grouping::Pooled),
            other => Err(Error::Invalid(format!("unknown grouping `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Spearman,
    Accuracy,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Spearman => "spearman",
            Metric::Accuracy => "accuracy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetric {
    pub lemma: String,
    /// `None` when the metric is undefined for the group.
    pub value: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub grouping: Grouping,
    pub groups: Vec<GroupMetric>,
    /// Mean over groups with a defined value (a single group when pooled).
    pub aggregate: Option<f64>,
    pub included: usize,
    pub excluded: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

/// Label used for the single group of a pooled report.
pub const POOLED_GROUP: &str = "ALL";

impl MetricReport {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<report>", e);
        writeln!(w, "lemma\t{}\tn", self.metric).map_err(io)?;
        for g in &self.groups {
            match g.value {
                Some(v) => writeln!(w, "{}\t{v}\t{}", g.lemma, g.n),
                None => writeln!(w, "{}\tNA\t{}", g.lemma, g.n),
            }
            .map_err(io)?;
        }
        Ok(())
    }

    pub fn to_tsv_string(&self) -> String {
        let mut out = Vec::new();
        self.write_tsv(&mut out).expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("utf-8")
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "metric": self.metric,
            "grouping": self.grouping,
            "aggregate": self.aggregate,
            "groups": self.groups.len(),
            "included": self.included,
            "excluded": self.excluded,
            "metadata": self.metadata,
        })
    }
}

fn group_value(metric: Metric, preds: &[f64], gold: &[Gold]) -> Result<f64> {
    match metric {
        Metric::Spearman => {
            let g: Vec<f64> = gold.iter().map(|g| g.score().expect("checked")).collect();
            spearman(preds, &g)
        }
        Metric::Accuracy => {
            let p: Vec<bool> = preds.iter().map(|&v| v >= DECISION_THRESHOLD).collect();
            let g: Vec<bool> = gold.iter().map(|g| g.label().expect("checked")).collect();
            accuracy(&p, &g)
        }
    }
}

/// Scores predictions against gold pairs. Graded gold yields Spearman,
/// binary gold yields accuracy of the thresholded predictions.
pub fn report(predictions: &[(String, f64)], gold: &[InstancePair], grouping: Grouping) -> Result<MetricReport> {
    if predictions.is_empty() {
        return Err(Error::NothingToEvaluate);
    }
    let by_id: HashMap<&str, &InstancePair> = gold.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    let missing: Vec<String> = predictions
        .iter()
        .filter(|(id, _)| !by_id.contains_key(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGold(missing));
    }
    let pairs: Vec<(&InstancePair, f64)> = predictions.iter().map(|(id, v)| (by_id[id.as_str()], *v)).collect();
    let metric = if pairs.iter().all(|(p, _)| p.gold.score().is_some()) {
        Metric::Spearman
    } else if pairs.iter().all(|(p, _)| p.gold.label().is_some()) {
        Metric::Accuracy
    } else {
        let bad: Vec<String> = pairs
            .iter()
            .filter(|(p, _)| matches!(p.gold, Gold::Unlabeled))
            .map(|(p, _)| p.pair_id.clone())
            .collect();
        if !bad.is_empty() {
            return Err(Error::MissingGold(bad));
        }
        return Err(Error::Invalid("gold mixes graded scores and binary labels".into()));
    };

    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<Gold>)> = BTreeMap::new();
    for (p, v) in &pairs {
        let key = match grouping {
            Grouping::ByLemma => p.lemma.as_str(),
            Grouping::Pooled => POOLED_GROUP,
        };
        let e = groups.entry(key).or_default();
        e.0.push(*v);
        e.1.push(p.gold);
    }
    let groups: Vec<(&str, (Vec<f64>, Vec<Gold>))> = groups.into_iter().collect();
    let results = par::try_map(&groups, |(lemma, (preds, gold))| -> Result<GroupMetric> {
        let value = match group_value(metric, preds, gold) {
            Ok(v) => Some(v),
            Err(Error::UndefinedCorrelation(why)) => {
                log::warn!("{metric} undefined for `{lemma}` ({why}); excluded");
                None
            }
            Err(e) => return Err(e),
        };
        Ok(GroupMetric {
            lemma: lemma.to_string(),
            value,
            n: preds.len(),
        })
    })?;

    let defined: Vec<f64> = results.iter().filter_map(|g| g.value).collect();
    let aggregate = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let excluded = results.iter().filter(|g| g.value.is_none()).map(|g| g.lemma.clone()).collect();
    let mut metadata = BTreeMap::new();
    if metric == Metric::Accuracy {
        metadata.insert("decision_threshold".to_string(), DECISION_THRESHOLD.to_string());
    }
    Ok(MetricReport {
        metric,
        grouping,
        included: defined.len(),
        groups: results,
        aggregate,
        excluded,
        metadata,
    })
}

/// SVG scatter of predicted against gold scores, one colour per lemma.
pub fn scatter_svg(predictions: &[(String, f64)], gold: &[InstancePair]) -> Result<String> {
    let by_id: HashMap<&str, &InstancePair> = gold.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    let mut points = Vec::with_capacity(predictions.len());
    let mut missing = Vec::new();
    for (id, v) in predictions {
        match by_id.get(id.as_str()) {
            Some(p) => {
                let g = match p.gold {
                    Gold::Score(s) => s,
                    Gold::Label(true) => 1.0,
                    Gold::Label(false) => 0.0,
                    Gold::Unlabeled => {
                        missing.push(id.clone());
                        continue;
                    }
                };
                points.push((p.lemma.as_str(), g, *v));
            }
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingGold(missing));
    }
    if points.is_empty() {
        return Err(Error::NothingToEvaluate);
    }
    let lemmas: Vec<&str> = {
        let mut l: Vec<&str> = points.iter().map(|p| p.0).collect();
        l.sort_unstable();
        l.dedup();
        l
    };
    let span = |vals: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) }
    };
    let (gx0, gx1) = span(&mut points.iter().map(|p| p.1));
    let (py0, py1) = span(&mut points.iter().map(|p| p.2));
    let (w, h, m) = (640.0, 480.0, 50.0);
    let sx = |x: f64| m + (x - gx0) / (gx1 - gx0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - py0) / (py1 - py0) * (h - 2.0 * m);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{m}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{y}" stroke="black"/>"#,
        y = h - m,
        x2 = w - m
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">gold ({gx0:.2} to {gx1:.2})</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">predicted ({py0:.2} to {py1:.2})</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (lemma, g, p) in &points {
        let i = lemmas.binary_search(lemma).expect("collected above");
        let hue = (i as f64 * 137.508) % 360.0;
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="hsl({hue:.1},70%,45%)" fill-opacity="0.7"><title>{}</title></circle>"#,
            sx(*g),
            sy(*p),
            xml_escape(lemma)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
