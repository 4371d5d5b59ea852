//! Linear and logistic models over pair features, with the leave-one-lemma-out,
//! fixed-split and ablation protocols.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Gold, InstancePair};
use crate::digest::id_set_checksum;
use crate::error::{Error, Result};
use crate::eval::{self, accuracy, Grouping, MetricReport, DECISION_THRESHOLD};
use crate::features::{is_substitute_feature, FeatureMatrix, FeatureVector};
use crate::linalg::{cholesky_solve, dot};
use crate::par;

/// Ridge damping added to the normal equations for conditioning.
pub const RIDGE: f64 = 1e-8;

/// Graded targets used for binary pairs mixed into graded training.
pub const SAME_TARGET: f64 = 5.0;
pub const DIFF_TARGET: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            l2: 1e-4,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Linear,
    Logistic(LogisticConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Linear => ModelKind::Linear,
            ModelConfig::Logistic(_) => ModelKind::Logistic,
        }
    }
}

/// A fitted model over standardized features. Weights apply to
/// `(x - mean) / std` for each feature of `schema`; features that were
/// constant in training are listed in `dropped` and ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub kind: ModelKind,
    pub schema: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backoff: Option<Box<RegressionModel>>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl RegressionModel {
    /// Linear score for feature values aligned with `schema`.
    fn linear_score(&self, values: &[f64]) -> f64 {
        let mut s = self.bias;
        for (i, v) in values.iter().enumerate() {
            s += self.weights[i] * (v - self.means[i]) / self.stds[i];
        }
        s
    }

    /// Prediction for feature values aligned with `schema`.
    pub fn predict_values(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.schema.len() {
            return Err(Error::DimensionMismatch {
                expected: self.schema.len(),
                found: values.len(),
            });
        }
        let s = self.linear_score(values);
        Ok(match self.kind {
            ModelKind::Linear => s,
            ModelKind::Logistic => sigmoid(s),
        })
    }

    /// Weights and intercept on the original (unstandardized) feature scale.
    pub fn coefficients(&self) -> (Vec<f64>, f64) {
        let w: Vec<f64> = self.weights.iter().zip(&self.stds).map(|(w, s)| w / s).collect();
        let b = self.bias - dot(&w, &self.means);
        (w, b)
    }

    fn all_features(&self) -> impl Iterator<Item = &String> {
        self.schema.iter().chain(&self.dropped)
    }
}

struct Standardized {
    kept: Vec<usize>,
    means: Vec<f64>,
    stds: Vec<f64>,
    dropped: Vec<String>,
    z: Vec<Vec<f64>>,
}

fn check_design(names: &[String], x: &[Vec<f64>], n_targets: usize) -> Result<()> {
    if x.len() != n_targets {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: n_targets,
        });
    }
    for row in x {
        if row.len() != names.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite feature value in training data".into()));
        }
    }
    Ok(())
}

fn standardize(names: &[String], x: &[Vec<f64>]) -> Standardized {
    let n = x.len() as f64;
    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut dropped = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 1e-12 * (1.0 + mean.abs()) {
            log::warn!("feature `{name}` is constant in the training data; dropped");
            dropped.push(name.clone());
        } else {
            kept.push(j);
            means.push(mean);
            stds.push(std);
        }
    }
    let z = x
        .iter()
        .map(|r| {
            kept.iter()
                .enumerate()
                .map(|(k, &j)| (r[j] - means[k]) / stds[k])
                .collect()
        })
        .collect();
    Standardized {
        kept,
        means,
        stds,
        dropped,
        z,
    }
}

/// Ordinary least squares on standardized features via damped normal
/// equations.
pub fn fit_linear(names: &[String], x: &[Vec<f64>], y: &[f64]) -> Result<RegressionModel> {
    check_design(names, x, y.len())?;
    if x.len() < 2 {
        return Err(Error::Invalid(format!("linear fit needs at least 2 rows, got {}", x.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite training target".into()));
    }
    let st = standardize(names, x);
    let d = st.kept.len();
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;

    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for (z, &t) in st.z.iter().zip(y) {
        let r = t - y_mean;
        for i in 0..d {
            b[i] += z[i] * r;
            for j in 0..=i {
                a[i * d + j] += z[i] * z[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            a[j * d + i] = a[i * d + j];
        }
        a[i * d + i] += RIDGE;
    }
    let weights = if d == 0 {
        Vec::new()
    } else {
        cholesky_solve(&a, &b, d)
            .filter(|w| w.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::RankDeficient(format!("{d} standardized features, {} rows", x.len())))?
    };
    Ok(RegressionModel {
        kind: ModelKind::Linear,
        schema: st.kept.iter().map(|&j| names[j].clone()).collect(),
        weights,
        bias: y_mean,
        means: st.means,
        stds: st.stds,
        dropped: st.dropped,
        backoff: None,
        metadata: BTreeMap::new(),
    })
}

fn logistic_objective(z: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, l2: f64) -> f64 {
    let n = z.len() as f64;
    let nll: f64 = z
        .iter()
        .zip(y)
        .map(|(r, &t)| {
            let s = b + dot(w, r);
            softplus(s) - if t { s } else { 0.0 }
        })
        .sum();
    nll / n + 0.5 * l2 * dot(w, w)
}

/// L2-regularized logistic regression by full-batch gradient descent.
/// Returns the model and the objective before training and after each
/// epoch.
///
/// The step is capped at the inverse of a Lipschitz bound on the gradient,
/// which makes the objective non-increasing for any input.
pub fn fit_logistic(
    names: &[String],
    x: &[Vec<f64>],
    y: &[bool],
    config: &LogisticConfig,
) -> Result<(RegressionModel, Vec<f64>)> {
    check_design(names, x, y.len())?;
    if !(y.iter().any(|&t| t) && y.iter().any(|&t| !t)) {
        return Err(Error::SingleClass);
    }
    if !(config.learning_rate > 0.0) || !(config.l2 >= 0.0) {
        return Err(Error::Invalid("learning rate must be positive and l2 non-negative".into()));
    }
    let st = standardize(names, x);
    let d = st.kept.len();
    let n = x.len() as f64;

    // Each standardized column has unit mean square, so the trace of the
    // scaled Gram matrix (with the intercept column) is d + 1.
    let lipschitz = (d as f64 + 1.0) / 4.0 + config.l2;
    let step = config.learning_rate.min(1.0 / lipschitz);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w: Vec<f64> = (0..d).map(|_| rng.random_range(-0.01..0.01)).collect();
    let mut b = 0.0;
    let mut trace = Vec::with_capacity(config.epochs + 1);
    trace.push(logistic_objective(&st.z, y, &w, b, config.l2));
    for _ in 0..config.epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (r, &t) in st.z.iter().zip(y) {
            let err = sigmoid(b + dot(&w, r)) - if t { 1.0 } else { 0.0 };
            gb += err;
            for (g, v) in gw.iter_mut().zip(r) {
                *g += err * v;
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * (g / n + config.l2 * *wi);
        }
        b -= step * gb / n;
        trace.push(logistic_objective(&st.z, y, &w, b, config.l2));
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("logistic".into(), serde_json::to_value(config).expect("plain struct"));
    metadata.insert("step".into(), step.into());
    Ok((
        RegressionModel {
            kind: ModelKind::Logistic,
            schema: st.kept.iter().map(|&j| names[j].clone()).collect(),
            weights: w,
            bias: b,
            means: st.means,
            stds: st.stds,
            dropped: st.dropped,
            backoff: None,
            metadata,
        },
        trace,
    ))
}

/// Prediction plus whether the backoff model produced it.
pub fn predict_routed(model: &RegressionModel, fv: &FeatureVector) -> Result<(f64, bool)> {
    let masked = model.all_features().find(|name| matches!(fv.get(name), Some(None)));
    if let Some(name) = masked {
        return match &model.backoff {
            Some(b) => Ok((predict_routed(b, fv)?.0, true)),
            None => Err(Error::MaskedFeature {
                pair_id: fv.pair_id.clone(),
                feature: name.clone(),
            }),
        };
    }
    let values = model
        .schema
        .iter()
        .map(|name| match fv.get(name) {
            Some(Some(v)) => Ok(v),
            _ => Err(Error::UnknownFeature(name.clone())),
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((model.predict_values(&values)?, false))
}

pub fn predict(model: &RegressionModel, fv: &FeatureVector) -> Result<f64> {
    predict_routed(model, fv).map(|(p, _)| p)
}

/// Predictions for every row of a matrix plus the number routed to backoff.
pub fn predict_matrix(model: &RegressionModel, matrix: &FeatureMatrix) -> Result<(Vec<(String, f64)>, usize)> {
    let out = par::try_map(&matrix.rows, |fv| {
        predict_routed(model, fv)
            .map(|(p, b)| (fv.pair_id.clone(), p, b))
            .map_err(|e| e.context(format!("pair `{}`", fv.pair_id)))
    })?;
    let routed = out.iter().filter(|r| r.2).count();
    Ok((out.into_iter().map(|(id, p, _)| (id, p)).collect(), routed))
}

/// Graded targets: scores as given, binary labels mapped to the ends of the
/// scale.
pub fn graded_targets(pairs: &[InstancePair]) -> Result<HashMap<String, f64>> {
    pairs
        .iter()
        .map(|p| match p.gold {
            Gold::Score(s) => Ok((p.pair_id.clone(), s)),
            Gold::Label(true) => Ok((p.pair_id.clone(), SAME_TARGET)),
            Gold::Label(false) => Ok((p.pair_id.clone(), DIFF_TARGET)),
            Gold::Unlabeled => Err(Error::MissingGold(vec![p.pair_id.clone()])),
        })
        .collect()
}

/// Binary targets (1 for same meaning, 0 otherwise).
pub fn binary_targets(pairs: &[InstancePair]) -> Result<HashMap<String, f64>> {
    pairs
        .iter()
        .map(|p| match p.gold {
            Gold::Label(l) => Ok((p.pair_id.clone(), if l { 1.0 } else { 0.0 })),
            Gold::Score(_) => Err(Error::Invalid(format!("pair `{}` has a graded gold score, expected T/F", p.pair_id))),
            Gold::Unlabeled => Err(Error::MissingGold(vec![p.pair_id.clone()])),
        })
        .collect()
}

fn targets_for(config: &ModelConfig, pairs: &[InstancePair]) -> Result<HashMap<String, f64>> {
    match config {
        ModelConfig::Linear => graded_targets(pairs),
        ModelConfig::Logistic(_) => binary_targets(pairs),
    }
}

fn fit(config: &ModelConfig, names: &[String], x: &[Vec<f64>], y: &[f64]) -> Result<RegressionModel> {
    match config {
        ModelConfig::Linear => fit_linear(names, x, y),
        ModelConfig::Logistic(c) => {
            let labels: Vec<bool> = y.iter().map(|&v| v >= 0.5).collect();
            fit_logistic(names, x, &labels, c).map(|(m, _)| m)
        }
    }
}

fn rows_for<'m>(matrix: &'m FeatureMatrix, ids: &[&str]) -> Result<Vec<&'m FeatureVector>> {
    let index = matrix.by_pair();
    ids.iter()
        .map(|id| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("no features for pair `{id}`")))
        })
        .collect()
}

/// Fits a model on the given rows. Rows with masked substitute features
/// train only the backoff model, which covers the embedding features and
/// sees every row; the main model trains on fully observed rows.
pub fn train(
    matrix: &FeatureMatrix,
    ids: &[&str],
    targets: &HashMap<String, f64>,
    config: &ModelConfig,
) -> Result<RegressionModel> {
    let rows = rows_for(matrix, ids)?;
    let y_of = |fv: &FeatureVector| {
        targets
            .get(&fv.pair_id)
            .copied()
            .ok_or_else(|| Error::MissingGold(vec![fv.pair_id.clone()]))
    };
    let has_substitutes = matrix.schema.iter().any(|n| is_substitute_feature(n));

    let backoff = if has_substitutes {
        let names: Vec<String> = matrix.schema.iter().filter(|n| !is_substitute_feature(n)).cloned().collect();
        let mut x = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(rows.len());
        for fv in &rows {
            let vals = names
                .iter()
                .map(|n| {
                    fv.values[n].ok_or_else(|| Error::MaskedFeature {
                        pair_id: fv.pair_id.clone(),
                        feature: n.clone(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            x.push(vals);
            y.push(y_of(fv)?);
        }
        let mut m = fit(config, &names, &x, &y).map_err(|e| e.context("backoff model"))?;
        m.metadata.insert("training_rows".into(), x.len().into());
        Some(Box::new(m))
    } else {
        None
    };

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut used = Vec::new();
    for fv in &rows {
        let vals: Option<Vec<f64>> = matrix.schema.iter().map(|n| fv.values[n]).collect();
        match vals {
            Some(v) => {
                x.push(v);
                y.push(y_of(fv)?);
                used.push(fv.pair_id.as_str());
            }
            None if has_substitutes => {}
            None => {
                let feature = fv.masked().next().unwrap_or_default().to_string();
                return Err(Error::MaskedFeature {
                    pair_id: fv.pair_id.clone(),
                    feature,
                });
            }
        }
    }
    if x.len() < rows.len() {
        log::info!(
            "{} of {} training rows have masked substitute features and train the backoff model only",
            rows.len() - x.len(),
            rows.len()
        );
    }
    let mut model = fit(config, &matrix.schema, &x, &y)?;
    model.backoff = backoff;
    model.metadata.insert("training_rows".into(), x.len().into());
    model
        .metadata
        .insert("training_checksum".into(), id_set_checksum(used.iter().copied()).into());
    Ok(model)
}

/// Train/dev/test partition of pair ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub held_out_lemma: Option<String>,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn train_checksum(&self) -> String {
        id_set_checksum(self.train.iter().map(String::as_str))
    }

    /// Checks the three parts are disjoint and, for a held-out plan, that
    /// no pair of the held-out lemma is in train or dev.
    pub fn validate(&self, lemma_of: &HashMap<&str, &str>) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.dev).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(Error::SplitOverlap(id.clone()));
            }
        }
        if let Some(lemma) = &self.held_out_lemma {
            for id in self.train.iter().chain(&self.dev) {
                if lemma_of.get(id.as_str()) == Some(&lemma.as_str()) {
                    return Err(Error::SplitOverlap(id.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Seeded per-lemma sample of `fraction` of each lemma's pairs.
pub fn dev_sample(pairs: &[InstancePair], fraction: f64, seed: u64) -> HashSet<String> {
    let mut by_lemma: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in pairs {
        by_lemma.entry(&p.lemma).or_default().push(&p.pair_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = HashSet::new();
    for ids in by_lemma.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let k = ((ids.len() as f64 * fraction).round() as usize).min(ids.len());
        out.extend(ids[..k].iter().map(|s| s.to_string()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LooConfig {
    /// Fraction of each lemma's pairs held back as the development set.
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for LooConfig {
    fn default() -> Self {
        Self {
            dev_fraction: 0.1,
            seed: 13,
        }
    }
}

/// One leave-one-lemma-out plan per lemma of `graded`. Extra pairs join
/// every training set except the fold of their own lemma; the development
/// sample never enters training.
pub fn loo_plans(graded: &[InstancePair], extra: &[InstancePair], dev: &HashSet<String>, seed: u64) -> Vec<SplitPlan> {
    let lemmas: BTreeSet<&str> = graded.iter().map(|p| p.lemma.as_str()).collect();
    lemmas
        .into_iter()
        .map(|lemma| SplitPlan {
            held_out_lemma: Some(lemma.to_string()),
            train: graded
                .iter()
                .filter(|p| p.lemma != lemma && !dev.contains(&p.pair_id))
                .chain(extra.iter().filter(|p| p.lemma != lemma))
                .map(|p| p.pair_id.clone())
                .collect(),
            dev: graded
                .iter()
                .filter(|p| p.lemma != lemma && dev.contains(&p.pair_id))
                .map(|p| p.pair_id.clone())
                .collect(),
            test: graded.iter().filter(|p| p.lemma == lemma).map(|p| p.pair_id.clone()).collect(),
            seed,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub held_out_lemma: String,
    pub train_checksum: String,
    pub n_train: usize,
    pub n_test: usize,
    pub backoff_routed: usize,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LooResult {
    pub plans: Vec<SplitPlan>,
    pub folds: Vec<FoldResult>,
    pub predictions: Vec<(String, f64)>,
    pub report: MetricReport,
}

fn check_disjoint(parts: &[&[InstancePair]]) -> Result<HashMap<String, String>> {
    let mut lemma_of = HashMap::new();
    for part in parts {
        for p in *part {
            if lemma_of.insert(p.pair_id.clone(), p.lemma.clone()).is_some() {
                return Err(Error::SplitOverlap(p.pair_id.clone()));
            }
        }
    }
    Ok(lemma_of)
}

/// Leave-one-lemma-out training and evaluation of a graded model. The
/// aggregate of the returned report is the mean of per-lemma Spearman
/// correlations.
pub fn run_loo_graded(
    graded: &[InstancePair],
    extra: &[InstancePair],
    matrix: &FeatureMatrix,
    config: &LooConfig,
    model: &ModelConfig,
) -> Result<LooResult> {
    let lemma_of = check_disjoint(&[graded, extra])?;
    let lemma_ref: HashMap<&str, &str> = lemma_of.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    let mut all = graded.to_vec();
    all.extend_from_slice(extra);
    let targets = graded_targets(&all)?;
    let dev = dev_sample(graded, config.dev_fraction, config.seed);
    let plans: Vec<SplitPlan> = loo_plans(graded, extra, &dev, config.seed)
        .into_iter()
        .filter(|plan| {
            let keep = plan.test.len() >= 2;
            if !keep {
                log::warn!(
                    "lemma `{}` has {} test pair(s); excluded",
                    plan.held_out_lemma.as_deref().unwrap_or_default(),
                    plan.test.len()
                );
            }
            keep
        })
        .collect();
    if plans.is_empty() {
        return Err(Error::NothingToEvaluate);
    }

    let folds = par::try_map(&plans, |plan| -> Result<(Vec<(String, f64)>, usize)> {
        plan.validate(&lemma_ref)?;
        let lemma = plan.held_out_lemma.as_deref().unwrap_or_default();
        let train_ids: Vec<&str> = plan.train.iter().map(String::as_str).collect();
        let fitted = train(matrix, &train_ids, &targets, model).map_err(|e| e.context(format!("fold `{lemma}`")))?;
        let test_ids: Vec<&str> = plan.test.iter().map(String::as_str).collect();
        let mut preds = Vec::with_capacity(test_ids.len());
        let mut routed = 0;
        for fv in rows_for(matrix, &test_ids)? {
            let (p, b) = predict_routed(&fitted, fv)?;
            routed += b as usize;
            preds.push((fv.pair_id.clone(), p));
        }
        Ok((preds, routed))
    })?;

    let predictions: Vec<(String, f64)> = folds.iter().flat_map(|(p, _)| p.iter().cloned()).collect();
    let report = eval::report(&predictions, graded, Grouping::ByLemma)?;
    let by_lemma: HashMap<&str, Option<f64>> = report.groups.iter().map(|g| (g.lemma.as_str(), g.value)).collect();
    let fold_results = plans
        .iter()
        .zip(&folds)
        .map(|(plan, (_, routed))| {
            let lemma = plan.held_out_lemma.clone().unwrap_or_default();
            FoldResult {
                spearman: by_lemma.get(lemma.as_str()).copied().flatten(),
                held_out_lemma: lemma,
                train_checksum: plan.train_checksum(),
                n_train: plan.train.len(),
                n_test: plan.test.len(),
                backoff_routed: *routed,
            }
        })
        .collect();
    Ok(LooResult {
        plans,
        folds: fold_results,
        predictions,
        report,
    })
}

/// Feature subsets compared on the development set: every single feature,
/// the substitute features alone, every pair of embedding features, all
/// embedding features, and everything. Duplicates are removed.
pub fn registered_combinations(schema: &[String]) -> Vec<Vec<String>> {
    let emb: Vec<String> = schema.iter().filter(|n| !is_substitute_feature(n)).cloned().collect();
    let subs: Vec<String> = schema.iter().filter(|n| is_substitute_feature(n)).cloned().collect();
    let mut out: Vec<Vec<String>> = schema.iter().map(|n| vec![n.clone()]).collect();
    out.push(subs);
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            out.push(vec![emb[i].clone(), emb[j].clone()]);
        }
    }
    out.push(emb);
    out.push(schema.to_vec());
    let mut seen = HashSet::new();
    out.retain(|c| !c.is_empty() && seen.insert(c.clone()));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Registered,
    Fixed(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct BinaryResult {
    pub selected: Vec<String>,
    /// Development accuracy of every compared combination.
    pub candidates: Vec<(Vec<String>, f64)>,
    pub test_accuracy: f64,
    pub predictions: Vec<(String, f64)>,
    pub decisions: Vec<(String, bool)>,
    pub backoff_routed: usize,
    pub model: RegressionModel,
}

fn ids(pairs: &[InstancePair]) -> Vec<&str> {
    pairs.iter().map(|p| p.pair_id.as_str()).collect()
}

fn evaluate_on(model: &RegressionModel, matrix: &FeatureMatrix, pairs: &[InstancePair]) -> Result<(Vec<(String, f64)>, usize)> {
    let rows = rows_for(matrix, &ids(pairs))?;
    let mut routed = 0;
    let mut preds = Vec::with_capacity(rows.len());
    for fv in rows {
        let (p, b) = predict_routed(model, fv)?;
        routed += b as usize;
        preds.push((fv.pair_id.clone(), p));
    }
    Ok((preds, routed))
}

fn binary_accuracy(preds: &[(String, f64)], targets: &HashMap<String, f64>) -> Result<f64> {
    let p: Vec<bool> = preds.iter().map(|(_, v)| *v >= DECISION_THRESHOLD).collect();
    let g: Vec<bool> = preds.iter().map(|(id, _)| targets[id] >= 0.5).collect();
    accuracy(&p, &g)
}

/// Fixed-split binary protocol: the development set only chooses the
/// feature combination; the final model trains on the training split.
pub fn run_binary(
    train_pairs: &[InstancePair],
    dev_pairs: &[InstancePair],
    test_pairs: &[InstancePair],
    matrix: &FeatureMatrix,
    selection: &Selection,
    config: &LogisticConfig,
) -> Result<BinaryResult> {
    check_disjoint(&[train_pairs, dev_pairs, test_pairs])?;
    let model_config = ModelConfig::Logistic(*config);
    let train_targets = binary_targets(train_pairs)?;
    let dev_targets = binary_targets(dev_pairs)?;
    let test_targets = binary_targets(test_pairs)?;
    let train_ids = ids(train_pairs);

    let (selected, candidates) = match selection {
        Selection::Fixed(names) => (names.clone(), Vec::new()),
        Selection::Registered => {
            if dev_pairs.is_empty() {
                return Err(Error::Invalid("feature selection needs a development split".into()));
            }
            let combos = registered_combinations(&matrix.schema);
            let scored = par::try_map(&combos, |combo| -> Result<(Vec<String>, f64)> {
                let sub = matrix.select(combo)?;
                let m = train(&sub, &train_ids, &train_targets, &model_config)?;
                let (preds, _) = evaluate_on(&m, &sub, dev_pairs)?;
                Ok((combo.clone(), binary_accuracy(&preds, &dev_targets)?))
            })?;
            let mut best = 0;
            for (i, (c, acc)) in scored.iter().enumerate() {
                let (bc, bacc) = &scored[best];
                if *acc > *bacc || (*acc == *bacc && c.len() < bc.len()) {
                    best = i;
                }
            }
            (scored[best].0.clone(), scored)
        }
    };
    if selected.is_empty() {
        return Err(Error::EmptySchema);
    }
    let sub = matrix.select(&selected)?;
    let mut model = train(&sub, &train_ids, &train_targets, &model_config)?;
    let (predictions, backoff_routed) = evaluate_on(&model, &sub, test_pairs)?;
    let test_accuracy = binary_accuracy(&predictions, &test_targets)?;
    let decisions = predictions.iter().map(|(id, p)| (id.clone(), *p >= DECISION_THRESHOLD)).collect();
    model.metadata.insert("selected_features".into(), serde_json::to_value(&selected).expect("strings"));
    Ok(BinaryResult {
        selected,
        candidates,
        test_accuracy,
        predictions,
        decisions,
        backoff_routed,
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    /// Removed feature, or `None` for the full schema.
    pub removed: String,
    pub metric: Option<f64>,
    /// Metric minus the full-schema metric.
    pub delta: Option<f64>,
}

/// Label of the full-schema row in an ablation table.
pub const ABLATION_BASELINE: &str = "None";

/// Retrains without each feature in turn and scores on the development
/// pairs: mean per-lemma Spearman for linear models, accuracy for logistic.
pub fn run_ablation(
    train_pairs: &[InstancePair],
    dev_pairs: &[InstancePair],
    matrix: &FeatureMatrix,
    model: &ModelConfig,
) -> Result<Vec<AblationRow>> {
    if matrix.schema.is_empty() {
        return Err(Error::EmptySchema);
    }
    check_disjoint(&[train_pairs, dev_pairs])?;
    let train_targets = targets_for(model, train_pairs)?;
    let dev_targets = targets_for(model, dev_pairs)?;
    let train_ids = ids(train_pairs);

    let mut variants: Vec<(String, Vec<String>)> = vec![(ABLATION_BASELINE.to_string(), matrix.schema.clone())];
    for name in &matrix.schema {
        let rest: Vec<String> = matrix.schema.iter().filter(|n| *n != name).cloned().collect();
        if rest.is_empty() {
            return Err(Error::EmptySchema);
        }
        variants.push((name.clone(), rest));
    }
    let metrics = par::try_map(&variants, |(_, names)| -> Result<Option<f64>> {
        let sub = matrix.select(names)?;
        let m = train(&sub, &train_ids, &train_targets, model)?;
        let (preds, _) = evaluate_on(&m, &sub, dev_pairs)?;
        Ok(match model {
            ModelConfig::Linear => eval::report(&preds, dev_pairs, Grouping::ByLemma)?.aggregate,
            ModelConfig::Logistic(_) => Some(binary_accuracy(&preds, &dev_targets)?),
        })
    })?;
    let base = metrics[0];
    Ok(variants
        .into_iter()
        .zip(metrics)
        .map(|((removed, _), metric)| AblationRow {
            removed,
            metric,
            delta: metric.zip(base).map(|(m, b)| m - b),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{COMMON, GAP};
    use indexmap::IndexMap;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn linear_recovers_line() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
        let m = fit_linear(&names(&["x"]), &x, &y).unwrap();
        let (w, b) = m.coefficients();
        assert!((w[0] - 2.0).abs() < 1e-6 && (b - 1.0).abs() < 1e-6, "{w:?} {b}");
        assert!((m.predict_values(&[20.0]).unwrap() - 41.0).abs() < 1e-6);
    }

    #[test]
    fn linear_constant_target_and_feature() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 7.0]).collect();
        let m = fit_linear(&names(&["x", "c"]), &x, &[3.0; 5]).unwrap();
        assert_eq!(m.dropped, names(&["c"]));
        assert!(m.weights.iter().all(|w| w.abs() < 1e-12));
        assert_eq!(m.bias, 3.0);
        assert!(fit_linear(&names(&["x"]), &[vec![1.0]], &[1.0]).is_err());
    }

    #[test]
    fn linear_affine_invariance() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| ((i * 3) % 11) as f64).collect();
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| vec![-3.0 * r[0] + 10.0, r[1]]).collect();
        let a = fit_linear(&names(&["a", "b"]), &x, &y).unwrap();
        let b = fit_linear(&names(&["a", "b"]), &scaled, &y).unwrap();
        for (r, s) in x.iter().zip(&scaled) {
            let (pa, pb) = (a.predict_values(r).unwrap(), b.predict_values(s).unwrap());
            assert!((pa - pb).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_weights_predict_bias() {
        let m = RegressionModel {
            kind: ModelKind::Linear,
            schema: names(&["a"]),
            weights: vec![0.0],
            bias: 2.5,
            means: vec![0.0],
            stds: vec![1.0],
            dropped: vec![],
            backoff: None,
            metadata: BTreeMap::new(),
        };
        assert_eq!(m.predict_values(&[123.0]).unwrap(), 2.5);
    }

    #[test]
    fn logistic_separable_and_monotone() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 - 19.5, ((i * 13) % 7) as f64]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] > 0.0).collect();
        let (m, trace) = fit_logistic(&names(&["a", "b"]), &x, &y, &LogisticConfig::default()).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        let acc = x.iter().zip(&y).filter(|(r, &t)| (m.predict_values(r).unwrap() >= 0.5) == t).count();
        assert!(acc as f64 / 40.0 >= 0.95);
        let (again, _) = fit_logistic(&names(&["a", "b"]), &x, &y, &LogisticConfig::default()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn logistic_uninformative_and_single_class() {
        // Every feature value appears once with each label.
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![(i / 2) as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let (m, _) = fit_logistic(&names(&["a"]), &x, &y, &LogisticConfig::default()).unwrap();
        assert!(m.weights[0].abs() < 0.05 && m.bias.abs() < 0.05, "{m:?}");
        assert!(matches!(
            fit_logistic(&names(&["a"]), &x, &[true; 20], &LogisticConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    fn fv(id: &str, vals: &[(&str, Option<f64>)]) -> FeatureVector {
        FeatureVector {
            pair_id: id.into(),
            values: vals.iter().map(|(k, v)| (k.to_string(), *v)).collect::<IndexMap<_, _>>(),
            provenance: None,
        }
    }

    fn graded_pair(id: &str, lemma: &str, score: f64) -> InstancePair {
        InstancePair {
            pair_id: id.into(),
            lemma: lemma.into(),
            first: format!("{id}.1"),
            second: format!("{id}.2"),
            gold: Gold::Score(score),
        }
    }

    #[test]
    fn backoff_routing() {
        let mut rows = Vec::new();
        let mut targets = HashMap::new();
        for i in 0..12 {
            let e = i as f64;
            let sub = if i % 4 == 0 { None } else { Some((i % 3) as f64) };
            rows.push(fv(&format!("p{i}"), &[("cos", Some(e)), (COMMON, sub), (GAP, sub.map(|v| v * 0.5))]));
            targets.insert(format!("p{i}"), 2.0 * e + sub.unwrap_or(0.0));
        }
        let matrix = FeatureMatrix::new(names(&["cos", COMMON, GAP]), rows).unwrap();
        let ids: Vec<String> = (0..12).map(|i| format!("p{i}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let m = train(&matrix, &ids, &targets, &ModelConfig::Linear).unwrap();
        let backoff = m.backoff.as_deref().unwrap();
        assert_eq!(backoff.schema, names(&["cos"]));
        assert_eq!(backoff.metadata["training_rows"], 12);
        assert_eq!(m.metadata["training_rows"], 9);

        let masked = fv("q", &[("cos", Some(3.0)), (COMMON, None), (GAP, None)]);
        let (p, routed) = predict_routed(&m, &masked).unwrap();
        assert!(routed);
        assert_eq!(p, backoff.predict_values(&[3.0]).unwrap());

        let mut bare = m.clone();
        bare.backoff = None;
        assert!(matches!(predict(&bare, &masked), Err(Error::MaskedFeature { .. })));
    }

    fn oracle_dataset(lemmas: usize, per: usize) -> (Vec<InstancePair>, FeatureMatrix) {
        let mut pairs = Vec::new();
        let mut rows = Vec::new();
        for l in 0..lemmas {
            for k in 0..per {
                let id = format!("l{l}-{k}");
                let score = 1.0 + ((l * 7 + k * 3) % 41) as f64 / 10.0;
                pairs.push(graded_pair(&id, &format!("lemma{l}"), score));
                rows.push(fv(&id, &[("oracle", Some(score)), ("noise", Some(((k * 5 + l) % 4) as f64))]));
            }
        }
        (pairs, FeatureMatrix::new(names(&["oracle", "noise"]), rows).unwrap())
    }

    #[test]
    fn loo_with_oracle_feature_is_perfect() {
        let (pairs, matrix) = oracle_dataset(5, 10);
        let r = run_loo_graded(&pairs, &[], &matrix, &LooConfig::default(), &ModelConfig::Linear).unwrap();
        assert_eq!(r.folds.len(), 5);
        assert!((r.report.aggregate.unwrap() - 1.0).abs() < 1e-9);
        for plan in &r.plans {
            let lemma = plan.held_out_lemma.as_deref().unwrap();
            assert!(plan.train.iter().chain(&plan.dev).all(|id| !pairs.iter().any(|p| &p.pair_id == id && p.lemma == lemma)));
        }
    }

    #[test]
    fn loo_is_deterministic_across_modes() {
        let (pairs, matrix) = oracle_dataset(4, 8);
        let a = run_loo_graded(&pairs, &[], &matrix, &LooConfig::default(), &ModelConfig::Linear).unwrap();
        let b = par::sequential(|| run_loo_graded(&pairs, &[], &matrix, &LooConfig::default(), &ModelConfig::Linear)).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.folds, b.folds);
    }

    #[test]
    fn plan_validation_catches_overlap() {
        let plan = SplitPlan {
            held_out_lemma: Some("a".into()),
            train: names(&["x"]),
            dev: vec![],
            test: names(&["x"]),
            seed: 0,
        };
        assert!(matches!(plan.validate(&HashMap::new()), Err(Error::SplitOverlap(_))));
    }

    #[test]
    fn registered_combinations_shape() {
        let c = registered_combinations(&names(&["e1", "e2", COMMON, GAP]));
        assert_eq!(
            c,
            vec![
                names(&["e1"]),
                names(&["e2"]),
                names(&[COMMON]),
                names(&[GAP]),
                names(&[COMMON, GAP]),
                names(&["e1", "e2"]),
                names(&["e1", "e2", COMMON, GAP]),
            ]
        );
    }

    fn binary_pair(id: &str, label: bool) -> InstancePair {
        InstancePair {
            pair_id: id.into(),
            lemma: "w".into(),
            first: format!("{id}.1"),
            second: format!("{id}.2"),
            gold: Gold::Label(label),
        }
    }

    #[test]
    fn binary_protocol_selects_informative_feature() {
        let mut rows = Vec::new();
        let mut split: [Vec<InstancePair>; 3] = Default::default();
        for i in 0..90 {
            let label = i % 2 == 0;
            let id = format!("p{i}");
            let signal = if label { 1.0 } else { -1.0 } + (i % 5) as f64 * 0.1;
            rows.push(fv(&id, &[("good", Some(signal)), ("junk", Some(((i * 7) % 3) as f64))]));
            split[i % 3].push(binary_pair(&id, label));
        }
        let matrix = FeatureMatrix::new(names(&["good", "junk"]), rows).unwrap();
        let r = run_binary(&split[0], &split[1], &split[2], &matrix, &Selection::Registered, &LogisticConfig::default()).unwrap();
        assert_eq!(r.selected, names(&["good"]));
        assert_eq!(r.test_accuracy, 1.0);
        assert!(matches!(
            run_binary(&split[0], &split[0], &split[2], &matrix, &Selection::Registered, &LogisticConfig::default()),
            Err(Error::SplitOverlap(_))
        ));
    }

    #[test]
    fn ablation_rows_and_inert_feature() {
        let (pairs, matrix) = oracle_dataset(4, 10);
        let rows: Vec<FeatureVector> = matrix
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.values.insert("zero".into(), Some(0.0));
                r
            })
            .collect();
        let matrix = FeatureMatrix::new(names(&["oracle", "noise", "zero"]), rows).unwrap();
        let (dev, train): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|p| p.pair_id.ends_with('0') || p.pair_id.ends_with('5'));
        let table = run_ablation(&train, &dev, &matrix, &ModelConfig::Linear).unwrap();
        let removed: Vec<&str> = table.iter().map(|r| r.removed.as_str()).collect();
        assert_eq!(removed, ["None", "oracle", "noise", "zero"]);
        assert!(table[3].delta.unwrap().abs() < 1e-9);

        let single = matrix.select(&names(&["oracle"])).unwrap();
        assert!(matches!(run_ablation(&train, &dev, &single, &ModelConfig::Linear), Err(Error::EmptySchema)));
    }

    #[test]
    fn model_json_round_trip() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let m = fit_linear(&names(&["x"]), &x, &[1.0, 2.0, 2.0, 3.0, 5.0, 4.0]).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: RegressionModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
