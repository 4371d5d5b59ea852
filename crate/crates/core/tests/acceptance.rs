//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero when any criterion fails.
//!
//! The property criteria need no external data. The reproduction criteria
//! run when `USIMKIT_DATA_DIR` points at a prepared data directory (layout
//! in the README) and print SKIP otherwise.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use usimkit::cli::stages::{self, ResourcePaths};
use usimkit::corpus::{
    load_instances, load_pairs, load_pool, load_substitutes, Gold, InstancePair, Paraphrase, ParaphraseStore,
    SubstituteSet,
};
use usimkit::eval::{self, average_ranks, spearman, Grouping};
use usimkit::features::{
    binary_default_specs, build_feature_matrix, gap, graded_default_specs, is_substitute_feature, FeatureMatrix,
    FeatureVector, Provenance, SubstituteSource,
};
use usimkit::model::{
    fit_linear, fit_logistic, run_binary, run_loo_graded, LogisticConfig, LooConfig, ModelConfig, Selection,
};
use usimkit::repr::{apply_sif, direct_usim, fit_sif, EmbeddingTable, SifConfig, SifState};
use usimkit::subst::{
    context_only_score, eq1_score, filter_embedding, filter_ppdb, filter_score_gap, filter_top_k, FilterConfig,
    FilterResources, ScoringMode, SubstituteRanking,
};

const DATA_ENV: &str = "USIMKIT_DATA_DIR";
const SEED: u64 = 20_240_613;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    check: Check,
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn main() {
    let criteria = [
        Criterion { name: "gap-oracle", budget: secs(5), check: gap_oracle },
        Criterion { name: "spearman-oracle", budget: secs(5), check: spearman_oracle },
        Criterion { name: "filter-prefix-idempotence", budget: secs(5), check: filter_properties },
        Criterion { name: "eq1-bounds-monotonicity", budget: secs(1), check: eq1_properties },
        Criterion { name: "ols-logistic-recovery", budget: secs(10), check: regression_recovery },
        Criterion { name: "sif-principal-direction", budget: secs(5), check: sif_oracle },
        Criterion { name: "loo-no-leakage", budget: None, check: loo_no_leakage },
        Criterion { name: "direct-usim-bert-av4", budget: None, check: direct_usim_av4 },
        Criterion { name: "graded-loo-gold-substitutes", budget: None, check: graded_loo_gold },
        Criterion { name: "filter-study-embedding-t0.2", budget: None, check: filter_study_lexsub },
        Criterion { name: "wic-binary-accuracy", budget: None, check: wic_accuracy },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.check)();
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Outcome::Pass(d), Some(b)) if elapsed > b => {
                Outcome::Fail(format!("{d}; over the {:.0} s budget", b.as_secs_f64()))
            }
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {:<30} {:>8.3} s  {detail}", c.name, elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn word(i: usize) -> String {
    format!("w{i}")
}

fn distinct_words(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<String> {
    let mut idx: Vec<usize> = (0..vocab).collect();
    for i in 0..n {
        let j = rng.random_range(i..vocab);
        idx.swap(i, j);
    }
    idx[..n].iter().map(|&i| word(i)).collect()
}

/// GAP evaluated straight from its definition, each prefix sum recomputed
/// from scratch.
fn gap_brute_force(system: &[String], gold: &[(String, f64)]) -> f64 {
    let weight = |w: &str| gold.iter().find(|(g, _)| g == w).map_or(0.0, |(_, x)| *x);
    let x: Vec<f64> = system.iter().map(|w| weight(w)).collect();
    let mut num = 0.0;
    for i in 0..x.len() {
        if x[i] > 0.0 {
            let prefix: f64 = (0..=i).map(|k| x[k]).sum();
            num += prefix / (i + 1) as f64;
        }
    }
    let mut y: Vec<f64> = gold.iter().map(|(_, v)| *v).filter(|v| *v > 0.0).collect();
    y.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut den = 0.0;
    for i in 0..y.len() {
        let prefix: f64 = (0..=i).map(|k| y[k]).sum();
        den += prefix / (i + 1) as f64;
    }
    if den == 0.0 { 0.0 } else { num / den }
}

fn gap_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for t in 0..1000 {
        let g = rng.random_range(0..=8);
        let gold_words = distinct_words(&mut rng, g, 12);
        let gold: Vec<(String, f64)> = gold_words
            .into_iter()
            .map(|w| {
                let v = if rng.random_bool(0.15) { 0.0 } else { rng.random_range(1..=6) as f64 };
                (w, v)
            })
            .collect();
        let n = rng.random_range(0..=8);
        let scored: Vec<(String, f64)> = distinct_words(&mut rng, n, 12)
            .into_iter()
            .map(|w| (w, rng.random_range(0.0..1.0)))
            .collect();
        let ranking = SubstituteRanking::new("x", scored);
        let order: Vec<String> = ranking.words().map(str::to_string).collect();
        let got = match gap(&ranking, &SubstituteSet::new("x", gold.clone())) {
            Ok(v) => v,
            Err(e) => return Outcome::Fail(format!("instance {t}: {e}")),
        };
        worst = worst.max((got - gap_brute_force(&order, &gold)).abs());
    }
    verdict(worst <= 1e-9, format!("1000 instances, max |diff| = {worst:.3e} (tol 1e-9)"))
}

/// Rank of each value: one plus the number of smaller values plus half the
/// number of other equal values.
fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

fn spearman_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst = 0.0f64;
    let mut rank_worst = 0.0f64;
    let mut compared = 0;
    let mut tied = 0;
    while compared < 1000 {
        let n = rng.random_range(2..=50);
        let levels = rng.random_range(2..=n.max(3));
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 - 3.0).collect();
        let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
        let got = spearman(&x, &y);
        if constant(&x) || constant(&y) {
            if got.is_ok() {
                return Outcome::Fail(format!("constant input accepted: {x:?} {y:?}"));
            }
            continue;
        }
        let got = match got {
            Ok(v) => v,
            Err(e) => return Outcome::Fail(format!("vector {compared}: {e}")),
        };
        let (rx, ry) = (naive_ranks(&x), naive_ranks(&y));
        for (a, b) in average_ranks(&x).iter().zip(&rx) {
            rank_worst = rank_worst.max((a - b).abs());
        }
        if x.iter().any(|a| x.iter().filter(|b| *b == a).count() > 1) {
            tied += 1;
        }
        worst = worst.max((got - naive_pearson(&rx, &ry)).abs());
        compared += 1;
    }
    verdict(
        worst <= 1e-12 && rank_worst == 0.0,
        format!("1000 vectors ({tied} with ties), max |diff| = {worst:.3e} (tol 1e-12)"),
    )
}

fn random_table(rng: &mut ChaCha8Rng, vocab: usize, dim: usize) -> EmbeddingTable {
    // A few words stay out of the table so the missing-vector path is hit.
    let entries = (0..vocab)
        .filter(|i| i % 7 != 6)
        .map(|i| (word(i), (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<f32>>()));
    EmbeddingTable::from_entries(dim, entries).expect("valid table")
}

fn random_store(rng: &mut ChaCha8Rng, vocab: usize) -> ParaphraseStore {
    let mut entries = Vec::new();
    for i in 0..vocab {
        for j in i + 1..vocab {
            if rng.random_bool(0.5) {
                entries.push(Paraphrase { first: word(i), second: word(j), score: None });
            }
        }
    }
    ParaphraseStore::from_entries(entries).expect("distinct entries")
}

fn filter_properties() -> Outcome {
    const VOCAB: usize = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let table = random_table(&mut rng, VOCAB, 4);
    let store = random_store(&mut rng, VOCAB);
    let names = ["ppdb", "embedding", "score-gap", "top-k"];
    let mut not_prefix = [0usize; 4];
    let mut not_idempotent = [0usize; 4];
    let mut example: [Option<String>; 4] = Default::default();
    for _ in 0..1000 {
        let n = rng.random_range(0..=12);
        let items: Vec<(String, f64)> = distinct_words(&mut rng, n, VOCAB)
            .into_iter()
            .map(|w| (w, (rng.random_range(0..20) as f64) / 20.0))
            .collect();
        let r = SubstituteRanking::new("x", items);
        let threshold = rng.random_range(0.0..0.6);
        let k = rng.random_range(1..=6);
        let apply = |i: usize, r: &SubstituteRanking| match i {
            0 => filter_ppdb(r, &store),
            1 => filter_embedding(r, &table, threshold),
            2 => filter_score_gap(r),
            _ => filter_top_k(r, k),
        };
        for i in 0..4 {
            let once = apply(i, &r);
            if once.items.len() > r.items.len() || once.items[..] != r.items[..once.items.len()] {
                not_prefix[i] += 1;
            }
            let twice = apply(i, &once);
            if twice != once {
                not_idempotent[i] += 1;
                example[i].get_or_insert_with(|| {
                    let s = |r: &SubstituteRanking| r.items.iter().map(|(_, v)| v.to_string()).collect::<Vec<_>>().join(",");
                    format!("scores [{}] -> [{}] -> [{}]", s(&r), s(&once), s(&twice))
                });
            }
        }
    }
    let mut problems = Vec::new();
    for i in 0..4 {
        if not_prefix[i] > 0 {
            problems.push(format!("{}: {} non-prefix outputs", names[i], not_prefix[i]));
        }
        if not_idempotent[i] > 0 {
            problems.push(format!(
                "{}: not idempotent on {}/1000, e.g. {}",
                names[i],
                not_idempotent[i],
                example[i].as_deref().unwrap_or_default()
            ));
        }
    }
    if problems.is_empty() {
        Outcome::Pass("1000 rankings x 4 filters: prefix and idempotent".into())
    } else {
        Outcome::Fail(format!("prefix holds for all four; {}", problems.join("; ")))
    }
}

fn eq1_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut bad = 0;
    for _ in 0..100_000 {
        let (t1, t2, c1, c2) = (
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let (tl, th) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (cl, ch) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        let s = eq1_score(t1, c1);
        let in_range = (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&context_only_score(c1));
        let mono_t = eq1_score(tl, c1) <= eq1_score(th, c1);
        let mono_c = eq1_score(t1, cl) <= eq1_score(t1, ch) && context_only_score(cl) <= context_only_score(ch);
        if !(in_range && mono_t && mono_c) {
            bad += 1;
        }
    }
    let corners = eq1_score(-1.0, -1.0) == 0.0 && eq1_score(1.0, 1.0) == 1.0;
    verdict(bad == 0 && corners, format!("100000 cosine draws, {bad} violations"))
}

fn regression_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let (n, d) = (200, 5);
    let names: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    let planted: Vec<f64> = vec![1.5, -2.0, 0.25, 3.0, -0.75];
    let planted_bias = 0.4;
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) * (j + 1) as f64 + j as f64).collect())
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| planted_bias + r.iter().zip(&planted).map(|(a, w)| a * w).sum::<f64>())
        .collect();

    let design = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[i][j] } else { 1.0 });
    let oracle = match design.pseudo_inverse(1e-12) {
        Ok(p) => p * DVector::from_vec(y.clone()),
        Err(e) => return Outcome::Fail(format!("oracle failed: {e}")),
    };
    let model = match fit_linear(&names, &x, &y) {
        Ok(m) => m,
        Err(e) => return Outcome::Fail(format!("fit_linear: {e}")),
    };
    let (w, b) = model.coefficients();
    let mut ols_err = (b - oracle[d]).abs();
    for j in 0..d {
        ols_err = ols_err.max((w[j] - oracle[j]).abs());
    }

    // Separable labels: sign of a fixed direction, with a margin.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    while xs.len() < 300 {
        let p: Vec<f64> = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let m = p[0] - 0.5 * p[1] + 0.3;
        if m.abs() > 0.2 {
            xs.push(p);
            ys.push(m > 0.0);
        }
    }
    let lnames = vec!["a".to_string(), "b".to_string()];
    let (lm, trace) = match fit_logistic(&lnames, &xs, &ys, &LogisticConfig::default()) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("fit_logistic: {e}")),
    };
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(p, &t)| (lm.predict_values(p).unwrap() >= eval::DECISION_THRESHOLD) == t)
        .count();
    let acc = correct as f64 / xs.len() as f64;
    let increases = trace.windows(2).filter(|w| w[1] > w[0]).count();
    verdict(
        ols_err <= 1e-6 && acc >= 0.95 && increases == 0,
        format!(
            "OLS max |w - pinv| = {ols_err:.3e} (tol 1e-6); logistic accuracy {:.1}% (min 95%), {increases} loss increases over {} epochs",
            acc * 100.0,
            trace.len() - 1
        ),
    )
}

fn sif_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let mut worst_cos = 1.0f64;
    let mut worst_idem = 0.0f64;
    for t in 0..50 {
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let state = match fit_sif(&rows, SifConfig::default()) {
            Ok(s) => s,
            Err(e) => return Outcome::Fail(format!("matrix {t}: {e}")),
        };
        let x = DMatrix::from_fn(50, 10, |i, j| rows[i][j]);
        let eig = SymmetricEigen::new(x.transpose() * &x);
        let top = eig.eigenvalues.imax();
        let u = eig.eigenvectors.column(top);
        let dot: f64 = state.direction.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        let norm: f64 = state.direction.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst_cos = worst_cos.min(dot.abs() / norm);
        worst_idem = worst_idem.max(idempotence_gap(&state, &rows[t % 50]));
    }
    verdict(
        worst_cos >= 1.0 - 1e-6 && worst_idem <= 1e-12,
        format!("50 matrices 50x10, min |cos| = {worst_cos:.12} (min 1-1e-6), apply_sif idempotence gap {worst_idem:.3e}"),
    )
}

fn idempotence_gap(state: &SifState, v: &[f64]) -> f64 {
    let once = apply_sif(v, state).expect("dimension");
    let twice = apply_sif(&once, state).expect("dimension");
    once.iter().zip(&twice).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn sha256_of_ids(ids: &[String]) -> String {
    let mut sorted: Vec<&str> = ids.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    sorted.dedup();
    let digest = Sha256::digest(sorted.join("\n").as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn loo_no_leakage() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let lemmas = ["bank.n", "charge.v", "light.a", "run.v", "strike.n"];
    let mut graded = Vec::new();
    let mut extra = Vec::new();
    let mut rows = Vec::new();
    for (l, lemma) in lemmas.iter().enumerate() {
        for k in 0..12 {
            let score = 1.0 + ((l * 7 + k * 3) % 41) as f64 / 10.0;
            let id = format!("{lemma}#{k}");
            graded.push(InstancePair {
                pair_id: id.clone(),
                lemma: lemma.to_string(),
                first: format!("{lemma}:{k}a"),
                second: format!("{lemma}:{k}b"),
                gold: Gold::Score(score),
            });
            rows.push((id, score + rng.random_range(-0.3..0.3), rng.random_range(0.0..1.0)));
        }
        for k in 0..3 {
            let same = k % 2 == 0;
            let id = format!("{lemma}#coinco{k}");
            extra.push(InstancePair {
                pair_id: id.clone(),
                lemma: lemma.to_string(),
                first: format!("{lemma}:c{k}a"),
                second: format!("{lemma}:c{k}b"),
                gold: Gold::Label(same),
            });
            rows.push((id, if same { 5.0 } else { 1.0 }, rng.random_range(0.0..1.0)));
        }
    }
    let schema = vec!["signal".to_string(), "noise".to_string()];
    let vectors = rows
        .into_iter()
        .map(|(id, a, b)| FeatureVector {
            pair_id: id,
            values: IndexMap::from([(schema[0].clone(), Some(a)), (schema[1].clone(), Some(b))]),
            provenance: None,
        })
        .collect();
    let matrix = FeatureMatrix::new(schema, vectors).expect("consistent rows");
    let result = match run_loo_graded(&graded, &extra, &matrix, &LooConfig::default(), &ModelConfig::Linear) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("run_loo_graded: {e}")),
    };

    let lemma_of: HashMap<&str, &str> = graded
        .iter()
        .chain(&extra)
        .map(|p| (p.pair_id.as_str(), p.lemma.as_str()))
        .collect();
    let mut problems = Vec::new();
    if result.folds.len() != lemmas.len() {
        problems.push(format!("{} folds for {} lemmas", result.folds.len(), lemmas.len()));
    }
    for (plan, fold) in result.plans.iter().zip(&result.folds) {
        let held = fold.held_out_lemma.as_str();
        let dev: HashSet<&str> = plan.dev.iter().map(String::as_str).collect();
        let leaked = plan.train.iter().filter(|id| lemma_of[id.as_str()] == held).count();
        if leaked > 0 {
            problems.push(format!("{held}: {leaked} held-out pairs in training"));
        }
        if plan.train.iter().any(|id| dev.contains(id.as_str())) {
            problems.push(format!("{held}: development pairs in training"));
        }
        let expected: Vec<String> = graded
            .iter()
            .chain(&extra)
            .filter(|p| p.lemma != held && !dev.contains(p.pair_id.as_str()))
            .map(|p| p.pair_id.clone())
            .collect();
        if sha256_of_ids(&expected) != fold.train_checksum {
            problems.push(format!("{held}: training checksum does not match the independent recomputation"));
        }
        let with_held_out: Vec<String> =
            expected.iter().cloned().chain(graded.iter().filter(|p| p.lemma == held).map(|p| p.pair_id.clone())).collect();
        if sha256_of_ids(&with_held_out) == fold.train_checksum {
            problems.push(format!("{held}: checksum insensitive to held-out pairs"));
        }
    }
    if problems.is_empty() {
        Outcome::Pass(format!(
            "{} folds; held-out lemma absent from every training checksum",
            result.folds.len()
        ))
    } else {
        Outcome::Fail(problems.join("; "))
    }
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_ENV).map(PathBuf::from)
}

/// Runs a reproduction criterion when all `files` exist under the data
/// directory.
fn with_data(files: &[&str], run: impl FnOnce(&Path) -> usimkit::Result<Outcome>) -> Outcome {
    let Some(dir) = data_dir() else {
        return Outcome::Skip(format!("{DATA_ENV} not set"));
    };
    let missing: Vec<&str> = files.iter().copied().filter(|f| !dir.join(f).is_file()).collect();
    if !missing.is_empty() {
        return Outcome::Skip(format!("missing {} under {}", missing.join(", "), dir.display()));
    }
    run(&dir).unwrap_or_else(|e| Outcome::Fail(e.to_string()))
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn direct_usim_av4() -> Outcome {
    with_data(&["usim/instances.jsonl", "usim/pairs.tsv", "usim/bundles.jsonl"], |dir| {
        let instances = load_instances(&dir.join("usim/instances.jsonl"))?;
        let pairs = load_pairs(&dir.join("usim/pairs.tsv"), &instances)?;
        let paths = ResourcePaths {
            bundles: Some(dir.join("usim/bundles.jsonl")),
            ..Default::default()
        };
        let res = stages::load_resources(&paths, &instances, &HashSet::new(), false)?;
        let spec = "contextual-target:av4".parse()?;
        let preds = direct_usim(&pairs, &instances, &spec, &res.view())?;
        let rho = eval::report(&preds, &pairs, Grouping::ByLemma)?.aggregate.unwrap_or(f64::NAN);
        Ok(verdict(
            within(rho, 0.518, 0.05),
            format!("{} pairs, mean per-lemma rho = {rho:.3} (target 0.518 +- 0.05)", pairs.len()),
        ))
    })
}

fn graded_loo_gold() -> Outcome {
    let files = [
        "embeddings.txt",
        "usim/instances.jsonl",
        "usim/pairs.tsv",
        "usim/bundles.jsonl",
        "usim/gold_substitutes.jsonl",
    ];
    with_data(&files, |dir| {
        let instances = load_instances(&dir.join("usim/instances.jsonl"))?;
        let pairs = load_pairs(&dir.join("usim/pairs.tsv"), &instances)?;
        let subs = load_substitutes(&dir.join("usim/gold_substitutes.jsonl"), Some(&instances))?;
        let vocab = stages::vocabulary(&instances, subs.iter().flat_map(|s| s.words()));
        let paths = ResourcePaths {
            embeddings: Some(dir.join("embeddings.txt")),
            bundles: Some(dir.join("usim/bundles.jsonl")),
            ..Default::default()
        };
        let res = stages::load_resources(&paths, &instances, &vocab, false)?;
        let source = SubstituteSource::new(Provenance::Gold, subs);
        let specs = graded_default_specs();
        let matrix = build_feature_matrix(&pairs, &instances, Some(&source), &specs, &res.view())?;
        let embedding_only: Vec<String> =
            matrix.schema.iter().filter(|n| !is_substitute_feature(n)).cloned().collect();
        let loo = LooConfig::default();
        let combined = run_loo_graded(&pairs, &[], &matrix, &loo, &ModelConfig::Linear)?;
        let embedding = run_loo_graded(&pairs, &[], &matrix.select(&embedding_only)?, &loo, &ModelConfig::Linear)?;
        let c = combined.report.aggregate.unwrap_or(f64::NAN);
        let e = embedding.report.aggregate.unwrap_or(f64::NAN);
        Ok(verdict(
            within(c, 0.626, 0.05) && within(e, 0.494, 0.05),
            format!("combined rho = {c:.3} (target 0.626 +- 0.05), embedding-only rho = {e:.3} (target 0.494 +- 0.05)"),
        ))
    })
}

fn filter_study_lexsub() -> Outcome {
    let files = [
        "embeddings.txt",
        "lexsub/instances.jsonl",
        "lexsub/gold_substitutes.jsonl",
        "lexsub/pool.tsv",
        "lexsub/bundles.jsonl",
    ];
    with_data(&files, |dir| {
        let instances = load_instances(&dir.join("lexsub/instances.jsonl"))?;
        let gold = load_substitutes(&dir.join("lexsub/gold_substitutes.jsonl"), Some(&instances))?;
        let pool = load_pool(&dir.join("lexsub/pool.tsv"))?;
        let pool_words = pool.keys().flat_map(|k| pool.get(k).into_iter().flatten().map(String::as_str));
        let vocab = stages::vocabulary(&instances, pool_words);
        let paths = ResourcePaths {
            embeddings: Some(dir.join("embeddings.txt")),
            bundles: Some(dir.join("lexsub/bundles.jsonl")),
            ..Default::default()
        };
        let res = stages::load_resources(&paths, &instances, &vocab, false)?;
        let view = res.view();
        let ranked = stages::annotate(&instances, &pool, &view, None, ScoringMode::ContextOnly, FilterConfig::None)?;
        let filter = FilterConfig::EmbeddingAdjacent { threshold: 0.2 };
        let fres = FilterResources { paraphrases: None, table: view.table };
        let rows = stages::filter_study(&ranked.sets, &gold, &[filter], &fres)?;
        let f1 = rows[0].1.f1;
        Ok(verdict(
            within(f1, 0.373, 0.03),
            format!("{} instances ranked, F1 = {f1:.3} (target 0.373 +- 0.03)", ranked.sets.len()),
        ))
    })
}

fn wic_accuracy() -> Outcome {
    let files = [
        "embeddings.txt",
        "wic/instances.jsonl",
        "wic/train.tsv",
        "wic/dev.tsv",
        "wic/test.tsv",
        "wic/bundles.jsonl",
        "wic/use.jsonl",
        "wic/substitutes.jsonl",
    ];
    with_data(&files, |dir| {
        let instances = load_instances(&dir.join("wic/instances.jsonl"))?;
        let split = |name: &str| load_pairs(&dir.join(format!("wic/{name}.tsv")), &instances);
        let (train, dev, test) = (split("train")?, split("dev")?, split("test")?);
        let subs = load_substitutes(&dir.join("wic/substitutes.jsonl"), Some(&instances))?;
        let vocab = stages::vocabulary(&instances, subs.iter().flat_map(|s| s.words()));
        let paths = ResourcePaths {
            embeddings: Some(dir.join("embeddings.txt")),
            bundles: Some(dir.join("wic/bundles.jsonl")),
            sentence_vectors: vec![("use".into(), dir.join("wic/use.jsonl"))],
            ..Default::default()
        };
        let res = stages::load_resources(&paths, &instances, &vocab, false)?;
        let source = SubstituteSource::new(Provenance::AutoParaphrase, subs);
        let all: Vec<InstancePair> = train.iter().chain(&dev).chain(&test).cloned().collect();
        let matrix = build_feature_matrix(&all, &instances, Some(&source), &binary_default_specs(), &res.view())?;
        let embedding_only: Vec<String> =
            matrix.schema.iter().filter(|n| !is_substitute_feature(n)).cloned().collect();
        let cfg = LogisticConfig::default();
        let emb = run_binary(&train, &dev, &test, &matrix, &Selection::Fixed(embedding_only), &cfg)?;
        let comb = run_binary(&train, &dev, &test, &matrix, &Selection::Fixed(matrix.schema.clone()), &cfg)?;
        let (e, c) = (emb.test_accuracy * 100.0, comb.test_accuracy * 100.0);
        Ok(verdict(
            within(e, 63.62, 2.0) && within(c, 64.86, 2.0) && e > 59.4 && c > 59.4,
            format!("embedding-only {e:.2} (target 63.62 +- 2), combined {c:.2} (target 64.86 +- 2), baseline 59.4"),
        ))
    })
}
