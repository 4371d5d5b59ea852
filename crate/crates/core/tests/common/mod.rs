//! Synthetic corpus with two senses per lemma, written in every input
//! format the CLI reads.

#![allow(dead_code)]

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LEMMAS: [&str; 4] = ["bank", "charge", "light", "strike"];
pub const PER_LEMMA: usize = 6;
const DIM: usize = 8;
const LAYER_DIM: usize = 6;

pub struct Fixture {
    pub dir: PathBuf,
    pub instances: PathBuf,
    pub pairs: PathBuf,
    pub binary_train: PathBuf,
    pub binary_test: PathBuf,
    pub substitutes: PathBuf,
    pub embeddings: PathBuf,
    pub bundles: PathBuf,
    pub pool: PathBuf,
    pub paraphrases: PathBuf,
    pub judgments: PathBuf,
}

fn sense(k: usize) -> usize {
    k % 2
}

fn vector(rng: &mut ChaCha8Rng, centre: &[f64], noise: f64) -> Vec<f64> {
    centre.iter().map(|c| c + rng.random_range(-noise..noise)).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(",")
}

fn sense_words(lemma: &str, s: usize) -> [String; 4] {
    [0, 1, 2, 3].map(|i| format!("{lemma}{s}x{i}"))
}

impl Fixture {
    pub fn write(dir: &Path) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = |name: &str| dir.join(name);
        let fx = Fixture {
            dir: dir.to_path_buf(),
            instances: p("instances.jsonl"),
            pairs: p("pairs.tsv"),
            binary_train: p("binary_train.tsv"),
            binary_test: p("binary_test.tsv"),
            substitutes: p("substitutes.jsonl"),
            embeddings: p("embeddings.txt"),
            bundles: p("bundles.jsonl"),
            pool: p("pool.tsv"),
            paraphrases: p("paraphrases.tsv"),
            judgments: p("judgments.tsv"),
        };

        let mut instances = String::new();
        let mut bundles = String::new();
        let mut subs = String::new();
        let mut pool = String::new();
        let mut paraphrases = String::new();
        let mut words: Vec<String> = vec!["the".into(), "was".into(), "near".into()];
        for lemma in LEMMAS {
            words.push(lemma.to_string());
            for s in 0..2 {
                words.extend(sense_words(lemma, s));
            }
        }
        let table: HashMap<String, Vec<f64>> =
            words.iter().map(|w| (w.clone(), vector(&mut rng, &[0.0; DIM], 1.0))).collect();
        for lemma in LEMMAS {
            let centres: Vec<Vec<f64>> = (0..2).map(|_| vector(&mut rng, &[0.0; LAYER_DIM], 1.0)).collect();
            for s in 0..2 {
                let sw = sense_words(lemma, s);
                for w in &sw {
                    let _ = writeln!(pool, "{lemma}.n\t{w}");
                }
                for pair in sw.windows(2) {
                    let _ = writeln!(paraphrases, "{}\t{}", pair[0], pair[1]);
                }
            }
            // Blank-slot vectors share the static space, near the sense's words.
            let slot_centres: Vec<Vec<f64>> = (0..2)
                .map(|s| {
                    let sw = sense_words(lemma, s);
                    (0..DIM).map(|d| sw.iter().map(|w| table[w][d]).sum::<f64>() / 4.0).collect()
                })
                .collect();
            for k in 0..PER_LEMMA {
                let s = sense(k);
                let id = format!("{lemma}.{k}");
                let cue = format!("{lemma}{s}x{}", k % 3);
                let tokens = ["the", lemma, "was", "near", cue.as_str()];
                let _ = writeln!(
                    instances,
                    r#"{{"instance_id":"{id}","lemma":"{lemma}","pos":"n","tokens":{},"target_index":1}}"#,
                    serde_json::to_string(&tokens).unwrap()
                );
                let layers: Vec<String> = (0..4)
                    .map(|l| {
                        let toks: Vec<String> = (0..tokens.len())
                            .map(|t| {
                                let v = if t == 1 {
                                    vector(&mut rng, &centres[s], 0.3)
                                } else {
                                    vector(&mut rng, &[0.0; LAYER_DIM], 1.0)
                                };
                                format!("[{}]", join(&v))
                            })
                            .collect();
                        format!(r#""{l}":[{}]"#, toks.join(","))
                    })
                    .collect();
                let ctx = vector(&mut rng, &slot_centres[s], 0.2);
                let _ = writeln!(
                    bundles,
                    r#"{{"instance_id":"{id}","layers":{{{}}},"context_vector":[{}]}}"#,
                    layers.join(","),
                    join(&ctx)
                );
                let gold: Vec<String> = sense_words(lemma, s)
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| (i + k) % 4 != 3)
                    .map(|(i, w)| format!(r#"{{"word":"{w}","weight":{}}}"#, 3 - i.min(2)))
                    .collect();
                let _ = writeln!(subs, r#"{{"instance_id":"{id}","substitutes":[{}]}}"#, gold.join(","));
            }
        }

        let mut pairs = String::new();
        let mut train = String::new();
        let mut test = String::new();
        let mut judgments = String::new();
        for lemma in LEMMAS {
            let mut n = 0;
            for a in 0..PER_LEMMA {
                for b in a + 1..PER_LEMMA {
                    let same = sense(a) == sense(b);
                    let score = if same { 4.0 + (a + b) as f64 % 3.0 / 2.0 } else { 1.0 + (a * b) as f64 % 4.0 / 3.0 };
                    let id = format!("{lemma}:{a}-{b}");
                    let _ = writeln!(pairs, "{id}\t{lemma}\t{lemma}.{a}\t{lemma}.{b}\t{score}");
                    let label = if same { "T" } else { "F" };
                    let line = format!("{id}\t{lemma}\t{lemma}.{a}\t{lemma}.{b}\t{label}\n");
                    if n % 3 == 2 { test.push_str(&line) } else { train.push_str(&line) }
                    for ann in 0..3 {
                        let j = (score + ann as f64 * 0.5 - 0.5).clamp(1.0, 5.0).round();
                        let _ = writeln!(judgments, "{lemma}\t{id}\tann{ann}\t{j}");
                    }
                    n += 1;
                }
            }
        }

        let mut emb = format!("{} {DIM}\n", words.len());
        for w in &words {
            let v = &table[w];
            let _ = writeln!(emb, "{w} {}", v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(" "));
        }

        fs::write(&fx.instances, instances).unwrap();
        fs::write(&fx.bundles, bundles).unwrap();
        fs::write(&fx.substitutes, subs).unwrap();
        fs::write(&fx.pool, pool).unwrap();
        fs::write(&fx.paraphrases, paraphrases).unwrap();
        fs::write(&fx.pairs, pairs).unwrap();
        fs::write(&fx.binary_train, train).unwrap();
        fs::write(&fx.binary_test, test).unwrap();
        fs::write(&fx.judgments, judgments).unwrap();
        fs::write(&fx.embeddings, emb).unwrap();
        fx
    }
}
