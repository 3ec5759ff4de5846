//! Synthetic cross-lingual benchmark.
//!
//! Language A has class topic words and background words with generated
//! embeddings. Language B is a disjoint "translation" of A: each B word
//! reuses its A counterpart's embedding plus Gaussian noise, so a model
//! trained on A transfers imperfectly to B. Documents are bags of words drawn
//! from class-conditional distributions.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codeswitch::{code_switch, BilingualDictionary, SwitchStats};
use crate::error::Result;
use crate::evalreport::{self, report_from_rows, Report, ReportMeta};
use crate::model::{Arch, ModelParams};
use crate::perturb::{PerturbConfig, PerturbMode};
use crate::seed;
use crate::selflearn::{self_learn, SelfLearnConfig};
use crate::textdata::{
    build_vocab, table_from_vectors, to_dataset, tokenize, Dataset, Document, VocabSource,
    WordVectors,
};
use crate::train::{train, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub dim: usize,
    /// Topic words owned by each class.
    pub topic_words: usize,
    pub background_words: usize,
    /// Norm of each class prototype direction.
    pub prototype_norm: f64,
    /// Per-coordinate spread of word embeddings around their prototype.
    pub word_spread: f64,
    /// Coordinates `[0, minor_dims)` are scaled by `minor_scale`.
    pub minor_dims: usize,
    pub minor_scale: f64,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    /// Probability that a token is a topic word of the document's class.
    pub topic_prob: f64,
    /// Probability that a token is a topic word of another class.
    pub confuser_prob: f64,
    /// B-word noise scale relative to the mean A embedding norm.
    pub noise_ratio: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub seeds: Vec<u64>,
    /// Keep the generated embeddings fixed during training.
    pub freeze_embeddings: bool,
    pub arch: Arch,
    pub hidden: usize,
    pub train: TrainConfig,
    pub selflearn: SelfLearnConfig,
    /// Also write the first seed's corpora, vectors and dictionary.
    pub emit_data: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 4,
            dim: 32,
            topic_words: 50,
            background_words: 200,
            prototype_norm: 2.0,
            word_spread: 0.6,
            minor_dims: 16,
            minor_scale: 0.2,
            doc_len_min: 20,
            doc_len_max: 60,
            topic_prob: 0.2,
            confuser_prob: 0.1,
            noise_ratio: 0.3,
            n_train: 500,
            n_val: 500,
            n_unlabeled: 1000,
            n_test: 1000,
            seeds: vec![0, 1, 2, 3, 4],
            freeze_embeddings: false,
            arch: Arch::Linear,
            hidden: 64,
            train: TrainConfig {
                epochs: 5,
                batch_size: 32,
                learning_rate: 0.01,
                perturb: PerturbConfig {
                    mode: PerturbMode::Adversarial,
                    epsilon: 1.0,
                    seed: 0,
                },
                max_len: 96,
                ..TrainConfig::default()
            },
            selflearn: SelfLearnConfig::default(),
            emit_data: false,
        }
    }
}

/// Generated corpora and embeddings for one seed.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub a_words: Vec<String>,
    pub b_words: Vec<String>,
    pub vectors: WordVectors,
    pub class_names: Vec<String>,
    pub a_train: Vec<Document>,
    pub a_val: Vec<Document>,
    pub a_test: Vec<Document>,
    pub b_unlabeled: Vec<Document>,
    pub b_test: Vec<Document>,
    pub dictionary: BilingualDictionary,
}

fn gaussian_vec(rng: &mut seed::SeededRng, dim: usize, std: f64) -> Array1<f64> {
    let n = Normal::new(0.0, std).expect("finite std");
    Array1::from_shape_fn(dim, |_| n.sample(rng))
}

pub fn generate(cfg: &SyntheticConfig, seed_value: u64) -> Benchmark {
    let mut rng = seed::rng(seed::derive(seed_value, seed::purpose::SYNTHETIC));
    let (c, d) = (cfg.num_classes, cfg.dim);

    let prototypes: Vec<Array1<f64>> = (0..c)
        .map(|_| {
            let v = gaussian_vec(&mut rng, d, 1.0);
            let n = v.dot(&v).sqrt();
            v * (cfg.prototype_norm / n)
        })
        .collect();

    let n_topic = c * cfg.topic_words;
    let n_a = n_topic + cfg.background_words;
    let mut a_emb = Array2::zeros((n_a, d));
    for w in 0..n_a {
        let mut e = gaussian_vec(&mut rng, d, cfg.word_spread);
        if w < n_topic {
            e += &prototypes[w / cfg.topic_words];
        }
        for k in 0..cfg.minor_dims.min(d) {
            e[k] *= cfg.minor_scale;
        }
        a_emb.row_mut(w).assign(&e);
    }

    let mean_norm = a_emb
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .sum::<f64>()
        / n_a as f64;
    let sigma = cfg.noise_ratio * mean_norm;
    let mut b_emb = a_emb.clone();
    for v in b_emb.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * z;
    }

    let a_words: Vec<String> = (0..n_a).map(|i| format!("a{i}")).collect();
    let b_words: Vec<String> = (0..n_a).map(|i| format!("b{i}")).collect();
    let mut words = a_words.clone();
    words.extend(b_words.iter().cloned());
    let mut matrix = Array2::zeros((2 * n_a, d));
    matrix.slice_mut(ndarray::s![..n_a, ..]).assign(&a_emb);
    matrix.slice_mut(ndarray::s![n_a.., ..]).assign(&b_emb);

    let class_names: Vec<String> = (0..c).map(|k| format!("topic{k}")).collect();

    let make_docs = |n: usize, lang: &[String], labeled: bool, rng: &mut seed::SeededRng| {
        (0..n)
            .map(|i| {
                let class = i % c;
                let len = rng.random_range(cfg.doc_len_min..=cfg.doc_len_max);
                let toks: Vec<&str> = (0..len)
                    .map(|_| {
                        let u: f64 = rng.random();
                        let w = if u < cfg.topic_prob {
                            class * cfg.topic_words + rng.random_range(0..cfg.topic_words)
                        } else if u < cfg.topic_prob + cfg.confuser_prob && c > 1 {
                            let mut other = rng.random_range(0..c - 1);
                            if other >= class {
                                other += 1;
                            }
                            other * cfg.topic_words + rng.random_range(0..cfg.topic_words)
                        } else {
                            n_topic + rng.random_range(0..cfg.background_words)
                        };
                        lang[w].as_str()
                    })
                    .collect();
                Document {
                    text: toks.join(" "),
                    label: labeled.then(|| class_names[class].clone()),
                }
            })
            .collect::<Vec<_>>()
    };
    let a_train = make_docs(cfg.n_train, &a_words, true, &mut rng);
    let a_val = make_docs(cfg.n_val, &a_words, true, &mut rng);
    let a_test = make_docs(cfg.n_test, &a_words, true, &mut rng);
    let b_unlabeled = make_docs(cfg.n_unlabeled, &b_words, false, &mut rng);
    let b_test = make_docs(cfg.n_test, &b_words, true, &mut rng);

    let dictionary = BilingualDictionary::from_pairs(
        a_words.iter().zip(&b_words),
        seed::derive(seed_value, seed::purpose::DICTIONARY),
        true,
    );

    Benchmark {
        a_words,
        b_words,
        vectors: WordVectors { words, matrix },
        class_names,
        a_train,
        a_val,
        a_test,
        b_unlabeled,
        b_test,
        dictionary,
    }
}

/// The four compared conditions, in report order.
pub const CONDITIONS: [&str; 4] = [
    "no-perturbation",
    "random-perturbation",
    "adversarial",
    "adversarial+self-learning",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// B-test accuracy per condition, in [`CONDITIONS`] order.
    pub b_test: Vec<f64>,
    /// Accuracy on the code-switched A-test for no-perturbation and adversarial.
    pub switched_a_test: [f64; 2],
    /// Clean A-test accuracy for no-perturbation and adversarial.
    pub a_test: [f64; 2],
    pub switch_stats: SwitchStats,
    pub self_learning_iterations: usize,
    /// True when every recorded batch of the adversarial run had
    /// adversarial loss ≥ clean loss.
    pub adv_loss_dominates: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub per_seed: Vec<SeedResult>,
    pub mean_b_test: Vec<f64>,
    pub mean_switched_a_test: [f64; 2],
}

pub struct Prepared {
    pub params: ModelParams,
    pub a_train: Dataset,
    pub a_val: Dataset,
    pub a_test: Dataset,
    pub switched_a_test: Dataset,
    pub b_unlabeled: Dataset,
    pub b_test: Dataset,
    pub switch_stats: SwitchStats,
}

pub fn prepare(cfg: &SyntheticConfig, bench: &Benchmark, seed_value: u64) -> Result<Prepared> {
    let (switched, switch_stats) = code_switch(&bench.a_test, &bench.dictionary);
    let all: Vec<Vec<String>> = [
        &bench.a_train,
        &bench.a_val,
        &bench.a_test,
        &bench.b_unlabeled,
        &bench.b_test,
        &switched,
    ]
    .iter()
    .flat_map(|docs| docs.iter().map(|d| tokenize(&d.text, true)))
    .collect();
    let vocab = build_vocab(&all, 1);
    let (vocab, mut table) =
        table_from_vectors(&bench.vectors, VocabSource::Given(&vocab), seed_value);
    table.frozen = cfg.freeze_embeddings;
    let params = ModelParams::new(table, cfg.arch, cfg.num_classes, cfg.hidden, seed_value);
    let ds =
        |name: &str, docs: &[Document]| to_dataset(name, docs, &vocab, &bench.class_names, true);
    Ok(Prepared {
        params,
        a_train: ds("a-train", &bench.a_train)?,
        a_val: ds("a-validation", &bench.a_val)?,
        a_test: ds("a-test", &bench.a_test)?,
        switched_a_test: ds("a-test-codeswitched", &switched)?,
        b_unlabeled: ds("b-unlabeled", &bench.b_unlabeled)?,
        b_test: ds("b-test", &bench.b_test)?,
        switch_stats,
    })
}

pub fn run_seed(cfg: &SyntheticConfig, seed_value: u64) -> Result<SeedResult> {
    let bench = generate(cfg, seed_value);
    let prep = prepare(cfg, &bench, seed_value)?;
    let max_len = cfg.train.max_len;

    let mut base = cfg.train.clone();
    base.shuffle_seed = seed::derive(seed_value, seed::purpose::SHUFFLE);
    base.perturb.seed = seed::derive(seed_value, seed::purpose::PERTURB);
    let with_mode = |mode: PerturbMode| {
        let mut c = base.clone();
        c.perturb.mode = mode;
        c
    };

    let (none, _) = train(
        prep.params.clone(),
        &prep.a_train,
        &prep.a_val,
        &with_mode(PerturbMode::None),
    )?;
    let (random, _) = train(
        prep.params.clone(),
        &prep.a_train,
        &prep.a_val,
        &with_mode(PerturbMode::Random),
    )?;
    let adv_cfg = with_mode(PerturbMode::Adversarial);
    let (adv, adv_report) = train(prep.params.clone(), &prep.a_train, &prep.a_val, &adv_cfg)?;
    let sl = self_learn(
        prep.params.clone(),
        &prep.a_train,
        &prep.b_unlabeled,
        &prep.a_val,
        Some(&prep.b_test),
        &adv_cfg,
        &cfg.selflearn,
    )?;

    let acc = |p: &ModelParams, ds: &Dataset| evalreport::accuracy(p, ds, max_len);
    Ok(SeedResult {
        seed: seed_value,
        b_test: vec![
            acc(&none, &prep.b_test)?,
            acc(&random, &prep.b_test)?,
            acc(&adv, &prep.b_test)?,
            acc(&sl.params, &prep.b_test)?,
        ],
        switched_a_test: [
            acc(&none, &prep.switched_a_test)?,
            acc(&adv, &prep.switched_a_test)?,
        ],
        a_test: [acc(&none, &prep.a_test)?, acc(&adv, &prep.a_test)?],
        switch_stats: prep.switch_stats,
        self_learning_iterations: sl.history.len() - 1,
        adv_loss_dominates: adv_report.batches.iter().all(|b| b.adversarial >= b.clean),
    })
}

pub fn run(cfg: &SyntheticConfig) -> Result<BenchmarkResult> {
    let per_seed = cfg
        .seeds
        .iter()
        .map(|&s| run_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let n = per_seed.len().max(1) as f64;
    let mean_b_test = (0..CONDITIONS.len())
        .map(|k| per_seed.iter().map(|r| r.b_test[k]).sum::<f64>() / n)
        .collect();
    let mean_switched_a_test =
        [0, 1].map(|k| per_seed.iter().map(|r| r.switched_a_test[k]).sum::<f64>() / n);
    Ok(BenchmarkResult {
        per_seed,
        mean_b_test,
        mean_switched_a_test,
    })
}

/// Comparison report over the four conditions (mean B-test accuracy).
pub fn report(
    cfg: &SyntheticConfig,
    result: &BenchmarkResult,
    config_hash: &str,
) -> Result<Report> {
    let n_test = cfg.n_test * cfg.seeds.len();
    let rows = CONDITIONS
        .iter()
        .zip(&result.mean_b_test)
        .map(|(name, &acc)| (name.to_string(), acc, n_test, None))
        .collect();
    let mut seeds = BTreeMap::new();
    for (i, s) in cfg.seeds.iter().enumerate() {
        seeds.insert(format!("run{i}"), *s);
    }
    let mut report = report_from_rows(
        rows,
        cfg.num_classes,
        ReportMeta {
            title: format!(
                "synthetic cross-lingual benchmark: mean B-test accuracy over {} seeds",
                cfg.seeds.len()
            ),
            config_hash: config_hash.to_owned(),
            seeds,
        },
    )?;
    report
        .extra
        .insert("per_seed".into(), serde_json::to_value(&result.per_seed)?);
    report.extra.insert(
        "codeswitched_a_test".into(),
        serde_json::json!({
            "no-perturbation": result.mean_switched_a_test[0],
            "adversarial": result.mean_switched_a_test[1],
        }),
    );
    Ok(report)
}
