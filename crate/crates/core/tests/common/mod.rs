//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::HashSet;

use advsl::evalreport;
use advsl::model::{backward, forward, forward_embeds, Arch, Head, ModelParams};
use advsl::selflearn::{self_learn, RetrainMode, SelfLearnConfig, SelfLearnOutcome};
use advsl::synthetic::{generate, prepare, Prepared, SyntheticConfig};
use advsl::textdata::{
    truncate, Dataset, Document, EmbeddingTable, Encoded, Example, Origin, PAD, UNK,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A model with Gaussian embeddings and head, trainable embeddings.
pub fn random_model(
    arch: Arch,
    vocab: usize,
    dim: usize,
    classes: usize,
    hidden: usize,
    seed: u64,
) -> ModelParams {
    let mut r = rng(seed);
    let n = Normal::new(0.0, 1.0).unwrap();
    let mut matrix = Array2::from_shape_fn((vocab, dim), |_| n.sample(&mut r));
    matrix.row_mut(PAD as usize).fill(0.0);
    let mut g = |rows: usize, cols: usize, s: f64| {
        Array2::from_shape_fn((rows, cols), |_| s * n.sample(&mut r))
    };
    let head = match arch {
        Arch::Linear => Head::Linear {
            w: g(classes, dim, 0.7),
            b: g(1, classes, 0.3).row(0).to_owned(),
        },
        Arch::Mlp1 => Head::Mlp1 {
            w1: g(hidden, dim, 0.7),
            b1: g(1, hidden, 0.3).row(0).to_owned(),
            w2: g(classes, hidden, 0.7),
            b2: g(1, classes, 0.3).row(0).to_owned(),
        },
    };
    ModelParams {
        embeddings: EmbeddingTable {
            matrix,
            frozen: false,
        },
        head,
    }
}

pub fn random_ids(r: &mut ChaCha8Rng, vocab: usize, min_len: usize, max_len: usize) -> Vec<u32> {
    let len = r.random_range(min_len..=max_len);
    (0..len)
        .map(|_| r.random_range(UNK..vocab as u32))
        .collect()
}

/// ReLU activation pattern, used to reject finite differences that straddle a kink.
fn pattern(params: &ModelParams, enc: &Encoded, x: Option<&Array2<f64>>) -> Vec<bool> {
    let trace = match x {
        Some(x) => forward_embeds(params, &enc.ids, &enc.mask, x.clone(), None).unwrap(),
        None => forward(params, enc, None, None).unwrap(),
    };
    trace
        .hidden_pre
        .map(|z| z.iter().map(|&v| v > 0.0).collect())
        .unwrap_or_default()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub coords: usize,
    pub input_coords: usize,
    pub param_coords: usize,
    pub max_rel_err: f64,
    pub worst: String,
    pub kinks_skipped: usize,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, numeric: f64, what: String, input: bool) {
        let e = rel_err(analytic, numeric);
        self.coords += 1;
        if input {
            self.input_coords += 1;
        } else {
            self.param_coords += 1;
        }
        if e > self.max_rel_err {
            self.max_rel_err = e;
            self.worst = format!("{what}: analytic {analytic:e} numeric {numeric:e}");
        }
    }
}

/// Compares analytic gradients with central differences on random
/// coordinates of the input tensor, the head, and the embedding rows.
pub fn gradient_check(arch: Arch, seed: u64, examples: usize, per_kind: usize) -> GradCheck {
    let (vocab, dim, classes, hidden) = (30, 8, 3, 16);
    let mut r = rng(seed);
    let mut out = GradCheck::default();
    let h = FD_STEP;
    for e in 0..examples {
        let base = random_model(
            arch,
            vocab,
            dim,
            classes,
            hidden,
            seed.wrapping_mul(1000) + e as u64,
        );
        let enc = truncate(&random_ids(&mut r, vocab, 2, 12), 64);
        let y = r.random_range(0..classes);
        let trace = forward(&base, &enc, Some(y), None).unwrap();
        let grads = backward(&base, &trace).unwrap();
        let center = pattern(&base, &enc, None);
        let x0 = trace.input_embeds.clone();
        let loss_x = |x: &Array2<f64>| {
            forward_embeds(&base, &enc.ids, &enc.mask, x.clone(), Some(y))
                .unwrap()
                .loss
                .unwrap()
        };

        for _ in 0..per_kind {
            let (t, j) = (r.random_range(0..enc.len()), r.random_range(0..dim));
            let (mut xp, mut xm) = (x0.clone(), x0.clone());
            xp[[t, j]] += h;
            xm[[t, j]] -= h;
            if pattern(&base, &enc, Some(&xp)) != center
                || pattern(&base, &enc, Some(&xm)) != center
            {
                out.kinks_skipped += 1;
                continue;
            }
            let numeric = (loss_x(&xp) - loss_x(&xm)) / (2.0 * h);
            out.record(
                grads.d_input[[t, j]],
                numeric,
                format!("{arch} d_input[{t},{j}]"),
                true,
            );
        }

        let sizes: Vec<usize> = base.head.tensors().iter().map(|s| s.len()).collect();
        let total: usize = sizes.iter().sum();
        let analytic_head = grads.params.head.tensors();
        for _ in 0..per_kind {
            let mut flat = r.random_range(0..total);
            let mut k = 0;
            while flat >= sizes[k] {
                flat -= sizes[k];
                k += 1;
            }
            let shifted = |delta: f64| {
                let mut p = base.clone();
                p.head.tensors_mut()[k][flat] += delta;
                p
            };
            let (pp, pm) = (shifted(h), shifted(-h));
            if pattern(&pp, &enc, None) != center || pattern(&pm, &enc, None) != center {
                out.kinks_skipped += 1;
                continue;
            }
            let l = |p: &ModelParams| forward(p, &enc, Some(y), None).unwrap().loss.unwrap();
            let numeric = (l(&pp) - l(&pm)) / (2.0 * h);
            out.record(
                analytic_head[k][flat],
                numeric,
                format!("{arch} head[{k}][{flat}]"),
                false,
            );
        }

        let present: Vec<u32> = enc
            .ids
            .iter()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        for _ in 0..per_kind {
            // Half the probes hit a row that is absent from the sequence.
            let id = if r.random_bool(0.5) {
                present[r.random_range(0..present.len())]
            } else {
                r.random_range(1..vocab as u32)
            };
            let j = r.random_range(0..dim);
            let shifted = |delta: f64| {
                let mut p = base.clone();
                p.embeddings.matrix[[id as usize, j]] += delta;
                p
            };
            let (pp, pm) = (shifted(h), shifted(-h));
            if pattern(&pp, &enc, None) != center || pattern(&pm, &enc, None) != center {
                out.kinks_skipped += 1;
                continue;
            }
            let l = |p: &ModelParams| forward(p, &enc, Some(y), None).unwrap().loss.unwrap();
            let numeric = (l(&pp) - l(&pm)) / (2.0 * h);
            let analytic = grads.params.embed_rows.get(&id).map_or(0.0, |row| row[j]);
            out.record(
                analytic,
                numeric,
                format!("{arch} embedding[{id},{j}]"),
                false,
            );
        }
    }
    out
}

/// Probabilities computed without the library's forward pass: mean of the
/// rows, affine map (plus ReLU layer for mlp1), plain softmax.
pub fn oracle_probs(params: &ModelParams, ids: &[u32]) -> Vec<f64> {
    let m = &params.embeddings.matrix;
    let d = m.ncols();
    let mut h = vec![0.0; d];
    for &id in ids {
        for j in 0..d {
            h[j] += m[[id as usize, j]];
        }
    }
    for v in &mut h {
        *v /= ids.len() as f64;
    }
    let affine = |w: &Array2<f64>, b: &Array1<f64>, x: &[f64]| -> Vec<f64> {
        (0..w.nrows())
            .map(|i| b[i] + (0..x.len()).map(|j| w[[i, j]] * x[j]).sum::<f64>())
            .collect()
    };
    let logits = match &params.head {
        Head::Linear { w, b } => affine(w, b, &h),
        Head::Mlp1 { w1, b1, w2, b2 } => {
            let a: Vec<f64> = affine(w1, b1, &h).into_iter().map(|v| v.max(0.0)).collect();
            affine(w2, b2, &a)
        }
    };
    let max = logits.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Balanced selection by repeated linear scans: for each class, pick the
/// unpicked member with the highest confidence (first index wins ties) until
/// `k_t` items or the partition is exhausted.
pub fn oracle_select(
    params: &ModelParams,
    pool: &Dataset,
    k_t: usize,
    max_len: usize,
) -> Vec<Vec<usize>> {
    let c = params.num_classes();
    let preds: Vec<(usize, f64)> = pool
        .examples
        .iter()
        .map(|ex| {
            let ids = &ex.token_ids[..ex.token_ids.len().min(max_len)];
            let p = oracle_probs(params, ids);
            let mut best = 0;
            for k in 1..c {
                if p[k] > p[best] {
                    best = k;
                }
            }
            (best, p[best])
        })
        .collect();
    let mut out = vec![Vec::new(); c];
    for (class, picked) in out.iter_mut().enumerate() {
        let mut taken = vec![false; preds.len()];
        while picked.len() < k_t {
            let mut best: Option<usize> = None;
            for (i, &(pc, conf)) in preds.iter().enumerate() {
                if pc != class || taken[i] {
                    continue;
                }
                if best.is_none_or(|b| conf > preds[b].1) {
                    best = Some(i);
                }
            }
            match best {
                Some(i) => {
                    taken[i] = true;
                    picked.push(i);
                }
                None => break,
            }
        }
    }
    out
}

/// Replacement statistics recounted from the input corpus and the emitted
/// corpus alone: a position counts as replaced when the output token differs
/// from the input token or the input word has a dictionary entry.
pub fn recount_switch(
    input: &[Document],
    output: &[Document],
    has_entry: impl Fn(&str) -> bool,
) -> (f64, f64) {
    let mut types = HashSet::new();
    let mut replaced = HashSet::new();
    let (mut tokens, mut rep) = (0usize, 0usize);
    for (a, b) in input.iter().zip(output) {
        let ta: Vec<String> = a
            .text
            .split_whitespace()
            .map(|t| t.to_lowercase())
            .collect();
        let tb: Vec<&str> = b.text.split_whitespace().collect();
        assert_eq!(ta.len(), tb.len(), "length changed");
        for (x, y) in ta.iter().zip(&tb) {
            tokens += 1;
            types.insert(x.clone());
            if has_entry(x) {
                rep += 1;
                replaced.insert(x.clone());
            } else {
                assert_eq!(x, &y.to_lowercase(), "token without entry was changed");
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (ratio(replaced.len(), types.len()), ratio(rep, tokens))
}

/// Two well-separated classes: class k documents mostly use words
/// `w{k}_*`, whose embeddings sit around `±(1, 0, ...)`.
pub fn separable_toy(n_per_class: usize, dim: usize, seed: u64) -> (ModelParams, Dataset, Dataset) {
    let mut r = rng(seed);
    let words = 6;
    let vocab = 2 + 2 * words;
    let n = Normal::new(0.0, 0.1).unwrap();
    let mut matrix = Array2::zeros((vocab, dim));
    for k in 0..2 {
        for w in 0..words {
            let id = 2 + k * words + w;
            for j in 0..dim {
                matrix[[id, j]] = n.sample(&mut r);
            }
            matrix[[id, 0]] += if k == 0 { 1.0 } else { -1.0 };
        }
    }
    let table = EmbeddingTable {
        matrix,
        frozen: true,
    };
    let params = ModelParams::new(table, Arch::Linear, 2, 8, seed);
    let mut make = |name: &str| {
        let mut ds = Dataset::new(name, 2);
        for i in 0..2 * n_per_class {
            let k = i % 2;
            let len = r.random_range(3..8);
            let ids = (0..len)
                .map(|_| (2 + k * words + r.random_range(0..words)) as u32)
                .collect();
            ds.examples.push(Example::labeled(ids, k));
        }
        ds
    };
    let train = make("toy-train");
    let val = make("toy-val");
    (params, train, val)
}

pub fn small_benchmark(seed: u64, n_unlabeled: usize) -> (SyntheticConfig, Prepared) {
    let mut cfg = SyntheticConfig {
        n_train: 40,
        n_val: 40,
        n_unlabeled,
        n_test: 40,
        topic_words: 10,
        background_words: 30,
        dim: 8,
        minor_dims: 4,
        ..SyntheticConfig::default()
    };
    cfg.train.epochs = 2;
    cfg.train.batch_size = 16;
    let bench = generate(&cfg, seed);
    let prep = prepare(&cfg, &bench, seed).unwrap();
    (cfg, prep)
}

pub struct Audit {
    pub iterations: usize,
    pub u0: usize,
}

/// Replays the recorded selections against original pool indices and checks
/// disjointness, balancedness, conservation and pool monotonicity.
pub fn audit(l0: &Dataset, u0: &Dataset, outcome: &SelfLearnOutcome, k_t: usize) -> Audit {
    let mut remaining: Vec<usize> = (0..u0.len()).collect();
    let mut moved: Vec<(usize, usize)> = Vec::new();
    let mut prev_pool = u0.len();
    for (sel, rec) in outcome.selections.iter().zip(&outcome.history[1..]) {
        let mut seen = std::collections::HashSet::new();
        for (class, items) in sel.per_class.iter().enumerate() {
            assert!(
                items.len() <= k_t,
                "class {class} gained {} > K_t",
                items.len()
            );
            for &(i, _) in items {
                assert!(seen.insert(i), "pool index {i} selected twice in one round");
            }
        }
        let mut chosen: Vec<(usize, usize)> = sel.assignments();
        chosen.sort();
        for &(i, c) in &chosen {
            moved.push((remaining[i], c));
        }
        let picked: std::collections::HashSet<usize> = chosen.iter().map(|x| x.0).collect();
        remaining = remaining
            .iter()
            .enumerate()
            .filter(|(i, _)| !picked.contains(i))
            .map(|(_, &o)| o)
            .collect();
        assert_eq!(rec.pool_size, remaining.len());
        assert!(rec.pool_size <= prev_pool, "pool grew");
        prev_pool = rec.pool_size;
        assert_eq!(rec.labeled_size + rec.pool_size, l0.len() + u0.len());
    }
    let originals: std::collections::HashSet<usize> = moved.iter().map(|m| m.0).collect();
    assert_eq!(originals.len(), moved.len(), "an item was merged twice");
    assert!(
        remaining.iter().all(|i| !originals.contains(i)),
        "item in both L and U"
    );

    assert_eq!(outcome.labeled.len(), l0.len() + moved.len());
    assert_eq!(outcome.pool.len(), remaining.len());
    for (ex, &(orig, class)) in outcome.labeled.examples[l0.len()..].iter().zip(&moved) {
        assert_eq!(ex.origin, Origin::Pseudo);
        assert_eq!(ex.label, Some(class));
        assert_eq!(ex.token_ids, u0.examples[orig].token_ids);
        assert_eq!(ex.weight, 1.0);
    }
    for (ex, &orig) in outcome.pool.examples.iter().zip(&remaining) {
        assert_eq!(ex.token_ids, u0.examples[orig].token_ids);
        assert_eq!(ex.label, None);
    }
    Audit {
        iterations: outcome.history.len() - 1,
        u0: u0.len(),
    }
}

pub fn check_self_learning_run(
    seed: u64,
    n_unlabeled: usize,
    k_t: usize,
    retrain_mode: RetrainMode,
) {
    let (cfg, prep) = small_benchmark(seed, n_unlabeled);
    let sl = SelfLearnConfig {
        k_t,
        retrain_mode,
        ..SelfLearnConfig::default()
    };
    let out = self_learn(
        prep.params.clone(),
        &prep.a_train,
        &prep.b_unlabeled,
        &prep.a_val,
        Some(&prep.b_test),
        &cfg.train,
        &sl,
    )
    .unwrap();
    let a = audit(&prep.a_train, &prep.b_unlabeled, &out, k_t);
    assert!(a.iterations <= sl.max_iterations);
    let every_class_each_round = out
        .selections
        .iter()
        .all(|s| s.counts().iter().all(|&c| c > 0));
    if every_class_each_round {
        let bound = a.u0.div_ceil(k_t) + sl.patience;
        assert!(
            a.iterations <= bound,
            "{} iterations > bound {bound}",
            a.iterations
        );
    }
    // The reported accuracy belongs to the best-validation iteration.
    let best = &out.history[out.best_iteration];
    assert_eq!(out.final_test_accuracy, best.test_accuracy);
    assert_eq!(out.best_val_accuracy, best.val_accuracy);
    let recomputed = evalreport::accuracy(&out.params, &prep.b_test, cfg.train.max_len).unwrap();
    assert_eq!(Some(recomputed), out.final_test_accuracy);
    // Stopping rule: the run ends on patience, exhaustion, or the cap.
    let stale_tail = out
        .history
        .iter()
        .rev()
        .take_while(|r| !r.best_so_far)
        .count();
    assert!(stale_tail <= sl.patience);
    assert!(stale_tail == sl.patience || out.pool.is_empty() || a.iterations == sl.max_iterations);
}
