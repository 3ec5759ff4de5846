//! Self-learning: balanced pseudo-labeling of an unlabeled pool followed by
//! adversarial retraining, repeated until validation accuracy stalls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalreport;
use crate::model::ModelParams;
use crate::seed;
use crate::textdata::{Dataset, Origin};
use crate::train::{train, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainMode {
    #[default]
    Continue,
    FromScratch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfLearnConfig {
    /// Items selected per predicted class each iteration.
    pub k_t: usize,
    /// Iterations without validation improvement before stopping.
    pub patience: usize,
    pub max_iterations: usize,
    pub retrain_mode: RetrainMode,
}

impl Default for SelfLearnConfig {
    fn default() -> Self {
        SelfLearnConfig {
            k_t: 50,
            patience: 2,
            max_iterations: 20,
            retrain_mode: RetrainMode::Continue,
        }
    }
}

impl SelfLearnConfig {
    pub fn intent() -> Self {
        SelfLearnConfig {
            k_t: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_t == 0 || self.patience == 0 || self.max_iterations == 0 {
            return Err(Error::contract(
                "self-learning config: k_t, patience and max_iterations must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Items picked in one round: `per_class[c]` holds `(pool index, confidence)`
/// for class `c`, most confident first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub iteration: usize,
    pub per_class: Vec<Vec<(usize, f64)>>,
}

impl SelectionRecord {
    pub fn total(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.per_class.iter().map(Vec::len).collect()
    }

    /// `(pool index, class)` for every selected item.
    pub fn assignments(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .per_class
            .iter()
            .enumerate()
            .flat_map(|(c, items)| items.iter().map(move |&(i, _)| (i, c)))
            .collect();
        out.sort_unstable();
        out
    }
}

/// Partitions the pool by predicted class and keeps the `k_t` most confident
/// items of each partition (ties go to the lower pool index).
pub fn select_balanced(
    params: &ModelParams,
    pool: &Dataset,
    k_t: usize,
    max_len: usize,
    iteration: usize,
) -> Result<SelectionRecord> {
    let preds = evalreport::predict_all(params, pool, max_len)?;
    let mut per_class: Vec<Vec<(usize, f64)>> = vec![Vec::new(); params.num_classes()];
    for (i, p) in preds.iter().enumerate() {
        per_class[p.class].push((i, p.confidence));
    }
    for items in &mut per_class {
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        items.truncate(k_t);
    }
    Ok(SelectionRecord {
        iteration,
        per_class,
    })
}

/// Moves the selected items from `pool` into `labeled` as pseudo-labeled
/// examples, preserving the relative order of what remains in the pool.
pub fn merge_selection(labeled: &mut Dataset, pool: &mut Dataset, selection: &SelectionRecord) {
    let assignments = selection.assignments();
    let mut chosen = vec![None; pool.len()];
    for &(i, c) in &assignments {
        chosen[i] = Some(c);
    }
    let mut remaining = Vec::with_capacity(pool.len() - assignments.len());
    for (ex, class) in std::mem::take(&mut pool.examples).into_iter().zip(chosen) {
        match class {
            Some(c) => {
                let mut ex = ex;
                ex.label = Some(c);
                ex.origin = Origin::Pseudo;
                ex.weight = 1.0;
                labeled.examples.push(ex);
            }
            None => remaining.push(ex),
        }
    }
    pool.examples = remaining;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub labeled_size: usize,
    pub pool_size: usize,
    pub pseudo_labeled: usize,
    pub selected_per_class: Vec<usize>,
    pub val_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    pub best_so_far: bool,
    pub validation_set: String,
}

#[derive(Clone, Debug)]
pub struct SelfLearnOutcome {
    pub params: ModelParams,
    pub history: Vec<IterationRecord>,
    pub selections: Vec<SelectionRecord>,
    pub best_iteration: usize,
    pub best_val_accuracy: f64,
    /// Test accuracy of the best-validation model, when a test set was given.
    pub final_test_accuracy: Option<f64>,
    pub labeled: Dataset,
    pub pool: Dataset,
}

/// Iteration 0 trains on `labeled` alone. Each later iteration selects from
/// the pool, merges, retrains, and evaluates; the loop stops after
/// `patience` iterations without a new best validation accuracy, when the
/// pool is empty, or at `max_iterations`.
pub fn self_learn(
    params: ModelParams,
    labeled: &Dataset,
    unlabeled: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    train_config: &TrainConfig,
    config: &SelfLearnConfig,
) -> Result<SelfLearnOutcome> {
    config.validate()?;
    unlabeled.validate(params.vocab_size(), false)?;
    let max_len = train_config.max_len;
    let initial = params.clone();
    let mut labeled = labeled.clone();
    let mut pool = unlabeled.clone();
    for ex in &mut pool.examples {
        ex.label = None;
    }

    let test_acc = |p: &ModelParams| -> Result<Option<f64>> {
        test.map(|t| evalreport::accuracy(p, t, max_len))
            .transpose()
    };

    let (mut current, report) = train(params, &labeled, val, train_config)?;
    let val_acc = report.best_val_accuracy;
    let mut best = (current.clone(), val_acc, 0usize, test_acc(&current)?);
    let mut history = vec![IterationRecord {
        iteration: 0,
        labeled_size: labeled.len(),
        pool_size: pool.len(),
        pseudo_labeled: 0,
        selected_per_class: vec![0; current.num_classes()],
        val_accuracy: val_acc,
        test_accuracy: best.3,
        best_so_far: true,
        validation_set: val.name.clone(),
    }];
    let mut selections = Vec::new();
    let mut stale = 0;

    for t in 1..=config.max_iterations {
        if pool.is_empty() {
            break;
        }
        let selection = select_balanced(&current, &pool, config.k_t, max_len, t)?;
        merge_selection(&mut labeled, &mut pool, &selection);

        let start = match config.retrain_mode {
            RetrainMode::Continue => current,
            RetrainMode::FromScratch => initial.clone(),
        };
        let mut iter_config = train_config.clone();
        iter_config.shuffle_seed = seed::derive(train_config.shuffle_seed, t as u64);
        let (trained, report) = train(start, &labeled, val, &iter_config)?;
        current = trained;

        let val_acc = report.best_val_accuracy;
        let test_accuracy = test_acc(&current)?;
        let improved = val_acc > best.1;
        if improved {
            best = (current.clone(), val_acc, t, test_accuracy);
            stale = 0;
        } else {
            stale += 1;
        }
        log::info!(
            "self-learning iteration {t}: |L|={} |U|={} val={val_acc:.4}",
            labeled.len(),
            pool.len()
        );
        history.push(IterationRecord {
            iteration: t,
            labeled_size: labeled.len(),
            pool_size: pool.len(),
            pseudo_labeled: selection.total(),
            selected_per_class: selection.counts(),
            val_accuracy: val_acc,
            test_accuracy,
            best_so_far: improved,
            validation_set: val.name.clone(),
        });
        selections.push(selection);
        if stale >= config.patience {
            break;
        }
    }

    let (params, best_val_accuracy, best_iteration, final_test_accuracy) = best;
    Ok(SelfLearnOutcome {
        params,
        history,
        selections,
        best_iteration,
        best_val_accuracy,
        final_test_accuracy,
        labeled,
        pool,
    })
}
