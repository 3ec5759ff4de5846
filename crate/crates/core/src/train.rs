//! Supervised training on the adversarial objective.
//!
//! For every example the clean input gradient `g` is computed first, the
//! perturbation is built from it and held constant, and the parameter
//! gradient is taken at the perturbed input.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalreport;
use crate::model::{backward, forward, Gradients, ModelParams};
use crate::optim::Adam;
use crate::perturb::{perturbation, PerturbConfig, PerturbMode};
use crate::seed;
use crate::textdata::{truncate, Dataset, Example};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    AdvOnly,
    CleanPlusAdv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub perturb: PerturbConfig,
    pub loss_mode: LossMode,
    pub shuffle_seed: u64,
    pub max_len: usize,
    /// Worker threads for per-example gradients. Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    /// Document-classification setting.
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 64,
            learning_rate: 2e-5,
            perturb: PerturbConfig::default(),
            loss_mode: LossMode::AdvOnly,
            shuffle_seed: 0,
            max_len: 96,
            threads: 1,
        }
    }
}

impl TrainConfig {
    /// Intent-classification setting.
    pub fn intent() -> Self {
        TrainConfig {
            epochs: 6,
            batch_size: 128,
            learning_rate: 2e-6,
            max_len: 32,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::contract(format!("train config: {m}")));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.perturb.epsilon >= 0.0 && self.perturb.epsilon.is_finite()) {
            return bad("epsilon must be >= 0");
        }
        if self.max_len == 0 {
            return bad("max_len must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLosses {
    pub clean: f64,
    pub adversarial: f64,
    /// What was minimized: `adversarial`, or the mean of both losses.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub clean_loss: f64,
    pub adv_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub batches: Vec<BatchLosses>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub best_checksum: String,
}

struct ExampleGrad {
    clean: f64,
    adversarial: f64,
    weight: f64,
    grads: Gradients,
}

fn example_grad(
    params: &ModelParams,
    ex: &Example,
    index: usize,
    stream: u64,
    config: &TrainConfig,
) -> Result<ExampleGrad> {
    let label = ex
        .label
        .ok_or_else(|| Error::contract(format!("training example {index} is unlabeled")))?;
    let enc = truncate(&ex.token_ids, config.max_len);
    let clean = forward(params, &enc, Some(label), None)?;
    let clean_loss = clean.loss.expect("labeled");
    if !clean_loss.is_finite() {
        return Err(Error::NonFinite {
            index,
            loss: clean_loss,
        });
    }
    let clean_grad = backward(params, &clean)?;

    let r = perturbation(&config.perturb, &clean_grad.d_input, &enc.mask, stream);
    let (adv_loss, mut grads) = match r {
        None => (clean_loss, clean_grad.params.clone()),
        Some(r) => {
            let adv = forward(params, &enc, Some(label), Some(&r))?;
            let adv_loss = adv.loss.expect("labeled");
            if !adv_loss.is_finite() {
                return Err(Error::NonFinite {
                    index,
                    loss: adv_loss,
                });
            }
            (adv_loss, backward(params, &adv)?.params)
        }
    };
    if config.loss_mode == LossMode::CleanPlusAdv {
        let mut mixed = Gradients::zeros_like(params);
        mixed.add_scaled(&clean_grad.params, 0.5);
        mixed.add_scaled(&grads, 0.5);
        grads = mixed;
    }
    Ok(ExampleGrad {
        clean: clean_loss,
        adversarial: adv_loss,
        weight: ex.weight,
        grads,
    })
}

/// One optimizer update on `batch`, given as `(dataset index, example)`.
pub fn train_step(
    params: &mut ModelParams,
    optimizer: &mut Adam,
    batch: &[(usize, &Example)],
    config: &TrainConfig,
    epoch: usize,
) -> Result<BatchLosses> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let stream = |i: usize| ((epoch as u64) << 32) ^ i as u64;
    let per_example: Vec<Result<ExampleGrad>> = if config.threads > 1 {
        let p: &ModelParams = params;
        batch
            .par_iter()
            .map(|&(i, ex)| example_grad(p, ex, i, stream(i), config))
            .collect()
    } else {
        batch
            .iter()
            .map(|&(i, ex)| example_grad(params, ex, i, stream(i), config))
            .collect()
    };

    // Reduction runs in batch order regardless of the thread count.
    let mut total = Gradients::zeros_like(params);
    let (mut clean, mut adv, mut wsum) = (0.0, 0.0, 0.0);
    let per_example = per_example.into_iter().collect::<Result<Vec<_>>>()?;
    for eg in &per_example {
        wsum += eg.weight;
    }
    if wsum <= 0.0 {
        return Err(Error::contract("batch has zero total weight"));
    }
    for eg in &per_example {
        let w = eg.weight / wsum;
        total.add_scaled(&eg.grads, w);
        clean += w * eg.clean;
        adv += w * eg.adversarial;
    }
    optimizer.step(params, &total);
    let objective = match config.loss_mode {
        LossMode::AdvOnly => adv,
        LossMode::CleanPlusAdv => 0.5 * (clean + adv),
    };
    Ok(BatchLosses {
        clean,
        adversarial: adv,
        objective,
    })
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    } else {
        f()
    }
}

/// Runs `config.epochs` epochs and returns the parameters of the epoch with
/// the highest validation accuracy (earliest on ties).
pub fn train(
    params: ModelParams,
    labeled: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::contract(format!(
            "training set {:?} is empty",
            labeled.name
        )));
    }
    if val.is_empty() {
        return Err(Error::contract(format!(
            "validation set {:?} is empty",
            val.name
        )));
    }
    labeled.validate(params.vocab_size(), true)?;
    val.validate(params.vocab_size(), true)?;
    if labeled.num_classes != params.num_classes() {
        return Err(Error::contract(format!(
            "dataset has {} classes, model has {}",
            labeled.num_classes,
            params.num_classes()
        )));
    }
    with_pool(config.threads, || train_inner(params, labeled, val, config))
}

fn train_inner(
    mut params: ModelParams,
    labeled: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    let mut optimizer = Adam::new(config.learning_rate);
    let mut rng = seed::rng(seed::derive(config.shuffle_seed, seed::purpose::SHUFFLE));
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::with_capacity(config.epochs),
        batches: Vec::new(),
        best_epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
        best_checksum: String::new(),
    };
    let mut best = params.clone();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut clean_sum, mut adv_sum, mut n) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(usize, &Example)> =
                chunk.iter().map(|&i| (i, &labeled.examples[i])).collect();
            let losses = train_step(&mut params, &mut optimizer, &batch, config, epoch)?;
            let k = batch.len() as f64;
            clean_sum += losses.clean * k;
            adv_sum += losses.adversarial * k;
            n += k;
            report.batches.push(losses);
        }
        let val_accuracy = evalreport::accuracy(&params, val, config.max_len)?;
        log::debug!(
            "epoch {epoch}: clean {:.5} adv {:.5} val {:.4}",
            clean_sum / n,
            adv_sum / n,
            val_accuracy
        );
        report.epochs.push(EpochRecord {
            epoch,
            clean_loss: clean_sum / n,
            adv_loss: adv_sum / n,
            val_accuracy,
        });
        if val_accuracy > report.best_val_accuracy {
            report.best_val_accuracy = val_accuracy;
            report.best_epoch = epoch;
            best = params.clone();
        }
    }
    report.best_checksum = best.checksum();
    Ok((best, report))
}

/// Whether a run actually perturbs inputs.
pub fn is_perturbed(config: &TrainConfig) -> bool {
    config.perturb.effective_mode() != PerturbMode::None
}
