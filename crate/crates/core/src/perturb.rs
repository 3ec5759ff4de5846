//! Additive input perturbations: worst-case (fast gradient), random, or none.
//!
//! Norms are global L2 norms over the whole `T × d` sequence tensor.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed;

/// Gradients with a global norm at or below this are treated as zero.
pub const ZERO_GRAD_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    None,
    Random,
    #[default]
    Adversarial,
}

impl std::fmt::Display for PerturbMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PerturbMode::None => "none",
            PerturbMode::Random => "random",
            PerturbMode::Adversarial => "adversarial",
        })
    }
}

impl std::str::FromStr for PerturbMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(PerturbMode::None),
            "random" => Ok(PerturbMode::Random),
            "adversarial" => Ok(PerturbMode::Adversarial),
            other => Err(format!(
                "unknown perturbation mode {other:?} (expected none, random or adversarial)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    pub mode: PerturbMode,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            mode: PerturbMode::Adversarial,
            epsilon: 1.0,
            seed: 0,
        }
    }
}

impl PerturbConfig {
    pub fn none() -> Self {
        PerturbConfig {
            mode: PerturbMode::None,
            epsilon: 0.0,
            seed: 0,
        }
    }

    /// Mode actually applied: a zero budget always means no perturbation.
    pub fn effective_mode(&self) -> PerturbMode {
        if self.epsilon == 0.0 {
            PerturbMode::None
        } else {
            self.mode
        }
    }
}

fn masked_norm(x: &Array2<f64>, mask: &[bool]) -> f64 {
    x.rows()
        .into_iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .flat_map(|(r, _)| r.to_vec())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn zero_masked_rows(x: &mut Array2<f64>, mask: &[bool]) {
    for (mut row, &m) in x.rows_mut().into_iter().zip(mask) {
        if !m {
            row.fill(0.0);
        }
    }
}

/// `ε · g / ‖g‖₂`, or zero when `‖g‖₂ ≤ 1e-12`.
///
/// The result is a plain value: callers feed it forward as a constant, so no
/// gradient flows through its construction.
pub fn adversarial_direction(g: &Array2<f64>, mask: &[bool], epsilon: f64) -> Array2<f64> {
    let norm = masked_norm(g, mask);
    if norm <= ZERO_GRAD_GUARD || epsilon == 0.0 {
        return Array2::zeros(g.raw_dim());
    }
    let mut r = g * (epsilon / norm);
    zero_masked_rows(&mut r, mask);
    r
}

/// Isotropic Gaussian direction over unmasked entries, rescaled to norm `ε`.
pub fn random_direction(
    shape: (usize, usize),
    mask: &[bool],
    epsilon: f64,
    seed: u64,
) -> Array2<f64> {
    let mut rng = seed::rng(seed);
    let mut r = Array2::zeros(shape);
    for (mut row, &m) in r.rows_mut().into_iter().zip(mask) {
        if m {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
        }
    }
    let norm = masked_norm(&r, mask);
    if norm == 0.0 || epsilon == 0.0 {
        return Array2::zeros(shape);
    }
    r *= epsilon / norm;
    r
}

/// Builds the perturbation for one example. `g` is only consulted in
/// adversarial mode; `stream` selects the random stream in random mode.
pub fn perturbation(
    config: &PerturbConfig,
    g: &Array2<f64>,
    mask: &[bool],
    stream: u64,
) -> Option<Array2<f64>> {
    match config.effective_mode() {
        PerturbMode::None => None,
        PerturbMode::Adversarial => Some(adversarial_direction(g, mask, config.epsilon)),
        PerturbMode::Random => Some(random_direction(
            g.dim(),
            mask,
            config.epsilon,
            seed::derive(config.seed ^ stream, seed::purpose::PERTURB),
        )),
    }
}

pub fn norm(x: &Array2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
