//! Semi-supervised adversarial training for cross-lingual text classification.
//!
//! A mean-pooled embedding classifier is trained on worst-case perturbed
//! inputs, then adapted to a target language by balanced self-learning on
//! unlabeled text. Code-switched challenge sets probe robustness.

pub mod codeswitch;
pub mod commands;
pub mod config;
pub mod error;
pub mod evalreport;
pub mod model;
pub mod optim;
pub mod perturb;
pub mod seed;
pub mod selflearn;
pub mod synthetic;
pub mod textdata;
pub mod train;

pub use error::{Error, Result};
