//! Experiment configuration: a JSON file, command-line overrides, and the
//! resolved snapshot written next to every command's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Arch;
use crate::perturb::PerturbMode;
use crate::seed;
use crate::selflearn::SelfLearnConfig;
use crate::synthetic::SyntheticConfig;
use crate::train::TrainConfig;

pub const SNAPSHOT_FILE: &str = "resolved_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Input corpus for `codeswitch`.
    pub corpus: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    /// Checkpoint read by `eval`.
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train: None,
            unlabeled: None,
            validation: None,
            test: None,
            corpus: None,
            vectors: None,
            dictionary: None,
            checkpoint: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// Rows come from `paths.vectors`.
    #[default]
    Pretrained,
    /// Rows are seeded per word; `model.dim` sets the width.
    Random,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabFrom {
    /// Every token of the configured corpora.
    #[default]
    Corpora,
    /// Every word of the vectors file.
    Vectors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub hidden: usize,
    pub embeddings: EmbeddingSource,
    pub dim: usize,
    /// Overrides the default: frozen for pretrained, trainable for random.
    pub freeze: Option<bool>,
    pub vocab: VocabFrom,
    pub min_count: usize,
    pub lowercase: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Linear,
            hidden: 64,
            embeddings: EmbeddingSource::Pretrained,
            dim: 64,
            freeze: None,
            vocab: VocabFrom::Corpora,
            min_count: 1,
            lowercase: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Global seed; every random stream is derived from it.
    pub seed: u64,
    pub threads: usize,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub selflearn: SelfLearnConfig,
    pub synthetic: SyntheticConfig,
    /// Where the configuration came from, for error messages.
    #[serde(skip)]
    pub source: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            threads: 1,
            paths: Paths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            selflearn: SelfLearnConfig::default(),
            synthetic: SyntheticConfig::default(),
            source: "<defaults>".into(),
        }
    }
}

/// Command-line values that replace file values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub epsilon: Option<f64>,
    pub kt: Option<usize>,
    pub epochs: Option<usize>,
    pub mode: Option<PerturbMode>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub arch: Option<Arch>,
    pub output_dir: Option<PathBuf>,
}

fn absolutize(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: ExperimentConfig =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
                path: source.to_owned(),
                field: e.path().to_string(),
                msg: e.inner().to_string(),
            })?;
        cfg.source = source.to_owned();
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn rebase(&mut self, base: &Path) {
        let base = std::fs::canonicalize(base)
            .or_else(|_| std::path::absolute(base))
            .unwrap_or_else(|_| base.to_path_buf());
        let p = &mut self.paths;
        for slot in [
            &mut p.train,
            &mut p.unlabeled,
            &mut p.validation,
            &mut p.test,
            &mut p.corpus,
            &mut p.vectors,
            &mut p.dictionary,
            &mut p.checkpoint,
        ] {
            absolutize(&base, slot);
        }
        if p.output_dir.is_relative() {
            p.output_dir = base.join(&p.output_dir);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(eps) = o.epsilon {
            self.train.perturb.epsilon = eps;
            self.synthetic.train.perturb.epsilon = eps;
        }
        if let Some(kt) = o.kt {
            self.selflearn.k_t = kt;
            self.synthetic.selflearn.k_t = kt;
        }
        if let Some(epochs) = o.epochs {
            self.train.epochs = epochs;
            self.synthetic.train.epochs = epochs;
        }
        if let Some(mode) = o.mode {
            self.train.perturb.mode = mode;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(threads) = o.threads {
            self.threads = threads;
        }
        if let Some(arch) = o.arch {
            self.model.arch = arch;
            self.synthetic.arch = arch;
        }
        if let Some(dir) = &o.output_dir {
            self.paths.output_dir = std::path::absolute(dir).unwrap_or_else(|_| dir.clone());
        }
    }

    /// Fills derived fields (per-purpose seeds, thread counts) and checks
    /// value ranges.
    pub fn resolve(&mut self) -> Result<()> {
        self.train.shuffle_seed = seed::derive(self.seed, seed::purpose::SHUFFLE);
        self.train.perturb.seed = seed::derive(self.seed, seed::purpose::PERTURB);
        self.train.threads = self.threads;
        self.synthetic.train.threads = self.threads;
        let bad = |field: &str, msg: &str| Error::Config {
            path: self.source.clone(),
            field: field.into(),
            msg: msg.into(),
        };
        if self.threads == 0 {
            return Err(bad("threads", "must be >= 1"));
        }
        if self.model.min_count == 0 {
            return Err(bad("model.min_count", "must be >= 1"));
        }
        if self.model.dim == 0 {
            return Err(bad("model.dim", "must be >= 1"));
        }
        if self.model.arch == Arch::Mlp1 && self.model.hidden == 0 {
            return Err(bad("model.hidden", "must be >= 1 for mlp1"));
        }
        self.train.validate()?;
        self.selflearn.validate()?;
        Ok(())
    }

    /// The path in `field`, which must be set and exist.
    pub fn require(&self, field: &str) -> Result<&Path> {
        let p = &self.paths;
        let slot = match field {
            "train" => &p.train,
            "unlabeled" => &p.unlabeled,
            "validation" => &p.validation,
            "test" => &p.test,
            "corpus" => &p.corpus,
            "vectors" => &p.vectors,
            "dictionary" => &p.dictionary,
            "checkpoint" => &p.checkpoint,
            other => panic!("unknown path field {other}"),
        };
        let err = |msg: String| Error::Config {
            path: self.source.clone(),
            field: format!("paths.{field}"),
            msg,
        };
        let path = slot
            .as_deref()
            .ok_or_else(|| err("required but not set".into()))?;
        if !path.is_file() {
            return Err(err(format!("{} does not exist", path.display())));
        }
        Ok(path)
    }

    /// An optional path: `None` when unset, an error when set but missing.
    pub fn optional(&self, field: &str) -> Result<Option<&Path>> {
        let set = match field {
            "unlabeled" => self.paths.unlabeled.is_some(),
            "test" => self.paths.test.is_some(),
            "vectors" => self.paths.vectors.is_some(),
            other => panic!("unknown optional path field {other}"),
        };
        if set {
            self.require(field).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// SHA-256 of the resolved configuration, ignoring the output directory
    /// and thread counts, neither of which affects results.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.paths.output_dir = PathBuf::new();
        c.threads = 1;
        c.train.threads = 1;
        c.synthetic.train.threads = 1;
        Ok(hex::encode(Sha256::digest(c.to_json()?.as_bytes())))
    }

    pub fn write_snapshot(&self) -> Result<PathBuf> {
        let path = self.paths.output_dir.join(SNAPSHOT_FILE);
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
