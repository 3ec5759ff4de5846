//! Mean-pooled embedding classifier with analytic gradients.
//!
//! `ids → embeddings (+ perturbation) → masked mean → head → softmax`.
//! The head is either a single affine map or a one-hidden-layer ReLU MLP.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;
use crate::textdata::{EmbeddingTable, Encoded, Vocabulary, PAD};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    #[default]
    Linear,
    Mlp1,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::Linear => f.write_str("linear"),
            Arch::Mlp1 => f.write_str("mlp1"),
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(Arch::Linear),
            "mlp1" => Ok(Arch::Mlp1),
            other => Err(format!("unknown arch {other:?} (expected linear or mlp1)")),
        }
    }
}

/// Classification head. The same shape doubles as its own gradient.
#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Linear {
        w: Array2<f64>,
        b: Array1<f64>,
    },
    Mlp1 {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    },
}

fn xavier(rng: &mut seed::SeededRng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..=a))
}

impl Head {
    pub fn init(arch: Arch, dim: usize, num_classes: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, seed::purpose::HEAD_INIT));
        match arch {
            Arch::Linear => Head::Linear {
                w: xavier(&mut rng, num_classes, dim),
                b: Array1::zeros(num_classes),
            },
            Arch::Mlp1 => Head::Mlp1 {
                w1: xavier(&mut rng, hidden, dim),
                b1: Array1::zeros(hidden),
                w2: xavier(&mut rng, num_classes, hidden),
                b2: Array1::zeros(num_classes),
            },
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            Head::Linear { .. } => Arch::Linear,
            Head::Mlp1 { .. } => Arch::Mlp1,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Head::Linear { b, .. } => b.len(),
            Head::Mlp1 { b2, .. } => b2.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Head::Linear { w, .. } => w.ncols(),
            Head::Mlp1 { w1, .. } => w1.ncols(),
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            Head::Linear { .. } => 0,
            Head::Mlp1 { b1, .. } => b1.len(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Head::Linear { w, b } => Head::Linear {
                w: Array2::zeros(w.raw_dim()),
                b: Array1::zeros(b.raw_dim()),
            },
            Head::Mlp1 { w1, b1, w2, b2 } => Head::Mlp1 {
                w1: Array2::zeros(w1.raw_dim()),
                b1: Array1::zeros(b1.raw_dim()),
                w2: Array2::zeros(w2.raw_dim()),
                b2: Array1::zeros(b2.raw_dim()),
            },
        }
    }

    /// Flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Head::Linear { w, b } => vec![w.as_slice().unwrap(), b.as_slice().unwrap()],
            Head::Mlp1 { w1, b1, w2, b2 } => vec![
                w1.as_slice().unwrap(),
                b1.as_slice().unwrap(),
                w2.as_slice().unwrap(),
                b2.as_slice().unwrap(),
            ],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Head::Linear { w, b } => vec![w.as_slice_mut().unwrap(), b.as_slice_mut().unwrap()],
            Head::Mlp1 { w1, b1, w2, b2 } => vec![
                w1.as_slice_mut().unwrap(),
                b1.as_slice_mut().unwrap(),
                w2.as_slice_mut().unwrap(),
                b2.as_slice_mut().unwrap(),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embeddings: EmbeddingTable,
    pub head: Head,
}

impl ModelParams {
    pub fn new(
        embeddings: EmbeddingTable,
        arch: Arch,
        num_classes: usize,
        hidden: usize,
        seed: u64,
    ) -> Self {
        let head = Head::init(arch, embeddings.dim(), num_classes, hidden, seed);
        ModelParams { embeddings, head }
    }

    pub fn arch(&self) -> Arch {
        self.head.arch()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.vocab_size()
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.is_finite()
            && self
                .head
                .tensors()
                .iter()
                .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over the bit patterns of every parameter.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update([self.embeddings.frozen as u8]);
        for v in self.embeddings.matrix.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        for t in self.head.tensors() {
            for v in t {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    /// `T × d`, after the perturbation was added.
    pub input_embeds: Array2<f64>,
    pub pooled: Array1<f64>,
    /// Pre-activation of the hidden layer (mlp1 only).
    pub hidden_pre: Option<Array1<f64>>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
    pub label: Option<usize>,
    pub loss: Option<f64>,
}

/// Parameter gradient: dense head, sparse embedding rows (empty when frozen).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub head: Head,
    pub embed_rows: BTreeMap<u32, Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            head: params.head.zeros_like(),
            embed_rows: BTreeMap::new(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (dst, src) in self
            .head
            .tensors_mut()
            .into_iter()
            .zip(other.head.tensors())
        {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
        for (&id, row) in &other.embed_rows {
            let entry = self
                .embed_rows
                .entry(id)
                .or_insert_with(|| Array1::zeros(row.len()));
            entry.scaled_add(scale, row);
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradientBundle {
    pub params: Gradients,
    /// `∂loss/∂input_embeds`, `T × d`; zero at masked rows.
    pub d_input: Array2<f64>,
}

/// Looks up embedding rows for `enc.ids`, zeroing masked positions.
pub fn lookup(params: &ModelParams, enc: &Encoded) -> Array2<f64> {
    let d = params.dim();
    let mut x = Array2::zeros((enc.len(), d));
    for (t, (&id, &m)) in enc.ids.iter().zip(&enc.mask).enumerate() {
        if m {
            x.row_mut(t)
                .assign(&params.embeddings.matrix.row(id as usize));
        }
    }
    x
}

fn softmax_and_lse(logits: &Array1<f64>) -> (Array1<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|z| (z - max).exp());
    let sum = exps.sum();
    (exps / sum, max + sum.ln())
}

pub fn forward(
    params: &ModelParams,
    enc: &Encoded,
    label: Option<usize>,
    perturbation: Option<&Array2<f64>>,
) -> Result<ForwardTrace> {
    let mut x = lookup(params, enc);
    if let Some(r) = perturbation {
        if r.dim() != x.dim() {
            return Err(Error::contract(format!(
                "perturbation shape {:?} does not match input {:?}",
                r.dim(),
                x.dim()
            )));
        }
        x += r;
    }
    forward_embeds(params, &enc.ids, &enc.mask, x, label)
}

/// Forward pass from an explicit input tensor (used by gradient checks).
pub fn forward_embeds(
    params: &ModelParams,
    ids: &[u32],
    mask: &[bool],
    input_embeds: Array2<f64>,
    label: Option<usize>,
) -> Result<ForwardTrace> {
    let c = params.num_classes();
    if let Some(y) = label {
        if y >= c {
            return Err(Error::contract(format!("label {y} outside [0, {c})")));
        }
    }
    let n_real = mask.iter().filter(|&&m| m).count();
    if n_real == 0 {
        return Err(Error::contract("sequence has no real tokens"));
    }
    let mut pooled = Array1::zeros(params.dim());
    for (row, &m) in input_embeds.rows().into_iter().zip(mask) {
        if m {
            pooled += &row;
        }
    }
    pooled /= n_real as f64;

    let (logits, hidden_pre) = match &params.head {
        Head::Linear { w, b } => (w.dot(&pooled) + b, None),
        Head::Mlp1 { w1, b1, w2, b2 } => {
            let z1 = w1.dot(&pooled) + b1;
            let a = z1.mapv(|v| v.max(0.0));
            (w2.dot(&a) + b2, Some(z1))
        }
    };
    let (probs, lse) = softmax_and_lse(&logits);
    let loss = label.map(|y| lse - logits[y]);
    Ok(ForwardTrace {
        ids: ids.to_vec(),
        mask: mask.to_vec(),
        input_embeds,
        pooled,
        hidden_pre,
        logits,
        probs,
        label,
        loss,
    })
}

/// Exact gradients of the cross-entropy loss recorded in `trace`.
pub fn backward(params: &ModelParams, trace: &ForwardTrace) -> Result<GradientBundle> {
    let y = trace
        .label
        .ok_or_else(|| Error::contract("backward needs a labeled forward trace"))?;
    let mut d_logits = trace.probs.clone();
    d_logits[y] -= 1.0;

    let (head, d_pooled) = match &params.head {
        Head::Linear { w, .. } => {
            let dw = outer(&d_logits, &trace.pooled);
            let dh = w.t().dot(&d_logits);
            (Head::Linear { w: dw, b: d_logits }, dh)
        }
        Head::Mlp1 { w1, w2, .. } => {
            let z1 = trace
                .hidden_pre
                .as_ref()
                .expect("mlp1 trace has hidden_pre");
            let a = z1.mapv(|v| v.max(0.0));
            let dw2 = outer(&d_logits, &a);
            let da = w2.t().dot(&d_logits);
            let dz1 = ndarray::Zip::from(&da)
                .and(z1)
                .map_collect(|&g, &z| if z > 0.0 { g } else { 0.0 });
            let dw1 = outer(&dz1, &trace.pooled);
            let dh = w1.t().dot(&dz1);
            (
                Head::Mlp1 {
                    w1: dw1,
                    b1: dz1,
                    w2: dw2,
                    b2: d_logits,
                },
                dh,
            )
        }
    };

    let n_real = trace.mask.iter().filter(|&&m| m).count() as f64;
    let row_grad = d_pooled / n_real;
    let mut d_input = Array2::zeros(trace.input_embeds.raw_dim());
    let mut embed_rows: BTreeMap<u32, Array1<f64>> = BTreeMap::new();
    for (t, (&id, &m)) in trace.ids.iter().zip(&trace.mask).enumerate() {
        if !m {
            continue;
        }
        d_input.row_mut(t).assign(&row_grad);
        if !params.embeddings.frozen && id != PAD {
            embed_rows
                .entry(id)
                .and_modify(|r| *r += &row_grad)
                .or_insert_with(|| row_grad.clone());
        }
    }
    Ok(GradientBundle {
        params: Gradients { head, embed_rows },
        d_input,
    })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
}

/// Argmax with lowest-id tie-break; confidence is the winning probability.
pub fn argmax(probs: ArrayView1<'_, f64>) -> Prediction {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Prediction {
        class: best,
        confidence: probs[best],
    }
}

pub fn predict(params: &ModelParams, enc: &Encoded) -> Result<Prediction> {
    let trace = forward(params, enc, None, None)?;
    Ok(argmax(trace.probs.view()))
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model together with what is needed to encode raw text for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub class_names: Vec<String>,
    pub lowercase: bool,
    pub max_len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    arch: Arch,
    dim: usize,
    vocab_size: usize,
    num_classes: usize,
    hidden: usize,
    frozen: bool,
    lowercase: bool,
    max_len: usize,
    vocab: Vec<String>,
    class_names: Vec<String>,
    embeddings: Vec<Vec<f64>>,
    head: BTreeMap<String, serde_json::Value>,
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>], shape: (usize, usize), what: &str) -> Result<Array2<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Dimension(format!(
            "{what}: expected {}x{}",
            shape.0, shape.1
        )));
    }
    Ok(Array2::from_shape_vec(shape, rows.concat()).expect("shape checked"))
}

fn head_matrix(
    head: &BTreeMap<String, serde_json::Value>,
    key: &str,
    shape: (usize, usize),
) -> Result<Array2<f64>> {
    let v = head
        .get(key)
        .ok_or_else(|| Error::Dimension(format!("head.{key} missing")))?;
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone())?;
    from_rows(&rows, shape, &format!("head.{key}"))
}

fn head_vector(
    head: &BTreeMap<String, serde_json::Value>,
    key: &str,
    len: usize,
) -> Result<Array1<f64>> {
    let v = head
        .get(key)
        .ok_or_else(|| Error::Dimension(format!("head.{key} missing")))?;
    let vals: Vec<f64> = serde_json::from_value(v.clone())?;
    if vals.len() != len {
        return Err(Error::Dimension(format!(
            "head.{key}: expected length {len}"
        )));
    }
    Ok(Array1::from(vals))
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let p = &self.params;
        let mut head = BTreeMap::new();
        match &p.head {
            Head::Linear { w, b } => {
                head.insert("w".into(), serde_json::to_value(to_rows(w))?);
                head.insert("b".into(), serde_json::to_value(b.to_vec())?);
            }
            Head::Mlp1 { w1, b1, w2, b2 } => {
                head.insert("w1".into(), serde_json::to_value(to_rows(w1))?);
                head.insert("b1".into(), serde_json::to_value(b1.to_vec())?);
                head.insert("w2".into(), serde_json::to_value(to_rows(w2))?);
                head.insert("b2".into(), serde_json::to_value(b2.to_vec())?);
            }
        }
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            arch: p.arch(),
            dim: p.dim(),
            vocab_size: p.vocab_size(),
            num_classes: p.num_classes(),
            hidden: p.head.hidden(),
            frozen: p.embeddings.frozen,
            lowercase: self.lowercase,
            max_len: self.max_len,
            vocab: self.vocab.tokens().to_vec(),
            class_names: self.class_names.clone(),
            embeddings: to_rows(&p.embeddings.matrix),
            head,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: CheckpointFile = serde_json::from_str(s)?;
        if f.version != CHECKPOINT_VERSION {
            return Err(Error::Dimension(format!(
                "checkpoint version {} (supported: {CHECKPOINT_VERSION})",
                f.version
            )));
        }
        if f.vocab.len() != f.vocab_size {
            return Err(Error::Dimension(format!(
                "vocab has {} tokens, vocab_size is {}",
                f.vocab.len(),
                f.vocab_size
            )));
        }
        if f.class_names.len() != f.num_classes {
            return Err(Error::Dimension(format!(
                "{} class names for num_classes {}",
                f.class_names.len(),
                f.num_classes
            )));
        }
        let vocab = Vocabulary::from_tokens(f.vocab)?;
        let matrix = from_rows(&f.embeddings, (f.vocab_size, f.dim), "embeddings")?;
        let (c, d, h) = (f.num_classes, f.dim, f.hidden);
        let head = match f.arch {
            Arch::Linear => Head::Linear {
                w: head_matrix(&f.head, "w", (c, d))?,
                b: head_vector(&f.head, "b", c)?,
            },
            Arch::Mlp1 => Head::Mlp1 {
                w1: head_matrix(&f.head, "w1", (h, d))?,
                b1: head_vector(&f.head, "b1", h)?,
                w2: head_matrix(&f.head, "w2", (c, h))?,
                b2: head_vector(&f.head, "b2", c)?,
            },
        };
        let params = ModelParams {
            embeddings: EmbeddingTable {
                matrix,
                frozen: f.frozen,
            },
            head,
        };
        if !params.is_finite() {
            return Err(Error::Dimension(
                "checkpoint contains non-finite values".into(),
            ));
        }
        Ok(Checkpoint {
            params,
            vocab,
            class_names: f.class_names,
            lowercase: f.lowercase,
            max_len: f.max_len,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let json = ckpt.to_json()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(json.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut s = String::new();
    std::io::Read::read_to_string(&mut BufReader::new(file), &mut s)
        .map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&s).map_err(|e| match e {
        Error::Json(j) => Error::format(path.display().to_string(), j.line(), j.to_string()),
        Error::Dimension(m) => Error::Dimension(format!("{}: {m}", path.display())),
        other => other,
    })
}
