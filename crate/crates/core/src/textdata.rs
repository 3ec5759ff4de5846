//! Corpus ingestion: tokenization, vocabularies, datasets, and word-vector files.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Whitespace tokenizer. Whitespace-only input yields a single `<unk>`.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let tokens: Vec<String> = text
        .split_whitespace()
        .map(|t| {
            if lowercase {
                t.to_lowercase()
            } else {
                t.to_owned()
            }
        })
        .collect();
    if tokens.is_empty() {
        vec![UNK_TOKEN.to_owned()]
    } else {
        tokens
    }
}

/// Token inventory with `<pad>` at id 0 and `<unk>` at id 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    /// Rebuilds a vocabulary from its token list; the first two entries must
    /// be the reserved tokens and the rest unique.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Dimension(
                "vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let mut v = Vocabulary::new();
        for t in &tokens[2..] {
            if v.index.contains_key(t) {
                return Err(Error::Dimension(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
            v.insert(t);
        }
        Ok(v)
    }

    /// Returns the id of `token`, adding it if absent.
    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, falling back to `<unk>`.
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Builds a vocabulary from token sequences: reserved ids first, then every
/// token seen at least `min_count` times, in order of first occurrence.
pub fn build_vocab<S: AsRef<str>>(corpora: &[Vec<S>], min_count: usize) -> Vocabulary {
    let min_count = min_count.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for seq in corpora {
        for tok in seq {
            let tok = tok.as_ref();
            let c = counts.entry(tok).or_insert(0);
            if *c == 0 {
                order.push(tok);
            }
            *c += 1;
        }
    }
    let mut vocab = Vocabulary::new();
    for tok in order {
        if counts[tok] >= min_count {
            vocab.insert(tok);
        }
    }
    vocab
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Gold,
    Pseudo,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub token_ids: Vec<u32>,
    pub label: Option<usize>,
    pub weight: f64,
    pub origin: Origin,
}

impl Example {
    pub fn labeled(token_ids: Vec<u32>, label: usize) -> Self {
        Example {
            token_ids,
            label: Some(label),
            weight: 1.0,
            origin: Origin::Gold,
        }
    }

    pub fn unlabeled(token_ids: Vec<u32>) -> Self {
        Example {
            token_ids,
            label: None,
            weight: 1.0,
            origin: Origin::Gold,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, num_classes: usize) -> Self {
        Dataset {
            name: name.into(),
            num_classes,
            examples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Checks the label range and that every example is labeled when
    /// `require_labels` is set.
    pub fn validate(&self, vocab_size: usize, require_labels: bool) -> Result<()> {
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.token_ids.is_empty() {
                return Err(Error::contract(format!(
                    "{}: example {i} is empty",
                    self.name
                )));
            }
            if let Some(&bad) = ex.token_ids.iter().find(|&&t| t as usize >= vocab_size) {
                return Err(Error::contract(format!(
                    "{}: example {i} has token id {bad} outside vocabulary of size {vocab_size}",
                    self.name
                )));
            }
            match ex.label {
                Some(y) if y >= self.num_classes => {
                    return Err(Error::contract(format!(
                        "{}: example {i} has label {y} outside [0, {})",
                        self.name, self.num_classes
                    )))
                }
                None if require_labels => {
                    return Err(Error::contract(format!(
                        "{}: example {i} is unlabeled",
                        self.name
                    )))
                }
                None if ex.origin == Origin::Pseudo => {
                    return Err(Error::contract(format!(
                        "{}: pseudo-labeled example {i} has no label",
                        self.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Fixed-length token ids plus the mask of real (non-padding) positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Head-truncates or right-pads `ids` to exactly `max_len` positions.
pub fn truncate_pad(ids: &[u32], max_len: usize) -> Encoded {
    let max_len = max_len.max(1);
    let keep = ids.len().min(max_len);
    let mut out = Vec::with_capacity(max_len);
    out.extend_from_slice(&ids[..keep]);
    out.resize(max_len, PAD);
    let mut mask = vec![true; keep];
    mask.resize(max_len, false);
    Encoded { ids: out, mask }
}

/// Like [`truncate_pad`] but without padding: the mask is all ones.
pub fn truncate(ids: &[u32], max_len: usize) -> Encoded {
    let keep = ids.len().min(max_len.max(1));
    Encoded {
        ids: ids[..keep].to_vec(),
        mask: vec![true; keep],
    }
}

/// `|V| × d` embedding matrix. Row [`PAD`] is always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Array2<f64>,
    pub frozen: bool,
}

/// Deterministic per-word initial row: uniform in `[-0.5/d, 0.5/d]`, seeded by
/// the word itself so the value does not depend on vocabulary order.
pub fn init_row(word: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::keyed_rng(seed::derive(seed, seed::purpose::EMBED_INIT), word);
    let half = 0.5 / dim as f64;
    (0..dim).map(|_| rng.random_range(-half..=half)).collect()
}

impl EmbeddingTable {
    /// Randomly initialized, trainable table.
    pub fn random(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        let mut matrix = Array2::zeros((vocab.len(), dim));
        for (id, word) in vocab.tokens().iter().enumerate().skip(1) {
            let row = init_row(word, dim, seed);
            matrix.row_mut(id).assign(&ndarray::ArrayView1::from(&row));
        }
        EmbeddingTable {
            matrix,
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().all(|v| v.is_finite())
    }
}

/// Which vocabulary a vector file is loaded against.
pub enum VocabSource<'a> {
    Given(&'a Vocabulary),
    Induce,
}

/// Raw parse of a word-vector text file: words in file order plus the matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    pub words: Vec<String>,
    pub matrix: Array2<f64>,
}

pub fn read_word_vectors<R: BufRead>(reader: R, name: &str) -> Result<WordVectors> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::format(name, 1, e.to_string()))?,
        None => return Err(Error::format(name, 1, "missing header")),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match fields.as_slice() {
        [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
            (Ok(c), Ok(d)) if d > 0 => (c, d),
            _ => {
                return Err(Error::format(
                    name,
                    1,
                    format!("malformed header {header:?}"),
                ))
            }
        },
        _ => {
            return Err(Error::format(
                name,
                1,
                format!("malformed header {header:?}"),
            ))
        }
    };

    let mut words = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::format(name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if words.len() == count {
            return Err(Error::format(
                name,
                lineno,
                format!("more than the {count} vectors announced in the header"),
            ));
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap_or_default().to_owned();
        let before = data.len();
        for p in parts {
            let v: f64 = p
                .parse()
                .map_err(|_| Error::format(name, lineno, format!("bad number {p:?}")))?;
            if !v.is_finite() {
                return Err(Error::format(
                    name,
                    lineno,
                    format!("non-finite value {p:?}"),
                ));
            }
            data.push(v);
        }
        let got = data.len() - before;
        if got != dim {
            return Err(Error::format(
                name,
                lineno,
                format!("expected {dim} values, found {got}"),
            ));
        }
        words.push(word);
    }
    if words.len() != count {
        return Err(Error::format(
            name,
            words.len() + 2,
            format!("header announces {count} vectors, file has {}", words.len()),
        ));
    }
    let matrix = Array2::from_shape_vec((count, dim), data).expect("shape checked above");
    Ok(WordVectors { words, matrix })
}

pub fn write_word_vectors<W: Write>(
    mut w: W,
    words: &[String],
    matrix: &Array2<f64>,
) -> std::io::Result<()> {
    writeln!(w, "{} {}", matrix.nrows(), matrix.ncols())?;
    for (word, row) in words.iter().zip(matrix.rows()) {
        write!(w, "{word}")?;
        for v in row {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Loads a word-vector file into an embedding table (frozen by default).
///
/// With a given vocabulary, covered rows are copied and uncovered words get
/// [`init_row`] values. With [`VocabSource::Induce`] the vocabulary is the
/// reserved tokens followed by the file's words.
pub fn load_vectors(
    path: &Path,
    source: VocabSource<'_>,
    seed: u64,
) -> Result<(Vocabulary, EmbeddingTable)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let wv = read_word_vectors(BufReader::new(file), &path.display().to_string())?;
    Ok(table_from_vectors(&wv, source, seed))
}

pub fn table_from_vectors(
    wv: &WordVectors,
    source: VocabSource<'_>,
    seed: u64,
) -> (Vocabulary, EmbeddingTable) {
    let dim = wv.matrix.ncols();
    let vocab = match source {
        VocabSource::Given(v) => v.clone(),
        VocabSource::Induce => {
            let mut v = Vocabulary::new();
            for w in &wv.words {
                v.insert(w);
            }
            v
        }
    };
    let file_rows: HashMap<&str, usize> = wv
        .words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();
    let mut matrix = Array2::zeros((vocab.len(), dim));
    for (id, word) in vocab.tokens().iter().enumerate().skip(1) {
        match file_rows.get(word.as_str()) {
            Some(&r) => matrix.row_mut(id).assign(&wv.matrix.row(r)),
            None => {
                let row = init_row(word, dim, seed);
                matrix.row_mut(id).assign(&ndarray::ArrayView1::from(&row));
            }
        }
    }
    (
        vocab,
        EmbeddingTable {
            matrix,
            frozen: true,
        },
    )
}

/// Writes every non-reserved vocabulary row in the word-vector text format.
pub fn save_vectors(path: &Path, vocab: &Vocabulary, table: &EmbeddingTable) -> Result<()> {
    let words: Vec<String> = vocab.tokens()[2..].to_vec();
    let rows = table.matrix.slice(ndarray::s![2.., ..]).to_owned();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_word_vectors(&mut w, &words, &rows).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// One line of a JSON Lines corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), &path.display().to_string())
}

pub fn parse_corpus<R: BufRead>(reader: R, name: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::format(name, i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| Error::format(name, i + 1, e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Class names in sorted order; a name's position is its class id.
pub fn class_names(docs: &[Document]) -> Vec<String> {
    docs.iter()
        .filter_map(|d| d.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Converts documents into a dataset. Labels outside `classes` are a
/// dimension error; missing labels are left as `None`.
pub fn to_dataset(
    name: &str,
    docs: &[Document],
    vocab: &Vocabulary,
    classes: &[String],
    lowercase: bool,
) -> Result<Dataset> {
    let lookup: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut ds = Dataset::new(name, classes.len());
    for (i, d) in docs.iter().enumerate() {
        let ids = vocab.encode(&tokenize(&d.text, lowercase));
        let label = match &d.label {
            Some(l) => Some(*lookup.get(l.as_str()).ok_or_else(|| {
                Error::Dimension(format!("{name}: line {}: unknown class {l:?}", i + 1))
            })?),
            None => None,
        };
        ds.examples.push(Example {
            token_ids: ids,
            label,
            weight: 1.0,
            origin: Origin::Gold,
        });
    }
    Ok(ds)
}

/// Errors naming the first unlabeled line, if any.
pub fn require_labeled(name: &str, docs: &[Document]) -> Result<()> {
    match docs.iter().position(|d| d.label.is_none()) {
        Some(i) => Err(Error::contract(format!(
            "{name}: line {} has no label",
            i + 1
        ))),
        None => Ok(()),
    }
}
