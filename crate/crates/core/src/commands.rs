//! The CLI subcommands. Each reads a resolved [`ExperimentConfig`], writes
//! its outputs plus a config snapshot into `paths.output_dir`, and returns a
//! short summary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::codeswitch::{code_switch, load_dictionary};
use crate::config::{EmbeddingSource, ExperimentConfig, VocabFrom};
use crate::error::{Error, Result};
use crate::evalreport::{self, compare_report, EvalResult, Report, ReportMeta};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelParams};
use crate::selflearn::self_learn;
use crate::synthetic;
use crate::textdata::{
    build_vocab, class_names, load_vectors, read_corpus, require_labeled, to_dataset, tokenize,
    write_corpus, write_word_vectors, Dataset, Document, EmbeddingTable, VocabSource, Vocabulary,
};
use crate::train::train;

pub const CHECKPOINT_FILE: &str = "model.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn prepare_output(cfg: &ExperimentConfig) -> Result<&Path> {
    let dir = cfg.paths.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn meta(cfg: &ExperimentConfig, title: String) -> Result<ReportMeta> {
    let seeds = BTreeMap::from([
        ("global".to_string(), cfg.seed),
        ("shuffle".to_string(), cfg.train.shuffle_seed),
        ("perturb".to_string(), cfg.train.perturb.seed),
    ]);
    Ok(ReportMeta {
        title,
        config_hash: cfg.hash()?,
        seeds,
    })
}

/// Corpora and an initialized model for `train` and `selflearn`.
pub struct Prepared {
    pub vocab: Vocabulary,
    pub class_names: Vec<String>,
    pub params: ModelParams,
    pub train: Dataset,
    pub validation: Dataset,
    pub unlabeled: Option<Dataset>,
    pub test: Option<Dataset>,
}

fn read_labeled(path: &Path) -> Result<Vec<Document>> {
    let docs = read_corpus(path)?;
    require_labeled(&path.display().to_string(), &docs)?;
    Ok(docs)
}

/// Reads every configured corpus and builds the vocabulary and model. All
/// file and config problems surface here, before any training.
pub fn prepare(cfg: &ExperimentConfig, with_unlabeled: bool) -> Result<Prepared> {
    let m = &cfg.model;
    let vectors = match m.embeddings {
        EmbeddingSource::Pretrained => Some(cfg.require("vectors")?),
        EmbeddingSource::Random => None,
    };
    if m.vocab == VocabFrom::Vectors && vectors.is_none() {
        return Err(Error::Config {
            path: cfg.source.clone(),
            field: "model.vocab".into(),
            msg: "\"vectors\" needs model.embeddings = \"pretrained\"".into(),
        });
    }
    let train_docs = read_labeled(cfg.require("train")?)?;
    let val_docs = read_labeled(cfg.require("validation")?)?;
    let unlabeled_docs = if with_unlabeled {
        Some(read_corpus(cfg.require("unlabeled")?)?)
    } else {
        None
    };
    let test_docs = cfg.optional("test")?.map(read_labeled).transpose()?;

    let classes = class_names(&train_docs);
    if classes.len() < 2 {
        return Err(Error::contract(format!(
            "training corpus has {} class(es); need at least 2",
            classes.len()
        )));
    }
    let lc = m.lowercase;
    let corpus_vocab = || {
        let all: Vec<Vec<String>> = [
            Some(&train_docs),
            Some(&val_docs),
            unlabeled_docs.as_ref(),
            test_docs.as_ref(),
        ]
        .into_iter()
        .flatten()
        .flat_map(|docs| docs.iter().map(|d| tokenize(&d.text, lc)))
        .collect();
        build_vocab(&all, m.min_count)
    };
    let (vocab, mut table) = match (vectors, m.vocab) {
        (Some(path), VocabFrom::Vectors) => load_vectors(path, VocabSource::Induce, cfg.seed)?,
        (Some(path), VocabFrom::Corpora) => {
            let v = corpus_vocab();
            load_vectors(path, VocabSource::Given(&v), cfg.seed)?
        }
        (None, _) => {
            let v = corpus_vocab();
            let t = EmbeddingTable::random(&v, m.dim, cfg.seed);
            (v, t)
        }
    };
    if let Some(f) = m.freeze {
        table.frozen = f;
    }
    let params = ModelParams::new(table, m.arch, classes.len(), m.hidden, cfg.seed);
    let ds = |name: &str, docs: &[Document]| to_dataset(name, docs, &vocab, &classes, lc);
    Ok(Prepared {
        train: ds("train", &train_docs)?,
        validation: ds("validation", &val_docs)?,
        unlabeled: unlabeled_docs
            .as_deref()
            .map(|d| ds("unlabeled", d))
            .transpose()?,
        test: test_docs.as_deref().map(|d| ds("test", d)).transpose()?,
        params,
        vocab,
        class_names: classes,
    })
}

fn checkpoint(cfg: &ExperimentConfig, prep: &Prepared, params: ModelParams) -> Checkpoint {
    Checkpoint {
        params,
        vocab: prep.vocab.clone(),
        class_names: prep.class_names.clone(),
        lowercase: cfg.model.lowercase,
        max_len: cfg.train.max_len,
    }
}

/// Evaluates on `test` and writes `<stem>.json`, `<stem>.txt` and the
/// per-example predictions.
fn write_evaluation(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    test: &Dataset,
    max_len: usize,
    stem: &str,
    row: &str,
    summary: &mut Summary,
) -> Result<(EvalResult, Report)> {
    let dir = &cfg.paths.output_dir;
    let result = evalreport::evaluate(params, test, max_len)?;
    evalreport::write_predictions(&dir.join("predictions.jsonl"), &result)?;
    let report = compare_report(
        &[(row.to_string(), result.clone())],
        meta(cfg, format!("{row}: accuracy on {}", test.name))?,
    )?;
    report.write(dir, stem)?;
    summary.files.extend([
        dir.join(format!("{stem}.json")),
        dir.join(format!("{stem}.txt")),
        dir.join("predictions.jsonl"),
    ]);
    Ok((result, report))
}

#[derive(Clone, Debug)]
pub struct Summary {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

impl Summary {
    fn new() -> Self {
        Summary {
            files: Vec::new(),
            lines: Vec::new(),
        }
    }
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Summary> {
    let prep = prepare(cfg, false)?;
    let dir = prepare_output(cfg)?;
    let mut s = Summary::new();
    s.files.push(cfg.write_snapshot()?);

    let (params, report) = train(
        prep.params.clone(),
        &prep.train,
        &prep.validation,
        &cfg.train,
    )?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint(cfg, &prep, params.clone()), &ckpt_path)?;
    let report_path = dir.join("train_report.json");
    write_json(&report_path, &report)?;
    s.files.extend([ckpt_path, report_path]);
    s.lines.push(format!(
        "best epoch {} of {}: validation accuracy {:.4}",
        report.best_epoch, cfg.train.epochs, report.best_val_accuracy
    ));
    if let Some(test) = &prep.test {
        let (r, _) = write_evaluation(
            cfg,
            &params,
            test,
            cfg.train.max_len,
            "test_report",
            "model",
            &mut s,
        )?;
        s.lines
            .push(format!("test accuracy {:.4} (n = {})", r.accuracy, r.n));
    }
    Ok(s)
}

pub fn cmd_selflearn(cfg: &ExperimentConfig) -> Result<Summary> {
    let prep = prepare(cfg, true)?;
    let dir = prepare_output(cfg)?;
    let mut s = Summary::new();
    s.files.push(cfg.write_snapshot()?);

    let unlabeled = prep.unlabeled.as_ref().expect("requested");
    let outcome = self_learn(
        prep.params.clone(),
        &prep.train,
        unlabeled,
        &prep.validation,
        prep.test.as_ref(),
        &cfg.train,
        &cfg.selflearn,
    )?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint(cfg, &prep, outcome.params.clone()), &ckpt_path)?;
    let history_path = dir.join("history.jsonl");
    write_jsonl(&history_path, &outcome.history)?;
    let sel_path = dir.join("selections.jsonl");
    write_jsonl(&sel_path, &outcome.selections)?;
    s.files.extend([ckpt_path, history_path, sel_path]);
    s.lines.push(format!(
        "{} self-learning iteration(s); best iteration {} with validation accuracy {:.4}",
        outcome.history.len() - 1,
        outcome.best_iteration,
        outcome.best_val_accuracy
    ));
    if let Some(test) = &prep.test {
        let (r, _) = write_evaluation(
            cfg,
            &outcome.params,
            test,
            cfg.train.max_len,
            "test_report",
            "self-learning",
            &mut s,
        )?;
        s.lines
            .push(format!("test accuracy {:.4} (n = {})", r.accuracy, r.n));
    }
    Ok(s)
}

pub fn cmd_codeswitch(cfg: &ExperimentConfig) -> Result<Summary> {
    let corpus_path = cfg.require("corpus")?;
    let dict_path = cfg.require("dictionary")?;
    let corpus = read_corpus(corpus_path)?;
    let dict = load_dictionary(dict_path, cfg.seed, cfg.model.lowercase)?;
    let dir = prepare_output(cfg)?;
    let mut s = Summary::new();
    s.files.push(cfg.write_snapshot()?);

    let (switched, stats) = code_switch(&corpus, &dict);
    let out_path = dir.join("codeswitched.jsonl");
    write_corpus(&out_path, &switched)?;
    let stats_path = dir.join("switch_stats.json");
    write_json(&stats_path, &stats)?;
    s.files.extend([out_path, stats_path]);
    s.lines.push(format!(
        "replaced {:.1}% of vocabulary types, {:.1}% of tokens",
        stats.vocab_replaced_ratio * 100.0,
        stats.token_replaced_ratio * 100.0
    ));
    Ok(s)
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Summary> {
    let ckpt = load_checkpoint(cfg.require("checkpoint")?)?;
    let test_path = cfg.require("test")?;
    let docs = read_labeled(test_path)?;
    let test = to_dataset(
        "test",
        &docs,
        &ckpt.vocab,
        &ckpt.class_names,
        ckpt.lowercase,
    )?;
    prepare_output(cfg)?;
    let mut s = Summary::new();
    s.files.push(cfg.write_snapshot()?);
    let (r, _) = write_evaluation(
        cfg,
        &ckpt.params,
        &test,
        ckpt.max_len,
        "eval_report",
        "checkpoint",
        &mut s,
    )?;
    s.lines
        .push(format!("accuracy {:.4} (n = {})", r.accuracy, r.n));
    Ok(s)
}

fn emit_benchmark(dir: &Path, cfg: &synthetic::SyntheticConfig, seed_value: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let b = synthetic::generate(cfg, seed_value);
    for (name, docs) in [
        ("a_train.jsonl", &b.a_train),
        ("a_validation.jsonl", &b.a_val),
        ("a_test.jsonl", &b.a_test),
        ("b_unlabeled.jsonl", &b.b_unlabeled),
        ("b_test.jsonl", &b.b_test),
    ] {
        write_corpus(&dir.join(name), docs)?;
    }
    let vec_path = dir.join("vectors.txt");
    let file = File::create(&vec_path).map_err(|e| Error::io(&vec_path, e))?;
    let mut w = BufWriter::new(file);
    write_word_vectors(&mut w, &b.vectors.words, &b.vectors.matrix)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&vec_path, e))?;
    let dict_path = dir.join("dictionary.txt");
    let lines: String = b
        .a_words
        .iter()
        .zip(&b.b_words)
        .map(|(a, bw)| format!("{a} {bw}\n"))
        .collect();
    std::fs::write(&dict_path, lines).map_err(|e| Error::io(&dict_path, e))
}

pub fn cmd_synthetic(cfg: &ExperimentConfig) -> Result<Summary> {
    let dir = prepare_output(cfg)?;
    let mut s = Summary::new();
    s.files.push(cfg.write_snapshot()?);
    let syn = &cfg.synthetic;
    syn.train.validate()?;
    syn.selflearn.validate()?;
    if syn.seeds.is_empty() {
        return Err(Error::Config {
            path: cfg.source.clone(),
            field: "synthetic.seeds".into(),
            msg: "at least one seed is required".into(),
        });
    }
    if syn.emit_data {
        let data = dir.join("data");
        emit_benchmark(&data, syn, syn.seeds[0])?;
        s.files.push(data);
    }
    let result = synthetic::run(syn)?;
    let report = synthetic::report(syn, &result, &cfg.hash()?)?;
    report.write(dir, "synthetic_report")?;
    s.files.push(dir.join("synthetic_report.json"));
    s.files.push(dir.join("synthetic_report.txt"));
    s.lines.push(report.to_table());
    Ok(s)
}
