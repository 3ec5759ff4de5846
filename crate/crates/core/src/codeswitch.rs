//! Dictionary-based code-switching of a corpus.
//!
//! Every token with a dictionary entry is replaced, in place, by one fixed
//! translation. Replacement is a single pass: translations are never looked
//! up again, so cyclic dictionaries are harmless.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::textdata::{tokenize, Document};

#[derive(Clone, Debug, PartialEq)]
pub struct BilingualDictionary {
    /// Source words in first-appearance order.
    sources: Vec<String>,
    entries: HashMap<String, Vec<String>>,
    chosen: HashMap<String, usize>,
    pub seed: u64,
    pub lowercase: bool,
}

fn normalize(word: &str, lowercase: bool) -> String {
    if lowercase {
        word.to_lowercase()
    } else {
        word.to_owned()
    }
}

impl BilingualDictionary {
    /// Builds a dictionary from `(source, target)` pairs. Repeated sources
    /// accumulate an ordered, de-duplicated translation list.
    pub fn from_pairs<I, S, T>(pairs: I, seed: u64, lowercase: bool) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let mut sources = Vec::new();
        let mut entries: HashMap<String, Vec<String>> = HashMap::new();
        for (s, t) in pairs {
            let s = normalize(s.as_ref(), lowercase);
            let t = t.as_ref().to_owned();
            let list = entries.entry(s.clone()).or_insert_with(|| {
                sources.push(s.clone());
                Vec::new()
            });
            if !list.contains(&t) {
                list.push(t);
            }
        }
        let stream = seed::derive(seed, seed::purpose::DICTIONARY);
        let chosen = entries
            .iter()
            .map(|(s, list)| {
                let k = if list.len() == 1 {
                    0
                } else {
                    seed::keyed_rng(stream, s).random_range(0..list.len())
                };
                (s.clone(), k)
            })
            .collect();
        BilingualDictionary {
            sources,
            entries,
            chosen,
            seed,
            lowercase,
        }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn translations(&self, source: &str) -> Option<&[String]> {
        self.entries
            .get(&normalize(source, self.lowercase))
            .map(Vec::as_slice)
    }

    /// The fixed translation for `token`, if it has an entry.
    pub fn translate(&self, token: &str) -> Option<&str> {
        let key = normalize(token, self.lowercase);
        let list = self.entries.get(&key)?;
        Some(list[self.chosen[&key]].as_str())
    }
}

/// Parses `source target` lines (first whitespace separates the two; the
/// rest of the line is the target). Blank lines are skipped.
pub fn parse_dictionary<R: BufRead>(
    reader: R,
    name: &str,
    seed: u64,
    lowercase: bool,
) -> Result<BilingualDictionary> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::format(name, i + 1, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once(char::is_whitespace) {
            Some((src, tgt)) if !tgt.trim().is_empty() => {
                pairs.push((src.to_owned(), tgt.trim().to_owned()))
            }
            _ => {
                return Err(Error::format(
                    name,
                    i + 1,
                    format!("expected \"source target\", got {line:?}"),
                ))
            }
        }
    }
    Ok(BilingualDictionary::from_pairs(pairs, seed, lowercase))
}

pub fn load_dictionary(path: &Path, seed: u64, lowercase: bool) -> Result<BilingualDictionary> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dictionary(
        BufReader::new(file),
        &path.display().to_string(),
        seed,
        lowercase,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchStats {
    /// Replaced token types / distinct token types in the input corpus.
    pub vocab_replaced_ratio: f64,
    /// Replaced token occurrences / all token occurrences.
    pub token_replaced_ratio: f64,
    pub replaced_types: usize,
    pub corpus_types: usize,
    pub replaced_tokens: usize,
    pub total_tokens: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Switches one tokenized document; returns the new tokens and a per-position
/// replaced flag.
pub fn switch_tokens(tokens: &[String], dict: &BilingualDictionary) -> (Vec<String>, Vec<bool>) {
    tokens
        .iter()
        .map(|t| match dict.translate(t) {
            Some(tr) => (tr.to_owned(), true),
            None => (t.clone(), false),
        })
        .unzip()
}

/// Code-switches every document. Labels, order, and token counts are kept;
/// statistics are computed over the input tokens, before any re-tokenization
/// of multi-word translations.
pub fn code_switch(
    corpus: &[Document],
    dict: &BilingualDictionary,
) -> (Vec<Document>, SwitchStats) {
    let mut types = HashSet::new();
    let mut replaced_types = HashSet::new();
    let (mut replaced_tokens, mut total_tokens) = (0, 0);
    let mut out = Vec::with_capacity(corpus.len());
    for doc in corpus {
        let tokens = tokenize(&doc.text, dict.lowercase);
        let (switched, flags) = switch_tokens(&tokens, dict);
        for (tok, &replaced) in tokens.iter().zip(&flags) {
            let key = normalize(tok, dict.lowercase);
            total_tokens += 1;
            if replaced {
                replaced_tokens += 1;
                replaced_types.insert(key.clone());
            }
            types.insert(key);
        }
        out.push(Document {
            text: switched.join(" "),
            label: doc.label.clone(),
        });
    }
    let stats = SwitchStats {
        vocab_replaced_ratio: ratio(replaced_types.len(), types.len()),
        token_replaced_ratio: ratio(replaced_tokens, total_tokens),
        replaced_types: replaced_types.len(),
        corpus_types: types.len(),
        replaced_tokens,
        total_tokens,
    };
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> Document {
        Document {
            text: text.into(),
            label: Some("x".into()),
        }
    }

    #[test]
    fn worked_example() {
        let dict = BilingualDictionary::from_pairs([("the", "el"), ("cat", "gato")], 0, true);
        let (out, stats) = code_switch(&[doc("the cat sat on the mat")], &dict);
        assert_eq!(out[0].text, "el gato sat on el mat");
        assert_eq!(out[0].label.as_deref(), Some("x"));
        assert_eq!(stats.vocab_replaced_ratio, 0.4);
        assert_eq!(stats.token_replaced_ratio, 0.5);
    }

    #[test]
    fn empty_dictionary_is_identity() {
        let dict = BilingualDictionary::from_pairs(Vec::<(String, String)>::new(), 0, true);
        let corpus = vec![doc("a b c"), doc("d")];
        let (out, stats) = code_switch(&corpus, &dict);
        assert_eq!(out, corpus);
        assert_eq!(
            (stats.vocab_replaced_ratio, stats.token_replaced_ratio),
            (0.0, 0.0)
        );
    }

    #[test]
    fn accumulates_and_chooses_consistently() {
        let text = "cat gato\ncat felino\n\ndog perro\n";
        let d = parse_dictionary(text.as_bytes(), "mem", 3, true).unwrap();
        assert_eq!(
            d.translations("cat").unwrap(),
            &["gato".to_string(), "felino".to_string()]
        );
        let choice = d.translate("cat").unwrap();
        assert!(choice == "gato" || choice == "felino");
        let again = parse_dictionary(text.as_bytes(), "mem", 3, true).unwrap();
        assert_eq!(again.translate("cat"), Some(choice));
        for s in 0..50 {
            let d = parse_dictionary(text.as_bytes(), "mem", s, true).unwrap();
            assert_eq!(d.translate("dog"), Some("perro"));
            assert_eq!(d.translate("Cat"), d.translate("cat"));
        }
        let choices: HashSet<String> = (0..50)
            .map(|s| {
                parse_dictionary(text.as_bytes(), "mem", s, true)
                    .unwrap()
                    .translate("cat")
                    .unwrap()
                    .to_owned()
            })
            .collect();
        assert_eq!(
            choices.len(),
            2,
            "seed should matter for multi-translation words"
        );
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_dictionary("a b\nlonely\n".as_bytes(), "dict", 0, true).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
    }

    #[test]
    fn single_pass_on_cycles() {
        let dict = BilingualDictionary::from_pairs([("a", "b"), ("b", "a")], 0, true);
        let (out, stats) = code_switch(&[doc("a b a c")], &dict);
        assert_eq!(out[0].text, "b a b c");
        assert_eq!(stats.replaced_tokens, 3);
    }

    #[test]
    fn multi_word_targets_kept_verbatim() {
        let d = parse_dictionary("ice_cream helado de crema\n".as_bytes(), "d", 0, true).unwrap();
        let (out, stats) = code_switch(&[doc("ice_cream now")], &d);
        assert_eq!(out[0].text, "helado de crema now");
        assert_eq!(stats.total_tokens, 2);
    }
}
