//! Corpus file ingestion and tokenization levels.

use std::fs;
use std::path::Path;

use crate::corpus::sentence::TokenizedSentence;
use crate::corpus::vocab::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};

/// Tokenization granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Word,
    Char,
}

impl Level {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Level::Word),
            "char" => Ok(Level::Char),
            other => Err(Error::InvalidData(format!(
                "unknown level {:?} (expected word or char)",
                other
            ))),
        }
    }

    /// Word level splits on whitespace; char level keeps every character,
    /// spaces included, as its own token.
    pub fn tokenize(&self, line: &str) -> Vec<String> {
        match self {
            Level::Word => line.split_whitespace().map(str::to_string).collect(),
            Level::Char => line.chars().map(String::from).collect(),
        }
    }

    pub fn detokenize(&self, tokens: &[&str]) -> String {
        match self {
            Level::Word => tokens.join(" "),
            Level::Char => tokens.concat(),
        }
    }
}

/// Sentence paired with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub sentence: TokenizedSentence,
    pub label: Option<usize>,
}

/// One sentence per line; blank lines are skipped.
pub fn read_corpus(path: &Path, level: Level) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| level.tokenize(l))
        .collect())
}

/// TSV with column 1 = integer label, column 2 = text. A row without a tab,
/// or with an empty label column, is an unlabeled example.
pub fn read_labeled_tsv(path: &Path, level: Level) -> Result<Vec<(Option<usize>, Vec<String>)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = match line.split_once('\t') {
            Some((l, rest)) if l.trim().is_empty() => (None, rest),
            Some((l, rest)) => {
                let parsed = l.trim().parse::<usize>().map_err(|_| {
                    Error::InvalidData(format!("line {}: label {:?} is not a nonnegative integer", lineno + 1, l))
                })?;
                (Some(parsed), rest)
            }
            None => (None, line),
        };
        rows.push((label, level.tokenize(body)));
    }
    Ok(rows)
}

/// TSV with column 1 = title, column 2 = abstract.
pub fn read_pairs_tsv(path: &Path, level: Level) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (title, abstract_) = line.split_once('\t').ok_or_else(|| {
            Error::InvalidData(format!("line {}: expected title<TAB>abstract", lineno + 1))
        })?;
        rows.push((level.tokenize(title), level.tokenize(abstract_)));
    }
    Ok(rows)
}

/// Drop every PAD id (model outputs may emit PAD mid-sequence).
pub fn strip_pads(ids: &[usize]) -> Vec<usize> {
    ids.iter().copied().filter(|&id| id != PAD_ID).collect()
}

/// Render ids back to text at the given level, PAD stripped.
pub fn ids_to_text(ids: &[usize], vocab: &Vocabulary, level: Level) -> String {
    let toks: Vec<&str> = strip_pads(ids).into_iter().map(|id| vocab.token(id)).collect();
    level.detokenize(&toks)
}
