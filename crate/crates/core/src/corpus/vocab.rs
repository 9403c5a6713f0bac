//! Vocabulary construction and the on-disk token list format.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Token table with dense ids; id 0 is PAD, id 1 is UNK.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from an explicit token list whose first two entries must be the
    /// PAD and UNK literals.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::InvalidData(format!(
                "vocabulary must start with {:?} and {:?}",
                PAD_TOKEN, UNK_TOKEN
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidData(format!("duplicate vocabulary token {:?}", t)));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Id for a token; out-of-vocabulary tokens map to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, line number = id.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        Self::from_tokens(tokens)
    }
}

/// Rank tokens by descending frequency (ties by first occurrence), keep those
/// at or above `min_freq`, cap the table at `max_size` entries including the
/// two specials.
pub fn build_vocab(sentences: &[Vec<String>], max_size: usize, min_freq: usize) -> Result<Vocabulary> {
    if max_size < 2 {
        return Err(Error::InvalidData(format!("max_size {} below the 2 reserved entries", max_size)));
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut seen = 0usize;
    for sentence in sentences {
        for tok in sentence {
            if tok == PAD_TOKEN || tok == UNK_TOKEN {
                continue;
            }
            let entry = counts.entry(tok.as_str()).or_insert((0, seen));
            entry.0 += 1;
            seen += 1;
        }
    }
    if seen == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, usize, usize)> = counts
        .into_iter()
        .filter(|(_, (c, _))| *c >= min_freq.max(1))
        .map(|(t, (c, first))| (t, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(max_size - 2);

    let mut tokens = Vec::with_capacity(ranked.len() + 2);
    tokens.push(PAD_TOKEN.to_string());
    tokens.push(UNK_TOKEN.to_string());
    tokens.extend(ranked.into_iter().map(|(t, _, _)| t.to_string()));
    Vocabulary::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn frequency_order_is_forced_on_tiny_corpus() {
        let v = build_vocab(&[words("a a b")], 10, 1).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.size(), 4);
        assert_eq!(v.id("a"), 2);
    }

    #[test]
    fn max_size_truncates_and_dropped_tokens_become_unk() {
        let v = build_vocab(&[words("a a b")], 3, 1).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a"]);
        assert_eq!(v.id("b"), UNK_ID);
    }

    #[test]
    fn ties_break_by_first_occurrence() {
        let v = build_vocab(&[words("b a b a")], 10, 1).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "b", "a"]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let err = build_vocab(&[], 10, 1).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
        assert_eq!(err.to_string(), "empty corpus");
        let err = build_vocab(&[vec![]], 10, 1).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }

    #[test]
    fn min_freq_matches_an_independent_frequency_scan() {
        // synthetic 50-token grammar
        let alphabet: Vec<String> = (0..50).map(|i| format!("w{}", i)).collect();
        let mut r = rng::stream(11, "grammar", 0);
        let mut sentences = Vec::new();
        for _ in 0..1000 {
            let len = r.gen_range(3..12);
            // skewed draw so low-frequency tokens exist
            let s: Vec<String> = (0..len)
                .map(|_| {
                    let hi = r.gen_range(1..=50);
                    alphabet[r.gen_range(0..hi)].clone()
                })
                .collect();
            sentences.push(s);
        }
        let min_freq = 2;
        let v = build_vocab(&sentences, 10_000, min_freq).unwrap();

        let mut scan: HashMap<&str, usize> = HashMap::new();
        for s in &sentences {
            for t in s {
                *scan.entry(t.as_str()).or_default() += 1;
            }
        }
        let expected = scan.values().filter(|&&c| c >= min_freq).count();
        assert_eq!(v.size(), 2 + expected);
        // ranking property: nonincreasing frequency over content tokens
        let freqs: Vec<usize> = v.tokens()[2..].iter().map(|t| scan[t.as_str()]).collect();
        assert!(freqs.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn file_round_trip_preserves_space_tokens() {
        let v = Vocabulary::from_tokens(vec![
            "<pad>".to_string(),
            "<unk>".to_string(),
            " ".to_string(),
            "a".to_string(),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.write_file(&path).unwrap();
        let back = Vocabulary::read_file(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id(" "), 2);
    }

    #[test]
    fn file_without_reserved_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "a\nb\nc\n").unwrap();
        assert!(Vocabulary::read_file(&path).is_err());
    }
}
