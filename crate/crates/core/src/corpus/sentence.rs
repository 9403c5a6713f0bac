//! Sentences as id sequences, batches, and convolution-compatible padding.

use crate::corpus::vocab::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};

/// Id sequence padded to a fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedSentence {
    pub ids: Vec<usize>,
    /// Token count before padding (after any truncation).
    pub original_length: usize,
}

impl TokenizedSentence {
    pub fn non_pad(&self) -> &[usize] {
        &self.ids[..self.original_length]
    }
}

/// Fixed-width id matrix for one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub t: usize,
}

impl PaddedBatch {
    pub fn new(sentences: Vec<TokenizedSentence>) -> Result<Self> {
        let t = match sentences.first() {
            Some(s) => s.ids.len(),
            None => return Err(Error::InvalidData("empty batch".to_string())),
        };
        if sentences.iter().any(|s| s.ids.len() != t) {
            return Err(Error::InvalidData("batch rows have unequal padded lengths".to_string()));
        }
        let lengths = sentences.iter().map(|s| s.original_length).collect();
        let ids = sentences.into_iter().map(|s| s.ids).collect();
        Ok(PaddedBatch { ids, lengths, t })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Mask of positions inside the original sentences (pad positions false).
    pub fn non_pad_mask(&self) -> Vec<Vec<bool>> {
        self.lengths
            .iter()
            .map(|&l| (0..self.t).map(|j| j < l).collect())
            .collect()
    }
}

/// Default search cap multiplier for [`compatible_length`].
pub const LENGTH_CAP_FACTOR: usize = 4;

/// Smallest T* >= t_raw whose length survives every strided layer with exact
/// integer arithmetic, so the transposed pass reproduces each length.
pub fn compatible_length(t_raw: usize, layers: &[(usize, usize)]) -> Result<usize> {
    compatible_length_capped(t_raw, layers, LENGTH_CAP_FACTOR * t_raw)
}

pub fn compatible_length_capped(t_raw: usize, layers: &[(usize, usize)], cap: usize) -> Result<usize> {
    debug_assert!(t_raw >= 1);
    for candidate in t_raw..=cap.max(t_raw) {
        if length_is_compatible(candidate, layers) {
            return Ok(candidate);
        }
    }
    Err(Error::NoCompatibleLength { t_raw, cap })
}

fn length_is_compatible(t: usize, layers: &[(usize, usize)]) -> bool {
    let mut cur = t;
    for &(h, r) in layers {
        if cur < h || (cur - h) % r != 0 {
            return false;
        }
        cur = (cur - h) / r + 1;
    }
    true
}

/// Per-layer lengths (input first) for a compatible T; panics on
/// incompatible input, so call [`compatible_length`] first.
pub fn length_trace(t: usize, layers: &[(usize, usize)]) -> Vec<usize> {
    let mut trace = vec![t];
    let mut cur = t;
    for &(h, r) in layers {
        assert!(cur >= h && (cur - h) % r == 0, "length {} incompatible with (h={}, r={})", cur, h, r);
        cur = (cur - h) / r + 1;
        trace.push(cur);
    }
    trace
}

/// Map tokens to ids, truncate to `t` keeping the prefix, pad with PAD.
pub fn encode_sentence(vocab: &Vocabulary, text: &[String], t: usize) -> TokenizedSentence {
    let mut ids: Vec<usize> = text.iter().take(t).map(|tok| vocab.id(tok)).collect();
    let original_length = ids.len();
    ids.resize(t, PAD_ID);
    TokenizedSentence { ids, original_length }
}

/// Encode a slice of sentences at a fixed width.
pub fn encode_batch(vocab: &Vocabulary, texts: &[Vec<String>], t: usize) -> Result<PaddedBatch> {
    PaddedBatch::new(texts.iter().map(|s| encode_sentence(vocab, s, t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::build_vocab;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn reference_config_needs_sixty_one() {
        let layers = [(5, 2), (5, 2)];
        assert_eq!(compatible_length(60, &layers).unwrap(), 61);
        assert_eq!(length_trace(61, &layers), vec![61, 29, 13]);
        // transposed arithmetic walks back up exactly
        assert_eq!((13 - 1) * 2 + 5, 29);
        assert_eq!((29 - 1) * 2 + 5, 61);
    }

    #[test]
    fn already_compatible_length_is_kept() {
        assert_eq!(compatible_length(4, &[(2, 2)]).unwrap(), 4);
        assert_eq!(compatible_length(1, &[]).unwrap(), 1);
    }

    #[test]
    fn search_stops_at_cap() {
        let err = compatible_length(1, &[(100, 1)]).unwrap_err();
        assert!(matches!(err, Error::NoCompatibleLength { .. }));
        assert!(err.to_string().contains("no compatible length"));
    }

    #[test]
    fn compatible_length_is_idempotent_and_round_trips() {
        let layers = [(5, 2), (5, 2), (4, 1)];
        for t_raw in 4..200 {
            let t = match compatible_length(t_raw, &layers) {
                Ok(t) => t,
                Err(_) => continue,
            };
            assert_eq!(compatible_length(t, &layers).unwrap(), t);
            let trace = length_trace(t, &layers);
            // deconv inverse recovers every intermediate length
            let mut cur = *trace.last().unwrap();
            for (i, &(h, r)) in layers.iter().enumerate().rev() {
                cur = (cur - 1) * r + h;
                assert_eq!(cur, trace[i]);
            }
        }
    }

    #[test]
    fn encode_pads_and_maps_oov() {
        let v = build_vocab(&[words("a b")], 10, 1).unwrap();
        let s = encode_sentence(&v, &words("a b"), 4);
        assert_eq!(s.ids, vec![2, 3, 0, 0]);
        assert_eq!(s.original_length, 2);

        let s = encode_sentence(&v, &words("zzz"), 2);
        assert_eq!(s.ids, vec![1, 0]);
        assert_eq!(s.original_length, 1);
    }

    #[test]
    fn encode_truncates_to_prefix() {
        let v = build_vocab(&[words("a")], 10, 1).unwrap();
        let long: Vec<String> = (0..70).map(|_| "a".to_string()).collect();
        let s = encode_sentence(&v, &long, 61);
        assert_eq!(s.ids.len(), 61);
        assert_eq!(s.original_length, 61);
        assert!(s.ids.iter().all(|&id| id == 2));
    }

    #[test]
    fn encode_then_lookup_is_identity_on_in_vocab_text() {
        let v = build_vocab(&[words("the cat sat on the mat")], 10, 1).unwrap();
        let text = words("the mat sat");
        let s = encode_sentence(&v, &text, 8);
        let back: Vec<String> = s.non_pad().iter().map(|&id| v.token(id).to_string()).collect();
        assert_eq!(back, text);
    }

    #[test]
    fn batch_requires_equal_widths() {
        let v = build_vocab(&[words("a b c")], 10, 1).unwrap();
        let batch = encode_batch(&v, &[words("a b"), words("c")], 5).unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch.t, 5);
        assert_eq!(batch.lengths, vec![2, 1]);
        assert_eq!(
            batch.non_pad_mask(),
            vec![
                vec![true, true, false, false, false],
                vec![true, false, false, false, false]
            ]
        );

        let uneven = vec![
            TokenizedSentence { ids: vec![0, 0], original_length: 0 },
            TokenizedSentence { ids: vec![0], original_length: 0 },
        ];
        assert!(PaddedBatch::new(uneven).is_err());
    }
}
