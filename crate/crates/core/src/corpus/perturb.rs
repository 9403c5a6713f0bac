//! Noising operators for the correction experiments.

use rand::Rng;

use crate::corpus::sentence::TokenizedSentence;
use crate::corpus::vocab::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::rng;

/// First content-token id; substitution and insertion draw from here up.
const FIRST_CONTENT_ID: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbMode {
    Substitute,
    Delete,
    Insert,
}

impl PerturbMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "substitute" => Ok(PerturbMode::Substitute),
            "delete" => Ok(PerturbMode::Delete),
            "insert" => Ok(PerturbMode::Insert),
            other => Err(Error::InvalidData(format!(
                "unknown perturbation mode {:?} (expected substitute, delete, or insert)",
                other
            ))),
        }
    }
}

/// Noise description: rate, enabled modes, RNG seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub rate: f64,
    pub modes: Vec<PerturbMode>,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(rate: f64, modes: Vec<PerturbMode>, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) || !rate.is_finite() {
            return Err(Error::InvalidData(format!("perturbation rate {} outside [0, 1]", rate)));
        }
        if modes.is_empty() {
            return Err(Error::InvalidData("no perturbation modes enabled".to_string()));
        }
        Ok(PerturbationSpec { rate, modes, seed })
    }

    pub fn reseeded(&self, seed: u64) -> Self {
        PerturbationSpec { seed, ..self.clone() }
    }
}

fn check_vocab(spec: &PerturbationSpec, vocab: &Vocabulary) -> Result<()> {
    let needs_alternative = spec.modes.contains(&PerturbMode::Substitute) && vocab.size() <= 3;
    let needs_content = spec.modes.contains(&PerturbMode::Insert) && vocab.size() <= FIRST_CONTENT_ID;
    if needs_alternative || needs_content {
        return Err(Error::VocabularyTooSmall { v: vocab.size() });
    }
    Ok(())
}

/// Uniform content-token draw excluding `avoid` (pass PAD_ID to exclude nothing
/// extra, since PAD is below the content range anyway).
fn draw_content(rng: &mut impl Rng, v: usize, avoid: usize) -> usize {
    let span = v - FIRST_CONTENT_ID;
    if avoid >= FIRST_CONTENT_ID {
        let pick = rng.gen_range(0..span - 1);
        let candidate = FIRST_CONTENT_ID + pick;
        if candidate >= avoid {
            candidate + 1
        } else {
            candidate
        }
    } else {
        FIRST_CONTENT_ID + rng.gen_range(0..span)
    }
}

/// Apply independent per-token noise. Each non-pad input position is hit with
/// probability `rate`; the mode is drawn uniformly among those enabled.
/// Deletions shift the tail left and re-pad; insertions push a random content
/// token before the position and the buffer is truncated back to its width.
pub fn perturb(s: &TokenizedSentence, spec: &PerturbationSpec, vocab: &Vocabulary) -> Result<TokenizedSentence> {
    check_vocab(spec, vocab)?;
    let t = s.ids.len();
    let v = vocab.size();
    let mut rng = rng::stream(spec.seed, "perturb", 0);
    let mut out: Vec<usize> = Vec::with_capacity(t + 4);
    for &id in s.non_pad() {
        let hit = rng.gen::<f64>() < spec.rate;
        if !hit {
            out.push(id);
            continue;
        }
        let mode = spec.modes[rng.gen_range(0..spec.modes.len())];
        match mode {
            PerturbMode::Substitute => {
                // keep a same-sized draw call even when the target is a
                // special token, so the consumed stream length is stable
                let replacement = draw_content(&mut rng, v, id);
                out.push(replacement);
            }
            PerturbMode::Delete => {}
            PerturbMode::Insert => {
                out.push(draw_content(&mut rng, v, PAD_ID));
                out.push(id);
            }
        }
    }
    out.truncate(t);
    let original_length = out.len();
    out.resize(t, PAD_ID);
    Ok(TokenizedSentence { ids: out, original_length })
}

/// Perturb each sentence with an independent per-row stream derived from the
/// spec seed, so rows in one batch receive uncorrelated noise.
pub fn perturb_batch(
    sentences: &[TokenizedSentence],
    spec: &PerturbationSpec,
    vocab: &Vocabulary,
) -> Result<Vec<TokenizedSentence>> {
    let mut seeder = rng::stream(spec.seed, "perturb-batch", 0);
    sentences
        .iter()
        .map(|s| perturb(s, &spec.reseeded(seeder.gen()), vocab))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::sentence::encode_sentence;
    use crate::corpus::vocab::{build_vocab, Vocabulary};

    fn toy_vocab(n_content: usize) -> Vocabulary {
        let sentence: Vec<String> = (0..n_content).map(|i| format!("w{}", i)).collect();
        build_vocab(&[sentence], n_content + 2, 1).unwrap()
    }

    fn toy_sentence(vocab: &Vocabulary, len: usize, t: usize) -> TokenizedSentence {
        let text: Vec<String> = (0..len).map(|i| format!("w{}", i % (vocab.size() - 2))).collect();
        encode_sentence(vocab, &text, t)
    }

    #[test]
    fn zero_rate_is_identity() {
        let v = toy_vocab(5);
        let s = toy_sentence(&v, 4, 8);
        let spec = PerturbationSpec::new(0.0, vec![PerturbMode::Substitute, PerturbMode::Delete, PerturbMode::Insert], 7).unwrap();
        assert_eq!(perturb(&s, &spec, &v).unwrap(), s);
    }

    #[test]
    fn full_rate_substitution_changes_every_non_pad_token() {
        let v = toy_vocab(6);
        let s = toy_sentence(&v, 5, 9);
        let spec = PerturbationSpec::new(1.0, vec![PerturbMode::Substitute], 3).unwrap();
        let out = perturb(&s, &spec, &v).unwrap();
        assert_eq!(out.original_length, 5);
        for j in 0..5 {
            assert_ne!(out.ids[j], s.ids[j], "position {}", j);
            assert!(out.ids[j] >= 2);
        }
        assert_eq!(&out.ids[5..], &s.ids[5..]);
    }

    #[test]
    fn substitution_fraction_sits_in_binomial_band() {
        // eta = 0.3 over 10,000 tokens; 4 sigma of a binomial is ~0.0183,
        // so [0.28, 0.32] is the acceptance band.
        let v = toy_vocab(50);
        let s = toy_sentence(&v, 10_000, 10_000);
        let spec = PerturbationSpec::new(0.3, vec![PerturbMode::Substitute], 123).unwrap();
        let out = perturb(&s, &spec, &v).unwrap();
        let changed = s.ids.iter().zip(&out.ids).filter(|(a, b)| a != b).count();
        let frac = changed as f64 / 10_000.0;
        assert!((0.28..=0.32).contains(&frac), "fraction {}", frac);
    }

    #[test]
    fn fixed_seed_is_pure() {
        let v = toy_vocab(9);
        let s = toy_sentence(&v, 30, 33);
        let spec = PerturbationSpec::new(0.5, vec![PerturbMode::Substitute, PerturbMode::Delete, PerturbMode::Insert], 99).unwrap();
        let a = perturb(&s, &spec, &v).unwrap();
        let b = perturb(&s, &spec, &v).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_vocabulary_rejects_substitution() {
        let v = toy_vocab(1);
        assert_eq!(v.size(), 3);
        let s = toy_sentence(&v, 2, 4);
        let spec = PerturbationSpec::new(0.5, vec![PerturbMode::Substitute], 1).unwrap();
        let err = perturb(&s, &spec, &v).unwrap_err();
        assert!(matches!(err, Error::VocabularyTooSmall { .. }));
        assert!(err.to_string().contains("vocabulary too small"));
    }

    #[test]
    fn full_rate_deletion_empties_the_sentence() {
        let v = toy_vocab(5);
        let s = toy_sentence(&v, 4, 6);
        let spec = PerturbationSpec::new(1.0, vec![PerturbMode::Delete], 2).unwrap();
        let out = perturb(&s, &spec, &v).unwrap();
        assert_eq!(out.original_length, 0);
        assert!(out.ids.iter().all(|&id| id == PAD_ID));
        assert_eq!(out.ids.len(), 6);
    }

    #[test]
    fn full_rate_insertion_fills_the_buffer() {
        let v = toy_vocab(5);
        let s = toy_sentence(&v, 4, 6);
        let spec = PerturbationSpec::new(1.0, vec![PerturbMode::Insert], 2).unwrap();
        let out = perturb(&s, &spec, &v).unwrap();
        // 4 tokens double to 8, truncated back to 6
        assert_eq!(out.original_length, 6);
        assert_eq!(out.ids.len(), 6);
        // every original token is preceded by an inserted content token
        assert_eq!(out.ids[1], s.ids[0]);
        assert_eq!(out.ids[3], s.ids[1]);
        assert_eq!(out.ids[5], s.ids[2]);
    }

    #[test]
    fn mixed_modes_preserve_shape_and_vocabulary_range() {
        let v = toy_vocab(12);
        let s = toy_sentence(&v, 20, 25);
        let spec = PerturbationSpec::new(0.6, vec![PerturbMode::Substitute, PerturbMode::Delete, PerturbMode::Insert], 5).unwrap();
        for salt in 0..50u64 {
            let out = perturb(&s, &spec.reseeded(salt), &v).unwrap();
            assert_eq!(out.ids.len(), 25);
            assert!(out.ids.iter().all(|&id| id < v.size()));
            assert!(out.ids[..out.original_length].iter().all(|&id| id != PAD_ID));
            assert!(out.ids[out.original_length..].iter().all(|&id| id == PAD_ID));
        }
    }

    #[test]
    fn batch_rows_receive_independent_noise() {
        let v = toy_vocab(30);
        let s = toy_sentence(&v, 40, 45);
        let spec = PerturbationSpec::new(0.5, vec![PerturbMode::Substitute], 77).unwrap();
        let rows = perturb_batch(&[s.clone(), s.clone()], &spec, &v).unwrap();
        assert_ne!(rows[0], rows[1]);
        let again = perturb_batch(&[s.clone(), s], &spec, &v).unwrap();
        assert_eq!(rows, again);
    }

    #[test]
    fn rate_and_mode_validation() {
        assert!(PerturbationSpec::new(-0.1, vec![PerturbMode::Delete], 0).is_err());
        assert!(PerturbationSpec::new(1.1, vec![PerturbMode::Delete], 0).is_err());
        assert!(PerturbationSpec::new(0.5, vec![], 0).is_err());
        assert!(PerturbMode::parse("substitute").is_ok());
        assert!(PerturbMode::parse("swap").is_err());
    }
}
