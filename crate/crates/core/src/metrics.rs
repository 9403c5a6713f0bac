//! Evaluation metrics: corpus BLEU-4, ROUGE-1/2, ROUGE-L, Levenshtein
//! distance, CER, WER.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Metric value plus the raw counts it was computed from, so any reported
/// number can be audited.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub metric: String,
    /// Always in [0, 1]; BLEU is conventionally displayed x100.
    pub value: f64,
    pub counts: Vec<(String, f64)>,
}

impl ScoreReport {
    fn new(metric: &str, value: f64, counts: Vec<(String, f64)>) -> Self {
        debug_assert!((0.0..=1.0 + 1e-12).contains(&value), "{} out of range: {}", metric, value);
        ScoreReport { metric: metric.to_string(), value, counts }
    }

    pub fn count(&self, name: &str) -> Option<f64> {
        self.counts.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

fn ngram_counts(seq: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut map: HashMap<&[String], usize> = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *map.entry(w).or_default() += 1;
        }
    }
    map
}

fn clipped_overlap(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    let total = hyp.len().saturating_sub(n - 1);
    (matched, total)
}

/// Corpus-level BLEU-4: geometric mean of clipped n-gram precisions for
/// n = 1..4 with the brevity penalty exp(1 - ref_len/hyp_len) applied when
/// the hypothesis side is shorter. Unsmoothed: any zero precision zeroes the
/// score.
pub fn bleu4(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<ScoreReport> {
    bleu4_with(hypotheses, references, false)
}

/// `smoothed` replaces zero match counts with add-one precision
/// 1/(total+1), an absent order counting one pseudo-candidate, which keeps
/// short-corpus scores nonzero yet below 1.
pub fn bleu4_with(hypotheses: &[Vec<String>], references: &[Vec<String>], smoothed: bool) -> Result<ScoreReport> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidData("empty hypothesis set".to_string()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidData(format!(
            "{} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let (m, t) = clipped_overlap(h, r, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 0..4 {
        let (m, t) = (matched[n], total[n]);
        let p = if smoothed && m == 0 {
            1.0 / (t.max(1) as f64 + 1.0)
        } else if t == 0 || m == 0 {
            zero = true;
            0.0
        } else {
            m as f64 / t as f64
        };
        if p > 0.0 {
            log_sum += p.ln() / 4.0;
        }
    }
    let bp = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let value = if zero || hyp_len == 0 { 0.0 } else { bp * log_sum.exp() };
    let mut counts = vec![
        ("hyp_len".to_string(), hyp_len as f64),
        ("ref_len".to_string(), ref_len as f64),
        ("brevity_penalty".to_string(), bp),
    ];
    for n in 0..4 {
        counts.push((format!("matched_{}", n + 1), matched[n] as f64));
        counts.push((format!("total_{}", n + 1), total[n] as f64));
    }
    Ok(ScoreReport::new("bleu4", value, counts))
}

/// ROUGE-N recall: clipped overlapping n-grams over the reference n-gram
/// count; F1 is carried in the counts.
pub fn rouge_n(hypothesis: &[String], reference: &[String], n: usize) -> Result<ScoreReport> {
    if !(1..=2).contains(&n) {
        return Err(Error::InvalidData(format!("rouge_n supports n in {{1, 2}}, got {}", n)));
    }
    if reference.len() < n {
        return Err(Error::InvalidData(format!(
            "reference holds no {}-grams (length {})",
            n,
            reference.len()
        )));
    }
    let (matched, hyp_total) = clipped_overlap(hypothesis, reference, n);
    let ref_total = reference.len() - n + 1;
    let recall = matched as f64 / ref_total as f64;
    let precision = if hyp_total == 0 { 0.0 } else { matched as f64 / hyp_total as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ScoreReport::new(
        &format!("rouge{}", n),
        recall,
        vec![
            ("matched".to_string(), matched as f64),
            ("ref_total".to_string(), ref_total as f64),
            ("hyp_total".to_string(), hyp_total as f64),
            ("precision".to_string(), precision),
            ("f1".to_string(), f1),
        ],
    ))
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L: value is F = 2PR/(P+R) with R = LCS/|ref| and P = LCS/|hyp|,
/// both carried in the counts.
pub fn rouge_l(hypothesis: &[String], reference: &[String]) -> Result<ScoreReport> {
    if reference.is_empty() {
        return Err(Error::InvalidData("empty reference".to_string()));
    }
    let lcs = lcs_len(hypothesis, reference);
    let recall = lcs as f64 / reference.len() as f64;
    let precision = if hypothesis.is_empty() { 0.0 } else { lcs as f64 / hypothesis.len() as f64 };
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ScoreReport::new(
        "rougeL",
        f,
        vec![
            ("lcs".to_string(), lcs as f64),
            ("recall".to_string(), recall),
            ("precision".to_string(), precision),
            ("ref_len".to_string(), reference.len() as f64),
            ("hyp_len".to_string(), hypothesis.len() as f64),
        ],
    ))
}

/// Unit-cost edit distance by the standard two-row DP.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Which sequence length normalizes the edit distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorRateDenominator {
    Truth,
    Prediction,
}

fn error_rate<T: PartialEq>(
    metric: &str,
    prediction: &[T],
    truth: &[T],
    denom: ErrorRateDenominator,
) -> Result<ScoreReport> {
    let d = levenshtein(prediction, truth);
    let len = match denom {
        ErrorRateDenominator::Truth => truth.len(),
        ErrorRateDenominator::Prediction => prediction.len(),
    };
    if len == 0 {
        return Err(Error::InvalidData(format!("{} denominator sequence is empty", metric)));
    }
    // rate can exceed 1 when the prediction is much longer; clamp for the
    // [0, 1] reporting contract while keeping the distance auditable
    let value = (d as f64 / len as f64).min(1.0);
    Ok(ScoreReport::new(
        metric,
        value,
        vec![
            ("distance".to_string(), d as f64),
            ("denominator".to_string(), len as f64),
        ],
    ))
}

/// Character error rate: edit distance over the ground-truth length.
pub fn cer<T: PartialEq>(prediction: &[T], truth: &[T]) -> Result<ScoreReport> {
    error_rate("cer", prediction, truth, ErrorRateDenominator::Truth)
}

pub fn cer_with<T: PartialEq>(prediction: &[T], truth: &[T], denom: ErrorRateDenominator) -> Result<ScoreReport> {
    error_rate("cer", prediction, truth, denom)
}

/// Word error rate: identical computation over word tokens.
pub fn wer<T: PartialEq>(prediction: &[T], truth: &[T]) -> Result<ScoreReport> {
    error_rate("wer", prediction, truth, ErrorRateDenominator::Truth)
}

pub fn wer_with<T: PartialEq>(prediction: &[T], truth: &[T], denom: ErrorRateDenominator) -> Result<ScoreReport> {
    error_rate("wer", prediction, truth, denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    // ---- brute-force oracles -------------------------------------------

    fn lev_oracle(a: &[u8], b: &[u8]) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let sub = lev_oracle(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
        let del = lev_oracle(&a[1..], b) + 1;
        let ins = lev_oracle(a, &b[1..]) + 1;
        sub.min(del).min(ins)
    }

    fn is_subsequence(needle: &[String], hay: &[String]) -> bool {
        let mut it = hay.iter();
        needle.iter().all(|n| it.any(|h| h == n))
    }

    fn lcs_oracle(a: &[String], b: &[String]) -> usize {
        // enumerate every subsequence of a (a is short in tests)
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<String> = (0..a.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| a[i].clone())
                .collect();
            if sub.len() > best && is_subsequence(&sub, b) {
                best = sub.len();
            }
        }
        best
    }

    fn clipped_oracle(hyp: &[String], reference: &[String], n: usize) -> usize {
        // explicit greedy matching against a consumable reference multiset
        let mut ref_grams: Vec<&[String]> = if reference.len() >= n {
            reference.windows(n).collect()
        } else {
            vec![]
        };
        let mut matched = 0;
        if hyp.len() >= n {
            for g in hyp.windows(n) {
                if let Some(pos) = ref_grams.iter().position(|r| *r == g) {
                    ref_grams.swap_remove(pos);
                    matched += 1;
                }
            }
        }
        matched
    }

    fn bleu_oracle(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
        let mut p = 1.0f64;
        for n in 1..=4 {
            let m: usize = hyps.iter().zip(refs).map(|(h, r)| clipped_oracle(h, r, n)).sum();
            let t: usize = hyps.iter().map(|h| h.len().saturating_sub(n - 1)).sum();
            if t == 0 || m == 0 {
                return 0.0;
            }
            p *= (m as f64 / t as f64).powf(0.25);
        }
        let hl: usize = hyps.iter().map(Vec::len).sum();
        let rl: usize = refs.iter().map(Vec::len).sum();
        let bp = if hl < rl { (1.0 - rl as f64 / hl as f64).exp() } else { 1.0 };
        bp * p
    }

    // ---- BLEU ----------------------------------------------------------

    #[test]
    fn bleu_identity_and_disjoint() {
        let h = vec![toks("a b c d e")];
        assert!((bleu4(&h, &h).unwrap().value - 1.0).abs() < 1e-12);

        let r = vec![toks("v w x y z")];
        assert_eq!(bleu4(&h, &r).unwrap().value, 0.0);
    }

    #[test]
    fn bleu_brevity_penalty_hand_case() {
        let h = vec![toks("a b c d")];
        let r = vec![toks("a b c d e")];
        let report = bleu4(&h, &r).unwrap();
        let expect = (1.0f64 - 5.0 / 4.0).exp();
        assert!((report.value - expect).abs() < 1e-12);
        assert!((report.value - 0.7788).abs() < 1e-4);
        assert_eq!(report.count("matched_4"), Some(1.0));
        assert_eq!(report.count("total_4"), Some(1.0));
    }

    #[test]
    fn bleu_matches_oracle_on_random_corpora() {
        let alphabet = ["a", "b", "c", "d"];
        let mut r = rng::stream(21, "bleu", 0);
        for _ in 0..60 {
            let items = r.gen_range(1..5);
            let mut hyps = Vec::new();
            let mut refs = Vec::new();
            for _ in 0..items {
                let hl = r.gen_range(1..9);
                let rl = r.gen_range(1..9);
                hyps.push((0..hl).map(|_| alphabet[r.gen_range(0..4)].to_string()).collect());
                refs.push((0..rl).map(|_| alphabet[r.gen_range(0..4)].to_string()).collect());
            }
            let got = bleu4(&hyps, &refs).unwrap().value;
            let want = bleu_oracle(&hyps, &refs);
            assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
        }
    }

    #[test]
    fn bleu_is_permutation_invariant() {
        let hyps = vec![toks("a b c d"), toks("b b c"), toks("d c b a e")];
        let refs = vec![toks("a b c d"), toks("b c c"), toks("d c a b e")];
        let fwd = bleu4(&hyps, &refs).unwrap().value;
        let hyps_r: Vec<_> = hyps.into_iter().rev().collect();
        let refs_r: Vec<_> = refs.into_iter().rev().collect();
        assert_eq!(fwd, bleu4(&hyps_r, &refs_r).unwrap().value);
    }

    #[test]
    fn bleu_rejects_empty_or_mismatched_sets() {
        assert!(bleu4(&[], &[]).is_err());
        assert!(bleu4(&[toks("a")], &[]).is_err());
    }

    #[test]
    fn smoothed_bleu_is_nonzero_without_four_gram_matches() {
        let h = vec![toks("a b")];
        let r = vec![toks("a b")];
        assert_eq!(bleu4(&h, &r).unwrap().value, 0.0);
        let s = bleu4_with(&h, &r, true).unwrap().value;
        assert!(s > 0.0 && s < 1.0);
    }

    // ---- ROUGE ----------------------------------------------------------

    #[test]
    fn rouge_n_hand_cases() {
        let identical = toks("the cat sat");
        assert!((rouge_n(&identical, &identical, 1).unwrap().value - 1.0).abs() < 1e-12);

        let hyp = toks("the cat");
        let reference = toks("the cat sat on the mat");
        let report = rouge_n(&hyp, &reference, 1).unwrap();
        assert!((report.value - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(report.count("matched"), Some(2.0));
        assert_eq!(report.count("ref_total"), Some(6.0));

        let disjoint = rouge_n(&toks("x y"), &reference, 1).unwrap();
        assert_eq!(disjoint.value, 0.0);
    }

    #[test]
    fn rouge_n_matches_oracle_and_validates_input() {
        let alphabet = ["a", "b", "c", "d"];
        let mut r = rng::stream(22, "rouge", 0);
        for n in 1..=2usize {
            for _ in 0..60 {
                let hyp: Vec<String> = (0..r.gen_range(0..8)).map(|_| alphabet[r.gen_range(0..4)].to_string()).collect();
                let reference: Vec<String> = (0..r.gen_range(n..9)).map(|_| alphabet[r.gen_range(0..4)].to_string()).collect();
                let got = rouge_n(&hyp, &reference, n).unwrap().value;
                let want = clipped_oracle(&hyp, &reference, n) as f64 / (reference.len() - n + 1) as f64;
                assert!((got - want).abs() < 1e-12);
            }
        }
        assert!(rouge_n(&toks("a"), &toks("a"), 3).is_err());
        assert!(rouge_n(&toks("a b"), &toks("a"), 2).is_err());
    }

    #[test]
    fn rouge_l_hand_cases_and_oracle() {
        let identical = toks("a b c");
        let report = rouge_l(&identical, &identical).unwrap();
        assert_eq!(report.value, 1.0);
        assert_eq!(report.count("recall"), Some(1.0));
        assert_eq!(report.count("precision"), Some(1.0));

        let report = rouge_l(&toks("a c"), &toks("a b c")).unwrap();
        assert_eq!(report.count("lcs"), Some(2.0));
        assert!((report.count("recall").unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.count("precision"), Some(1.0));
        assert!((report.value - 0.8).abs() < 1e-12);

        assert_eq!(rouge_l(&toks("x"), &toks("a b")).unwrap().value, 0.0);
        assert!(rouge_l(&toks("a"), &[]).is_err());

        let alphabet = ["a", "b", "c", "d"];
        let mut r = rng::stream(23, "lcs", 0);
        for _ in 0..40 {
            let a: Vec<String> = (0..r.gen_range(0..9)).map(|_| alphabet[r.gen_range(0..4)].to_string()).collect();
            let b: Vec<String> = (0..r.gen_range(1..9)).map(|_| alphabet[r.gen_range(0..4)].to_string()).collect();
            assert_eq!(lcs_len(&a, &b), lcs_oracle(&a, &b));
        }
    }

    // ---- edit distance ----------------------------------------------------

    #[test]
    fn levenshtein_hand_cases() {
        assert_eq!(levenshtein(b"abc", b"abc"), 0);
        assert_eq!(levenshtein(b"", b"abc"), 3);
        assert_eq!(levenshtein(b"abc", b"abd"), 1);
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn cer_and_wer_hand_cases() {
        assert_eq!(cer(b"abc", b"abc").unwrap().value, 0.0);
        let report = cer(b"abd", b"abc").unwrap();
        assert!((report.value - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.count("distance"), Some(1.0));

        assert_eq!(cer(b"", b"abcde").unwrap().value, 1.0);
        assert!(cer(b"abc", b"").is_err());

        let w = wer(&toks("the cat sat"), &toks("the dog sat")).unwrap();
        assert!((w.value - 1.0 / 3.0).abs() < 1e-12);

        // alternative denominator
        let alt = cer_with(b"abcd", b"ab", ErrorRateDenominator::Prediction).unwrap();
        assert!((alt.value - 2.0 / 4.0).abs() < 1e-12);
        assert!(cer_with(b"", b"ab", ErrorRateDenominator::Prediction).is_err());
    }

    proptest! {
        #[test]
        fn levenshtein_is_a_metric(
            a in proptest::collection::vec(0u8..4, 0..8),
            b in proptest::collection::vec(0u8..4, 0..8),
            c in proptest::collection::vec(0u8..4, 0..8),
        ) {
            let ab = levenshtein(&a, &b);
            prop_assert_eq!(ab, lev_oracle(&a, &b));
            prop_assert_eq!(ab, levenshtein(&b, &a));
            prop_assert_eq!(ab == 0, a == b);
            let bc = levenshtein(&b, &c);
            let ac = levenshtein(&a, &c);
            prop_assert!(ac <= ab + bc);
        }
    }
}
