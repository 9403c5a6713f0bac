//! Evaluation passes shared by the trainers, the acceptance suite, and the
//! CLI's `eval` command. Sequence metrics run over token ids rendered as
//! strings, which is equivalent to scoring the tokens themselves.

use crate::autoencoder::AutoencoderModel;
use crate::corpus::data::strip_pads;
use crate::corpus::perturb::{perturb_batch, PerturbationSpec};
use crate::corpus::sentence::{PaddedBatch, TokenizedSentence};
use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::metrics;
use crate::numeric::tensor::Tensor;
use crate::tasks::heads::{ClassifierHead, SummarizerHead};

/// Inference batch width: keeps peak memory flat on large eval sets.
const EVAL_CHUNK: usize = 64;

fn ids_to_strings(ids: &[usize]) -> Vec<String> {
    ids.iter().map(|id| id.to_string()).collect()
}

fn chunked<'a>(data: &'a [TokenizedSentence]) -> impl Iterator<Item = &'a [TokenizedSentence]> {
    data.chunks(EVAL_CHUNK)
}

fn batch_of(chunk: &[TokenizedSentence]) -> Result<PaddedBatch> {
    PaddedBatch::new(chunk.to_vec())
}

/// Greedy reconstructions, one id row per sentence, pads kept.
pub fn reconstructions(model: &AutoencoderModel, data: &[TokenizedSentence]) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in chunked(data) {
        out.extend(model.reconstruct(&batch_of(chunk)?)?);
    }
    Ok(out)
}

/// Corpus BLEU-4 of pad-stripped reconstructions against the originals.
pub fn reconstruction_bleu(model: &AutoencoderModel, data: &[TokenizedSentence]) -> Result<f64> {
    let recon = reconstructions(model, data)?;
    let hyps: Vec<Vec<String>> = recon.iter().map(|r| ids_to_strings(&strip_pads(r))).collect();
    let refs: Vec<Vec<String>> = data.iter().map(|s| ids_to_strings(s.non_pad())).collect();
    Ok(metrics::bleu4(&hyps, &refs)?.value)
}

/// Fraction of non-pad positions reconstructed to the exact original id.
pub fn token_accuracy(model: &AutoencoderModel, data: &[TokenizedSentence]) -> Result<f64> {
    let (hits, totals) = per_position_counts(model, data)?;
    let h: usize = hits.iter().sum();
    let n: usize = totals.iter().sum();
    if n == 0 {
        return Err(Error::InvalidData("no non-pad positions to score".to_string()));
    }
    Ok(h as f64 / n as f64)
}

/// Exact-match counts per sentence position, over non-pad positions only.
/// `totals[j]` is the number of sentences reaching position `j`.
pub fn per_position_counts(model: &AutoencoderModel, data: &[TokenizedSentence]) -> Result<(Vec<usize>, Vec<usize>)> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let t = data[0].ids.len();
    let mut hits = vec![0usize; t];
    let mut totals = vec![0usize; t];
    let recon = reconstructions(model, data)?;
    for (s, r) in data.iter().zip(&recon) {
        for j in 0..s.original_length {
            totals[j] += 1;
            if r[j] == s.ids[j] {
                hits[j] += 1;
            }
        }
    }
    Ok((hits, totals))
}

/// Corrupt `clean` with `spec`, run the corrections, and report corpus-level
/// CER: summed edit distance over summed truth length.
pub fn correction_cer(
    model: &AutoencoderModel,
    clean: &[TokenizedSentence],
    spec: &PerturbationSpec,
    vocab: &Vocabulary,
) -> Result<f64> {
    if clean.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut distance = 0usize;
    let mut truth_len = 0usize;
    for chunk in chunked(clean) {
        let noisy = perturb_batch(chunk, spec, vocab)?;
        let corrected = model.reconstruct(&PaddedBatch::new(noisy)?)?;
        for (s, c) in chunk.iter().zip(&corrected) {
            distance += metrics::levenshtein(&strip_pads(c), s.non_pad());
            truth_len += s.original_length;
        }
    }
    if truth_len == 0 {
        return Err(Error::InvalidData("empty truth in CER".to_string()));
    }
    Ok((distance as f64 / truth_len as f64).min(1.0))
}

/// Latent codes for a labeled set, chunked: `[N, p_L]`.
fn encode_all(model: &AutoencoderModel, data: &[TokenizedSentence]) -> Result<Tensor> {
    let mut out = Tensor::zeros(&[data.len(), model.latent_dim()]);
    let mut row = 0;
    for chunk in chunked(data) {
        let z = model.encode(&batch_of(chunk)?)?;
        let width = model.latent_dim();
        let n = chunk.len();
        out.data_mut()[row * width..(row + n) * width].copy_from_slice(z.data());
        row += n;
    }
    Ok(out)
}

/// Classification accuracy of the head over encoded sentences.
pub fn classifier_accuracy(
    model: &AutoencoderModel,
    head: &ClassifierHead,
    data: &[(TokenizedSentence, usize)],
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sentences: Vec<TokenizedSentence> = data.iter().map(|(s, _)| s.clone()).collect();
    let z = encode_all(model, &sentences)?;
    let preds = head.predict(&z)?;
    let hits = preds.iter().zip(data).filter(|(p, (_, y))| *p == y).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Mean ROUGE-L F over greedy titles; pairs are (title, abstract).
pub fn summary_rouge_l(
    model: &AutoencoderModel,
    head: &SummarizerHead,
    pairs: &[(TokenizedSentence, TokenizedSentence)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let abstracts: Vec<TokenizedSentence> = pairs.iter().map(|(_, a)| a.clone()).collect();
    let mut total = 0.0;
    let mut offset = 0;
    for chunk in chunked(&abstracts) {
        let z = model.encode(&batch_of(chunk)?)?;
        let titles = head.titles(model, &z)?;
        for (i, hyp) in titles.iter().enumerate() {
            let reference = ids_to_strings(pairs[offset + i].0.non_pad());
            let hypothesis = ids_to_strings(&strip_pads(hyp));
            total += metrics::rouge_l(&hypothesis, &reference)?.value;
        }
        offset += chunk.len();
    }
    Ok(total / pairs.len() as f64)
}
