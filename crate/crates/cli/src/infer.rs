//! Inference commands over a trained checkpoint: `reconstruct`, `correct`,
//! `classify`, and `summarize`.

use std::path::Path;

use tdcnn_core::autoencoder::AutoencoderModel;
use tdcnn_core::corpus::{
    encode_sentence, ids_to_text, read_corpus, read_labeled_tsv, PaddedBatch, TokenizedSentence,
    Vocabulary,
};
use tdcnn_core::tasks::{ClassifierHead, SummarizerHead};
use tdcnn_core::Tensor;

use crate::config::RunConfig;
use crate::error::{Classify, CliError, CliResult};
use crate::files::{
    check_config_compat, load_checkpoint_and_vocab, read_data, read_lines, resolve_checkpoint,
    write_lines,
};

const INFER_BATCH: usize = 64;

/// Checkpoint and vocabulary flags shared by every inference command.
pub struct ModelFlags<'a> {
    pub checkpoint: Option<&'a Path>,
    pub vocab: Option<&'a Path>,
}

fn load_model(
    cfg: &RunConfig,
    flags: &ModelFlags,
) -> CliResult<(AutoencoderModel, Vocabulary, tdcnn_core::numeric::checkpoint::Checkpoint)> {
    let path = resolve_checkpoint(flags.checkpoint, cfg)?;
    let (ckpt, vocab) = load_checkpoint_and_vocab(&path, flags.vocab)?;
    check_config_compat(cfg, &ckpt)?;
    let model = AutoencoderModel::from_checkpoint(&ckpt).ckpt_err()?;
    println!("loaded {}", path.display());
    Ok((model, vocab, ckpt))
}

fn read_sentences(path: &Path, cfg: &RunConfig) -> CliResult<Vec<Vec<String>>> {
    let rows = read_data(path, |p| read_corpus(p, cfg.level))?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} holds no sentences", path.display())));
    }
    Ok(rows)
}

fn encode_clipped(
    vocab: &Vocabulary,
    texts: &[Vec<String>],
    t: usize,
) -> (Vec<TokenizedSentence>, usize) {
    let truncated = texts.iter().filter(|s| s.len() > t).count();
    let encoded = texts.iter().map(|s| encode_sentence(vocab, s, t)).collect();
    (encoded, truncated)
}

fn warn_truncated(truncated: usize, t: usize) {
    if truncated > 0 {
        eprintln!("note: {} input lines longer than the model width {} were truncated", truncated, t);
    }
}

/// Shared body of `reconstruct` and `correct`: encode, decode, greedy
/// readout, pads stripped, one output line per input line.
pub fn reconstruct(
    cfg: &RunConfig,
    flags: &ModelFlags,
    input: &Path,
    output: Option<&Path>,
) -> CliResult<()> {
    let (model, vocab, _) = load_model(cfg, flags)?;
    let texts = read_sentences(input, cfg)?;
    let (sentences, truncated) = encode_clipped(&vocab, &texts, model.t);
    warn_truncated(truncated, model.t);

    let mut lines = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(INFER_BATCH) {
        let batch = PaddedBatch::new(chunk.to_vec()).data_err()?;
        for row in model.reconstruct(&batch).data_err()? {
            lines.push(ids_to_text(&row, &vocab, cfg.level));
        }
    }
    write_lines(output, &lines)?;
    if let Some(p) = output {
        println!("wrote {} lines to {}", lines.len(), p.display());
    }
    Ok(())
}

/// Latent codes `[N, p_L]` for a sentence list, chunked.
fn encode_latents(model: &AutoencoderModel, sentences: &[TokenizedSentence]) -> CliResult<Tensor> {
    let width = model.latent_dim();
    let mut out = Tensor::zeros(&[sentences.len(), width]);
    let mut row = 0;
    for chunk in sentences.chunks(INFER_BATCH) {
        let batch = PaddedBatch::new(chunk.to_vec()).data_err()?;
        let z = model.encode(&batch).data_err()?;
        out.data_mut()[row * width..(row + chunk.len()) * width].copy_from_slice(z.data());
        row += chunk.len();
    }
    Ok(out)
}

/// Predict one label per input row and cross-check the printed accuracy
/// against the file actually written.
pub fn classify(cfg: &RunConfig, flags: &ModelFlags, input: &Path, output: &Path) -> CliResult<()> {
    let (model, vocab, ckpt) = load_model(cfg, flags)?;
    let head = ClassifierHead::from_checkpoint(&ckpt).ckpt_err()?;

    let rows = read_data(input, |p| read_labeled_tsv(p, cfg.level))?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} holds no rows", input.display())));
    }
    let texts: Vec<Vec<String>> = rows.iter().map(|(_, text)| text.clone()).collect();
    let (sentences, truncated) = encode_clipped(&vocab, &texts, model.t);
    warn_truncated(truncated, model.t);

    let z = encode_latents(&model, &sentences)?;
    let preds = head.predict(&z).data_err()?;
    let lines: Vec<String> = preds.iter().map(usize::to_string).collect();
    write_lines(Some(output), &lines)?;
    println!("wrote {} predictions to {}", lines.len(), output.display());

    // accuracy recomputed from the emitted file, not from memory
    let written = read_lines(output)?;
    if written.len() != rows.len() {
        return Err(CliError::Data(format!(
            "{} holds {} lines, expected {}",
            output.display(),
            written.len(),
            rows.len()
        )));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for ((label, _), line) in rows.iter().zip(&written) {
        if let Some(y) = label {
            total += 1;
            if line.trim() == y.to_string() {
                hits += 1;
            }
        }
    }
    if total > 0 {
        println!("accuracy {:.4} over {} labeled rows", hits as f64 / total as f64, total);
    }
    Ok(())
}

/// One generated title per input abstract.
pub fn summarize(
    cfg: &RunConfig,
    flags: &ModelFlags,
    input: &Path,
    output: Option<&Path>,
) -> CliResult<()> {
    let (model, vocab, ckpt) = load_model(cfg, flags)?;
    let head = SummarizerHead::from_checkpoint(&ckpt).ckpt_err()?;
    let texts = read_sentences(input, cfg)?;
    let (sentences, truncated) = encode_clipped(&vocab, &texts, model.t);
    warn_truncated(truncated, model.t);

    let mut lines = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(INFER_BATCH) {
        let batch = PaddedBatch::new(chunk.to_vec()).data_err()?;
        let z = model.encode(&batch).data_err()?;
        for title in head.titles(&model, &z).data_err()? {
            lines.push(ids_to_text(&title, &vocab, cfg.level));
        }
    }
    write_lines(output, &lines)?;
    if let Some(p) = output {
        println!("wrote {} titles to {}", lines.len(), p.display());
    }
    Ok(())
}
