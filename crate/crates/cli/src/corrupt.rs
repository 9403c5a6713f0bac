//! `corrupt`: apply the configured noise to a text file, one line at a time.
//!
//! The substitution and insertion pool is the input file's own vocabulary.
//! Lines the noise leaves untouched (and every blank line) pass through
//! byte-for-byte; `eta = 0` therefore copies the whole file unchanged.

use std::collections::BTreeSet;
use std::path::Path;

use tdcnn_core::corpus::{
    build_vocab, encode_sentence, ids_to_text, perturb_batch, PerturbationSpec, TokenizedSentence,
};

use crate::config::RunConfig;
use crate::error::{Classify, CliError, CliResult};

pub fn run(cfg: &RunConfig, input: &Path, output: &Path) -> CliResult<()> {
    let raw = std::fs::read_to_string(input)
        .map_err(|e| CliError::Data(format!("cannot read {}: {}", input.display(), e)))?;

    if cfg.eta == 0.0 {
        std::fs::write(output, &raw)
            .map_err(|e| CliError::Data(format!("cannot write {}: {}", output.display(), e)))?;
        println!("eta = 0, copied {} unchanged", input.display());
        return Ok(());
    }
    let spec = PerturbationSpec::new(cfg.eta, cfg.noise.clone(), cfg.noise_seed).config_err()?;

    let lines: Vec<&str> = raw.lines().collect();
    let texts: Vec<Vec<String>> = lines.iter().map(|l| cfg.level.tokenize(l)).collect();
    let nonblank: Vec<Vec<String>> = texts.iter().filter(|t| !t.is_empty()).cloned().collect();
    if nonblank.is_empty() {
        return Err(CliError::Data(format!("{} holds no sentences", input.display())));
    }
    let distinct: BTreeSet<&String> = nonblank.iter().flatten().collect();
    let vocab = build_vocab(&nonblank, distinct.len() + 2, 1).data_err()?;

    // each sentence at its own length: no padding, no truncation
    let sentences: Vec<TokenizedSentence> = nonblank
        .iter()
        .map(|t| encode_sentence(&vocab, t, t.len()))
        .collect();
    let noisy = perturb_batch(&sentences, &spec, &vocab).data_err()?;

    let mut out = String::with_capacity(raw.len());
    let mut changed = 0usize;
    let mut row = 0usize;
    for (line, text) in lines.iter().zip(&texts) {
        if text.is_empty() {
            out.push_str(line);
        } else {
            if noisy[row] == sentences[row] {
                out.push_str(line);
            } else {
                out.push_str(&ids_to_text(&noisy[row].ids, &vocab, cfg.level));
                changed += 1;
            }
            row += 1;
        }
        out.push('\n');
    }
    std::fs::write(output, out)
        .map_err(|e| CliError::Data(format!("cannot write {}: {}", output.display(), e)))?;
    println!(
        "perturbed {} of {} sentences at eta = {} into {}",
        changed,
        sentences.len(),
        cfg.eta,
        output.display()
    );
    Ok(())
}
