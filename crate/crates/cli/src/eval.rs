//! `eval`: score a hypothesis file against a reference file and emit a
//! ScoreReport CSV.
//!
//! BLEU is corpus-level. ROUGE variants are scored per line pair and the
//! values macro-averaged, with counts summed. CER and WER are
//! micro-aggregated: total edit distance over total reference length. BLEU,
//! ROUGE and WER always run over word tokens and CER over characters,
//! matching how the metrics are defined.

use std::path::Path;

use tdcnn_core::corpus::Level;
use tdcnn_core::metrics::{self, ScoreReport};

use crate::error::{CliError, CliResult};
use crate::files::{read_lines, write_lines};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Bleu,
    Rouge1,
    Rouge2,
    RougeL,
    Cer,
    Wer,
}

const ALL: [Metric; 6] = [Metric::Bleu, Metric::Rouge1, Metric::Rouge2, Metric::RougeL, Metric::Cer, Metric::Wer];

fn select(name: &str) -> CliResult<Vec<Metric>> {
    Ok(match name {
        "all" => ALL.to_vec(),
        "bleu" => vec![Metric::Bleu],
        "rouge1" => vec![Metric::Rouge1],
        "rouge2" => vec![Metric::Rouge2],
        "rougel" => vec![Metric::RougeL],
        "cer" => vec![Metric::Cer],
        "wer" => vec![Metric::Wer],
        other => {
            return Err(CliError::Config(format!(
                "unknown metric {:?} (expected all, bleu, rouge1, rouge2, rougel, cer, or wer)",
                other
            )))
        }
    })
}

/// Per-pair reports folded into one: mean value, summed counts.
fn macro_mean(metric: &str, reports: Vec<ScoreReport>) -> ScoreReport {
    let n = reports.len().max(1) as f64;
    let value = reports.iter().map(|r| r.value).sum::<f64>() / n;
    let mut counts: Vec<(String, f64)> = Vec::new();
    for r in &reports {
        for (name, v) in &r.counts {
            match counts.iter_mut().find(|(k, _)| k == name) {
                Some((_, total)) => *total += v,
                None => counts.push((name.clone(), *v)),
            }
        }
    }
    counts.push(("pairs".to_string(), reports.len() as f64));
    ScoreReport { metric: metric.to_string(), value, counts }
}

fn per_pair<F>(metric: &str, hyps: &[Vec<String>], refs: &[Vec<String>], score: F) -> CliResult<ScoreReport>
where
    F: Fn(&[String], &[String]) -> tdcnn_core::Result<ScoreReport>,
{
    let mut reports = Vec::with_capacity(hyps.len());
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        reports.push(score(h, r).map_err(|e| CliError::Data(format!("line {}: {}", i + 1, e)))?);
    }
    Ok(macro_mean(metric, reports))
}

/// Micro-aggregated error rate: sum of per-pair distances over the sum of
/// per-pair denominators (capped at 1 like the per-pair reports).
fn micro_error_rate<F>(metric: &str, hyps: &[Vec<String>], refs: &[Vec<String>], score: F) -> CliResult<ScoreReport>
where
    F: Fn(&[String], &[String]) -> tdcnn_core::Result<ScoreReport>,
{
    let mut distance = 0.0;
    let mut denominator = 0.0;
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        let rep = score(h, r).map_err(|e| CliError::Data(format!("line {}: {}", i + 1, e)))?;
        distance += rep.count("distance").unwrap_or(0.0);
        denominator += rep.count("denominator").unwrap_or(0.0);
    }
    let value = if denominator > 0.0 { (distance / denominator).min(1.0) } else { 0.0 };
    Ok(ScoreReport {
        metric: metric.to_string(),
        value,
        counts: vec![("distance".to_string(), distance), ("denominator".to_string(), denominator)],
    })
}

pub fn run(metric: &str, hyp_path: &Path, ref_path: &Path, out: Option<&Path>) -> CliResult<()> {
    let chosen = select(metric)?;
    let hyp_lines = read_lines(hyp_path)?;
    let ref_lines = read_lines(ref_path)?;
    if hyp_lines.len() != ref_lines.len() {
        return Err(CliError::Data(format!(
            "{} hypothesis lines vs {} reference lines",
            hyp_lines.len(),
            ref_lines.len()
        )));
    }
    if hyp_lines.is_empty() {
        return Err(CliError::Data("no lines to score".to_string()));
    }
    let words = |lines: &[String]| -> Vec<Vec<String>> {
        lines.iter().map(|l| Level::Word.tokenize(l)).collect()
    };
    let chars = |lines: &[String]| -> Vec<Vec<String>> {
        lines.iter().map(|l| Level::Char.tokenize(l)).collect()
    };
    let (hyp_w, ref_w) = (words(&hyp_lines), words(&ref_lines));

    let mut reports = Vec::with_capacity(chosen.len());
    for m in chosen {
        let report = match m {
            Metric::Bleu => metrics::bleu4(&hyp_w, &ref_w)
                .map_err(|e| CliError::Data(e.to_string()))?,
            Metric::Rouge1 => per_pair("rouge1", &hyp_w, &ref_w, |h, r| metrics::rouge_n(h, r, 1))?,
            Metric::Rouge2 => per_pair("rouge2", &hyp_w, &ref_w, |h, r| metrics::rouge_n(h, r, 2))?,
            Metric::RougeL => per_pair("rougeL", &hyp_w, &ref_w, metrics::rouge_l)?,
            Metric::Cer => {
                let (hyp_c, ref_c) = (chars(&hyp_lines), chars(&ref_lines));
                micro_error_rate("cer", &hyp_c, &ref_c, |h, r| metrics::cer(h, r))?
            }
            Metric::Wer => micro_error_rate("wer", &hyp_w, &ref_w, |h, r| metrics::wer(h, r))?,
        };
        reports.push(report);
    }

    let mut lines = vec!["metric,value,counts".to_string()];
    for r in &reports {
        let counts = r
            .counts
            .iter()
            .map(|(k, v)| format!("{}={}", k, v))
            .collect::<Vec<_>>()
            .join(";");
        lines.push(format!("{},{},{}", r.metric, r.value, counts));
    }
    write_lines(out, &lines)?;
    if let Some(p) = out {
        println!("wrote {}", p.display());
    }
    Ok(())
}
