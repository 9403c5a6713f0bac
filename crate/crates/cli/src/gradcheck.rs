//! `gradcheck`: build the configured architecture at desk scale and compare
//! its analytic gradients against central differences.

use rand::Rng;

use tdcnn_core::autoencoder::AutoencoderModel;
use tdcnn_core::corpus::{PaddedBatch, TokenizedSentence};
use tdcnn_core::numeric::{check_gradients, GradCheckConfig};
use tdcnn_core::rng;

use crate::config::RunConfig;
use crate::error::{Classify, CliError, CliResult};

const GRADCHECK_VOCAB: usize = 12;
const COORDS_PER_LEAF: usize = 8;

pub fn run(cfg: &RunConfig, tolerance: f64) -> CliResult<()> {
    if !(tolerance > 0.0) {
        return Err(CliError::Config(format!("tolerance {} must be positive", tolerance)));
    }
    let t_request = if cfg.max_len > 0 { cfg.max_len } else { 20 };
    let model =
        AutoencoderModel::new(cfg.model_spec(t_request), GRADCHECK_VOCAB, cfg.seed).config_err()?;

    // two synthetic rows, the second shorter so pad handling is exercised
    let mut r = rng::stream(cfg.seed, "gradcheck", 0);
    let t = model.t;
    let full: Vec<usize> = (0..t).map(|_| 2 + r.gen_range(0..GRADCHECK_VOCAB - 2)).collect();
    let short_len = (t / 2).max(1);
    let mut short: Vec<usize> = (0..short_len).map(|_| 2 + r.gen_range(0..GRADCHECK_VOCAB - 2)).collect();
    short.resize(t, 0);
    let batch = PaddedBatch::new(vec![
        TokenizedSentence { ids: full, original_length: t },
        TokenizedSentence { ids: short, original_length: short_len },
    ])
    .data_err()?;

    let mut fwd = model.reconstruction_graph(&batch, &batch, cfg.mask_pad).data_err()?;
    let gc = GradCheckConfig { delta: 1e-5, coords_per_leaf: COORDS_PER_LEAF, seed: cfg.seed };
    let report = check_gradients(&mut fwd.graph, fwd.loss, &gc).data_err()?;

    println!(
        "checked {} coordinates ({} skipped at relu kinks), max relative error {:.3e}",
        report.checks.len(),
        report.skipped.len(),
        report.max_rel_err
    );
    if let Some(w) = report.worst() {
        println!(
            "worst: {} coordinate {}, analytic {:.6e} vs numeric {:.6e}",
            w.param, w.coord, w.analytic, w.numeric
        );
    }
    if report.max_rel_err > tolerance {
        return Err(CliError::Failed(format!(
            "gradient check failed: max relative error {:.3e} exceeds tolerance {:.1e}",
            report.max_rel_err, tolerance
        )));
    }
    println!("gradient check passed at tolerance {:.1e}", tolerance);
    Ok(())
}
