//! Training loops: plain reconstruction, denoising, the annealed
//! semi-supervised joint objective, and summarization.
//!
//! Every stochastic choice comes from [`crate::rng::stream`] keyed by the
//! absolute step number, so a run resumed from a checkpoint consumes exactly
//! the streams the unbroken run would have. Combined with the f32 snap of
//! parameters and moments right after each checkpoint write, resumed and
//! unbroken trajectories are bit-identical.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::autoencoder::AutoencoderModel;
use crate::corpus::data::strip_pads;
use crate::corpus::perturb::{perturb_batch, PerturbationSpec};
use crate::corpus::sentence::{PaddedBatch, TokenizedSentence};
use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::numeric::checkpoint::{write_checkpoint, Checkpoint};
use crate::numeric::graph::Graph;
use crate::numeric::kernels;
use crate::numeric::optim::Optimizer;
use crate::rng;
use crate::tasks::eval;
use crate::tasks::heads::{ClassifierHead, SummarizerHead};
use crate::tasks::schedule::AnnealSchedule;

/// Loop controls shared by every task.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Exclude pad positions from Eq. (2). Off by default: the plain
    /// reading of the objective sums over every position, pads included.
    pub mask_pad: bool,
    /// Loss-row cadence; the first and final steps always log.
    pub log_every: u64,
    /// Validation cadence; 0 evaluates only at the final step.
    pub val_every: u64,
    /// Checkpoint cadence; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(steps: u64, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            steps,
            batch_size,
            seed,
            mask_pad: false,
            log_every: 1,
            val_every: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidData("training needs positive steps and batch size".to_string()));
        }
        Ok(())
    }

    fn logs_at(&self, done: u64, start: u64) -> bool {
        done == start + 1 || done == self.steps || (self.log_every > 0 && done % self.log_every == 0)
    }

    fn evals_at(&self, done: u64) -> bool {
        done == self.steps || (self.val_every > 0 && done % self.val_every == 0)
    }

    fn checkpoints_at(&self, done: u64) -> bool {
        self.checkpoint_dir.is_some()
            && (done == self.steps || (self.checkpoint_every > 0 && done % self.checkpoint_every == 0))
    }
}

/// One curves row. `step` counts completed optimizer steps (1-based);
/// `alpha` is the mixing weight used in that step.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub alpha: f64,
    pub loss_ae: f64,
    pub loss_sup: Option<f64>,
    pub val_metric: Option<f64>,
}

pub const CURVES_HEADER: &str = "step,alpha,loss_ae,loss_sup,val_metric";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    /// Write curves CSV; `append` continues an existing file (resume) and
    /// only then omits the header.
    pub fn write_csv(&self, path: &Path, append: bool) -> Result<()> {
        let have_header = append && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        let file = if append {
            OpenOptions::new().create(true).append(true).open(path)?
        } else {
            File::create(path)?
        };
        let mut w = BufWriter::new(file);
        if !have_header {
            writeln!(w, "{}", CURVES_HEADER)?;
        }
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                row.step,
                row.alpha,
                row.loss_ae,
                row.loss_sup.map(|v| v.to_string()).unwrap_or_default(),
                row.val_metric.map(|v| v.to_string()).unwrap_or_default()
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

// ---- joint objective -----------------------------------------------------

/// Eq. (3) evaluated once, dropout-free: `total = alpha * reconstruction
/// + supervised`, the reconstruction NLL running over labeled and unlabeled
/// rows together and the cross-entropy over labeled rows only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub supervised: f64,
}

pub fn semi_supervised_loss(
    model: &AutoencoderModel,
    head: &ClassifierHead,
    labeled: Option<(&PaddedBatch, &[usize])>,
    unlabeled: Option<&PaddedBatch>,
    alpha: f64,
    mask_pad: bool,
) -> Result<SemiLoss> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidData(format!("alpha {} must be positive", alpha)));
    }
    if let Some((batch, labels)) = labeled {
        if batch.len() != labels.len() {
            return Err(Error::shape("semi_supervised_loss", "labels do not match batch".to_string()));
        }
    }
    let combined = concat_batches(labeled.map(|(b, _)| b), unlabeled)?;
    let z = model.encode(&combined)?;
    let xhat = model.decode(&z, combined.t)?;
    let logp = model.readout_logprobs(&xhat)?;
    let reconstruction = crate::autoencoder::reconstruction_loss(&logp, &combined, mask_pad)?;

    let supervised = match labeled {
        Some((batch, labels)) => {
            let z = model.encode(batch)?;
            let logits = head.logits(&z)?;
            let logp = kernels::log_softmax_temperature(&logits, 1.0)?;
            let mut total = 0.0;
            for (b, &y) in labels.iter().enumerate() {
                if y >= head.classes {
                    return Err(Error::InvalidData(format!("label {} outside {} classes", y, head.classes)));
                }
                total -= logp.at2(b, y);
            }
            total / labels.len() as f64
        }
        None => 0.0,
    };
    Ok(SemiLoss { total: alpha * reconstruction + supervised, reconstruction, supervised })
}

fn concat_batches(a: Option<&PaddedBatch>, b: Option<&PaddedBatch>) -> Result<PaddedBatch> {
    match (a, b) {
        (Some(x), Some(y)) => {
            if x.t != y.t {
                return Err(Error::shape("concat_batches", format!("widths {} vs {}", x.t, y.t)));
            }
            let mut ids = x.ids.clone();
            ids.extend(y.ids.iter().cloned());
            let mut lengths = x.lengths.clone();
            lengths.extend(&y.lengths);
            Ok(PaddedBatch { ids, lengths, t: x.t })
        }
        (Some(x), None) => Ok(x.clone()),
        (None, Some(y)) => Ok(y.clone()),
        (None, None) => Err(Error::InvalidData("both batches empty".to_string())),
    }
}

// ---- shared loop pieces ----------------------------------------------------

fn draw<T: Clone>(data: &[T], n: usize, seed: u64, tag: &str, step: u64) -> Vec<T> {
    let mut r = rng::stream(seed, tag, step);
    (0..n).map(|_| data[r.gen_range(0..data.len())].clone()).collect()
}

fn check_widths(data: &[TokenizedSentence], t: usize, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(s) = data.iter().find(|s| s.ids.len() != t) {
        return Err(Error::InvalidData(format!(
            "{} row has padded width {}, model expects {}",
            what,
            s.ids.len(),
            t
        )));
    }
    Ok(())
}

fn checkpoint_file(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint-{:06}.ckpt", step))
}

/// Highest-numbered `checkpoint-NNNNNN.ckpt` in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<(u64, PathBuf)>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let step = name
            .to_str()
            .and_then(|n| n.strip_prefix("checkpoint-"))
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(step) = step {
            if best.as_ref().map_or(true, |(b, _)| step > *b) {
                best = Some((step, entry.path()));
            }
        }
    }
    Ok(best)
}

fn train_hyper(
    mut hyper: Vec<(String, String)>,
    head: Vec<(String, String)>,
    task: &str,
    step: u64,
    cfg: &TrainConfig,
) -> Vec<(String, String)> {
    hyper.extend(head);
    hyper.push(("task".to_string(), task.to_string()));
    hyper.push(("step".to_string(), step.to_string()));
    hyper.push(("mask_pad".to_string(), cfg.mask_pad.to_string()));
    hyper
}

// ---- reconstruction tasks --------------------------------------------------

/// Plain sequence autoencoder: input equals target.
pub fn train_autoencoder(
    model: &mut AutoencoderModel,
    opt: &mut Optimizer,
    train: &[TokenizedSentence],
    val: Option<&[TokenizedSentence]>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_reconstruction(model, opt, train, val, None, cfg, "ae")
}

/// Denoising autoencoder: every step freshly perturbs its batch and the
/// clean sequence stays the Eq. (2) target.
pub fn train_denoiser(
    model: &mut AutoencoderModel,
    opt: &mut Optimizer,
    train: &[TokenizedSentence],
    val: Option<&[TokenizedSentence]>,
    spec: &PerturbationSpec,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_reconstruction(model, opt, train, val, Some((spec, vocab)), cfg, "denoise")
}

fn train_reconstruction(
    model: &mut AutoencoderModel,
    opt: &mut Optimizer,
    train: &[TokenizedSentence],
    val: Option<&[TokenizedSentence]>,
    noise: Option<(&PerturbationSpec, &Vocabulary)>,
    cfg: &TrainConfig,
    task: &str,
) -> Result<TrainLog> {
    cfg.validate()?;
    check_widths(train, model.t, "train")?;
    let mut log = TrainLog::default();
    let start = opt.step_count;
    for step in start..cfg.steps {
        let sents = draw(train, cfg.batch_size, cfg.seed, "batch", step);
        let target = PaddedBatch::new(sents.clone())?;
        let input = match noise {
            Some((spec, vocab)) => {
                // fresh noise per step, keyed by the spec seed only
                let child = rng::stream(spec.seed, "noise-step", step).gen();
                PaddedBatch::new(perturb_batch(&sents, &spec.reseeded(child), vocab)?)?
            }
            None => target.clone(),
        };
        let mut fwd = model.reconstruction_graph(&input, &target, cfg.mask_pad)?;
        let loss_ae = fwd.graph.value(fwd.loss).item();
        fwd.graph.backward(fwd.loss)?;
        {
            let mut params = model.params_mut();
            fwd.graph.accumulate_param_grads(&mut params)?;
            opt.step(&mut params)?;
        }

        let done = step + 1;
        if cfg.logs_at(done, start) {
            let val_metric = if cfg.evals_at(done) {
                match (val, noise) {
                    (Some(v), None) => Some(eval::reconstruction_bleu(model, v)?),
                    (Some(v), Some((spec, vocab))) => Some(eval::correction_cer(model, v, spec, vocab)?),
                    (None, _) => None,
                }
            } else {
                None
            };
            log.rows.push(LogRow { step: done, alpha: 1.0, loss_ae, loss_sup: None, val_metric });
        }
        if cfg.checkpoints_at(done) {
            let dir = cfg.checkpoint_dir.as_deref().expect("checked by checkpoints_at");
            let hyper = train_hyper(model.hyper(), Vec::new(), task, done, cfg);
            let ckpt = Checkpoint::new(hyper, &model.params(), Some(opt));
            write_checkpoint(&checkpoint_file(dir, done), &ckpt)?;
            model.round_params_to_f32();
            opt.round_moments_to_f32();
        }
    }
    Ok(log)
}

// ---- semi-supervised classification ----------------------------------------

/// Joint objective of Eq. (3): per step one labeled and one unlabeled batch,
/// reconstruction over both scaled by the annealed alpha, cross-entropy over
/// the labeled batch with dropout on the head.
pub fn train_semisupervised(
    model: &mut AutoencoderModel,
    head: &mut ClassifierHead,
    opt: &mut Optimizer,
    labeled: &[(TokenizedSentence, usize)],
    unlabeled: &[TokenizedSentence],
    val: Option<&[(TokenizedSentence, usize)]>,
    schedule: &AnnealSchedule,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sentences: Vec<TokenizedSentence> = labeled.iter().map(|(s, _)| s.clone()).collect();
    check_widths(&sentences, model.t, "labeled")?;
    if !unlabeled.is_empty() {
        check_widths(unlabeled, model.t, "unlabeled")?;
    }
    if let Some((_, y)) = labeled.iter().find(|(_, y)| *y >= head.classes) {
        return Err(Error::InvalidData(format!("label {} outside {} classes", y, head.classes)));
    }

    let mut log = TrainLog::default();
    let start = opt.step_count;
    for step in start..cfg.steps {
        let alpha = schedule.alpha_at(step);
        let lab = draw(labeled, cfg.batch_size, cfg.seed, "batch-labeled", step);
        let labels: Vec<usize> = lab.iter().map(|(_, y)| *y).collect();
        let lab_batch = PaddedBatch::new(lab.into_iter().map(|(s, _)| s).collect())?;
        let unlab_batch = if unlabeled.is_empty() {
            None
        } else {
            Some(PaddedBatch::new(draw(unlabeled, cfg.batch_size, cfg.seed, "batch-unlabeled", step))?)
        };
        let combined = concat_batches(Some(&lab_batch), unlab_batch.as_ref())?;

        let mut fwd = model.reconstruction_graph(&combined, &combined, cfg.mask_pad)?;
        let loss_ae = fwd.graph.value(fwd.loss).item();
        let scaled = fwd.graph.scale(fwd.loss, alpha)?;
        fwd.graph.backward(scaled)?;

        let mut sup_graph = Graph::new();
        let latent = model.encode_nodes(&mut sup_graph, &lab_batch)?;
        let latent2d = sup_graph.reshape(latent, &[lab_batch.len(), model.latent_dim()])?;
        let mask = head.dropout_mask(lab_batch.len(), &mut rng::stream(cfg.seed, "dropout", step));
        let logits = head.logits_nodes(&mut sup_graph, latent2d, Some(mask))?;
        let sup_loss = head.loss_nodes(&mut sup_graph, logits, &labels)?;
        let loss_sup = sup_graph.value(sup_loss).item();
        sup_graph.backward(sup_loss)?;

        {
            let mut params = model.params_mut();
            params.extend(head.params_mut());
            fwd.graph.accumulate_param_grads(&mut params)?;
            sup_graph.accumulate_param_grads(&mut params)?;
            opt.step(&mut params)?;
        }

        let done = step + 1;
        if cfg.logs_at(done, start) {
            let val_metric = if cfg.evals_at(done) {
                match val {
                    Some(v) => Some(eval::classifier_accuracy(model, head, v)?),
                    None => None,
                }
            } else {
                None
            };
            log.rows.push(LogRow { step: done, alpha, loss_ae, loss_sup: Some(loss_sup), val_metric });
        }
        if cfg.checkpoints_at(done) {
            let dir = cfg.checkpoint_dir.as_deref().expect("checked by checkpoints_at");
            let hyper = train_hyper(model.hyper(), head.hyper(), "semi", done, cfg);
            let mut params = model.params();
            params.extend(head.params());
            write_checkpoint(&checkpoint_file(dir, done), &Checkpoint::new(hyper, &params, Some(opt)))?;
            model.round_params_to_f32();
            head.round_params_to_f32();
            opt.round_moments_to_f32();
        }
    }
    Ok(log)
}

// ---- summarization -----------------------------------------------------------

/// Title generation with the same joint objective; `pairs` are (title,
/// abstract) with titles padded to the head width and abstracts to the
/// model width. Unlabeled abstracts only feed the reconstruction term.
pub fn train_summarizer(
    model: &mut AutoencoderModel,
    head: &mut SummarizerHead,
    opt: &mut Optimizer,
    pairs: &[(TokenizedSentence, TokenizedSentence)],
    unlabeled: &[TokenizedSentence],
    val: Option<&[(TokenizedSentence, TokenizedSentence)]>,
    schedule: &AnnealSchedule,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if head.latent != model.latent_dim() || head.embed_dim != model.embed_dim() {
        return Err(Error::shape("train_summarizer", "head dims do not match the model".to_string()));
    }
    let titles: Vec<TokenizedSentence> = pairs.iter().map(|(t, _)| t.clone()).collect();
    let abstracts: Vec<TokenizedSentence> = pairs.iter().map(|(_, a)| a.clone()).collect();
    check_widths(&titles, head.t_title, "title")?;
    check_widths(&abstracts, model.t, "abstract")?;
    if !unlabeled.is_empty() {
        check_widths(unlabeled, model.t, "unlabeled")?;
    }

    let mut log = TrainLog::default();
    let start = opt.step_count;
    for step in start..cfg.steps {
        let alpha = schedule.alpha_at(step);
        let batch_pairs = draw(pairs, cfg.batch_size, cfg.seed, "batch-pairs", step);
        let title_batch = PaddedBatch::new(batch_pairs.iter().map(|(t, _)| t.clone()).collect())?;
        let abstract_batch = PaddedBatch::new(batch_pairs.into_iter().map(|(_, a)| a).collect())?;
        let unlab_batch = if unlabeled.is_empty() {
            None
        } else {
            Some(PaddedBatch::new(draw(unlabeled, cfg.batch_size, cfg.seed, "batch-unlabeled", step))?)
        };
        let combined = concat_batches(Some(&abstract_batch), unlab_batch.as_ref())?;

        let mut fwd = model.reconstruction_graph(&combined, &combined, cfg.mask_pad)?;
        let loss_ae = fwd.graph.value(fwd.loss).item();
        let scaled = fwd.graph.scale(fwd.loss, alpha)?;
        fwd.graph.backward(scaled)?;

        let mut sup_graph = Graph::new();
        let latent = model.encode_nodes(&mut sup_graph, &abstract_batch)?;
        let xhat = head.decode_nodes(&mut sup_graph, latent)?;
        let logp = model.readout_nodes(&mut sup_graph, xhat)?;
        let sup_loss = model.loss_nodes(&mut sup_graph, logp, &title_batch, cfg.mask_pad)?;
        let loss_sup = sup_graph.value(sup_loss).item();
        sup_graph.backward(sup_loss)?;

        {
            let mut params = model.params_mut();
            params.extend(head.params_mut());
            fwd.graph.accumulate_param_grads(&mut params)?;
            sup_graph.accumulate_param_grads(&mut params)?;
            opt.step(&mut params)?;
        }

        let done = step + 1;
        if cfg.logs_at(done, start) {
            let val_metric = if cfg.evals_at(done) {
                match val {
                    Some(v) => Some(eval::summary_rouge_l(model, head, v)?),
                    None => None,
                }
            } else {
                None
            };
            log.rows.push(LogRow { step: done, alpha, loss_ae, loss_sup: Some(loss_sup), val_metric });
        }
        if cfg.checkpoints_at(done) {
            let dir = cfg.checkpoint_dir.as_deref().expect("checked by checkpoints_at");
            let hyper = train_hyper(model.hyper(), head.hyper(), "summarize", done, cfg);
            let mut params = model.params();
            params.extend(head.params());
            write_checkpoint(&checkpoint_file(dir, done), &Checkpoint::new(hyper, &params, Some(opt)))?;
            model.round_params_to_f32();
            head.round_params_to_f32();
            opt.round_moments_to_f32();
        }
    }
    Ok(log)
}

// ---- inference ops -------------------------------------------------------

/// Denoising correction: encode, decode, greedy readout, pads stripped.
pub fn correct(model: &AutoencoderModel, noisy: &TokenizedSentence) -> Result<Vec<usize>> {
    let batch = PaddedBatch::new(vec![noisy.clone()])?;
    let out = model.reconstruct(&batch)?;
    Ok(strip_pads(&out[0]))
}

/// Title for one abstract: encode, title-decode, greedy readout, pads
/// stripped.
pub fn summarize(model: &AutoencoderModel, head: &SummarizerHead, abstract_: &TokenizedSentence) -> Result<Vec<usize>> {
    let batch = PaddedBatch::new(vec![abstract_.clone()])?;
    let z = model.encode(&batch)?;
    let titles = head.titles(model, &z)?;
    Ok(strip_pads(&titles[0]))
}
