//! `train`: build or resume a run directory and drive the configured task.
//!
//! A run directory owns `vocab.txt`, numbered checkpoints, and `curves.csv`.
//! When the directory already holds a checkpoint, training resumes from the
//! latest one; the vocabulary and any explicitly set model keys must then
//! agree with what the checkpoint stores.

use std::path::Path;

use rand::seq::SliceRandom;

use tdcnn_core::autoencoder::AutoencoderModel;
use tdcnn_core::corpus::{
    build_vocab, encode_sentence, read_corpus, read_labeled_tsv, read_pairs_tsv, PerturbationSpec,
    TokenizedSentence, Vocabulary,
};
use tdcnn_core::numeric::checkpoint::{read_checkpoint, Checkpoint};
use tdcnn_core::rng;
use tdcnn_core::tasks::{
    latest_checkpoint, train_autoencoder, train_denoiser, train_semisupervised, train_summarizer,
    AnnealSchedule, ClassifierHead, SummarizerHead, TrainConfig, TrainLog,
};
use tdcnn_core::{Optimizer, OptimizerKind};

use crate::config::{RunConfig, Task};
use crate::error::{Classify, CliError, CliResult};
use crate::files::{check_config_compat, read_data, vocab_matching};

/// The `task` value a checkpoint of this run would carry.
fn task_hyper_name(task: Task) -> &'static str {
    match task {
        Task::Ae => "ae",
        Task::Denoise => "denoise",
        Task::Semisup => "semi",
        Task::Summarize => "summarize",
    }
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    std::fs::create_dir_all(&cfg.outdir).data_err()?;
    match cfg.task {
        Task::Ae | Task::Denoise => reconstruction(cfg),
        Task::Semisup => semisup(cfg),
        Task::Summarize => summarization(cfg),
    }
}

// ---- shared pieces ---------------------------------------------------------

/// Latest checkpoint in the outdir, validated against the config. `None`
/// means a fresh start; a finished run short-circuits to `Some(None)`.
enum Start {
    Fresh,
    Resume(Box<Checkpoint>),
    Done(u64),
}

fn starting_point(cfg: &RunConfig) -> CliResult<Start> {
    let Some((step, path)) = latest_checkpoint(&cfg.outdir).data_err()? else {
        return Ok(Start::Fresh);
    };
    let ckpt = read_checkpoint(&path).ckpt_err()?;
    let stored_task = ckpt.hyper_value("task").unwrap_or("none").to_string();
    if stored_task != task_hyper_name(cfg.task) {
        return Err(CliError::Checkpoint(format!(
            "{} holds a {} checkpoint, config asks for task {}",
            cfg.outdir.display(),
            stored_task,
            cfg.task.as_str()
        )));
    }
    check_config_compat(cfg, &ckpt)?;
    if step >= cfg.steps {
        return Ok(Start::Done(step));
    }
    println!("resuming from {} at step {}", path.display(), step);
    Ok(Start::Resume(Box::new(ckpt)))
}

fn resumed_optimizer(cfg: &RunConfig, ckpt: &Checkpoint) -> CliResult<Optimizer> {
    let block = ckpt
        .optimizer
        .clone()
        .ok_or_else(|| CliError::Checkpoint("checkpoint carries no optimizer state".to_string()))?;
    let mut opt = block.into_optimizer();
    if cfg.was_set("optimizer") && opt.kind != cfg.optimizer {
        let (want, got) = (kind_name(cfg.optimizer), kind_name(opt.kind));
        return Err(CliError::Checkpoint(format!(
            "config sets optimizer = {} but the checkpoint stores {}",
            want, got
        )));
    }
    // a new explicit learning rate applies from the resumed step on
    if cfg.was_set("learning_rate") {
        opt.learning_rate = cfg.learning_rate;
    }
    Ok(opt)
}

fn kind_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Adam => "adam",
        OptimizerKind::Sgd => "sgd",
    }
}

fn fresh_vocab(cfg: &RunConfig, texts: &[Vec<String>]) -> CliResult<Vocabulary> {
    let vocab = build_vocab(texts, cfg.max_vocab, cfg.min_freq).data_err()?;
    vocab.write_file(&cfg.outdir.join("vocab.txt")).data_err()?;
    Ok(vocab)
}

fn fresh_model(cfg: &RunConfig, texts: &[Vec<String>], vocab: &Vocabulary) -> CliResult<AutoencoderModel> {
    let longest = texts.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let t_request = if cfg.max_len > 0 { cfg.max_len } else { longest };
    AutoencoderModel::new(cfg.model_spec(t_request), vocab.size(), cfg.seed).config_err()
}

fn print_trace(model: &AutoencoderModel, vocab: &Vocabulary) -> CliResult<()> {
    let trace = model.encoder_lengths(model.t).config_err()?;
    let arrows = trace.iter().map(usize::to_string).collect::<Vec<_>>().join("→");
    println!(
        "vocabulary {} tokens, width {}, dimension trace {}",
        vocab.size(),
        model.t,
        arrows
    );
    Ok(())
}

fn loop_config(cfg: &RunConfig) -> TrainConfig {
    let mut tc = TrainConfig::new(cfg.steps, cfg.batch_size, cfg.seed);
    tc.mask_pad = cfg.mask_pad;
    tc.log_every = cfg.log_every;
    tc.val_every = cfg.val_every;
    tc.checkpoint_every = cfg.checkpoint_every;
    tc.checkpoint_dir = Some(cfg.outdir.clone());
    tc
}

fn schedule(cfg: &RunConfig) -> CliResult<AnnealSchedule> {
    let steps = if cfg.anneal_steps > 0 { cfg.anneal_steps } else { (cfg.steps / 2).max(1) };
    AnnealSchedule::new(cfg.alpha_min, steps).config_err()
}

fn finish(cfg: &RunConfig, log: &TrainLog, resumed: bool) -> CliResult<()> {
    let curves = cfg.outdir.join("curves.csv");
    log.write_csv(&curves, resumed).data_err()?;
    if let Some(last) = log.rows.last() {
        let val = last
            .val_metric
            .map(|v| format!(", val {:.4}", v))
            .unwrap_or_default();
        println!("finished at step {} with loss {:.4}{}", last.step, last.loss_ae, val);
    }
    println!("wrote {}", curves.display());
    Ok(())
}

fn nothing_to_do(cfg: &RunConfig, step: u64) -> CliResult<()> {
    println!(
        "checkpoint in {} already at step {}, config asks for {} steps; nothing to do",
        cfg.outdir.display(),
        step,
        cfg.steps
    );
    Ok(())
}

fn read_nonempty(path: &Path, cfg: &RunConfig) -> CliResult<Vec<Vec<String>>> {
    let rows = read_data(path, |p| read_corpus(p, cfg.level))?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} holds no sentences", path.display())));
    }
    Ok(rows)
}

fn encode_all(vocab: &Vocabulary, texts: &[Vec<String>], t: usize) -> Vec<TokenizedSentence> {
    texts.iter().map(|s| encode_sentence(vocab, s, t)).collect()
}

// ---- tasks -------------------------------------------------------------------

fn reconstruction(cfg: &RunConfig) -> CliResult<()> {
    let texts = read_nonempty(&cfg.train_data, cfg)?;
    let val_texts = cfg.val_data.as_deref().map(|p| read_nonempty(p, cfg)).transpose()?;

    let (mut model, vocab, mut opt, resumed) = match starting_point(cfg)? {
        Start::Done(step) => return nothing_to_do(cfg, step),
        Start::Resume(ckpt) => {
            let vocab = vocab_matching(&ckpt, &cfg.outdir.join("vocab.txt"))?;
            let model = AutoencoderModel::from_checkpoint(&ckpt).ckpt_err()?;
            let opt = resumed_optimizer(cfg, &ckpt)?;
            (model, vocab, opt, true)
        }
        Start::Fresh => {
            let vocab = fresh_vocab(cfg, &texts)?;
            let model = fresh_model(cfg, &texts, &vocab)?;
            let opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
            (model, vocab, opt, false)
        }
    };
    print_trace(&model, &vocab)?;

    let train = encode_all(&vocab, &texts, model.t);
    let val = val_texts.map(|v| encode_all(&vocab, &v, model.t));
    let tc = loop_config(cfg);
    let log = match cfg.task {
        Task::Ae => train_autoencoder(&mut model, &mut opt, &train, val.as_deref(), &tc).data_err()?,
        Task::Denoise => {
            let spec = PerturbationSpec::new(cfg.eta, cfg.noise.clone(), cfg.noise_seed).config_err()?;
            train_denoiser(&mut model, &mut opt, &train, val.as_deref(), &spec, &vocab, &tc).data_err()?
        }
        _ => unreachable!("dispatched in run"),
    };
    finish(cfg, &log, resumed)
}

/// Deterministic `label_fraction` subsample: a seeded permutation keeps the
/// first `max(1, round(fraction * n))` labeled rows and demotes the rest to
/// the unlabeled pool.
fn subsample_labeled(
    cfg: &RunConfig,
    labeled: Vec<(Vec<String>, usize)>,
    unlabeled: &mut Vec<Vec<String>>,
) -> Vec<(Vec<String>, usize)> {
    let total = labeled.len();
    let keep = ((cfg.label_fraction * total as f64).round() as usize).clamp(1, total);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng::stream(cfg.seed, "label-fraction", 0));
    let kept_set: std::collections::BTreeSet<usize> = order.into_iter().take(keep).collect();
    let mut kept = Vec::with_capacity(keep);
    for (i, (text, y)) in labeled.into_iter().enumerate() {
        if kept_set.contains(&i) {
            kept.push((text, y));
        } else {
            unlabeled.push(text);
        }
    }
    println!("using {} of {} labeled examples", kept.len(), total);
    kept
}

fn semisup(cfg: &RunConfig) -> CliResult<()> {
    let rows = read_data(&cfg.train_data, |p| read_labeled_tsv(p, cfg.level))?;
    let mut labeled: Vec<(Vec<String>, usize)> = Vec::new();
    let mut unlabeled: Vec<Vec<String>> = Vec::new();
    for (label, text) in rows {
        match label {
            Some(y) => labeled.push((text, y)),
            None => unlabeled.push(text),
        }
    }
    if labeled.is_empty() {
        return Err(CliError::Data(format!("{} holds no labeled rows", cfg.train_data.display())));
    }
    let labeled = subsample_labeled(cfg, labeled, &mut unlabeled);

    let val_rows = match cfg.val_data.as_deref() {
        Some(p) => {
            let rows = read_data(p, |p| read_labeled_tsv(p, cfg.level))?;
            let rows: Vec<(Vec<String>, usize)> =
                rows.into_iter().filter_map(|(y, text)| y.map(|y| (text, y))).collect();
            if rows.is_empty() {
                return Err(CliError::Data(format!("{} holds no labeled rows", p.display())));
            }
            Some(rows)
        }
        None => None,
    };
    let classes = labeled
        .iter()
        .map(|(_, y)| *y)
        .chain(val_rows.iter().flatten().map(|(_, y)| *y))
        .max()
        .unwrap_or(0)
        + 1;
    let classes = classes.max(2);

    let all_texts: Vec<Vec<String>> = labeled
        .iter()
        .map(|(text, _)| text.clone())
        .chain(unlabeled.iter().cloned())
        .collect();

    let (mut model, mut head, vocab, mut opt, resumed) = match starting_point(cfg)? {
        Start::Done(step) => return nothing_to_do(cfg, step),
        Start::Resume(ckpt) => {
            let vocab = vocab_matching(&ckpt, &cfg.outdir.join("vocab.txt"))?;
            let model = AutoencoderModel::from_checkpoint(&ckpt).ckpt_err()?;
            let head = ClassifierHead::from_checkpoint(&ckpt).ckpt_err()?;
            let opt = resumed_optimizer(cfg, &ckpt)?;
            (model, head, vocab, opt, true)
        }
        Start::Fresh => {
            let vocab = fresh_vocab(cfg, &all_texts)?;
            let model = fresh_model(cfg, &all_texts, &vocab)?;
            let head =
                ClassifierHead::new(model.latent_dim(), classes, cfg.seed.wrapping_add(1)).config_err()?;
            let opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
            (model, head, vocab, opt, false)
        }
    };
    print_trace(&model, &vocab)?;

    let labeled_enc: Vec<(TokenizedSentence, usize)> = labeled
        .iter()
        .map(|(text, y)| (encode_sentence(&vocab, text, model.t), *y))
        .collect();
    let unlabeled_enc = encode_all(&vocab, &unlabeled, model.t);
    let val_enc: Option<Vec<(TokenizedSentence, usize)>> = val_rows.map(|rows| {
        rows.iter()
            .map(|(text, y)| (encode_sentence(&vocab, text, model.t), *y))
            .collect()
    });

    let tc = loop_config(cfg);
    let sched = schedule(cfg)?;
    let log = train_semisupervised(
        &mut model,
        &mut head,
        &mut opt,
        &labeled_enc,
        &unlabeled_enc,
        val_enc.as_deref(),
        &sched,
        &tc,
    )
    .data_err()?;
    finish(cfg, &log, resumed)
}

fn summarization(cfg: &RunConfig) -> CliResult<()> {
    // empty title column marks an unlabeled abstract (reconstruction only)
    let rows = read_data(&cfg.train_data, |p| read_pairs_tsv(p, cfg.level))?;
    let mut pairs: Vec<(Vec<String>, Vec<String>)> = Vec::new();
    let mut unlabeled: Vec<Vec<String>> = Vec::new();
    for (title, abstract_) in rows {
        if title.is_empty() {
            unlabeled.push(abstract_);
        } else {
            pairs.push((title, abstract_));
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Data(format!("{} holds no titled rows", cfg.train_data.display())));
    }
    let val_pairs = match cfg.val_data.as_deref() {
        Some(p) => {
            let rows = read_data(p, |p| read_pairs_tsv(p, cfg.level))?;
            let rows: Vec<(Vec<String>, Vec<String>)> =
                rows.into_iter().filter(|(t, _)| !t.is_empty()).collect();
            if rows.is_empty() {
                return Err(CliError::Data(format!("{} holds no titled rows", p.display())));
            }
            Some(rows)
        }
        None => None,
    };

    let all_texts: Vec<Vec<String>> = pairs
        .iter()
        .flat_map(|(t, a)| [t.clone(), a.clone()])
        .chain(unlabeled.iter().cloned())
        .collect();
    let abstracts: Vec<Vec<String>> = pairs
        .iter()
        .map(|(_, a)| a.clone())
        .chain(unlabeled.iter().cloned())
        .collect();

    let (mut model, mut head, vocab, mut opt, resumed) = match starting_point(cfg)? {
        Start::Done(step) => return nothing_to_do(cfg, step),
        Start::Resume(ckpt) => {
            let vocab = vocab_matching(&ckpt, &cfg.outdir.join("vocab.txt"))?;
            let model = AutoencoderModel::from_checkpoint(&ckpt).ckpt_err()?;
            let head = SummarizerHead::from_checkpoint(&ckpt).ckpt_err()?;
            let opt = resumed_optimizer(cfg, &ckpt)?;
            (model, head, vocab, opt, true)
        }
        Start::Fresh => {
            let vocab = fresh_vocab(cfg, &all_texts)?;
            let model = fresh_model(cfg, &abstracts, &vocab)?;
            let longest_title = pairs.iter().map(|(t, _)| t.len()).max().unwrap_or(1);
            let t_title = if cfg.title_len > 0 { cfg.title_len } else { longest_title };
            let head = SummarizerHead::new(
                model.latent_dim(),
                model.embed_dim(),
                cfg.strided(),
                t_title,
                cfg.seed.wrapping_add(1),
            )
            .config_err()?;
            let opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
            (model, head, vocab, opt, false)
        }
    };
    print_trace(&model, &vocab)?;
    println!("title width {}", head.t_title);

    let encode_pairs = |rows: &[(Vec<String>, Vec<String>)]| -> Vec<(TokenizedSentence, TokenizedSentence)> {
        rows.iter()
            .map(|(t, a)| (encode_sentence(&vocab, t, head.t_title), encode_sentence(&vocab, a, model.t)))
            .collect()
    };
    let pairs_enc = encode_pairs(&pairs);
    let unlabeled_enc = encode_all(&vocab, &unlabeled, model.t);
    let val_enc = val_pairs.as_deref().map(encode_pairs);

    let tc = loop_config(cfg);
    let sched = schedule(cfg)?;
    let log = train_summarizer(
        &mut model,
        &mut head,
        &mut opt,
        &pairs_enc,
        &unlabeled_enc,
        val_enc.as_deref(),
        &sched,
        &tc,
    )
    .data_err()?;
    finish(cfg, &log, resumed)
}
