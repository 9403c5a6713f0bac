//! Checkpoint and vocabulary resolution shared by the inference commands,
//! plus plain line-file helpers.

use std::path::{Path, PathBuf};

use tdcnn_core::corpus::Vocabulary;
use tdcnn_core::numeric::checkpoint::{read_checkpoint, Checkpoint};
use tdcnn_core::tasks::latest_checkpoint;

use crate::config::RunConfig;
use crate::error::{Classify, CliError, CliResult};

/// Find the checkpoint to load: an explicit file wins, an explicit directory
/// means "latest inside", and no flag falls back to the config outdir.
pub fn resolve_checkpoint(explicit: Option<&Path>, cfg: &RunConfig) -> CliResult<PathBuf> {
    fn from_dir(dir: &Path) -> CliResult<PathBuf> {
        match latest_checkpoint(dir).data_err()? {
            Some((_, path)) => Ok(path),
            None => Err(CliError::Data(format!(
                "no checkpoint-NNNNNN.ckpt files under {}",
                dir.display()
            ))),
        }
    }
    match explicit {
        Some(p) if p.is_dir() => from_dir(p),
        Some(p) if p.exists() => Ok(p.to_path_buf()),
        Some(p) => Err(CliError::Data(format!("checkpoint {} does not exist", p.display()))),
        None => from_dir(&cfg.outdir),
    }
}

/// Vocabulary whose size the checkpoint agrees with.
pub fn vocab_matching(ckpt: &Checkpoint, path: &Path) -> CliResult<Vocabulary> {
    let vocab = read_data(path, Vocabulary::read_file)?;
    let stored: Option<usize> = ckpt.hyper_value("vocab_size").and_then(|v| v.parse().ok());
    if stored != Some(vocab.size()) {
        return Err(CliError::Checkpoint(format!(
            "vocabulary {} holds {} tokens, checkpoint stores {}",
            path.display(),
            vocab.size(),
            stored.map(|v| v.to_string()).unwrap_or_else(|| "none".to_string()),
        )));
    }
    Ok(vocab)
}

/// Load a checkpoint plus its vocabulary; the vocabulary defaults to
/// `vocab.txt` next to the checkpoint file.
pub fn load_checkpoint_and_vocab(
    ckpt_path: &Path,
    vocab_path: Option<&Path>,
) -> CliResult<(Checkpoint, Vocabulary)> {
    let ckpt = read_checkpoint(ckpt_path).ckpt_err()?;
    let vpath = match vocab_path {
        Some(p) => p.to_path_buf(),
        None => ckpt_path.parent().unwrap_or_else(|| Path::new(".")).join("vocab.txt"),
    };
    let vocab = vocab_matching(&ckpt, &vpath)?;
    Ok((ckpt, vocab))
}

/// Exit-4 guard: every model hyperparameter the user set explicitly must
/// agree with the checkpoint. Untouched defaults are not compared, so a bare
/// `--checkpoint` flag works against any architecture.
pub fn check_config_compat(cfg: &RunConfig, ckpt: &Checkpoint) -> CliResult<()> {
    let mut expected: Vec<(&str, String)> = Vec::new();
    if cfg.was_set("embed_dim") {
        expected.push(("embed_dim", cfg.embed_dim.to_string()));
    }
    if cfg.was_set("latent") {
        expected.push(("latent", cfg.latent.to_string()));
    }
    if cfg.was_set("temperature") {
        expected.push(("temperature", cfg.temperature.to_string()));
    }
    if cfg.was_set("hidden") || cfg.was_set("filter") || cfg.was_set("stride") {
        expected.push(("strided", cfg.strided_string()));
    }
    for (key, want) in expected {
        let got = ckpt.hyper_value(key).unwrap_or("none");
        if got != want {
            return Err(CliError::Checkpoint(format!(
                "config sets {} = {} but the checkpoint stores {}",
                key, want, got
            )));
        }
    }
    Ok(())
}

/// Run a corpus reader with the file name attached to any failure.
pub fn read_data<T>(
    path: &Path,
    read: impl FnOnce(&Path) -> tdcnn_core::Result<T>,
) -> CliResult<T> {
    read(path).map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))
}

/// Input lines, blank ones included, so outputs stay line-aligned.
pub fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {}", path.display(), e)))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// One line per entry to the file, or stdout when no path is given.
pub fn write_lines(path: Option<&Path>, lines: &[String]) -> CliResult<()> {
    match path {
        Some(p) => {
            let mut body = lines.join("\n");
            if !lines.is_empty() {
                body.push('\n');
            }
            std::fs::write(p, body)
                .map_err(|e| CliError::Data(format!("cannot write {}: {}", p.display(), e)))
        }
        None => {
            for line in lines {
                println!("{}", line);
            }
            Ok(())
        }
    }
}
