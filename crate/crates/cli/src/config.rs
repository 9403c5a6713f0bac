//! Run configuration: one flat `key = value` file, `#` comments, every key
//! defaulted, unknown keys rejected with their line number. Command-line
//! `--set key=value` flags go through the same assignment path and override
//! the file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use tdcnn_core::autoencoder::{LayerSpec, ModelSpec};
use tdcnn_core::corpus::{Level, PerturbMode};
use tdcnn_core::numeric::OptimizerKind;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Ae,
    Denoise,
    Semisup,
    Summarize,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Ae => "ae",
            Task::Denoise => "denoise",
            Task::Semisup => "semisup",
            Task::Summarize => "summarize",
        }
    }
}

/// Everything a run needs; see README for the key reference.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: Task,
    pub level: Level,
    pub train_data: PathBuf,
    pub val_data: Option<PathBuf>,
    pub outdir: PathBuf,
    pub seed: u64,

    pub max_vocab: usize,
    pub min_freq: usize,
    /// 0 means "longest training sentence".
    pub max_len: usize,

    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub filter: usize,
    pub stride: usize,
    pub latent: usize,
    pub temperature: f64,

    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub mask_pad: bool,
    pub log_every: u64,
    pub val_every: u64,
    pub checkpoint_every: u64,

    pub alpha_min: f64,
    /// 0 means "first half of the run".
    pub anneal_steps: u64,

    pub eta: f64,
    pub noise: Vec<PerturbMode>,
    pub noise_seed: u64,

    pub label_fraction: f64,
    /// 0 means "longest training title".
    pub title_len: usize,

    /// Keys assigned from the file or flags, for checkpoint compatibility
    /// checks that must ignore untouched defaults.
    set_keys: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Ae,
            level: Level::Word,
            train_data: PathBuf::from("train.txt"),
            val_data: None,
            outdir: PathBuf::from("run"),
            seed: 0,
            max_vocab: 10_000,
            min_freq: 1,
            max_len: 0,
            embed_dim: 300,
            hidden: vec![300, 600],
            filter: 5,
            stride: 2,
            latent: 500,
            temperature: 0.01,
            steps: 1000,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            mask_pad: false,
            log_every: 50,
            val_every: 0,
            checkpoint_every: 0,
            alpha_min: 0.01,
            anneal_steps: 0,
            eta: 0.3,
            noise: vec![PerturbMode::Substitute],
            noise_seed: 7,
            label_fraction: 1.0,
            title_len: 0,
            set_keys: BTreeSet::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("key {:?}: invalid value {:?} (expected {})", key, value, expected))
}

impl RunConfig {
    /// Defaults, then the file (when given), then the `--set` overrides.
    pub fn load(path: Option<&Path>, sets: &[String]) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {}", path.display(), e)))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Config(format!("line {}: expected key = value, got {:?}", lineno + 1, raw.trim()))
                })?;
                cfg.set(key.trim(), value.trim())
                    .map_err(|m| CliError::Config(format!("line {}: {}", lineno + 1, m)))?;
            }
        }
        for s in sets {
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set {:?}: expected key=value", s)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|m| CliError::Config(format!("--set {:?}: {}", s, m)))?;
        }
        Ok(cfg)
    }

    pub fn was_set(&self, key: &str) -> bool {
        self.set_keys.contains(key)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "task" => {
                self.task = match value {
                    "ae" => Task::Ae,
                    "denoise" => Task::Denoise,
                    "semisup" => Task::Semisup,
                    "summarize" => Task::Summarize,
                    other => {
                        return Err(format!(
                            "key \"task\": unknown task {:?} (expected ae, denoise, semisup or summarize)",
                            other
                        ))
                    }
                }
            }
            "level" => self.level = Level::parse(value).map_err(|e| format!("key \"level\": {}", e))?,
            "train_data" => self.train_data = PathBuf::from(value),
            "val_data" => {
                self.val_data = if value.is_empty() { None } else { Some(PathBuf::from(value)) }
            }
            "outdir" => self.outdir = PathBuf::from(value),
            "seed" => self.seed = parse_num(key, value, "unsigned integer")?,
            "max_vocab" => self.max_vocab = parse_num(key, value, "unsigned integer")?,
            "min_freq" => self.min_freq = parse_num(key, value, "unsigned integer")?,
            "max_len" => self.max_len = parse_num(key, value, "unsigned integer")?,
            "embed_dim" => self.embed_dim = parse_num(key, value, "unsigned integer")?,
            "hidden" => {
                let mut widths = Vec::new();
                for part in value.split(',') {
                    widths.push(parse_num(key, part, "comma-separated unsigned integers")?);
                }
                self.hidden = widths;
            }
            "filter" => self.filter = parse_num(key, value, "unsigned integer")?,
            "stride" => self.stride = parse_num(key, value, "unsigned integer")?,
            "latent" => self.latent = parse_num(key, value, "unsigned integer")?,
            "temperature" => self.temperature = parse_num(key, value, "number")?,
            "steps" => self.steps = parse_num(key, value, "unsigned integer")?,
            "batch_size" => self.batch_size = parse_num(key, value, "unsigned integer")?,
            "learning_rate" => self.learning_rate = parse_num(key, value, "number")?,
            "optimizer" => {
                self.optimizer = match value {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    other => return Err(format!("key \"optimizer\": unknown optimizer {:?} (expected adam or sgd)", other)),
                }
            }
            "mask_pad" => {
                self.mask_pad = match value {
                    "true" => true,
                    "false" => false,
                    other => return Err(format!("key \"mask_pad\": invalid value {:?} (expected true or false)", other)),
                }
            }
            "log_every" => self.log_every = parse_num(key, value, "unsigned integer")?,
            "val_every" => self.val_every = parse_num(key, value, "unsigned integer")?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value, "unsigned integer")?,
            "alpha_min" => self.alpha_min = parse_num(key, value, "number")?,
            "anneal_steps" => self.anneal_steps = parse_num(key, value, "unsigned integer")?,
            "eta" => self.eta = parse_num(key, value, "number")?,
            "noise" => {
                self.noise = if value == "mixed" {
                    vec![PerturbMode::Substitute, PerturbMode::Delete, PerturbMode::Insert]
                } else {
                    vec![PerturbMode::parse(value).map_err(|e| format!("key \"noise\": {}", e))?]
                }
            }
            "noise_seed" => self.noise_seed = parse_num(key, value, "unsigned integer")?,
            "label_fraction" => {
                let f: f64 = parse_num(key, value, "number in [0, 1]")?;
                if !(0.0..=1.0).contains(&f) {
                    return Err(format!("key \"label_fraction\": value {} outside [0, 1]", f));
                }
                self.label_fraction = f;
            }
            "title_len" => self.title_len = parse_num(key, value, "unsigned integer")?,
            other => return Err(format!("unknown key {:?}", other)),
        }
        self.set_keys.insert(key.to_string());
        Ok(())
    }

    pub fn strided(&self) -> Vec<LayerSpec> {
        self.hidden
            .iter()
            .map(|&p| LayerSpec { h: self.filter, r: self.stride, p })
            .collect()
    }

    /// Model spec at a concrete requested width (CLI runs always pad up to a
    /// compatible length rather than reject).
    pub fn model_spec(&self, t_request: usize) -> ModelSpec {
        ModelSpec {
            embed_dim: self.embed_dim,
            strided: self.strided(),
            latent: self.latent,
            temperature: self.temperature,
            t_request,
            pad_to_compatible: true,
        }
    }

    /// The `strided` hyper string a checkpoint of this config would carry.
    pub fn strided_string(&self) -> String {
        self.strided()
            .iter()
            .map(|l| format!("{}:{}:{}", l.h, l.r, l.p))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> PathBuf {
        let p = dir.path().join("run.conf");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn defaults_survive_an_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "# nothing but comments\n\n");
        let cfg = RunConfig::load(Some(&p), &[]).unwrap();
        assert_eq!(cfg.task, Task::Ae);
        assert_eq!(cfg.hidden, vec![300, 600]);
        assert_eq!(cfg.latent, 500);
        assert!(!cfg.was_set("latent"));
    }

    #[test]
    fn unknown_key_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "steps = 10\nfrobnicate = 3\n");
        let err = RunConfig::load(Some(&p), &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{}", msg);
        assert!(msg.contains("frobnicate"), "{}", msg);
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "steps = 10\nlatent = 64\n");
        let cfg = RunConfig::load(Some(&p), &["steps=99".to_string()]).unwrap();
        assert_eq!(cfg.steps, 99);
        assert_eq!(cfg.latent, 64);
        assert!(cfg.was_set("steps") && cfg.was_set("latent"));
    }

    #[test]
    fn comments_and_inline_comments_are_stripped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "steps = 12 # desk scale\n# latent = 9\n");
        let cfg = RunConfig::load(Some(&p), &[]).unwrap();
        assert_eq!(cfg.steps, 12);
        assert_eq!(cfg.latent, 500);
    }

    #[test]
    fn bad_value_names_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "steps = soon\n");
        let msg = RunConfig::load(Some(&p), &[]).unwrap_err().to_string();
        assert!(msg.contains("\"steps\""), "{}", msg);
    }

    #[test]
    fn hidden_list_and_mixed_noise_parse() {
        let cfg = RunConfig::load(None, &["hidden=8,16,32".to_string(), "noise=mixed".to_string()]).unwrap();
        assert_eq!(cfg.hidden, vec![8, 16, 32]);
        assert_eq!(cfg.noise.len(), 3);
        assert_eq!(cfg.strided_string(), "5:2:8;5:2:16;5:2:32");
    }
}
