//! Checkpoint serialization.
//!
//! Layout: the magic line `TDCNN1`, a `[hyper]` block of `key = value` lines,
//! a `[params]` block of named tensors, and optionally an `[optimizer]`
//! block. Tensor payloads are raw little-endian 32-bit floats in row-major
//! order, so a write/read/write cycle is byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::optim::{Optimizer, OptimizerKind, Parameter};
use crate::numeric::tensor::Tensor;

pub const MAGIC: &str = "TDCNN1";

/// Everything a checkpoint stores.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Ordered hyperparameter block; compatibility is judged by the caller.
    pub hyper: Vec<(String, String)>,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerBlock {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub step_count: u64,
    /// (parameter name, first moment, second moment)
    pub moments: Vec<(String, Tensor, Tensor)>,
}

impl OptimizerBlock {
    pub fn from_optimizer(opt: &Optimizer) -> Self {
        OptimizerBlock {
            kind: opt.kind,
            learning_rate: opt.learning_rate,
            step_count: opt.step_count,
            moments: opt
                .moments()
                .map(|(n, m, v)| (n.to_string(), m.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn into_optimizer(self) -> Optimizer {
        let mut opt = Optimizer::new(self.kind, self.learning_rate);
        opt.step_count = self.step_count;
        for (name, m, v) in self.moments {
            opt.set_moment(name, m, v);
        }
        opt
    }
}

impl Checkpoint {
    /// Assemble from live parameters; values pass through f32 on write, so
    /// callers that need bit-exact resume should snap their in-memory state
    /// with [`Tensor::round_to_f32`] right after saving.
    pub fn new(
        hyper: Vec<(String, String)>,
        params: &[&Parameter],
        optimizer: Option<&Optimizer>,
    ) -> Self {
        Checkpoint {
            hyper,
            params: params
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
            optimizer: optimizer.map(OptimizerBlock::from_optimizer),
        }
    }

    pub fn hyper_value(&self, key: &str) -> Option<&str> {
        self.hyper
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    writeln!(w, "name {}", name)?;
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    writeln!(w, "shape {}", dims.join(" "))?;
    for v in t.data() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    writeln!(w)?;
    Ok(())
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", MAGIC)?;
    writeln!(w, "[hyper]")?;
    for (k, v) in &ckpt.hyper {
        writeln!(w, "{} = {}", k, v)?;
    }
    writeln!(w, "[params]")?;
    writeln!(w, "count {}", ckpt.params.len())?;
    for (name, t) in &ckpt.params {
        write_tensor(&mut w, name, t)?;
    }
    if let Some(opt) = &ckpt.optimizer {
        writeln!(w, "[optimizer]")?;
        let kind = match opt.kind {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        };
        writeln!(w, "kind {}", kind)?;
        writeln!(w, "learning_rate {}", opt.learning_rate)?;
        writeln!(w, "step_count {}", opt.step_count)?;
        writeln!(w, "moments {}", opt.moments.len())?;
        for (name, m, v) in &opt.moments {
            write_tensor(&mut w, &format!("opt.m.{}", name), m)?;
            write_tensor(&mut w, &format!("opt.v.{}", name), v)?;
        }
    }
    writeln!(w, "[end]")?;
    w.flush()?;
    Ok(())
}

struct LineReader<R: Read> {
    inner: R,
}

impl<R: Read> LineReader<R> {
    /// Read to the next newline; bytes before it must be UTF-8.
    fn line(&mut self) -> Result<String> {
        let mut buf = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            let n = self.inner.read(&mut byte)?;
            if n == 0 {
                if buf.is_empty() {
                    return Err(Error::MalformedCheckpoint("unexpected end of file".to_string()));
                }
                break;
            }
            if byte[0] == b'\n' {
                break;
            }
            buf.push(byte[0]);
        }
        String::from_utf8(buf)
            .map_err(|_| Error::MalformedCheckpoint("non-UTF-8 header line".to_string()))
    }

    fn exact(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::MalformedCheckpoint("truncated tensor payload".to_string()))?;
        Ok(buf)
    }
}

fn read_tensor<R: Read>(r: &mut LineReader<R>) -> Result<(String, Tensor)> {
    let name_line = r.line()?;
    let name = name_line
        .strip_prefix("name ")
        .ok_or_else(|| Error::MalformedCheckpoint(format!("expected name line, got {:?}", name_line)))?
        .to_string();
    let shape_line = r.line()?;
    let dims_str = shape_line
        .strip_prefix("shape ")
        .ok_or_else(|| Error::MalformedCheckpoint(format!("expected shape line, got {:?}", shape_line)))?;
    let mut shape = Vec::new();
    for d in dims_str.split_whitespace() {
        let d: usize = d
            .parse()
            .map_err(|_| Error::MalformedCheckpoint(format!("bad extent {:?}", d)))?;
        shape.push(d);
    }
    let numel: usize = shape.iter().product();
    let bytes = r.exact(numel * 4)?;
    let mut data = Vec::with_capacity(numel);
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    let after = r.line()?;
    if !after.is_empty() {
        return Err(Error::MalformedCheckpoint("missing separator after tensor payload".to_string()));
    }
    Ok((name, Tensor::from_vec(&shape, data)?))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = LineReader {
        inner: BufReader::new(File::open(path)?),
    };
    let magic = r.line()?;
    if magic != MAGIC {
        return Err(Error::IncompatibleCheckpoint(format!(
            "magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    if r.line()? != "[hyper]" {
        return Err(Error::MalformedCheckpoint("missing [hyper] block".to_string()));
    }
    let mut hyper = Vec::new();
    let mut line = r.line()?;
    while line != "[params]" {
        match line.split_once(" = ") {
            Some((k, v)) => hyper.push((k.to_string(), v.to_string())),
            None => return Err(Error::MalformedCheckpoint(format!("bad hyper line {:?}", line))),
        }
        line = r.line()?;
    }
    let count_line = r.line()?;
    let count: usize = count_line
        .strip_prefix("count ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedCheckpoint(format!("bad count line {:?}", count_line)))?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(read_tensor(&mut r)?);
    }
    let mut optimizer = None;
    let section = r.line()?;
    match section.as_str() {
        "[end]" => {}
        "[optimizer]" => {
            let kind_line = r.line()?;
            let kind = match kind_line.strip_prefix("kind ") {
                Some("sgd") => OptimizerKind::Sgd,
                Some("adam") => OptimizerKind::Adam,
                _ => return Err(Error::MalformedCheckpoint(format!("bad kind line {:?}", kind_line))),
            };
            let lr_line = r.line()?;
            let learning_rate: f64 = lr_line
                .strip_prefix("learning_rate ")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::MalformedCheckpoint(format!("bad learning_rate line {:?}", lr_line)))?;
            let step_line = r.line()?;
            let step_count: u64 = step_line
                .strip_prefix("step_count ")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::MalformedCheckpoint(format!("bad step_count line {:?}", step_line)))?;
            let moments_line = r.line()?;
            let n_moments: usize = moments_line
                .strip_prefix("moments ")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::MalformedCheckpoint(format!("bad moments line {:?}", moments_line)))?;
            let mut moments = Vec::with_capacity(n_moments);
            for _ in 0..n_moments {
                let (m_name, m) = read_tensor(&mut r)?;
                let (v_name, v) = read_tensor(&mut r)?;
                let name = m_name
                    .strip_prefix("opt.m.")
                    .ok_or_else(|| Error::MalformedCheckpoint(format!("bad moment name {:?}", m_name)))?;
                if v_name != format!("opt.v.{}", name) {
                    return Err(Error::MalformedCheckpoint(format!(
                        "moment pair mismatch: {:?} vs {:?}",
                        m_name, v_name
                    )));
                }
                moments.push((name.to_string(), m, v));
            }
            if r.line()? != "[end]" {
                return Err(Error::MalformedCheckpoint("missing [end] marker".to_string()));
            }
            optimizer = Some(OptimizerBlock {
                kind,
                learning_rate,
                step_count,
                moments,
            });
        }
        other => {
            return Err(Error::MalformedCheckpoint(format!("unexpected section {:?}", other)));
        }
    }
    Ok(Checkpoint {
        hyper,
        params,
        optimizer,
    })
}
