//! Supervised heads attached to the latent code: an MLP classifier and a
//! deconvolutional title decoder for summarization.

use rand::Rng;

use crate::autoencoder::{
    deconv_stack_nodes, run_deconv_stack, xavier, AutoencoderModel, DecoderConfig, EncoderConfig,
    LayerSpec,
};
use crate::corpus::sentence::compatible_length;
use crate::error::{Error, Result};
use crate::numeric::checkpoint::Checkpoint;
use crate::numeric::graph::{Graph, NodeId};
use crate::numeric::kernels;
use crate::numeric::optim::Parameter;
use crate::numeric::tensor::Tensor;

pub const CLASSIFIER_HIDDEN: usize = 300;
pub const CLASSIFIER_DROPOUT: f64 = 0.5;

/// One-hidden-layer MLP over the latent code. Dropout (inverted scaling)
/// applies only when a mask is supplied, so evaluation paths stay exact.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub dropout: f64,
    /// head.w1 [hidden, input], head.b1, head.w2 [classes, hidden], head.b2.
    pub w1: Parameter,
    pub b1: Parameter,
    pub w2: Parameter,
    pub b2: Parameter,
}

impl ClassifierHead {
    pub fn new(input_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        Self::with_shape(input_dim, CLASSIFIER_HIDDEN, classes, CLASSIFIER_DROPOUT, seed)
    }

    pub fn with_shape(input_dim: usize, hidden: usize, classes: usize, dropout: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || classes < 2 {
            return Err(Error::InvalidData("classifier needs positive dims and at least two classes".to_string()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidData(format!("dropout {} outside [0, 1)", dropout)));
        }
        Ok(ClassifierHead {
            input_dim,
            hidden,
            classes,
            dropout,
            w1: Parameter::new("head.w1", xavier(&[hidden, input_dim], input_dim, hidden, seed, "head.w1")),
            b1: Parameter::new("head.b1", Tensor::zeros(&[hidden])),
            w2: Parameter::new("head.w2", xavier(&[classes, hidden], hidden, classes, seed, "head.w2")),
            b2: Parameter::new("head.b2", Tensor::zeros(&[classes])),
        })
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn round_params_to_f32(&mut self) {
        for p in self.params_mut() {
            p.value.round_to_f32();
        }
    }

    /// Fresh inverted-dropout mask for a batch of hidden activations:
    /// zero with probability `dropout`, else 1/(1-dropout).
    pub fn dropout_mask(&self, batch: usize, rng: &mut impl Rng) -> Tensor {
        let keep = 1.0 - self.dropout;
        let mut m = Tensor::zeros(&[batch, self.hidden]);
        for v in m.data_mut() {
            if rng.gen::<f64>() >= self.dropout {
                *v = 1.0 / keep;
            }
        }
        m
    }

    /// Logits node `[B, classes]` from a rank-2 latent node `[B, p_L]`.
    pub fn logits_nodes(&self, g: &mut Graph, latent: NodeId, dropout_mask: Option<Tensor>) -> Result<NodeId> {
        let w1 = g.param(&self.w1);
        let b1 = g.param(&self.b1);
        let mut h = g.affine(latent, w1, b1)?;
        h = g.relu(h)?;
        if let Some(mask) = dropout_mask {
            h = g.mul_const(h, mask)?;
        }
        let w2 = g.param(&self.w2);
        let b2 = g.param(&self.b2);
        g.affine(h, w2, b2)
    }

    /// Mean cross-entropy node over the batch labels.
    pub fn loss_nodes(&self, g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        if labels.iter().any(|&y| y >= self.classes) {
            return Err(Error::InvalidData(format!("label outside {} classes", self.classes)));
        }
        let logp = g.log_softmax(logits, 1.0)?;
        g.nll_mean(logp, labels.iter().map(|&y| vec![y]).collect(), None)
    }

    /// Dropout-free forward: logits `[B, classes]`.
    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        let h = kernels::relu(&kernels::affine(z, &self.w1.value, &self.b1.value)?);
        kernels::affine(&h, &self.w2.value, &self.b2.value)
    }

    /// Argmax class per row, ties toward the lowest id.
    pub fn predict(&self, z: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(z)?;
        let (batch, c) = (logits.shape()[0], logits.shape()[1]);
        let mut out = Vec::with_capacity(batch);
        for b in 0..batch {
            let row = &logits.data()[b * c..(b + 1) * c];
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            out.push(best);
        }
        Ok(out)
    }

    pub fn hyper(&self) -> Vec<(String, String)> {
        vec![
            ("head_kind".to_string(), "classifier".to_string()),
            ("head_input".to_string(), self.input_dim.to_string()),
            ("head_hidden".to_string(), self.hidden.to_string()),
            ("head_classes".to_string(), self.classes.to_string()),
            ("head_dropout".to_string(), self.dropout.to_string()),
        ]
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.hyper_value("head_kind") != Some("classifier") {
            return Err(Error::IncompatibleCheckpoint("checkpoint has no classifier head".to_string()));
        }
        let num = |key: &str| -> Result<usize> {
            ckpt.hyper_value(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing hyperparameter {:?}", key)))
        };
        let dropout: f64 = ckpt
            .hyper_value("head_dropout")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::IncompatibleCheckpoint("missing hyperparameter \"head_dropout\"".to_string()))?;
        let mut head = ClassifierHead::with_shape(num("head_input")?, num("head_hidden")?, num("head_classes")?, dropout, 0)?;
        restore_params(ckpt, head.params_mut())?;
        Ok(head)
    }
}

/// Independent deconvolutional decoder from the shared latent code to a
/// title-length embedding matrix; the readout reuses the model's W_e.
#[derive(Debug, Clone)]
pub struct SummarizerHead {
    pub latent: usize,
    pub embed_dim: usize,
    /// Mirror source, like the model spec's strided block.
    pub strided: Vec<LayerSpec>,
    pub t_title_request: usize,
    /// Resolved convolution-compatible title width.
    pub t_title: usize,
    pub decoder: DecoderConfig,
    pub dec_params: Vec<(Parameter, Parameter)>,
}

impl SummarizerHead {
    pub fn new(
        latent: usize,
        embed_dim: usize,
        strided: Vec<LayerSpec>,
        t_title_request: usize,
        seed: u64,
    ) -> Result<Self> {
        if latent == 0 || embed_dim == 0 || strided.is_empty() {
            return Err(Error::InvalidData("summarizer needs positive dims and at least one strided layer".to_string()));
        }
        let pairs: Vec<(usize, usize)> = strided.iter().map(|l| (l.h, l.r)).collect();
        let t_title = compatible_length(t_title_request, &pairs)?;
        let mut cur = t_title;
        for l in &strided {
            cur = (cur - l.h) / l.r + 1;
        }
        let mut layers = strided.clone();
        layers.push(LayerSpec { h: cur, r: 1, p: latent });
        let enc = EncoderConfig { embed_dim, layers };
        let decoder = DecoderConfig::mirror(&enc, 1.0);

        let mut dec_params = Vec::new();
        for (l, layer) in decoder.layers.iter().enumerate() {
            let c_in = if l == 0 { latent } else { decoder.layers[l - 1].out_channels };
            let name = format!("head.dec{}.w", l + 1);
            let w = xavier(
                &[c_in, layer.out_channels, layer.h],
                c_in * layer.h,
                layer.out_channels * layer.h,
                seed,
                &name,
            );
            dec_params.push((
                Parameter::new(name, w),
                Parameter::new(format!("head.dec{}.b", l + 1), Tensor::zeros(&[layer.out_channels])),
            ));
        }
        Ok(SummarizerHead { latent, embed_dim, strided, t_title_request, t_title, decoder, dec_params })
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.dec_params.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for (w, b) in self.dec_params.iter_mut() {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn round_params_to_f32(&mut self) {
        for p in self.params_mut() {
            p.value.round_to_f32();
        }
    }

    /// Title embedding matrix `[B, k, T_title]` with unit columns.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        run_deconv_stack(&self.decoder.layers, &self.dec_params, z, self.latent, self.t_title)
    }

    /// Graph twin of [`Self::decode`].
    pub fn decode_nodes(&self, g: &mut Graph, latent: NodeId) -> Result<NodeId> {
        deconv_stack_nodes(g, &self.decoder.layers, &self.dec_params, latent)
    }

    /// Greedy title ids (length `t_title`, pads not stripped) for a batch.
    pub fn titles(&self, model: &AutoencoderModel, z: &Tensor) -> Result<Vec<Vec<usize>>> {
        let xhat = self.decode(z)?;
        model.greedy_readout(&xhat)
    }

    pub fn hyper(&self) -> Vec<(String, String)> {
        let strided = self
            .strided
            .iter()
            .map(|l| format!("{}:{}:{}", l.h, l.r, l.p))
            .collect::<Vec<_>>()
            .join(";");
        vec![
            ("head_kind".to_string(), "summarizer".to_string()),
            ("head_latent".to_string(), self.latent.to_string()),
            ("head_embed_dim".to_string(), self.embed_dim.to_string()),
            ("head_strided".to_string(), strided),
            ("head_t_title_request".to_string(), self.t_title_request.to_string()),
            ("head_t_title".to_string(), self.t_title.to_string()),
        ]
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.hyper_value("head_kind") != Some("summarizer") {
            return Err(Error::IncompatibleCheckpoint("checkpoint has no summarizer head".to_string()));
        }
        let num = |key: &str| -> Result<usize> {
            ckpt.hyper_value(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing hyperparameter {:?}", key)))
        };
        let mut strided = Vec::new();
        for part in ckpt
            .hyper_value("head_strided")
            .ok_or_else(|| Error::IncompatibleCheckpoint("missing hyperparameter \"head_strided\"".to_string()))?
            .split(';')
        {
            let nums: Vec<usize> = part.split(':').filter_map(|f| f.parse().ok()).collect();
            if nums.len() != 3 {
                return Err(Error::IncompatibleCheckpoint(format!("bad strided spec {:?}", part)));
            }
            strided.push(LayerSpec { h: nums[0], r: nums[1], p: nums[2] });
        }
        let mut head = SummarizerHead::new(
            num("head_latent")?,
            num("head_embed_dim")?,
            strided,
            num("head_t_title_request")?,
            0,
        )?;
        if head.t_title != num("head_t_title")? {
            return Err(Error::IncompatibleCheckpoint("stored title width does not match architecture".to_string()));
        }
        restore_params(ckpt, head.params_mut())?;
        Ok(head)
    }
}

fn restore_params(ckpt: &Checkpoint, params: Vec<&mut Parameter>) -> Result<()> {
    for p in params {
        let stored = ckpt
            .param(&p.name)
            .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing parameter {:?}", p.name)))?;
        if stored.shape() != p.value.shape() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "parameter {:?} has shape {:?}, expected {:?}",
                p.name,
                stored.shape(),
                p.value.shape()
            )));
        }
        p.value = stored.clone();
    }
    Ok(())
}
