//! The convolutional encoder, deconvolutional decoder, cosine readout, and
//! the reconstruction objective.
//!
//! The encoder applies strided conv+ReLU layers and then a collapse layer (a
//! convolution whose filter spans the whole remaining extent), producing one
//! latent column per sentence. The decoder mirrors the layer specs with
//! transposed convolutions, ReLU between layers and none after the last, and
//! the output embedding matrix is column-normalized before the readout.
//! Latent batches are plain `[B, p_L]` tensors.

use crate::corpus::sentence::{compatible_length, PaddedBatch};
use crate::error::{Error, Result};
use crate::numeric::checkpoint::Checkpoint;
use crate::numeric::graph::{Graph, NodeId};
use crate::numeric::kernels;
use crate::numeric::optim::Parameter;
use crate::numeric::tensor::Tensor;
use crate::rng;

/// One strided convolution layer: filter width, stride, filter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub h: usize,
    pub r: usize,
    pub p: usize,
}

/// Architecture description before length resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub embed_dim: usize,
    /// The L-1 strided layers; the collapse layer is derived.
    pub strided: Vec<LayerSpec>,
    /// Latent dimension p_L (filter count of the collapse layer).
    pub latent: usize,
    pub temperature: f64,
    /// Requested maximum raw sentence length.
    pub t_request: usize,
    /// Pad T up so every stride divides exactly and the decoder mirror is
    /// exact; turning it off keeps T as requested with floor arithmetic.
    pub pad_to_compatible: bool,
}

impl ModelSpec {
    pub fn word_default() -> Self {
        ModelSpec {
            embed_dim: 300,
            strided: vec![LayerSpec { h: 5, r: 2, p: 300 }, LayerSpec { h: 5, r: 2, p: 600 }],
            latent: 500,
            temperature: 0.01,
            t_request: 60,
            pad_to_compatible: true,
        }
    }

    pub fn char_default() -> Self {
        ModelSpec {
            embed_dim: 40,
            strided: vec![LayerSpec { h: 5, r: 2, p: 300 }, LayerSpec { h: 5, r: 2, p: 600 }],
            latent: 900,
            temperature: 0.01,
            t_request: 120,
            pad_to_compatible: true,
        }
    }

    fn strided_pairs(&self) -> Vec<(usize, usize)> {
        self.strided.iter().map(|l| (l.h, l.r)).collect()
    }

    /// The input width the model will actually use.
    pub fn resolved_t(&self) -> Result<usize> {
        if self.pad_to_compatible {
            compatible_length(self.t_request, &self.strided_pairs())
        } else {
            Ok(self.t_request)
        }
    }
}

/// Resolved encoder: `layers` ends with the collapse layer (stride 1, width
/// equal to the previous spatial length).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl EncoderConfig {
    /// Input channel count of layer `l` (0-based).
    fn in_channels(&self, l: usize) -> usize {
        if l == 0 {
            self.embed_dim
        } else {
            self.layers[l - 1].p
        }
    }
}

/// Mirror of the encoder; `out_channels` of the last layer is the embed dim.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub layers: Vec<DeconvSpec>,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeconvSpec {
    pub h: usize,
    pub r: usize,
    pub out_channels: usize,
}

impl DecoderConfig {
    pub fn mirror(enc: &EncoderConfig, temperature: f64) -> Self {
        let n = enc.layers.len();
        let layers = (0..n)
            .rev()
            .map(|l| DeconvSpec {
                h: enc.layers[l].h,
                r: enc.layers[l].r,
                out_channels: enc.in_channels(l),
            })
            .collect();
        DecoderConfig { layers, temperature }
    }

    fn in_channels(&self, l: usize, latent: usize) -> usize {
        if l == 0 {
            latent
        } else {
            self.layers[l - 1].out_channels
        }
    }
}

/// Encoder, decoder, and the shared embedding matrix.
#[derive(Debug, Clone)]
pub struct AutoencoderModel {
    pub spec: ModelSpec,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub vocab_size: usize,
    /// Fixed padded input width.
    pub t: usize,
    /// W_e, shape [k, V]; normalized on every use.
    pub embedding: Parameter,
    /// (weights [p, c, h], bias [p]) per encoder layer.
    pub enc_params: Vec<(Parameter, Parameter)>,
    /// (weights [p_in, c_out, h], bias [c_out]) per decoder layer.
    pub dec_params: Vec<(Parameter, Parameter)>,
}

pub(crate) fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64, name: &str) -> Tensor {
    use rand::Rng;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut r = rng::stream(seed, name, 0);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("shape/product agree")
}

impl AutoencoderModel {
    pub fn new(spec: ModelSpec, vocab_size: usize, seed: u64) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::VocabularyTooSmall { v: vocab_size });
        }
        if spec.embed_dim == 0 || spec.latent == 0 || spec.strided.is_empty() {
            return Err(Error::InvalidData("model needs positive dims and at least one strided layer".to_string()));
        }
        if spec.temperature <= 0.0 {
            return Err(Error::NonpositiveTemperature(spec.temperature));
        }
        let t = spec.resolved_t()?;

        // floor length trace through the strided layers; collapse spans the rest
        let mut cur = t;
        for (i, l) in spec.strided.iter().enumerate() {
            if cur < l.h {
                return Err(Error::IncompatibleLength { layer: i + 1, len: cur, h: l.h, r: l.r });
            }
            cur = (cur - l.h) / l.r + 1;
        }
        let mut layers = spec.strided.clone();
        layers.push(LayerSpec { h: cur, r: 1, p: spec.latent });
        let encoder = EncoderConfig { embed_dim: spec.embed_dim, layers };
        let decoder = DecoderConfig::mirror(&encoder, spec.temperature);

        let mut er = rng::stream(seed, "embedding", 0);
        let mut embed_data = Vec::with_capacity(spec.embed_dim * vocab_size);
        for _ in 0..spec.embed_dim * vocab_size {
            embed_data.push(rng::gaussian(&mut er));
        }
        let embed_raw = Tensor::from_vec(&[spec.embed_dim, vocab_size], embed_data)?;
        let embedding = Parameter::new("embed", kernels::normalize_columns(&embed_raw)?);

        let mut enc_params = Vec::new();
        for (l, layer) in encoder.layers.iter().enumerate() {
            let c_in = encoder.in_channels(l);
            let name = format!("enc{}.w", l + 1);
            let w = xavier(&[layer.p, c_in, layer.h], c_in * layer.h, layer.p * layer.h, seed, &name);
            enc_params.push((
                Parameter::new(name, w),
                Parameter::new(format!("enc{}.b", l + 1), Tensor::zeros(&[layer.p])),
            ));
        }
        let mut dec_params = Vec::new();
        for (l, layer) in decoder.layers.iter().enumerate() {
            let c_in = decoder.in_channels(l, spec.latent);
            let name = format!("dec{}.w", l + 1);
            let w = xavier(
                &[c_in, layer.out_channels, layer.h],
                c_in * layer.h,
                layer.out_channels * layer.h,
                seed,
                &name,
            );
            dec_params.push((
                Parameter::new(name, w),
                Parameter::new(format!("dec{}.b", l + 1), Tensor::zeros(&[layer.out_channels])),
            ));
        }
        Ok(AutoencoderModel {
            spec,
            encoder,
            decoder,
            vocab_size,
            t,
            embedding,
            enc_params,
            dec_params,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    pub fn num_layers(&self) -> usize {
        self.encoder.layers.len()
    }

    /// Spatial lengths entering and leaving each encoder layer for width `t`.
    /// Errors name the first layer whose arithmetic fails; in exact mode a
    /// stride that does not divide is already a failure.
    pub fn encoder_lengths(&self, t: usize) -> Result<Vec<usize>> {
        let exact = self.spec.pad_to_compatible;
        let last = self.encoder.layers.len() - 1;
        let mut trace = vec![t];
        let mut cur = t;
        for (l, layer) in self.encoder.layers.iter().enumerate() {
            let fail = cur < layer.h
                || (exact && l < last && (cur - layer.h) % layer.r != 0)
                || (l == last && cur != layer.h);
            if fail {
                return Err(Error::IncompatibleLength { layer: l + 1, len: cur, h: layer.h, r: layer.r });
            }
            cur = (cur - layer.h) / layer.r + 1;
            trace.push(cur);
        }
        Ok(trace)
    }

    /// All trainable parameters, embedding first.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.embedding];
        for (w, b) in self.enc_params.iter().chain(self.dec_params.iter()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = vec![&mut self.embedding];
        for (w, b) in self.enc_params.iter_mut().chain(self.dec_params.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Snap every parameter through f32, mirroring a checkpoint round trip.
    pub fn round_params_to_f32(&mut self) {
        for p in self.params_mut() {
            p.value.round_to_f32();
        }
    }

    pub fn normalized_embedding(&self) -> Result<Tensor> {
        kernels::normalize_columns(&self.embedding.value)
    }

    // ---- pure forward (inference) --------------------------------------

    /// Gather normalized embedding columns: `[B, k, T]`.
    pub fn embed(&self, batch: &PaddedBatch) -> Result<Tensor> {
        let w = self.normalized_embedding()?;
        let (k, t) = (self.embed_dim(), batch.t);
        let mut out = Tensor::zeros(&[batch.len(), k, t]);
        for (b, row) in batch.ids.iter().enumerate() {
            for (j, &id) in row.iter().enumerate() {
                if id >= self.vocab_size {
                    return Err(Error::InvalidData(format!("token id {} outside vocabulary of {}", id, self.vocab_size)));
                }
                for c in 0..k {
                    let idx = (b * k + c) * t + j;
                    out.data_mut()[idx] = w.at2(c, id);
                }
            }
        }
        Ok(out)
    }

    /// Latent batch `[B, p_L]`.
    pub fn encode(&self, batch: &PaddedBatch) -> Result<Tensor> {
        self.encoder_lengths(batch.t)?;
        let mut x = self.embed(batch)?;
        let last = self.encoder.layers.len() - 1;
        for (l, (layer, (w, b))) in self.encoder.layers.iter().zip(&self.enc_params).enumerate() {
            x = kernels::conv1d(&x, &w.value, &b.value, layer.r)?;
            if l < last {
                x = kernels::relu(&x);
            }
        }
        // [B, p_L, 1] -> [B, p_L]
        x.reshaped(&[batch.len(), self.latent_dim()])
    }

    /// Reconstructed embedding matrix with unit-norm columns: `[B, k, t]`.
    /// The deconv stack must land exactly on `t`; a longer result is cropped,
    /// a shorter one is an arithmetic mismatch.
    pub fn decode(&self, z: &Tensor, t: usize) -> Result<Tensor> {
        run_deconv_stack(&self.decoder.layers, &self.dec_params, z, self.latent_dim(), t)
    }

    /// Log-probabilities per position: `[B, V, T]` (or `[V, T]` for a
    /// rank-2 input). The embedding is re-normalized; `xhat` is assumed to
    /// carry unit columns already, as [`Self::decode`] guarantees.
    pub fn readout_logprobs(&self, xhat: &Tensor) -> Result<Tensor> {
        let w = self.normalized_embedding()?;
        // lift to rank 3 so the softmax sees V as the class axis
        let rank2 = xhat.rank() == 2;
        let lifted;
        let xv = if rank2 {
            lifted = xhat.reshaped(&[1, xhat.shape()[0], xhat.shape()[1]])?;
            &lifted
        } else {
            xhat
        };
        let scores = cosine_scores_pure(&w, xv)?;
        let logp = kernels::log_softmax_temperature(&scores, self.decoder.temperature)?;
        if rank2 {
            logp.reshaped(&[logp.shape()[1], logp.shape()[2]])
        } else {
            Ok(logp)
        }
    }

    /// Per-position argmax of the cosine scores, ties toward the lowest id.
    pub fn greedy_readout(&self, xhat: &Tensor) -> Result<Vec<Vec<usize>>> {
        let w = self.normalized_embedding()?;
        let scores = cosine_scores_pure(&w, xhat)?;
        let (batch, v, t) = match *scores.shape() {
            [v, t] => (1, v, t),
            [b, v, t] => (b, v, t),
            _ => unreachable!("cosine_scores_pure emits rank 2 or 3"),
        };
        let mut out = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut row = Vec::with_capacity(t);
            for j in 0..t {
                let mut best = 0usize;
                let mut best_score = f64::NEG_INFINITY;
                for id in 0..v {
                    let s = scores.data()[(b * v + id) * t + j];
                    if s > best_score {
                        best_score = s;
                        best = id;
                    }
                }
                row.push(best);
            }
            out.push(row);
        }
        Ok(out)
    }

    /// encode -> decode -> greedy readout at the batch width.
    pub fn reconstruct(&self, batch: &PaddedBatch) -> Result<Vec<Vec<usize>>> {
        let z = self.encode(batch)?;
        let xhat = self.decode(&z, batch.t)?;
        self.greedy_readout(&xhat)
    }

    // ---- differentiable forward ----------------------------------------

    /// Normalized-embedding node, shared root for gather and readout.
    fn embedding_node(&self, g: &mut Graph) -> Result<NodeId> {
        let leaf = g.param(&self.embedding);
        g.normalize_columns(leaf)
    }

    /// Latent node `[B, p_L, 1]`.
    pub fn encode_nodes(&self, g: &mut Graph, batch: &PaddedBatch) -> Result<NodeId> {
        self.encoder_lengths(batch.t)?;
        let we = self.embedding_node(g)?;
        let mut x = g.gather_columns(we, batch.ids.clone())?;
        let last = self.encoder.layers.len() - 1;
        for (l, (layer, (w, b))) in self.encoder.layers.iter().zip(&self.enc_params).enumerate() {
            let wid = g.param(w);
            let bid = g.param(b);
            x = g.conv1d(x, wid, bid, layer.r)?;
            if l < last {
                x = g.relu(x)?;
            }
        }
        Ok(x)
    }

    /// Decoded, column-normalized embedding node `[B, k, T]`.
    pub fn decode_nodes(&self, g: &mut Graph, latent: NodeId) -> Result<NodeId> {
        deconv_stack_nodes(g, &self.decoder.layers, &self.dec_params, latent)
    }

    /// Log-prob node `[B, V, T]` through the shared embedding.
    pub fn readout_nodes(&self, g: &mut Graph, xhat: NodeId) -> Result<NodeId> {
        let we = self.embedding_node(g)?;
        let scores = g.cosine_scores(we, xhat)?;
        g.log_softmax(scores, self.decoder.temperature)
    }

    /// Mean NLL of the target ids under `logp`, pads skipped when masked.
    pub fn loss_nodes(&self, g: &mut Graph, logp: NodeId, target: &PaddedBatch, mask_pad: bool) -> Result<NodeId> {
        let mask = if mask_pad { Some(target.non_pad_mask()) } else { None };
        g.nll_mean(logp, target.ids.clone(), mask)
    }

    /// Full reconstruction graph: input through encode/decode/readout, loss
    /// against `target` (which differs from `input` for denoising).
    pub fn reconstruction_graph(&self, input: &PaddedBatch, target: &PaddedBatch, mask_pad: bool) -> Result<ForwardGraph> {
        if input.len() != target.len() || input.t != target.t {
            return Err(Error::shape("reconstruction_graph", "input and target batches disagree".to_string()));
        }
        let mut g = Graph::new();
        let latent = self.encode_nodes(&mut g, input)?;
        let xhat = self.decode_nodes(&mut g, latent)?;
        let logp = self.readout_nodes(&mut g, xhat)?;
        let loss = self.loss_nodes(&mut g, logp, target, mask_pad)?;
        Ok(ForwardGraph { graph: g, loss, latent, logp })
    }

    // ---- persistence ----------------------------------------------------

    /// Architecture block for the checkpoint header.
    pub fn hyper(&self) -> Vec<(String, String)> {
        let strided = self
            .spec
            .strided
            .iter()
            .map(|l| format!("{}:{}:{}", l.h, l.r, l.p))
            .collect::<Vec<_>>()
            .join(";");
        vec![
            ("embed_dim".to_string(), self.spec.embed_dim.to_string()),
            ("strided".to_string(), strided),
            ("latent".to_string(), self.spec.latent.to_string()),
            ("temperature".to_string(), self.spec.temperature.to_string()),
            ("t_request".to_string(), self.spec.t_request.to_string()),
            ("pad_to_compatible".to_string(), self.spec.pad_to_compatible.to_string()),
            ("t".to_string(), self.t.to_string()),
            ("vocab_size".to_string(), self.vocab_size.to_string()),
        ]
    }

    /// Rebuild a model from a checkpoint produced with [`Self::hyper`].
    /// Parameters not belonging to the model (head weights, say) are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let get = |key: &str| {
            ckpt.hyper_value(key)
                .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing hyperparameter {:?}", key)))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::IncompatibleCheckpoint(format!("bad hyperparameter {:?}", key)))
        };
        let mut strided = Vec::new();
        for part in get("strided")?.split(';') {
            let fields: Vec<&str> = part.split(':').collect();
            if fields.len() != 3 {
                return Err(Error::IncompatibleCheckpoint(format!("bad strided spec {:?}", part)));
            }
            let nums: Vec<usize> = fields
                .iter()
                .map(|f| f.parse().map_err(|_| Error::IncompatibleCheckpoint(format!("bad strided spec {:?}", part))))
                .collect::<Result<_>>()?;
            strided.push(LayerSpec { h: nums[0], r: nums[1], p: nums[2] });
        }
        let spec = ModelSpec {
            embed_dim: parse_usize("embed_dim")?,
            strided,
            latent: parse_usize("latent")?,
            temperature: get("temperature")?
                .parse()
                .map_err(|_| Error::IncompatibleCheckpoint("bad temperature".to_string()))?,
            t_request: parse_usize("t_request")?,
            pad_to_compatible: get("pad_to_compatible")? == "true",
        };
        let vocab_size = parse_usize("vocab_size")?;
        let mut model = AutoencoderModel::new(spec, vocab_size, 0)?;
        let stored_t = parse_usize("t")?;
        if model.t != stored_t {
            return Err(Error::IncompatibleCheckpoint(format!(
                "resolved width {} does not match stored width {}",
                model.t, stored_t
            )));
        }
        for p in model.params_mut() {
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
        Ok(model)
    }
}

/// Differentiable forward pass handles.
pub struct ForwardGraph {
    pub graph: Graph,
    pub loss: NodeId,
    /// `[B, p_L, 1]`
    pub latent: NodeId,
    /// `[B, V, T]`
    pub logp: NodeId,
}

/// Deconv stack shared by the model decoder and the summarizer head: ReLU
/// between layers, none after the last, column normalization at the end.
/// Overshoot past `t` is cropped, undershoot is an arithmetic mismatch.
pub(crate) fn run_deconv_stack(
    layers: &[DeconvSpec],
    params: &[(Parameter, Parameter)],
    z: &Tensor,
    latent: usize,
    t: usize,
) -> Result<Tensor> {
    let (batch, pl) = match *z.shape() {
        [b, p] => (b, p),
        [p] => (1, p),
        _ => return Err(Error::shape("decode", format!("latent must be [B, p_L], got {:?}", z.shape()))),
    };
    if pl != latent {
        return Err(Error::shape("decode", format!("latent dim {} vs {}", pl, latent)));
    }
    let mut x = z.reshaped(&[batch, pl, 1])?;
    let last = layers.len() - 1;
    for (l, (layer, (w, b))) in layers.iter().zip(params).enumerate() {
        x = kernels::deconv1d(&x, &w.value, &b.value, layer.r)?;
        if l < last {
            x = kernels::relu(&x);
        }
    }
    let got = x.shape()[2];
    if got < t {
        return Err(Error::shape("decode", format!("decoder emits length {}, shorter than requested {}", got, t)));
    }
    if got > t {
        x = crop_time(&x, t);
    }
    kernels::normalize_columns(&x)
}

/// Graph twin of [`run_deconv_stack`]; no cropping because training always
/// runs at the exact mirrored width.
pub(crate) fn deconv_stack_nodes(
    g: &mut Graph,
    layers: &[DeconvSpec],
    params: &[(Parameter, Parameter)],
    latent: NodeId,
) -> Result<NodeId> {
    let mut x = latent;
    let last = layers.len() - 1;
    for (l, (layer, (w, b))) in layers.iter().zip(params).enumerate() {
        let wid = g.param(w);
        let bid = g.param(b);
        x = g.deconv1d(x, wid, bid, layer.r)?;
        if l < last {
            x = g.relu(x)?;
        }
    }
    g.normalize_columns(x)
}

fn crop_time(x: &Tensor, t: usize) -> Tensor {
    let (b, c, t_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[b, c, t]);
    for bi in 0..b {
        for ci in 0..c {
            for j in 0..t {
                let v = x.data()[(bi * c + ci) * t_in + j];
                out.data_mut()[(bi * c + ci) * t + j] = v;
            }
        }
    }
    out
}

/// scores[b, v, t] = <w[:, v], xhat[b, :, t]>, preserving the input rank.
fn cosine_scores_pure(w: &Tensor, xhat: &Tensor) -> Result<Tensor> {
    use crate::numeric::tensor::gemm;
    let (k, v) = match *w.shape() {
        [k, v] => (k, v),
        _ => return Err(Error::shape("readout", format!("embedding must be [k, V], got {:?}", w.shape()))),
    };
    let (batch, xk, t, rank3) = match *xhat.shape() {
        [xk, t] => (1, xk, t, false),
        [b, xk, t] => (b, xk, t, true),
        _ => return Err(Error::shape("readout", format!("xhat must be [B, k, T], got {:?}", xhat.shape()))),
    };
    if xk != k {
        return Err(Error::shape("readout", format!("embed dim {} vs {}", xk, k)));
    }
    let shape: Vec<usize> = if rank3 { vec![batch, v, t] } else { vec![v, t] };
    let mut scores = Tensor::zeros(&shape);
    for b in 0..batch {
        gemm(
            v,
            k,
            t,
            1.0,
            w.data(),
            true,
            &xhat.data()[b * k * t..(b + 1) * k * t],
            false,
            0.0,
            &mut scores.data_mut()[b * v * t..(b + 1) * v * t],
        );
    }
    Ok(scores)
}

/// Negative mean log-probability of the target ids; pads excluded when
/// `mask_pad`. Pure companion of the graph loss for evaluation paths.
pub fn reconstruction_loss(logp: &Tensor, targets: &PaddedBatch, mask_pad: bool) -> Result<f64> {
    let (batch, v, t) = match *logp.shape() {
        [v, t] => (1, v, t),
        [b, v, t] => (b, v, t),
        _ => return Err(Error::shape("reconstruction_loss", format!("log-probs must be [B, V, T], got {:?}", logp.shape()))),
    };
    if targets.len() != batch || targets.t != t {
        return Err(Error::shape("reconstruction_loss", "target batch disagrees with log-probs".to_string()));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for (b, row) in targets.ids.iter().enumerate() {
        for (j, &y) in row.iter().enumerate() {
            if mask_pad && j >= targets.lengths[b] {
                continue;
            }
            if y >= v {
                return Err(Error::shape("reconstruction_loss", format!("target id {} >= V {}", y, v)));
            }
            total += logp.data()[(b * v + y) * t + j];
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::InvalidData("no counted positions in loss".to_string()));
    }
    Ok(-total / counted as f64)
}
