//! Reverse-mode differentiation over an eagerly evaluated tape.
//!
//! Ops append nodes in topological order as they execute, so backward is a
//! single reverse sweep. A graph is built per training step, bound to the
//! current parameter values through [`Graph::param`] leaves.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numeric::kernels;
use crate::numeric::optim::Parameter;
use crate::numeric::tensor::{gemm, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Operation record; holds input handles plus whatever the backward rule needs.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv1d { x: NodeId, w: NodeId, b: NodeId, stride: usize },
    Deconv1d { x: NodeId, w: NodeId, b: NodeId, stride: usize },
    Relu { x: NodeId },
    NormalizeColumns { x: NodeId },
    /// out[b, :, t] = m[:, ids[b][t]]
    GatherColumns { m: NodeId, ids: Vec<Vec<usize>> },
    /// scores[b, v, t] = <m[:, v], x[b, :, t]>
    CosineScores { m: NodeId, x: NodeId },
    LogSoftmax { x: NodeId, tau: f64 },
    /// Negative mean log-probability of the target ids over counted positions.
    NllMean {
        logp: NodeId,
        targets: Vec<Vec<usize>>,
        mask: Option<Vec<Vec<bool>>>,
    },
    Affine { x: NodeId, w: NodeId, b: NodeId },
    /// Elementwise product with a constant tensor (dropout masks).
    MulConst { x: NodeId, mask: Tensor },
    Scale { x: NodeId, c: f64 },
    Add { a: NodeId, b: NodeId },
    Reshape { x: NodeId },
    Sum { x: NodeId },
    Mean { x: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    /// Parameter name when this leaf was bound through [`Graph::param`].
    param: Option<String>,
}

/// Tape of operation records in topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, param: Option<String>) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
            param,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf; gradients do not flow into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false, None)
    }

    /// Differentiable leaf that is not a named parameter.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true, None)
    }

    /// Leaf bound to a parameter; backward accumulates into grads keyed by name.
    pub fn param(&mut self, p: &Parameter) -> NodeId {
        self.push(Op::Leaf, p.value.clone(), true, Some(p.name.clone()))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Overwrite a leaf's value (used by the finite-difference checker).
    pub fn set_leaf_value(&mut self, id: NodeId, value: Tensor) {
        debug_assert!(matches!(self.nodes[id.0].op, Op::Leaf));
        debug_assert_eq!(self.nodes[id.0].value.shape(), value.shape());
        self.nodes[id.0].value = value;
    }

    pub fn leaf_value_mut(&mut self, id: NodeId) -> &mut Tensor {
        debug_assert!(matches!(self.nodes[id.0].op, Op::Leaf));
        &mut self.nodes[id.0].value
    }

    /// Node ids of parameter leaves with their names.
    pub fn param_leaves(&self) -> Vec<(NodeId, String)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.clone().map(|name| (NodeId(i), name)))
            .collect()
    }

    /// Every leaf gradients flow into, labeled by parameter name or a
    /// positional placeholder for anonymous inputs.
    pub fn differentiable_leaves(&self) -> Vec<(NodeId, String)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf) && n.requires_grad)
            .map(|(i, n)| {
                let name = n.param.clone().unwrap_or_else(|| format!("input{}", i));
                (NodeId(i), name)
            })
            .collect()
    }

    // ---- op builders -------------------------------------------------

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        match op {
            Op::Leaf => unreachable!("leaves are never re-evaluated"),
            Op::Conv1d { x, w, b, stride } => kernels::conv1d(val(*x), val(*w), val(*b), *stride),
            Op::Deconv1d { x, w, b, stride } => kernels::deconv1d(val(*x), val(*w), val(*b), *stride),
            Op::Relu { x } => Ok(kernels::relu(val(*x))),
            Op::NormalizeColumns { x } => kernels::normalize_columns(val(*x)),
            Op::GatherColumns { m, ids } => gather_columns(val(*m), ids),
            Op::CosineScores { m, x } => cosine_scores(val(*m), val(*x)),
            Op::LogSoftmax { x, tau } => kernels::log_softmax_temperature(val(*x), *tau),
            Op::NllMean { logp, targets, mask } => nll_mean(val(*logp), targets, mask.as_ref()),
            Op::Affine { x, w, b } => kernels::affine(val(*x), val(*w), val(*b)),
            Op::MulConst { x, mask } => {
                let xv = val(*x);
                if xv.shape() != mask.shape() {
                    return Err(Error::shape("mul_const", "mask shape mismatch".to_string()));
                }
                let mut out = xv.clone();
                for (o, m) in out.data_mut().iter_mut().zip(mask.data()) {
                    *o *= m;
                }
                Ok(out)
            }
            Op::Scale { x, c } => {
                let mut out = val(*x).clone();
                out.scale(*c);
                Ok(out)
            }
            Op::Add { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                if av.shape() != bv.shape() {
                    return Err(Error::shape("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
                }
                let mut out = av.clone();
                out.add_assign(bv);
                Ok(out)
            }
            Op::Reshape { x } => Ok(val(*x).clone()),
            Op::Sum { x } => Ok(Tensor::scalar(val(*x).data().iter().sum())),
            Op::Mean { x } => {
                let v = val(*x);
                Ok(Tensor::scalar(v.data().iter().sum::<f64>() / v.numel() as f64))
            }
        }
    }

    fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let value = self.eval(&op)?;
        let req = self.requires(inputs);
        Ok(self.push(op, value, req, None))
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        self.apply(Op::Conv1d { x, w, b, stride }, &[x, w, b])
    }

    pub fn deconv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        self.apply(Op::Deconv1d { x, w, b, stride }, &[x, w, b])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu { x }, &[x])
    }

    pub fn normalize_columns(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::NormalizeColumns { x }, &[x])
    }

    pub fn gather_columns(&mut self, m: NodeId, ids: Vec<Vec<usize>>) -> Result<NodeId> {
        self.apply(Op::GatherColumns { m, ids }, &[m])
    }

    pub fn cosine_scores(&mut self, m: NodeId, x: NodeId) -> Result<NodeId> {
        self.apply(Op::CosineScores { m, x }, &[m, x])
    }

    pub fn log_softmax(&mut self, x: NodeId, tau: f64) -> Result<NodeId> {
        self.apply(Op::LogSoftmax { x, tau }, &[x])
    }

    pub fn nll_mean(
        &mut self,
        logp: NodeId,
        targets: Vec<Vec<usize>>,
        mask: Option<Vec<Vec<bool>>>,
    ) -> Result<NodeId> {
        self.apply(Op::NllMean { logp, targets, mask }, &[logp])
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Affine { x, w, b }, &[x, w, b])
    }

    pub fn mul_const(&mut self, x: NodeId, mask: Tensor) -> Result<NodeId> {
        self.apply(Op::MulConst { x, mask }, &[x])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::Scale { x, c }, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add { a, b }, &[a, b])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.nodes[x.0].value.reshaped(shape)?;
        let req = self.requires(&[x]);
        Ok(self.push(Op::Reshape { x }, value, req, None))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Mean { x }, &[x])
    }

    // ---- backward ----------------------------------------------------

    fn accum(&mut self, id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.nodes[id.0].grad {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse sweep from a scalar loss; every node reachable from the loss
    /// gets its gradient, parameter leaves included.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].value.shape().to_vec()));
        }
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = self.nodes[i].grad.clone().expect("checked above");
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Conv1d { x, w, b, stride } => {
                    let (dx, dw, db) = kernels::conv1d_backward(
                        self.value(x),
                        self.value(w),
                        stride,
                        &g,
                    )?;
                    self.accum(x, dx);
                    self.accum(w, dw);
                    self.accum(b, db);
                }
                Op::Deconv1d { x, w, b, stride } => {
                    let (dx, dw, db) = kernels::deconv1d_backward(
                        self.value(x),
                        self.value(w),
                        stride,
                        &g,
                    )?;
                    self.accum(x, dx);
                    self.accum(w, dw);
                    self.accum(b, db);
                }
                Op::Relu { x } => {
                    let dx = kernels::relu_backward(self.value(x), &g);
                    self.accum(x, dx);
                }
                Op::NormalizeColumns { x } => {
                    let y = &self.nodes[i].value;
                    let dx = kernels::normalize_columns_backward(self.value(x), y, &g);
                    self.accum(x, dx);
                }
                Op::GatherColumns { m, ref ids } => {
                    let dm = gather_columns_backward(self.value(m), ids, &g);
                    self.accum(m, dm);
                }
                Op::CosineScores { m, x } => {
                    let (dm, dx) = cosine_scores_backward(self.value(m), self.value(x), &g);
                    self.accum(m, dm);
                    self.accum(x, dx);
                }
                Op::LogSoftmax { x, tau } => {
                    let out = &self.nodes[i].value;
                    let dx = kernels::log_softmax_temperature_backward(out, tau, &g);
                    self.accum(x, dx);
                }
                Op::NllMean { logp, ref targets, ref mask } => {
                    let dlogp = nll_mean_backward(self.value(logp), targets, mask.as_ref(), g.item());
                    self.accum(logp, dlogp);
                }
                Op::Affine { x, w, b } => {
                    let (dx, dw, db) = kernels::affine_backward(self.value(x), self.value(w), &g);
                    self.accum(x, dx);
                    self.accum(w, dw);
                    self.accum(b, db);
                }
                Op::MulConst { x, ref mask } => {
                    let mut dx = g.clone();
                    for (d, m) in dx.data_mut().iter_mut().zip(mask.data()) {
                        *d *= m;
                    }
                    self.accum(x, dx);
                }
                Op::Scale { x, c } => {
                    let mut dx = g.clone();
                    dx.scale(c);
                    self.accum(x, dx);
                }
                Op::Add { a, b } => {
                    self.accum(a, g.clone());
                    self.accum(b, g);
                }
                Op::Reshape { x } => {
                    let shape = self.value(x).shape().to_vec();
                    let dx = g.reshaped(&shape)?;
                    self.accum(x, dx);
                }
                Op::Sum { x } => {
                    let dx = Tensor::filled(self.value(x).shape(), g.item());
                    self.accum(x, dx);
                }
                Op::Mean { x } => {
                    let n = self.value(x).numel() as f64;
                    let dx = Tensor::filled(self.value(x).shape(), g.item() / n);
                    self.accum(x, dx);
                }
            }
        }
        Ok(())
    }

    /// Add this graph's parameter-leaf gradients into matching parameters.
    /// Returns an error naming the parameter if any gradient is non-finite.
    pub fn accumulate_param_grads(&self, params: &mut [&mut Parameter]) -> Result<()> {
        let by_name: HashMap<String, usize> = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        for (id, name) in self.param_leaves() {
            if let Some(g) = self.grad(id) {
                if !g.all_finite() {
                    return Err(Error::GradientOverflow { param: name });
                }
                if let Some(&i) = by_name.get(&name) {
                    params[i].grad.add_assign(g);
                }
            }
        }
        Ok(())
    }

    /// Recompute every non-leaf value in topological order, reusing the
    /// recorded structure. Used by the finite-difference checker after
    /// perturbing a leaf.
    pub fn refresh_forward(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let value = match op {
                Op::Reshape { x } => {
                    let shape = self.nodes[i].value.shape().to_vec();
                    self.nodes[x.0].value.reshaped(&shape)?
                }
                ref other => self.eval(other)?,
            };
            self.nodes[i].value = value;
        }
        Ok(())
    }

    /// Signs of every ReLU input coordinate (-1, 0, +1), in node order.
    /// The gradient checker compares snapshots from the two perturbed
    /// evaluations to detect kink crossings.
    pub fn relu_input_signs(&self) -> Vec<i8> {
        let mut signs = Vec::new();
        for n in &self.nodes {
            if let Op::Relu { x } = n.op {
                for v in self.nodes[x.0].value.data() {
                    signs.push(if *v > 0.0 {
                        1
                    } else if *v < 0.0 {
                        -1
                    } else {
                        0
                    });
                }
            }
        }
        signs
    }
}

// ---- op helpers ------------------------------------------------------

fn gather_columns(m: &Tensor, ids: &[Vec<usize>]) -> Result<Tensor> {
    let (k, v) = match *m.shape() {
        [k, v] => (k, v),
        _ => return Err(Error::shape("gather_columns", format!("matrix must be [k, V], got {:?}", m.shape()))),
    };
    let batch = ids.len();
    let t = ids.first().map(|row| row.len()).unwrap_or(0);
    if batch == 0 || t == 0 {
        return Err(Error::shape("gather_columns", "empty id batch".to_string()));
    }
    let mut out = Tensor::zeros(&[batch, k, t]);
    for (b, row) in ids.iter().enumerate() {
        if row.len() != t {
            return Err(Error::shape("gather_columns", "ragged id rows".to_string()));
        }
        for (j, &id) in row.iter().enumerate() {
            if id >= v {
                return Err(Error::shape("gather_columns", format!("id {} >= V {}", id, v)));
            }
            for c in 0..k {
                let idx = (b * k + c) * t + j;
                out.data_mut()[idx] = m.at2(c, id);
            }
        }
    }
    Ok(out)
}

fn gather_columns_backward(m: &Tensor, ids: &[Vec<usize>], grad: &Tensor) -> Tensor {
    let (k, _) = (m.shape()[0], m.shape()[1]);
    let t = ids[0].len();
    let mut dm = Tensor::zeros(m.shape());
    for (b, row) in ids.iter().enumerate() {
        for (j, &id) in row.iter().enumerate() {
            for c in 0..k {
                let gidx = (b * k + c) * t + j;
                let midx = dm.idx2(c, id);
                dm.data_mut()[midx] += grad.data()[gidx];
            }
        }
    }
    dm
}

/// scores[b, v, t] = sum_c m[c, v] * x[b, c, t]; inner product equals cosine
/// similarity when both sides carry unit-norm columns.
fn cosine_scores(m: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (k, v) = match *m.shape() {
        [k, v] => (k, v),
        _ => return Err(Error::shape("cosine_scores", format!("matrix must be [k, V], got {:?}", m.shape()))),
    };
    let (batch, xk, t, rank3) = match *x.shape() {
        [xk, t] => (1, xk, t, false),
        [b, xk, t] => (b, xk, t, true),
        _ => return Err(Error::shape("cosine_scores", format!("input must be [B, k, T], got {:?}", x.shape()))),
    };
    if xk != k {
        return Err(Error::shape("cosine_scores", format!("k mismatch: {} vs {}", xk, k)));
    }
    let shape: Vec<usize> = if rank3 { vec![batch, v, t] } else { vec![v, t] };
    let mut out = Tensor::zeros(&shape);
    let slab_x = k * t;
    let slab_s = v * t;
    for b in 0..batch {
        gemm(
            v,
            k,
            t,
            1.0,
            m.data(),
            true,
            &x.data()[b * slab_x..(b + 1) * slab_x],
            false,
            0.0,
            &mut out.data_mut()[b * slab_s..(b + 1) * slab_s],
        );
    }
    Ok(out)
}

fn cosine_scores_backward(m: &Tensor, x: &Tensor, grad: &Tensor) -> (Tensor, Tensor) {
    let (k, v) = (m.shape()[0], m.shape()[1]);
    let (batch, t) = match *x.shape() {
        [_, t] => (1, t),
        [b, _, t] => (b, t),
        _ => unreachable!(),
    };
    let mut dm = Tensor::zeros(m.shape());
    let mut dx = Tensor::zeros(x.shape());
    let slab_x = k * t;
    let slab_s = v * t;
    for b in 0..batch {
        let xs = &x.data()[b * slab_x..(b + 1) * slab_x];
        let gs = &grad.data()[b * slab_s..(b + 1) * slab_s];
        // dM += X[b] (k x T) @ dS[b]^T (T x V)
        gemm(k, t, v, 1.0, xs, false, gs, true, 1.0, dm.data_mut());
        // dX[b] = M (k x V) @ dS[b] (V x T)
        gemm(
            k,
            v,
            t,
            1.0,
            m.data(),
            false,
            gs,
            false,
            0.0,
            &mut dx.data_mut()[b * slab_x..(b + 1) * slab_x],
        );
    }
    (dm, dx)
}

fn counted_positions(
    batch: usize,
    t: usize,
    mask: Option<&Vec<Vec<bool>>>,
) -> Result<Vec<(usize, usize)>> {
    let mut counted = Vec::new();
    for b in 0..batch {
        for j in 0..t {
            let keep = mask.map(|m| m[b][j]).unwrap_or(true);
            if keep {
                counted.push((b, j));
            }
        }
    }
    if counted.is_empty() {
        return Err(Error::InvalidData("no counted positions in loss".to_string()));
    }
    Ok(counted)
}

fn nll_view(logp: &Tensor) -> Result<(usize, usize, usize)> {
    match *logp.shape() {
        [b, v] => Ok((b, v, 1)),
        [b, v, t] => Ok((b, v, t)),
        _ => Err(Error::shape("nll_mean", format!("log-probs must be [B, V] or [B, V, T], got {:?}", logp.shape()))),
    }
}

fn nll_mean(logp: &Tensor, targets: &[Vec<usize>], mask: Option<&Vec<Vec<bool>>>) -> Result<Tensor> {
    let (batch, v, t) = nll_view(logp)?;
    if targets.len() != batch || targets.iter().any(|row| row.len() != t) {
        return Err(Error::shape("nll_mean", "targets do not match log-prob shape".to_string()));
    }
    let counted = counted_positions(batch, t, mask)?;
    let mut total = 0.0;
    for &(b, j) in &counted {
        let y = targets[b][j];
        if y >= v {
            return Err(Error::shape("nll_mean", format!("target id {} >= V {}", y, v)));
        }
        total += logp.data()[(b * v + y) * t + j];
    }
    Ok(Tensor::scalar(-total / counted.len() as f64))
}

fn nll_mean_backward(
    logp: &Tensor,
    targets: &[Vec<usize>],
    mask: Option<&Vec<Vec<bool>>>,
    upstream: f64,
) -> Tensor {
    let (batch, v, t) = nll_view(logp).expect("checked in forward");
    let counted = counted_positions(batch, t, mask).expect("checked in forward");
    let scale = -upstream / counted.len() as f64;
    let mut dlogp = Tensor::zeros(logp.shape());
    for &(b, j) in &counted {
        let y = targets[b][j];
        dlogp.data_mut()[(b * v + y) * t + j] += scale;
    }
    dlogp
}
