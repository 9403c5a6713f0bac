//! Numeric kernels for the model's differentiable operations.
//!
//! Convolutions are "valid" (no implicit zero padding) and strided:
//!   conv1d:   T_out = floor((T - h)/r) + 1
//!   deconv1d: T_out = (T - 1)*r + h
//! deconv1d is the exact adjoint of conv1d for matching (h, r), which the
//! backward rules below rely on.
//!
//! Tensors may be rank 2 (single item, `[C, T]`) or rank 3 (batched,
//! `[B, C, T]`); rank-2 inputs behave as a batch of one.

use crate::error::{Error, Result};
use crate::numeric::tensor::{gemm, Tensor};

/// Norm floor below which an embedding column counts as degenerate.
pub const NORM_EPS: f64 = 1e-8;

/// (batch, channels, length) view of a rank-2 or rank-3 tensor.
fn as_batched(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, len] => Ok((1, c, len)),
        [b, c, len] => Ok((b, c, len)),
        _ => Err(Error::shape(
            op,
            format!("expected rank 2 or 3 input, got {:?}", t.shape()),
        )),
    }
}

fn batched_shape(rank_in: usize, b: usize, c: usize, len: usize) -> Vec<usize> {
    if rank_in == 2 {
        vec![c, len]
    } else {
        vec![b, c, len]
    }
}

/// cols[(c*h + u), j] = src[c, j*r + u] for a C x T slab.
fn im2col(src: &[f64], c_in: usize, t: usize, h: usize, r: usize, cols: &mut [f64]) {
    let t_out = (t - h) / r + 1;
    debug_assert_eq!(cols.len(), c_in * h * t_out);
    for c in 0..c_in {
        for u in 0..h {
            let row = (c * h + u) * t_out;
            let base = c * t + u;
            for j in 0..t_out {
                cols[row + j] = src[base + j * r];
            }
        }
    }
}

/// dst[c, j*r + u] += cols[(c*h + u), j]; dst is a C x T_dst slab.
fn col2im_add(cols: &[f64], c_in: usize, t_cols: usize, h: usize, r: usize, dst: &mut [f64], t_dst: usize) {
    debug_assert_eq!(cols.len(), c_in * h * t_cols);
    debug_assert_eq!(dst.len(), c_in * t_dst);
    for c in 0..c_in {
        for u in 0..h {
            let row = (c * h + u) * t_cols;
            let base = c * t_dst + u;
            for j in 0..t_cols {
                dst[base + j * r] += cols[row + j];
            }
        }
    }
}

fn check_conv_weights(w: &Tensor, bias: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    let (p, c, h) = match *w.shape() {
        [p, c, h] => (p, c, h),
        _ => {
            return Err(Error::shape(
                op,
                format!("weights must be [p, c, h], got {:?}", w.shape()),
            ))
        }
    };
    if bias.rank() != 1 {
        return Err(Error::shape(
            op,
            format!("bias must be rank 1, got {:?}", bias.shape()),
        ));
    }
    Ok((p, c, h))
}

/// Strided valid convolution: `[B, c, T] x [p, c, h] -> [B, p, T_out]`.
///
/// out[i][j] = b[i] + sum_{c,u} X[c][j*r + u] * W[i][c][u]
pub fn conv1d(x: &Tensor, w: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (batch, c_in, t) = as_batched(x, "conv1d")?;
    let (p, wc, h) = check_conv_weights(w, bias, "conv1d")?;
    if wc != c_in {
        return Err(Error::shape(
            "conv1d",
            format!("input channels {} != weight channels {}", c_in, wc),
        ));
    }
    if bias.numel() != p {
        return Err(Error::shape(
            "conv1d",
            format!("bias length {} != filter count {}", bias.numel(), p),
        ));
    }
    debug_assert!(stride >= 1, "stride must be >= 1");
    if t < h {
        return Err(Error::InputShorterThanFilter { t, h });
    }
    let t_out = (t - h) / stride + 1;
    let mut out = Tensor::zeros(&batched_shape(x.rank(), batch, p, t_out));
    let mut cols = vec![0.0; c_in * h * t_out];
    let slab_in = c_in * t;
    let slab_out = p * t_out;
    for b in 0..batch {
        let src = &x.data()[b * slab_in..(b + 1) * slab_in];
        im2col(src, c_in, t, h, stride, &mut cols);
        let dst = &mut out.data_mut()[b * slab_out..(b + 1) * slab_out];
        gemm(p, c_in * h, t_out, 1.0, w.data(), false, &cols, false, 0.0, dst);
        for i in 0..p {
            let bi = bias.data()[i];
            for v in dst[i * t_out..(i + 1) * t_out].iter_mut() {
                *v += bi;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv1d`] w.r.t. input, weights and bias.
///
/// Returns (dX, dW, db) for upstream gradient `grad` of shape `[B, p, T_out]`.
pub fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, c_in, t) = as_batched(x, "conv1d_backward")?;
    let (p, _, h) = match *w.shape() {
        [p, c, h] => (p, c, h),
        _ => return Err(Error::shape("conv1d_backward", "bad weight rank".to_string())),
    };
    let t_out = (t - h) / stride + 1;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[p]);
    let mut cols = vec![0.0; c_in * h * t_out];
    let mut dcols = vec![0.0; c_in * h * t_out];
    let slab_in = c_in * t;
    let slab_out = p * t_out;
    for b in 0..batch {
        let g = &grad.data()[b * slab_out..(b + 1) * slab_out];
        let src = &x.data()[b * slab_in..(b + 1) * slab_in];
        im2col(src, c_in, t, h, stride, &mut cols);
        // dW += g @ cols^T
        gemm(p, t_out, c_in * h, 1.0, g, false, &cols, true, 1.0, dw.data_mut());
        // dcols = W^T @ g, then scatter back to dX
        gemm(c_in * h, p, t_out, 1.0, w.data(), true, g, false, 0.0, &mut dcols);
        col2im_add(&dcols, c_in, t_out, h, stride, &mut dx.data_mut()[b * slab_in..(b + 1) * slab_in], t);
        for i in 0..p {
            db.data_mut()[i] += g[i * t_out..(i + 1) * t_out].iter().sum::<f64>();
        }
    }
    Ok((dx, dw, db))
}

/// Strided transposed convolution: `[B, p, T] x [p, c, h] -> [B, c, T_out]`.
///
/// Scatter-add adjoint of [`conv1d`]: out[c][j*r + u] += sum_i C[i][j] * W[i][c][u],
/// plus bias b[c] at every output position.
pub fn deconv1d(x: &Tensor, w: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (batch, p_in, t) = as_batched(x, "deconv1d")?;
    let (p, c_out, h) = check_conv_weights(w, bias, "deconv1d")?;
    if p != p_in {
        return Err(Error::shape(
            "deconv1d",
            format!("input channels {} != weight channels {}", p_in, p),
        ));
    }
    if bias.numel() != c_out {
        return Err(Error::shape(
            "deconv1d",
            format!("bias length {} != output channels {}", bias.numel(), c_out),
        ));
    }
    debug_assert!(stride >= 1, "stride must be >= 1");
    let t_out = (t - 1) * stride + h;
    let mut out = Tensor::zeros(&batched_shape(x.rank(), batch, c_out, t_out));
    let mut cols = vec![0.0; c_out * h * t];
    let slab_in = p * t;
    let slab_out = c_out * t_out;
    for b in 0..batch {
        let src = &x.data()[b * slab_in..(b + 1) * slab_in];
        // cols = W^T(c*h x p) @ C(p x T), with W flattened as p rows of (c*h)
        gemm(c_out * h, p, t, 1.0, w.data(), true, src, false, 0.0, &mut cols);
        let dst = &mut out.data_mut()[b * slab_out..(b + 1) * slab_out];
        col2im_add(&cols, c_out, t, h, stride, dst, t_out);
        for c in 0..c_out {
            let bc = bias.data()[c];
            for v in dst[c * t_out..(c + 1) * t_out].iter_mut() {
                *v += bc;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`deconv1d`] w.r.t. input, weights and bias.
pub fn deconv1d_backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, p, t) = as_batched(x, "deconv1d_backward")?;
    let (_, c_out, h) = match *w.shape() {
        [p, c, h] => (p, c, h),
        _ => return Err(Error::shape("deconv1d_backward", "bad weight rank".to_string())),
    };
    let t_out = (t - 1) * stride + h;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[c_out]);
    let mut gcols = vec![0.0; c_out * h * t];
    let slab_in = p * t;
    let slab_out = c_out * t_out;
    for b in 0..batch {
        let g = &grad.data()[b * slab_out..(b + 1) * slab_out];
        // im2col over the upstream gradient recovers exactly T columns.
        im2col(g, c_out, t_out, h, stride, &mut gcols);
        // dC = W(p x c*h) @ gcols(c*h x T)
        gemm(p, c_out * h, t, 1.0, w.data(), false, &gcols, false, 0.0, &mut dx.data_mut()[b * slab_in..(b + 1) * slab_in]);
        // dW += C(p x T) @ gcols^T(T x c*h)
        let src = &x.data()[b * slab_in..(b + 1) * slab_in];
        gemm(p, t, c_out * h, 1.0, src, false, &gcols, true, 1.0, dw.data_mut());
        for c in 0..c_out {
            db.data_mut()[c] += g[c * t_out..(c + 1) * t_out].iter().sum::<f64>();
        }
    }
    Ok((dx, dw, db))
}

/// Elementwise max(0, x).
pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient of [`relu`]: passes where x > 0; the subgradient at exactly 0 is 0.
pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    let mut dx = grad.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(x.data()) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Divide every column of `[.., k, cols]` by its l2 norm.
///
/// For the `k x V` embedding matrix this is the unit-norm constraint; for a
/// decoder output `[B, k, T]` it normalizes every reconstructed embedding.
pub fn normalize_columns(x: &Tensor) -> Result<Tensor> {
    let (batch, k, cols) = as_batched(x, "normalize_columns")?;
    let mut out = x.clone();
    let slab = k * cols;
    for b in 0..batch {
        let data = &mut out.data_mut()[b * slab..(b + 1) * slab];
        for j in 0..cols {
            let mut sq = 0.0;
            for c in 0..k {
                let v = data[c * cols + j];
                sq += v * v;
            }
            let norm = sq.sqrt();
            if norm <= NORM_EPS {
                return Err(Error::DegenerateColumn {
                    column: b * cols + j,
                    norm,
                    eps: NORM_EPS,
                });
            }
            let inv = 1.0 / norm;
            for c in 0..k {
                data[c * cols + j] *= inv;
            }
        }
    }
    Ok(out)
}

/// Gradient of [`normalize_columns`] via the quotient rule:
/// dx = (g - y * <y, g>) / ||x|| per column, with y the normalized column.
pub fn normalize_columns_backward(x: &Tensor, y: &Tensor, grad: &Tensor) -> Tensor {
    let (batch, k, cols) = as_batched(x, "normalize_columns").expect("checked in forward");
    let mut dx = Tensor::zeros(x.shape());
    let slab = k * cols;
    for b in 0..batch {
        let xs = &x.data()[b * slab..(b + 1) * slab];
        let ys = &y.data()[b * slab..(b + 1) * slab];
        let gs = &grad.data()[b * slab..(b + 1) * slab];
        let ds = &mut dx.data_mut()[b * slab..(b + 1) * slab];
        for j in 0..cols {
            let mut sq = 0.0;
            let mut ydotg = 0.0;
            for c in 0..k {
                let idx = c * cols + j;
                sq += xs[idx] * xs[idx];
                ydotg += ys[idx] * gs[idx];
            }
            let inv = 1.0 / sq.sqrt();
            for c in 0..k {
                let idx = c * cols + j;
                ds[idx] = (gs[idx] - ys[idx] * ydotg) * inv;
            }
        }
    }
    dx
}

/// (batch, classes, positions) view for the softmax family: rank 1 `[V]`,
/// rank 2 `[B, V]`, or rank 3 `[B, V, T]`; the class axis is always V.
fn as_class_view(t: &Tensor) -> (usize, usize, usize) {
    match *t.shape() {
        [v] => (1, v, 1),
        [b, v] => (b, v, 1),
        [b, v, len] => (b, v, len),
        _ => panic!("softmax expects rank 1-3, got {:?}", t.shape()),
    }
}

/// Temperature log-softmax along the class axis:
/// out[v] = s[v]/tau - logsumexp(s/tau), stabilized by max subtraction.
pub fn log_softmax_temperature(scores: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::NonpositiveTemperature(tau));
    }
    let (batch, v, t) = as_class_view(scores);
    let mut out = scores.clone();
    let slab = v * t;
    for b in 0..batch {
        let data = &mut out.data_mut()[b * slab..(b + 1) * slab];
        for j in 0..t {
            let mut m = f64::NEG_INFINITY;
            for c in 0..v {
                m = m.max(data[c * t + j] / tau);
            }
            let mut sum = 0.0;
            for c in 0..v {
                sum += (data[c * t + j] / tau - m).exp();
            }
            let lse = m + sum.ln();
            for c in 0..v {
                data[c * t + j] = data[c * t + j] / tau - lse;
            }
        }
    }
    Ok(out)
}

/// Gradient of [`log_softmax_temperature`]:
/// ds = (g - softmax * sum(g)) / tau per column, softmax = exp(out).
pub fn log_softmax_temperature_backward(out: &Tensor, tau: f64, grad: &Tensor) -> Tensor {
    let (batch, v, t) = as_class_view(out);
    let mut dx = Tensor::zeros(out.shape());
    let slab = v * t;
    for b in 0..batch {
        let ys = &out.data()[b * slab..(b + 1) * slab];
        let gs = &grad.data()[b * slab..(b + 1) * slab];
        let ds = &mut dx.data_mut()[b * slab..(b + 1) * slab];
        for j in 0..t {
            let mut gsum = 0.0;
            for c in 0..v {
                gsum += gs[c * t + j];
            }
            for c in 0..v {
                let idx = c * t + j;
                ds[idx] = (gs[idx] - ys[idx].exp() * gsum) / tau;
            }
        }
    }
    dx
}

/// Affine map for MLP heads: `[B, n] x [m, n] -> [B, m]`, y = x W^T + b.
pub fn affine(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, n) = match *x.shape() {
        [b, n] => (b, n),
        _ => return Err(Error::shape("affine", format!("input must be [B, n], got {:?}", x.shape()))),
    };
    let (m, wn) = match *w.shape() {
        [m, n] => (m, n),
        _ => return Err(Error::shape("affine", format!("weights must be [m, n], got {:?}", w.shape()))),
    };
    if wn != n || bias.numel() != m {
        return Err(Error::shape(
            "affine",
            format!("x {:?}, w {:?}, b {:?}", x.shape(), w.shape(), bias.shape()),
        ));
    }
    let mut out = Tensor::zeros(&[batch, m]);
    gemm(batch, n, m, 1.0, x.data(), false, w.data(), true, 0.0, out.data_mut());
    for b in 0..batch {
        for i in 0..m {
            out.data_mut()[b * m + i] += bias.data()[i];
        }
    }
    Ok(out)
}

/// Gradients of [`affine`]: returns (dX, dW, db).
pub fn affine_backward(x: &Tensor, w: &Tensor, grad: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, n) = (x.shape()[0], x.shape()[1]);
    let m = w.shape()[0];
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[m]);
    // dX = dY @ W
    gemm(batch, m, n, 1.0, grad.data(), false, w.data(), false, 0.0, dx.data_mut());
    // dW = dY^T @ X
    gemm(m, batch, n, 1.0, grad.data(), true, x.data(), false, 0.0, dw.data_mut());
    for b in 0..batch {
        for i in 0..m {
            db.data_mut()[i] += grad.data()[b * m + i];
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tensor::dot;
    use rand::Rng;

    fn t2(shape: [usize; 2], v: &[f64]) -> Tensor {
        Tensor::from_vec(&shape, v.to_vec()).unwrap()
    }

    fn t3(shape: [usize; 3], v: &[f64]) -> Tensor {
        Tensor::from_vec(&shape, v.to_vec()).unwrap()
    }

    fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Naive triple-loop convolution: the independent oracle for conv1d.
    fn conv1d_oracle(x: &Tensor, w: &Tensor, bias: &Tensor, r: usize) -> Tensor {
        let (k, t) = (x.shape()[0], x.shape()[1]);
        let (p, _, h) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let t_out = (t - h) / r + 1;
        let mut out = Tensor::zeros(&[p, t_out]);
        for i in 0..p {
            for j in 0..t_out {
                let mut acc = bias.data()[i];
                for c in 0..k {
                    for u in 0..h {
                        acc += x.at2(c, j * r + u) * w.data()[(i * k + c) * h + u];
                    }
                }
                out.data_mut()[i * t_out + j] = acc;
            }
        }
        out
    }

    /// Naive scatter-add deconvolution: the independent oracle for deconv1d.
    fn deconv1d_oracle(c: &Tensor, w: &Tensor, bias: &Tensor, r: usize) -> Tensor {
        let (p, t) = (c.shape()[0], c.shape()[1]);
        let (_, k, h) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let t_out = (t - 1) * r + h;
        let mut out = Tensor::zeros(&[k, t_out]);
        for ch in 0..k {
            for pos in 0..t_out {
                out.data_mut()[ch * t_out + pos] = bias.data()[ch];
            }
        }
        for i in 0..p {
            for j in 0..t {
                for ch in 0..k {
                    for u in 0..h {
                        out.data_mut()[ch * t_out + j * r + u] +=
                            c.at2(i, j) * w.data()[(i * k + ch) * h + u];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv1d_matches_hand_example() {
        // k_in=1, X=[1,2,3,4], W=[[[1,1]]], b=[0], r=2 -> [[3,7]]
        let x = t2([1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let w = t3([1, 1, 2], &[1.0, 1.0]);
        let b = Tensor::zeros(&[1]);
        let out = conv1d(&x, &w, &b, 2).unwrap();
        assert_eq!(out.shape(), &[1, 2]);
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn conv1d_shape_chain_matches_reference_config() {
        // T=60, h=5, r=2 -> 28; 28 -> 12; then h=12, r=1 -> 1
        assert_eq!((60 - 5) / 2 + 1, 28);
        assert_eq!((28 - 5) / 2 + 1, 12);
        assert_eq!((12 - 12) / 1 + 1, 1);
        let mut rng = crate::rng::stream(1, "conv-shapes", 0);
        let x = random_tensor(&[3, 60], &mut rng);
        let w1 = random_tensor(&[4, 3, 5], &mut rng);
        let y1 = conv1d(&x, &w1, &Tensor::zeros(&[4]), 2).unwrap();
        assert_eq!(y1.shape(), &[4, 28]);
        let w2 = random_tensor(&[6, 4, 5], &mut rng);
        let y2 = conv1d(&y1, &w2, &Tensor::zeros(&[6]), 2).unwrap();
        assert_eq!(y2.shape(), &[6, 12]);
        let w3 = random_tensor(&[5, 6, 12], &mut rng);
        let y3 = conv1d(&y2, &w3, &Tensor::zeros(&[5]), 1).unwrap();
        assert_eq!(y3.shape(), &[5, 1]);
    }

    #[test]
    fn conv1d_zero_input_zero_bias_gives_zeros() {
        let x = Tensor::zeros(&[2, 9]);
        let w = Tensor::filled(&[3, 2, 4], 0.7);
        let out = conv1d(&x, &w, &Tensor::zeros(&[3]), 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv1d_rejects_input_shorter_than_filter() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[1, 1, 5]);
        let err = conv1d(&x, &w, &Tensor::zeros(&[1]), 1).unwrap_err();
        assert!(err.to_string().contains("input shorter than filter"));
    }

    #[test]
    fn conv1d_matches_naive_oracle_on_random_shapes() {
        let mut rng = crate::rng::stream(2, "conv-oracle", 0);
        for case in 0..40 {
            let k = rng.gen_range(1..5);
            let p = rng.gen_range(1..6);
            let h = rng.gen_range(1..5);
            let r = rng.gen_range(1..4);
            let t = h + rng.gen_range(0..12);
            let x = random_tensor(&[k, t], &mut rng);
            let w = random_tensor(&[p, k, h], &mut rng);
            let b = random_tensor(&[p], &mut rng);
            let fast = conv1d(&x, &w, &b, r).unwrap();
            let slow = conv1d_oracle(&x, &w, &b, r);
            assert_eq!(fast.shape(), slow.shape(), "case {}", case);
            for (a, o) in fast.data().iter().zip(slow.data()) {
                assert!((a - o).abs() < 1e-12, "case {}: {} vs {}", case, a, o);
            }
        }
    }

    #[test]
    fn deconv1d_matches_hand_examples() {
        // C=[[1,2]], W=[[[1,1]]], r=2 -> [[1,1,2,2]]
        let c = t2([1, 2], &[1.0, 2.0]);
        let w = t3([1, 1, 2], &[1.0, 1.0]);
        let b = Tensor::zeros(&[1]);
        let out = deconv1d(&c, &w, &b, 2).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0, 2.0, 2.0]);
        // same with r=1 overlaps: [[1,3,2]]
        let out = deconv1d(&c, &w, &b, 1).unwrap();
        assert_eq!(out.data(), &[1.0, 3.0, 2.0]);
    }

    #[test]
    fn deconv1d_expands_collapsed_length() {
        // T=1, h=12, r=1 -> 12, mirroring the encoder's collapse layer.
        let c = Tensor::filled(&[5, 1], 1.0);
        let w = Tensor::filled(&[5, 3, 12], 0.1);
        let out = deconv1d(&c, &w, &Tensor::zeros(&[3]), 1).unwrap();
        assert_eq!(out.shape(), &[3, 12]);
    }

    #[test]
    fn deconv1d_matches_naive_oracle_on_random_shapes() {
        let mut rng = crate::rng::stream(3, "deconv-oracle", 0);
        for case in 0..40 {
            let p = rng.gen_range(1..5);
            let k = rng.gen_range(1..5);
            let h = rng.gen_range(1..5);
            let r = rng.gen_range(1..4);
            let t = rng.gen_range(1..8);
            let c = random_tensor(&[p, t], &mut rng);
            let w = random_tensor(&[p, k, h], &mut rng);
            let b = random_tensor(&[k], &mut rng);
            let fast = deconv1d(&c, &w, &b, r).unwrap();
            let slow = deconv1d_oracle(&c, &w, &b, r);
            assert_eq!(fast.shape(), slow.shape(), "case {}", case);
            for (a, o) in fast.data().iter().zip(slow.data()) {
                assert!((a - o).abs() < 1e-12, "case {}: {} vs {}", case, a, o);
            }
        }
    }

    #[test]
    fn conv_deconv_adjoint_identity() {
        // <conv(X), Y> == <X, deconv(Y)> with zero biases.
        let mut rng = crate::rng::stream(4, "adjoint", 0);
        for _ in 0..50 {
            let k = rng.gen_range(1..5);
            let p = rng.gen_range(1..5);
            let h = rng.gen_range(1..5);
            let r = rng.gen_range(1..4);
            let t = h + rng.gen_range(0..10);
            let t_out = (t - h) / r + 1;
            let x = random_tensor(&[k, t], &mut rng);
            let w = random_tensor(&[p, k, h], &mut rng);
            let y = random_tensor(&[p, t_out], &mut rng);
            let cx = conv1d(&x, &w, &Tensor::zeros(&[p]), r).unwrap();
            let dy = deconv1d(&y, &w, &Tensor::zeros(&[k]), r).unwrap();
            let lhs = dot(&cx, &y);
            // deconv output may be shorter than T when the floor dropped positions
            let mut rhs = 0.0;
            let t_back = dy.shape()[1];
            for c in 0..k {
                for j in 0..t_back {
                    rhs += x.at2(c, j) * dy.at2(c, j);
                }
            }
            let denom = lhs.abs().max(rhs.abs()).max(1e-9);
            assert!(((lhs - rhs) / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_clamps_and_masks_gradient() {
        let x = t2([1, 3], &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let all_neg = t2([1, 2], &[-3.0, -0.5]);
        assert!(relu(&all_neg).data().iter().all(|&v| v == 0.0));
        // gradient of sum(relu(x)) at [-1, 2] is [0, 1]
        let x = t2([1, 2], &[-1.0, 2.0]);
        let g = Tensor::filled(&[1, 2], 1.0);
        assert_eq!(relu_backward(&x, &g).data(), &[0.0, 1.0]);
    }

    #[test]
    fn normalize_columns_unit_norms() {
        // column [3,4] -> [0.6, 0.8]
        let m = t2([2, 1], &[3.0, 4.0]);
        let n = normalize_columns(&m).unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-15);
        assert!((n.data()[1] - 0.8).abs() < 1e-15);

        // idempotent on already-unit columns
        let again = normalize_columns(&n).unwrap();
        for (a, b) in again.data().iter().zip(n.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        // random 5x7: all column norms 1 within 1e-12
        let mut rng = crate::rng::stream(5, "norm", 0);
        let m = random_tensor(&[5, 7], &mut rng);
        let n = normalize_columns(&m).unwrap();
        for j in 0..7 {
            let norm: f64 = (0..5).map(|c| n.at2(c, j) * n.at2(c, j)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_columns_rejects_degenerate_column() {
        let m = t2([2, 2], &[1.0, 0.0, 1.0, 0.0]);
        let err = normalize_columns(&m).unwrap_err();
        assert!(err.to_string().contains("degenerate embedding column"));
    }

    #[test]
    fn log_softmax_matches_direct_evaluation() {
        // scores [1, 0], tau=1 -> probabilities [e/(e+1), 1/(e+1)]
        let s = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let out = log_softmax_temperature(&s, 1.0).unwrap();
        let p0 = out.data()[0].exp();
        let p1 = out.data()[1].exp();
        let e = std::f64::consts::E;
        assert!((p0 - e / (e + 1.0)).abs() < 1e-12);
        assert!((p1 - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((p0 - 0.7311).abs() < 1e-4);

        // equal scores -> uniform
        let s = Tensor::filled(&[5], 3.3);
        let out = log_softmax_temperature(&s, 0.7).unwrap();
        for v in out.data() {
            assert!((v.exp() - 0.2).abs() < 1e-12);
        }

        // tau=0.01 saturates: p[0] >= 1 - 1e-40
        let s = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let out = log_softmax_temperature(&s, 0.01).unwrap();
        // log p0 = -log(1 + e^-100) >= -e^-100
        assert!(out.data()[0].abs() < 1e-40);
    }

    #[test]
    fn log_softmax_rejects_nonpositive_temperature() {
        let s = Tensor::zeros(&[3]);
        assert!(log_softmax_temperature(&s, 0.0).is_err());
        assert!(log_softmax_temperature(&s, -1.0).is_err());
    }

    #[test]
    fn log_softmax_probabilities_sum_to_one() {
        let mut rng = crate::rng::stream(6, "lsm", 0);
        for &tau in &[0.01, 0.1, 1.0, 10.0] {
            let s = random_tensor(&[2, 6, 3], &mut rng);
            let out = log_softmax_temperature(&s, tau).unwrap();
            for b in 0..2 {
                for j in 0..3 {
                    let sum: f64 = (0..6).map(|c| out.at3(b, c, j).exp()).sum();
                    assert!((sum - 1.0).abs() < 1e-6);
                    // argmax never changes under temperature
                    let argmax_in = (0..6).max_by(|&a, &c| {
                        s.at3(b, a, j).partial_cmp(&s.at3(b, c, j)).unwrap()
                    });
                    let argmax_out = (0..6).max_by(|&a, &c| {
                        out.at3(b, a, j).partial_cmp(&out.at3(b, c, j)).unwrap()
                    });
                    assert_eq!(argmax_in, argmax_out);
                }
            }
        }
    }

    #[test]
    fn affine_matches_naive() {
        let x = t2([2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = t2([2, 3], &[1.0, 0.0, -1.0, 0.5, 0.5, 0.5]);
        let b = Tensor::from_vec(&[2], vec![10.0, -10.0]).unwrap();
        let y = affine(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert!((y.at2(0, 0) - (1.0 - 3.0 + 10.0)).abs() < 1e-12);
        assert!((y.at2(0, 1) - (0.5 * 6.0 - 10.0)).abs() < 1e-12);
        assert!((y.at2(1, 0) - (4.0 - 6.0 + 10.0)).abs() < 1e-12);
    }
}
