//! Dense row-major tensors over f64.
//!
//! All model math runs on 64-bit values; checkpoints store 32-bit floats,
//! so [`Tensor::round_to_f32`] snaps a tensor to the values a checkpoint
//! round trip would produce.

use crate::error::{Error, Result};

/// Dense multidimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret with a new shape of equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// self += other (shapes must match).
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    /// Snap every value to the nearest f32, keeping f64 storage.
    pub fn round_to_f32(&mut self) {
        for v in self.data.iter_mut() {
            *v = *v as f32 as f64;
        }
    }

    /// Flat index for a 2-D tensor.
    #[inline]
    pub fn idx2(&self, i: usize, j: usize) -> usize {
        debug_assert_eq!(self.rank(), 2);
        i * self.shape[1] + j
    }

    /// Flat index for a 3-D tensor.
    #[inline]
    pub fn idx3(&self, b: usize, i: usize, j: usize) -> usize {
        debug_assert_eq!(self.rank(), 3);
        (b * self.shape[1] + i) * self.shape[2] + j
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx2(i, j)]
    }

    #[inline]
    pub fn at3(&self, b: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx3(b, i, j)]
    }

    /// Contiguous slice for one leading-axis item of a 3-D tensor.
    pub fn slab(&self, b: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 3);
        let n = self.shape[1] * self.shape[2];
        &self.data[b * n..(b + 1) * n]
    }

    pub fn slab_mut(&mut self, b: usize) -> &mut [f64] {
        debug_assert_eq!(self.rank(), 3);
        let n = self.shape[1] * self.shape[2];
        &mut self.data[b * n..(b + 1) * n]
    }
}

/// Inner product of two equally-shaped tensors.
pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    debug_assert_eq!(a.shape(), b.shape(), "dot shape mismatch");
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x * y)
        .sum()
}

/// C = alpha * op(A) @ op(B) + beta * C, row-major buffers.
///
/// A is m x k after `a_trans` is applied (the physical buffer is k x m when
/// transposed), likewise B is k x n. C is always m x n.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
