//! Dense row-major tensors and the raw numeric kernels behind the graph ops.
//!
//! Everything is generic over [`Scalar`] so that training runs in `f32` while
//! the gradient-check harness runs the identical code paths in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Floating-point element type for tensors. Implemented for `f32` and `f64`.
pub trait Scalar:
    num_traits::Float + Send + Sync + Debug + Display + Default + Sum + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense n-dimensional array, row-major, immutable shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "tensor::new",
                format!("zero dimension in shape {shape:?}"),
            ));
        }
        if data.len() != numel {
            return Err(Error::shape(
                "tensor::new",
                format!("shape {shape:?} wants {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(|i| f(i)).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    /// New tensor with the same data and a different shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!(
                    "cannot reshape {:?} ({} elements) to {shape:?} ({numel} elements)",
                    self.shape,
                    self.data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Value of a tensor with exactly one element.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::Usage(format!(
                "item() needs a single-element tensor, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Element at a 2-d index; the tensor must be a matrix.
    pub fn at2(&self, row: usize, col: usize) -> T {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Tensor::new(&[rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::shape("from_rows", "no rows".to_string()));
        }
        let c = rows[0].len();
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("from_rows", "ragged rows".to_string()));
        }
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Tensor::new(&[r, c], data)
    }
}

/// Minimum work per parallel task; below this everything stays on one
/// thread. All splits are by output row (or by a fixed chunk count), so every
/// output element is reduced in a fixed order and results are bitwise
/// identical for any worker count.
const PAR_MIN_FLOPS_PER_TASK: usize = 1 << 17;

fn rows_per_task(m: usize, k: usize, n: usize) -> usize {
    let flops_per_row = 2 * k * n;
    (PAR_MIN_FLOPS_PER_TASK / flops_per_row.max(1)).clamp(1, m.max(1))
}

/// Dot product with eight fixed accumulator lanes. The lane layout (and
/// therefore the rounding) is part of the kernel contract; it exists so the
/// reduction vectorizes without reassociating across runs.
#[inline]
fn dot8<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let whole = a.len() / 8 * 8;
    for (ca, cb) in a[..whole].chunks_exact(8).zip(b[..whole].chunks_exact(8)) {
        for l in 0..8 {
            acc[l] = acc[l] + ca[l] * cb[l];
        }
    }
    let mut s = T::zero();
    for &lane in &acc {
        s = s + lane;
    }
    for (&av, &bv) in a[whole..].iter().zip(&b[whole..]) {
        s = s + av * bv;
    }
    s
}

/// C[m,n] = A[m,k] * B[k,n], all row-major.
pub fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::zero(); m * n];
    let block = rows_per_task(m, k, n);
    let block_job = |(bi, cblock): (usize, &mut [T])| {
        let row0 = bi * block;
        for (r, crow) in cblock.chunks_mut(n).enumerate() {
            let i = row0 + r;
            for p in 0..k {
                let aip = a[i * k + p];
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv = *cv + aip * bv;
                }
            }
        }
    };
    if 2 * m * n * k >= PAR_MIN_FLOPS_PER_TASK {
        c.par_chunks_mut(n * block).enumerate().for_each(block_job);
    } else {
        c.chunks_mut(n * block).enumerate().for_each(block_job);
    }
    c
}

/// C[m,n] = A[m,k] * B^T where B is [n,k] row-major.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![T::zero(); m * n];
    let block = rows_per_task(m, k, n);
    let block_job = |(bi, cblock): (usize, &mut [T])| {
        let row0 = bi * block;
        for (r, crow) in cblock.chunks_mut(n).enumerate() {
            let arow = &a[(row0 + r) * k..(row0 + r + 1) * k];
            for (j, cv) in crow.iter_mut().enumerate() {
                *cv = dot8(arow, &b[j * k..(j + 1) * k]);
            }
        }
    };
    if 2 * m * n * k >= PAR_MIN_FLOPS_PER_TASK {
        c.par_chunks_mut(n * block).enumerate().for_each(block_job);
    } else {
        c.chunks_mut(n * block).enumerate().for_each(block_job);
    }
    c
}

/// C[m,n] = A^T * B where A is [k,m] row-major and B is [k,n] row-major.
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::zero(); m * n];
    let block = rows_per_task(m, k, n);
    let block_job = |(bi, cblock): (usize, &mut [T])| {
        let row0 = bi * block;
        for (r, crow) in cblock.chunks_mut(n).enumerate() {
            let i = row0 + r;
            for p in 0..k {
                let api = a[p * m + i];
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv = *cv + api * bv;
                }
            }
        }
    };
    if 2 * m * n * k >= PAR_MIN_FLOPS_PER_TASK {
        c.par_chunks_mut(n * block).enumerate().for_each(block_job);
    } else {
        c.chunks_mut(n * block).enumerate().for_each(block_job);
    }
    c
}

/// C[m,n] = A^T * B for a small output and a large shared dimension,
/// accumulated over a fixed number of k-range chunks. The chunk partials are
/// combined in chunk order, so the result does not depend on the worker
/// count.
pub fn matmul_tn_chunked<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    const CHUNKS: usize = 8;
    if k < 2 * CHUNKS || 2 * m * n * k < PAR_MIN_FLOPS_PER_TASK {
        return matmul_tn(a, b, m, k, n);
    }
    let chunk_len = k.div_ceil(CHUNKS);
    let partials: Vec<Vec<T>> = (0..CHUNKS)
        .into_par_iter()
        .map(|ci| {
            let p0 = ci * chunk_len;
            let p1 = ((ci + 1) * chunk_len).min(k);
            let mut part = vec![T::zero(); m * n];
            for p in p0..p1 {
                let arow = &a[p * m..(p + 1) * m];
                let brow = &b[p * n..(p + 1) * n];
                for (i, &av) in arow.iter().enumerate() {
                    let crow = &mut part[i * n..(i + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv = *cv + av * bv;
                    }
                }
            }
            part
        })
        .collect();
    let mut c = vec![T::zero(); m * n];
    for part in partials {
        for (cv, pv) in c.iter_mut().zip(part) {
            *cv = *cv + pv;
        }
    }
    c
}
