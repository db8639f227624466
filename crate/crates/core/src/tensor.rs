//! Dense rank-3 tensors (batch × length × channels) in double precision.
//!
//! Dense-layer activations and weights use the same type with degenerate
//! dimensions: activations are `[B, 1, n]`, a weight matrix is `[1, n_in, n_out]`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(batch: usize, len: usize, channels: usize) -> Self {
        Shape { batch, len, channels }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.batch * self.len * self.channels
    }

    /// Rows when the tensor is viewed as a `(batch·len) × channels` matrix.
    pub const fn rows(&self) -> usize {
        self.batch * self.len
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}]", self.batch, self.len, self.channels)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const MAX: usize = 16;
        write!(f, "Tensor{} ", self.shape)?;
        if self.data.len() <= MAX {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}...", &self.data[..MAX])
        }
    }
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.batch == 0 || shape.len == 0 || shape.channels == 0 {
            return Err(Error::shape(format!("zero-sized dimension in {shape}")));
        }
        if shape.numel() != data.len() {
            return Err(Error::shape(format!(
                "shape {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![0.0; shape.numel()] }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    /// A `[batch, 1, n]` tensor from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("ragged rows"));
        }
        Tensor::new(Shape::new(rows.len(), 1, n), rows.concat())
    }

    /// A `[1, len, 1]` sequence, handy for single-channel examples.
    pub fn sequence(values: &[f64]) -> Result<Self> {
        Tensor::new(Shape::new(1, values.len(), 1), values.to_vec())
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, i: usize, c: usize) -> f64 {
        self.data[(b * self.shape.len + i) * self.shape.channels + c]
    }

    /// Same data, new shape; the element count must be preserved.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {} into {shape}", self.shape)));
        }
        Tensor::new(shape, self.data)
    }

    /// Batch entries `start..end` as a new tensor.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Tensor> {
        if start >= end || end > self.shape.batch {
            return Err(Error::shape(format!("batch range {start}..{end} outside {}", self.shape)));
        }
        let per = self.shape.len * self.shape.channels;
        Tensor::new(
            Shape::new(end - start, self.shape.len, self.shape.channels),
            self.data[start * per..end * per].to_vec(),
        )
    }

    /// Batch entries at `indices`, in that order.
    pub fn gather_batch(&self, indices: &[usize]) -> Result<Tensor> {
        let per = self.shape.len * self.shape.channels;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.shape.batch {
                return Err(Error::shape(format!("batch index {i} outside {}", self.shape)));
            }
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        Tensor::new(Shape::new(indices.len(), self.shape.len, self.shape.channels), data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Number of worker threads for matrix products, from `ODTTE_THREADS` (default 1).
pub fn worker_threads() -> usize {
    static THREADS: std::sync::OnceLock<usize> = std::sync::OnceLock::new();
    *THREADS.get_or_init(|| {
        std::env::var("ODTTE_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
    })
}

/// Strided view of a row-major or transposed matrix.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        MatRef { data, rows, cols, row_stride: cols as isize, col_stride: 1 }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `c = a·b + beta·c` with `c` row-major `a.rows × b.cols`.
///
/// With more than one worker thread the output rows are partitioned; each
/// output element is accumulated identically regardless of the partition.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    let threads = worker_threads().min(m.max(1));
    if threads <= 1 || m * n * k < 1 << 16 {
        gemm_rows(a, b, beta, &mut c[..m * n], 0, m);
        return;
    }
    let chunk = m.div_ceil(threads);
    std::thread::scope(|s| {
        for (t, out) in c[..m * n].chunks_mut(chunk * n).enumerate() {
            let start = t * chunk;
            let rows = out.len() / n;
            s.spawn(move || gemm_rows(a, b, beta, out, start, rows));
        }
    });
}

fn gemm_rows(a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64], row0: usize, rows: usize) {
    let (k, n) = (a.cols, b.cols);
    let a_off = row0 as isize * a.row_stride;
    debug_assert!(a_off >= 0);
    // SAFETY: strides and extents describe in-bounds elements of `a.data`,
    // `b.data` (checked by the debug asserts at construction) and `c`.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            k,
            n,
            1.0,
            a.data.as_ptr().offset(a_off),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
