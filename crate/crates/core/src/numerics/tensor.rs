//! Dense row-major f64 tensors.

use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Dense tensor, row-major, 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(NumericsError::ShapeMismatch {
                context: "Tensor::new",
                expected: format!("{expect} values for shape {shape:?}"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            assert_eq!(r.len(), n, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            shape: vec![m, n],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rows of the leading dimension for a rank-2 tensor.
    pub fn nrows(&self) -> usize {
        self.shape[0]
    }

    pub fn ncols(&self) -> usize {
        self.shape[1]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, NumericsError> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(NumericsError::ShapeMismatch {
                context: "Tensor::reshaped",
                expected: format!("{} values", self.data.len()),
                got: format!("shape {shape:?}"),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Maximum absolute entry; 0 for empty tensors.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// C = A · B for row-major buffers, parallelized over fixed-size row chunks
/// so the result does not depend on worker count.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape.len(), 2, "matmul lhs must be rank 2");
    assert_eq!(b.shape.len(), 2, "matmul rhs must be rank 2");
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    assert_eq!(k, k2, "matmul inner dims: {k} vs {k2}");
    let mut out = Tensor::zeros(vec![m, n]);
    gemm_chunked(
        m,
        k,
        n,
        a.data(),
        [k as isize, 1],
        b.data(),
        [n as isize, 1],
        out.data_mut(),
    );
    out
}

/// C = A · Bᵀ with B given row-major [n, k].
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let (n, k2) = (b.shape[0], b.shape[1]);
    assert_eq!(k, k2, "matmul_bt inner dims: {k} vs {k2}");
    let mut out = Tensor::zeros(vec![m, n]);
    gemm_chunked(
        m,
        k,
        n,
        a.data(),
        [k as isize, 1],
        b.data(),
        [1, k as isize],
        out.data_mut(),
    );
    out
}

/// C = Aᵀ · B with A given row-major [k, m].
pub fn matmul_at(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    assert_eq!(k, k2, "matmul_at inner dims: {k} vs {k2}");
    let mut out = Tensor::zeros(vec![m, n]);
    gemm_chunked(
        m,
        k,
        n,
        a.data(),
        [1, m as isize],
        b.data(),
        [n as isize, 1],
        out.data_mut(),
    );
    out
}

// Rows per parallel chunk. A constant (rather than a worker-derived split)
// keeps per-chunk arithmetic identical regardless of thread count.
const GEMM_CHUNK: usize = 256;

#[allow(clippy::too_many_arguments)]
fn gemm_chunked(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: [isize; 2],
    b: &[f64],
    b_strides: [isize; 2],
    out: &mut [f64],
) {
    use rayon::prelude::*;
    if m == 0 || n == 0 {
        return;
    }
    let run = |rows: usize, a_off: &[f64], c_off: &mut [f64]| unsafe {
        matrixmultiply::dgemm(
            rows,
            k,
            n,
            1.0,
            a_off.as_ptr(),
            a_strides[0],
            a_strides[1],
            b.as_ptr(),
            b_strides[0],
            b_strides[1],
            0.0,
            c_off.as_mut_ptr(),
            n as isize,
            1,
        )
    };
    if m <= GEMM_CHUNK {
        run(m, a, out);
        return;
    }
    // Chunking over output rows only works when A is row-contiguous by rows.
    if a_strides[0] >= 1 && a_strides[1] == 1 {
        out.par_chunks_mut(GEMM_CHUNK * n)
            .enumerate()
            .for_each(|(ci, c_chunk)| {
                let r0 = ci * GEMM_CHUNK;
                let rows = c_chunk.len() / n;
                run(rows, &a[r0 * a_strides[0] as usize..], c_chunk);
            });
    } else {
        run(m, a, out);
    }
}
