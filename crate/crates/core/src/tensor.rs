//! Dense row-major tensors.
//!
//! Rank 1 and rank 2 are the only shapes used in practice: vectors are
//! `[n]`, matrices (sequences, weights) are `[rows, cols]`. Scalars travel
//! as `[1, 1]`. Binary arithmetic supports numpy-style broadcasting over
//! 2-D shapes, which is everything the autodiff layer needs.

use crate::scalar::Scalar;

/// Dense row-major numeric buffer with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} incompatible with buffer of {} elements",
            shape,
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); numel],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![F::one(); numel],
        }
    }

    pub fn scalar(x: F) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![x],
        }
    }

    /// `[1, n]` row vector.
    pub fn row(values: &[F]) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// `[rows, cols]` matrix from a flat row-major buffer.
    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Self {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        assert!(!rows.is_empty(), "from_rows needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Row count, treating vectors as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            r => panic!("rows() on rank-{r} tensor"),
        }
    }

    /// Column count, treating vectors as a single row.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            r => panic!("cols() on rank-{r} tensor"),
        }
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn get2(&self, r: usize, c: usize) -> F {
        debug_assert!(r < self.rows() && c < self.cols());
        self.data[r * self.cols() + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: F) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[F] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn fill(&mut self, v: F) {
        for x in &mut self.data {
            *x = v;
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Self) -> Self {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == F::zero() {
                    continue;
                }
                let lhs_row = &other.data[p * n..(p + 1) * n];
                let out_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(lhs_row) {
                    *o = *o + a * b;
                }
            }
        }
        Self::matrix(m, n, out)
    }

    pub fn transpose(&self) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self::matrix(n, m, out)
    }

    pub fn slice_rows(&self, r0: usize, r1: usize) -> Self {
        assert!(r0 < r1 && r1 <= self.rows(), "row slice {r0}..{r1} out of range");
        let cols = self.cols();
        Self::matrix(r1 - r0, cols, self.data[r0 * cols..r1 * cols].to_vec())
    }

    pub fn slice_cols(&self, c0: usize, c1: usize) -> Self {
        assert!(c0 < c1 && c1 <= self.cols(), "col slice {c0}..{c1} out of range");
        let (m, n) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(m * (c1 - c0));
        for i in 0..m {
            data.extend_from_slice(&self.data[i * n + c0..i * n + c1]);
        }
        Self::matrix(m, c1 - c0, data)
    }

    pub fn concat_rows(&self, other: &Self) -> Self {
        assert_eq!(self.cols(), other.cols(), "concat_rows column mismatch");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::matrix(self.rows() + other.rows(), self.cols(), data)
    }

    pub fn concat_cols(&self, other: &Self) -> Self {
        assert_eq!(self.rows(), other.rows(), "concat_cols row mismatch");
        let (m, n1, n2) = (self.rows(), self.cols(), other.cols());
        let mut data = Vec::with_capacity(m * (n1 + n2));
        for i in 0..m {
            data.extend_from_slice(&self.data[i * n1..(i + 1) * n1]);
            data.extend_from_slice(&other.data[i * n2..(i + 1) * n2]);
        }
        Self::matrix(m, n1 + n2, data)
    }

    pub fn reversed_rows(&self) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(m * n);
        for i in (0..m).rev() {
            data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        Self::matrix(m, n, data)
    }

    /// Canonical 2-D view of the shape: `[n] -> (1, n)`.
    fn dims2(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    /// Elementwise binary op with broadcasting over 2-D shapes. Each axis
    /// must match or be 1 on one side.
    pub fn broadcast_binary(&self, other: &Self, f: impl Fn(F, F) -> F) -> Self {
        let (ar, ac) = self.dims2();
        let (br, bc) = other.dims2();
        let or = broadcast_dim(ar, br)
            .unwrap_or_else(|| panic!("cannot broadcast rows {ar} vs {br}"));
        let oc = broadcast_dim(ac, bc)
            .unwrap_or_else(|| panic!("cannot broadcast cols {ac} vs {bc}"));
        let mut data = Vec::with_capacity(or * oc);
        for i in 0..or {
            for j in 0..oc {
                let a = self.data[(i % ar) * ac + (j % ac)];
                let b = other.data[(i % br) * bc + (j % bc)];
                data.push(f(a, b));
            }
        }
        Tensor::matrix(or, oc, data)
    }

    /// Sum `self` down to `shape`, undoing a broadcast. Used by gradient
    /// reduction for broadcasting binary ops.
    pub fn reduce_to(&self, shape: &[usize]) -> Self {
        let target = Tensor::<F>::zeros(shape);
        let (tr, tc) = target.dims2();
        let (sr, sc) = self.dims2();
        assert!(
            (tr == sr || tr == 1) && (tc == sc || tc == 1),
            "cannot reduce {:?} to {:?}",
            self.shape,
            shape
        );
        let mut out = vec![F::zero(); tr * tc];
        for i in 0..sr {
            for j in 0..sc {
                let ti = if tr == 1 { 0 } else { i };
                let tj = if tc == 1 { 0 } else { j };
                out[ti * tc + tj] = out[ti * tc + tj] + self.data[i * sc + j];
            }
        }
        Tensor::new(shape.to_vec(), out)
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}
