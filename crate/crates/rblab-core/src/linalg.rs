//! Minimal dense numerical kernels: matrices, least squares, principal
//! components, correlations.
//!
//! Everything is 64-bit and row-major. Shape mismatches in the low-level
//! matrix helpers are programmer errors and panic via `assert!`; the
//! higher-level solvers return contract errors instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold below which singular values are treated as zero when
/// forming pseudo-inverses (relative to the largest singular value).
pub const SINGULAR_VALUE_CUTOFF: f64 = 1e-10;

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Checked constructor: validates the data length and that all entries
    /// are finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("matrix contains non-finite entries"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Unchecked-by-value constructor for internal kernels that produce
    /// already-consistent buffers.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::contract("ragged rows"));
        }
        Matrix::new(r, c, rows.concat())
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// C = A * B. Processes four output rows at a time so each row of B is
    /// loaded once per block.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        let a = &self.data;
        let b = &other.data;
        let mut i = 0;
        while i + 4 <= m {
            let block = &mut out[i * n..(i + 4) * n];
            let (c0, rest) = block.split_at_mut(n);
            let (c1, rest) = rest.split_at_mut(n);
            let (c2, c3) = rest.split_at_mut(n);
            for p in 0..k {
                let a0 = a[i * k + p];
                let a1 = a[(i + 1) * k + p];
                let a2 = a[(i + 2) * k + p];
                let a3 = a[(i + 3) * k + p];
                let brow = &b[p * n..(p + 1) * n];
                for j in 0..n {
                    let bv = brow[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
            i += 4;
        }
        for i in i..m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Matrix::from_raw(m, n, out)
    }

    /// C = A^T * B, without materializing the transpose. Accumulates four
    /// sample rows per pass so each output row is touched once per block.
    pub fn matmul_at_b(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_at_b shape mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; k * n];
        let a = &self.data;
        let b = &other.data;
        let mut i = 0;
        while i + 4 <= m {
            let b0 = &b[i * n..(i + 1) * n];
            let b1 = &b[(i + 1) * n..(i + 2) * n];
            let b2 = &b[(i + 2) * n..(i + 3) * n];
            let b3 = &b[(i + 3) * n..(i + 4) * n];
            for p in 0..k {
                let a0 = a[i * k + p];
                let a1 = a[(i + 1) * k + p];
                let a2 = a[(i + 2) * k + p];
                let a3 = a[(i + 3) * k + p];
                let orow = &mut out[p * n..(p + 1) * n];
                for j in 0..n {
                    orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
                }
            }
            i += 4;
        }
        for i in i..m {
            let arow = &a[i * k..(i + 1) * k];
            let brow = &b[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Matrix::from_raw(k, n, out)
    }

    /// C = A * B^T. Evaluates four dot products per A row pass.
    pub fn matmul_abt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_abt shape mismatch");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; m * n];
        let b = &other.data;
        for i in 0..m {
            let arow = self.row(i);
            let orow = &mut out[i * n..(i + 1) * n];
            let mut j = 0;
            while j + 4 <= n {
                let b0 = &b[j * k..(j + 1) * k];
                let b1 = &b[(j + 1) * k..(j + 2) * k];
                let b2 = &b[(j + 2) * k..(j + 3) * k];
                let b3 = &b[(j + 3) * k..(j + 4) * k];
                let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
                for p in 0..k {
                    let av = arow[p];
                    s0 += av * b0[p];
                    s1 += av * b1[p];
                    s2 += av * b2[p];
                    s3 += av * b3[p];
                }
                orow[j] = s0;
                orow[j + 1] = s1;
                orow[j + 2] = s2;
                orow[j + 3] = s3;
                j += 4;
            }
            for j in j..n {
                orow[j] = dot(arow, other.row(j));
            }
        }
        Matrix::from_raw(m, n, out)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (m, &v) in means.iter_mut().zip(self.row(r)) {
                *m += v;
            }
        }
        let inv = 1.0 / self.rows.max(1) as f64;
        for m in &mut means {
            *m *= inv;
        }
        means
    }

    /// Returns a copy with `offset` subtracted from every row.
    pub fn sub_row_vector(&self, offset: &[f64]) -> Matrix {
        assert_eq!(offset.len(), self.cols, "row vector width mismatch");
        let mut out = self.clone();
        for r in 0..out.rows {
            for (v, &o) in out.row_mut(r).iter_mut().zip(offset) {
                *v -= o;
            }
        }
        out
    }

    pub fn add_row_vector_in_place(&mut self, offset: &[f64]) {
        assert_eq!(offset.len(), self.cols, "row vector width mismatch");
        for r in 0..self.rows {
            for (v, &o) in self.row_mut(r).iter_mut().zip(offset) {
                *v += o;
            }
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Mean over rows of the squared Euclidean row norm.
    pub fn mean_squared_row_norm(&self) -> f64 {
        if self.rows == 0 {
            return 0.0;
        }
        let total: f64 = self.data.iter().map(|v| v * v).sum();
        total / self.rows as f64
    }
}

/// Dot product with four accumulators so the compiler can vectorize.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        acc[0] += xa[0] * xb[0];
        acc[1] += xa[1] * xb[1];
        acc[2] += xa[2] * xb[2];
        acc[3] += xa[3] * xb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (xa, xb) in ra.iter().zip(rb) {
        s += xa * xb;
    }
    s
}

/// Result of a principal-component decomposition.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// Top-k right singular vectors of the centered data, one per row,
    /// mutually orthonormal. Sign fixed so each row's largest-magnitude
    /// entry is positive.
    pub components: Matrix,
    /// All min(rows, cols) singular values of the centered data, sorted
    /// nonincreasing.
    pub singular_values: Vec<f64>,
    /// Column mean of the input.
    pub mean: Vec<f64>,
}

impl PcaResult {
    /// Projects rows onto the span of the top-k components and back,
    /// re-adding the mean.
    pub fn reconstruct(&self, x: &Matrix) -> Matrix {
        let centered = x.sub_row_vector(&self.mean);
        let scores = centered.matmul_abt(&self.components);
        let mut back = scores.matmul(&self.components);
        back.add_row_vector_in_place(&self.mean);
        back
    }

    /// Removes the span of the top-k components from the rows (keeping the
    /// mean and every other direction).
    pub fn remove_top(&self, x: &Matrix) -> Matrix {
        let centered = x.sub_row_vector(&self.mean);
        let scores = centered.matmul_abt(&self.components);
        let projected = scores.matmul(&self.components);
        let mut out = x.clone();
        for (o, p) in out.as_mut_slice().iter_mut().zip(projected.as_slice()) {
            *o -= p;
        }
        out
    }

    /// Scores of each row on the top-k components (centered projection).
    pub fn scores(&self, x: &Matrix) -> Matrix {
        x.sub_row_vector(&self.mean).matmul_abt(&self.components)
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues sorted nonincreasing and the matching eigenvectors
/// as rows of the returned matrix.
pub fn sym_eigen_desc(a: &Matrix) -> (Vec<f64>, Matrix) {
    assert_eq!(a.rows, a.cols, "sym_eigen_desc needs a square matrix");
    let n = a.rows;
    if n == 0 {
        return (Vec::new(), Matrix::zeros(0, 0));
    }
    let mut m = a.data.clone();
    let mut v = Matrix::identity(n);
    let fro_sq: f64 = m.iter().map(|x| x * x).sum();
    let tol_sq = fro_sq * 1e-28 + f64::MIN_POSITIVE;

    for _sweep in 0..100 {
        let mut off_sq = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off_sq += 2.0 * m[p * n + q] * m[p * n + q];
            }
        }
        if off_sq <= tol_sq {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = m[i * n + p];
                        let aiq = m[i * n + q];
                        m[i * n + p] = c * aip - s * aiq;
                        m[p * n + i] = m[i * n + p];
                        m[i * n + q] = s * aip + c * aiq;
                        m[q * n + i] = m[i * n + q];
                    }
                }
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (row, &src) in order.iter().enumerate() {
        for j in 0..n {
            vectors.set(row, j, v.get(j, src));
        }
    }
    (eigenvalues, vectors)
}

/// Solves `argmin_W ||XW - Y||^2 + ridge * ||W||^2`.
///
/// With `ridge = 0` and a rank-deficient design this returns the
/// minimum-norm solution: the decomposition drops singular values below
/// [`SINGULAR_VALUE_CUTOFF`] times the largest.
pub fn solve_least_squares(x: &Matrix, y: &Matrix, ridge: f64) -> Result<Matrix> {
    if x.rows != y.rows {
        return Err(Error::contract(format!(
            "design has {} rows but targets have {}",
            x.rows, y.rows
        )));
    }
    if x.rows == 0 {
        return Err(Error::contract("least squares needs at least one row"));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::contract("ridge must be finite and nonnegative"));
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::numeric("least squares inputs contain non-finite values"));
    }

    let gram = x.matmul_at_b(x);
    let xty = x.matmul_at_b(y);
    let (eigenvalues, vectors) = sym_eigen_desc(&gram);

    // Eigenvalues of X^T X are squared singular values of X.
    let lambda_max = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let lambda_cutoff = lambda_max * SINGULAR_VALUE_CUTOFF * SINGULAR_VALUE_CUTOFF;

    let mut projected = vectors.matmul(&xty); // row i = v_i^T X^T Y
    for (i, &lambda) in eigenvalues.iter().enumerate() {
        let gain = if ridge > 0.0 {
            1.0 / (lambda.max(0.0) + ridge)
        } else if lambda > lambda_cutoff && lambda > 0.0 {
            1.0 / lambda
        } else {
            0.0
        };
        for v in projected.row_mut(i) {
            *v *= gain;
        }
    }
    Ok(vectors.matmul_at_b(&projected))
}

/// Principal components of the rows of `x`: column mean, all singular
/// values, and the top-k right singular vectors of the centered data.
pub fn principal_components(x: &Matrix, k: usize) -> Result<PcaResult> {
    let max_k = x.rows.min(x.cols);
    if k == 0 || k > max_k {
        return Err(Error::contract(format!(
            "k = {} out of range 1..={} for a {}x{} matrix",
            k, max_k, x.rows, x.cols
        )));
    }
    if !x.is_finite() {
        return Err(Error::numeric("pca input contains non-finite values"));
    }

    let mean = x.column_means();
    let centered = x.sub_row_vector(&mean);
    let gram = centered.matmul_at_b(&centered);
    let (eigenvalues, vectors) = sym_eigen_desc(&gram);

    let singular_values: Vec<f64> = eigenvalues
        .iter()
        .take(max_k)
        .map(|&l| l.max(0.0).sqrt())
        .collect();

    let mut components = Matrix::zeros(k, x.cols);
    for i in 0..k {
        components.row_mut(i).copy_from_slice(vectors.row(i));
    }
    fix_component_signs(&mut components);

    Ok(PcaResult {
        components,
        singular_values,
        mean,
    })
}

/// Makes each row's largest-magnitude entry positive, for reproducible
/// output across runs.
fn fix_component_signs(components: &mut Matrix) {
    for r in 0..components.rows() {
        let row = components.row_mut(r);
        let mut best = 0usize;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = j;
            }
        }
        if row[best] < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
    }
}

/// Product-moment correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::contract(
            "pearson needs two equal-length vectors of length >= 2",
        ));
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::numeric("pearson inputs contain non-finite values"));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero variance in a pearson argument".into(),
        ));
    }
    Ok((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}

/// Rank correlation: pearson of fractional ranks, ties given the average
/// rank of their run.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::contract(
            "spearman needs two equal-length vectors of length >= 2",
        ));
    }
    pearson(&fractional_ranks(a)?, &fractional_ranks(b)?)
}

fn fractional_ranks(values: &[f64]) -> Result<Vec<f64>> {
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("rank inputs contain non-finite values"));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    Ok(ranks)
}
