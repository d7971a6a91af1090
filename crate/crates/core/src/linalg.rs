//! Dense row-major matrices, a cyclic Jacobi eigensolver for symmetric
//! matrices, and covariance (PCA) spectra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `f64` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    /// Like [`DenseMatrix::new`] but without the finiteness check. Used for
    /// values produced internally (e.g. parameters of a diverged run).
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::invalid(format!(
                "ragged rows: expected {cols} columns, found {}",
                bad.len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape {
                op: "matvec",
                left: self.shape(),
                right: (x.len(), 1),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ * x`.
    pub fn t_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::Shape {
                op: "t_matvec",
                left: (self.cols, self.rows),
                right: (x.len(), 1),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut out);
        }
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        if self.rows == 0 {
            return means;
        }
        for i in 0..self.rows {
            axpy(1.0, self.row(i), &mut means);
        }
        let n = self.rows as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Largest entry, or `None` for an empty matrix.
    pub fn max_entry(&self) -> Option<f64> {
        self.data.iter().copied().reduce(f64::max)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Eigenvalues of a symmetric matrix sorted in descending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSpectrum {
    pub eigenvalues: Vec<f64>,
    pub total: f64,
}

impl EigenSpectrum {
    /// Sorts `values` descending and records their sum.
    pub fn from_unsorted(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        let total = values.iter().sum();
        Self {
            eigenvalues: values,
            total,
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

/// Full symmetric eigendecomposition: `s = Q diag(values) Qᵀ`. Column `k` of
/// `vectors` is the eigenvector for `values[k]`; values are sorted descending.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl SymmetricEigen {
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.values.len();
        DenseMatrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.vectors.get(i, k) * self.values[k] * self.vectors.get(j, k))
                .sum()
        })
    }
}

/// Off-diagonal Frobenius norm relative to `‖S‖_F` at which Jacobi stops.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

fn check_symmetric(s: &DenseMatrix, tol: f64) -> Result<()> {
    if s.rows != s.cols {
        return Err(Error::NotSquare {
            rows: s.rows,
            cols: s.cols,
        });
    }
    if let Some(index) = s.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    for i in 0..s.rows {
        for j in (i + 1)..s.cols {
            let gap = (s.get(i, j) - s.get(j, i)).abs();
            if gap > tol {
                return Err(Error::NotSymmetric { i, j, gap, tol });
            }
        }
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// `tol` bounds the allowed asymmetry `|s_ij - s_ji|`; the matrix is
/// symmetrized before rotating. Sweeps stop once the off-diagonal Frobenius
/// norm drops to [`JACOBI_TOLERANCE`]`·‖S‖_F`.
pub fn sym_eigen_decompose(s: &DenseMatrix, tol: f64) -> Result<SymmetricEigen> {
    check_symmetric(s, tol)?;
    let n = s.rows;
    let mut a = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (s.get(i, j) + s.get(j, i)));
    let mut v = DenseMatrix::identity(n);
    let scale = a.frobenius_norm();
    let threshold = JACOBI_TOLERANCE * scale;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let values = order.iter().map(|&k| a.get(k, k)).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, k| v.get(i, order[k]));
    Ok(SymmetricEigen { values, vectors })
}

/// Applies the rotation that zeroes `a[p][q]`: `A ← Jᵀ A J`, `V ← V J`.
fn rotate(a: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows;
    for k in 0..n {
        let akp = a.get(k, p);
        let akq = a.get(k, q);
        a.set(k, p, c * akp - s * akq);
        a.set(k, q, s * akp + c * akq);
    }
    for k in 0..n {
        let apk = a.get(p, k);
        let aqk = a.get(q, k);
        a.set(p, k, c * apk - s * aqk);
        a.set(q, k, s * apk + c * aqk);
    }
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.rows {
        for j in 0..a.cols {
            if i != j {
                sum += a.get(i, j) * a.get(i, j);
            }
        }
    }
    sum.sqrt()
}

/// Eigenvalues of a symmetric matrix, sorted descending.
pub fn sym_eigen(s: &DenseMatrix, tol: f64) -> Result<EigenSpectrum> {
    let values = sym_eigen_decompose(s, tol)?.values;
    let total = values.iter().sum();
    Ok(EigenSpectrum {
        eigenvalues: values,
        total,
    })
}

/// Eigenvalues below this fraction of the spectrum total are clamped to zero.
pub const CLAMP_RELATIVE: f64 = 1e-12;
/// A covariance eigenvalue more negative than this fraction of the total
/// signals a numerical failure rather than round-off.
pub const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-9;

/// PCA variance spectrum: eigenvalues of `(1/n)·XᵀX`, after subtracting the
/// column means when `center` is set.
pub fn covariance_spectrum(features: &DenseMatrix, center: bool) -> Result<EigenSpectrum> {
    if features.rows == 0 || features.cols == 0 {
        return Err(Error::Empty("feature matrix"));
    }
    if let Some(index) = features.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let cov = covariance(features, center);
    let raw = sym_eigen(&cov, f64::EPSILON * cov.frobenius_norm().max(1.0))?;
    let total_abs: f64 = raw.eigenvalues.iter().map(|v| v.abs()).sum();
    if let Some(&min) = raw.eigenvalues.last() {
        if min < -NEGATIVE_EIGEN_TOLERANCE * total_abs {
            return Err(Error::invalid(format!(
                "covariance eigenvalue {min:e} is negative beyond round-off"
            )));
        }
    }
    let cutoff = CLAMP_RELATIVE * raw.total.max(0.0);
    let clamped = raw
        .eigenvalues
        .into_iter()
        .map(|v| if v < cutoff { 0.0 } else { v })
        .collect();
    Ok(EigenSpectrum::from_unsorted(clamped))
}

/// `(1/n)·XᵀX` of the (optionally mean-centered) rows of `x`.
pub fn covariance(x: &DenseMatrix, center: bool) -> DenseMatrix {
    let (n, d) = x.shape();
    let means = if center {
        x.column_means()
    } else {
        vec![0.0; d]
    };
    let mut cov = DenseMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for ((c, &v), &m) in centered.iter_mut().zip(x.row(i)).zip(&means) {
            *c = v - m;
        }
        for a in 0..d {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..d {
                cov.data[a * d + b] += ca * centered[b];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov.data[a * d + b] * inv_n;
            cov.data[a * d + b] = v;
            cov.data[b * d + a] = v;
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        let m = random_matrix(rng, n, n);
        DenseMatrix::from_fn(n, n, |i, j| m.get(i, j) + m.get(j, i))
    }

    fn naive_product(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = vec![vec![0.0; b.cols()]; a.rows()];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                for k in 0..a.cols() {
                    *cell += a.get(i, k) * b.get(k, j);
                }
            }
        }
        DenseMatrix::from_rows(&out).unwrap()
    }

    fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(DenseMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 3, 3);
        assert_eq!(DenseMatrix::identity(3).matmul(&m).unwrap(), m);

        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 5, 7);
        let b = random_matrix(&mut rng, 7, 3);
        assert!(max_abs_diff(&a.matmul(&b).unwrap(), &naive_product(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_error_names_shapes() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)"), "{err}");
    }

    #[test]
    fn sym_eigen_simple_cases() {
        let s = sym_eigen(&DenseMatrix::from_diag(&[3.0, 1.0, 2.0]), 1e-12).unwrap();
        assert_eq!(s.eigenvalues, vec![3.0, 2.0, 1.0]);

        let s = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eigen(&s, 1e-12).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sym_eigen_rejects_bad_input() {
        assert!(matches!(
            sym_eigen(&DenseMatrix::zeros(2, 3), 1e-12),
            Err(Error::NotSquare { .. })
        ));
        let s = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            sym_eigen(&s, 1e-6),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sym_eigen_reconstructs_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_symmetric(&mut rng, 8);
        let eig = sym_eigen_decompose(&s, 1e-12).unwrap();
        assert!(max_abs_diff(&eig.reconstruct(), &s) < 1e-9);
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        // orthonormal eigenvectors
        let qtq = eig.vectors.transpose().matmul(&eig.vectors).unwrap();
        assert!(max_abs_diff(&qtq, &DenseMatrix::identity(8)) < 1e-10);
    }

    #[test]
    fn zero_matrix_has_zero_spectrum() {
        let e = sym_eigen(&DenseMatrix::zeros(4, 4), 0.0).unwrap();
        assert_eq!(e.eigenvalues, vec![0.0; 4]);
    }

    #[test]
    fn covariance_of_identical_rows_is_zero() {
        let x = DenseMatrix::from_rows(&vec![vec![1.0, 2.0, 3.0]; 5]).unwrap();
        let e = covariance_spectrum(&x, true).unwrap();
        assert!(e.eigenvalues.iter().all(|&v| v == 0.0));
        assert_eq!(e.total, 0.0);
    }

    #[test]
    fn covariance_single_direction() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let e = covariance_spectrum(&x, true).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 0.0]);
    }

    #[test]
    fn covariance_rejects_empty() {
        assert!(matches!(
            covariance_spectrum(&DenseMatrix::zeros(0, 3), true),
            Err(Error::Empty(_))
        ));
    }

    /// Independent route: the nonzero eigenvalues of `(1/n)·XᵀX` equal those
    /// of the Gram matrix `(1/n)·XXᵀ`.
    #[test]
    fn covariance_matches_gram_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 100, 10);
        let means = x.column_means();
        let centered = DenseMatrix::from_fn(100, 10, |i, j| x.get(i, j) - means[j]);
        let gram = DenseMatrix::from_fn(100, 100, |i, j| {
            dot(centered.row(i), centered.row(j)) / 100.0
        });
        let gram_eig = sym_eigen(&gram, 1e-12).unwrap();
        let cov_eig = covariance_spectrum(&x, true).unwrap();
        for k in 0..10 {
            assert!(
                (gram_eig.eigenvalues[k] - cov_eig.eigenvalues[k]).abs() < 1e-8,
                "k={k}"
            );
        }
    }

    #[test]
    fn uncentered_keeps_mean_direction() {
        let x = DenseMatrix::from_rows(&vec![vec![1.0, 1.0]; 4]).unwrap();
        let e = covariance_spectrum(&x, false).unwrap();
        assert!((e.eigenvalues[0] - 2.0).abs() < 1e-14);
        assert_eq!(e.eigenvalues[1], 0.0);
    }

    proptest! {
        #[test]
        fn eigen_sum_equals_trace(seed in 0u64..1000, n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_symmetric(&mut rng, n);
            let e = sym_eigen(&s, 1e-12).unwrap();
            let trace = s.trace();
            prop_assert!((e.total - trace).abs() <= 1e-9 * trace.abs().max(1.0));
            prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn covariance_spectrum_sorted_nonnegative(seed in 0u64..1000, n in 1usize..30, d in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, n, d);
            let e = covariance_spectrum(&x, seed % 2 == 0).unwrap();
            prop_assert!(e.eigenvalues.iter().all(|&v| v >= 0.0));
            prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn matmul_is_associative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 4, 5);
            let b = random_matrix(&mut rng, 5, 3);
            let c = random_matrix(&mut rng, 3, 6);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.frobenius_norm().max(1e-300);
            prop_assert!(max_abs_diff(&left, &right) / scale < 1e-10);
        }
    }
}
