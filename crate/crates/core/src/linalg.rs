//! Small dense real linear algebra.
//!
//! Everything here targets symmetric systems of dimension up to a few hundred:
//! Gram matrices of augmented designs and the population second-moment matrix.
//! Eigendecomposition is cyclic Jacobi; positive-definite solves are Cholesky
//! with a short diagonal jitter escalation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm at which Jacobi sweeps stop, relative to `‖A‖_F`.
pub const JACOBI_TOL: f64 = 1e-12;
/// Maximum number of Jacobi sweeps.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Relative asymmetry tolerated (and symmetrized away) by [`symmetric_eigen`].
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Eigenvalues above `-CLAMP_TOL * λ₁` are clamped to zero.
pub const CLAMP_TOL: f64 = 1e-9;
/// A Cholesky pivot below `PIVOT_TOL * max_i A_ii` counts as a failed factorization.
pub const PIVOT_TOL: f64 = 1e-9;
/// First jitter level, relative to `tr(A)/n`.
pub const JITTER_BASE: f64 = 1e-12;
/// Number of times the jitter is tried (each ten times the previous).
pub const JITTER_STEPS: usize = 3;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: n_rows,
            cols: n_cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// `zᵀ A z`.
    pub fn quadratic_form(&self, z: &[f64]) -> Result<f64> {
        Ok(dot(z, &self.mul_vec(z)?))
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        Ok(())
    }

    fn require_square(&self) -> Result<usize> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.rows)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigenvalues sorted non-increasingly with matching orthonormal eigenvector columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SymmetricEigen {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V · diag(λ) · Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let v = &self.eigenvectors;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..n)
                    .map(|k| v[(i, k)] * self.eigenvalues[k] * v[(j, k)])
                    .sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    /// Copy of the eigenvalues with tiny negatives (above `-CLAMP_TOL·λ₁`) set to zero.
    pub fn clamped_eigenvalues(&self) -> Vec<f64> {
        clamp_spectrum(&self.eigenvalues)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

pub(crate) fn clamp_spectrum(eigenvalues: &[f64]) -> Vec<f64> {
    let top = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    eigenvalues
        .iter()
        .map(|&l| {
            if l < 0.0 && l >= -CLAMP_TOL * top {
                0.0
            } else {
                l
            }
        })
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.require_square()?;
    if !a.is_finite() {
        return Err(Error::NonFinite("matrix"));
    }
    let scale = a.max_abs();
    let mut m = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let (x, y) = (m[(i, j)], m[(j, i)]);
            if (x - y).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidArgument(format!(
                    "matrix not symmetric at ({i},{j}): {x} vs {y}"
                )));
            }
            let s = 0.5 * (x + y);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }

    let mut v = Matrix::identity(n);
    let threshold = JACOBI_TOL * m.frobenius_norm();
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&m) <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&k| m[(k, k)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        for row in 0..n {
            eigenvectors[(row, col)] = v[(row, k)];
        }
    }
    Ok(SymmetricEigen {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows();
    for k in 0..n {
        let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s * mpk + c * mqk;
    }
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Solution of a positive-definite system and the diagonal jitter it needed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdSolution {
    pub x: Vec<f64>,
    /// Absolute diagonal shift added before the factorization succeeded (0 if none).
    pub jitter: f64,
}

impl SpdSolution {
    pub fn jittered(&self) -> bool {
        self.jitter > 0.0
    }
}

/// Solves `A x = b` by Cholesky, escalating a diagonal jitter when the plain
/// factorization hits a non-positive or negligible pivot.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<SpdSolution> {
    let n = a.require_square()?;
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("matrix"));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side"));
    }
    if n == 0 {
        return Ok(SpdSolution {
            x: Vec::new(),
            jitter: 0.0,
        });
    }

    let base = JITTER_BASE * (a.trace() / n as f64).abs();
    let mut jitter = 0.0;
    for attempt in 0..=JITTER_STEPS {
        if attempt > 0 {
            jitter = base * 10f64.powi(attempt as i32 - 1);
            if jitter == 0.0 {
                break;
            }
        }
        if let Some(l) = cholesky(a, jitter) {
            let x = cholesky_solve(&l, b);
            return Ok(SpdSolution { x, jitter });
        }
    }
    Err(Error::SingularSystem { jitter })
}

/// Lower-triangular factor of `A + jitter·I`, or `None` if a pivot falls below
/// `PIVOT_TOL · max_i A_ii`.
fn cholesky(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows();
    let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(a[(i, i)]));
    if max_diag <= 0.0 {
        return None;
    }
    let min_pivot = PIVOT_TOL * max_diag;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > min_pivot) {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// `Σ_k 1 / max(λ_k, floor)`; `+∞` when a (clamped) eigenvalue is zero and `floor == 0`.
pub fn trace_inverse(eig: &SymmetricEigen, floor: f64) -> f64 {
    let floor = floor.max(0.0);
    clamp_spectrum(&eig.eigenvalues)
        .iter()
        .map(|&l| {
            let l = l.max(floor);
            if l <= 0.0 {
                f64::INFINITY
            } else {
                1.0 / l
            }
        })
        .sum()
}

/// `acc += weight · z zᵀ`, exactly symmetric.
pub fn outer_accumulate(acc: &mut Matrix, z: &[f64], weight: f64) -> Result<()> {
    let n = acc.require_square()?;
    if z.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: z.len(),
        });
    }
    for i in 0..n {
        for j in i..n {
            let v = weight * (z[i] * z[j]);
            acc[(i, j)] += v;
            if i != j {
                acc[(j, i)] += v;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut impl Rng) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Q diag(λ) Qᵀ with Q orthonormal from Gram-Schmidt on a random matrix.
    fn random_spd(n: usize, cond: f64, rng: &mut impl Rng) -> Matrix {
        let mut q: Vec<Vec<f64>> = Vec::new();
        while q.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for u in &q {
                let p = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
            let nv = norm2(&v);
            if nv > 1e-6 {
                q.push(v.into_iter().map(|a| a / nv).collect());
            }
        }
        let lambdas: Vec<f64> = (0..n)
            .map(|k| {
                if n == 1 {
                    1.0
                } else {
                    cond.powf(-(k as f64) / (n as f64 - 1.0))
                }
            })
            .collect();
        let mut m = Matrix::zeros(n, n);
        for (k, u) in q.iter().enumerate() {
            outer_accumulate(&mut m, u, lambdas[k]).unwrap();
        }
        m
    }

    fn assert_eigen_invariants(a: &Matrix, eig: &SymmetricEigen) {
        let n = a.rows();
        let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
        let err = eig.reconstruct().sub(a).unwrap().frobenius_norm();
        assert!(err <= 1e-9 * scale, "reconstruction error {err}");
        let v = &eig.eigenvectors;
        let vtv = v.transpose().matmul(v).unwrap();
        let orth = vtv.sub(&Matrix::identity(n)).unwrap().max_abs();
        assert!(orth <= 1e-9, "orthonormality error {orth}");
        assert!(eig.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigen_two_by_two() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let eig = symmetric_eigen(&a).unwrap();
        assert!((eig.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert_eigen_invariants(&a, &eig);
    }

    #[test]
    fn eigen_diagonal_returns_axis_vectors() {
        let a = Matrix::from_diag(&[5.0, 2.0, 0.0]);
        let eig = symmetric_eigen(&a).unwrap();
        assert_eq!(eig.eigenvalues, vec![5.0, 2.0, 0.0]);
        assert_eq!(eig.eigenvectors, Matrix::identity(3));
    }

    #[test]
    fn eigen_identity() {
        let eig = symmetric_eigen(&Matrix::identity(6)).unwrap();
        assert_eq!(eig.eigenvalues, vec![1.0; 6]);
    }

    #[test]
    fn eigen_rejects_bad_input() {
        assert!(matches!(
            symmetric_eigen(&Matrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
        let mut a = Matrix::identity(2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(symmetric_eigen(&a), Err(Error::NonFinite(_))));
        let b = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(symmetric_eigen(&b).is_err());
    }

    #[test]
    fn eigen_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_symmetric(12, &mut rng);
        assert_eq!(symmetric_eigen(&a).unwrap(), symmetric_eigen(&a).unwrap());
    }

    #[test]
    fn eigen_random_up_to_128() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 3, 7, 16, 33, 64, 128] {
            let a = random_symmetric(n, &mut rng);
            let eig = symmetric_eigen(&a).unwrap();
            assert_eigen_invariants(&a, &eig);
        }
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let s = solve_spd(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.x, vec![1.0, 2.0, 3.0]);
        assert!(!s.jittered());
        let s = solve_spd(&Matrix::from_diag(&[4.0, 9.0]), &[4.0, 18.0]).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-15 && (s.x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn solve_rank_deficient_is_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            solve_spd(&a, &[1.0, 0.0]),
            Err(Error::SingularSystem { .. })
        ));
        assert!(matches!(
            solve_spd(&Matrix::zeros(3, 3), &[0.0; 3]),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn solve_rejects_mismatch() {
        assert!(matches!(
            solve_spd(&Matrix::identity(2), &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn jitter_rescues_marginal_pivot() {
        // Second pivot sits just below the rejection threshold; the largest jitter lifts it.
        let eps = 0.97 * PIVOT_TOL;
        let a = Matrix::from_diag(&[1.0, eps]);
        let s = solve_spd(&a, &[1.0, eps]).unwrap();
        assert!(s.jittered());
        assert!((s.x[1] - 1.0).abs() < 0.2);
    }

    #[test]
    fn solve_residual_bound_on_ill_conditioned_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(n, cond) in &[(4usize, 1e2), (8, 1e4), (16, 1e6), (24, 1e8), (40, 1e8)] {
            let a = random_spd(n, cond, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = solve_spd(&a, &b).unwrap();
            let ax = a.mul_vec(&s.x).unwrap();
            let r: Vec<f64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
            let bound = 1e-8 * (a.frobenius_norm() * norm2(&s.x) + norm2(&b));
            assert!(norm2(&r) <= bound, "n={n} cond={cond}: {} > {bound}", norm2(&r));
        }
    }

    #[test]
    fn trace_inverse_examples() {
        let eig = SymmetricEigen {
            eigenvalues: vec![4.0, 2.0, 1.0],
            eigenvectors: Matrix::identity(3),
        };
        assert!((trace_inverse(&eig, 0.0) - 1.75).abs() < 1e-15);
        let id = symmetric_eigen(&Matrix::identity(5)).unwrap();
        assert_eq!(trace_inverse(&id, 0.0), 5.0);
        let sing = SymmetricEigen {
            eigenvalues: vec![1.0, 0.0],
            eigenvectors: Matrix::identity(2),
        };
        assert_eq!(trace_inverse(&sing, 0.5), 3.0);
        assert_eq!(trace_inverse(&sing, 0.0), f64::INFINITY);
        let tiny_negative = SymmetricEigen {
            eigenvalues: vec![1.0, -1e-12],
            eigenvectors: Matrix::identity(2),
        };
        assert_eq!(trace_inverse(&tiny_negative, 0.0), f64::INFINITY);
    }

    #[test]
    fn trace_inverse_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [2usize, 5, 10, 20] {
            let a = random_spd(n, 50.0, &mut rng);
            let eig = symmetric_eigen(&a).unwrap();
            // Oracle: solve against each basis vector, sum the diagonal of A⁻¹.
            let oracle: f64 = (0..n)
                .map(|i| {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    solve_spd(&a, &e).unwrap().x[i]
                })
                .sum();
            let got = trace_inverse(&eig, 0.0);
            assert!(((got - oracle) / oracle).abs() < 1e-6, "{got} vs {oracle}");
        }
    }

    #[test]
    fn outer_accumulate_examples() {
        let mut acc = Matrix::zeros(2, 2);
        outer_accumulate(&mut acc, &[1.0, 2.0], 1.0).unwrap();
        assert_eq!(acc, Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap());

        let mut acc = Matrix::identity(2);
        outer_accumulate(&mut acc, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(acc, Matrix::identity(2));

        let mut acc = Matrix::zeros(2, 2);
        outer_accumulate(&mut acc, &[1.0, 1.0], 0.5).unwrap();
        assert_eq!(acc, Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap());

        assert!(outer_accumulate(&mut acc, &[1.0], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn eigen_invariants_hold(seed in any::<u64>(), n in 1usize..24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_symmetric(n, &mut rng);
            let eig = symmetric_eigen(&a).unwrap();
            assert_eigen_invariants(&a, &eig);
            let sum: f64 = eig.eigenvalues.iter().sum();
            prop_assert!((sum - a.trace()).abs() <= 1e-9 * (1.0 + a.frobenius_norm()));
        }

        #[test]
        fn outer_accumulate_is_symmetric(z in proptest::collection::vec(-1e3f64..1e3, 1..10), w in -5.0f64..5.0) {
            let mut acc = Matrix::zeros(z.len(), z.len());
            outer_accumulate(&mut acc, &z, w).unwrap();
            prop_assert_eq!(acc.transpose(), acc);
        }
    }
}
