//! Small dense linear-algebra helpers shared by the bounds, estimation and
//! tracking modules.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SymmetricEigen, Vector3};

/// Relative eigenvalue threshold below which a direction is treated as null.
pub const RANK_THRESHOLD: f64 = 1e-12;

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = angle.rem_euclid(two_pi);
    if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// Wraps an angle to `[0, 2pi)`.
pub fn wrap_two_pi(angle: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let a = angle.rem_euclid(two_pi);
    if a >= two_pi {
        0.0
    } else {
        a
    }
}

/// Cross-product matrix `[v]x`, so that `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation increment about the current attitude: `R * exp([delta]x)`.
pub fn rotate_local(r: &Rotation3<f64>, delta: &Vector3<f64>) -> Rotation3<f64> {
    r * Rotation3::new(*delta)
}

/// Symmetrizes in place-free fashion: `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Result of a scale-free rank analysis of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct RankAnalysis {
    /// Eigenvalues of the diagonally normalized matrix, ascending.
    pub normalized_eigenvalues: Vec<f64>,
    /// Orthonormal basis of the null space expressed in the original coordinates
    /// (columns), before renormalization.
    pub null_basis: DMatrix<f64>,
}

impl RankAnalysis {
    pub fn null_dim(&self) -> usize {
        self.null_basis.ncols()
    }
}

/// Rank analysis after scaling to unit diagonal, so the verdict does not depend
/// on the physical units of the parameters. Parameters with a zero diagonal
/// carry no information and are null directions by construction.
pub fn rank_analysis(m: &DMatrix<f64>, threshold: f64) -> RankAnalysis {
    let n = m.nrows();
    let support: Vec<usize> = (0..n).filter(|&i| m[(i, i)] > 0.0).collect();
    let mut basis: Vec<DVector<f64>> = (0..n)
        .filter(|i| !support.contains(i))
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            e
        })
        .collect();
    let mut eigenvalues = vec![0.0; n - support.len()];
    if !support.is_empty() {
        let scale: Vec<f64> = support.iter().map(|&i| 1.0 / m[(i, i)].sqrt()).collect();
        let k = support.len();
        let mut normalized = DMatrix::zeros(k, k);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                normalized[(a, b)] = m[(i, j)] * scale[a] * scale[b];
            }
        }
        let eig = SymmetricEigen::new(symmetrize(&normalized));
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        for c in 0..k {
            let l = eig.eigenvalues[c];
            eigenvalues.push(l);
            if l < threshold * lmax {
                let mut v = DVector::zeros(n);
                for (a, &i) in support.iter().enumerate() {
                    v[i] = eig.eigenvectors[(a, c)] * scale[a];
                }
                for b in &basis {
                    let proj = b.dot(&v);
                    v -= b * proj;
                }
                let norm = v.norm();
                if norm > 0.0 {
                    basis.push(v / norm);
                }
            }
        }
    }
    eigenvalues.sort_by(|a, b| a.total_cmp(b));
    let null_basis = if basis.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&basis)
    };
    RankAnalysis {
        normalized_eigenvalues: eigenvalues,
        null_basis,
    }
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix using the same
/// relative threshold as [`rank_analysis`] on the normalized matrix.
pub fn pinv_psd(m: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let diag: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    let scale: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let s = DMatrix::from_diagonal(&DVector::from_vec(scale));
    let normalized = symmetrize(&(&s * m * &s));
    let eig = SymmetricEigen::new(normalized);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut inv = DMatrix::zeros(n, n);
    for i in 0..n {
        let l = eig.eigenvalues[i];
        if lmax > 0.0 && l > threshold * lmax {
            let v = eig.eigenvectors.column(i);
            inv += v * v.transpose() / l;
        }
    }
    // pinv(S M S) = S^-1 pinv(M) S^-1 only when S is invertible on the support;
    // zero-diagonal parameters carry no information and stay zero.
    &s * inv * &s
}

/// Pseudo-inverse of a PSD matrix whose null space is known to be spanned by
/// the orthonormal columns of `null`. The null space is filled in, the result
/// inverted after unit-diagonal scaling, and the fill removed again.
pub fn pinv_with_null(m: &DMatrix<f64>, null: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    if null.ncols() == 0 {
        return scaled_inverse(m);
    }
    let mu = (m.trace() / n as f64).max(f64::MIN_POSITIVE);
    let proj = null * null.transpose();
    let filled = symmetrize(&(m + &proj * mu));
    let inv = scaled_inverse(&filled)?;
    // inv(M + mu P) = pinv(M) + P / mu, with pinv(M) P = 0.
    let q = DMatrix::identity(n, n) - &proj;
    Some(symmetrize(&(&q * inv * &q)))
}

fn scaled_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = m.diagonal();
    if d.iter().any(|v| *v <= 0.0) {
        return None;
    }
    let s = DMatrix::from_diagonal(&d.map(|v| 1.0 / v.sqrt()));
    let chol = symmetrize(&(&s * m * &s)).cholesky()?;
    Some(&s * chol.inverse() * &s)
}

/// Eliminates nuisance parameters through the Schur complement:
/// `F_kk - F_kn F_nn^+ F_nk`, returned over the `keep` indices.
pub fn schur_profile(f: &DMatrix<f64>, keep: &[usize], nuisance: &[usize]) -> DMatrix<f64> {
    let fkk = f.select_rows(keep).select_columns(keep);
    if nuisance.is_empty() {
        return fkk;
    }
    let fkn = f.select_rows(keep).select_columns(nuisance);
    let fnn = f.select_rows(nuisance).select_columns(nuisance);
    let fnn_inv = pinv_psd(&fnn, 1e-14);
    symmetrize(&(fkk - &fkn * fnn_inv * fkn.transpose()))
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are clipped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Rotation best aligning `local` vectors onto `global` ones (weighted Wahba
/// problem solved with an SVD).
pub fn wahba(local: &[Vector3<f64>], global: &[Vector3<f64>], weights: &[f64]) -> Rotation3<f64> {
    let mut b = Matrix3::zeros();
    for ((l, g), w) in local.iter().zip(global).zip(weights) {
        b += *w * g * l.transpose();
    }
    let svd = b.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let d = (u * v_t).determinant().signum();
    let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    Rotation3::from_matrix_unchecked(u * m * v_t)
}

/// Maximizer of a unimodal function on `[a, b]` by golden-section search.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wrap_ranges() {
        assert_relative_eq!(wrap_pi(3.0 * std::f64::consts::PI), std::f64::consts::PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_pi(-0.5), -0.5);
        assert_relative_eq!(wrap_two_pi(-0.5), 2.0 * std::f64::consts::PI - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn rank_of_singular_matrix() {
        // Columns in wildly different units; one exact null direction.
        let j = DMatrix::from_row_slice(3, 3, &[1.0, 1e-9, 2.0, 0.0, 2e-9, 0.0, 1.0, 3e-9, 2.0]);
        let f = j.transpose() * &j;
        let ra = rank_analysis(&f, RANK_THRESHOLD);
        assert_eq!(ra.null_dim(), 1);
        let v = ra.null_basis.column(0);
        assert!((&f * v).norm() < 1e-9 * f.norm());
    }

    #[test]
    fn pinv_matches_inverse_when_regular() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let inv = a.clone().try_inverse().unwrap();
        let p = pinv_psd(&a, RANK_THRESHOLD);
        assert!((inv - p).norm() < 1e-12);
    }

    #[test]
    fn pinv_with_known_null_matches_svd_pinv() {
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
        let f = j.transpose() * &j;
        let ra = rank_analysis(&f, RANK_THRESHOLD);
        let p = pinv_with_null(&f, &ra.null_basis).unwrap();
        let oracle = f.clone().pseudo_inverse(1e-12).unwrap();
        assert!((p - oracle).norm() < 1e-10);
    }

    #[test]
    fn wahba_recovers_rotation() {
        let r = Rotation3::from_euler_angles(0.3, -0.2, 1.1);
        let l = vec![Vector3::new(1.0, 0.2, 0.0).normalize(), Vector3::new(0.1, 1.0, 0.3).normalize()];
        let g: Vec<_> = l.iter().map(|v| r * v).collect();
        let est = wahba(&l, &g, &[1.0, 1.0]);
        assert!(est.angle_to(&r) < 1e-10);
    }
}
