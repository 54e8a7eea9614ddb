//! Truncated singular value decomposition.
//!
//! Matrices whose smaller dimension is at most [`JACOBI_MAX_DIM`] go through a
//! one-sided (Hestenes) Jacobi sweep on the smaller Gram side, which returns
//! every singular triplet to near machine precision. Larger matrices use block
//! subspace iteration with Rayleigh-Ritz extraction, since HOOI only ever asks
//! for the leading `k`-dimensional subspace.
//!
//! Singular vectors are sign-normalized so the largest-magnitude entry of each
//! left vector is positive (the paired right vector flips with it).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{norm2, Matrix};

/// Largest min-dimension handled by the Jacobi route under [`SvdMethod::Auto`].
pub const JACOBI_MAX_DIM: usize = 512;

const JACOBI_MAX_SWEEPS: usize = 80;
const JACOBI_EPS: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvdError {
    #[error("rank {k} is outside 1..={max}")]
    RankOutOfRange { k: usize, max: usize },
    #[error("SVD did not converge after {iterations} iterations (residual {residual:.3e})")]
    NumericalFailure { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvdMethod {
    Auto,
    Jacobi,
    Subspace,
}

#[derive(Debug, Clone)]
pub struct SvdOptions {
    pub method: SvdMethod,
    /// Extra block columns carried by subspace iteration beyond `k`.
    pub oversampling: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the sine of the largest principal angle between
    /// successive subspace estimates.
    pub angle_tolerance: f64,
    pub seed: u64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            method: SvdMethod::Auto,
            oversampling: 8,
            max_iterations: 300,
            angle_tolerance: 1e-10,
            seed: 0x5eed_5eed,
        }
    }
}

/// Leading singular triplets, `k` of them, with singular values non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `rows × k`, orthonormal columns.
    pub left: Matrix,
    pub singular_values: Vec<f64>,
    /// `cols × k`, orthonormal columns.
    pub right: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `left · diag(σ) · rightᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let scaled = Matrix::from_fn(self.left.rows(), self.rank(), |i, j| {
            self.left.get(i, j) * self.singular_values[j]
        });
        scaled
            .matmul(&self.right.transpose())
            .expect("consistent SVD factors")
    }
}

pub fn truncated_svd(m: &Matrix, k: usize) -> Result<SvdResult, SvdError> {
    truncated_svd_with(m, k, &SvdOptions::default())
}

pub fn truncated_svd_with(m: &Matrix, k: usize, opts: &SvdOptions) -> Result<SvdResult, SvdError> {
    let max = m.rows().min(m.cols());
    if k == 0 || k > max {
        return Err(SvdError::RankOutOfRange { k, max });
    }
    let use_jacobi = match opts.method {
        SvdMethod::Jacobi => true,
        SvdMethod::Subspace => false,
        SvdMethod::Auto => max <= JACOBI_MAX_DIM,
    };
    // Work on the orientation with at least as many rows as columns.
    let transposed = m.rows() < m.cols();
    let tall = if transposed { m.transpose() } else { m.clone() };
    let (u, s, v) = if use_jacobi {
        let (u, s, v) = jacobi_thin_svd(&tall)?;
        (u.leading_columns(k), s[..k].to_vec(), v.leading_columns(k))
    } else {
        subspace_svd(&tall, k, opts)?
    };
    let (mut left, mut right) = if transposed { (v, u) } else { (u, v) };
    normalize_signs(&mut left, &mut right);
    Ok(SvdResult {
        left,
        singular_values: s,
        right,
    })
}

/// Full thin SVD of a `m × n` matrix with `m ≥ n` via one-sided Jacobi.
/// Returns `(U: m×n, σ: n, V: n×n)` sorted by descending σ.
pub(crate) fn jacobi_thin_svd(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix), SvdError> {
    let (m, n) = (a.rows(), a.cols());
    debug_assert!(m >= n);
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    // Columns below this squared norm are numerically zero and never rotated.
    let negligible = (f64::EPSILON * a.frobenius_norm()).powi(2);
    let mut converged = n < 2;
    let mut sweeps = 0;
    let mut worst = 0.0f64;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        converged = true;
        worst = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha <= negligible || beta <= negligible || gamma == 0.0 {
                    continue;
                }
                let off = gamma.abs() / (alpha * beta).sqrt();
                if off <= JACOBI_EPS {
                    continue;
                }
                worst = worst.max(off);
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
    }
    if !converged {
        return Err(SvdError::NumericalFailure {
            iterations: sweeps,
            residual: worst,
        });
    }

    let sigma: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s_sorted = Vec::with_capacity(n);
    let mut v_sorted = Vec::with_capacity(n);
    for &j in &order {
        let s = sigma[j];
        let col = if s > 0.0 {
            cols[j].iter().map(|x| x / s).collect()
        } else {
            vec![0.0; m]
        };
        u_cols.push(col);
        s_sorted.push(s);
        v_sorted.push(v[j].clone());
    }
    orthonormalize_in_place(&mut u_cols, m);

    let u = Matrix::from_fn(m, n, |i, j| u_cols[j][i]);
    let vm = Matrix::from_fn(n, n, |i, j| v_sorted[j][i]);
    Ok((u, s_sorted, vm))
}

/// Block subspace iteration on `AᵀA` with Rayleigh-Ritz extraction. `a` must be tall.
fn subspace_svd(
    a: &Matrix,
    k: usize,
    opts: &SvdOptions,
) -> Result<(Matrix, Vec<f64>, Matrix), SvdError> {
    let n = a.cols();
    let p = (k + opts.oversampling).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q_cols: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    orthonormalize_in_place(&mut q_cols, n);
    let mut q = Matrix::from_fn(n, p, |i, j| q_cols[j][i]);

    let mut previous: Option<Matrix> = None;
    let mut angle = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let z = a.matmul(&q).expect("conformant");
        let mut z_cols: Vec<Vec<f64>> = (0..p).map(|j| z.column(j)).collect();
        orthonormalize_in_place(&mut z_cols, a.rows());
        let qz = Matrix::from_fn(a.rows(), p, |i, j| z_cols[j][i]);
        // Y = Aᵀ·Qz, so A ≈ Qz·Yᵀ on the current subspace.
        let y = a.t_matmul(&qz).expect("conformant");
        let (uy, sy, wy) = jacobi_thin_svd(&y)?;
        let v_k = uy.leading_columns(k);
        let sig_floor = sy[0] * 1e-13;
        let significant = sy[..k].iter().filter(|s| **s > sig_floor).count();

        if let Some(prev) = &previous {
            angle = subspace_angle(prev, &v_k, significant);
            if angle < opts.angle_tolerance {
                let left = qz.matmul(&wy).expect("conformant").leading_columns(k);
                return Ok((left, sy[..k].to_vec(), v_k));
            }
        }
        previous = Some(v_k);
        q = uy;
    }
    Err(SvdError::NumericalFailure {
        iterations: opts.max_iterations,
        residual: angle,
    })
}

/// Largest `‖(I − P·Pᵀ)·vⱼ‖` over the first `count` columns of `next`.
fn subspace_angle(prev: &Matrix, next: &Matrix, count: usize) -> f64 {
    if count == 0 {
        return 0.0;
    }
    let coeffs = prev.t_matmul(next).expect("conformant");
    let proj = prev.matmul(&coeffs).expect("conformant");
    (0..count)
        .map(|j| {
            let diff: Vec<f64> = (0..next.rows())
                .map(|i| next.get(i, j) - proj.get(i, j))
                .collect();
            norm2(&diff)
        })
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Modified Gram-Schmidt with re-orthogonalization. Columns that collapse are
/// replaced by the first standard basis vectors that survive projection.
pub(crate) fn orthonormalize_in_place(cols: &mut [Vec<f64>], dim: usize) {
    let mut next_basis = 0usize;
    for j in 0..cols.len() {
        let mut v = std::mem::take(&mut cols[j]);
        let original = norm2(&v);
        project_out(&mut v, &cols[..j]);
        let mut nv = norm2(&v);
        if original == 0.0 || nv <= 1e-8 * original {
            loop {
                assert!(next_basis < dim, "cannot complete an orthonormal basis");
                v = vec![0.0; dim];
                v[next_basis] = 1.0;
                next_basis += 1;
                project_out(&mut v, &cols[..j]);
                nv = norm2(&v);
                if nv > 1e-6 {
                    break;
                }
            }
        }
        for x in v.iter_mut() {
            *x /= nv;
        }
        cols[j] = v;
    }
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
}

fn normalize_signs(left: &mut Matrix, right: &mut Matrix) {
    for j in 0..left.cols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..left.rows() {
            let a = left.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if left.get(best, j) < 0.0 {
            for i in 0..left.rows() {
                left.set(i, j, -left.get(i, j));
            }
            for i in 0..right.rows() {
                right.set(i, j, -right.get(i, j));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    /// Independent oracle: eigenvalues of the Gram matrix by cyclic two-sided
    /// Jacobi, square-rooted. Shares no code with the one-sided route.
    fn oracle_singular_values(a: &Matrix) -> Vec<f64> {
        let g = if a.rows() >= a.cols() {
            a.t_matmul(a).unwrap()
        } else {
            a.transpose().t_matmul(&a.transpose()).unwrap()
        };
        let n = g.rows();
        let mut s = g.data().to_vec();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in 0..n {
                    if p != q {
                        off += s[p * n + q] * s[p * n + q];
                    }
                }
            }
            if off.sqrt() < 1e-14 * (1.0 + s.iter().map(|x| x.abs()).fold(0.0, f64::max)) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = s[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (s[q * n + q] - s[p * n + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * c;
                    for k in 0..n {
                        let akp = s[k * n + p];
                        let akq = s[k * n + q];
                        s[k * n + p] = c * akp - sn * akq;
                        s[k * n + q] = sn * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = s[p * n + k];
                        let aqk = s[q * n + k];
                        s[p * n + k] = c * apk - sn * aqk;
                        s[q * n + k] = sn * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| s[i * n + i].max(0.0).sqrt()).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    fn oracle_residual(a: &Matrix, k: usize) -> f64 {
        oracle_singular_values(a)[k..]
            .iter()
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn diagonal_matrix() {
        let m = Matrix::diag(&[3.0, 2.0, 1.0]);
        let r = truncated_svd(&m, 2).unwrap();
        assert_eq!(r.singular_values, vec![3.0, 2.0]);
        assert_eq!(
            r.left,
            Matrix::from_rows(&[vec![1., 0.], vec![0., 1.], vec![0., 0.]])
        );
        assert_eq!(r.right, r.left);
    }

    #[test]
    fn exact_rank_one() {
        let a = [1.0, -2.0, 3.0, 0.5];
        let b = [2.0, 1.0, -1.0];
        let m = Matrix::from_fn(4, 3, |i, j| a[i] * b[j]);
        let r = truncated_svd(&m, 1).unwrap();
        let expected = norm2(&a) * norm2(&b);
        assert!((r.singular_values[0] - expected).abs() < 1e-12 * expected);
        let resid = m.sub(&r.reconstruct()).unwrap().frobenius_norm();
        assert!(resid < 1e-12);
        // Sign convention: largest-magnitude entry of the left vector is positive.
        assert!(r.left.get(2, 0) > 0.0);
    }

    #[test]
    fn rank_out_of_range() {
        let m = gaussian(4, 3, 1);
        assert_eq!(
            truncated_svd(&m, 0),
            Err(SvdError::RankOutOfRange { k: 0, max: 3 })
        );
        assert_eq!(
            truncated_svd(&m, 4),
            Err(SvdError::RankOutOfRange { k: 4, max: 3 })
        );
    }

    #[test]
    fn random_50x30_residual_matches_oracle() {
        let m = gaussian(50, 30, 42);
        let r = truncated_svd(&m, 5).unwrap();
        let resid = m.sub(&r.reconstruct()).unwrap().frobenius_norm();
        let oracle = oracle_residual(&m, 5);
        assert!((resid - oracle).abs() < 1e-8, "{resid} vs {oracle}");
    }

    #[test]
    fn wide_matrices_use_the_transposed_route() {
        let m = gaussian(12, 40, 3);
        let r = truncated_svd(&m, 4).unwrap();
        assert_eq!((r.left.rows(), r.left.cols()), (12, 4));
        assert_eq!((r.right.rows(), r.right.cols()), (40, 4));
        let resid = m.sub(&r.reconstruct()).unwrap().frobenius_norm();
        assert!((resid - oracle_residual(&m, 4)).abs() < 1e-9);
    }

    #[test]
    fn residual_matches_oracle_up_to_200() {
        for (i, (r, c)) in [(200, 200), (120, 80), (60, 190)].into_iter().enumerate() {
            let m = gaussian(r, c, 10 + i as u64);
            let k = 7;
            let s = truncated_svd(&m, k).unwrap();
            let resid = m.sub(&s.reconstruct()).unwrap().frobenius_norm();
            let oracle = oracle_residual(&m, k);
            assert!(
                (resid - oracle).abs() <= 1e-6 * oracle,
                "{resid} vs {oracle}"
            );
        }
    }

    #[test]
    fn singular_vectors_are_orthonormal() {
        let m = gaussian(40, 25, 9);
        let r = truncated_svd(&m, 10).unwrap();
        assert!(r.left.column_orthonormality_defect() < 1e-8);
        assert!(r.right.column_orthonormality_defect() < 1e-8);
        assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.singular_values.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn rank_deficient_matrix_keeps_orthonormal_basis() {
        let a = gaussian(10, 2, 5);
        let b = gaussian(2, 8, 6);
        let m = a.matmul(&b).unwrap();
        let r = truncated_svd(&m, 6).unwrap();
        assert!(r.left.column_orthonormality_defect() < 1e-8);
        assert!(r.right.column_orthonormality_defect() < 1e-8);
        assert!(r.singular_values[2] < 1e-12 * r.singular_values[0]);
        let zero = Matrix::zeros(5, 4);
        let z = truncated_svd(&zero, 3).unwrap();
        assert_eq!(z.singular_values, vec![0.0; 3]);
        assert!(z.left.column_orthonormality_defect() < 1e-12);
    }

    #[test]
    fn subspace_route_agrees_with_jacobi() {
        // Decaying spectrum so subspace iteration converges in a few dozen steps.
        let u = gaussian(90, 60, 1);
        let w = gaussian(60, 70, 2);
        let scale: Vec<f64> = (0..60).map(|i| 0.8f64.powi(i)).collect();
        let m = Matrix::from_fn(90, 60, |i, j| u.get(i, j) * scale[j])
            .matmul(&w)
            .unwrap();
        let k = 4;
        let opts = SvdOptions {
            method: SvdMethod::Subspace,
            ..SvdOptions::default()
        };
        let sub = truncated_svd_with(&m, k, &opts).unwrap();
        let jac = truncated_svd_with(
            &m,
            k,
            &SvdOptions {
                method: SvdMethod::Jacobi,
                ..SvdOptions::default()
            },
        )
        .unwrap();
        for (a, b) in sub.singular_values.iter().zip(&jac.singular_values) {
            assert!((a - b).abs() <= 1e-9 * b);
        }
        for (a, b) in sub.left.data().iter().zip(jac.left.data()) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!(sub.left.column_orthonormality_defect() < 1e-8);
    }

    #[test]
    fn subspace_reports_non_convergence() {
        let m = gaussian(40, 40, 77);
        let opts = SvdOptions {
            method: SvdMethod::Subspace,
            max_iterations: 2,
            oversampling: 0,
            ..SvdOptions::default()
        };
        match truncated_svd_with(&m, 3, &opts) {
            Err(SvdError::NumericalFailure {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn large_matrix_auto_route() {
        // min dim > 512 selects subspace iteration.
        let u = gaussian(530, 6, 3);
        let w = gaussian(6, 520, 4);
        let m = u.matmul(&w).unwrap();
        let r = truncated_svd(&m, 3).unwrap();
        let resid = m.sub(&r.reconstruct()).unwrap().frobenius_norm();
        let tail = truncated_svd_with(
            &m,
            6,
            &SvdOptions {
                method: SvdMethod::Subspace,
                ..SvdOptions::default()
            },
        )
        .unwrap();
        let oracle = tail.singular_values[3..]
            .iter()
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt();
        assert!((resid - oracle).abs() <= 1e-6 * oracle);
    }

    #[test]
    fn truncated_svd_beats_random_rank_k_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..100 {
            let m = gaussian(8, 6, 500 + trial);
            let k = 1 + (trial as usize % 4);
            let r = truncated_svd(&m, k).unwrap();
            let best = m.sub(&r.reconstruct()).unwrap().frobenius_norm();
            let x = Matrix::from_fn(8, k, |_, _| StandardNormal.sample(&mut rng));
            let y = Matrix::from_fn(k, 6, |_, _| StandardNormal.sample(&mut rng));
            let candidate = x.matmul(&y).unwrap();
            // Also try the least-squares rescaling of the random candidate.
            let alpha = dot(candidate.data(), m.data()) / dot(candidate.data(), candidate.data());
            let other = m.sub(&candidate.scale(alpha)).unwrap().frobenius_norm();
            assert!(best <= other + 1e-12);
        }
    }
}
