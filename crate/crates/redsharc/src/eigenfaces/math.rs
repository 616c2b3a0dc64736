//! Dense linear algebra for the eigenfaces demo: mean image, one-sided
//! Jacobi SVD, component selection, projection, and RMS-distance matching.
//! Matrices are stored as a vector of columns.

use crate::core::{Error, Result};

pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 60;

/// Column-wise mean of `images` (each image one column of pixels).
pub fn compute_mean(images: &[Vec<f64>]) -> Vec<f64> {
    assert!(!images.is_empty());
    let n = images[0].len();
    let mut mean = vec![0.0; n];
    for img in images {
        for (m, v) in mean.iter_mut().zip(img) {
            *m += v;
        }
    }
    let inv = 1.0 / images.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    mean
}

/// `mean - image` per pixel, matching the diff kernel's subtraction order.
pub fn mean_subtract(mean: &[f64], image: &[f64]) -> Vec<f64> {
    mean.iter().zip(image).map(|(m, p)| m - p).collect()
}

#[derive(Debug, Clone)]
pub struct Svd {
    /// Left singular vectors, one column each, singular values descending.
    pub u: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    /// Right singular vectors, one column each.
    pub v: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One-sided Jacobi SVD of the matrix whose columns are `a` (n rows,
/// m columns, m <= n required). Sweeps rotate column pairs until every
/// normalized off-diagonal inner product falls below `JACOBI_TOL`;
/// `NO_CONVERGENCE` after `JACOBI_MAX_SWEEPS` sweeps.
fn jacobi_columns(mut a: Vec<Vec<f64>>) -> Result<Svd> {
    let m = a.len();
    let mut v: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut col = vec![0.0; m];
            col[j] = 1.0;
            col
        })
        .collect();
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..m {
            for j in (i + 1)..m {
                let (left, right) = a.split_at_mut(j);
                let ai = &mut left[i];
                let aj = &mut right[0];
                let p = dot(ai, ai);
                let q = dot(aj, aj);
                let c = dot(ai, aj);
                let denom = (p * q).sqrt();
                if denom == 0.0 {
                    continue;
                }
                let ratio = c.abs() / denom;
                off = off.max(ratio);
                if ratio <= JACOBI_TOL {
                    continue;
                }
                // rotation that zeroes the (i, j) inner product
                let zeta = (q - p) / (2.0 * c);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for r in 0..ai.len() {
                    let x = ai[r];
                    let y = aj[r];
                    ai[r] = cs * x - sn * y;
                    aj[r] = sn * x + cs * y;
                }
                let (vl, vr) = v.split_at_mut(j);
                let vi = &mut vl[i];
                let vj = &mut vr[0];
                for r in 0..m {
                    let x = vi[r];
                    let y = vj[r];
                    vi[r] = cs * x - sn * y;
                    vj[r] = sn * x + cs * y;
                }
            }
        }
        if off <= JACOBI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "jacobi sweep limit of {JACOBI_MAX_SWEEPS} reached"
        )));
    }
    let mut sigma: Vec<f64> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut u = a;
    for (col, s) in u.iter_mut().zip(&sigma) {
        if *s > 0.0 {
            for x in col.iter_mut() {
                *x /= s;
            }
        }
    }
    // order singular values descending, ties by original index
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| sigma[y].partial_cmp(&sigma[x]).unwrap().then(x.cmp(&y)));
    u = order.iter().map(|&j| std::mem::take(&mut u[j])).collect();
    v = order.iter().map(|&j| std::mem::take(&mut v[j])).collect();
    sigma = order.iter().map(|&j| sigma[j]).collect();
    Ok(Svd { u, sigma, v })
}

/// SVD of the matrix with columns `columns` (n rows each). Wide matrices
/// (more columns than rows) are factored through their transpose so the
/// column set handed to the Jacobi sweep is always linearly independent
/// for generic input.
pub fn svd(columns: &[Vec<f64>]) -> Result<Svd> {
    let m = columns.len();
    if m == 0 {
        return Err(Error::DimensionMismatch("empty matrix".into()));
    }
    let n = columns[0].len();
    if n == 0 {
        return Err(Error::DimensionMismatch("zero-row matrix".into()));
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::DimensionMismatch("ragged columns".into()));
    }
    if m <= n {
        jacobi_columns(columns.to_vec())
    } else {
        // transpose: rows become columns
        let t: Vec<Vec<f64>> = (0..n)
            .map(|r| columns.iter().map(|c| c[r]).collect())
            .collect();
        let f = jacobi_columns(t)?;
        Ok(Svd {
            u: f.v,
            sigma: f.sigma,
            v: f.u,
        })
    }
}

/// Keep the `k` leading left singular vectors.
pub fn select_components(f: &Svd, k: usize) -> Result<Vec<Vec<f64>>> {
    if k == 0 || k > f.u.len() {
        return Err(Error::KOutOfRange(format!(
            "k={k} with {} components available",
            f.u.len()
        )));
    }
    Ok(f.u[..k].to_vec())
}

/// Weights of `diff` in the component basis: w_j = u_j . diff.
pub fn project(basis: &[Vec<f64>], diff: &[f64]) -> Vec<f64> {
    basis.iter().map(|u| dot(u, diff)).collect()
}

pub fn rms_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (sum / a.len() as f64).sqrt()
}

/// Index of the reference weight vector closest to `w` by RMS distance,
/// lowest index on ties.
pub fn classify(w: &[f64], references: &[Vec<f64>]) -> Result<(usize, f64)> {
    if references.is_empty() {
        return Err(Error::EmptyReferences);
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, r) in references.iter().enumerate() {
        let d = rms_distance(w, r);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok((best, best_d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(f: &Svd, n: usize, m: usize) -> Vec<Vec<f64>> {
        // columns of U * diag(sigma) * V^T
        (0..m)
            .map(|j| {
                (0..n)
                    .map(|r| {
                        f.u.iter()
                            .zip(&f.sigma)
                            .zip(&f.v)
                            .map(|((u, s), v)| u[r] * s * v[j])
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    fn frob(cols: &[Vec<f64>]) -> f64 {
        cols.iter()
            .flat_map(|c| c.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn diagonal_matrix_svd() {
        let a = vec![vec![3.0, 0.0, 0.0], vec![0.0, -2.0, 0.0]];
        let f = svd(&a).unwrap();
        assert!((f.sigma[0] - 3.0).abs() < 1e-12);
        assert!((f.sigma[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn known_2x2() {
        // columns of [[1,1],[0,1]]: singular values are the golden-ratio pair
        let a = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
        let f = svd(&a).unwrap();
        let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
        assert!((f.sigma[0] - phi).abs() < 1e-12);
        assert!((f.sigma[1] - (phi - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        // deterministic pseudo-random matrix, tall and wide variants
        for (n, m) in [(8usize, 5usize), (5, 8), (6, 6)] {
            let mut state = 0x9E3779B97F4A7C15u64;
            let mut next = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            };
            let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| next()).collect()).collect();
            let f = svd(&a).unwrap();
            let r = reconstruct(&f, n, m);
            let diff: Vec<Vec<f64>> = a
                .iter()
                .zip(&r)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
                .collect();
            assert!(frob(&diff) / frob(&a) < 1e-12, "reconstruction {n}x{m}");
            let rank = n.min(m);
            for i in 0..rank {
                for j in 0..rank {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot(&f.u[i], &f.u[j]) - expect).abs() < 1e-10);
                    assert!((dot(&f.v[i], &f.v[j]) - expect).abs() < 1e-10);
                }
            }
            for w in f.sigma.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn select_and_project() {
        let a = vec![vec![2.0, 0.0], vec![0.0, 1.0]];
        let f = svd(&a).unwrap();
        let basis = select_components(&f, 1).unwrap();
        assert_eq!(basis.len(), 1);
        let w = project(&basis, &[4.0, 0.0]);
        assert!((w[0].abs() - 4.0).abs() < 1e-12);
        assert!(matches!(select_components(&f, 3), Err(Error::KOutOfRange(_))));
        assert!(matches!(select_components(&f, 0), Err(Error::KOutOfRange(_))));
    }

    #[test]
    fn classify_tie_breaks_low_index() {
        let refs = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0]];
        let (idx, d) = classify(&[1.0, 0.0], &refs).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(d, 0.0);
        assert!(matches!(classify(&[1.0], &[]), Err(Error::EmptyReferences)));
    }

    #[test]
    fn mean_and_subtract() {
        let imgs = vec![vec![1.0, 3.0], vec![3.0, 5.0]];
        let mean = compute_mean(&imgs);
        assert_eq!(mean, vec![2.0, 4.0]);
        assert_eq!(mean_subtract(&mean, &imgs[0]), vec![1.0, 1.0]);
    }

    #[test]
    fn rms_distance_basics() {
        assert_eq!(rms_distance(&[1.0, 1.0], &[1.0, 1.0]), 0.0);
        assert!((rms_distance(&[0.0, 0.0], &[3.0, 4.0]) - (12.5f64).sqrt()).abs() < 1e-15);
    }
}
