use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EigenError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |M[{i}][{j}] - M[{j}][{i}]| = {diff:e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },
    #[error("QL iteration did not converge")]
    NoConvergence,
}

const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues of a dense symmetric matrix in ascending order, via Householder
/// tridiagonalization followed by the implicit QL method.
pub fn symmetric_eigenvalues(m: &[Vec<f64>]) -> Result<Vec<f64>, EigenError> {
    let n = m.len();
    for row in m {
        if row.len() != n {
            return Err(EigenError::NotSquare {
                rows: n,
                cols: row.len(),
            });
        }
    }
    let scale = 1.0 + m.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            let diff = (m[i][j] - m[j][i]).abs();
            if diff > SYMMETRY_TOL * scale {
                return Err(EigenError::NotSymmetric { i, j, diff });
            }
        }
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (m[i][j] + m[j][i])).collect())
        .collect();
    let (mut d, mut e) = tridiagonalize(&mut a);
    tridiagonal_ql(&mut d, &mut e)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Smallest eigenvalue of a dense symmetric matrix.
pub fn min_eigenvalue(m: &[Vec<f64>]) -> Result<f64, EigenError> {
    Ok(symmetric_eigenvalues(m)?.first().copied().unwrap_or(f64::INFINITY))
}

/// Householder reduction to tridiagonal form, lower triangle only. Returns the
/// diagonal and the subdiagonal (`e[i]` couples `i-1` and `i`, `e[0] = 0`).
fn tridiagonalize(a: &mut [Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = a.len();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[i][k].abs()).sum();
            if scale == 0.0 {
                e[i] = a[i][l];
            } else {
                for k in 0..=l {
                    a[i][k] /= scale;
                    h += a[i][k] * a[i][k];
                }
                let mut f = a[i][l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[i][l] = f - g;
                f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[j][k] * a[i][k];
                    }
                    for k in j + 1..=l {
                        g += a[k][j] * a[i][k];
                    }
                    e[j] = g / h;
                    f += e[j] * a[i][j];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[i][j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[j][k] -= f * e[k] + g * a[i][k];
                    }
                }
            }
        } else {
            e[i] = a[i][l];
        }
        d[i] = h;
    }
    for i in 0..n {
        d[i] = a[i][i];
    }
    e[0] = 0.0;
    (d, e)
}

/// Implicit QL with Wilkinson-style shifts on a symmetric tridiagonal matrix.
/// On return `d` holds the eigenvalues (unsorted).
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<(), EigenError> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(EigenError::NoConvergence);
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn analytic_examples() {
        let id = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert!((min_eigenvalue(&id).unwrap() - 1.0).abs() < 1e-14);
        let d = vec![vec![3.0, 0.0], vec![0.0, -1.0]];
        assert!((min_eigenvalue(&d).unwrap() + 1.0).abs() < 1e-14);
        let ones = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(min_eigenvalue(&ones).unwrap().abs() < 1e-14);
        assert_eq!(min_eigenvalue(&[vec![5.0]]).unwrap(), 5.0);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = vec![vec![1.0, 2.0], vec![0.0, 1.0]];
        assert!(matches!(min_eigenvalue(&m), Err(EigenError::NotSymmetric { .. })));
        let r = vec![vec![1.0, 2.0]];
        assert!(matches!(min_eigenvalue(&r), Err(EigenError::NotSquare { .. })));
    }

    #[test]
    fn matches_nalgebra_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2usize, 3, 5, 8, 17, 40] {
            for _ in 0..5 {
                let mut m = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in 0..=i {
                        let v: f64 = rng.random_range(-3.0..3.0);
                        m[i][j] = v;
                        m[j][i] = v;
                    }
                }
                let ours = symmetric_eigenvalues(&m).unwrap();
                let dm = DMatrix::from_fn(n, n, |i, j| m[i][j]);
                let mut theirs: Vec<f64> = dm.symmetric_eigenvalues().iter().copied().collect();
                theirs.sort_by(f64::total_cmp);
                let norm = dm.norm();
                for (a, b) in ours.iter().zip(&theirs) {
                    assert!((a - b).abs() <= 1e-10 * (1.0 + norm), "{a} vs {b}");
                }
            }
        }
    }
}
