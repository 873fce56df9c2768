//! Dense rational matrices and the exact linear algebra the certificate path
//! needs: null spaces, fraction-free solves and LDLᵀ.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

#[derive(Clone, PartialEq, Eq)]
pub struct RatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<BigRational>,
}

impl RatMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RatMatrix {
            rows,
            cols,
            data: vec![BigRational::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = BigRational::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> BigRational) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        RatMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<BigRational>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        RatMatrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
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

    pub fn row(&self, i: usize) -> &[BigRational] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> RatMatrix {
        RatMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].clone())
    }

    pub fn mul(&self, other: &RatMatrix) -> RatMatrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = RatMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = &other[(k, j)];
                    if !b.is_zero() {
                        out[(i, j)] += a * b;
                    }
                }
            }
        }
        out
    }

    pub fn sub(&self, other: &RatMatrix) -> RatMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        RatMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square() && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> BigRational {
        self.data.iter().map(|a| a * a).fold(BigRational::zero(), |s, x| s + x)
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(crate::poly::rational_to_f64).collect())
            .collect()
    }
}

impl Index<(usize, usize)> for RatMatrix {
    type Output = BigRational;
    fn index(&self, (i, j): (usize, usize)) -> &BigRational {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for RatMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut BigRational {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for RatMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "RatMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|x| x.to_string()).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        write!(f, "]")
    }
}

/// Basis of `{c : A c = 0}`, returned as the rows of a matrix.
///
/// Computed from the reduced row echelon form; each basis vector has a 1 in
/// its free column and zeros in the other free columns.
pub fn null_space(a: &RatMatrix) -> RatMatrix {
    let (r, pivots) = rref(a);
    let n = a.cols();
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    let mut out = RatMatrix::zeros(free.len(), n);
    for (k, &fc) in free.iter().enumerate() {
        out[(k, fc)] = BigRational::one();
        for (pi, &pc) in pivots.iter().enumerate() {
            out[(k, pc)] = -r[(pi, fc)].clone();
        }
    }
    out
}

/// Reduced row echelon form and pivot columns.
pub fn rref(a: &RatMatrix) -> (RatMatrix, Vec<usize>) {
    let mut m = a.clone();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..m.cols() {
        if row == m.rows() {
            break;
        }
        let Some(p) = (row..m.rows()).find(|&i| !m[(i, col)].is_zero()) else {
            continue;
        };
        if p != row {
            for j in 0..m.cols() {
                let tmp = m[(p, j)].clone();
                m[(p, j)] = m[(row, j)].clone();
                m[(row, j)] = tmp;
            }
        }
        let inv = m[(row, col)].recip();
        for j in col..m.cols() {
            m[(row, j)] = &m[(row, j)] * &inv;
        }
        for i in 0..m.rows() {
            if i != row && !m[(i, col)].is_zero() {
                let factor = m[(i, col)].clone();
                for j in col..m.cols() {
                    let delta = &factor * &m[(row, j)];
                    m[(i, j)] -= delta;
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    (m, pivots)
}

fn lcm_of_denominators(xs: &[BigRational]) -> BigInt {
    xs.iter().fold(BigInt::one(), |l, x| l.lcm(x.denom()))
}

/// Solves the square system `A x = b` exactly by fraction-free (Bareiss)
/// elimination. Returns `None` when `A` is singular.
pub fn solve_fraction_free(a: &RatMatrix, b: &[BigRational]) -> Option<Vec<BigRational>> {
    let n = a.rows();
    assert!(a.is_square() && b.len() == n, "dimension mismatch");
    if n == 0 {
        return Some(Vec::new());
    }
    // Integer augmented matrix, each row scaled by its denominator lcm.
    let mut m: Vec<Vec<BigInt>> = (0..n)
        .map(|i| {
            let mut row: Vec<BigRational> = a.row(i).to_vec();
            row.push(b[i].clone());
            let l = BigRational::from_integer(lcm_of_denominators(&row));
            row.iter().map(|x| (x * &l).to_integer()).collect()
        })
        .collect();
    let mut prev = BigInt::one();
    for k in 0..n {
        let p = (k..n).find(|&i| !m[i][k].is_zero())?;
        m.swap(k, p);
        for i in k + 1..n {
            for j in k + 1..=n {
                let v = &m[i][j] * &m[k][k] - &m[i][k] * &m[k][j];
                m[i][j] = v / &prev;
            }
            m[i][k] = BigInt::zero();
        }
        prev = m[k][k].clone();
    }
    let mut x = vec![BigRational::zero(); n];
    for i in (0..n).rev() {
        let mut acc = BigRational::from_integer(m[i][n].clone());
        for j in i + 1..n {
            acc -= BigRational::from_integer(m[i][j].clone()) * &x[j];
        }
        x[i] = acc / BigRational::from_integer(m[i][i].clone());
    }
    Some(x)
}

/// Result of an exact LDLᵀ attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ldlt {
    /// `Q = L·diag(d)·Lᵀ` with `L` unit lower triangular and every `d_i >= 0`.
    Factor { l: RatMatrix, d: Vec<BigRational> },
    /// A negative pivot, or a zero pivot with a nonzero remaining row.
    Indefinite { step: usize },
}

/// Exact LDLᵀ without pivoting; doubles as a PSD test.
///
/// A zero pivot is accepted only when the rest of its column is zero too,
/// which is exactly what positive semidefiniteness forces.
pub fn exact_ldlt(q: &RatMatrix) -> Ldlt {
    assert!(q.is_square(), "LDLᵀ of a non-square matrix");
    let n = q.rows();
    let mut a = q.clone();
    let mut l = RatMatrix::identity(n);
    let mut d = Vec::with_capacity(n);
    for k in 0..n {
        let pivot = a[(k, k)].clone();
        if pivot.is_negative() {
            return Ldlt::Indefinite { step: k };
        }
        if pivot.is_zero() {
            if (k + 1..n).any(|i| !a[(i, k)].is_zero()) {
                return Ldlt::Indefinite { step: k };
            }
            d.push(pivot);
            continue;
        }
        for i in k + 1..n {
            l[(i, k)] = &a[(i, k)] / &pivot;
        }
        for i in k + 1..n {
            if a[(i, k)].is_zero() {
                continue;
            }
            for j in k + 1..=i {
                let delta = &l[(i, k)] * &a[(j, k)];
                a[(i, j)] -= delta;
                if i != j {
                    a[(j, i)] = a[(i, j)].clone();
                }
            }
        }
        d.push(pivot);
    }
    Ldlt::Factor { l, d }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{int, rat};

    fn m(rows: &[&[i64]]) -> RatMatrix {
        RatMatrix::from_rows(rows.iter().map(|r| r.iter().map(|&x| int(x)).collect()).collect())
    }

    #[test]
    fn ldlt_identity() {
        match exact_ldlt(&RatMatrix::identity(3)) {
            Ldlt::Factor { l, d } => {
                assert_eq!(l, RatMatrix::identity(3));
                assert_eq!(d, vec![int(1); 3]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ldlt_rank_one() {
        match exact_ldlt(&m(&[&[1, 1], &[1, 1]])) {
            Ldlt::Factor { l, d } => {
                assert_eq!(d, vec![int(1), int(0)]);
                assert_eq!(l[(1, 0)], int(1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ldlt_indefinite() {
        assert_eq!(exact_ldlt(&m(&[&[0, 1], &[1, 0]])), Ldlt::Indefinite { step: 0 });
        assert_eq!(exact_ldlt(&m(&[&[1, 2], &[2, 1]])), Ldlt::Indefinite { step: 1 });
        assert_eq!(exact_ldlt(&m(&[&[-1]])), Ldlt::Indefinite { step: 0 });
    }

    #[test]
    fn ldlt_reconstructs() {
        let q = m(&[&[4, 2, -2], &[2, 5, 1], &[-2, 1, 6]]);
        let Ldlt::Factor { l, d } = exact_ldlt(&q) else { panic!() };
        let dm = RatMatrix::from_fn(3, 3, |i, j| if i == j { d[i].clone() } else { int(0) });
        assert_eq!(l.mul(&dm).mul(&l.transpose()), q);
    }

    #[test]
    fn null_space_basics() {
        let a = m(&[&[1, 1, 0], &[0, 0, 1]]);
        let ns = null_space(&a);
        assert_eq!(ns.rows(), 1);
        assert!(a.mul(&ns.transpose()).frobenius_sq().is_zero());
        assert_eq!(null_space(&RatMatrix::zeros(0, 3)).rows(), 3);
    }

    #[test]
    fn bareiss_solves() {
        let a = RatMatrix::from_rows(vec![
            vec![rat(1, 2), int(3), int(0)],
            vec![int(0), int(0), int(2)],
            vec![int(1), int(1), int(1)],
        ]);
        let b = vec![int(1), rat(1, 3), int(5)];
        let x = solve_fraction_free(&a, &b).unwrap();
        for i in 0..3 {
            let lhs = (0..3).fold(int(0), |s, j| s + &a[(i, j)] * &x[j]);
            assert_eq!(lhs, b[i]);
        }
        assert!(solve_fraction_free(&m(&[&[1, 2], &[2, 4]]), &[int(1), int(2)]).is_none());
    }
}
