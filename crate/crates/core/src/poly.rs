//! Exact sparse multivariate polynomials over the rationals.
//!
//! A [`Polynomial`] is a map from [`Monomial`] exponent vectors to nonzero
//! [`BigRational`] coefficients. Monomials are ordered graded-lexicographically
//! so that iteration (and therefore serialization) is canonical.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Range, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolyError {
    #[error("variable count mismatch: {left} vs {right}")]
    VarCountMismatch { left: usize, right: usize },
    #[error("degree of the zero polynomial is undefined")]
    ZeroPolynomial,
    #[error("polynomial is not graded with respect to the given blocks")]
    NotGraded,
    #[error("point has {got} coordinates, expected {expected}")]
    PointLength { expected: usize, got: usize },
}

/// Exponent vector `x_0^{a_0} ... x_{n-1}^{a_{n-1}}`.
///
/// Ordered by total degree first, then lexicographically (earlier variables
/// weigh more), i.e. graded lex.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(n_vars: usize) -> Self {
        Monomial(vec![0; n_vars])
    }

    /// The monomial `x_var`.
    pub fn var(n_vars: usize, var: usize) -> Self {
        let mut e = vec![0; n_vars];
        e[var] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn n_vars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u64 {
        self.0.iter().map(|&e| u64::from(e)).sum()
    }

    /// Degree restricted to the variables in `range`.
    pub fn degree_in(&self, range: Range<usize>) -> u64 {
        self.0[range].iter().map(|&e| u64::from(e)).sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// The monomial with every exponent doubled.
    pub fn square(&self) -> Monomial {
        Monomial(self.0.iter().map(|a| 2 * a).collect())
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Partition of the variable indices into contiguous blocks.
///
/// A single block is ordinary homogeneity; several blocks give multihomogeneous
/// (e.g. bihomogeneous) forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grading {
    blocks: Vec<Range<usize>>,
}

impl Grading {
    pub fn single(n_vars: usize) -> Self {
        Grading {
            blocks: vec![0..n_vars],
        }
    }

    /// Blocks of the given sizes, in variable order. Every size must be positive.
    pub fn from_sizes(sizes: &[usize]) -> Option<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return None;
        }
        let mut start = 0;
        let blocks = sizes
            .iter()
            .map(|&s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect();
        Some(Grading { blocks })
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_vars(&self) -> usize {
        self.blocks.last().map_or(0, |r| r.end)
    }

    pub fn block_degrees(&self, m: &Monomial) -> Vec<u64> {
        self.blocks.iter().map(|r| m.degree_in(r.clone())).collect()
    }
}

/// Sparse polynomial with exact rational coefficients.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Polynomial {
    n_vars: usize,
    terms: BTreeMap<Monomial, BigRational>,
}

impl Polynomial {
    pub fn zero(n_vars: usize) -> Self {
        Polynomial {
            n_vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn one(n_vars: usize) -> Self {
        Self::constant(n_vars, BigRational::one())
    }

    pub fn constant(n_vars: usize, c: BigRational) -> Self {
        Self::term(Monomial::one(n_vars), c)
    }

    pub fn var(n_vars: usize, var: usize) -> Self {
        Self::term(Monomial::var(n_vars, var), BigRational::one())
    }

    pub fn term(m: Monomial, c: BigRational) -> Self {
        let mut p = Polynomial::zero(m.n_vars());
        if !c.is_zero() {
            p.terms.insert(m, c);
        }
        p
    }

    /// Builds a polynomial from (monomial, coefficient) pairs, summing repeats.
    ///
    /// Panics if a monomial has the wrong length.
    pub fn from_terms<I>(n_vars: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Monomial, BigRational)>,
    {
        let mut p = Polynomial::zero(n_vars);
        for (m, c) in terms {
            assert_eq!(m.n_vars(), n_vars, "monomial length mismatch");
            p.add_term(m, c);
        }
        p
    }

    /// Sum of squares of all variables.
    pub fn sum_of_squared_vars(n_vars: usize, vars: Range<usize>) -> Self {
        Polynomial::from_terms(
            n_vars,
            vars.map(|i| (Monomial::var(n_vars, i).square(), BigRational::one())),
        )
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    pub fn monomials(&self) -> impl Iterator<Item = &Monomial> {
        self.terms.keys()
    }

    pub fn coeff(&self, m: &Monomial) -> BigRational {
        self.terms.get(m).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn add_term(&mut self, m: Monomial, c: BigRational) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    fn check_vars(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.n_vars != other.n_vars {
            return Err(PolyError::VarCountMismatch {
                left: self.n_vars,
                right: other.n_vars,
            });
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_vars(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_vars(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -c.clone());
        }
        Ok(out)
    }

    pub fn checked_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_vars(other)?;
        let mut out = Polynomial::zero(self.n_vars);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: &BigRational) -> Polynomial {
        if c.is_zero() {
            return Polynomial::zero(self.n_vars);
        }
        Polynomial {
            n_vars: self.n_vars,
            terms: self.terms.iter().map(|(m, a)| (m.clone(), a * c)).collect(),
        }
    }

    /// Exact power by repeated squaring; `p^0 = 1`.
    pub fn pow(&self, k: u32) -> Polynomial {
        let mut result = Polynomial::one(self.n_vars);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                result = &result * &base;
            }
            k >>= 1;
            if k > 0 {
                base = &base * &base;
            }
        }
        result
    }

    pub fn square(&self) -> Polynomial {
        self * self
    }

    /// Largest total degree of a term.
    pub fn total_degree(&self) -> Result<u64, PolyError> {
        self.terms
            .keys()
            .map(Monomial::degree)
            .max()
            .ok_or(PolyError::ZeroPolynomial)
    }

    /// The common per-block degree vector of all terms.
    pub fn multidegree(&self, grading: &Grading) -> Result<Vec<u64>, PolyError> {
        let mut iter = self.terms.keys();
        let first = iter.next().ok_or(PolyError::ZeroPolynomial)?;
        let deg = grading.block_degrees(first);
        for m in iter {
            if grading.block_degrees(m) != deg {
                return Err(PolyError::NotGraded);
            }
        }
        Ok(deg)
    }

    pub fn evaluate(&self, point: &[BigRational]) -> Result<BigRational, PolyError> {
        if point.len() != self.n_vars {
            return Err(PolyError::PointLength {
                expected: self.n_vars,
                got: point.len(),
            });
        }
        let mut total = BigRational::zero();
        for (m, c) in &self.terms {
            let mut v = c.clone();
            for (x, &e) in point.iter().zip(m.exponents()) {
                if e > 0 {
                    v *= num_traits::pow(x.clone(), e as usize);
                }
            }
            total += v;
        }
        Ok(total)
    }

    /// Floating-point evaluation with coefficients rounded to `f64`.
    pub fn evaluate_f64(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.n_vars);
        self.terms
            .iter()
            .map(|(m, c)| {
                let mut v = rational_to_f64(c);
                for (x, &e) in point.iter().zip(m.exponents()) {
                    if e > 0 {
                        v *= x.powi(e as i32);
                    }
                }
                v
            })
            .sum()
    }

    /// Sum of absolute values of the coefficients.
    pub fn coeff_l1_f64(&self) -> f64 {
        self.terms.values().map(|c| rational_to_f64(&c.abs())).sum()
    }
}

/// Round-to-nearest `f64` view of an exact rational.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        if r.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    })
}

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Polynomial[{}](", self.n_vars)?;
        for (i, (m, c)) in self.terms.iter().rev().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}*{:?}", c, m.exponents())?;
        }
        write!(f, ")")
    }
}

impl<'a> Add<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;

    /// Panics on a variable-count mismatch; see [`Polynomial::checked_add`].
    fn add(self, rhs: &'a Polynomial) -> Polynomial {
        self.checked_add(rhs).expect("polynomial add")
    }
}

impl<'a> Sub<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;

    fn sub(self, rhs: &'a Polynomial) -> Polynomial {
        self.checked_sub(rhs).expect("polynomial sub")
    }
}

impl<'a> Mul<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;

    fn mul(self, rhs: &'a Polynomial) -> Polynomial {
        self.checked_mul(rhs).expect("polynomial mul")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;

    fn neg(self) -> Polynomial {
        Polynomial {
            n_vars: self.n_vars,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Polynomial {
        Polynomial::var(3, 0)
    }
    fn y() -> Polynomial {
        Polynomial::var(3, 1)
    }

    fn mono(e: &[u32]) -> Monomial {
        Monomial::new(e.to_vec())
    }

    fn motzkin() -> Polynomial {
        Polynomial::from_terms(
            3,
            [
                (mono(&[4, 2, 0]), int(1)),
                (mono(&[2, 4, 0]), int(1)),
                (mono(&[0, 0, 6]), int(1)),
                (mono(&[2, 2, 2]), int(-3)),
            ],
        )
    }

    #[test]
    fn add_cancels_terms() {
        let p = &x().square() + &y().square();
        let q = &p + &(-&x().square());
        assert_eq!(q, y().square());
        assert_eq!(&p + &Polynomial::zero(3), p);
        let a = &x().square() - &y().square();
        assert_eq!(&a + &p, x().square().scale(&int(2)));
    }

    #[test]
    fn mul_basic_identities() {
        let p = &(&x() + &y()) * &(&x() - &y());
        assert_eq!(p, &x().square() - &y().square());
        assert_eq!(&p * &Polynomial::one(3), p);
    }

    #[test]
    fn motzkin_times_g_hand_expansion() {
        // (x^2+y^2+z^2) * M expanded by hand:
        // x^6y^2 + 2x^4y^4 + x^2y^6 + x^2z^6 + y^2z^6 + z^8
        //   - 2x^4y^2z^2 - 2x^2y^4z^2 - 3x^2y^2z^4
        let g = Polynomial::sum_of_squared_vars(3, 0..3);
        let prod = &g * &motzkin();
        let expected = Polynomial::from_terms(
            3,
            [
                (mono(&[6, 2, 0]), int(1)),
                (mono(&[4, 4, 0]), int(2)),
                (mono(&[2, 6, 0]), int(1)),
                (mono(&[2, 0, 6]), int(1)),
                (mono(&[0, 2, 6]), int(1)),
                (mono(&[0, 0, 8]), int(1)),
                (mono(&[4, 2, 2]), int(-2)),
                (mono(&[2, 4, 2]), int(-2)),
                (mono(&[2, 2, 4]), int(-3)),
            ],
        );
        assert_eq!(prod, expected);
        assert_eq!(prod.len(), 9);
        assert_eq!(prod.coeff(&mono(&[2, 2, 4])), int(-3));
        assert_eq!(prod.total_degree().unwrap(), 8);
    }

    #[test]
    fn pow_examples() {
        let s = &x() + &y();
        assert_eq!(s.pow(2), &(&x().square() + &(&x() * &y()).scale(&int(2))) + &y().square());
        assert_eq!(s.pow(0), Polynomial::one(3));
        let q = &x().square() + &y().square();
        let expected = Polynomial::from_terms(
            3,
            [
                (mono(&[6, 0, 0]), int(1)),
                (mono(&[4, 2, 0]), int(3)),
                (mono(&[2, 4, 0]), int(3)),
                (mono(&[0, 6, 0]), int(1)),
            ],
        );
        assert_eq!(q.pow(3), expected);
    }

    #[test]
    fn multidegree_examples() {
        let two = Grading::single(2);
        let p = Polynomial::from_terms(2, [(Monomial::new(vec![2, 1]), int(1)), (Monomial::new(vec![0, 3]), int(1))]);
        assert_eq!(p.multidegree(&two).unwrap(), vec![3]);

        let bi = Grading::from_sizes(&[1, 1]).unwrap();
        let q = Polynomial::term(Monomial::new(vec![1, 2]), int(1));
        assert_eq!(q.multidegree(&bi).unwrap(), vec![1, 2]);

        let one = Grading::single(1);
        let r = Polynomial::from_terms(1, [(Monomial::new(vec![2]), int(1)), (Monomial::new(vec![1]), int(1))]);
        assert_eq!(r.multidegree(&one), Err(PolyError::NotGraded));
        assert_eq!(Polynomial::zero(1).multidegree(&one), Err(PolyError::ZeroPolynomial));
        assert_eq!(Polynomial::zero(1).total_degree(), Err(PolyError::ZeroPolynomial));
    }

    #[test]
    fn evaluate_examples() {
        let p = &x().square() - &y().square();
        assert_eq!(p.evaluate(&[int(1), int(1), int(0)]).unwrap(), int(0));
        assert_eq!(motzkin().evaluate(&[int(1), int(1), int(1)]).unwrap(), int(0));
        assert!(matches!(p.evaluate(&[int(1)]), Err(PolyError::PointLength { .. })));
    }

    #[test]
    fn mismatched_vars_error() {
        let a = Polynomial::var(2, 0);
        let b = Polynomial::var(3, 0);
        assert_eq!(
            a.checked_add(&b),
            Err(PolyError::VarCountMismatch { left: 2, right: 3 })
        );
        assert!(a.checked_mul(&b).is_err());
    }

    #[test]
    fn grlex_order() {
        // degree first
        assert!(mono(&[0, 0, 2]) > mono(&[1, 0, 0]));
        // then lex: x^2 > xy > y^2
        assert!(mono(&[2, 0, 0]) > mono(&[1, 1, 0]));
        assert!(mono(&[1, 1, 0]) > mono(&[0, 2, 0]));
    }
}
