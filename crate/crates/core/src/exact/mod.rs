//! Numeric Gram matrices to exact certificates: round, project, factor,
//! extract squares.

pub mod certificate;
pub mod matrix;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::gram::{GramError, GramSystem};
use crate::poly::{rational_to_f64, Polynomial};
use matrix::solve_fraction_free;
pub use matrix::{exact_ldlt, Ldlt, RatMatrix};

pub use certificate::{
    format_certificate, lift_by_g_squared, parse_certificate, verify_certificate, CertBlock, Certificate,
    CertificateError, InvalidReason, Origin, Verdict,
};

/// Denominator bounds tried in order.
pub const DENOMINATOR_BOUNDS: [u64; 4] = [100, 10_000, 100_000_000, 1_000_000_000_000];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExactError {
    #[error("the linear constraint system is inconsistent")]
    Inconsistent,
    #[error("expected {expected} Gram matrices, got {got}")]
    BlockCount { expected: usize, got: usize },
    #[error("Gram matrix for block {block} is {got}x{got}, expected {expected}x{expected}")]
    Dimension { block: usize, expected: usize, got: usize },
    #[error(transparent)]
    Gram(#[from] GramError),
}

/// Best rational approximation of `x` with denominator at most `bound`,
/// from the continued fraction expansion (convergents and the final
/// semiconvergent).
pub fn best_rational(x: &BigRational, bound: &BigInt) -> BigRational {
    assert!(bound >= &BigInt::one(), "denominator bound must be positive");
    if x.denom() <= bound {
        return x.clone();
    }
    let (mut p0, mut q0) = (BigInt::zero(), BigInt::one());
    let (mut p1, mut q1) = (BigInt::one(), BigInt::zero());
    let mut r = x.clone();
    loop {
        let a = r.floor().to_integer();
        let q2 = &a * &q1 + &q0;
        if &q2 > bound {
            let ap = (bound - &q0) / &q1;
            let semi = BigRational::new(&ap * &p1 + &p0, &ap * &q1 + &q0);
            let conv = BigRational::new(p1, q1);
            return if (&semi - x).abs() < (&conv - x).abs() { semi } else { conv };
        }
        let p2 = &a * &p1 + &p0;
        p0 = std::mem::replace(&mut p1, p2);
        q0 = std::mem::replace(&mut q1, q2);
        let frac = &r - BigRational::from_integer(a);
        if frac.is_zero() {
            return BigRational::new(p1, q1);
        }
        r = frac.recip();
    }
}

/// Exact value of a finite double.
pub fn f64_to_rational(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap_or_else(BigRational::zero)
}

/// Symmetrizes `q` and rounds every entry to the best rational with
/// denominator at most `bound`.
pub fn round_to_rational(q: &[Vec<f64>], bound: u64) -> RatMatrix {
    let n = q.len();
    let bound = BigInt::from(bound);
    RatMatrix::from_fn(n, n, |i, j| {
        let v = 0.5 * (q[i][j] + q[j][i]);
        best_rational(&f64_to_rational(v), &bound)
    })
}

/// Frobenius-orthogonal projection onto the affine solution set of a Gram
/// system, over the independent equations.
#[derive(Debug, Clone)]
pub struct Projector<'a> {
    system: &'a GramSystem,
    rows: Vec<usize>,
    gram: RatMatrix,
}

impl<'a> Projector<'a> {
    pub fn new(system: &'a GramSystem) -> Result<Self, ExactError> {
        let rows = system.independent_equations().map_err(|e| match e {
            GramError::Inconsistent => ExactError::Inconsistent,
            other => ExactError::Gram(other),
        })?;
        // ⟨A_k, A_l⟩ with A = c on the diagonal and c/2 off it.
        let half = BigRational::new(1.into(), 2.into());
        let keyed: Vec<std::collections::BTreeMap<(usize, usize, usize), BigRational>> = rows
            .iter()
            .map(|&k| {
                let mut m = std::collections::BTreeMap::new();
                for e in &system.equations[k].entries {
                    *m.entry((e.block, e.row, e.col)).or_insert_with(BigRational::zero) += &e.coeff;
                }
                m
            })
            .collect();
        let gram = RatMatrix::from_fn(rows.len(), rows.len(), |a, b| {
            let (small, large) = if keyed[a].len() <= keyed[b].len() {
                (&keyed[a], &keyed[b])
            } else {
                (&keyed[b], &keyed[a])
            };
            let mut acc = BigRational::zero();
            for (key, c) in small {
                if let Some(c2) = large.get(key) {
                    let prod = c * c2;
                    acc += if key.1 == key.2 { prod } else { prod * &half };
                }
            }
            acc
        });
        Ok(Projector { system, rows, gram })
    }

    pub fn independent_rows(&self) -> &[usize] {
        &self.rows
    }

    fn check_dims(&self, q: &[RatMatrix]) -> Result<(), ExactError> {
        let blocks = &self.system.blocks;
        if q.len() != blocks.len() {
            return Err(ExactError::BlockCount {
                expected: blocks.len(),
                got: q.len(),
            });
        }
        for (bi, (b, m)) in blocks.iter().zip(q).enumerate() {
            let d = if b.active { b.working_dim() } else { 0 };
            if m.rows() != d || m.cols() != d {
                return Err(ExactError::Dimension {
                    block: bi,
                    expected: d,
                    got: m.rows(),
                });
            }
        }
        Ok(())
    }

    /// Residual `b_k − ⟨A_k, Q⟩` of every independent equation.
    pub fn residual(&self, q: &[RatMatrix]) -> Vec<BigRational> {
        self.rows
            .iter()
            .map(|&k| {
                let eq = &self.system.equations[k];
                let mut r = eq.rhs.clone();
                for e in &eq.entries {
                    r -= &e.coeff * &q[e.block][(e.row, e.col)];
                }
                r
            })
            .collect()
    }

    pub fn project(&self, q: &[RatMatrix]) -> Result<Vec<RatMatrix>, ExactError> {
        self.check_dims(q)?;
        let r = self.residual(q);
        let mut out = q.to_vec();
        if r.iter().all(Zero::is_zero) {
            return Ok(out);
        }
        let y = solve_fraction_free(&self.gram, &r).ok_or(ExactError::Inconsistent)?;
        let half = BigRational::new(1.into(), 2.into());
        for (yk, &k) in y.iter().zip(&self.rows) {
            if yk.is_zero() {
                continue;
            }
            for e in &self.system.equations[k].entries {
                if e.row == e.col {
                    out[e.block][(e.row, e.row)] += yk * &e.coeff;
                } else {
                    let delta = yk * &e.coeff * &half;
                    out[e.block][(e.row, e.col)] += &delta;
                    out[e.block][(e.col, e.row)] += delta;
                }
            }
        }
        Ok(out)
    }
}

/// Projects `q` onto the solution set of `system`.
pub fn project_to_constraints(q: &[RatMatrix], system: &GramSystem) -> Result<Vec<RatMatrix>, ExactError> {
    Projector::new(system)?.project(q)
}

/// Weighted squares `d_j·(Σ_k L_kj·basis_k)²`, zero weights dropped. Each
/// square is scaled so that its graded-lex smallest term has coefficient 1.
pub fn extract_sos(l: &RatMatrix, d: &[BigRational], basis: &[Polynomial]) -> Vec<(BigRational, Polynomial)> {
    let n_vars = basis.first().map(Polynomial::n_vars).unwrap_or(0);
    let mut out = Vec::new();
    for (j, dj) in d.iter().enumerate() {
        if dj.is_zero() {
            continue;
        }
        let mut p = Polynomial::zero(n_vars);
        for (k, b) in basis.iter().enumerate() {
            if !l[(k, j)].is_zero() {
                p = &p + &b.scale(&l[(k, j)]);
            }
        }
        if p.is_zero() {
            continue;
        }
        let (w, p) = normalize_square(dj, &p);
        out.push((w, p));
    }
    out
}

/// `w·p² = (w·c²)·(p/c)²` with `c` the coefficient of the smallest term.
pub fn normalize_square(w: &BigRational, p: &Polynomial) -> (BigRational, Polynomial) {
    let c = p.terms().next().map(|(_, c)| c.clone()).unwrap_or_else(BigRational::one);
    (w * &c * &c, p.scale(&c.recip()))
}

/// One rounding attempt at a given denominator bound.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundingAttempt {
    pub bound: u64,
    /// Frobenius norm of the projection correction.
    pub correction: f64,
    /// First block whose projected matrix failed LDLᵀ, if any.
    pub indefinite_block: Option<usize>,
}

/// Exact PSD Gram matrices with their factorizations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactGram {
    pub matrices: Vec<RatMatrix>,
    /// Per block `(L, d)`; empty for inactive blocks.
    pub factors: Vec<(RatMatrix, Vec<BigRational>)>,
    pub bound: u64,
}

/// Outcome of the rounding escalation.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundingReport {
    pub attempts: Vec<RoundingAttempt>,
    pub result: Option<ExactGram>,
    /// The correction outgrew half the margin at a large bound.
    pub hopeless: bool,
}

/// Rounds numeric working Gram matrices at escalating denominator bounds,
/// projects them exactly onto the constraints and keeps the first result
/// that passes exact LDLᵀ in every block.
pub fn round_and_certify(
    system: &GramSystem,
    numeric: &[Vec<Vec<f64>>],
    margin: f64,
    bounds: &[u64],
) -> Result<RoundingReport, ExactError> {
    let projector = Projector::new(system)?;
    let mut attempts = Vec::new();
    for &bound in bounds {
        let rounded: Vec<RatMatrix> = numeric.iter().map(|q| round_to_rational(q, bound)).collect();
        let projected = projector.project(&rounded)?;
        let correction = projected
            .iter()
            .zip(&rounded)
            .map(|(a, b)| rational_to_f64(&a.sub(b).frobenius_sq()))
            .sum::<f64>()
            .sqrt();
        let mut factors = Vec::with_capacity(projected.len());
        let mut indefinite_block = None;
        for (bi, q) in projected.iter().enumerate() {
            match exact_ldlt(q) {
                Ldlt::Factor { l, d } => factors.push((l, d)),
                Ldlt::Indefinite { .. } => {
                    indefinite_block = Some(bi);
                    break;
                }
            }
        }
        attempts.push(RoundingAttempt {
            bound,
            correction,
            indefinite_block,
        });
        if indefinite_block.is_none() {
            return Ok(RoundingReport {
                attempts,
                result: Some(ExactGram {
                    matrices: projected,
                    factors,
                    bound,
                }),
                hopeless: false,
            });
        }
        if bound >= 100_000_000 && correction > margin / 2.0 {
            return Ok(RoundingReport {
                attempts,
                result: None,
                hopeless: true,
            });
        }
    }
    Ok(RoundingReport {
        attempts,
        result: None,
        hopeless: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gram::build_gram_system;
    use crate::parse::parse_polynomial_in;
    use crate::poly::{int, rat, Grading, Monomial};

    #[test]
    fn rounding_examples() {
        let b = |n: u64| BigInt::from(n);
        assert_eq!(best_rational(&f64_to_rational(0.5), &b(10)), rat(1, 2));
        assert_eq!(best_rational(&f64_to_rational(0.3333333333), &b(100)), rat(1, 3));
        assert_eq!(best_rational(&f64_to_rational(std::f64::consts::PI), &b(1000)), rat(355, 113));
        assert_eq!(best_rational(&f64_to_rational(-2.75), &b(3)), rat(-8, 3));
        assert_eq!(best_rational(&f64_to_rational(7.0), &b(1)), int(7));
    }

    #[test]
    fn best_rational_matches_brute_force() {
        let xs = [0.1234567, std::f64::consts::E, -0.41421356, 0.999, 1e-3, 5.5];
        for &x in &xs {
            let exact = f64_to_rational(x);
            for bound in [1u64, 7, 50, 300] {
                let got = best_rational(&exact, &BigInt::from(bound));
                let mut best_err = f64::INFINITY;
                for q in 1..=bound as i64 {
                    let p = (x * q as f64).round() as i64;
                    best_err = best_err.min((x - p as f64 / q as f64).abs());
                }
                let err = (rational_to_f64(&got) - x).abs();
                assert!(got.denom() <= &BigInt::from(bound));
                assert!(err <= best_err + 1e-15, "x={x} bound={bound}: {got} err {err} vs {best_err}");
            }
        }
    }

    fn worked() -> GramSystem {
        let v = ["x", "y"];
        let f = parse_polynomial_in("x^2 - 1/2*y^2", &v).unwrap();
        let g = parse_polynomial_in("x^2 + y^2", &v).unwrap();
        let h = parse_polynomial_in("x^2 - y^2", &v).unwrap();
        build_gram_system(&f, &g, 0, &[h], &Grading::single(2)).unwrap()
    }

    #[test]
    fn projection_fixes_feasible_point() {
        let sys = worked();
        let q = vec![
            RatMatrix::from_rows(vec![vec![rat(1, 4), int(0)], vec![int(0), rat(1, 4)]]),
            RatMatrix::from_rows(vec![vec![rat(3, 4)]]),
        ];
        assert_eq!(project_to_constraints(&q, &sys).unwrap(), q);
    }

    #[test]
    fn projection_single_constraint() {
        // x^2 + y^2 with basis {x, y}: Q11 = 1, Q22 = 1, 2 Q12 = 0
        let v = ["x", "y"];
        let f = parse_polynomial_in("x^2 + y^2", &v).unwrap();
        let g = Polynomial::one(2);
        let sys = build_gram_system(&f, &g, 0, &[], &Grading::single(2)).unwrap();
        let q = vec![RatMatrix::from_rows(vec![vec![rat(99, 100), rat(1, 10)], vec![rat(1, 10), int(1)]])];
        let p = project_to_constraints(&q, &sys).unwrap();
        assert_eq!(p[0], RatMatrix::identity(2));
    }

    #[test]
    fn projection_reaches_constraint_set() {
        let sys = worked();
        let q = vec![
            RatMatrix::from_rows(vec![vec![rat(26, 100), rat(1, 100)], vec![rat(1, 100), rat(24, 100)]]),
            RatMatrix::from_rows(vec![vec![rat(76, 100)]]),
        ];
        let p = project_to_constraints(&q, &sys).unwrap();
        // basis is ascending, so index 1 of block 0 is x
        assert_eq!(&p[0][(1, 1)] + &p[1][(0, 0)], int(1));
        assert_eq!(sys.reconstruct(&p).unwrap(), sys.target);
    }

    #[test]
    fn extraction_examples() {
        let v = ["x", "y"];
        let x = parse_polynomial_in("x", &v).unwrap();
        let y = parse_polynomial_in("y", &v).unwrap();
        let basis = [x.clone(), y.clone()];
        let sq = extract_sos(&RatMatrix::identity(2), &[int(1), int(1)], &basis);
        assert_eq!(sq, vec![(int(1), x.clone()), (int(1), y.clone())]);

        let ones = RatMatrix::from_rows(vec![vec![int(1), int(1)], vec![int(1), int(1)]]);
        let Ldlt::Factor { l, d } = exact_ldlt(&ones) else { panic!() };
        let sq = extract_sos(&l, &d, &basis);
        assert_eq!(sq, vec![(int(1), &x + &y)]);

        let quarter = RatMatrix::from_rows(vec![vec![rat(1, 4), int(0)], vec![int(0), rat(1, 4)]]);
        let Ldlt::Factor { l, d } = exact_ldlt(&quarter) else { panic!() };
        assert_eq!(extract_sos(&l, &d, &basis), vec![(rat(1, 4), x), (rat(1, 4), y)]);
    }

    #[test]
    fn normalization_moves_scale_into_weight() {
        let v = ["x", "y"];
        let p = parse_polynomial_in("2*x + 4*y", &v).unwrap();
        let (w, q) = normalize_square(&rat(1, 3), &p);
        assert_eq!(q.coeff(&Monomial::new(vec![0, 1])), int(1));
        assert_eq!(w, rat(16, 3));
        assert_eq!(q.square().scale(&w), p.square().scale(&rat(1, 3)));
    }

    #[test]
    fn escalation_certifies_worked_example() {
        let sys = worked();
        let numeric = vec![vec![vec![0.2500001, 1e-9], vec![1e-9, 0.2499999]], vec![vec![0.75000003]]];
        let rep = round_and_certify(&sys, &numeric, 0.25, &DENOMINATOR_BOUNDS).unwrap();
        let res = rep.result.expect("certified");
        assert_eq!(res.bound, 100);
        assert_eq!(sys.reconstruct(&res.matrices).unwrap(), sys.target);
    }
}
