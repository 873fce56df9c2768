//! Gram-matrix parameterization of `f*g^N - sum_e s_e*h^e = 0`.
//!
//! Every sum of squares `s_e` is written as `b_eᵀ Q_e b_e` for a vector of
//! basis monomials `b_e`, and matching coefficients monomial by monomial gives
//! an affine system in the entries of the `Q_e`. Blocks may additionally be
//! restricted to a face `Q_e = Pᵀ Q'_e P` cut out by known real zeros; the
//! equations are then stated in the entries of `Q'_e`.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::exact::matrix::{null_space, RatMatrix};
use crate::parse::MAX_CONSTRAINTS;
use crate::poly::{Grading, Monomial, PolyError, Polynomial};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GramError {
    #[error("{0} constraints exceed the supported maximum of {MAX_CONSTRAINTS}")]
    TooManyConstraints(usize),
    #[error("no preordering product has a degree-compatible square part")]
    ParityInfeasible,
    #[error("target monomial {0:?} is not achievable by any Gram block")]
    SupportInfeasible(Vec<u32>),
    #[error("coefficient-matching equations are inconsistent")]
    Inconsistent,
    #[error("inputs are not graded for a multi-block grading: {0}")]
    NotGraded(PolyError),
    #[error("matrix for block {block} has dimension {got}, expected {expected}")]
    DimensionMismatch { block: usize, expected: usize, got: usize },
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// One preordering product `h^e` with its square-part basis.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBlock {
    pub product_index: Vec<bool>,
    pub multiplier: Polynomial,
    pub basis: Vec<Monomial>,
    pub active: bool,
    /// Rows span the allowed face: `Q = Pᵀ Q' P`. `None` means `P = I`.
    pub reduction: Option<RatMatrix>,
}

impl GramBlock {
    /// Size of the matrix variable actually solved for.
    pub fn working_dim(&self) -> usize {
        match &self.reduction {
            Some(p) => p.rows(),
            None => self.basis.len(),
        }
    }

    /// The polynomials paired with the working Gram matrix: `P·b`.
    pub fn working_basis(&self, n_vars: usize) -> Vec<Polynomial> {
        let monos: Vec<Polynomial> = self
            .basis
            .iter()
            .map(|m| Polynomial::term(m.clone(), BigRational::one()))
            .collect();
        match &self.reduction {
            None => monos,
            Some(p) => (0..p.rows())
                .map(|a| {
                    Polynomial::from_terms(
                        n_vars,
                        self.basis
                            .iter()
                            .zip(p.row(a))
                            .filter(|(_, c)| !c.is_zero())
                            .map(|(m, c)| (m.clone(), c.clone())),
                    )
                })
                .collect(),
        }
    }

    /// Expands a working Gram matrix to the full monomial basis.
    pub fn full_gram(&self, working: &RatMatrix) -> RatMatrix {
        match &self.reduction {
            None => working.clone(),
            Some(p) => p.transpose().mul(working).mul(p),
        }
    }
}

/// Coefficient of one unique Gram entry `Q_{row,col}` (row <= col) in an
/// equation. Off-diagonal coefficients already include the factor 2.
#[derive(Debug, Clone, PartialEq)]
pub struct GramEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub coeff: BigRational,
}

/// `sum entries = rhs`, the coefficient of `monomial` on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub monomial: Monomial,
    pub entries: Vec<GramEntry>,
    pub rhs: BigRational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramSystem {
    pub target: Polynomial,
    pub blocks: Vec<GramBlock>,
    pub equations: Vec<Equation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GramOptions {
    /// Diagonal-consistency pruning of unconstrained bases.
    pub prune: bool,
}

impl Default for GramOptions {
    fn default() -> Self {
        GramOptions { prune: true }
    }
}

/// All monomials in `n_vars` variables whose degree in each grading block is
/// `half_degrees[block]`, graded-lex sorted.
pub fn graded_monomials(n_vars: usize, grading: &Grading, half_degrees: &[u64]) -> Vec<Monomial> {
    let mut acc: Vec<Vec<u32>> = vec![vec![0; n_vars]];
    for (range, &d) in grading.blocks().iter().zip(half_degrees) {
        let mut next = Vec::new();
        for prefix in &acc {
            let mut cur = prefix.clone();
            fill_exact_degree(range.start, range.end, d as u32, &mut cur, &mut next);
        }
        acc = next;
    }
    let mut out: Vec<Monomial> = acc.into_iter().map(Monomial::new).collect();
    out.sort();
    out
}

fn fill_exact_degree(var: usize, end: usize, remaining: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if var + 1 == end {
        cur[var] = remaining;
        out.push(cur.clone());
        cur[var] = 0;
        return;
    }
    if var == end {
        if remaining == 0 {
            out.push(cur.clone());
        }
        return;
    }
    for e in 0..=remaining {
        cur[var] = e;
        fill_exact_degree(var + 1, end, remaining - e, cur, out);
    }
    cur[var] = 0;
}

/// All monomials of total degree at most `max_degree`, graded-lex sorted.
pub fn bounded_monomials(n_vars: usize, max_degree: u64) -> Vec<Monomial> {
    let single = Grading::single(n_vars);
    let mut out: Vec<Monomial> = (0..=max_degree)
        .flat_map(|d| graded_monomials(n_vars, &single, &[d]))
        .collect();
    out.sort();
    out
}

/// Removes basis monomials whose square cannot appear: `2b` is absent from
/// `support` and no other pair of remaining monomials sums to `2b`. Repeats
/// until nothing changes.
pub fn prune_basis(mut basis: Vec<Monomial>, support: &BTreeSet<Monomial>) -> Vec<Monomial> {
    loop {
        let present: BTreeSet<Monomial> = basis.iter().cloned().collect();
        let keep: Vec<Monomial> = basis
            .iter()
            .filter(|b| {
                let sq = b.square();
                if support.contains(&sq) {
                    return true;
                }
                basis.iter().any(|bi| {
                    if bi == *b {
                        return false;
                    }
                    let Some(rest) = subtract(&sq, bi) else {
                        return false;
                    };
                    rest != **b && present.contains(&rest)
                })
            })
            .cloned()
            .collect();
        if keep.len() == basis.len() {
            return keep;
        }
        basis = keep;
    }
}

fn subtract(a: &Monomial, b: &Monomial) -> Option<Monomial> {
    a.exponents()
        .iter()
        .zip(b.exponents())
        .map(|(x, y)| x.checked_sub(*y))
        .collect::<Option<Vec<u32>>>()
        .map(Monomial::new)
}

/// Graded basis for a square part of multidegree `target_multidegree`
/// (every entry even), pruned against `support_hint` when given.
pub fn monomial_basis(
    n_vars: usize,
    grading: &Grading,
    target_multidegree: &[u64],
    support_hint: Option<&BTreeSet<Monomial>>,
) -> Vec<Monomial> {
    let half: Vec<u64> = target_multidegree.iter().map(|d| d / 2).collect();
    let basis = graded_monomials(n_vars, grading, &half);
    match support_hint {
        Some(s) => prune_basis(basis, s),
        None => basis,
    }
}

/// Basis of all monomials of degree at most `max_degree`, pruned against
/// `support_hint` when given. Used for inhomogeneous inputs.
pub fn bounded_monomial_basis(
    n_vars: usize,
    max_degree: u64,
    support_hint: Option<&BTreeSet<Monomial>>,
) -> Vec<Monomial> {
    let basis = bounded_monomials(n_vars, max_degree);
    match support_hint {
        Some(s) => prune_basis(basis, s),
        None => basis,
    }
}

fn product_indices(r: usize) -> Vec<Vec<bool>> {
    (0..1usize << r)
        .map(|mask| (0..r).map(|i| mask >> i & 1 == 1).collect())
        .collect()
}

/// Whether every input is graded for `grading`; errors if a multi-block
/// grading is requested for ungraded inputs.
pub fn uses_graded_bases(polys: &[&Polynomial], grading: &Grading) -> Result<bool, GramError> {
    for p in polys {
        match p.multidegree(grading) {
            Ok(_) | Err(PolyError::ZeroPolynomial) => {}
            Err(e) if grading.n_blocks() > 1 => return Err(GramError::NotGraded(e)),
            Err(_) => return Ok(false),
        }
    }
    Ok(true)
}

/// Assembles the system for `f*g^N = sum_e s_e * h^e`.
pub fn build_gram_system(
    f: &Polynomial,
    g: &Polynomial,
    n: u32,
    constraints: &[Polynomial],
    grading: &Grading,
) -> Result<GramSystem, GramError> {
    build_gram_system_with(f, g, n, constraints, grading, GramOptions::default())
}

pub fn build_gram_system_with(
    f: &Polynomial,
    g: &Polynomial,
    n: u32,
    constraints: &[Polynomial],
    grading: &Grading,
    opts: GramOptions,
) -> Result<GramSystem, GramError> {
    let target = f * &g.pow(n);
    let mut all: Vec<&Polynomial> = vec![f, g];
    all.extend(constraints);
    let graded = uses_graded_bases(&all, grading)?;
    build_for_target(target, &[], constraints, grading, graded, opts)
}

/// Assembles the system for an explicit target. Monomials of `extra_support`
/// count as potentially nonzero for pruning and achievability (used when the
/// target carries a free parameter).
pub fn build_for_target(
    target: Polynomial,
    extra_support: &[Polynomial],
    constraints: &[Polynomial],
    grading: &Grading,
    graded: bool,
    opts: GramOptions,
) -> Result<GramSystem, GramError> {
    let r = constraints.len();
    if r > MAX_CONSTRAINTS {
        return Err(GramError::TooManyConstraints(r));
    }
    let n_vars = target.n_vars();
    let mut support: BTreeSet<Monomial> = target.monomials().cloned().collect();
    for p in extra_support {
        support.extend(p.monomials().cloned());
    }
    if support.is_empty() {
        // The zero target is the empty sum of squares.
        return Ok(GramSystem {
            target,
            blocks: Vec::new(),
            equations: Vec::new(),
        });
    }
    let target_deg: Vec<u64> = if graded {
        let any = support.iter().next().expect("nonempty support");
        grading.block_degrees(any)
    } else {
        vec![support.iter().map(Monomial::degree).max().unwrap_or(0)]
    };
    let prune_hint = (opts.prune && r == 0).then_some(&support);

    let mut blocks = Vec::with_capacity(1 << r);
    for e in product_indices(r) {
        let multiplier = e
            .iter()
            .zip(constraints)
            .filter(|(on, _)| **on)
            .fold(Polynomial::one(n_vars), |acc, (_, h)| &acc * h);
        let basis = if multiplier.is_zero() {
            None
        } else if graded {
            let mdeg = multiplier.multidegree(grading)?;
            let feasible = target_deg
                .iter()
                .zip(&mdeg)
                .all(|(t, m)| t >= m && (t - m) % 2 == 0);
            feasible.then(|| {
                let rest: Vec<u64> = target_deg.iter().zip(&mdeg).map(|(t, m)| t - m).collect();
                monomial_basis(n_vars, grading, &rest, prune_hint)
            })
        } else {
            let mdeg = multiplier.total_degree()?;
            (target_deg[0] >= mdeg)
                .then(|| bounded_monomial_basis(n_vars, (target_deg[0] - mdeg).div_ceil(2), prune_hint))
        };
        let (basis, active) = match basis {
            Some(b) if !b.is_empty() => (b, true),
            _ => (Vec::new(), false),
        };
        blocks.push(GramBlock {
            product_index: e,
            multiplier,
            basis,
            active,
            reduction: None,
        });
    }
    if blocks.iter().all(|b| !b.active) {
        return Err(GramError::ParityInfeasible);
    }

    let mut rows: BTreeMap<Monomial, Vec<GramEntry>> = BTreeMap::new();
    for (bi, block) in blocks.iter().enumerate().filter(|(_, b)| b.active) {
        for i in 0..block.basis.len() {
            for j in i..block.basis.len() {
                let bij = block.basis[i].mul(&block.basis[j]);
                let two = if i == j { BigRational::one() } else { BigRational::from_integer(2.into()) };
                for (alpha, c) in block.multiplier.terms() {
                    rows.entry(bij.mul(alpha)).or_default().push(GramEntry {
                        block: bi,
                        row: i,
                        col: j,
                        coeff: c * &two,
                    });
                }
            }
        }
    }
    for m in &support {
        if !rows.contains_key(m) {
            return Err(GramError::SupportInfeasible(m.exponents().to_vec()));
        }
    }
    let equations = rows
        .into_iter()
        .map(|(monomial, entries)| {
            let rhs = target.coeff(&monomial);
            Equation {
                monomial,
                entries,
                rhs,
            }
        })
        .collect();
    Ok(GramSystem {
        target,
        blocks,
        equations,
    })
}

impl GramSystem {
    pub fn n_vars(&self) -> usize {
        self.target.n_vars()
    }

    pub fn active_blocks(&self) -> impl Iterator<Item = (usize, &GramBlock)> {
        self.blocks.iter().enumerate().filter(|(_, b)| b.active)
    }

    /// Column index of every unique working entry `(block, row <= col)`.
    pub fn variable_index(&self) -> BTreeMap<(usize, usize, usize), usize> {
        let mut idx = BTreeMap::new();
        for (bi, b) in self.active_blocks() {
            let d = b.working_dim();
            for i in 0..d {
                for j in i..d {
                    let k = idx.len();
                    idx.insert((bi, i, j), k);
                }
            }
        }
        idx
    }

    /// Indices of a maximal linearly independent subset of the equations,
    /// found by exact sparse elimination. Errors if a dependent equation
    /// contradicts the others.
    pub fn independent_equations(&self) -> Result<Vec<usize>, GramError> {
        let idx = self.variable_index();
        let mut pivots: BTreeMap<usize, (BTreeMap<usize, BigRational>, BigRational)> = BTreeMap::new();
        let mut keep = Vec::new();
        for (k, eq) in self.equations.iter().enumerate() {
            let mut row: BTreeMap<usize, BigRational> = BTreeMap::new();
            for e in &eq.entries {
                let col = idx[&(e.block, e.row, e.col)];
                let v = row.entry(col).or_insert_with(BigRational::zero);
                *v += &e.coeff;
            }
            row.retain(|_, v| !v.is_zero());
            let mut rhs = eq.rhs.clone();
            let mut search_from = 0;
            let new_pivot = loop {
                let Some((&col, _)) = row.range(search_from..).next() else {
                    break None;
                };
                match pivots.get(&col) {
                    None => break Some(col),
                    Some((prow, prhs)) => {
                        let factor = &row[&col] / &prow[&col];
                        for (c, v) in prow {
                            let e = row.entry(*c).or_insert_with(BigRational::zero);
                            *e -= &factor * v;
                        }
                        rhs -= &factor * prhs;
                        row.retain(|_, v| !v.is_zero());
                        search_from = col + 1;
                    }
                }
            };
            match new_pivot {
                Some(col) => {
                    pivots.insert(col, (row, rhs));
                    keep.push(k);
                }
                None if rhs.is_zero() => {}
                None => return Err(GramError::Inconsistent),
            }
        }
        Ok(keep)
    }

    /// `sum_e (b'ᵀ Q'_e b')·h^e` for working matrices indexed like `blocks`
    /// (inactive blocks take a 0×0 matrix).
    pub fn reconstruct(&self, matrices: &[RatMatrix]) -> Result<Polynomial, GramError> {
        if matrices.len() != self.blocks.len() {
            return Err(GramError::DimensionMismatch {
                block: matrices.len(),
                expected: self.blocks.len(),
                got: matrices.len(),
            });
        }
        let n = self.n_vars();
        let mut total = Polynomial::zero(n);
        for (bi, block) in self.blocks.iter().enumerate() {
            let q = &matrices[bi];
            let d = if block.active { block.working_dim() } else { 0 };
            if q.rows() != d || q.cols() != d {
                return Err(GramError::DimensionMismatch {
                    block: bi,
                    expected: d,
                    got: q.rows(),
                });
            }
            if d == 0 {
                continue;
            }
            let wb = block.working_basis(n);
            let mut s = Polynomial::zero(n);
            for i in 0..d {
                for j in 0..d {
                    if !q[(i, j)].is_zero() {
                        s = &s + &(&wb[i] * &wb[j]).scale(&q[(i, j)]);
                    }
                }
            }
            total = &total + &(&s * &block.multiplier);
        }
        Ok(total)
    }

    /// Restricts each block to Gram matrices annihilating the monomial vector
    /// of every zero `ξ` of the target with `h^e(ξ) > 0`.
    ///
    /// If `target(ξ) = 0` and every term `s_e(ξ)·h^e(ξ)` is nonnegative, each
    /// term vanishes, so `b_e(ξ)ᵀ Q_e b_e(ξ) = 0` and PSD forces `Q_e b_e(ξ) = 0`.
    /// Points that are not zeros of the target, or violate some `h_i >= 0`,
    /// are ignored. Returns `None` if no block changes.
    pub fn restrict_to_zeros(&self, zeros: &[Vec<BigRational>], constraints: &[Polynomial]) -> Option<GramSystem> {
        assert!(
            self.blocks.iter().all(|b| b.reduction.is_none()),
            "restricting an already restricted system"
        );
        let n = self.n_vars();
        let usable: Vec<&Vec<BigRational>> = zeros
            .iter()
            .filter(|z| z.len() == n && z.iter().any(|c| !c.is_zero()))
            .filter(|z| self.target.evaluate(z).is_ok_and(|v| v.is_zero()))
            .filter(|z| {
                constraints
                    .iter()
                    .all(|h| h.evaluate(z).is_ok_and(|v| !v.is_negative()))
            })
            .collect();
        if usable.is_empty() {
            return None;
        }
        let mut changed = false;
        let mut blocks = self.blocks.clone();
        for block in blocks.iter_mut().filter(|b| b.active) {
            let rows: Vec<Vec<BigRational>> = usable
                .iter()
                .filter(|z| block.multiplier.evaluate(z).is_ok_and(|v| v.is_positive()))
                .map(|z| {
                    block
                        .basis
                        .iter()
                        .map(|m| {
                            Polynomial::term(m.clone(), BigRational::one())
                                .evaluate(z)
                                .expect("point length checked")
                        })
                        .collect()
                })
                .collect();
            if rows.is_empty() {
                continue;
            }
            let p = null_space(&RatMatrix::from_rows(rows));
            if p.rows() < block.basis.len() {
                changed = true;
                block.reduction = Some(p);
            }
        }
        if !changed {
            return None;
        }
        let equations = self
            .equations
            .iter()
            .map(|eq| Equation {
                monomial: eq.monomial.clone(),
                entries: restrict_entries(&eq.entries, &blocks),
                rhs: eq.rhs.clone(),
            })
            .collect();
        Some(GramSystem {
            target: self.target.clone(),
            blocks,
            equations,
        })
    }
}

fn restrict_entries(entries: &[GramEntry], blocks: &[GramBlock]) -> Vec<GramEntry> {
    let mut out: BTreeMap<(usize, usize, usize), BigRational> = BTreeMap::new();
    for e in entries {
        let block = &blocks[e.block];
        let Some(p) = &block.reduction else {
            *out.entry((e.block, e.row, e.col)).or_insert_with(BigRational::zero) += &e.coeff;
            continue;
        };
        // Q_ij = sum_a P_ai P_aj Q'_aa + sum_{a<b} (P_ai P_bj + P_bi P_aj) Q'_ab
        let (i, j) = (e.row, e.col);
        let k = p.rows();
        for a in 0..k {
            for b in a..k {
                let w = if a == b {
                    &p[(a, i)] * &p[(a, j)]
                } else {
                    &p[(a, i)] * &p[(b, j)] + &p[(b, i)] * &p[(a, j)]
                };
                if !w.is_zero() {
                    *out.entry((e.block, a, b)).or_insert_with(BigRational::zero) += &e.coeff * w;
                }
            }
        }
    }
    out.into_iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|((block, row, col), coeff)| GramEntry { block, row, col, coeff })
        .collect()
}
