//! Dense primal-dual interior-point solver for block-diagonal SDPs with free
//! scalar variables.
//!
//! Primal: maximize `d·u` subject to `⟨A_k, X⟩ + c_k·u = b_k`, `X ⪰ 0`.
//! Dual: minimize `b·y` subject to `S = Σ y_k A_k ⪰ 0`, `Cᵀy = d`.

pub mod dump;
pub mod eigen;

pub use eigen::{min_eigenvalue, symmetric_eigenvalues, EigenError};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// One upper-triangle entry of a symmetric constraint matrix: `A[row][col] =
/// A[col][row] = value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl SymEntry {
    pub fn new(block: usize, row: usize, col: usize, value: f64) -> Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        SymEntry {
            block,
            row,
            col,
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpConstraint {
    pub entries: Vec<SymEntry>,
    /// Coefficients of the free variables, length `n_free`.
    pub free: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub block_dims: Vec<usize>,
    pub n_free: usize,
    /// Index of the free variable being maximized.
    pub objective: usize,
    pub constraints: Vec<SdpConstraint>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpError {
    #[error("invalid SDP problem: {0}")]
    Invalid(String),
}

impl SdpProblem {
    /// Margin form of a Gram feasibility problem: the unknown `Q` is written as
    /// `X + t·I`, so each row `⟨A_k, Q⟩ = b_k` becomes `⟨A_k, X⟩ + t·tr(A_k) = b_k`
    /// and `t` is maximized.
    pub fn margin(block_dims: Vec<usize>, rows: Vec<(Vec<SymEntry>, f64)>) -> Self {
        let constraints = rows
            .into_iter()
            .map(|(entries, rhs)| {
                let trace = entries
                    .iter()
                    .filter(|e| e.row == e.col)
                    .map(|e| e.value)
                    .sum::<f64>()
                    + 0.0; // an empty float sum is -0.0
                SdpConstraint {
                    entries,
                    free: vec![trace],
                    rhs,
                }
            })
            .collect();
        SdpProblem {
            block_dims,
            n_free: 1,
            objective: 0,
            constraints,
        }
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        if self.n_free == 0 || self.objective >= self.n_free {
            return Err(SdpError::Invalid(format!(
                "objective index {} with {} free variables",
                self.objective, self.n_free
            )));
        }
        for (k, c) in self.constraints.iter().enumerate() {
            if c.free.len() != self.n_free {
                return Err(SdpError::Invalid(format!(
                    "constraint {k} has {} free coefficients, expected {}",
                    c.free.len(),
                    self.n_free
                )));
            }
            if !c.rhs.is_finite() || c.free.iter().any(|v| !v.is_finite()) {
                return Err(SdpError::Invalid(format!("constraint {k} is not finite")));
            }
            for e in &c.entries {
                let Some(&dim) = self.block_dims.get(e.block) else {
                    return Err(SdpError::Invalid(format!(
                        "constraint {k} references block {}",
                        e.block
                    )));
                };
                if e.row > e.col || e.col >= dim || !e.value.is_finite() {
                    return Err(SdpError::Invalid(format!(
                        "constraint {k} has bad entry ({}, {}, {}) in block of size {dim}",
                        e.row, e.col, e.value
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SdpStatus {
    MarginFeasible,
    MarginNegative,
    /// Converged with `|t*| ≤ 10·tol`; left to the caller.
    Borderline,
    MaxIterations,
    NumericalFailure,
}

impl SdpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SdpStatus::MarginFeasible => "MarginFeasible",
            SdpStatus::MarginNegative => "MarginNegative",
            SdpStatus::Borderline => "Borderline",
            SdpStatus::MaxIterations => "MaxIterations",
            SdpStatus::NumericalFailure => "NumericalFailure",
        }
    }

    pub fn converged(self) -> bool {
        matches!(
            self,
            SdpStatus::MarginFeasible | SdpStatus::MarginNegative | SdpStatus::Borderline
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `⟨X, S⟩`.
    pub complementarity: f64,
    pub relative_gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub step_primal: f64,
    pub step_dual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    /// Optimal value of the designated free variable.
    pub t_star: f64,
    pub x: Vec<DMatrix<f64>>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub relative_gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub history: Vec<IterRecord>,
}

impl SdpSolution {
    /// `X + t*·I` per block: the Gram matrices of a margin problem.
    pub fn shifted_blocks(&self) -> Vec<DMatrix<f64>> {
        self.x
            .iter()
            .map(|b| {
                let n = b.nrows();
                b + DMatrix::identity(n, n) * self.t_star
            })
            .collect()
    }
}

const STEP_FRACTION: f64 = 0.98;

/// Constraint data with rows normalized to unit norm.
struct Operator<'a> {
    dims: &'a [usize],
    rows: Vec<Vec<SymEntry>>,
    /// Per block: the constraints touching it and their entries there.
    by_block: Vec<Vec<(usize, Vec<SymEntry>)>>,
    cu: DMatrix<f64>,
    b: DVector<f64>,
    scale: Vec<f64>,
}

impl<'a> Operator<'a> {
    fn new(p: &'a SdpProblem) -> Self {
        let m = p.constraints.len();
        let mut rows = Vec::with_capacity(m);
        let mut cu = DMatrix::zeros(m, p.n_free);
        let mut b = DVector::zeros(m);
        let mut scale = Vec::with_capacity(m);
        for (k, c) in p.constraints.iter().enumerate() {
            let mut norm_sq: f64 = c.free.iter().map(|v| v * v).sum();
            for e in &c.entries {
                let w = if e.row == e.col { 1.0 } else { 2.0 };
                norm_sq += w * e.value * e.value;
            }
            let s = if norm_sq > 0.0 { 1.0 / norm_sq.sqrt() } else { 1.0 };
            scale.push(s);
            rows.push(
                c.entries
                    .iter()
                    .map(|e| SymEntry {
                        value: e.value * s,
                        ..*e
                    })
                    .collect::<Vec<_>>(),
            );
            for (j, v) in c.free.iter().enumerate() {
                cu[(k, j)] = v * s;
            }
            b[k] = c.rhs * s;
        }
        let mut by_block: Vec<Vec<(usize, Vec<SymEntry>)>> = vec![Vec::new(); p.block_dims.len()];
        for (k, row) in rows.iter().enumerate() {
            for blk in 0..p.block_dims.len() {
                let part: Vec<SymEntry> = row.iter().copied().filter(|e| e.block == blk).collect();
                if !part.is_empty() {
                    by_block[blk].push((k, part));
                }
            }
        }
        Operator {
            dims: &p.block_dims,
            rows,
            by_block,
            cu,
            b,
            scale,
        }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.m(),
            self.rows.iter().map(|row| {
                row.iter()
                    .map(|e| {
                        let xb = &x[e.block];
                        if e.row == e.col {
                            e.value * xb[(e.row, e.row)]
                        } else {
                            e.value * (xb[(e.row, e.col)] + xb[(e.col, e.row)])
                        }
                    })
                    .sum::<f64>()
            }),
        )
    }

    fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (k, row) in self.rows.iter().enumerate() {
            for e in row {
                let v = y[k] * e.value;
                out[e.block][(e.row, e.col)] += v;
                if e.row != e.col {
                    out[e.block][(e.col, e.row)] += v;
                }
            }
        }
        out
    }

    /// `B` with `BᵀB = M`, `M_kl = tr(A_k W A_l W)`: column `k` stacks
    /// `svec(Gᵀ A_k G)` over the blocks, where `W = G Gᵀ`.
    fn schur_root(&self, g: &[DMatrix<f64>]) -> DMatrix<f64> {
        let offsets: Vec<usize> = self
            .dims
            .iter()
            .scan(0, |acc, &n| {
                let o = *acc;
                *acc += n * (n + 1) / 2;
                Some(o)
            })
            .collect();
        let rows: usize = self.dims.iter().map(|n| n * (n + 1) / 2).sum();
        let mut root = DMatrix::zeros(rows, self.m());
        for (blk, touching) in self.by_block.iter().enumerate() {
            let gb = &g[blk];
            let n = gb.ncols();
            for (k, entries) in touching {
                let mut c = DMatrix::<f64>::zeros(n, n);
                for e in entries {
                    let gp = gb.row(e.row);
                    let gq = gb.row(e.col);
                    let outer = gp.transpose() * gq;
                    if e.row == e.col {
                        c += outer * e.value;
                    } else {
                        c += (&outer + outer.transpose()) * e.value;
                    }
                }
                let mut r = offsets[blk];
                for j in 0..n {
                    root[(r, *k)] = c[(j, j)];
                    r += 1;
                    for i in (j + 1)..n {
                        root[(r, *k)] = std::f64::consts::SQRT_2 * 0.5 * (c[(i, j)] + c[(j, i)]);
                        r += 1;
                    }
                }
            }
        }
        root
    }
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frobenius(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// NT scaling of one block: `W = G Gᵀ` with `G⁻¹ X G⁻ᵀ = Gᵀ S G = diag(λ)`.
struct Scaling {
    g: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl Scaling {
    fn new(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<Self> {
        let lx = Cholesky::new(x.clone())?.l();
        let ls = Cholesky::new(s.clone())?.l();
        let svd = (ls.transpose() * &lx).try_svd(false, true, f64::EPSILON, 0)?;
        let v_t = svd.v_t?;
        let lambda = svd.singular_values;
        if lambda.iter().any(|&l| l.is_nan() || l <= 0.0 || l.is_infinite()) {
            return None;
        }
        let mut g = lx * v_t.transpose();
        for (j, &l) in lambda.iter().enumerate() {
            g.column_mut(j).scale_mut(1.0 / l.sqrt());
        }
        Some(Scaling { g, lambda })
    }

    fn w(&self) -> DMatrix<f64> {
        &self.g * self.g.transpose()
    }

    fn unscale(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        &self.g * z * self.g.transpose()
    }

    fn scale_dual(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.g.transpose() * z * &self.g
    }

    /// Largest step keeping `Λ + α D ⪰ 0`, damped by the boundary fraction.
    fn step(&self, d: &DMatrix<f64>) -> f64 {
        let n = d.nrows();
        if n == 0 {
            return 1.0;
        }
        let mut k = d.clone();
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] /= (self.lambda[i] * self.lambda[j]).sqrt();
            }
        }
        symmetrize(&mut k);
        let min = k
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min < 0.0 {
            (STEP_FRACTION / -min).min(1.0)
        } else {
            1.0
        }
    }
}

/// Triangular factor of the Schur matrix `M = BᵀB`, taken from a QR
/// decomposition of the column-equilibrated `B` rather than a Cholesky
/// factorization of `M`, which would square its condition number.
struct SchurFactor {
    r: DMatrix<f64>,
    diag: DVector<f64>,
    /// `M⁻¹ C`.
    minv_c: DMatrix<f64>,
    reduced: Option<nalgebra::LU<f64, Dyn, Dyn>>,
}

impl SchurFactor {
    fn new(mut root: DMatrix<f64>, cu: &DMatrix<f64>) -> Option<Self> {
        let m = root.ncols();
        let diag = DVector::from_fn(m, |k, _| {
            let v = root.column(k).norm();
            if v > 0.0 && v.is_finite() {
                v
            } else {
                1.0
            }
        });
        for k in 0..m {
            let d = diag[k];
            root.column_mut(k).unscale_mut(d);
        }
        let triangular = |b: DMatrix<f64>| -> DMatrix<f64> {
            let r = b.qr().r();
            r.rows(0, m.min(r.nrows())).into_owned()
        };
        let healthy = |r: &DMatrix<f64>| {
            let d: Vec<f64> = (0..m).map(|i| if i < r.nrows() { r[(i, i)].abs() } else { 0.0 }).collect();
            let max = d.iter().copied().fold(0.0, f64::max);
            r.nrows() == m && d.iter().all(|&v| v.is_finite() && v > f64::EPSILON * max)
        };
        let mut r = triangular(root.clone());
        if !healthy(&r) {
            // Regularize with `M + 1e-12·I` on the equilibrated matrix.
            let rows = root.nrows();
            let mut padded = root.insert_rows(rows, m, 0.0);
            for k in 0..m {
                padded[(rows + k, k)] = 1e-6;
            }
            r = triangular(padded);
            if !healthy(&r) {
                return None;
            }
        }
        let mut factor = SchurFactor {
            r,
            diag,
            minv_c: DMatrix::zeros(m, 0),
            reduced: None,
        };
        let columns: Option<Vec<DVector<f64>>> =
            (0..cu.ncols()).map(|j| factor.solve_m(&cu.column(j).into_owned())).collect();
        factor.minv_c = DMatrix::from_columns(&columns?);
        if m == 0 {
            factor.minv_c = DMatrix::zeros(0, cu.ncols());
        }
        if cu.ncols() > 0 {
            let lu = (cu.transpose() * &factor.minv_c).lu();
            if !lu.is_invertible() {
                return None;
            }
            factor.reduced = Some(lu);
        }
        Some(factor)
    }

    fn solve_m(&self, h: &DVector<f64>) -> Option<DVector<f64>> {
        let scaled = h.component_div(&self.diag);
        let z = self.r.tr_solve_upper_triangular(&scaled)?;
        Some(self.r.solve_upper_triangular(&z)?.component_div(&self.diag))
    }

    /// Solves `M Δy − C Δu = h`, `Cᵀ Δy = r_f`.
    fn solve(&self, h: &DVector<f64>, r_f: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let minv_h = self.solve_m(h)?;
        let du = match &self.reduced {
            Some(lu) => lu.solve(&(r_f - self.minv_c.transpose() * h))?,
            None => DVector::zeros(0),
        };
        let dy = minv_h + &self.minv_c * &du;
        Some((dy, du))
    }
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    du: DVector<f64>,
    dy: DVector<f64>,
    ds: Vec<DMatrix<f64>>,
    dx_scaled: Vec<DMatrix<f64>>,
    ds_scaled: Vec<DMatrix<f64>>,
}

impl Direction {
    fn add(&mut self, other: &Direction) {
        let pairs = [
            (&mut self.dx, &other.dx),
            (&mut self.ds, &other.ds),
            (&mut self.dx_scaled, &other.dx_scaled),
            (&mut self.ds_scaled, &other.ds_scaled),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.du += &other.du;
        self.dy += &other.dy;
    }
}

const REFINEMENT_ROUNDS: usize = 2;

/// Merit, iteration index and `(X, u, y, S)`.
type Snapshot = (f64, usize, Vec<DMatrix<f64>>, DVector<f64>, DVector<f64>, Vec<DMatrix<f64>>);

/// Solves the margin SDP from the infeasible start `X = S = I`, `y = 0`, `u = 0`.
pub fn solve(problem: &SdpProblem, options: &SdpOptions) -> Result<SdpSolution, SdpError> {
    problem.validate()?;
    let op = Operator::new(problem);
    let m = op.m();
    let nf = problem.n_free;
    let mut d = DVector::zeros(nf);
    d[problem.objective] = 1.0;
    let n_total: usize = problem.block_dims.iter().sum();
    let tol = options.tolerance;

    let mut x: Vec<DMatrix<f64>> = problem
        .block_dims
        .iter()
        .map(|&n| DMatrix::identity(n, n))
        .collect();
    let mut s = x.clone();
    let mut y = DVector::zeros(m);
    let mut u = DVector::zeros(nf);
    let mut history = Vec::new();
    let b_norm = op.b.norm();
    let mut last_steps = (0.0, 0.0);
    let mut stalled = 0;
    // Iterate with the smallest max(gap, pinf, dinf), returned on failure.
    let mut best: Option<Snapshot> = None;

    let status = loop {
        let iteration = history.len();
        let r_p = &op.b - op.apply(&x) - &op.cu * &u;
        let aty = op.adjoint(&y);
        let r_d: Vec<DMatrix<f64>> = aty.iter().zip(&s).map(|(a, sb)| a - sb).collect();
        let r_f = &d - op.cu.transpose() * &y;
        let pobj = u[problem.objective];
        let dobj = op.b.dot(&y);
        let xs = inner(&x, &s);
        let denom = 1.0 + pobj.abs() + dobj.abs();
        let rel_gap = xs.max((pobj - dobj).abs()) / denom;
        let pinf = r_p.norm() / (1.0 + b_norm);
        let dinf = (frobenius(&r_d) + r_f.norm()) / (1.0 + d.norm());
        history.push(IterRecord {
            iteration,
            primal_objective: pobj,
            dual_objective: dobj,
            complementarity: xs,
            relative_gap: rel_gap,
            primal_residual: pinf,
            dual_residual: dinf,
            step_primal: last_steps.0,
            step_dual: last_steps.1,
        });
        if rel_gap <= tol && pinf <= tol && dinf <= tol {
            break if pobj > 10.0 * tol {
                SdpStatus::MarginFeasible
            } else if pobj < -10.0 * tol {
                SdpStatus::MarginNegative
            } else {
                SdpStatus::Borderline
            };
        }
        let merit = rel_gap.max(pinf).max(dinf);
        if merit.is_finite() && best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, iteration, x.clone(), u.clone(), y.clone(), s.clone()));
        }
        if iteration >= options.max_iterations {
            break SdpStatus::MaxIterations;
        }
        if !(pobj.is_finite() && dobj.is_finite() && xs.is_finite()) {
            break SdpStatus::NumericalFailure;
        }

        let Some(scalings) = x
            .iter()
            .zip(&s)
            .map(|(xb, sb)| Scaling::new(xb, sb))
            .collect::<Option<Vec<_>>>()
        else {
            break SdpStatus::NumericalFailure;
        };
        let w: Vec<DMatrix<f64>> = scalings.iter().map(Scaling::w).collect();
        let g: Vec<DMatrix<f64>> = scalings.iter().map(|sc| sc.g.clone()).collect();
        let Some(factor) = SchurFactor::new(op.schur_root(&g), &op.cu) else {
            break SdpStatus::NumericalFailure;
        };
        // Newton system for residuals (r_p, R_d, r_f) and scaled
        // complementarity right-hand side.
        let raw_direction = |rc_scaled: Vec<DMatrix<f64>>,
                             r_p: &DVector<f64>,
                             r_d: &[DMatrix<f64>],
                             r_f: &DVector<f64>|
         -> Option<Direction> {
            let lhs: Vec<DMatrix<f64>> = scalings
                .iter()
                .zip(&rc_scaled)
                .zip(w.iter().zip(r_d))
                .map(|((sc, z), (wb, rb))| sc.unscale(z) - wb * rb * wb)
                .collect();
            let h = op.apply(&lhs) - r_p;
            let (dy, du) = factor.solve(&h, r_f)?;
            let ds: Vec<DMatrix<f64>> = op
                .adjoint(&dy)
                .into_iter()
                .zip(r_d)
                .map(|(a, rb)| {
                    let mut m = a + rb;
                    symmetrize(&mut m);
                    m
                })
                .collect();
            let ds_scaled: Vec<DMatrix<f64>> = scalings
                .iter()
                .zip(&ds)
                .map(|(sc, z)| sc.scale_dual(z))
                .collect();
            let dx_scaled: Vec<DMatrix<f64>> =
                rc_scaled.iter().zip(&ds_scaled).map(|(a, b)| a - b).collect();
            let dx: Vec<DMatrix<f64>> = scalings
                .iter()
                .zip(&dx_scaled)
                .map(|(sc, z)| {
                    let mut m = sc.unscale(z);
                    symmetrize(&mut m);
                    m
                })
                .collect();
            if dy.iter().chain(du.iter()).any(|v| !v.is_finite()) {
                return None;
            }
            Some(Direction {
                dx,
                du,
                dy,
                ds,
                dx_scaled,
                ds_scaled,
            })
        };
        let zero_rd: Vec<DMatrix<f64>> = problem.block_dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        let zero_rc = zero_rd.clone();
        // One round of iterative refinement: the Schur matrix loses accuracy
        // as X nears the boundary, so the primal and free-variable equations
        // are re-checked with the exact operator and corrected.
        let direction = |rc_scaled: Vec<DMatrix<f64>>| -> Option<Direction> {
            let mut dir = raw_direction(rc_scaled, &r_p, &r_d, &r_f)?;
            for _ in 0..REFINEMENT_ROUNDS {
                let e_p = &r_p - op.apply(&dir.dx) - &op.cu * &dir.du;
                let e_f = &r_f - op.cu.transpose() * &dir.dy;
                if e_p.norm() + e_f.norm() <= f64::EPSILON * (1.0 + r_p.norm() + r_f.norm()) {
                    break;
                }
                let c = raw_direction(zero_rc.clone(), &e_p, &zero_rd, &e_f)?;
                dir.add(&c);
            }
            Some(dir)
        };
        let steps = |dir: &Direction| -> (f64, f64) {
            let ap = scalings
                .iter()
                .zip(&dir.dx_scaled)
                .map(|(sc, z)| sc.step(z))
                .fold(1.0, f64::min);
            let ad = scalings
                .iter()
                .zip(&dir.ds_scaled)
                .map(|(sc, z)| sc.step(z))
                .fold(1.0, f64::min);
            (ap, ad)
        };

        let predictor_rhs: Vec<DMatrix<f64>> = scalings
            .iter()
            .map(|sc| DMatrix::from_diagonal(&(-&sc.lambda)))
            .collect();
        let Some(pred) = direction(predictor_rhs) else {
            break SdpStatus::NumericalFailure;
        };
        let (ap, ad) = steps(&pred);
        let mu = xs / n_total.max(1) as f64;
        let x_aff: Vec<DMatrix<f64>> = x.iter().zip(&pred.dx).map(|(a, b)| a + b * ap).collect();
        let s_aff: Vec<DMatrix<f64>> = s.iter().zip(&pred.ds).map(|(a, b)| a + b * ad).collect();
        let mu_aff = inner(&x_aff, &s_aff) / n_total.max(1) as f64;
        let sigma = if mu > 0.0 {
            (mu_aff / mu).max(0.0).powi(3).min(1.0)
        } else {
            0.0
        };

        let corrector_rhs: Vec<DMatrix<f64>> = scalings
            .iter()
            .enumerate()
            .map(|(blk, sc)| {
                let n = sc.lambda.len();
                let prod = &pred.dx_scaled[blk] * &pred.ds_scaled[blk];
                DMatrix::from_fn(n, n, |i, j| {
                    let mut z = -0.5 * (prod[(i, j)] + prod[(j, i)]);
                    if i == j {
                        z += sigma * mu - sc.lambda[i] * sc.lambda[i];
                    }
                    2.0 * z / (sc.lambda[i] + sc.lambda[j])
                })
            })
            .collect();
        let Some(corr) = direction(corrector_rhs) else {
            break SdpStatus::NumericalFailure;
        };
        let (ap, ad) = steps(&corr);
        for (xb, dxb) in x.iter_mut().zip(&corr.dx) {
            *xb += dxb * ap;
            symmetrize(xb);
        }
        for (sb, dsb) in s.iter_mut().zip(&corr.ds) {
            *sb += dsb * ad;
            symmetrize(sb);
        }
        u += &corr.du * ap;
        y += &corr.dy * ad;
        last_steps = (ap, ad);
        if ap < 1e-10 && ad < 1e-10 {
            stalled += 1;
            if stalled >= 3 {
                break SdpStatus::NumericalFailure;
            }
        } else {
            stalled = 0;
        }
    };

    let mut last = history.last().cloned().expect("at least one record");
    if !status.converged() {
        if let Some((_, k, bx, bu, by, bs)) = best {
            last = history[k].clone();
            (x, u, y, s) = (bx, bu, by, bs);
        }
    }
    let y_orig: Vec<f64> = y.iter().zip(&op.scale).map(|(v, sc)| v * sc).collect();
    Ok(SdpSolution {
        status,
        t_star: u[problem.objective],
        x,
        u: u.iter().copied().collect(),
        y: y_orig,
        s,
        primal_objective: last.primal_objective,
        dual_objective: last.dual_objective,
        relative_gap: last.relative_gap,
        primal_residual: last.primal_residual,
        dual_residual: last.dual_residual,
        iterations: history.len() - 1,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two(off: f64) -> SdpProblem {
        SdpProblem::margin(
            vec![2],
            vec![
                (vec![SymEntry::new(0, 0, 0, 1.0)], 1.0),
                (vec![SymEntry::new(0, 1, 1, 1.0)], 1.0),
                (vec![SymEntry::new(0, 0, 1, 0.5)], off),
            ],
        )
    }

    #[test]
    fn analytic_margins() {
        for (off, expect, status) in [
            (0.0, 1.0, SdpStatus::MarginFeasible),
            (1.0, 0.0, SdpStatus::Borderline),
            (2.0, -1.0, SdpStatus::MarginNegative),
        ] {
            let sol = solve(&two_by_two(off), &SdpOptions::default()).unwrap();
            assert_eq!(sol.status, status, "off = {off}");
            assert!((sol.t_star - expect).abs() <= 1e-7, "{} vs {expect}", sol.t_star);
        }
    }

    #[test]
    fn shifted_blocks_recover_gram() {
        let sol = solve(&two_by_two(0.5), &SdpOptions::default()).unwrap();
        let q = &sol.shifted_blocks()[0];
        assert!((q[(0, 0)] - 1.0).abs() < 1e-7);
        assert!((q[(0, 1)] - 0.5).abs() < 1e-7);
        assert!((sol.t_star - 0.5).abs() < 1e-7);
    }

    #[test]
    fn schur_root_matches_dense() {
        let p = SdpProblem::margin(
            vec![3, 2],
            vec![
                (vec![SymEntry::new(0, 0, 0, 1.0), SymEntry::new(1, 0, 1, -0.5)], 1.0),
                (vec![SymEntry::new(0, 1, 2, 1.5), SymEntry::new(0, 2, 2, 2.0)], 0.0),
                (vec![SymEntry::new(0, 0, 2, 1.0), SymEntry::new(1, 1, 1, 0.7)], 2.0),
            ],
        );
        let op = Operator::new(&p);
        let g = vec![
            DMatrix::from_row_slice(3, 3, &[1.2, 0.0, 0.0, 0.3, 0.9, 0.0, -0.4, 0.2, 1.1]),
            DMatrix::from_row_slice(2, 2, &[0.8, 0.1, -0.3, 1.4]),
        ];
        let dense = |k: usize| -> Vec<DMatrix<f64>> {
            let mut y = DVector::zeros(op.m());
            y[k] = 1.0;
            op.adjoint(&y)
        };
        let root = op.schur_root(&g);
        let m = root.transpose() * &root;
        for k in 0..op.m() {
            for l in 0..op.m() {
                let (ak, al) = (dense(k), dense(l));
                let expect: f64 = (0..2)
                    .map(|b| {
                        let w = &g[b] * g[b].transpose();
                        (&ak[b] * &w * &al[b] * &w).trace()
                    })
                    .sum();
                assert!((m[(k, l)] - expect).abs() < 1e-12, "{k} {l}");
            }
        }
    }

    #[test]
    fn rejects_bad_entries() {
        let p = SdpProblem::margin(vec![2], vec![(vec![SymEntry::new(0, 0, 2, 1.0)], 1.0)]);
        assert!(solve(&p, &SdpOptions::default()).is_err());
    }
}
