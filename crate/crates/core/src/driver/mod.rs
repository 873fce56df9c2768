//! Searches over the multiplier exponent `N`, odd powers and ε margins.

pub mod precheck;

use std::fmt;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::exact::{
    best_rational, extract_sos, f64_to_rational, round_and_certify, CertBlock, Certificate, ExactError, ExactGram,
    Origin, RoundingAttempt, DENOMINATOR_BOUNDS,
};
use crate::gram::{build_for_target, uses_graded_bases, GramBlock, GramError, GramOptions, GramSystem, GramEntry};
use crate::parse::{format_monomial_in, format_polynomial, Mode, ProblemSpec};
use crate::poly::{rational_to_f64, Grading, Monomial, Polynomial};
use crate::sdp::{solve, SdpConstraint, SdpError, SdpOptions, SdpProblem, SdpSolution, SdpStatus, SymEntry};

pub use precheck::{grid_zeros, positivity_precheck, PrecheckResult};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Gram(#[from] GramError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Exact(#[from] ExactError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverOptions {
    pub sdp: SdpOptions,
    /// Gap tolerance for the one retry of a borderline solve.
    pub tight_tolerance: f64,
    pub denominator_bounds: Vec<u64>,
    pub threads: usize,
    pub prune: bool,
}

impl Default for DriverOptions {
    fn default() -> Self {
        DriverOptions {
            sdp: SdpOptions::default(),
            tight_tolerance: 1e-10,
            denominator_bounds: DENOMINATOR_BOUNDS.to_vec(),
            threads: 1,
            prune: true,
        }
    }
}

/// The default escalation schedule cut at `max`, ending at `max` itself.
pub fn bounds_up_to(max: u64) -> Vec<u64> {
    let mut out: Vec<u64> = DENOMINATOR_BOUNDS.iter().copied().filter(|&b| b < max).collect();
    out.push(max.max(1));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    ParityInfeasible,
    SupportInfeasible(String),
    Certified,
    MarginNegative,
    /// Borderline after face reduction and tightening.
    Unknown,
    RoundingFailed { hopeless: bool },
    NumericalFailure(SdpStatus),
}

impl StepOutcome {
    fn label(&self) -> String {
        match self {
            StepOutcome::ParityInfeasible => "ParityInfeasible".into(),
            StepOutcome::SupportInfeasible(m) => format!("SupportInfeasible({m})"),
            StepOutcome::Certified => "Certified".into(),
            StepOutcome::MarginNegative => "MarginNegative".into(),
            StepOutcome::Unknown => "Unknown".into(),
            StepOutcome::RoundingFailed { hopeless: true } => "RoundingFailed(hopeless)".into(),
            StepOutcome::RoundingFailed { hopeless: false } => "RoundingFailed".into(),
            StepOutcome::NumericalFailure(s) => s.as_str().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveRecord {
    /// `margin`, `face` (after zero-face restriction), `tight`, or `epsilon`.
    pub stage: &'static str,
    pub status: SdpStatus,
    pub t_star: f64,
    pub iterations: usize,
    pub dims: Vec<usize>,
    pub constraints: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// `N`, or the power `m` in odd-power mode.
    pub index: u32,
    pub outcome: StepOutcome,
    pub solves: Vec<SolveRecord>,
    pub rounding: Vec<RoundingAttempt>,
    /// Numerical optimum of ε (epsilon mode).
    pub epsilon_star: Option<f64>,
}

impl StepRecord {
    fn new(index: u32, outcome: StepOutcome) -> Self {
        StepRecord {
            index,
            outcome,
            solves: Vec::new(),
            rounding: Vec::new(),
            epsilon_star: None,
        }
    }

    /// Margin of the last solve, if any.
    pub fn t_star(&self) -> Option<f64> {
        self.solves.last().map(|s| s.t_star)
    }

    /// Margin of the first (unrestricted) margin solve.
    pub fn first_margin(&self) -> Option<f64> {
        self.solves.iter().find(|s| s.stage == "margin").map(|s| s.t_star)
    }

    pub fn summary(&self, label: &str) -> String {
        let mut s = format!("{label}={} {}", self.index, self.outcome.label());
        if let Some(e) = self.epsilon_star {
            s += &format!(" eps*={e:.6e}");
        }
        for solve in &self.solves {
            s += &format!(" {}:t*={:.6e}", solve.stage, solve.t_star);
        }
        if let Some(a) = self.rounding.last() {
            s += &format!(" bound={}", a.bound);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Certified(Box<Certificate>),
    NotFoundUpTo(u32),
    /// Indices whose margin stayed borderline.
    Unknown(Vec<u32>),
    /// Every solvable index ended in a solver failure.
    NumericalFailure(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub mode: Mode,
    pub records: Vec<StepRecord>,
    pub outcome: Outcome,
    /// Exactly certified ε in epsilon mode.
    pub epsilon: Option<BigRational>,
}

impl SearchReport {
    pub fn certificate(&self) -> Option<&Certificate> {
        match &self.outcome {
            Outcome::Certified(c) => Some(c),
            _ => None,
        }
    }

    pub fn record(&self, index: u32) -> Option<&StepRecord> {
        self.records.iter().find(|r| r.index == index)
    }

    fn index_label(&self) -> &'static str {
        if self.mode == Mode::OddPower {
            "m"
        } else {
            "N"
        }
    }
}

impl fmt::Display for SearchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = self.index_label();
        for r in &self.records {
            writeln!(f, "{}", r.summary(label))?;
            if r.outcome == StepOutcome::MarginNegative {
                if let Some(t) = r.t_star() {
                    writeln!(f, "  no SOS representation found (numerical evidence, margin t* = {t:.6e})")?;
                }
            }
        }
        match &self.outcome {
            Outcome::Certified(c) => {
                let idx = match &c.origin {
                    Origin::OddPower { power, .. } => *power,
                    _ => c.n,
                };
                write!(f, "certified at {label} = {idx}")?;
                if let Some(e) = &self.epsilon {
                    write!(f, " with epsilon = {e}")?;
                }
                writeln!(f)
            }
            Outcome::NotFoundUpTo(k) => writeln!(f, "not found up to {label} = {k}"),
            Outcome::Unknown(list) => writeln!(f, "unknown: borderline margin at {label} in {list:?}"),
            Outcome::NumericalFailure(list) => writeln!(f, "numerical failure at {label} in {list:?}"),
        }
    }
}

// ---------------------------------------------------------------------------
// SDP assembly
// ---------------------------------------------------------------------------

/// Margin SDP for a Gram system and, per SDP block, the system block it
/// came from. Blocks whose working dimension is zero are left out.
pub fn margin_problem(system: &GramSystem) -> Result<(SdpProblem, Vec<usize>), DriverError> {
    let rows = system.independent_equations()?;
    let (dims, map) = sdp_blocks(system);
    let rows = rows
        .iter()
        .map(|&k| {
            let eq = &system.equations[k];
            (sym_entries(&eq.entries, &map), rational_to_f64(&eq.rhs))
        })
        .collect();
    let owners = owners(&map);
    Ok((SdpProblem::margin(dims, rows), owners))
}

fn sdp_blocks(system: &GramSystem) -> (Vec<usize>, Vec<Option<usize>>) {
    let mut dims = Vec::new();
    let mut map = vec![None; system.blocks.len()];
    for (bi, b) in system.active_blocks() {
        let d = b.working_dim();
        if d > 0 {
            map[bi] = Some(dims.len());
            dims.push(d);
        }
    }
    (dims, map)
}

fn owners(map: &[Option<usize>]) -> Vec<usize> {
    let mut out: Vec<(usize, usize)> = map
        .iter()
        .enumerate()
        .filter_map(|(bi, k)| k.map(|k| (k, bi)))
        .collect();
    out.sort();
    out.into_iter().map(|(_, bi)| bi).collect()
}

fn sym_entries(entries: &[GramEntry], map: &[Option<usize>]) -> Vec<SymEntry> {
    entries
        .iter()
        .filter_map(|e| {
            let k = map[e.block]?;
            let c = rational_to_f64(&e.coeff);
            // GramEntry coefficients carry the factor 2 of an off-diagonal pair.
            let v = if e.row == e.col { c } else { c / 2.0 };
            Some(SymEntry::new(k, e.row, e.col, v))
        })
        .collect()
}

/// Numeric working Gram matrices indexed like `system.blocks`.
fn numeric_grams(system: &GramSystem, owners: &[usize], blocks: &[nalgebra::DMatrix<f64>]) -> Vec<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); system.blocks.len()];
    for (k, &bi) in owners.iter().enumerate() {
        let m = &blocks[k];
        out[bi] = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect();
    }
    out
}

// ---------------------------------------------------------------------------
// One index of a scan
// ---------------------------------------------------------------------------

/// `f·g^N = Σ_e s_e·h^e` for fixed inputs; `f` varies across modes.
struct Problem<'a> {
    variables: &'a [String],
    grading: &'a Grading,
    f: Polynomial,
    g: &'a Polynomial,
    constraints: &'a [Polynomial],
    graded: bool,
    zeros: OnceLock<Vec<Vec<BigRational>>>,
}

impl<'a> Problem<'a> {
    fn new(spec: &'a ProblemSpec, f: Polynomial, constraints: &'a [Polynomial]) -> Result<Self, DriverError> {
        let mut all: Vec<&Polynomial> = vec![&f, &spec.g];
        all.extend(constraints);
        let graded = uses_graded_bases(&all, &spec.grading)?;
        Ok(Problem {
            variables: &spec.variables,
            grading: &spec.grading,
            f,
            g: &spec.g,
            constraints,
            graded,
            zeros: OnceLock::new(),
        })
    }

    fn zeros(&self) -> &[Vec<BigRational>] {
        self.zeros
            .get_or_init(|| grid_zeros(&self.f, self.constraints, self.grading))
    }

    fn system(&self, n: u32, opts: &DriverOptions) -> Result<GramSystem, GramError> {
        let target = &self.f * &self.g.pow(n);
        build_for_target(
            target,
            &[],
            self.constraints,
            self.grading,
            self.graded,
            GramOptions { prune: opts.prune },
        )
    }

    fn certificate(&self, system: &GramSystem, exact: &ExactGram, n: u32, origin: Origin, margin: f64) -> Certificate {
        let n_vars = system.n_vars();
        let blocks = system
            .active_blocks()
            .filter_map(|(bi, b)| {
                let (l, d) = &exact.factors[bi];
                let squares = extract_sos(l, d, &b.working_basis(n_vars));
                (!squares.is_empty()).then(|| CertBlock {
                    product_index: b.product_index.clone(),
                    basis: b.basis.clone(),
                    squares,
                })
            })
            .collect();
        Certificate {
            variables: self.variables.to_vec(),
            grading: self.grading.clone(),
            f: self.f.clone(),
            g: self.g.clone(),
            constraints: self.constraints.to_vec(),
            n,
            blocks,
            origin,
            margin: Some(margin),
            denominator_bound: Some(exact.bound),
            trajectory: Vec::new(),
        }
    }
}

fn solve_record(stage: &'static str, problem: &SdpProblem, sol: &SdpSolution) -> SolveRecord {
    SolveRecord {
        stage,
        status: sol.status,
        t_star: sol.t_star,
        iterations: sol.iterations,
        dims: problem.block_dims.clone(),
        constraints: problem.constraints.len(),
    }
}

fn describe(m: &Monomial, vars: &[String]) -> String {
    format_monomial_in(m, vars)
}

/// Runs one index: margin solve, then zero-face restriction and one
/// tightened retry when the margin is borderline, then exact rounding.
fn run_step(
    problem: &Problem<'_>,
    n: u32,
    index: u32,
    origin: Origin,
    opts: &DriverOptions,
) -> Result<(StepRecord, Option<Certificate>), DriverError> {
    let system = match problem.system(n, opts) {
        Ok(s) => s,
        Err(GramError::ParityInfeasible) => return Ok((StepRecord::new(index, StepOutcome::ParityInfeasible), None)),
        Err(GramError::SupportInfeasible(e)) => {
            let m = describe(&Monomial::new(e), problem.variables);
            return Ok((StepRecord::new(index, StepOutcome::SupportInfeasible(m)), None));
        }
        Err(e) => return Err(e.into()),
    };
    let mut record = StepRecord::new(index, StepOutcome::Unknown);
    let mut current = system;
    let mut sdp_opts = opts.sdp;
    let mut stage = "margin";
    let mut reduced = false;
    let mut tightened = false;
    loop {
        let (sdp, owners) = match margin_problem(&current) {
            Ok(p) => p,
            // A restricted face can lose consistency: no representation on it.
            Err(DriverError::Gram(GramError::Inconsistent)) if reduced => {
                record.outcome = StepOutcome::MarginNegative;
                return Ok((record, None));
            }
            Err(e) => return Err(e),
        };
        let sol = solve(&sdp, &sdp_opts)?;
        record.solves.push(solve_record(stage, &sdp, &sol));
        match sol.status {
            SdpStatus::MarginFeasible => {
                let numeric = numeric_grams(&current, &owners, &sol.shifted_blocks());
                let report = round_and_certify(&current, &numeric, sol.t_star, &opts.denominator_bounds)?;
                record.rounding = report.attempts;
                return Ok(match report.result {
                    Some(exact) => {
                        record.outcome = StepOutcome::Certified;
                        let cert = problem.certificate(&current, &exact, n, origin, sol.t_star);
                        (record, Some(cert))
                    }
                    None => {
                        record.outcome = StepOutcome::RoundingFailed {
                            hopeless: report.hopeless,
                        };
                        (record, None)
                    }
                });
            }
            SdpStatus::MarginNegative => {
                record.outcome = StepOutcome::MarginNegative;
                return Ok((record, None));
            }
            status => {
                if !reduced {
                    reduced = true;
                    if let Some(r) = current.restrict_to_zeros(problem.zeros(), problem.constraints) {
                        current = r;
                        stage = "face";
                        continue;
                    }
                }
                if status == SdpStatus::Borderline && !tightened {
                    tightened = true;
                    sdp_opts.tolerance = opts.tight_tolerance;
                    stage = "tight";
                    continue;
                }
                record.outcome = if status == SdpStatus::Borderline {
                    StepOutcome::Unknown
                } else {
                    StepOutcome::NumericalFailure(status)
                };
                return Ok((record, None));
            }
        }
    }
}

type StepResult = Result<(StepRecord, Option<Certificate>), DriverError>;
type StepFn<'a> = dyn Fn(u32) -> StepResult + Sync + 'a;

/// Evaluates `indices` in order, stopping at the first certificate when
/// `first_only`. With several threads, indices are handed out in order and
/// the smallest certified index wins regardless of completion order.
fn scan(
    indices: &[u32],
    threads: usize,
    first_only: bool,
    step: &StepFn<'_>,
) -> Result<Vec<(StepRecord, Option<Certificate>)>, DriverError> {
    if threads <= 1 || indices.len() <= 1 {
        let mut out = Vec::new();
        for &i in indices {
            let r = step(i)?;
            let done = r.1.is_some();
            out.push(r);
            if done && first_only {
                break;
            }
        }
        return Ok(out);
    }
    let next = AtomicUsize::new(0);
    let best = AtomicU32::new(u32::MAX);
    let results: Mutex<Vec<(usize, StepResult)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..threads.min(indices.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = indices.get(k) else { break };
                if first_only && i > best.load(Ordering::SeqCst) {
                    break;
                }
                let r = step(i);
                if let Ok((_, Some(_))) = &r {
                    best.fetch_min(i, Ordering::SeqCst);
                }
                results.lock().expect("no poisoned lock").push((k, r));
            });
        }
    });
    let mut results = results.into_inner().expect("no poisoned lock");
    results.sort_by_key(|(k, _)| *k);
    let mut out = Vec::new();
    for (_, r) in results {
        let r = r?;
        let done = r.1.is_some();
        out.push(r);
        if done && first_only {
            break;
        }
    }
    Ok(out)
}

fn trajectory(records: &[StepRecord], label: &str) -> Vec<String> {
    records.iter().map(|r| r.summary(label)).collect()
}

fn finish(mode: Mode, results: Vec<(StepRecord, Option<Certificate>)>, last: u32) -> SearchReport {
    let label = if mode == Mode::OddPower { "m" } else { "N" };
    let mut records = Vec::with_capacity(results.len());
    let mut cert = None;
    for (r, c) in results {
        records.push(r);
        if c.is_some() {
            cert = c;
            break;
        }
    }
    let outcome = match cert {
        Some(mut c) => {
            c.trajectory = trajectory(&records, label);
            Outcome::Certified(Box::new(c))
        }
        None => fallback_outcome(&records, last),
    };
    SearchReport {
        mode,
        records,
        outcome,
        epsilon: None,
    }
}

fn fallback_outcome(records: &[StepRecord], last: u32) -> Outcome {
    let unknown: Vec<u32> = records
        .iter()
        .filter(|r| r.outcome == StepOutcome::Unknown)
        .map(|r| r.index)
        .collect();
    if !unknown.is_empty() {
        return Outcome::Unknown(unknown);
    }
    let solved: Vec<&StepRecord> = records.iter().filter(|r| !r.solves.is_empty()).collect();
    if !solved.is_empty() && solved.iter().all(|r| matches!(r.outcome, StepOutcome::NumericalFailure(_))) {
        return Outcome::NumericalFailure(solved.iter().map(|r| r.index).collect());
    }
    Outcome::NotFoundUpTo(last)
}

// ---------------------------------------------------------------------------
// Modes
// ---------------------------------------------------------------------------

fn check_spec(spec: &ProblemSpec) -> Result<(), DriverError> {
    spec.validate().map_err(|e| DriverError::Input(e.to_string()))
}

/// Scans `N = 0..=n_max` for `f·g^N = Σ_e s_e·h^e`.
pub fn certify(spec: &ProblemSpec, opts: &DriverOptions) -> Result<SearchReport, DriverError> {
    check_spec(spec)?;
    let problem = Problem::new(spec, spec.f.clone(), &spec.constraints)?;
    let indices: Vec<u32> = (0..=spec.n_max).collect();
    let step = |n: u32| run_step(&problem, n, n, Origin::Direct, opts);
    let results = scan(&indices, opts.threads, true, &step)?;
    Ok(finish(Mode::Certify, results, spec.n_max))
}

/// `f` itself as a sum of squares: `N = 0` and no constraints.
pub fn check_sos(spec: &ProblemSpec, opts: &DriverOptions) -> Result<SearchReport, DriverError> {
    check_spec(spec)?;
    if !spec.constraints.is_empty() {
        return Err(DriverError::Input("check-sos takes no constraints h".into()));
    }
    let problem = Problem::new(spec, spec.f.clone(), &[])?;
    let results = vec![run_step(&problem, 0, 0, Origin::Direct, opts)?];
    Ok(finish(Mode::CheckSos, results, 0))
}

/// check-sos on `f^m` for `m = 1, 3, ..., m_max`.
pub fn odd_power(spec: &ProblemSpec, opts: &DriverOptions) -> Result<SearchReport, DriverError> {
    check_spec(spec)?;
    if spec.m_max.is_multiple_of(2) {
        return Err(DriverError::Input(format!("m_max must be odd, got {}", spec.m_max)));
    }
    let indices: Vec<u32> = (1..=spec.m_max).step_by(2).collect();
    let powers: Vec<Problem<'_>> = indices
        .iter()
        .map(|&m| Problem::new(spec, spec.f.pow(m), &[]))
        .collect::<Result<_, _>>()?;
    let step = |m: u32| {
        let problem = &powers[(m / 2) as usize];
        let origin = Origin::OddPower {
            source: spec.f.clone(),
            power: m,
        };
        run_step(problem, 0, m, origin, opts)
    };
    let results = scan(&indices, opts.threads, true, &step)?;
    Ok(finish(Mode::OddPower, results, spec.m_max))
}

/// Largest ε with `g^N·(g·f − ε·h²)` a sum of squares, numerically; solved
/// with ε as the free variable of the SDP and no margin.
pub fn epsilon_sdp(spec: &ProblemSpec, h: &Polynomial, n: u32, opts: &DriverOptions) -> Result<Option<(SdpProblem, GramSystem)>, DriverError> {
    let gn = spec.g.pow(n);
    let target = &(&spec.f * &gn) * &spec.g;
    let extra = &gn * &h.square();
    let mut all: Vec<&Polynomial> = vec![&spec.f, &spec.g, h];
    all.extend(&spec.constraints);
    let graded = uses_graded_bases(&all, &spec.grading)?;
    let system = match build_for_target(
        target,
        std::slice::from_ref(&extra),
        &spec.constraints,
        &spec.grading,
        graded,
        GramOptions { prune: opts.prune },
    ) {
        Ok(s) => s,
        Err(GramError::ParityInfeasible | GramError::SupportInfeasible(_)) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    // Independence with ε as an extra 1×1 block.
    let mut with_eps = system.clone();
    let eps_block = with_eps.blocks.len();
    with_eps.blocks.push(GramBlock {
        product_index: Vec::new(),
        multiplier: Polynomial::one(system.n_vars()),
        basis: vec![Monomial::one(system.n_vars())],
        active: true,
        reduction: None,
    });
    for eq in &mut with_eps.equations {
        let c = extra.coeff(&eq.monomial);
        if !c.is_zero() {
            eq.entries.push(GramEntry {
                block: eps_block,
                row: 0,
                col: 0,
                coeff: c,
            });
        }
    }
    let rows = with_eps.independent_equations()?;
    let (dims, map) = sdp_blocks(&system);
    let constraints = rows
        .iter()
        .map(|&k| {
            let eq = &system.equations[k];
            SdpConstraint {
                entries: sym_entries(&eq.entries, &map),
                free: vec![rational_to_f64(&extra.coeff(&eq.monomial))],
                rhs: rational_to_f64(&eq.rhs),
            }
        })
        .collect();
    let sdp = SdpProblem {
        block_dims: dims,
        n_free: 1,
        objective: 0,
        constraints,
    };
    Ok(Some((sdp, system)))
}

/// Rational just below `3/4·ε*` with a small denominator.
pub fn shrink_epsilon(eps_star: f64) -> Option<BigRational> {
    let target = 0.75 * eps_star;
    if !(target > 0.0 && target.is_finite()) {
        return None;
    }
    let exact = f64_to_rational(target);
    for bound in [10u64, 100, 1_000, 1_000_000, 1_000_000_000_000] {
        let q = best_rational(&exact, &BigInt::from(bound));
        if q.is_positive() && (rational_to_f64(&q) - target).abs() <= 0.05 * eps_star {
            return Some(q);
        }
    }
    Some(exact)
}

/// Maximizes ε per `N`, certifies `g^N·(g·f − ε₀·h²)` exactly at
/// `ε₀ ≈ 3/4·ε*`, and keeps the largest certified ε₀ (smallest `N` on ties).
pub fn epsilon_margin(spec: &ProblemSpec, opts: &DriverOptions) -> Result<SearchReport, DriverError> {
    check_spec(spec)?;
    let h = spec
        .h_margin
        .as_ref()
        .ok_or_else(|| DriverError::Input("epsilon mode needs h_margin".into()))?;
    if h.is_zero() {
        return Err(DriverError::Input(
            "h_margin is zero: the margin constraint is vacuous and ε is unbounded".into(),
        ));
    }
    let gf = &spec.g * &spec.f;
    if let (Ok(a), Ok(b)) = (gf.multidegree(&spec.grading), h.square().multidegree(&spec.grading)) {
        if a != b {
            return Err(DriverError::Input(format!(
                "h_margin^2 has degree {b:?} but g·f has degree {a:?}"
            )));
        }
    }
    let indices: Vec<u32> = (0..=spec.n_max).collect();
    let step = |n: u32| -> Result<(StepRecord, Option<Certificate>), DriverError> {
        let Some((sdp, _)) = epsilon_sdp(spec, h, n, opts)? else {
            return Ok((StepRecord::new(n, StepOutcome::ParityInfeasible), None));
        };
        let sol = solve(&sdp, &opts.sdp)?;
        let mut record = StepRecord::new(n, StepOutcome::MarginNegative);
        record.solves.push(solve_record("epsilon", &sdp, &sol));
        record.epsilon_star = Some(sol.t_star);
        match sol.status {
            SdpStatus::MarginFeasible => {}
            SdpStatus::MarginNegative => return Ok((record, None)),
            SdpStatus::Borderline => {
                record.outcome = StepOutcome::Unknown;
                return Ok((record, None));
            }
            s => {
                record.outcome = StepOutcome::NumericalFailure(s);
                return Ok((record, None));
            }
        }
        let Some(eps) = shrink_epsilon(sol.t_star) else {
            return Ok((record, None));
        };
        let shifted = &gf - &h.square().scale(&eps);
        let problem = Problem::new(spec, shifted, &spec.constraints)?;
        let origin = Origin::EpsilonMargin {
            source: spec.f.clone(),
            epsilon: eps,
            h_margin: h.clone(),
        };
        let (inner, cert) = run_step(&problem, n, n, origin, opts)?;
        record.outcome = inner.outcome;
        record.solves.extend(inner.solves);
        record.rounding = inner.rounding;
        Ok((record, cert))
    };
    let results = scan(&indices, opts.threads, false, &step)?;
    let mut best: Option<(BigRational, usize)> = None;
    for (k, (_, cert)) in results.iter().enumerate() {
        if let Some(Certificate {
            origin: Origin::EpsilonMargin { epsilon, .. },
            ..
        }) = cert
        {
            if best.as_ref().is_none_or(|(e, _)| epsilon > e) {
                best = Some((epsilon.clone(), k));
            }
        }
    }
    let mut records = Vec::with_capacity(results.len());
    let mut chosen = None;
    for (k, (r, c)) in results.into_iter().enumerate() {
        records.push(r);
        if best.as_ref().is_some_and(|(_, b)| *b == k) {
            chosen = c;
        }
    }
    let (outcome, epsilon) = match chosen {
        Some(mut c) => {
            c.trajectory = trajectory(&records, "N");
            let eps = match &c.origin {
                Origin::EpsilonMargin { epsilon, .. } => Some(epsilon.clone()),
                _ => None,
            };
            (Outcome::Certified(Box::new(c)), eps)
        }
        None => (fallback_outcome(&records, spec.n_max), None),
    };
    Ok(SearchReport {
        mode: Mode::EpsilonMargin,
        records,
        outcome,
        epsilon,
    })
}

/// Runs the mode named in the problem file.
pub fn run(spec: &ProblemSpec, opts: &DriverOptions) -> Result<SearchReport, DriverError> {
    match spec.mode {
        Mode::Certify => certify(spec, opts),
        Mode::CheckSos => check_sos(spec, opts),
        Mode::OddPower => odd_power(spec, opts),
        Mode::EpsilonMargin => epsilon_margin(spec, opts),
    }
}

/// The margin SDP for `f·g^N` exactly as `certify` first solves it.
pub fn margin_sdp(spec: &ProblemSpec, n: u32, prune: bool) -> Result<SdpProblem, DriverError> {
    check_spec(spec)?;
    let problem = Problem::new(spec, spec.f.clone(), &spec.constraints)?;
    let opts = DriverOptions {
        prune,
        ..DriverOptions::default()
    };
    Ok(margin_problem(&problem.system(n, &opts)?)?.0)
}

/// Human-readable certificate summary: one line per square.
pub fn describe_certificate(cert: &Certificate) -> String {
    let mut out = String::new();
    for b in &cert.blocks {
        let e: Vec<&str> = b.product_index.iter().map(|&on| if on { "1" } else { "0" }).collect();
        out += &format!("e = ({})\n", e.join(", "));
        for (w, p) in &b.squares {
            let w = if w.is_one() { String::new() } else { format!("{w}·") };
            out += &format!("  {w}({})^2\n", format_polynomial(p, &cert.variables));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::verify_certificate;
    use crate::parse::parse_polynomial_in;

    fn spec(f: &str, vars: &[&str]) -> ProblemSpec {
        let f = parse_polynomial_in(f, vars).unwrap();
        ProblemSpec::new(vars.iter().map(|s| s.to_string()).collect(), f)
    }

    #[test]
    fn sum_of_two_squares() {
        let s = spec("x^2 + y^2", &["x", "y"]);
        let report = check_sos(&s, &DriverOptions::default()).unwrap();
        let cert = report.certificate().expect("certified");
        assert_eq!(cert.n, 0);
        assert!(verify_certificate(cert).is_valid());
        let squares: Vec<_> = cert.blocks[0].squares.iter().map(|(w, _)| w.clone()).collect();
        assert_eq!(squares, vec![BigRational::one(), BigRational::one()]);
    }

    #[test]
    fn indefinite_is_not_found() {
        let mut s = spec("x^2 - y^2", &["x", "y"]);
        s.n_max = 2;
        let report = certify(&s, &DriverOptions::default()).unwrap();
        assert_eq!(report.outcome, Outcome::NotFoundUpTo(2));
        assert_eq!(report.records.len(), 3);
        assert!(report.records.iter().all(|r| r.outcome == StepOutcome::MarginNegative));
    }

    #[test]
    fn odd_n_is_parity_filtered() {
        // g of degree 2 keeps degrees even; x^3 target parity fails for any N
        let mut s = spec("x^3", &["x", "y"]);
        s.n_max = 1;
        let report = certify(&s, &DriverOptions::default()).unwrap();
        assert!(report.records.iter().all(|r| r.outcome == StepOutcome::ParityInfeasible));
    }

    #[test]
    fn worked_constrained_example() {
        let mut s = spec("x^2 - 1/2*y^2", &["x", "y"]);
        s.constraints = vec![parse_polynomial_in("x^2 - y^2", &["x", "y"]).unwrap()];
        s.mode = Mode::Certify;
        let report = certify(&s, &DriverOptions::default()).unwrap();
        let cert = report.certificate().expect("certified");
        assert_eq!(cert.n, 0);
        assert!(verify_certificate(cert).is_valid());
    }

    #[test]
    fn threads_match_sequential() {
        let mut s = spec("x^2 - y^2", &["x", "y"]);
        s.n_max = 3;
        let one = certify(&s, &DriverOptions::default()).unwrap();
        let four = certify(&s, &DriverOptions { threads: 4, ..DriverOptions::default() }).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn epsilon_for_positive_form() {
        let mut s = spec("x^2 + y^2", &["x", "y"]);
        s.mode = Mode::EpsilonMargin;
        s.n_max = 0;
        s.h_margin = Some(parse_polynomial_in("x^2", &["x", "y"]).unwrap());
        let report = epsilon_margin(&s, &DriverOptions::default()).unwrap();
        let eps = report.epsilon.clone().expect("certified epsilon");
        assert!(eps.is_positive());
        assert!(verify_certificate(report.certificate().unwrap()).is_valid());
    }

    #[test]
    fn epsilon_rejects_zero_h() {
        let mut s = spec("x^2 + y^2", &["x", "y"]);
        s.mode = Mode::EpsilonMargin;
        s.h_margin = Some(Polynomial::zero(2));
        assert!(matches!(epsilon_margin(&s, &DriverOptions::default()), Err(DriverError::Input(_))));
    }

    #[test]
    fn shrink_stays_below() {
        let e = shrink_epsilon(1.0).unwrap();
        assert_eq!(e, BigRational::new(3.into(), 4.into()));
        let e = rational_to_f64(&shrink_epsilon(0.0123).unwrap());
        assert!(e > 0.0 && e < 0.0123);
        assert!(shrink_epsilon(-1.0).is_none());
    }

    #[test]
    fn bounds_schedule() {
        assert_eq!(bounds_up_to(10_000), vec![100, 10_000]);
        assert_eq!(bounds_up_to(500), vec![100, 500]);
        assert_eq!(bounds_up_to(50), vec![50]);
    }
}
