//! Sampling-based sign checks on `K = {h_i >= 0}`.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::exact::f64_to_rational;
use crate::parse::ProblemSpec;
use crate::poly::{Grading, Polynomial};

/// Grid points per coordinate.
pub const GRID_POINTS: usize = 21;
const MAX_GRID: usize = 250_000;
const MAX_ZEROS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub enum PrecheckResult {
    NoCounterexample {
        /// Kept points where `f` (or `g`) vanishes exactly.
        zeros: Vec<Vec<BigRational>>,
        kept: usize,
        /// Constraints violated at every sample (K may be thin).
        thin: Vec<usize>,
    },
    Counterexample {
        point: Vec<BigRational>,
        f_value: BigRational,
        g_value: BigRational,
        thin: Vec<usize>,
    },
}

impl PrecheckResult {
    pub fn thin(&self) -> &[usize] {
        match self {
            PrecheckResult::NoCounterexample { thin, .. } | PrecheckResult::Counterexample { thin, .. } => thin,
        }
    }
}

/// Points per coordinate so that the grid has at most 250k points.
pub fn grid_resolution(n_vars: usize) -> usize {
    let mut k = GRID_POINTS;
    while k > 3 && k.checked_pow(n_vars as u32).is_none_or(|t| t > MAX_GRID) {
        k -= 2;
    }
    k
}

/// Integer coordinates in `[-(k-1)/2, (k-1)/2]^n` minus the origin; the grid
/// on `[-1, 1]^n` is these divided by `(k-1)/2`.
fn integer_grid(n_vars: usize) -> (Vec<Vec<i64>>, i64) {
    let k = grid_resolution(n_vars);
    let half = (k as i64 - 1) / 2;
    let mut out = Vec::new();
    let mut cur = vec![-half; n_vars];
    loop {
        if cur.iter().any(|&c| c != 0) {
            out.push(cur.clone());
        }
        let mut i = 0;
        loop {
            if i == n_vars {
                return (out, half);
            }
            if cur[i] < half {
                cur[i] += 1;
                break;
            }
            cur[i] = -half;
            i += 1;
        }
    }
}

fn to_point(ints: &[i64], denom: i64) -> Vec<BigRational> {
    ints.iter()
        .map(|&c| BigRational::new(BigInt::from(c), BigInt::from(denom)))
        .collect()
}

fn eval_exact(p: &Polynomial, point: &[BigRational]) -> BigRational {
    p.evaluate(point).expect("point length matches")
}

/// Projective representative of an integer vector: primitive, first nonzero
/// entry positive.
fn primitive(v: &[i64]) -> Vec<i64> {
    let g = v.iter().fold(0i64, |g, &c| g.gcd(&c));
    let sign = v.iter().find(|&&c| c != 0).map(|c| c.signum()).unwrap_or(1);
    v.iter().map(|&c| sign * c / g.max(1)).collect()
}

fn near_zero(p: &Polynomial, v: f64) -> bool {
    v.abs() <= 1e-9 * (1.0 + p.coeff_l1_f64())
}

fn is_graded(p: &Polynomial, grading: &Grading) -> bool {
    p.is_zero() || p.multidegree(grading).is_ok()
}

/// Exact zeros of `f` on the grid that satisfy every `h_i >= 0`. For a
/// single-block form, one representative per line through the origin.
pub fn grid_zeros(f: &Polynomial, constraints: &[Polynomial], grading: &Grading) -> Vec<Vec<BigRational>> {
    let n = f.n_vars();
    let homogeneous = grading.n_blocks() == 1 && is_graded(f, grading);
    let (grid, denom) = integer_grid(n);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for ints in grid {
        let pf: Vec<f64> = ints.iter().map(|&c| c as f64 / denom as f64).collect();
        if !near_zero(f, f.evaluate_f64(&pf)) {
            continue;
        }
        let key = if homogeneous { primitive(&ints) } else { ints.clone() };
        if seen.contains(&key) {
            continue;
        }
        let point = to_point(&key, if homogeneous { 1 } else { denom });
        if !eval_exact(f, &point).is_zero() {
            continue;
        }
        if constraints.iter().any(|h| eval_exact(h, &point).is_negative()) {
            continue;
        }
        seen.insert(key);
        out.push(point);
        if out.len() >= MAX_ZEROS {
            break;
        }
    }
    out
}

/// Checks the signs of `f` and `g` on sample points of `K`: normalized
/// Gaussian draws (per grading block) for graded input, raw Gaussian draws
/// otherwise, plus the deterministic grid on `[-1, 1]^n`.
pub fn positivity_precheck(spec: &ProblemSpec, samples: usize, seed: u64) -> PrecheckResult {
    let n = spec.n_vars();
    let grading = &spec.grading;
    let graded = is_graded(&spec.f, grading);
    let f_deg = spec.f.total_degree().unwrap_or(0) as i32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        if graded {
            for block in grading.blocks() {
                let norm = v[block.clone()].iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v[block.clone()].iter_mut().for_each(|x| *x /= norm);
                }
            }
        }
        points.push(v);
    }
    let (grid, denom) = integer_grid(n);
    points.extend(
        grid.iter()
            .map(|ints| ints.iter().map(|&c| c as f64 / denom as f64).collect::<Vec<f64>>()),
    );

    let r = spec.constraints.len();
    let mut satisfied_somewhere = vec![false; r];
    let mut kept = 0;
    let mut worst: Option<(f64, Vec<BigRational>, BigRational, BigRational)> = None;
    let mut zero_found = false;
    for pf in &points {
        let mut in_k = true;
        for (i, h) in spec.constraints.iter().enumerate() {
            let hv = h.evaluate_f64(pf);
            if hv >= 0.0 || near_zero(h, hv) {
                satisfied_somewhere[i] = true;
            }
            if hv < 0.0 && !near_zero(h, hv) {
                in_k = false;
            }
        }
        let fv = spec.f.evaluate_f64(pf);
        let gv = spec.g.evaluate_f64(pf);
        let suspicious = fv < 0.0 || gv < 0.0 || near_zero(&spec.f, fv) || near_zero(&spec.g, gv);
        if !in_k && !suspicious {
            continue;
        }
        if !suspicious {
            kept += 1;
            continue;
        }
        let point: Vec<BigRational> = pf.iter().map(|&x| f64_to_rational(x)).collect();
        if spec.constraints.iter().any(|h| eval_exact(h, &point).is_negative()) {
            continue;
        }
        kept += 1;
        let fe = eval_exact(&spec.f, &point);
        let ge = eval_exact(&spec.g, &point);
        if fe.is_negative() || ge.is_negative() {
            let norm = pf.iter().map(|x| x * x).sum::<f64>().sqrt();
            let score = if graded && norm > 0.0 {
                fv.min(gv) / norm.powi(f_deg)
            } else {
                fv.min(gv)
            };
            if worst.as_ref().is_none_or(|(s, ..)| score < *s) {
                worst = Some((score, point, fe, ge));
            }
        } else if fe.is_zero() || ge.is_zero() {
            zero_found = true;
        }
    }
    let thin: Vec<usize> = (0..r).filter(|&i| !satisfied_somewhere[i]).collect();
    if let Some((_, point, f_value, g_value)) = worst {
        return PrecheckResult::Counterexample {
            point,
            f_value,
            g_value,
            thin,
        };
    }
    let mut zeros = grid_zeros(&spec.f, &spec.constraints, grading);
    if zero_found && zeros.is_empty() {
        // A sampled zero off the grid, or a zero of g.
        zeros.extend(grid_zeros(&spec.g, &spec.constraints, grading));
        if zeros.is_empty() {
            zeros.push(Vec::new());
        }
    }
    zeros.retain(|z| !z.is_empty() || zero_found);
    PrecheckResult::NoCounterexample { zeros, kept, thin }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_polynomial_in;
    use crate::poly::int;

    fn spec(f: &str, vars: &[&str]) -> ProblemSpec {
        let f = parse_polynomial_in(f, vars).unwrap();
        ProblemSpec::new(vars.iter().map(|s| s.to_string()).collect(), f)
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(grid_resolution(3), 21);
        assert_eq!(integer_grid(2).0.len(), 21 * 21 - 1);
        assert!(grid_resolution(6).pow(6) <= MAX_GRID);
    }

    #[test]
    fn positive_form_passes() {
        match positivity_precheck(&spec("x^2 + y^2", &["x", "y"]), 1000, 0) {
            PrecheckResult::NoCounterexample { zeros, .. } => assert!(zeros.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn indefinite_form_fails_at_axis() {
        match positivity_precheck(&spec("x^2 - y^2", &["x", "y"]), 1000, 0) {
            PrecheckResult::Counterexample { point, f_value, .. } => {
                assert!(f_value.is_negative());
                assert_eq!(point[0], int(0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn motzkin_zeros() {
        let s = spec("x^4*y^2 + x^2*y^4 + z^6 - 3*x^2*y^2*z^2", &["x", "y", "z"]);
        match positivity_precheck(&s, 1000, 0) {
            PrecheckResult::NoCounterexample { zeros, .. } => {
                let ints: BTreeSet<Vec<BigRational>> = zeros.into_iter().collect();
                assert_eq!(ints.len(), 6, "{ints:?}");
                assert!(ints.contains(&vec![int(1), int(0), int(0)]));
                assert!(ints.contains(&vec![int(1), int(-1), int(-1)]));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constraints_filter_points() {
        // x^2 - 1/2 y^2 is negative off K = {x^2 >= y^2} only
        let mut s = spec("x^2 - 1/2*y^2", &["x", "y"]);
        s.constraints = vec![parse_polynomial_in("x^2 - y^2", &["x", "y"]).unwrap()];
        assert!(matches!(
            positivity_precheck(&s, 1000, 0),
            PrecheckResult::NoCounterexample { .. }
        ));
        s.constraints = vec![parse_polynomial_in("-x^2 - y^2", &["x", "y"]).unwrap()];
        assert_eq!(positivity_precheck(&s, 200, 0).thin(), &[0]);
    }
}
