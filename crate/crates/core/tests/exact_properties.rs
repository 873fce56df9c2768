//! Projection optimality, LDLᵀ round trips and rounding convergence.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use posicert::exact::matrix::null_space;
use posicert::exact::{exact_ldlt, round_and_certify, Ldlt, Projector, RatMatrix};
use posicert::gram::{build_for_target, GramOptions, GramSystem};
use posicert::poly::{Grading, Monomial, Polynomial};

fn r(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn random_poly(rng: &mut impl Rng, n_vars: usize, max_deg: u32, terms: usize) -> Polynomial {
    Polynomial::from_terms(
        n_vars,
        (0..terms).map(|_| {
            let e: Vec<u32> = (0..n_vars).map(|_| rng.random_range(0..=max_deg)).collect();
            (Monomial::new(e), r(rng.random_range(-5..=5), rng.random_range(1..=4)))
        }),
    )
}

fn random_system(seed: u64) -> GramSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2;
    let f = (0..3).fold(Polynomial::zero(n), |acc, _| {
        &acc + &random_poly(&mut rng, n, 2, 3).square()
    });
    let f = &f + &Polynomial::from_terms(n, [(Monomial::new(vec![2, 2]), r(1, 1))]);
    let constraints = if seed.is_multiple_of(2) {
        vec![random_poly(&mut rng, n, 1, 2)]
    } else {
        Vec::new()
    };
    build_for_target(f, &[], &constraints, &Grading::single(n), false, GramOptions::default()).unwrap()
}

fn random_matrices(system: &GramSystem, rng: &mut impl Rng) -> Vec<RatMatrix> {
    system
        .blocks
        .iter()
        .map(|b| {
            let d = if b.active { b.working_dim() } else { 0 };
            let mut m = RatMatrix::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    let v = r(rng.random_range(-20..=20), rng.random_range(1..=7));
                    m[(i, j)] = v.clone();
                    m[(j, i)] = v;
                }
            }
            m
        })
        .collect()
}

fn distance_sq(a: &[RatMatrix], b: &[RatMatrix]) -> BigRational {
    a.iter().zip(b).map(|(x, y)| x.sub(y).frobenius_sq()).sum()
}

#[test]
fn projection_is_closest_feasible_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..8 {
        let system = random_system(seed);
        let projector = Projector::new(&system).unwrap();
        let index = system.variable_index();
        let keys: Vec<(usize, usize, usize)> = {
            let mut k: Vec<_> = index.iter().map(|(k, &c)| (c, *k)).collect();
            k.sort();
            k.into_iter().map(|(_, k)| k).collect()
        };
        let rows: Vec<Vec<BigRational>> = projector
            .independent_rows()
            .iter()
            .map(|&k| {
                let mut row = vec![BigRational::zero(); keys.len()];
                for e in &system.equations[k].entries {
                    row[index[&(e.block, e.row, e.col)]] += &e.coeff;
                }
                row
            })
            .collect();
        let kernel = null_space(&RatMatrix::from_rows(rows));

        let q_in = random_matrices(&system, &mut rng);
        let q_proj = projector.project(&q_in).unwrap();
        assert!(projector.residual(&q_proj).iter().all(Zero::is_zero), "seed {seed}");
        let best = distance_sq(&q_proj, &q_in);
        for _ in 0..20 {
            let mut q_any = q_proj.clone();
            for v in 0..kernel.rows() {
                let c = r(rng.random_range(-9..=9), rng.random_range(1..=5));
                for (col, &(b, i, j)) in keys.iter().enumerate() {
                    let delta = &c * &kernel[(v, col)];
                    q_any[b][(i, j)] += &delta;
                    if i != j {
                        q_any[b][(j, i)] += delta;
                    }
                }
            }
            assert!(projector.residual(&q_any).iter().all(Zero::is_zero));
            assert!(best <= distance_sq(&q_any, &q_in), "seed {seed}");
        }
    }
}

#[test]
fn ldlt_round_trips_on_random_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(1..=n);
        let b = RatMatrix::from_fn(n, k, |_, _| r(rng.random_range(-4..=4), rng.random_range(1..=3)));
        let q = b.mul(&b.transpose());
        match exact_ldlt(&q) {
            Ldlt::Factor { l, d } => {
                assert!(d.iter().all(|x| !x.is_negative()));
                let dm = RatMatrix::from_fn(n, n, |i, j| if i == j { d[i].clone() } else { BigRational::zero() });
                assert_eq!(l.mul(&dm).mul(&l.transpose()), q);
            }
            Ldlt::Indefinite { .. } => panic!("B·Bᵀ reported indefinite"),
        }
    }
}

/// With an interior exact solution and a small perturbation, escalating
/// denominators eventually give a PSD projection.
#[test]
fn rounding_recovers_interior_solutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..6 {
        let template = random_system(seed);
        // Interior point: identity plus a small random symmetric part.
        let q0: Vec<RatMatrix> = template
            .blocks
            .iter()
            .map(|b| {
                let d = if b.active { b.working_dim() } else { 0 };
                let mut m = RatMatrix::identity(d);
                for i in 0..d {
                    for j in (i + 1)..d {
                        let v = r(rng.random_range(-3..=3), 37);
                        m[(i, j)] = v.clone();
                        m[(j, i)] = v;
                    }
                }
                m
            })
            .collect();
        let target = template.reconstruct(&q0).unwrap();
        let mut system = template.clone();
        for eq in &mut system.equations {
            eq.rhs = target.coeff(&eq.monomial);
        }
        system.target = target;
        let numeric: Vec<Vec<Vec<f64>>> = q0
            .iter()
            .map(|m| {
                m.to_f64()
                    .into_iter()
                    .map(|row| row.into_iter().map(|v| v + rng.random_range(-1e-9..1e-9)).collect())
                    .collect()
            })
            .collect();
        let report = round_and_certify(&system, &numeric, 0.5, &[100, 10_000, 100_000_000]).unwrap();
        let exact = report.result.unwrap_or_else(|| panic!("seed {seed}: {:?}", report.attempts));
        assert_eq!(system.reconstruct(&exact.matrices).unwrap(), system.target);
    }
}
