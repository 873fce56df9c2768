//! Shared generators for the integration tests.

use nalgebra::{DMatrix, DVector};
use posicert::sdp::{SdpProblem, SymEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random constraints on blocks of size 2..=6 with right-hand side
/// `A(Q0)` for a random `Q0 ≻ 0`; the first constraint is the total trace,
/// which bounds the margin. Rows are kept linearly independent, as the
/// solver requires.
pub fn instance(seed: u64) -> (SdpProblem, Vec<DMatrix<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_blocks = rng.random_range(1..=3);
    let dims: Vec<usize> = (0..n_blocks).map(|_| rng.random_range(2..=6)).collect();
    let q0: Vec<DMatrix<f64>> = dims
        .iter()
        .map(|&n| {
            let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            &b * b.transpose() + DMatrix::identity(n, n) * 0.5
        })
        .collect();
    let n_vars: usize = dims.iter().map(|n| n * (n + 1) / 2).sum();
    let m = rng.random_range(2..=(n_vars / 2).max(2));
    let mut rows = Vec::with_capacity(m);
    let trace: Vec<SymEntry> = dims
        .iter()
        .enumerate()
        .flat_map(|(b, &n)| (0..n).map(move |i| SymEntry::new(b, i, i, 1.0)))
        .collect();
    rows.push(trace);
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n * (n + 1) / 2;
            Some(o)
        })
        .collect();
    let svec = |row: &[SymEntry]| {
        let mut v = DVector::<f64>::zeros(n_vars);
        for e in row {
            let (i, j) = (e.row.min(e.col), e.row.max(e.col));
            let n = dims[e.block];
            // Row-major index of (i, j) within the upper triangle.
            let idx = offsets[e.block] + i * n - i * (i + 1) / 2 + j;
            v[idx] += e.value;
        }
        v
    };
    let mut stacked: Vec<DVector<f64>> = vec![svec(&rows[0])];
    while rows.len() < m {
        let k = rng.random_range(1..=4);
        let row: Vec<SymEntry> = (0..k)
            .map(|_| {
                let b = rng.random_range(0..dims.len());
                let (i, j) = (rng.random_range(0..dims[b]), rng.random_range(0..dims[b]));
                SymEntry::new(b, i, j, rng.random_range(-2.0..2.0))
            })
            .collect();
        stacked.push(svec(&row));
        let sv = DMatrix::from_columns(&stacked).singular_values();
        let max = sv.max();
        if sv.min() > 1e-6 * max {
            rows.push(row);
        } else {
            stacked.pop();
        }
    }
    let with_rhs = rows
        .into_iter()
        .map(|row| {
            let rhs = row
                .iter()
                .map(|e| {
                    let w = if e.row == e.col { 1.0 } else { 2.0 };
                    w * e.value * q0[e.block][(e.row, e.col)]
                })
                .sum();
            (row, rhs)
        })
        .collect();
    (SdpProblem::margin(dims, with_rhs), q0)
}
