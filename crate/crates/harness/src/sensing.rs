use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{input, Result};
use crate::seeds::rng;

/// `M×N` matrix of i.i.d. `N(0, 1/M)` entries.
pub fn gen_sensing_matrix(m: usize, n: usize, seed: u64) -> Result<Array2<f64>> {
    if m == 0 || n == 0 {
        return Err(input("sensing matrix dimensions must be positive"));
    }
    let mut rng = rng(seed);
    let scale = 1.0 / (m as f64).sqrt();
    Ok(Array2::from_shape_fn((m, n), |_| {
        scale * rng.sample::<f64, _>(StandardNormal)
    }))
}

/// Gaussian matrix with orthonormalized rows, so `ΦΦᵀ = I`. Needs `M ≤ N`.
pub fn gen_orthogonal_matrix(m: usize, n: usize, seed: u64) -> Result<Array2<f64>> {
    if m > n {
        return Err(input(format!("orthonormal rows need M ≤ N, got {m} > {n}")));
    }
    let mut a = gen_sensing_matrix(m, n, seed)?;
    for i in 0..m {
        // two Gram-Schmidt passes
        for _ in 0..2 {
            for j in 0..i {
                let d = a.row(i).dot(&a.row(j));
                let rj = a.row(j).to_owned();
                a.row_mut(i).scaled_add(-d, &rj);
            }
        }
        let norm = a.row(i).dot(&a.row(i)).sqrt();
        if norm == 0.0 {
            return Err(input("degenerate draw while orthonormalizing"));
        }
        a.row_mut(i).mapv_inplace(|v| v / norm);
    }
    Ok(a)
}
