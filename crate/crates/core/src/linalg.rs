//! Spectral bound for the FISTA step and cached solves of
//! `(μΦᵀΦ + Q)x = q` with `Q = ρ₁I + ρ₂ccᵀ`.
//!
//! For fat sensing matrices (M < N) the N×N system is never formed: the
//! matrix inversion lemma reduces it to a Cholesky factorization of the
//! M×M matrix `P = I + μΦQ⁻¹Φᵀ`, computed once and reused for every
//! right-hand side, including across an entire regularization path.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{check_len, invalid, Error, Result};
use crate::scalar::Scalar;

pub const POWER_ITERATION_TOL: f64 = 1e-8;
pub const POWER_ITERATION_MAX: usize = 10_000;

/// Largest eigenvalue of `ΦᵀΦ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBound<T> {
    pub lambda_max: T,
    pub iterations_used: usize,
    /// Set when `Φ` is identically zero.
    pub zero_operator: bool,
}

impl<T: Scalar> SpectralBound<T> {
    /// FISTA Lipschitz constant `2λ_max(ΦᵀΦ)`.
    pub fn lipschitz(&self) -> T {
        T::lit(2.0) * self.lambda_max
    }
}

/// Power iteration on `ΦᵀΦ` from a fixed start vector.
pub fn spectral_bound<T: Scalar>(phi: ArrayView2<T>) -> SpectralBound<T> {
    let n = phi.ncols();
    // deterministic, non-degenerate start: splitmix-style hash per coordinate
    let mut v = Array1::from_shape_fn(n, |j| {
        let mut h = (j as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
        T::lit(0.5 + (h >> 11) as f64 / (1u64 << 53) as f64)
    });
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|a| a / norm);

    let tol = T::lit(POWER_ITERATION_TOL);
    let mut estimate = T::zero();
    for it in 1..=POWER_ITERATION_MAX {
        let w = tmatvec(phi, phi.dot(&v).view());
        let rayleigh = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn == T::zero() {
            return SpectralBound {
                lambda_max: T::zero(),
                iterations_used: it,
                zero_operator: phi.iter().all(|a| *a == T::zero()),
            };
        }
        let done = it > 1 && (rayleigh - estimate).abs() <= tol * rayleigh;
        estimate = rayleigh;
        if done {
            return SpectralBound {
                lambda_max: estimate,
                iterations_used: it,
                zero_operator: false,
            };
        }
        v = w / wn;
    }
    SpectralBound {
        lambda_max: estimate,
        iterations_used: POWER_ITERATION_MAX,
        zero_operator: false,
    }
}

/// `Q = ρ₁I + ρ₂ccᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QSpec<T> {
    pub rho1: T,
    pub rank_one: Option<(T, Array1<T>)>,
}

impl<T: Scalar> QSpec<T> {
    pub fn identity(rho1: T) -> Self {
        Self {
            rho1,
            rank_one: None,
        }
    }

    pub fn with_rank_one(rho1: T, rho2: T, c: Array1<T>) -> Self {
        Self {
            rho1,
            rank_one: Some((rho2, c)),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.rho1 > T::zero() && self.rho1.is_finite()) {
            return Err(invalid("rho1", "must be positive"));
        }
        if let Some((rho2, c)) = &self.rank_one {
            if !(*rho2 > T::zero() && rho2.is_finite()) {
                return Err(invalid("rho2", "must be positive"));
            }
            check_len("rank-one vector length", n, c.len())?;
            if !c.iter().all(|a| a.is_finite()) {
                return Err(Error::NonFinite("rank-one vector"));
            }
        }
        Ok(())
    }

    /// Sherman–Morrison coefficient `γ = ρ₂/(ρ₁(ρ₁ + ρ₂cᵀc))`, so that
    /// `Q⁻¹ = ρ₁⁻¹I − γccᵀ`.
    pub fn inverse_coefficient(&self) -> T {
        match &self.rank_one {
            None => T::zero(),
            Some((rho2, c)) => *rho2 / (self.rho1 * (self.rho1 + *rho2 * c.dot(c))),
        }
    }

    /// `Q⁻¹q`.
    pub fn apply_inverse(&self, q: ArrayView1<T>) -> Array1<T> {
        let mut out = q.mapv(|a| a / self.rho1);
        if let Some((_, c)) = &self.rank_one {
            let s = self.inverse_coefficient() * c.dot(&q);
            out.scaled_add(-s, c);
        }
        out
    }

    /// Dense `Q`, for checks and the tall-matrix path.
    pub fn to_dense(&self, n: usize) -> Array2<T> {
        let mut q = Array2::eye(n) * self.rho1;
        if let Some((rho2, c)) = &self.rank_one {
            for i in 0..n {
                for j in 0..n {
                    q[[i, j]] += *rho2 * c[i] * c[j];
                }
            }
        }
        q
    }
}

/// `Aᵀy`, accumulated row by row so a row-major `A` is read contiguously.
pub fn tmatvec<T: Scalar>(a: ArrayView2<T>, y: ArrayView1<T>) -> Array1<T> {
    if !a.is_standard_layout() {
        return a.t().dot(&y);
    }
    let mut out = Array1::zeros(a.ncols());
    for (row, &yi) in a.rows().into_iter().zip(y.iter()) {
        if yi != T::zero() {
            out.scaled_add(yi, &row);
        }
    }
    out
}

thread_local! {
    static FACTORIZATIONS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Number of Cholesky factorizations attempted on the calling thread.
pub fn factorizations_on_this_thread() -> usize {
    FACTORIZATIONS.with(|c| c.get())
}

/// Lower-triangular Cholesky factor `L` with `A = LLᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<T> {
    l: Array2<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn factor(a: ArrayView2<T>) -> Result<Self> {
        let n = a.nrows();
        check_len("square matrix columns", n, a.ncols())?;
        FACTORIZATIONS.with(|c| c.set(c.get() + 1));
        let mut l = Array2::<T>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: d.as_f64(),
                });
            }
            let djj = d.sqrt();
            l[[j, j]] = djj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor_matrix(&self) -> &Array2<T> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `LLᵀx = b` by forward then backward substitution.
    pub fn solve(&self, b: ArrayView1<T>) -> Array1<T> {
        let n = self.dim();
        let mut x = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            let s = row
                .iter()
                .take(i)
                .zip(&x[..i])
                .fold(x[i], |acc, (&lik, &xk)| acc - lik * xk);
            x[i] = s / row[i];
        }
        // Lᵀ sweep by rows of L
        for i in (0..n).rev() {
            let row = self.l.row(i);
            let xi = x[i] / row[i];
            x[i] = xi;
            for (xk, &lik) in x[..i].iter_mut().zip(row.iter()) {
                *xk -= lik * xi;
            }
        }
        Array1::from(x)
    }
}

#[derive(Debug, Clone)]
enum Factorization<T> {
    /// μ = 0: the system is `Q` itself.
    Direct,
    /// M < N: factor of `P = I + μΦQ⁻¹Φᵀ`.
    Reduced(Cholesky<T>),
    /// M ≥ N: factor of `μΦᵀΦ + Q`.
    Full(Cholesky<T>),
}

/// Pre-factored solver for `(μΦᵀΦ + Q)x = q`. Immutable after construction.
#[derive(Debug, Clone)]
pub struct CachedSolver<'a, T> {
    phi: ArrayView2<'a, T>,
    mu: T,
    q: QSpec<T>,
    factor: Factorization<T>,
}

pub fn build_cached_solver<'a, T: Scalar>(
    phi: ArrayView2<'a, T>,
    mu: T,
    qspec: QSpec<T>,
) -> Result<CachedSolver<'a, T>> {
    let (m, n) = phi.dim();
    if !(mu >= T::zero() && mu.is_finite()) {
        return Err(invalid("mu", "must be non-negative"));
    }
    qspec.validate(n)?;
    let factor = if mu == T::zero() {
        Factorization::Direct
    } else if m < n {
        // ΦQ⁻¹Φᵀ = ρ₁⁻¹ΦΦᵀ − γ(Φc)(Φc)ᵀ
        let mut p = phi.dot(&phi.t()) * (mu / qspec.rho1);
        if let Some((_, c)) = &qspec.rank_one {
            let pc = phi.dot(c);
            let g = mu * qspec.inverse_coefficient();
            for i in 0..m {
                for j in 0..m {
                    p[[i, j]] -= g * pc[i] * pc[j];
                }
            }
        }
        p.diag_mut().mapv_inplace(|d| d + T::one());
        Factorization::Reduced(Cholesky::factor(p.view())?)
    } else {
        let h = phi.t().dot(&phi) * mu + qspec.to_dense(n);
        Factorization::Full(Cholesky::factor(h.view())?)
    };
    Ok(CachedSolver {
        phi,
        mu,
        q: qspec,
        factor,
    })
}

impl<'a, T: Scalar> CachedSolver<'a, T> {
    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn qspec(&self) -> &QSpec<T> {
        &self.q
    }

    pub fn cols(&self) -> usize {
        self.phi.ncols()
    }

    /// True when the M×M reduced system was factored.
    pub fn is_reduced(&self) -> bool {
        matches!(self.factor, Factorization::Reduced(_))
    }

    /// The stored Cholesky factor, if any.
    pub fn cholesky(&self) -> Option<&Cholesky<T>> {
        match &self.factor {
            Factorization::Direct => None,
            Factorization::Reduced(c) | Factorization::Full(c) => Some(c),
        }
    }

    /// The matrix that was factored (`P` or `μΦᵀΦ + Q`).
    pub fn factored_matrix(&self) -> Option<Array2<T>> {
        let (m, n) = self.phi.dim();
        match &self.factor {
            Factorization::Direct => None,
            Factorization::Reduced(_) => {
                let mut qinv_phit = Array2::zeros((n, m));
                for (i, row) in self.phi.axis_iter(Axis(0)).enumerate() {
                    qinv_phit.column_mut(i).assign(&self.q.apply_inverse(row));
                }
                let mut p = self.phi.dot(&qinv_phit) * self.mu;
                p.diag_mut().mapv_inplace(|d| d + T::one());
                Some(p)
            }
            Factorization::Full(_) => {
                Some(self.phi.t().dot(&self.phi) * self.mu + self.q.to_dense(n))
            }
        }
    }

    /// `(μΦᵀΦ + Q)⁻¹q`.
    pub fn solve(&self, q: ArrayView1<T>) -> Result<Array1<T>> {
        check_len("right-hand side length", self.cols(), q.len())?;
        Ok(self.solve_unchecked(q))
    }

    pub(crate) fn solve_unchecked(&self, q: ArrayView1<T>) -> Array1<T> {
        match &self.factor {
            Factorization::Direct => self.q.apply_inverse(q),
            Factorization::Full(l) => l.solve(q),
            Factorization::Reduced(l) => {
                // Q⁻¹(q − Φᵀ P⁻¹ (μΦQ⁻¹q))
                let qinv_q = self.q.apply_inverse(q);
                let t = self.phi.dot(&qinv_q) * self.mu;
                let w = l.solve(t.view());
                let inner = &q - &tmatvec(self.phi, w.view());
                self.q.apply_inverse(inner.view())
            }
        }
    }
}

/// Free-function form of [`CachedSolver::solve`].
pub fn cached_solve<T: Scalar>(
    solver: &CachedSolver<'_, T>,
    q: ArrayView1<T>,
) -> Result<Array1<T>> {
    solver.solve(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(m: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((m, n), |_| rng.sample(StandardNormal))
    }

    fn to_na(a: &Array2<f64>) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
    }

    fn dense_solve(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
        let x = to_na(a)
            .lu()
            .solve(&nalgebra::DVector::from_iterator(
                b.len(),
                b.iter().copied(),
            ))
            .unwrap();
        Array1::from_iter(x.iter().copied())
    }

    fn rel_err(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        let d = a - b;
        d.dot(&d).sqrt() / b.dot(b).sqrt().max(1e-300)
    }

    #[test]
    fn spectral_examples() {
        let eye = Array2::<f64>::eye(6);
        assert_relative_eq!(
            spectral_bound(eye.view()).lambda_max,
            1.0,
            max_relative = 1e-10
        );
        let d = array![[1.0, 0.0], [0.0, 2.0]];
        assert_relative_eq!(
            spectral_bound(d.view()).lambda_max,
            4.0,
            max_relative = 1e-8
        );
        let z = Array2::<f64>::zeros((3, 4));
        let b = spectral_bound(z.view());
        assert_eq!(b.lambda_max, 0.0);
        assert!(b.zero_operator);
    }

    #[test]
    fn spectral_matches_dense_eigensolver() {
        for seed in 0..5 {
            let phi = gaussian(20, 50, seed);
            let gram = phi.t().dot(&phi);
            let eig = nalgebra::SymmetricEigen::new(to_na(&gram));
            let oracle = eig.eigenvalues.iter().copied().fold(f64::MIN, f64::max);
            let got = spectral_bound(phi.view());
            assert!(
                ((got.lambda_max - oracle) / oracle).abs() < 1e-6,
                "{} vs {oracle}",
                got.lambda_max
            );
        }
    }

    #[test]
    fn cholesky_reconstructs_and_rejects_indefinite() {
        let a = gaussian(7, 7, 3);
        let spd = a.dot(&a.t()) + Array2::<f64>::eye(7);
        let c = Cholesky::factor(spd.view()).unwrap();
        let l = c.factor_matrix();
        let back = l.dot(&l.t());
        let err = (&back - &spd).mapv(|v| v * v).sum().sqrt() / spd.mapv(|v| v * v).sum().sqrt();
        assert!(err < 1e-12);
        let bad = array![[1.0, 2.0], [2.0, 1.0]];
        match Cholesky::factor(bad.view()) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cached_degenerate_cases() {
        let phi = gaussian(4, 9, 1);
        let q = Array1::from_iter((0..9).map(|i| i as f64 - 3.0));
        let s = build_cached_solver(phi.view(), 0.0, QSpec::identity(1.0)).unwrap();
        assert_eq!(s.solve(q.view()).unwrap(), q);
        let zero = Array2::zeros((4, 9));
        let s = build_cached_solver(zero.view(), 2.0, QSpec::identity(4.0)).unwrap();
        let x = s.solve(q.view()).unwrap();
        assert!(rel_err(&x, &(&q / 4.0)) < 1e-15);
        let s = build_cached_solver(phi.view(), 2.0, QSpec::identity(1.0)).unwrap();
        assert_eq!(s.solve(Array1::zeros(9).view()).unwrap(), Array1::zeros(9));
        assert!(s.solve(Array1::zeros(3).view()).is_err());
        assert!(build_cached_solver(phi.view(), 1.0, QSpec::identity(0.0)).is_err());
        assert!(build_cached_solver(phi.view(), -1.0, QSpec::identity(1.0)).is_err());
    }

    #[test]
    fn cached_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (m, n, seed) in [(8, 20, 1), (20, 8, 2), (12, 12, 3)] {
            let phi = gaussian(m, n, seed);
            let c = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
            for qspec in [
                QSpec::identity(3.0),
                QSpec::with_rank_one(3.0, 1.5, c.clone()),
            ] {
                let solver = build_cached_solver(phi.view(), 2.0, qspec.clone()).unwrap();
                assert_eq!(solver.is_reduced(), m < n);
                let dense = phi.t().dot(&phi) * 2.0 + qspec.to_dense(n);
                for _ in 0..5 {
                    let q = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
                    let x = cached_solve(&solver, q.view()).unwrap();
                    assert!(rel_err(&x, &dense_solve(&dense, &q)) < 1e-10);
                    let resid = dense.dot(&x) - &q;
                    assert!(resid.dot(&resid).sqrt() / q.dot(&q).sqrt() <= 1e-10);
                    // pure function of q
                    assert_eq!(x, solver.solve(q.view()).unwrap());
                }
                let p = solver.factored_matrix().unwrap();
                let l = solver.cholesky().unwrap().factor_matrix();
                let err = (&l.dot(&l.t()) - &p).mapv(|v| v * v).sum().sqrt()
                    / p.mapv(|v| v * v).sum().sqrt();
                assert!(err < 1e-10);
            }
        }
    }

    #[test]
    fn sherman_morrison_inverse_is_exact() {
        let c = array![0.3, -1.2, 2.0, 0.7];
        let q = QSpec::with_rank_one(1.7, 0.9, c.clone());
        let dense = q.to_dense(4);
        let mut inv = Array2::<f64>::eye(4) / 1.7;
        let g = q.inverse_coefficient();
        for i in 0..4 {
            for j in 0..4 {
                inv[[i, j]] -= g * c[i] * c[j];
            }
        }
        let prod = dense.dot(&inv);
        assert!((&prod - &Array2::<f64>::eye(4))
            .iter()
            .all(|e| e.abs() < 1e-10));

        // the coefficient ρ₁⁻²(ρ₂⁻¹ + ρ₁⁻¹cᵀc) does not invert Q
        let (r1, r2) = (1.7f64, 0.9f64);
        let printed = (1.0 / r2 + c.dot(&c) / r1) / (r1 * r1);
        let mut bad = Array2::<f64>::eye(4) / r1;
        for i in 0..4 {
            for j in 0..4 {
                bad[[i, j]] -= printed * c[i] * c[j];
            }
        }
        assert!((&dense.dot(&bad) - &Array2::<f64>::eye(4))
            .iter()
            .any(|e| e.abs() > 1e-3));
    }

    #[test]
    fn works_in_single_precision() {
        let phi = gaussian(5, 12, 4).mapv(|v| v as f32);
        let s = build_cached_solver(phi.view(), 1.0f32, QSpec::identity(2.0f32)).unwrap();
        let q = Array1::<f32>::ones(12);
        let x = s.solve(q.view()).unwrap();
        let back = phi.t().dot(&phi.dot(&x)) + &x * 2.0;
        assert!(back.iter().zip(q.iter()).all(|(a, b)| (a - b).abs() < 1e-4));
    }

    proptest! {
        #[test]
        fn cached_solve_agrees_with_dense_solve(
            m in 1usize..16,
            n in 1usize..16,
            seed in 0u64..1000,
            mu in 0.1f64..5.0,
            rho1 in 0.1f64..5.0,
            rho2 in 0.0f64..5.0,
        ) {
            let phi = gaussian(m, n, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let c = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
            let q = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
            let qspec = QSpec::with_rank_one(rho1, rho2, c);
            let solver = build_cached_solver(phi.view(), mu, qspec.clone()).unwrap();
            let dense = phi.t().dot(&phi) * mu + qspec.to_dense(n);
            let x = cached_solve(&solver, q.view()).unwrap();
            prop_assert!(rel_err(&x, &dense_solve(&dense, &q)) < 1e-10);
        }
    }
}
