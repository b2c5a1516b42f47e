//! Choosing λ along the regularization path.
//!
//! The selected λ is the largest one whose solution keeps the residual
//! criterion within a budget `ε`. A warm-started geometric grid descends
//! from λ_max until the criterion first meets the budget, then bisection
//! narrows the crossing.

use std::io::{self, Write};
use std::time::Instant;

use ndarray::ArrayView1;

use crate::error::{invalid, Result};
use crate::model::{HuberParams, SensingProblem};
use crate::scalar::Scalar;
use crate::solvers::{LossKind, Recovery, Solution};

/// Residual criterion compared against `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// `Σρ(rᵢ)`.
    HuberResidual,
    /// `‖r‖₁`.
    L1Residual,
    /// `‖r‖₂²`.
    L2Residual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig<T> {
    pub grid_points: usize,
    pub decades: T,
    pub bisect_rel_width: T,
    pub epsilon: T,
    pub criterion: Criterion,
}

impl<T: Scalar> PathConfig<T> {
    /// Defaults: 20 grid points over 4 decades, bisection to 1% width.
    pub fn new(epsilon: T, criterion: Criterion) -> Result<Self> {
        let cfg = Self {
            grid_points: 20,
            decades: T::lit(4.0),
            bisect_rel_width: T::lit(1e-2),
            epsilon,
            criterion,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 {
            return Err(invalid("grid_points", "at least two points are required"));
        }
        if !(self.decades > T::zero() && self.decades.is_finite()) {
            return Err(invalid("decades", "must be positive"));
        }
        if !(self.bisect_rel_width > T::zero() && self.bisect_rel_width.is_finite()) {
            return Err(invalid("bisect_rel_width", "must be positive"));
        }
        if !(self.epsilon > T::zero() && self.epsilon.is_finite()) {
            return Err(invalid("epsilon", "must be positive"));
        }
        Ok(())
    }

    /// The coarse grid, from `lambda_max` downwards.
    pub fn grid(&self, lambda_max: T) -> Vec<T> {
        let last = T::lit((self.grid_points - 1) as f64);
        (0..self.grid_points)
            .map(|i| lambda_max * T::lit(10.0).powf(-self.decades * T::lit(i as f64) / last))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStatus {
    Met,
    /// No grid point met the budget; the smallest-λ solution is returned.
    NotMet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Grid,
    Bisection,
}

/// One solve along the path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord<T> {
    pub lambda: T,
    pub criterion: T,
    pub l1_norm: T,
    pub nnz: usize,
    pub iterations: usize,
    pub seconds: f64,
    pub stage: Stage,
}

#[derive(Debug, Clone)]
pub struct PathResult<T, D: ndarray::Dimension> {
    pub lambda_star: T,
    pub solution: Solution<T, D>,
    /// Every solve, sorted by decreasing λ.
    pub records: Vec<PathRecord<T>>,
    pub status: PathStatus,
    /// Factorizations held by the solver for the whole path.
    pub factorizations: usize,
}

/// Smallest λ with the zero solution for the given loss:
/// `‖Φᵀψ(y)‖∞`, `‖Φᵀy‖∞` or `‖Φᵀsign(y)‖∞`.
pub fn lambda_max<T: Scalar>(
    prob: &SensingProblem<T>,
    params: &HuberParams<T>,
    loss: LossKind,
) -> T {
    let w = match loss {
        LossKind::Huber => prob.y().mapv(|v| params.psi(v)),
        LossKind::Quadratic => prob.y().clone(),
        LossKind::L1 => prob.y().mapv(|v| {
            if v == T::zero() {
                T::zero()
            } else {
                v.signum()
            }
        }),
    };
    prob.phi()
        .t()
        .dot(&w)
        .iter()
        .fold(T::zero(), |m, v| m.max(v.abs()))
}

pub fn criterion_value<T: Scalar>(r: ArrayView1<T>, params: &HuberParams<T>, kind: Criterion) -> T {
    match kind {
        Criterion::HuberResidual => r.iter().fold(T::zero(), |acc, &v| acc + params.rho(v)),
        Criterion::L1Residual => r.iter().fold(T::zero(), |acc, &v| acc + v.abs()),
        Criterion::L2Residual => r.iter().fold(T::zero(), |acc, &v| acc + v * v),
    }
}

/// Residual budget `ε = M·E[crit(n)]` for `n ~ N(0, σ²)`.
///
/// Huber: closed-form Gaussian expectation of `ρ`; ℓ1: `M·σ·√(2/π)`;
/// ℓ2: `M·σ²`.
pub fn estimate_epsilon<T: Scalar>(
    params: &HuberParams<T>,
    m: usize,
    sigma: T,
    kind: Criterion,
) -> Result<T> {
    if m == 0 {
        return Err(invalid("m", "must be at least 1"));
    }
    if !(sigma >= T::zero() && sigma.is_finite()) {
        return Err(invalid("sigma", "must be non-negative"));
    }
    let s = sigma.as_f64();
    let per = match kind {
        Criterion::L1Residual => s * (2.0 / std::f64::consts::PI).sqrt(),
        Criterion::L2Residual => s * s,
        Criterion::HuberResidual => gaussian_huber_mean(params.threshold().as_f64(), s),
    };
    Ok(T::lit(m as f64 * per))
}

/// `E[ρ(n)]` for `n ~ N(0, σ²)` with threshold `c`.
fn gaussian_huber_mean(c: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    if c.is_infinite() {
        return sigma * sigma / 2.0;
    }
    let a = c / sigma;
    let pdf = (-a * a / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let upper = 0.5 * libm::erfc(a / std::f64::consts::SQRT_2);
    let inside = 1.0 - 2.0 * upper;
    sigma * sigma / 2.0 * (inside - 2.0 * a * pdf) + 2.0 * c * sigma * pdf - c * c * upper
}

/// Walks the path with `solver` and returns the largest λ meeting the budget.
///
/// The solver is built once, so any factorization it holds serves the whole
/// path.
pub fn select_lambda<T: Scalar, S: Recovery<T>>(
    solver: &S,
    params: &HuberParams<T>,
    cfg: &PathConfig<T>,
) -> Result<PathResult<T, S::Dim>> {
    cfg.validate()?;
    let lmax = solver.zero_threshold();
    if !(lmax > T::zero()) {
        return Err(invalid("y", "zero solution is optimal for every λ"));
    }
    let mut records = Vec::new();
    let mut eval = |lambda: T,
                    warm: Option<&Solution<T, S::Dim>>,
                    stage: Stage|
     -> Result<(Solution<T, S::Dim>, bool)> {
        let start = Instant::now();
        let sol = solver.solve_from(lambda, warm.map(|s| s.x.view()), &mut ())?;
        let seconds = start.elapsed().as_secs_f64();
        let crit = criterion_value(solver.residual(sol.x.view()).view(), params, cfg.criterion);
        records.push(PathRecord {
            lambda,
            criterion: crit,
            l1_norm: sol.l1_norm(),
            nnz: sol.nnz(),
            iterations: sol.iterations,
            seconds,
            stage,
        });
        Ok((sol, crit <= cfg.epsilon))
    };

    let grid = cfg.grid(lmax);
    let (mut prev, ok) = eval(grid[0], None, Stage::Grid)?;
    let mut outcome = None;
    if ok {
        outcome = Some((grid[0], prev.clone(), PathStatus::Met));
    } else {
        for pair in grid.windows(2) {
            let (hi_lambda, lo_lambda) = (pair[0], pair[1]);
            let (sol, ok) = eval(lo_lambda, Some(&prev), Stage::Grid)?;
            if !ok {
                prev = sol;
                continue;
            }
            let (mut hi, mut lo, mut best) = (hi_lambda, lo_lambda, sol);
            while (hi - lo) / lo > cfg.bisect_rel_width {
                let mid = (hi * lo).sqrt();
                let (sol, ok) = eval(mid, Some(&best), Stage::Bisection)?;
                if ok {
                    lo = mid;
                    best = sol;
                } else {
                    hi = mid;
                }
            }
            outcome = Some((lo, best, PathStatus::Met));
            break;
        }
    }
    let (lambda_star, solution, status) = match outcome {
        Some(o) => o,
        None => (
            *grid.last().expect("grid has points"),
            prev,
            PathStatus::NotMet,
        ),
    };
    records.sort_by(|a, b| {
        b.lambda
            .partial_cmp(&a.lambda)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(PathResult {
        lambda_star,
        solution,
        records,
        status,
        factorizations: solver.factorizations(),
    })
}

pub const PATH_CSV_HEADER: &str = "lambda,criterion,l1_norm,nnz,iterations,seconds";

/// Writes records as CSV with [`PATH_CSV_HEADER`] columns.
pub fn write_path_csv<T: Scalar, W: Write>(
    records: &[PathRecord<T>],
    mut out: W,
) -> io::Result<()> {
    writeln!(out, "{PATH_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{:e},{:e},{:e},{},{},{:.6}",
            r.lambda.as_f64(),
            r.criterion.as_f64(),
            r.l1_norm.as_f64(),
            r.nnz,
            r.iterations,
            r.seconds
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{AdmmL1Loss, AdmmRobust, FistaRobust, SolverOptions};
    use ndarray::{array, Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn instance(
        seed: u64,
        m: usize,
        n: usize,
        k: usize,
        sigma: f64,
    ) -> (SensingProblem<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (m as f64).sqrt();
        let phi = Array2::from_shape_fn((m, n), |_| scale * rng.sample::<f64, _>(StandardNormal));
        let mut x = Array1::zeros(n);
        for i in rand::seq::index::sample(&mut rng, n, k) {
            x[i] = 1.0 + rng.random::<f64>();
        }
        let mut y = phi.dot(&x);
        if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).unwrap();
            y.mapv_inplace(|v| v + noise.sample(&mut rng));
        }
        (SensingProblem::new(phi, y).unwrap(), x)
    }

    #[test]
    fn lambda_max_examples() {
        let prob = SensingProblem::new(Array2::eye(2), array![3.0, -1.0]).unwrap();
        let quad = HuberParams::quadratic();
        assert_eq!(lambda_max(&prob, &quad, LossKind::Quadratic), 3.0);
        let wide = HuberParams::from_threshold(5.0).unwrap();
        assert_eq!(lambda_max(&prob, &wide, LossKind::Huber), 3.0);
        assert_eq!(lambda_max(&prob, &wide, LossKind::L1), 1.0);
        let zero = prob.with_measurements(array![0.0, 0.0]).unwrap();
        assert_eq!(lambda_max(&zero, &wide, LossKind::Huber), 0.0);
    }

    #[test]
    fn huber_lambda_max_round_trip() {
        let prob = SensingProblem::new(Array2::eye(2), array![10.0, 0.5]).unwrap();
        let params = HuberParams::from_threshold(1.0).unwrap();
        let lmax = lambda_max(&prob, &params, LossKind::Huber);
        assert_eq!(lmax, 1.0);
        let solver = AdmmRobust::new(&prob, params, SolverOptions::default()).unwrap();
        assert!(solver.solve(1.01).unwrap().x.iter().all(|v| *v == 0.0));
        assert!(solver.solve(0.9).unwrap().x.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn criterion_examples() {
        let params = HuberParams::from_threshold(1.0).unwrap();
        let zero = Array1::<f64>::zeros(4);
        for kind in [
            Criterion::HuberResidual,
            Criterion::L1Residual,
            Criterion::L2Residual,
        ] {
            assert_eq!(criterion_value(zero.view(), &params, kind), 0.0);
        }
        let r = array![0.5, 2.0];
        assert_eq!(
            criterion_value(r.view(), &params, Criterion::HuberResidual),
            1.625
        );
        assert_eq!(
            criterion_value(r.view(), &params, Criterion::L1Residual),
            2.5
        );
        assert_eq!(
            criterion_value(r.view(), &params, Criterion::L2Residual),
            4.25
        );
    }

    #[test]
    fn criterion_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r: Array1<f64> = Array1::from_shape_fn(200, |_| rng.random_range(-4.0..4.0));
        let c = 1.3;
        let params = HuberParams::from_threshold(c).unwrap();
        let mut huber = 0.0;
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        for &v in r.iter() {
            huber += if v.abs() <= c {
                0.5 * v * v
            } else {
                c * v.abs() - 0.5 * c * c
            };
            l1 += v.abs();
            l2 += v * v;
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        assert!(close(
            criterion_value(r.view(), &params, Criterion::HuberResidual),
            huber
        ));
        assert!(close(
            criterion_value(r.view(), &params, Criterion::L1Residual),
            l1
        ));
        assert!(close(
            criterion_value(r.view(), &params, Criterion::L2Residual),
            l2
        ));
    }

    #[test]
    fn epsilon_limits() {
        let params = HuberParams::from_threshold(1.0).unwrap();
        let e: f64 = estimate_epsilon(&params, 50, 1e-9, Criterion::HuberResidual).unwrap();
        assert!(e < 1e-15);
        let quad = HuberParams::quadratic();
        let e: f64 = estimate_epsilon(&quad, 50, 1.0, Criterion::HuberResidual).unwrap();
        assert!((e - 25.0).abs() < 1e-12);
        let wide = HuberParams::from_threshold(1e6).unwrap();
        let e: f64 = estimate_epsilon(&wide, 50, 1.0, Criterion::HuberResidual).unwrap();
        assert!((e - 25.0).abs() < 1e-9);
        let e: f64 = estimate_epsilon(&params, 10, 2.0, Criterion::L2Residual).unwrap();
        assert!((e - 40.0).abs() < 1e-12);
        assert!(estimate_epsilon(&params, 0, 1.0, Criterion::L1Residual).is_err());
    }

    #[test]
    fn epsilon_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = HuberParams::from_threshold(1.0).unwrap();
        let draws = 1_000_000;
        let (mut huber, mut l1) = (0.0, 0.0);
        for _ in 0..draws {
            let n: f64 = rng.sample(StandardNormal);
            huber += params.rho(n);
            l1 += n.abs();
        }
        let m = 40;
        let mc_huber = m as f64 * huber / draws as f64;
        let mc_l1 = m as f64 * l1 / draws as f64;
        let e: f64 = estimate_epsilon(&params, m, 1.0, Criterion::HuberResidual).unwrap();
        assert!((e - mc_huber).abs() <= 0.01 * mc_huber, "{e} vs {mc_huber}");
        let e: f64 = estimate_epsilon(&params, m, 1.0, Criterion::L1Residual).unwrap();
        assert!((e - mc_l1).abs() <= 0.01 * mc_l1, "{e} vs {mc_l1}");
    }

    #[test]
    fn config_validation_and_grid() {
        assert!(PathConfig::new(0.0f64, Criterion::L1Residual).is_err());
        let mut cfg = PathConfig::new(1.0f64, Criterion::L1Residual).unwrap();
        let g = cfg.grid(2.0);
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 2.0);
        assert!((g[19] - 2e-4).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        cfg.grid_points = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn generous_budget_keeps_zero_solution() {
        let (prob, _) = instance(1, 30, 60, 5, 0.05);
        let params = HuberParams::classical(0.05).unwrap();
        let budget = criterion_value(prob.y().view(), &params, Criterion::HuberResidual);
        let solver = AdmmRobust::new(&prob, params, SolverOptions::default()).unwrap();
        let cfg = PathConfig::new(budget, Criterion::HuberResidual).unwrap();
        let res = select_lambda(&solver, &params, &cfg).unwrap();
        assert_eq!(res.status, PathStatus::Met);
        assert_eq!(res.lambda_star, solver.zero_threshold());
        assert!(res.solution.x.iter().all(|v| *v == 0.0));
        assert_eq!(res.records.len(), 1);
    }

    #[test]
    fn noiseless_path_recovers_the_signal() {
        let (prob, x) = instance(2, 40, 60, 5, 0.0);
        let params = HuberParams::classical(0.05).unwrap();
        let solver = AdmmRobust::new(&prob, params, SolverOptions::tight(1e-9, 100_000)).unwrap();
        let tiny = 1e-7 * criterion_value(prob.y().view(), &params, Criterion::HuberResidual);
        let cfg = PathConfig::new(tiny, Criterion::HuberResidual).unwrap();
        let res = select_lambda(&solver, &params, &cfg).unwrap();
        assert_eq!(res.status, PathStatus::Met);
        assert!(res.lambda_star < 1e-2 * solver.zero_threshold());
        let err = (&res.solution.x - &x).mapv(|v| v * v).sum().sqrt() / x.dot(&x).sqrt();
        assert!(err <= 1e-2, "{err}");
    }

    #[test]
    fn path_is_monotone_and_uses_one_factorization() {
        let (prob, _) = instance(4, 30, 60, 5, 0.05);
        let params = HuberParams::classical(0.05).unwrap();
        let before = crate::linalg::factorizations_on_this_thread();
        let solver = AdmmRobust::new(&prob, params, SolverOptions::tight(1e-8, 100_000)).unwrap();
        let eps = estimate_epsilon(&params, 30, 0.05, Criterion::HuberResidual).unwrap();
        let cfg = PathConfig::new(eps, Criterion::HuberResidual).unwrap();
        let res = select_lambda(&solver, &params, &cfg).unwrap();
        assert_eq!(crate::linalg::factorizations_on_this_thread() - before, 1);
        assert_eq!(res.factorizations, 1);
        assert_eq!(res.status, PathStatus::Met);
        assert!(res.records.windows(2).all(|w| w[0].lambda > w[1].lambda));
        let grid: Vec<_> = res
            .records
            .iter()
            .filter(|r| r.stage == Stage::Grid)
            .collect();
        for w in grid.windows(2) {
            assert!(
                w[1].criterion <= w[0].criterion * (1.0 + 1e-6),
                "{} > {}",
                w[1].criterion,
                w[0].criterion
            );
            assert!(w[1].l1_norm >= w[0].l1_norm * (1.0 - 1e-6));
        }
        assert!(
            criterion_value(
                solver.residual(res.solution.x.view()).view(),
                &params,
                cfg.criterion
            ) <= eps
        );
    }

    #[test]
    fn bisection_lands_within_width_of_dense_crossing() {
        let (prob, _) = instance(5, 30, 60, 5, 0.05);
        let params = HuberParams::classical(0.05).unwrap();
        let solver = FistaRobust::new(&prob, params, SolverOptions::tight(1e-9, 200_000)).unwrap();
        let eps = estimate_epsilon(&params, 30, 0.05, Criterion::HuberResidual).unwrap();
        let cfg = PathConfig::new(eps, Criterion::HuberResidual).unwrap();
        let res = select_lambda(&solver, &params, &cfg).unwrap();
        let grid = cfg.grid(solver.zero_threshold());
        let i = grid.iter().position(|&l| l < res.lambda_star).unwrap();
        let (hi, lo) = (grid[i - 1], grid[i]);
        // dense geometric scan of the bracketing interval
        let steps = 400;
        let mut crossing = lo;
        let mut warm: Option<Array1<f64>> = None;
        for j in 0..=steps {
            let l = hi * (lo / hi).powf(j as f64 / steps as f64);
            let s = solver
                .solve_from(l, warm.as_ref().map(|w| w.view()), &mut ())
                .unwrap();
            let c = criterion_value(solver.residual(s.x.view()).view(), &params, cfg.criterion);
            warm = Some(s.x);
            if c <= eps {
                crossing = l;
                break;
            }
        }
        let spacing = (hi / lo).powf(1.0 / steps as f64) - 1.0;
        let rel = (res.lambda_star - crossing).abs() / crossing;
        assert!(rel <= cfg.bisect_rel_width + spacing, "{rel}");
    }

    #[test]
    fn unattainable_budget_reports_not_met() {
        let (prob, _) = instance(6, 30, 60, 5, 0.05);
        let solver = AdmmL1Loss::new(&prob, SolverOptions::default()).unwrap();
        let params = HuberParams::quadratic();
        let cfg = PathConfig::new(1e-12, Criterion::L1Residual).unwrap();
        let res = select_lambda(&solver, &params, &cfg).unwrap();
        assert_eq!(res.status, PathStatus::NotMet);
        assert_eq!(res.records.len(), 20);
        assert!((res.lambda_star - 1e-4 * solver.zero_threshold()).abs() < 1e-12);
    }

    #[test]
    fn csv_export() {
        let rec = PathRecord {
            lambda: 0.5f64,
            criterion: 2.0,
            l1_norm: 1.5,
            nnz: 3,
            iterations: 17,
            seconds: 0.25,
            stage: Stage::Grid,
        };
        let mut out = Vec::new();
        write_path_csv(&[rec], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(PATH_CSV_HEADER));
        assert_eq!(lines.next(), Some("5e-1,2e0,1.5e0,3,17,0.250000"));
    }
}
