//! Recovery algorithms and their shared bookkeeping.
//!
//! Every solver minimizes `loss(y − Φx) + λ·penalty(x)`:
//!
//! | solver | loss | penalty | engine |
//! |---|---|---|---|
//! | [`FistaRobust`] | Huber | ℓ1 (+ β‖x‖²) | accelerated proximal gradient |
//! | [`AdmmRobust`] | Huber | ℓ1 (+ β‖x‖²) | generalized ADMM, one MM step per iteration |
//! | [`NestedRobust`] | Huber | ℓ1 (+ β‖x‖²) | outer MM loop around an inner ADMM |
//! | [`AdmmAffine`] | Huber | ℓ1 s.t. `cᵀx = 1` | generalized ADMM, two multipliers |
//! | [`AdmmL1Loss`] | ℓ1 | ℓ1 | ADMM with two splittings |
//! | [`MultiTask`] | Huber per task | Σ row ℓ2 norms | FISTA or generalized ADMM |
//!
//! Plain (non-robust) CS is [`AdmmRobust`] with [`HuberParams::quadratic`].
//!
//! [`HuberParams::quadratic`]: crate::model::HuberParams::quadratic

mod admm;
mod affine;
mod fista;
mod l1loss;
mod multitask;
mod nested;

use std::time::Instant;

use ndarray::{Array, Array1, ArrayView, ArrayView1, Dimension, Ix1};

use crate::error::{check_len, invalid, Result};
use crate::model::{HuberParams, SensingProblem};
use crate::scalar::Scalar;

pub use admm::{solve_admm_robust, AdmmRobust};
pub use affine::{power_constraint, solve_admm_affine, AdmmAffine};
pub use fista::{solve_fista_robust, FistaRobust};
pub use l1loss::{solve_admm_l1loss, AdmmL1Loss};
pub use multitask::{solve_multitask, MultiTask, MultiTaskEngine, MultiTaskProblem};
pub use nested::{solve_nested_robust, NestedRobust};

/// Iterations without primal-residual improvement before a run is flagged as stalled.
pub const STALL_WINDOW: usize = 100;

/// Penalty, step and termination settings shared by all solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions<T> {
    /// ADMM penalty η (η₁ for the two-constraint variants).
    pub eta: T,
    /// Second penalty η₂ (affine and ℓ1-loss variants).
    pub eta2: T,
    /// Modified-residual majorization weight μ.
    pub mu: T,
    /// Elastic-net weight β on `‖x‖²`.
    pub beta: T,
    pub max_iter: usize,
    pub abs_tol: T,
    pub rel_tol: T,
    /// Initial coefficients; zeros when `None`.
    pub x0: Option<Array1<T>>,
    /// FISTA momentum seed.
    pub t0: T,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            eta: T::lit(2.0),
            eta2: T::lit(2.0),
            mu: T::one(),
            beta: T::zero(),
            max_iter: 5000,
            abs_tol: T::lit(1e-4),
            rel_tol: T::lit(1e-2),
            x0: None,
            t0: T::one(),
        }
    }
}

impl<T: Scalar> SolverOptions<T> {
    /// Options with both tolerances set to `tol`.
    pub fn tight(tol: T, max_iter: usize) -> Self {
        Self {
            abs_tol: tol,
            rel_tol: tol,
            max_iter,
            ..Self::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let positive = |name: &'static str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, "must be positive and finite"))
            }
        };
        positive("eta", self.eta)?;
        positive("eta2", self.eta2)?;
        positive("mu", self.mu)?;
        positive("abs_tol", self.abs_tol)?;
        positive("rel_tol", self.rel_tol)?;
        if !(self.beta >= T::zero() && self.beta.is_finite()) {
            return Err(invalid("beta", "must be non-negative"));
        }
        if !(self.t0 >= T::one()) {
            return Err(invalid("t0", "must be at least 1"));
        }
        if let Some(x0) = &self.x0 {
            check_len("x0 length", n, x0.len())?;
        }
        Ok(())
    }

    pub(crate) fn initial(&self, n: usize, override_x0: Option<ArrayView1<T>>) -> Array1<T> {
        match (override_x0, &self.x0) {
            (Some(x), _) => x.to_owned(),
            (None, Some(x)) => x.clone(),
            (None, None) => Array1::zeros(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Converged,
    MaxIterations,
}

/// One completed outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub objective: T,
    pub primal: Vec<T>,
    pub dual: Vec<T>,
    /// Seconds since the solve started.
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverTrace<T> {
    records: Vec<IterationRecord<T>>,
}

impl<T: Scalar> SolverTrace<T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: IterationRecord<T>) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[IterationRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord<T>> {
        self.records.last()
    }

    pub fn objectives(&self) -> impl Iterator<Item = T> + '_ {
        self.records.iter().map(|r| r.objective)
    }
}

/// Result of a solve. `x` is a vector for single-task solvers and an N×T
/// matrix for [`MultiTask`].
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T, D: Dimension = Ix1> {
    pub x: Array<T, D>,
    pub status: Status,
    pub trace: SolverTrace<T>,
    /// The λ this solution was computed for.
    pub final_lambda: T,
    /// Iterations performed, counting inner iterations for nested solvers.
    pub iterations: usize,
    /// Primal residual failed to improve over [`STALL_WINDOW`] iterations.
    pub stalled: bool,
}

impl<T: Scalar, D: Dimension> Solution<T, D> {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    pub fn nnz(&self) -> usize {
        self.x.iter().filter(|v| **v != T::zero()).count()
    }

    pub fn l1_norm(&self) -> T {
        self.x.iter().fold(T::zero(), |acc, v| acc + v.abs())
    }
}

/// Receives every iterate a solver produces, including inner iterates of
/// the nested solver. Used for convergence profiling.
pub trait Monitor<T, D: Dimension = Ix1> {
    fn observe(&mut self, iteration: usize, x: ArrayView<T, D>);
}

impl<T, D: Dimension> Monitor<T, D> for () {
    fn observe(&mut self, _: usize, _: ArrayView<T, D>) {}
}

impl<T, D: Dimension, F: FnMut(usize, ArrayView<T, D>)> Monitor<T, D> for F {
    fn observe(&mut self, iteration: usize, x: ArrayView<T, D>) {
        self(iteration, x)
    }
}

/// Which data-fit term a solver minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Huber,
    Quadratic,
    L1,
}

/// Common interface used by the regularization path and the harness.
pub trait Recovery<T: Scalar> {
    type Dim: Dimension;

    fn problem_rows(&self) -> usize;

    /// Zero-initialised coefficient array of the right shape.
    fn zeros(&self) -> Array<T, Self::Dim>;

    fn solve_from(
        &self,
        lambda: T,
        x0: Option<ArrayView<T, Self::Dim>>,
        monitor: &mut dyn Monitor<T, Self::Dim>,
    ) -> Result<Solution<T, Self::Dim>>;

    fn solve(&self, lambda: T) -> Result<Solution<T, Self::Dim>> {
        self.solve_from(lambda, None, &mut ())
    }

    /// Full objective at `x`.
    fn objective(&self, x: ArrayView<T, Self::Dim>, lambda: T) -> T;

    /// Measurement residuals `y − Φx`, all tasks concatenated.
    fn residual(&self, x: ArrayView<T, Self::Dim>) -> Array1<T>;

    /// Smallest λ for which zero is optimal.
    fn zero_threshold(&self) -> T;

    fn loss_kind(&self) -> LossKind;

    /// Matrix factorizations performed since construction.
    fn factorizations(&self) -> usize;
}

/// One residual norm together with its tolerance scale:
/// passes when `norm ≤ √dim·abs_tol + rel_tol·scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualTest<T> {
    pub norm: T,
    pub dim: usize,
    pub scale: T,
}

impl<T: Scalar> ResidualTest<T> {
    pub fn new(norm: T, dim: usize, scale: T) -> Self {
        Self { norm, dim, scale }
    }

    pub fn threshold(&self, abs_tol: T, rel_tol: T) -> T {
        T::lit(self.dim as f64).sqrt() * abs_tol + rel_tol * self.scale
    }

    pub fn passes(&self, abs_tol: T, rel_tol: T) -> bool {
        self.norm <= self.threshold(abs_tol, rel_tol)
    }
}

/// Inputs to [`check_stopping`] for the latest iteration.
#[derive(Debug, Clone, Copy)]
pub enum StoppingInput<'a, T> {
    /// ADMM family: every primal and dual residual must pass.
    Admm {
        primal: &'a [ResidualTest<T>],
        dual: &'a [ResidualTest<T>],
    },
    /// FISTA and nested: `‖xᵏ − xᵏ⁻¹‖ ≤ abs_tol·max(1, ‖xᵏ‖)`.
    IterateChange { delta: T, norm: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Converged,
}

pub fn check_stopping<T: Scalar>(
    input: StoppingInput<'_, T>,
    opts: &SolverOptions<T>,
) -> StopDecision {
    let ok = match input {
        StoppingInput::Admm { primal, dual } => primal
            .iter()
            .chain(dual.iter())
            .all(|t| t.passes(opts.abs_tol, opts.rel_tol)),
        StoppingInput::IterateChange { delta, norm } => delta <= opts.abs_tol * norm.max(T::one()),
    };
    if ok {
        StopDecision::Converged
    } else {
        StopDecision::Continue
    }
}

/// Tracks whether the primal residual keeps improving.
#[derive(Debug, Clone)]
pub(crate) struct StallDetector<T> {
    best: T,
    since: usize,
    stalled: bool,
}

impl<T: Scalar> StallDetector<T> {
    pub fn new() -> Self {
        Self {
            best: T::infinity(),
            since: 0,
            stalled: false,
        }
    }

    pub fn update(&mut self, primal: T) {
        if primal < self.best {
            self.best = primal;
            self.since = 0;
        } else {
            self.since += 1;
            if self.since >= STALL_WINDOW {
                self.stalled = true;
            }
        }
    }

    pub fn stalled(&self) -> bool {
        self.stalled
    }
}

/// Zero is the exact minimizer when the solve starts there and
/// `λ ≥ ‖Φᵀψ(y)‖∞`; solvers then return it without iterating.
pub(crate) fn screened_zero<T: Scalar, D: Dimension>(
    x0: &Array<T, D>,
    lambda: T,
    threshold: impl FnOnce() -> T,
    objective: impl FnOnce() -> T,
) -> Option<Solution<T, D>> {
    if x0.iter().any(|v| *v != T::zero()) || lambda < threshold() {
        return None;
    }
    let mut trace = SolverTrace::new();
    trace.push(IterationRecord {
        objective: objective(),
        primal: vec![T::zero()],
        dual: Vec::new(),
        elapsed: 0.0,
    });
    Some(Solution {
        x: x0.clone(),
        status: Status::Converged,
        trace,
        final_lambda: lambda,
        iterations: 1,
        stalled: false,
    })
}

pub(crate) struct Clock(Instant);

impl Clock {
    pub fn start() -> Self {
        Clock(Instant::now())
    }

    pub fn elapsed(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub(crate) fn norm2<T: Scalar>(v: &Array1<T>) -> T {
    v.dot(v).sqrt()
}

pub(crate) fn diff_norm<T: Scalar>(a: &Array1<T>, b: &Array1<T>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (&p, &q)| acc + (p - q) * (p - q))
        .sqrt()
}

pub(crate) fn l1<T: Scalar>(v: ArrayView1<T>) -> T {
    v.iter().fold(T::zero(), |acc, a| acc + a.abs())
}

pub(crate) fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    if lambda > T::zero() && lambda.is_finite() {
        Ok(())
    } else {
        Err(invalid("lambda", "must be positive and finite"))
    }
}

/// `g(x) + λ‖x‖₁ + β‖x‖²` for the Huber family.
pub fn robust_objective<T: Scalar>(
    prob: &SensingProblem<T>,
    params: &HuberParams<T>,
    x: ArrayView1<T>,
    lambda: T,
    beta: T,
) -> T {
    let fit = prob.phi().dot(&x);
    huber_objective_from_fit(prob, params, x, &fit, lambda, beta)
}

pub(crate) fn huber_objective_from_fit<T: Scalar>(
    prob: &SensingProblem<T>,
    params: &HuberParams<T>,
    x: ArrayView1<T>,
    fit: &Array1<T>,
    lambda: T,
    beta: T,
) -> T {
    let loss = prob
        .y()
        .iter()
        .zip(fit.iter())
        .fold(T::zero(), |acc, (&yi, &fi)| acc + params.rho(yi - fi));
    let mut obj = loss + lambda * l1(x);
    if beta > T::zero() {
        obj += beta * x.dot(&x);
    }
    obj
}

/// `‖Φᵀψ(y)‖∞`: above this λ the zero vector minimizes the Huber objective.
pub(crate) fn huber_zero_threshold<T: Scalar>(
    prob: &SensingProblem<T>,
    params: &HuberParams<T>,
) -> T {
    let clipped = prob.y().mapv(|v| params.psi(v));
    prob.phi()
        .t()
        .dot(&clipped)
        .iter()
        .fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Multiple of `abs_tol` that the optimality residual of a converged
/// Huber-family solution may not exceed.
pub const CERTIFICATE_FACTOR: f64 = 10.0;

/// Distance from zero to the subdifferential of `g + λ‖·‖₁ + β‖·‖²` at `x`.
///
/// Zero exactly at a minimizer. The Huber-family solvers only report
/// [`Status::Converged`] once this is at most `CERTIFICATE_FACTOR·abs_tol`.
pub fn optimality_residual<T: Scalar>(
    prob: &SensingProblem<T>,
    params: &HuberParams<T>,
    x: ArrayView1<T>,
    lambda: T,
    beta: T,
) -> Result<T> {
    prob.check_coefficients(&x)?;
    let fit = prob.phi().dot(&x);
    Ok(certificate_from_fit(prob, params, x, &fit, lambda, beta))
}

pub(crate) fn certified<T: Scalar>(
    prob: &SensingProblem<T>,
    params: &HuberParams<T>,
    x: ArrayView1<T>,
    fit: &Array1<T>,
    lambda: T,
    opts: &SolverOptions<T>,
) -> bool {
    certificate_from_fit(prob, params, x, fit, lambda, opts.beta)
        <= T::lit(CERTIFICATE_FACTOR) * opts.abs_tol
}

pub(crate) fn certificate_from_fit<T: Scalar>(
    prob: &SensingProblem<T>,
    params: &HuberParams<T>,
    x: ArrayView1<T>,
    fit: &Array1<T>,
    lambda: T,
    beta: T,
) -> T {
    let w = ndarray::Zip::from(fit)
        .and(prob.y())
        .map_collect(|&f, &yi| params.psi(f - yi));
    let grad = crate::linalg::tmatvec(prob.phi().view(), w.view());
    l1_certificate(&grad, x, lambda, beta)
}

/// `dist(0, ∇h(x) + 2βx + λ∂‖x‖₁)` given the smooth gradient `∇h(x)`.
pub(crate) fn l1_certificate<T: Scalar>(
    grad: &Array1<T>,
    x: ArrayView1<T>,
    lambda: T,
    beta: T,
) -> T {
    let two = T::lit(2.0);
    let sq = grad.iter().zip(x.iter()).fold(T::zero(), |acc, (&g, &xi)| {
        let smooth = g + two * beta * xi;
        let d = if xi != T::zero() {
            smooth + lambda * xi.signum()
        } else {
            (smooth.abs() - lambda).max(T::zero())
        };
        acc + d * d
    });
    sq.sqrt()
}
