use ndarray::{Array1, Array2, ArrayView2, Axis, Ix2, Zip};

use super::{
    check_lambda, check_stopping, screened_zero, Clock, IterationRecord, LossKind, Monitor,
    Recovery, ResidualTest, Solution, SolverOptions, SolverTrace, StallDetector, Status,
    StopDecision, StoppingInput, CERTIFICATE_FACTOR,
};
use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{build_cached_solver, spectral_bound, CachedSolver, QSpec};
use crate::model::HuberParams;
use crate::prox::group_shrink_in_place;
use crate::scalar::Scalar;

/// Several measurement vectors of signals that share one support: `Y = ΦX + N`
/// with one column per task.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskProblem<T> {
    phi: Array2<T>,
    y: Array2<T>,
}

impl<T: Scalar> MultiTaskProblem<T> {
    pub fn new(phi: Array2<T>, y: Array2<T>) -> Result<Self> {
        let (m, n) = phi.dim();
        if m == 0 || n == 0 {
            return Err(Error::Empty("sensing matrix"));
        }
        if y.ncols() == 0 {
            return Err(invalid("tasks", "at least one column is required"));
        }
        check_len("measurement rows", m, y.nrows())?;
        if phi.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("multi-task problem"));
        }
        Ok(Self { phi, y })
    }

    pub fn phi(&self) -> &Array2<T> {
        &self.phi
    }

    pub fn y(&self) -> &Array2<T> {
        &self.y
    }

    pub fn rows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn cols(&self) -> usize {
        self.phi.ncols()
    }

    pub fn tasks(&self) -> usize {
        self.y.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiTaskEngine {
    Fista,
    Admm,
}

/// Huber loss summed over tasks plus `λ·Σᵢ‖Xᵢ,:‖₂`, the sum of row norms,
/// which keeps whole rows of `X` at zero.
#[derive(Debug, Clone)]
pub struct MultiTask<'a, T> {
    prob: &'a MultiTaskProblem<T>,
    params: HuberParams<T>,
    opts: SolverOptions<T>,
    engine: MultiTaskEngine,
    lipschitz: T,
    cache: Option<CachedSolver<'a, T>>,
}

impl<'a, T: Scalar> MultiTask<'a, T> {
    pub fn new(
        prob: &'a MultiTaskProblem<T>,
        params: HuberParams<T>,
        engine: MultiTaskEngine,
        opts: SolverOptions<T>,
    ) -> Result<Self> {
        let mut check = opts.clone();
        check.x0 = None;
        check.validate(prob.cols())?;
        let (lipschitz, cache) = match engine {
            MultiTaskEngine::Fista => {
                let bound = spectral_bound(prob.phi.view());
                let l = if bound.lambda_max > T::zero() {
                    bound.lipschitz()
                } else {
                    T::one()
                };
                (l, None)
            }
            MultiTaskEngine::Admm => {
                let cache =
                    build_cached_solver(prob.phi.view(), opts.mu, QSpec::identity(opts.eta))?;
                (T::one(), Some(cache))
            }
        };
        Ok(Self {
            prob,
            params,
            opts,
            engine,
            lipschitz,
            cache,
        })
    }

    pub fn engine(&self) -> MultiTaskEngine {
        self.engine
    }

    fn psi_of_fit(&self, fit: &Array2<T>) -> Array2<T> {
        Zip::from(fit)
            .and(&self.prob.y)
            .map_collect(|&f, &y| self.params.psi(f - y))
    }

    fn fista(
        &self,
        lambda: T,
        mut x: Array2<T>,
        monitor: &mut dyn Monitor<T, Ix2>,
    ) -> (Array2<T>, Status, SolverTrace<T>, usize, bool) {
        let (phi, opts) = (&self.prob.phi, &self.opts);
        let step = T::one() / self.lipschitz;
        let tau = lambda / self.lipschitz;
        let clock = Clock::start();
        let mut phix = phi.dot(&x);
        let mut z = x.clone();
        let mut phiz = phix.clone();
        let mut t = opts.t0;
        let mut trace = SolverTrace::new();
        let mut stall = StallDetector::new();
        let mut status = Status::MaxIterations;
        let mut iterations = 0;

        for k in 1..=opts.max_iter {
            iterations = k;
            let grad = phi.t().dot(&self.psi_of_fit(&phiz));
            let mut x_new = Zip::from(&z)
                .and(&grad)
                .map_collect(|&zi, &gi| zi - step * gi);
            row_shrink(&mut x_new, tau);
            let phix_new = phi.dot(&x_new);

            let t_new = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) / T::lit(2.0);
            let coef = (t - T::one()) / t_new;
            z = &x_new + &((&x_new - &x) * coef);
            phiz = &phix_new + &((&phix_new - &phix) * coef);

            let delta = frob_diff(&x_new, &x);
            x = x_new;
            phix = phix_new;
            t = t_new;

            monitor.observe(k, x.view());
            let objective = self.objective_from_fit(x.view(), &phix, lambda);
            trace.push(IterationRecord {
                objective,
                primal: vec![delta],
                dual: Vec::new(),
                elapsed: clock.elapsed(),
            });
            stall.update(delta);
            let input = StoppingInput::IterateChange {
                delta,
                norm: frob(&x),
            };
            if check_stopping(input, opts) == StopDecision::Converged
                && self.certified(x.view(), &phix, lambda)
            {
                status = Status::Converged;
                break;
            }
        }
        (x, status, trace, iterations, stall.stalled())
    }

    fn admm(
        &self,
        lambda: T,
        mut x: Array2<T>,
        monitor: &mut dyn Monitor<T, Ix2>,
    ) -> (Array2<T>, Status, SolverTrace<T>, usize, bool) {
        let cache = self
            .cache
            .as_ref()
            .expect("ADMM engine owns a factorization");
        let (phi, opts) = (&self.prob.phi, &self.opts);
        let (mu, eta) = (opts.mu, opts.eta);
        let tau = lambda / eta;
        let dim = x.len();
        let clock = Clock::start();
        let mut z = x.clone();
        let mut u = Array2::<T>::zeros(x.raw_dim());
        let mut phix = phi.dot(&x);
        let mut trace = SolverTrace::new();
        let mut stall = StallDetector::new();
        let mut status = Status::MaxIterations;
        let mut iterations = 0;

        for k in 1..=opts.max_iter {
            iterations = k;
            let v = Zip::from(&phix)
                .and(&self.prob.y)
                .map_collect(|&f, &y| self.params.psi(y - f) / mu + f);
            let mut rhs = phi.t().dot(&v) * mu;
            Zip::from(&mut rhs)
                .and(&z)
                .and(&u)
                .for_each(|r, &zi, &ui| *r += eta * (zi - ui));
            for (mut col, b) in x.axis_iter_mut(Axis(1)).zip(rhs.axis_iter(Axis(1))) {
                col.assign(&cache.solve_unchecked(b));
            }

            let z_old = z;
            z = &x + &u;
            row_shrink(&mut z, tau);
            Zip::from(&mut u)
                .and(&x)
                .and(&z)
                .for_each(|ui, &xi, &zi| *ui += xi - zi);

            phix = phi.dot(&x);
            monitor.observe(k, z.view());
            let phiz = phi.dot(&z);
            let objective = self.objective_from_fit(z.view(), &phiz, lambda);

            let r = frob_diff(&x, &z);
            let s = eta * frob_diff(&z, &z_old);
            let primal = [ResidualTest::new(r, dim, frob(&x).max(frob(&z)))];
            let dual = [ResidualTest::new(s, dim, eta * frob(&u))];
            trace.push(IterationRecord {
                objective,
                primal: vec![r],
                dual: vec![s],
                elapsed: clock.elapsed(),
            });
            stall.update(r);
            let input = StoppingInput::Admm {
                primal: &primal,
                dual: &dual,
            };
            if check_stopping(input, opts) == StopDecision::Converged
                && self.certified(z.view(), &phiz, lambda)
            {
                status = Status::Converged;
                break;
            }
        }
        (z, status, trace, iterations, stall.stalled())
    }

    /// Optimality residual for the row-group penalty: on a nonzero row the
    /// gradient must equal `−λ·row/‖row‖`, on a zero row its norm may not
    /// exceed `λ`.
    pub fn optimality_residual(&self, x: ArrayView2<T>, lambda: T) -> T {
        let fit = self.prob.phi.dot(&x);
        self.certificate(x, &fit, lambda)
    }

    fn certificate(&self, x: ArrayView2<T>, fit: &Array2<T>, lambda: T) -> T {
        let grad = self.prob.phi.t().dot(&self.psi_of_fit(fit));
        let sq =
            grad.axis_iter(Axis(0))
                .zip(x.axis_iter(Axis(0)))
                .fold(T::zero(), |acc, (g, row)| {
                    let norm = row.dot(&row).sqrt();
                    if norm > T::zero() {
                        let scale = lambda / norm;
                        acc + g.iter().zip(row.iter()).fold(T::zero(), |a, (&gi, &ri)| {
                            a + (gi + scale * ri) * (gi + scale * ri)
                        })
                    } else {
                        let excess = (g.dot(&g).sqrt() - lambda).max(T::zero());
                        acc + excess * excess
                    }
                });
        sq.sqrt()
    }

    fn certified(&self, x: ArrayView2<T>, fit: &Array2<T>, lambda: T) -> bool {
        self.certificate(x, fit, lambda) <= T::lit(CERTIFICATE_FACTOR) * self.opts.abs_tol
    }

    fn objective_from_fit(&self, x: ArrayView2<T>, fit: &Array2<T>, lambda: T) -> T {
        let loss = Zip::from(fit)
            .and(&self.prob.y)
            .fold(T::zero(), |acc, &f, &y| acc + self.params.rho(y - f));
        loss + lambda * row_norm_sum(x)
    }
}

impl<T: Scalar> Recovery<T> for MultiTask<'_, T> {
    type Dim = Ix2;

    fn problem_rows(&self) -> usize {
        self.prob.rows()
    }

    fn zeros(&self) -> Array2<T> {
        Array2::zeros((self.prob.cols(), self.prob.tasks()))
    }

    fn solve_from(
        &self,
        lambda: T,
        x0: Option<ArrayView2<T>>,
        monitor: &mut dyn Monitor<T, Ix2>,
    ) -> Result<Solution<T, Ix2>> {
        check_lambda(lambda)?;
        let x = match x0 {
            Some(x0) => {
                check_len("x0 rows", self.prob.cols(), x0.nrows())?;
                check_len("x0 columns", self.prob.tasks(), x0.ncols())?;
                x0.to_owned()
            }
            None => self.zeros(),
        };
        if let Some(s) = screened_zero(
            &x,
            lambda,
            || self.zero_threshold(),
            || self.objective(x.view(), lambda),
        ) {
            return Ok(s);
        }
        let (x, status, trace, iterations, stalled) = match self.engine {
            MultiTaskEngine::Fista => self.fista(lambda, x, monitor),
            MultiTaskEngine::Admm => self.admm(lambda, x, monitor),
        };
        Ok(Solution {
            x,
            status,
            trace,
            final_lambda: lambda,
            iterations,
            stalled,
        })
    }

    fn objective(&self, x: ArrayView2<T>, lambda: T) -> T {
        let fit = self.prob.phi.dot(&x);
        self.objective_from_fit(x, &fit, lambda)
    }

    fn residual(&self, x: ArrayView2<T>) -> Array1<T> {
        let r = &self.prob.y - &self.prob.phi.dot(&x);
        r.t().iter().copied().collect()
    }

    /// Largest row norm of `Φᵀψ(Y)`.
    fn zero_threshold(&self) -> T {
        let clipped = self.prob.y.mapv(|v| self.params.psi(v));
        self.prob
            .phi
            .t()
            .dot(&clipped)
            .axis_iter(Axis(0))
            .map(|row| row.dot(&row).sqrt())
            .fold(T::zero(), T::max)
    }

    fn loss_kind(&self) -> LossKind {
        if self.params.is_quadratic() {
            LossKind::Quadratic
        } else {
            LossKind::Huber
        }
    }

    fn factorizations(&self) -> usize {
        self.cache
            .as_ref()
            .map_or(0, |c| usize::from(c.cholesky().is_some()))
    }
}

fn row_shrink<T: Scalar>(x: &mut Array2<T>, tau: T) {
    for row in x.axis_iter_mut(Axis(0)) {
        group_shrink_in_place(row, tau);
    }
}

fn row_norm_sum<T: Scalar>(x: ArrayView2<T>) -> T {
    x.axis_iter(Axis(0))
        .fold(T::zero(), |acc, row| acc + row.dot(&row).sqrt())
}

fn frob<T: Scalar>(a: &Array2<T>) -> T {
    a.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
}

fn frob_diff<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> T {
    Zip::from(a)
        .and(b)
        .fold(T::zero(), |acc, &p, &q| acc + (p - q) * (p - q))
        .sqrt()
}

/// One-shot multi-task solve from zero.
pub fn solve_multitask<T: Scalar>(
    prob: &MultiTaskProblem<T>,
    lambda: T,
    params: &HuberParams<T>,
    engine: MultiTaskEngine,
    opts: &SolverOptions<T>,
) -> Result<Solution<T, Ix2>> {
    MultiTask::new(prob, *params, engine, opts.clone())?.solve(lambda)
}
