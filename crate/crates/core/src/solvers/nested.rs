use ndarray::{Array1, ArrayView1, Ix1, Zip};

use super::admm::modified_measurements;
use super::{
    certified, check_lambda, check_stopping, diff_norm, huber_objective_from_fit,
    huber_zero_threshold, l1, l1_certificate, norm2, screened_zero, Clock, IterationRecord,
    LossKind, Monitor, Recovery, ResidualTest, Solution, SolverOptions, SolverTrace, StallDetector,
    Status, StopDecision, StoppingInput, CERTIFICATE_FACTOR,
};
use crate::error::{check_len, Result};
use crate::linalg::{build_cached_solver, tmatvec, CachedSolver, QSpec};
use crate::model::{HuberParams, SensingProblem};
use crate::prox::soft_threshold_into;
use crate::scalar::Scalar;

/// Majorize-minimize baseline: each outer step replaces the Huber loss by
/// its quadratic majorizer at the current iterate and solves the resulting
/// ordinary lasso with an inner ADMM.
///
/// The inner run keeps iterating past its own tolerances until the
/// surrogate objective is no larger than at the outer iterate, which makes
/// the outer objective sequence nonincreasing.
#[derive(Debug, Clone)]
pub struct NestedRobust<'a, T> {
    prob: &'a SensingProblem<T>,
    params: HuberParams<T>,
    opts: SolverOptions<T>,
    inner: SolverOptions<T>,
    cache: CachedSolver<'a, T>,
}

impl<'a, T: Scalar> NestedRobust<'a, T> {
    /// `opts` drives the outer loop and supplies `μ`, `η`, `β`; `inner`
    /// supplies the inner tolerances and iteration cap.
    pub fn new(
        prob: &'a SensingProblem<T>,
        params: HuberParams<T>,
        opts: SolverOptions<T>,
        inner: SolverOptions<T>,
    ) -> Result<Self> {
        opts.validate(prob.cols())?;
        inner.validate(prob.cols())?;
        let rho = opts.eta + T::lit(2.0) * opts.beta;
        let cache = build_cached_solver(prob.phi().view(), opts.mu, QSpec::identity(rho))?;
        Ok(Self {
            prob,
            params,
            opts,
            inner,
            cache,
        })
    }

    /// Default inner tolerances: relative 1e-2, absolute 1e-4.
    pub fn default_inner() -> SolverOptions<T> {
        SolverOptions::default()
    }

    /// `½μ‖v − Φx‖² + λ‖x‖₁ + β‖x‖²`, the surrogate up to its constant.
    fn surrogate(&self, v: &Array1<T>, x: &Array1<T>, fit: &Array1<T>, lambda: T) -> T {
        let sq = Zip::from(v)
            .and(fit)
            .fold(T::zero(), |acc, &vi, &fi| acc + (vi - fi) * (vi - fi));
        let mut val = self.opts.mu * sq / T::lit(2.0) + lambda * l1(x.view());
        if self.opts.beta > T::zero() {
            val += self.opts.beta * x.dot(x);
        }
        val
    }

    /// Optimality residual of the inner lasso at `x`.
    fn inner_certificate(&self, v: &Array1<T>, x: &Array1<T>, fit: &Array1<T>, lambda: T) -> T {
        let diff = fit - v;
        let grad = tmatvec(self.prob.phi().view(), diff.view()) * self.opts.mu;
        l1_certificate(&grad, x.view(), lambda, self.opts.beta)
    }
}

impl<T: Scalar> Recovery<T> for NestedRobust<'_, T> {
    type Dim = Ix1;

    fn problem_rows(&self) -> usize {
        self.prob.rows()
    }

    fn zeros(&self) -> Array1<T> {
        Array1::zeros(self.prob.cols())
    }

    fn solve_from(
        &self,
        lambda: T,
        x0: Option<ArrayView1<T>>,
        monitor: &mut dyn Monitor<T>,
    ) -> Result<Solution<T>> {
        check_lambda(lambda)?;
        let n = self.prob.cols();
        if let Some(x0) = &x0 {
            check_len("x0 length", n, x0.len())?;
        }
        let (phi, y, opts, inner, params) = (
            self.prob.phi(),
            self.prob.y(),
            &self.opts,
            &self.inner,
            &self.params,
        );
        let (mu, eta) = (opts.mu, opts.eta);
        let tau = lambda / eta;
        let slack = T::lit(64.0) * T::epsilon();
        let clock = Clock::start();

        let mut x_outer = opts.initial(n, x0);
        if let Some(s) = screened_zero(
            &x_outer,
            lambda,
            || huber_zero_threshold(self.prob, params),
            || self.objective(x_outer.view(), lambda),
        ) {
            return Ok(s);
        }
        let mut z = x_outer.clone();
        let mut z_old = z.clone();
        let mut u = Array1::<T>::zeros(n);
        let mut trace = SolverTrace::new();
        let mut stall = StallDetector::new();
        let mut status = Status::MaxIterations;
        let mut total = 0;

        for _ in 0..opts.max_iter {
            let phix = phi.dot(&x_outer);
            let v = modified_measurements(y, &phix, params, mu);
            let b = tmatvec(phi.view(), v.view()) * mu;
            let anchor = self.surrogate(&v, &x_outer, &phix, lambda);

            for j in 1..=inner.max_iter {
                total += 1;
                let mut rhs = b.clone();
                Zip::from(&mut rhs)
                    .and(&z)
                    .and(&u)
                    .for_each(|r, &zi, &ui| *r += eta * (zi - ui));
                let x = self.cache.solve_unchecked(rhs.view());
                std::mem::swap(&mut z, &mut z_old);
                let xu = &x + &u;
                soft_threshold_into(&mut z, &xu, tau);
                Zip::from(&mut u)
                    .and(&x)
                    .and(&z)
                    .for_each(|ui, &xi, &zi| *ui += xi - zi);
                monitor.observe(total, z.view());

                let r = diff_norm(&x, &z);
                let s = eta * diff_norm(&z, &z_old);
                let primal = [ResidualTest::new(r, n, norm2(&x).max(norm2(&z)))];
                let dual = [ResidualTest::new(s, n, eta * norm2(&u))];
                let input = StoppingInput::Admm {
                    primal: &primal,
                    dual: &dual,
                };
                if j == inner.max_iter {
                    break;
                }
                if check_stopping(input, inner) == StopDecision::Converged {
                    let fit = phi.dot(&z);
                    let cert = self.inner_certificate(&v, &z, &fit, lambda);
                    let descent = self.surrogate(&v, &z, &fit, lambda)
                        <= anchor + slack * anchor.abs().max(T::one());
                    if descent && cert <= T::lit(CERTIFICATE_FACTOR) * inner.abs_tol {
                        break;
                    }
                }
            }

            let delta = diff_norm(&z, &x_outer);
            x_outer.assign(&z);
            let fit = phi.dot(&x_outer);
            let objective = huber_objective_from_fit(
                self.prob,
                params,
                x_outer.view(),
                &fit,
                lambda,
                opts.beta,
            );
            trace.push(IterationRecord {
                objective,
                primal: vec![delta],
                dual: Vec::new(),
                elapsed: clock.elapsed(),
            });
            stall.update(delta);
            let input = StoppingInput::IterateChange {
                delta,
                norm: norm2(&x_outer),
            };
            if check_stopping(input, opts) == StopDecision::Converged
                && certified(self.prob, params, x_outer.view(), &fit, lambda, opts)
            {
                status = Status::Converged;
                break;
            }
        }

        Ok(Solution {
            x: x_outer,
            status,
            trace,
            final_lambda: lambda,
            iterations: total,
            stalled: stall.stalled(),
        })
    }

    fn objective(&self, x: ArrayView1<T>, lambda: T) -> T {
        super::robust_objective(self.prob, &self.params, x, lambda, self.opts.beta)
    }

    fn residual(&self, x: ArrayView1<T>) -> Array1<T> {
        self.prob.y() - &self.prob.phi().dot(&x)
    }

    fn zero_threshold(&self) -> T {
        huber_zero_threshold(self.prob, &self.params)
    }

    fn loss_kind(&self) -> LossKind {
        if self.params.is_quadratic() {
            LossKind::Quadratic
        } else {
            LossKind::Huber
        }
    }

    fn factorizations(&self) -> usize {
        usize::from(self.cache.cholesky().is_some())
    }
}

/// One-shot nested MM solve from `opts.x0`.
pub fn solve_nested_robust<T: Scalar>(
    prob: &SensingProblem<T>,
    lambda: T,
    params: &HuberParams<T>,
    opts: &SolverOptions<T>,
    inner_opts: &SolverOptions<T>,
) -> Result<Solution<T>> {
    NestedRobust::new(prob, *params, opts.clone(), inner_opts.clone())?.solve(lambda)
}
