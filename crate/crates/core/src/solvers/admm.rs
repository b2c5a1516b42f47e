use ndarray::{Array1, ArrayView1, Ix1, Zip};

use super::{
    certified, check_lambda, check_stopping, diff_norm, huber_objective_from_fit,
    huber_zero_threshold, norm2, screened_zero, Clock, IterationRecord, LossKind, Monitor,
    Recovery, ResidualTest, Solution, SolverOptions, SolverTrace, StallDetector, Status,
    StopDecision, StoppingInput,
};
use crate::error::{check_len, Result};
use crate::linalg::{build_cached_solver, tmatvec, CachedSolver, QSpec};
use crate::model::{HuberParams, SensingProblem};
use crate::prox::soft_threshold_into;
use crate::scalar::Scalar;

/// `v = ψ(y − Φx)/μ + Φx`, the modified measurements of one MM step.
pub(crate) fn modified_measurements<T: Scalar>(
    y: &Array1<T>,
    phix: &Array1<T>,
    params: &HuberParams<T>,
    mu: T,
) -> Array1<T> {
    Zip::from(y)
        .and(phix)
        .map_collect(|&yi, &fi| params.psi(yi - fi) / mu + fi)
}

/// Generalized ADMM for the Huber objective: every iteration takes one
/// majorize-minimize step on the loss with `W = μI`, so the x-update is a
/// linear solve against a matrix that never changes.
#[derive(Debug, Clone)]
pub struct AdmmRobust<'a, T> {
    prob: &'a SensingProblem<T>,
    params: HuberParams<T>,
    opts: SolverOptions<T>,
    cache: CachedSolver<'a, T>,
}

impl<'a, T: Scalar> AdmmRobust<'a, T> {
    pub fn new(
        prob: &'a SensingProblem<T>,
        params: HuberParams<T>,
        opts: SolverOptions<T>,
    ) -> Result<Self> {
        opts.validate(prob.cols())?;
        let rho = opts.eta + T::lit(2.0) * opts.beta;
        let cache = build_cached_solver(prob.phi().view(), opts.mu, QSpec::identity(rho))?;
        Ok(Self {
            prob,
            params,
            opts,
            cache,
        })
    }

    pub fn cached_solver(&self) -> &CachedSolver<'a, T> {
        &self.cache
    }

    pub fn options(&self) -> &SolverOptions<T> {
        &self.opts
    }
}

impl<T: Scalar> Recovery<T> for AdmmRobust<'_, T> {
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
        let (phi, y, opts, params) = (self.prob.phi(), self.prob.y(), &self.opts, &self.params);
        let (mu, eta) = (opts.mu, opts.eta);
        let tau = lambda / eta;
        let clock = Clock::start();

        let mut x = opts.initial(n, x0);
        if let Some(s) = screened_zero(
            &x,
            lambda,
            || huber_zero_threshold(self.prob, params),
            || self.objective(x.view(), lambda),
        ) {
            return Ok(s);
        }
        let mut z = x.clone();
        let mut z_old = z.clone();
        let mut u = Array1::<T>::zeros(n);
        let mut phix = phi.dot(&x);
        let mut trace = SolverTrace::new();
        let mut stall = StallDetector::new();
        let mut status = Status::MaxIterations;
        let mut iterations = 0;

        for k in 1..=opts.max_iter {
            iterations = k;
            let v = modified_measurements(y, &phix, params, mu);
            let mut rhs = tmatvec(phi.view(), v.view()) * mu;
            Zip::from(&mut rhs)
                .and(&z)
                .and(&u)
                .for_each(|r, &zi, &ui| *r += eta * (zi - ui));
            x = self.cache.solve_unchecked(rhs.view());

            std::mem::swap(&mut z, &mut z_old);
            let xu = &x + &u;
            soft_threshold_into(&mut z, &xu, tau);
            Zip::from(&mut u)
                .and(&x)
                .and(&z)
                .for_each(|ui, &xi, &zi| *ui += xi - zi);

            phix = phi.dot(&x);
            monitor.observe(k, z.view());
            let phiz = phi.dot(&z);
            let objective =
                huber_objective_from_fit(self.prob, params, z.view(), &phiz, lambda, opts.beta);

            let r = diff_norm(&x, &z);
            let s = eta * diff_norm(&z, &z_old);
            let primal = [ResidualTest::new(r, n, norm2(&x).max(norm2(&z)))];
            let dual = [ResidualTest::new(s, n, eta * norm2(&u))];
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
                && certified(self.prob, params, z.view(), &phiz, lambda, opts)
            {
                status = Status::Converged;
                break;
            }
        }

        Ok(Solution {
            x: z,
            status,
            trace,
            final_lambda: lambda,
            iterations,
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

/// One-shot generalized-ADMM solve from `opts.x0`.
pub fn solve_admm_robust<T: Scalar>(
    prob: &SensingProblem<T>,
    lambda: T,
    params: &HuberParams<T>,
    opts: &SolverOptions<T>,
) -> Result<Solution<T>> {
    AdmmRobust::new(prob, *params, opts.clone())?.solve(lambda)
}
