use ndarray::{Array1, ArrayView1, Ix1, Zip};

use super::{
    certified, check_lambda, check_stopping, diff_norm, huber_objective_from_fit,
    huber_zero_threshold, norm2, screened_zero, Clock, IterationRecord, LossKind, Monitor,
    Recovery, Solution, SolverOptions, SolverTrace, StallDetector, Status, StopDecision,
    StoppingInput,
};
use crate::error::{check_len, Result};
use crate::linalg::spectral_bound;
use crate::linalg::tmatvec;
use crate::model::{HuberParams, SensingProblem};
use crate::prox::{elastic_coefficients, shrink};
use crate::scalar::Scalar;

/// Accelerated proximal gradient on the Huber objective, with an optional
/// `β‖x‖²` term folded into the shrink step.
#[derive(Debug, Clone)]
pub struct FistaRobust<'a, T> {
    prob: &'a SensingProblem<T>,
    params: HuberParams<T>,
    opts: SolverOptions<T>,
    lipschitz: T,
}

impl<'a, T: Scalar> FistaRobust<'a, T> {
    pub fn new(
        prob: &'a SensingProblem<T>,
        params: HuberParams<T>,
        opts: SolverOptions<T>,
    ) -> Result<Self> {
        opts.validate(prob.cols())?;
        let bound = spectral_bound(prob.phi().view());
        let lipschitz = if bound.lambda_max > T::zero() {
            bound.lipschitz()
        } else {
            T::one()
        };
        Ok(Self {
            prob,
            params,
            opts,
            lipschitz,
        })
    }

    /// Step constant `L = 2λ_max(ΦᵀΦ)`.
    pub fn lipschitz(&self) -> T {
        self.lipschitz
    }

    pub fn options(&self) -> &SolverOptions<T> {
        &self.opts
    }
}

impl<T: Scalar> Recovery<T> for FistaRobust<'_, T> {
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
        let (scale, tau) = elastic_coefficients(lambda, opts.beta, self.lipschitz)?;
        let step = T::one() / self.lipschitz;
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
            let w = Zip::from(&phiz)
                .and(y)
                .map_collect(|&f, &yi| params.psi(f - yi));
            let grad = tmatvec(phi.view(), w.view());
            let x_new = Zip::from(&z)
                .and(&grad)
                .map_collect(|&zi, &gi| shrink((zi - step * gi) * scale, tau));
            let phix_new = phi.dot(&x_new);

            let t_new = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) / T::lit(2.0);
            let coef = (t - T::one()) / t_new;
            z = &x_new + &((&x_new - &x) * coef);
            phiz = &phix_new + &((&phix_new - &phix) * coef);

            let delta = diff_norm(&x_new, &x);
            x = x_new;
            phix = phix_new;
            t = t_new;

            monitor.observe(k, x.view());
            let objective =
                huber_objective_from_fit(self.prob, params, x.view(), &phix, lambda, opts.beta);
            let norm = norm2(&x);
            trace.push(IterationRecord {
                objective,
                primal: vec![delta],
                dual: Vec::new(),
                elapsed: clock.elapsed(),
            });
            stall.update(delta);
            if check_stopping(StoppingInput::IterateChange { delta, norm }, opts)
                == StopDecision::Converged
                && certified(self.prob, params, x.view(), &phix, lambda, opts)
            {
                status = Status::Converged;
                break;
            }
        }

        Ok(Solution {
            x,
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
        0
    }
}

/// One-shot FISTA solve from `opts.x0`.
pub fn solve_fista_robust<T: Scalar>(
    prob: &SensingProblem<T>,
    lambda: T,
    params: &HuberParams<T>,
    opts: &SolverOptions<T>,
) -> Result<Solution<T>> {
    FistaRobust::new(prob, *params, opts.clone())?.solve(lambda)
}
