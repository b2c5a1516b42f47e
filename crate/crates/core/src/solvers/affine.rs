use ndarray::{Array1, ArrayView1, Ix1, Zip};

use super::admm::modified_measurements;
use super::{
    check_lambda, check_stopping, diff_norm, huber_objective_from_fit, huber_zero_threshold, norm2,
    Clock, IterationRecord, LossKind, Monitor, Recovery, ResidualTest, Solution, SolverOptions,
    SolverTrace, StallDetector, Status, StopDecision, StoppingInput,
};
use crate::error::{check_len, invalid, Result};
use crate::linalg::{build_cached_solver, tmatvec, CachedSolver, QSpec};
use crate::model::{HuberParams, SensingProblem};
use crate::prox::soft_threshold_into;
use crate::scalar::Scalar;

/// Constraint vector `c = (1/total)·1`, so that `cᵀx = 1` fixes `Σxᵢ = total`.
pub fn power_constraint<T: Scalar>(total: T, n: usize) -> Result<Array1<T>> {
    if !(total != T::zero() && total.is_finite()) {
        return Err(invalid("total", "must be finite and nonzero"));
    }
    if n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    Ok(Array1::from_elem(n, T::one() / total))
}

/// Huber-loss ADMM with the affine constraint `cᵀx = 1`, enforced through a
/// second scaled multiplier. The x-update matrix `μΦᵀΦ + η₁I + η₂ccᵀ` is
/// factored once through the rank-one path of the cached solver.
///
/// Convergence additionally requires the returned iterate to satisfy
/// `|cᵀx − 1| ≤ abs_tol`.
#[derive(Debug, Clone)]
pub struct AdmmAffine<'a, T> {
    prob: &'a SensingProblem<T>,
    params: HuberParams<T>,
    opts: SolverOptions<T>,
    c: Array1<T>,
    cache: CachedSolver<'a, T>,
}

impl<'a, T: Scalar> AdmmAffine<'a, T> {
    pub fn new(
        prob: &'a SensingProblem<T>,
        params: HuberParams<T>,
        opts: SolverOptions<T>,
        c: Array1<T>,
    ) -> Result<Self> {
        opts.validate(prob.cols())?;
        check_len("constraint length", prob.cols(), c.len())?;
        if c.iter().all(|v| *v == T::zero()) {
            return Err(invalid("c", "must be nonzero"));
        }
        let q = QSpec::with_rank_one(opts.eta, opts.eta2, c.clone());
        let cache = build_cached_solver(prob.phi().view(), opts.mu, q)?;
        Ok(Self {
            prob,
            params,
            opts,
            c,
            cache,
        })
    }

    pub fn constraint(&self) -> &Array1<T> {
        &self.c
    }
}

impl<T: Scalar> Recovery<T> for AdmmAffine<'_, T> {
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
        let (phi, y, opts, params, c) = (
            self.prob.phi(),
            self.prob.y(),
            &self.opts,
            &self.params,
            &self.c,
        );
        let (mu, eta1, eta2) = (opts.mu, opts.eta, opts.eta2);
        let tau = lambda / eta1;
        let clock = Clock::start();

        let mut x = opts.initial(n, x0);
        let mut z = x.clone();
        let mut z_old = z.clone();
        let mut u1 = Array1::<T>::zeros(n);
        let mut u2 = T::zero();
        let mut phix = phi.dot(&x);
        let mut trace = SolverTrace::new();
        let mut stall = StallDetector::new();
        let mut status = Status::MaxIterations;
        let mut iterations = 0;

        for k in 1..=opts.max_iter {
            iterations = k;
            let v = modified_measurements(y, &phix, params, mu);
            let mut rhs = tmatvec(phi.view(), v.view()) * mu;
            let w2 = eta2 * (T::one() - u2);
            Zip::from(&mut rhs)
                .and(&z)
                .and(&u1)
                .and(c)
                .for_each(|r, &zi, &ui, &ci| *r += eta1 * (zi - ui) + w2 * ci);
            x = self.cache.solve_unchecked(rhs.view());

            std::mem::swap(&mut z, &mut z_old);
            let xu = &x + &u1;
            soft_threshold_into(&mut z, &xu, tau);
            Zip::from(&mut u1)
                .and(&x)
                .and(&z)
                .for_each(|ui, &xi, &zi| *ui += xi - zi);
            let cx = c.dot(&x);
            u2 += cx - T::one();

            phix = phi.dot(&x);
            monitor.observe(k, z.view());
            let phiz = phi.dot(&z);
            let objective =
                huber_objective_from_fit(self.prob, params, z.view(), &phiz, lambda, T::zero());

            let r1 = diff_norm(&x, &z);
            let r2 = (cx - T::one()).abs();
            let s = eta1 * diff_norm(&z, &z_old);
            let primal = [
                ResidualTest::new(r1, n, norm2(&x).max(norm2(&z))),
                ResidualTest::new(r2, 1, cx.abs().max(T::one())),
            ];
            let dual = [ResidualTest::new(s, n, eta1 * norm2(&u1))];
            trace.push(IterationRecord {
                objective,
                primal: vec![r1, r2],
                dual: vec![s],
                elapsed: clock.elapsed(),
            });
            stall.update(r1.max(r2));
            let input = StoppingInput::Admm {
                primal: &primal,
                dual: &dual,
            };
            let feasible = (c.dot(&z) - T::one()).abs() <= opts.abs_tol;
            if feasible && check_stopping(input, opts) == StopDecision::Converged {
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
        super::robust_objective(self.prob, &self.params, x, lambda, T::zero())
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

/// One-shot affine-constrained solve from `opts.x0`.
pub fn solve_admm_affine<T: Scalar>(
    prob: &SensingProblem<T>,
    lambda: T,
    c: &Array1<T>,
    params: &HuberParams<T>,
    opts: &SolverOptions<T>,
) -> Result<Solution<T>> {
    AdmmAffine::new(prob, *params, opts.clone(), c.clone())?.solve(lambda)
}
