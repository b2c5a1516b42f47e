use ndarray::{Array1, ArrayView1, Ix1, Zip};

use super::{
    check_lambda, check_stopping, diff_norm, l1, norm2, Clock, IterationRecord, LossKind, Monitor,
    Recovery, ResidualTest, Solution, SolverOptions, SolverTrace, StallDetector, Status,
    StopDecision, StoppingInput,
};
use crate::error::{check_len, Result};
use crate::linalg::{build_cached_solver, tmatvec, CachedSolver, QSpec};
use crate::model::SensingProblem;
use crate::prox::soft_threshold_into;
use crate::scalar::Scalar;

/// ADMM for `‖y − Φx‖₁ + λ‖x‖₁`, splitting both the residual (`v = Φx − y`)
/// and the coefficients (`z = x`).
#[derive(Debug, Clone)]
pub struct AdmmL1Loss<'a, T> {
    prob: &'a SensingProblem<T>,
    opts: SolverOptions<T>,
    cache: CachedSolver<'a, T>,
}

impl<'a, T: Scalar> AdmmL1Loss<'a, T> {
    pub fn new(prob: &'a SensingProblem<T>, opts: SolverOptions<T>) -> Result<Self> {
        opts.validate(prob.cols())?;
        let cache = build_cached_solver(prob.phi().view(), opts.eta, QSpec::identity(opts.eta2))?;
        Ok(Self { prob, opts, cache })
    }

    pub fn objective_value(&self, x: ArrayView1<T>, lambda: T) -> T {
        let fit = self.prob.phi().dot(&x);
        let loss = Zip::from(self.prob.y())
            .and(&fit)
            .fold(T::zero(), |acc, &yi, &fi| acc + (yi - fi).abs());
        loss + lambda * l1(x)
    }
}

impl<T: Scalar> Recovery<T> for AdmmL1Loss<'_, T> {
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
        let (m, n) = (self.prob.rows(), self.prob.cols());
        if let Some(x0) = &x0 {
            check_len("x0 length", n, x0.len())?;
        }
        let (phi, y, opts) = (self.prob.phi(), self.prob.y(), &self.opts);
        let (eta1, eta2) = (opts.eta, opts.eta2);
        let (tau_v, tau_z) = (T::one() / eta1, lambda / eta2);
        let clock = Clock::start();

        let mut x = opts.initial(n, x0);
        let mut z = x.clone();
        let mut z_old = z.clone();
        let mut v = &phi.dot(&x) - y;
        let mut v_old = v.clone();
        let mut u1 = Array1::<T>::zeros(m);
        let mut u2 = Array1::<T>::zeros(n);
        let mut trace = SolverTrace::new();
        let mut stall = StallDetector::new();
        let mut status = Status::MaxIterations;
        let mut iterations = 0;

        for k in 1..=opts.max_iter {
            iterations = k;
            let a = Zip::from(&v)
                .and(y)
                .and(&u1)
                .map_collect(|&vi, &yi, &ui| vi + yi - ui);
            let mut rhs = tmatvec(phi.view(), a.view()) * eta1;
            Zip::from(&mut rhs)
                .and(&z)
                .and(&u2)
                .for_each(|r, &zi, &ui| *r += eta2 * (zi - ui));
            x = self.cache.solve_unchecked(rhs.view());
            let phix = phi.dot(&x);

            std::mem::swap(&mut v, &mut v_old);
            let t = Zip::from(&phix)
                .and(y)
                .and(&u1)
                .map_collect(|&fi, &yi, &ui| fi - yi + ui);
            soft_threshold_into(&mut v, &t, tau_v);
            std::mem::swap(&mut z, &mut z_old);
            let xu = &x + &u2;
            soft_threshold_into(&mut z, &xu, tau_z);

            Zip::from(&mut u1)
                .and(&phix)
                .and(&v)
                .and(y)
                .for_each(|ui, &fi, &vi, &yi| *ui += fi - vi - yi);
            Zip::from(&mut u2)
                .and(&x)
                .and(&z)
                .for_each(|ui, &xi, &zi| *ui += xi - zi);

            monitor.observe(k, z.view());
            let objective = self.objective_value(z.view(), lambda);

            let r1 = diff_norm(&x, &z);
            let r2 = Zip::from(&phix)
                .and(&v)
                .and(y)
                .fold(T::zero(), |acc, &fi, &vi, &yi| {
                    acc + (fi - vi - yi) * (fi - vi - yi)
                })
                .sqrt();
            let s1 = eta1 * diff_norm(&v, &v_old);
            let s2 = eta2 * diff_norm(&z, &z_old);
            let primal = [
                ResidualTest::new(r1, n, norm2(&x).max(norm2(&z))),
                ResidualTest::new(r2, m, norm2(&phix).max(norm2(&v)).max(norm2(y))),
            ];
            let dual = [
                ResidualTest::new(s1, m, eta1 * norm2(&u1)),
                ResidualTest::new(s2, n, eta2 * norm2(&u2)),
            ];
            trace.push(IterationRecord {
                objective,
                primal: vec![r1, r2],
                dual: vec![s1, s2],
                elapsed: clock.elapsed(),
            });
            stall.update(r1.max(r2));
            let input = StoppingInput::Admm {
                primal: &primal,
                dual: &dual,
            };
            if check_stopping(input, opts) == StopDecision::Converged {
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
        self.objective_value(x, lambda)
    }

    fn residual(&self, x: ArrayView1<T>) -> Array1<T> {
        self.prob.y() - &self.prob.phi().dot(&x)
    }

    /// `‖Φᵀ sign(y)‖∞`.
    fn zero_threshold(&self) -> T {
        let s = self.prob.y().mapv(|v| {
            if v == T::zero() {
                T::zero()
            } else {
                v.signum()
            }
        });
        self.prob
            .phi()
            .t()
            .dot(&s)
            .iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    fn loss_kind(&self) -> LossKind {
        LossKind::L1
    }

    fn factorizations(&self) -> usize {
        usize::from(self.cache.cholesky().is_some())
    }
}

/// One-shot ℓ1-loss solve from `opts.x0`.
pub fn solve_admm_l1loss<T: Scalar>(
    prob: &SensingProblem<T>,
    lambda: T,
    opts: &SolverOptions<T>,
) -> Result<Solution<T>> {
    AdmmL1Loss::new(prob, opts.clone())?.solve(lambda)
}
