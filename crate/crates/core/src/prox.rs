//! Closed-form shrinkage operators.

use ndarray::{Array1, ArrayView1, ArrayViewMut1};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Non-negative, finite shrinkage threshold `τ`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ShrinkThreshold<T>(T);

impl<T: Scalar> ShrinkThreshold<T> {
    pub fn new(tau: T) -> Result<Self> {
        if tau >= T::zero() && tau.is_finite() {
            Ok(Self(tau))
        } else {
            Err(invalid("tau", "must be finite and non-negative"))
        }
    }

    pub fn get(self) -> T {
        self.0
    }
}

/// Scalar soft threshold `sign(v)·max(|v| − τ, 0)` with `sign(0) = 0`.
#[inline]
pub fn shrink<T: Scalar>(v: T, tau: T) -> T {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        T::zero()
    }
}

/// Elementwise soft thresholding, the prox of `τ‖·‖₁`.
pub fn soft_threshold<T: Scalar>(v: ArrayView1<T>, tau: ShrinkThreshold<T>) -> Array1<T> {
    v.mapv(|vi| shrink(vi, tau.0))
}

pub(crate) fn soft_threshold_into<T: Scalar>(out: &mut Array1<T>, v: &Array1<T>, tau: T) {
    ndarray::Zip::from(out)
        .and(v)
        .for_each(|o, &vi| *o = shrink(vi, tau));
}

/// Block shrinkage, the prox of `τ‖·‖₂`: scales `v` by
/// `max(‖v‖₂ − τ, 0)/‖v‖₂`, returning zero when `‖v‖₂ ≤ τ`.
pub fn group_shrink<T: Scalar>(v: ArrayView1<T>, tau: ShrinkThreshold<T>) -> Array1<T> {
    let mut out = v.to_owned();
    group_shrink_in_place(out.view_mut(), tau.0);
    out
}

pub(crate) fn group_shrink_in_place<T: Scalar>(mut v: ArrayViewMut1<T>, tau: T) {
    let norm = v.iter().fold(T::zero(), |acc, &a| acc + a * a).sqrt();
    if norm <= tau || norm == T::zero() {
        v.fill(T::zero());
    } else {
        let factor = (norm - tau) / norm;
        v.mapv_inplace(|a| a * factor);
    }
}

/// Prox step of the robust elastic net.
///
/// Minimizes `(L/2)‖x − v‖² + λ‖x‖₁ + β‖x‖²`, whose solution is
/// `S_{λ/(L+2β)}(v·L/(L+2β))`. With `β = 0` this is `S_{λ/L}(v)`.
pub fn elastic_shrink<T: Scalar>(
    v: ArrayView1<T>,
    lambda: T,
    beta: T,
    lipschitz: T,
) -> Result<Array1<T>> {
    let (scale, tau) = elastic_coefficients(lambda, beta, lipschitz)?;
    Ok(v.mapv(|vi| shrink(vi * scale, tau)))
}

/// `(L/(L+2β), λ/(L+2β))` for [`elastic_shrink`].
pub(crate) fn elastic_coefficients<T: Scalar>(lambda: T, beta: T, lipschitz: T) -> Result<(T, T)> {
    if !(lipschitz > T::zero() && lipschitz.is_finite()) {
        return Err(invalid("L", "must be positive"));
    }
    if !(beta >= T::zero() && beta.is_finite()) {
        return Err(invalid("beta", "must be non-negative"));
    }
    if !(lambda >= T::zero() && lambda.is_finite()) {
        return Err(invalid("lambda", "must be non-negative"));
    }
    let denom = lipschitz + T::lit(2.0) * beta;
    Ok((lipschitz / denom, lambda / denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn tau(t: f64) -> ShrinkThreshold<f64> {
        ShrinkThreshold::new(t).unwrap()
    }

    /// argmin over a uniform grid on [lo, hi]
    fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n)
            .map(|i| lo + i as f64 * step)
            .min_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
            .unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        let v = array![3.0, -0.5, -2.0];
        assert_eq!(soft_threshold(v.view(), tau(1.0)), array![2.0, 0.0, -1.0]);
        assert_eq!(soft_threshold(v.view(), tau(0.0)), v);
        assert!(ShrinkThreshold::new(-1.0).is_err());
        assert!(ShrinkThreshold::new(f64::INFINITY).is_err());
        assert_eq!(shrink(0.0, 0.0), 0.0);
    }

    #[test]
    fn soft_threshold_matches_grid_oracle() {
        for t in [0.0, 0.1, 0.35, 0.69, 0.7, 1.2] {
            let oracle = grid_argmin(|x| t * x.abs() + 0.5 * (x - 0.7).powi(2), -2.0, 2.0, 1e-4);
            let got = soft_threshold(array![0.7].view(), tau(t))[0];
            assert!((got - oracle).abs() <= 1e-4, "tau {t}: {got} vs {oracle}");
        }
    }

    #[test]
    fn group_shrink_examples() {
        let out = group_shrink(array![3.0, 4.0].view(), tau(2.0));
        assert_relative_eq!(out[0], 1.8, max_relative = 1e-14);
        assert_relative_eq!(out[1], 2.4, max_relative = 1e-14);
        assert_eq!(
            group_shrink(array![0.1, 0.1].view(), tau(1.0)),
            array![0.0, 0.0]
        );
        assert_eq!(
            group_shrink(array![0.0, 0.0].view(), tau(0.0)),
            array![0.0, 0.0]
        );
    }

    #[test]
    fn group_shrink_matches_2d_grid_oracle() {
        let v = [1.0, 2.0];
        let t = 0.5;
        let obj = |a: f64, b: f64| {
            t * (a * a + b * b).sqrt() + 0.5 * ((v[0] - a).powi(2) + (v[1] - b).powi(2))
        };
        // 400×400 grid over [-0.5, 2.5]²
        let step = 3.0 / 399.0;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..400 {
            for j in 0..400 {
                let (a, b) = (-0.5 + i as f64 * step, -0.5 + j as f64 * step);
                let f = obj(a, b);
                if f < best.0 {
                    best = (f, a, b);
                }
            }
        }
        let out = group_shrink(array![1.0, 2.0].view(), tau(t));
        assert!((out[0] - best.1).abs() <= step);
        assert!((out[1] - best.2).abs() <= step);
    }

    #[test]
    fn elastic_examples() {
        let v = array![2.0, -0.3, 0.9];
        assert_eq!(
            elastic_shrink(v.view(), 1.5, 0.0, 2.0).unwrap(),
            soft_threshold(v.view(), tau(0.75))
        );
        // ½(x − 2)² + |x| + x² → 3x − 1 = 0
        let out = elastic_shrink(array![2.0].view(), 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(out[0], 1.0 / 3.0, max_relative = 1e-14);
        assert!(elastic_shrink(v.view(), 1.0, 0.0, 0.0).is_err());
        assert!(elastic_shrink(v.view(), 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn elastic_matches_grid_oracle() {
        let cases = [
            (0.7, 0.3, 0.4, 1.3),
            (-1.9, 0.5, 1.0, 2.0),
            (0.2, 0.5, 0.1, 1.0),
            (3.1, 0.05, 2.5, 0.7),
        ];
        for (v, lambda, beta, l) in cases {
            let oracle = grid_argmin(
                |x| 0.5 * l * (x - v).powi(2) + lambda * x.abs() + beta * x * x,
                -4.0,
                4.0,
                1e-4,
            );
            let got = elastic_shrink(array![v].view(), lambda, beta, l).unwrap()[0];
            assert!((got - oracle).abs() <= 1e-4, "{got} vs {oracle}");
        }
    }

    #[test]
    fn sparsity_is_monotone_in_tau() {
        let v = array![0.3, -1.2, 2.5, 0.05, -0.8, 1.7, -3.3];
        let mut last = usize::MAX;
        for i in 0..50 {
            let t = i as f64 * 0.08;
            let nnz = soft_threshold(v.view(), tau(t))
                .iter()
                .filter(|&&a| a != 0.0)
                .count();
            assert!(nnz <= last);
            last = nnz;
        }
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, 3)
    }

    proptest! {
        #[test]
        fn operators_are_nonexpansive(a in vec3(), b in vec3(), t in 0.0f64..3.0) {
            let (a, b) = (Array1::from(a), Array1::from(b));
            let d = (&a - &b).mapv(|x| x * x).sum().sqrt();
            let sa = soft_threshold(a.view(), tau(t));
            let sb = soft_threshold(b.view(), tau(t));
            prop_assert!((&sa - &sb).mapv(|x| x * x).sum().sqrt() <= d + 1e-12);
            let ga = group_shrink(a.view(), tau(t));
            let gb = group_shrink(b.view(), tau(t));
            prop_assert!((&ga - &gb).mapv(|x| x * x).sum().sqrt() <= d + 1e-12);
            let inf_in = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            prop_assert!(sa.iter().all(|x| x.abs() <= inf_in));
        }

        #[test]
        fn group_shrink_preserves_direction(a in vec3(), t in 0.0f64..3.0) {
            let a = Array1::from(a);
            let g = group_shrink(a.view(), tau(t));
            let na = a.dot(&a).sqrt();
            if g.iter().any(|&x| x != 0.0) {
                let scale = g.dot(&a) / (na * na);
                prop_assert!(scale > 0.0);
                prop_assert!((&g - &(&a * scale)).iter().all(|x| x.abs() < 1e-12));
            }
        }

        #[test]
        fn prox_optimality_holds(a in vec3(), t in 0.0f64..3.0) {
            let a = Array1::from(a);
            // soft threshold: v − x ∈ τ ∂‖x‖₁
            let x = soft_threshold(a.view(), tau(t));
            for (&vi, &xi) in a.iter().zip(x.iter()) {
                let g = vi - xi;
                if xi != 0.0 {
                    prop_assert!((g - t * xi.signum()).abs() < 1e-8);
                } else {
                    prop_assert!(g.abs() <= t + 1e-8);
                }
            }
            // group: v − z ∈ τ ∂‖z‖₂
            let z = group_shrink(a.view(), tau(t));
            let nz = z.dot(&z).sqrt();
            let g = &a - &z;
            if nz > 0.0 {
                prop_assert!((&g - &(&z * (t / nz))).iter().all(|e| e.abs() < 1e-8));
            } else {
                prop_assert!(g.dot(&g).sqrt() <= t + 1e-8);
            }
        }

        #[test]
        fn elastic_prox_optimality(v in -5.0f64..5.0, lambda in 0.0f64..2.0, beta in 0.0f64..2.0, l in 0.1f64..4.0) {
            let x = elastic_shrink(array![v].view(), lambda, beta, l).unwrap()[0];
            // L(v − x) − 2βx ∈ λ ∂|x|
            let g = l * (v - x) - 2.0 * beta * x;
            if x != 0.0 {
                prop_assert!((g - lambda * x.signum()).abs() < 1e-8);
            } else {
                prop_assert!(g.abs() <= lambda + 1e-8);
            }
        }
    }
}
