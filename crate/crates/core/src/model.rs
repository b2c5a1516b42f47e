//! Measurement model and the Huber robust loss.
//!
//! A [`SensingProblem`] holds the dense sensing operator `Φ` (M×N) and the
//! measurement vector `y`. The robust data-fit term is
//! `g(x) = Σᵢ ρ(yᵢ − (Φx)ᵢ)` with Huber's penalty `ρ` and its derivative,
//! the soft limiter `ψ`. The quadratic majorization helpers at the bottom of
//! this module are shared by the ADMM family and the nested MM baseline.

use ndarray::{Array1, Array2, ArrayView1, Zip};

use crate::error::{check_len, invalid, Error, Result};
use crate::scalar::Scalar;

/// Gaussian consistency factor for the median absolute deviation.
pub const MAD_CONSISTENCY: f64 = 1.4826;

/// Huber tuning constant giving 95% efficiency under Gaussian noise.
pub const HUBER_95_TUNING: f64 = 1.345;

/// Scale returned by [`estimate_scale_mad`] when every residual is zero.
pub const DEFAULT_SCALE_FLOOR: f64 = 1e-12;

/// Dense sensing operator `Φ` and measurements `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingProblem<T> {
    phi: Array2<T>,
    y: Array1<T>,
}

impl<T: Scalar> SensingProblem<T> {
    pub fn new(phi: Array2<T>, y: Array1<T>) -> Result<Self> {
        let (m, n) = phi.dim();
        if m == 0 || n == 0 {
            return Err(Error::Empty("sensing matrix"));
        }
        check_len("measurement vector length", m, y.len())?;
        if !phi.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("sensing matrix"));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("measurements"));
        }
        Ok(Self { phi, y })
    }

    pub fn phi(&self) -> &Array2<T> {
        &self.phi
    }

    pub fn y(&self) -> &Array1<T> {
        &self.y
    }

    /// Number of measurements M.
    pub fn rows(&self) -> usize {
        self.phi.nrows()
    }

    /// Number of coefficients N.
    pub fn cols(&self) -> usize {
        self.phi.ncols()
    }

    pub(crate) fn check_coefficients(&self, x: &ArrayView1<T>) -> Result<()> {
        check_len("coefficient vector length", self.cols(), x.len())
    }

    /// `r = y − Φx`.
    pub fn residual(&self, x: ArrayView1<T>) -> Result<Residual<T>> {
        self.check_coefficients(&x)?;
        Ok(Residual(&self.y - &self.phi.dot(&x)))
    }

    /// Same problem with the measurements replaced.
    pub fn with_measurements(&self, y: Array1<T>) -> Result<Self> {
        Self::new(self.phi.clone(), y)
    }
}

/// Measurement residual `r = y − Φx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual<T>(pub Array1<T>);

impl<T: Scalar> Residual<T> {
    pub fn view(&self) -> ArrayView1<'_, T> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<T> From<Array1<T>> for Residual<T> {
    fn from(r: Array1<T>) -> Self {
        Residual(r)
    }
}

/// Huber penalty configuration.
///
/// The clipping threshold is `c = k·ν²`; it is recomputed whenever `k` or `ν`
/// changes. An infinite threshold turns the penalty into the plain quadratic
/// loss, which is how "Huber disabled" (ordinary CS) is expressed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParams<T> {
    k: T,
    nu: T,
    c: T,
}

impl<T: Scalar> HuberParams<T> {
    pub fn new(k: T, nu: T) -> Result<Self> {
        if !(k > T::zero()) || k.is_nan() {
            return Err(invalid("k", "must be positive"));
        }
        if !(nu > T::zero() && nu.is_finite()) {
            return Err(invalid("nu", "must be positive and finite"));
        }
        let c = k * nu * nu;
        if !(c > T::zero()) {
            return Err(invalid("c", "threshold k·ν² underflows to zero"));
        }
        Ok(Self { k, nu, c })
    }

    /// Threshold given directly (`ν = 1`, `k = c`).
    pub fn from_threshold(c: T) -> Result<Self> {
        Self::new(c, T::one())
    }

    /// Classical Huber choice `c = 1.345·scale`.
    pub fn classical(scale: T) -> Result<Self> {
        let nu = scale;
        if !(nu > T::zero() && nu.is_finite()) {
            return Err(invalid("nu", "must be positive and finite"));
        }
        // k·ν² = 1.345·ν
        Self::new(T::lit(HUBER_95_TUNING) / nu, nu)
    }

    /// Classical threshold with the scale estimated by MAD from the
    /// measurements, i.e. the residual at `x = 0`.
    pub fn from_measurements(y: ArrayView1<T>) -> Result<Self> {
        let scale = estimate_scale_mad(&Residual(y.to_owned()))?;
        Self::classical(scale)
    }

    /// Quadratic loss: `ρ(r) = r²/2` everywhere.
    pub fn quadratic() -> Self {
        Self {
            k: T::infinity(),
            nu: T::one(),
            c: T::infinity(),
        }
    }

    pub fn k(&self) -> T {
        self.k
    }

    pub fn nu(&self) -> T {
        self.nu
    }

    /// Clipping threshold `c = k·ν²`.
    pub fn threshold(&self) -> T {
        self.c
    }

    pub fn is_quadratic(&self) -> bool {
        self.c.is_infinite()
    }

    pub fn with_k(self, k: T) -> Result<Self> {
        Self::new(k, self.nu)
    }

    pub fn with_nu(self, nu: T) -> Result<Self> {
        Self::new(self.k, nu)
    }

    /// Huber penalty without input validation.
    #[inline]
    pub fn rho(&self, r: T) -> T {
        let a = r.abs();
        if a <= self.c {
            r * r / T::lit(2.0)
        } else {
            self.c * a - self.c * self.c / T::lit(2.0)
        }
    }

    /// Soft limiter `ψ = ρ'` without input validation.
    #[inline]
    pub fn psi(&self, r: T) -> T {
        if r.abs() <= self.c {
            r
        } else {
            self.c * r.signum()
        }
    }
}

/// Diagonal weighting used to build the quadratic surrogate of `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme<T> {
    /// `W = μI`.
    ModifiedResiduals { mu: T },
    /// `wᵢᵢ = ψ(rᵢ)/rᵢ`, with `wᵢᵢ = 1` when `|rᵢ| < epsilon_floor`.
    IterativelyReweighted { epsilon_floor: T },
}

impl<T: Scalar> WeightScheme<T> {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightScheme::ModifiedResiduals { mu } if !(mu > T::zero() && mu.is_finite()) => {
                Err(invalid("mu", "must be positive"))
            }
            WeightScheme::IterativelyReweighted { epsilon_floor }
                if !(epsilon_floor > T::zero() && epsilon_floor.is_finite()) =>
            {
                Err(invalid("epsilon_floor", "must be positive"))
            }
            _ => Ok(()),
        }
    }
}

impl<T: Scalar> Default for WeightScheme<T> {
    fn default() -> Self {
        WeightScheme::ModifiedResiduals { mu: T::one() }
    }
}

pub fn huber_rho<T: Scalar>(r: T, params: &HuberParams<T>) -> Result<T> {
    if !r.is_finite() {
        return Err(Error::NonFinite("residual"));
    }
    Ok(params.rho(r))
}

pub fn huber_psi<T: Scalar>(r: T, params: &HuberParams<T>) -> Result<T> {
    if !r.is_finite() {
        return Err(Error::NonFinite("residual"));
    }
    Ok(params.psi(r))
}

/// `g(x) = Σᵢ ρ(yᵢ − (Φx)ᵢ)`.
pub fn robust_loss<T: Scalar>(
    x: ArrayView1<T>,
    prob: &SensingProblem<T>,
    params: &HuberParams<T>,
) -> Result<T> {
    let r = prob.residual(x)?;
    Ok(loss_of_residual(r.view(), params))
}

pub(crate) fn loss_of_residual<T: Scalar>(r: ArrayView1<T>, params: &HuberParams<T>) -> T {
    r.iter().fold(T::zero(), |acc, &ri| acc + params.rho(ri))
}

/// `∇g(x) = Φᵀψ(Φx − y)`.
pub fn robust_grad<T: Scalar>(
    x: ArrayView1<T>,
    prob: &SensingProblem<T>,
    params: &HuberParams<T>,
) -> Result<Array1<T>> {
    prob.check_coefficients(&x)?;
    Ok(grad_unchecked(x, prob, params))
}

pub(crate) fn grad_unchecked<T: Scalar>(
    x: ArrayView1<T>,
    prob: &SensingProblem<T>,
    params: &HuberParams<T>,
) -> Array1<T> {
    let mut r = prob.phi.dot(&x);
    Zip::from(&mut r)
        .and(&prob.y)
        .for_each(|ri, &yi| *ri = params.psi(*ri - yi));
    crate::linalg::tmatvec(prob.phi.view(), r.view())
}

/// Robust scale: `1.4826 · median(|rᵢ − median(r)|)`.
///
/// Falls back to `1.4826 · median(|rᵢ|)` when the MAD vanishes and to
/// [`DEFAULT_SCALE_FLOOR`] when that vanishes too.
pub fn estimate_scale_mad<T: Scalar>(r: &Residual<T>) -> Result<T> {
    estimate_scale_mad_with_floor(r, T::lit(DEFAULT_SCALE_FLOOR))
}

pub fn estimate_scale_mad_with_floor<T: Scalar>(r: &Residual<T>, floor: T) -> Result<T> {
    if r.is_empty() {
        return Err(Error::Empty("residual"));
    }
    if !r.0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("residual"));
    }
    let mut buf: Vec<T> = r.0.to_vec();
    let center = median_in_place(&mut buf);
    buf.iter_mut()
        .zip(r.0.iter())
        .for_each(|(b, &ri)| *b = (ri - center).abs());
    let consistency = T::lit(MAD_CONSISTENCY);
    let mad = median_in_place(&mut buf);
    if mad > T::zero() {
        return Ok(consistency * mad);
    }
    buf.iter_mut()
        .zip(r.0.iter())
        .for_each(|(b, &ri)| *b = ri.abs());
    let fallback = median_in_place(&mut buf);
    if fallback > T::zero() {
        Ok(consistency * fallback)
    } else {
        Ok(floor)
    }
}

/// Median of a non-empty slice; the midpoint of the two central order
/// statistics for even lengths. Reorders `v`.
pub(crate) fn median_in_place<T: Scalar>(v: &mut [T]) -> T {
    let n = v.len();
    let cmp = |a: &T, b: &T| a.partial_cmp(b).expect("finite values");
    let mid = n / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = lower
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
        (lower + upper) / T::lit(2.0)
    }
}

/// Diagonal of `W` for the chosen scheme.
pub fn irls_weights<T: Scalar>(
    r: &Residual<T>,
    params: &HuberParams<T>,
    scheme: WeightScheme<T>,
) -> Result<Array1<T>> {
    scheme.validate()?;
    Ok(match scheme {
        WeightScheme::ModifiedResiduals { mu } => Array1::from_elem(r.len(), mu),
        WeightScheme::IterativelyReweighted { epsilon_floor } => r.0.mapv(|ri| {
            if ri.abs() < epsilon_floor {
                T::one()
            } else {
                params.psi(ri) / ri
            }
        }),
    })
}

/// Expansion point of the quadratic surrogate: `v = W⁻¹ψ(y − Φx) + Φx`.
pub fn majorization_point<T: Scalar>(
    x: ArrayView1<T>,
    prob: &SensingProblem<T>,
    params: &HuberParams<T>,
    weights: ArrayView1<T>,
) -> Result<Array1<T>> {
    prob.check_coefficients(&x)?;
    check_len("weight vector length", prob.rows(), weights.len())?;
    if weights.iter().any(|&w| !(w > T::zero())) {
        return Err(invalid("weights", "every weight must be positive"));
    }
    let mut v = prob.phi.dot(&x);
    Zip::from(&mut v)
        .and(&prob.y)
        .and(&weights)
        .for_each(|vi, &yi, &wi| *vi = *vi + params.psi(yi - *vi) / wi);
    Ok(v)
}

/// Constant `C = g(x) − ½ ψᵀW⁻¹ψ` of the surrogate expanded at `x`.
pub fn majorization_constant<T: Scalar>(
    x: ArrayView1<T>,
    prob: &SensingProblem<T>,
    params: &HuberParams<T>,
    weights: ArrayView1<T>,
) -> Result<T> {
    let r = prob.residual(x)?;
    check_len("weight vector length", prob.rows(), weights.len())?;
    let g = loss_of_residual(r.view(), params);
    let quad =
        r.0.iter()
            .zip(weights.iter())
            .fold(T::zero(), |acc, (&ri, &wi)| {
                let p = params.psi(ri);
                acc + p * p / wi
            });
    Ok(g - quad / T::lit(2.0))
}

/// Surrogate value `½‖W^{1/2}(v − Φx′)‖² + C`.
pub fn surrogate_value<T: Scalar>(
    x_prime: ArrayView1<T>,
    prob: &SensingProblem<T>,
    v: ArrayView1<T>,
    weights: ArrayView1<T>,
    constant: T,
) -> Result<T> {
    prob.check_coefficients(&x_prime)?;
    check_len("expansion point length", prob.rows(), v.len())?;
    let px = prob.phi.dot(&x_prime);
    let quad = Zip::from(&px)
        .and(&v)
        .and(&weights)
        .fold(T::zero(), |acc, &p, &vi, &wi| {
            acc + wi * (vi - p) * (vi - p)
        });
    Ok(quad / T::lit(2.0) + constant)
}
