use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};

use crate::error::{input, Result};
use crate::seeds::rng;

/// Additive measurement-noise law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    /// Gaussian base noise, each entry independently replaced by a draw with
    /// `kappa` times the variance with probability `contamination`. The SNR
    /// is measured against the total mixture variance.
    GaussianMixture {
        snr_db: f64,
        contamination: f64,
        kappa: f64,
    },
    /// `scale` times a standard Cauchy draw.
    Cauchy {
        scale: f64,
    },
    Gaussian {
        snr_db: f64,
    },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::GaussianMixture {
                snr_db,
                contamination,
                kappa,
            } => {
                if snr_db.is_nan() {
                    return Err(input("snr_db must be a number"));
                }
                if !(0.0..1.0).contains(&contamination) {
                    return Err(input("contamination must lie in [0, 1)"));
                }
                if !(kappa >= 1.0 && kappa.is_finite()) {
                    return Err(input("kappa must be at least 1"));
                }
            }
            NoiseSpec::Cauchy { scale } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(input("cauchy scale must be positive"));
                }
            }
            NoiseSpec::Gaussian { snr_db } => {
                if snr_db.is_nan() {
                    return Err(input("snr_db must be a number"));
                }
            }
        }
        Ok(())
    }

    /// Standard deviation of the nominal (uncontaminated) noise component for
    /// the given clean measurements; the Cauchy scale for Cauchy noise.
    pub fn base_sigma(&self, clean: ArrayView1<f64>) -> f64 {
        let power = clean.dot(&clean) / clean.len().max(1) as f64;
        let total = |snr_db: f64| power / 10f64.powf(snr_db / 10.0);
        match *self {
            NoiseSpec::GaussianMixture {
                snr_db,
                contamination,
                kappa,
            } => (total(snr_db) / (1.0 - contamination + contamination * kappa)).sqrt(),
            NoiseSpec::Cauchy { scale } => scale,
            NoiseSpec::Gaussian { snr_db } => total(snr_db).sqrt(),
        }
    }
}

/// Noise vector drawn for `clean`; add it to obtain the measurements.
pub fn draw_noise(clean: ArrayView1<f64>, spec: &NoiseSpec, seed: u64) -> Result<Array1<f64>> {
    spec.validate()?;
    let mut rng = rng(seed);
    let sigma = spec.base_sigma(clean);
    let m = clean.len();
    let noise = match *spec {
        NoiseSpec::GaussianMixture {
            contamination,
            kappa,
            ..
        } => {
            let wide = sigma * kappa.sqrt();
            Array1::from_shape_fn(m, |_| {
                let outlier = rng.random::<f64>() < contamination;
                let n: f64 = rng.sample(StandardNormal);
                if outlier {
                    wide * n
                } else {
                    sigma * n
                }
            })
        }
        NoiseSpec::Cauchy { scale } => {
            let law = Cauchy::new(0.0, scale).map_err(|e| input(e.to_string()))?;
            Array1::from_shape_fn(m, |_| law.sample(&mut rng))
        }
        NoiseSpec::Gaussian { .. } => {
            Array1::from_shape_fn(m, |_| sigma * rng.sample::<f64, _>(StandardNormal))
        }
    };
    Ok(noise)
}

/// `clean` plus a draw of `spec`.
pub fn apply_noise(clean: ArrayView1<f64>, spec: &NoiseSpec, seed: u64) -> Result<Array1<f64>> {
    Ok(&clean + &draw_noise(clean, spec, seed)?)
}
