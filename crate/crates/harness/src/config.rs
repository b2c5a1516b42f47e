use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use robust_cs::regpath::PathConfig;
use robust_cs::solvers::{MultiTaskEngine, SolverOptions};

use crate::error::{config, HarnessError, Result};
use crate::noise::NoiseSpec;
use crate::seeds::sub_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SolverKind {
    /// Quadratic-loss ADMM, i.e. ordinary CS.
    Cs,
    Nested,
    Fista,
    Admm,
    Affine,
    L1,
    /// Row-sparse robust recovery across all frames at once.
    MultiTask,
}

impl SolverKind {
    pub const ALL: [SolverKind; 7] = [
        SolverKind::Cs,
        SolverKind::Nested,
        SolverKind::Fista,
        SolverKind::Admm,
        SolverKind::Affine,
        SolverKind::L1,
        SolverKind::MultiTask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Cs => "cs",
            SolverKind::Nested => "nested",
            SolverKind::Fista => "fista",
            SolverKind::Admm => "admm",
            SolverKind::Affine => "affine",
            SolverKind::L1 => "l1",
            SolverKind::MultiTask => "multitask",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config(format!("unknown solver '{s}'")))
    }
}

/// How the residual budget `ε` of the path search is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonMode {
    /// Expected criterion for Gaussian noise at the loss scale `σ̂`.
    Gaussian,
    /// Expected criterion under the configured noise law.
    Mixture,
    /// Criterion evaluated on the noise actually drawn.
    Realized,
}

/// Source of the noise scale `σ̂` behind the Huber threshold `c = k·σ̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleSource {
    /// MAD of the measurements, i.e. of the residual at `x = 0`.
    Mad,
    /// Scale of the uncontaminated noise component, known to the simulation.
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Gmm,
    Gaussian,
    Cauchy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub image_seed: Option<u64>,
    pub matrix_seed: Option<u64>,
    pub noise_seed: Option<u64>,
    pub size: usize,
    pub bars: usize,
    pub frames: usize,
    pub block_size: usize,
    pub m_ratio: f64,
    pub orthogonal: bool,
    pub noise: NoiseKind,
    pub snr_db: f64,
    pub contamination: f64,
    pub kappa: f64,
    pub cauchy_scale: f64,
    pub solvers: Vec<SolverKind>,
    pub huber_k: f64,
    pub scale_source: ScaleSource,
    pub eta: f64,
    pub eta2: f64,
    pub mu: f64,
    pub beta: f64,
    pub max_iter: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub engine: MultiTaskEngine,
    pub grid_points: usize,
    pub decades: f64,
    pub bisect_rel_width: f64,
    pub epsilon_mode: EpsilonMode,
    pub epsilon_scale: f64,
    pub threads: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            image_seed: None,
            matrix_seed: None,
            noise_seed: None,
            size: 32,
            bars: 5,
            frames: 1,
            block_size: 4,
            m_ratio: 0.4,
            orthogonal: false,
            noise: NoiseKind::Gmm,
            snr_db: 20.0,
            contamination: 0.1,
            kappa: 100.0,
            cauchy_scale: 0.02,
            solvers: vec![SolverKind::Cs, SolverKind::Admm],
            huber_k: 1.345,
            scale_source: ScaleSource::Nominal,
            eta: 2.0,
            eta2: 2.0,
            mu: 1.0,
            beta: 0.0,
            max_iter: 5000,
            abs_tol: 1e-4,
            rel_tol: 1e-2,
            engine: MultiTaskEngine::Admm,
            grid_points: 20,
            decades: 4.0,
            bisect_rel_width: 1e-2,
            epsilon_mode: EpsilonMode::Realized,
            epsilon_scale: 1.0,
            threads: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Every recognised key, in manifest order.
pub const KEYS: [&str; 33] = [
    "seed",
    "image_seed",
    "matrix_seed",
    "noise_seed",
    "size",
    "bars",
    "frames",
    "block_size",
    "m_ratio",
    "orthogonal",
    "noise",
    "snr_db",
    "contamination",
    "kappa",
    "cauchy_scale",
    "solvers",
    "huber_k",
    "scale_source",
    "eta",
    "eta2",
    "mu",
    "beta",
    "max_iter",
    "abs_tol",
    "rel_tol",
    "engine",
    "grid_points",
    "decades",
    "bisect_rel_width",
    "epsilon_mode",
    "epsilon_scale",
    "threads",
    "out_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config(format!("{key}: cannot parse '{value}'")))
}

fn parse_opt_seed(key: &str, value: &str) -> Result<Option<u64>> {
    if value.is_empty() || value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config(format!(
            "{key}: expected true or false, got '{value}'"
        ))),
    }
}

fn show_seed(s: Option<u64>) -> String {
    s.map_or_else(|| "auto".to_string(), |v| v.to_string())
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "image_seed" => self.image_seed = parse_opt_seed(key, value)?,
            "matrix_seed" => self.matrix_seed = parse_opt_seed(key, value)?,
            "noise_seed" => self.noise_seed = parse_opt_seed(key, value)?,
            "size" => self.size = parse(key, value)?,
            "bars" => self.bars = parse(key, value)?,
            "frames" => self.frames = parse(key, value)?,
            "block_size" => self.block_size = parse(key, value)?,
            "m_ratio" => self.m_ratio = parse(key, value)?,
            "orthogonal" => self.orthogonal = parse_bool(key, value)?,
            "noise" => {
                self.noise = match value {
                    "gmm" => NoiseKind::Gmm,
                    "gaussian" => NoiseKind::Gaussian,
                    "cauchy" => NoiseKind::Cauchy,
                    _ => return Err(config(format!("noise: unknown kind '{value}'"))),
                }
            }
            "snr_db" => self.snr_db = parse(key, value)?,
            "contamination" => self.contamination = parse(key, value)?,
            "kappa" => self.kappa = parse(key, value)?,
            "cauchy_scale" => self.cauchy_scale = parse(key, value)?,
            "solvers" => {
                self.solvers = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(SolverKind::from_str)
                    .collect::<Result<_>>()?
            }
            "huber_k" => self.huber_k = parse(key, value)?,
            "scale_source" => {
                self.scale_source = match value {
                    "mad" => ScaleSource::Mad,
                    "nominal" => ScaleSource::Nominal,
                    _ => return Err(config(format!("scale_source: unknown source '{value}'"))),
                }
            }
            "eta" => self.eta = parse(key, value)?,
            "eta2" => self.eta2 = parse(key, value)?,
            "mu" => self.mu = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "max_iter" => self.max_iter = parse(key, value)?,
            "abs_tol" => self.abs_tol = parse(key, value)?,
            "rel_tol" => self.rel_tol = parse(key, value)?,
            "engine" => {
                self.engine = match value {
                    "admm" => MultiTaskEngine::Admm,
                    "fista" => MultiTaskEngine::Fista,
                    _ => return Err(config(format!("engine: unknown engine '{value}'"))),
                }
            }
            "grid_points" => self.grid_points = parse(key, value)?,
            "decades" => self.decades = parse(key, value)?,
            "bisect_rel_width" => self.bisect_rel_width = parse(key, value)?,
            "epsilon_mode" => {
                self.epsilon_mode = match value {
                    "gaussian" => EpsilonMode::Gaussian,
                    "mixture" => EpsilonMode::Mixture,
                    "realized" => EpsilonMode::Realized,
                    _ => return Err(config(format!("epsilon_mode: unknown mode '{value}'"))),
                }
            }
            "epsilon_scale" => self.epsilon_scale = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "seed" => self.seed.to_string(),
            "image_seed" => show_seed(self.image_seed),
            "matrix_seed" => show_seed(self.matrix_seed),
            "noise_seed" => show_seed(self.noise_seed),
            "size" => self.size.to_string(),
            "bars" => self.bars.to_string(),
            "frames" => self.frames.to_string(),
            "block_size" => self.block_size.to_string(),
            "m_ratio" => self.m_ratio.to_string(),
            "orthogonal" => self.orthogonal.to_string(),
            "noise" => match self.noise {
                NoiseKind::Gmm => "gmm",
                NoiseKind::Gaussian => "gaussian",
                NoiseKind::Cauchy => "cauchy",
            }
            .to_string(),
            "snr_db" => self.snr_db.to_string(),
            "contamination" => self.contamination.to_string(),
            "kappa" => self.kappa.to_string(),
            "cauchy_scale" => self.cauchy_scale.to_string(),
            "solvers" => self
                .solvers
                .iter()
                .map(|s| s.name())
                .collect::<Vec<_>>()
                .join(","),
            "huber_k" => self.huber_k.to_string(),
            "scale_source" => match self.scale_source {
                ScaleSource::Mad => "mad",
                ScaleSource::Nominal => "nominal",
            }
            .to_string(),
            "eta" => self.eta.to_string(),
            "eta2" => self.eta2.to_string(),
            "mu" => self.mu.to_string(),
            "beta" => self.beta.to_string(),
            "max_iter" => self.max_iter.to_string(),
            "abs_tol" => self.abs_tol.to_string(),
            "rel_tol" => self.rel_tol.to_string(),
            "engine" => match self.engine {
                MultiTaskEngine::Admm => "admm",
                MultiTaskEngine::Fista => "fista",
            }
            .to_string(),
            "grid_points" => self.grid_points.to_string(),
            "decades" => self.decades.to_string(),
            "bisect_rel_width" => self.bisect_rel_width.to_string(),
            "epsilon_mode" => match self.epsilon_mode {
                EpsilonMode::Gaussian => "gaussian",
                EpsilonMode::Mixture => "mixture",
                EpsilonMode::Realized => "realized",
            }
            .to_string(),
            "epsilon_scale" => self.epsilon_scale.to_string(),
            "threads" => self.threads.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// All keys as `key = value` lines, in [`KEYS`] order.
    pub fn to_kv(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 8 || !self.size.is_power_of_two() {
            return Err(config("size must be a power of two and at least 8"));
        }
        if self.frames == 0 {
            return Err(config("frames must be at least 1"));
        }
        if self.block_size > self.size {
            return Err(config("block_size exceeds size"));
        }
        if !(self.m_ratio > 0.0 && self.m_ratio.is_finite()) {
            return Err(config("m_ratio must be positive"));
        }
        if self.orthogonal && self.measurements() > self.size * self.size {
            return Err(config("orthogonal rows need m_ratio ≤ 1"));
        }
        if self.solvers.is_empty() {
            return Err(config("at least one solver is required"));
        }
        if !(self.huber_k > 0.0 && self.huber_k.is_finite()) {
            return Err(config("huber_k must be positive"));
        }
        if !(self.epsilon_scale > 0.0 && self.epsilon_scale.is_finite()) {
            return Err(config("epsilon_scale must be positive"));
        }
        if self.epsilon_mode == EpsilonMode::Mixture && self.noise == NoiseKind::Cauchy {
            return Err(config(
                "epsilon_mode = mixture has no finite budget under Cauchy noise",
            ));
        }
        self.noise_spec()
            .validate()
            .map_err(|e| config(e.to_string()))?;
        self.solver_options()
            .validate(self.size * self.size)
            .map_err(|e| config(e.to_string()))?;
        self.path_config(1.0).map_err(|e| config(e.to_string()))?;
        Ok(())
    }

    /// Number of measurements `M = round(m_ratio·N)`, at least 1.
    pub fn measurements(&self) -> usize {
        ((self.m_ratio * (self.size * self.size) as f64).round() as usize).max(1)
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        match self.noise {
            NoiseKind::Gmm => NoiseSpec::GaussianMixture {
                snr_db: self.snr_db,
                contamination: self.contamination,
                kappa: self.kappa,
            },
            NoiseKind::Gaussian => NoiseSpec::Gaussian {
                snr_db: self.snr_db,
            },
            NoiseKind::Cauchy => NoiseSpec::Cauchy {
                scale: self.cauchy_scale,
            },
        }
    }

    pub fn solver_options(&self) -> SolverOptions<f64> {
        SolverOptions {
            eta: self.eta,
            eta2: self.eta2,
            mu: self.mu,
            beta: self.beta,
            max_iter: self.max_iter,
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            ..SolverOptions::default()
        }
    }

    pub fn path_config(&self, epsilon: f64) -> robust_cs::Result<PathConfig<f64>> {
        let mut cfg = PathConfig::new(epsilon, robust_cs::regpath::Criterion::HuberResidual)?;
        cfg.grid_points = self.grid_points;
        cfg.decades = self.decades;
        cfg.bisect_rel_width = self.bisect_rel_width;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn image_seed(&self) -> u64 {
        self.image_seed
            .unwrap_or_else(|| sub_seed(self.seed, "image"))
    }

    pub fn matrix_seed(&self) -> u64 {
        self.matrix_seed
            .unwrap_or_else(|| sub_seed(self.seed, "matrix"))
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise_seed
            .unwrap_or_else(|| sub_seed(self.seed, "noise"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_text() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn parses_comments_and_lists() {
        let text = "# study\nseed = 9\nsolvers = cs, admm ,l1 # inline\n\nnoise = cauchy\ncauchy_scale = 0.1\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(
            cfg.solvers,
            vec![SolverKind::Cs, SolverKind::Admm, SolverKind::L1]
        );
        assert_eq!(cfg.noise_spec(), NoiseSpec::Cauchy { scale: 0.1 });
        assert_eq!(ExperimentConfig::parse(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "seed 3",
            "bogus = 1",
            "size = 24",
            "solvers = cs,magic",
            "contamination = 1.5",
            "noise = cauchy\nepsilon_mode = mixture",
            "scale_source = oracle",
            "eta = -1",
            "grid_points = 1",
            "orthogonal = maybe",
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text}");
        }
    }

    #[test]
    fn sub_seeds_are_independent() {
        let mut cfg = ExperimentConfig::default();
        let (i, m, n) = (cfg.image_seed(), cfg.matrix_seed(), cfg.noise_seed());
        assert!(i != m && m != n && i != n);
        cfg.noise_seed = Some(5);
        assert_eq!(cfg.image_seed(), i);
        assert_eq!(cfg.matrix_seed(), m);
        assert_eq!(cfg.noise_seed(), 5);
    }

    #[test]
    fn measurement_count() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.measurements(), 410);
    }
}
