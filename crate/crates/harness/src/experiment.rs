use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, Ix1};
use robust_cs::model::{estimate_scale_mad, HuberParams, Residual, SensingProblem};
use robust_cs::regpath::{
    criterion_value, estimate_epsilon, select_lambda, Criterion, PathRecord, PathResult, PathStatus,
};
use robust_cs::solvers::{
    power_constraint, AdmmAffine, AdmmL1Loss, AdmmRobust, FistaRobust, MultiTask, MultiTaskProblem,
    NestedRobust, Recovery, SolverTrace, Status,
};

use crate::config::{EpsilonMode, ExperimentConfig, ScaleSource, SolverKind};
use crate::error::{config, Result};
use crate::haar::{haar2d, ihaar2d};
use crate::image::{gen_bar_sequence, gen_random_bars, ImageFrame};
use crate::metrics::psnr;
use crate::noise::{draw_noise, NoiseSpec};
use crate::seeds::sub_seed;
use crate::sensing::{gen_orthogonal_matrix, gen_sensing_matrix};

/// Generated data of one experiment: frames, their wavelet coefficients, the
/// sensing matrix and per-frame noise.
#[derive(Debug, Clone)]
pub struct Instance {
    pub frames: Vec<ImageFrame>,
    pub coeffs: Vec<Array1<f64>>,
    pub phi: Array2<f64>,
    pub clean: Vec<Array1<f64>>,
    pub noise: Vec<Array1<f64>>,
    /// Nominal noise scale of each frame (Gaussian σ or Cauchy scale).
    pub sigmas: Vec<f64>,
    /// MAD scale estimate of each frame's measurements.
    pub mad_scales: Vec<f64>,
}

impl Instance {
    pub fn measurements(&self, frame: usize) -> Array1<f64> {
        &self.clean[frame] + &self.noise[frame]
    }

    /// Loss scale `σ̂` of `frame` under `source`.
    pub fn scale(&self, source: ScaleSource, frame: usize) -> f64 {
        match source {
            ScaleSource::Mad => self.mad_scales[frame],
            ScaleSource::Nominal => self.sigmas[frame],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub fn build_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    cfg.validate()?;
    let frames = if cfg.frames == 1 {
        vec![gen_random_bars(cfg.size, cfg.bars, cfg.image_seed())?]
    } else {
        gen_bar_sequence(
            cfg.size,
            cfg.bars,
            cfg.frames,
            cfg.block_size,
            cfg.image_seed(),
        )?
    };
    let (m, n) = (cfg.measurements(), cfg.size * cfg.size);
    let phi = if cfg.orthogonal {
        gen_orthogonal_matrix(m, n, cfg.matrix_seed())?
    } else {
        gen_sensing_matrix(m, n, cfg.matrix_seed())?
    };
    let coeffs: Vec<_> = frames.iter().map(haar2d).collect();
    let clean: Vec<_> = coeffs.iter().map(|x| phi.dot(x)).collect();
    let spec = cfg.noise_spec();
    let noise = clean
        .iter()
        .enumerate()
        .map(|(f, y)| {
            draw_noise(
                y.view(),
                &spec,
                sub_seed(cfg.noise_seed(), &format!("frame{f}")),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let sigmas = clean.iter().map(|y| spec.base_sigma(y.view())).collect();
    let mad_scales = clean
        .iter()
        .zip(&noise)
        .map(|(c, n)| estimate_scale_mad(&Residual(c + n)))
        .collect::<robust_cs::Result<Vec<_>>>()?;
    Ok(Instance {
        frames,
        coeffs,
        phi,
        clean,
        noise,
        sigmas,
        mad_scales,
    })
}

/// Result for one frame of a solver run.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub frame: usize,
    pub psnr: f64,
    pub recovered: ImageFrame,
    pub nnz: usize,
    /// `|cᵀx − 1|` for the affine-constrained solver.
    pub constraint_gap: Option<f64>,
}

/// One solver applied to one frame, or to all frames for multi-task runs.
#[derive(Debug, Clone)]
pub struct SolverRun {
    pub solver: SolverKind,
    /// `None` when the run covers every frame jointly.
    pub frame: Option<usize>,
    pub lambda: f64,
    pub lambda_max: f64,
    pub epsilon: f64,
    pub criterion: f64,
    pub path_status: PathStatus,
    pub status: Status,
    pub iterations: usize,
    pub seconds: f64,
    pub records: Vec<PathRecord<f64>>,
    pub trace: SolverTrace<f64>,
    pub frames: Vec<FrameResult>,
}

impl SolverRun {
    /// File-name stem: solver name, plus the frame index for per-frame runs.
    pub fn label(&self) -> String {
        match self.frame {
            Some(f) => format!("{}_f{f:02}", self.solver),
            None => self.solver.to_string(),
        }
    }

    pub fn mean_psnr(&self) -> f64 {
        self.frames.iter().map(|f| f.psnr).sum::<f64>() / self.frames.len() as f64
    }
}

fn criterion_for(kind: SolverKind) -> Criterion {
    match kind {
        SolverKind::Cs => Criterion::L2Residual,
        SolverKind::L1 => Criterion::L1Residual,
        _ => Criterion::HuberResidual,
    }
}

/// Loss parameters used by `kind` on a frame with nominal noise scale `sigma`.
pub fn loss_params(
    cfg: &ExperimentConfig,
    kind: SolverKind,
    sigma: f64,
) -> Result<HuberParams<f64>> {
    if kind == SolverKind::Cs || sigma == 0.0 {
        return Ok(HuberParams::quadratic());
    }
    Ok(HuberParams::from_threshold(cfg.huber_k * sigma)?)
}

fn model_budget(
    spec: &NoiseSpec,
    params: &HuberParams<f64>,
    kind: Criterion,
    m: usize,
    sigma: f64,
) -> Result<f64> {
    match *spec {
        NoiseSpec::GaussianMixture {
            contamination,
            kappa,
            ..
        } => {
            let base = estimate_epsilon(params, m, sigma, kind)?;
            let wide = estimate_epsilon(params, m, sigma * kappa.sqrt(), kind)?;
            Ok((1.0 - contamination) * base + contamination * wide)
        }
        NoiseSpec::Gaussian { .. } => Ok(estimate_epsilon(params, m, sigma, kind)?),
        NoiseSpec::Cauchy { .. } => Err(config(
            "epsilon_mode = mixture has no finite budget under Cauchy noise",
        )),
    }
}

/// Residual budget for the path search over `frames`.
pub fn budget(
    cfg: &ExperimentConfig,
    inst: &Instance,
    params: &HuberParams<f64>,
    kind: Criterion,
    frames: &[usize],
) -> Result<f64> {
    let mut total = 0.0;
    for &f in frames {
        total += match cfg.epsilon_mode {
            EpsilonMode::Realized => criterion_value(inst.noise[f].view(), params, kind),
            EpsilonMode::Gaussian => estimate_epsilon(
                params,
                inst.phi.nrows(),
                inst.scale(cfg.scale_source, f),
                kind,
            )?,
            EpsilonMode::Mixture => model_budget(
                &cfg.noise_spec(),
                params,
                kind,
                inst.phi.nrows(),
                inst.sigmas[f],
            )?,
        };
    }
    Ok((total * cfg.epsilon_scale).max(f64::MIN_POSITIVE))
}

fn frame_result(
    cfg: &ExperimentConfig,
    inst: &Instance,
    frame: usize,
    x: ArrayView1<f64>,
    constraint_gap: Option<f64>,
) -> Result<FrameResult> {
    let recovered = ihaar2d(&x.to_owned(), cfg.size, cfg.size)?.clamped();
    Ok(FrameResult {
        frame,
        psnr: psnr(&inst.frames[frame], &recovered)?,
        recovered,
        nnz: x.iter().filter(|v| **v != 0.0).count(),
        constraint_gap,
    })
}

struct Selected {
    result: PathResult<f64, Ix1>,
    lambda_max: f64,
    seconds: f64,
}

fn select<S: Recovery<f64, Dim = Ix1>>(
    solver: &S,
    params: &HuberParams<f64>,
    cfg: &ExperimentConfig,
    epsilon: f64,
    kind: Criterion,
) -> Result<Selected> {
    let mut pcfg = cfg.path_config(epsilon)?;
    pcfg.criterion = kind;
    let start = Instant::now();
    let result = select_lambda(solver, params, &pcfg)?;
    Ok(Selected {
        lambda_max: solver.zero_threshold(),
        result,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs single-task solver `kind` on one frame with path selection of λ.
pub fn run_single(
    cfg: &ExperimentConfig,
    inst: &Instance,
    kind: SolverKind,
    frame: usize,
) -> Result<SolverRun> {
    if kind == SolverKind::MultiTask {
        return run_multitask(cfg, inst);
    }
    let prob = SensingProblem::new(inst.phi.clone(), inst.measurements(frame))?;
    let params = loss_params(cfg, kind, inst.scale(cfg.scale_source, frame))?;
    let crit = criterion_for(kind);
    let epsilon = budget(cfg, inst, &params, crit, &[frame])?;
    let opts = cfg.solver_options();
    let mut gap = None;
    let sel = match kind {
        SolverKind::Cs | SolverKind::Admm => select(
            &AdmmRobust::new(&prob, params, opts)?,
            &params,
            cfg,
            epsilon,
            crit,
        )?,
        SolverKind::Fista => select(
            &FistaRobust::new(&prob, params, opts)?,
            &params,
            cfg,
            epsilon,
            crit,
        )?,
        SolverKind::Nested => {
            let solver = NestedRobust::new(&prob, params, opts, NestedRobust::default_inner())?;
            select(&solver, &params, cfg, epsilon, crit)?
        }
        SolverKind::Affine => {
            let total = inst.coeffs[frame].sum();
            let c = power_constraint(total, prob.cols())?;
            let solver = AdmmAffine::new(&prob, params, opts, c.clone())?;
            let sel = select(&solver, &params, cfg, epsilon, crit)?;
            gap = Some((c.dot(&sel.result.solution.x) - 1.0).abs());
            sel
        }
        SolverKind::L1 => select(&AdmmL1Loss::new(&prob, opts)?, &params, cfg, epsilon, crit)?,
        SolverKind::MultiTask => unreachable!(),
    };
    let sol = &sel.result.solution;
    let criterion = sel
        .result
        .records
        .iter()
        .find(|r| r.lambda == sel.result.lambda_star)
        .map_or(f64::NAN, |r| r.criterion);
    Ok(SolverRun {
        solver: kind,
        frame: Some(frame),
        lambda: sel.result.lambda_star,
        lambda_max: sel.lambda_max,
        epsilon,
        criterion,
        path_status: sel.result.status,
        status: sol.status,
        iterations: sol.iterations,
        seconds: sel.seconds,
        frames: vec![frame_result(cfg, inst, frame, sol.x.view(), gap)?],
        records: sel.result.records,
        trace: sel.result.solution.trace,
    })
}

/// Joint row-sparse recovery of every frame.
pub fn run_multitask(cfg: &ExperimentConfig, inst: &Instance) -> Result<SolverRun> {
    let t = inst.len();
    let mut y = Array2::zeros((inst.phi.nrows(), t));
    for f in 0..t {
        y.column_mut(f).assign(&inst.measurements(f));
    }
    let prob = MultiTaskProblem::new(inst.phi.clone(), y)?;
    let sigma = (0..t).map(|f| inst.scale(cfg.scale_source, f)).sum::<f64>() / t as f64;
    let params = loss_params(cfg, SolverKind::MultiTask, sigma)?;
    let crit = Criterion::HuberResidual;
    let frames: Vec<usize> = (0..t).collect();
    let epsilon = budget(cfg, inst, &params, crit, &frames)?;
    let solver = MultiTask::new(&prob, params, cfg.engine, cfg.solver_options())?;
    let mut pcfg = cfg.path_config(epsilon)?;
    pcfg.criterion = crit;
    let start = Instant::now();
    let res = select_lambda(&solver, &params, &pcfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let x = &res.solution.x;
    let results = frames
        .iter()
        .map(|&f| frame_result(cfg, inst, f, x.column(f), None))
        .collect::<Result<Vec<_>>>()?;
    let criterion = res
        .records
        .iter()
        .find(|r| r.lambda == res.lambda_star)
        .map_or(f64::NAN, |r| r.criterion);
    Ok(SolverRun {
        solver: SolverKind::MultiTask,
        frame: None,
        lambda: res.lambda_star,
        lambda_max: solver.zero_threshold(),
        epsilon,
        criterion,
        path_status: res.status,
        status: res.solution.status,
        iterations: res.solution.iterations,
        seconds,
        records: res.records,
        trace: res.solution.trace,
        frames: results,
    })
}

/// Every (solver, frame) job of `cfg`, in solver order then frame order.
pub fn jobs(cfg: &ExperimentConfig) -> Vec<(SolverKind, usize)> {
    let mut out = Vec::new();
    for &kind in &cfg.solvers {
        if kind == SolverKind::MultiTask {
            out.push((kind, 0));
        } else {
            out.extend((0..cfg.frames).map(|f| (kind, f)));
        }
    }
    out
}

fn thread_count(cfg: &ExperimentConfig, jobs: usize) -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    let want = if cfg.threads == 0 { avail } else { cfg.threads };
    want.clamp(1, jobs.max(1))
}

/// Runs every job of `cfg` on `inst`. Jobs run concurrently; the output order
/// is that of [`jobs`].
pub fn run_solvers(cfg: &ExperimentConfig, inst: &Instance) -> Result<Vec<SolverRun>> {
    let jobs = jobs(cfg);
    let slots: Vec<Mutex<Option<Result<SolverRun>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..thread_count(cfg, jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(kind, frame)) = jobs.get(i) else {
                    break;
                };
                let res = run_single(cfg, inst, kind, frame);
                *slots[i].lock().unwrap() = Some(res);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every job ran"))
        .collect()
}
