use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use robust_cs::model::SensingProblem;
use robust_cs::solvers::{
    AdmmAffine, AdmmL1Loss, AdmmRobust, FistaRobust, NestedRobust, Recovery, Solution,
};
use robust_cs_harness::config::{ExperimentConfig, SolverKind};
use robust_cs_harness::error::{HarnessError, Result};
use robust_cs_harness::experiment::{build_instance, loss_params, run_multitask, run_single};
use robust_cs_harness::haar::ihaar2d;
use robust_cs_harness::metrics::psnr;
use robust_cs_harness::pgm::write_pgm;
use robust_cs_harness::report::{
    run_experiment, write_convergence_csv, write_manifest, Comparison, GainAssertion,
};

const EXIT_THRESHOLD_MISS: u8 = 3;

macro_rules! config_flags {
    ($($field:ident),* $(,)?) => {
        /// Config file plus per-key overrides.
        #[derive(Args, Debug, Default)]
        struct ConfigArgs {
            /// Config file of `key = value` lines.
            #[arg(long)]
            config: Option<PathBuf>,
            /// Solver to run; repeatable. Replaces the `solvers` key.
            #[arg(long = "solver")]
            solver: Vec<String>,
            $(
                #[arg(long, value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl ConfigArgs {
            fn overrides(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

config_flags!(
    seed,
    image_seed,
    matrix_seed,
    noise_seed,
    size,
    bars,
    frames,
    block_size,
    m_ratio,
    orthogonal,
    noise,
    snr_db,
    contamination,
    kappa,
    cauchy_scale,
    solvers,
    huber_k,
    scale_source,
    eta,
    eta2,
    mu,
    beta,
    max_iter,
    abs_tol,
    rel_tol,
    engine,
    grid_points,
    decades,
    bisect_rel_width,
    epsilon_mode,
    epsilon_scale,
    threads,
    out_dir,
);

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for (k, v) in self.overrides() {
            cfg.set(k, v)?;
        }
        if !self.solver.is_empty() {
            cfg.set("solvers", &self.solver.join(","))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "robust-cs",
    version,
    about = "Robust compressed-sensing experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the frames, coefficients, sensing matrix and measurements.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run one solver at one λ on one frame.
    Solve {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Regularization weight.
        #[arg(long)]
        lambda: f64,
        /// Read `--lambda` as a fraction of λ_max.
        #[arg(long)]
        relative: bool,
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
    /// Select λ along the regularization path for one solver.
    Path {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
    /// Run the full study described by the config.
    Experiment {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Tabulate PSNR across output directories of earlier runs.
    Compare {
        /// Output directories holding a summary.csv.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Median gain requirement `solver:baseline:min_db`; repeatable.
        /// Exits with code 3 when any requirement is missed.
        #[arg(long = "assert")]
        assertions: Vec<String>,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn write_vectors(path: &Path, headers: &[&str], cols: &[&Array1<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    for i in 0..cols[0].len() {
        w.write_record(cols.iter().map(|c| c[i].to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn gen(cfg: &ExperimentConfig) -> Result<()> {
    let inst = build_instance(cfg)?;
    let dir = &cfg.out_dir;
    create_dir(dir)?;
    let mut files = Vec::new();
    for (f, frame) in inst.frames.iter().enumerate() {
        let name = format!("original_f{f:02}.pgm");
        write_pgm(&dir.join(&name), frame)?;
        files.push(name);
        let name = format!("coefficients_f{f:02}.csv");
        write_vectors(&dir.join(&name), &["coefficient"], &[&inst.coeffs[f]])?;
        files.push(name);
        let name = format!("measurements_f{f:02}.csv");
        let y = inst.measurements(f);
        write_vectors(
            &dir.join(&name),
            &["clean", "noise", "measured"],
            &[&inst.clean[f], &inst.noise[f], &y],
        )?;
        files.push(name);
    }
    let mut w = csv::Writer::from_path(dir.join("phi.csv"))?;
    w.write_record((0..inst.phi.ncols()).map(|j| format!("c{j}")))?;
    for row in inst.phi.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Io {
        path: "phi.csv".into(),
        source: e,
    })?;
    files.push("phi.csv".into());
    files.sort();
    write_manifest(cfg, dir, &files)?;
    println!("wrote {} artifacts to {}", files.len(), dir.display());
    Ok(())
}

fn solve_once<S: Recovery<f64, Dim = ndarray::Ix1>>(
    solver: &S,
    lambda: f64,
    relative: bool,
) -> Result<(f64, Solution<f64>)> {
    let lambda = if relative {
        lambda * solver.zero_threshold()
    } else {
        lambda
    };
    Ok((lambda, solver.solve(lambda)?))
}

fn solve(cfg: &ExperimentConfig, lambda: f64, relative: bool, frame: usize) -> Result<()> {
    let inst = build_instance(cfg)?;
    if frame >= inst.len() {
        return Err(HarnessError::Config(format!("frame {frame} out of range")));
    }
    let kind = cfg.solvers[0];
    let prob = SensingProblem::new(inst.phi.clone(), inst.measurements(frame))?;
    let params = loss_params(cfg, kind, inst.scale(cfg.scale_source, frame))?;
    let opts = cfg.solver_options();
    let (lambda, sol) = match kind {
        SolverKind::Cs | SolverKind::Admm => {
            solve_once(&AdmmRobust::new(&prob, params, opts)?, lambda, relative)?
        }
        SolverKind::Fista => solve_once(&FistaRobust::new(&prob, params, opts)?, lambda, relative)?,
        SolverKind::Nested => solve_once(
            &NestedRobust::new(&prob, params, opts, NestedRobust::default_inner())?,
            lambda,
            relative,
        )?,
        SolverKind::Affine => {
            let c = robust_cs::solvers::power_constraint(inst.coeffs[frame].sum(), prob.cols())?;
            solve_once(&AdmmAffine::new(&prob, params, opts, c)?, lambda, relative)?
        }
        SolverKind::L1 => solve_once(&AdmmL1Loss::new(&prob, opts)?, lambda, relative)?,
        SolverKind::MultiTask => {
            return Err(HarnessError::Config(
                "solve runs single-frame solvers; use path or experiment for multitask".into(),
            ))
        }
    };
    let recovered = ihaar2d(&sol.x, cfg.size, cfg.size)?.clamped();
    let dir = &cfg.out_dir;
    create_dir(dir)?;
    write_pgm(&dir.join(format!("{kind}_f{frame:02}.pgm")), &recovered)?;
    let path = dir.join(format!("convergence_{kind}_f{frame:02}.csv"));
    let file = fs::File::create(&path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    write_convergence_csv(&sol.trace, file)?;
    println!(
        "{kind} frame {frame}: lambda {lambda:.6e}, {:?} after {} iterations, nnz {}, psnr {:.2} dB",
        sol.status,
        sol.iterations,
        sol.nnz(),
        psnr(&inst.frames[frame], &recovered)?
    );
    Ok(())
}

fn path(cfg: &ExperimentConfig, frame: usize) -> Result<()> {
    let inst = build_instance(cfg)?;
    if frame >= inst.len() {
        return Err(HarnessError::Config(format!("frame {frame} out of range")));
    }
    let kind = cfg.solvers[0];
    let run = if kind == SolverKind::MultiTask {
        run_multitask(cfg, &inst)?
    } else {
        run_single(cfg, &inst, kind, frame)?
    };
    let dir = &cfg.out_dir;
    create_dir(dir)?;
    let p = dir.join(format!("path_{}.csv", run.label()));
    let file = fs::File::create(&p).map_err(|e| HarnessError::Io {
        path: p.display().to_string(),
        source: e,
    })?;
    robust_cs::regpath::write_path_csv(&run.records, file).map_err(|e| HarnessError::Io {
        path: p.display().to_string(),
        source: e,
    })?;
    println!(
        "{}: lambda* {:.6e} ({:?}, {} solves), mean psnr {:.2} dB",
        run.label(),
        run.lambda,
        run.path_status,
        run.records.len(),
        run.mean_psnr()
    );
    Ok(())
}

fn experiment(cfg: &ExperimentConfig) -> Result<()> {
    let report = run_experiment(cfg)?;
    for run in &report.runs {
        println!(
            "{:<14} lambda {:.4e}  iterations {:>5}  psnr {:.2} dB",
            run.label(),
            run.lambda,
            run.iterations,
            run.mean_psnr()
        );
    }
    println!(
        "wrote {} artifacts to {}",
        report.files.len(),
        report.out_dir.display()
    );
    Ok(())
}

fn compare(dirs: &[PathBuf], assertions: &[String]) -> Result<bool> {
    let assertions = assertions
        .iter()
        .map(|a| a.parse::<GainAssertion>())
        .collect::<Result<Vec<_>>>()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let cmp = Comparison::load(dirs)?;
    print!("{}", cmp.table());
    let failures = cmp.check(&assertions);
    for a in &assertions {
        if let Some(g) = cmp.median_gain(&a.solver, &a.baseline) {
            println!("median gain {} over {}: {g:.2} dB", a.solver, a.baseline);
        }
    }
    for f in &failures {
        eprintln!("threshold missed: {f}");
    }
    Ok(failures.is_empty())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen { cfg } => gen(&cfg.resolve()?).map(|_| true),
        Command::Solve {
            cfg,
            lambda,
            relative,
            frame,
        } => solve(&cfg.resolve()?, lambda, relative, frame).map(|_| true),
        Command::Path { cfg, frame } => path(&cfg.resolve()?, frame).map(|_| true),
        Command::Experiment { cfg } => experiment(&cfg.resolve()?).map(|_| true),
        Command::Compare { dirs, assertions } => compare(&dirs, &assertions),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_THRESHOLD_MISS),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
