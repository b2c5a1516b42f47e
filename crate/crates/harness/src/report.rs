use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use robust_cs::regpath::{write_path_csv, PathStatus};
use robust_cs::solvers::{SolverTrace, Status};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{input, HarnessError, Result};
use crate::experiment::{build_instance, run_solvers, Instance, SolverRun};
use crate::pgm::write_pgm;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Columns holding wall-clock measurements, which vary between runs.
pub const TIMING_COLUMNS: [&str; 2] = ["seconds", "elapsed"];

pub const SUMMARY_HEADER: [&str; 13] = [
    "solver",
    "frame",
    "lambda",
    "lambda_max",
    "epsilon",
    "criterion",
    "path_status",
    "status",
    "iterations",
    "nnz",
    "psnr",
    "constraint_gap",
    "seconds",
];

/// Files written by an experiment and the runs behind them.
#[derive(Debug, Clone)]
pub struct Report {
    pub out_dir: PathBuf,
    pub runs: Vec<SolverRun>,
    /// Artifacts relative to `out_dir`, excluding the manifest.
    pub files: Vec<String>,
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Converged => "converged",
        Status::MaxIterations => "max_iterations",
    }
}

fn path_status_name(s: PathStatus) -> &'static str {
    match s {
        PathStatus::Met => "met",
        PathStatus::NotMet => "not_met",
    }
}

pub fn write_convergence_csv<W: std::io::Write>(trace: &SolverTrace<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "objective", "primal", "dual", "elapsed"])?;
    let max = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(*x));
    for (k, r) in trace.records().iter().enumerate() {
        w.write_record([
            (k + 1).to_string(),
            r.objective.to_string(),
            max(&r.primal).to_string(),
            max(&r.dual).to_string(),
            format!("{:.6}", r.elapsed),
        ])?;
    }
    w.flush()
        .map_err(|e| HarnessError::io(Path::new("convergence"), e))?;
    Ok(())
}

pub fn write_summary_csv<W: std::io::Write>(runs: &[SolverRun], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for run in runs {
        for f in &run.frames {
            w.write_record([
                run.solver.to_string(),
                f.frame.to_string(),
                run.lambda.to_string(),
                run.lambda_max.to_string(),
                run.epsilon.to_string(),
                run.criterion.to_string(),
                path_status_name(run.path_status).to_string(),
                status_name(run.status).to_string(),
                run.iterations.to_string(),
                f.nnz.to_string(),
                f.psnr.to_string(),
                f.constraint_gap.map_or(String::new(), |g| g.to_string()),
                format!("{:.6}", run.seconds),
            ])?;
        }
    }
    w.flush()
        .map_err(|e| HarnessError::io(Path::new(SUMMARY_FILE), e))?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
    files.push(name.to_string());
    Ok(())
}

/// Writes the images, CSVs and finally the manifest for completed runs.
pub fn write_report(
    cfg: &ExperimentConfig,
    inst: &Instance,
    runs: Vec<SolverRun>,
) -> Result<Report> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let mut files = Vec::new();
    for (f, frame) in inst.frames.iter().enumerate() {
        let name = format!("original_f{f:02}.pgm");
        write_pgm(&dir.join(&name), frame)?;
        files.push(name);
    }
    for run in &runs {
        for fr in &run.frames {
            let name = format!("{}_f{:02}.pgm", run.solver, fr.frame);
            write_pgm(&dir.join(&name), &fr.recovered)?;
            files.push(name);
        }
        let mut buf = Vec::new();
        write_path_csv(&run.records, &mut buf)
            .map_err(|e| HarnessError::io(Path::new("path"), e))?;
        write_file(&dir, &format!("path_{}.csv", run.label()), &buf, &mut files)?;
        let mut buf = Vec::new();
        write_convergence_csv(&run.trace, &mut buf)?;
        write_file(
            &dir,
            &format!("convergence_{}.csv", run.label()),
            &buf,
            &mut files,
        )?;
    }
    let mut buf = Vec::new();
    write_summary_csv(&runs, &mut buf)?;
    write_file(&dir, SUMMARY_FILE, &buf, &mut files)?;
    files.sort();
    write_manifest(cfg, &dir, &files)?;
    Ok(Report {
        out_dir: dir,
        runs,
        files,
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Resolved config (seeds made explicit) followed by one
/// `artifact.<file> = <sha256>` line per artifact.
pub fn write_manifest(cfg: &ExperimentConfig, dir: &Path, files: &[String]) -> Result<()> {
    let mut resolved = cfg.clone();
    resolved.image_seed = Some(cfg.image_seed());
    resolved.matrix_seed = Some(cfg.matrix_seed());
    resolved.noise_seed = Some(cfg.noise_seed());
    let mut text = resolved.to_kv();
    for f in files {
        text.push_str(&format!("artifact.{f} = {}\n", sha256_file(&dir.join(f))?));
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
}

/// Generates the data, runs every configured solver and writes the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let inst = build_instance(cfg)?;
    let runs = run_solvers(cfg, &inst)?;
    write_report(cfg, &inst, runs)
}

/// CSV text with the [`TIMING_COLUMNS`] removed.
pub fn strip_timing_columns(text: &str) -> Result<String> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut keep: Option<Vec<bool>> = None;
    for rec in r.records() {
        let rec = rec?;
        let mask =
            keep.get_or_insert_with(|| rec.iter().map(|h| !TIMING_COLUMNS.contains(&h)).collect());
        w.write_record(
            rec.iter()
                .zip(mask.iter())
                .filter(|(_, k)| **k)
                .map(|(v, _)| v),
        )?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| input(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| input(e.to_string()))
}

/// One row of a summary file.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub solver: String,
    pub frame: usize,
    pub psnr: f64,
    pub iterations: usize,
    pub lambda: f64,
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| input(format!("{}: missing column {name}", path.display())))
    };
    let (cs, cf, cp, ci, cl) = (
        col("solver")?,
        col("frame")?,
        col("psnr")?,
        col("iterations")?,
        col("lambda")?,
    );
    let num = |v: &str| -> Result<f64> {
        v.parse()
            .map_err(|_| input(format!("{}: bad number '{v}'", path.display())))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(SummaryRow {
            solver: rec[cs].to_string(),
            frame: num(&rec[cf])? as usize,
            psnr: num(&rec[cp])?,
            iterations: num(&rec[ci])? as usize,
            lambda: num(&rec[cl])?,
        });
    }
    Ok(rows)
}

/// Mean PSNR over frames for each solver.
pub fn mean_psnr(rows: &[SummaryRow]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.solver.clone()).or_default();
        e.0 += r.psnr;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Required median PSNR gain of `solver` over `baseline`, in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct GainAssertion {
    pub solver: String,
    pub baseline: String,
    pub min_db: f64,
}

impl std::str::FromStr for GainAssertion {
    type Err = crate::error::HarnessError;

    /// `solver:baseline:min_db`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(input(format!(
                "assertion '{s}' is not solver:baseline:min_db"
            )));
        }
        let min_db = parts[2]
            .parse()
            .map_err(|_| input(format!("assertion '{s}': bad threshold")))?;
        Ok(Self {
            solver: parts[0].to_string(),
            baseline: parts[1].to_string(),
            min_db,
        })
    }
}

/// Per-run mean PSNR table across several output directories.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<(PathBuf, BTreeMap<String, f64>)>,
    pub iterations: BTreeMap<String, f64>,
}

impl Comparison {
    pub fn load(dirs: &[PathBuf]) -> Result<Self> {
        let mut runs = Vec::new();
        let mut iters: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for d in dirs {
            let rows = read_summary(d)?;
            for r in &rows {
                let e = iters.entry(r.solver.clone()).or_default();
                e.0 += r.iterations as f64;
                e.1 += 1;
            }
            runs.push((d.clone(), mean_psnr(&rows)));
        }
        let iterations = iters
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect();
        Ok(Self { runs, iterations })
    }

    pub fn solvers(&self) -> Vec<String> {
        let mut all: Vec<String> = self
            .runs
            .iter()
            .flat_map(|(_, m)| m.keys().cloned())
            .collect();
        all.sort();
        all.dedup();
        all
    }

    /// Median over runs of `psnr(solver) − psnr(baseline)`; `None` when no
    /// run contains both.
    pub fn median_gain(&self, solver: &str, baseline: &str) -> Option<f64> {
        let mut gains: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|(_, m)| Some(m.get(solver)? - m.get(baseline)?))
            .collect();
        if gains.is_empty() {
            None
        } else {
            Some(median(&mut gains))
        }
    }

    pub fn table(&self) -> String {
        let solvers = self.solvers();
        let mut out = format!("{:<24}", "run");
        for s in &solvers {
            out.push_str(&format!("{s:>12}"));
        }
        out.push('\n');
        for (dir, m) in &self.runs {
            out.push_str(&format!("{:<24}", dir.display().to_string()));
            for s in &solvers {
                match m.get(s) {
                    Some(p) => out.push_str(&format!("{p:>12.2}")),
                    None => out.push_str(&format!("{:>12}", "-")),
                }
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<24}", "mean iterations"));
        for s in &solvers {
            out.push_str(&format!(
                "{:>12.1}",
                self.iterations.get(s).copied().unwrap_or(f64::NAN)
            ));
        }
        out.push('\n');
        out
    }

    /// Checks every assertion and returns the failures as messages.
    pub fn check(&self, assertions: &[GainAssertion]) -> Vec<String> {
        assertions
            .iter()
            .filter_map(|a| match self.median_gain(&a.solver, &a.baseline) {
                Some(g) if g >= a.min_db => None,
                Some(g) => Some(format!(
                    "{} over {}: median gain {g:.2} dB < {:.2} dB",
                    a.solver, a.baseline, a.min_db
                )),
                None => Some(format!("{} over {}: no paired runs", a.solver, a.baseline)),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_timing_columns() {
        let text = "a,seconds,b\n1,0.5,\"x,y\"\n";
        assert_eq!(strip_timing_columns(text).unwrap(), "a,b\n1,\"x,y\"\n");
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn parses_assertions() {
        let a: GainAssertion = "admm:cs:1.5".parse().unwrap();
        assert_eq!(a.solver, "admm");
        assert_eq!(a.min_db, 1.5);
        assert!("admm:cs".parse::<GainAssertion>().is_err());
        assert!("admm:cs:x".parse::<GainAssertion>().is_err());
    }
}
