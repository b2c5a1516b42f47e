use std::fs;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

use robust_cs_harness::config::{NoiseKind, SolverKind};
use robust_cs_harness::experiment::{build_instance, run_single};
use robust_cs_harness::haar::haar2d;
use robust_cs_harness::image::{gen_bar_sequence, gen_random_bars};
use robust_cs_harness::pgm::{decode_pgm, encode_pgm, quantize, read_pgm};
use robust_cs_harness::report::{
    read_summary, run_experiment, strip_timing_columns, MANIFEST_FILE, SUMMARY_FILE,
};
use robust_cs_harness::{ExperimentConfig, ImageFrame};

fn small(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        size: 16,
        bars: 3,
        threads: 1,
        ..ExperimentConfig::default()
    }
}

#[test]
fn noiseless_recovery_is_near_exact_at_half_sampling() {
    let cfg = ExperimentConfig {
        seed: 2,
        noise: NoiseKind::Gaussian,
        snr_db: 300.0,
        m_ratio: 0.5,
        abs_tol: 1e-8,
        rel_tol: 1e-6,
        ..ExperimentConfig::default()
    };
    let inst = build_instance(&cfg).unwrap();
    let run = run_single(&cfg, &inst, SolverKind::Cs, 0).unwrap();
    assert!(run.frames[0].psnr >= 60.0, "psnr {}", run.frames[0].psnr);
}

#[test]
fn sub_seeds_are_independent() {
    let base = build_instance(&small(5)).unwrap();
    let noise_changed = build_instance(&ExperimentConfig {
        noise_seed: Some(99),
        ..small(5)
    })
    .unwrap();
    assert_eq!(base.frames, noise_changed.frames);
    assert_eq!(base.phi, noise_changed.phi);
    assert_ne!(base.noise, noise_changed.noise);

    let matrix_changed = build_instance(&ExperimentConfig {
        matrix_seed: Some(99),
        ..small(5)
    })
    .unwrap();
    assert_eq!(base.frames, matrix_changed.frames);
    assert_ne!(base.phi, matrix_changed.phi);

    let image_changed = build_instance(&ExperimentConfig {
        image_seed: Some(99),
        ..small(5)
    })
    .unwrap();
    assert_ne!(base.frames, image_changed.frames);
    assert_eq!(base.phi, image_changed.phi);
}

#[test]
fn static_coefficients_have_zero_variance_across_frames() {
    let frames = gen_bar_sequence(32, 5, 10, 4, 7).unwrap();
    let background = gen_bar_sequence(32, 5, 1, 0, 7).unwrap().remove(0);
    let bg = haar2d(&background);
    let coeffs: Vec<Array1<f64>> = frames.iter().map(haar2d).collect();
    let mut untouched = 0;
    for i in 0..bg.len() {
        let touched = coeffs.iter().any(|c| (c[i] - bg[i]).abs() > 1e-12);
        if touched {
            continue;
        }
        untouched += 1;
        let mean = coeffs.iter().map(|c| c[i]).sum::<f64>() / 10.0;
        let var = coeffs.iter().map(|c| (c[i] - mean).powi(2)).sum::<f64>() / 10.0;
        assert!(var <= 1e-24, "row {i}: variance {var}");
    }
    assert!(untouched > bg.len() / 2, "untouched rows {untouched}");
}

#[test]
fn experiment_writes_report_and_checksummed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        solvers: vec![SolverKind::Cs, SolverKind::Admm],
        out_dir: dir.path().to_path_buf(),
        ..small(4)
    };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.runs.len(), 2);
    for name in [
        SUMMARY_FILE,
        "original_f00.pgm",
        "cs_f00.pgm",
        "admm_f00.pgm",
        "path_cs_f00.csv",
        "convergence_admm_f00.csv",
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let echoed = ExperimentConfig::parse(
        &manifest
            .lines()
            .filter(|l| !l.starts_with("artifact."))
            .collect::<Vec<_>>()
            .join("\n"),
    )
    .unwrap();
    assert_eq!(echoed.seed, 4);
    assert_eq!(echoed.noise_seed, Some(cfg.noise_seed()));
    let mut checked = 0;
    for line in manifest.lines().filter(|l| l.starts_with("artifact.")) {
        let (key, digest) = line.split_once(" = ").unwrap();
        let bytes = fs::read(dir.path().join(&key["artifact.".len()..])).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), digest);
        checked += 1;
    }
    assert_eq!(checked, report.files.len());
    let rows = read_summary(dir.path()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.psnr.is_finite()));
}

#[test]
fn repeated_experiments_are_identical_without_timing() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (threads, dir) in [1, 3].into_iter().zip(&dirs) {
        let cfg = ExperimentConfig {
            solvers: vec![SolverKind::Cs, SolverKind::Fista, SolverKind::L1],
            threads,
            out_dir: dir.path().to_path_buf(),
            ..small(8)
        };
        run_experiment(&cfg).unwrap();
    }
    let mut names: Vec<_> = fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for name in names {
        let a = fs::read(dirs[0].path().join(&name)).unwrap();
        let b = fs::read(dirs[1].path().join(&name)).unwrap();
        let name = name.to_string_lossy();
        if name.ends_with(".csv") {
            let a = strip_timing_columns(&String::from_utf8(a).unwrap()).unwrap();
            let b = strip_timing_columns(&String::from_utf8(b).unwrap()).unwrap();
            assert_eq!(a, b, "{name}");
        } else if name.ends_with(".pgm") {
            assert_eq!(a, b, "{name}");
        }
    }
}

#[test]
fn written_pgm_reads_back_as_the_quantized_frame() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        solvers: vec![SolverKind::Cs],
        out_dir: dir.path().to_path_buf(),
        ..small(6)
    };
    run_experiment(&cfg).unwrap();
    let original = gen_random_bars(16, 3, cfg.image_seed()).unwrap();
    let back = read_pgm(&dir.path().join("original_f00.pgm")).unwrap();
    let expect = original.pixels().mapv(|v| f64::from(quantize(v)) / 255.0);
    assert_eq!(back.pixels(), &expect);
}

proptest! {
    #[test]
    fn pgm_round_trip_preserves_quantized_pixels(
        values in proptest::collection::vec(0.0f64..=1.0, 64),
    ) {
        let frame = ImageFrame::new(Array2::from_shape_vec((8, 8), values).unwrap()).unwrap();
        let once = decode_pgm(&encode_pgm(&frame)).unwrap();
        prop_assert_eq!(encode_pgm(&once), encode_pgm(&frame));
        for (a, b) in once.pixels().iter().zip(frame.pixels()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn haar_preserves_energy(values in proptest::collection::vec(0.0f64..=1.0, 256)) {
        let frame = ImageFrame::new(Array2::from_shape_vec((16, 16), values).unwrap()).unwrap();
        let c = haar2d(&frame);
        let energy: f64 = frame.pixels().iter().map(|v| v * v).sum();
        prop_assert!((c.dot(&c) - energy).abs() <= 1e-10 * energy.max(1.0));
    }
}
