use ndarray::{Array1, Array2, Axis};

use crate::error::{input, Result};
use crate::image::ImageFrame;

fn forward_1d(v: &mut [f64], tmp: &mut [f64]) {
    let mut n = v.len();
    while n > 1 {
        let h = n / 2;
        for i in 0..h {
            let (a, b) = (v[2 * i], v[2 * i + 1]);
            tmp[i] = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
            tmp[h + i] = (a - b) * std::f64::consts::FRAC_1_SQRT_2;
        }
        v[..n].copy_from_slice(&tmp[..n]);
        n = h;
    }
}

fn inverse_1d(v: &mut [f64], tmp: &mut [f64]) {
    let mut n = 2;
    while n <= v.len() {
        let h = n / 2;
        for i in 0..h {
            let (s, d) = (v[i], v[h + i]);
            tmp[2 * i] = (s + d) * std::f64::consts::FRAC_1_SQRT_2;
            tmp[2 * i + 1] = (s - d) * std::f64::consts::FRAC_1_SQRT_2;
        }
        v[..n].copy_from_slice(&tmp[..n]);
        n *= 2;
    }
}

fn along(a: &mut Array2<f64>, axis: Axis, f: fn(&mut [f64], &mut [f64])) {
    let len = a.len_of(axis);
    let mut buf = vec![0.0; len];
    let mut tmp = vec![0.0; len];
    for mut lane in a.lanes_mut(axis) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        f(&mut buf, &mut tmp);
        for (v, b) in lane.iter_mut().zip(&buf) {
            *v = *b;
        }
    }
}

/// Orthonormal full-depth separable 2-D Haar transform: every row, then every
/// column, is transformed to full depth. The coefficient matrix is returned
/// flattened row-major, with the approximation coefficient at index 0.
pub fn haar2d(frame: &ImageFrame) -> Array1<f64> {
    let mut a = frame.pixels().clone();
    along(&mut a, Axis(1), forward_1d);
    along(&mut a, Axis(0), forward_1d);
    Array1::from_iter(a)
}

/// Inverse of [`haar2d`].
pub fn ihaar2d(coeffs: &Array1<f64>, height: usize, width: usize) -> Result<ImageFrame> {
    if !height.is_power_of_two() || !width.is_power_of_two() {
        return Err(input(format!(
            "frame dimensions {height}x{width} are not powers of two"
        )));
    }
    if coeffs.len() != height * width {
        return Err(input(format!(
            "expected {} coefficients, got {}",
            height * width,
            coeffs.len()
        )));
    }
    let mut a = Array2::from_shape_vec((height, width), coeffs.to_vec())
        .map_err(|e| input(e.to_string()))?;
    along(&mut a, Axis(0), inverse_1d);
    along(&mut a, Axis(1), inverse_1d);
    ImageFrame::new(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::gen_random_bars;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(h: usize, w: usize, seed: u64) -> ImageFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageFrame::new(Array2::from_shape_fn((h, w), |_| rng.random::<f64>())).unwrap()
    }

    #[test]
    fn constant_frame_is_dc_only() {
        let f = ImageFrame::new(Array2::from_elem((8, 16), 0.3)).unwrap();
        let c = haar2d(&f);
        assert!((c[0] - 0.3 * 128f64.sqrt()).abs() < 1e-12);
        assert!(c.iter().skip(1).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn roundtrip_and_parseval() {
        for (h, w, seed) in [(32, 32, 1), (8, 32, 2), (1, 4, 3), (64, 16, 4)] {
            let f = random_frame(h, w, seed);
            let c = haar2d(&f);
            let energy: f64 = f.pixels().iter().map(|v| v * v).sum();
            assert!((c.dot(&c) - energy).abs() <= 1e-12 * energy);
            let back = ihaar2d(&c, h, w).unwrap();
            let err = (back.pixels() - f.pixels())
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err <= 1e-12, "{err}");
        }
    }

    #[test]
    fn one_level_matches_hand_computation() {
        let f = ImageFrame::new(Array2::from_shape_vec((1, 2), vec![1.0, 3.0]).unwrap()).unwrap();
        let c = haar2d(&f);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c[0] - 4.0 * s).abs() < 1e-15);
        assert!((c[1] + 2.0 * s).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_shapes() {
        let c = Array1::zeros(24);
        assert!(ihaar2d(&c, 4, 6).is_err());
        assert!(ihaar2d(&c, 4, 4).is_err());
    }

    #[test]
    fn bar_images_are_compressible() {
        for seed in 0..10 {
            let c = haar2d(&gen_random_bars(32, 8, seed).unwrap());
            let mut e: Vec<f64> = c.iter().map(|v| v * v).collect();
            e.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let total: f64 = e.iter().sum();
            let small: f64 = e[..e.len() * 9 / 10].iter().sum();
            assert!(small < 0.05 * total, "seed {seed}: {}", small / total);
        }
    }
}
