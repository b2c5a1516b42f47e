use ndarray::{s, Array2};
use rand::Rng;

use crate::error::{input, Result};
use crate::seeds::rng;

/// A grayscale frame with power-of-two dimensions.
///
/// Generated frames lie in `[0, 1]`; frames synthesized from coefficients may
/// leave that range until [`ImageFrame::clamped`] is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    pixels: Array2<f64>,
}

impl ImageFrame {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        let (h, w) = pixels.dim();
        if !h.is_power_of_two() || !w.is_power_of_two() {
            return Err(input(format!(
                "frame dimensions {h}x{w} are not powers of two"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(input("frame has non-finite pixels"));
        }
        Ok(Self { pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(Array2::zeros((height, width)))
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Copy with every pixel clipped to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            pixels: self.pixels.mapv(|v| v.clamp(0.0, 1.0)),
        }
    }
}

fn check_size(size: usize) -> Result<()> {
    if size < 8 || !size.is_power_of_two() {
        return Err(input(format!(
            "size {size} must be a power of two and at least 8"
        )));
    }
    Ok(())
}

fn paint_bars(pixels: &mut Array2<f64>, n_bars: usize, seed: u64) {
    let size = pixels.nrows();
    let mut rng = rng(seed);
    for _ in 0..n_bars {
        let thickness = rng.random_range(1..=3usize);
        let pos = rng.random_range(0..=size - thickness);
        let value = rng.random_range(0.5..=1.0);
        if rng.random_bool(0.5) {
            pixels.slice_mut(s![pos..pos + thickness, ..]).fill(value);
        } else {
            pixels.slice_mut(s![.., pos..pos + thickness]).fill(value);
        }
    }
}

/// Black square frame with `n_bars` full-length horizontal or vertical bars,
/// 1 to 3 pixels thick with intensity in `[0.5, 1]`.
pub fn gen_random_bars(size: usize, n_bars: usize, seed: u64) -> Result<ImageFrame> {
    check_size(size)?;
    let mut pixels = Array2::zeros((size, size));
    paint_bars(&mut pixels, n_bars, seed);
    ImageFrame::new(pixels)
}

/// Static random bars shared by every frame plus a `block_size` square of
/// unit intensity that moves one pixel to the right per frame, wrapping at
/// the right edge.
pub fn gen_bar_sequence(
    size: usize,
    n_static_bars: usize,
    n_frames: usize,
    block_size: usize,
    seed: u64,
) -> Result<Vec<ImageFrame>> {
    check_size(size)?;
    if n_frames == 0 {
        return Err(input("a sequence needs at least one frame"));
    }
    if block_size > size {
        return Err(input(format!(
            "block size {block_size} exceeds frame size {size}"
        )));
    }
    let mut background = Array2::zeros((size, size));
    paint_bars(&mut background, n_static_bars, seed);
    if block_size == 0 {
        return (0..n_frames)
            .map(|_| ImageFrame::new(background.clone()))
            .collect();
    }
    let mut rng = rng(seed ^ 0x5eed_b10c);
    let span = size - block_size + 1;
    let row = rng.random_range(0..span);
    let col0 = rng.random_range(0..span);
    (0..n_frames)
        .map(|f| {
            let col = (col0 + f) % span;
            let mut pixels = background.clone();
            pixels
                .slice_mut(s![row..row + block_size, col..col + block_size])
                .fill(1.0);
            ImageFrame::new(pixels)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_validation() {
        assert!(ImageFrame::new(Array2::zeros((6, 8))).is_err());
        assert!(ImageFrame::new(Array2::from_elem((4, 4), f64::NAN)).is_err());
        assert!(ImageFrame::new(Array2::zeros((4, 8))).is_ok());
        assert!(gen_random_bars(4, 1, 0).is_err());
        assert!(gen_random_bars(24, 1, 0).is_err());
    }

    #[test]
    fn no_bars_is_black() {
        let f = gen_random_bars(16, 0, 3).unwrap();
        assert!(f.pixels().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bars_are_deterministic_and_in_range() {
        let a = gen_random_bars(32, 8, 42).unwrap();
        assert_eq!(a, gen_random_bars(32, 8, 42).unwrap());
        assert_ne!(a, gen_random_bars(32, 8, 43).unwrap());
        assert!(a
            .pixels()
            .iter()
            .all(|v| *v == 0.0 || (0.5..=1.0).contains(v)));
        assert!(a.pixels().iter().any(|v| *v > 0.0));
    }

    #[test]
    fn every_row_or_column_is_constant_per_bar() {
        let f = gen_random_bars(16, 1, 9).unwrap();
        let p = f.pixels();
        let lit_rows = p
            .rows()
            .into_iter()
            .filter(|r| r.iter().all(|v| *v > 0.0))
            .count();
        let lit_cols = p
            .columns()
            .into_iter()
            .filter(|c| c.iter().all(|v| *v > 0.0))
            .count();
        assert!((1..=3).contains(&lit_rows.max(lit_cols)));
    }

    #[test]
    fn single_frame_sequence() {
        let s = gen_bar_sequence(16, 3, 1, 4, 5).unwrap();
        assert_eq!(s.len(), 1);
        let ones = s[0].pixels().iter().filter(|v| **v == 1.0).count();
        assert!(ones >= 16);
    }

    #[test]
    fn zero_block_gives_identical_frames() {
        let s = gen_bar_sequence(16, 3, 5, 0, 5).unwrap();
        assert!(s.iter().all(|f| *f == s[0]));
    }

    #[test]
    fn block_moves_between_frames() {
        let s = gen_bar_sequence(32, 4, 10, 4, 1).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] != w[1]));
    }
}
