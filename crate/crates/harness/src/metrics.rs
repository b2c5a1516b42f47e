use crate::error::{input, Result};
use crate::image::ImageFrame;

pub fn mse(reference: &ImageFrame, recovered: &ImageFrame) -> Result<f64> {
    if reference.pixels().dim() != recovered.pixels().dim() {
        return Err(input(format!(
            "frame size mismatch: {:?} vs {:?}",
            reference.pixels().dim(),
            recovered.pixels().dim()
        )));
    }
    let sum: f64 = reference
        .pixels()
        .iter()
        .zip(recovered.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// Peak signal-to-noise ratio in dB with unit peak; `+∞` for identical frames.
pub fn psnr(reference: &ImageFrame, recovered: &ImageFrame) -> Result<f64> {
    let e = mse(reference, recovered)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * e.log10())
}
