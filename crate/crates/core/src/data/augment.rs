use rand::Rng as _;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Mirrors a row-major image left to right. `pixels` may hold several
/// channels of `width × height` each, stored one after another.
pub fn flip_horizontal(pixels: &[f64], width: usize, height: usize) -> Result<Vec<f64>> {
    let plane = width * height;
    if plane == 0 || !pixels.len().is_multiple_of(plane) {
        return Err(Error::Dimension {
            op: "flip_horizontal",
            left: vec![pixels.len()],
            right: vec![width, height],
        });
    }
    let mut out = Vec::with_capacity(pixels.len());
    for row in pixels.chunks(width) {
        out.extend(row.iter().rev());
    }
    Ok(out)
}

/// Flips each row of `inputs` independently with probability `probability`.
/// The RNG is consumed once per row whatever the outcome.
pub fn augment_flip(
    inputs: &Tensor,
    image_shape: (usize, usize),
    probability: f64,
    rng: &mut Rng,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(Error::Config(format!(
            "flip probability must lie in [0, 1], got {probability}"
        )));
    }
    let (w, h) = image_shape;
    let mut data = Vec::with_capacity(inputs.len());
    for i in 0..inputs.rows() {
        let row = inputs.row(i);
        if rng.random::<f64>() < probability {
            data.extend(flip_horizontal(row, w, h)?);
        } else {
            data.extend_from_slice(row);
        }
    }
    Tensor::new(inputs.shape().to_vec(), data)
}
