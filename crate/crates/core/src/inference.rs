//! Whole-volume prediction from overlapping patches blended with a
//! Gaussian importance window.

use crate::data::{normalize_intensity, resample_image, Volume};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::network::{Model, Preprocessing};
use crate::training::extract;

/// Patch origins along one axis: `0, stride, 2 stride, ...` while the patch
/// fits, with the last one clamped to end at the boundary.
pub fn tile_starts(n: usize, patch: usize, stride: usize) -> Vec<usize> {
    if n <= patch {
        return vec![0];
    }
    let stride = stride.max(1);
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s + patch < n).collect();
    starts.push(n - patch);
    starts
}

pub fn stride_for(patch: usize, overlap: f64) -> usize {
    ((patch as f64 * (1.0 - overlap)).floor() as usize).max(1)
}

/// Separable Gaussian window, `sigma = p / 8` per axis, centered in the
/// patch. x fastest.
pub fn gaussian_window(patch: [usize; 3]) -> Vec<f64> {
    let axis = |p: usize| -> Vec<f64> {
        let sigma = p as f64 / 8.0;
        let c = (p as f64 - 1.0) / 2.0;
        (0..p).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect()
    };
    let (wx, wy, wz) = (axis(patch[0]), axis(patch[1]), axis(patch[2]));
    let mut w = Vec::with_capacity(patch.iter().product());
    for z in &wz {
        for y in &wy {
            for x in &wx {
                w.push(x * y * z);
            }
        }
    }
    w
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub probability: Volume,
    pub mask: Volume,
}

/// Sliding-window prediction on a volume that is already preprocessed.
/// The network instance is the one for the volume's own spacing.
pub fn sliding_window_predict(model: &Model, volume: &Volume, patch: [usize; 3], overlap: f64, threshold: f64) -> Result<Prediction> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!("overlap must be in [0, 1), got {overlap}")));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must be in (0, 1), got {threshold}")));
    }
    if patch.contains(&0) {
        return Err(Error::InvalidArgument("patch dims must be positive".into()));
    }
    let dims = volume.dims();
    let spacing = volume.spacing();
    // volumes smaller than the patch are zero padded at the far end
    let padded = [0, 1, 2].map(|a| dims[a].max(patch[a]));
    let src = if padded == dims {
        volume.grid().clone()
    } else {
        let mut g = Grid::zeros(padded, volume.channels());
        for c in 0..volume.channels() {
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let i = g.index(c, x, y, z);
                        g.data_mut()[i] = volume.grid().get(c, x, y, z);
                    }
                }
            }
        }
        g
    };
    let starts: Vec<Vec<usize>> = (0..3)
        .map(|a| tile_starts(padded[a], patch[a], stride_for(patch[a], overlap)))
        .collect();
    let window = gaussian_window(patch);
    let inst = model.instance(spacing)?;
    let n = padded.iter().product::<usize>();
    let mut num = vec![0.0f64; n];
    let mut den = vec![0.0f64; n];
    // canonical order: z, then y, then x origins
    for &oz in &starts[2] {
        for &oy in &starts[1] {
            for &ox in &starts[0] {
                let x = extract(&src, [ox, oy, oz], patch);
                let logits = model.forward_with(&inst, &x, spacing)?;
                let mut q = 0;
                for z in 0..patch[2] {
                    for y in 0..patch[1] {
                        let row = ((oz + z) * padded[1] + oy + y) * padded[0] + ox;
                        for xx in 0..patch[0] {
                            let p = 1.0 / (1.0 + (-(logits.data()[q] as f64)).exp());
                            num[row + xx] += window[q] * p;
                            den[row + xx] += window[q];
                            q += 1;
                        }
                    }
                }
            }
        }
    }
    let mut prob = Grid::zeros(dims, 1);
    let mut mask = Grid::zeros(dims, 1);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = (z * padded[1] + y) * padded[0] + x;
                let p = num[i] / den[i];
                let o = prob.index(0, x, y, z);
                prob.data_mut()[o] = p as f32;
                mask.data_mut()[o] = (p >= threshold) as u8 as f32;
            }
        }
    }
    Ok(Prediction {
        probability: volume.with_grid(prob),
        mask: volume.with_grid(mask),
    })
}

/// Applies the model's recorded preprocessing (resampling, then intensity
/// normalization) and predicts. With `resample_to` set, the result lives
/// on the resampled grid.
pub fn predict_volume(
    model: &Model,
    preprocessing: &Preprocessing,
    volume: &Volume,
    patch: [usize; 3],
    overlap: f64,
    threshold: f64,
) -> Result<Prediction> {
    let vol = match preprocessing.resample_to {
        Some(target) => resample_image(volume, target)?,
        None => volume.clone(),
    };
    let vol = match preprocessing.intensity.as_str() {
        "zscore-nonzero" => normalize_intensity(&vol),
        "none" => vol,
        other => return Err(Error::InvalidArgument(format!("unknown intensity normalization '{other}'"))),
    };
    sliding_window_predict(model, &vol, patch, overlap, threshold)
}
