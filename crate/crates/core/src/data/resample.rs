//! Resampling onto a new spacing: cubic B-spline for images, nearest
//! neighbour for label masks.
//!
//! The output grid keeps the origin; its dims are
//! `round(n * source_spacing / target_spacing)` per axis, and output voxel
//! `j` sits at world position `origin + j * target_spacing`.

use serde::{Deserialize, Serialize};

use crate::data::volume::Volume;
use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    CubicBspline,
    Nearest,
}

/// Pole of the cubic B-spline interpolation prefilter.
const POLE: f64 = -0.267_949_192_431_122_7; // sqrt(3) - 2
const TOLERANCE: f64 = 1e-8;

/// In-place conversion of samples to cubic B-spline coefficients with
/// mirror (whole-sample symmetric) boundaries.
pub fn bspline_coefficients(c: &mut [f64]) {
    let n = c.len();
    if n < 2 {
        return;
    }
    let z = POLE;
    let gain = (1.0 - z) * (1.0 - 1.0 / z);
    c.iter_mut().for_each(|v| *v *= gain);

    // causal initialization, truncated where z^k drops below the tolerance
    let horizon = (TOLERANCE.ln() / z.abs().ln()).ceil() as usize;
    c[0] = if horizon < n {
        let mut zn = z;
        let mut sum = c[0];
        for v in &c[1..horizon] {
            sum += zn * v;
            zn *= z;
        }
        sum
    } else {
        let mut zn = z;
        let iz = 1.0 / z;
        let mut z2n = z.powi(n as i32 - 1);
        let mut sum = c[0] + z2n * c[n - 1];
        z2n *= z2n * iz;
        for v in &c[1..n - 1] {
            sum += (zn + z2n) * v;
            zn *= z;
            z2n *= iz;
        }
        sum / (1.0 - zn * zn)
    };
    for k in 1..n {
        c[k] += z * c[k - 1];
    }
    c[n - 1] = (z / (z * z - 1.0)) * (c[n - 1] + z * c[n - 2]);
    for k in (0..n - 1).rev() {
        c[k] = z * (c[k + 1] - c[k]);
    }
}

fn mirror(k: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = k.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

fn cubic_weights(t: f64) -> [f64; 4] {
    // t in [0, 1): weights for nodes floor(x) - 1 ..= floor(x) + 2
    let s = 1.0 - t;
    [
        s * s * s / 6.0,
        (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0,
        (4.0 - 6.0 * s * s + 3.0 * s * s * s) / 6.0,
        t * t * t / 6.0,
    ]
}

/// Evaluates a 1D coefficient line at continuous index `x`.
fn eval_line(c: &[f64], x: f64) -> f64 {
    let i = x.floor();
    let w = cubic_weights(x - i);
    let i = i as isize;
    (0..4).map(|k| w[k] * c[mirror(i - 1 + k as isize, c.len())]).sum()
}

/// Cubic B-spline interpolation of `samples` (unit spacing, mirror
/// boundaries) at continuous indices `positions`.
pub fn interpolate_line(samples: &[f64], positions: &[f64]) -> Vec<f64> {
    let mut c = samples.to_vec();
    bspline_coefficients(&mut c);
    positions.iter().map(|&x| eval_line(&c, x)).collect()
}

/// Resamples one axis of a channel buffer (dims `d`) to `m` samples at
/// source positions `pos`.
fn resample_axis(data: &[f64], d: [usize; 3], axis: usize, pos: &[f64], method: ResampleMethod) -> (Vec<f64>, [usize; 3]) {
    let mut od = d;
    od[axis] = pos.len();
    let mut out = vec![0.0; od[0] * od[1] * od[2]];
    let n = d[axis];
    let stride = |dd: [usize; 3]| match axis {
        0 => 1,
        1 => dd[0],
        _ => dd[0] * dd[1],
    };
    let (si, so) = (stride(d), stride(od));
    // iterate over every line along `axis`
    let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let mut line = vec![0.0; n];
    for b in 0..d[others[1]] {
        for a in 0..d[others[0]] {
            let mut idx = [0usize; 3];
            idx[others[0]] = a;
            idx[others[1]] = b;
            let base_in = (idx[2] * d[1] + idx[1]) * d[0] + idx[0];
            let base_out = (idx[2] * od[1] + idx[1]) * od[0] + idx[0];
            for (k, v) in line.iter_mut().enumerate() {
                *v = data[base_in + k * si];
            }
            match method {
                ResampleMethod::CubicBspline => {
                    bspline_coefficients(&mut line);
                    for (j, &x) in pos.iter().enumerate() {
                        out[base_out + j * so] = eval_line(&line, x);
                    }
                }
                ResampleMethod::Nearest => {
                    for (j, &x) in pos.iter().enumerate() {
                        let k = (x.round().max(0.0) as usize).min(n - 1);
                        out[base_out + j * so] = line[k];
                    }
                }
            }
        }
    }
    (out, od)
}

pub fn resampled_dims(dims: [usize; 3], spacing: [f64; 3], target: [f64; 3]) -> [usize; 3] {
    [0, 1, 2].map(|a| ((dims[a] as f64 * spacing[a] / target[a]).round() as usize).max(1))
}

pub fn resample(vol: &Volume, target_spacing_mm: [f64; 3], method: ResampleMethod) -> Result<Volume> {
    if target_spacing_mm.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "target spacing must be positive, got {target_spacing_mm:?}"
        )));
    }
    let d = vol.dims();
    let s = vol.spacing();
    let od = resampled_dims(d, s, target_spacing_mm);
    let positions: Vec<Vec<f64>> = (0..3)
        .map(|a| (0..od[a]).map(|j| j as f64 * target_spacing_mm[a] / s[a]).collect())
        .collect();
    let nvox = od[0] * od[1] * od[2];
    let mut out = Vec::with_capacity(nvox * vol.channels());
    for c in 0..vol.channels() {
        let mut buf: Vec<f64> = vol.grid().channel(c).iter().map(|&v| v as f64).collect();
        let mut dims = d;
        for (axis, pos) in positions.iter().enumerate() {
            let same = dims[axis] == pos.len() && pos.iter().enumerate().all(|(j, &x)| x == j as f64);
            if same {
                continue;
            }
            (buf, dims) = resample_axis(&buf, dims, axis, pos, method);
        }
        out.extend(buf.iter().map(|&v| v as f32));
    }
    Volume::new(Grid::from_vec(od, vol.channels(), out)?, target_spacing_mm, vol.origin())
}

/// Cubic B-spline resampling of an image whose background is exactly zero.
/// The spline leaves residues of order 1e-9 where the source was zero, and
/// those would count as foreground for a nonzero-voxel intensity
/// normalization; output voxels whose nearest source voxel is zero are
/// therefore set to exactly zero.
pub fn resample_image(vol: &Volume, target_spacing_mm: [f64; 3]) -> Result<Volume> {
    let mut out = resample(vol, target_spacing_mm, ResampleMethod::CubicBspline)?;
    let support = vol.with_grid(vol.grid().map(|v| if v != 0.0 { 1.0 } else { 0.0 }));
    let support = resample(&support, target_spacing_mm, ResampleMethod::Nearest)?;
    for (v, s) in out.grid_mut().data_mut().iter_mut().zip(support.data()) {
        if *s == 0.0 {
            *v = 0.0;
        }
    }
    Ok(out)
}
