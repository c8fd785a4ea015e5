//! Resolution-adaptive pooling plans and the pool/upsample grid operations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::kernel_extent;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolLevel {
    pub pool_width_mm: f64,
    pub factors: [usize; 3],
    pub spacing_in: [f64; 3],
    pub spacing_out: [f64; 3],
}

/// Largest per-axis pooling factor that fits in the physical width, never
/// below 1: `k = max(1, floor(width / s))`.
pub fn pool_plan(pool_width_mm: f64, spacing_mm: [f64; 3]) -> PoolLevel {
    let factors = spacing_mm.map(|s| ((pool_width_mm / s + 1e-9).floor() as usize).max(1));
    PoolLevel {
        pool_width_mm,
        factors,
        spacing_in: spacing_mm,
        spacing_out: [
            spacing_mm[0] * factors[0] as f64,
            spacing_mm[1] * factors[1] as f64,
            spacing_mm[2] * factors[2] as f64,
        ],
    }
}

/// Pooling steps for a U-Net whose pool width doubles at each level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolPlan {
    pub levels: Vec<PoolLevel>,
}

impl PoolPlan {
    pub fn new(pool_width0_mm: f64, spacing_mm: [f64; 3], steps: usize) -> Self {
        let mut levels = Vec::with_capacity(steps);
        let mut spacing = spacing_mm;
        for k in 0..steps {
            let level = pool_plan(pool_width0_mm * (1 << k) as f64, spacing);
            spacing = level.spacing_out;
            levels.push(level);
        }
        PoolPlan { levels }
    }

    /// Fixed factors on every level (the voxel baseline).
    pub fn uniform(factor: usize, spacing_mm: [f64; 3], steps: usize) -> Self {
        let mut levels = Vec::with_capacity(steps);
        let mut spacing = spacing_mm;
        for _ in 0..steps {
            let out = spacing.map(|s| s * factor as f64);
            levels.push(PoolLevel {
                pool_width_mm: f64::NAN,
                factors: [factor; 3],
                spacing_in: spacing,
                spacing_out: out,
            });
            spacing = out;
        }
        PoolPlan { levels }
    }

    /// Spacing seen by each of the `steps + 1` resolution levels.
    pub fn level_spacings(&self) -> Vec<[f64; 3]> {
        let mut out: Vec<[f64; 3]> = self.levels.iter().map(|l| l.spacing_in).collect();
        if let Some(last) = self.levels.last() {
            out.push(last.spacing_out);
        }
        out
    }
}

/// One column of the kernel/pooling shape table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanRow {
    pub level: usize,
    pub spacing_mm: [f64; 3],
    pub kernel_width_mm: f64,
    pub kernel_extent: [usize; 3],
    pub pool_width_mm: f64,
    pub pool_factors: [usize; 3],
}

/// Levels `0..=depth`, each with its conv kernel shape and the pooling that
/// follows it (listed for the deepest level as well).
pub fn plan_table(spacing_mm: [f64; 3], kernel_width0_mm: f64, pool_width0_mm: f64, depth: usize) -> Vec<PlanRow> {
    let plan = PoolPlan::new(pool_width0_mm, spacing_mm, depth + 1);
    plan.levels
        .iter()
        .enumerate()
        .map(|(k, lvl)| {
            let width = kernel_width0_mm * (1 << k) as f64;
            PlanRow {
                level: k,
                spacing_mm: lvl.spacing_in,
                kernel_width_mm: width,
                kernel_extent: kernel_extent(width, lvl.spacing_in),
                pool_width_mm: lvl.pool_width_mm,
                pool_factors: lvl.factors,
            }
        })
        .collect()
}

pub fn pooled_dims(dims: [usize; 3], factors: [usize; 3]) -> [usize; 3] {
    [0, 1, 2].map(|a| dims[a].div_ceil(factors[a]))
}

/// Channel groups pooled together: `(first channel, width)`. Width-1 groups
/// take the plain maximum; wider groups (an `l > 0` irrep copy) keep the
/// voxel whose vector has the largest norm.
pub type PoolGroups = [(usize, usize)];

/// Per-channel block maximum with partial edge blocks (equivalent to padding
/// with `-inf`).
pub fn maxpool<T: Real>(grid: &Grid<T>, factors: [usize; 3]) -> Grid<T> {
    let groups: Vec<(usize, usize)> = (0..grid.channels()).map(|c| (c, 1)).collect();
    maxpool_groups(grid, factors, &groups).0
}

/// Pools each group and returns, per group and output voxel, the flat index
/// of the selected source voxel.
pub fn maxpool_groups<T: Real>(grid: &Grid<T>, factors: [usize; 3], groups: &PoolGroups) -> (Grid<T>, Vec<u32>) {
    let d = grid.dims();
    let od = pooled_dims(d, factors);
    let nin = grid.voxels();
    let nout = od[0] * od[1] * od[2];
    let mut out = Grid::zeros(od, grid.channels());
    let mut arg = vec![0u32; groups.len() * nout];
    let src = grid.data();
    let mut score = vec![T::zero(); nin];
    for (g, &(c0, width)) in groups.iter().enumerate() {
        if width == 1 {
            score.copy_from_slice(&src[c0 * nin..(c0 + 1) * nin]);
        } else {
            score.fill(T::zero());
            for c in c0..c0 + width {
                for (s, &v) in score.iter_mut().zip(&src[c * nin..(c + 1) * nin]) {
                    *s += v * v;
                }
            }
        }
        for oz in 0..od[2] {
            for oy in 0..od[1] {
                for ox in 0..od[0] {
                    let mut best = usize::MAX;
                    let mut best_v = T::neg_infinity();
                    for z in oz * factors[2]..((oz + 1) * factors[2]).min(d[2]) {
                        for y in oy * factors[1]..((oy + 1) * factors[1]).min(d[1]) {
                            let row = (z * d[1] + y) * d[0];
                            for x in ox * factors[0]..((ox + 1) * factors[0]).min(d[0]) {
                                let v = score[row + x];
                                if best == usize::MAX || v > best_v {
                                    best = row + x;
                                    best_v = v;
                                }
                            }
                        }
                    }
                    let o = (oz * od[1] + oy) * od[0] + ox;
                    arg[g * nout + o] = best as u32;
                    for c in c0..c0 + width {
                        out.data_mut()[c * nout + o] = src[c * nin + best];
                    }
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward<T: Real>(
    grad_out: &Grid<T>,
    input_dims: [usize; 3],
    groups: &PoolGroups,
    arg: &[u32],
) -> Grid<T> {
    let nout = grad_out.voxels();
    let nin = input_dims[0] * input_dims[1] * input_dims[2];
    let mut g = Grid::zeros(input_dims, grad_out.channels());
    for (k, &(c0, width)) in groups.iter().enumerate() {
        for o in 0..nout {
            let src = arg[k * nout + o] as usize;
            for c in c0..c0 + width {
                g.data_mut()[c * nin + src] += grad_out.data()[c * nout + o];
            }
        }
    }
    g
}

fn check_target(target: [usize; 3]) -> Result<()> {
    if target.contains(&0) {
        return Err(Error::InvalidArgument(format!("upsample target {target:?} must be at least 1 voxel per axis")));
    }
    Ok(())
}

/// Nearest-neighbour replication by `factors`, then crop or zero-pad to
/// `target_dims`.
pub fn upsample<T: Real>(grid: &Grid<T>, factors: [usize; 3], target_dims: [usize; 3]) -> Result<Grid<T>> {
    check_target(target_dims)?;
    let d = grid.dims();
    let t = target_dims;
    let mut out = Grid::zeros(t, grid.channels());
    let nin = grid.voxels();
    let nout = out.voxels();
    for c in 0..grid.channels() {
        let src = &grid.data()[c * nin..(c + 1) * nin];
        let dst = &mut out.data_mut()[c * nout..(c + 1) * nout];
        for z in 0..t[2] {
            let sz = z / factors[2];
            if sz >= d[2] {
                continue;
            }
            for y in 0..t[1] {
                let sy = y / factors[1];
                if sy >= d[1] {
                    continue;
                }
                for x in 0..t[0] {
                    let sx = x / factors[0];
                    if sx < d[0] {
                        dst[(z * t[1] + y) * t[0] + x] = src[(sz * d[1] + sy) * d[0] + sx];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`upsample`]: sums each replicated block back into its source.
pub fn upsample_adjoint<T: Real>(grad: &Grid<T>, factors: [usize; 3], source_dims: [usize; 3]) -> Grid<T> {
    let t = grad.dims();
    let d = source_dims;
    let mut out = Grid::zeros(d, grad.channels());
    let nin = grad.voxels();
    let nout = out.voxels();
    for c in 0..grad.channels() {
        let src = &grad.data()[c * nin..(c + 1) * nin];
        let dst = &mut out.data_mut()[c * nout..(c + 1) * nout];
        for z in 0..t[2] {
            let sz = z / factors[2];
            if sz >= d[2] {
                continue;
            }
            for y in 0..t[1] {
                let sy = y / factors[1];
                if sy >= d[1] {
                    continue;
                }
                for x in 0..t[0] {
                    let sx = x / factors[0];
                    if sx < d[0] {
                        dst[(sz * d[1] + sy) * d[0] + sx] += src[(z * t[1] + y) * t[0] + x];
                    }
                }
            }
        }
    }
    out
}
