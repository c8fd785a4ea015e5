//! Dense "same" 3D cross-correlation with zero padding.
//!
//! Every channel is copied into a zero-padded buffer; a kernel tap then
//! becomes a constant shift of the flat index, so the convolution is one
//! small matrix product per tap over shifted views of the buffer. The inner
//! loops work on register-sized tiles of output channels and positions.
//! Positions in the halo are computed and discarded.

use crate::grid::Grid;
use crate::real::Real;

/// Kernel support: box extent (odd per axis) plus the list of taps that
/// can be nonzero, as voxel offsets from the kernel center. Kernel tensors
/// are stored compactly as `(c_out, c_in, taps.len())`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGeometry {
    pub extent: [usize; 3],
    pub offsets: Vec<[isize; 3]>,
}

impl ConvGeometry {
    /// Every tap of the box, x fastest.
    pub fn full_box(extent: [usize; 3]) -> Self {
        let h = half(extent);
        let mut offsets = Vec::with_capacity(extent[0] * extent[1] * extent[2]);
        for z in -h[2]..=h[2] {
            for y in -h[1]..=h[1] {
                for x in -h[0]..=h[0] {
                    offsets.push([x, y, z]);
                }
            }
        }
        ConvGeometry { extent, offsets }
    }

    pub fn num_taps(&self) -> usize {
        self.offsets.len()
    }

    /// Position of each tap in the full box (x fastest).
    pub fn box_indices(&self) -> Vec<usize> {
        let h = half(self.extent);
        self.offsets
            .iter()
            .map(|o| {
                let (x, y, z) = ((o[0] + h[0]) as usize, (o[1] + h[1]) as usize, (o[2] + h[2]) as usize);
                (z * self.extent[1] + y) * self.extent[0] + x
            })
            .collect()
    }
}

fn half(extent: [usize; 3]) -> [isize; 3] {
    [(extent[0] / 2) as isize, (extent[1] / 2) as isize, (extent[2] / 2) as isize]
}

/// Output channels per tile.
const OB: usize = 4;
/// Positions per tile.
const PB: usize = 16;
/// Lanes per accumulator in the kernel-gradient tiles.
const LB: usize = 8;

struct Padded {
    dims: [usize; 3],
    halo: [usize; 3],
    pdims: [usize; 3],
    /// Channel stride of padded buffers (includes trailing slack so tiles
    /// may overrun the last voxel).
    len: usize,
    start: usize,
    end: usize,
    shifts: Vec<isize>,
}

impl Padded {
    fn new(dims: [usize; 3], geom: &ConvGeometry) -> Self {
        let halo = [geom.extent[0] / 2, geom.extent[1] / 2, geom.extent[2] / 2];
        let pdims = [dims[0] + 2 * halo[0], dims[1] + 2 * halo[1], dims[2] + 2 * halo[2]];
        let len = pdims[0] * pdims[1] * pdims[2] + PB;
        let flat = |x: usize, y: usize, z: usize| (z * pdims[1] + y) * pdims[0] + x;
        let start = flat(halo[0], halo[1], halo[2]);
        let end = flat(halo[0] + dims[0] - 1, halo[1] + dims[1] - 1, halo[2] + dims[2] - 1) + 1;
        let shifts = geom
            .offsets
            .iter()
            .map(|o| o[0] + pdims[0] as isize * (o[1] + pdims[1] as isize * o[2]))
            .collect();
        Padded {
            dims,
            halo,
            pdims,
            len,
            start,
            end,
            shifts,
        }
    }

    fn pad<T: Real>(&self, grid: &Grid<T>) -> Vec<T> {
        let c = grid.channels();
        let mut buf = vec![T::zero(); c * self.len];
        let [nx, ny, nz] = self.dims;
        for ch in 0..c {
            let src = grid.channel(ch);
            let dst = &mut buf[ch * self.len..(ch + 1) * self.len];
            for z in 0..nz {
                for y in 0..ny {
                    let s = (z * ny + y) * nx;
                    let d = ((z + self.halo[2]) * self.pdims[1] + y + self.halo[1]) * self.pdims[0] + self.halo[0];
                    dst[d..d + nx].copy_from_slice(&src[s..s + nx]);
                }
            }
        }
        buf
    }

    fn unpad<T: Real>(&self, buf: &[T], channels: usize) -> Grid<T> {
        let [nx, ny, nz] = self.dims;
        let mut out = Grid::zeros(self.dims, channels);
        for ch in 0..channels {
            let src = &buf[ch * self.len..(ch + 1) * self.len];
            let dst = out.channel_mut(ch);
            for z in 0..nz {
                for y in 0..ny {
                    let d = (z * ny + y) * nx;
                    let s = ((z + self.halo[2]) * self.pdims[1] + y + self.halo[1]) * self.pdims[0] + self.halo[0];
                    dst[d..d + nx].copy_from_slice(&src[s..s + nx]);
                }
            }
        }
        out
    }

    /// `dst[d][p] = sum_{s,t} w(d,s,t) * src[s][p + sign * shift_t]` over the
    /// sweep range. `src` needs `PB` readable slack beyond every channel's
    /// last shifted position, which the buffer layout provides as long as
    /// `p + shift` stays inside the padded box for interior `p`.
    fn correlate<T: Real>(
        &self,
        src: &[T],
        n_src: usize,
        n_dst: usize,
        weight: impl Fn(usize, usize, usize) -> T,
        negate: bool,
    ) -> Vec<T> {
        let nt = self.shifts.len();
        let nblk = n_dst.div_ceil(OB);
        // packed weights: [block][tap][src][OB]
        let mut wp = vec![T::zero(); nblk * nt * n_src * OB];
        for d in 0..n_dst {
            let (b, lane) = (d / OB, d % OB);
            for s in 0..n_src {
                for t in 0..nt {
                    wp[((b * nt + t) * n_src + s) * OB + lane] = weight(d, s, t);
                }
            }
        }
        let shifts: Vec<isize> = self
            .shifts
            .iter()
            .map(|&sh| if negate { -sh } else { sh })
            .collect();
        let mut dst = vec![T::zero(); n_dst * self.len];
        for b in 0..nblk {
            let wb = &wp[b * nt * n_src * OB..(b + 1) * nt * n_src * OB];
            let mut p0 = self.start;
            while p0 < self.end {
                let mut acc = [[T::zero(); PB]; OB];
                for (t, &sh) in shifts.iter().enumerate() {
                    let base = (p0 as isize + sh) as usize;
                    let wt = &wb[t * n_src * OB..(t + 1) * n_src * OB];
                    for s in 0..n_src {
                        let x: &[T; PB] = src[s * self.len + base..][..PB].try_into().unwrap();
                        let w: &[T; OB] = wt[s * OB..(s + 1) * OB].try_into().unwrap();
                        for o in 0..OB {
                            let (wo, ao) = (w[o], &mut acc[o]);
                            for q in 0..PB {
                                ao[q] = wo.mul_add(x[q], ao[q]);
                            }
                        }
                    }
                }
                let m = PB.min(self.end - p0);
                for (o, row) in acc.iter().enumerate() {
                    let d = b * OB + o;
                    if d < n_dst {
                        dst[d * self.len + p0..d * self.len + p0 + m].copy_from_slice(&row[..m]);
                    }
                }
                p0 += PB;
            }
        }
        dst
    }

    /// `gk[o][i][t] = sum_p g[o][p] * src[i][p + shift_t]` over the sweep range.
    fn kernel_gradient<T: Real>(&self, g: &[T], c_out: usize, src: &[T], c_in: usize) -> Vec<T> {
        let nt = self.shifts.len();
        let n = self.end - self.start;
        let full = n / LB * LB;
        let mut gk = vec![T::zero(); c_out * c_in * nt];
        for ob in (0..c_out).step_by(4) {
            let on = 4.min(c_out - ob);
            for ib in (0..c_in).step_by(4) {
                let inn = 4.min(c_in - ib);
                for (t, &sh) in self.shifts.iter().enumerate() {
                    let sbase = (self.start as isize + sh) as usize;
                    let mut acc = [[T::zero(); LB]; 16];
                    let mut p = 0;
                    while p < full {
                        for a in 0..4 {
                            let r = (ob + a.min(on - 1)) * self.len + self.start + p;
                            let gv: &[T; LB] = g[r..r + LB].try_into().unwrap();
                            for c in 0..4 {
                                let r = (ib + c.min(inn - 1)) * self.len + sbase + p;
                                let sv: &[T; LB] = src[r..r + LB].try_into().unwrap();
                                let ac = &mut acc[a * 4 + c];
                                for l in 0..LB {
                                    ac[l] = gv[l].mul_add(sv[l], ac[l]);
                                }
                            }
                        }
                        p += LB;
                    }
                    for a in 0..on {
                        for c in 0..inn {
                            let mut s = acc[a * 4 + c].iter().copied().sum::<T>();
                            for q in full..n {
                                s += g[(ob + a) * self.len + self.start + q] * src[(ib + c) * self.len + sbase + q];
                            }
                            gk[((ob + a) * c_in + ib + c) * nt + t] = s;
                        }
                    }
                }
            }
        }
        gk
    }
}

/// `out[o](v) = sum_{i,t} kernel[o,i,t] * in[i](v + offset_t)`, zero outside.
pub fn conv_forward<T: Real>(input: &Grid<T>, kernel: &[T], c_out: usize, geom: &ConvGeometry) -> Grid<T> {
    let c_in = input.channels();
    let nt = geom.num_taps();
    assert_eq!(kernel.len(), c_out * c_in * nt, "kernel size");
    let pad = Padded::new(input.dims(), geom);
    let src = pad.pad(input);
    let dst = pad.correlate(&src, c_in, c_out, |o, i, t| kernel[(o * c_in + i) * nt + t], false);
    pad.unpad(&dst, c_out)
}

/// Gradients of `conv_forward` with respect to its input (optional) and
/// kernel.
pub fn conv_backward<T: Real>(
    input: &Grid<T>,
    kernel: &[T],
    geom: &ConvGeometry,
    grad_out: &Grid<T>,
    need_input: bool,
) -> (Option<Grid<T>>, Vec<T>) {
    let c_in = input.channels();
    let c_out = grad_out.channels();
    let nt = geom.num_taps();
    let pad = Padded::new(input.dims(), geom);
    let src = pad.pad(input);
    let gout = pad.pad(grad_out);
    let gk = pad.kernel_gradient(&gout, c_out, &src, c_in);
    let gin = need_input.then(|| {
        let dst = pad.correlate(&gout, c_out, c_in, |i, o, t| kernel[(o * c_in + i) * nt + t], true);
        pad.unpad(&dst, c_in)
    });
    (gin, gk)
}
