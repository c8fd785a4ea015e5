//! Physical-space convolution kernels and their realization on voxel grids.
//!
//! A kernel maps input irreps to output irreps through coupling paths
//! `(l_in, l_filter, l_out)`. For an offset `r` (mm) from the kernel center
//!
//! ```text
//! K[o, i](r) = sum_path sum_b w[path, b, u_in, u_out] * R_b(|r|) * sum_mf C[m_in, mf, m_out] Y_{l_filter, mf}(r / |r|)
//! ```
//!
//! Realizing the kernel at a spacing samples `K` at the voxel-center offsets
//! of an odd box. The weight array depends only on the signatures, the
//! filter degrees and the radial basis size, never on the spacing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conv::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::harmonics::{self, IrrepsSignature};
use crate::real::Real;

/// Tag recorded in model files for the radial basis family below.
pub const RADIAL_FAMILY: &str = "raised-cosine-v1";

/// Smooth compact-support radial basis.
///
/// With cutoff `R = width / 2` and step `s = R / (n + 1)`, function `k` is a
/// raised cosine `cos^2(pi/2 * (r - k s) / (2 s))` on `|r - k s| < 2 s`.
/// Neighbouring bumps overlap by half, the last one reaches zero (with zero
/// slope) exactly at `R`, and every function vanishes for `r >= R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialBasis {
    pub num_basis: usize,
    pub width_mm: f64,
}

impl RadialBasis {
    pub fn new(num_basis: usize, width_mm: f64) -> Result<Self> {
        if num_basis == 0 || !(width_mm > 0.0) || !width_mm.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "radial basis needs num_basis > 0 and width > 0 (got {num_basis}, {width_mm})"
            )));
        }
        Ok(RadialBasis { num_basis, width_mm })
    }

    pub fn cutoff(&self) -> f64 {
        0.5 * self.width_mm
    }

    fn step(&self) -> f64 {
        self.cutoff() / (self.num_basis + 1) as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        k as f64 * self.step()
    }

    pub(crate) fn eval_into(&self, r: f64, out: &mut [f64]) {
        let cutoff = self.cutoff();
        let h = 2.0 * self.step();
        for (k, o) in out.iter_mut().enumerate().take(self.num_basis) {
            let u = (r - self.center(k)).abs() / h;
            *o = if r >= cutoff || u >= 1.0 {
                0.0
            } else {
                let c = (0.5 * std::f64::consts::PI * u).cos();
                c * c
            };
        }
    }

    pub fn radial_eval(&self, radius_mm: f64) -> Result<Vec<f64>> {
        if radius_mm < 0.0 || radius_mm.is_nan() {
            return Err(Error::NegativeRadius(radius_mm));
        }
        let mut out = vec![0.0; self.num_basis];
        self.eval_into(radius_mm, &mut out);
        Ok(out)
    }
}

/// Odd voxel count per axis: `2 * floor((width / 2) / s) + 1`.
pub fn kernel_extent(width_mm: f64, spacing_mm: [f64; 3]) -> [usize; 3] {
    spacing_mm.map(|s| {
        // the small slack keeps exact ratios such as 2.5 / 0.1 from rounding down
        let ratio = (0.5 * width_mm) / s;
        2 * ((ratio + 1e-9).floor().max(0.0) as usize) + 1
    })
}

/// One coupling path of a kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingPath {
    pub in_block: usize,
    pub out_block: usize,
    pub l_in: usize,
    pub l_filter: usize,
    pub l_out: usize,
    /// First weight of this path in the flat weight array.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalKernelSpec {
    pub radial: RadialBasis,
    sig_in: IrrepsSignature,
    sig_out: IrrepsSignature,
    filter_degrees: Vec<usize>,
    paths: Vec<CouplingPath>,
    weights: Vec<f64>,
    /// Multiply sampled values by the voxel volume (mm^3) so that the
    /// discrete sum approximates the continuous integral. Off by default:
    /// kernels are pure point samples.
    pub renormalize: bool,
}

impl PhysicalKernelSpec {
    /// Builds the path list (every `l_filter` in `filter_degrees` satisfying
    /// the triangle rule for each input/output block pair) with zero weights.
    ///
    /// Weight layout per path: `[basis][u_in][u_out]`, `u_out` fastest.
    pub fn new(
        width_mm: f64,
        num_basis: usize,
        sig_in: IrrepsSignature,
        sig_out: IrrepsSignature,
        filter_degrees: &[usize],
    ) -> Result<Self> {
        let radial = RadialBasis::new(num_basis, width_mm)?;
        let mut filter_degrees = filter_degrees.to_vec();
        filter_degrees.sort_unstable();
        filter_degrees.dedup();
        for &l in &filter_degrees {
            harmonics::Irrep::new(l)?;
        }
        let mut paths = Vec::new();
        let mut offset = 0;
        for (bo, out_b) in sig_out.blocks().iter().enumerate() {
            for (bi, in_b) in sig_in.blocks().iter().enumerate() {
                let (li, lo) = (in_b.irrep.degree, out_b.irrep.degree);
                for &lf in &filter_degrees {
                    if lf < li.abs_diff(lo) || lf > li + lo {
                        continue;
                    }
                    paths.push(CouplingPath {
                        in_block: bi,
                        out_block: bo,
                        l_in: li,
                        l_filter: lf,
                        l_out: lo,
                        offset,
                    });
                    offset += num_basis * in_b.mult * out_b.mult;
                }
            }
        }
        Ok(PhysicalKernelSpec {
            radial,
            sig_in,
            sig_out,
            filter_degrees,
            paths,
            weights: vec![0.0; offset],
            renormalize: false,
        })
    }

    pub fn width_mm(&self) -> f64 {
        self.radial.width_mm
    }

    pub fn sig_in(&self) -> &IrrepsSignature {
        &self.sig_in
    }

    pub fn sig_out(&self) -> &IrrepsSignature {
        &self.sig_out
    }

    pub fn filter_degrees(&self) -> &[usize] {
        &self.filter_degrees
    }

    pub fn paths(&self) -> &[CouplingPath] {
        &self.paths
    }

    pub fn num_weights(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "kernel has {} weights, got {}",
                self.weights.len(),
                weights.len()
            )));
        }
        self.weights = weights;
        Ok(())
    }

    /// Gaussian initialization scaled by the number of weights feeding each
    /// output copy.
    pub fn init_random(&mut self, rng: &mut impl Rng) {
        let nb = self.radial.num_basis;
        for p in self.paths.clone() {
            let fan_in: usize = self
                .paths
                .iter()
                .filter(|q| q.out_block == p.out_block)
                .map(|q| self.sig_in.blocks()[q.in_block].mult * nb)
                .sum();
            let std = 1.0 / (fan_in as f64).sqrt();
            let n = nb * self.sig_in.blocks()[p.in_block].mult * self.sig_out.blocks()[p.out_block].mult;
            for w in &mut self.weights[p.offset..p.offset + n] {
                let g: f64 = rng.sample(StandardNormal);
                *w = g * std;
            }
        }
    }

    pub fn realize(&self, spacing_mm: [f64; 3]) -> Result<KernelRealization> {
        let basis = KernelBasis::new(self, spacing_mm)?;
        Ok(basis.realization(&self.weights))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelRealization {
    pub spacing_mm: [f64; 3],
    pub extent: [usize; 3],
    pub dim_out: usize,
    pub dim_in: usize,
    /// Shape `(dim_out, dim_in, nz, ny, nx)`, x fastest.
    pub tensor: Vec<f64>,
}

impl KernelRealization {
    pub fn num_taps(&self) -> usize {
        self.extent[0] * self.extent[1] * self.extent[2]
    }

    pub fn get(&self, o: usize, i: usize, x: usize, y: usize, z: usize) -> f64 {
        let t = (z * self.extent[1] + y) * self.extent[0] + x;
        self.tensor[(o * self.dim_in + i) * self.num_taps() + t]
    }

    /// Physical offset (mm) of box tap `(x, y, z)` from the kernel center.
    pub fn offset_mm(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        tap_offset_mm([x, y, z], self.extent, self.spacing_mm)
    }
}

fn tap_offset_mm(idx: [usize; 3], extent: [usize; 3], spacing: [f64; 3]) -> [f64; 3] {
    let mut r = [0.0; 3];
    for a in 0..3 {
        r[a] = (idx[a] as f64 - (extent[a] / 2) as f64) * spacing[a];
    }
    r
}

/// Spacing-specific, weight-independent sampling of every path: the linear
/// map from the weight array to the (compact) kernel tensor.
#[derive(Debug)]
pub struct KernelBasis {
    spacing: [f64; 3],
    geometry: Arc<ConvGeometry>,
    dim_in: usize,
    dim_out: usize,
    num_basis: usize,
    num_weights: usize,
    paths: Vec<PathSamples>,
}

#[derive(Debug)]
struct PathSamples {
    path: CouplingPath,
    mult_in: usize,
    mult_out: usize,
    in_offset: usize,
    out_offset: usize,
    /// `[basis][m_out][m_in][tap]`
    values: Vec<f64>,
}

impl KernelBasis {
    pub fn new(spec: &PhysicalKernelSpec, spacing_mm: [f64; 3]) -> Result<Self> {
        if spacing_mm.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing_mm:?}")));
        }
        let extent = kernel_extent(spec.width_mm(), spacing_mm);
        let cutoff = spec.radial.cutoff();
        let h = [extent[0] / 2, extent[1] / 2, extent[2] / 2];
        let mut offsets = Vec::new();
        let mut radii = Vec::new();
        let mut dirs = Vec::new();
        for z in 0..extent[2] {
            for y in 0..extent[1] {
                for x in 0..extent[0] {
                    let r = tap_offset_mm([x, y, z], extent, spacing_mm);
                    let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                    if norm >= cutoff {
                        continue;
                    }
                    offsets.push([x as isize - h[0] as isize, y as isize - h[1] as isize, z as isize - h[2] as isize]);
                    radii.push(norm);
                    dirs.push(if norm > 0.0 { [r[0] / norm, r[1] / norm, r[2] / norm] } else { [0.0; 3] });
                }
            }
        }
        let nt = offsets.len();
        let nb = spec.radial.num_basis;
        let scale = if spec.renormalize {
            spacing_mm[0] * spacing_mm[1] * spacing_mm[2]
        } else {
            1.0
        };

        let mut radial = vec![0.0; nt * nb];
        for (t, &r) in radii.iter().enumerate() {
            spec.radial.eval_into(r, &mut radial[t * nb..(t + 1) * nb]);
        }
        // sh[l][t][m]; harmonics of degree > 0 vanish at the center tap
        let mut sh = vec![vec![0.0; nt * 5]; 3];
        for (l, table) in sh.iter_mut().enumerate() {
            for t in 0..nt {
                if l == 0 || radii[t] > 0.0 {
                    harmonics::sh_into(l, dirs[t], &mut table[t * 5..t * 5 + 2 * l + 1]);
                }
            }
        }

        let in_offsets = spec.sig_in.offsets();
        let out_offsets = spec.sig_out.offsets();
        let paths = spec
            .paths
            .iter()
            .map(|p| {
                let (ni, nf, no) = (2 * p.l_in + 1, 2 * p.l_filter + 1, 2 * p.l_out + 1);
                let cg = harmonics::cg_ref(p.l_in, p.l_filter, p.l_out);
                let mut values = vec![0.0; nb * no * ni * nt];
                for t in 0..nt {
                    let y = &sh[p.l_filter][t * 5..t * 5 + nf];
                    for mo in 0..no {
                        for mi in 0..ni {
                            let ang: f64 = (0..nf).map(|mf| cg[(mi * nf + mf) * no + mo] * y[mf]).sum();
                            if ang == 0.0 {
                                continue;
                            }
                            for b in 0..nb {
                                values[((b * no + mo) * ni + mi) * nt + t] = scale * radial[t * nb + b] * ang;
                            }
                        }
                    }
                }
                PathSamples {
                    path: *p,
                    mult_in: spec.sig_in.blocks()[p.in_block].mult,
                    mult_out: spec.sig_out.blocks()[p.out_block].mult,
                    in_offset: in_offsets[p.in_block],
                    out_offset: out_offsets[p.out_block],
                    values,
                }
            })
            .collect();

        Ok(KernelBasis {
            spacing: spacing_mm,
            geometry: Arc::new(ConvGeometry { extent, offsets }),
            dim_in: spec.sig_in.total_dim(),
            dim_out: spec.sig_out.total_dim(),
            num_basis: nb,
            num_weights: spec.num_weights(),
            paths,
        })
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn geometry(&self) -> &Arc<ConvGeometry> {
        &self.geometry
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn num_weights(&self) -> usize {
        self.num_weights
    }

    /// Compact kernel `(dim_out, dim_in, taps)` for the given weights.
    pub fn realize_compact<T: Real>(&self, weights: &[T]) -> Vec<T> {
        assert_eq!(weights.len(), self.num_weights, "weight count");
        let nt = self.geometry.num_taps();
        let mut out = vec![T::zero(); self.dim_out * self.dim_in * nt];
        let nb = self.num_basis;
        for ps in &self.paths {
            let (ni, no) = (2 * ps.path.l_in + 1, 2 * ps.path.l_out + 1);
            for ui in 0..ps.mult_in {
                for uo in 0..ps.mult_out {
                    for b in 0..nb {
                        let w = weights[ps.path.offset + (b * ps.mult_in + ui) * ps.mult_out + uo].f64();
                        if w == 0.0 {
                            continue;
                        }
                        for mo in 0..no {
                            let o = ps.out_offset + uo * no + mo;
                            for mi in 0..ni {
                                let i = ps.in_offset + ui * ni + mi;
                                let src = &ps.values[((b * no + mo) * ni + mi) * nt..][..nt];
                                let dst = &mut out[(o * self.dim_in + i) * nt..][..nt];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += T::of(w * s);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::realize_compact`]: accumulates `dL/dw` given
    /// `dL/dK`.
    pub fn weight_gradient<T: Real>(&self, grad_kernel: &[T], grad_weights: &mut [T]) {
        let nt = self.geometry.num_taps();
        let nb = self.num_basis;
        for ps in &self.paths {
            let (ni, no) = (2 * ps.path.l_in + 1, 2 * ps.path.l_out + 1);
            for ui in 0..ps.mult_in {
                for uo in 0..ps.mult_out {
                    for b in 0..nb {
                        let mut acc = 0.0;
                        for mo in 0..no {
                            let o = ps.out_offset + uo * no + mo;
                            for mi in 0..ni {
                                let i = ps.in_offset + ui * ni + mi;
                                let a = &ps.values[((b * no + mo) * ni + mi) * nt..][..nt];
                                let g = &grad_kernel[(o * self.dim_in + i) * nt..][..nt];
                                acc += a.iter().zip(g).map(|(x, y)| x * y.f64()).sum::<f64>();
                            }
                        }
                        grad_weights[ps.path.offset + (b * ps.mult_in + ui) * ps.mult_out + uo] += T::of(acc);
                    }
                }
            }
        }
    }

    /// Full-box realization for inspection and export.
    pub fn realization(&self, weights: &[f64]) -> KernelRealization {
        let compact = self.realize_compact(weights);
        let extent = self.geometry.extent;
        let nbox = extent[0] * extent[1] * extent[2];
        let nt = self.geometry.num_taps();
        let box_idx = self.geometry.box_indices();
        let mut tensor = vec![0.0; self.dim_out * self.dim_in * nbox];
        for oi in 0..self.dim_out * self.dim_in {
            for (t, &bi) in box_idx.iter().enumerate() {
                tensor[oi * nbox + bi] = compact[oi * nt + t];
            }
        }
        KernelRealization {
            spacing_mm: self.spacing,
            extent,
            dim_out: self.dim_out,
            dim_in: self.dim_in,
            tensor,
        }
    }
}

/// Cross-correlates a multichannel grid with a realized kernel ("same"
/// output size, zero padding).
pub fn convolve(realization: &KernelRealization, features: &Grid<f64>, grid_spacing_mm: [f64; 3]) -> Result<Grid<f64>> {
    let same = realization
        .spacing_mm
        .iter()
        .zip(&grid_spacing_mm)
        .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()));
    if !same {
        return Err(Error::KernelSpacingMismatch {
            kernel: realization.spacing_mm,
            grid: grid_spacing_mm,
        });
    }
    if features.channels() != realization.dim_in {
        return Err(Error::DimensionMismatch(format!(
            "kernel expects {} input channels, grid has {}",
            realization.dim_in,
            features.channels()
        )));
    }
    let geom = ConvGeometry::full_box(realization.extent);
    Ok(conv::conv_forward(features, &realization.tensor, realization.dim_out, &geom))
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct KernelDumpHeader {
    pub format: String,
    pub width_mm: f64,
    pub num_basis: usize,
    pub radial_family: String,
    pub sig_in: String,
    pub sig_out: String,
    pub filter_degrees: Vec<usize>,
    pub spacing_mm: [f64; 3],
    /// `[nx, ny, nz]`
    pub extent: [usize; 3],
    pub dim_out: usize,
    pub dim_in: usize,
    /// Memory order of the tensor, slowest axis first.
    pub layout: String,
}

pub const KERNEL_DUMP_MAGIC: &[u8; 8] = b"RKERN001";

/// Kernel dump: 8-byte magic, little-endian `u32` header length, UTF-8 JSON
/// header, then little-endian `f32` values in `(o, i, z, y, x)` order.
pub fn write_kernel_dump(path: &Path, spec: &PhysicalKernelSpec, realization: &KernelRealization) -> Result<()> {
    let header = KernelDumpHeader {
        format: "rkern/1".into(),
        width_mm: spec.width_mm(),
        num_basis: spec.radial.num_basis,
        radial_family: RADIAL_FAMILY.into(),
        sig_in: spec.sig_in().to_string(),
        sig_out: spec.sig_out().to_string(),
        filter_degrees: spec.filter_degrees().to_vec(),
        spacing_mm: realization.spacing_mm,
        extent: realization.extent,
        dim_out: realization.dim_out,
        dim_in: realization.dim_in,
        layout: "o,i,z,y,x (x fastest)".into(),
    };
    let json = serde_json::to_vec(&header)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(KERNEL_DUMP_MAGIC)?;
    write(&(json.len() as u32).to_le_bytes())?;
    write(&json)?;
    for v in &realization.tensor {
        write(&(*v as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_kernel_dump(path: &Path) -> Result<(KernelDumpHeader, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != KERNEL_DUMP_MAGIC {
        return Err(Error::format(path, "magic", "not a kernel dump"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes
        .get(12..12 + n)
        .ok_or_else(|| Error::format(path, "header", "truncated"))?;
    let header: KernelDumpHeader = serde_json::from_slice(body)?;
    let count = header.dim_out * header.dim_in * header.extent.iter().product::<usize>();
    let data = &bytes[12 + n..];
    if data.len() != 4 * count {
        return Err(Error::format(
            path,
            "data",
            format!("expected {} bytes, found {}", 4 * count, data.len()),
        ));
    }
    let values = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(sig_in: &str, sig_out: &str, degrees: &[usize]) -> PhysicalKernelSpec {
        PhysicalKernelSpec::new(5.0, 5, sig_in.parse().unwrap(), sig_out.parse().unwrap(), degrees).unwrap()
    }

    #[test]
    fn extent_matches_table_examples() {
        assert_eq!(kernel_extent(5.0, [1.0, 1.0, 1.0]), [5, 5, 5]);
        assert_eq!(kernel_extent(5.0, [0.5, 0.5, 3.0]), [11, 11, 1]);
        assert_eq!(kernel_extent(20.0, [4.0, 4.0, 3.0]), [5, 5, 7]);
        assert_eq!(kernel_extent(5.0, [0.1, 0.1, 0.1]), [51, 51, 51]);
    }

    #[test]
    fn radial_support_boundary() {
        let rb = RadialBasis::new(5, 5.0).unwrap();
        assert!(rb.radial_eval(2.5).unwrap().iter().all(|&v| v == 0.0));
        assert!(rb.radial_eval(5.0).unwrap().iter().all(|&v| v == 0.0));
        assert!(rb.radial_eval(2.4999).unwrap().iter().any(|&v| v > 0.0));
        assert!(matches!(rb.radial_eval(-0.1), Err(Error::NegativeRadius(_))));
    }

    #[test]
    fn radial_basis_shape() {
        let rb = RadialBasis::new(5, 5.0).unwrap();
        let n = 20_000;
        let mut best = vec![(0.0f64, 0.0f64); 5];
        let mut max_sum: f64 = 0.0;
        for s in 0..n {
            let r = 2.5 * s as f64 / n as f64;
            let v = rb.radial_eval(r).unwrap();
            max_sum = max_sum.max(v.iter().sum());
            for (k, &x) in v.iter().enumerate() {
                if x > best[k].0 {
                    best[k] = (x, r);
                }
            }
        }
        assert!(max_sum > 0.0);
        for (k, (peak, at)) in best.iter().enumerate() {
            assert!((peak - 1.0).abs() < 1e-6);
            assert!((at - rb.center(k)).abs() < 2.5 / n as f64 + 1e-12);
        }
    }

    #[test]
    fn weight_count_is_spacing_free() {
        let s = spec("8x0e+4x1e+2x2e", "8x0e+4x1e+2x2e", &[0, 1, 2]);
        // paths: (0,0):1 (0,1):1 (0,2):1 (1,0):1 (1,1):3 (1,2):2 (2,0):1 (2,1):2 (2,2):3
        let m = [8usize, 4, 2];
        let npaths = [[1, 1, 1], [1, 3, 2], [1, 2, 3]];
        let expected: usize = (0..3).flat_map(|i| (0..3).map(move |o| (i, o))).map(|(i, o)| 5 * m[i] * m[o] * npaths[i][o]).sum();
        assert_eq!(s.num_weights(), expected);
        let a = KernelBasis::new(&s, [1.0, 1.0, 1.0]).unwrap();
        let b = KernelBasis::new(&s, [0.5, 0.5, 3.0]).unwrap();
        assert_eq!(a.num_weights(), b.num_weights());
        assert_eq!(a.geometry().extent, [5, 5, 5]);
        assert_eq!(b.geometry().extent, [11, 11, 1]);
    }

    #[test]
    fn zero_weights_give_zero_tensor() {
        let s = spec("2x0e+1x1e", "1x0e+1x2e", &[0, 1, 2]);
        let k = s.realize([1.0, 1.0, 2.0]).unwrap();
        assert!(k.tensor.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compact_support_is_exact() {
        let mut s = spec("1x0e+1x1e", "1x0e+1x1e+1x2e", &[0, 1, 2]);
        s.init_random(&mut ChaCha8Rng::seed_from_u64(4));
        for spacing in [[1.0, 1.0, 1.0], [0.5, 0.5, 3.0], [0.7, 1.3, 0.9]] {
            let k = s.realize(spacing).unwrap();
            for z in 0..k.extent[2] {
                for y in 0..k.extent[1] {
                    for x in 0..k.extent[0] {
                        let r = k.offset_mm(x, y, z);
                        if (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt() >= 2.5 {
                            for o in 0..k.dim_out {
                                for i in 0..k.dim_in {
                                    assert_eq!(k.get(o, i, x, y, z), 0.0);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn spacing_mismatch_is_rejected() {
        let mut s = spec("1x0e", "1x0e", &[0]);
        s.init_random(&mut ChaCha8Rng::seed_from_u64(1));
        let k = s.realize([1.0, 1.0, 1.0]).unwrap();
        let g = Grid::<f64>::zeros([4, 4, 4], 1);
        let err = convolve(&k, &g, [0.5, 0.5, 0.5]).unwrap_err();
        assert!(err.to_string().contains("kernel realized for different spacing"));
        assert!(convolve(&k, &Grid::zeros([4, 4, 4], 2), [1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn identity_and_zero_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..6 * 5 * 4).map(|_| rng.random::<f64>()).collect();
        let g = Grid::from_vec([6, 5, 4], 1, data).unwrap();
        let mut k = KernelRealization {
            spacing_mm: [1.0; 3],
            extent: [3, 3, 3],
            dim_out: 1,
            dim_in: 1,
            tensor: vec![0.0; 27],
        };
        k.tensor[13] = 1.0;
        assert_eq!(convolve(&k, &g, [1.0; 3]).unwrap(), g);
        let zero = Grid::<f64>::zeros([6, 5, 4], 1);
        assert_eq!(convolve(&k, &zero, [1.0; 3]).unwrap(), zero);
    }
}
