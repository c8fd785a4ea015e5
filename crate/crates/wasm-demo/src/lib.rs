//! wasm-bindgen surface for the static page in `www/`.
//!
//! Three operations, all driven by a voxel spacing typed into the page:
//! the per-level kernel/pooling plan, a slice through one realized kernel,
//! and a slice through a synthetic phantom and its lesion mask.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use resadapt::data::PhantomScene;
use resadapt::pooling::plan_table;
use resadapt::{IrrepsSignature, PhysicalKernelSpec};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Plan rows as JSON: `[{level, spacing_mm, kernel_width_mm, kernel_extent,
/// pool_width_mm, pool_factors}]`.
#[wasm_bindgen]
pub fn plan_json(sx: f64, sy: f64, sz: f64, width_mm: f64, depth: usize) -> Result<String, JsError> {
    if [sx, sy, sz].iter().any(|s| !(*s > 0.0)) || !(width_mm > 0.0) {
        return Err(JsError::new("spacing and width must be positive"));
    }
    serde_json::to_string(&plan_table([sx, sy, sz], width_mm, 2.0, depth.min(6))).map_err(js_err)
}

/// A 2D image with row-major `values` (x fastest).
#[wasm_bindgen]
pub struct Slice {
    width: usize,
    height: usize,
    values: Vec<f32>,
    extra: Vec<f32>,
}

#[wasm_bindgen]
impl Slice {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }

    /// Second channel (the lesion mask for phantom slices; empty otherwise).
    #[wasm_bindgen(getter)]
    pub fn extra(&self) -> Vec<f32> {
        self.extra.clone()
    }
}

/// Central z slice of a scalar-to-degree-`degree` kernel, component `m`
/// (`-degree..=degree`), with seeded random radial weights.
#[wasm_bindgen]
pub fn kernel_slice(sx: f64, sy: f64, sz: f64, width_mm: f64, degree: usize, m: i32, seed: u64) -> Result<Slice, JsError> {
    let sig_out: IrrepsSignature = format!("1x{degree}e").parse().map_err(js_err)?;
    let sig_in: IrrepsSignature = "1x0e".parse().map_err(js_err)?;
    let mut spec = PhysicalKernelSpec::new(width_mm, 5, sig_in, sig_out, &[degree]).map_err(js_err)?;
    spec.init_random(&mut ChaCha8Rng::seed_from_u64(seed));
    let r = spec.realize([sx, sy, sz]).map_err(js_err)?;
    let comp = (m + degree as i32).clamp(0, 2 * degree as i32) as usize;
    let [nx, ny, nz] = r.extent;
    let z = nz / 2;
    let taps = nx * ny * nz;
    let base = comp * r.dim_in * taps + z * nx * ny;
    let values = r.tensor[base..base + nx * ny].iter().map(|&v| v as f32).collect();
    Ok(Slice {
        width: nx,
        height: ny,
        values,
        extra: Vec::new(),
    })
}

/// Middle z slice of a random 24 mm phantom rasterized at the spacing.
#[wasm_bindgen]
pub fn phantom_slice(sx: f64, sy: f64, sz: f64, seed: u64) -> Result<Slice, JsError> {
    let scene = PhantomScene::random(&mut ChaCha8Rng::seed_from_u64(seed), [24.0; 3]);
    let spacing = [sx, sy, sz];
    let dims = scene.dims_for(spacing);
    if dims.iter().product::<usize>() > 4_000_000 {
        return Err(JsError::new("spacing too fine for the demo"));
    }
    let (img, mask) = scene.rasterize(spacing, dims).map_err(js_err)?;
    let z = dims[2] / 2;
    let n = dims[0] * dims[1];
    Ok(Slice {
        width: dims[0],
        height: dims[1],
        values: img.data()[z * n..(z + 1) * n].to_vec(),
        extra: mask.data()[z * n..(z + 1) * n].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_has_table_shapes() {
        let json = plan_json(0.5, 0.5, 3.0, 5.0, 3).unwrap();
        assert!(json.contains("[11,11,1]") && json.contains("[4,4,1]"));
    }

    #[test]
    fn slices_have_consistent_sizes() {
        let k = kernel_slice(0.5, 0.5, 3.0, 5.0, 2, 0, 1).unwrap();
        assert_eq!((k.width(), k.height()), (11, 11));
        assert_eq!(k.values().len(), 121);
        let p = phantom_slice(1.0, 1.0, 3.0, 2).unwrap();
        assert_eq!((p.width(), p.height()), (24, 24));
        assert_eq!(p.extra().len(), p.values().len());
    }
}
