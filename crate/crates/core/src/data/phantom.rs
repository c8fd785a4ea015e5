//! Synthetic brain-like phantoms defined in continuous world coordinates.
//!
//! A scene is an ellipsoidal "brain" with smooth texture, a few lesions
//! (the segmentation target) and many small bright spots that look like
//! lesions but are too small to count. Rasterizing point-samples the scene
//! at voxel centers, so any two grids agree wherever their centers
//! coincide.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::volume::Volume;
use crate::error::Result;
use crate::grid::Grid;

const MAX_TRIES: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center_mm: [f64; 3],
    pub radii_mm: [f64; 3],
    pub amplitude: f64,
}

impl Blob {
    /// Normalized ellipsoidal radius (1 on the surface).
    fn rho(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((p[a] - self.center_mm[a]) / self.radii_mm[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Logistic profile, 0.5 on the surface; `edge_mm` sets the falloff.
    fn profile(&self, p: [f64; 3], edge_mm: f64) -> f64 {
        let r = (self.radii_mm[0] + self.radii_mm[1] + self.radii_mm[2]) / 3.0;
        let t = (self.rho(p) - 1.0) * r / edge_mm;
        if t > 40.0 {
            0.0
        } else {
            1.0 / (1.0 + t.exp())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomScene {
    pub box_mm: [f64; 3],
    pub brain_center_mm: [f64; 3],
    pub brain_radii_mm: [f64; 3],
    pub brain_intensity: f64,
    pub lesions: Vec<Blob>,
    pub distractors: Vec<Blob>,
    pub texture_seed: u64,
    pub texture_amplitude: f64,
    pub edge_mm: f64,
    /// Ground truth is `lesion field >= threshold`.
    pub threshold: f64,
}

/// Plane waves `(k, phase, amplitude)` of the background texture.
fn texture_waves(seed: u64) -> Vec<([f64; 3], f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..6)
        .map(|_| {
            let d = loop {
                let mut d = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
                let n2: f64 = d.iter().map(|v| v * v).sum();
                if n2 > 0.01 && n2 <= 1.0 {
                    let n = n2.sqrt();
                    d.iter_mut().for_each(|v| *v /= n);
                    break d;
                }
            };
            let wavelength = rng.random_range(5.0..12.0);
            let k = d.map(|v| v * 2.0 * std::f64::consts::PI / wavelength);
            (k, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.5..1.0))
        })
        .collect()
}

impl PhantomScene {
    /// A scene with only the brain (no lesions, no distractors).
    pub fn empty(box_mm: [f64; 3]) -> Self {
        PhantomScene {
            box_mm,
            brain_center_mm: box_mm.map(|b| 0.5 * b),
            brain_radii_mm: box_mm.map(|b| 0.42 * b),
            brain_intensity: 1.0,
            lesions: Vec::new(),
            distractors: Vec::new(),
            texture_seed: 0,
            texture_amplitude: 0.1,
            edge_mm: 0.3,
            threshold: 0.5,
        }
    }

    /// Desk-scale random scene: 1-3 lesions of radius 2-4 mm and 6-10
    /// bright spots of radius 0.7-1.1 mm.
    pub fn random(rng: &mut impl Rng, box_mm: [f64; 3]) -> Self {
        let mut scene = Self::empty(box_mm);
        for a in 0..3 {
            scene.brain_radii_mm[a] = box_mm[a] * rng.random_range(0.38..0.45);
            scene.brain_center_mm[a] = box_mm[a] * rng.random_range(0.48..0.52);
        }
        scene.texture_seed = rng.random();
        scene.texture_amplitude = rng.random_range(0.06..0.12);
        scene.brain_intensity = rng.random_range(0.9..1.1);
        // placement gives up after a bounded number of tries, so crowded or
        // tiny boxes get fewer blobs rather than hanging
        let n_lesions = rng.random_range(1..=3);
        for _ in 0..MAX_TRIES {
            if scene.lesions.len() == n_lesions {
                break;
            }
            let r = rng.random_range(2.0..4.0);
            let radii = [0, 1, 2].map(|_| r * rng.random_range(0.85..1.15));
            if let Some(c) = scene.place(rng, radii) {
                scene.lesions.push(Blob {
                    center_mm: c,
                    radii_mm: radii,
                    amplitude: rng.random_range(0.6..1.0),
                });
            }
        }
        let n_spots = rng.random_range(6..=10);
        for _ in 0..MAX_TRIES {
            if scene.distractors.len() == n_spots {
                break;
            }
            let r = rng.random_range(0.7..1.1);
            if let Some(c) = scene.place(rng, [r; 3]) {
                scene.distractors.push(Blob {
                    center_mm: c,
                    radii_mm: [r; 3],
                    amplitude: rng.random_range(0.6..1.0),
                });
            }
        }
        scene
    }

    /// Random center keeping the blob inside the brain and clear of other
    /// blobs.
    fn place(&self, rng: &mut impl Rng, radii: [f64; 3]) -> Option<[f64; 3]> {
        let rmax = radii.iter().copied().fold(0.0, f64::max);
        let c: [f64; 3] = [0, 1, 2].map(|a| {
            let half = (self.brain_radii_mm[a] - rmax - 0.5).max(0.0);
            self.brain_center_mm[a] + rng.random_range(-half..=half)
        });
        let inside = (0..3)
            .map(|a| ((c[a] - self.brain_center_mm[a]) / (self.brain_radii_mm[a] - rmax)).powi(2))
            .sum::<f64>()
            <= 1.0;
        let clear = self.lesions.iter().chain(&self.distractors).all(|b| {
            let br = b.radii_mm.iter().copied().fold(0.0, f64::max);
            let d2: f64 = (0..3).map(|a| (c[a] - b.center_mm[a]).powi(2)).sum();
            d2.sqrt() > rmax + br + 1.0
        });
        (inside && clear).then_some(c)
    }

    pub fn lesion_field(&self, p: [f64; 3]) -> f64 {
        self.lesions
            .iter()
            .map(|b| b.profile(p, self.edge_mm))
            .fold(0.0, f64::max)
    }

    fn intensity(&self, p: [f64; 3], waves: &[([f64; 3], f64, f64)]) -> f64 {
        let rho: f64 = (0..3)
            .map(|a| ((p[a] - self.brain_center_mm[a]) / self.brain_radii_mm[a]).powi(2))
            .sum::<f64>()
            .sqrt();
        if rho >= 1.0 {
            return 0.0;
        }
        let norm: f64 = waves.iter().map(|w| w.2).sum();
        let texture: f64 = waves
            .iter()
            .map(|(k, phase, amp)| amp * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phase).cos())
            .sum::<f64>()
            / norm;
        let blobs: f64 = self
            .lesions
            .iter()
            .chain(&self.distractors)
            .map(|b| b.amplitude * b.profile(p, self.edge_mm))
            .sum();
        self.brain_intensity + self.texture_amplitude * texture + blobs
    }

    /// Voxel count per axis covering the scene box at a spacing.
    pub fn dims_for(&self, spacing_mm: [f64; 3]) -> [usize; 3] {
        [0, 1, 2].map(|a| ((self.box_mm[a] / spacing_mm[a]).round() as usize).max(1))
    }

    /// Intensity and binary lesion mask sampled at voxel centers
    /// `(i s_x, j s_y, k s_z)`.
    pub fn rasterize(&self, spacing_mm: [f64; 3], dims: [usize; 3]) -> Result<(Volume, Volume)> {
        let waves = texture_waves(self.texture_seed);
        let mut img = Grid::zeros(dims, 1);
        let mut mask = Grid::zeros(dims, 1);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = [i as f64 * spacing_mm[0], j as f64 * spacing_mm[1], k as f64 * spacing_mm[2]];
                    let idx = img.index(0, i, j, k);
                    img.data_mut()[idx] = self.intensity(p, &waves) as f32;
                    mask.data_mut()[idx] = (self.lesion_field(p) >= self.threshold) as u8 as f32;
                }
            }
        }
        Ok((Volume::new(img, spacing_mm, [0.0; 3])?, Volume::new(mask, spacing_mm, [0.0; 3])?))
    }
}
