//! Synthetic multi-resolution datasets on disk.
//!
//! Every scene is rasterized at every requested spacing. Scenes (not
//! individual volumes) are assigned to splits, so one scene never appears
//! in both training and test data.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::phantom::PhantomScene;
use crate::data::volume::{read_volume, write_volume, Volume};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Split of scene `i` out of `k`: first half train, next sixth val,
    /// rest test (60 scenes give 30/10/20).
    pub fn of_scene(i: usize, k: usize) -> Split {
        let n_train = (k as f64 / 2.0).round() as usize;
        let n_val = (k as f64 / 6.0).round() as usize;
        if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub scene: usize,
    pub spacing_mm: [f64; 3],
    pub split: Split,
    pub image: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub scenes: usize,
    pub box_mm: [f64; 3],
    pub spacings_mm: Vec<[f64; 3]>,
    pub cases: Vec<CaseEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, "manifest", e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn select(&self, split: Split, spacing_mm: Option<[f64; 3]>) -> Vec<&CaseEntry> {
        self.cases
            .iter()
            .filter(|c| c.split == split && spacing_mm.is_none_or(|s| c.spacing_mm == s))
            .collect()
    }
}

/// An image with its binary mask on the same grid.
#[derive(Clone, Debug)]
pub struct Case {
    pub id: String,
    pub image: Volume,
    pub mask: Volume,
}

impl Case {
    pub fn new(id: impl Into<String>, image: Volume, mask: Volume) -> Result<Self> {
        if image.dims() != mask.dims() || image.spacing() != mask.spacing() {
            return Err(Error::DimensionMismatch(format!(
                "image {:?} @ {:?} mm vs mask {:?} @ {:?} mm",
                image.dims(),
                image.spacing(),
                mask.dims(),
                mask.spacing()
            )));
        }
        Ok(Case {
            id: id.into(),
            image,
            mask,
        })
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.image.spacing()
    }
}

/// The scene list for a seed; scene `i` depends only on `(seed, i)`.
pub fn generate_scenes(seed: u64, scenes: usize, box_mm: [f64; 3]) -> Vec<PhantomScene> {
    (0..scenes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            PhantomScene::random(&mut rng, box_mm)
        })
        .collect()
}

/// In-memory cases for the given scenes at one spacing.
pub fn rasterize_cases(scenes: &[(usize, &PhantomScene)], spacing_mm: [f64; 3]) -> Result<Vec<Case>> {
    scenes
        .iter()
        .map(|(i, s)| {
            let (img, mask) = s.rasterize(spacing_mm, s.dims_for(spacing_mm))?;
            Case::new(format!("scene{i:04}"), img, mask)
        })
        .collect()
}

/// Writes `caseXXXX_img.rvol` / `caseXXXX_mask.rvol` pairs and the
/// manifest into `out`.
pub fn synth_dataset(out: &Path, seed: u64, scenes: usize, spacings_mm: &[[f64; 3]], box_mm: [f64; 3]) -> Result<DatasetManifest> {
    if scenes == 0 || spacings_mm.is_empty() {
        return Err(Error::InvalidArgument("need at least one scene and one spacing".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut cases = Vec::new();
    for (i, scene) in generate_scenes(seed, scenes, box_mm).iter().enumerate() {
        for &sp in spacings_mm {
            let id = format!("case{:04}", cases.len());
            let (img, mask) = scene.rasterize(sp, scene.dims_for(sp))?;
            let image = format!("{id}_img.rvol");
            let mask_name = format!("{id}_mask.rvol");
            write_volume(&out.join(&image), &img)?;
            write_volume(&out.join(&mask_name), &mask)?;
            cases.push(CaseEntry {
                id,
                scene: i,
                spacing_mm: sp,
                split: Split::of_scene(i, scenes),
                image,
                mask: mask_name,
            });
        }
    }
    let manifest = DatasetManifest {
        seed,
        scenes,
        box_mm,
        spacings_mm: spacings_mm.to_vec(),
        cases,
    };
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn load_case(dir: &Path, entry: &CaseEntry) -> Result<Case> {
    let path = |f: &str| -> PathBuf { dir.join(f) };
    Case::new(entry.id.clone(), read_volume(&path(&entry.image))?, read_volume(&path(&entry.mask))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let count = |s| (0..60).filter(|&i| Split::of_scene(i, 60) == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (30, 10, 20));
    }

    #[test]
    fn generator_is_bitwise_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sp = [[1.0, 1.0, 1.0], [1.0, 1.0, 3.0]];
        let m = synth_dataset(a.path(), 5, 3, &sp, [24.0; 3]).unwrap();
        synth_dataset(b.path(), 5, 3, &sp, [24.0; 3]).unwrap();
        assert_eq!(m.cases.len(), 6);
        for c in &m.cases {
            for f in [&c.image, &c.mask] {
                assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
            }
        }
        let back = DatasetManifest::read(&a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        let case = load_case(a.path(), &m.cases[1]).unwrap();
        assert_eq!(case.image.dims(), [24, 24, 8]);
    }
}
