//! Volumes, synthetic phantoms, resampling and on-disk datasets.

pub mod dataset;
pub mod phantom;
pub mod resample;
pub mod volume;

pub use dataset::{generate_scenes, load_case, synth_dataset, Case, CaseEntry, DatasetManifest, Split};
pub use phantom::{Blob, PhantomScene};
pub use resample::{interpolate_line, resample, resample_image, ResampleMethod};
pub use volume::{normalize_intensity, read_volume, read_volume_header, write_volume, Volume};
