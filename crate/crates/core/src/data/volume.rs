//! Spacing-aware volumes and the `rvol` file format.
//!
//! Layout on disk: the 8 bytes `RVOL0001`, a little-endian `u32` header
//! length, a UTF-8 JSON header, then `f32` little-endian samples in
//! channel-major order with x fastest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const RVOL_MAGIC: &[u8; 8] = b"RVOL0001";
pub const RVOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    grid: Grid<f32>,
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
}

impl Volume {
    pub fn new(grid: Grid<f32>, spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Result<Self> {
        if spacing_mm.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing_mm:?}")));
        }
        Ok(Volume {
            grid,
            spacing_mm,
            origin_mm,
        })
    }

    pub fn zeros(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Result<Self> {
        Self::new(Grid::zeros(dims, 1), spacing_mm, origin_mm)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims()
    }

    pub fn channels(&self) -> usize {
        self.grid.channels()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin_mm
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut Grid<f32> {
        &mut self.grid
    }

    pub fn into_grid(self) -> Grid<f32> {
        self.grid
    }

    pub fn data(&self) -> &[f32] {
        self.grid.data()
    }

    /// World coordinate (mm) of voxel `(i, j, k)`.
    pub fn world(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin_mm[0] + i as f64 * self.spacing_mm[0],
            self.origin_mm[1] + j as f64 * self.spacing_mm[1],
            self.origin_mm[2] + k as f64 * self.spacing_mm[2],
        ]
    }

    /// Same geometry, new samples.
    pub fn with_grid(&self, grid: Grid<f32>) -> Self {
        Volume {
            grid,
            spacing_mm: self.spacing_mm,
            origin_mm: self.origin_mm,
        }
    }

    pub fn header(&self) -> RvolHeader {
        RvolHeader {
            format: "rvol".into(),
            version: RVOL_VERSION,
            dims: self.dims(),
            spacing_mm: self.spacing_mm,
            origin_mm: self.origin_mm,
            channels: self.channels(),
            dtype: "f32le".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvolHeader {
    pub format: String,
    pub version: u32,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub channels: usize,
    pub dtype: String,
}

impl RvolHeader {
    fn num_values(&self) -> usize {
        self.dims.iter().product::<usize>() * self.channels
    }
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let json = serde_json::to_vec(&vol.header())?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |b: &[u8]| w.write_all(b).map_err(|e| Error::io(path, e));
    put(RVOL_MAGIC)?;
    put(&(json.len() as u32).to_le_bytes())?;
    put(&json)?;
    let mut bytes = Vec::with_capacity(4 * vol.data().len());
    for v in vol.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    put(&bytes)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_header_from(path: &Path, r: &mut impl Read) -> Result<RvolHeader> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "magic", "file too short"))?;
    if &magic[..4] != b"RVOL" {
        return Err(Error::format(path, "magic", "not an rvol file"));
    }
    if &magic != RVOL_MAGIC {
        return Err(Error::format(
            path,
            "version",
            format!("unsupported rvol version '{}'", String::from_utf8_lossy(&magic[4..])),
        ));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| Error::format(path, "header", "truncated header length"))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .map_err(|_| Error::format(path, "header", "truncated header"))?;
    let header: RvolHeader = serde_json::from_slice(&json).map_err(|e| Error::format(path, "header", e.to_string()))?;
    if header.version != RVOL_VERSION {
        return Err(Error::format(path, "version", format!("unsupported version {}", header.version)));
    }
    if header.dtype != "f32le" {
        return Err(Error::format(path, "dtype", format!("unsupported dtype '{}'", header.dtype)));
    }
    if header.spacing_mm.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::format(path, "spacing_mm", "spacing must be positive"));
    }
    Ok(header)
}

/// Reads only the header; the sample data is not touched.
pub fn read_volume_header(path: &Path) -> Result<RvolHeader> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_header_from(path, &mut BufReader::new(file))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header_from(path, &mut r)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let expected = 4 * header.num_values();
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            "data",
            format!("expected {expected} bytes of samples, found {}", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let grid = Grid::from_vec(header.dims, header.channels, data)?;
    Volume::new(grid, header.spacing_mm, header.origin_mm)
}

/// Zero mean, unit variance over the nonzero voxels; zeros stay zero.
pub fn normalize_intensity(vol: &Volume) -> Volume {
    let nz: Vec<f64> = vol.data().iter().filter(|v| **v != 0.0).map(|&v| v as f64).collect();
    if nz.is_empty() {
        return vol.clone();
    }
    let n = nz.len() as f64;
    let mean = nz.iter().sum::<f64>() / n;
    let var = nz.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    vol.with_grid(vol.grid().map(|v| if v == 0.0 { 0.0 } else { ((v as f64 - mean) / sd) as f32 }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Volume {
        let data: Vec<f32> = (0..2 * 3 * 4).map(|i| i as f32 * 0.37 - 2.0).collect();
        Volume::new(Grid::from_vec([2, 3, 4], 1, data).unwrap(), [0.5, 0.5, 3.0], [1.0, -2.0, 0.0]).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.rvol");
        let v = sample();
        write_volume(&p, &v).unwrap();
        let back = read_volume(&p).unwrap();
        assert_eq!(back, v);
        let h = read_volume_header(&p).unwrap();
        assert_eq!(h.dims, [2, 3, 4]);
        assert_eq!(h.spacing_mm, [0.5, 0.5, 3.0]);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.rvol");
        write_volume(&p, &sample()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Format { field: "data", .. })));
        let mut bad = bytes.clone();
        bad[7] = b'9';
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Format { field: "version", .. })));
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Format { field: "magic", .. })));
    }

    #[test]
    fn normalization_ignores_background() {
        let v = Volume::new(Grid::from_vec([4, 1, 1], 1, vec![0.0, 2.0, 4.0, 0.0]).unwrap(), [1.0; 3], [0.0; 3]).unwrap();
        let n = normalize_intensity(&v);
        assert_eq!(n.data(), &[0.0, -1.0, 1.0, 0.0]);
    }
}
