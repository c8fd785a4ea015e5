//! Dense multichannel voxel grids and the grid-preserving rotation group.
//!
//! Memory layout is channel-major with x fastest:
//! `index = ((c * nz + z) * ny + y) * nx + x`.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    dims: [usize; 3],
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn zeros(dims: [usize; 3], channels: usize) -> Self {
        Self::filled(dims, channels, T::zero())
    }

    pub fn filled(dims: [usize; 3], channels: usize, value: T) -> Self {
        Grid {
            dims,
            channels,
            data: vec![value; dims[0] * dims[1] * dims[2] * channels],
        }
    }

    pub fn from_vec(dims: [usize; 3], channels: usize, data: Vec<T>) -> Result<Self> {
        let expected = dims[0] * dims[1] * dims[2] * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "grid {dims:?}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Grid { dims, channels, data })
    }

    /// A flat parameter vector viewed as an `n x 1 x 1` single-channel grid.
    pub fn flat(data: Vec<T>) -> Self {
        Grid {
            dims: [data.len(), 1, 1],
            channels: 1,
            data,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::flat(vec![value])
    }

    pub fn cast<U: Real>(&self) -> Grid<U> {
        Grid {
            dims: self.dims,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Grid<T> {
        Grid {
            dims: self.dims,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T> Grid<T> {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        ((c * self.dims[2] + z) * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.voxels();
        &mut self.data[c * n..(c + 1) * n]
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(c, x, y, z)]
    }
}

/// Signed permutation matrix: a rotation or reflection that maps the voxel
/// lattice onto itself. Rows are output axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridSymmetry(pub [[i32; 3]; 3]);

impl GridSymmetry {
    pub const IDENTITY: GridSymmetry = GridSymmetry([[1, 0, 0], [0, 1, 0], [0, 0, 1]]);

    pub fn determinant(&self) -> i32 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn transpose(&self) -> GridSymmetry {
        let m = &self.0;
        let mut t = [[0; 3]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        GridSymmetry(t)
    }

    pub fn compose(&self, other: &GridSymmetry) -> GridSymmetry {
        let mut out = [[0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        GridSymmetry(out)
    }

    pub fn as_matrix(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.0[i][j] as f64;
            }
        }
        m
    }

    /// Source axis feeding output axis `a`.
    fn source_axis(&self, a: usize) -> usize {
        (0..3).find(|&j| self.0[a][j] != 0).expect("signed permutation row")
    }

    /// All 48 signed permutations of the three axes.
    pub fn all() -> Vec<GridSymmetry> {
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut out = Vec::with_capacity(48);
        for perm in PERMS {
            for signs in 0..8 {
                let mut m = [[0; 3]; 3];
                for a in 0..3 {
                    m[a][perm[a]] = if signs & (1 << a) != 0 { -1 } else { 1 };
                }
                out.push(GridSymmetry(m));
            }
        }
        out
    }

    /// The 24 proper rotations of the cube.
    pub fn proper_rotations() -> Vec<GridSymmetry> {
        Self::all().into_iter().filter(|g| g.determinant() == 1).collect()
    }

    /// The 8 proper rotations that keep the z axis (up to sign): the
    /// symmetry group of a grid with `sx == sy != sz`.
    pub fn in_plane_rotations() -> Vec<GridSymmetry> {
        Self::proper_rotations()
            .into_iter()
            .filter(|g| g.0[2][2] != 0)
            .collect()
    }

    pub fn permuted_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        [
            dims[self.source_axis(0)],
            dims[self.source_axis(1)],
            dims[self.source_axis(2)],
        ]
    }

    pub fn permuted_spacing(&self, spacing: [f64; 3]) -> [f64; 3] {
        [
            spacing[self.source_axis(0)],
            spacing[self.source_axis(1)],
            spacing[self.source_axis(2)],
        ]
    }

    /// Moves voxels: `out(q) = in(R^-1 q)` about the grid center. Channel
    /// values are copied unchanged; feature rotation is applied separately.
    pub fn permute_voxels<T: Real>(&self, grid: &Grid<T>) -> Grid<T> {
        let din = grid.dims();
        let dout = self.permuted_dims(din);
        let inv = self.transpose();
        let mut out = Grid::zeros(dout, grid.channels());
        for c in 0..grid.channels() {
            for z in 0..dout[2] {
                for y in 0..dout[1] {
                    for x in 0..dout[0] {
                        // doubled centered coordinates keep everything integral
                        let q = [
                            2 * x as i64 - (dout[0] as i64 - 1),
                            2 * y as i64 - (dout[1] as i64 - 1),
                            2 * z as i64 - (dout[2] as i64 - 1),
                        ];
                        let mut s = [0usize; 3];
                        for a in 0..3 {
                            let v: i64 = (0..3).map(|k| inv.0[a][k] as i64 * q[k]).sum();
                            s[a] = ((v + din[a] as i64 - 1) / 2) as usize;
                        }
                        let dst = out.index(c, x, y, z);
                        out.data[dst] = grid.get(c, s[0], s[1], s[2]);
                    }
                }
            }
        }
        out
    }
}
