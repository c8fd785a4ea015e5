//! Real spherical harmonics, Wigner rotation matrices and Clebsch-Gordan
//! couplings for degrees 0, 1 and 2.
//!
//! Conventions (fixed, every other module relies on them):
//!
//! * Harmonics are orthonormal on the unit sphere, components ordered
//!   `m = -l..=l`. With `d = (x, y, z)` a unit vector:
//!   - `l = 0`: `1 / (2 sqrt(pi))`
//!   - `l = 1`: `sqrt(3 / (4 pi)) * (y, z, x)`
//!   - `l = 2`: `c1 xy, c1 yz, c0 (2z^2 - x^2 - y^2), c1 xz, c2 (x^2 - y^2)` with
//!     `c1 = sqrt(15/pi)/2`, `c0 = sqrt(5/pi)/4`, `c2 = sqrt(15/pi)/4`.
//! * `D(l, R)` is defined by `Y_l(R d) = D(l, R) Y_l(d)`; for `l = 1` it is
//!   `R` itself with rows and columns permuted to `(y, z, x)`.
//! * Coupling coefficients `C[m1][m2][m3]` define the bilinear map
//!   `z_m3 = sum C x_m1 y_m2` with `z(D1 x, D2 y) = D3 z(x, y)`, normalized
//!   to `sum C^2 = 2 l3 + 1`.
//! * All features carry even parity. Harmonics themselves have parity
//!   `(-1)^l`; the kernels built from them are rotation equivariant only.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 2;

pub type Matrix3 = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Irrep {
    pub degree: usize,
}

impl Irrep {
    pub fn new(degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::DegreeOutOfRange(degree));
        }
        Ok(Irrep { degree })
    }

    pub fn dim(&self) -> usize {
        2 * self.degree + 1
    }

    pub fn is_scalar(&self) -> bool {
        self.degree == 0
    }
}

/// One `(multiplicity, irrep)` block of a feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IrrepBlock {
    pub mult: usize,
    pub irrep: Irrep,
}

impl IrrepBlock {
    pub fn dim(&self) -> usize {
        self.mult * self.irrep.dim()
    }
}

/// Ordered list of irrep blocks, e.g. `8x0e+4x1e+2x2e`. Block order is part
/// of the channel layout and is never re-sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IrrepsSignature {
    blocks: Vec<IrrepBlock>,
}

impl IrrepsSignature {
    pub fn new(blocks: Vec<IrrepBlock>) -> Result<Self> {
        for b in &blocks {
            if b.mult == 0 {
                return Err(Error::InvalidArgument("irrep multiplicity must be positive".into()));
            }
            Irrep::new(b.irrep.degree)?;
        }
        Ok(IrrepsSignature { blocks })
    }

    pub fn from_pairs(pairs: &[(usize, usize)]) -> Result<Self> {
        let blocks = pairs
            .iter()
            .map(|&(mult, l)| Ok(IrrepBlock { mult, irrep: Irrep::new(l)? }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }

    pub fn scalars(n: usize) -> Self {
        IrrepsSignature {
            blocks: vec![IrrepBlock {
                mult: n,
                irrep: Irrep { degree: 0 },
            }],
        }
    }

    pub fn blocks(&self) -> &[IrrepBlock] {
        &self.blocks
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(IrrepBlock::dim).sum()
    }

    /// Channel offset of each block.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.blocks
            .iter()
            .map(|b| {
                let o = acc;
                acc += b.dim();
                o
            })
            .collect()
    }

    /// Number of copies with `l > 0`; each needs one gate scalar.
    pub fn num_nonscalar_copies(&self) -> usize {
        self.blocks.iter().filter(|b| !b.irrep.is_scalar()).map(|b| b.mult).sum()
    }

    /// Channel indices of all `l = 0` components.
    pub fn scalar_channels(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (b, off) in self.blocks.iter().zip(self.offsets()) {
            if b.irrep.is_scalar() {
                out.extend(off..off + b.mult);
            }
        }
        out
    }

    pub fn scaled(&self, factor: usize) -> Self {
        IrrepsSignature {
            blocks: self
                .blocks
                .iter()
                .map(|b| IrrepBlock {
                    mult: b.mult * factor,
                    irrep: b.irrep,
                })
                .collect(),
        }
    }

    /// Blockwise concatenation (`self` first).
    pub fn concat(&self, other: &Self) -> Self {
        let mut blocks = self.blocks.clone();
        blocks.extend_from_slice(&other.blocks);
        IrrepsSignature { blocks }
    }

    /// `self` followed by one scalar block of `n` channels (omitted when 0).
    pub fn with_scalars(&self, n: usize) -> Self {
        if n == 0 {
            self.clone()
        } else {
            self.concat(&Self::scalars(n))
        }
    }
}

impl fmt::Display for IrrepsSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "{}x{}e", b.mult, b.irrep.degree)?;
        }
        Ok(())
    }
}

impl FromStr for IrrepsSignature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cleaned: String = s.chars().filter(|c| !c.is_whitespace() && *c != '~').collect();
        let bad = |part: &str| Error::InvalidArgument(format!("cannot parse irrep block '{part}' in '{s}'"));
        let mut blocks = Vec::new();
        for part in cleaned.split('+') {
            let (mult, rest) = match part.split_once('x') {
                Some((m, r)) => (m.parse::<usize>().map_err(|_| bad(part))?, r),
                None => (1, part),
            };
            let degree = rest
                .strip_suffix('e')
                .ok_or_else(|| bad(part))?
                .parse::<usize>()
                .map_err(|_| bad(part))?;
            blocks.push(IrrepBlock {
                mult,
                irrep: Irrep::new(degree)?,
            });
        }
        Self::new(blocks)
    }
}

impl Serialize for IrrepsSignature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for IrrepsSignature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitDirection {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitDirection {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if (n - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::NotUnitDirection(n));
        }
        Ok(UnitDirection { x, y, z })
    }

    /// Normalizes `v`; `None` for the zero vector.
    pub fn normalize(v: [f64; 3]) -> Option<Self> {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        Some(UnitDirection {
            x: v[0] / n,
            y: v[1] / n,
            z: v[2] / n,
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

const C_L0: f64 = 0.282_094_791_773_878_14; // 1 / (2 sqrt(pi))
const C_L1: f64 = 0.488_602_511_902_919_9; // sqrt(3 / (4 pi))
const C_L2_1: f64 = 1.092_548_430_592_079_2; // sqrt(15 / pi) / 2
const C_L2_0: f64 = 0.315_391_565_252_520_05; // sqrt(5 / pi) / 4
const C_L2_2: f64 = 0.546_274_215_296_039_6; // sqrt(15 / pi) / 4

/// Unchecked evaluation; `d` must be unit-norm. Writes `2l+1` values.
#[inline]
pub(crate) fn sh_into(l: usize, d: [f64; 3], out: &mut [f64]) {
    let [x, y, z] = d;
    match l {
        0 => out[0] = C_L0,
        1 => {
            out[0] = C_L1 * y;
            out[1] = C_L1 * z;
            out[2] = C_L1 * x;
        }
        2 => {
            out[0] = C_L2_1 * x * y;
            out[1] = C_L2_1 * y * z;
            out[2] = C_L2_0 * (2.0 * z * z - x * x - y * y);
            out[3] = C_L2_1 * x * z;
            out[4] = C_L2_2 * (x * x - y * y);
        }
        _ => unreachable!("degree checked by caller"),
    }
}

pub fn sh_eval(l: usize, direction: UnitDirection) -> Result<Vec<f64>> {
    Irrep::new(l)?;
    let mut out = vec![0.0; 2 * l + 1];
    sh_into(l, direction.as_array(), &mut out);
    Ok(out)
}

fn check_rotation(r: &Matrix3) -> Result<()> {
    let mut res = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            res += (dot - target) * (dot - target);
        }
    }
    let res = res.sqrt();
    if !res.is_finite() || res > 1e-8 {
        return Err(Error::NotOrthogonal(res));
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if det < 0.0 {
        return Err(Error::ImproperRotation(det));
    }
    Ok(())
}

/// Symmetric traceless matrices with `Y_2^m(d) = d^T Q_m d` on the sphere.
fn l2_quadratic_forms() -> [Matrix3; 5] {
    let h = 0.5 * C_L2_1;
    [
        [[0.0, h, 0.0], [h, 0.0, 0.0], [0.0, 0.0, 0.0]],
        [[0.0, 0.0, 0.0], [0.0, 0.0, h], [0.0, h, 0.0]],
        [[-C_L2_0, 0.0, 0.0], [0.0, -C_L2_0, 0.0], [0.0, 0.0, 2.0 * C_L2_0]],
        [[0.0, 0.0, h], [0.0, 0.0, 0.0], [h, 0.0, 0.0]],
        [[C_L2_2, 0.0, 0.0], [0.0, -C_L2_2, 0.0], [0.0, 0.0, 0.0]],
    ]
}

/// Unchecked Wigner matrix, row-major `(2l+1) x (2l+1)`.
pub(crate) fn wigner_unchecked(l: usize, r: &Matrix3) -> Vec<f64> {
    match l {
        0 => vec![1.0],
        1 => {
            const P: [usize; 3] = [1, 2, 0];
            let mut d = vec![0.0; 9];
            for a in 0..3 {
                for b in 0..3 {
                    d[a * 3 + b] = r[P[a]][P[b]];
                }
            }
            d
        }
        2 => {
            let q = l2_quadratic_forms();
            let mut d = vec![0.0; 25];
            for (m, qm) in q.iter().enumerate() {
                // S = R^T Q_m R, expanded in the (Frobenius-orthogonal) Q basis
                let mut s = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        let mut acc = 0.0;
                        for a in 0..3 {
                            for b in 0..3 {
                                acc += r[a][i] * qm[a][b] * r[b][j];
                            }
                        }
                        s[i][j] = acc;
                    }
                }
                for (mp, qp) in q.iter().enumerate() {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for i in 0..3 {
                        for j in 0..3 {
                            num += s[i][j] * qp[i][j];
                            den += qp[i][j] * qp[i][j];
                        }
                    }
                    d[m * 5 + mp] = num / den;
                }
            }
            d
        }
        _ => unreachable!("degree checked by caller"),
    }
}

pub fn wigner_rotation(l: usize, rotation: &Matrix3) -> Result<Vec<f64>> {
    Irrep::new(l)?;
    check_rotation(rotation)?;
    Ok(wigner_unchecked(l, rotation))
}

fn factorial(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Complex Clebsch-Gordan `<j1 m1 j2 m2 | j3 m3>` (Racah formula).
fn complex_cg(j1: i64, m1: i64, j2: i64, m2: i64, j3: i64, m3: i64) -> f64 {
    if m1 + m2 != m3 || m1.abs() > j1 || m2.abs() > j2 || m3.abs() > j3 {
        return 0.0;
    }
    if j3 < (j1 - j2).abs() || j3 > j1 + j2 {
        return 0.0;
    }
    let pre = ((2 * j3 + 1) as f64 * factorial(j3 + j1 - j2) * factorial(j3 - j1 + j2) * factorial(j1 + j2 - j3)
        / factorial(j1 + j2 + j3 + 1))
    .sqrt();
    let pre2 = (factorial(j3 + m3)
        * factorial(j3 - m3)
        * factorial(j1 - m1)
        * factorial(j1 + m1)
        * factorial(j2 - m2)
        * factorial(j2 + m2))
    .sqrt();
    let mut sum = 0.0;
    for k in 0..=(j1 + j2 + j3) {
        let terms = [
            j1 + j2 - j3 - k,
            j1 - m1 - k,
            j2 + m2 - k,
            j3 - j2 + m1 + k,
            j3 - j1 - m2 + k,
        ];
        if terms.iter().any(|&t| t < 0) {
            continue;
        }
        let den: f64 = factorial(k) * terms.iter().map(|&t| factorial(t)).product::<f64>();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / den;
    }
    pre * pre2 * sum
}

/// Rows `m`, columns `mu` (both `-l..=l`): real harmonic `m` as a complex
/// combination of Condon-Shortley harmonics `mu`. Entries are `(re, im)`.
fn real_from_complex(l: i64) -> Vec<Vec<(f64, f64)>> {
    let n = (2 * l + 1) as usize;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut a = vec![vec![(0.0, 0.0); n]; n];
    for m in -l..=l {
        let row = (m + l) as usize;
        let parity = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        if m > 0 {
            a[row][(m + l) as usize] = (parity * s, 0.0);
            a[row][(-m + l) as usize] = (s, 0.0);
        } else if m == 0 {
            a[row][l as usize] = (1.0, 0.0);
        } else {
            a[row][(m + l) as usize] = (0.0, s);
            a[row][(-m + l) as usize] = (0.0, -parity * s);
        }
    }
    a
}

fn compute_cg(l1: usize, l2: usize, l3: usize) -> Vec<f64> {
    let (n1, n2, n3) = (2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1);
    let mut out = vec![0.0; n1 * n2 * n3];
    if l3 + l1.min(l2) < l1.max(l2) || l3 > l1 + l2 {
        return out;
    }
    let (j1, j2, j3) = (l1 as i64, l2 as i64, l3 as i64);
    let (a1, a2, a3) = (real_from_complex(j1), real_from_complex(j2), real_from_complex(j3));
    let mut re = vec![0.0; out.len()];
    let mut im = vec![0.0; out.len()];
    for r1 in 0..n1 {
        for r2 in 0..n2 {
            for r3 in 0..n3 {
                let (mut sr, mut si) = (0.0, 0.0);
                for u1 in 0..n1 {
                    let p = a1[r1][u1];
                    if p == (0.0, 0.0) {
                        continue;
                    }
                    for u2 in 0..n2 {
                        let q = a2[r2][u2];
                        if q == (0.0, 0.0) {
                            continue;
                        }
                        for u3 in 0..n3 {
                            let c = complex_cg(j1, u1 as i64 - j1, j2, u2 as i64 - j2, j3, u3 as i64 - j3);
                            if c == 0.0 {
                                continue;
                            }
                            // conj(a3) * c * a1 * a2
                            let w = (a3[r3][u3].0, -a3[r3][u3].1);
                            let pq = (p.0 * q.0 - p.1 * q.1, p.0 * q.1 + p.1 * q.0);
                            let t = (pq.0 * w.0 - pq.1 * w.1, pq.0 * w.1 + pq.1 * w.0);
                            sr += c * t.0;
                            si += c * t.1;
                        }
                    }
                }
                let idx = (r1 * n2 + r2) * n3 + r3;
                re[idx] = sr;
                im[idx] = si;
            }
        }
    }
    let nre: f64 = re.iter().map(|v| v * v).sum();
    let nim: f64 = im.iter().map(|v| v * v).sum();
    let src = if nre >= nim { re } else { im };
    let norm: f64 = src.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return out;
    }
    let sign = src
        .iter()
        .find(|v| v.abs() > 1e-9)
        .map_or(1.0, |v| v.signum());
    let scale = sign * (n3 as f64).sqrt() / norm;
    for (o, v) in out.iter_mut().zip(src) {
        let x = v * scale;
        *o = if x.abs() < 1e-14 { 0.0 } else { x };
    }
    out
}

fn cg_table() -> &'static Vec<Vec<f64>> {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(27);
        for l1 in 0..=MAX_DEGREE {
            for l2 in 0..=MAX_DEGREE {
                for l3 in 0..=MAX_DEGREE {
                    t.push(compute_cg(l1, l2, l3));
                }
            }
        }
        t
    })
}

pub(crate) fn cg_ref(l1: usize, l2: usize, l3: usize) -> &'static [f64] {
    &cg_table()[(l1 * 3 + l2) * 3 + l3]
}

/// Coupling coefficients as a flat `(2l1+1) x (2l2+1) x (2l3+1)` array
/// (last index fastest). All-zero when the triangle rule fails.
pub fn cg_coefficients(l1: usize, l2: usize, l3: usize) -> Result<Vec<f64>> {
    for l in [l1, l2, l3] {
        Irrep::new(l)?;
    }
    Ok(cg_ref(l1, l2, l3).to_vec())
}

/// Block-diagonal application of `D(l, R)` to every copy of every block.
pub fn rotate_features(sig: &IrrepsSignature, rotation: &Matrix3, features: &[f64]) -> Result<Vec<f64>> {
    if features.len() != sig.total_dim() {
        return Err(Error::DimensionMismatch(format!(
            "signature {sig} has dimension {}, features have {}",
            sig.total_dim(),
            features.len()
        )));
    }
    check_rotation(rotation)?;
    let mut out = vec![0.0; features.len()];
    let ds: Vec<Vec<f64>> = (0..=MAX_DEGREE).map(|l| wigner_unchecked(l, rotation)).collect();
    let mut off = 0;
    for b in sig.blocks() {
        let n = b.irrep.dim();
        let d = &ds[b.irrep.degree];
        for _ in 0..b.mult {
            for i in 0..n {
                out[off + i] = (0..n).map(|j| d[i * n + j] * features[off + j]).sum();
            }
            off += n;
        }
    }
    Ok(out)
}

/// Rotation by `angle` radians about a (not necessarily unit) axis.
pub fn axis_angle(axis: [f64; 3], angle: f64) -> Matrix3 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

pub fn matmul3(a: &Matrix3, b: &Matrix3) -> Matrix3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn matvec3(a: &Matrix3, v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}
