//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resadapt::harmonics::rotate_features;
use resadapt::network::{Model, ModelKind, UNetConfig};
use resadapt::{Grid, GridSymmetry, IrrepsSignature, KernelRealization, PhysicalKernelSpec};

pub fn random_grid(seed: u64, dims: [usize; 3]) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    Grid::from_vec(dims, 1, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// A kernel spec mixing every degree on both sides.
pub fn mixed_spec(seed: u64) -> PhysicalKernelSpec {
    let sig_in: IrrepsSignature = "2x0e+1x1e+1x2e".parse().unwrap();
    let sig_out: IrrepsSignature = "1x0e+2x1e+1x2e".parse().unwrap();
    let mut s = PhysicalKernelSpec::new(5.0, 5, sig_in, sig_out, &[0, 1, 2]).unwrap();
    s.init_random(&mut ChaCha8Rng::seed_from_u64(seed));
    s
}

/// Full `n x n` representation matrix of a signature, column by column.
fn rep(sig: &IrrepsSignature, r: &[[f64; 3]; 3]) -> Vec<Vec<f64>> {
    let n = sig.total_dim();
    (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            rotate_features(sig, r, &e).unwrap()
        })
        .collect()
}

/// Max over taps of |K(R r) - D_out K(r) D_in^T|, relative to max |K|.
pub fn kernel_equivariance_error(k: &KernelRealization, s: &PhysicalKernelSpec, g: &GridSymmetry) -> f64 {
    let r = g.as_matrix();
    let (dout, din) = (rep(s.sig_out(), &r), rep(s.sig_in(), &r));
    let e = k.extent;
    let c = e.map(|n| (n / 2) as i64);
    let kmax = k.tensor.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for z in 0..e[2] {
        for y in 0..e[1] {
            for x in 0..e[0] {
                let u = [x as i64 - c[0], y as i64 - c[1], z as i64 - c[2]];
                let ru: Vec<i64> = (0..3).map(|a| (0..3).map(|b| g.0[a][b] as i64 * u[b]).sum()).collect();
                let t = [0, 1, 2].map(|a| (ru[a] + c[a]) as usize);
                for o in 0..k.dim_out {
                    for i in 0..k.dim_in {
                        // (D_out K D_in^T)[o][i] with D stored by columns
                        let mut rhs = 0.0;
                        for p in 0..k.dim_out {
                            for q in 0..k.dim_in {
                                rhs += dout[p][o] * k.get(p, q, x, y, z) * din[q][i];
                            }
                        }
                        worst = worst.max((k.get(o, i, t[0], t[1], t[2]) - rhs).abs());
                    }
                }
            }
        }
    }
    worst / kmax
}

/// Max |f(g x) - g f(x)| over voxels at least `ring` away from the border,
/// relative to max |f(x)|.
pub fn network_error(model: &Model, x: &Grid<f64>, spacing: [f64; 3], g: &GridSymmetry, ring: usize) -> f64 {
    let y = model.forward(x, spacing).unwrap();
    let lhs = model.forward(&g.permute_voxels(x), g.permuted_spacing(spacing)).unwrap();
    let rhs = g.permute_voxels(&y);
    let d = rhs.dims();
    let scale = y.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for z in ring..d[2] - ring {
        for yy in ring..d[1] - ring {
            for xx in ring..d[0] - ring {
                worst = worst.max((lhs.get(0, xx, yy, z) - rhs.get(0, xx, yy, z)).abs());
            }
        }
    }
    worst / scale
}

/// Reverse-mode gradient against central differences (step `h`) on an
/// 8^3 patch: the three largest entries plus two random ones of every
/// tensor, and one random directional derivative that touches every weight.
///
/// Returns the worst relative error over entries the differences can
/// resolve, and the number of entries below the roundoff floor
/// `16 eps |L| / h`. Those have no meaningful relative error and must
/// instead agree to within the floor; a failure there is reported as
/// infinity.
pub fn gradcheck(kind: ModelKind, h: f64) -> (f64, usize) {
    let model = Model::new(UNetConfig::desk(kind), 8).unwrap();
    let x = random_grid(4, [8; 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let target = Arc::new(Grid::from_vec([8; 3], 1, (0..512).map(|_| rng.random_bool(0.3) as u8 as f64).collect()).unwrap());
    let spacing = [1.0, 1.0, 1.5];
    let (loss, grads) = model.loss_and_gradient(&x, &target, spacing, 1.0).unwrap();
    let floor = 16.0 * f64::EPSILON * loss.abs().max(1.0) / h;
    let loss_at = |p: &[Vec<f64>]| {
        let mut m = model.clone();
        m.set_parameters(p).unwrap();
        m.loss_and_gradient(&x, &target, spacing, 1.0).unwrap().0
    };
    let (mut worst, mut unresolved) = (0.0f64, 0usize);
    let mut compare = |an: f64, fd: f64, what: &str| {
        let diff = (fd - an).abs();
        let scale = fd.abs().max(an.abs());
        if std::env::var_os("GRADCHECK_TRACE").is_some() {
            eprintln!("{what}: analytic {an:e} numeric {fd:e}");
        }
        if scale < floor {
            unresolved += 1;
            if diff > floor {
                worst = f64::INFINITY;
            }
        } else {
            worst = worst.max(diff / scale);
        }
    };
    let base = model.parameters_owned();
    for (t, g) in grads.iter().enumerate() {
        let mut idx: Vec<usize> = (0..g.len()).collect();
        idx.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        idx.truncate(3);
        for _ in 0..2 {
            idx.push(rng.random_range(0..g.len()));
        }
        for j in idx {
            let mut p = base.clone();
            p[t][j] += h;
            let up = loss_at(&p);
            p[t][j] -= 2.0 * h;
            let down = loss_at(&p);
            compare(g[j], (up - down) / (2.0 * h), &format!("tensor {t} entry {j}"));
        }
    }
    let dir: Vec<Vec<f64>> = base.iter().map(|p| p.iter().map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let shift = |s: f64| -> Vec<Vec<f64>> {
        base.iter().zip(&dir).map(|(p, d)| p.iter().zip(d).map(|(a, b)| a + s * b).collect()).collect()
    };
    let fd = (loss_at(&shift(h)) - loss_at(&shift(-h))) / (2.0 * h);
    let an: f64 = grads.iter().zip(&dir).flat_map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b)).sum();
    compare(an, fd, "direction");
    (worst, unresolved)
}

/// Two-sided exact p by listing all 2^n sign patterns of the ranked
/// nonzero differences; `None` when every difference is zero.
pub fn enumeration_p(x: &[f64], y: &[f64]) -> Option<f64> {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return None;
    }
    // midranks by counting, O(n^2)
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&a| {
            let below = abs.iter().filter(|&&b| b < a).count() as f64;
            let equal = abs.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let w_minus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v < 0.0).map(|(_, r)| r).sum();
    let w = w_plus.min(w_minus);
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        if s <= w + 1e-9 {
            hits += 1;
        }
    }
    Some((2.0 * hits as f64 / (1u64 << n) as f64).min(1.0))
}

/// Paired samples for the Wilcoxon oracle: sizes cycle through 1..=10 and
/// every other trial is rounded coarsely so ties and zeros appear.
pub fn wilcoxon_trials(seed: u64, count: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|trial| {
            let n = 1 + trial % 10;
            let q = if trial % 2 == 0 { 10.0 } else { 1e6 };
            let x = (0..n).map(|_| (rng.random_range(0.0..1.0f64) * q).round() / q).collect();
            let y = (0..n).map(|_| (rng.random_range(0.0..1.0f64) * q).round() / q).collect();
            (x, y)
        })
        .collect()
}
