//! A small reverse-mode tape over multichannel grids.
//!
//! Only the operations the U-Nets need are provided. Every node keeps its
//! forward value; [`Tape::backward`] walks the nodes in reverse creation
//! order and accumulates adjoints.

use std::sync::Arc;

use crate::conv::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::harmonics::IrrepsSignature;
use crate::kernels::KernelBasis;
use crate::pooling;
use crate::real::Real;

pub const NORM_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Channel layout used by the normalization, gate and pooling ops.
#[derive(Clone, Debug)]
pub struct Layout {
    /// `(first channel, width)` per irrep copy; width 1 for scalars.
    pub copies: Vec<(usize, usize)>,
    pub channels: usize,
}

impl Layout {
    pub fn from_signature(sig: &IrrepsSignature) -> Self {
        let mut copies = Vec::new();
        for (b, off) in sig.blocks().iter().zip(sig.offsets()) {
            let w = b.irrep.dim();
            for u in 0..b.mult {
                copies.push((off + u * w, w));
            }
        }
        Layout {
            copies,
            channels: sig.total_dim(),
        }
    }
}

enum Op<T> {
    Leaf,
    Realize {
        weights: Var,
        basis: Arc<KernelBasis>,
    },
    Conv {
        input: Var,
        kernel: Var,
        geom: Arc<ConvGeometry>,
    },
    Bias {
        input: Var,
        bias: Var,
    },
    Norm {
        input: Var,
        layout: Arc<Layout>,
        inv_scale: Vec<T>,
    },
    Gate {
        input: Var,
        layout: Arc<Layout>,
    },
    Sigmoid {
        input: Var,
    },
    MaxPool {
        input: Var,
        groups: Arc<Layout>,
        arg: Vec<u32>,
    },
    Upsample {
        input: Var,
        factors: [usize; 3],
    },
    Concat {
        a: Var,
        b: Var,
    },
    Linear {
        input: Var,
        weights: Var,
        bias: Var,
        channels: Arc<Vec<usize>>,
    },
    SoftDice {
        pred: Var,
        target: Arc<Grid<T>>,
        epsilon: T,
    },
    WeightedSum {
        input: Var,
        weights: Arc<Grid<T>>,
    },
}

struct Node<T> {
    value: Grid<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Tape { nodes: Vec::new() }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Grid<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Grid<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Grid<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, values: &[f64]) -> Var {
        self.leaf(Grid::flat(values.iter().map(|&v| T::of(v)).collect()), true)
    }

    /// Compact kernel `(c_out, c_in, taps)` from physical weights.
    pub fn realize(&mut self, basis: &Arc<KernelBasis>, weights: Var) -> Var {
        let value = Grid::flat(basis.realize_compact(self.value(weights).data()));
        let needs = self.needs(weights);
        self.push(
            value,
            Op::Realize {
                weights,
                basis: basis.clone(),
            },
            needs,
        )
    }

    pub fn conv(&mut self, input: Var, kernel: Var, c_out: usize, geom: &Arc<ConvGeometry>) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        let expected = c_out * x.channels() * geom.num_taps();
        if k.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "conv kernel has {} values, expected {expected}",
                k.len()
            )));
        }
        let value = conv::conv_forward(x, k.data(), c_out, geom);
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(
            value,
            Op::Conv {
                input,
                kernel,
                geom: geom.clone(),
            },
            needs,
        ))
    }

    /// Adds `bias[c]` to every voxel of channel `c`.
    pub fn bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let b = self.value(bias);
        if b.len() != x.channels() {
            return Err(Error::DimensionMismatch(format!(
                "bias has {} values for {} channels",
                b.len(),
                x.channels()
            )));
        }
        let mut value = x.clone();
        for c in 0..value.channels() {
            let bc = b.data()[c];
            value.channel_mut(c).iter_mut().for_each(|v| *v += bc);
        }
        let needs = self.needs(input) || self.needs(bias);
        Ok(self.push(value, Op::Bias { input, bias }, needs))
    }

    /// Scalars: `(x - mean) / sqrt(var + eps)` over the grid. Other copies:
    /// `x / sqrt(mean |x|^2 + eps)`, which preserves direction.
    pub fn norm(&mut self, input: Var, layout: &Arc<Layout>) -> Var {
        let x = self.value(input);
        let n = x.voxels();
        let nf = T::of(n as f64);
        let eps = T::of(NORM_EPSILON);
        let mut value = x.clone();
        let mut inv_scale = Vec::with_capacity(layout.copies.len());
        for &(c0, w) in &layout.copies {
            if w == 1 {
                let ch = value.channel_mut(c0);
                let mean = ch.iter().copied().sum::<T>() / nf;
                let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
                let s = T::one() / (var + eps).sqrt();
                ch.iter_mut().for_each(|v| *v = (*v - mean) * s);
                inv_scale.push(s);
            } else {
                let sq: T = (c0..c0 + w)
                    .map(|c| x.channel(c).iter().map(|&v| v * v).sum::<T>())
                    .sum();
                let s = T::one() / (sq / nf + eps).sqrt();
                for c in c0..c0 + w {
                    value.channel_mut(c).iter_mut().for_each(|v| *v *= s);
                }
                inv_scale.push(s);
            }
        }
        let needs = self.needs(input);
        self.push(
            value,
            Op::Norm {
                input,
                layout: layout.clone(),
                inv_scale,
            },
            needs,
        )
    }

    /// Input channels are `layout.channels` feature channels followed by one
    /// gate per non-scalar copy. Scalars get SiLU; each non-scalar copy is
    /// scaled by the sigmoid of its gate.
    pub fn gate(&mut self, input: Var, layout: &Arc<Layout>) -> Result<Var> {
        let x = self.value(input);
        let ngates = layout.copies.iter().filter(|c| c.1 > 1).count();
        if x.channels() != layout.channels + ngates {
            return Err(Error::DimensionMismatch(format!(
                "gate expects {} channels, got {}",
                layout.channels + ngates,
                x.channels()
            )));
        }
        let n = x.voxels();
        let mut value = Grid::zeros(x.dims(), layout.channels);
        let mut gate = layout.channels;
        for &(c0, w) in &layout.copies {
            if w == 1 {
                for (o, &v) in value.channel_mut(c0).iter_mut().zip(x.channel(c0)) {
                    *o = v * sigmoid(v);
                }
            } else {
                let gv = &x.data()[gate * n..(gate + 1) * n];
                for c in c0..c0 + w {
                    let src = x.channel(c);
                    for ((o, &v), &g) in value.data_mut()[c * n..(c + 1) * n].iter_mut().zip(src).zip(gv) {
                        *o = v * sigmoid(g);
                    }
                }
                gate += 1;
            }
        }
        let needs = self.needs(input);
        Ok(self.push(
            value,
            Op::Gate {
                input,
                layout: layout.clone(),
            },
            needs,
        ))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(sigmoid);
        let needs = self.needs(input);
        self.push(value, Op::Sigmoid { input }, needs)
    }

    pub fn maxpool(&mut self, input: Var, factors: [usize; 3], groups: &Arc<Layout>) -> Var {
        let (value, arg) = pooling::maxpool_groups(self.value(input), factors, &groups.copies);
        let needs = self.needs(input);
        self.push(
            value,
            Op::MaxPool {
                input,
                groups: groups.clone(),
                arg,
            },
            needs,
        )
    }

    pub fn upsample(&mut self, input: Var, factors: [usize; 3], target_dims: [usize; 3]) -> Result<Var> {
        let value = pooling::upsample(self.value(input), factors, target_dims)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Upsample { input, factors }, needs))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dims() != vb.dims() {
            return Err(Error::DimensionMismatch(format!(
                "concat of grids {:?} and {:?}",
                va.dims(),
                vb.dims()
            )));
        }
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        let value = Grid::from_vec(va.dims(), va.channels() + vb.channels(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Concat { a, b }, needs))
    }

    /// Single output channel `sum_j w[j] * x[channels[j]] + b`.
    pub fn linear(&mut self, input: Var, weights: Var, bias: Var, channels: &Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weights);
        let b = self.value(bias);
        if w.len() != channels.len() || b.len() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "linear head: {} weights and {} biases for {} channels",
                w.len(),
                b.len(),
                channels.len()
            )));
        }
        let mut value = Grid::filled(x.dims(), 1, b.data()[0]);
        for (&c, &wc) in channels.iter().zip(w.data()) {
            for (o, &v) in value.data_mut().iter_mut().zip(x.channel(c)) {
                *o += wc * v;
            }
        }
        let needs = self.needs(input) || self.needs(weights) || self.needs(bias);
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weights,
                bias,
                channels: channels.clone(),
            },
            needs,
        ))
    }

    /// `1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)`.
    pub fn soft_dice(&mut self, pred: Var, target: &Arc<Grid<T>>, epsilon: T) -> Result<Var> {
        let p = self.value(pred);
        if p.dims() != target.dims() || p.channels() != target.channels() {
            return Err(Error::DimensionMismatch(format!(
                "prediction {:?}x{} vs target {:?}x{}",
                p.dims(),
                p.channels(),
                target.dims(),
                target.channels()
            )));
        }
        let (num, den) = dice_terms(p.data(), target.data(), epsilon);
        let value = Grid::scalar(T::one() - num / den);
        let needs = self.needs(pred);
        Ok(self.push(
            value,
            Op::SoftDice {
                pred,
                target: target.clone(),
                epsilon,
            },
            needs,
        ))
    }

    /// `sum(x * w)`; a convenient scalar probe for gradient checks.
    pub fn weighted_sum(&mut self, input: Var, weights: &Arc<Grid<T>>) -> Result<Var> {
        let x = self.value(input);
        if x.len() != weights.len() {
            return Err(Error::DimensionMismatch("weighted_sum length".into()));
        }
        let s = x.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        let needs = self.needs(input);
        Ok(self.push(
            Grid::scalar(s),
            Op::WeightedSum {
                input,
                weights: weights.clone(),
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.value(output).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Grid<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Grid::scalar(T::one()));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<T>, g: &Grid<T>, grads: &mut [Option<Grid<T>>]) {
        let mut acc = |v: Var, delta: Grid<T>| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (a, b) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *a += *b;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Realize { weights, basis } => {
                let mut gw = vec![T::zero(); self.value(*weights).len()];
                basis.weight_gradient(g.data(), &mut gw);
                acc(*weights, Grid::flat(gw));
            }
            Op::Conv { input, kernel, geom } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let (gx, gk) = conv::conv_backward(x, k.data(), geom, g, self.needs(*input));
                if let Some(gx) = gx {
                    acc(*input, gx);
                }
                acc(*kernel, Grid::flat(gk));
            }
            Op::Bias { input, bias } => {
                let gb = (0..g.channels()).map(|c| g.channel(c).iter().copied().sum()).collect();
                acc(*bias, Grid::flat(gb));
                acc(*input, g.clone());
            }
            Op::Norm {
                input,
                layout,
                inv_scale,
            } => {
                let x = self.value(*input);
                let y = &node.value;
                let nf = T::of(x.voxels() as f64);
                let mut gx = Grid::zeros(x.dims(), x.channels());
                for (&(c0, w), &s) in layout.copies.iter().zip(inv_scale) {
                    if w == 1 {
                        let (gy, yy) = (g.channel(c0), y.channel(c0));
                        let mean_g = gy.iter().copied().sum::<T>() / nf;
                        let mean_gy = gy.iter().zip(yy).map(|(&a, &b)| a * b).sum::<T>() / nf;
                        for ((o, &a), &b) in gx.channel_mut(c0).iter_mut().zip(gy).zip(yy) {
                            *o = s * (a - mean_g - b * mean_gy);
                        }
                    } else {
                        // y = s x with s = (mean|x|^2 + eps)^(-1/2)
                        let dot: T = (c0..c0 + w)
                            .map(|c| g.channel(c).iter().zip(x.channel(c)).map(|(&a, &b)| a * b).sum::<T>())
                            .sum();
                        let k = dot * s * s * s / nf;
                        for c in c0..c0 + w {
                            let xs = x.channel(c);
                            let gs = g.channel(c);
                            for ((o, &a), &b) in gx.channel_mut(c).iter_mut().zip(gs).zip(xs) {
                                *o = s * a - k * b;
                            }
                        }
                    }
                }
                acc(*input, gx);
            }
            Op::Gate { input, layout } => {
                let x = self.value(*input);
                let n = x.voxels();
                let mut gx = Grid::zeros(x.dims(), x.channels());
                let mut gate = layout.channels;
                for &(c0, w) in &layout.copies {
                    if w == 1 {
                        for ((o, &v), &gy) in gx.channel_mut(c0).iter_mut().zip(x.channel(c0)).zip(g.channel(c0)) {
                            let s = sigmoid(v);
                            *o = gy * (s + v * s * (T::one() - s));
                        }
                    } else {
                        for i in 0..n {
                            let s = sigmoid(x.data()[gate * n + i]);
                            let mut dg = T::zero();
                            for c in c0..c0 + w {
                                let gy = g.data()[c * n + i];
                                dg += gy * x.data()[c * n + i];
                                gx.data_mut()[c * n + i] = gy * s;
                            }
                            gx.data_mut()[gate * n + i] = dg * s * (T::one() - s);
                        }
                        gate += 1;
                    }
                }
                acc(*input, gx);
            }
            Op::Sigmoid { input } => {
                let mut gx = g.clone();
                for (o, &s) in gx.data_mut().iter_mut().zip(node.value.data()) {
                    *o *= s * (T::one() - s);
                }
                acc(*input, gx);
            }
            Op::MaxPool { input, groups, arg } => {
                let dims = self.value(*input).dims();
                acc(*input, pooling::maxpool_backward(g, dims, &groups.copies, arg));
            }
            Op::Upsample { input, factors } => {
                let dims = self.value(*input).dims();
                acc(*input, pooling::upsample_adjoint(g, *factors, dims));
            }
            Op::Concat { a, b } => {
                let va = self.value(*a);
                let split = va.len();
                let ga = Grid::from_vec(va.dims(), va.channels(), g.data()[..split].to_vec()).unwrap();
                let vb = self.value(*b);
                let gb = Grid::from_vec(vb.dims(), vb.channels(), g.data()[split..].to_vec()).unwrap();
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Linear {
                input,
                weights,
                bias,
                channels,
            } => {
                let x = self.value(*input);
                let w = self.value(*weights);
                let gy = g.data();
                acc(*bias, Grid::scalar(gy.iter().copied().sum()));
                let gw = channels
                    .iter()
                    .map(|&c| x.channel(c).iter().zip(gy).map(|(&a, &b)| a * b).sum())
                    .collect();
                acc(*weights, Grid::flat(gw));
                if self.needs(*input) {
                    let mut gx = Grid::zeros(x.dims(), x.channels());
                    for (&c, &wc) in channels.iter().zip(w.data()) {
                        for (o, &b) in gx.channel_mut(c).iter_mut().zip(gy) {
                            *o += wc * b;
                        }
                    }
                    acc(*input, gx);
                }
            }
            Op::SoftDice { pred, target, epsilon } => {
                let p = self.value(*pred);
                let (num, den) = dice_terms(p.data(), target.data(), *epsilon);
                let two = T::of(2.0);
                let scale = g.data()[0];
                let mut gp = Grid::zeros(p.dims(), p.channels());
                for (o, &t) in gp.data_mut().iter_mut().zip(target.data()) {
                    // d/dp [1 - num/den] = -(2 t den - num) / den^2
                    *o = -scale * (two * t * den - num) / (den * den);
                }
                acc(*pred, gp);
            }
            Op::WeightedSum { input, weights } => {
                let s = g.data()[0];
                acc(*input, weights.map(|w| w * s));
            }
        }
    }
}

fn dice_terms<T: Real>(p: &[T], t: &[T], eps: T) -> (T, T) {
    let (mut pg, mut sp, mut sg) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in p.iter().zip(t) {
        pg += a * b;
        sp += a;
        sg += b;
    }
    (T::of(2.0) * pg + eps, sp + sg + eps)
}

pub struct Gradients<T> {
    grads: Vec<Option<Grid<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Grid<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient as `f64`, zeros when the variable did not influence the output.
    pub fn to_f64(&self, v: Var, len: usize) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.data().iter().map(|x| x.f64()).collect(),
            None => vec![0.0; len],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut impl Rng, dims: [usize; 3], c: usize) -> Grid<f64> {
        Grid::from_vec(dims, c, (0..dims.iter().product::<usize>() * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central differences of `f` against the tape gradient of leaf `x`.
    fn check(build: impl Fn(&mut Tape<f64>, Var) -> Var, x0: Grid<f64>) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone(), true);
        let out = build(&mut tape, x);
        let g = tape.backward(out).to_f64(x, x0.len());
        let h = 1e-5;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xv = x0.clone();
                xv.data_mut()[i] += delta;
                let mut t = Tape::new();
                let xi = t.leaf(xv, true);
                let o = build(&mut t, xi);
                t.value(o).data()[0]
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(err < 1e-5, "index {i}: fd {fd} vs tape {}", g[i]);
        }
    }

    #[test]
    fn gradcheck_norm_gate_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sig: IrrepsSignature = "2x0e+1x1e+1x2e".parse().unwrap();
        let layout = Arc::new(Layout::from_signature(&sig));
        let x0 = random_grid(&mut rng, [4, 3, 2], sig.total_dim() + 2);
        let probe = Arc::new(random_grid(&mut rng, [2, 2, 1], sig.total_dim()));
        check(
            |t, x| {
                let n = t.norm(x, &Arc::new(Layout::from_signature(&sig.with_scalars(2))));
                let g = t.gate(n, &layout).unwrap();
                let p = t.maxpool(g, [2, 2, 2], &layout);
                t.weighted_sum(p, &probe).unwrap()
            },
            x0,
        );
    }

    #[test]
    fn gradcheck_conv_upsample_concat_linear_dice() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x0 = random_grid(&mut rng, [3, 3, 2], 2);
        let kernel = random_grid(&mut rng, [3 * 3 * 3 * 2 * 2, 1, 1], 1);
        let target = Arc::new(Grid::from_vec([5, 6, 4], 1, (0..120).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap());
        let geom = Arc::new(ConvGeometry::full_box([3, 3, 3]));
        check(
            |t, x| {
                let k = t.leaf(kernel.clone(), true);
                let c = t.conv(x, k, 2, &geom).unwrap();
                let b = t.leaf(Grid::flat(vec![0.1, -0.2]), true);
                let c = t.bias(c, b).unwrap();
                let cat = t.concat(c, x).unwrap();
                let u = t.upsample(cat, [2, 2, 2], [5, 6, 4]).unwrap();
                let w = t.leaf(Grid::flat(vec![0.5, -0.3, 0.8]), true);
                let b0 = t.leaf(Grid::scalar(0.05), true);
                let l = t.linear(u, w, b0, &Arc::new(vec![0, 1, 3])).unwrap();
                let p = t.sigmoid(l);
                t.soft_dice(p, &target, 1.0).unwrap()
            },
            x0,
        );
    }

    #[test]
    fn dice_values() {
        let mut t = Tape::<f64>::new();
        let g = Arc::new(Grid::from_vec([2, 1, 1], 1, vec![1.0, 1.0]).unwrap());
        let p = t.leaf(Grid::from_vec([2, 1, 1], 1, vec![1.0, 0.0]).unwrap(), false);
        let l = t.soft_dice(p, &g, 0.0).unwrap();
        assert!((t.value(l).data()[0] - 1.0 / 3.0).abs() < 1e-15);
        let q = t.leaf((*g).clone(), false);
        let l = t.soft_dice(q, &g, 1.0).unwrap();
        assert_eq!(t.value(l).data()[0], 0.0);
    }
}
