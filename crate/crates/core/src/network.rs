//! The resolution-adaptive U-Net and the voxel baseline U-Net.
//!
//! A [`Model`] owns the configuration and every learnable tensor. Running it
//! on a grid needs a [`NetworkInstance`]: the pooling plan and per-layer
//! kernel sampling for one voxel spacing. Instances hold no weights, so any
//! number of them share the model's single weight store.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Layout, Tape, Var};
use crate::conv::ConvGeometry;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::harmonics::IrrepsSignature;
use crate::kernels::{KernelBasis, PhysicalKernelSpec, RADIAL_FAMILY};
use crate::pooling::PoolPlan;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Resadaptive,
    Baseline,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resadaptive" => Ok(ModelKind::Resadaptive),
            "baseline" => Ok(ModelKind::Baseline),
            _ => Err(Error::InvalidArgument(format!("unknown model kind '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub kind: ModelKind,
    /// Number of pooling steps.
    pub depth: usize,
    pub base_signature: IrrepsSignature,
    pub base_channels: usize,
    /// Level-0 kernel diameter; doubles per level.
    pub kernel_width_mm: f64,
    pub kernel_voxels: usize,
    /// Level-0 pooling width; doubles per level.
    pub pool_width0_mm: f64,
    pub convs_per_level: usize,
    pub num_basis: usize,
    pub filter_degrees: Vec<usize>,
    pub in_channels: usize,
    #[serde(default)]
    pub renormalize: bool,
}

impl UNetConfig {
    /// The full-size resolution-adaptive network.
    pub fn full_resadaptive() -> Self {
        UNetConfig {
            kind: ModelKind::Resadaptive,
            depth: 3,
            base_signature: "8x0e+4x1e+2x2e".parse().expect("valid signature"),
            base_channels: 30,
            kernel_width_mm: 5.0,
            kernel_voxels: 5,
            pool_width0_mm: 2.0,
            convs_per_level: 2,
            num_basis: 5,
            filter_degrees: vec![0, 1, 2],
            in_channels: 1,
            renormalize: false,
        }
    }

    /// The full-size voxel baseline.
    pub fn full_baseline() -> Self {
        UNetConfig {
            kind: ModelKind::Baseline,
            ..Self::full_resadaptive()
        }
    }

    /// Reduced widths and depth for single-core desk runs.
    pub fn desk(kind: ModelKind) -> Self {
        UNetConfig {
            kind,
            depth: 2,
            base_signature: "4x0e+2x1e+1x2e".parse().expect("valid signature"),
            base_channels: 15,
            ..Self::full_resadaptive()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.convs_per_level == 0 || self.in_channels == 0 {
            return bad("convs_per_level and in_channels must be positive");
        }
        match self.kind {
            ModelKind::Resadaptive => {
                if !(self.kernel_width_mm > 0.0) || !(self.pool_width0_mm > 0.0) || self.num_basis == 0 {
                    return bad("kernel width, pool width and num_basis must be positive");
                }
                if self.base_signature.scalar_channels().is_empty() {
                    return bad("base signature needs at least one scalar channel for the output head");
                }
            }
            ModelKind::Baseline => {
                if self.kernel_voxels % 2 == 0 || self.base_channels == 0 {
                    return bad("baseline needs an odd kernel size and positive channel count");
                }
            }
        }
        Ok(())
    }

    /// Feature signature at level `k` (multiplicities scaled by `2^k`).
    pub fn level_signature(&self, k: usize) -> IrrepsSignature {
        match self.kind {
            ModelKind::Resadaptive => self.base_signature.scaled(1 << k),
            ModelKind::Baseline => IrrepsSignature::scalars(self.base_channels << k),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Equivariant {
        level: usize,
        spec: PhysicalKernelSpec,
        /// Output signature after gating (the spec's output carries the
        /// extra gate scalars).
        out: IrrepsSignature,
    },
    Voxel {
        level: usize,
        size: usize,
        c_in: usize,
        c_out: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Head {
        channels: Vec<usize>,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
}

impl Layer {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Layer::Equivariant { spec, .. } => vec![spec.weights()],
            Layer::Voxel { weights, bias, .. } | Layer::Head { weights, bias, .. } => vec![weights, bias],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Equivariant { spec, .. } => vec![spec.weights_mut()],
            Layer::Voxel { weights, bias, .. } | Layer::Head { weights, bias, .. } => vec![weights, bias],
        }
    }
}

/// Per-spacing realization of a model's topology.
#[derive(Debug)]
pub struct NetworkInstance {
    kind: ModelKind,
    realized_for: Option<[f64; 3]>,
    plan: PoolPlan,
    bases: Vec<Option<Arc<KernelBasis>>>,
    geoms: Vec<Option<Arc<ConvGeometry>>>,
    gate_layouts: Vec<Arc<Layout>>,
    norm_layouts: Vec<Arc<Layout>>,
    pool_layouts: Vec<Arc<Layout>>,
    head_channels: Arc<Vec<usize>>,
}

impl NetworkInstance {
    /// `None` for the voxel baseline, which is the same at every spacing.
    pub fn realized_for(&self) -> Option<[f64; 3]> {
        self.realized_for
    }

    pub fn plan(&self) -> &PoolPlan {
        &self.plan
    }

    /// Voxel extent of each conv layer's kernel, in layer order.
    pub fn kernel_extents(&self) -> Vec<[usize; 3]> {
        self.geoms.iter().flatten().map(|g| g.extent).collect()
    }

    pub fn basis(&self, layer: usize) -> Option<&Arc<KernelBasis>> {
        self.bases.get(layer).and_then(|b| b.as_ref())
    }

    fn check_spacing(&self, spacing: [f64; 3]) -> Result<()> {
        if let Some(s) = self.realized_for {
            if !same_spacing(s, spacing) {
                return Err(Error::NetworkSpacingMismatch {
                    instance: s,
                    patch: spacing,
                });
            }
        }
        Ok(())
    }
}

fn same_spacing(a: [f64; 3], b: [f64; 3]) -> bool {
    a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()))
}

fn spacing_key(s: [f64; 3]) -> [u64; 3] {
    s.map(f64::to_bits)
}

#[derive(Debug)]
pub struct Model {
    config: UNetConfig,
    layers: Vec<Layer>,
    instances: Mutex<HashMap<Option<[u64; 3]>, Arc<NetworkInstance>>>,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            layers: self.layers.clone(),
            instances: Mutex::new(self.instances.lock().expect("instance cache").clone()),
        }
    }
}

impl Model {
    /// Builds the layer list with random initial weights.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let cfg = &config;
        let conv = |level: usize, sig_in: &IrrepsSignature, sig_out: &IrrepsSignature, rng: &mut ChaCha8Rng| -> Result<Layer> {
            Ok(match cfg.kind {
                ModelKind::Resadaptive => {
                    let width = cfg.kernel_width_mm * (1 << level) as f64;
                    let with_gates = sig_out.with_scalars(sig_out.num_nonscalar_copies());
                    let mut spec = PhysicalKernelSpec::new(width, cfg.num_basis, sig_in.clone(), with_gates, &cfg.filter_degrees)?;
                    spec.renormalize = cfg.renormalize;
                    spec.init_random(rng);
                    Layer::Equivariant {
                        level,
                        spec,
                        out: sig_out.clone(),
                    }
                }
                ModelKind::Baseline => {
                    let (c_in, c_out, k) = (sig_in.total_dim(), sig_out.total_dim(), cfg.kernel_voxels);
                    let std = 1.0 / ((k * k * k * c_in) as f64).sqrt();
                    let weights = (0..k * k * k * c_in * c_out)
                        .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
                        .collect();
                    Layer::Voxel {
                        level,
                        size: k,
                        c_in,
                        c_out,
                        weights,
                        bias: vec![0.0; c_out],
                    }
                }
            })
        };
        let input_sig = IrrepsSignature::scalars(config.in_channels);
        let mut cur = input_sig;
        for k in 0..=config.depth {
            let sig = config.level_signature(k);
            for _ in 0..config.convs_per_level {
                layers.push(conv(k, &cur, &sig, &mut rng)?);
                cur = sig.clone();
            }
        }
        for k in (0..config.depth).rev() {
            let sig = config.level_signature(k);
            cur = sig.concat(&cur);
            for _ in 0..config.convs_per_level {
                layers.push(conv(k, &cur, &sig, &mut rng)?);
                cur = sig.clone();
            }
        }
        let channels = cur.scalar_channels();
        let std = 1.0 / (channels.len() as f64).sqrt();
        let weights = channels.iter().map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect();
        layers.push(Layer::Head {
            channels,
            weights,
            bias: vec![0.0],
        });
        let mut model = Model {
            config,
            layers,
            instances: Mutex::new(HashMap::new()),
        };
        model.round_to_f32();
        Ok(model)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Learnable tensors in manifest order.
    pub fn parameters(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::tensors).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::tensors_mut).collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Equivariant { .. } => out.push(format!("layer{i}.weights")),
                Layer::Voxel { .. } | Layer::Head { .. } => {
                    out.push(format!("layer{i}.weights"));
                    out.push(format!("layer{i}.bias"));
                }
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn set_parameters(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let mut dst = self.parameters_mut();
        if dst.len() != values.len() || dst.iter().zip(values).any(|(d, v)| d.len() != v.len()) {
            return Err(Error::DimensionMismatch("parameter tensor shapes differ".into()));
        }
        for (d, v) in dst.iter_mut().zip(values) {
            d.copy_from_slice(v);
        }
        Ok(())
    }

    pub fn parameters_owned(&self) -> Vec<Vec<f64>> {
        self.parameters().iter().map(|p| p.to_vec()).collect()
    }

    /// Rounds every weight to the nearest `f32` so the model file round
    /// trip is exact.
    pub fn round_to_f32(&mut self) {
        for p in self.parameters_mut() {
            p.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Number of distinct instances realized so far.
    pub fn num_instances(&self) -> usize {
        self.instances.lock().expect("instance cache").len()
    }

    /// Fetches or builds the instance for a spacing.
    pub fn instance(&self, spacing_mm: [f64; 3]) -> Result<Arc<NetworkInstance>> {
        let key = match self.config.kind {
            ModelKind::Resadaptive => Some(spacing_key(spacing_mm)),
            ModelKind::Baseline => None,
        };
        if let Some(inst) = self.instances.lock().expect("instance cache").get(&key) {
            return Ok(inst.clone());
        }
        let inst = Arc::new(self.build(spacing_mm)?);
        self.instances
            .lock()
            .expect("instance cache")
            .insert(key, inst.clone());
        Ok(inst)
    }

    /// Realizes the topology at one spacing, uncached.
    pub fn build(&self, spacing_mm: [f64; 3]) -> Result<NetworkInstance> {
        if spacing_mm.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing_mm:?}")));
        }
        let cfg = &self.config;
        let (plan, realized_for) = match cfg.kind {
            ModelKind::Resadaptive => (PoolPlan::new(cfg.pool_width0_mm, spacing_mm, cfg.depth), Some(spacing_mm)),
            ModelKind::Baseline => (PoolPlan::uniform(2, [1.0; 3], cfg.depth), None),
        };
        let spacings = plan.level_spacings();
        let mut bases = Vec::new();
        let mut geoms = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Equivariant { level, spec, .. } => {
                    let basis = Arc::new(KernelBasis::new(spec, spacings[*level])?);
                    if *level == 0 && basis.geometry().extent == [1, 1, 1] {
                        log::warn!("kernel of width {} mm degenerates to a single voxel at spacing {spacing_mm:?}", spec.width_mm());
                    }
                    geoms.push(Some(basis.geometry().clone()));
                    bases.push(Some(basis));
                }
                Layer::Voxel { size, .. } => {
                    geoms.push(Some(Arc::new(ConvGeometry::full_box([*size; 3]))));
                    bases.push(None);
                }
                Layer::Head { .. } => {
                    geoms.push(None);
                    bases.push(None);
                }
            }
        }
        let layout = |sig: &IrrepsSignature| Arc::new(Layout::from_signature(sig));
        let mut gate_layouts = Vec::new();
        let mut norm_layouts = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Equivariant { spec, out, .. } => {
                    gate_layouts.push(layout(out));
                    norm_layouts.push(layout(spec.sig_out()));
                }
                Layer::Voxel { c_out, .. } => {
                    let l = layout(&IrrepsSignature::scalars(*c_out));
                    gate_layouts.push(l.clone());
                    norm_layouts.push(l);
                }
                Layer::Head { .. } => {}
            }
        }
        let pool_layouts = (0..cfg.depth).map(|k| layout(&cfg.level_signature(k))).collect();
        let head_channels = match self.layers.last() {
            Some(Layer::Head { channels, .. }) => Arc::new(channels.clone()),
            _ => unreachable!("model always ends with a head"),
        };
        Ok(NetworkInstance {
            kind: cfg.kind,
            realized_for,
            plan,
            bases,
            geoms,
            gate_layouts,
            norm_layouts,
            pool_layouts,
            head_channels,
        })
    }

    /// Records the forward pass on `tape`; returns the logit node and the
    /// parameter leaves (manifest order).
    pub fn forward_tape<T: Real>(
        &self,
        inst: &NetworkInstance,
        tape: &mut Tape<T>,
        input: Var,
        spacing_mm: [f64; 3],
    ) -> Result<(Var, Vec<Var>)> {
        inst.check_spacing(spacing_mm)?;
        if inst.kind != self.config.kind {
            return Err(Error::InvalidArgument("instance built for a different model kind".into()));
        }
        let c_in = tape.value(input).channels();
        if c_in != self.config.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} input channels, patch has {c_in}",
                self.config.in_channels
            )));
        }
        let params: Vec<Var> = self.parameters().into_iter().map(|p| tape.param(p)).collect();
        let mut pi = 0;
        let mut li = 0;
        let block = |tape: &mut Tape<T>, x: Var, li: &mut usize, pi: &mut usize| -> Result<Var> {
            let layer = &self.layers[*li];
            let geom = inst.geoms[*li].as_ref().expect("conv layer geometry");
            let y = match layer {
                Layer::Equivariant { spec, .. } => {
                    let basis = inst.bases[*li].as_ref().expect("equivariant basis");
                    let k = tape.realize(basis, params[*pi]);
                    *pi += 1;
                    tape.conv(x, k, spec.sig_out().total_dim(), geom)?
                }
                Layer::Voxel { c_out, .. } => {
                    let c = tape.conv(x, params[*pi], *c_out, geom)?;
                    let b = tape.bias(c, params[*pi + 1])?;
                    *pi += 2;
                    b
                }
                Layer::Head { .. } => unreachable!("head is not a conv block"),
            };
            let n = tape.norm(y, &inst.norm_layouts[*li]);
            let g = tape.gate(n, &inst.gate_layouts[*li])?;
            *li += 1;
            Ok(g)
        };

        let cfg = &self.config;
        let mut x = input;
        let mut skips = Vec::new();
        for k in 0..=cfg.depth {
            for _ in 0..cfg.convs_per_level {
                x = block(tape, x, &mut li, &mut pi)?;
            }
            if k < cfg.depth {
                skips.push(x);
                x = tape.maxpool(x, inst.plan.levels[k].factors, &inst.pool_layouts[k]);
            }
        }
        for k in (0..cfg.depth).rev() {
            let skip = skips[k];
            let dims = tape.value(skip).dims();
            let up = tape.upsample(x, inst.plan.levels[k].factors, dims)?;
            x = tape.concat(skip, up)?;
            for _ in 0..cfg.convs_per_level {
                x = block(tape, x, &mut li, &mut pi)?;
            }
        }
        let logits = tape.linear(x, params[pi], params[pi + 1], &inst.head_channels)?;
        Ok((logits, params))
    }

    /// Logits for a patch at the given spacing (instance fetched from the
    /// cache).
    pub fn forward<T: Real>(&self, patch: &Grid<T>, spacing_mm: [f64; 3]) -> Result<Grid<T>> {
        let inst = self.instance(spacing_mm)?;
        self.forward_with(&inst, patch, spacing_mm)
    }

    pub fn forward_with<T: Real>(&self, inst: &NetworkInstance, patch: &Grid<T>, spacing_mm: [f64; 3]) -> Result<Grid<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(patch.clone(), false);
        let (y, _) = self.forward_tape(inst, &mut tape, x, spacing_mm)?;
        Ok(tape.value(y).clone())
    }

    /// Soft Dice loss of `sigmoid(logits)` against `target` and its gradient
    /// for every parameter tensor.
    pub fn loss_and_gradient<T: Real>(
        &self,
        patch: &Grid<T>,
        target: &Arc<Grid<T>>,
        spacing_mm: [f64; 3],
        dice_epsilon: f64,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let inst = self.instance(spacing_mm)?;
        let mut tape = Tape::new();
        let x = tape.leaf(patch.clone(), false);
        let (logits, params) = self.forward_tape(&inst, &mut tape, x, spacing_mm)?;
        let p = tape.sigmoid(logits);
        let loss = tape.soft_dice(p, target, T::of(dice_epsilon))?;
        let grads = tape.backward(loss);
        let sizes: Vec<usize> = self.parameters().iter().map(|p| p.len()).collect();
        let g = params.iter().zip(sizes).map(|(&v, n)| grads.to_f64(v, n)).collect();
        Ok((tape.value(loss).data()[0].f64(), g))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Intensity normalization applied to every input volume.
    pub intensity: String,
    /// Spacing inputs are resampled to before prediction, if any.
    pub resample_to: Option<[f64; 3]>,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing {
            intensity: "zscore-nonzero".into(),
            resample_to: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub config: UNetConfig,
    pub radial_family: String,
    pub signatures: Vec<String>,
    pub preprocessing: Preprocessing,
    /// Order and length of the little-endian `f32` tensors that follow.
    pub tensors: Vec<TensorEntry>,
}

pub const MODEL_MAGIC: &[u8; 8] = b"RMODEL01";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Writes `RMODEL01`, a little-endian `u32` manifest length, the JSON
/// manifest and then every tensor as little-endian `f32`.
pub fn save_model(path: &Path, model: &Model, preprocessing: &Preprocessing) -> Result<()> {
    let manifest = ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        config: model.config.clone(),
        radial_family: RADIAL_FAMILY.into(),
        signatures: (0..=model.config.depth)
            .map(|k| model.config.level_signature(k).to_string())
            .collect(),
        preprocessing: preprocessing.clone(),
        tensors: model
            .parameter_names()
            .into_iter()
            .zip(model.parameters())
            .map(|(name, p)| TensorEntry { name, len: p.len() })
            .collect(),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |b: &[u8]| w.write_all(b).map_err(|e| Error::io(path, e));
    put(MODEL_MAGIC)?;
    put(&(json.len() as u32).to_le_bytes())?;
    put(&json)?;
    for p in model.parameters() {
        for v in p {
            put(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(Model, ModelManifest)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != MODEL_MAGIC {
        return Err(Error::format(path, "magic", "not a model file"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes
        .get(12..12 + n)
        .ok_or_else(|| Error::format(path, "manifest", "truncated"))?;
    let manifest: ModelManifest = serde_json::from_slice(body)?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::format(
            path,
            "format_version",
            format!("unsupported version {}", manifest.format_version),
        ));
    }
    if manifest.radial_family != RADIAL_FAMILY {
        return Err(Error::format(
            path,
            "radial_family",
            format!("unknown radial basis '{}'", manifest.radial_family),
        ));
    }
    let mut model = Model::new(manifest.config.clone(), 0)?;
    let sizes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let declared: Vec<usize> = manifest.tensors.iter().map(|t| t.len).collect();
    if sizes != declared {
        return Err(Error::format(path, "tensors", "tensor list does not match the configuration"));
    }
    let blob = &bytes[12 + n..];
    let total: usize = sizes.iter().sum();
    if blob.len() != 4 * total {
        return Err(Error::format(
            path,
            "weights",
            format!("expected {} bytes, found {}", 4 * total, blob.len()),
        ));
    }
    let mut values = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for p in model.parameters_mut() {
        for v in p.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ModelKind) -> UNetConfig {
        UNetConfig {
            depth: 1,
            base_signature: "2x0e+1x1e+1x2e".parse().unwrap(),
            base_channels: 3,
            kernel_voxels: 3,
            convs_per_level: 1,
            num_basis: 3,
            ..UNetConfig::desk(kind)
        }
    }

    #[test]
    fn full_signature_has_dimension_30() {
        let c = UNetConfig::full_resadaptive();
        assert_eq!(c.base_signature.total_dim(), 30);
        assert_eq!(c.level_signature(2).to_string(), "32x0e+16x1e+8x2e");
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let m = Model::new(tiny(ModelKind::Resadaptive), 1).unwrap();
        let patch = Grid::<f64>::filled([6, 5, 4], 1, 0.3);
        let a = m.forward(&patch, [1.0, 1.0, 1.5]).unwrap();
        let b = m.forward(&patch, [1.0, 1.0, 1.5]).unwrap();
        assert_eq!(a.dims(), [6, 5, 4]);
        assert_eq!(a.channels(), 1);
        assert_eq!(a, b);
        let inst = m.instance([1.0, 1.0, 1.5]).unwrap();
        let err = m.forward_with(&inst, &patch, [1.0, 1.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("network realized for different spacing; call build for this spacing"));
    }

    #[test]
    fn baseline_parameter_count_closed_form() {
        let m = Model::new(tiny(ModelKind::Baseline), 2).unwrap();
        // enc 1->3, bottom 3->6, dec 9->3, head 3->1 (k = 1)
        let layer = |ci: usize, co: usize, k: usize| k * k * k * ci * co + co;
        let expect = layer(1, 3, 3) + layer(3, 6, 3) + layer(9, 3, 3) + layer(3, 1, 1);
        assert_eq!(m.num_parameters(), expect);
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = Model::new(tiny(ModelKind::Resadaptive), 3).unwrap();
        save_model(&path, &m, &Preprocessing::default()).unwrap();
        let (back, manifest) = load_model(&path).unwrap();
        assert_eq!(back.parameters(), m.parameters());
        assert_eq!(manifest.radial_family, RADIAL_FAMILY);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        std::fs::write(&path, bytes).unwrap();
        assert!(load_model(&path).is_err());
    }
}
