//! Soft Dice loss, Adam and the early-stopped patch training loop.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{normalize_intensity, Case};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::network::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Full-size runs use 120^3.
    pub patch_voxels: [usize; 3],
    /// Full-size runs use 1.
    pub batch_size: usize,
    /// Full-size runs use 5e-3.
    pub lr: f64,
    /// Full-size runs use 300.
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss_epsilon: f64,
    /// Probability that a training patch is centered on a lesion voxel.
    pub foreground_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_voxels: [32; 3],
            batch_size: 1,
            lr: 5e-3,
            patience_epochs: 30,
            max_epochs: 1000,
            seed: 0,
            loss_epsilon: 1.0,
            foreground_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn full() -> Self {
        TrainConfig {
            patch_voxels: [120; 3],
            patience_epochs: 300,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.patch_voxels.iter().all(|&p| p > 0)
            && self.batch_size > 0
            && self.lr > 0.0
            && self.max_epochs > 0
            && self.loss_epsilon > 0.0
            && (0.0..=1.0).contains(&self.foreground_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training configuration {self:?}")))
        }
    }
}

/// `1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)`.
pub fn soft_dice_loss(pred: &[f64], target: &[f64], epsilon: f64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let (mut inter, mut sum) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(target) {
        inter += p * g;
        sum += p + g;
    }
    Ok(1.0 - (2.0 * inter + epsilon) / (sum + epsilon))
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch("parameter and gradient lists differ".into()));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.m[i].len() || params[i].len() != self.m[i].len() {
                return Err(Error::DimensionMismatch(format!("tensor {i} has the wrong length")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("#{i}")));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, &gj) in g.iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                params[i][j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// A case after intensity normalization and zero padding up to the patch
/// size.
struct Prepared {
    image: Grid<f32>,
    mask: Grid<f32>,
    spacing: [f64; 3],
    foreground: Vec<[usize; 3]>,
}

fn pad_to(grid: &Grid<f32>, dims: [usize; 3]) -> Grid<f32> {
    let d = grid.dims();
    let mut out = Grid::zeros(dims, grid.channels());
    for c in 0..grid.channels() {
        for z in 0..d[2] {
            for y in 0..d[1] {
                let src = grid.index(c, 0, y, z);
                let dst = out.index(c, 0, y, z);
                out.data_mut()[dst..dst + d[0]].copy_from_slice(&grid.data()[src..src + d[0]]);
            }
        }
    }
    out
}

fn prepare(case: &Case, patch: [usize; 3]) -> Prepared {
    let image = normalize_intensity(&case.image).into_grid();
    let d = image.dims();
    let padded = [0, 1, 2].map(|a| d[a].max(patch[a]));
    let (image, mask) = if padded != d {
        log::warn!(
            "case {} ({d:?} voxels) is smaller than the {patch:?} patch; padding with zeros",
            case.id
        );
        (pad_to(&image, padded), pad_to(case.mask.grid(), padded))
    } else {
        (image, case.mask.grid().clone())
    };
    let mut foreground = Vec::new();
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                if mask.get(0, x, y, z) > 0.5 {
                    foreground.push([x, y, z]);
                }
            }
        }
    }
    Prepared {
        image,
        mask,
        spacing: case.spacing(),
        foreground,
    }
}

/// Patch origin: centered on a random lesion voxel with probability
/// `fg`, otherwise uniform.
fn sample_origin(rng: &mut impl Rng, p: &Prepared, patch: [usize; 3], fg: f64) -> [usize; 3] {
    let d = p.image.dims();
    if !p.foreground.is_empty() && rng.random_bool(fg) {
        let c = p.foreground[rng.random_range(0..p.foreground.len())];
        [0, 1, 2].map(|a| c[a].saturating_sub(patch[a] / 2).min(d[a] - patch[a]))
    } else {
        [0, 1, 2].map(|a| rng.random_range(0..=d[a] - patch[a]))
    }
}

pub(crate) fn extract(grid: &Grid<f32>, origin: [usize; 3], patch: [usize; 3]) -> Grid<f32> {
    let mut out = Grid::zeros(patch, grid.channels());
    for c in 0..grid.channels() {
        for z in 0..patch[2] {
            for y in 0..patch[1] {
                let src = grid.index(c, origin[0], origin[1] + y, origin[2] + z);
                let dst = out.index(c, 0, y, z);
                out.data_mut()[dst..dst + patch[0]].copy_from_slice(&grid.data()[src..src + patch[0]]);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in history {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean soft Dice loss of the model over fixed patches.
fn validation_loss(model: &Model, val: &[(Prepared, [usize; 3])], patch: [usize; 3], eps: f64) -> Result<f64> {
    let mut total = 0.0;
    for (p, origin) in val {
        let x = extract(&p.image, *origin, patch);
        let g = extract(&p.mask, *origin, patch);
        let logits = model.forward::<f32>(&x, p.spacing)?;
        let prob: Vec<f64> = logits.data().iter().map(|&l| 1.0 / (1.0 + (-(l as f64)).exp())).collect();
        let target: Vec<f64> = g.data().iter().map(|&v| v as f64).collect();
        total += soft_dice_loss(&prob, &target, eps)?;
    }
    Ok(total / val.len() as f64)
}

/// Trains in place. Each epoch draws one patch per training case in a
/// shuffled order; the weights with the lowest validation loss are
/// restored at the end.
pub fn train(config: &TrainConfig, model: &mut Model, train_cases: &[Case], val_cases: &[Case]) -> Result<TrainOutcome> {
    config.validate()?;
    if train_cases.is_empty() || val_cases.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one training and one validation case".into()));
    }
    let patch = config.patch_voxels;
    let train: Vec<Prepared> = train_cases.iter().map(|c| prepare(c, patch)).collect();
    let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed);
    val_rng.set_stream(1);
    let val: Vec<(Prepared, [usize; 3])> = val_cases
        .iter()
        .map(|c| {
            let p = prepare(c, patch);
            let o = sample_origin(&mut val_rng, &p, patch, config.foreground_fraction);
            (p, o)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let names = model.parameter_names();
    let sizes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(&sizes);

    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.parameters_owned());
    let mut wait = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            for &i in batch {
                let p = &train[i];
                let origin = sample_origin(&mut rng, p, patch, config.foreground_fraction);
                let x = extract(&p.image, origin, patch);
                let g = Arc::new(extract(&p.mask, origin, patch));
                let (loss, grads) = model.loss_and_gradient::<f32>(&x, &g, p.spacing, config.loss_epsilon)?;
                epoch_loss += loss;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.iter_mut().zip(g).for_each(|(a, g)| *a += g / batch.len() as f64);
                }
            }
            if let Some(t) = acc.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteGradient(format!("{} (epoch {epoch})", names[t])));
            }
            adam.step(&mut model.parameters_mut(), &acc, config.lr)?;
            model.round_to_f32();
        }
        let val_loss = validation_loss(model, &val, patch, config.loss_epsilon)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
            lr: config.lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} ({:.1} s)",
            record.train_loss,
            val_loss,
            record.seconds
        );
        history.push(record);
        if val_loss < best.0 {
            best = (val_loss, epoch, model.parameters_owned());
            wait = 0;
        } else {
            wait += 1;
            if wait > config.patience_epochs {
                log::info!("early stop after epoch {epoch}; best epoch {}", best.1);
                break;
            }
        }
    }
    model.set_parameters(&best.2)?;
    Ok(TrainOutcome {
        history,
        best_epoch: best.1,
        best_val_loss: best.0,
    })
}

/// Writes the history as a plain table to any writer.
pub fn print_history(mut w: impl Write, history: &[EpochRecord]) -> std::io::Result<()> {
    for r in history {
        writeln!(w, "{:>5} {:>9.5} {:>9.5} {:>7.1}s", r.epoch, r.train_loss, r.val_loss, r.seconds)?;
    }
    Ok(())
}
