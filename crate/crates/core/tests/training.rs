use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resadapt::data::{Case, Volume};
use resadapt::network::{Model, ModelKind, UNetConfig};
use resadapt::training::{train, Adam, TrainConfig};
use resadapt::Grid;

/// Textbook Adam on one scalar.
fn scalar_adam(mut w: f64, grad: impl Fn(f64) -> f64, lr: f64, steps: usize) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v) = (0.0, 0.0);
    for t in 1..=steps {
        let g = grad(w);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        w -= lr * mh / (vh.sqrt() + eps);
    }
    w
}

#[test]
fn adam_matches_the_scalar_recurrence() {
    let mut w = vec![1.5, -0.25, 3.0];
    let start = w.clone();
    let mut adam = Adam::new(&[3]);
    for _ in 0..10 {
        let g: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        adam.step(&mut [&mut w[..]], &[g], 0.05).unwrap();
    }
    assert_eq!(adam.steps(), 10);
    for (a, s) in w.iter().zip(start) {
        assert_eq!(a.to_bits(), scalar_adam(s, |x| 2.0 * x, 0.05, 10).to_bits());
    }
}

#[test]
fn adam_step_size_is_bounded_by_the_rate() {
    // with a constant gradient every step moves by almost exactly lr
    let mut w = vec![0.0; 4];
    let mut adam = Adam::new(&[4]);
    let g = vec![vec![1e-3, -5.0, 7e4, 1.0]];
    for k in 1..=20 {
        adam.step(&mut [&mut w[..]], &g, 0.01).unwrap();
        for (x, gi) in w.iter().zip(&g[0]) {
            assert!((x + gi.signum() * 0.01 * k as f64).abs() < 1e-6 * k as f64);
        }
    }
}

fn tiny_config() -> UNetConfig {
    UNetConfig {
        depth: 1,
        base_signature: "2x0e+1x1e".parse().unwrap(),
        base_channels: 4,
        ..UNetConfig::desk(ModelKind::Resadaptive)
    }
}

/// Noise volume whose mask is the bright voxels.
fn threshold_case(seed: u64, dims: [usize; 3], spacing: [f64; 3]) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    let img: Vec<f32> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let mask: Vec<f32> = img.iter().map(|&v| (v > 0.6) as u8 as f32).collect();
    let vol = |d| Volume::new(Grid::from_vec(dims, 1, d).unwrap(), spacing, [0.0; 3]).unwrap();
    Case::new(format!("c{seed}"), vol(img), vol(mask)).unwrap()
}

fn small_train(patience: usize, max_epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        patch_voxels: [8; 3],
        patience_epochs: patience,
        max_epochs,
        lr,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_patience_stops_after_first_regression() {
    let tr: Vec<Case> = (0..2).map(|i| threshold_case(i, [8; 3], [1.0; 3])).collect();
    let va = vec![threshold_case(9, [8; 3], [1.0; 3])];
    // a negligible rate keeps the validation loss flat, so the second epoch
    // cannot improve on the first
    let mut model = Model::new(tiny_config(), 1).unwrap();
    let out = train(&small_train(0, 50, 1e-300), &mut model, &tr, &va).unwrap();
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn training_is_deterministic() {
    let tr: Vec<Case> = (0..2).map(|i| threshold_case(i, [8; 3], [1.0; 3])).collect();
    let va = vec![threshold_case(9, [8; 3], [1.0; 3])];
    let run = || {
        let mut model = Model::new(tiny_config(), 2).unwrap();
        let out = train(&small_train(5, 3, 5e-3), &mut model, &tr, &va).unwrap();
        let losses: Vec<(u64, u64)> = out.history.iter().map(|r| (r.train_loss.to_bits(), r.val_loss.to_bits())).collect();
        (losses, model.parameters_owned())
    };
    assert_eq!(run(), run());
}

#[test]
fn learns_a_pointwise_threshold() {
    let tr: Vec<Case> = (0..4).map(|i| threshold_case(i, [8; 3], [1.0; 3])).collect();
    let va = vec![threshold_case(9, [8; 3], [1.0; 3])];
    let mut model = Model::new(tiny_config(), 3).unwrap();
    let out = train(&small_train(200, 200, 2e-2), &mut model, &tr, &va).unwrap();
    assert!(out.best_val_loss < 0.1, "best val loss {}", out.best_val_loss);
}

#[test]
fn mixed_spacings_build_one_instance_each() {
    let tr = vec![threshold_case(0, [8; 3], [1.0; 3]), threshold_case(1, [16, 16, 8], [0.5, 0.5, 1.0])];
    let va = vec![threshold_case(2, [8; 3], [1.0; 3])];
    let mut model = Model::new(tiny_config(), 4).unwrap();
    train(&small_train(1, 1, 5e-3), &mut model, &tr, &va).unwrap();
    assert_eq!(model.num_instances(), 2);
}
