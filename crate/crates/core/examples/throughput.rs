//! Forward and gradient timings for both model kinds.
//! Optional args: patch edge (24), base signature, depth (2).

use std::sync::Arc;
use std::time::Instant;

use resadapt::network::{Model, ModelKind, UNetConfig};
use resadapt::Grid;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map_or(24, |s| s.parse().unwrap());
    let sig = args.get(2).cloned().unwrap_or("4x0e+2x1e+1x2e".into());
    let depth: usize = args.get(3).map_or(2, |s| s.parse().unwrap());
    for kind in [ModelKind::Resadaptive, ModelKind::Baseline] {
        let mut cfg = UNetConfig::desk(kind);
        cfg.base_signature = sig.parse().unwrap();
        cfg.base_channels = cfg.base_signature.total_dim();
        cfg.depth = depth;
        let m = Model::new(cfg, 0).unwrap();
        let patch = Grid::<f32>::filled([n, n, n], 1, 0.5);
        let target = Arc::new(Grid::<f32>::filled([n, n, n], 1, 0.0));
        for spacing in [[1.0, 1.0, 1.0], [0.5, 0.5, 1.0]] {
            m.loss_and_gradient(&patch, &target, spacing, 1.0).unwrap();
            let t = Instant::now();
            for _ in 0..3 {
                m.loss_and_gradient(&patch, &target, spacing, 1.0).unwrap();
            }
            println!("{kind:?} {spacing:?} params {} step {:.3}s", m.num_parameters(), t.elapsed().as_secs_f64() / 3.0);
        }
    }
}
