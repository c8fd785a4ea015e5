use resadapt::network::{Model, ModelKind, UNetConfig};
use resadapt::GridSymmetry;

mod support;
use support::{network_error, random_grid};

#[test]
fn network_is_equivariant_to_cube_rotations() {
    let model = Model::new(UNetConfig::desk(ModelKind::Resadaptive), 5).unwrap();
    let x = random_grid(1, [16; 3]);
    for g in GridSymmetry::proper_rotations() {
        let err = network_error(&model, &x, [1.0; 3], &g, 1);
        assert!(err <= 1e-4, "{g:?}: {err}");
    }
    assert_eq!(model.num_instances(), 1);
}

#[test]
fn anisotropic_network_is_equivariant_in_plane() {
    let model = Model::new(UNetConfig::desk(ModelKind::Resadaptive), 6).unwrap();
    let x = random_grid(2, [16, 16, 8]);
    for g in GridSymmetry::in_plane_rotations() {
        let err = network_error(&model, &x, [0.5, 0.5, 1.0], &g, 1);
        assert!(err <= 1e-4, "{g:?}: {err}");
    }
}

#[test]
fn one_weight_store_serves_every_spacing() {
    let model = Model::new(UNetConfig::desk(ModelKind::Resadaptive), 7).unwrap();
    let before = model.parameters_owned();
    let a = model.instance([1.0; 3]).unwrap();
    let b = model.instance([0.5, 0.5, 3.0]).unwrap();
    assert_eq!(a.kernel_extents()[0], [5, 5, 5]);
    assert_eq!(b.kernel_extents()[0], [11, 11, 1]);
    model.forward(&random_grid(3, [8, 8, 8]), [1.0; 3]).unwrap();
    model.forward(&random_grid(3, [16, 16, 4]), [0.5, 0.5, 3.0]).unwrap();
    assert_eq!(model.parameters_owned(), before);
    assert_eq!(model.num_instances(), 2);
    // fetching again hits the cache
    model.instance([1.0; 3]).unwrap();
    assert_eq!(model.num_instances(), 2);
}

fn gradcheck(kind: ModelKind) {
    let (worst, unresolved) = support::gradcheck(kind, 1e-5);
    assert!(worst <= 1e-4, "{kind:?}: max relative error {worst:e} ({unresolved} entries below the roundoff floor)");
}

#[test]
fn resadaptive_gradient_matches_finite_differences() {
    gradcheck(ModelKind::Resadaptive);
}

#[test]
fn baseline_gradient_matches_finite_differences() {
    gradcheck(ModelKind::Baseline);
}
