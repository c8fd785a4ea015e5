use proptest::prelude::*;

use resadapt::{kernel_extent, GridSymmetry, KernelBasis};

mod support;
use support::{kernel_equivariance_error as equivariance_error, mixed_spec as spec};

#[test]
fn realized_kernels_commute_with_all_cube_rotations() {
    let s = spec(1);
    let k = s.realize([1.0; 3]).unwrap();
    assert_eq!(k.extent, [5, 5, 5]);
    let rots = GridSymmetry::proper_rotations();
    assert_eq!(rots.len(), 24);
    for g in &rots {
        let err = equivariance_error(&k, &s, g);
        assert!(err <= 1e-5, "{g:?}: {err}");
    }
}

#[test]
fn anisotropic_kernels_commute_with_in_plane_rotations() {
    let s = spec(2);
    let k = s.realize([0.5, 0.5, 1.0]).unwrap();
    assert_eq!(k.extent, [11, 11, 5]);
    let rots = GridSymmetry::in_plane_rotations();
    assert_eq!(rots.len(), 8);
    for g in &rots {
        let err = equivariance_error(&k, &s, g);
        assert!(err <= 1e-5, "{g:?}: {err}");
    }
}

#[test]
fn coincident_offsets_agree_bitwise() {
    let s = spec(3);
    let coarse = s.realize([1.0; 3]).unwrap();
    let fine = s.realize([0.5; 3]).unwrap();
    assert_eq!(fine.extent, [11, 11, 11]);
    let mut compared = 0;
    for z in 0..5 {
        for y in 0..5 {
            for x in 0..5 {
                let (fx, fy, fz) = (2 * x + 1, 2 * y + 1, 2 * z + 1);
                assert_eq!(coarse.offset_mm(x, y, z), fine.offset_mm(fx, fy, fz));
                for o in 0..coarse.dim_out {
                    for i in 0..coarse.dim_in {
                        assert_eq!(coarse.get(o, i, x, y, z).to_bits(), fine.get(o, i, fx, fy, fz).to_bits());
                        compared += 1;
                    }
                }
            }
        }
    }
    assert_eq!(compared, 125 * coarse.dim_out * coarse.dim_in);
}

#[test]
fn weight_count_is_independent_of_spacing() {
    let s = spec(4);
    let a = KernelBasis::new(&s, [1.0; 3]).unwrap();
    let b = KernelBasis::new(&s, [0.5, 0.5, 3.0]).unwrap();
    assert_eq!(a.num_weights(), s.num_weights());
    assert_eq!(b.num_weights(), s.num_weights());
    assert_eq!(b.geometry().extent, [11, 11, 1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn support_and_extent(sx in 0.3f64..3.0, sy in 0.3f64..3.0, sz in 0.3f64..3.0, seed in 0u64..1000) {
        let s = spec(seed);
        let sp = [sx, sy, sz];
        let k = s.realize(sp).unwrap();
        prop_assert_eq!(k.extent, kernel_extent(5.0, sp));
        for z in 0..k.extent[2] {
            for y in 0..k.extent[1] {
                for x in 0..k.extent[0] {
                    let r = k.offset_mm(x, y, z).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if r >= 2.5 {
                        for o in 0..k.dim_out {
                            for i in 0..k.dim_in {
                                prop_assert_eq!(k.get(o, i, x, y, z), 0.0);
                            }
                        }
                    }
                }
            }
        }
    }
}
