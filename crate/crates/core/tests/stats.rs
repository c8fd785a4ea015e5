use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resadapt::data::Volume;
use resadapt::eval::{bonferroni, dice, wilcoxon_signed_rank, WilcoxonMode};
use resadapt::Grid;

mod support;
use support::enumeration_p;

#[test]
fn exact_wilcoxon_matches_enumeration() {
    let mut checked = 0;
    for (trial, (x, y)) in support::wilcoxon_trials(17, 100).into_iter().enumerate() {
        let r = wilcoxon_signed_rank(&x, &y, WilcoxonMode::Exact).unwrap();
        match enumeration_p(&x, &y) {
            Some(p) => {
                assert!((r.p_value - p).abs() < 1e-12, "trial {trial}: {} vs {p}", r.p_value);
                checked += 1;
            }
            None => assert!(r.degenerate && r.p_value == 1.0),
        }
    }
    assert!(checked >= 90);
}

#[test]
fn normal_approximation_is_close_at_twenty() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..30 {
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let shift = rng.random_range(0.0..0.3);
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0) - shift).collect();
        let e = wilcoxon_signed_rank(&x, &y, WilcoxonMode::Exact).unwrap();
        let a = wilcoxon_signed_rank(&x, &y, WilcoxonMode::Approx).unwrap();
        assert_eq!(e.statistic, a.statistic);
        assert!((e.p_value - a.p_value).abs() < 0.02, "{} vs {}", e.p_value, a.p_value);
    }
}

#[test]
fn five_positive_differences() {
    let r = wilcoxon_signed_rank(&[0.9, 0.8, 0.7, 0.95, 0.85], &[0.1, 0.2, 0.3, 0.4, 0.5], WilcoxonMode::Exact).unwrap();
    assert_eq!((r.statistic, r.p_value, r.n), (0.0, 0.0625, 5));
}

fn mask(bits: &[bool]) -> Volume {
    let data = bits.iter().map(|&b| b as u8 as f32).collect();
    Volume::new(Grid::from_vec([bits.len(), 1, 1], 1, data).unwrap(), [1.0; 3], [0.0; 3]).unwrap()
}

proptest! {
    #[test]
    fn dice_symmetric_and_reflexive(a in prop::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<bool> = a.iter().map(|_| rng.random_bool(0.5)).collect();
        let (va, vb) = (mask(&a), mask(&b));
        prop_assert_eq!(dice(&va, &vb).unwrap(), dice(&vb, &va).unwrap());
        prop_assert_eq!(dice(&va, &va).unwrap(), 1.0);
        let d = dice(&va, &vb).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn bonferroni_never_lowers(p in prop::collection::vec(0.0f64..=1.0, 1..20)) {
        let (adj, reject) = bonferroni(&p, 0.05);
        for ((a, q), r) in adj.iter().zip(&p).zip(&reject) {
            prop_assert!(a >= q && *a <= 1.0);
            prop_assert_eq!(*r, *a < 0.05);
        }
    }

    #[test]
    fn exact_p_is_a_probability(d in prop::collection::vec(-5i32..5, 1..15)) {
        let x: Vec<f64> = d.iter().map(|&v| v as f64).collect();
        let r = wilcoxon_signed_rank(&x, &vec![0.0; x.len()], WilcoxonMode::Exact).unwrap();
        prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }
}
