//! Acceptance runner: one PASS/FAIL line per criterion and a summary line.
//! Criteria can be narrowed with `RESADAPT_ACCEPTANCE=1,4,9`; the rest
//! are then reported as SKIP. A FAIL is reported, not hidden, but only
//! turns into a nonzero exit with `RESADAPT_ACCEPTANCE_STRICT=1`, so one
//! failing criterion does not stop cargo from running the other test
//! targets.

use std::time::Instant;

use resadapt::data::{interpolate_line, resample, ResampleMethod, Volume};
use resadapt::eval::{dice, wilcoxon_signed_rank, WilcoxonMode};
use resadapt::experiment::{cross_resolution, mixed_resolution, Recipe, ADAPTIVE, NATIVE, RESAMPLED};
use resadapt::network::{Model, ModelKind, UNetConfig};
use resadapt::pooling::plan_table;
use resadapt::{Grid, GridSymmetry, IrrepsSignature};

mod support;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn triple<T: std::fmt::Display>(v: [T; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

fn table_one() -> Check {
    let expect = [
        ([1.0, 1.0, 1.0], ["1,1,1", "2,2,2", "4,4,4", "8,8,8"], ["5,5,5"; 4], ["2,2,2"; 4]),
        (
            [0.5, 0.5, 3.0],
            ["0.5,0.5,3", "2,2,3", "4,4,3", "8,8,6"],
            ["11,11,1", "5,5,3", "5,5,7", "5,5,7"],
            ["4,4,1", "2,2,1", "2,2,2", "2,2,2"],
        ),
    ];
    let mut bad = Vec::new();
    for (spacing, grids, kernels, pools) in expect {
        let rows = plan_table(spacing, 5.0, 2.0, 3);
        if rows.len() != 4 {
            bad.push(format!("{spacing:?}: {} levels", rows.len()));
            continue;
        }
        for (k, r) in rows.iter().enumerate() {
            let got = (triple(r.spacing_mm), triple(r.kernel_extent), triple(r.pool_factors));
            let want = (grids[k].to_string(), kernels[k].to_string(), pools[k].to_string());
            let widths = r.kernel_width_mm == 5.0 * (1 << k) as f64 && r.pool_width_mm == 2.0 * (1 << k) as f64;
            if got != want || !widths {
                bad.push(format!("{spacing:?} level {k}: {got:?} vs {want:?}"));
            }
        }
    }
    ensure(bad.is_empty(), if bad.is_empty() { "48 cells match".into() } else { bad.join("; ") })
}

fn signature_dim() -> Check {
    let sig: IrrepsSignature = "8x0e+4x1e+2x2e".parse().map_err(|e| format!("{e}"))?;
    ensure(sig.total_dim() == 30, format!("total dimension {}", sig.total_dim()))
}

fn parameter_invariance() -> Check {
    let model = Model::new(UNetConfig::full_resadaptive(), 1).map_err(|e| e.to_string())?;
    let before = model.parameters_owned();
    let a = model.instance([1.0; 3]).map_err(|e| e.to_string())?;
    let b = model.instance([0.5, 0.5, 3.0]).map_err(|e| e.to_string())?;
    let extents = (a.kernel_extents()[0], b.kernel_extents()[0]);
    let same = model.parameters_owned() == before;
    ensure(
        same && extents == ([5, 5, 5], [11, 11, 1]) && model.num_instances() == 2,
        format!(
            "{} weights shared by extents {:?} and {:?}",
            model.num_parameters(),
            extents.0,
            extents.1
        ),
    )
}

fn equivariance() -> Check {
    let spec = support::mixed_spec(1);
    let k = spec.realize([1.0; 3]).map_err(|e| e.to_string())?;
    let rots = GridSymmetry::proper_rotations();
    let kernel = rots.iter().map(|g| support::kernel_equivariance_error(&k, &spec, g)).fold(0.0, f64::max);
    let model = Model::new(UNetConfig::desk(ModelKind::Resadaptive), 5).map_err(|e| e.to_string())?;
    let x = support::random_grid(1, [16; 3]);
    let net = rots.iter().map(|g| support::network_error(&model, &x, [1.0; 3], g, 1)).fold(0.0, f64::max);
    ensure(
        rots.len() == 24 && kernel <= 1e-5 && net <= 1e-4,
        format!("24 rotations: kernel {kernel:.2e}, network {net:.2e}"),
    )
}

fn gradients() -> Check {
    let (a, na) = support::gradcheck(ModelKind::Resadaptive, 1e-5);
    let (b, nb) = support::gradcheck(ModelKind::Baseline, 1e-5);
    ensure(
        a <= 1e-4 && b <= 1e-4,
        format!("max relative error: resadaptive {a:.2e}, baseline {b:.2e} ({} zero-gradient entries within the roundoff floor)", na + nb),
    )
}

fn kernel_consistency() -> Check {
    let spec = support::mixed_spec(3);
    let coarse = spec.realize([1.0; 3]).map_err(|e| e.to_string())?;
    let fine = spec.realize([0.5; 3]).map_err(|e| e.to_string())?;
    let (mut same, mut total) = (0usize, 0usize);
    for z in 0..5 {
        for y in 0..5 {
            for x in 0..5 {
                let f = (2 * x + 1, 2 * y + 1, 2 * z + 1);
                if coarse.offset_mm(x, y, z) != fine.offset_mm(f.0, f.1, f.2) {
                    return Err(format!("offsets differ at ({x},{y},{z})"));
                }
                for o in 0..coarse.dim_out {
                    for i in 0..coarse.dim_in {
                        total += 1;
                        same += (coarse.get(o, i, x, y, z).to_bits() == fine.get(o, i, f.0, f.1, f.2).to_bits()) as usize;
                    }
                }
            }
        }
    }
    ensure(same == total, format!("{same}/{total} coincident taps bitwise equal"))
}

fn statistics() -> Check {
    let mut worst = 0.0f64;
    for (x, y) in support::wilcoxon_trials(2024, 100) {
        let r = wilcoxon_signed_rank(&x, &y, WilcoxonMode::Exact).map_err(|e| e.to_string())?;
        let p = support::enumeration_p(&x, &y).unwrap_or(1.0);
        worst = worst.max((r.p_value - p).abs());
    }
    let mask = |bits: &[u8]| {
        Volume::new(Grid::from_vec([bits.len(), 1, 1], 1, bits.iter().map(|&b| b as f32).collect()).unwrap(), [1.0; 3], [0.0; 3]).unwrap()
    };
    let trivial = [
        (mask(&[1, 1, 0, 0]), mask(&[1, 1, 0, 0]), 1.0),
        (mask(&[1, 1, 0, 0]), mask(&[0, 0, 1, 1]), 0.0),
        (mask(&[0, 0, 0, 0]), mask(&[0, 0, 0, 0]), 1.0),
        (mask(&[1, 1, 0, 0]), mask(&[1, 0, 0, 0]), 2.0 / 3.0),
    ];
    let dice_ok = trivial.iter().all(|(a, b, want)| dice(a, b).unwrap() == *want);
    ensure(
        worst < 1e-12 && dice_ok,
        format!("100 samples, n <= 10: max |p - enumeration| {worst:.1e}; Dice trivial cases exact: {dice_ok}"),
    )
}

fn bspline() -> Check {
    let samples: Vec<f64> = (0..50).map(|i| (0.37 * i as f64).sin() + 0.01 * (i * i) as f64).collect();
    let pos: Vec<f64> = (0..50).map(|i| i as f64).collect();
    let identity = samples.iter().zip(interpolate_line(&samples, &pos)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let ramp: Vec<f64> = (0..64).map(|i| 0.5 * i as f64 - 3.0).collect();
    let half: Vec<f64> = (32..=96).map(|j| j as f64 * 0.5).collect();
    let ramp_err = half
        .iter()
        .zip(interpolate_line(&ramp, &half))
        .map(|(x, v)| (v - (0.5 * x - 3.0)).abs())
        .fold(0.0, f64::max);
    let vol = Volume::new(Grid::filled([9, 7, 5], 1, 3.7f32), [1.0, 1.0, 3.0], [0.0; 3]).unwrap();
    let constant = [[0.5, 0.5, 1.0], [1.3, 0.7, 2.2]]
        .iter()
        .all(|&t| resample(&vol, t, ResampleMethod::CubicBspline).unwrap().data().iter().all(|&v| v == 3.7));
    ensure(
        identity < 1e-6 && ramp_err < 1e-6 && constant,
        format!("identity {identity:.1e}, interior ramp {ramp_err:.1e}, constants exact: {constant}"),
    )
}

fn cross_resolution_analog() -> Check {
    let recipe = Recipe::desk();
    let res = cross_resolution(&recipe, |m| eprintln!("  {m}")).map_err(|e| e.to_string())?;
    eprintln!("{}", res.report.to_text());
    let seen = recipe.test_spacings_mm[0];
    let unseen = recipe.test_spacings_mm[1];
    let get = |m: &str, s| res.mean(m, s).ok_or(format!("no scores for {m}"));
    let (nat_seen, nat_unseen) = (get(NATIVE, seen)?, get(NATIVE, unseen)?);
    let (ada_seen, ada_unseen) = (get(ADAPTIVE, seen)?, get(ADAPTIVE, unseen)?);
    let res_unseen = get(RESAMPLED, unseen)?;
    let gain = ada_unseen - nat_unseen;
    let gap = (ada_seen - nat_seen).abs();
    ensure(
        gain >= 0.05 && gap <= 0.03,
        format!(
            "unseen: adaptive {ada_unseen:.3} vs native {nat_unseen:.3} (gain {gain:+.3}, resampled {res_unseen:.3}); \
             seen: adaptive {ada_seen:.3} vs native {nat_seen:.3} (gap {gap:.3})"
        ),
    )
}

fn mixed_resolution_smoke() -> Check {
    let mut recipe = Recipe::desk();
    // three spacings triple the cases per epoch; 15 epochs fit the budget
    recipe.train.max_epochs = 15;
    recipe.train.patience_epochs = 5;
    let spacings = [[1.0, 1.0, 1.0], [0.5, 0.5, 1.0], [1.0, 1.0, 3.0]];
    let res = mixed_resolution(&recipe, &spacings).map_err(|e| e.to_string())?;
    let val = res.outcome.best_val_loss;
    ensure(
        val < 0.3 && res.instances == 3,
        format!("best val loss {val:.4} after {} epochs, {} cached instances", res.outcome.history.len(), res.instances),
    )
}

fn main() {
    let _ = env_logger::builder().is_test(true).try_init();
    let only: Option<Vec<usize>> = std::env::var("RESADAPT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(&str, fn() -> Check); 10] = [
        ("plan reproduces the kernel and pooling table", table_one),
        ("signature 8x0e+4x1e+2x2e has dimension 30", signature_dim),
        ("one weight set serves every spacing", parameter_invariance),
        ("equivariance under the 24 cube rotations", equivariance),
        ("reverse-mode gradients match finite differences", gradients),
        ("kernel realizations agree bitwise at shared offsets", kernel_consistency),
        ("exact Wilcoxon matches enumeration", statistics),
        ("cubic B-spline resampler", bspline),
        ("cross-resolution generalization", cross_resolution_analog),
        ("mixed-resolution training", mixed_resolution_smoke),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            println!("SKIP {n:>2} {name}");
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {n:>2} {name}: {d} ({secs:.1} s)"),
            Err(d) => {
                failed.push(n);
                println!("FAIL {n:>2} {name}: {d} ({secs:.1} s)");
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria that ran passed");
    } else {
        println!("acceptance: FAILED criteria {failed:?}");
        if std::env::var_os("RESADAPT_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
