use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resadapt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn resadapt")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// (grid, kernel shape, pool shape) per level from `plan --csv`.
fn plan_rows(spacing: &str) -> Vec<(String, String, String)> {
    let o = run(&["plan", "--spacing", spacing, "--width", "5", "--depth", "3", "--csv"]);
    assert_eq!(o.status.code(), Some(0));
    stdout(&o)
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('"').collect();
            (f[1].to_string(), f[3].to_string(), f[5].to_string())
        })
        .collect()
}

#[test]
fn plan_isotropic_block() {
    let rows = plan_rows("1,1,1");
    let grids: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
    assert_eq!(grids, ["1,1,1", "2,2,2", "4,4,4", "8,8,8"]);
    assert!(rows.iter().all(|r| r.1 == "5,5,5" && r.2 == "2,2,2"));
}

#[test]
fn plan_anisotropic_block() {
    let rows = plan_rows("0.5,0.5,3");
    let col = |i: usize| -> Vec<String> {
        rows.iter()
            .map(|r| match i {
                0 => r.0.clone(),
                1 => r.1.clone(),
                _ => r.2.clone(),
            })
            .collect()
    };
    assert_eq!(col(0), ["0.5,0.5,3", "2,2,3", "4,4,3", "8,8,6"]);
    assert_eq!(col(1), ["11,11,1", "5,5,3", "5,5,7", "5,5,7"]);
    assert_eq!(col(2), ["4,4,1", "2,2,1", "2,2,2", "2,2,2"]);
    let text = run(&["plan", "--spacing", "0.5,0.5,3"]);
    assert_eq!(text.status.code(), Some(0));
    assert!(stdout(&text).contains("11,11,1"));
}

#[test]
fn usage_errors_exit_one() {
    let o = run(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(run(&["plan", "--spacing", "1,1,1", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["plan", "--spacing", "1,1"]).status.code(), Some(1));
    assert_eq!(run(&["plan", "--spacing", "1,0,1"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--model", "resnet", "--data", "x"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--model", "baseline", "--data", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest.json"));
}

fn synth(out: &Path) {
    let o = run(&[
        "synth-data",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "4",
        "--scenes",
        "6",
        "--spacings",
        "1,1,1;1,1,2",
        "--box-mm",
        "16",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_data_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path());
    synth(b.path());
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 2 * 12 + 1);
    assert!(names.iter().any(|n| n == "case0000_img.rvol"));
    for n in names {
        assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
    }
}

#[test]
fn train_predict_evaluate_dump() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    let data_s = data.to_str().unwrap();
    let train = |kind: &str, out: &str, extra: &[&str]| {
        let mut args = vec![
            "train", "--model", kind, "--data", data_s, "--patch", "8,8,8", "--max-epochs", "1", "--seed", "3", "--out",
        ];
        let out = d(out);
        args.push(&out);
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let hist = d("hist.csv");
    let m1 = train("resadaptive", "a.rmodel", &["--history", &hist]);
    let m2 = train("resadaptive", "b.rmodel", &[]);
    assert_eq!(m1, m2, "training is deterministic given the seed");
    let csv = std::fs::read_to_string(&hist).unwrap();
    assert!(csv.starts_with("epoch,train_loss,val_loss,lr,seconds"));
    train("baseline", "c.rmodel", &["--resample-to", "1,1,1"]);

    for (model, out) in [("a.rmodel", "pa"), ("c.rmodel", "pc")] {
        let o = run(&[
            "predict", "--model", &d(model), "--data", data_s, "--out-dir", &d(out), "--patch", "16,16,16",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let one = run(&[
        "predict", "--model", &d("a.rmodel"), "--in", &format!("{data_s}/case0000_img.rvol"), "--out", &d("m.rvol"), "--prob",
        &d("p.rvol"), "--patch", "8,8,8",
    ]);
    assert_eq!(one.status.code(), Some(0), "{}", String::from_utf8_lossy(&one.stderr));
    assert!(Path::new(&d("p.rvol")).exists());

    let report = d("report.csv");
    let o = run(&[
        "evaluate", "--pred", &format!("adaptive={}", d("pa")), "--pred", &d("pc"), "--truth", data_s, "--out", &report,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("adaptive") && text.contains("pc") && text.contains("1x1x2"));
    assert!(std::fs::read_to_string(&report).unwrap().lines().count() == 5);

    let o = run(&["kernel-dump", "--model", &d("a.rmodel"), "--spacing", "0.5,0.5,3", "--layer", "0", "--out", &d("k.bin")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, values) = resadapt::kernels::read_kernel_dump(Path::new(&d("k.bin"))).unwrap();
    assert_eq!(header.extent, [11, 11, 1]);
    assert_eq!(values.len(), header.dim_out * header.dim_in * 121);
    let bad = run(&["kernel-dump", "--model", &d("c.rmodel"), "--spacing", "1,1,1", "--layer", "0", "--out", &d("k2.bin")]);
    assert_eq!(bad.status.code(), Some(2));
}
