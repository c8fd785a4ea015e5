use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use resadapt::data::{load_case, read_volume, resample, resample_image, synth_dataset, write_volume, Case, DatasetManifest, ResampleMethod, Split};
use resadapt::eval::{dice, report, CaseScore};
use resadapt::experiment::spacing_label;
use resadapt::inference::predict_volume;
use resadapt::kernels::write_kernel_dump;
use resadapt::network::{load_model, save_model, Layer, Model, ModelKind, Preprocessing, UNetConfig};
use resadapt::pooling::plan_table;
use resadapt::training::{train, write_history_csv, TrainConfig};
use resadapt::Error;

#[derive(Parser)]
#[command(name = "resadapt", version, about = "Resolution-adaptive 3D segmentation pipeline", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel and pooling shapes per U-Net level for an input spacing.
    Plan(PlanArgs),
    /// Writes a synthetic phantom dataset.
    SynthData(SynthArgs),
    Train(TrainArgs),
    /// Sliding-window prediction of one volume or a whole test split.
    Predict(PredictArgs),
    /// Dice tables with Wilcoxon / Bonferroni significance.
    Evaluate(EvalArgs),
    /// Realizes one layer's kernel at a spacing and writes it to disk.
    KernelDump(KernelDumpArgs),
}

fn triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got '{s}'"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| format!("cannot parse '{p}'"))?);
    }
    out.try_into().map_err(|_| unreachable!())
}

fn spacing(s: &str) -> Result<[f64; 3], String> {
    let v = triple::<f64>(s)?;
    if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(format!("spacing must be positive, got '{s}'"));
    }
    Ok(v)
}

fn patch(s: &str) -> Result<[usize; 3], String> {
    let v = triple::<usize>(s)?;
    if v.contains(&0) {
        return Err("patch dims must be positive".into());
    }
    Ok(v)
}

/// Semicolon-separated spacings, parsed as one value.
#[derive(Clone, Debug)]
struct SpacingList(Vec<[f64; 3]>);

fn spacing_list(s: &str) -> Result<SpacingList, String> {
    let v: Vec<[f64; 3]> = s.split(';').filter(|p| !p.trim().is_empty()).map(spacing).collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err("at least one spacing is required".into());
    }
    Ok(SpacingList(v))
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, value_parser = spacing)]
    spacing: [f64; 3],
    /// Level-0 kernel width (mm).
    #[arg(long, default_value_t = 5.0)]
    width: f64,
    /// Level-0 pooling width (mm).
    #[arg(long, default_value_t = 2.0)]
    pool_width: f64,
    /// Deepest level listed.
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    scenes: usize,
    #[arg(long, value_parser = spacing_list, default_value = "1,1,1;0.5,0.5,1;1,1,3")]
    spacings: SpacingList,
    /// Scene box edge length (mm).
    #[arg(long, default_value_t = 24.0)]
    box_mm: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: ModelKind,
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Resample every case to this spacing first (the "@1mm" arm).
    #[arg(long, value_parser = spacing)]
    resample_to: Option<[f64; 3]>,
    /// Train and validate only on cases of this spacing.
    #[arg(long, value_parser = spacing)]
    train_spacing: Option<[f64; 3]>,
    /// JSON file with TrainConfig fields; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `desk` (reduced widths) or `full`.
    #[arg(long, default_value = "desk")]
    network: String,
    #[arg(long, default_value = "model.rmodel")]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = patch)]
    patch: Option<[usize; 3]>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Single input volume.
    #[arg(long = "in", required_unless_present = "data", conflicts_with = "data", requires = "out")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Probability map output (single-volume mode).
    #[arg(long)]
    prob: Option<PathBuf>,
    /// Dataset directory: predicts every case of `--split` into `--out-dir`
    /// as `<case id>_pred.rvol`.
    #[arg(long, requires = "out_dir")]
    data: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_parser = patch, default_value = "32,32,32")]
    patch: [usize; 3],
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction directory, optionally named: `NAME=DIR`. Repeatable.
    #[arg(long, required = true)]
    pred: Vec<String>,
    /// Dataset directory with the ground-truth masks.
    #[arg(long)]
    truth: PathBuf,
    /// Defaults to `<truth>/manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Print CSV instead of the text table.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct KernelDumpArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input spacing; the kernel is realized on its layer's grid.
    #[arg(long, value_parser = spacing)]
    spacing: [f64; 3],
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_split(s: &str) -> Result<Split, Error> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| Error::InvalidArgument(format!("unknown split '{s}' (train, val or test)")))
}

fn run_plan(a: PlanArgs) -> Result<(), Error> {
    let rows = plan_table(a.spacing, a.width, a.pool_width, a.depth);
    let fmt3 = |v: [f64; 3]| format!("{},{},{}", v[0], v[1], v[2]);
    let fmtu = |v: [usize; 3]| format!("{},{},{}", v[0], v[1], v[2]);
    let mut out = std::io::stdout().lock();
    let res = if a.csv {
        let mut s = String::from("level,grid_mm,kernel_width_mm,kernel_shape,pool_width_mm,pool_shape\n");
        for r in &rows {
            s += &format!(
                "{},\"{}\",{},\"{}\",{},\"{}\"\n",
                r.level,
                fmt3(r.spacing_mm),
                r.kernel_width_mm,
                fmtu(r.kernel_extent),
                r.pool_width_mm,
                fmtu(r.pool_factors)
            );
        }
        out.write_all(s.as_bytes())
    } else {
        let mut s = format!("{:<28}", "U-Net level");
        let cells: [(&str, Box<dyn Fn(&resadapt::pooling::PlanRow) -> String>); 5] = [
            ("Voxel grid (mm)", Box::new(|r| fmt3(r.spacing_mm))),
            ("Conv kernel width (mm)", Box::new(|r| format!("{}", r.kernel_width_mm))),
            ("Conv kernel shape (voxels)", Box::new(|r| fmtu(r.kernel_extent))),
            ("Maxpool width (mm)", Box::new(|r| format!("{}", r.pool_width_mm))),
            ("Maxpool shape (voxels)", Box::new(|r| fmtu(r.pool_factors))),
        ];
        for r in &rows {
            s += &format!("{:>12}", r.level);
        }
        s.push('\n');
        for (name, f) in &cells {
            s += &format!("{name:<28}");
            for r in &rows {
                s += &format!("{:>12}", f(r));
            }
            s.push('\n');
        }
        out.write_all(s.as_bytes())
    };
    res.map_err(|e| Error::Io {
        path: "<stdout>".into(),
        source: e,
    })
}

fn run_synth(a: SynthArgs) -> Result<(), Error> {
    let m = synth_dataset(&a.out, a.seed, a.scenes, &a.spacings.0, [a.box_mm; 3])?;
    println!("wrote {} cases ({} scenes x {} spacings) to {}", m.cases.len(), m.scenes, m.spacings_mm.len(), a.out.display());
    Ok(())
}

fn load_split(dir: &Path, manifest: &DatasetManifest, split: Split, spacing: Option<[f64; 3]>) -> Result<Vec<Case>, Error> {
    manifest.select(split, spacing).into_iter().map(|e| load_case(dir, e)).collect()
}

fn resample_case(c: Case, target: [f64; 3]) -> Result<Case, Error> {
    let image = resample_image(&c.image, target)?;
    let mask = resample(&c.mask, target, ResampleMethod::Nearest)?;
    Case::new(c.id, image, mask)
}

fn run_train(a: TrainArgs) -> Result<(), Error> {
    let mut cfg = match &a.config {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_slice::<TrainConfig>(&bytes).map_err(|e| Error::Format {
                path: p.clone(),
                field: "config",
                message: e.to_string(),
            })?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.patch {
        cfg.patch_voxels = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.patience {
        cfg.patience_epochs = v;
    }
    if let Some(v) = a.max_epochs {
        cfg.max_epochs = v;
    }
    let unet = match a.network.as_str() {
        "desk" => UNetConfig::desk(a.model),
        "full" => match a.model {
            ModelKind::Resadaptive => UNetConfig::full_resadaptive(),
            ModelKind::Baseline => UNetConfig::full_baseline(),
        },
        other => return Err(Error::InvalidArgument(format!("unknown network preset '{other}' (desk or full)"))),
    };
    let manifest = DatasetManifest::read(&a.data.join(resadapt::data::dataset::MANIFEST_FILE))?;
    let mut train_cases = load_split(&a.data, &manifest, Split::Train, a.train_spacing)?;
    let mut val_cases = load_split(&a.data, &manifest, Split::Val, a.train_spacing)?;
    if let Some(t) = a.resample_to {
        train_cases = train_cases.into_iter().map(|c| resample_case(c, t)).collect::<Result<_, _>>()?;
        val_cases = val_cases.into_iter().map(|c| resample_case(c, t)).collect::<Result<_, _>>()?;
    }
    let mut model = Model::new(unet, cfg.seed)?;
    log::info!(
        "training {:?} ({} parameters) on {} cases, validating on {}",
        a.model,
        model.num_parameters(),
        train_cases.len(),
        val_cases.len()
    );
    let outcome = train(&cfg, &mut model, &train_cases, &val_cases)?;
    let pre = Preprocessing {
        resample_to: a.resample_to,
        ..Preprocessing::default()
    };
    save_model(&a.out, &model, &pre)?;
    if let Some(h) = &a.history {
        write_history_csv(h, &outcome.history)?;
    }
    println!(
        "best val loss {:.4} at epoch {} of {}; model written to {}",
        outcome.best_val_loss,
        outcome.best_epoch,
        outcome.history.len(),
        a.out.display()
    );
    Ok(())
}

fn run_predict(a: PredictArgs) -> Result<(), Error> {
    let (model, manifest) = load_model(&a.model)?;
    let pre = &manifest.preprocessing;
    if let Some(input) = &a.input {
        let vol = read_volume(input)?;
        let pred = predict_volume(&model, pre, &vol, a.patch, a.overlap, a.threshold)?;
        write_volume(a.out.as_deref().expect("clap requires --out"), &pred.mask)?;
        if let Some(p) = &a.prob {
            write_volume(p, &pred.probability)?;
        }
        return Ok(());
    }
    let (data, out_dir) = (a.data.as_ref().expect("clap"), a.out_dir.as_ref().expect("clap"));
    let dm = DatasetManifest::read(&data.join(resadapt::data::dataset::MANIFEST_FILE))?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.clone(),
        source: e,
    })?;
    let split = parse_split(&a.split)?;
    for entry in dm.select(split, None) {
        let vol = read_volume(&data.join(&entry.image))?;
        let pred = predict_volume(&model, pre, &vol, a.patch, a.overlap, a.threshold)?;
        write_volume(&out_dir.join(format!("{}_pred.rvol", entry.id)), &pred.mask)?;
    }
    Ok(())
}

fn run_evaluate(a: EvalArgs) -> Result<(), Error> {
    let manifest_path = a.manifest.clone().unwrap_or_else(|| a.truth.join(resadapt::data::dataset::MANIFEST_FILE));
    let dm = DatasetManifest::read(&manifest_path)?;
    let split = parse_split(&a.split)?;
    let mut scores = Vec::new();
    for spec in &a.pred {
        let (name, dir) = match spec.split_once('=') {
            Some((n, d)) => (n.to_string(), PathBuf::from(d)),
            None => {
                let d = PathBuf::from(spec);
                let n = d.file_name().map_or(spec.clone(), |n| n.to_string_lossy().into_owned());
                (n, d)
            }
        };
        for entry in dm.select(split, None) {
            let pred = read_volume(&dir.join(format!("{}_pred.rvol", entry.id)))?;
            let mut truth = read_volume(&a.truth.join(&entry.mask))?;
            // predictions made on a resampled grid are scored there
            if pred.spacing() != truth.spacing() {
                truth = resample(&truth, pred.spacing(), ResampleMethod::Nearest)?;
            }
            scores.push(CaseScore {
                model: name.clone(),
                column: spacing_label(entry.spacing_mm),
                case: format!("scene{:04}", entry.scene),
                dice: dice(&pred, &truth)?,
            });
        }
    }
    let rep = report(&scores, a.alpha)?;
    if let Some(out) = &a.out {
        let f = std::fs::File::create(out).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
        rep.write_csv(f)?;
    }
    if a.csv {
        rep.write_csv(std::io::stdout().lock())?;
    } else {
        print!("{}", rep.to_text());
    }
    Ok(())
}

fn run_kernel_dump(a: KernelDumpArgs) -> Result<(), Error> {
    let (model, _) = load_model(&a.model)?;
    let layer = model
        .layers()
        .get(a.layer)
        .ok_or_else(|| Error::InvalidArgument(format!("layer {} out of range (model has {})", a.layer, model.layers().len())))?;
    let Layer::Equivariant { level, spec, .. } = layer else {
        return Err(Error::InvalidArgument(format!("layer {} has no physical kernel", a.layer)));
    };
    let inst = model.build(a.spacing)?;
    let grid_spacing = inst.plan().level_spacings()[*level];
    let realization = spec.realize(grid_spacing)?;
    write_kernel_dump(&a.out, spec, &realization)?;
    println!(
        "layer {} (level {level}) realized at {grid_spacing:?} mm: extent {:?}, {} x {} channels",
        a.layer, realization.extent, realization.dim_out, realization.dim_in
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Plan(a) => run_plan(a),
        Command::SynthData(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Predict(a) => run_predict(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::KernelDump(a) => run_kernel_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
