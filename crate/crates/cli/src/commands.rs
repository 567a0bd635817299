use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use camid_core::dataset::{
    build_eval_set, class_count, curate, discover_classes, read_manifest, split, write_manifest, Decision,
    ManifestRecord, Split,
};
use camid_core::eval::{
    ablation_csv, plain_accuracy, robustness_sweep, train_size_ablation, weighted_accuracy,
    weighted_accuracy_literal, SweepSpec, SweepTransform, ValSet,
};
use camid_core::infer::{predict_manifest, write_predictions, Predictor};
use camid_core::io::{create_dir_all, write_atomic};
use camid_core::nn::checkpoint::{load_checkpoint_for, save_checkpoint};
use camid_core::nn::gradcheck::op_suite;
use camid_core::nn::{Model, Scalar};
use camid_core::synth::write_corpus;
use camid_core::train::{train, TrainSet};

use crate::config::{Precision, RunConfig};
use crate::{AblateKind, Cli, Command, SplitFilter};

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.global.workers {
        cfg.workers = w;
    }
    if let Some(p) = cli.global.precision {
        cfg.precision = p;
    }
    Ok(cfg.resolve())
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> Result<u8> {
    let mut cfg = effective_config(&cli)?;
    if cli.global.dump_config {
        print!("{}", cfg.to_toml());
        return Ok(0);
    }
    let Some(command) = cli.command else {
        bail!("no subcommand given; see --help");
    };
    match command {
        Command::Curate { root, out, report } => curate_cmd(&cfg, &root, &out, report.as_deref()),
        Command::Split {
            manifest,
            out,
            val_per_class,
        } => {
            let records = read_manifest(&manifest)?;
            let n = val_per_class.unwrap_or(cfg.split.val_per_class);
            let out_records = split(&records, n, cfg.seed)?;
            write_manifest(&out, &out_records)?;
            let val = out_records.iter().filter(|r| r.split == Split::Val).count();
            println!("train={} val={val}", out_records.len() - val);
            Ok(0)
        }
        Command::BuildEval {
            manifest,
            out_dir,
            out,
            crop,
        } => {
            let records = read_manifest(&manifest)?;
            let val: Vec<ManifestRecord> = records.into_iter().filter(|r| r.split == Split::Val).collect();
            if val.is_empty() {
                bail!("{} has no validation records; run `split` first", manifest.display());
            }
            let crop = crop.unwrap_or(cfg.eval_set.crop);
            let report = build_eval_set(&val, cfg.seed, &out_dir, crop, &cfg.eval_set.grids, cfg.workers)?;
            for (path, why) in &report.skipped {
                eprintln!("warning: skipped {}: {why}", path.display());
            }
            write_manifest(&out, &report.records)?;
            println!(
                "images={} altered={} skipped={}",
                report.records.len(),
                report.altered(),
                report.skipped.len()
            );
            Ok(0)
        }
        Command::Train {
            manifest,
            out_dir,
            iterations,
        } => {
            if let Some(n) = iterations {
                cfg.train.iterations = n;
            }
            match cfg.precision {
                Precision::F32 => train_cmd::<f32>(&cfg, &manifest, &out_dir),
                Precision::F64 => train_cmd::<f64>(&cfg, &manifest, &out_dir),
            }
        }
        Command::Predict {
            checkpoint,
            manifest,
            out,
            split,
        } => match cfg.precision {
            Precision::F32 => predict_cmd::<f32>(&cfg, &checkpoint, &manifest, &out, split),
            Precision::F64 => predict_cmd::<f64>(&cfg, &checkpoint, &manifest, &out, split),
        },
        Command::Evaluate {
            checkpoint,
            manifest,
            split,
            literal,
        } => match cfg.precision {
            Precision::F32 => evaluate_cmd::<f32>(&cfg, &checkpoint, &manifest, split, literal),
            Precision::F64 => evaluate_cmd::<f64>(&cfg, &checkpoint, &manifest, split, literal),
        },
        Command::Ablate { kind } => match cfg.precision {
            Precision::F32 => ablate_cmd::<f32>(&cfg, kind),
            Precision::F64 => ablate_cmd::<f64>(&cfg, kind),
        },
        Command::Gradcheck { seeds } => gradcheck_cmd(cfg.seed, seeds),
        Command::Synth { out_dir, out } => {
            let records = write_corpus(&cfg.synth, &out_dir, cfg.workers)?;
            write_manifest(&out, &records)?;
            println!("images={}", records.len());
            Ok(0)
        }
    }
}

fn curate_cmd(cfg: &RunConfig, root: &Path, out: &Path, report_path: Option<&Path>) -> Result<u8> {
    let classes = discover_classes(root)?;
    if classes.is_empty() {
        bail!("{} has no class directories", root.display());
    }
    let (records, report) = curate(root, &cfg.curation, &classes, cfg.workers)?;
    write_manifest(out, &records)?;
    if let Some(path) = report_path {
        let mut tsv = String::from("path\tdecision\n");
        for (p, d) in &report.decisions {
            let d = match d {
                Decision::Kept => "kept".to_string(),
                Decision::Rejected(r) => r.to_string(),
            };
            writeln!(tsv, "{}\t{d}", p.display()).expect("string write");
        }
        write_atomic(path, tsv.as_bytes())?;
    }
    println!("{}", report.summary());
    if records.is_empty() {
        eprintln!("error: every file was rejected");
        return Ok(2);
    }
    Ok(0)
}

fn select(records: Vec<ManifestRecord>, filter: SplitFilter) -> Vec<ManifestRecord> {
    let want = match filter {
        SplitFilter::All => return records,
        SplitFilter::Train => Split::Train,
        SplitFilter::Val => Split::Val,
        SplitFilter::Eval => Split::Eval,
    };
    records.into_iter().filter(|r| r.split == want).collect()
}

fn load_model<T: Scalar>(checkpoint: &Path, num_classes: usize) -> Result<Model<T>> {
    load_checkpoint_for::<T>(checkpoint, num_classes)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))
}

fn train_cmd<T: Scalar>(cfg: &RunConfig, manifest: &Path, out_dir: &Path) -> Result<u8> {
    let records = read_manifest(manifest)?;
    let mut tc = cfg.train.clone();
    tc.model.num_classes = class_count(&records);
    let set = TrainSet::load(&records, tc.pre_crop, cfg.workers)?;
    for (path, why) in &set.skipped {
        eprintln!("warning: skipped {}: {why}", path.display());
    }
    create_dir_all(out_dir)?;
    let outcome = train::<T>(&set, &tc, cfg.workers, Some(out_dir), |p| {
        eprintln!("iteration={} loss={:.6}", p.iteration, p.loss);
    })?;
    save_checkpoint(&outcome.model, out_dir.join("model.cmid"))?;
    outcome.curve.write_csv(out_dir.join("loss.csv"))?;
    println!(
        "trained iterations={} images={} skipped={}",
        tc.iterations,
        set.len(),
        set.skipped.len()
    );
    Ok(0)
}

fn predict_cmd<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: &Path,
    out: &Path,
    filter: SplitFilter,
) -> Result<u8> {
    let records = read_manifest(manifest)?;
    let classes = class_count(&records);
    let model = load_model::<T>(checkpoint, classes)?;
    let records = select(records, filter);
    let predictor = Predictor::new(&model);
    let preds = predict_manifest(&predictor, &records, &cfg.tta, cfg.workers);
    for p in &preds {
        if let Err(e) = &p.outcome {
            eprintln!("warning: {}: {e}", p.record.path.display());
        }
    }
    write_predictions(out, &preds, classes)?;
    let failed = preds.iter().filter(|p| p.outcome.is_err()).count();
    println!("predicted={} failed={failed}", preds.len() - failed);
    Ok(0)
}

fn evaluate_cmd<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: &Path,
    filter: SplitFilter,
    literal: bool,
) -> Result<u8> {
    let records = read_manifest(manifest)?;
    let model = load_model::<T>(checkpoint, class_count(&records))?;
    let records = select(records, filter);
    let predictor = Predictor::new(&model);
    let preds = predict_manifest(&predictor, &records, &cfg.tta, cfg.workers);
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut altered = Vec::new();
    for p in &preds {
        match &p.outcome {
            Ok(v) => {
                ids.push(v.class_id);
                labels.push(p.record.class_id);
                altered.push(p.record.altered);
            }
            Err(e) => eprintln!("warning: {}: {e}", p.record.path.display()),
        }
    }
    if ids.is_empty() {
        bail!("no record of {} could be predicted", manifest.display());
    }
    println!("weighted_accuracy={:.6}", weighted_accuracy(&ids, &labels, &altered, &cfg.weights)?);
    if literal {
        println!(
            "weighted_accuracy_literal={:.6}",
            weighted_accuracy_literal(&ids, &labels, &altered, &cfg.weights)?
        );
    }
    println!("accuracy={:.6}", plain_accuracy(&ids, &labels)?);
    println!("n_images={} n_failed={}", ids.len(), preds.len() - ids.len());
    Ok(0)
}

fn ablate_cmd<T: Scalar>(cfg: &RunConfig, kind: AblateKind) -> Result<u8> {
    match kind {
        AblateKind::Sweep {
            checkpoint,
            manifest,
            transform,
            grid,
            out,
        } => {
            let records = read_manifest(&manifest)?;
            let model = load_model::<T>(&checkpoint, class_count(&records))?;
            let transform: SweepTransform = transform.parse()?;
            let spec = SweepSpec::new(transform, grid.unwrap_or_else(|| transform.default_grid()))?;
            let (val, failed) = ValSet::load(&records, Split::Val, cfg.workers);
            for (path, why) in &failed {
                eprintln!("warning: {path}: {why}");
            }
            if val.is_empty() {
                bail!("{} has no readable validation records", manifest.display());
            }
            let predictor = Predictor::new(&model);
            let curve = robustness_sweep(&predictor, &val, &spec, &cfg.tta, cfg.workers)?;
            curve.write_csv(&out)?;
            print!("{}", curve.to_csv());
            Ok(0)
        }
        AblateKind::TrainSize { manifest, sizes, out } => {
            let records = read_manifest(&manifest)?;
            let mut tc = cfg.train.clone();
            tc.model.num_classes = class_count(&records);
            let set = TrainSet::load(&records, tc.pre_crop, cfg.workers)?;
            let (val, _) = ValSet::load(&records, Split::Val, cfg.workers);
            if val.is_empty() {
                bail!("{} has no readable validation records", manifest.display());
            }
            let points = train_size_ablation::<T>(&set, &val, &sizes, &tc, &cfg.tta, cfg.workers)?;
            let csv = ablation_csv(&points);
            write_atomic(&out, csv.as_bytes())?;
            print!("{csv}");
            Ok(0)
        }
    }
}

fn gradcheck_cmd(first_seed: u64, seeds: u64) -> Result<u8> {
    let mut failures = 0;
    let mut worst: Vec<(&'static str, f64, f64)> = Vec::new();
    for seed in first_seed..first_seed + seeds {
        for check in op_suite(seed)? {
            if !check.passed() {
                failures += 1;
                eprintln!(
                    "FAIL seed={seed} {} max_rel_error={:e} tolerance={:e}",
                    check.name, check.report.max_rel_error, check.tolerance
                );
            }
            match worst.iter_mut().find(|w| w.0 == check.name) {
                Some(w) => w.1 = w.1.max(check.report.max_rel_error),
                None => worst.push((check.name, check.report.max_rel_error, check.tolerance)),
            }
        }
    }
    for (name, err, tol) in &worst {
        println!("{name} max_rel_error={err:e} tolerance={tol:e}");
    }
    println!("seeds={seeds} failures={failures}");
    Ok(if failures == 0 { 0 } else { 1 })
}
