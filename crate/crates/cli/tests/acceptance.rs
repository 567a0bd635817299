//! End-to-end acceptance suite. Runs every criterion in order, prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.
//!
//! `cargo test -p camid-cli --test acceptance` (add `-- 3 7` to run a subset).

use std::cell::OnceCell;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use camid_core::augment::{encode_jpeg, AugmentPolicy};
use camid_core::dataset::jpegmeta::{estimate_jpeg_quality, exif_software_payload};
use camid_core::dataset::{curate, CurationRules, Decision, RejectReason, Split};
use camid_core::eval::{
    evaluate, robustness_sweep, weighted_accuracy, EvalWeights, SweepSpec, SweepTransform, ValSet,
};
use camid_core::image::{d4_apply, d4_compose, ImageU8, D4};
use camid_core::infer::{Predictor, TtaConfig, FULL_TTA_VIEWS};
use camid_core::nn::gradcheck::op_suite;
use camid_core::nn::{cross_entropy, DenseBlockConfig, LossKind, Model, ModelConfig, Tensor};
use camid_core::rng::{stream_for, Domain, Stream};
use camid_core::synth::{generate, SynthConfig, NUM_CLASSES};
use camid_core::train::{train, LossCurve, TrainConfig, TrainOutcome, TrainSet};
use rand::Rng;

const SEED: u64 = 7;
const PRE_CROP: usize = 96;
const CROP: usize = 48;
const ITERATIONS: usize = 2000;

fn synth_config() -> SynthConfig {
    SynthConfig {
        seed: SEED,
        ..SynthConfig::default()
    }
}

/// Reduced dense network; the full default is too slow for the time limits
/// on a single core.
fn desk_model() -> ModelConfig {
    ModelConfig {
        in_channels: 3,
        stem_channels: 8,
        blocks: vec![
            DenseBlockConfig {
                num_layers: 3,
                growth_rate: 8,
            };
            3
        ],
        num_classes: NUM_CLASSES,
    }
}

fn train_config(policy: AugmentPolicy) -> TrainConfig {
    TrainConfig {
        pre_crop: PRE_CROP,
        train_crop: CROP,
        batch_size: 8,
        iterations: ITERATIONS,
        learning_rate: 1e-3,
        seed: SEED,
        policy,
        model: desk_model(),
        ..TrainConfig::default()
    }
}

fn tta() -> TtaConfig {
    TtaConfig {
        crop: CROP,
        ..TtaConfig::default()
    }
}

struct Trained {
    outcome: TrainOutcome<f32>,
    seconds: f64,
}

/// Data and models shared by criteria 3, 6, 7 and 8, built on first use.
#[derive(Default)]
struct Desk {
    data: OnceCell<(TrainSet, ValSet)>,
    augmented: OnceCell<Trained>,
    plain: OnceCell<Trained>,
}

impl Desk {
    fn data(&self) -> &(TrainSet, ValSet) {
        self.data.get_or_init(|| {
            let mut images = Vec::new();
            let mut labels = Vec::new();
            let mut val = ValSet::default();
            for img in generate(&synth_config(), 1).expect("synthetic corpus") {
                if img.split == Split::Train {
                    images.push(img.image);
                    labels.push(img.class_id);
                } else {
                    val.images.push(img.image);
                    val.labels.push(img.class_id);
                }
            }
            let set = TrainSet::from_images(images, labels, NUM_CLASSES).expect("train set");
            (set, val)
        })
    }

    fn fit(&self, policy: AugmentPolicy) -> Trained {
        let (set, _) = self.data();
        let start = Instant::now();
        let outcome = train::<f32>(set, &train_config(policy), 1, None, |p| {
            if p.iteration % 500 == 0 {
                eprintln!("    iteration {} loss {:.4}", p.iteration, p.loss);
            }
        })
        .expect("training");
        Trained {
            outcome,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    fn augmented(&self) -> &Trained {
        self.augmented.get_or_init(|| self.fit(AugmentPolicy::default()))
    }

    fn plain(&self) -> &Trained {
        self.plain.get_or_init(|| self.fit(AugmentPolicy::dihedral_only()))
    }
}

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit_s: f64, elapsed: Duration, outcome: Outcome) -> Outcome {
    let s = elapsed.as_secs_f64();
    match outcome {
        Ok(d) if s <= limit_s => Ok(format!("{d}; {s:.1}s")),
        Ok(d) => Err(format!("{d}; {s:.1}s exceeds {limit_s}s")),
        Err(d) => Err(format!("{d}; {s:.1}s")),
    }
}

fn random_image(h: usize, w: usize, rng: &mut Stream) -> ImageU8 {
    ImageU8::new(h, w, (0..h * w * 3).map(|_| rng.gen()).collect()).expect("image")
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst_op: f64 = 0.0;
    let mut worst_model: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..20 {
        for c in op_suite(seed).map_err(|e| e.to_string())? {
            if c.name == "model" {
                worst_model = worst_model.max(c.report.max_rel_error);
            } else {
                worst_op = worst_op.max(c.report.max_rel_error);
            }
            if !c.passed() {
                failures.push(format!("seed {seed} {} {:e}", c.name, c.report.max_rel_error));
            }
        }
    }
    let detail = format!("20 seeds, worst op {worst_op:.2e} (< 1e-4), worst model {worst_model:.2e} (< 1e-3)");
    within(
        120.0,
        start.elapsed(),
        check(failures.is_empty(), if failures.is_empty() { detail } else { format!("{detail}: {}", failures.join(", ")) }),
    )
}

fn dihedral() -> Outcome {
    let start = Instant::now();
    let mut triples = 0;
    for a in D4::ALL {
        for b in D4::ALL {
            for c in D4::ALL {
                if d4_compose(d4_compose(a, b), c) != d4_compose(a, d4_compose(b, c)) {
                    return Err(format!("associativity fails for {a} {b} {c}"));
                }
                triples += 1;
            }
        }
    }
    for g in D4::ALL {
        if d4_compose(D4::E, g) != g || d4_compose(g, D4::E) != g {
            return Err(format!("identity law fails for {g}"));
        }
        if d4_compose(g, g.inverse()) != D4::E || d4_compose(g.inverse(), g) != D4::E {
            return Err(format!("inverse law fails for {g}"));
        }
    }
    let mut rng = stream_for(SEED, Domain::Init, 2);
    for pair in 0..64 {
        let (a, b) = (D4::ALL[pair / 8], D4::ALL[pair % 8]);
        let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let img = random_image(h, w, &mut rng);
        if d4_apply(&d4_apply(&img, b), a) != d4_apply(&img, d4_compose(a, b)) {
            return Err(format!("apply({a}, apply({b}, img)) differs from apply({a}∘{b}, img) at {h}x{w}"));
        }
    }
    within(
        10.0,
        start.elapsed(),
        Ok(format!("{triples} triples, identity/inverse for 8 elements, 64 pairs")),
    )
}

fn tta_invariance(desk: &Desk) -> Outcome {
    let model = &desk.augmented().outcome.model;
    let start = Instant::now();
    let mut rng = stream_for(SEED, Domain::Init, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        // an even margin keeps the center crop on the same pixels under every transform
        let n = CROP + 2 * rng.gen_range(0..12);
        let img = random_image(n, n, &mut rng);
        let predictor = Predictor::new(model);
        let base = predictor.tta_predict(&img, CROP).map_err(|e| e.to_string())?;
        if base.num_views != FULL_TTA_VIEWS || predictor.views_evaluated() != FULL_TTA_VIEWS {
            return Err(format!(
                "{} views reported, {} evaluated",
                base.num_views,
                predictor.views_evaluated()
            ));
        }
        for g in D4::ALL {
            let p = predictor.tta_predict(&d4_apply(&img, g), CROP).map_err(|e| e.to_string())?;
            for (x, y) in p.probs.iter().zip(&base.probs) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    within(
        60.0,
        start.elapsed(),
        check(worst <= 1e-5, format!("20 images x 8 transforms, max deviation {worst:.2e}, 40 views")),
    )
}

/// Straightforward restatement of the weighted score used as the oracle.
fn weighted_oracle(preds: &[usize], labels: &[usize], altered: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..preds.len() {
        let w = if altered[i] { 0.3 } else { 0.7 };
        if preds[i] == labels[i] {
            num += w;
        }
        den += w;
    }
    num / den
}

fn metric() -> Outcome {
    let w = EvalWeights::default();
    let mut rng = stream_for(SEED, Domain::Init, 4);
    for case in 0..1000 {
        let n = rng.gen_range(1..60);
        let classes = rng.gen_range(1..11);
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let altered: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let got = weighted_accuracy(&preds, &labels, &altered, &w).map_err(|e| e.to_string())?;
        let want = weighted_oracle(&preds, &labels, &altered);
        if got != want {
            return Err(format!("instance {case}: {got} vs oracle {want}"));
        }
    }
    // correct unaltered, correct altered, wrong altered
    let example = weighted_accuracy(&[0, 1, 0], &[0, 1, 1], &[false, true, true], &w).map_err(|e| e.to_string())?;
    check(
        format!("{example:.6}") == "0.769231",
        format!("1000 instances exact, worked example {example:.6}"),
    )
}

fn loss_values() -> Outcome {
    let classes = 10;
    let uniform = Tensor::<f64>::new(vec![1, classes], vec![0.1; classes]).map_err(|e| e.to_string())?;
    let mut onehot = vec![0.0; classes];
    onehot[3] = 1.0;
    let target = Tensor::<f64>::new(vec![1, classes], onehot).map_err(|e| e.to_string())?;
    let u = cross_entropy(&uniform, &target, LossKind::SummedBinary).map_err(|e| e.to_string())?;
    let p = cross_entropy(&target, &target, LossKind::SummedBinary).map_err(|e| e.to_string())?;
    check(
        (u - 3.25083).abs() <= 1e-4 && p <= 1e-5,
        format!("uniform {u:.6} (3.25083 +/- 1e-4), perfect {p:.2e} (<= 1e-5)"),
    )
}

fn end_to_end(desk: &Desk) -> Outcome {
    let trained = desk.augmented();
    let (_, val) = desk.data();
    let start = Instant::now();
    let p = Predictor::new(&trained.outcome.model);
    let summary = evaluate(&p, val, &tta(), 1).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed() + Duration::from_secs_f64(trained.seconds);
    within(
        600.0,
        elapsed,
        check(
            summary.accuracy >= 0.95,
            format!(
                "TTA accuracy {:.4} on {} images (>= 0.95), training {:.0}s",
                summary.accuracy, summary.n_images, trained.seconds
            ),
        ),
    )
}

fn in_range_grids() -> Vec<(SweepTransform, Vec<f64>)> {
    vec![
        (SweepTransform::Gamma, vec![0.8, 0.9, 1.1, 1.2]),
        (SweepTransform::Jpeg, vec![70.0, 80.0, 90.0]),
        (SweepTransform::Scale, vec![0.5, 0.75, 1.5, 2.0]),
    ]
}

/// Baseline accuracy and every in-range manipulated accuracy.
fn sweep_all(model: &Model<f32>, val: &ValSet) -> Result<(f64, Vec<(String, f64)>), String> {
    let p = Predictor::new(model);
    let base = evaluate(&p, val, &tta(), 1).map_err(|e| e.to_string())?.accuracy;
    let mut points = Vec::new();
    for (t, grid) in in_range_grids() {
        let spec = SweepSpec::new(t, grid).map_err(|e| e.to_string())?;
        let curve = robustness_sweep(&p, val, &spec, &tta(), 1).map_err(|e| e.to_string())?;
        for pt in curve.points {
            if let Some(e) = pt.error {
                return Err(format!("{t} {}: {e}", pt.param));
            }
            points.push((format!("{t}={}", pt.param), pt.summary.accuracy));
        }
    }
    Ok((base, points))
}

fn worst_drop(base: f64, points: &[(String, f64)]) -> (String, f64) {
    points
        .iter()
        .map(|(n, a)| (n.clone(), base - a))
        .fold((String::new(), f64::NEG_INFINITY), |w, x| if x.1 > w.1 { x } else { w })
}

fn robustness(desk: &Desk) -> Outcome {
    let (_, val) = desk.data();
    let aug = desk.augmented();
    let plain = desk.plain();
    let start = Instant::now();
    let (aug_base, aug_points) = sweep_all(&aug.outcome.model, val)?;
    let (plain_base, plain_points) = sweep_all(&plain.outcome.model, val)?;
    let elapsed = start.elapsed() + Duration::from_secs_f64(aug.seconds + plain.seconds);
    for (name, acc) in &aug_points {
        eprintln!("    augmented {name}: {acc:.4}");
    }
    for (name, acc) in &plain_points {
        eprintln!("    no-augment {name}: {acc:.4}");
    }
    let (aug_at, aug_drop) = worst_drop(aug_base, &aug_points);
    let (plain_at, plain_drop) = worst_drop(plain_base, &plain_points);
    let detail = format!(
        "augmented base {aug_base:.4}, worst drop {:.1} pts at {aug_at} (<= 5); \
         no-augment base {plain_base:.4}, worst drop {:.1} pts at {plain_at}",
        100.0 * aug_drop,
        100.0 * plain_drop
    );
    within(
        1200.0,
        elapsed,
        check(aug_drop <= 0.05 && aug_drop < plain_drop, detail),
    )
}

fn loss_curve(desk: &Desk) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("loss.csv");
    desk.augmented()
        .outcome
        .curve
        .write_csv(&path)
        .map_err(|e| e.to_string())?;
    let curve = LossCurve::from_csv(&fs::read_to_string(&path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (Some(first), Some(last)) = (curve.at(10), curve.at(ITERATIONS)) else {
        return Err("loss CSV lacks iteration 10 or the final iteration".into());
    };
    check(
        last < 0.25 * first,
        format!("loss {first:.4} at 10, {last:.4} at {ITERATIONS} (ratio {:.3} < 0.25)", last / first),
    )
}

fn textured(h: usize, w: usize, seed: u64) -> ImageU8 {
    let mut rng = stream_for(seed, Domain::Init, 9);
    ImageU8::from_fn(h, w, |r, c| {
        let base = ((r * 7 + c * 3) % 200) as u8;
        [base, base.wrapping_add(rng.gen_range(0..40)), 255 - base]
    })
    .expect("image")
}

fn curation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let classes = vec!["cam_a".to_string(), "cam_b".to_string()];
    for c in &classes {
        fs::create_dir_all(dir.path().join(c)).map_err(|e| e.to_string())?;
    }
    let write = |class: &str, name: &str, img: &ImageU8, q: u8, sw: Option<&str>| {
        let app1 = sw.map(exif_software_payload);
        let bytes = encode_jpeg(img, q, app1.as_deref()).expect("encode");
        fs::write(dir.path().join(class).join(name), bytes).expect("write");
    };
    let a = textured(32, 48, 1);
    let b = textured(40, 40, 2);
    use Decision::*;
    use RejectReason::*;
    let expected: Vec<(&str, &str, Decision)> = vec![
        ("cam_a", "01_ok.jpg", Kept),
        ("cam_a", "02_ok_portrait.jpg", Kept),
        ("cam_a", "03_ok_camera_sw.jpg", Kept),
        ("cam_a", "04_photoshop.jpg", Rejected(SoftwareBlacklist)),
        ("cam_a", "05_q93.jpg", Rejected(LowQuality)),
        ("cam_a", "06_dims.jpg", Rejected(Dimensions)),
        ("cam_b", "07_ok.jpg", Kept),
        ("cam_b", "08_ok_q95.jpg", Kept),
        ("cam_b", "09_photoshop_q93.jpg", Rejected(SoftwareBlacklist)),
        ("cam_b", "10_q93.jpg", Rejected(LowQuality)),
        ("cam_b", "11_dims.jpg", Rejected(Dimensions)),
        ("cam_b", "12_q93_dims.jpg", Rejected(LowQuality)),
    ];
    write("cam_a", "01_ok.jpg", &a, 97, None);
    write("cam_a", "02_ok_portrait.jpg", &d4_apply(&a, D4::R90), 96, None);
    write("cam_a", "03_ok_camera_sw.jpg", &a, 98, Some("Camera Firmware 1.2"));
    write("cam_a", "04_photoshop.jpg", &a, 98, Some("Adobe Photoshop CC 2017 (Windows)"));
    // recompression at quality 93 of an accepted original
    let reloaded = ImageU8::decode(&encode_jpeg(&a, 97, None).expect("encode")).expect("decode");
    write("cam_a", "05_q93.jpg", &reloaded, 93, None);
    write("cam_a", "06_dims.jpg", &textured(40, 40, 3), 97, None);
    write("cam_b", "07_ok.jpg", &b, 99, None);
    write("cam_b", "08_ok_q95.jpg", &b, 95, None);
    write("cam_b", "09_photoshop_q93.jpg", &b, 93, Some("Adobe Photoshop 7.0"));
    write("cam_b", "10_q93.jpg", &b, 93, None);
    write("cam_b", "11_dims.jpg", &a, 97, None);
    write("cam_b", "12_q93_dims.jpg", &a, 93, None);

    let mut rules = CurationRules::default();
    rules.dimension_whitelist.insert("cam_a".into(), vec![(48, 32)]);
    rules.dimension_whitelist.insert("cam_b".into(), vec![(40, 40)]);
    let (records, report) = curate(dir.path(), &rules, &classes, 1).map_err(|e| e.to_string())?;
    let got: Vec<(String, Decision)> = report
        .decisions
        .iter()
        .map(|(p, d)| (p.file_name().unwrap_or_default().to_string_lossy().into_owned(), d.clone()))
        .collect();
    let want: Vec<(String, Decision)> = expected.iter().map(|(_, n, d)| (n.to_string(), d.clone())).collect();
    if got != want {
        return Err(format!("decisions differ:\n got {got:?}\nwant {want:?}"));
    }
    if records.len() != 5 || report.kept + report.rejected.values().sum::<usize>() != 12 {
        return Err(format!("{} records, report {}", records.len(), report.summary()));
    }

    let mut qualities = Vec::new();
    for q in [70u8, 80, 90, 95] {
        let est = estimate_jpeg_quality(&encode_jpeg(&a, q, None).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        if est != q {
            return Err(format!("quality {q} estimated as {est}"));
        }
        qualities.push(est.to_string());
    }
    Ok(format!(
        "12 files: {} ; quality round trip {}",
        report.summary(),
        qualities.join("/")
    ))
}

const REPRO_CONFIG: &str = r#"
[synth]
size = 48
train_per_class = 4
val_per_class = 1
noise_sigma = 30.0

[train]
pre_crop = 40
train_crop = 24
batch_size = 3
iterations = 30
log_every = 10

[train.model]
stem_channels = 4

[[train.model.blocks]]
num_layers = 2
growth_rate = 4

[[train.model.blocks]]
num_layers = 2
growth_rate = 4
"#;

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, REPRO_CONFIG).map_err(|e| e.to_string())?;
    let manifest = dir.path().join("synth.jsonl");
    let camid = |args: &[&Path]| {
        let out = Command::new(env!("CARGO_BIN_EXE_camid"))
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(String::from_utf8_lossy(&out.stderr).into_owned())
        }
    };
    let p = Path::new;
    camid(&[
        p("synth"),
        p("--config"),
        &cfg,
        p("--out-dir"),
        &dir.path().join("corpus"),
        p("--out"),
        &manifest,
    ])?;
    let run = |name: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let out = dir.path().join(name);
        camid(&[
            p("train"),
            p("--config"),
            &cfg,
            p("--seed"),
            p("42"),
            p("--workers"),
            p("1"),
            p("--precision"),
            p("f64"),
            p("--manifest"),
            &manifest,
            p("--out-dir"),
            &out,
        ])?;
        let csv = fs::read(out.join("loss.csv")).map_err(|e| e.to_string())?;
        let ckpt = fs::read(out.join("model.cmid")).map_err(|e| e.to_string())?;
        Ok((csv, ckpt))
    };
    let (csv_a, ckpt_a) = run("a")?;
    let (csv_b, ckpt_b) = run("b")?;
    check(
        csv_a == csv_b && ckpt_a == ckpt_b,
        format!(
            "loss CSV {} bytes identical: {}, checkpoint {} bytes identical: {}",
            csv_a.len(),
            csv_a == csv_b,
            ckpt_a.len(),
            ckpt_a == ckpt_b
        ),
    )
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let desk = Desk::default();
    let criteria: [(&str, &dyn Fn() -> Outcome); 10] = [
        ("gradient correctness", &gradients),
        ("D4 group laws", &dihedral),
        ("TTA invariance", &|| tta_invariance(&desk)),
        ("weighted accuracy oracle", &metric),
        ("loss reference values", &loss_values),
        ("desk-scale end to end", &|| end_to_end(&desk)),
        ("robustness vs no augmentation", &|| robustness(&desk)),
        ("loss curve decrease", &|| loss_curve(&desk)),
        ("curation suite", &curation),
        ("reproducible training", &reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        eprintln!("criterion {id}: {name} ...");
        match run() {
            Ok(detail) => println!("PASS criterion {id:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id:>2} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
