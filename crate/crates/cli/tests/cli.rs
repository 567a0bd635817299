use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use camid_core::image::ImageU8;
use tempfile::TempDir;

const TINY: &str = r#"
seed = 3

[synth]
size = 40
train_per_class = 4
val_per_class = 2
noise_sigma = 30.0

[train]
pre_crop = 32
train_crop = 16
batch_size = 2
iterations = 50
log_every = 10

[train.model]
in_channels = 3
stem_channels = 4
num_classes = 3

[[train.model.blocks]]
num_layers = 1
growth_rate = 4

[[train.model.blocks]]
num_layers = 1
growth_rate = 4

[tta]
crop = 16
"#;

fn camid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camid"))
        .args(args)
        .output()
        .expect("spawn camid")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

struct Fixture {
    dir: TempDir,
    config: PathBuf,
    manifest: PathBuf,
}

fn fixture() -> Fixture {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, TINY).unwrap();
    let manifest = dir.path().join("synth.jsonl");
    let o = camid(&[
        "synth",
        "--config",
        s(&config),
        "--out-dir",
        s(&dir.path().join("corpus")),
        "--out",
        s(&manifest),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    Fixture { dir, config, manifest }
}

fn train(f: &Fixture, out: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out_dir = f.dir.path().join(out);
    let mut args = vec![
        "train",
        "--config",
        s(&f.config),
        "--manifest",
        s(&f.manifest),
        "--out-dir",
        s(&out_dir),
    ];
    args.extend_from_slice(extra);
    (camid(&args), out_dir)
}

#[test]
fn help_lists_subcommands_and_global_flags() {
    let o = camid(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for word in [
        "curate", "split", "build-eval", "train", "predict", "evaluate", "ablate", "gradcheck", "--config",
        "--seed", "--workers", "--precision",
    ] {
        assert!(text.contains(word), "--help lacks {word}:\n{text}");
    }
}

#[test]
fn bad_flag_exits_one() {
    assert_eq!(camid(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(camid(&[]).status.code(), Some(1));
}

#[test]
fn dump_config_round_trips() {
    let dir = TempDir::new().unwrap();
    let o = camid(&["--dump-config", "--seed", "11"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("seed = 11"), "{text}");
    let path = dir.path().join("dumped.toml");
    fs::write(&path, &text).unwrap();
    let again = camid(&["--dump-config", "--config", s(&path)]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(stdout(&again), text);
}

#[test]
fn malformed_config_names_the_key() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[curation]\nmin_jpeg_quality = 95\nwhitelist_typo = []\n").unwrap();
    let o = camid(&[
        "curate",
        "--config",
        s(&path),
        "--root",
        s(dir.path()),
        "--out",
        s(&dir.path().join("m.jsonl")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("whitelist_typo"), "{}", stderr(&o));
}

#[test]
fn curate_exit_codes() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("corpus");
    fs::create_dir_all(root.join("cam_a")).unwrap();
    fs::create_dir_all(root.join("cam_b")).unwrap();
    // PNGs are not JPEG camera originals, so everything is rejected
    let img = ImageU8::new(8, 8, vec![9; 8 * 8 * 3]).unwrap();
    img.save_png(root.join("cam_a").join("x.png")).unwrap();
    img.save_png(root.join("cam_b").join("y.png")).unwrap();
    let out = dir.path().join("m.jsonl");
    let report = dir.path().join("report.tsv");
    let o = camid(&["curate", "--root", s(&root), "--out", s(&out), "--report", s(&report)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let tsv = fs::read_to_string(&report).unwrap();
    assert_eq!(tsv.lines().count(), 3, "{tsv}");

    let o = camid(&["curate", "--root", s(&dir.path().join("missing")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_writes_checkpoint_and_windowed_loss() {
    let f = fixture();
    let (o, out) = train(&f, "run", &["--workers", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("model.cmid").is_file());
    let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iteration,loss"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5, "{csv}");
    assert!(rows[4].starts_with("50,"));
}

#[test]
fn train_is_deterministic_for_a_fixed_seed() {
    let f = fixture();
    let (a, da) = train(&f, "a", &["--seed", "9", "--workers", "1", "--iterations", "20"]);
    let (b, db) = train(&f, "b", &["--seed", "9", "--workers", "1", "--iterations", "20"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(fs::read(da.join("loss.csv")).unwrap(), fs::read(db.join("loss.csv")).unwrap());
    assert_eq!(fs::read(da.join("model.cmid")).unwrap(), fs::read(db.join("model.cmid")).unwrap());
}

#[test]
fn missing_manifest_exits_one() {
    let dir = TempDir::new().unwrap();
    let o = camid(&[
        "train",
        "--manifest",
        s(&dir.path().join("nope.jsonl")),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
}

#[test]
fn evaluate_predict_and_ablate() {
    let f = fixture();
    let (o, out) = train(&f, "run", &["--iterations", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = out.join("model.cmid");
    let cfg = s(&f.config);

    let o = camid(&[
        "evaluate",
        "--config",
        cfg,
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&f.manifest),
        "--split",
        "val",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("weighted_accuracy=")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("accuracy=")), "{text}");
    assert!(text.contains("n_images=6"), "{text}");

    let preds = f.dir.path().join("preds.csv");
    let o = camid(&[
        "predict",
        "--config",
        cfg,
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&f.manifest),
        "--split",
        "val",
        "--out",
        s(&preds),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&preds).unwrap();
    assert!(csv.starts_with("path,label,altered,pred_class,p0,p1,p2\n"), "{csv}");
    assert_eq!(csv.lines().count(), 7);

    let sweep = f.dir.path().join("gamma.csv");
    let o = camid(&[
        "ablate",
        "sweep",
        "--config",
        cfg,
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&f.manifest),
        "--transform",
        "gamma",
        "--grid",
        "0.8,1.0,1.2",
        "--out",
        s(&sweep),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&sweep).unwrap();
    let row = |p: &str| -> String {
        let line = csv
            .lines()
            .find(|l| l.split(',').nth(1) == Some(p))
            .unwrap_or_else(|| panic!("no row {p} in {csv}"));
        line.split(',').skip(2).collect::<Vec<_>>().join(",")
    };
    // the identity point reproduces the unmanipulated evaluation
    let base = camid(&[
        "ablate",
        "sweep",
        "--config",
        cfg,
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&f.manifest),
        "--transform",
        "contrast",
        "--grid",
        "1.0",
        "--out",
        s(&f.dir.path().join("c.csv")),
    ]);
    assert!(base.status.success());
    let base_row: String = stdout(&base).lines().nth(1).unwrap().split(',').skip(2).collect::<Vec<_>>().join(",");
    assert_eq!(row("1"), base_row);
}

#[test]
fn class_count_mismatch_is_reported() {
    let f = fixture();
    let (o, out) = train(&f, "run", &["--iterations", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    // a manifest with only two of the three classes
    let text = fs::read_to_string(&f.manifest).unwrap();
    let two: String = text
        .lines()
        .filter(|l| !l.contains("cam_c"))
        .map(|l| format!("{l}\n"))
        .collect();
    let m2 = f.dir.path().join("two.jsonl");
    fs::write(&m2, two).unwrap();
    let o = camid(&[
        "evaluate",
        "--config",
        s(&f.config),
        "--checkpoint",
        s(&out.join("model.cmid")),
        "--manifest",
        s(&m2),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("3 classes") && err.contains("2"), "{err}");
}

#[test]
fn split_and_build_eval() {
    let f = fixture();
    let split = f.dir.path().join("split.jsonl");
    let o = camid(&[
        "split",
        "--config",
        s(&f.config),
        "--manifest",
        s(&f.manifest),
        "--val-per-class",
        "1",
        "--out",
        s(&split),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "train=15 val=3");

    let eval = f.dir.path().join("eval.jsonl");
    let o = camid(&[
        "build-eval",
        "--config",
        s(&f.config),
        "--manifest",
        s(&split),
        "--crop",
        "32",
        "--out-dir",
        s(&f.dir.path().join("eval")),
        "--out",
        s(&eval),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("images=3 "), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(&eval).unwrap().lines().count(), 3);
}

#[test]
fn gradcheck_passes_for_one_seed() {
    let o = camid(&["gradcheck", "--seeds", "1"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("failures=0"));
}
