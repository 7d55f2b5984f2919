use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use roadwatch::data::{FLOW_CACHE, RGB_CACHE};
use roadwatch::synthetic::{dataset, scene, write_dataset, SceneConfig};
use roadwatch::tensor_file::read_tensor;
use roadwatch::video::ppm;
use roadwatch::{FrameSequence, Label, Model, Split, Tensor};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadwatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Hash of every file under `dir`, keyed by relative path.
fn tree_hashes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let h = Sha256::digest(fs::read(&p).unwrap()).to_vec();
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), h);
            }
        }
    }
    out
}

/// Clips alternate accident / normal, so every split in `splits` that
/// receives two consecutive clips is balanced.
fn synthetic_set(dir: &Path, count: usize, seed: u64, splits: &[Split]) -> PathBuf {
    let clips = dataset(count, &SceneConfig::default(), seed).unwrap();
    write_dataset(dir, &clips, splits).unwrap();
    dir.join("manifest.csv")
}

fn stream_dir(dir: &Path, frames: usize, fps: f64, size: usize) -> PathBuf {
    let seq = FrameSequence::new(
        (0..frames)
            .map(|t| Tensor::from_fn(vec![size, size, 3], |i| ((i * 31 + t * 7) % 256) as f32 / 255.0).unwrap())
            .collect(),
        fps,
        "cam",
    )
    .unwrap();
    let p = dir.join("cam");
    ppm::write_frame_dir(&p, &seq).unwrap();
    p
}

const TOY: &[&str] = &["--toy", "--flow-iterations", "5"];

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["bench", "--variant", "two_stream_xl", "--reps", "1"])), 1);
    assert_eq!(code(&run(&["bench", "--toy", "--reps", "0"])), 1);

    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("v.cfg");
    fs::write(&cfg, "name=rgb_only\n").unwrap();
    let o = run(&[
        "bench",
        "--toy",
        "--reps",
        "1",
        "--variant",
        "trainable_twostream",
        "--config",
        s(&cfg),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("conflicts"), "{}", stderr(&o));
    fs::write(&cfg, "input.depth = many\n").unwrap();
    assert_eq!(code(&run(&["bench", "--toy", "--reps", "1", "--config", s(&cfg)])), 1);
}

#[test]
fn flags_override_config_file_over_preset() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("v.cfg");
    fs::write(&cfg, "name=rgb_only\ninput.depth=6\n").unwrap();
    let base = ["bench", "--toy", "--reps", "1", "--warmup", "0"];
    let preset = stdout(&run(&[&base[..], &["--variant", "rgb_only"]].concat()));
    assert!(preset.contains("#variant=rgb_only") && preset.contains("input=8x32x32"), "{preset}");
    let file = stdout(&run(&[&base[..], &["--config", s(&cfg)]].concat()));
    assert!(file.contains("#variant=rgb_only") && file.contains("input=6x32x32"), "{file}");
    let flag = stdout(&run(&[&base[..], &["--config", s(&cfg), "--depth", "4"]].concat()));
    assert!(flag.contains("input=4x32x32"), "{flag}");
}

#[test]
fn preprocess_stream_into_clip_caches() {
    let tmp = TempDir::new().unwrap();
    let input = stream_dir(tmp.path(), 450, 30.0, 20);
    let out = tmp.path().join("cache");
    let args = [
        "preprocess",
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--stride",
        "5",
        "--frame-size",
        "16",
        "--flow-iterations",
        "5",
    ];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("clips=3 frames_dropped=0"), "{}", stdout(&o));
    for k in 0..3 {
        let dir = out.join(format!("cam_c{k:03}"));
        assert_eq!(read_tensor(dir.join(RGB_CACHE)).unwrap().dims(), &[30, 16, 16, 3]);
        assert_eq!(read_tensor(dir.join(FLOW_CACHE)).unwrap().dims(), &[30, 16, 16, 2]);
    }
    let first = tree_hashes(&out);
    assert_eq!(first.len(), 9);
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(tree_hashes(&out), first);

    let rgb = run(&[
        "preprocess",
        "--input",
        s(&input),
        "--out",
        s(&tmp.path().join("rgb")),
        "--variant",
        "rgb_only",
        "--frame-size",
        "16",
    ]);
    assert_eq!(code(&rgb), 0);
    assert!(!tmp.path().join("rgb/cam_c000").join(FLOW_CACHE).exists());
}

#[test]
fn preprocess_rejects_empty_and_short_input() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = run(&["preprocess", "--input", s(&empty), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let short = stream_dir(&tmp.path().join("short"), 100, 30.0, 8);
    assert_eq!(
        code(&run(&["preprocess", "--input", s(&short), "--out", s(&tmp.path().join("o"))])),
        2
    );
    fs::write(short.join(ppm::META_FILE), "fps=fast\n").unwrap();
    assert_eq!(
        code(&run(&["preprocess", "--input", s(&short), "--out", s(&tmp.path().join("o"))])),
        2
    );
}

fn preprocessed(tmp: &Path, variant: &str) -> PathBuf {
    let manifest = synthetic_set(&tmp.join("raw"), 8, 3, &[Split::Train, Split::Train, Split::Val, Split::Val]);
    let out = tmp.join(format!("cache_{variant}"));
    let o = run(&[
        &["preprocess", "--manifest", s(&manifest), "--out", s(&out), "--variant", variant][..],
        TOY,
    ]
    .concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("manifest.csv")
}

fn train_args<'a>(manifest: &'a Path, out: &'a Path, extra: &[&'a str]) -> Vec<&'a str> {
    [
        &["train", "--manifest", s(manifest), "--out", s(out), "--epochs", "2"][..],
        TOY,
        extra,
    ]
    .concat()
}

#[test]
fn seeded_training_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let manifest = preprocessed(tmp.path(), "trainable_twostream");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&train_args(&manifest, out, &["--seed", "7"]));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("epoch=2"));
    }
    let ha = tree_hashes(&a);
    assert!(ha.contains_key(Path::new("history.csv")));
    assert_eq!(ha, tree_hashes(&b));
    let c = tmp.path().join("c");
    assert_eq!(code(&run(&train_args(&manifest, &c, &["--seed", "8"]))), 0);
    assert_ne!(ha, tree_hashes(&c));
}

#[test]
fn zero_learning_rate_warns_and_keeps_weights() {
    let tmp = TempDir::new().unwrap();
    let manifest = preprocessed(tmp.path(), "trainable_twostream");
    let out = tmp.path().join("w");
    let o = run(&train_args(&manifest, &out, &["--lr", "0", "--seed", "3"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: learning rate is 0"), "{}", stderr(&o));
    let trained = Model::load(&out).unwrap();
    let fresh = Model::build(trained.config.clone(), 3).unwrap();
    for ((name, p), (_, q)) in trained.parameters().into_iter().zip(fresh.parameters()) {
        assert_eq!(p.value, q.value, "{name}");
    }
}

#[test]
fn training_data_errors_exit_two_and_divergence_exits_three() {
    let tmp = TempDir::new().unwrap();
    let rgb_manifest = preprocessed(tmp.path(), "rgb_only");
    let o = run(&train_args(
        &rgb_manifest,
        &tmp.path().join("w"),
        &["--variant", "trainable_twostream"],
    ));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("flow cache"), "{}", stderr(&o));
    assert_eq!(
        code(&run(&train_args(&rgb_manifest, &tmp.path().join("w"), &["--variant", "rgb_only"]))),
        0
    );

    let text = fs::read_to_string(&rgb_manifest).unwrap().replace("clips/", "missing/");
    let broken = tmp.path().join("broken.csv");
    fs::write(&broken, text).unwrap();
    assert_eq!(
        code(&run(&train_args(&broken, &tmp.path().join("w"), &["--variant", "rgb_only"]))),
        2
    );
    assert_eq!(code(&run(&train_args(&tmp.path().join("none.csv"), &tmp.path().join("w"), &[]))), 2);

    let o = run(&train_args(
        &rgb_manifest,
        &tmp.path().join("w"),
        &["--variant", "rgb_only", "--lr", "1e12"],
    ));
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn eval_report_and_comparison_table() {
    let tmp = TempDir::new().unwrap();
    let manifest = synthetic_set(&tmp.path().join("raw"), 8, 5, &[Split::Test]);
    let mut reports = Vec::new();
    for variant in ["rgb_only", "nontrainable_twostream"] {
        let out = tmp.path().join(format!("{variant}.txt"));
        let o = run(&[
            &["eval", "--manifest", s(&manifest), "--variant", variant, "--out", s(&out)][..],
            TOY,
        ]
        .concat());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let text = stdout(&o);
        assert_eq!(fs::read_to_string(&out).unwrap(), text);
        for key in ["precision=", "recall=", "f1=", "accuracy=", "map="] {
            assert!(text.lines().any(|l| l.starts_with(key)), "{key} missing from {text}");
        }
        assert!(text.starts_with(&format!("#variant={variant}\n")));
        reports.push(out);
    }
    let o = run(&["table", s(&reports[0]), s(&reports[1])]);
    assert_eq!(code(&o), 0);
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(table.lines().nth(2).unwrap().starts_with("| nontrainable_twostream |"));
    let bad = run(&[&["eval", "--manifest", s(&manifest), "--split", "holdout"][..], TOY].concat());
    assert_eq!(code(&bad), 1);
}

#[test]
fn detect_streams_windows_then_verdict() {
    let tmp = TempDir::new().unwrap();
    let input = stream_dir(tmp.path(), 30, 30.0, 24);
    let base = [&["detect", "--input", s(&input), "--frame-size", "24"][..], TOY].concat();

    let o = run(&[&base[..], &["--depth", "30"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    let fields: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(fields[..2], ["cam", "0"]);
    let p: f64 = fields[2].parse().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(lines[1].starts_with("#verdict cam "));

    let o = run(&[&base[..], &["--depth", "8", "--window-stride", "4", "--threshold", "1.0"]].concat());
    let text = stdout(&o);
    let starts: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(starts, ["0", "4", "8", "12", "16", "20"]);
    assert!(text.contains("#verdict cam normal (threshold 1, 6 windows)"), "{text}");

    assert_eq!(code(&run(&[&base[..], &["--depth", "31"]].concat())), 2);
    assert_eq!(code(&run(&[&base[..], &["--threshold", "1.5"]].concat())), 1);
}

#[test]
fn detect_flags_an_overfit_accident_clip() {
    let tmp = TempDir::new().unwrap();
    let clip = scene(Label::Accident, &SceneConfig::default(), 11).unwrap();
    let data = tmp.path().join("one");
    let manifest = write_dataset(&data, &[(clip, Label::Accident)], &[Split::Train]).unwrap();
    assert_eq!(manifest.rows.len(), 1);
    let weights = tmp.path().join("w");
    let o = run(&[
        &["train", "--manifest", s(&data.join("manifest.csv")), "--out", s(&weights)][..],
        TOY,
        &["--epochs", "20", "--lr", "1e-3"],
    ]
    .concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let input = data.join("clips").join(&manifest.rows[0].clip_id);
    let o = run(&["detect", "--input", s(&input), "--weights", s(&weights)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains(" accident (threshold 0.5"), "{}", stdout(&o));

    let o = run(&["detect", "--input", s(&input), "--weights", s(&weights), "--frame-size", "64"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bench_reports_order_statistics_and_stages() {
    let o = run(&[&["bench", "--reps", "1", "--warmup", "0"][..], TOY].concat());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("#note=single repetition"));

    let o = run(&[&["bench", "--reps", "15", "--warmup", "2"][..], TOY].concat());
    let text = stdout(&o);
    assert!(!text.contains("#note"));
    let get = |k: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{k}=")))
            .unwrap_or_else(|| panic!("{k} missing"))
            .parse()
            .unwrap()
    };
    assert!(get("median_ms") <= get("p95_ms"));
    let stages = get("flow_median_ms") + get("backbone_median_ms") + get("head_median_ms");
    assert!((stages - get("median_ms")).abs() <= 0.1 * get("median_ms"), "{text}");
}

#[test]
fn shipped_configs_match_presets() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for v in roadwatch::VARIANTS {
        let file = dir.join(format!("{v}.cfg"));
        let o = run(&["config", "--variant", v]);
        assert_eq!(code(&o), 0);
        assert_eq!(stdout(&o), fs::read_to_string(&file).unwrap(), "{v}");
        let o = run(&["config", "--config", s(&file), "--config", s(&dir.join("toy.cfg"))]);
        assert_eq!(code(&o), 1, "--config is given once");
        let toy = run(&["config", "--variant", v, "--config", s(&dir.join("toy.cfg"))]);
        assert_eq!(
            stdout(&toy),
            stdout(&run(&["config", "--variant", v, "--toy", "--flow-iterations", "30"])).replace("train.epochs=30", "train.epochs=50")
        );
    }
}
