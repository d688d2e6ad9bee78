//! End-to-end behaviour of the command-line front end on a tiny model.

use std::path::{Path, PathBuf};
use std::process::Command;

use diffjscc::cli::run_with;
use diffjscc::pipeline::data::write_ppm;
use diffjscc::pipeline::{load_checkpoint, synth_dataset};
use diffjscc::link::decode_frame;

const TINY: &str = "\
# small enough for a debug build
image_size = 16
latent_channels = 4
hyper_channels = 4
analysis_width = 6
jscc_width = 6
unet_width1 = 4
unet_width2 = 8
unet_blocks = 1
time_dim = 8
k_min = 1
k_max = 2
batch_size = 2
steps_stage1 = 3
steps_stage2 = 3
steps_stage3 = 3
precision = 64
dataset = synth:8
";

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(args: &[&str]) -> Run {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("diffjscc").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    Run { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the tiny config, two PPM images and a fully trained checkpoint.
fn fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let images = dir.join("images");
    std::fs::create_dir(&images).unwrap();
    for (i, img) in synth_dataset(5, 2, 16).unwrap().iter().enumerate() {
        write_ppm(img, &images.join(format!("img{i}.ppm"))).unwrap();
    }
    let ckpt = dir.join("model.cdmj");
    let r = run(&["train", "--config", s(&cfg), "--out", s(&ckpt), "--seed", "3"]);
    assert_eq!(r.code, 0, "train failed: {}", r.err);
    (cfg, images, ckpt)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).code, 0);
    assert_eq!(run(&["--version"]).code, 0);
    assert!(run(&["train", "--help"]).out.contains("--stage"));
}

#[test]
fn bad_arguments_exit_one() {
    let r = run(&["train"]);
    assert_eq!(r.code, 1);
    assert!(!r.err.is_empty());
    assert_eq!(run(&["frobnicate"]).code, 1);
    assert_eq!(run(&["train", "--out", "x", "--stage", "4"]).code, 1);
    assert_eq!(run(&["eval", "--ckpt", "x", "--images", "y", "--precision", "16"]).code, 1);
}

#[test]
fn missing_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let gone = dir.path().join("absent.cdmj");
    let r = run(&["transmit", "--ckpt", s(&gone), "--in", "x.ppm", "--out", "y.ppm"]);
    assert_eq!(r.code, 2);
    assert_eq!(r.err.lines().count(), 1, "one-line diagnostic expected: {:?}", r.err);
    let r = run(&["train", "--config", s(&dir.path().join("absent.cfg")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(r.code, 2);
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let r = run(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o.cdmj"))]);
    assert_eq!(r.code, 1);
    assert!(r.err.contains("no_such_key"));
}

#[test]
fn stage_order_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("s.cdmj");
    assert_eq!(run(&["train", "--config", s(&cfg), "--out", s(&out), "--stage", "2"]).code, 1);
    assert_eq!(run(&["train", "--config", s(&cfg), "--out", s(&out), "--stage", "1"]).code, 0);
    assert_eq!(load_checkpoint(&out).unwrap().stage, 1);
    let s2 = dir.path().join("s2.cdmj");
    assert_eq!(run(&["train", "--ckpt", s(&out), "--out", s(&s2), "--stage", "3"]).code, 1);
    assert_eq!(run(&["train", "--ckpt", s(&out), "--out", s(&s2), "--stage", "2"]).code, 0);
    assert_eq!(load_checkpoint(&s2).unwrap().stage, 2);
    // A stage-1 model cannot transmit.
    let img = dir.path().join("a.ppm");
    write_ppm(&synth_dataset(1, 1, 16).unwrap()[0], &img).unwrap();
    let r = run(&["transmit", "--ckpt", s(&out), "--in", s(&img), "--out", s(&dir.path().join("r.ppm"))]);
    assert_eq!(r.code, 1);
}

#[test]
fn train_echoes_resolved_config_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("m.cdmj");
    let r = run(&["train", "--config", s(&cfg), "--out", s(&out), "--stage", "1", "--steps", "2", "--seed", "11"]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.contains("seed = 11"));
    assert!(r.out.contains("steps_stage1 = 2"));
    let ckpt = load_checkpoint(&out).unwrap();
    assert_eq!(ckpt.config.seed, 11);
    assert_eq!(ckpt.config.image_size, 16);
}

#[test]
fn training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let (a, b) = (dir.path().join("a.cdmj"), dir.path().join("b.cdmj"));
    for out in [&a, &b] {
        assert_eq!(run(&["train", "--config", s(&cfg), "--out", s(out), "--seed", "9"]).code, 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn transmit_reproduces_outputs_and_writes_only_named_paths() {
    let dir = tempfile::tempdir().unwrap();
    let (_, images, ckpt) = fixture(dir.path());
    let input = images.join("img0.ppm");
    let work = dir.path().join("work");
    std::fs::create_dir(&work).unwrap();
    let mut outputs = Vec::new();
    for round in 0..2 {
        let (rec, frame) = (work.join(format!("rec{round}.ppm")), work.join(format!("frame{round}.cjsf")));
        let r = run(&[
            "transmit", "--ckpt", s(&ckpt), "--in", s(&input), "--snr", "10", "--seed", "7", "--out", s(&rec), "--frame", s(&frame),
        ]);
        assert_eq!(r.code, 0, "{}", r.err);
        assert!(r.out.contains("k_total"));
        outputs.push((std::fs::read(&rec).unwrap(), std::fs::read(&frame).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let mut written: Vec<String> = std::fs::read_dir(&work).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    written.sort();
    assert_eq!(written, ["frame0.cjsf", "frame1.cjsf", "rec0.ppm", "rec1.ppm"]);
    assert!(decode_frame(&outputs[0].1, 1, 2).is_ok());
    assert!(outputs[0].0.starts_with(b"P6"));

    // A different channel seed changes the received frame.
    let frame = work.join("other.cjsf");
    let r = run(&[
        "transmit", "--ckpt", s(&ckpt), "--in", s(&input), "--snr", "10", "--seed", "8", "--out", s(&work.join("o.ppm")), "--frame", s(&frame),
    ]);
    assert_eq!(r.code, 0);
    assert_ne!(std::fs::read(&frame).unwrap(), outputs[0].1);
}

#[test]
fn malformed_image_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, ckpt) = fixture(dir.path());
    let bad = dir.path().join("bad.ppm");
    std::fs::write(&bad, b"P6\n4 4\n255\n\x01\x02").unwrap();
    let r = run(&["transmit", "--ckpt", s(&ckpt), "--in", s(&bad), "--out", s(&dir.path().join("r.ppm"))]);
    assert_eq!(r.code, 1);
    assert!(r.err.contains("bad.ppm"));
}

#[test]
fn eval_csv_has_a_row_per_image_and_snr_plus_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (_, images, ckpt) = fixture(dir.path());
    let csv = dir.path().join("out.csv");
    let r = run(&["eval", "--ckpt", s(&ckpt), "--images", s(&images), "--snr", "0,5,10,15", "--csv", s(&csv)]);
    assert_eq!(r.code, 0, "{}", r.err);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "image,snr_db,cbr,psnr_db,proxy_perc,rate_bits");
    let rows = &lines[1..];
    assert_eq!(rows.len(), 2 * 4 + 1);
    assert!(rows.iter().all(|l| l.split(',').count() == 6));
    assert!(rows[8].starts_with("mean,,"));
    assert!(r.out.contains("mean psnr at 0 dB"));

    // Without --csv the table alone goes to stdout.
    let r = run(&["eval", "--ckpt", s(&ckpt), "--images", s(&images), "--snr", "3"]);
    assert_eq!(r.code, 0);
    assert_eq!(r.out.lines().count(), 1 + 2 + 1);
    assert!(r.out.starts_with("image,"));
    assert!(r.err.contains("mean psnr at 3 dB"));
}

#[test]
fn eval_rejects_bad_snr_list() {
    let dir = tempfile::tempdir().unwrap();
    let (_, images, ckpt) = fixture(dir.path());
    let r = run(&["eval", "--ckpt", s(&ckpt), "--images", s(&images), "--snr", "0,,5"]);
    assert_eq!(r.code, 1);
    let r = run(&["eval", "--ckpt", s(&ckpt), "--images", s(&dir.path().join("nowhere")), "--snr", "0"]);
    assert_eq!(r.code, 2);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_diffjscc");
    assert_eq!(Command::new(bin).arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(Command::new(bin).arg("train").output().unwrap().status.code(), Some(1));
    let out = Command::new(bin).args(["transmit", "--ckpt", "/nonexistent/x.cdmj", "--in", "a", "--out", "b"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}
