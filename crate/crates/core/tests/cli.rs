use std::path::Path;
use std::process::{Command, Output};

use spikegs::io;
use spikegs::GrayImage;

fn spikegs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikegs")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = spikegs(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = spikegs(args);
    assert_eq!(out.status.code(), Some(1), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn eval_identical_images() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.imgf");
    io::save_image(&a, &GrayImage::from_fn(16, 16, |x, y| ((x * 3 + y) % 11) as f64 / 10.0)).unwrap();
    let csv = ok(&["eval", "--reference", s(&a), "--estimate", s(&a)]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("reference,estimate,psnr,ssim"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[2], "inf");
    assert_eq!(row[3], "100.0000");
}

#[test]
fn constant_stream_tfp_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let spk = dir.path().join("c.spk");
    let img = dir.path().join("c.imgf");
    ok(&[
        "simulate",
        "--source",
        "constant",
        "--set",
        "source.intensity=0.3",
        "--set",
        "source.width=8",
        "--set",
        "source.height=6",
        "--set",
        "source.readouts=200",
        "--set",
        "cam.mode=ideal",
        "--out",
        s(&spk),
    ]);
    ok(&["recon", "tfp", "--stream", s(&spk), "--center", "100", "--out", s(&img)]);
    let r = io::load_image(&img).unwrap();
    assert_eq!((r.width(), r.height()), (8, 6));
    assert!(r.as_slice().iter().all(|v| (v - 0.3).abs() <= 1.0 / 33.0));

    ok(&["recon", "tfi", "--stream", s(&spk), "--center", "100", "--out", s(&img)]);
    let r = io::load_image(&img).unwrap();
    assert!(r.as_slice().iter().all(|v| (v - 0.3).abs() < 0.05));
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.spk");
    let out = dir.path().join("o.imgf");
    let err = fails(&[
        "recon",
        "tfp",
        "--stream",
        s(&missing),
        "--center",
        "5",
        "--out",
        s(&out),
    ]);
    assert!(err.contains("nowhere.spk"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.spk");
    let err = fails(&[
        "simulate",
        "--source",
        "constant",
        "--set",
        "cam.thresold=2",
        "--out",
        s(&out),
    ]);
    assert!(err.contains("cam.thresold"), "{err}");
}

#[test]
fn config_file_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "this line has no equals sign\n").unwrap();
    let out = dir.path().join("o.spk");
    let err = fails(&[
        "--config",
        s(&cfg),
        "simulate",
        "--source",
        "constant",
        "--out",
        s(&out),
    ]);
    assert!(err.contains("bad.cfg"), "{err}");
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let cfg = p("tiny.cfg");
    std::fs::write(
        &cfg,
        "scene.count = 4\ntraj.width = 24\ntraj.height = 20\ntraj.focal = 24\ntraj.readouts = 60\n",
    )
    .unwrap();
    let c = s(&cfg);
    ok(&[
        "--config",
        c,
        "scenegen",
        "--scene-out",
        s(&p("scene.gsc")),
        "--traj-out",
        s(&p("t.trj")),
        "--frames-dir",
        s(&p("frames")),
    ]);
    assert_eq!(std::fs::read_dir(p("frames")).unwrap().count(), 60);
    ok(&[
        "simulate",
        "--scene",
        s(&p("scene.gsc")),
        "--traj",
        s(&p("t.trj")),
        "--set",
        "cam.mode=poisson",
        "--set",
        "cam.photon_scale=2",
        "--out",
        s(&p("s.spk")),
    ]);
    let stream = io::load_spk(p("s.spk")).unwrap();
    assert_eq!((stream.width(), stream.height(), stream.num_readouts()), (24, 20, 60));

    let sim_cfg = p("sim.cfg");
    std::fs::write(
        &sim_cfg,
        "sim.hidden = 4\nsim.window = 9\nsim.steps = 2\nsim.batch = 1\nsim.crop = 12\n",
    )
    .unwrap();
    let c = s(&sim_cfg);
    ok(&[
        "--config",
        c,
        "train-sim",
        "--stream",
        s(&p("s.spk")),
        "--out",
        s(&p("w.sim")),
    ]);
    ok(&[
        "recon",
        "sim",
        "--stream",
        s(&p("s.spk")),
        "--center",
        "30",
        "--weights",
        s(&p("w.sim")),
        "--out",
        s(&p("r.imgf")),
    ]);
    assert!(io::load_image(p("r.imgf"))
        .unwrap()
        .as_slice()
        .iter()
        .all(|v| (0.0..=1.0).contains(v)));

    ok(&[
        "train-gs",
        "--stream",
        s(&p("s.spk")),
        "--traj",
        s(&p("t.trj")),
        "--weights",
        s(&p("w.sim")),
        "--set",
        "train.iterations=3",
        "--set",
        "train.window=9",
        "--set",
        "init.count=10",
        "--out",
        s(&p("fit.gsc")),
        "--loss-csv",
        s(&p("loss.csv")),
    ]);
    let csv = std::fs::read_to_string(p("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    ok(&[
        "render",
        "--cloud",
        s(&p("fit.gsc")),
        "--traj",
        s(&p("t.trj")),
        "--time",
        "12.5",
        "--out",
        s(&p("v.pgm")),
    ]);
    let v = io::load_image(p("v.pgm")).unwrap();
    assert_eq!((v.width(), v.height()), (24, 20));
}

#[test]
fn ablate_runs_on_a_tiny_setup() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ablate.csv");
    let args = [
        "scene.count=3",
        "traj.width=20",
        "traj.height=16",
        "traj.focal=20",
        "traj.readouts=60",
        "sim.hidden=4",
        "sim.window=9",
        "sim.steps=1",
        "sim.batch=1",
        "sim.crop=12",
        "train.iterations=2",
        "train.window=9",
        "init.count=8",
        "eval.views=2",
        "ablate.variants=combined,exposure_only,tfp9_cascade",
    ];
    let mut cmd: Vec<&str> = vec!["ablate", "--out", s(&out)];
    for a in &args {
        cmd.push("--set");
        cmd.push(a);
    }
    ok(&cmd);
    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "variant,psnr,ssim,seconds,seconds_per_iter,gaussians");
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["combined", "exposure_only", "tfp9_cascade"]);
}
