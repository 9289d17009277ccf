mod params;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use spikegs::config::KeyValues;
use spikegs::experiment::{capture, mapping_gain, train_mapping, Ablation, Variant};
use spikegs::io;
use spikegs::metrics::{psnr, ssim};
use spikegs::recon::{tfi, tfp, ReconWindow};
use spikegs::scenegen::{gen_scene, gen_spiral, render_gt_frames, CheckerSphere};
use spikegs::sim_net::{sim_infer, sim_train, SimNetConfig, SimSchedule};
use spikegs::spike_sim::{simulate_ideal, simulate_poisson, IntegratorState, IntensitySequence, SpikeCamParams};
use spikegs::splat::render;
use spikegs::trainer::{init_cloud, train, InstantSource};
use spikegs::trajectory::CameraTrajectory;
use spikegs::{Error, GrayImage, Result};

use params::CamMode;

#[derive(Parser, Debug)]
#[command(
    name = "spikegs",
    version,
    about = "Spike-camera simulation and Gaussian splatting from spike streams"
)]
pub struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set train.lambda=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random ground-truth scene and a spiral trajectory.
    Scenegen {
        #[arg(long)]
        scene_out: PathBuf,
        #[arg(long)]
        traj_out: PathBuf,
        /// Also write the per-readout ground-truth frames here.
        #[arg(long)]
        frames_dir: Option<PathBuf>,
    },
    /// Produce a spike stream from a scene, the checker sphere or a constant image.
    Simulate {
        #[arg(long, value_enum, default_value_t = Source::Scene)]
        source: Source,
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Trajectory file; generated from `traj.*` keys when absent.
        #[arg(long)]
        traj: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct one image from a spike stream.
    Recon {
        #[arg(value_enum)]
        method: Method,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        center: usize,
        /// Mapping-network weights, required by `sim`.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the blind-spot mapping network on a stream.
    TrainSim {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a Gaussian cloud to a spike stream with known poses.
    TrainGs {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Starting cloud; random inside `init.bbox_*` when absent.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Render a cloud at trajectory time `time` (readout units).
    Render {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        time: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR and SSIM for image pairs, as CSV.
    Eval {
        #[arg(long, required = true)]
        reference: Vec<PathBuf>,
        #[arg(long, required = true)]
        estimate: Vec<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the loss ablation end to end on a synthetic scene.
    Ablate {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trained network weights from a previous run on the same setup.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Scene,
    Sphere,
    Constant,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Tfp,
    Tfi,
    Sim,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut kv = match &cli.common.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::new(),
    };
    for o in &cli.common.overrides {
        kv.set_pair(o)?;
    }
    let seed = cli.common.seed;
    match cli.command {
        Command::Scenegen {
            scene_out,
            traj_out,
            frames_dir,
        } => {
            let spec = params::scene(&mut kv, seed)?;
            let tspec = params::trajectory(&mut kv)?;
            let background = take_background(&mut kv)?;
            kv.finish()?;
            let cloud = gen_scene(&spec)?;
            let traj = gen_spiral(&tspec)?;
            io::save_cloud(&scene_out, &cloud)?;
            io::save_trajectory(&traj_out, &traj)?;
            if let Some(dir) = frames_dir {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                let frames = render_gt_frames(&cloud, &traj, background)?;
                for (k, f) in frames.frames().iter().enumerate() {
                    io::save_image(dir.join(format!("frame_{k:05}.imgf")), f)?;
                }
            }
        }
        Command::Simulate {
            source,
            scene,
            traj,
            out,
        } => {
            let (cam, mode) = params::camera(&mut kv, SpikeCamParams::default())?;
            let frames = match source {
                Source::Constant => {
                    let mut value = 0.5;
                    let (mut w, mut h, mut n) = (16usize, 16usize, 1000usize);
                    kv.take_into("source.intensity", &mut value)?;
                    kv.take_into("source.width", &mut w)?;
                    kv.take_into("source.height", &mut h)?;
                    kv.take_into("source.readouts", &mut n)?;
                    IntensitySequence::constant(GrayImage::filled(w, h, value), n)?
                }
                Source::Sphere => {
                    let traj = trajectory_from(&mut kv, traj.as_deref())?;
                    CheckerSphere::default().frames(&traj)?
                }
                Source::Scene => {
                    let scene = scene.ok_or_else(|| Error::Config("--source scene needs --scene".into()))?;
                    let cloud = io::load_cloud(&scene)?;
                    let traj = trajectory_from(&mut kv, traj.as_deref())?;
                    let background = take_background(&mut kv)?;
                    render_gt_frames(&cloud, &traj, background)?
                }
            };
            let random_start = kv.take::<bool>("cam.random_start")?.unwrap_or(mode == CamMode::Poisson);
            kv.finish()?;
            let stream = match mode {
                CamMode::Poisson => simulate_poisson(&frames, &cam, seed)?,
                CamMode::Ideal => {
                    let init = if random_start {
                        IntegratorState::seeded(frames.width(), frames.height(), cam.threshold, seed)
                    } else {
                        IntegratorState::zeros(frames.width(), frames.height())
                    };
                    simulate_ideal(&frames, &cam, &init)?
                }
            };
            io::save_spk(&out, &stream)?;
        }
        Command::Recon {
            method,
            stream,
            center,
            weights,
            out,
        } => {
            let mut window = 33usize;
            kv.take_into("recon.window", &mut window)?;
            kv.finish()?;
            let stream = io::load_spk(&stream)?;
            let img = match method {
                Method::Tfp => tfp(&stream, ReconWindow::with_length(center, window)?)?,
                Method::Tfi => tfi(&stream, center)?,
                Method::Sim => {
                    let w = weights.ok_or_else(|| Error::Config("recon sim needs --weights".into()))?;
                    sim_infer(&io::load_sim(&w)?, &stream, center)?
                }
            };
            io::save_image(&out, &img)?;
        }
        Command::TrainSim { stream, out } => {
            let (cfg, schedule) = params::sim_net(
                &mut kv,
                SimNetConfig::default(),
                SimSchedule {
                    seed,
                    ..SimSchedule::default()
                },
            )?;
            kv.finish()?;
            let stream = io::load_spk(&stream)?;
            let p = sim_train(&stream, cfg, &schedule)?;
            io::save_sim(&out, &p)?;
        }
        Command::TrainGs {
            stream,
            traj,
            weights,
            init,
            out,
            loss_csv,
        } => {
            let cfg = params::train(&mut kv, seed)?;
            let init_spec = params::init(&mut kv)?;
            kv.finish()?;
            let stream = io::load_spk(&stream)?;
            let traj = io::load_trajectory(&traj)?;
            let sim = match (&weights, cfg.instant_source) {
                (Some(w), _) => Some(io::load_sim(w)?),
                (None, InstantSource::Sim) if cfg.use_instant => {
                    return Err(Error::Config("train.instant = sim needs --weights".into()))
                }
                (None, _) => None,
            };
            let init = match init {
                Some(p) => io::load_cloud(&p)?,
                None => init_cloud(
                    init_spec.count,
                    init_spec.bbox_min,
                    init_spec.bbox_max,
                    init_spec.scale,
                    seed,
                )?,
            };
            let result = train(&stream, &traj, &init, sim.as_ref(), &cfg)?;
            io::save_cloud(&out, &result.cloud)?;
            if let Some(p) = loss_csv {
                io::save_loss_csv(&p, &result.history)?;
            }
        }
        Command::Render { cloud, traj, time, out } => {
            let background = take_background(&mut kv)?;
            kv.finish()?;
            let cloud = io::load_cloud(&cloud)?;
            let traj = io::load_trajectory(&traj)?;
            let img = render(&cloud, &traj.pose_at(time)?, background).image.clamp01();
            io::save_image(&out, &img)?;
        }
        Command::Eval {
            reference,
            estimate,
            out,
        } => {
            kv.finish()?;
            if reference.len() != estimate.len() {
                return Err(Error::Config(format!(
                    "{} --reference but {} --estimate images",
                    reference.len(),
                    estimate.len()
                )));
            }
            let mut csv = String::from("reference,estimate,psnr,ssim\n");
            for (r, e) in reference.iter().zip(&estimate) {
                let a = io::load_image(r)?;
                let b = io::load_image(e)?;
                let p = psnr(&a, &b)?;
                let s = ssim(&a, &b)?;
                csv += &format!("{},{},{},{:.4}\n", r.display(), e.display(), fmt_psnr(p), 100.0 * s);
            }
            emit(out.as_deref(), &csv)?;
        }
        Command::Ablate { out, weights } => {
            let setup = params::toy(&mut kv, seed)?;
            let variants = match kv.take::<String>("ablate.variants")? {
                Some(list) => list
                    .split(',')
                    .map(|v| Variant::parse(v.trim()))
                    .collect::<Result<Vec<_>>>()?,
                None => vec![Variant::Combined, Variant::InstantOnly, Variant::ExposureOnly],
            };
            kv.finish()?;
            let data = capture(&setup)?;
            let sim = match weights {
                Some(w) => io::load_sim(&w)?,
                None => train_mapping(&setup, &data)?,
            };
            let probe: Vec<usize> = (0..5)
                .map(|i| sim.config.window / 2 + i * (data.stream.num_readouts() - sim.config.window) / 4)
                .collect();
            let (p_sim, p_tfp) = mapping_gain(&data, &sim, &probe)?;
            eprintln!("mapping network {p_sim:.2} dB, windowed rate {p_tfp:.2} dB");
            let mut ab = Ablation::new(setup, &data, &sim, &variants)?;
            let mut csv = String::from("variant,psnr,ssim,seconds,seconds_per_iter,gaussians\n");
            for v in variants {
                let r = ab.run(v)?;
                eprintln!("{}: {:.2} dB", v.name(), r.metrics.psnr);
                csv += &format!(
                    "{},{},{:.4},{:.3},{:.6},{}\n",
                    v.name(),
                    fmt_psnr(r.metrics.psnr),
                    100.0 * r.metrics.ssim,
                    r.seconds,
                    r.seconds_per_iteration(),
                    r.cloud.len()
                );
            }
            emit(out.as_deref(), &csv)?;
        }
    }
    Ok(())
}

fn take_background(kv: &mut KeyValues) -> Result<f64> {
    Ok(kv.take("render.background")?.unwrap_or(0.0))
}

fn trajectory_from(kv: &mut KeyValues, path: Option<&Path>) -> Result<CameraTrajectory> {
    match path {
        Some(p) => io::load_trajectory(p),
        None => gen_spiral(&params::trajectory(kv)?),
    }
}

fn fmt_psnr(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p:.4}")
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
    }
}
