//! The synthetic end-to-end pipeline: ground-truth scene, spiral capture,
//! spike simulation, mapping-network training and splat fitting, scored on
//! held-out views.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::metrics::{psnr, MetricReport};
use crate::recon::{tfp, ReconWindow};
use crate::scenegen::{gen_scene, gen_spiral, render_gt_frames, SceneSpec, TrajectorySpec};
use crate::sim_net::{sim_infer, sim_train, SimNetConfig, SimNetParams, SimSchedule};
use crate::spike_sim::{simulate_poisson, IntensitySequence, SpikeCamParams, SpikeStream};
use crate::splat::GaussianCloud;
use crate::trainer::{
    evaluate, held_out_views, init_cloud, train_with_targets, valid_centers, HeldOutView, InstantSource,
    InstantTargets, LossReport, TrainConfig,
};
use crate::trajectory::CameraTrajectory;

/// Everything needed to reproduce one synthetic experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySetup {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub camera: SpikeCamParams,
    pub sim: SimNetConfig,
    pub sim_schedule: SimSchedule,
    pub train: TrainConfig,
    pub init_count: usize,
    pub init_scale: f64,
    pub held_out: usize,
    /// Seed of the photon noise.
    pub noise_seed: u64,
}

impl Default for ToySetup {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            trajectory: TrajectorySpec::default(),
            camera: SpikeCamParams {
                photon_scale: 3.0,
                ..SpikeCamParams::default()
            },
            sim: SimNetConfig::default(),
            sim_schedule: SimSchedule {
                steps: 400,
                batch: 2,
                crop: 32,
                ..SimSchedule::default()
            },
            train: TrainConfig::default(),
            init_count: 200,
            init_scale: 0.1,
            held_out: 8,
            noise_seed: 1,
        }
    }
}

/// Ground truth and the captured stream.
#[derive(Debug, Clone)]
pub struct ToyData {
    pub ground_truth: GaussianCloud,
    pub trajectory: CameraTrajectory,
    pub frames: IntensitySequence,
    pub stream: SpikeStream,
}

pub fn capture(setup: &ToySetup) -> Result<ToyData> {
    let ground_truth = gen_scene(&setup.scene)?;
    let trajectory = gen_spiral(&setup.trajectory)?;
    let frames = render_gt_frames(&ground_truth, &trajectory, setup.train.background)?;
    let stream = simulate_poisson(&frames, &setup.camera, setup.noise_seed)?;
    Ok(ToyData {
        ground_truth,
        trajectory,
        frames,
        stream,
    })
}

/// Variants compared by the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Both loss terms, mapping-network targets.
    Combined,
    InstantOnly,
    ExposureOnly,
    /// Instantaneous loss only, against windowed firing rates of this length.
    Cascade(usize),
    /// Both terms with a different exposure window.
    Window {
        poses: usize,
        len: usize,
    },
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Combined => "combined".into(),
            Variant::InstantOnly => "instant_only".into(),
            Variant::ExposureOnly => "exposure_only".into(),
            Variant::Cascade(n) => format!("tfp{n}_cascade"),
            Variant::Window { poses, len } => format!("window_{poses}_{len}"),
        }
    }

    /// Inverse of [`Variant::name`].
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown variant {s:?}"));
        Ok(match s {
            "combined" => Variant::Combined,
            "instant_only" => Variant::InstantOnly,
            "exposure_only" => Variant::ExposureOnly,
            _ => {
                if let Some(n) = s.strip_prefix("tfp").and_then(|r| r.strip_suffix("_cascade")) {
                    Variant::Cascade(n.parse().map_err(|_| bad())?)
                } else if let Some((k, w)) = s.strip_prefix("window_").and_then(|r| r.split_once('_')) {
                    Variant::Window {
                        poses: k.parse().map_err(|_| bad())?,
                        len: w.parse().map_err(|_| bad())?,
                    }
                } else {
                    return Err(bad());
                }
            }
        })
    }

    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        match *self {
            Variant::Combined => *base,
            Variant::InstantOnly => TrainConfig { lambda: 0.0, ..*base },
            Variant::ExposureOnly => TrainConfig {
                use_instant: false,
                ..*base
            },
            Variant::Cascade(n) => TrainConfig {
                lambda: 0.0,
                instant_source: InstantSource::Tfp(n),
                ..*base
            },
            Variant::Window { poses, len } => TrainConfig {
                poses_per_window: poses,
                window: len,
                ..*base
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub variant: Variant,
    pub metrics: MetricReport,
    pub cloud: GaussianCloud,
    pub history: Vec<LossReport>,
    /// Wall-clock training time, excluding target precomputation.
    pub seconds: f64,
}

impl RunOutcome {
    pub fn seconds_per_iteration(&self) -> f64 {
        self.seconds / self.history.len().max(1) as f64
    }
}

/// Runs several variants on one capture with shared initialization,
/// held-out views and target caches.
pub struct Ablation<'a> {
    pub setup: ToySetup,
    pub data: &'a ToyData,
    pub sim: &'a SimNetParams<f32>,
    pub views: Vec<HeldOutView>,
    pub init: GaussianCloud,
    sim_targets: InstantTargets<'a>,
}

impl<'a> Ablation<'a> {
    /// Held-out views are placed so that they fall inside the training range
    /// of every variant in `variants`.
    pub fn new(setup: ToySetup, data: &'a ToyData, sim: &'a SimNetParams<f32>, variants: &[Variant]) -> Result<Self> {
        let mut lo = 0;
        let mut hi = usize::MAX;
        for v in variants.iter().copied().chain([Variant::Combined]) {
            let r = valid_centers(
                &data.stream,
                &data.trajectory,
                &v.config(&setup.train),
                sim.config.window,
            )?;
            lo = lo.max(*r.start());
            hi = hi.min(*r.end());
        }
        let views = held_out_views(
            &data.ground_truth,
            &data.trajectory,
            lo..=hi,
            setup.held_out,
            setup.train.background,
        )?;
        let init = init_cloud(
            setup.init_count,
            setup.scene.bbox_min,
            setup.scene.bbox_max,
            setup.init_scale,
            setup.train.seed,
        )?;
        Ok(Self {
            setup,
            data,
            sim,
            views,
            init,
            sim_targets: InstantTargets::new(InstantSource::Sim, Some(sim))?,
        })
    }

    /// Fills the mapping-network target cache for every centre the variants
    /// can sample.
    pub fn precompute_targets(&mut self) -> Result<()> {
        let r = valid_centers(
            &self.data.stream,
            &self.data.trajectory,
            &self.setup.train,
            self.sim.config.window,
        )?;
        for t in r {
            self.sim_targets.get(&self.data.stream, t)?;
        }
        Ok(())
    }

    pub fn run(&mut self, variant: Variant) -> Result<RunOutcome> {
        let cfg = variant.config(&self.setup.train);
        let start = Instant::now();
        let result = if cfg.instant_source == InstantSource::Sim {
            train_with_targets(
                &self.data.stream,
                &self.data.trajectory,
                &self.init,
                &mut self.sim_targets,
                &cfg,
            )?
        } else {
            let mut targets = InstantTargets::new(cfg.instant_source, None)?;
            train_with_targets(&self.data.stream, &self.data.trajectory, &self.init, &mut targets, &cfg)?
        };
        let seconds = start.elapsed().as_secs_f64();
        let metrics = evaluate(&result.cloud, &self.views, cfg.background)?;
        Ok(RunOutcome {
            variant,
            metrics,
            cloud: result.cloud,
            history: result.history,
            seconds,
        })
    }
}

/// Trains the mapping network on the captured stream.
pub fn train_mapping(setup: &ToySetup, data: &ToyData) -> Result<SimNetParams<f32>> {
    sim_train(&data.stream, setup.sim, &setup.sim_schedule)
}

/// Mean PSNR against ground-truth frames at `centers` for the network output
/// and for the plain windowed rate of the same length.
pub fn mapping_gain(data: &ToyData, sim: &SimNetParams<f32>, centers: &[usize]) -> Result<(f64, f64)> {
    let mut p_sim = 0.0;
    let mut p_tfp = 0.0;
    for &c in centers {
        let truth: &GrayImage = data.frames.frame(c);
        let est = sim_infer(sim, &data.stream, c)?;
        let rate = tfp(&data.stream, ReconWindow::with_length(c, sim.config.window)?)?;
        p_sim += psnr(&est, truth)?;
        p_tfp += psnr(&rate, truth)?;
    }
    let n = centers.len() as f64;
    Ok((p_sim / n, p_tfp / n))
}
