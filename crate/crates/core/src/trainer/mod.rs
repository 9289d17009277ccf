//! Fits a Gaussian cloud to a spike stream with known camera poses.

mod densify;

pub use densify::{densify_prune, DensifyConfig, DensifyOutcome, GradStats};

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::metrics::{mean_abs_diff, psnr, ssim, MetricReport};
use crate::optim::Adam;
use crate::recon::{exposure_target, tfi, tfp, ReconWindow};
use crate::scenegen::{gen_scene, SceneSpec};
use crate::sim_net::{sim_infer, SimNetParams};
use crate::spike_sim::SpikeStream;
use crate::splat::{render, render_backward, GaussianCloud, PinholeCamera, SplatGradients, PARAMS_PER_GAUSSIAN};
use crate::trajectory::CameraTrajectory;

/// Per-group Adam step sizes. The position rate decays exponentially from
/// `position` to `position_final` over the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub position_final: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub intensity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 2e-3,
            position_final: 2e-5,
            log_scale: 1e-2,
            rotation: 2e-3,
            opacity: 5e-2,
            intensity: 2e-2,
        }
    }
}

impl LearningRates {
    pub fn position_at(&self, iter: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.position;
        }
        let s = (iter as f64 / (total - 1) as f64).clamp(0.0, 1.0);
        self.position * (self.position_final / self.position).powf(s)
    }
}

/// Where the instantaneous-image targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstantSource {
    /// Frozen mapping network.
    Sim,
    /// Windowed firing rate of the given (odd) length.
    Tfp(usize),
    Tfi,
}

impl InstantSource {
    /// Readouts the source needs on each side of the centre.
    pub fn half_width(&self, sim_window: usize) -> usize {
        match self {
            InstantSource::Sim => sim_window / 2,
            InstantSource::Tfp(len) => len / 2,
            InstantSource::Tfi => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Poses rendered per exposure window.
    pub poses_per_window: usize,
    /// Exposure window length in readouts.
    pub window: usize,
    pub lambda: f64,
    /// When false the instantaneous term is dropped and reported as 0.
    pub use_instant: bool,
    pub iterations: usize,
    pub lr: LearningRates,
    pub densify: DensifyConfig,
    pub instant_source: InstantSource,
    pub background: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            poses_per_window: 5,
            window: 33,
            lambda: 1.0,
            use_instant: true,
            iterations: 3000,
            lr: LearningRates::default(),
            densify: DensifyConfig::default(),
            instant_source: InstantSource::Sim,
            background: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (k, w) = (self.poses_per_window, self.window);
        if k == 0 {
            return Err(Error::invalid("need at least one pose per window"));
        }
        if w < k {
            return Err(Error::invalid(format!("window of {w} readouts cannot hold {k} poses")));
        }
        if w % 2 == 0 {
            return Err(Error::invalid(format!("window length must be odd, got {w}")));
        }
        if k > 1 && (w - 1) % (k - 1) != 0 {
            return Err(Error::invalid(format!(
                "{k} poses do not evenly split a {w}-readout window"
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let InstantSource::Tfp(len) = self.instant_source {
            if len % 2 == 0 {
                return Err(Error::invalid(format!("TFP window must be odd, got {len}")));
            }
        }
        self.densify.validate()
    }

    /// Half-width that every sampled centre must leave on both sides.
    pub fn margin(&self, sim_window: usize) -> usize {
        (self.window / 2).max(self.instant_source.half_width(sim_window))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub iteration: usize,
    pub instant: f64,
    pub exposure: f64,
    pub total: f64,
}

/// Mean absolute difference between a render and an instantaneous target.
pub fn loss_instant(render: &GrayImage, target: &GrayImage) -> Result<f64> {
    mean_abs_diff(render, target)
}

pub fn total_loss(iteration: usize, instant: f64, exposure: f64, lambda: f64) -> LossReport {
    LossReport {
        iteration,
        instant,
        exposure,
        total: instant + lambda * exposure,
    }
}

/// Readout times of the `k` poses spread evenly over the window centred on
/// `t`.
pub fn exposure_times(t: usize, k: usize, window: usize) -> Vec<f64> {
    let half = (window / 2) as f64;
    if k == 1 {
        return vec![t as f64];
    }
    let step = (window - 1) as f64 / (k - 1) as f64;
    (0..k).map(|j| t as f64 - half + j as f64 * step).collect()
}

fn exposure_poses(trajectory: &CameraTrajectory, t: usize, k: usize, window: usize) -> Result<Vec<PinholeCamera>> {
    exposure_times(t, k, window)
        .into_iter()
        .map(|s| trajectory.pose_at(s))
        .collect()
}

/// Average of the renders at the exposure poses around `t`.
pub fn exposure_render(
    cloud: &GaussianCloud,
    trajectory: &CameraTrajectory,
    t: usize,
    k: usize,
    window: usize,
    background: f64,
) -> Result<GrayImage> {
    let renders: Vec<GrayImage> = exposure_poses(trajectory, t, k, window)?
        .iter()
        .map(|cam| render(cloud, cam, background).image)
        .collect();
    GrayImage::average(&renders)
}

fn checked_exposure_target(stream: &SpikeStream, t: usize, window: usize) -> Result<GrayImage> {
    let win = ReconWindow::with_length(t, window)?;
    if !win.fits(stream.num_readouts()) {
        return Err(Error::OutOfBounds(format!(
            "{window}-readout window at {t} leaves the {}-readout stream",
            stream.num_readouts()
        )));
    }
    exposure_target(stream, win)
}

/// L1 distance between the averaged exposure renders and the windowed firing
/// rate at `t`.
pub fn loss_exposure(
    cloud: &GaussianCloud,
    trajectory: &CameraTrajectory,
    t: usize,
    cfg: &TrainConfig,
    stream: &SpikeStream,
) -> Result<f64> {
    let target = checked_exposure_target(stream, t, cfg.window)?;
    let blurred = exposure_render(cloud, trajectory, t, cfg.poses_per_window, cfg.window, cfg.background)?;
    mean_abs_diff(&blurred, &target)
}

/// Instantaneous targets per centre readout, computed on first use.
pub struct InstantTargets<'a> {
    source: InstantSource,
    sim: Option<&'a SimNetParams<f32>>,
    cache: HashMap<usize, GrayImage>,
}

impl<'a> InstantTargets<'a> {
    pub fn new(source: InstantSource, sim: Option<&'a SimNetParams<f32>>) -> Result<Self> {
        if source == InstantSource::Sim && sim.is_none() {
            return Err(Error::invalid("SIM targets need trained network parameters"));
        }
        Ok(Self {
            source,
            sim,
            cache: HashMap::new(),
        })
    }

    pub fn source(&self) -> InstantSource {
        self.source
    }

    pub fn sim_window(&self) -> usize {
        self.sim.map_or(0, |p| p.config.window)
    }

    pub fn get(&mut self, stream: &SpikeStream, t: usize) -> Result<&GrayImage> {
        if !self.cache.contains_key(&t) {
            let img = match self.source {
                InstantSource::Sim => sim_infer(self.sim.expect("checked in new"), stream, t)?,
                InstantSource::Tfp(len) => tfp(stream, ReconWindow::with_length(t, len)?)?,
                InstantSource::Tfi => tfi(stream, t)?,
            };
            self.cache.insert(t, img);
        }
        Ok(&self.cache[&t])
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub cloud: GaussianCloud,
    pub history: Vec<LossReport>,
}

/// Centre readouts usable for training: every window and pose fits.
pub fn valid_centers(
    stream: &SpikeStream,
    trajectory: &CameraTrajectory,
    cfg: &TrainConfig,
    sim_window: usize,
) -> Result<std::ops::RangeInclusive<usize>> {
    let margin = cfg.margin(sim_window);
    let half = cfg.window / 2;
    let n = stream.num_readouts();
    let lo = margin.max(trajectory.first_readout() + half);
    let hi = (n - 1)
        .checked_sub(margin)
        .zip(trajectory.last_readout().checked_sub(half));
    match hi.map(|(a, b)| a.min(b)) {
        Some(hi) if hi >= lo => Ok(lo..=hi),
        _ => Err(Error::invalid(format!(
            "no centre readout leaves a {margin}-readout margin inside {n} readouts and the trajectory"
        ))),
    }
}

/// Uniform random positions in a box, small isotropic scales, low opacity
/// and mid-grey intensity.
pub fn init_cloud(
    count: usize,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    scale: f64,
    seed: u64,
) -> Result<GaussianCloud> {
    let mut cloud = gen_scene(&SceneSpec {
        count,
        bbox_min,
        bbox_max,
        scale_range: [scale, scale],
        opacity_range: [0.1, 0.1],
        intensity_range: [0.5, 0.5],
        seed,
    })?;
    for g in &mut cloud.gaussians {
        g.rotation = [1.0, 0.0, 0.0, 0.0];
    }
    Ok(cloud)
}

/// L1 gradient `sign(a - b) * scale` per pixel, with `sign(0) = 0`.
fn l1_grad(a: &GrayImage, b: &GrayImage, scale: f64) -> GrayImage {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| {
            let d = x - y;
            if d > 0.0 {
                scale
            } else if d < 0.0 {
                -scale
            } else {
                0.0
            }
        })
        .collect();
    GrayImage::from_vec(a.width(), a.height(), data).expect("same shape")
}

/// Loss and parameter gradients of one training sample centred on `t`.
pub fn sample_gradients(
    cloud: &GaussianCloud,
    stream: &SpikeStream,
    trajectory: &CameraTrajectory,
    instant_target: Option<&GrayImage>,
    t: usize,
    cfg: &TrainConfig,
    mut stats: Option<&mut GradStats>,
) -> Result<(f64, f64, SplatGradients)> {
    let mut grads = SplatGradients::zeros(cloud.len());
    let bg = cfg.background;
    let mut instant = 0.0;
    if cfg.use_instant {
        let target = instant_target.ok_or_else(|| Error::invalid("instantaneous target missing"))?;
        let cam = trajectory.pose_at(t as f64)?;
        let img = render(cloud, &cam, bg).image;
        instant = loss_instant(&img, target)?;
        let g_img = l1_grad(&img, target, 1.0 / img.len() as f64);
        let g = render_backward(cloud, &cam, bg, &g_img)?;
        if let Some(s) = stats.as_deref_mut() {
            s.record(&g);
        }
        grads.add_scaled(&g, 1.0);
    }
    let mut exposure = 0.0;
    if cfg.lambda > 0.0 {
        let k = cfg.poses_per_window;
        let target = checked_exposure_target(stream, t, cfg.window)?;
        let cams = exposure_poses(trajectory, t, k, cfg.window)?;
        let renders: Vec<GrayImage> = cams.iter().map(|c| render(cloud, c, bg).image).collect();
        let blurred = GrayImage::average(&renders)?;
        exposure = mean_abs_diff(&blurred, &target)?;
        let g_img = l1_grad(&blurred, &target, cfg.lambda / (blurred.len() * k) as f64);
        for cam in &cams {
            let g = render_backward(cloud, cam, bg, &g_img)?;
            if let Some(s) = stats.as_deref_mut() {
                s.record(&g);
            }
            grads.add_scaled(&g, 1.0);
        }
    }
    Ok((instant, exposure, grads))
}

/// Runs the optimization with targets produced by `cfg.instant_source`.
pub fn train(
    stream: &SpikeStream,
    trajectory: &CameraTrajectory,
    init: &GaussianCloud,
    sim: Option<&SimNetParams<f32>>,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    let mut targets = InstantTargets::new(cfg.instant_source, sim)?;
    train_with_targets(stream, trajectory, init, &mut targets, cfg)
}

/// As [`train`], reusing (and filling) a target cache, so several runs on
/// the same stream pay for the targets once.
pub fn train_with_targets(
    stream: &SpikeStream,
    trajectory: &CameraTrajectory,
    init: &GaussianCloud,
    targets: &mut InstantTargets,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if targets.source() != cfg.instant_source {
        return Err(Error::invalid("target cache was built for a different source"));
    }
    if init.is_empty() {
        return Err(Error::invalid("initial cloud is empty"));
    }
    let centers = valid_centers(stream, trajectory, cfg, targets.sim_window())?;
    let mut cloud = init.clone();
    let mut adam = Adam::<f64>::with_eps(cloud.len() * PARAMS_PER_GAUSSIAN, 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stats = GradStats::new(cloud.len());
    let mut history = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let t = rng.random_range(centers.clone());
        let target = if cfg.use_instant {
            Some(targets.get(stream, t)?.clone())
        } else {
            None
        };
        let (instant, exposure, grads) =
            sample_gradients(&cloud, stream, trajectory, target.as_ref(), t, cfg, Some(&mut stats))?;
        history.push(total_loss(iter, instant, exposure, cfg.lambda));

        adam.tick();
        let mut flat = cloud.to_flat();
        let g = grads.to_flat();
        let lr = &cfg.lr;
        let groups = [
            (0..3, lr.position_at(iter, cfg.iterations)),
            (3..6, lr.log_scale),
            (6..10, lr.rotation),
            (10..11, lr.opacity),
            (11..12, lr.intensity),
        ];
        for i in 0..cloud.len() {
            let base = i * PARAMS_PER_GAUSSIAN;
            for (range, rate) in &groups {
                let r = base + range.start..base + range.end;
                adam.update(&mut flat[r.clone()], &g[r.clone()], r.start, *rate);
            }
        }
        cloud = GaussianCloud::from_flat(&flat)?;

        let d = &cfg.densify;
        if d.enabled && iter + 1 >= d.start && iter < d.stop && (iter + 1) % d.interval == 0 {
            let outcome = densify_prune(&cloud, &stats, d, &mut rng)?;
            adam.grow(outcome.appended * PARAMS_PER_GAUSSIAN);
            adam.retain_blocks(PARAMS_PER_GAUSSIAN, &outcome.keep);
            cloud = outcome.cloud;
            stats = GradStats::new(cloud.len());
        }
    }
    Ok(TrainResult { cloud, history })
}

/// A ground-truth image at a pose that is never used as a training centre.
#[derive(Debug, Clone)]
pub struct HeldOutView {
    pub camera: PinholeCamera,
    pub image: GrayImage,
}

/// `count` views at half-readout offsets spread over `centers`, rendered
/// from `reference`.
pub fn held_out_views(
    reference: &GaussianCloud,
    trajectory: &CameraTrajectory,
    centers: std::ops::RangeInclusive<usize>,
    count: usize,
    background: f64,
) -> Result<Vec<HeldOutView>> {
    let (lo, hi) = (*centers.start(), *centers.end());
    if count == 0 || hi <= lo {
        return Err(Error::invalid("need a nonempty centre range and at least one view"));
    }
    (0..count)
        .map(|j| {
            let base = lo as f64 + (hi - lo - 1) as f64 * (j as f64 + 0.5) / count as f64;
            let camera = trajectory.pose_at(base.floor() + 0.5)?;
            Ok(HeldOutView {
                camera,
                image: render(reference, &camera, background).image.clamp01(),
            })
        })
        .collect()
}

/// Mean PSNR and SSIM over the views.
pub fn evaluate(cloud: &GaussianCloud, views: &[HeldOutView], background: f64) -> Result<MetricReport> {
    if views.is_empty() {
        return Err(Error::invalid("no views to evaluate"));
    }
    let mut p = 0.0;
    let mut s = 0.0;
    for v in views {
        let img = render(cloud, &v.camera, background).image;
        p += psnr(&img, &v.image)?;
        s += ssim(&img, &v.image)?;
    }
    let n = views.len() as f64;
    Ok(MetricReport {
        psnr: p / n,
        ssim: s / n,
    })
}
