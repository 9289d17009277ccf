//! Mapping from `section.key` config entries onto library parameter structs.

use spikegs::config::KeyValues;
use spikegs::experiment::ToySetup;
use spikegs::scenegen::{SceneSpec, TrajectorySpec};
use spikegs::sim_net::{SimNetConfig, SimSchedule};
use spikegs::spike_sim::SpikeCamParams;
use spikegs::splat::Intrinsics;
use spikegs::trainer::{InstantSource, TrainConfig};
use spikegs::{Error, Result};

pub fn scene(kv: &mut KeyValues, seed: u64) -> Result<SceneSpec> {
    let mut s = SceneSpec {
        seed,
        ..SceneSpec::default()
    };
    kv.take_into("scene.count", &mut s.count)?;
    kv.take_vec3("scene.bbox_min", &mut s.bbox_min)?;
    kv.take_vec3("scene.bbox_max", &mut s.bbox_max)?;
    kv.take_into("scene.scale_min", &mut s.scale_range[0])?;
    kv.take_into("scene.scale_max", &mut s.scale_range[1])?;
    kv.take_into("scene.opacity_min", &mut s.opacity_range[0])?;
    kv.take_into("scene.opacity_max", &mut s.opacity_range[1])?;
    kv.take_into("scene.intensity_min", &mut s.intensity_range[0])?;
    kv.take_into("scene.intensity_max", &mut s.intensity_range[1])?;
    s.validate()?;
    Ok(s)
}

pub fn trajectory(kv: &mut KeyValues) -> Result<TrajectorySpec> {
    let mut t = TrajectorySpec::default();
    kv.take_into("traj.radius", &mut t.radius)?;
    kv.take_into("traj.start_height", &mut t.start_height)?;
    kv.take_into("traj.height_span", &mut t.height_span)?;
    kv.take_into("traj.revolutions", &mut t.revolutions)?;
    kv.take_into("traj.start_angle", &mut t.start_angle)?;
    kv.take_into("traj.readouts", &mut t.readouts)?;
    kv.take_vec3("traj.target", &mut t.target)?;
    let (mut w, mut h) = (t.intrinsics.width, t.intrinsics.height);
    let mut focal = t.intrinsics.fx;
    kv.take_into("traj.width", &mut w)?;
    kv.take_into("traj.height", &mut h)?;
    kv.take_into("traj.focal", &mut focal)?;
    t.intrinsics = Intrinsics::centered(w, h, focal);
    t.validate()?;
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamMode {
    Ideal,
    Poisson,
}

pub fn camera(kv: &mut KeyValues, base: SpikeCamParams) -> Result<(SpikeCamParams, CamMode)> {
    let mut c = base;
    kv.take_into("cam.threshold", &mut c.threshold)?;
    kv.take_into("cam.conversion", &mut c.conversion)?;
    kv.take_into("cam.tau_us", &mut c.tau_us)?;
    kv.take_into("cam.photon_scale", &mut c.photon_scale)?;
    kv.take_into("cam.dark_rate", &mut c.dark_rate)?;
    let mode = match kv.take::<String>("cam.mode")?.as_deref() {
        None | Some("poisson") => CamMode::Poisson,
        Some("ideal") => CamMode::Ideal,
        Some(other) => {
            return Err(Error::Config(format!(
                "cam.mode must be ideal or poisson, got {other:?}"
            )))
        }
    };
    c.validate()?;
    Ok((c, mode))
}

pub fn sim_net(kv: &mut KeyValues, base: SimNetConfig, schedule: SimSchedule) -> Result<(SimNetConfig, SimSchedule)> {
    let mut c = base;
    kv.take_into("sim.shift_layers", &mut c.shift_layers)?;
    kv.take_into("sim.fuse_layers", &mut c.fuse_layers)?;
    kv.take_into("sim.hidden", &mut c.hidden)?;
    kv.take_into("sim.window", &mut c.window)?;
    c.validate()?;
    let mut s = schedule;
    kv.take_into("sim.steps", &mut s.steps)?;
    kv.take_into("sim.batch", &mut s.batch)?;
    kv.take_into("sim.crop", &mut s.crop)?;
    kv.take_into("sim.lr", &mut s.lr)?;
    Ok((c, s))
}

pub fn instant_source(s: &str) -> Result<InstantSource> {
    match s {
        "sim" => Ok(InstantSource::Sim),
        "tfi" => Ok(InstantSource::Tfi),
        _ => s
            .strip_prefix("tfp:")
            .and_then(|n| n.parse().ok())
            .map(InstantSource::Tfp)
            .ok_or_else(|| Error::Config(format!("train.instant must be sim, tfi or tfp:<len>, got {s:?}"))),
    }
}

pub fn train(kv: &mut KeyValues, seed: u64) -> Result<TrainConfig> {
    let mut t = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    kv.take_into("train.poses", &mut t.poses_per_window)?;
    kv.take_into("train.window", &mut t.window)?;
    kv.take_into("train.lambda", &mut t.lambda)?;
    kv.take_into("train.use_instant", &mut t.use_instant)?;
    kv.take_into("train.iterations", &mut t.iterations)?;
    kv.take_into("train.background", &mut t.background)?;
    if let Some(s) = kv.take::<String>("train.instant")? {
        t.instant_source = instant_source(&s)?;
    }
    let lr = &mut t.lr;
    kv.take_into("lr.position", &mut lr.position)?;
    kv.take_into("lr.position_final", &mut lr.position_final)?;
    kv.take_into("lr.log_scale", &mut lr.log_scale)?;
    kv.take_into("lr.rotation", &mut lr.rotation)?;
    kv.take_into("lr.opacity", &mut lr.opacity)?;
    kv.take_into("lr.intensity", &mut lr.intensity)?;
    let d = &mut t.densify;
    kv.take_into("densify.enabled", &mut d.enabled)?;
    kv.take_into("densify.start", &mut d.start)?;
    kv.take_into("densify.stop", &mut d.stop)?;
    kv.take_into("densify.interval", &mut d.interval)?;
    kv.take_into("densify.grad_threshold", &mut d.grad_threshold)?;
    kv.take_into("densify.split_scale", &mut d.split_scale)?;
    kv.take_into("densify.opacity_floor", &mut d.opacity_floor)?;
    kv.take_into("densify.max_gaussians", &mut d.max_gaussians)?;
    t.validate()?;
    Ok(t)
}

/// Random initial cloud.
pub struct InitSpec {
    pub count: usize,
    pub scale: f64,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

pub fn init(kv: &mut KeyValues) -> Result<InitSpec> {
    let d = ToySetup::default();
    let mut i = InitSpec {
        count: d.init_count,
        scale: d.init_scale,
        bbox_min: d.scene.bbox_min,
        bbox_max: d.scene.bbox_max,
    };
    kv.take_into("init.count", &mut i.count)?;
    kv.take_into("init.scale", &mut i.scale)?;
    kv.take_vec3("init.bbox_min", &mut i.bbox_min)?;
    kv.take_vec3("init.bbox_max", &mut i.bbox_max)?;
    Ok(i)
}

/// Full synthetic experiment. `--seed` drives the scene, the photon noise,
/// the mapping network and the splat trainer.
pub fn toy(kv: &mut KeyValues, seed: u64) -> Result<ToySetup> {
    let d = ToySetup::default();
    let scene = scene(kv, seed)?;
    let trajectory = trajectory(kv)?;
    let (camera, mode) = camera(kv, d.camera)?;
    if mode != CamMode::Poisson {
        return Err(Error::Config(
            "the synthetic experiment needs cam.mode = poisson".into(),
        ));
    }
    let (sim, sim_schedule) = sim_net(kv, d.sim, SimSchedule { seed, ..d.sim_schedule })?;
    let train = train(kv, seed)?;
    if kv.contains("init.bbox_min") || kv.contains("init.bbox_max") {
        return Err(Error::Config(
            "the synthetic experiment initializes inside the scene box; set scene.bbox_* instead".into(),
        ));
    }
    let init = init(kv)?;
    let mut setup = ToySetup {
        scene,
        trajectory,
        camera,
        sim,
        sim_schedule,
        train,
        init_count: init.count,
        init_scale: init.scale,
        noise_seed: seed.wrapping_add(1),
        ..d
    };
    kv.take_into("eval.views", &mut setup.held_out)?;
    Ok(setup)
}
