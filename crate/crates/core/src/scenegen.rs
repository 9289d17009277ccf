//! Synthetic ground truth: random Gaussian scenes, helical camera paths and
//! the per-readout intensity frames that drive the simulator.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::spike_sim::IntensitySequence;
use crate::splat::{render, Gaussian3D, GaussianCloud, Intrinsics, PinholeCamera};
use crate::trajectory::CameraTrajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub count: usize,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    /// Activated scale range, world units.
    pub scale_range: [f64; 2],
    pub opacity_range: [f64; 2],
    pub intensity_range: [f64; 2],
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            count: 50,
            bbox_min: [-1.0; 3],
            bbox_max: [1.0; 3],
            scale_range: [0.08, 0.3],
            opacity_range: [0.6, 0.95],
            intensity_range: [0.1, 0.95],
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64, open: bool) -> Result<()> {
    let inside = |v: f64| if open { v > lo && v < hi } else { v >= lo && v <= hi };
    if !(r[0] <= r[1] && inside(r[0]) && inside(r[1])) {
        return Err(Error::invalid(format!(
            "{name} range {r:?} must be ordered and inside ({lo}, {hi})"
        )));
    }
    Ok(())
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("scene needs at least one Gaussian"));
        }
        for i in 0..3 {
            if !(self.bbox_min[i] <= self.bbox_max[i]) {
                return Err(Error::invalid("bounding box min exceeds max"));
            }
        }
        check_range("scale", self.scale_range, 0.0, f64::INFINITY, true)?;
        check_range("opacity", self.opacity_range, 0.0, 1.0, true)?;
        check_range("intensity", self.intensity_range, 0.0, 1.0, true)?;
        Ok(())
    }
}

/// Uniformly distributed unit quaternion.
pub(crate) fn random_rotation(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            return q.map(|v| v / n);
        }
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

pub fn gen_scene(spec: &SceneSpec) -> Result<GaussianCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gaussians = (0..spec.count)
        .map(|_| {
            let position = std::array::from_fn(|i| uniform(&mut rng, [spec.bbox_min[i], spec.bbox_max[i]]));
            let scale = std::array::from_fn(|_| uniform(&mut rng, spec.scale_range));
            let rotation = random_rotation(&mut rng);
            let opacity = uniform(&mut rng, spec.opacity_range);
            let intensity = uniform(&mut rng, spec.intensity_range);
            Gaussian3D::from_activated(position, scale, rotation, opacity, intensity)
        })
        .collect();
    Ok(GaussianCloud::new(gaussians))
}

/// Rising helix around a vertical axis through `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    pub radius: f64,
    /// Height of the first pose relative to `target`.
    pub start_height: f64,
    /// Height gained between the first and last pose.
    pub height_span: f64,
    pub revolutions: f64,
    pub start_angle: f64,
    pub readouts: usize,
    pub target: [f64; 3],
    pub intrinsics: Intrinsics,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            radius: 4.0,
            start_height: -0.6,
            height_span: 1.2,
            revolutions: 0.25,
            start_angle: 0.0,
            readouts: 240,
            target: [0.0; 3],
            intrinsics: Intrinsics::centered(100, 100, 120.0),
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::invalid(format!("orbit radius must be > 0, got {}", self.radius)));
        }
        if self.readouts < 2 {
            return Err(Error::invalid("trajectory needs at least two readouts"));
        }
        self.intrinsics.validate()
    }

    /// Orbit angle of pose `k`.
    pub fn angle(&self, k: usize) -> f64 {
        self.start_angle + TAU * self.revolutions * k as f64 / (self.readouts - 1) as f64
    }

    /// Camera centre of pose `k`.
    pub fn eye(&self, k: usize) -> Vector3<f64> {
        let a = self.angle(k);
        let h = self.start_height + self.height_span * k as f64 / (self.readouts - 1) as f64;
        Vector3::new(
            self.target[0] + self.radius * a.cos(),
            self.target[1] + self.radius * a.sin(),
            self.target[2] + h,
        )
    }
}

/// One pose per readout on the helix, each looking at the target.
pub fn gen_spiral(spec: &TrajectorySpec) -> Result<CameraTrajectory> {
    spec.validate()?;
    let target = Vector3::from(spec.target);
    let poses = (0..spec.readouts)
        .map(|k| PinholeCamera::look_at(spec.eye(k), target, Vector3::z(), spec.intrinsics))
        .collect::<Result<Vec<_>>>()?;
    CameraTrajectory::per_readout(poses)
}

/// Renders the cloud at every readout from `0` to the last pose, clamped to
/// `[0, 1]`.
pub fn render_gt_frames(
    cloud: &GaussianCloud,
    trajectory: &CameraTrajectory,
    background: f64,
) -> Result<IntensitySequence> {
    let n = trajectory.last_readout() + 1;
    let frames = (0..n)
        .map(|k| {
            Ok(render(cloud, &trajectory.pose_at(k as f64)?, background)
                .image
                .clamp01())
        })
        .collect::<Result<Vec<_>>>()?;
    IntensitySequence::new(frames)
}

/// Checkerboard-textured sphere, ray traced per pixel. Independent of the
/// Gaussian representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckerSphere {
    pub center: [f64; 3],
    pub radius: f64,
    /// Checks per half-turn of longitude and per latitude span.
    pub checks: usize,
    pub dark: f64,
    pub light: f64,
    pub background: f64,
}

impl Default for CheckerSphere {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            radius: 1.0,
            checks: 6,
            dark: 0.15,
            light: 0.85,
            background: 0.05,
        }
    }
}

impl CheckerSphere {
    pub fn render(&self, cam: &PinholeCamera) -> GrayImage {
        let k = cam.intrinsics;
        let origin = cam.center();
        let rot_inv = cam.rotation.inverse();
        let c = Vector3::from(self.center);
        GrayImage::from_fn(k.width, k.height, |x, y| {
            let d_cam = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let d = (rot_inv * d_cam).normalize();
            let oc = origin - c;
            let b = oc.dot(&d);
            let disc = b * b - (oc.norm_squared() - self.radius * self.radius);
            if disc < 0.0 {
                return self.background;
            }
            let s = -b - disc.sqrt();
            if s <= 0.0 {
                return self.background;
            }
            let n = (origin + d * s - c) / self.radius;
            let lon = n.y.atan2(n.x) + PI;
            let lat = n.z.clamp(-1.0, 1.0).acos();
            let cell = self.checks as f64 / PI;
            let parity = ((lon * cell).floor() as i64 + (lat * cell).floor() as i64).rem_euclid(2);
            if parity == 0 {
                self.dark
            } else {
                self.light
            }
        })
    }

    pub fn frames(&self, trajectory: &CameraTrajectory) -> Result<IntensitySequence> {
        let n = trajectory.last_readout() + 1;
        let frames = (0..n)
            .map(|k| Ok(self.render(&trajectory.pose_at(k as f64)?)))
            .collect::<Result<Vec<_>>>()?;
        IntensitySequence::new(frames)
    }
}
