//! Camera poses indexed by readout time.

use crate::error::{Error, Result};
use crate::splat::PinholeCamera;

/// Poses at strictly increasing readout indices. Poses between samples are
/// interpolated: translation linearly, rotation by slerp.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraTrajectory {
    readouts: Vec<usize>,
    poses: Vec<PinholeCamera>,
}

impl CameraTrajectory {
    pub fn new(readouts: Vec<usize>, poses: Vec<PinholeCamera>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("trajectory has no poses"));
        }
        if readouts.len() != poses.len() {
            return Err(Error::dims(format!(
                "{} timestamps for {} poses",
                readouts.len(),
                poses.len()
            )));
        }
        if let Some(w) = readouts.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "trajectory timestamps must increase strictly, got {} then {}",
                w[0], w[1]
            )));
        }
        for p in &poses {
            p.intrinsics.validate()?;
        }
        Ok(Self { readouts, poses })
    }

    /// One pose per readout, starting at readout 0.
    pub fn per_readout(poses: Vec<PinholeCamera>) -> Result<Self> {
        Self::new((0..poses.len()).collect(), poses)
    }

    /// One pose every `stride` readouts, starting at readout 0.
    pub fn with_stride(poses: Vec<PinholeCamera>, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("trajectory stride must be positive"));
        }
        Self::new((0..poses.len()).map(|i| i * stride).collect(), poses)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn readouts(&self) -> &[usize] {
        &self.readouts
    }

    pub fn poses(&self) -> &[PinholeCamera] {
        &self.poses
    }

    pub fn first_readout(&self) -> usize {
        self.readouts[0]
    }

    pub fn last_readout(&self) -> usize {
        *self.readouts.last().unwrap()
    }

    pub fn covers(&self, t: f64) -> bool {
        t >= self.first_readout() as f64 && t <= self.last_readout() as f64
    }

    /// Pose at (possibly fractional) readout time `t`.
    pub fn pose_at(&self, t: f64) -> Result<PinholeCamera> {
        if !self.covers(t) {
            return Err(Error::OutOfBounds(format!(
                "time {t} outside trajectory [{}, {}]",
                self.first_readout(),
                self.last_readout()
            )));
        }
        let i = self.readouts.partition_point(|&r| (r as f64) <= t);
        if i == 0 {
            return Ok(self.poses[0]);
        }
        let lo = i - 1;
        let t0 = self.readouts[lo] as f64;
        if t == t0 || lo + 1 == self.poses.len() {
            return Ok(self.poses[lo]);
        }
        let t1 = self.readouts[lo + 1] as f64;
        let s = (t - t0) / (t1 - t0);
        let (a, b) = (&self.poses[lo], &self.poses[lo + 1]);
        let rotation = a.rotation.try_slerp(&b.rotation, s, 1e-12).unwrap_or(a.rotation);
        let translation = a.translation.lerp(&b.translation, s);
        Ok(PinholeCamera::new(rotation, translation, a.intrinsics))
    }
}
