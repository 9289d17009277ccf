//! Differentiable monochrome 3D Gaussian rasterizer.

mod render;

pub use render::{
    project, render, render_backward, render_backward_with, render_with, GaussianGrad, Projected, RenderOutput,
    RenderSettings, SplatGradients,
};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Values per Gaussian in flat parameter vectors.
pub const PARAMS_PER_GAUSSIAN: usize = 12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One primitive in unconstrained parameterization: log-space scales,
/// unnormalized quaternion `(w, x, y, z)`, logistic opacity and intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub position: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub intensity_logit: f64,
}

impl Gaussian3D {
    pub fn from_activated(
        position: [f64; 3],
        scale: [f64; 3],
        rotation: [f64; 4],
        opacity: f64,
        intensity: f64,
    ) -> Self {
        Self {
            position,
            log_scale: scale.map(f64::ln),
            rotation,
            opacity_logit: logit(opacity),
            intensity_logit: logit(intensity),
        }
    }

    /// Isotropic Gaussian with identity rotation.
    pub fn isotropic(position: [f64; 3], scale: f64, opacity: f64, intensity: f64) -> Self {
        Self::from_activated(position, [scale; 3], [1.0, 0.0, 0.0, 0.0], opacity, intensity)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn intensity(&self) -> f64 {
        sigmoid(self.intensity_logit)
    }

    /// Normalized rotation quaternion `(w, x, y, z)`.
    pub fn unit_rotation(&self) -> [f64; 4] {
        let [w, x, y, z] = self.rotation;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n == 0.0 {
            return [1.0, 0.0, 0.0, 0.0];
        }
        [w / n, x / n, y / n, z / n]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(self.unit_rotation())
    }

    /// World-space covariance `R·S·Sᵀ·Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let m = self.rotation_matrix() * Matrix3::from_diagonal(&Vector3::from(self.scale()));
        m * m.transpose()
    }

    pub fn to_array(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let p = self.position;
        let s = self.log_scale;
        let q = self.rotation;
        [
            p[0],
            p[1],
            p[2],
            s[0],
            s[1],
            s[2],
            q[0],
            q[1],
            q[2],
            q[3],
            self.opacity_logit,
            self.intensity_logit,
        ]
    }

    pub fn from_array(a: &[f64]) -> Self {
        Self {
            position: [a[0], a[1], a[2]],
            log_scale: [a[3], a[4], a[5]],
            rotation: [a[6], a[7], a[8], a[9]],
            opacity_logit: a[10],
            intensity_logit: a[11],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian3D>,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Self {
        Self { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.gaussians.iter().all(Gaussian3D::is_finite)
    }

    /// Flat blocks in file order: position, log-scale, quaternion, opacity
    /// logit, intensity logit.
    pub fn to_flat(&self) -> Vec<f64> {
        self.gaussians.iter().flat_map(|g| g.to_array()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(PARAMS_PER_GAUSSIAN) {
            return Err(Error::dims(format!(
                "{} values is not a whole number of Gaussians",
                flat.len()
            )));
        }
        Ok(Self::new(
            flat.chunks(PARAMS_PER_GAUSSIAN).map(Gaussian3D::from_array).collect(),
        ))
    }
}

/// Intrinsics of a pinhole camera. Pixel `(x, y)` samples the image plane
/// at `(x, y)`, so `cx = width / 2` centres the principal point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Intrinsics {
    /// Square pixels, principal point at the image centre.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            near: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(format!(
                "focal lengths must be > 0, got {} {}",
                self.fx, self.fy
            )));
        }
        if !(self.near > 0.0) {
            return Err(Error::invalid(format!("near plane must be > 0, got {}", self.near)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be nonzero"));
        }
        Ok(())
    }
}

/// World-to-camera rigid transform plus intrinsics. Camera axes: `x` right,
/// `y` down, `z` forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub intrinsics: Intrinsics,
}

impl PinholeCamera {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>, intrinsics: Intrinsics) -> Self {
        Self {
            rotation,
            translation,
            intrinsics,
        }
    }

    /// Camera at `eye` looking at `target`, with `up` giving the world's
    /// vertical (image `y` points against it).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>, intrinsics: Intrinsics) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(Error::invalid("camera eye coincides with its target"));
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(Error::invalid("view direction is parallel to the up vector"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = UnitQuaternion::from_matrix(&r);
        let translation = -(rotation * eye);
        Ok(Self::new(rotation, translation, intrinsics))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }
}
