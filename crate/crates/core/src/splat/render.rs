use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::{quat_to_matrix, Gaussian3D, GaussianCloud, PinholeCamera, PARAMS_PER_GAUSSIAN};
use crate::error::Result;
use crate::image::GrayImage;

/// Rasterizer constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    /// Isotropic floor added to every 2D covariance, px².
    pub cov_floor: f64,
    /// Lower clamp on the 2D covariance determinant.
    pub det_min: f64,
    /// Contributions beyond this many standard deviations are skipped.
    pub sigma_cutoff: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            cov_floor: 0.3,
            det_min: 1e-12,
            sigma_cutoff: 3.0,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
        }
    }
}

/// A Gaussian after projection into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub index: usize,
    pub mean: [f64; 2],
    /// Floored 2D covariance `(a, b, c)` of `[[a, b], [b, c]]`.
    pub cov: [f64; 3],
    /// Inverse of `cov` as `(A, B, C)`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub intensity: f64,
    /// Inclusive pixel bounds `[x0, x1, y0, y1]` of the cutoff ellipse;
    /// `None` when it misses the image.
    pub bbox: Option<[usize; 4]>,
    p_cam: Vector3<f64>,
    /// Determinant the conic was computed with, after clamping.
    det: f64,
    det_clamped: bool,
}

/// Projects one Gaussian. `None` means culled by the near plane.
pub fn project(g: &Gaussian3D, cam: &PinholeCamera, settings: &RenderSettings) -> Option<Projected> {
    project_with(g, 0, &cam.rotation_matrix(), cam, settings)
}

fn jacobian(p: &Vector3<f64>, fx: f64, fy: f64) -> Matrix2x3<f64> {
    let (x, y, z) = (p.x, p.y, p.z);
    Matrix2x3::new(fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z))
}

fn project_with(
    g: &Gaussian3D,
    index: usize,
    w: &Matrix3<f64>,
    cam: &PinholeCamera,
    settings: &RenderSettings,
) -> Option<Projected> {
    let k = &cam.intrinsics;
    let p_cam = w * Vector3::from(g.position) + cam.translation;
    if !(p_cam.z >= k.near) {
        return None;
    }
    let u = k.fx * p_cam.x / p_cam.z + k.cx;
    let v = k.fy * p_cam.y / p_cam.z + k.cy;
    let t = jacobian(&p_cam, k.fx, k.fy) * w;
    let cov2 = t * g.covariance() * t.transpose();
    let a = cov2[(0, 0)] + settings.cov_floor;
    let b = cov2[(0, 1)];
    let c = cov2[(1, 1)] + settings.cov_floor;
    let det = a * c - b * b;
    let det_clamped = det < settings.det_min;
    let d = det.max(settings.det_min);
    let conic = [c / d, -b / d, a / d];

    let mid = 0.5 * (a + c);
    let lambda = mid + (mid * mid - det).max(0.0).sqrt();
    let r = settings.sigma_cutoff * lambda.max(0.0).sqrt();
    let bbox = pixel_range(u, r, k.width)
        .zip(pixel_range(v, r, k.height))
        .map(|((x0, x1), (y0, y1))| [x0, x1, y0, y1]);
    Some(Projected {
        index,
        mean: [u, v],
        cov: [a, b, c],
        conic,
        depth: p_cam.z,
        opacity: g.opacity(),
        intensity: g.intensity(),
        bbox,
        p_cam,
        det: d,
        det_clamped,
    })
}

fn pixel_range(center: f64, r: f64, n: usize) -> Option<(usize, usize)> {
    let lo = (center - r).ceil().max(0.0);
    let hi = (center + r).floor().min(n as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: GrayImage,
    /// Transmittance left after the last contributor.
    pub transmittance: GrayImage,
    /// Number of Gaussians composited at each pixel, row-major.
    pub contributors: Vec<u32>,
}

/// Depth-sorted projections plus, for every image row, the sorted indices of
/// projections whose bounds cover it.
struct Prepared {
    projs: Vec<Projected>,
    rows: Vec<Vec<u32>>,
}

fn prepare(cloud: &GaussianCloud, cam: &PinholeCamera, settings: &RenderSettings) -> Prepared {
    let w = cam.rotation_matrix();
    let mut projs: Vec<Projected> = cloud
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_with(g, i, &w, cam, settings))
        .filter(|p| p.bbox.is_some())
        .collect();
    // stable: equal depths keep cloud order
    projs.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    let mut rows = vec![Vec::new(); cam.height()];
    for (k, p) in projs.iter().enumerate() {
        let [_, _, y0, y1] = p.bbox.unwrap();
        for row in &mut rows[y0..=y1] {
            row.push(k as u32);
        }
    }
    Prepared { projs, rows }
}

/// One composited term at a pixel.
#[derive(Clone, Copy)]
struct Hit {
    k: u32,
    alpha: f64,
    gauss: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
    /// Transmittance in front of this term.
    trans: f64,
}

/// Front-to-back traversal of one pixel. Returns the composited colour
/// without background and the final transmittance.
fn composite_pixel(
    prep: &Prepared,
    settings: &RenderSettings,
    x: usize,
    y: usize,
    mut hits: Option<&mut Vec<Hit>>,
) -> (f64, f64, u32) {
    let cut2 = settings.sigma_cutoff * settings.sigma_cutoff;
    let (px, py) = (x as f64, y as f64);
    let mut trans = 1.0;
    let mut color = 0.0;
    let mut count = 0;
    for &k in &prep.rows[y] {
        let p = &prep.projs[k as usize];
        let [x0, x1, _, _] = p.bbox.unwrap();
        if x < x0 || x > x1 {
            continue;
        }
        let dx = px - p.mean[0];
        let dy = py - p.mean[1];
        let [ca, cb, cc] = p.conic;
        let q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy;
        if q > cut2 {
            continue;
        }
        let gauss = (-0.5 * q).exp();
        let raw = p.opacity * gauss;
        if raw < settings.alpha_min {
            continue;
        }
        let clamped = raw > settings.alpha_max;
        let alpha = if clamped { settings.alpha_max } else { raw };
        if let Some(h) = hits.as_deref_mut() {
            h.push(Hit {
                k,
                alpha,
                gauss,
                clamped,
                dx,
                dy,
                trans,
            });
        }
        color += trans * alpha * p.intensity;
        trans *= 1.0 - alpha;
        count += 1;
    }
    (color, trans, count)
}

pub fn render(cloud: &GaussianCloud, cam: &PinholeCamera, background: f64) -> RenderOutput {
    render_with(cloud, cam, background, &RenderSettings::default())
}

pub fn render_with(
    cloud: &GaussianCloud,
    cam: &PinholeCamera,
    background: f64,
    settings: &RenderSettings,
) -> RenderOutput {
    let (w, h) = (cam.width(), cam.height());
    let prep = prepare(cloud, cam, settings);
    let mut image = GrayImage::new(w, h);
    let mut transmittance = GrayImage::new(w, h);
    let mut contributors = vec![0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (color, trans, count) = composite_pixel(&prep, settings, x, y, None);
            image.set(x, y, color + trans * background);
            transmittance.set(x, y, trans);
            contributors[y * w + x] = count;
        }
    }
    RenderOutput {
        image,
        transmittance,
        contributors,
    }
}

/// Gradient of a scalar loss w.r.t. one Gaussian's raw parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianGrad {
    pub position: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub intensity_logit: f64,
    /// Gradient w.r.t. the projected mean in pixels (densification signal).
    pub mean2d: [f64; 2],
}

impl GaussianGrad {
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
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatGradients {
    /// One entry per Gaussian, in cloud order. Culled Gaussians get zeros.
    pub gaussians: Vec<GaussianGrad>,
}

impl SplatGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            gaussians: vec![GaussianGrad::default(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.gaussians.iter().flat_map(GaussianGrad::to_array).collect()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &SplatGradients, scale: f64) {
        for (a, b) in self.gaussians.iter_mut().zip(&other.gaussians) {
            for i in 0..3 {
                a.position[i] += scale * b.position[i];
                a.log_scale[i] += scale * b.log_scale[i];
            }
            for i in 0..4 {
                a.rotation[i] += scale * b.rotation[i];
            }
            a.opacity_logit += scale * b.opacity_logit;
            a.intensity_logit += scale * b.intensity_logit;
            a.mean2d[0] += scale * b.mean2d[0];
            a.mean2d[1] += scale * b.mean2d[1];
        }
    }
}

/// Image-space accumulators for one projected Gaussian.
#[derive(Clone, Copy, Default)]
struct Accum {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    intensity: f64,
}

pub fn render_backward(
    cloud: &GaussianCloud,
    cam: &PinholeCamera,
    background: f64,
    grad_image: &GrayImage,
) -> Result<SplatGradients> {
    render_backward_with(cloud, cam, background, grad_image, &RenderSettings::default())
}

/// Reverse-mode gradients of `Σ grad_image · image` w.r.t. every Gaussian
/// parameter. Cutoff decisions are replayed from the forward pass and held
/// fixed.
pub fn render_backward_with(
    cloud: &GaussianCloud,
    cam: &PinholeCamera,
    background: f64,
    grad_image: &GrayImage,
    settings: &RenderSettings,
) -> Result<SplatGradients> {
    let (w, h) = (cam.width(), cam.height());
    grad_image.check_same_shape(&GrayImage::new(w, h))?;
    let prep = prepare(cloud, cam, settings);
    let mut acc = vec![Accum::default(); prep.projs.len()];
    let mut hits = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let g = grad_image.get(x, y);
            if g == 0.0 {
                continue;
            }
            hits.clear();
            let (_, t_final, _) = composite_pixel(&prep, settings, x, y, Some(&mut hits));
            // colour of everything behind the current term, background included
            let mut behind = t_final * background;
            for hit in hits.iter().rev() {
                let p = &prep.projs[hit.k as usize];
                let a = &mut acc[hit.k as usize];
                a.intensity += g * hit.trans * hit.alpha;
                let d_alpha = g * (hit.trans * p.intensity - behind / (1.0 - hit.alpha));
                behind += hit.trans * hit.alpha * p.intensity;
                if hit.clamped {
                    continue;
                }
                a.opacity += d_alpha * hit.gauss;
                let d_q = -0.5 * hit.gauss * d_alpha * p.opacity;
                let [ca, cb, cc] = p.conic;
                a.conic[0] += d_q * hit.dx * hit.dx;
                a.conic[1] += d_q * 2.0 * hit.dx * hit.dy;
                a.conic[2] += d_q * hit.dy * hit.dy;
                a.mean[0] -= d_q * 2.0 * (ca * hit.dx + cb * hit.dy);
                a.mean[1] -= d_q * 2.0 * (cb * hit.dx + cc * hit.dy);
            }
        }
    }

    let wmat = cam.rotation_matrix();
    let mut out = SplatGradients::zeros(cloud.len());
    for (p, a) in prep.projs.iter().zip(&acc) {
        let g = &cloud.gaussians[p.index];
        out.gaussians[p.index] = gaussian_backward(g, p, a, &wmat, cam);
    }
    Ok(out)
}

/// Derivatives of the unit-quaternion rotation matrix w.r.t. `(w, x, y, z)`.
fn quat_matrix_partials(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q;
    let two = 2.0;
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * two,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * two,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * two,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * two,
    ]
}

fn gaussian_backward(
    g: &Gaussian3D,
    p: &Projected,
    a: &Accum,
    wmat: &Matrix3<f64>,
    cam: &PinholeCamera,
) -> GaussianGrad {
    let k = &cam.intrinsics;
    let op = p.opacity;
    let col = p.intensity;

    // conic -> 2D covariance
    let [ca, cb, cc] = p.conic;
    let g2 = if p.det_clamped {
        let d = p.det;
        let ga = a.conic[2] / d;
        let gb = -a.conic[1] / d;
        let gc = a.conic[0] / d;
        Matrix2::new(ga, 0.5 * gb, 0.5 * gb, gc)
    } else {
        let q = Matrix2::new(ca, cb, cb, cc);
        let gq = Matrix2::new(a.conic[0], 0.5 * a.conic[1], 0.5 * a.conic[1], a.conic[2]);
        -(q * gq * q)
    };

    // 2D covariance -> world covariance and projection matrix
    let pc = p.p_cam;
    let j = jacobian(&pc, k.fx, k.fy);
    let t = j * wmat;
    let rot = quat_to_matrix(g.unit_rotation());
    let s = g.scale();
    let m = rot * Matrix3::from_diagonal(&Vector3::from(s));
    let sigma = m * m.transpose();
    let d_sigma = t.transpose() * g2 * t;
    let d_t = 2.0 * g2 * t * sigma;
    let d_j = d_t * wmat.transpose();

    // Jacobian and projected mean -> camera-space position
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let (z2, z3) = (z * z, z * z * z);
    let [du, dv] = a.mean;
    let dpx = d_j[(0, 2)] * (-k.fx / z2) + du * k.fx / z;
    let dpy = d_j[(1, 2)] * (-k.fy / z2) + dv * k.fy / z;
    let dpz = d_j[(0, 0)] * (-k.fx / z2)
        + d_j[(0, 2)] * (2.0 * k.fx * x / z3)
        + d_j[(1, 1)] * (-k.fy / z2)
        + d_j[(1, 2)] * (2.0 * k.fy * y / z3)
        - du * k.fx * x / z2
        - dv * k.fy * y / z2;
    let d_pos = wmat.transpose() * Vector3::new(dpx, dpy, dpz);

    // world covariance -> scale and rotation
    let d_m = 2.0 * d_sigma * m;
    let mut d_log_scale = [0.0; 3];
    let mut d_rot = Matrix3::zeros();
    for c in 0..3 {
        let mut ds = 0.0;
        for r in 0..3 {
            ds += d_m[(r, c)] * rot[(r, c)];
            d_rot[(r, c)] = d_m[(r, c)] * s[c];
        }
        d_log_scale[c] = ds * s[c];
    }
    let qn = g.unit_rotation();
    let partials = quat_matrix_partials(qn);
    let d_qn: [f64; 4] = std::array::from_fn(|i| d_rot.component_mul(&partials[i]).sum());
    let [w, xq, yq, zq] = g.rotation;
    let norm = (w * w + xq * xq + yq * yq + zq * zq).sqrt();
    let dot: f64 = (0..4).map(|i| qn[i] * d_qn[i]).sum();
    let d_q = if norm > 0.0 {
        std::array::from_fn(|i| (d_qn[i] - qn[i] * dot) / norm)
    } else {
        [0.0; 4]
    };

    GaussianGrad {
        position: [d_pos.x, d_pos.y, d_pos.z],
        log_scale: d_log_scale,
        rotation: d_q,
        opacity_logit: a.opacity * op * (1.0 - op),
        intensity_logit: a.intensity * col * (1.0 - col),
        mean2d: a.mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::Intrinsics;
    use nalgebra::UnitQuaternion;

    fn identity_cam(w: usize, h: usize, f: f64) -> PinholeCamera {
        PinholeCamera::new(
            UnitQuaternion::identity(),
            Vector3::zeros(),
            Intrinsics::centered(w, h, f),
        )
    }

    #[test]
    fn on_axis_projection_matches_pinhole_jacobian() {
        let cam = identity_cam(32, 32, 40.0);
        let g = Gaussian3D::isotropic([0.0, 0.0, 5.0], 0.2, 0.5, 0.5);
        let settings = RenderSettings::default();
        let p = project(&g, &cam, &settings).unwrap();
        let expect = (40.0 * 0.2 / 5.0f64).powi(2) + settings.cov_floor;
        assert!((p.cov[0] - expect).abs() < 1e-12);
        assert!((p.cov[2] - expect).abs() < 1e-12);
        assert!(p.cov[1].abs() < 1e-12);
        assert_eq!(p.mean, [16.0, 16.0]);
        assert_eq!(p.depth, 5.0);
    }

    #[test]
    fn behind_near_plane_is_culled() {
        let cam = identity_cam(16, 16, 20.0);
        let g = Gaussian3D::isotropic([0.0, 0.0, 0.001], 0.2, 0.5, 0.5);
        assert!(project(&g, &cam, &RenderSettings::default()).is_none());
        let g = Gaussian3D::isotropic([0.0, 0.0, -3.0], 0.2, 0.5, 0.5);
        assert!(project(&g, &cam, &RenderSettings::default()).is_none());
        let out = render(&GaussianCloud::new(vec![g]), &cam, 0.25);
        assert!(out.image.as_slice().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn single_gaussian_center_pixel() {
        let cam = identity_cam(16, 16, 20.0);
        let g = Gaussian3D::isotropic([0.0, 0.0, 4.0], 0.3, 0.8, 1.0 - 1e-15);
        let out = render(&GaussianCloud::new(vec![g]), &cam, 0.0);
        assert!((out.image.get(8, 8) - 0.8).abs() < 1e-9);
        assert!((out.transmittance.get(8, 8) - 0.2).abs() < 1e-12);
        assert_eq!(out.contributors[8 * 16 + 8], 1);
    }

    #[test]
    fn two_layer_compositing() {
        let cam = identity_cam(16, 16, 20.0);
        let front = Gaussian3D::isotropic([0.0, 0.0, 3.0], 0.3, 0.5, 1.0 - 1e-15);
        let back = Gaussian3D::isotropic([0.0, 0.0, 6.0], 0.3, 0.5, 1e-15);
        let out = render(&GaussianCloud::new(vec![back, front]), &cam, 0.0);
        assert!((out.image.get(8, 8) - 0.5).abs() < 1e-9);
        assert!((out.transmittance.get(8, 8) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cam = identity_cam(16, 16, 20.0);
        let g = Gaussian3D::isotropic([0.1, -0.2, 4.0], 0.3, 0.6, 0.4);
        let grads = render_backward(&GaussianCloud::new(vec![g]), &cam, 0.3, &GrayImage::new(16, 16)).unwrap();
        assert_eq!(grads.to_flat(), vec![0.0; PARAMS_PER_GAUSSIAN]);
        assert!(render_backward(&GaussianCloud::new(vec![g]), &cam, 0.3, &GrayImage::new(8, 16)).is_err());
    }
}
