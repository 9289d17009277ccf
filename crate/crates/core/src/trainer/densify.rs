use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::splat::{logit, GaussianCloud, SplatGradients};

/// Adaptive density control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyConfig {
    pub enabled: bool,
    /// First iteration (1-based) at which densification may run.
    pub start: usize,
    /// No densification at or after this iteration.
    pub stop: usize,
    pub interval: usize,
    /// Mean projected-position gradient norm, per pixel, above which a
    /// Gaussian is cloned or split.
    pub grad_threshold: f64,
    /// Largest world-space scale of a Gaussian that is cloned; bigger ones
    /// are split.
    pub split_scale: f64,
    /// Activated opacity below which a Gaussian is removed.
    pub opacity_floor: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            start: 300,
            stop: 2000,
            interval: 100,
            grad_threshold: 2e-4,
            split_scale: 0.1,
            opacity_floor: 0.005,
            max_gaussians: 2000,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 {
            return Err(Error::invalid("densify interval must be positive"));
        }
        if !(self.opacity_floor >= 0.0 && self.opacity_floor < 1.0) {
            return Err(Error::invalid(format!(
                "opacity floor {} outside [0, 1)",
                self.opacity_floor
            )));
        }
        Ok(())
    }
}

/// Running mean of the projected-position gradient norm per Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStats {
    pub sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds one render's gradients; Gaussians that received none are not
    /// counted as seen.
    pub fn record(&mut self, grads: &SplatGradients) {
        for (i, g) in grads.gaussians.iter().enumerate() {
            let norm = g.mean2d[0].hypot(g.mean2d[1]);
            if norm > 0.0 {
                self.sum[i] += norm;
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.sum[i] / self.count[i] as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyOutcome {
    pub cloud: GaussianCloud,
    /// Gaussians appended before pruning.
    pub appended: usize,
    /// Survival mask over the original Gaussians followed by the appended
    /// ones.
    pub keep: Vec<bool>,
}

/// Clones small and splits large high-gradient Gaussians (either way the
/// count grows by one), then drops nearly transparent ones.
pub fn densify_prune(
    cloud: &GaussianCloud,
    stats: &GradStats,
    cfg: &DensifyConfig,
    rng: &mut impl Rng,
) -> Result<DensifyOutcome> {
    if stats.sum.len() != cloud.len() {
        return Err(Error::dims(format!(
            "gradient statistics for {} Gaussians, cloud has {}",
            stats.sum.len(),
            cloud.len()
        )));
    }
    let mut gaussians = cloud.gaussians.clone();
    let mut budget = cfg.max_gaussians.saturating_sub(cloud.len());
    for i in 0..cloud.len() {
        if budget == 0 {
            break;
        }
        if stats.mean(i) <= cfg.grad_threshold {
            continue;
        }
        let g = cloud.gaussians[i];
        let scale = g.scale();
        if scale.iter().cloned().fold(0.0, f64::max) <= cfg.split_scale {
            gaussians.push(g);
        } else {
            let rot = g.rotation_matrix();
            let mut child = || {
                let mut c = g;
                let local = nalgebra::Vector3::from_fn(|k, _| scale[k] * rng.sample::<f64, _>(StandardNormal));
                let offset = rot * local;
                for k in 0..3 {
                    c.position[k] += offset[k];
                    c.log_scale[k] -= 1.6f64.ln();
                }
                c
            };
            gaussians[i] = child();
            let second = child();
            gaussians.push(second);
        }
        budget -= 1;
    }
    let appended = gaussians.len() - cloud.len();
    let floor = if cfg.opacity_floor > 0.0 {
        logit(cfg.opacity_floor)
    } else {
        f64::NEG_INFINITY
    };
    let keep: Vec<bool> = gaussians.iter().map(|g| g.opacity_logit >= floor).collect();
    let cloud = GaussianCloud::new(
        gaussians
            .into_iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(g, _)| g)
            .collect(),
    );
    Ok(DensifyOutcome { cloud, appended, keep })
}
