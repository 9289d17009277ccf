//! Shared fixtures for the finite-difference checks.

#![allow(dead_code)]

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikegs::sim_net::{sim_backward, sim_loss, SimNetConfig, SimNetParams, SpikeWindow};
use spikegs::splat::{
    render_backward_with, render_with, Gaussian3D, GaussianCloud, Intrinsics, PinholeCamera, RenderSettings,
};
use spikegs::GrayImage;

pub const TOL: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn random_scene(seed: u64, n: usize) -> (GaussianCloud, PinholeCamera, GrayImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..n)
        .map(|_| Gaussian3D {
            position: [
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.5..0.5),
            ],
            log_scale: [
                rng.random_range(-2.3..-1.2),
                rng.random_range(-2.3..-1.2),
                rng.random_range(-2.3..-1.2),
            ],
            rotation: [
                rng.random_range(0.2..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ],
            opacity_logit: rng.random_range(-1.0..2.0),
            intensity_logit: rng.random_range(-2.0..2.0),
        })
        .collect();
    let cam = PinholeCamera::look_at(
        Vector3::new(rng.random_range(-1.0..1.0), -3.5, rng.random_range(-0.5..0.5)),
        Vector3::zeros(),
        Vector3::z(),
        Intrinsics::centered(32, 32, 40.0),
    )
    .unwrap();
    let weights = GrayImage::from_fn(32, 32, |_, _| rng.random_range(-1.0..1.0));
    (GaussianCloud::new(gaussians), cam, weights)
}

pub fn weighted_render(
    cloud: &GaussianCloud,
    cam: &PinholeCamera,
    weights: &GrayImage,
    bg: f64,
    s: &RenderSettings,
) -> f64 {
    let img = render_with(cloud, cam, bg, s).image;
    img.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
}

/// Returns the worst relative error over all parameters.
pub fn splat_check(seed: u64, settings: &RenderSettings) -> f64 {
    let (cloud, cam, weights) = random_scene(seed, 5);
    let bg = 0.2;
    let grads = render_backward_with(&cloud, &cam, bg, &weights, settings)
        .unwrap()
        .to_flat();
    let flat = cloud.to_flat();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += h;
        let mut minus = flat.clone();
        minus[i] -= h;
        let fp = weighted_render(&GaussianCloud::from_flat(&plus).unwrap(), &cam, &weights, bg, settings);
        let fm = weighted_render(&GaussianCloud::from_flat(&minus).unwrap(), &cam, &weights, bg, settings);
        let numeric = (fp - fm) / (2.0 * h);
        let err = rel_err(grads[i], numeric, 1e-4);
        if err > TOL {
            eprintln!("seed {seed} param {i}: analytic {} numeric {numeric}", grads[i]);
        }
        worst = worst.max(err);
    }
    worst
}

pub fn random_window(seed: u64, len: usize, w: usize, h: usize) -> SpikeWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rates: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.05..0.9)).collect();
    let mut bits = vec![0u8; len * w * h];
    for k in 0..len {
        for (i, r) in rates.iter().enumerate() {
            bits[k * w * h + i] = rng.random_bool(*r) as u8;
        }
    }
    SpikeWindow::from_bits(len, w, h, bits).unwrap()
}

/// Checks every bias and a random sample of weights in each layer. Returns
/// the number of parameters whose relative error reaches [`TOL`].
pub fn sim_check(cfg: SimNetConfig, init_seed: u64, window: &SpikeWindow) -> usize {
    let params: SimNetParams<f64> = SimNetParams::<f32>::init(cfg, init_seed).unwrap().cast();
    let (_, grads) = sim_backward(&params, window).unwrap();
    let g = grads.to_flat();
    let flat = params.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed ^ 0x5eed);
    let mut indices: Vec<usize> = Vec::new();
    let mut offset = 0;
    for layer in params.layers() {
        let nw = layer.weight.len();
        for _ in 0..12 {
            indices.push(offset + rng.random_range(0..nw));
        }
        indices.extend(offset + nw..offset + nw + layer.bias.len().min(8));
        offset += layer.num_params();
    }
    let h = 1e-7;
    let mut failures = 0;
    for &i in &indices {
        let mut plus = flat.clone();
        plus[i] += h;
        let mut minus = flat.clone();
        minus[i] -= h;
        let fp = sim_loss(&SimNetParams::from_flat(cfg, &plus).unwrap(), window).unwrap();
        let fm = sim_loss(&SimNetParams::from_flat(cfg, &minus).unwrap(), window).unwrap();
        let numeric = (fp - fm) / (2.0 * h);
        if rel_err(g[i], numeric, 1e-5) >= TOL {
            eprintln!("param {i}: analytic {} numeric {numeric}", g[i]);
            failures += 1;
        }
    }
    failures
}
