use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sim_backward, sim_forward, SimNetConfig, SimNetParams, SpikeWindow};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::optim::Adam;
use crate::spike_sim::SpikeStream;

/// Self-supervised training schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSchedule {
    pub steps: usize,
    pub batch: usize,
    /// Side of the square random crops.
    pub crop: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SimSchedule {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch: 4,
            crop: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Optimizer state. Owned by a single training loop.
#[derive(Debug, Clone)]
pub struct SimTrainState {
    pub adam: Adam<f32>,
    pub lr: f64,
}

impl SimTrainState {
    pub fn new(params: &SimNetParams<f32>, lr: f64) -> Self {
        Self {
            adam: Adam::new(params.num_params()),
            lr,
        }
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }
}

/// Trains a fresh network on random windows of `stream`.
pub fn sim_train(stream: &SpikeStream, cfg: SimNetConfig, schedule: &SimSchedule) -> Result<SimNetParams<f32>> {
    let mut params = SimNetParams::init(cfg, schedule.seed)?;
    let mut state = SimTrainState::new(&params, schedule.lr);
    sim_train_from(&mut params, &mut state, stream, schedule)?;
    Ok(params)
}

/// Continues training `params` in place; returns the mean batch loss of
/// every step.
pub fn sim_train_from(
    params: &mut SimNetParams<f32>,
    state: &mut SimTrainState,
    stream: &SpikeStream,
    schedule: &SimSchedule,
) -> Result<Vec<f64>> {
    let len = params.config.window;
    let n = stream.num_readouts();
    if n < len {
        return Err(Error::invalid(format!(
            "stream of {n} readouts is shorter than the {len}-readout window"
        )));
    }
    if schedule.batch == 0 || schedule.crop == 0 {
        return Err(Error::invalid("batch and crop must be positive"));
    }
    let cw = schedule.crop.min(stream.width());
    let ch = schedule.crop.min(stream.height());
    let half = len / 2;
    // Mix the step counter in so resumed runs draw fresh windows.
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ state.step().wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut history = Vec::with_capacity(schedule.steps);
    for _ in 0..schedule.steps {
        let mut acc: Vec<f32> = vec![0.0; params.num_params()];
        let mut batch_loss = 0.0;
        for _ in 0..schedule.batch {
            let t = rng.random_range(half..n - half);
            let x0 = rng.random_range(0..=stream.width() - cw);
            let y0 = rng.random_range(0..=stream.height() - ch);
            let win = SpikeWindow::crop(stream, t, len, x0, y0, cw, ch)?;
            let (loss, grads) = sim_backward(params, &win)?;
            batch_loss += loss;
            for (a, g) in acc.iter_mut().zip(grads.to_flat()) {
                *a += g;
            }
        }
        let inv = 1.0 / schedule.batch as f32;
        acc.iter_mut().for_each(|g| *g *= inv);
        let mut flat = params.to_flat();
        state.adam.tick();
        state.adam.update(&mut flat, &acc, 0, state.lr);
        *params = SimNetParams::from_flat(params.config, &flat)?;
        history.push(batch_loss / schedule.batch as f64);
    }
    Ok(history)
}

/// Full-frame estimate of the intensity at readout `center`.
pub fn sim_infer(params: &SimNetParams<f32>, stream: &SpikeStream, center: usize) -> Result<GrayImage> {
    let win = SpikeWindow::from_stream(stream, center, params.config.window)?;
    sim_forward(params, &win)
}
