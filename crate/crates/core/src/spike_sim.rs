//! Integrate-and-fire spike camera simulator.
//!
//! Every pixel integrates `σ·I` charge per readout interval. Whenever the
//! accumulated charge reaches the threshold `Θ` inside an interval the pixel
//! reads out a single `1` for that interval and keeps the remainder modulo
//! `Θ`. Two or more crossings inside one interval still produce one spike.
//!
//! The Poisson mode replaces the deterministic increment with a photon count
//! drawn per readout, so that its expected charge matches the ideal mode plus
//! an additive dark-current term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Default readout interval of the sensor, microseconds.
pub const DEFAULT_TAU_US: f64 = 25.0;

// Separate stream id for the initial-voltage draw so it never aliases a
// pixel's photon stream.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeCamParams {
    /// Firing threshold Θ, charge units.
    pub threshold: f64,
    /// Conversion σ, charge per unit intensity per readout.
    pub conversion: f64,
    /// Readout interval τ in microseconds.
    pub tau_us: f64,
    /// Expected photons per unit intensity per readout (Poisson mode).
    pub photon_scale: f64,
    /// Expected spurious charge per readout (Poisson mode).
    pub dark_rate: f64,
}

impl Default for SpikeCamParams {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            conversion: 1.0,
            tau_us: DEFAULT_TAU_US,
            photon_scale: 64.0,
            dark_rate: 0.0,
        }
    }
}

impl SpikeCamParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.threshold) {
            return Err(Error::invalid(format!("threshold must be > 0, got {}", self.threshold)));
        }
        if !positive(self.conversion) {
            return Err(Error::invalid(format!(
                "conversion must be > 0, got {}",
                self.conversion
            )));
        }
        if !positive(self.tau_us) {
            return Err(Error::invalid(format!("tau must be > 0, got {}", self.tau_us)));
        }
        if !positive(self.photon_scale) {
            return Err(Error::invalid(format!(
                "photon scale must be > 0, got {}",
                self.photon_scale
            )));
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::invalid(format!(
                "dark rate must be >= 0, got {}",
                self.dark_rate
            )));
        }
        Ok(())
    }

    /// τ rounded to whole nanoseconds, the unit stored in `.spk` headers.
    pub fn tau_ns(&self) -> u32 {
        (self.tau_us * 1000.0).round() as u32
    }

    /// Long-run firing probability per readout for a constant intensity in
    /// ideal mode.
    pub fn ideal_rate(&self, intensity: f64) -> f64 {
        (self.conversion * intensity / self.threshold).min(1.0)
    }
}

/// Ground-truth intensity frames, one per readout interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySequence {
    width: usize,
    height: usize,
    frames: Vec<GrayImage>,
}

impl IntensitySequence {
    pub fn new(frames: Vec<GrayImage>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("intensity sequence needs at least one frame"))?;
        let (width, height) = (first.width(), first.height());
        for (k, f) in frames.iter().enumerate() {
            if f.width() != width || f.height() != height {
                return Err(Error::dims(format!(
                    "frame {k} is {}x{}, expected {width}x{height}",
                    f.width(),
                    f.height()
                )));
            }
            if let Some(v) = f.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::invalid(format!("frame {k} holds intensity {v} outside [0,1]")));
            }
        }
        Ok(Self { width, height, frames })
    }

    /// `count` copies of the same frame.
    pub fn constant(frame: GrayImage, count: usize) -> Result<Self> {
        Self::new(vec![frame; count])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &GrayImage {
        &self.frames[k]
    }
}

/// Binary readouts `S[x, y, k]`.
///
/// Each readout is stored bit-packed, row-major, most significant bit first,
/// which is also the `.spk` payload layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeStream {
    width: usize,
    height: usize,
    num_readouts: usize,
    tau_ns: u32,
    bytes_per_frame: usize,
    data: Vec<u8>,
}

impl SpikeStream {
    pub fn zeros(width: usize, height: usize, num_readouts: usize, tau_ns: u32) -> Self {
        let bytes_per_frame = (width * height).div_ceil(8);
        Self {
            width,
            height,
            num_readouts,
            tau_ns,
            bytes_per_frame,
            data: vec![0; bytes_per_frame * num_readouts],
        }
    }

    /// Wraps an already packed payload.
    pub fn from_packed(width: usize, height: usize, num_readouts: usize, tau_ns: u32, data: Vec<u8>) -> Result<Self> {
        let bytes_per_frame = (width * height).div_ceil(8);
        if data.len() != bytes_per_frame * num_readouts {
            return Err(Error::dims(format!(
                "packed payload has {} bytes, expected {}",
                data.len(),
                bytes_per_frame * num_readouts
            )));
        }
        Ok(Self {
            width,
            height,
            num_readouts,
            tau_ns,
            bytes_per_frame,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_readouts(&self) -> usize {
        self.num_readouts
    }

    pub fn tau_ns(&self) -> u32 {
        self.tau_ns
    }

    pub fn tau_us(&self) -> f64 {
        self.tau_ns as f64 / 1000.0
    }

    pub fn bytes_per_frame(&self) -> usize {
        self.bytes_per_frame
    }

    pub fn packed(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    fn bit_index(&self, x: usize, y: usize, k: usize) -> (usize, u8) {
        let i = y * self.width + x;
        (k * self.bytes_per_frame + i / 8, 0x80 >> (i % 8))
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, k: usize) -> bool {
        let (byte, mask) = self.bit_index(x, y, k);
        self.data[byte] & mask != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, k: usize, spike: bool) {
        let (byte, mask) = self.bit_index(x, y, k);
        if spike {
            self.data[byte] |= mask;
        } else {
            self.data[byte] &= !mask;
        }
    }

    /// Spike count of pixel `(x, y)` over readouts `range`.
    pub fn count(&self, x: usize, y: usize, range: std::ops::Range<usize>) -> usize {
        range.filter(|&k| self.get(x, y, k)).count()
    }

    pub fn total_spikes(&self) -> usize {
        self.data.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Readout indices at which pixel `(x, y)` fired.
    pub fn spike_times(&self, x: usize, y: usize) -> Vec<usize> {
        (0..self.num_readouts).filter(|&k| self.get(x, y, k)).collect()
    }
}

/// Per-pixel residual voltage of the integrators, always in `[0, Θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorState {
    width: usize,
    height: usize,
    voltage: Vec<f64>,
}

impl IntegratorState {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            voltage: vec![0.0; width * height],
        }
    }

    /// Uniform random voltages in `[0, Θ)` drawn from `seed`.
    pub fn seeded(width: usize, height: usize, threshold: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let voltage = (0..width * height).map(|_| rng.random::<f64>() * threshold).collect();
        Self { width, height, voltage }
    }

    pub fn from_voltages(width: usize, height: usize, voltage: Vec<f64>, threshold: f64) -> Result<Self> {
        if voltage.len() != width * height {
            return Err(Error::dims(format!(
                "{} voltages for a {width}x{height} sensor",
                voltage.len()
            )));
        }
        if let Some(v) = voltage.iter().find(|v| !(0.0..threshold).contains(*v)) {
            return Err(Error::invalid(format!("residual voltage {v} outside [0, {threshold})")));
        }
        Ok(Self { width, height, voltage })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn voltages(&self) -> &[f64] {
        &self.voltage
    }

    fn check_matches(&self, frames: &IntensitySequence) -> Result<()> {
        if self.width != frames.width() || self.height != frames.height() {
            return Err(Error::dims(format!(
                "integrator state is {}x{}, frames are {}x{}",
                self.width,
                self.height,
                frames.width(),
                frames.height()
            )));
        }
        Ok(())
    }
}

/// One integrate-and-fire step. Returns whether the pixel spikes in this
/// readout; `v` keeps the residual modulo `threshold`.
#[inline]
fn integrate(v: &mut f64, increment: f64, threshold: f64) -> bool {
    let total = *v + increment;
    let fired = total >= threshold;
    let mut rest = total % threshold;
    // `%` can return exactly `threshold` only through rounding of huge totals.
    if rest >= threshold {
        rest = 0.0;
    }
    *v = rest;
    fired
}

/// Deterministic integrate-and-fire. `state` is updated in place so that a
/// caller can continue a simulation across calls.
pub fn simulate_ideal_with_state(
    frames: &IntensitySequence,
    params: &SpikeCamParams,
    state: &mut IntegratorState,
) -> Result<SpikeStream> {
    params.validate()?;
    state.check_matches(frames)?;
    let (w, h) = (frames.width(), frames.height());
    let mut stream = SpikeStream::zeros(w, h, frames.len(), params.tau_ns());
    for (k, frame) in frames.frames().iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let v = &mut state.voltage[y * w + x];
                if integrate(v, params.conversion * frame.get(x, y), params.threshold) {
                    stream.set(x, y, k, true);
                }
            }
        }
    }
    Ok(stream)
}

pub fn simulate_ideal(
    frames: &IntensitySequence,
    params: &SpikeCamParams,
    initial: &IntegratorState,
) -> Result<SpikeStream> {
    let mut state = initial.clone();
    simulate_ideal_with_state(frames, params, &mut state)
}

/// Poisson photon-noise simulation with explicit initial voltages.
///
/// Each pixel draws from its own ChaCha stream (`seed`, pixel index), so the
/// result does not depend on traversal order.
pub fn simulate_poisson_from(
    frames: &IntensitySequence,
    params: &SpikeCamParams,
    initial: &IntegratorState,
    seed: u64,
) -> Result<SpikeStream> {
    params.validate()?;
    initial.check_matches(frames)?;
    let (w, h) = (frames.width(), frames.height());
    let mut stream = SpikeStream::zeros(w, h, frames.len(), params.tau_ns());
    // Photon counts are scaled so E[charge] = σ·I + dark.
    let charge_per_photon = params.conversion / params.photon_scale;
    let dark_photons = params.dark_rate / charge_per_photon;
    for y in 0..h {
        for x in 0..w {
            let pixel = y * w + x;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(pixel as u64);
            let mut v = initial.voltage[pixel];
            for (k, frame) in frames.frames().iter().enumerate() {
                let mean = params.photon_scale * frame.get(x, y) + dark_photons;
                let photons = sample_poisson(&mut rng, mean);
                if integrate(&mut v, photons * charge_per_photon, params.threshold) {
                    stream.set(x, y, k, true);
                }
            }
        }
    }
    Ok(stream)
}

/// Poisson simulation starting from [`IntegratorState::seeded`] voltages.
pub fn simulate_poisson(frames: &IntensitySequence, params: &SpikeCamParams, seed: u64) -> Result<SpikeStream> {
    let initial = IntegratorState::seeded(frames.width(), frames.height(), params.threshold, seed);
    simulate_poisson_from(frames, params, &initial, seed)
}

fn sample_poisson<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    // `Poisson::new` only fails for non-positive or non-finite means.
    Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_frames(w: usize, h: usize, value: f64, n: usize) -> IntensitySequence {
        IntensitySequence::constant(GrayImage::filled(w, h, value), n).unwrap()
    }

    /// Closed-form integrate-and-fire for constant input starting at `v0`:
    /// readout k (1-based) fires iff floor((v0 + kσI)/Θ) > floor((v0 + (k-1)σI)/Θ).
    fn closed_form_spikes(v0: f64, inc: f64, theta: f64, n: usize) -> Vec<bool> {
        (1..=n)
            .map(|k| {
                let before = ((v0 + (k - 1) as f64 * inc) / theta).floor();
                let after = ((v0 + k as f64 * inc) / theta).floor();
                after > before
            })
            .collect()
    }

    #[test]
    fn half_intensity_fires_every_fourth_readout() {
        let frames = constant_frames(1, 1, 0.5, 16);
        let params = SpikeCamParams {
            threshold: 2.0,
            conversion: 1.0,
            tau_us: 1.0,
            ..Default::default()
        };
        let s = simulate_ideal(&frames, &params, &IntegratorState::zeros(1, 1)).unwrap();
        // readouts 4, 8, 12, 16 (1-based)
        assert_eq!(s.spike_times(0, 0), vec![3, 7, 11, 15]);
        let oracle = closed_form_spikes(0.0, 0.5, 2.0, 16);
        let got: Vec<bool> = (0..16).map(|k| s.get(0, 0, k)).collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn dark_frames_give_silent_stream() {
        let frames = constant_frames(3, 2, 0.0, 10);
        let s = simulate_ideal(&frames, &SpikeCamParams::default(), &IntegratorState::zeros(3, 2)).unwrap();
        assert_eq!(s.total_spikes(), 0);
    }

    #[test]
    fn unit_intensity_fires_every_readout() {
        let frames = constant_frames(2, 2, 1.0, 9);
        let s = simulate_ideal(&frames, &SpikeCamParams::default(), &IntegratorState::zeros(2, 2)).unwrap();
        assert_eq!(s.total_spikes(), 2 * 2 * 9);
    }

    #[test]
    fn multiple_crossings_emit_single_spike() {
        let frames = constant_frames(1, 1, 1.0, 3);
        let params = SpikeCamParams {
            threshold: 0.4,
            ..Default::default()
        };
        let mut state = IntegratorState::zeros(1, 1);
        let s = simulate_ideal_with_state(&frames, &params, &mut state).unwrap();
        assert_eq!(s.total_spikes(), 3);
        // 3.0 mod 0.4 = 0.2
        assert!((state.voltages()[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn state_dimension_mismatch_is_rejected() {
        let frames = constant_frames(2, 2, 0.5, 4);
        let err = simulate_ideal(&frames, &SpikeCamParams::default(), &IntegratorState::zeros(3, 2));
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let frames = constant_frames(1, 1, 0.5, 4);
        for p in [
            SpikeCamParams {
                threshold: 0.0,
                ..Default::default()
            },
            SpikeCamParams {
                conversion: -1.0,
                ..Default::default()
            },
            SpikeCamParams {
                tau_us: 0.0,
                ..Default::default()
            },
            SpikeCamParams {
                dark_rate: -0.1,
                ..Default::default()
            },
            SpikeCamParams {
                photon_scale: 0.0,
                ..Default::default()
            },
        ] {
            assert!(simulate_ideal(&frames, &p, &IntegratorState::zeros(1, 1)).is_err());
        }
    }

    #[test]
    fn intensity_outside_unit_range_is_rejected() {
        assert!(IntensitySequence::new(vec![GrayImage::filled(1, 1, 1.5)]).is_err());
        assert!(IntensitySequence::new(vec![]).is_err());
    }

    #[test]
    fn dark_current_alone_produces_spikes() {
        let frames = constant_frames(4, 4, 0.0, 200);
        let params = SpikeCamParams {
            dark_rate: 0.1,
            ..Default::default()
        };
        let s = simulate_poisson(&frames, &params, 3).unwrap();
        assert!(s.total_spikes() > 0);
    }

    #[test]
    fn poisson_rate_matches_ideal_rate() {
        // Monte-Carlo vs the analytic rate σI/Θ = 0.25. Spikes of an
        // integrate-and-fire counter over n readouts have variance at most
        // that of a Bernoulli(p) sequence, so p(1-p)/n bounds the squared SE.
        let n = 10_000;
        let frames = constant_frames(1, 1, 0.5, n);
        let params = SpikeCamParams {
            threshold: 2.0,
            conversion: 1.0,
            photon_scale: 1000.0,
            dark_rate: 0.0,
            ..Default::default()
        };
        let s = simulate_poisson(&frames, &params, 11).unwrap();
        let rate = s.total_spikes() as f64 / n as f64;
        let p = 0.25;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((rate - p).abs() <= 3.0 * se, "rate {rate}");
    }

    #[test]
    fn poisson_converges_to_ideal_for_many_photons() {
        let (w, h, n) = (8, 8, 100);
        let frames = IntensitySequence::new(
            (0..n)
                .map(|k| GrayImage::from_fn(w, h, |x, y| ((x * 7 + y * 3 + k) % 10) as f64 / 10.0))
                .collect(),
        )
        .unwrap();
        let params = SpikeCamParams {
            photon_scale: 1e9,
            ..Default::default()
        };
        let init = IntegratorState::seeded(w, h, params.threshold, 5);
        let ideal = simulate_ideal(&frames, &params, &init).unwrap();
        let noisy = simulate_poisson(&frames, &params, 5).unwrap();
        let mut agree = 0;
        for k in 0..n {
            for y in 0..h {
                for x in 0..w {
                    agree += (ideal.get(x, y, k) == noisy.get(x, y, k)) as usize;
                }
            }
        }
        let frac = agree as f64 / (w * h * n) as f64;
        assert!(frac > 0.99, "agreement {frac}");
    }

    #[test]
    fn poisson_is_deterministic() {
        let frames = constant_frames(5, 3, 0.3, 50);
        let params = SpikeCamParams {
            photon_scale: 4.0,
            dark_rate: 0.02,
            ..Default::default()
        };
        let a = simulate_poisson(&frames, &params, 42).unwrap();
        let b = simulate_poisson(&frames, &params, 42).unwrap();
        let c = simulate_poisson(&frames, &params, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn seeded_state_is_in_range() {
        let s = IntegratorState::seeded(10, 10, 2.5, 1);
        assert!(s.voltages().iter().all(|v| (0.0..2.5).contains(v)));
    }

    #[test]
    fn tau_is_stored_in_nanoseconds() {
        assert_eq!(SpikeCamParams::default().tau_ns(), 25_000);
    }
}
