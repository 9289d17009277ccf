//! Closed-form spike-to-image reconstructions.
//!
//! All outputs use the normalized convention `σ = Θ`, so a pixel that fires
//! every readout maps to intensity 1.

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::spike_sim::SpikeStream;

/// Temporal window of `2·half_width + 1` readouts centred on `center`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconWindow {
    pub center: usize,
    pub half_width: usize,
}

impl ReconWindow {
    pub fn new(center: usize, half_width: usize) -> Self {
        Self { center, half_width }
    }

    /// Window of odd length `len` centred on `center`.
    pub fn with_length(center: usize, len: usize) -> Result<Self> {
        if len == 0 || len.is_multiple_of(2) {
            return Err(Error::invalid(format!("window length must be odd, got {len}")));
        }
        Ok(Self::new(center, len / 2))
    }

    /// Nominal length `T_Γ`.
    pub fn len(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Whether the full window lies inside a stream of `num_readouts`.
    pub fn fits(&self, num_readouts: usize) -> bool {
        self.center >= self.half_width && self.center + self.half_width < num_readouts
    }

    /// Readout range after clipping to the stream. Fails only if the centre
    /// itself lies outside the stream.
    pub fn clipped(&self, num_readouts: usize) -> Result<std::ops::Range<usize>> {
        if self.center >= num_readouts {
            return Err(Error::OutOfBounds(format!(
                "window centre {} outside stream of {num_readouts} readouts",
                self.center
            )));
        }
        let start = self.center.saturating_sub(self.half_width);
        let end = (self.center + self.half_width + 1).min(num_readouts);
        Ok(start..end)
    }
}

/// Texture from playback: spike count over the window divided by its
/// (clipped) length.
pub fn tfp(stream: &SpikeStream, window: ReconWindow) -> Result<GrayImage> {
    let range = window.clipped(stream.num_readouts())?;
    let len = range.len() as f64;
    Ok(GrayImage::from_fn(stream.width(), stream.height(), |x, y| {
        stream.count(x, y, range.clone()) as f64 / len
    }))
}

/// Windowed firing rate `S_Γ(t)/T_Γ`, the target of the exposure-like loss.
/// Same computation as [`tfp`].
pub fn exposure_target(stream: &SpikeStream, window: ReconWindow) -> Result<GrayImage> {
    tfp(stream, window)
}

/// Texture from inter-spike interval at readout `t`.
///
/// Uses the last spike at or before `t` and the first spike after it. When
/// one side is missing, the two spikes nearest to `t` on the other side are
/// used instead. Pixels with fewer than two spikes fall back to the
/// whole-stream firing rate.
pub fn tfi(stream: &SpikeStream, t: usize) -> Result<GrayImage> {
    let n = stream.num_readouts();
    if t >= n {
        return Err(Error::OutOfBounds(format!(
            "readout {t} outside stream of {n} readouts"
        )));
    }
    Ok(GrayImage::from_fn(
        stream.width(),
        stream.height(),
        |x, y| match interval_around(stream, x, y, t) {
            Some(gap) => (1.0 / gap as f64).min(1.0),
            None => stream.count(x, y, 0..n) as f64 / n as f64,
        },
    ))
}

fn interval_around(stream: &SpikeStream, x: usize, y: usize, t: usize) -> Option<usize> {
    let n = stream.num_readouts();
    let prev = (0..=t).rev().find(|&k| stream.get(x, y, k));
    let next = (t + 1..n).find(|&k| stream.get(x, y, k));
    match (prev, next) {
        (Some(a), Some(b)) => Some(b - a),
        (Some(a), None) => (0..a).rev().find(|&k| stream.get(x, y, k)).map(|b| a - b),
        (None, Some(a)) => (a + 1..n).find(|&k| stream.get(x, y, k)).map(|b| b - a),
        (None, None) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream_from_times(n: usize, times: &[usize]) -> SpikeStream {
        let mut s = SpikeStream::zeros(1, 1, n, 25_000);
        for &k in times {
            s.set(0, 0, k, true);
        }
        s
    }

    #[test]
    fn tfp_counts_over_window() {
        let times: Vec<usize> = (0..33).step_by(3).collect();
        assert_eq!(times.len(), 11);
        let s = stream_from_times(33, &times);
        let img = tfp(&s, ReconWindow::new(16, 16)).unwrap();
        assert_eq!(img.get(0, 0), 11.0 / 33.0);
    }

    #[test]
    fn tfp_saturates_at_one() {
        let s = stream_from_times(33, &(0..33).collect::<Vec<_>>());
        assert_eq!(tfp(&s, ReconWindow::new(16, 16)).unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn tfp_clips_boundary_windows() {
        let s = stream_from_times(10, &[0, 1, 2]);
        // window [-2, 2] clips to [0, 2]: 3 spikes over 3 readouts
        assert_eq!(tfp(&s, ReconWindow::new(0, 2)).unwrap().get(0, 0), 1.0);
        assert!(tfp(&s, ReconWindow::new(10, 2)).is_err());
    }

    #[test]
    fn exposure_target_is_tfp() {
        let s = stream_from_times(40, &[1, 5, 9, 20, 33]);
        let w = ReconWindow::new(20, 16);
        assert_eq!(tfp(&s, w).unwrap(), exposure_target(&s, w).unwrap());
    }

    #[test]
    fn tfi_uses_bracketing_interval() {
        let s = stream_from_times(30, &[10, 14]);
        assert_eq!(tfi(&s, 12).unwrap().get(0, 0), 0.25);
        // after the last spike: two most recent
        assert_eq!(tfi(&s, 20).unwrap().get(0, 0), 0.25);
        // before the first spike: two earliest
        assert_eq!(tfi(&s, 3).unwrap().get(0, 0), 0.25);
    }

    #[test]
    fn tfi_of_saturated_pixel_is_one() {
        let s = stream_from_times(8, &(0..8).collect::<Vec<_>>());
        assert_eq!(tfi(&s, 4).unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn tfi_falls_back_to_rate() {
        let silent = stream_from_times(20, &[]);
        assert_eq!(tfi(&silent, 5).unwrap().get(0, 0), 0.0);
        let single = stream_from_times(20, &[7]);
        // oracle: one spike over the stream
        assert_eq!(tfi(&single, 5).unwrap().get(0, 0), 1.0 / 20.0);
        assert!(tfi(&single, 20).is_err());
    }

    #[test]
    fn window_constructors() {
        assert_eq!(ReconWindow::with_length(40, 33).unwrap().len(), 33);
        assert!(ReconWindow::with_length(40, 32).is_err());
        assert!(ReconWindow::new(16, 16).fits(33));
        assert!(!ReconWindow::new(16, 16).fits(32));
    }
}
