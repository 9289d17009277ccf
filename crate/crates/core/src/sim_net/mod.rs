//! Spike Instant Mapping network: a blind-spot network that maps a window of
//! binary readouts to the intensity image at the window centre.
//!
//! The window is rotated four ways. Each rotation passes through the same
//! stack of shifted 3x3 convolutions whose receptive field only grows
//! upwards; a final one-row shift makes it strictly exclude the centre row.
//! Un-rotating and concatenating the four feature maps gives every output
//! pixel a receptive field that covers its neighbourhood but never the pixel
//! itself. Pointwise fusion layers then produce a single channel.
//!
//! Weights are shared between the four rotations.

mod conv;
mod train;

pub use conv::Layer;
pub use train::{sim_infer, sim_train, sim_train_from, SimSchedule, SimTrainState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::optim::Real;
use crate::recon::ReconWindow;
use crate::spike_sim::SpikeStream;

use conv::{
    leaky_backward, leaky_inplace, pointwise_backward, pointwise_forward, rotate, shift_conv_backward,
    shift_conv_forward, LEAKY_SLOPE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimNetConfig {
    /// Number of shifted 3x3 layers (`m`).
    pub shift_layers: usize,
    /// Number of pointwise fusion layers (`n`).
    pub fuse_layers: usize,
    /// Width of the directional feature maps.
    pub hidden: usize,
    /// Input window length `T_Γ` in readouts.
    pub window: usize,
}

impl Default for SimNetConfig {
    fn default() -> Self {
        Self {
            shift_layers: 3,
            fuse_layers: 3,
            hidden: 32,
            window: 33,
        }
    }
}

impl SimNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shift_layers == 0 {
            return Err(Error::invalid("mapping network needs at least one shifted layer"));
        }
        if self.fuse_layers == 0 {
            return Err(Error::invalid("mapping network needs at least one fusion layer"));
        }
        if self.hidden < 2 {
            return Err(Error::invalid(format!(
                "hidden width must be >= 2, got {}",
                self.hidden
            )));
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "window length must be odd, got {}",
                self.window
            )));
        }
        Ok(())
    }

    /// `(in, out)` channel pairs of the shifted layers. The first layer is
    /// half width when there is more than one.
    pub fn shift_widths(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.shift_layers);
        let mut cin = self.window;
        for i in 0..self.shift_layers {
            let cout = if i == 0 && self.shift_layers > 1 {
                (self.hidden / 2).max(1)
            } else {
                self.hidden
            };
            widths.push((cin, cout));
            cin = cout;
        }
        widths
    }

    /// `(in, out)` channel pairs of the fusion layers, halving from the
    /// concatenated `4·hidden` down to `hidden`, ending in one channel.
    pub fn fuse_widths(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.fuse_layers);
        let mut cin = 4 * self.hidden;
        for j in 0..self.fuse_layers {
            let cout = if j + 1 == self.fuse_layers {
                1
            } else {
                ((4 * self.hidden) >> (j + 1)).max(self.hidden)
            };
            widths.push((cin, cout));
            cin = cout;
        }
        widths
    }
}

/// Number of learnable weights and biases for `cfg`.
pub fn param_count(cfg: &SimNetConfig) -> Result<usize> {
    cfg.validate()?;
    let shift: usize = cfg.shift_widths().iter().map(|&(i, o)| o * i * 9 + o).sum();
    let fuse: usize = cfg.fuse_widths().iter().map(|&(i, o)| o * i + o).sum();
    Ok(shift + fuse)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimNetParams<T = f32> {
    pub config: SimNetConfig,
    pub shift: Vec<Layer<T>>,
    pub fuse: Vec<Layer<T>>,
}

impl<T: Real> SimNetParams<T> {
    pub fn zeros(config: SimNetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            shift: config
                .shift_widths()
                .iter()
                .map(|&(i, o)| Layer::zeros(i, o, 3))
                .collect(),
            fuse: config
                .fuse_widths()
                .iter()
                .map(|&(i, o)| Layer::zeros(i, o, 1))
                .collect(),
        })
    }

    /// He-uniform weights for the leaky rectifier, zero biases, and an output
    /// bias of 0.5 so training starts inside the clamp range.
    pub fn init(config: SimNetConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE);
        for layer in p.shift.iter_mut().chain(p.fuse.iter_mut()) {
            let fan_in = (layer.in_ch * layer.kernel * layer.kernel) as f64;
            let bound = (3.0 * gain / fan_in).sqrt();
            for w in &mut layer.weight {
                *w = T::from_f64(rng.random_range(-bound..bound));
            }
        }
        if let Some(last) = p.fuse.last_mut() {
            last.bias[0] = T::from_f64(0.5);
        }
        Ok(p)
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Layer::num_params).sum()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.shift.iter().chain(self.fuse.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.shift.iter_mut().chain(self.fuse.iter_mut())
    }

    /// All parameters in storage order: each layer's weights then biases,
    /// shifted layers first.
    pub fn to_flat(&self) -> Vec<T> {
        let mut flat = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            flat.extend_from_slice(&l.weight);
            flat.extend_from_slice(&l.bias);
        }
        flat
    }

    pub fn from_flat(config: SimNetConfig, flat: &[T]) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if flat.len() != p.num_params() {
            return Err(Error::dims(format!(
                "{} values for a network with {} parameters",
                flat.len(),
                p.num_params()
            )));
        }
        let mut off = 0;
        for l in p.layers_mut() {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(p)
    }

    pub fn cast<U: Real>(&self) -> SimNetParams<U> {
        let conv = |l: &Layer<T>| Layer {
            in_ch: l.in_ch,
            out_ch: l.out_ch,
            kernel: l.kernel,
            weight: l.weight.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            bias: l.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        };
        SimNetParams {
            config: self.config,
            shift: self.shift.iter().map(conv).collect(),
            fuse: self.fuse.iter().map(conv).collect(),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            shift: self.shift.iter().map(Layer::zeros_like).collect(),
            fuse: self.fuse.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.to_f64().is_finite())
    }
}

/// Binary readouts of a `len`-readout window, stored `[k][row][col]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeWindow {
    len: usize,
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl SpikeWindow {
    pub fn from_bits(len: usize, width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != len * width * height {
            return Err(Error::dims(format!(
                "{} readouts for a {len}x{width}x{height} window",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("spike window must be binary"));
        }
        Ok(Self {
            len,
            width,
            height,
            bits,
        })
    }

    /// Full-frame window of `len` readouts centred on `center`. The window
    /// must lie inside the stream.
    pub fn from_stream(stream: &SpikeStream, center: usize, len: usize) -> Result<Self> {
        Self::crop(stream, center, len, 0, 0, stream.width(), stream.height())
    }

    pub fn crop(
        stream: &SpikeStream,
        center: usize,
        len: usize,
        x0: usize,
        y0: usize,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let window = ReconWindow::with_length(center, len)?;
        if !window.fits(stream.num_readouts()) {
            return Err(Error::OutOfBounds(format!(
                "{len}-readout window at {center} exceeds stream of {} readouts",
                stream.num_readouts()
            )));
        }
        if x0 + width > stream.width() || y0 + height > stream.height() {
            return Err(Error::OutOfBounds(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{} stream",
                stream.width(),
                stream.height()
            )));
        }
        let start = center - len / 2;
        let mut bits = Vec::with_capacity(len * width * height);
        for k in start..start + len {
            for y in y0..y0 + height {
                for x in x0..x0 + width {
                    bits.push(stream.get(x, y, k) as u8);
                }
            }
        }
        Ok(Self {
            len,
            width,
            height,
            bits,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize, k: usize) -> bool {
        self.bits[(k * self.height + y) * self.width + x] != 0
    }

    /// Flips every readout of pixel `(x, y)`.
    pub fn toggle_column(&mut self, x: usize, y: usize) {
        for k in 0..self.len {
            let i = (k * self.height + y) * self.width + x;
            self.bits[i] ^= 1;
        }
    }

    /// Firing rate over the window, the self-supervision target.
    pub fn tfp(&self) -> GrayImage {
        let inv = 1.0 / self.len as f64;
        GrayImage::from_fn(self.width, self.height, |x, y| {
            (0..self.len).filter(|&k| self.get(x, y, k)).count() as f64 * inv
        })
    }

    fn as_real<T: Real>(&self) -> Vec<T> {
        self.bits
            .iter()
            .map(|&b| if b != 0 { T::ONE } else { T::ZERO })
            .collect()
    }
}

/// Intermediate activations kept for the backward pass.
struct Cache<T> {
    width: usize,
    height: usize,
    /// Per rotation: rotated input followed by each shifted layer's output.
    branches: [Vec<Vec<T>>; 4],
    /// Fusion input (concatenated directional features) then each fusion
    /// layer's output; the last entry is the raw network output.
    fuse: Vec<Vec<T>>,
}

fn check_window<T: Real>(params: &SimNetParams<T>, window: &SpikeWindow) -> Result<()> {
    if window.len != params.config.window {
        return Err(Error::dims(format!(
            "network expects {}-readout windows, got {}",
            params.config.window, window.len
        )));
    }
    if window.width == 0 || window.height == 0 {
        return Err(Error::dims("empty spike window"));
    }
    Ok(())
}

fn forward_cache<T: Real>(params: &SimNetParams<T>, window: &SpikeWindow) -> Result<Cache<T>> {
    check_window(params, window)?;
    let (h, w) = (window.height, window.width);
    let hw = h * w;
    let hidden = params.config.hidden;
    let input = window.as_real::<T>();
    let mut concat = vec![T::ZERO; 4 * hidden * hw];
    let mut branches: [Vec<Vec<T>>; 4] = Default::default();
    for (r, branch) in branches.iter_mut().enumerate() {
        let (mut x, rh, rw) = rotate(&input, window.len, h, w, r);
        let mut acts = Vec::with_capacity(params.shift.len() + 1);
        for layer in &params.shift {
            let mut y = shift_conv_forward(&x, rh, rw, layer);
            leaky_inplace(&mut y);
            acts.push(std::mem::replace(&mut x, y));
        }
        // final one-row shift: row y reads row y-1
        let mut shifted = vec![T::ZERO; x.len()];
        for c in 0..hidden {
            let base = c * rh * rw;
            shifted[base + rw..base + rh * rw].copy_from_slice(&x[base..base + (rh - 1) * rw]);
        }
        acts.push(x);
        let (feat, fh, fw) = rotate(&shifted, hidden, rh, rw, 4 - r);
        debug_assert_eq!((fh, fw), (h, w));
        concat[r * hidden * hw..(r + 1) * hidden * hw].copy_from_slice(&feat);
        *branch = acts;
    }
    let mut fuse = Vec::with_capacity(params.fuse.len() + 1);
    let mut x = concat;
    for (j, layer) in params.fuse.iter().enumerate() {
        let mut y = pointwise_forward(&x, hw, layer);
        if j + 1 < params.fuse.len() {
            leaky_inplace(&mut y);
        }
        fuse.push(std::mem::replace(&mut x, y));
    }
    fuse.push(x);
    Ok(Cache {
        width: w,
        height: h,
        branches,
        fuse,
    })
}

/// Unclamped network output.
pub fn sim_forward_raw<T: Real>(params: &SimNetParams<T>, window: &SpikeWindow) -> Result<GrayImage> {
    let cache = forward_cache(params, window)?;
    let out = cache.fuse.last().expect("fusion output");
    GrayImage::from_vec(cache.width, cache.height, out.iter().map(|v| v.to_f64()).collect())
}

/// Instantaneous image estimate, clamped to `[0, 1]`.
pub fn sim_forward<T: Real>(params: &SimNetParams<T>, window: &SpikeWindow) -> Result<GrayImage> {
    Ok(sim_forward_raw(params, window)?.clamp01())
}

/// Mean absolute difference between the clamped output and the window's
/// firing rate.
pub fn sim_loss<T: Real>(params: &SimNetParams<T>, window: &SpikeWindow) -> Result<f64> {
    let out = sim_forward(params, window)?;
    let target = window.tfp();
    crate::metrics::mean_abs_diff(&out, &target)
}

/// Loss and exact gradients w.r.t. every weight and bias.
///
/// The output clamp passes gradient on the closed range `[0, 1]`; the L1
/// term uses subgradient 0 where the residual is exactly zero.
pub fn sim_backward<T: Real>(params: &SimNetParams<T>, window: &SpikeWindow) -> Result<(f64, SimNetParams<T>)> {
    let cache = forward_cache(params, window)?;
    let target = window.tfp();
    let (h, w) = (cache.height, cache.width);
    let hw = h * w;
    let raw = cache.fuse.last().expect("fusion output");
    let inv_n = 1.0 / hw as f64;
    let mut loss = 0.0;
    let mut g: Vec<T> = Vec::with_capacity(hw);
    for (&y, &t) in raw.iter().zip(target.as_slice()) {
        let yf = y.to_f64();
        let r = yf.clamp(0.0, 1.0) - t;
        loss += r.abs();
        let s = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        let pass = (0.0..=1.0).contains(&yf);
        g.push(T::from_f64(if pass { s * inv_n } else { 0.0 }));
    }
    loss *= inv_n;

    let mut grads = params.zeros_like();
    let nf = params.fuse.len();
    for j in (0..nf).rev() {
        let input = &cache.fuse[j];
        if j + 1 < nf {
            leaky_backward(&cache.fuse[j + 1], &mut g);
        }
        let mut gin = vec![T::ZERO; input.len()];
        pointwise_backward(input, hw, &params.fuse[j], &g, &mut grads.fuse[j], &mut gin);
        g = gin;
    }

    let hidden = params.config.hidden;
    let ns = params.shift.len();
    for (r, acts) in cache.branches.iter().enumerate() {
        let gfeat = &g[r * hidden * hw..(r + 1) * hidden * hw];
        // forward un-rotated by 4 - r; undo with r
        let (gshift, rh, rw) = rotate(gfeat, hidden, h, w, r);
        let mut ga = vec![T::ZERO; gshift.len()];
        for c in 0..hidden {
            let base = c * rh * rw;
            ga[base..base + (rh - 1) * rw].copy_from_slice(&gshift[base + rw..base + rh * rw]);
        }
        for l in (0..ns).rev() {
            leaky_backward(&acts[l + 1], &mut ga);
            let input = &acts[l];
            if l == 0 {
                shift_conv_backward(input, rh, rw, &params.shift[l], &ga, &mut grads.shift[l], None);
            } else {
                let mut gin = vec![T::ZERO; input.len()];
                shift_conv_backward(
                    input,
                    rh,
                    rw,
                    &params.shift[l],
                    &ga,
                    &mut grads.shift[l],
                    Some(&mut gin),
                );
                ga = gin;
            }
        }
    }
    Ok((loss, grads))
}
