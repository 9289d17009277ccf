//! Dense feature-map kernels for the mapping network. Feature maps are stored
//! channel-major: `[channel][row][col]`.

use crate::optim::Real;

/// A convolution layer with `kernel`x`kernel` taps (3 for the shifted
/// layers, 1 for the fusion layers). Weights are `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            weight: vec![T::ZERO; out_ch * in_ch * kernel * kernel],
            bias: vec![T::ZERO; out_ch],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self::zeros(self.in_ch, self.out_ch, self.kernel)
    }
}

pub(crate) const LEAKY_SLOPE: f64 = 0.1;

#[inline]
pub(crate) fn leaky_inplace<T: Real>(buf: &mut [T]) {
    let slope = T::from_f64(LEAKY_SLOPE);
    for v in buf {
        if *v < T::ZERO {
            *v *= slope;
        }
    }
}

/// Multiplies `grad` by the leaky-rectifier derivative, read off the
/// activation (same sign as the pre-activation for a positive slope).
#[inline]
pub(crate) fn leaky_backward<T: Real>(act: &[T], grad: &mut [T]) {
    let slope = T::from_f64(LEAKY_SLOPE);
    for (g, &a) in grad.iter_mut().zip(act) {
        if a <= T::ZERO {
            *g *= slope;
        }
    }
}

/// Rotates a `[c][h][w]` map by `k` quarter turns counter-clockwise.
/// Returns the rotated buffer and its `(h, w)`.
pub(crate) fn rotate<T: Real>(src: &[T], c: usize, h: usize, w: usize, k: usize) -> (Vec<T>, usize, usize) {
    let k = k % 4;
    let (nh, nw) = if k.is_multiple_of(2) { (h, w) } else { (w, h) };
    if k == 0 {
        return (src.to_vec(), h, w);
    }
    let mut dst = vec![T::ZERO; src.len()];
    for ch in 0..c {
        let s = &src[ch * h * w..(ch + 1) * h * w];
        let d = &mut dst[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let (nx, ny) = match k {
                    1 => (y, w - 1 - x),
                    2 => (w - 1 - x, h - 1 - y),
                    _ => (h - 1 - y, x),
                };
                d[ny * nw + nx] = s[y * w + x];
            }
        }
    }
    (dst, nh, nw)
}

/// `out[x] += w0·src[x-1] + w1·src[x] + w2·src[x+1]` with zero padding.
#[inline]
fn row_conv3<T: Real>(out: &mut [T], src: &[T], w: [T; 3]) {
    let n = out.len();
    if n == 1 {
        out[0] += w[1] * src[0];
        return;
    }
    out[0] += w[1] * src[0] + w[2] * src[1];
    for (o, s) in out[1..n - 1].iter_mut().zip(src.windows(3)) {
        *o += w[0] * s[0] + w[1] * s[1] + w[2] * s[2];
    }
    out[n - 1] += w[0] * src[n - 2] + w[1] * src[n - 1];
}

/// Shifted 3x3 convolution: output row `y` sees input rows `y-2..=y`, i.e. a
/// standard 3x3 convolution padded one row on top and cropped one row at the
/// bottom. Stacking these only grows the receptive field upwards.
pub(crate) fn shift_conv_forward<T: Real>(input: &[T], h: usize, w: usize, layer: &Layer<T>) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::ZERO; layer.out_ch * hw];
    for o in 0..layer.out_ch {
        let out_o = &mut out[o * hw..(o + 1) * hw];
        out_o.fill(layer.bias[o]);
        for i in 0..layer.in_ch {
            let in_i = &input[i * hw..(i + 1) * hw];
            let wbase = (o * layer.in_ch + i) * 9;
            for ky in 0..3 {
                let taps = [
                    layer.weight[wbase + ky * 3],
                    layer.weight[wbase + ky * 3 + 1],
                    layer.weight[wbase + ky * 3 + 2],
                ];
                let shift = 2 - ky;
                for y in shift..h {
                    let sy = y - shift;
                    row_conv3(&mut out_o[y * w..(y + 1) * w], &in_i[sy * w..(sy + 1) * w], taps);
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients into `grad` and, when `grad_input` is
/// given, the gradient w.r.t. the layer input.
pub(crate) fn shift_conv_backward<T: Real>(
    input: &[T],
    h: usize,
    w: usize,
    layer: &Layer<T>,
    grad_out: &[T],
    grad: &mut Layer<T>,
    mut grad_input: Option<&mut [T]>,
) {
    let hw = h * w;
    for o in 0..layer.out_ch {
        let g_o = &grad_out[o * hw..(o + 1) * hw];
        let mut gb = T::ZERO;
        for &g in g_o {
            gb += g;
        }
        grad.bias[o] += gb;
        for i in 0..layer.in_ch {
            let in_i = &input[i * hw..(i + 1) * hw];
            let wbase = (o * layer.in_ch + i) * 9;
            for ky in 0..3 {
                let shift = 2 - ky;
                let mut gw = [T::ZERO; 3];
                for y in shift..h {
                    let sy = y - shift;
                    let grow = &g_o[y * w..(y + 1) * w];
                    let irow = &in_i[sy * w..(sy + 1) * w];
                    // kx = 0 reads src[x-1], kx = 1 src[x], kx = 2 src[x+1]
                    let mut a0 = T::ZERO;
                    let mut a1 = T::ZERO;
                    let mut a2 = T::ZERO;
                    for x in 0..w {
                        a1 += grow[x] * irow[x];
                    }
                    for x in 1..w {
                        a0 += grow[x] * irow[x - 1];
                        a2 += grow[x - 1] * irow[x];
                    }
                    gw[0] += a0;
                    gw[1] += a1;
                    gw[2] += a2;
                }
                for (w, g) in grad.weight[wbase + ky * 3..wbase + ky * 3 + 3].iter_mut().zip(gw) {
                    *w += g;
                }
                if let Some(gin) = grad_input.as_deref_mut() {
                    let gin_i = &mut gin[i * hw..(i + 1) * hw];
                    let taps = [
                        layer.weight[wbase + ky * 3],
                        layer.weight[wbase + ky * 3 + 1],
                        layer.weight[wbase + ky * 3 + 2],
                    ];
                    // transpose of row_conv3: gin[x] += w0·g[x+1] + w1·g[x] + w2·g[x-1]
                    for y in shift..h {
                        let sy = y - shift;
                        let grow = &g_o[y * w..(y + 1) * w];
                        row_conv3(&mut gin_i[sy * w..(sy + 1) * w], grow, [taps[2], taps[1], taps[0]]);
                    }
                }
            }
        }
    }
}

/// Pointwise (1x1) convolution.
pub(crate) fn pointwise_forward<T: Real>(input: &[T], hw: usize, layer: &Layer<T>) -> Vec<T> {
    let mut out = vec![T::ZERO; layer.out_ch * hw];
    for o in 0..layer.out_ch {
        let out_o = &mut out[o * hw..(o + 1) * hw];
        out_o.fill(layer.bias[o]);
        for i in 0..layer.in_ch {
            let wv = layer.weight[o * layer.in_ch + i];
            for (a, &b) in out_o.iter_mut().zip(&input[i * hw..(i + 1) * hw]) {
                *a += wv * b;
            }
        }
    }
    out
}

pub(crate) fn pointwise_backward<T: Real>(
    input: &[T],
    hw: usize,
    layer: &Layer<T>,
    grad_out: &[T],
    grad: &mut Layer<T>,
    grad_input: &mut [T],
) {
    for o in 0..layer.out_ch {
        let g_o = &grad_out[o * hw..(o + 1) * hw];
        let mut gb = T::ZERO;
        for &g in g_o {
            gb += g;
        }
        grad.bias[o] += gb;
        for i in 0..layer.in_ch {
            let in_i = &input[i * hw..(i + 1) * hw];
            let mut gw = T::ZERO;
            for (&g, &a) in g_o.iter().zip(in_i) {
                gw += g * a;
            }
            grad.weight[o * layer.in_ch + i] += gw;
            let wv = layer.weight[o * layer.in_ch + i];
            for (gi, &g) in grad_input[i * hw..(i + 1) * hw].iter_mut().zip(g_o) {
                *gi += wv * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotations_compose_to_identity() {
        let (c, h, w) = (2, 3, 5);
        let src: Vec<f64> = (0..c * h * w).map(|v| v as f64).collect();
        for k in 0..4 {
            let (r, rh, rw) = rotate(&src, c, h, w, k);
            let (back, bh, bw) = rotate(&r, c, rh, rw, 4 - k);
            assert_eq!((bh, bw), (h, w));
            assert_eq!(back, src);
        }
        let (r1, _, _) = rotate(&src, c, h, w, 1);
        let (r11, h2, w2) = rotate(&r1, c, w, h, 1);
        let (r2, _, _) = rotate(&src, c, h, w, 2);
        assert_eq!((h2, w2), (h, w));
        assert_eq!(r11, r2);
    }

    #[test]
    fn shift_conv_matches_direct_sum() {
        let (h, w) = (4, 5);
        let mut layer = Layer::<f64>::zeros(2, 3, 3);
        for (i, v) in layer.weight.iter_mut().enumerate() {
            *v = ((i * 37 % 11) as f64 - 5.0) / 7.0;
        }
        layer.bias = vec![0.1, -0.2, 0.3];
        let input: Vec<f64> = (0..2 * h * w).map(|i| ((i * 13 % 7) as f64) / 3.0).collect();
        let out = shift_conv_forward(&input, h, w, &layer);
        for o in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = layer.bias[o];
                    for i in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 2;
                                let sx = x as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += layer.weight[((o * 2 + i) * 3 + ky) * 3 + kx]
                                    * input[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    assert!((out[(o * h + y) * w + x] - acc).abs() < 1e-12);
                }
            }
        }
    }
}
