//! Scalar trait and the adaptive-moment optimizer shared by both trainers.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point element type of network parameters and activations.
pub trait Real:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Adam moments for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize) -> Self {
        Self::with_eps(len, 1e-8)
    }

    pub fn with_eps(len: usize, eps: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps,
            step: 0,
            m: vec![T::ZERO; len],
            v: vec![T::ZERO; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Advances the step counter. Call once per optimizer iteration, before
    /// [`Adam::update`].
    pub fn tick(&mut self) {
        self.step += 1;
    }

    /// Updates `params[range]` in place using `grads` (same length as the
    /// range) and learning rate `lr`.
    pub fn update(&mut self, params: &mut [T], grads: &[T], offset: usize, lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        let t = self.step.max(1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = T::from_f64(lr * bc2.sqrt() / bc1);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (c1, c2) = (T::ONE - b1, T::ONE - b2);
        let eps = T::from_f64(self.eps * bc2.sqrt());
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *m = b1 * *m + c1 * g;
            *v = b2 * *v + c2 * g * g;
            *p -= step_size * *m / (v.sqrt() + eps);
        }
    }

    /// Appends zeroed moments for `extra` new parameters.
    pub fn grow(&mut self, extra: usize) {
        self.m.extend(std::iter::repeat_n(T::ZERO, extra));
        self.v.extend(std::iter::repeat_n(T::ZERO, extra));
    }

    /// Keeps only the moment blocks of `block` elements whose index is
    /// selected by `keep`.
    pub fn retain_blocks(&mut self, block: usize, keep: &[bool]) {
        let filter = |buf: &Vec<T>| -> Vec<T> {
            buf.chunks(block)
                .zip(keep)
                .filter(|(_, &k)| k)
                .flat_map(|(c, _)| c.iter().copied())
                .collect()
        };
        self.m = filter(&self.m);
        self.v = filter(&self.v);
    }

    /// Duplicates the moment block at `index` onto the end.
    pub fn duplicate_block(&mut self, block: usize, index: usize) {
        let range = index * block..(index + 1) * block;
        let m: Vec<T> = self.m[range.clone()].to_vec();
        let v: Vec<T> = self.v[range].to_vec();
        self.m.extend(m);
        self.v.extend(v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::<f64>::new(2);
        let mut p = vec![1.0, -1.0];
        adam.tick();
        adam.update(&mut p, &[0.5, -3.0], 0, 0.1);
        // bias-corrected first step is lr·sign(g)
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::<f32>::new(1);
        let mut p = vec![3.0f32];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            adam.tick();
            adam.update(&mut p, &g, 0, 0.01);
        }
        assert!((p[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn block_bookkeeping() {
        let mut adam = Adam::<f64>::new(6);
        adam.tick();
        let mut p = vec![0.0; 6];
        adam.update(&mut p, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0], 0, 0.1);
        adam.retain_blocks(2, &[true, false, true]);
        assert_eq!(adam.len(), 4);
        adam.duplicate_block(2, 1);
        assert_eq!(adam.len(), 6);
        adam.grow(2);
        assert_eq!(adam.len(), 8);
    }
}
