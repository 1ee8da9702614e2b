use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::layout::{Init, Layout, Slot};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Square-kernel 2D convolution with symmetric `k / 2` zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    weight: Slot,
    bias: Slot,
}

impl Conv2d {
    pub fn new(layout: &mut Layout, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let fan_in = (cin * k * k) as f64;
        Self::with_init(layout, name, cin, cout, k, stride, Init::Uniform(num_traits::Float::sqrt(3.0 / fan_in)))
    }

    pub fn zeroed(layout: &mut Layout, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Self::with_init(layout, name, cin, cout, k, stride, Init::Zeros)
    }

    fn with_init(
        layout: &mut Layout,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        init: Init,
    ) -> Self {
        let weight = layout.push(format!("{name}.weight"), &[cout, cin, k, k], init);
        let bias = layout.push(format!("{name}.bias"), &[cout], Init::Zeros);
        Self { cin, cout, k, stride, pad: k / 2, weight, bias }
    }

    pub fn weight_slot(&self) -> Slot {
        self.weight
    }

    pub fn bias_slot(&self) -> Slot {
        self.bias
    }

    pub fn out_shape(&self, s: Shape) -> Shape {
        let oh = (s.h + 2 * self.pad - self.k) / self.stride + 1;
        let ow = (s.w + 2 * self.pad - self.k) / self.stride + 1;
        Shape::new(self.cout, oh, ow)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col<T: Real>(&self, x: &Tensor<T>, out: Shape) -> Vec<T> {
        let (k, stride, pad) = (self.k, self.stride, self.pad);
        let (h, w) = (x.shape.h as isize, x.shape.w as isize);
        let n = out.plane();
        let mut cols = vec![T::zero(); self.cin * k * k * n];
        for ci in 0..self.cin {
            let plane = x.channel(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * n..][..n];
                    for oy in 0..out.h {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let src = &plane[iy as usize * w as usize..][..w as usize];
                        let dst = &mut row[oy * out.w..][..out.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T], in_shape: Shape, out: Shape) -> Tensor<T> {
        let (k, stride, pad) = (self.k, self.stride, self.pad);
        let (h, w) = (in_shape.h as isize, in_shape.w as isize);
        let n = out.plane();
        let mut dx = Tensor::zeros(in_shape);
        for ci in 0..self.cin {
            let plane = dx.channel_mut(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * n..][..n];
                    for oy in 0..out.h {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w as usize..][..w as usize];
                        let src = &row[oy * out.w..][..out.w];
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w {
                                dst[ix as usize] = dst[ix as usize] + g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(x.shape.c, self.cin);
        let out = self.out_shape(x.shape);
        let n = out.plane();
        let kk = self.cin * self.k * self.k;
        let mut y = Tensor::zeros(out);
        let bias = self.bias.of(p);
        for (co, &b) in bias.iter().enumerate() {
            y.channel_mut(co).fill(b);
        }
        let w = self.weight.of(p);
        if self.is_pointwise() {
            T::gemm(self.cout, kk, n, T::one(), w, (kk as isize, 1), &x.data, (n as isize, 1), T::one(), &mut y.data, (n as isize, 1));
        } else {
            let cols = self.im2col(x, out);
            T::gemm(self.cout, kk, n, T::one(), w, (kk as isize, 1), &cols, (n as isize, 1), T::one(), &mut y.data, (n as isize, 1));
        }
        y
    }

    /// Accumulates weight/bias gradients into `g`; returns the input gradient
    /// when `need_dx` is set.
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        x: &Tensor<T>,
        gy: &Tensor<T>,
        g: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let out = gy.shape;
        let n = out.plane();
        let kk = self.cin * self.k * self.k;
        {
            let gb = self.bias.of_mut(g);
            for (co, b) in gb.iter_mut().enumerate() {
                *b = *b + gy.channel(co).iter().copied().sum::<T>();
            }
        }
        let pointwise = self.is_pointwise();
        let cols_owned;
        let cols: &[T] = if pointwise {
            &x.data
        } else {
            cols_owned = self.im2col(x, out);
            &cols_owned
        };
        let gw = self.weight.of_mut(g);
        T::gemm(self.cout, n, kk, T::one(), &gy.data, (n as isize, 1), cols, (1, n as isize), T::one(), gw, (kk as isize, 1));
        if !need_dx {
            return None;
        }
        let w = self.weight.of(p);
        let mut dcols = vec![T::zero(); kk * n];
        T::gemm(kk, self.cout, n, T::one(), w, (1, kk as isize), &gy.data, (n as isize, 1), T::zero(), &mut dcols, (n as isize, 1));
        if pointwise {
            Some(Tensor { shape: x.shape, data: dcols })
        } else {
            Some(self.col2im(&dcols, x.shape, out))
        }
    }
}

/// Group normalization with a per-channel affine transform.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    gamma: Slot,
    beta: Slot,
    eps: f64,
}

#[derive(Debug, Clone)]
pub struct GroupNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

/// Largest group count `<= preferred` dividing `channels`.
pub fn group_count(channels: usize, preferred: usize) -> usize {
    (1..=preferred.min(channels).max(1)).rev().find(|&g| channels.is_multiple_of(g)).unwrap_or(1)
}

impl GroupNorm {
    pub fn new(layout: &mut Layout, name: &str, channels: usize, preferred_groups: usize) -> Self {
        let gamma = layout.push(format!("{name}.gamma"), &[channels], Init::Ones);
        let beta = layout.push(format!("{name}.beta"), &[channels], Init::Zeros);
        Self { channels, groups: group_count(channels, preferred_groups), gamma, beta, eps: 1e-5 }
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &Tensor<T>) -> (Tensor<T>, GroupNormCache<T>) {
        let cg = self.channels / self.groups;
        let plane = x.shape.plane();
        let n = T::from_f64((cg * plane) as f64);
        let eps = T::from_f64(self.eps);
        let (gamma, beta) = (self.gamma.of(p), self.beta.of(p));
        let mut xhat = Tensor::zeros(x.shape);
        let mut y = Tensor::zeros(x.shape);
        let mut inv_std = Vec::with_capacity(self.groups);
        for gi in 0..self.groups {
            let range = gi * cg * plane..(gi + 1) * cg * plane;
            let xs = &x.data[range.clone()];
            let mean = xs.iter().copied().sum::<T>() / n;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (i, (&v, xh)) in xs.iter().zip(&mut xhat.data[range.clone()]).enumerate() {
                let c = gi * cg + i / plane;
                *xh = (v - mean) * inv;
                y.data[range.start + i] = *xh * gamma[c] + beta[c];
            }
        }
        (y, GroupNormCache { xhat, inv_std })
    }

    pub fn backward<T: Real>(&self, p: &[T], cache: &GroupNormCache<T>, gy: &Tensor<T>, g: &mut [T]) -> Tensor<T> {
        let cg = self.channels / self.groups;
        let plane = gy.shape.plane();
        let gamma = self.gamma.of(p);
        for c in 0..self.channels {
            let dy = gy.channel(c);
            let xh = cache.xhat.channel(c);
            let dgamma: T = dy.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            let dbeta: T = dy.iter().copied().sum();
            let gg = &mut self.gamma.of_mut(g)[c];
            *gg = *gg + dgamma;
            let gb = &mut self.beta.of_mut(g)[c];
            *gb = *gb + dbeta;
        }
        let n = T::from_f64((cg * plane) as f64);
        let mut dx = Tensor::zeros(gy.shape);
        for gi in 0..self.groups {
            let range = gi * cg * plane..(gi + 1) * cg * plane;
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for i in range.clone() {
                let c = i / plane;
                let d = gy.data[i] * gamma[c];
                sum_d = sum_d + d;
                sum_dx = sum_dx + d * cache.xhat.data[i];
            }
            let inv = cache.inv_std[gi];
            for i in range {
                let c = i / plane;
                let d = gy.data[i] * gamma[c];
                dx.data[i] = inv / n * (n * d - sum_d - cache.xhat.data[i] * sum_dx);
            }
        }
        dx
    }
}

/// Dense layer on a flat vector: `y = W x + b`, `W` is `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    weight: Slot,
    bias: Slot,
}

impl Linear {
    pub fn new(layout: &mut Layout, name: &str, input: usize, output: usize) -> Self {
        let bound = num_traits::Float::sqrt(3.0 / input as f64);
        let weight = layout.push(format!("{name}.weight"), &[output, input], Init::Uniform(bound));
        let bias = layout.push(format!("{name}.bias"), &[output], Init::Zeros);
        Self { input, output, weight, bias }
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.input);
        let w = self.weight.of(p);
        self.bias
            .of(p)
            .iter()
            .enumerate()
            .map(|(o, &b)| b + w[o * self.input..][..self.input].iter().zip(x).map(|(&a, &v)| a * v).sum::<T>())
            .collect()
    }

    pub fn backward<T: Real>(&self, p: &[T], x: &[T], gy: &[T], g: &mut [T]) -> Vec<T> {
        {
            let gw = self.weight.of_mut(g);
            for (o, &d) in gy.iter().enumerate() {
                for (gwi, &v) in gw[o * self.input..][..self.input].iter_mut().zip(x) {
                    *gwi = *gwi + d * v;
                }
            }
        }
        for (gb, &d) in self.bias.of_mut(g).iter_mut().zip(gy) {
            *gb = *gb + d;
        }
        let w = self.weight.of(p);
        let mut dx = vec![T::zero(); self.input];
        for (o, &d) in gy.iter().enumerate() {
            for (dxi, &wv) in dx.iter_mut().zip(&w[o * self.input..][..self.input]) {
                *dxi = *dxi + d * wv;
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Silu => x * sigmoid(x),
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
        }
    }

    pub fn forward<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| self.apply(v))
    }

    pub fn backward<T: Real>(self, x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
        x.zip_map(gy, |v, d| d * self.derivative(v))
    }
}

pub fn upsample2x<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape;
    let mut y = Tensor::zeros(Shape::new(s.c, s.h * 2, s.w * 2));
    for c in 0..s.c {
        for yy in 0..s.h * 2 {
            for xx in 0..s.w * 2 {
                *y.at_mut(c, yy, xx) = x.at(c, yy / 2, xx / 2);
            }
        }
    }
    y
}

pub fn upsample2x_backward<T: Real>(gy: &Tensor<T>) -> Tensor<T> {
    let s = gy.shape;
    let mut dx = Tensor::zeros(Shape::new(s.c, s.h / 2, s.w / 2));
    for c in 0..s.c {
        for yy in 0..s.h {
            for xx in 0..s.w {
                let d = dx.at_mut(c, yy / 2, xx / 2);
                *d = *d + gy.at(c, yy, xx);
            }
        }
    }
    dx
}
