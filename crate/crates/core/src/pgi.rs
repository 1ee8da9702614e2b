//! Two-stage fusion of sampled silhouettes with the heat-skeleton.
//!
//! Stage one collapses the per-step predictions into one composite
//! silhouette with fixed convex weights. Stage two lifts both modalities to
//! `C_f` channels and blends them with a learned per-element gate.

use alloc::vec::Vec;

use crate::diffgait::MultiLevelSilhouettes;
use crate::error::{invalid, shape_err, Result};
use crate::nn::{sigmoid, Activation, Conv2d, Layout};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_FUSION_CHANNELS: usize = 32;

/// Convex weights over sampling steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    w: Vec<f64>,
}

impl FusionWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(invalid!("fusion weights are empty"));
        }
        if let Some(bad) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid!("fusion weight {bad} is negative or not finite"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid!("fusion weights sum to {sum}, expected 1"));
        }
        Ok(Self { w })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self { w: [0.0, 0.0, 0.2, 0.3, 0.5].to_vec() }
    }
}

/// Pixel-wise `sum_i w_i * P_i`, accumulated in `f64`.
pub fn stage_one_combine(preds: &MultiLevelSilhouettes, w: &FusionWeights) -> Result<Tensor<f32>> {
    if preds.len() != w.len() {
        return Err(shape_err!("{} predictions but {} weights", preds.len(), w.len()));
    }
    let shape = preds.preds[0].shape;
    let mut acc = alloc::vec![0.0f64; shape.len()];
    for (p, &wi) in preds.preds.iter().zip(w.as_slice()) {
        p.expect_shape(shape, "prediction")?;
        for (a, &v) in acc.iter_mut().zip(&p.data) {
            *a += wi * v as f64;
        }
    }
    Tensor::from_vec(shape, acc.into_iter().map(|v| v as f32).collect())
}

/// Gated silhouette/skeleton feature fusion.
#[derive(Debug, Clone)]
pub struct PgiFusion {
    pub channels: usize,
    sil_init: Conv2d,
    ske_init: Conv2d,
    gate1: Conv2d,
    gate2: Conv2d,
}

#[derive(Debug, Clone)]
pub struct PgiCache<T> {
    sil: Tensor<T>,
    heat: Tensor<T>,
    f_sil: Tensor<T>,
    f_ske: Tensor<T>,
    joint: Tensor<T>,
    z1: Tensor<T>,
    a1: Tensor<T>,
    gate: Tensor<T>,
}

impl<T: Real> PgiCache<T> {
    pub fn gate(&self) -> &Tensor<T> {
        &self.gate
    }

    pub fn silhouette_feature(&self) -> &Tensor<T> {
        &self.f_sil
    }

    pub fn skeleton_feature(&self) -> &Tensor<T> {
        &self.f_ske
    }
}

impl PgiFusion {
    pub fn new(layout: &mut Layout, name: &str, channels: usize) -> Self {
        let sil_init = Conv2d::new(layout, &alloc::format!("{name}.sil_init"), 1, channels, 3, 1);
        let ske_init = Conv2d::new(layout, &alloc::format!("{name}.ske_init"), 2, channels, 3, 1);
        let gate1 = Conv2d::new(layout, &alloc::format!("{name}.gate1"), 2 * channels, channels, 3, 1);
        let gate2 = Conv2d::new(layout, &alloc::format!("{name}.gate2"), channels, channels, 3, 1);
        Self { channels, sil_init, ske_init, gate1, gate2 }
    }

    pub fn gate_bias_name(name: &str) -> alloc::string::String {
        alloc::format!("{name}.gate2.bias")
    }

    pub fn gate_weight_name(name: &str) -> alloc::string::String {
        alloc::format!("{name}.gate2.weight")
    }

    /// `H = g * F_sil + (1 - g) * F_ske` with `g` in `(0, 1)`.
    pub fn stage_two_fuse<T: Real>(&self, p: &[T], sil: &Tensor<T>, heat: &Tensor<T>) -> Result<(Tensor<T>, PgiCache<T>)> {
        if sil.shape.c != 1 || heat.shape.c != 2 || (sil.shape.h, sil.shape.w) != (heat.shape.h, heat.shape.w) {
            return Err(shape_err!("silhouette {:?} and heat-skeleton {:?} are not an aligned pair", sil.shape, heat.shape));
        }
        let f_sil = self.sil_init.forward(p, sil);
        let f_ske = self.ske_init.forward(p, heat);
        let joint = Tensor::concat_channels(&f_sil, &f_ske);
        let z1 = self.gate1.forward(p, &joint);
        let a1 = Activation::Relu.forward(&z1);
        let gate = self.gate2.forward(p, &a1).map(sigmoid);
        let mut h = Tensor::zeros(f_sil.shape);
        for (((o, &g), &s), &k) in h.data.iter_mut().zip(&gate.data).zip(&f_sil.data).zip(&f_ske.data) {
            *o = g * s + (T::one() - g) * k;
        }
        Ok((h, PgiCache { sil: sil.clone(), heat: heat.clone(), f_sil, f_ske, joint, z1, a1, gate }))
    }

    /// Accumulates parameter gradients; inputs are treated as constants.
    pub fn backward<T: Real>(&self, p: &[T], cache: &PgiCache<T>, dh: &Tensor<T>, g: &mut [T]) {
        let one = T::one();
        let mut d_sil = dh.zip_map(&cache.gate, |d, gt| d * gt);
        let mut d_ske = dh.zip_map(&cache.gate, |d, gt| d * (one - gt));
        let mut dz2 = Tensor::zeros(dh.shape);
        for i in 0..dh.data.len() {
            let gt = cache.gate.data[i];
            dz2.data[i] = dh.data[i] * (cache.f_sil.data[i] - cache.f_ske.data[i]) * gt * (one - gt);
        }
        let da1 = self.gate2.backward(p, &cache.a1, &dz2, g, true).unwrap();
        let dz1 = Activation::Relu.backward(&cache.z1, &da1);
        let djoint = self.gate1.backward(p, &cache.joint, &dz1, g, true).unwrap();
        let (js, jk) = djoint.split_channels(self.channels);
        d_sil.add_assign(&js);
        d_ske.add_assign(&jk);
        self.sil_init.backward(p, &cache.sil, &d_sil, g, false);
        self.ske_init.backward(p, &cache.heat, &d_ske, g, false);
    }

    pub fn output_shape(&self, h: usize, w: usize) -> Shape {
        Shape::new(self.channels, h, w)
    }
}
