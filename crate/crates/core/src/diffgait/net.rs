use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::error::{invalid, shape_err, Result};
use crate::nn::{upsample2x, upsample2x_backward, Activation, Conv2d, GroupNorm, GroupNormCache, Layout, Linear, ResBlock, ResBlockCache};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Width and geometry of the denoiser. `channels` is the single width knob.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiffGaitConfig {
    pub channels: usize,
    pub groups: usize,
    pub height: usize,
    pub width: usize,
    pub timesteps: usize,
}

impl Default for DiffGaitConfig {
    fn default() -> Self {
        Self { channels: 64, groups: 8, height: 64, width: 44, timesteps: 1000 }
    }
}

impl DiffGaitConfig {
    pub fn with_channels(channels: usize) -> Self {
        Self { channels, ..Self::default() }
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(2, self.height, self.width)
    }

    pub fn sample_shape(&self) -> Shape {
        Shape::new(1, self.height, self.width)
    }

    /// `[C, H/4, W/4]`.
    pub fn feature_shape(&self) -> Shape {
        Shape::new(self.channels, self.height.div_ceil(4), self.width.div_ceil(4))
    }

    fn validate(&self) -> Result<()> {
        if self.channels < 2 {
            return Err(invalid!("channels must be at least 2, got {}", self.channels));
        }
        if !self.height.is_multiple_of(4) || !self.width.is_multiple_of(4) {
            return Err(invalid!("canvas {}x{} must be divisible by 4", self.height, self.width));
        }
        if self.timesteps < 2 {
            return Err(invalid!("timesteps must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct DecoderStage {
    upsample: bool,
    block: ResBlock,
}

/// Condition encoder, Gait Mapping, timestep embedding and decoder.
///
/// Holds only the layer graph and parameter [`Layout`]; weights are passed
/// to every call as a flat slice.
#[derive(Debug, Clone)]
pub struct DiffGaitNet {
    config: DiffGaitConfig,
    layout: Layout,
    enc_stem: Conv2d,
    enc_blocks: Vec<ResBlock>,
    gm1: Conv2d,
    gm2: Conv2d,
    te1: Linear,
    te2: Linear,
    dec_stages: Vec<DecoderStage>,
    dec_norm: GroupNorm,
    dec_head: Conv2d,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    input: Tensor<T>,
    stem_out: Tensor<T>,
    blocks: Vec<ResBlockCache<T>>,
}

#[derive(Debug, Clone)]
pub struct MappingCache<T> {
    input: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingCache<T> {
    sinusoid: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    blocks: Vec<ResBlockCache<T>>,
    norm: GroupNormCache<T>,
    normed: Tensor<T>,
    act: Tensor<T>,
    out: Tensor<T>,
}

/// `sin`/`cos` position code of `t` at `dim` frequencies (odd dims pad a 0).
pub fn sinusoidal_embedding<T: Real>(t: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        out[i] = T::from_f64(arg.sin());
        out[half + i] = T::from_f64(arg.cos());
    }
    out
}

/// Hybrid Gait Volume: `g ⊙ (gm + te) + g`, with `te` broadcast over space.
pub fn build_hgv<T: Real>(g_ske: &Tensor<T>, mapped: &Tensor<T>, temb: &[T]) -> Result<Tensor<T>> {
    if g_ske.shape != mapped.shape {
        return Err(shape_err!("condition {:?} vs mapped sample {:?}", g_ske.shape, mapped.shape));
    }
    if temb.len() != g_ske.shape.c {
        return Err(shape_err!("embedding has {} channels, features have {}", temb.len(), g_ske.shape.c));
    }
    let plane = g_ske.shape.plane();
    let mut out = Tensor::zeros(g_ske.shape);
    for (c, &e) in temb.iter().enumerate() {
        let r = c * plane..(c + 1) * plane;
        for ((o, &g), &m) in out.data[r.clone()].iter_mut().zip(&g_ske.data[r.clone()]).zip(&mapped.data[r]) {
            *o = g * (m + e) + g;
        }
    }
    Ok(out)
}

/// Gradients of [`build_hgv`] with respect to its three inputs.
pub fn build_hgv_backward<T: Real>(
    g_ske: &Tensor<T>,
    mapped: &Tensor<T>,
    temb: &[T],
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let plane = g_ske.shape.plane();
    let mut dg = Tensor::zeros(g_ske.shape);
    let mut dm = Tensor::zeros(g_ske.shape);
    let mut de = vec![T::zero(); temb.len()];
    for (c, &e) in temb.iter().enumerate() {
        let mut acc = T::zero();
        for i in c * plane..(c + 1) * plane {
            let d = grad.data[i];
            dg.data[i] = d * (mapped.data[i] + e + T::one());
            dm.data[i] = d * g_ske.data[i];
            acc = acc + d * g_ske.data[i];
        }
        de[c] = acc;
    }
    (dg, dm, de)
}

impl DiffGaitNet {
    pub fn new(config: DiffGaitConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let g = config.groups;
        let act = Activation::Silu;
        let mut layout = Layout::new();
        let l = &mut layout;

        let enc_stem = Conv2d::new(l, "encoder.stem", 2, c, 3, 1);
        let enc_plan = [(c, c, 1), (c, 2 * c, 2), (2 * c, 2 * c, 2), (2 * c, 2 * c, 1), (2 * c, c, 1)];
        let enc_blocks = enc_plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, s))| ResBlock::new(l, &format!("encoder.stage{}", i + 1), cin, cout, s, g, act))
            .collect();

        let mid = (c / 2).max(1);
        let gm1 = Conv2d::new(l, "mapping.conv1", 1, mid, 3, 2);
        let gm2 = Conv2d::new(l, "mapping.conv2", mid, c, 3, 2);

        let te1 = Linear::new(l, "temb.fc1", c, c);
        let te2 = Linear::new(l, "temb.fc2", c, c);

        let dec_plan = [(false, c, 2 * c), (false, 2 * c, 2 * c), (true, 2 * c, 2 * c), (true, 2 * c, c), (false, c, c)];
        let dec_stages = dec_plan
            .iter()
            .enumerate()
            .map(|(i, &(upsample, cin, cout))| DecoderStage {
                upsample,
                block: ResBlock::new(l, &format!("decoder.stage{}", i + 1), cin, cout, 1, g, act),
            })
            .collect();
        let dec_norm = GroupNorm::new(l, "decoder.norm_out", c, g);
        let dec_head = Conv2d::zeroed(l, "decoder.head", c, 1, 3, 1);

        Ok(Self { config, layout, enc_stem, enc_blocks, gm1, gm2, te1, te2, dec_stages, dec_norm, dec_head })
    }

    pub fn config(&self) -> &DiffGaitConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> Vec<T> {
        self.layout.init(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn check_params<T>(&self, p: &[T]) -> Result<()> {
        if p.len() != self.layout.total() {
            return Err(shape_err!("expected {} parameters, got {}", self.layout.total(), p.len()));
        }
        Ok(())
    }

    pub fn encode_condition<T: Real>(&self, p: &[T], heat: &Tensor<T>) -> Result<(Tensor<T>, EncoderCache<T>)> {
        self.check_params(p)?;
        heat.expect_shape(self.config.input_shape(), "heat skeleton")?;
        let stem_out = self.enc_stem.forward(p, heat);
        let mut x = stem_out.clone();
        let mut blocks = Vec::with_capacity(self.enc_blocks.len());
        for b in &self.enc_blocks {
            let (y, cache) = b.forward(p, &x);
            blocks.push(cache);
            x = y;
        }
        Ok((x, EncoderCache { input: heat.clone(), stem_out, blocks }))
    }

    fn encode_backward<T: Real>(&self, p: &[T], cache: &EncoderCache<T>, grad: Tensor<T>, g: &mut [T]) {
        let mut d = grad;
        for (b, c) in self.enc_blocks.iter().zip(&cache.blocks).rev() {
            d = b.backward(p, c, &d, g);
        }
        debug_assert_eq!(d.shape, cache.stem_out.shape);
        self.enc_stem.backward(p, &cache.input, &d, g, false);
    }

    pub fn gait_mapping<T: Real>(&self, p: &[T], dg_t: &Tensor<T>) -> Result<(Tensor<T>, MappingCache<T>)> {
        self.check_params(p)?;
        dg_t.expect_shape(self.config.sample_shape(), "noisy silhouette")?;
        let pre = self.gm1.forward(p, dg_t);
        let act = Activation::Silu.forward(&pre);
        let out = self.gm2.forward(p, &act);
        Ok((out, MappingCache { input: dg_t.clone(), pre, act }))
    }

    fn gait_mapping_backward<T: Real>(&self, p: &[T], cache: &MappingCache<T>, grad: &Tensor<T>, g: &mut [T]) {
        let da = self.gm2.backward(p, &cache.act, grad, g, true).unwrap();
        let dpre = Activation::Silu.backward(&cache.pre, &da);
        self.gm1.backward(p, &cache.input, &dpre, g, false);
    }

    pub fn timestep_embedding<T: Real>(&self, p: &[T], t: usize) -> Result<(Vec<T>, EmbeddingCache<T>)> {
        self.check_params(p)?;
        if t >= self.config.timesteps {
            return Err(invalid!("timestep {t} outside [0, {})", self.config.timesteps));
        }
        let sinusoid = sinusoidal_embedding::<T>(t, self.config.channels);
        let pre = self.te1.forward(p, &sinusoid);
        let act: Vec<T> = pre.iter().map(|&v| Activation::Silu.apply(v)).collect();
        let out = self.te2.forward(p, &act);
        Ok((out, EmbeddingCache { sinusoid, pre, act }))
    }

    fn timestep_embedding_backward<T: Real>(&self, p: &[T], cache: &EmbeddingCache<T>, grad: &[T], g: &mut [T]) {
        let da = self.te2.backward(p, &cache.act, grad, g);
        let dpre: Vec<T> = da.iter().zip(&cache.pre).map(|(&d, &x)| d * Activation::Silu.derivative(x)).collect();
        self.te1.backward(p, &cache.sinusoid, &dpre, g);
    }

    /// Predicted clean sample in `[-1, 1]`.
    pub fn decode<T: Real>(&self, p: &[T], hgv: &Tensor<T>) -> Result<(Tensor<T>, DecoderCache<T>)> {
        self.check_params(p)?;
        hgv.expect_shape(self.config.feature_shape(), "hybrid gait volume")?;
        let mut x = hgv.clone();
        let mut blocks = Vec::with_capacity(self.dec_stages.len());
        for stage in &self.dec_stages {
            if stage.upsample {
                x = upsample2x(&x);
            }
            let (y, cache) = stage.block.forward(p, &x);
            blocks.push(cache);
            x = y;
        }
        if (x.shape.h, x.shape.w) != (self.config.height, self.config.width) {
            return Err(shape_err!("decoder produced {:?}", x.shape));
        }
        let (normed, norm) = self.dec_norm.forward(p, &x);
        let act = Activation::Silu.forward(&normed);
        let out = self.dec_head.forward(p, &act).map(|v| v.tanh());
        Ok((out.clone(), DecoderCache { blocks, norm, normed, act, out }))
    }

    fn decode_backward<T: Real>(&self, p: &[T], cache: &DecoderCache<T>, grad_out: &Tensor<T>, g: &mut [T]) -> Tensor<T> {
        let dz = cache.out.zip_map(grad_out, |y, d| d * (T::one() - y * y));
        let da = self.dec_head.backward(p, &cache.act, &dz, g, true).unwrap();
        let dn = Activation::Silu.backward(&cache.normed, &da);
        let mut d = self.dec_norm.backward(p, &cache.norm, &dn, g);
        for (stage, c) in self.dec_stages.iter().zip(&cache.blocks).rev() {
            d = stage.block.backward(p, c, &d, g);
            if stage.upsample {
                d = upsample2x_backward(&d);
            }
        }
        d
    }

    /// Decoder output for a noisy sample given a precomputed condition.
    pub fn predict<T: Real>(&self, p: &[T], g_ske: &Tensor<T>, dg_t: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let (mapped, _) = self.gait_mapping(p, dg_t)?;
        let (temb, _) = self.timestep_embedding(p, t)?;
        let hgv = build_hgv(g_ske, &mapped, &temb)?;
        Ok(self.decode(p, &hgv)?.0)
    }

    /// Full forward pass from a heat-skeleton.
    pub fn forward<T: Real>(&self, p: &[T], heat: &Tensor<T>, dg_t: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let (g_ske, _) = self.encode_condition(p, heat)?;
        self.predict(p, &g_ske, dg_t, t)
    }

    /// `scale * sum((decode(...) - target)^2)`; accumulates its gradient into
    /// `grads` and returns the unscaled squared error sum.
    #[allow(clippy::too_many_arguments)]
    pub fn squared_error_and_grad<T: Real>(
        &self,
        p: &[T],
        heat: &Tensor<T>,
        target: &Tensor<T>,
        dg_t: &Tensor<T>,
        t: usize,
        scale: T,
        grads: &mut [T],
    ) -> Result<T> {
        target.expect_shape(self.config.sample_shape(), "target silhouette")?;
        if grads.len() != p.len() {
            return Err(shape_err!("gradient buffer has {} entries, expected {}", grads.len(), p.len()));
        }
        let (g_ske, enc) = self.encode_condition(p, heat)?;
        let (mapped, gm) = self.gait_mapping(p, dg_t)?;
        let (temb, te) = self.timestep_embedding(p, t)?;
        let hgv = build_hgv(&g_ske, &mapped, &temb)?;
        let (out, dec) = self.decode(p, &hgv)?;
        let two = T::one() + T::one();
        let mut sse = T::zero();
        let grad_out = out.zip_map(target, |o, y| {
            let r = o - y;
            two * scale * r
        });
        for (&o, &y) in out.data.iter().zip(&target.data) {
            sse = sse + (o - y) * (o - y);
        }
        let d_hgv = self.decode_backward(p, &dec, &grad_out, grads);
        let (d_g, d_mapped, d_temb) = build_hgv_backward(&g_ske, &mapped, &temb, &d_hgv);
        self.timestep_embedding_backward(p, &te, &d_temb, grads);
        self.gait_mapping_backward(p, &gm, &d_mapped, grads);
        self.encode_backward(p, &enc, d_g, grads);
        Ok(sse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor { shape, data: (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect() }
    }

    #[test]
    fn default_parameter_count_is_near_two_million() {
        let net = DiffGaitNet::new(DiffGaitConfig::default()).unwrap();
        let n = net.param_count();
        assert!((1_500_000..=2_500_000).contains(&n), "{n}");
        let half = DiffGaitNet::new(DiffGaitConfig::with_channels(32)).unwrap();
        assert!(half.param_count() < n);
    }

    #[test]
    fn shapes_follow_the_quarter_resolution_contract() {
        let cfg = DiffGaitConfig::with_channels(8);
        let net = DiffGaitNet::new(cfg).unwrap();
        let p: Vec<f64> = net.init_params(1);
        let (g, _) = net.encode_condition(&p, &random(cfg.input_shape(), 2)).unwrap();
        assert_eq!(g.shape, Shape::new(8, 16, 11));
        let (m, _) = net.gait_mapping(&p, &random(cfg.sample_shape(), 3)).unwrap();
        assert_eq!(m.shape, Shape::new(8, 16, 11));
        let (out, _) = net.decode(&p, &g).unwrap();
        assert_eq!(out.shape, Shape::new(1, 64, 44));
        assert!(net.encode_condition(&p, &random(Shape::new(1, 64, 44), 4)).is_err());
        assert!(net.decode(&p, &random(Shape::new(8, 16, 10), 4)).is_err());
    }

    #[test]
    fn hgv_degenerate_cases() {
        let g = random(Shape::new(3, 4, 2), 5);
        let zeros = Tensor::zeros(g.shape);
        let h = build_hgv(&g, &zeros, &[0.0; 3]).unwrap();
        assert_eq!(h, g);
        let m = random(g.shape, 6);
        let h = build_hgv(&zeros, &m, &[0.3, -0.2, 1.0]).unwrap();
        assert!(h.data.iter().all(|&v| v == 0.0));
        assert!(build_hgv(&g, &m, &[0.0; 2]).is_err());
    }

    #[test]
    fn sinusoid_is_bounded_and_distinct() {
        let a: Vec<f64> = sinusoidal_embedding(0, 8);
        let b: Vec<f64> = sinusoidal_embedding(1, 8);
        assert_eq!(a[..4], [0.0; 4]);
        assert_eq!(a[4..], [1.0; 4]);
        assert!(a != b);
        assert!(sinusoidal_embedding::<f64>(7, 5).iter().all(|v| v.abs() <= 1.0));
    }

    fn perturbed_params(net: &DiffGaitNet, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p: Vec<f64> = net.init_params(seed);
        // Zero-initialized arrays would make most gradients vanish.
        for spec in net.layout().specs() {
            if spec.name.ends_with(".bias") || spec.name.starts_with("decoder.head") {
                for v in spec.slot.of_mut(&mut p) {
                    *v = rng.gen_range(-0.2..0.2);
                }
            }
        }
        p
    }

    #[test]
    fn mse_gradients_match_central_differences() {
        let cfg = DiffGaitConfig::with_channels(8);
        let net = DiffGaitNet::new(cfg).unwrap();
        let p = perturbed_params(&net, 11);
        let heat = random(cfg.input_shape(), 12).map(|v| v.abs());
        let target = random(cfg.sample_shape(), 13).map(|v| v.signum());
        let noisy = random(cfg.sample_shape(), 14);
        let t = 321;
        let scale = 1.0 / cfg.sample_shape().len() as f64;
        let loss = |q: &[f64]| {
            let out = net.forward(q, &heat, &noisy, t).unwrap();
            out.data.iter().zip(&target.data).map(|(o, y)| (o - y) * (o - y)).sum::<f64>() * scale
        };
        let mut g = vec![0.0; p.len()];
        let sse = net.squared_error_and_grad(&p, &heat, &target, &noisy, t, scale, &mut g).unwrap();
        assert!((sse * scale - loss(&p)).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut worst = 0.0f64;
        for _ in 0..60 {
            let i = rng.gen_range(0..p.len());
            let h = 1e-6;
            let mut q = p.clone();
            q[i] += h;
            let up = loss(&q);
            q[i] -= 2.0 * h;
            let down = loss(&q);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn forward_is_deterministic_and_sensitive() {
        let cfg = DiffGaitConfig::with_channels(8);
        let net = DiffGaitNet::new(cfg).unwrap();
        let mut p: Vec<f64> = net.init_params(21);
        let zero = Tensor::zeros(cfg.input_shape());
        let (z, _) = net.encode_condition(&p, &zero).unwrap();
        assert!(z.is_finite());
        let heat = random(cfg.input_shape(), 22);
        let a = net.encode_condition(&p, &heat).unwrap().0;
        assert_eq!(a, net.encode_condition(&p, &heat).unwrap().0);
        let w = net.layout().find("encoder.stage3.conv1.weight").unwrap().slot;
        w.of_mut(&mut p)[5] += 1e-3;
        let b = net.encode_condition(&p, &heat).unwrap().0;
        assert!(a.data.iter().zip(&b.data).any(|(x, y)| x != y));
    }

    #[test]
    fn gait_mapping_is_linear_at_zero_and_separates_noise() {
        let cfg = DiffGaitConfig::with_channels(8);
        let net = DiffGaitNet::new(cfg).unwrap();
        let p: Vec<f64> = net.init_params(31);
        let (z, _) = net.gait_mapping(&p, &Tensor::zeros(cfg.sample_shape())).unwrap();
        assert!(z.data.iter().all(|&v| v == 0.0));
        let a = net.gait_mapping(&p, &random(cfg.sample_shape(), 32)).unwrap().0;
        let b = net.gait_mapping(&p, &random(cfg.sample_shape(), 33)).unwrap().0;
        assert_ne!(a, b);
    }

    #[test]
    fn timestep_embeddings_are_pairwise_distinct() {
        let net = DiffGaitNet::new(DiffGaitConfig::with_channels(8)).unwrap();
        let p: Vec<f64> = net.init_params(41);
        let all: Vec<Vec<f64>> = (0..1000).map(|t| net.timestep_embedding(&p, t).unwrap().0).collect();
        assert_eq!(all[7], net.timestep_embedding(&p, 7).unwrap().0);
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let d: f64 = all[i].iter().zip(&all[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!(d.sqrt() > 1e-6, "t={i} and t={j} collide");
            }
        }
        assert!(net.timestep_embedding(&p, 1000).is_err());
    }

    #[test]
    fn zeroed_mapping_and_embedding_leave_the_condition() {
        let cfg = DiffGaitConfig::with_channels(8);
        let net = DiffGaitNet::new(cfg).unwrap();
        let mut p: Vec<f64> = net.init_params(51);
        for spec in net.layout().specs() {
            if spec.name.starts_with("mapping.") || spec.name.starts_with("temb.fc2") {
                spec.slot.of_mut(&mut p).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let (g, _) = net.encode_condition(&p, &random(cfg.input_shape(), 52)).unwrap();
        let (m, _) = net.gait_mapping(&p, &random(cfg.sample_shape(), 53)).unwrap();
        let (e, _) = net.timestep_embedding(&p, 400).unwrap();
        assert_eq!(build_hgv(&g, &m, &e).unwrap(), g);
    }

    #[test]
    fn hgv_matches_independent_terms() {
        let g = random(Shape::new(4, 16, 11), 61);
        let m = random(g.shape, 62);
        let e = [0.1, -0.7, 0.3, 2.0];
        let h = build_hgv(&g, &m, &e).unwrap();
        for (c, &ec) in e.iter().enumerate() {
            for y in 0..16 {
                for x in 0..11 {
                    let expect = g.at(c, y, x) * (m.at(c, y, x) + ec);
                    assert!((h.at(c, y, x) - g.at(c, y, x) - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn decoder_output_lies_in_tanh_range() {
        let cfg = DiffGaitConfig::with_channels(8);
        let net = DiffGaitNet::new(cfg).unwrap();
        let p: Vec<f64> = perturbed_params(&net, 71).iter().map(|v| v * 20.0).collect();
        let (out, _) = net.decode(&p, &random(cfg.feature_shape(), 72).map(|v| v * 50.0)).unwrap();
        assert!(out.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
