use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{batch_hard_triplet, ce_loss, ce_loss_grad, zero_grads, ZipLosses, DEFAULT_MARGIN};
use super::metrics::EmbeddingSet;
use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::{Activation, Conv2d, GroupNorm, GroupNormCache, Layout, Linear, ResBlock, ResBlockCache};
use crate::optim::Sgd;
use crate::pgi::{PgiCache, PgiFusion, DEFAULT_FUSION_CHANNELS};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct RecognizerConfig {
    pub fusion_channels: usize,
    /// Stem width followed by the three residual stage widths.
    pub widths: [usize; 4],
    pub groups: usize,
    pub parts: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub margin: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            fusion_channels: DEFAULT_FUSION_CHANNELS,
            widths: [32, 64, 128, 128],
            groups: 8,
            parts: 16,
            dim: 64,
            num_classes: 2,
            margin: DEFAULT_MARGIN,
            height: 64,
            width: 44,
        }
    }
}

impl RecognizerConfig {
    /// Spatial size of the backbone output.
    pub fn feature_hw(&self) -> (usize, usize) {
        (self.height.div_ceil(4), self.width.div_ceil(4))
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.fusion_channels == 0 || self.widths.contains(&0) || self.dim == 0 || self.parts == 0 {
            return Err(invalid!("zero-sized recognizer layer"));
        }
        let (fh, _) = self.feature_hw();
        if fh % self.parts != 0 {
            return Err(invalid!("{} feature rows do not split into {} parts", fh, self.parts));
        }
        Ok(())
    }
}

/// Aligned frames of one sequence: composite silhouettes `[1, h, w]` in
/// `[0, 1]` and heat-skeletons `[2, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput<T> {
    pub sil: Vec<Tensor<T>>,
    pub heat: Vec<Tensor<T>>,
}

impl<T: Real> SequenceInput<T> {
    pub fn len(&self) -> usize {
        self.sil.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sil.is_empty()
    }

    pub fn cast<U: Real>(&self) -> SequenceInput<U> {
        SequenceInput { sil: self.sil.iter().map(Tensor::cast).collect(), heat: self.heat.iter().map(Tensor::cast).collect() }
    }
}

/// Fusion, backbone, temporal max, horizontal mapping and per-part heads.
#[derive(Debug, Clone)]
pub struct Recognizer {
    config: RecognizerConfig,
    layout: Layout,
    pgi: PgiFusion,
    stem: Conv2d,
    blocks: Vec<ResBlock>,
    head_norm: GroupNorm,
    part_fc: Vec<Linear>,
    classifiers: Vec<Linear>,
}

#[derive(Debug, Clone)]
struct FrameCache<T> {
    pgi: PgiCache<T>,
    fused: Tensor<T>,
    blocks: Vec<ResBlockCache<T>>,
    head: GroupNormCache<T>,
    head_n: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct SequenceCache<T> {
    frames: Vec<FrameCache<T>>,
    /// Frame index supplying each element of the temporal max.
    source: Vec<u32>,
    pooled: Vec<Vec<T>>,
    /// Flat feature index of each part/channel maximum.
    pool_argmax: Vec<usize>,
    feature_shape: Shape,
}

impl Recognizer {
    pub const PREFIX: &'static str = "recog";

    pub fn new(config: RecognizerConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = Layout::new();
        let l = &mut layout;
        let [w0, w1, w2, w3] = config.widths;
        let cf = config.fusion_channels;
        let pgi = PgiFusion::new(l, "pgi", cf);
        let stem = Conv2d::new(l, "recog.stem", cf, w0, 3, 1);
        let act = Activation::Relu;
        let g = config.groups;
        let blocks = vec![
            ResBlock::new(l, "recog.stage1", w0, w1, 2, g, act),
            ResBlock::new(l, "recog.stage2", w1, w2, 2, g, act),
            ResBlock::new(l, "recog.stage3", w2, w3, 1, g, act),
        ];
        let head_norm = GroupNorm::new(l, "recog.head.norm", w3, g);
        let part_fc = (0..config.parts).map(|p| Linear::new(l, &format!("recog.part{p}.fc"), w3, config.dim)).collect();
        let classifiers =
            (0..config.parts).map(|p| Linear::new(l, &format!("recog.part{p}.cls"), config.dim, config.num_classes)).collect();
        Ok(Self { config, layout, pgi, stem, blocks, head_norm, part_fc, classifiers })
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn pgi(&self) -> &PgiFusion {
        &self.pgi
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> Vec<T> {
        self.layout.init(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn check(&self, p_len: usize) -> Result<()> {
        if p_len != self.layout.total() {
            return Err(shape_err!("expected {} parameters, got {}", self.layout.total(), p_len));
        }
        Ok(())
    }

    /// Stem, residual stages, then a closing norm and activation.
    fn backbone<T: Real>(&self, p: &[T], fused: &Tensor<T>) -> (Tensor<T>, Vec<ResBlockCache<T>>, GroupNormCache<T>, Tensor<T>) {
        let mut x = self.stem.forward(p, fused);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(p, &x);
            caches.push(c);
            x = y;
        }
        let (n, head) = self.head_norm.forward(p, &x);
        (Activation::Relu.forward(&n), caches, head, n)
    }

    fn check_frame<T: Real>(&self, fused: &Tensor<T>) -> Result<()> {
        fused.expect_shape(Shape::new(self.config.fusion_channels, self.config.height, self.config.width), "fused frame")
    }

    /// Horizontal strips pooled by `mean + max` and projected per part.
    fn horizontal_mapping<T: Real>(&self, p: &[T], agg: &Tensor<T>) -> (Vec<T>, Vec<Vec<T>>, Vec<usize>) {
        let s = agg.shape;
        let rows = s.h / self.config.parts;
        let n = T::from_f64((rows * s.w) as f64);
        let mut parts = Vec::with_capacity(self.config.parts * self.config.dim);
        let mut pooled_all = Vec::with_capacity(self.config.parts);
        let mut argmax = Vec::with_capacity(self.config.parts * s.c);
        for (part, fc) in self.part_fc.iter().enumerate() {
            let mut pooled = Vec::with_capacity(s.c);
            for c in 0..s.c {
                let base = (c * s.h + part * rows) * s.w;
                let strip = &agg.data[base..base + rows * s.w];
                let mut best = 0;
                for (i, &v) in strip.iter().enumerate() {
                    if v > strip[best] {
                        best = i;
                    }
                }
                argmax.push(base + best);
                pooled.push(strip.iter().copied().sum::<T>() / n + strip[best]);
            }
            parts.extend(fc.forward(p, &pooled));
            pooled_all.push(pooled);
        }
        (parts, pooled_all, argmax)
    }

    /// Embedding of already fused per-frame features; element-wise max over
    /// frames, so order and duplication do not matter.
    pub fn embed_features<T: Real>(&self, p: &[T], frames: &[Tensor<T>]) -> Result<Vec<T>> {
        self.check(p.len())?;
        if frames.is_empty() {
            return Err(invalid!("sequence has no frames"));
        }
        let mut agg: Option<Tensor<T>> = None;
        for f in frames {
            self.check_frame(f)?;
            let (x, ..) = self.backbone(p, f);
            agg = Some(match agg {
                None => x,
                Some(a) => a.zip_map(&x, T::max),
            });
        }
        Ok(self.horizontal_mapping(p, &agg.unwrap()).0)
    }

    pub fn fuse_frames<T: Real>(&self, p: &[T], seq: &SequenceInput<T>) -> Result<Vec<Tensor<T>>> {
        self.check(p.len())?;
        check_sequence(seq)?;
        seq.sil.iter().zip(&seq.heat).map(|(s, h)| Ok(self.pgi.stage_two_fuse(p, s, h)?.0)).collect()
    }

    pub fn embed_sequence(&self, p: &[f32], seq: &SequenceInput<f32>, label: u32, seq_id: u32, view: String) -> Result<EmbeddingSet> {
        let fused = self.fuse_frames(p, seq)?;
        let parts = self.embed_features(p, &fused)?;
        if parts.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("embedding of identity {label} sequence {seq_id} is not finite"));
        }
        Ok(EmbeddingSet { parts, num_parts: self.config.parts, label, seq: seq_id, view })
    }

    pub fn forward_train<T: Real>(&self, p: &[T], seq: &SequenceInput<T>) -> Result<(Vec<T>, SequenceCache<T>)> {
        self.check(p.len())?;
        check_sequence(seq)?;
        let mut frames = Vec::with_capacity(seq.len());
        let mut agg: Option<Tensor<T>> = None;
        let mut source = Vec::new();
        for (f, (s, h)) in seq.sil.iter().zip(&seq.heat).enumerate() {
            let (fused, pgi) = self.pgi.stage_two_fuse(p, s, h)?;
            self.check_frame(&fused)?;
            let (x, blocks, head, head_n) = self.backbone(p, &fused);
            match agg.as_mut() {
                None => {
                    source = vec![0u32; x.data.len()];
                    agg = Some(x);
                }
                Some(a) => {
                    for ((av, &xv), src) in a.data.iter_mut().zip(&x.data).zip(&mut source) {
                        if xv > *av {
                            *av = xv;
                            *src = f as u32;
                        }
                    }
                }
            }
            frames.push(FrameCache { pgi, fused, blocks, head, head_n });
        }
        let agg = agg.unwrap();
        let (parts, pooled, pool_argmax) = self.horizontal_mapping(p, &agg);
        Ok((parts, SequenceCache { frames, source, pooled, pool_argmax, feature_shape: agg.shape }))
    }

    pub fn backward_train<T: Real>(&self, p: &[T], cache: &SequenceCache<T>, d_parts: &[T], g: &mut [T]) {
        let s = cache.feature_shape;
        let rows = s.h / self.config.parts;
        let inv_n = T::one() / T::from_f64((rows * s.w) as f64);
        let dim = self.config.dim;
        let mut d_agg = Tensor::zeros(s);
        for (part, fc) in self.part_fc.iter().enumerate() {
            let d_pooled = fc.backward(p, &cache.pooled[part], &d_parts[part * dim..(part + 1) * dim], g);
            for (c, &d) in d_pooled.iter().enumerate() {
                let base = (c * s.h + part * rows) * s.w;
                for v in &mut d_agg.data[base..base + rows * s.w] {
                    *v = *v + d * inv_n;
                }
                let m = cache.pool_argmax[part * s.c + c];
                d_agg.data[m] = d_agg.data[m] + d;
            }
        }
        for (f, fc) in cache.frames.iter().enumerate() {
            let mut d = Tensor::zeros(s);
            let mut any = false;
            for ((dv, &src), &ga) in d.data.iter_mut().zip(&cache.source).zip(&d_agg.data) {
                if src as usize == f {
                    *dv = ga;
                    any |= ga != T::zero();
                }
            }
            if !any {
                continue;
            }
            d = Activation::Relu.backward(&fc.head_n, &d);
            d = self.head_norm.backward(p, &fc.head, &d, g);
            for (b, c) in self.blocks.iter().zip(&fc.blocks).rev() {
                d = b.backward(p, c, &d, g);
            }
            let d_fused = self.stem.backward(p, &fc.fused, &d, g, true).unwrap();
            self.pgi.backward(p, &fc.pgi, &d_fused, g);
        }
    }

    /// Per-part classifier logits.
    pub fn logits<T: Real>(&self, p: &[T], parts: &[T]) -> Vec<Vec<T>> {
        let dim = self.config.dim;
        self.classifiers.iter().enumerate().map(|(i, c)| c.forward(p, &parts[i * dim..(i + 1) * dim])).collect()
    }

    /// Batch-hard triplet plus part-averaged cross-entropy. When `grads` is
    /// given, the gradient of their sum is accumulated into it.
    pub fn objective<T: Real>(
        &self,
        p: &[T],
        batch: &[SequenceInput<T>],
        labels: &[usize],
        grads: Option<&mut [T]>,
    ) -> Result<(T, T)> {
        if batch.is_empty() || batch.len() != labels.len() {
            return Err(shape_err!("{} sequences with {} labels", batch.len(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.config.num_classes) {
            return Err(invalid!("label {bad} outside {} classes", self.config.num_classes));
        }
        let mut embs = Vec::with_capacity(batch.len());
        let mut caches = Vec::with_capacity(batch.len());
        for seq in batch {
            let (e, c) = self.forward_train(p, seq)?;
            embs.push(e);
            caches.push(c);
        }
        let parts = self.config.parts;
        let dim = self.config.dim;
        let margin = T::from_f64(self.config.margin);
        let want = grads.is_some();
        let mut d_embs = zero_grads::<T>(batch.len(), parts * dim);
        let tri = batch_hard_triplet(&embs, labels, parts, margin, want.then_some(&mut d_embs[..]));
        let ce_scale = T::one() / T::from_f64((batch.len() * parts) as f64);
        let mut ce = T::zero();
        let mut head_grads = grads;
        for (i, (e, &label)) in embs.iter().zip(labels).enumerate() {
            for (part, (cls, z)) in self.classifiers.iter().zip(self.logits(p, e)).enumerate() {
                ce = ce + ce_loss(&z, label);
                if let Some(g) = head_grads.as_deref_mut() {
                    let dz: Vec<T> = ce_loss_grad(&z, label).into_iter().map(|v| v * ce_scale).collect();
                    let r = part * dim..(part + 1) * dim;
                    let de = cls.backward(p, &e[r.clone()], &dz, g);
                    for (a, b) in d_embs[i][r].iter_mut().zip(de) {
                        *a = *a + b;
                    }
                }
            }
        }
        if let Some(g) = head_grads {
            for (cache, d) in caches.iter().zip(&d_embs) {
                self.backward_train(p, cache, d, g);
            }
        }
        Ok((tri, ce * ce_scale))
    }
}

fn check_sequence<T: Real>(seq: &SequenceInput<T>) -> Result<()> {
    if seq.is_empty() {
        return Err(invalid!("sequence has no frames"));
    }
    if seq.sil.len() != seq.heat.len() {
        return Err(shape_err!("{} silhouettes but {} heat-skeletons", seq.sil.len(), seq.heat.len()));
    }
    Ok(())
}

/// Recognizer plus trained weights.
#[derive(Debug, Clone)]
pub struct ZipGait {
    pub net: Recognizer,
    pub params: Vec<f32>,
    pub seed: u64,
}

impl ZipGait {
    pub fn new(config: RecognizerConfig, seed: u64) -> Result<Self> {
        let net = Recognizer::new(config)?;
        let params = net.init_params(seed);
        Ok(Self { net, params, seed })
    }
}

/// Sequences drawn as identities x sequences-per-identity.
#[derive(Debug, Clone, Default)]
pub struct ZipBatch {
    pub seqs: Vec<SequenceInput<f32>>,
    pub labels: Vec<usize>,
}

/// Draws `ids` distinct classes, `per_id` sequences of each (with
/// replacement when a class has fewer) and `frames` frames per sequence.
pub fn sample_zip_batch<R: Rng + ?Sized>(
    data: &[(usize, &SequenceInput<f32>)],
    ids: usize,
    per_id: usize,
    frames: usize,
    rng: &mut R,
) -> Result<ZipBatch> {
    let mut classes: Vec<usize> = data.iter().map(|(l, _)| *l).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < ids || ids == 0 || per_id == 0 || frames == 0 {
        return Err(invalid!("cannot draw {ids} identities x {per_id} sequences x {frames} frames"));
    }
    let chosen: Vec<usize> = classes.choose_multiple(rng, ids).copied().collect();
    let mut batch = ZipBatch::default();
    for label in chosen {
        let pool: Vec<&SequenceInput<f32>> = data.iter().filter(|(l, _)| *l == label).map(|(_, s)| *s).collect();
        let picks: Vec<&SequenceInput<f32>> = if pool.len() >= per_id {
            pool.choose_multiple(rng, per_id).copied().collect()
        } else {
            (0..per_id).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        };
        for seq in picks {
            let n = seq.len();
            let idx: Vec<usize> = if n >= frames {
                let mut v = rand::seq::index::sample(rng, n, frames).into_vec();
                v.sort_unstable();
                v
            } else {
                (0..frames).map(|_| rng.gen_range(0..n)).collect()
            };
            batch.seqs.push(SequenceInput {
                sil: idx.iter().map(|&i| seq.sil[i].clone()).collect(),
                heat: idx.iter().map(|&i| seq.heat[i].clone()).collect(),
            });
            batch.labels.push(label);
        }
    }
    Ok(batch)
}

/// One SGD step on the joint objective; returns the losses before the update.
pub fn train_step_zipgait(model: &mut ZipGait, batch: &ZipBatch, sgd: &mut Sgd, lr: f64) -> Result<ZipLosses> {
    if sgd.velocity.len() != model.params.len() {
        return Err(shape_err!("optimizer state sized for {} parameters", sgd.velocity.len()));
    }
    let mut grads = vec![0.0f32; model.params.len()];
    let (tri, ce) = model.net.objective(&model.params, &batch.seqs, &batch.labels, Some(&mut grads))?;
    let losses = ZipLosses { triplet: tri as f64, ce: ce as f64 };
    if !losses.total().is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingDiverged { step: sgd.step + 1, loss: losses.total() });
    }
    sgd.update(&mut model.params, &grads, lr);
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> RecognizerConfig {
        RecognizerConfig {
            fusion_channels: 3,
            widths: [4, 4, 6, 6],
            groups: 2,
            parts: 4,
            dim: 5,
            num_classes: 3,
            margin: 0.2,
            height: 16,
            width: 12,
        }
    }

    fn random_seq(seed: u64, frames: usize, cfg: &RecognizerConfig) -> SequenceInput<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |c| {
            let s = Shape::new(c, cfg.height, cfg.width);
            Tensor { shape: s, data: (0..s.len()).map(|_| rng.gen_range(0.0..1.0)).collect() }
        };
        let sil = (0..frames).map(|_| t(1)).collect();
        let heat = (0..frames).map(|_| t(2)).collect();
        SequenceInput { sil, heat }
    }

    #[test]
    fn embedding_ignores_frame_order_and_duplicates() {
        let cfg = tiny_config();
        let net = Recognizer::new(cfg.clone()).unwrap();
        let p: Vec<f64> = net.init_params(1);
        let seq = random_seq(2, 4, &cfg);
        let fused = net.fuse_frames(&p, &seq).unwrap();
        let base = net.embed_features(&p, &fused).unwrap();
        let mut shuffled = fused.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        assert_eq!(net.embed_features(&p, &shuffled).unwrap(), base);
        let doubled: Vec<_> = fused.iter().flat_map(|f| [f.clone(), f.clone()]).collect();
        assert_eq!(net.embed_features(&p, &doubled).unwrap(), base);
        let single = net.embed_features(&p, &fused[..1]).unwrap();
        let (x, ..) = net.backbone(&p, &fused[0]);
        assert_eq!(single, net.horizontal_mapping(&p, &x).0);
        assert!(net.embed_features(&p, &[]).is_err());
        let (train_emb, _) = net.forward_train(&p, &seq).unwrap();
        assert_eq!(train_emb, base);
    }

    #[test]
    fn objective_gradients_match_central_differences() {
        let cfg = tiny_config();
        let net = Recognizer::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p: Vec<f64> = net.init_params(3);
        for v in &mut p {
            *v += rng.gen_range(-0.05..0.05);
        }
        let batch: Vec<_> = (0..6).map(|i| random_seq(10 + i, 2, &cfg)).collect();
        let labels = [0, 0, 1, 1, 2, 2];
        let mut g = vec![0.0; p.len()];
        net.objective(&p, &batch, &labels, Some(&mut g)).unwrap();
        let f = |q: &[f64]| {
            let (a, b) = net.objective(q, &batch, &labels, None).unwrap();
            a + b
        };
        let mut worst = 0.0f64;
        for _ in 0..80 {
            let i = rng.gen_range(0..p.len());
            let mut q = p.clone();
            q[i] += 1e-6;
            let up = f(&q);
            q[i] -= 2e-6;
            let fd = (up - f(&q)) / 2e-6;
            worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn batch_sampling_respects_the_grid() {
        let cfg = tiny_config();
        let seqs: Vec<_> = (0..6).map(|i| random_seq(i, 5, &cfg).cast::<f32>()).collect();
        let data: Vec<(usize, &SequenceInput<f32>)> = seqs.iter().enumerate().map(|(i, s)| (i % 3, s)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = sample_zip_batch(&data, 2, 3, 4, &mut rng).unwrap();
        assert_eq!(b.seqs.len(), 6);
        assert!(b.seqs.iter().all(|s| s.len() == 4));
        assert_eq!(b.labels[0], b.labels[2]);
        assert_ne!(b.labels[0], b.labels[3]);
        assert!(sample_zip_batch(&data, 4, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn sgd_step_reduces_the_objective_on_a_fixed_batch() {
        let cfg = tiny_config();
        let mut model = ZipGait::new(cfg.clone(), 5).unwrap();
        let batch = ZipBatch {
            seqs: (0..6).map(|i| random_seq(20 + i, 2, &cfg).cast()).collect(),
            labels: vec![0, 0, 1, 1, 2, 2],
        };
        let mut sgd = Sgd::new(Default::default(), model.params.len());
        let first = train_step_zipgait(&mut model, &batch, &mut sgd, 0.05).unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = train_step_zipgait(&mut model, &batch, &mut sgd, 0.05).unwrap();
        }
        assert!(last.total() < first.total(), "{first:?} -> {last:?}");
    }
}
