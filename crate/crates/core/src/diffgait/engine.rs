use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::net::{build_hgv, DiffGaitConfig, DiffGaitNet};
use crate::error::{invalid, shape_err, Error, Result};
use crate::heat::HeatSkeleton;
use crate::optim::Adam;
use crate::schedule::{timestep_pairs, NoiseSchedule};
use crate::tensor::Tensor;

/// Network plus its trained weights.
#[derive(Debug, Clone)]
pub struct DiffGait {
    pub net: DiffGaitNet,
    pub params: Vec<f32>,
    pub seed: u64,
}

impl DiffGait {
    pub fn new(config: DiffGaitConfig, seed: u64) -> Result<Self> {
        let net = DiffGaitNet::new(config)?;
        let params = net.init_params(seed);
        Ok(Self { net, params, seed })
    }

    pub fn count_params(&self) -> usize {
        self.params.len()
    }
}

/// Frame-aligned heat-skeletons and target silhouettes in `[-1, 1]`.
#[derive(Debug, Clone, Default)]
pub struct TrainBatchDG {
    pub heat: Vec<Tensor<f32>>,
    pub gt_sil: Vec<Tensor<f32>>,
}

impl TrainBatchDG {
    pub fn push(&mut self, heat: &HeatSkeleton, silhouette01: &Tensor<f32>) {
        self.heat.push(heat.as_tensor());
        self.gt_sil.push(silhouette01.map(|v| 2.0 * v - 1.0));
    }

    pub fn len(&self) -> usize {
        self.heat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heat.is_empty()
    }
}

/// Per-step predictions in `[0, 1]`, earliest step first.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLevelSilhouettes {
    pub preds: Vec<Tensor<f32>>,
}

impl MultiLevelSilhouettes {
    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn last(&self) -> Option<&Tensor<f32>> {
        self.preds.last()
    }
}

pub(crate) fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// One optimizer step on the mean squared reconstruction error.
///
/// Draws `t` uniformly from `1..T` and then the noise for each item, in batch
/// order. Returns the batch loss before the update.
pub fn train_step_diffgait<R: Rng + ?Sized>(
    model: &mut DiffGait,
    batch: &TrainBatchDG,
    sched: &NoiseSchedule,
    adam: &mut Adam,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid!("empty batch"));
    }
    if batch.heat.len() != batch.gt_sil.len() {
        return Err(shape_err!("{} heat maps but {} silhouettes", batch.heat.len(), batch.gt_sil.len()));
    }
    if sched.timesteps() != model.net.config().timesteps {
        return Err(invalid!("schedule has {} steps, model expects {}", sched.timesteps(), model.net.config().timesteps));
    }
    if adam.m.len() != model.params.len() {
        return Err(shape_err!("optimizer state sized for {} parameters", adam.m.len()));
    }
    let shape = model.net.config().sample_shape();
    let scale = 1.0 / (batch.len() * shape.len()) as f32;
    let mut grads = vec![0.0f32; model.params.len()];
    let mut sse = 0.0f64;
    for (heat, gt) in batch.heat.iter().zip(&batch.gt_sil) {
        gt.expect_shape(shape, "target silhouette")?;
        let t = rng.gen_range(1..sched.timesteps());
        let eps = normal_vec(rng, shape.len());
        let noisy = Tensor::from_vec(shape, sched.forward_diffuse(&gt.data, t, &eps)?)?;
        sse += model.net.squared_error_and_grad(&model.params, heat, gt, &noisy, t, scale, &mut grads)? as f64;
    }
    let loss = sse * scale as f64;
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingDiverged { step: adam.step + 1, loss });
    }
    let lr = adam.config.lr;
    adam.update(&mut model.params, &grads, lr);
    Ok(loss)
}

/// Reverse process over `steps` evenly spaced timesteps from pure noise.
///
/// Each step decodes a clean estimate, records it, and moves the sample to
/// the next timestep. With `eta > 0` fresh noise is drawn per step.
pub fn sample_silhouettes<R: Rng + ?Sized>(
    model: &DiffGait,
    heat: &HeatSkeleton,
    sched: &NoiseSchedule,
    steps: usize,
    eta: f64,
    rng: &mut R,
) -> Result<MultiLevelSilhouettes> {
    let net = &model.net;
    let p = &model.params;
    if sched.timesteps() != net.config().timesteps {
        return Err(invalid!("schedule has {} steps, model expects {}", sched.timesteps(), net.config().timesteps));
    }
    let pairs = timestep_pairs(sched.timesteps(), steps)?;
    let shape = net.config().sample_shape();
    let (g_ske, _) = net.encode_condition(p, &heat.as_tensor::<f32>())?;
    let mut x = Tensor::from_vec(shape, normal_vec(rng, shape.len()))?;
    let mut preds = Vec::with_capacity(pairs.len());
    for (t_now, t_next) in pairs {
        let (mapped, _) = net.gait_mapping(p, &x)?;
        let (temb, _) = net.timestep_embedding(p, t_now)?;
        let (x0_hat, _) = net.decode(p, &build_hgv(&g_ske, &mapped, &temb)?)?;
        let eps_star = (eta > 0.0).then(|| normal_vec(rng, shape.len()));
        let next = sched.ddim_step(&x.data, &x0_hat.data, t_now, t_next, eta, eps_star.as_deref())?;
        preds.push(x0_hat.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)));
        x = Tensor::from_vec(shape, next)?;
    }
    Ok(MultiLevelSilhouettes { preds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::AdamConfig;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> DiffGait {
        DiffGait::new(DiffGaitConfig::with_channels(4), 3).unwrap()
    }

    fn blob_heat() -> HeatSkeleton {
        let mut t = Tensor::zeros(Shape::new(2, 64, 44));
        for y in 10..50 {
            for x in 15..28 {
                *t.at_mut(0, y, x) = 0.5;
                *t.at_mut(1, y, x) = 1.0;
            }
        }
        HeatSkeleton::from_tensor(t).unwrap()
    }

    #[test]
    fn empty_silhouette_starts_at_unit_loss() {
        let mut m = tiny();
        let sched = NoiseSchedule::cosine(1000).unwrap();
        let mut batch = TrainBatchDG::default();
        for _ in 0..2 {
            batch.push(&blob_heat(), &Tensor::zeros(Shape::new(1, 64, 44)));
        }
        let mut adam = Adam::new(AdamConfig::default(), m.count_params());
        let loss = train_step_diffgait(&mut m, &batch, &sched, &mut adam, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((loss - 1.0).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn sampling_returns_one_prediction_per_step_in_range() {
        let m = DiffGait { params: tiny().net.init_params::<f32>(9).iter().map(|v| v * 5.0).collect(), ..tiny() };
        let sched = NoiseSchedule::cosine(1000).unwrap();
        let before = m.params.clone();
        let out = sample_silhouettes(&m, &blob_heat(), &sched, 5, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.preds.iter().all(|p| p.data.iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(before, m.params);
        let again = sample_silhouettes(&m, &blob_heat(), &sched, 5, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out, again);
        let stochastic = sample_silhouettes(&m, &blob_heat(), &sched, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(stochastic.unwrap().len(), 3);
        assert!(sample_silhouettes(&m, &blob_heat(), &sched, 0, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn diverging_loss_is_reported() {
        let mut m = tiny();
        let sched = NoiseSchedule::cosine(1000).unwrap();
        let mut batch = TrainBatchDG::default();
        batch.push(&blob_heat(), &Tensor::full(Shape::new(1, 64, 44), f32::NAN));
        let mut adam = Adam::new(AdamConfig::default(), m.count_params());
        let err = train_step_diffgait(&mut m, &batch, &sched, &mut adam, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::TrainingDiverged { step: 1, .. })));
    }
}
