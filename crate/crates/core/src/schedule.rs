//! Scalar diffusion math: cosine noise schedule, forward corruption,
//! noise recovery and the eta-parameterized reverse update.

use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::error::{invalid, shape_err, Error, Result};
use crate::real::Real;

pub const COSINE_OFFSET: f64 = 0.008;
pub const BETA_MIN: f64 = 1e-8;
pub const BETA_MAX: f64 = 0.999;

/// Timestep-indexed `beta`, `alpha = 1 - beta` and cumulative `alpha_bar`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

fn cosine_f(t: f64, total: f64, s: f64) -> f64 {
    let c = ((t / total + s) / (1.0 + s) * core::f64::consts::FRAC_PI_2).cos();
    c * c
}

impl NoiseSchedule {
    /// Cosine schedule with offset `s = 0.008`: `beta[t] = 1 - f(t+1)/f(t)`
    /// clipped to `[1e-8, 0.999]`, and `alpha_bar` the running product of
    /// `1 - beta`.
    pub fn cosine(timesteps: usize) -> Result<Self> {
        Self::cosine_with(timesteps, COSINE_OFFSET, (BETA_MIN, BETA_MAX))
    }

    pub fn cosine_with(timesteps: usize, s: f64, (lo, hi): (f64, f64)) -> Result<Self> {
        if timesteps < 2 {
            return Err(invalid!("a schedule needs at least 2 timesteps, got {timesteps}"));
        }
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(invalid!("beta clip bounds ({lo}, {hi}) must satisfy 0 < lo < hi < 1"));
        }
        let total = timesteps as f64;
        let beta: Vec<f64> = (0..timesteps)
            .map(|t| {
                let ratio = cosine_f(t as f64 + 1.0, total, s) / cosine_f(t as f64, total, s);
                (1.0 - ratio).clamp(lo, hi)
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, &a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn timesteps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.timesteps() {
            return Err(invalid!("timestep {t} outside [0, {})", self.timesteps()));
        }
        Ok(())
    }

    /// `alpha_bar` with the terminal convention `alpha_bar[-1] = 1`.
    pub fn alpha_bar_at(&self, t: isize) -> Result<f64> {
        if t == -1 {
            return Ok(1.0);
        }
        if t < -1 {
            return Err(invalid!("timestep {t} below the terminal index -1"));
        }
        self.check_t(t as usize)?;
        Ok(self.alpha_bar[t as usize])
    }

    /// `sqrt(ab) * x0 + sqrt(1 - ab) * eps`.
    pub fn forward_diffuse<T: Real>(&self, x0: &[T], t: usize, eps: &[T]) -> Result<Vec<T>> {
        self.check_t(t)?;
        if x0.len() != eps.len() {
            return Err(shape_err!("x0 has {} values but eps has {}", x0.len(), eps.len()));
        }
        let ab = self.alpha_bar[t];
        let (a, b) = (T::from_f64(ab.sqrt()), T::from_f64((1.0 - ab).sqrt()));
        Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
    }

    /// Noise implied by a sample and a clean estimate:
    /// `(x_t - sqrt(ab) * x0_hat) / sqrt(1 - ab)`.
    pub fn recover_noise<T: Real>(&self, x_t: &[T], x0_hat: &[T], t: usize) -> Result<Vec<T>> {
        self.check_t(t)?;
        if x_t.len() != x0_hat.len() {
            return Err(shape_err!("x_t has {} values but x0_hat has {}", x_t.len(), x0_hat.len()));
        }
        let ab = self.alpha_bar[t];
        let denom = (1.0 - ab).sqrt();
        if denom < 1e-12 {
            return Err(Error::DivisionGuard { t });
        }
        let a = ab.sqrt();
        Ok(x_t
            .iter()
            .zip(x0_hat)
            .map(|(&x, &x0)| T::from_f64((x.as_f64() - a * x0.as_f64()) / denom))
            .collect())
    }

    /// Reverse-step noise scale
    /// `eta * sqrt((1 - ab_now/ab_next) * (1 - ab_next) / (1 - ab_now))`.
    pub fn ddim_sigma(&self, t_now: usize, t_next: isize, eta: f64) -> Result<f64> {
        let ab_now = self.alpha_bar_at(t_now as isize)?;
        let ab_next = self.alpha_bar_at(t_next)?;
        let var = (1.0 - ab_now / ab_next) * (1.0 - ab_next) / (1.0 - ab_now);
        Ok(eta * var.max(0.0).sqrt())
    }

    /// One reverse update from `t_now` to `t_next`.
    ///
    /// `t_next = -1` is terminal and returns `x0_hat` unchanged. `eps_star`
    /// must be present exactly when `eta > 0`.
    pub fn ddim_step<T: Real>(
        &self,
        x_t: &[T],
        x0_hat: &[T],
        t_now: usize,
        t_next: isize,
        eta: f64,
        eps_star: Option<&[T]>,
    ) -> Result<Vec<T>> {
        self.check_t(t_now)?;
        if t_next >= t_now as isize {
            return Err(invalid!("t_next {t_next} must precede t_now {t_now}"));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(invalid!("eta {eta} outside [0, 1]"));
        }
        match (eta > 0.0, eps_star) {
            (true, None) => return Err(invalid!("eta > 0 requires eps_star")),
            (false, Some(_)) => return Err(invalid!("eps_star given with eta = 0")),
            (true, Some(e)) if e.len() != x_t.len() => {
                return Err(shape_err!("eps_star has {} values, expected {}", e.len(), x_t.len()))
            }
            _ => {}
        }
        if t_next == -1 {
            if x_t.len() != x0_hat.len() {
                return Err(shape_err!("x_t has {} values but x0_hat has {}", x_t.len(), x0_hat.len()));
            }
            return Ok(x0_hat.to_vec());
        }
        let eps = self.recover_noise(x_t, x0_hat, t_now)?;
        let ab_next = self.alpha_bar_at(t_next)?;
        let sigma = self.ddim_sigma(t_now, t_next, eta)?;
        let dir2 = 1.0 - ab_next - sigma * sigma;
        if dir2 < 0.0 {
            return Err(Error::SigmaOverflow { t_now, t_next, eta });
        }
        let (a, d, s) = (T::from_f64(ab_next.sqrt()), T::from_f64(dir2.sqrt()), T::from_f64(sigma));
        Ok(match eps_star {
            Some(es) => x0_hat
                .iter()
                .zip(&eps)
                .zip(es)
                .map(|((&x0, &e), &z)| a * x0 + s * z + d * e)
                .collect(),
            None => x0_hat.iter().zip(&eps).map(|(&x0, &e)| a * x0 + d * e).collect(),
        })
    }
}

/// Consecutive `(t_now, t_next)` pairs over `steps + 1` evenly spaced points
/// from `T - 1` down to the terminal index `-1`.
pub fn timestep_pairs(timesteps: usize, steps: usize) -> Result<Vec<(usize, isize)>> {
    if steps == 0 || steps > timesteps {
        return Err(invalid!("steps must lie in [1, {timesteps}], got {steps}"));
    }
    let span = timesteps as f64;
    let points: Vec<isize> = (0..=steps)
        .rev()
        .map(|i| {
            let v = -1.0 + span * i as f64 / steps as f64;
            // f64 rounding can push an exact integer just below itself
            (v + 1e-9).floor() as isize
        })
        .collect();
    Ok(points.windows(2).map(|w| (w[0] as usize, w[1])).collect())
}
