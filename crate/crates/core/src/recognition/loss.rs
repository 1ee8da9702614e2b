use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

pub const DEFAULT_MARGIN: f64 = 0.2;

/// Keeps the distance differentiable when two embeddings coincide.
const DIST_EPS: f64 = 1e-12;

pub(crate) fn distance<T: Real>(a: &[T], b: &[T]) -> T {
    let s: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    (s + T::from_f64(DIST_EPS)).sqrt()
}

/// Hinge `max(d(a, p) - d(a, n) + m, 0)` averaged over parts.
///
/// Each argument is a flat `[parts, dim]` embedding.
pub fn triplet_loss<T: Real>(anchor: &[T], pos: &[T], neg: &[T], parts: usize, margin: T) -> T {
    assert!(parts > 0 && anchor.len().is_multiple_of(parts));
    let dim = anchor.len() / parts;
    let mut acc = T::zero();
    for p in 0..parts {
        let r = p * dim..(p + 1) * dim;
        let v = distance(&anchor[r.clone()], &pos[r.clone()]) - distance(&anchor[r.clone()], &neg[r]) + margin;
        acc = acc + v.max(T::zero());
    }
    acc / T::from_f64(parts as f64)
}

/// Hardest positive and negative of one anchor within one part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinedPair {
    pub anchor: usize,
    pub part: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Farthest same-label and nearest other-label entry for every anchor and
/// part. Anchors lacking either are skipped; ties go to the lower index.
pub fn mine_batch_hard<T: Real>(embs: &[Vec<T>], labels: &[usize], parts: usize) -> Vec<MinedPair> {
    let n = embs.len();
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let dim = embs[0].len() / parts;
    for part in 0..parts {
        let r = part * dim..(part + 1) * dim;
        for a in 0..n {
            let mut pos: Option<(usize, T)> = None;
            let mut neg: Option<(usize, T)> = None;
            for j in 0..n {
                if j == a {
                    continue;
                }
                let d = distance(&embs[a][r.clone()], &embs[j][r.clone()]);
                if labels[j] == labels[a] {
                    if pos.is_none_or(|(_, best)| d > best) {
                        pos = Some((j, d));
                    }
                } else if neg.is_none_or(|(_, best)| d < best) {
                    neg = Some((j, d));
                }
            }
            if let (Some((positive, _)), Some((negative, _))) = (pos, neg) {
                out.push(MinedPair { anchor: a, part, positive, negative });
            }
        }
    }
    out
}

/// Batch-hard triplet loss, mean over mined (anchor, part) terms. Gradients
/// with respect to each embedding are added into `grads`.
pub fn batch_hard_triplet<T: Real>(
    embs: &[Vec<T>],
    labels: &[usize],
    parts: usize,
    margin: T,
    mut grads: Option<&mut [Vec<T>]>,
) -> T {
    let mined = mine_batch_hard(embs, labels, parts);
    if mined.is_empty() {
        return T::zero();
    }
    let dim = embs[0].len() / parts;
    let scale = T::one() / T::from_f64(mined.len() as f64);
    let mut total = T::zero();
    for m in &mined {
        let r = m.part * dim..(m.part + 1) * dim;
        let (a, p, n) = (&embs[m.anchor][r.clone()], &embs[m.positive][r.clone()], &embs[m.negative][r.clone()]);
        let d_ap = distance(a, p);
        let d_an = distance(a, n);
        let v = d_ap - d_an + margin;
        if v <= T::zero() {
            continue;
        }
        total = total + v;
        if let Some(g) = grads.as_deref_mut() {
            for i in 0..dim {
                let up = (a[i] - p[i]) / d_ap * scale;
                let un = (a[i] - n[i]) / d_an * scale;
                g[m.anchor][r.start + i] = g[m.anchor][r.start + i] + up - un;
                g[m.positive][r.start + i] = g[m.positive][r.start + i] - up;
                g[m.negative][r.start + i] = g[m.negative][r.start + i] + un;
            }
        }
    }
    total * scale
}

/// Softmax cross-entropy of one logit vector, via log-sum-exp.
pub fn ce_loss<T: Real>(logits: &[T], label: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    lse - logits[label]
}

/// Gradient of [`ce_loss`] with respect to the logits.
pub fn ce_loss_grad<T: Real>(logits: &[T], label: usize) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut e: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = e.iter().copied().sum();
    for v in &mut e {
        *v = *v / sum;
    }
    e[label] = e[label] - T::one();
    e
}

/// Unit-weight sum of the two training objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZipLosses {
    pub triplet: f64,
    pub ce: f64,
}

impl ZipLosses {
    pub fn total(&self) -> f64 {
        self.triplet + self.ce
    }
}

pub(crate) fn zero_grads<T: Real>(n: usize, len: usize) -> Vec<Vec<T>> {
    vec![vec![T::zero(); len]; n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hinge_examples() {
        let a = [0.0f64, 0.0];
        let p = [1.0, 0.0];
        let n = [3.0, 0.0];
        assert!(triplet_loss(&a, &p, &n, 1, 0.2).abs() < 1e-9);
        let p = [2.0, 0.0];
        let n = [0.0, 1.0];
        assert!((triplet_loss(&a, &p, &n, 1, 0.2) - 1.2).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_closed_forms() {
        assert!((ce_loss(&[0.5f64; 10], 3) - 10f64.ln()).abs() < 1e-12);
        let mut z = [0.0f64; 4];
        z[2] = 1000.0;
        assert!(ce_loss(&z, 2).abs() < 1e-12);
        assert!((ce_loss(&z, 0) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<f64> = (0..7).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let g = ce_loss_grad(&z, 4);
        for i in 0..z.len() {
            let mut q = z.clone();
            q[i] += 1e-5;
            let up = ce_loss(&q, 4);
            q[i] -= 2e-5;
            let fd = (up - ce_loss(&q, 4)) / 2e-5;
            assert!((fd - g[i]).abs() / fd.abs().max(g[i].abs()) < 1e-5, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn single_precision_matches_double_precision_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let z: Vec<f32> = (0..12).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let label = rng.gen_range(0..12);
            let reference = z.iter().map(|&v| (v as f64).exp()).sum::<f64>().ln() - z[label] as f64;
            assert!((ce_loss(&z, label) as f64 - reference).abs() < 1e-6);
        }
    }

    fn random_batch(seed: u64, n: usize, classes: usize, len: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embs = (0..n).map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels = (0..n).map(|i| i % classes).collect();
        (embs, labels)
    }

    #[test]
    fn mining_agrees_with_exhaustive_triplet_search() {
        for seed in 0..20 {
            let (embs, labels) = random_batch(seed, 24, 6, 12);
            let parts = 3;
            let mined = mine_batch_hard(&embs, &labels, parts);
            assert_eq!(mined.len(), 24 * parts);
            for m in mined {
                let r = m.part * 4..(m.part + 1) * 4;
                let mut best = (f64::NEG_INFINITY, 0, 0);
                for p in 0..24 {
                    for n in 0..24 {
                        if p == m.anchor || labels[p] != labels[m.anchor] || labels[n] == labels[m.anchor] {
                            continue;
                        }
                        let v = distance(&embs[m.anchor][r.clone()], &embs[p][r.clone()])
                            - distance(&embs[m.anchor][r.clone()], &embs[n][r.clone()]);
                        if v > best.0 {
                            best = (v, p, n);
                        }
                    }
                }
                assert_eq!((m.positive, m.negative), (best.1, best.2));
            }
        }
    }

    #[test]
    fn batch_hard_gradient_matches_central_differences() {
        let (embs, labels) = random_batch(5, 8, 3, 6);
        let mut g = zero_grads::<f64>(8, 6);
        batch_hard_triplet(&embs, &labels, 2, 0.5, Some(&mut g));
        for i in 0..8 {
            for k in 0..6 {
                let mut e = embs.clone();
                e[i][k] += 1e-6;
                let up = batch_hard_triplet(&e, &labels, 2, 0.5, None);
                e[i][k] -= 2e-6;
                let fd = (up - batch_hard_triplet(&e, &labels, 2, 0.5, None)) / 2e-6;
                assert!((fd - g[i][k]).abs() < 1e-6, "{i},{k}: {fd} vs {}", g[i][k]);
            }
        }
    }

    #[test]
    fn well_separated_batch_has_no_triplet_loss() {
        let embs: Vec<Vec<f64>> = (0..6).map(|i| vec![(i / 2) as f64 * 10.0 + (i % 2) as f64 * 0.01, 0.0]).collect();
        let labels = [0, 0, 1, 1, 2, 2];
        assert_eq!(batch_hard_triplet(&embs, &labels, 1, 0.2, None), 0.0);
    }

    proptest! {
        #[test]
        fn triplet_is_non_negative(seed in 0u64..500, margin in 0.0f64..1.0) {
            let (embs, labels) = random_batch(seed, 10, 3, 8);
            prop_assert!(batch_hard_triplet(&embs, &labels, 2, margin, None) >= 0.0);
            prop_assert!(triplet_loss(&embs[0], &embs[1], &embs[2], 4, margin) >= 0.0);
        }
    }
}
