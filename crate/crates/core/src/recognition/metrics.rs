use alloc::string::String;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::error::{invalid, shape_err, Result};

/// Part-based embedding of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    /// Flat `[parts, dim]`.
    pub parts: Vec<f32>,
    pub num_parts: usize,
    pub label: u32,
    pub seq: u32,
    pub view: String,
}

impl EmbeddingSet {
    pub fn dim(&self) -> usize {
        self.parts.len() / self.num_parts.max(1)
    }

    pub fn part(&self, p: usize) -> &[f32] {
        let d = self.dim();
        &self.parts[p * d..(p + 1) * d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalResult {
    pub rank1: f64,
    pub rank5: f64,
    pub map: f64,
    pub minp: f64,
    pub excluded_probes: usize,
}

/// Sum over parts of the per-part Euclidean distance.
pub fn part_distance(a: &EmbeddingSet, b: &EmbeddingSet) -> f64 {
    (0..a.num_parts)
        .map(|p| {
            a.part(p)
                .iter()
                .zip(b.part(p))
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum()
}

/// Gallery entries for one probe after exclusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub label: u32,
    pub seq: u32,
}

/// Metrics from a precomputed `[probes, gallery]` distance matrix.
///
/// Gallery entries sharing both label and sequence with the probe are
/// dropped. Ranking is ascending by distance, ties broken by gallery index.
/// Probes with no true match left in the gallery are excluded and counted.
pub fn retrieval_from_distances(dist: &[f64], probes: &[Candidate], gallery: &[Candidate]) -> Result<RetrievalResult> {
    if gallery.is_empty() {
        return Err(invalid!("gallery is empty"));
    }
    if dist.len() != probes.len() * gallery.len() {
        return Err(shape_err!("distance matrix has {} entries for {}x{}", dist.len(), probes.len(), gallery.len()));
    }
    let mut sums = [0.0f64; 4];
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    for (i, probe) in probes.iter().enumerate() {
        let row = &dist[i * gallery.len()..(i + 1) * gallery.len()];
        let mut order: Vec<usize> = (0..gallery.len()).filter(|&j| gallery[j] != *probe).collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let hits: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(_, &j)| gallery[j].label == probe.label)
            .map(|(rank, _)| rank + 1)
            .collect();
        let Some(&last) = hits.last() else {
            excluded += 1;
            continue;
        };
        evaluated += 1;
        let first = hits[0];
        sums[0] += f64::from(u8::from(first == 1));
        sums[1] += f64::from(u8::from(first <= 5));
        let ap: f64 = hits.iter().enumerate().map(|(k, &r)| (k + 1) as f64 / r as f64).sum::<f64>() / hits.len() as f64;
        sums[2] += ap;
        sums[3] += hits.len() as f64 / last as f64;
    }
    if evaluated == 0 {
        return Err(invalid!("no probe identity occurs in the gallery"));
    }
    let n = evaluated as f64;
    Ok(RetrievalResult { rank1: sums[0] / n, rank5: sums[1] / n, map: sums[2] / n, minp: sums[3] / n, excluded_probes: excluded })
}

pub fn evaluate_retrieval(gallery: &[EmbeddingSet], probe: &[EmbeddingSet]) -> Result<RetrievalResult> {
    if let Some(bad) = gallery.iter().chain(probe).find(|e| e.parts.iter().any(|v| !v.is_finite())) {
        return Err(invalid!("embedding of identity {} sequence {} is not finite", bad.label, bad.seq));
    }
    let shape = gallery.first().map(|g| (g.num_parts, g.parts.len()));
    if gallery.iter().chain(probe).any(|e| Some((e.num_parts, e.parts.len())) != shape) {
        return Err(shape_err!("embeddings differ in part layout"));
    }
    let mut dist = Vec::with_capacity(probe.len() * gallery.len());
    for p in probe {
        dist.extend(gallery.iter().map(|g| part_distance(p, g)));
    }
    let cand = |e: &EmbeddingSet| Candidate { label: e.label, seq: e.seq };
    let probes: Vec<Candidate> = probe.iter().map(cand).collect();
    let gal: Vec<Candidate> = gallery.iter().map(cand).collect();
    retrieval_from_distances(&dist, &probes, &gal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn emb(label: u32, seq: u32, v: &[f32]) -> EmbeddingSet {
        EmbeddingSet { parts: v.to_vec(), num_parts: 1, label, seq, view: String::new() }
    }

    #[test]
    fn self_matches_are_skipped() {
        let g: Vec<_> = (0..4).flat_map(|i| [emb(i, 0, &[i as f32 * 10.0]), emb(i, 1, &[i as f32 * 10.0 + 1.0])]).collect();
        let r = evaluate_retrieval(&g, &g).unwrap();
        assert_eq!(r.rank1, 1.0);
        assert_eq!(r.map, 1.0);
        assert_eq!(r.excluded_probes, 0);
    }

    #[test]
    fn ties_resolve_to_lower_gallery_index() {
        let g = vec![emb(7, 0, &[1.0]), emb(3, 0, &[-1.0])];
        let p = vec![emb(3, 1, &[0.0])];
        let r = evaluate_retrieval(&g, &p).unwrap();
        assert_eq!(r.rank1, 0.0);
        assert_eq!(r.map, 0.5);
        assert_eq!(r.minp, 0.5);
        let p = vec![emb(7, 1, &[0.0])];
        assert_eq!(evaluate_retrieval(&g, &p).unwrap().rank1, 1.0);
    }

    #[test]
    fn absent_identities_are_counted() {
        let g = vec![emb(1, 0, &[0.0])];
        let p = vec![emb(1, 1, &[0.1]), emb(2, 0, &[0.0])];
        let r = evaluate_retrieval(&g, &p).unwrap();
        assert_eq!(r.excluded_probes, 1);
        assert_eq!(r.rank1, 1.0);
        assert!(evaluate_retrieval(&g, &p[1..]).is_err());
        assert!(evaluate_retrieval(&[], &p).is_err());
    }

    #[test]
    fn hand_computed_precision_and_inverse_negative_penalty() {
        // Ranked labels: 1 0 1 0 0 1 for a probe of label 1.
        let dist = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let labels = [1, 0, 1, 0, 0, 1];
        let g: Vec<Candidate> = labels.iter().enumerate().map(|(i, &l)| Candidate { label: l, seq: 10 + i as u32 }).collect();
        let r = retrieval_from_distances(&dist, &[Candidate { label: 1, seq: 0 }], &g).unwrap();
        assert!((r.map - (1.0 + 2.0 / 3.0 + 3.0 / 6.0) / 3.0).abs() < 1e-15);
        assert!((r.minp - 0.5).abs() < 1e-15);
        assert_eq!((r.rank1, r.rank5), (1.0, 1.0));
    }

    proptest! {
        #[test]
        fn metrics_are_ordered_and_bounded(dist in proptest::collection::vec(0.0f64..1.0, 40), labels in proptest::collection::vec(0u32..4, 10)) {
            let g: Vec<Candidate> = labels.iter().enumerate().map(|(i, &l)| Candidate { label: l, seq: i as u32 }).collect();
            let p: Vec<Candidate> = (0..4).map(|l| Candidate { label: l, seq: 99 }).collect();
            if let Ok(r) = retrieval_from_distances(&dist, &p, &g) {
                prop_assert!(r.rank1 <= r.rank5);
                for v in [r.rank1, r.rank5, r.map, r.minp] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
