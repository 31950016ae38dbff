//! Diversity scoring for ring membership.
//!
//! The polytope spanned by a ring's coordinate tuples is scored by its log
//! volume: half the log-determinant of the Gram matrix of the edge vectors
//! `t_i − t_0`. When any candidate set in a comparison is rank deficient the
//! whole comparison falls back to the sum of pairwise Euclidean distances, so
//! scores within one round always share a scale.

use nalgebra::DMatrix;

use super::RingMember;

/// Relative pivot threshold below which the Gram matrix counts as singular.
const RANK_TOL: f64 = 1e-10;

/// Log volume of the parallelotope spanned by `points[i] − points[0]`.
/// `None` when the points are affinely dependent; `Some(0.0)` for fewer
/// than two points.
pub fn log_volume(points: &[&[f64]]) -> Option<f64> {
    if points.len() < 2 {
        return Some(0.0);
    }
    let base = points[0];
    let dim = base.len();
    let m = points.len() - 1;
    if m > dim {
        return None;
    }
    let edges = DMatrix::from_fn(m, dim, |i, j| points[i + 1][j] - base[j]);
    let gram = &edges * edges.transpose();
    let scale = gram.diagonal().max();
    if !(scale > 0.0) {
        return None;
    }
    let chol = gram.clone().cholesky()?;
    let l = chol.l();
    let mut logdet = 0.0;
    for i in 0..m {
        let pivot = l[(i, i)] * l[(i, i)];
        if !(pivot > RANK_TOL * scale) {
            return None;
        }
        logdet += pivot.ln();
    }
    Some(0.5 * logdet)
}

pub fn pairwise_spread(points: &[&[f64]]) -> f64 {
    let mut total = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            total += a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
        }
    }
    total
}

/// Score of the set `active` (indices into `tuples`).
pub fn set_proxy(tuples: &[Vec<f64>], active: &[usize]) -> f64 {
    let pts: Vec<&[f64]> = active.iter().map(|&i| tuples[i].as_slice()).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    log_volume(&pts).unwrap_or_else(|| pairwise_spread(&pts))
}

/// For every position `p` in `active`, the score of `active` without `p`.
pub fn exclusion_scores(tuples: &[Vec<f64>], active: &[usize]) -> Vec<f64> {
    let n = active.len();
    if n <= 2 {
        return vec![0.0; n];
    }
    let without = |p: usize| -> Vec<&[f64]> {
        active
            .iter()
            .enumerate()
            .filter(|(q, _)| *q != p)
            .map(|(_, &i)| tuples[i].as_slice())
            .collect()
    };
    let volumes: Vec<Option<f64>> = (0..n).map(|p| log_volume(&without(p))).collect();
    if volumes.iter().all(Option::is_some) {
        volumes.into_iter().map(Option::unwrap).collect()
    } else {
        (0..n).map(|p| pairwise_spread(&without(p))).collect()
    }
}

/// Score retained after removing member `exclude` from the full matrix.
/// A larger value means more diversity survives the removal.
pub fn hypervolume_proxy(tuples: &[Vec<f64>], exclude: usize) -> f64 {
    if tuples.len() < 2 {
        return 0.0;
    }
    let active: Vec<usize> = (0..tuples.len()).collect();
    exclusion_scores(tuples, &active)[exclude]
}

/// Splits a pooled ring into `k` primary members and the rest.
///
/// Repeatedly drops the least valuable member, the one whose removal leaves
/// the highest score, breaking ties by lowest node id. Secondary members are
/// returned most valuable first (reverse removal order).
pub fn reassess_ring(members: &[RingMember], k: usize) -> (Vec<RingMember>, Vec<RingMember>) {
    if members.len() <= k {
        return (members.to_vec(), Vec::new());
    }
    let tuples: Vec<Vec<f64>> = members.iter().map(|m| m.coordinate_tuple.clone()).collect();
    let mut active: Vec<usize> = (0..members.len()).collect();
    let mut removed = Vec::new();
    while active.len() > k {
        let scores = exclusion_scores(&tuples, &active);
        let victim = (0..active.len())
            .max_by(|&a, &b| {
                scores[a]
                    .total_cmp(&scores[b])
                    // max_by keeps the last maximum, so prefer the lower id as "greater"
                    .then(members[active[b]].node.cmp(&members[active[a]].node))
            })
            .expect("non-empty");
        removed.push(active.remove(victim));
    }
    let primary = active.iter().map(|&i| members[i].clone()).collect();
    let secondary = removed.iter().rev().map(|&i| members[i].clone()).collect();
    (primary, secondary)
}
