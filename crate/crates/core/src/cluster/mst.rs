use rayon::prelude::*;

use super::ClusterError;
use crate::reduce::euclidean;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    /// Lower endpoint index.
    pub a: usize,
    /// Higher endpoint index.
    pub b: usize,
    pub weight: f64,
}

impl MstEdge {
    fn new(u: usize, v: usize, weight: f64) -> Self {
        Self {
            a: u.min(v),
            b: u.max(v),
            weight,
        }
    }

    fn key(&self) -> (f64, usize, usize) {
        (self.weight, self.a, self.b)
    }
}

/// Distance from each point to its `min_samples`-th nearest other point.
pub fn core_distances(x: &[Vec<f64>], min_samples: usize) -> Result<Vec<f64>, ClusterError> {
    let n = x.len();
    if min_samples == 0 || n <= min_samples {
        return Err(ClusterError::TooFewForCore { n, min_samples });
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| euclidean(&x[i], &x[j])).collect();
            let (_, kth, _) = d.select_nth_unstable_by(min_samples - 1, f64::total_cmp);
            *kth
        })
        .collect())
}

pub fn mutual_reachability(d_ab: f64, core_a: f64, core_b: f64) -> f64 {
    d_ab.max(core_a).max(core_b)
}

fn key_less(a: (f64, usize, usize), b: (f64, usize, usize)) -> bool {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).is_lt()
}

/// Prim's algorithm on an implicit complete graph, O(n^2) time and O(n)
/// memory. Among equal weights the edge with the lower (min, max) endpoint
/// pair is taken first.
pub(crate) fn prim(n: usize, weight: impl Fn(usize, usize) -> f64) -> Vec<MstEdge> {
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best: Vec<Option<MstEdge>> = vec![None; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let cand = MstEdge::new(current, v, weight(current, v));
            if best[v].map_or(true, |b| key_less(cand.key(), b.key())) {
                best[v] = Some(cand);
            }
        }
        let (next, edge) = (0..n)
            .filter(|&v| !in_tree[v])
            .map(|v| (v, best[v].expect("candidate set for every outside vertex")))
            .min_by(|x, y| {
                let (kx, ky) = (x.1.key(), y.1.key());
                kx.0.total_cmp(&ky.0).then(kx.1.cmp(&ky.1)).then(kx.2.cmp(&ky.2))
            })
            .expect("at least one vertex outside the tree");
        in_tree[next] = true;
        edges.push(edge);
        current = next;
    }
    edges
}

/// Minimum spanning tree of a dense symmetric weight matrix.
pub fn minimum_spanning_tree(weights: &[Vec<f64>]) -> Result<Vec<MstEdge>, ClusterError> {
    let n = weights.len();
    if n < 2 {
        return Err(ClusterError::TooFewPoints(n));
    }
    if weights.iter().any(|r| r.len() != n) {
        return Err(ClusterError::NotSquare);
    }
    if weights.iter().flatten().any(|w| !w.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    Ok(prim(n, |i, j| weights[i][j]))
}
