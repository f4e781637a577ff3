//! Neighbor-graph layout: exact kNN, smooth-kNN bandwidth calibration, fuzzy
//! union of directed memberships, and a sampled attraction/repulsion layout
//! optimization in the target dimension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_rows, euclidean, sq_dist, ReduceError, ReducerParams};

const BISECTION_STEPS: usize = 64;
const CURVE_SAMPLES: usize = 300;
const CURVE_SPAN: f64 = 3.0;
const NEGATIVE_SAMPLE_RATE: usize = 5;
const GRAD_CLIP: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    /// Effective number of neighbors per point.
    pub k: usize,
    pub indices: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

/// Brute-force k nearest neighbors (excluding self); ties go to the lower
/// index. `k` is clamped to `n - 1`.
pub fn knn_graph(x: &[Vec<f64>], k: usize) -> Result<KnnGraph, ReduceError> {
    let n = x.len();
    if n < 2 {
        return Err(ReduceError::TooFewPoints { need: 2, got: n });
    }
    check_rows(x)?;
    let k_eff = k.min(n - 1).max(1);
    if k_eff != k {
        log::info!("knn: k={k} clamped to {k_eff} for {n} points");
    }
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (euclidean(&x[i], &x[j]), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(k_eff);
            cand.into_iter().map(|(d, j)| (j, d)).unzip()
        })
        .collect();
    let (indices, distances) = rows.into_iter().unzip();
    Ok(KnnGraph {
        k: k_eff,
        indices,
        distances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothKnn {
    /// Distance to the nearest neighbor.
    pub rho: f64,
    pub sigma: f64,
    /// Lower end of the bisection bracket.
    pub sigma_min: f64,
}

fn membership_sum(dists: &[f64], rho: f64, sigma: f64) -> f64 {
    dists.iter().map(|d| (-(d - rho).max(0.0) / sigma).exp()).sum()
}

/// Solves `sum_j exp(-max(0, d_ij - rho_i) / sigma_i) = log2(k)` per point by
/// bisection on `[1e-3, 1e3] * mean distance`, clamping to the bracket when
/// the target cannot be reached.
pub fn calibrate_sigmas(distances: &[Vec<f64>], k: usize) -> Vec<SmoothKnn> {
    let target = (k as f64).log2();
    distances
        .iter()
        .map(|dists| {
            let rho = dists.iter().copied().fold(f64::INFINITY, f64::min);
            let rho = if rho.is_finite() { rho } else { 0.0 };
            let mean = if dists.is_empty() {
                0.0
            } else {
                dists.iter().sum::<f64>() / dists.len() as f64
            };
            // all-duplicate neighborhoods have zero spread; keep sigma positive
            let mean = mean.max(1e-12);
            let (mut lo, mut hi) = (1e-3 * mean, 1e3 * mean);
            let sigma_min = lo;
            let sigma = if membership_sum(dists, rho, lo) >= target {
                lo
            } else if membership_sum(dists, rho, hi) <= target {
                hi
            } else {
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if membership_sum(dists, rho, mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            SmoothKnn {
                rho,
                sigma,
                sigma_min,
            }
        })
        .collect()
}

/// Probabilistic t-conorm used to symmetrize directed memberships.
pub fn fuzzy_union(w_ij: f64, w_ji: f64) -> f64 {
    w_ij + w_ji - w_ij * w_ji
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub knn: KnnGraph,
    pub smooth: Vec<SmoothKnn>,
    /// Symmetric edge list: `(i, j, w)` and `(j, i, w)` both present, sorted.
    pub edges: Vec<(usize, usize, f64)>,
}

impl NeighborGraph {
    /// Each undirected edge once, with `i < j`.
    pub fn undirected(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().copied().filter(|(i, j, _)| i < j)
    }
}

pub fn neighbor_graph(x: &[Vec<f64>], n_neighbors: usize) -> Result<NeighborGraph, ReduceError> {
    let knn = knn_graph(x, n_neighbors)?;
    let smooth = calibrate_sigmas(&knn.distances, knn.k);
    let mut directed = std::collections::BTreeMap::new();
    for (i, (idx, dists)) in knn.indices.iter().zip(&knn.distances).enumerate() {
        let s = smooth[i];
        for (&j, &d) in idx.iter().zip(dists) {
            let w = (-(d - s.rho).max(0.0) / s.sigma).exp();
            directed.insert((i, j), w);
        }
    }
    let mut edges = Vec::new();
    for (&(i, j), &w_ij) in &directed {
        let w_ji = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let w = fuzzy_union(w_ij, w_ji).min(1.0);
        if w <= 0.0 {
            continue;
        }
        edges.push((i, j, w));
        if !directed.contains_key(&(j, i)) {
            edges.push((j, i, w));
        }
    }
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(NeighborGraph { knn, smooth, edges })
}

fn curve_grid() -> Vec<f64> {
    (0..CURVE_SAMPLES)
        .map(|i| CURVE_SPAN * i as f64 / (CURVE_SAMPLES - 1) as f64)
        .collect()
}

fn curve_target(d: f64, min_dist: f64) -> f64 {
    if d <= min_dist {
        1.0
    } else {
        (-(d - min_dist)).exp()
    }
}

fn curve(d: f64, a: f64, b: f64) -> f64 {
    if d == 0.0 {
        1.0
    } else {
        1.0 / (1.0 + a * d.powf(2.0 * b))
    }
}

fn curve_sse(grid: &[f64], target: &[f64], a: f64, b: f64) -> f64 {
    grid.iter()
        .zip(target)
        .map(|(&d, &t)| (curve(d, a, b) - t).powi(2))
        .sum()
}

/// Least-squares fit of `1 / (1 + a d^(2b))` to the offset-exponential target
/// on 300 points of `[0, 3]`: a coarse log-grid search followed by
/// Levenberg-Marquardt in `(ln a, ln b)`, which keeps both parameters positive.
pub fn fit_curve(min_dist: f64) -> (f64, f64) {
    let grid = curve_grid();
    let target: Vec<f64> = grid.iter().map(|&d| curve_target(d, min_dist)).collect();

    let mut best = (f64::INFINITY, 0.0, 0.0);
    for ia in 0..=60 {
        let la = -4.0 + 8.0 * ia as f64 / 60.0;
        for ib in 0..=40 {
            let lb = -2.5 + 3.5 * ib as f64 / 40.0;
            let e = curve_sse(&grid, &target, la.exp(), lb.exp());
            if e < best.0 {
                best = (e, la, lb);
            }
        }
    }

    let (mut err, mut la, mut lb) = best;
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let (a, b) = (la.exp(), lb.exp());
        // normal equations for the 2-parameter problem
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (&d, &t) in grid.iter().zip(&target) {
            if d == 0.0 {
                continue;
            }
            let p = d.powf(2.0 * b);
            let denom = 1.0 + a * p;
            let f = 1.0 / denom;
            let r = f - t;
            let df_dla = -(a * p) / (denom * denom);
            let df_dlb = -(a * p * 2.0 * b * d.ln()) / (denom * denom);
            let g = [df_dla, df_dlb];
            for u in 0..2 {
                jtr[u] += g[u] * r;
                for v in 0..2 {
                    jtj[u][v] += g[u] * g[v];
                }
            }
        }
        let m = [
            [jtj[0][0] * (1.0 + lambda), jtj[0][1]],
            [jtj[1][0], jtj[1][1] * (1.0 + lambda)],
        ];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let step = [
            -(m[1][1] * jtr[0] - m[0][1] * jtr[1]) / det,
            -(m[0][0] * jtr[1] - m[1][0] * jtr[0]) / det,
        ];
        let (na, nb) = (la + step[0], lb + step[1]);
        let ne = curve_sse(&grid, &target, na.exp(), nb.exp());
        if ne < err {
            let converged = err - ne < 1e-15 * err.max(1e-300);
            (err, la, lb) = (ne, na, nb);
            lambda = (lambda / 10.0).max(1e-12);
            if converged {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (la.exp(), lb.exp())
}

/// Embeds `x` into `params.out_dim` dimensions.
///
/// The layout starts from seeded uniform noise in `[-10, 10]` and is refined
/// for `n_epochs`: each edge is sampled with frequency proportional to its
/// weight, pulling its endpoints together, and every positive sample is
/// followed by five random negative samples pushing the head away. The
/// learning rate decays linearly from 1 to 0 and every gradient component is
/// clipped to `[-4, 4]`. Output is a pure function of `(x, params)`.
pub fn umap_reduce(x: &[Vec<f64>], params: &ReducerParams) -> Result<Vec<Vec<f64>>, ReduceError> {
    params.validate()?;
    let n = x.len();
    if n < 2 {
        return Err(ReduceError::TooFewPoints { need: 2, got: n });
    }
    let graph = neighbor_graph(x, params.n_neighbors)?;
    let (a, b) = match (params.curve_a, params.curve_b) {
        (Some(a), Some(b)) => (a, b),
        _ => fit_curve(params.min_dist),
    };
    let dim = params.out_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut y: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-10.0..=10.0)).collect())
        .collect();

    let edges: Vec<(usize, usize, f64)> = graph.undirected().collect();
    let w_max = edges.iter().map(|e| e.2).fold(0.0, f64::max);
    let n_epochs = params.n_epochs;
    // edges too weak to be sampled even once over the run are dropped
    let schedule: Vec<(usize, usize, f64)> = edges
        .iter()
        .filter(|e| e.2 / w_max * n_epochs as f64 >= 1.0)
        .map(|&(i, j, w)| (i, j, w_max / w))
        .collect();
    let mut next_sample: Vec<f64> = schedule.iter().map(|e| e.2).collect();

    let mut grad = vec![0.0; dim];
    for epoch in 0..n_epochs {
        let alpha = 1.0 - epoch as f64 / n_epochs as f64;
        for (e, &(i, j, period)) in schedule.iter().enumerate() {
            if next_sample[e] > (epoch + 1) as f64 {
                continue;
            }
            next_sample[e] += period;

            let d2 = sq_dist(&y[i], &y[j]);
            let coef = if d2 > 0.0 {
                -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b))
            } else {
                0.0
            };
            for c in 0..dim {
                grad[c] = (coef * (y[i][c] - y[j][c])).clamp(-GRAD_CLIP, GRAD_CLIP);
            }
            for c in 0..dim {
                y[i][c] += alpha * grad[c];
                y[j][c] -= alpha * grad[c];
            }

            for _ in 0..NEGATIVE_SAMPLE_RATE {
                let k = rng.gen_range(0..n);
                if k == i {
                    continue;
                }
                let d2 = sq_dist(&y[i], &y[k]);
                for c in 0..dim {
                    grad[c] = if d2 > 0.0 {
                        let coef = 2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)));
                        (coef * (y[i][c] - y[k][c])).clamp(-GRAD_CLIP, GRAD_CLIP)
                    } else {
                        GRAD_CLIP
                    };
                }
                for c in 0..dim {
                    y[i][c] += alpha * grad[c];
                }
            }
        }
    }
    Ok(y)
}
