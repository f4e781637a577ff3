use nalgebra::{DMatrix, SymmetricEigen};

use super::{check_rows, ReduceError};

/// Projects mean-centered rows onto the top `out_dim` principal components.
///
/// Components are ordered by decreasing variance, and each is signed so its
/// largest-magnitude loading is positive. Directions without variance are
/// emitted as zero columns.
pub fn pca_reduce(x: &[Vec<f64>], out_dim: usize) -> Result<Vec<Vec<f64>>, ReduceError> {
    let n = x.len();
    if n < 2 {
        return Err(ReduceError::TooFewPoints { need: 2, got: n });
    }
    let d = check_rows(x)?;
    if out_dim == 0 || out_dim > n.min(d) {
        return Err(ReduceError::InvalidParams(format!(
            "out_dim {out_dim} must be in 1..={}",
            n.min(d)
        )));
    }
    let mut m = DMatrix::from_fn(n, d, |i, j| x[i][j]);
    let mean = m.row_mean();
    for mut row in m.row_iter_mut() {
        row -= &mean;
    }
    let cov = (m.transpose() * &m) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e-12 * top.max(1.0);

    let mut basis = DMatrix::zeros(d, out_dim);
    let mut rank = 0;
    for (c, &idx) in order.iter().take(out_dim).enumerate() {
        if eig.eigenvalues[idx] <= tol {
            continue;
        }
        rank += 1;
        let mut v = eig.eigenvectors.column(idx).clone_owned();
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &x)| if x.abs() > best.1.abs() + 1e-12 { (i, x) } else { best });
        if pivot.1 < 0.0 {
            v = -v;
        }
        basis.set_column(c, &v);
    }
    if rank < out_dim {
        log::warn!("pca: data rank {rank} < out_dim {out_dim}; padding with zero components");
    }
    let proj = m * basis;
    Ok(proj.row_iter().map(|r| r.iter().copied().collect()).collect())
}
