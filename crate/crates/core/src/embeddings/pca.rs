//! Deterministic PCA reduction: covariance eigendecomposition via cyclic
//! Jacobi rotations with a fixed sign convention. Scalar arithmetic in a
//! fixed order keeps results bit-identical across platforms.

use super::{EmbeddingError, EmbeddingMatrix, ReductionSpec};

/// Relative eigenvalue threshold below which a component counts as null.
const RANK_REL_TOL: f64 = 1e-10;

/// Projects rows onto the `out_dim` leading principal directions of the
/// centered data. Eigenvalues are sorted descending and each component is
/// oriented so its entry of largest magnitude is positive.
pub fn reduce_pca(m: &EmbeddingMatrix, out_dim: usize) -> Result<EmbeddingMatrix, EmbeddingError> {
    let n = m.rows();
    let d = m.dim();
    if out_dim < 2 {
        return Err(EmbeddingError::OutDimTooSmall(out_dim));
    }
    if out_dim > d {
        return Err(EmbeddingError::OutDimTooLarge { out_dim, dim: d });
    }
    if n < out_dim {
        return Err(EmbeddingError::TooFewRows { rows: n, out_dim });
    }

    let mut means = vec![0.0f64; d];
    for r in 0..n {
        let row = m.row(r);
        for (j, v) in row.iter().enumerate() {
            means[j] += v;
        }
    }
    for v in &mut means {
        *v /= n as f64;
    }

    // Sample covariance of the centered rows.
    let mut cov = vec![vec![0.0f64; d]; d];
    for r in 0..n {
        let row = m.row(r);
        for i in 0..d {
            let bi = row[i] - means[i];
            for j in i..d {
                cov[i][j] += bi * (row[j] - means[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= denom;
            cov[j][i] = cov[i][j];
        }
    }

    let (eigvals, eigvecs) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigvals[b].total_cmp(&eigvals[a]).then(a.cmp(&b)));

    let max_eig = eigvals[order[0]].max(0.0);
    let tol = max_eig * RANK_REL_TOL;
    let rank = order.iter().filter(|&&i| eigvals[i] > tol).count();
    if rank < out_dim {
        return Err(EmbeddingError::RankDeficient { attained: rank, requested: out_dim });
    }

    // Column k of `components` is the k-th principal direction.
    let mut components = vec![vec![0.0f64; out_dim]; d];
    for (k, &src) in order.iter().take(out_dim).enumerate() {
        let mut best = 0usize;
        for i in 1..d {
            if eigvecs[i][src].abs() > eigvecs[best][src].abs() {
                best = i;
            }
        }
        let flip = eigvecs[best][src] < 0.0;
        for i in 0..d {
            components[i][k] = if flip { -eigvecs[i][src] } else { eigvecs[i][src] };
        }
    }

    let mut data = Vec::with_capacity(n * out_dim);
    for r in 0..n {
        let row = m.row(r);
        for k in 0..out_dim {
            let mut acc = 0.0f64;
            for j in 0..d {
                acc += (row[j] - means[j]) * components[j][k];
            }
            data.push(acc);
        }
    }

    EmbeddingMatrix::new(
        m.ids().to_vec(),
        out_dim,
        data,
        m.spec.model.clone(),
        ReductionSpec::pca(out_dim),
    )
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvectors-as-columns), unsorted.
pub(crate) fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0f64; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    if d < 2 {
        return (m.iter().enumerate().map(|(i, r)| r[i]).collect(), v);
    }

    let norm: f64 = a
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    let eps = if norm > 0.0 { norm * 1e-14 } else { f64::MIN_POSITIVE };

    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..d {
            for j in i + 1..d {
                off += m[i][j] * m[i][j];
            }
        }
        if off.sqrt() <= eps {
            break;
        }
        for p in 0..d - 1 {
            for q in p + 1..d {
                let apq = m[p][q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rotate rows/cols p and q
                for k in 0..d {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let eigvals: Vec<f64> = (0..d).map(|i| m[i][i]).collect();
    (eigvals, v)
}
