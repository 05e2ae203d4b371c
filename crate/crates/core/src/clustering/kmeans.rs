//! Lloyd's algorithm with k-means++ seeding. Fully deterministic for a given
//! (matrix, k, seed): a ChaCha8 stream drives the seeding and every summation
//! runs in fixed row order, so results are reproducible across platforms.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::EmbeddingMatrix;

use super::{dist2, renumber_labels, Algorithm, ClusterCase, ClusteringError};

pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub labels: Vec<i64>,
    /// Per-cluster means of the final assignment, in label order.
    pub centers: Vec<Vec<f64>>,
    /// Inertia recorded after each assignment step; non-increasing.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansRun {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().expect("at least one iteration")
    }
}

pub fn kmeans(m: &EmbeddingMatrix, k: usize, seed: u64) -> Result<ClusterCase, ClusteringError> {
    let run = kmeans_run(m, k, seed)?;
    Ok(ClusterCase {
        dataset: String::new(),
        corpus_size: m.rows(),
        embedding: m.spec.clone(),
        reduction: m.reduction.clone(),
        algorithm: Algorithm::KMeans,
        target_k: k,
        seed: Some(seed),
        n_clusters: k,
        labels: run.labels,
    })
}

pub fn kmeans_run(m: &EmbeddingMatrix, k: usize, seed: u64) -> Result<KMeansRun, ClusteringError> {
    kmeans_run_observed(m, k, seed, |_, _, _| {})
}

/// Like [`kmeans_run`] but invokes `observe(labels, centers, inertia)` after
/// every assignment step, with the centers the assignment used. Tests use the
/// hook to recompute inertia independently.
pub fn kmeans_run_observed<F>(
    m: &EmbeddingMatrix,
    k: usize,
    seed: u64,
    mut observe: F,
) -> Result<KMeansRun, ClusteringError>
where
    F: FnMut(&[i64], &[Vec<f64>], f64),
{
    let n = m.rows();
    if k < 1 || k > n {
        return Err(ClusteringError::KOutOfRange { k, rows: n });
    }
    let d = m.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(m, k, &mut rng);

    let mut labels: Vec<usize> = vec![0; n];
    let mut trace = Vec::new();
    let mut iterations = 0usize;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        // assignment, ties to the lowest center index
        let mut changed = false;
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let row = m.row(i);
            let mut best = 0usize;
            let mut best_d = dist2(row, &centers[0]);
            for (c, center) in centers.iter().enumerate().skip(1) {
                let dd = dist2(row, center);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if labels[i] != best {
                changed = true;
            }
            labels[i] = best;
            counts[best] += 1;
        }

        // empty-cluster repair: reseed the center at the point farthest from
        // it and move that point in, never draining a singleton cluster
        let mut repaired = false;
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut cand: Option<(f64, usize)> = None;
            for i in 0..n {
                if counts[labels[i]] <= 1 {
                    continue;
                }
                let dd = dist2(m.row(i), &centers[c]);
                if cand.map_or(true, |(best, _)| dd > best) {
                    cand = Some((dd, i));
                }
            }
            let (_, pick) = cand.ok_or_else(|| {
                ClusteringError::Internal("no donor point for empty cluster".into())
            })?;
            counts[labels[pick]] -= 1;
            labels[pick] = c;
            counts[c] = 1;
            centers[c] = m.row(pick).to_vec();
            repaired = true;
        }

        let inertia: f64 = (0..n).map(|i| dist2(m.row(i), &centers[labels[i]])).sum();
        observe(
            &labels.iter().map(|&l| l as i64).collect::<Vec<_>>(),
            &centers,
            inertia,
        );
        trace.push(inertia);

        if !changed && !repaired && iterations > 1 {
            break;
        }

        // center update: per-cluster means accumulated in row order
        let mut sums = vec![vec![0.0f64; d]; k];
        for i in 0..n {
            let row = m.row(i);
            let acc = &mut sums[labels[i]];
            for (j, v) in row.iter().enumerate() {
                acc[j] += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for v in &mut sums[c] {
                    *v /= counts[c] as f64;
                }
                centers[c] = std::mem::take(&mut sums[c]);
            }
        }
    }

    // canonical labels: dense, first-appearance order
    let raw: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
    let (canonical, n_clusters) = renumber_labels(&raw);
    if n_clusters != k {
        return Err(ClusteringError::Internal(format!(
            "expected {k} non-empty clusters, got {n_clusters}"
        )));
    }
    let mut counts = vec![0usize; k];
    let mut centers = vec![vec![0.0f64; d]; k];
    for (i, &l) in canonical.iter().enumerate() {
        let c = l as usize;
        counts[c] += 1;
        let row = m.row(i);
        for (j, v) in row.iter().enumerate() {
            centers[c][j] += v;
        }
    }
    for c in 0..k {
        for v in &mut centers[c] {
            *v /= counts[c] as f64;
        }
    }

    Ok(KMeansRun { labels: canonical, centers, inertia_trace: trace, iterations })
}

/// k-means++ seeding: first center uniform, then each next center drawn with
/// probability proportional to squared distance from the nearest chosen one.
fn plus_plus_init(m: &EmbeddingMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = m.rows();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];

    let first = rng.random_range(0..n);
    chosen[first] = true;
    centers.push(m.row(first).to_vec());

    let mut d2: Vec<f64> = (0..n).map(|i| dist2(m.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let r = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut found = None;
            let mut last_positive = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                last_positive = Some(i);
                cum += w;
                if cum > r {
                    found = Some(i);
                    break;
                }
            }
            found.or(last_positive).expect("total > 0 implies a positive weight")
        } else {
            // all remaining points coincide with chosen centers
            (0..n).find(|&i| !chosen[i]).expect("k <= n leaves an unchosen point")
        };
        chosen[pick] = true;
        centers.push(m.row(pick).to_vec());
        let latest = centers.last().expect("just pushed");
        for i in 0..n {
            let dd = dist2(m.row(i), latest);
            if dd < d2[i] {
                d2[i] = dd;
            }
        }
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::ReductionSpec;

    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        let dim = rows[0].len();
        let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        EmbeddingMatrix::new(
            ids,
            dim,
            rows.into_iter().flatten().collect(),
            "m",
            ReductionSpec::none(),
        )
        .unwrap()
    }

    fn two_blobs() -> EmbeddingMatrix {
        matrix(vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ])
    }

    #[test]
    fn two_blob_case_is_exact() {
        let m = two_blobs();
        let run = kmeans_run(&m, 2, 0).unwrap();
        assert_eq!(run.labels[0], run.labels[1]);
        assert_eq!(run.labels[2], run.labels[3]);
        assert_ne!(run.labels[0], run.labels[2]);
        assert_eq!(run.inertia(), 1.0);
        let c0 = &run.centers[run.labels[0] as usize];
        let c1 = &run.centers[run.labels[2] as usize];
        assert_eq!(c0, &vec![0.0, 0.5]);
        assert_eq!(c1, &vec![10.0, 0.5]);
    }

    #[test]
    fn k_equals_rows_gives_zero_inertia() {
        let m = two_blobs();
        let run = kmeans_run(&m, 4, 7).unwrap();
        let mut sorted = run.labels.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert_eq!(run.inertia(), 0.0);
    }

    #[test]
    fn k_out_of_range_rejected() {
        let m = two_blobs();
        assert!(matches!(kmeans_run(&m, 0, 0), Err(ClusteringError::KOutOfRange { .. })));
        assert!(matches!(kmeans_run(&m, 5, 0), Err(ClusteringError::KOutOfRange { .. })));
    }

    #[test]
    fn inertia_trace_non_increasing_with_independent_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random::<f64>() * 20.0, rng.random::<f64>() * 20.0])
            .collect();
        let m = matrix(rows.clone());

        let mut recomputed = Vec::new();
        let run = kmeans_run_observed(&m, 5, 3, |labels, centers, reported| {
            // oracle: recompute inertia from labels and centers from scratch
            let mut acc = 0.0;
            for (i, &l) in labels.iter().enumerate() {
                let c = &centers[l as usize];
                let row = &rows[i];
                acc += row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            assert!((acc - reported).abs() < 1e-9);
            recomputed.push(acc);
        })
        .unwrap();

        assert_eq!(recomputed.len(), run.inertia_trace.len());
        for w in run.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "inertia increased: {} -> {}", w[0], w[1]);
        }
        assert!(run.inertia() <= run.inertia_trace[0]);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> =
            (0..80).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
        let m = matrix(rows);
        let a = kmeans_run(&m, 6, 99).unwrap();
        let b = kmeans_run(&m, 6, 99).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.centers, b.centers);
        assert_eq!(a.inertia_trace, b.inertia_trace);
    }

    #[test]
    fn labels_are_dense_first_appearance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random(), rng.random()]).collect();
        let m = matrix(rows);
        let run = kmeans_run(&m, 4, 5).unwrap();
        let mut seen = Vec::new();
        for &l in &run.labels {
            if !seen.contains(&l) {
                seen.push(l);
            }
        }
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }
}
