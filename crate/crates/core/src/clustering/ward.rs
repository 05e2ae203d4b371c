//! Agglomerative clustering under the Ward criterion. Each step merges the
//! globally cheapest pair (ties broken by the smallest (i, j) slot pair) and
//! updates the stored pair costs via the Lance-Williams recurrence. Costs are
//! kept as squared merge distances; reported heights are their square roots,
//! non-decreasing because Ward linkage is reducible.

use crate::embeddings::EmbeddingMatrix;

use super::{dist2, Algorithm, ClusterCase, ClusteringError};

#[derive(Debug, Clone)]
pub struct WardRun {
    pub labels: Vec<i64>,
    /// Merge heights in merge order.
    pub heights: Vec<f64>,
}

pub fn ward(m: &EmbeddingMatrix, k: usize) -> Result<ClusterCase, ClusteringError> {
    let run = ward_run(m, k)?;
    Ok(ClusterCase {
        dataset: String::new(),
        corpus_size: m.rows(),
        embedding: m.spec.clone(),
        reduction: m.reduction.clone(),
        algorithm: Algorithm::Ward,
        target_k: k,
        seed: None,
        n_clusters: k,
        labels: run.labels,
    })
}

struct Condensed {
    n: usize,
    w: Vec<f64>,
}

impl Condensed {
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        if i < j {
            self.w[self.idx(i, j)]
        } else {
            self.w[self.idx(j, i)]
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let at = if i < j { self.idx(i, j) } else { self.idx(j, i) };
        self.w[at] = v;
    }
}

pub fn ward_run(m: &EmbeddingMatrix, k: usize) -> Result<WardRun, ClusteringError> {
    let n = m.rows();
    if k < 1 || k > n {
        return Err(ClusteringError::KOutOfRange { k, rows: n });
    }

    // initial pair costs: squared Euclidean distances between singletons
    let mut w = Condensed { n, w: vec![0.0; n * (n - 1) / 2] };
    for i in 0..n {
        for j in i + 1..n {
            let at = w.idx(i, j);
            w.w[at] = dist2(m.row(i), m.row(j));
        }
    }

    let mut active = vec![true; n];
    let mut sizes = vec![1.0f64; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    // nn[i] = (cost, j) minimizing over active j > i, smallest j on ties
    let mut nn: Vec<Option<(f64, usize)>> = vec![None; n];
    for i in 0..n {
        nn[i] = scan_nn(&w, &active, i);
    }

    let mut heights = Vec::with_capacity(n - k);
    for _ in 0..n - k {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some((cost, _)) = nn[i] {
                if best.map_or(true, |(bc, _)| cost < bc) {
                    best = Some((cost, i));
                }
            }
        }
        let (cost, i) = best.ok_or_else(|| {
            ClusteringError::Internal("no mergeable pair remaining".into())
        })?;
        let j = nn[i].expect("best candidate has a neighbor").1;

        heights.push(cost.max(0.0).sqrt());

        // Lance-Williams update of costs to every other active cluster
        let (ni, nj) = (sizes[i], sizes[j]);
        let wij = w.get(i, j);
        for l in 0..n {
            if !active[l] || l == i || l == j {
                continue;
            }
            let nl = sizes[l];
            let updated =
                ((ni + nl) * w.get(i, l) + (nj + nl) * w.get(j, l) - nl * wij) / (ni + nj + nl);
            w.set(i, l, updated);
        }

        active[j] = false;
        sizes[i] += sizes[j];
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        nn[j] = None;

        // refresh invalidated neighbor entries
        for l in 0..n {
            if !active[l] || l == i {
                continue;
            }
            match nn[l] {
                Some((_, t)) if t == i || t == j => {
                    nn[l] = scan_nn(&w, &active, l);
                }
                _ if l < i => {
                    let cand = w.get(l, i);
                    let better = match nn[l] {
                        Some((c, t)) => cand < c || (cand == c && i < t),
                        None => true,
                    };
                    if better {
                        nn[l] = Some((cand, i));
                    }
                }
                _ => {}
            }
        }
        nn[i] = scan_nn(&w, &active, i);
    }

    // labels: active slots ascending = first-appearance order of min row index
    let mut labels = vec![0i64; n];
    let mut next = 0i64;
    for slot in 0..n {
        if active[slot] {
            for &row in &members[slot] {
                labels[row] = next;
            }
            next += 1;
        }
    }
    Ok(WardRun { labels, heights })
}

fn scan_nn(w: &Condensed, active: &[bool], i: usize) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for j in i + 1..w.n {
        if !active[j] {
            continue;
        }
        let c = w.get(i, j);
        if best.map_or(true, |(bc, _)| c < bc) {
            best = Some((c, j));
        }
    }
    best
}

/// Reference Ward implementation: recomputes every pairwise merge cost from
/// scratch (centroid formula) at every step. O(n^3); used as the oracle the
/// Lance-Williams path is checked against.
pub fn ward_naive(rows: &[Vec<f64>], k: usize) -> Result<Vec<i64>, ClusteringError> {
    let n = rows.len();
    if k < 1 || k > n {
        return Err(ClusteringError::KOutOfRange { k, rows: n });
    }
    let mut clusters: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();

    let centroid = |members: &[usize]| -> Vec<f64> {
        let d = rows[0].len();
        let mut c = vec![0.0; d];
        for &r in members {
            for (j, v) in rows[r].iter().enumerate() {
                c[j] += v;
            }
        }
        for v in &mut c {
            *v /= members.len() as f64;
        }
        c
    };

    for _ in 0..n - k {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            let Some(a) = &clusters[i] else { continue };
            let ca = centroid(a);
            for j in i + 1..n {
                let Some(b) = &clusters[j] else { continue };
                let cb = centroid(b);
                let (na, nb) = (a.len() as f64, b.len() as f64);
                let cost = 2.0 * na * nb / (na + nb) * dist2(&ca, &cb);
                if best.map_or(true, |(bc, bi, bj)| {
                    cost < bc || (cost == bc && (i, j) < (bi, bj))
                }) {
                    best = Some((cost, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("more clusters than k remain");
        let b = clusters[j].take().expect("cluster j active");
        clusters[i].as_mut().expect("cluster i active").extend(b);
    }

    let mut labels = vec![0i64; n];
    let mut next = 0i64;
    for slot in clusters.iter().flatten() {
        for &row in slot {
            labels[row] = next;
        }
        next += 1;
    }
    Ok(labels)
}
