//! Rank statistics over cluster features and scores: Kendall tau-b, Spearman,
//! per-case correlation, split aggregation, histograms and rank-gap curves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("correlation undefined: {0}")]
    Undefined(&'static str),
    #[error("invalid histogram range: low {0} must be < high {1}")]
    InvalidRange(f64, f64),
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    match xs.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(StatsError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Kendall tau-b with tie correction, computed in O(n log n) via sort plus
/// merge-count of discordant pairs (Knight's algorithm).
///
/// tau_b = (C - D) / sqrt((n0 - Tx)(n0 - Ty)) where n0 = n(n-1)/2 and
/// Tx, Ty are tied-pair counts in each input.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFew { need: 2, got: n });
    }
    check_finite(x)?;
    check_finite(y)?;

    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let tie_x = tied_pairs(pairs.iter().map(|p| p.0));
    let tie_xy = joint_tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let discordant = count_inversions(&mut ys);
    let mut y_sorted: Vec<f64> = y.to_vec();
    y_sorted.sort_by(f64::total_cmp);
    let tie_y = tied_pairs(y_sorted.iter().copied());

    if n0 == tie_x || n0 == tie_y {
        return Err(StatsError::Undefined("all values tied in one input"));
    }

    // Pairs sorted by (x, y): inversions in y are exactly the discordant
    // pairs. tie_x + tie_y - tie_xy counts the union of tied pairs, so the
    // sum below never underflows.
    let concordant = n0 + tie_xy - tie_x - tie_y - discordant;
    let num = concordant as f64 - discordant as f64;
    let den = (((n0 - tie_x) as f64) * ((n0 - tie_y) as f64)).sqrt();
    Ok(num / den)
}

/// Brute-force O(n^2) pair counting; the reference the fast path is tested against.
pub fn kendall_tau_b_naive(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFew { need: 2, got: n });
    }
    let (mut c, mut d, mut tx, mut ty) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]);
            let dy = y[i].total_cmp(&y[j]);
            match (dx.is_eq(), dy.is_eq()) {
                (true, true) => {}
                (true, false) => tx += 1,
                (false, true) => ty += 1,
                (false, false) => {
                    if (dx.is_lt() && dy.is_lt()) || (dx.is_gt() && dy.is_gt()) {
                        c += 1;
                    } else {
                        d += 1;
                    }
                }
            }
        }
    }
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let joint = n0 - c - d - tx - ty;
    let nx = n0 - tx - joint;
    let ny = n0 - ty - joint;
    if nx == 0 || ny == 0 {
        return Err(StatsError::Undefined("all values tied in one input"));
    }
    Ok((c as f64 - d as f64) / ((nx as f64) * (ny as f64)).sqrt())
}

fn tied_pairs(sorted: impl Iterator<Item = f64>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<f64> = None;
    for v in sorted {
        match prev {
            Some(p) if p.total_cmp(&v).is_eq() => run += 1,
            _ => {
                total += run * (run + 1) / 2;
                run = 0;
            }
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

fn joint_tied_pairs(sorted: &[(f64, f64)]) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    for w in sorted.windows(2) {
        if w[0].0.total_cmp(&w[1].0).is_eq() && w[0].1.total_cmp(&w[1].1).is_eq() {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
    }
    total + run * (run + 1) / 2
}

/// Counts pairs i < j with xs[i] > xs[j] (strict), sorting xs in place.
fn count_inversions(xs: &mut [f64]) -> u64 {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mut buf = vec![0.0; n];
    merge_count(xs, &mut buf)
}

fn merge_count(xs: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = {
        let (lo, hi) = xs.split_at_mut(mid);
        merge_count(lo, &mut buf[..mid]) + merge_count(hi, &mut buf[mid..])
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if xs[i].total_cmp(&xs[j]).is_le() {
            buf[k] = xs[i];
            i += 1;
        } else {
            buf[k] = xs[j];
            inv += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    while i < mid {
        buf[k] = xs[i];
        i += 1;
        k += 1;
    }
    while j < n {
        buf[k] = xs[j];
        j += 1;
        k += 1;
    }
    xs.copy_from_slice(&buf[..n]);
    inv
}

/// Average ranks, 1-based ascending; tied values share the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]].total_cmp(&xs[order[i]]).is_eq() {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rho: Pearson correlation of average-ranked inputs.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFew { need: 2, got: n });
    }
    check_finite(x)?;
    check_finite(y)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Undefined("zero rank variance"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// One rank correlation between a cluster feature and cluster scores,
/// tagged with the coordinates of the clustering case it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub dataset: String,
    pub size: usize,
    pub embedding: String,
    pub reduction: String,
    pub algorithm: String,
    pub n_clusters: usize,
    pub feature: String,
    pub scorer: String,
    pub tau_b: f64,
    pub spearman: f64,
    /// Number of (feature, score) cluster pairs that entered the correlation.
    pub n: usize,
}

/// Computes tau-b and Spearman over joined (feature, score) pairs.
/// The caller joins clusters; this enforces the n >= 3 floor.
pub fn correlate_values(feature_vals: &[f64], score_vals: &[f64]) -> Result<(f64, f64), StatsError> {
    if feature_vals.len() != score_vals.len() {
        return Err(StatsError::LengthMismatch(feature_vals.len(), score_vals.len()));
    }
    if feature_vals.len() < 3 {
        return Err(StatsError::TooFew { need: 3, got: feature_vals.len() });
    }
    let tau = kendall_tau_b(feature_vals, score_vals)?;
    let rho = spearman(feature_vals, score_vals)?;
    Ok((tau, rho))
}

/// Aggregation split used by the report tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Dataset,
    DataSize,
    Algorithm,
    NClustBucket,
    Reduction,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Dataset => "dataset",
            Split::DataSize => "data size",
            Split::Algorithm => "clusters",
            Split::NClustBucket => "n_clust",
            Split::Reduction => "reduction",
        }
    }
}

pub fn n_clust_bucket(n_clusters: usize) -> &'static str {
    if n_clusters < 50 {
        "<50"
    } else if n_clusters <= 70 {
        "50-70"
    } else {
        ">70"
    }
}

/// One aggregate over a group of per-case correlations.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub split: String,
    pub avg: f64,
    /// Population standard deviation over the group.
    pub stdev: f64,
    /// Fraction of strictly positive correlations.
    pub f_pos: f64,
    pub n_cases: usize,
}

/// Groups results by the split key and reduces each group to
/// mean / population stdev / fraction positive / case count.
pub fn aggregate<F>(results: &[CorrelationResult], split: Split, value: F) -> Vec<AggregateRow>
where
    F: Fn(&CorrelationResult) -> f64,
{
    let key_of = |r: &CorrelationResult| -> String {
        match split {
            Split::Dataset => r.dataset.clone(),
            Split::DataSize => r.size.to_string(),
            Split::Algorithm => r.algorithm.clone(),
            Split::NClustBucket => n_clust_bucket(r.n_clusters).to_string(),
            Split::Reduction => r.reduction.clone(),
        }
    };

    // Group order: fixed bucket order for n_clust, numeric for sizes,
    // first appearance otherwise.
    let mut keys: Vec<String> = Vec::new();
    match split {
        Split::NClustBucket => {
            for b in ["<50", "50-70", ">70"] {
                if results.iter().any(|r| n_clust_bucket(r.n_clusters) == b) {
                    keys.push(b.to_string());
                }
            }
        }
        Split::DataSize => {
            let mut sizes: Vec<usize> = results.iter().map(|r| r.size).collect();
            sizes.sort_unstable();
            sizes.dedup();
            keys.extend(sizes.into_iter().map(|s| s.to_string()));
        }
        _ => {
            for r in results {
                let k = key_of(r);
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
        }
    }

    keys.into_iter()
        .map(|k| {
            let vals: Vec<f64> =
                results.iter().filter(|r| key_of(r) == k).map(&value).collect();
            summarize_group(k, &vals)
        })
        .collect()
}

pub(crate) fn summarize_group(split: String, vals: &[f64]) -> AggregateRow {
    let n = vals.len();
    let avg = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>() / n as f64;
    let pos = vals.iter().filter(|&&v| v > 0.0).count();
    AggregateRow {
        split,
        avg,
        stdev: var.sqrt(),
        f_pos: pos as f64 / n as f64,
        n_cases: n,
    }
}

/// Equal-width histogram. Interior boundary values land in the upper bin and
/// the range maximum lands in the last bin; out-of-range values are counted
/// separately in `overflow`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub low: f64,
    pub high: f64,
    pub counts: Vec<u64>,
    pub overflow: u64,
}

impl Histogram {
    pub fn edges(&self) -> Vec<(f64, f64)> {
        let bins = self.counts.len();
        let width = (self.high - self.low) / bins as f64;
        (0..bins)
            .map(|i| (self.low + width * i as f64, self.low + width * (i + 1) as f64))
            .collect()
    }
}

pub fn histogram(values: &[f64], bins: usize, low: f64, high: f64) -> Result<Histogram, StatsError> {
    if bins < 1 {
        return Err(StatsError::NoBins);
    }
    if !(low < high) {
        return Err(StatsError::InvalidRange(low, high));
    }
    let mut counts = vec![0u64; bins];
    let mut overflow = 0u64;
    for &v in values {
        if !(low..=high).contains(&v) {
            overflow += 1;
            continue;
        }
        let idx = ((v - low) / (high - low) * bins as f64).floor() as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    Ok(Histogram { low, high, counts, overflow })
}

/// Accumulated curve of normalized rank gaps between a feature ranking and a
/// score ranking, with the summary statistics reported alongside it.
#[derive(Debug, Clone, Serialize)]
pub struct GapCurve {
    /// Sorted gaps, each |rank_feature - rank_score| / n_clusters * 100.
    pub gaps: Vec<f64>,
    /// Cumulative fraction of clusters at or below each gap.
    pub cumulative: Vec<f64>,
    pub median: f64,
    pub avg: f64,
    pub p97_5: f64,
}

/// Per-cluster normalized rank gaps for one case. Both rankings are taken
/// descending (rank 1 = largest value) with average ranks on ties.
pub fn rank_gaps(feature_vals: &[f64], score_vals: &[f64]) -> Result<Vec<f64>, StatsError> {
    if feature_vals.len() != score_vals.len() {
        return Err(StatsError::LengthMismatch(feature_vals.len(), score_vals.len()));
    }
    let n = feature_vals.len();
    if n < 3 {
        return Err(StatsError::TooFew { need: 3, got: n });
    }
    let desc = |vals: &[f64]| -> Vec<f64> {
        let neg: Vec<f64> = vals.iter().map(|v| -v).collect();
        average_ranks(&neg)
    };
    let rf = desc(feature_vals);
    let rs = desc(score_vals);
    Ok(rf
        .iter()
        .zip(&rs)
        .map(|(a, b)| (a - b).abs() / n as f64 * 100.0)
        .collect())
}

impl GapCurve {
    pub fn from_gaps(mut gaps: Vec<f64>) -> Result<Self, StatsError> {
        if gaps.is_empty() {
            return Err(StatsError::TooFew { need: 1, got: 0 });
        }
        gaps.sort_by(f64::total_cmp);
        let n = gaps.len();
        let cumulative: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
        let median = crate::features::percentile(&gaps, 50.0).expect("nonempty");
        let avg = gaps.iter().sum::<f64>() / n as f64;
        let p97_5 = crate::features::percentile(&gaps, 97.5).expect("nonempty");
        Ok(GapCurve { gaps, cumulative, median, avg, p97_5 })
    }
}

/// Rank-gap curve for one case (Appendix-F style).
pub fn gap_curve(feature_vals: &[f64], score_vals: &[f64]) -> Result<GapCurve, StatsError> {
    GapCurve::from_gaps(rank_gaps(feature_vals, score_vals)?)
}
