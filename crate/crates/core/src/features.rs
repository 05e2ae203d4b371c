//! Cluster-geometry features: centroids, inter-center distance pools,
//! percentile distances D_p, and the ranking features built from them
//! (the d90_50 difference, its percentile variants, the 2*d90-d50-d20 combo
//! and the average-anchored variant).

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

use crate::clustering::ClusterCase;
use crate::embeddings::EmbeddingMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("empty value pool")]
    EmptyPool,
    #[error("percentile {0} outside [0, 100]")]
    PercentileOutOfRange(f64),
    #[error("need at least 2 clusters for distance pools, got {0}")]
    InsufficientClusters(usize),
    #[error("unknown feature variant {0:?}")]
    UnknownVariant(String),
    #[error("labels length {labels} does not match {rows} matrix rows")]
    LabelsMismatch { labels: usize, rows: usize },
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("malformed feature table: {0}")]
    MalformedTable(String),
    #[error("I/O error: {0}")]
    Io(String),
}

/// Linear-interpolation percentile: rank r = (p/100)(n-1) over the sorted
/// values, interpolating between the bracketing order statistics.
pub fn percentile(values: &[f64], p: f64) -> Result<f64, FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::EmptyPool);
    }
    if !(0.0..=100.0).contains(&p) || !p.is_finite() {
        return Err(FeatureError::PercentileOutOfRange(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let r = p / 100.0 * (n - 1) as f64;
    let lo = r.floor() as usize;
    if lo + 1 >= n {
        return Ok(sorted[n - 1]);
    }
    Ok(sorted[lo] + (r - lo as f64) * (sorted[lo + 1] - sorted[lo]))
}

/// Per-cluster centroids with the size-3 eligibility flags.
#[derive(Debug, Clone)]
pub struct ClusterGeometry {
    pub centers: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    pub eligible: Vec<bool>,
}

impl ClusterGeometry {
    pub fn n_clusters(&self) -> usize {
        self.centers.len()
    }
}

pub const MIN_ELIGIBLE_SIZE: usize = 3;

/// Centroids of the non-noise clusters, summed in fixed row order.
pub fn centers(m: &EmbeddingMatrix, case: &ClusterCase) -> Result<ClusterGeometry, FeatureError> {
    if case.labels.len() != m.rows() {
        return Err(FeatureError::LabelsMismatch { labels: case.labels.len(), rows: m.rows() });
    }
    let d = m.dim();
    let k = case.n_clusters;
    let mut sums = vec![vec![0.0f64; d]; k];
    let mut sizes = vec![0usize; k];
    for (row, &label) in case.labels.iter().enumerate() {
        if label < 0 {
            continue;
        }
        let c = label as usize;
        sizes[c] += 1;
        let values = m.row(row);
        let acc = &mut sums[c];
        for (j, v) in values.iter().enumerate() {
            acc[j] += v;
        }
    }
    for (c, &size) in sizes.iter().enumerate() {
        if size == 0 {
            return Err(FeatureError::EmptyCluster(c));
        }
        for v in &mut sums[c] {
            *v /= size as f64;
        }
    }
    let eligible = sizes.iter().map(|&s| s >= MIN_ELIGIBLE_SIZE).collect();
    Ok(ClusterGeometry { centers: sums, sizes, eligible })
}

/// Euclidean distances from one cluster's center to every other center,
/// ineligible clusters included.
pub fn distance_pool(g: &ClusterGeometry, cluster_id: usize) -> Result<Vec<f64>, FeatureError> {
    let k = g.n_clusters();
    if k < 2 {
        return Err(FeatureError::InsufficientClusters(k));
    }
    let own = &g.centers[cluster_id];
    let mut pool = Vec::with_capacity(k - 1);
    for (c, center) in g.centers.iter().enumerate() {
        if c == cluster_id {
            continue;
        }
        let mut acc = 0.0;
        for (a, b) in own.iter().zip(center) {
            let d = a - b;
            acc += d * d;
        }
        pool.push(acc.sqrt());
    }
    Ok(pool)
}

/// The headline feature D90 - D50 of a distance pool.
pub fn feature_d90_50(pool: &[f64]) -> Result<f64, FeatureError> {
    Ok(percentile(pool, 90.0)? - percentile(pool, 50.0)?)
}

/// Feature selector: the d90_50 difference, its D90 - Dp variants, the
/// 2*D90 - D50 - D20 combination, the average-anchored A - D50, and the
/// standalone D90 / -D50 components used for decomposition tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// D90 - Dp. p = 50 is the default feature.
    D90MinusP(u32),
    /// 2*D90 - D50 - D20.
    Combo,
    /// mean(pool) - D50.
    AvgMinusD50,
    /// D90 alone.
    D90,
    /// -D50 alone.
    NegD50,
}

/// Variant percentiles the D90 - Dp family supports.
pub const VARIANT_PS: &[u32] = &[10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65];

impl FeatureKind {
    pub fn parse(name: &str) -> Result<FeatureKind, FeatureError> {
        match name {
            "d90_50" => Ok(FeatureKind::D90MinusP(50)),
            "combo" => Ok(FeatureKind::Combo),
            "a_minus_d50" => Ok(FeatureKind::AvgMinusD50),
            "d90" => Ok(FeatureKind::D90),
            "neg_d50" => Ok(FeatureKind::NegD50),
            other => {
                if let Some(p) = other.strip_prefix("d90_minus_") {
                    if let Ok(p) = p.parse::<u32>() {
                        if VARIANT_PS.contains(&p) {
                            return Ok(FeatureKind::D90MinusP(p));
                        }
                    }
                }
                Err(FeatureError::UnknownVariant(other.to_string()))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            FeatureKind::D90MinusP(50) => "d90_50".into(),
            FeatureKind::D90MinusP(p) => format!("d90_minus_{p}"),
            FeatureKind::Combo => "combo".into(),
            FeatureKind::AvgMinusD50 => "a_minus_d50".into(),
            FeatureKind::D90 => "d90".into(),
            FeatureKind::NegD50 => "neg_d50".into(),
        }
    }
}

/// Evaluates a feature variant directly on a distance pool.
pub fn feature_variant(pool: &[f64], kind: FeatureKind) -> Result<f64, FeatureError> {
    match kind {
        FeatureKind::D90MinusP(p) => {
            if p != 50 && !VARIANT_PS.contains(&p) {
                return Err(FeatureError::UnknownVariant(format!("d90_minus_{p}")));
            }
            Ok(percentile(pool, 90.0)? - percentile(pool, p as f64)?)
        }
        FeatureKind::Combo => {
            Ok(2.0 * percentile(pool, 90.0)? - percentile(pool, 50.0)? - percentile(pool, 20.0)?)
        }
        FeatureKind::AvgMinusD50 => {
            if pool.is_empty() {
                return Err(FeatureError::EmptyPool);
            }
            let mean = pool.iter().sum::<f64>() / pool.len() as f64;
            Ok(mean - percentile(pool, 50.0)?)
        }
        FeatureKind::D90 => percentile(pool, 90.0),
        FeatureKind::NegD50 => Ok(-percentile(pool, 50.0)?),
    }
}

/// Percentile grid exported per cluster: 10, 15, ..., 90.
pub const GRID_PS: &[u32] = &[10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80, 85, 90];

/// One eligible cluster's distance percentiles and derived features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub cluster_id: usize,
    pub size: usize,
    /// D_p for p in [`GRID_PS`].
    pub percentiles: Vec<f64>,
    pub avg_dist: f64,
    pub d90_50: f64,
    pub combo: f64,
    pub a_minus_d50: f64,
}

impl FeatureRow {
    pub fn d(&self, p: u32) -> Option<f64> {
        GRID_PS.iter().position(|&g| g == p).map(|i| self.percentiles[i])
    }

    /// Feature value for any kind, derived from the stored grid.
    pub fn value(&self, kind: FeatureKind) -> Option<f64> {
        let d90 = self.d(90)?;
        match kind {
            FeatureKind::D90MinusP(p) => Some(d90 - self.d(p)?),
            FeatureKind::Combo => Some(self.combo),
            FeatureKind::AvgMinusD50 => Some(self.a_minus_d50),
            FeatureKind::D90 => Some(d90),
            FeatureKind::NegD50 => Some(-self.d(50)?),
        }
    }
}

/// Feature rows for every eligible cluster of the case, in cluster-id order.
/// Ineligible clusters stay in the distance pools but get no row.
pub fn feature_table(m: &EmbeddingMatrix, case: &ClusterCase) -> Result<Vec<FeatureRow>, FeatureError> {
    let g = centers(m, case)?;
    if g.n_clusters() < 2 {
        return Err(FeatureError::InsufficientClusters(g.n_clusters()));
    }
    let mut rows = Vec::new();
    for c in 0..g.n_clusters() {
        if !g.eligible[c] {
            continue;
        }
        let pool = distance_pool(&g, c)?;
        let percentiles: Vec<f64> = GRID_PS
            .iter()
            .map(|&p| percentile(&pool, p as f64))
            .collect::<Result<_, _>>()?;
        let avg_dist = pool.iter().sum::<f64>() / pool.len() as f64;
        let d90 = percentiles[GRID_PS.len() - 1];
        let d50 = percentiles[8];
        let d20 = percentiles[2];
        rows.push(FeatureRow {
            cluster_id: c,
            size: g.sizes[c],
            percentiles,
            avg_dist,
            d90_50: d90 - d50,
            combo: 2.0 * d90 - d50 - d20,
            a_minus_d50: avg_dist - d50,
        });
    }
    Ok(rows)
}

fn csv_header() -> String {
    let mut cols = vec!["cluster_id".to_string(), "size".to_string()];
    cols.extend(GRID_PS.iter().map(|p| format!("d{p}")));
    cols.extend(["avg_dist", "d90_50", "combo", "a_minus_d50"].map(String::from));
    cols.join(",")
}

/// Writes a feature table in the export CSV layout. Values are printed
/// shortest-round-trip so a re-read reproduces them exactly.
pub fn write_feature_table(rows: &[FeatureRow], path: &Path) -> Result<(), FeatureError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| FeatureError::Io(e.to_string()))?;
    }
    let mut f = File::create(path).map_err(|e| FeatureError::Io(e.to_string()))?;
    let mut out = String::new();
    out.push_str(&csv_header());
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{}", r.cluster_id, r.size));
        for v in &r.percentiles {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{},{},{}\n", r.avg_dist, r.d90_50, r.combo, r.a_minus_d50));
    }
    f.write_all(out.as_bytes()).map_err(|e| FeatureError::Io(e.to_string()))?;
    Ok(())
}

pub fn read_feature_table(path: &Path) -> Result<Vec<FeatureRow>, FeatureError> {
    let f = File::open(path).map_err(|e| FeatureError::Io(e.to_string()))?;
    let mut lines = BufReader::new(f).lines();
    let header = lines
        .next()
        .ok_or_else(|| FeatureError::MalformedTable("empty file".into()))?
        .map_err(|e| FeatureError::Io(e.to_string()))?;
    if header != csv_header() {
        return Err(FeatureError::MalformedTable(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| FeatureError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let want = 2 + GRID_PS.len() + 4;
        if parts.len() != want {
            return Err(FeatureError::MalformedTable(format!(
                "line {}: {} columns, expected {want}",
                i + 2,
                parts.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, FeatureError> {
            s.parse::<f64>()
                .map_err(|_| FeatureError::MalformedTable(format!("bad value {s:?}")))
        };
        let cluster_id = parts[0]
            .parse::<usize>()
            .map_err(|_| FeatureError::MalformedTable(format!("bad cluster id {:?}", parts[0])))?;
        let size = parts[1]
            .parse::<usize>()
            .map_err(|_| FeatureError::MalformedTable(format!("bad size {:?}", parts[1])))?;
        let percentiles: Vec<f64> = parts[2..2 + GRID_PS.len()]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<_, _>>()?;
        let tail = &parts[2 + GRID_PS.len()..];
        rows.push(FeatureRow {
            cluster_id,
            size,
            percentiles,
            avg_dist: parse(tail[0])?,
            d90_50: parse(tail[1])?,
            combo: parse(tail[2])?,
            a_minus_d50: parse(tail[3])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Algorithm;
    use crate::embeddings::{EmbeddingSpec, ReductionSpec};
    use proptest::prelude::*;
    use rand::prelude::*;
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

    fn case_for(m: &EmbeddingMatrix, labels: Vec<i64>) -> ClusterCase {
        let n_clusters = labels.iter().filter(|&&l| l >= 0).map(|&l| l + 1).max().unwrap_or(0) as usize;
        ClusterCase {
            dataset: "t".into(),
            corpus_size: m.rows(),
            embedding: EmbeddingSpec { model: "m".into(), dim: m.dim() },
            reduction: ReductionSpec::none(),
            algorithm: Algorithm::External("t".into()),
            target_k: n_clusters,
            seed: None,
            labels,
            n_clusters,
        }
    }

    /// Brute-force percentile for the oracle comparison; written separately
    /// from the implementation on purpose.
    fn naive_percentile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = p / 100.0 * (v.len() as f64 - 1.0);
        let below = rank.floor() as usize;
        let above = rank.ceil() as usize;
        if below == above {
            v[below]
        } else {
            v[below] * (above as f64 - rank) + v[above] * (rank - below as f64)
        }
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[0.0, 10.0], 90.0).unwrap(), 9.0);
        let one_to_ten: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert_eq!(percentile(&one_to_ten, 50.0).unwrap(), 5.5);
        assert_eq!(percentile(&[3.0], 70.0).unwrap(), 3.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 100.0).unwrap(), 3.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn percentile_errors() {
        assert_eq!(percentile(&[], 50.0), Err(FeatureError::EmptyPool));
        assert!(matches!(
            percentile(&[1.0], 101.0),
            Err(FeatureError::PercentileOutOfRange(_))
        ));
    }

    #[test]
    fn percentile_matches_naive_on_random_pools() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let n = rng.random_range(1..200);
            let vals: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 100.0).collect();
            let p = rng.random::<f64>() * 100.0;
            let ours = percentile(&vals, p).unwrap();
            let naive = naive_percentile(&vals, p);
            assert!((ours - naive).abs() < 1e-12, "{ours} vs {naive} at p={p}");
        }
    }

    #[test]
    fn centers_midpoint_and_eligibility() {
        let m = matrix(vec![
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![3.0, 4.0],
        ]);
        let case = case_for(&m, vec![0, 0, 1]);
        let g = centers(&m, &case).unwrap();
        assert_eq!(g.centers[0], vec![1.0, 0.0]);
        assert_eq!(g.centers[1], vec![3.0, 4.0]);
        assert!(!g.eligible[0]); // size 2
        assert!(!g.eligible[1]); // singleton
    }

    #[test]
    fn centers_match_independent_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rows: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random(), rng.random()]).collect();
        let m = matrix(rows.clone());
        let case = case_for(&m, vec![0, 0, 0, 0, 0]);
        let g = centers(&m, &case).unwrap();
        for j in 0..2 {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / 5.0;
            assert!((g.centers[0][j] - mean).abs() < 1e-12);
        }
        assert!(g.eligible[0]);
    }

    #[test]
    fn pool_lengths_and_triangle() {
        let m = matrix(vec![vec![0.0, 0.0], vec![3.0, 4.0], vec![1.0, 1.0]]);
        let case = case_for(&m, vec![0, 1, 2]);
        let g = centers(&m, &case).unwrap();
        for c in 0..3 {
            assert_eq!(distance_pool(&g, c).unwrap().len(), 2);
        }
        let m2 = matrix(vec![vec![0.0, 0.0], vec![3.0, 4.0]]);
        let case2 = case_for(&m2, vec![0, 1]);
        let g2 = centers(&m2, &case2).unwrap();
        assert_eq!(distance_pool(&g2, 0).unwrap(), vec![5.0]);
    }

    #[test]
    fn pool_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let rows: Vec<Vec<f64>> =
            (0..21).map(|_| (0..4).map(|_| rng.random::<f64>() * 3.0).collect()).collect();
        let m = matrix(rows.clone());
        let labels: Vec<i64> = (0..21).map(|i| i as i64).collect();
        let case = case_for(&m, labels);
        let g = centers(&m, &case).unwrap();
        let pool = distance_pool(&g, 0).unwrap();
        let mut expect = Vec::new();
        for other in rows.iter().skip(1) {
            let d: f64 = rows[0]
                .iter()
                .zip(other)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            expect.push(d);
        }
        for (a, b) in pool.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn insufficient_clusters_error() {
        let m = matrix(vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        let case = case_for(&m, vec![0, 0]);
        let g = centers(&m, &case).unwrap();
        assert_eq!(distance_pool(&g, 0), Err(FeatureError::InsufficientClusters(1)));
    }

    #[test]
    fn d90_50_examples() {
        assert_eq!(feature_d90_50(&[2.0, 2.0, 2.0, 2.0]).unwrap(), 0.0);
        let got = feature_d90_50(&[1.0, 2.0, 10.0]).unwrap();
        assert!((got - 6.4).abs() < 1e-12, "got {got}");
        // homogeneity under positive scaling
        let base = [1.0, 2.5, 4.0, 9.0];
        let scaled: Vec<f64> = base.iter().map(|v| v * 3.5).collect();
        let a = feature_d90_50(&base).unwrap();
        let b = feature_d90_50(&scaled).unwrap();
        assert!((b - 3.5 * a).abs() < 1e-12);
    }

    #[test]
    fn variant_examples() {
        let uniform = [4.0; 6];
        for kind in [
            FeatureKind::D90MinusP(20),
            FeatureKind::Combo,
            FeatureKind::AvgMinusD50,
        ] {
            assert!(feature_variant(&uniform, kind).unwrap().abs() < 1e-12);
        }
        let pool = [1.0, 2.0, 10.0];
        let combo = feature_variant(&pool, FeatureKind::Combo).unwrap();
        assert!((combo - 13.4).abs() < 1e-12, "combo {combo}");
        let a50 = feature_variant(&pool, FeatureKind::AvgMinusD50).unwrap();
        assert!((a50 - (13.0 / 3.0 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!(FeatureKind::parse("d90_50").unwrap(), FeatureKind::D90MinusP(50));
        assert_eq!(FeatureKind::parse("d90_minus_20").unwrap(), FeatureKind::D90MinusP(20));
        assert_eq!(FeatureKind::parse("combo").unwrap(), FeatureKind::Combo);
        assert_eq!(FeatureKind::parse("a_minus_d50").unwrap(), FeatureKind::AvgMinusD50);
        assert_eq!(FeatureKind::parse("d90").unwrap(), FeatureKind::D90);
        assert_eq!(FeatureKind::parse("neg_d50").unwrap(), FeatureKind::NegD50);
        assert!(FeatureKind::parse("d90_minus_7").is_err());
        assert!(FeatureKind::parse("bogus").is_err());
        assert_eq!(FeatureKind::D90MinusP(50).name(), "d90_50");
        assert_eq!(FeatureKind::D90MinusP(20).name(), "d90_minus_20");
    }

    fn scattered_case(seed: u64, n_clusters: usize, min_size: usize) -> (EmbeddingMatrix, ClusterCase) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..n_clusters {
            let cx = rng.random::<f64>() * 50.0;
            let cy = rng.random::<f64>() * 50.0;
            let size = min_size + (c % 3);
            for _ in 0..size {
                rows.push(vec![cx + rng.random::<f64>(), cy + rng.random::<f64>()]);
                labels.push(c as i64);
            }
        }
        let m = matrix(rows);
        let case = case_for(&m, labels);
        (m, case)
    }

    #[test]
    fn table_excludes_small_clusters_but_pools_keep_them() {
        // sizes [5, 3, 2]
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, size, base) in [(0i64, 5, 0.0), (1, 3, 10.0), (2, 2, 20.0)] {
            for i in 0..size {
                rows.push(vec![base + i as f64 * 0.01, base]);
                labels.push(c);
            }
        }
        let m = matrix(rows);
        let case = case_for(&m, labels);
        let table = feature_table(&m, &case).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table[0].cluster_id, 0);
        assert_eq!(table[1].cluster_id, 1);
        // pools include the ineligible third cluster
        assert_eq!(table[0].percentiles.len(), GRID_PS.len());
        let g = centers(&m, &case).unwrap();
        assert_eq!(distance_pool(&g, 0).unwrap().len(), 2);
    }

    #[test]
    fn table_is_deterministic() {
        let (m, case) = scattered_case(3, 25, 3);
        let a = feature_table(&m, &case).unwrap();
        let b = feature_table(&m, &case).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn table_rows_match_primitive_recomposition() {
        let (m, case) = scattered_case(14, 30, 3);
        let table = feature_table(&m, &case).unwrap();
        let g = centers(&m, &case).unwrap();
        for row in &table {
            let pool = distance_pool(&g, row.cluster_id).unwrap();
            let expect = feature_d90_50(&pool).unwrap();
            assert!((row.d90_50 - expect).abs() < 1e-12);
            let combo = feature_variant(&pool, FeatureKind::Combo).unwrap();
            assert!((row.combo - combo).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_invariance() {
        let (m, case) = scattered_case(9, 24, 3);
        let base = feature_table(&m, &case).unwrap();
        let shifted_rows: Vec<Vec<f64>> = (0..m.rows())
            .map(|i| m.row(i).iter().map(|v| v + 123.456).collect())
            .collect();
        let m2 = matrix(shifted_rows);
        let shifted = feature_table(&m2, &case).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a.d90_50 - b.d90_50).abs() < 1e-9);
            assert!((a.combo - b.combo).abs() < 1e-9);
            assert!((a.avg_dist - b.avg_dist).abs() < 1e-9);
        }
    }

    #[test]
    fn positive_scaling_preserves_rank_order() {
        let (m, case) = scattered_case(11, 26, 3);
        let base = feature_table(&m, &case).unwrap();
        let alpha = 7.25;
        let scaled_rows: Vec<Vec<f64>> = (0..m.rows())
            .map(|i| m.row(i).iter().map(|v| v * alpha).collect())
            .collect();
        let m2 = matrix(scaled_rows);
        let scaled = feature_table(&m2, &case).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            assert!((b.d90_50 - alpha * a.d90_50).abs() < 1e-9);
        }
        let order = |rows: &[FeatureRow]| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            idx.sort_by(|&x, &y| rows[x].d90_50.total_cmp(&rows[y].d90_50));
            idx
        };
        assert_eq!(order(&base), order(&scaled));
    }

    #[test]
    fn table_round_trips_through_csv() {
        let (m, case) = scattered_case(21, 22, 3);
        let table = feature_table(&m, &case).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        write_feature_table(&table, &path).unwrap();
        let back = read_feature_table(&path).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn export_header_is_pinned() {
        assert_eq!(
            csv_header(),
            "cluster_id,size,d10,d15,d20,d25,d30,d35,d40,d45,d50,d55,d60,d65,d70,d75,d80,d85,d90,avg_dist,d90_50,combo,a_minus_d50"
        );
    }

    proptest! {
        // D_p is monotone in p, so d90_50 >= 0 and D90 - Dp is non-increasing in p.
        #[test]
        fn d90_50_nonnegative_and_monotone(pool in proptest::collection::vec(0.0..1000.0f64, 1..80)) {
            let d9050 = feature_d90_50(&pool).unwrap();
            prop_assert!(d9050 >= 0.0);
            let mut prev = f64::INFINITY;
            for &p in VARIANT_PS {
                let v = feature_variant(&pool, FeatureKind::D90MinusP(p)).unwrap();
                prop_assert!(v <= prev + 1e-12);
                prev = v;
            }
            // pool bounds contain every percentile
            let lo = pool.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = pool.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for &p in GRID_PS {
                let d = percentile(&pool, p as f64).unwrap();
                prop_assert!(d >= lo - 1e-12 && d <= hi + 1e-12);
            }
        }
    }
}
