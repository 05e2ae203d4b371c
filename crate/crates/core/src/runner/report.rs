//! Report bundle: aggregation grids, case counts, histograms, rank-gap
//! curves, feature-variant comparisons, and cross-scorer correlations, all as
//! CSV plus a markdown summary. Reports are pure functions of the cached
//! artifacts; two invocations on the same cache produce identical bytes.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::features::FeatureKind;
use crate::scoring::{cluster_scores, cross_scorer_correlation, ClusterScore, ScoreRecord, ScorerKind};
use crate::stats::{histogram, kendall_tau_b, n_clust_bucket, rank_gaps, summarize_group, GapCurve, CorrelationResult};

use super::config::Config;
use super::{
    chunk_id_shas, largest_chunked_size, load_case_data, read_correlations, records_for_ids,
    scorer_record_index, CaseData, RunEnv, RunnerError,
};

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn write_file(path: &Path, content: &str) -> Result<PathBuf, RunnerError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(path.to_path_buf())
}

/// One row of the four-way (plus reduction) split layout.
struct SectionRow {
    split: &'static str,
    selection: String,
}

fn section_rows(config: &Config) -> Vec<SectionRow> {
    let mut rows = Vec::new();
    for c in &config.corpora {
        rows.push(SectionRow { split: "dataset", selection: c.name.clone() });
    }
    for &s in &config.run.sizes {
        rows.push(SectionRow { split: "data size", selection: s.to_string() });
    }
    for a in &config.clustering.algorithms {
        rows.push(SectionRow { split: "clusters", selection: a.clone() });
    }
    let mut seen = Vec::new();
    for x in &config.clustering.external {
        if !seen.contains(&x.label) {
            seen.push(x.label.clone());
            rows.push(SectionRow { split: "clusters", selection: format!("external:{}", x.label) });
        }
    }
    for b in ["<50", "50-70", ">70"] {
        rows.push(SectionRow { split: "n_clust", selection: b.to_string() });
    }
    for r in config.reduction_specs() {
        rows.push(SectionRow { split: "reduction", selection: r.label() });
    }
    rows
}

fn row_matches(row: &SectionRow, r: &CorrelationResult) -> bool {
    match row.split {
        "dataset" => r.dataset == row.selection,
        "data size" => r.size.to_string() == row.selection,
        "clusters" => r.algorithm == row.selection,
        "n_clust" => n_clust_bucket(r.n_clusters) == row.selection,
        "reduction" => r.reduction == row.selection,
        _ => false,
    }
}

#[derive(Clone, Copy)]
enum Stat {
    Avg,
    Stdev,
    FPos,
}

impl Stat {
    fn name(self) -> &'static str {
        match self {
            Stat::Avg => "avg",
            Stat::Stdev => "stdev",
            Stat::FPos => "fpos",
        }
    }

    fn pick(self, values: &[f64]) -> f64 {
        let row = summarize_group(String::new(), values);
        match self {
            Stat::Avg => row.avg,
            Stat::Stdev => row.stdev,
            Stat::FPos => row.f_pos,
        }
    }
}

/// Tables 2-4 / 6-8 analog: one grid per (correlation kind, statistic), rows
/// the split sections, columns scorer x embedding.
fn write_grid_tables(
    config: &Config,
    env: &RunEnv,
    results: &[CorrelationResult],
    paths: &mut Vec<PathBuf>,
) -> Result<(), RunnerError> {
    let rows = section_rows(config);
    let dir = env.report_dir().join("tables");
    for (corr_name, value) in [
        ("tau", Box::new(|r: &CorrelationResult| r.tau_b) as Box<dyn Fn(&CorrelationResult) -> f64>),
        ("spearman", Box::new(|r: &CorrelationResult| r.spearman)),
    ] {
        for stat in [Stat::Avg, Stat::Stdev, Stat::FPos] {
            let mut out = String::from("split,selection");
            for scorer in &config.scorers {
                for emb in &config.embeddings {
                    out.push_str(&format!(",{}/{}", scorer.label(), emb.model));
                }
            }
            out.push('\n');
            for row in &rows {
                out.push_str(&format!("{},{}", row.split, row.selection));
                for scorer in &config.scorers {
                    for emb in &config.embeddings {
                        let vals: Vec<f64> = results
                            .iter()
                            .filter(|r| {
                                r.scorer == scorer.label()
                                    && r.embedding == emb.model
                                    && row_matches(row, r)
                            })
                            .map(&value)
                            .collect();
                        if vals.is_empty() {
                            out.push(',');
                        } else {
                            out.push_str(&format!(",{}", fmt(stat.pick(&vals))));
                        }
                    }
                }
                out.push('\n');
            }
            paths.push(write_file(&dir.join(format!("{corr_name}_{}.csv", stat.name())), &out)?);
        }
    }
    Ok(())
}

/// Appendix-D analog: number of valid cases per split row and embedding.
fn write_case_counts(
    config: &Config,
    env: &RunEnv,
    cases: &[CaseData],
    paths: &mut Vec<PathBuf>,
) -> Result<(), RunnerError> {
    let rows = section_rows(config);
    let mut out = String::from("split,selection");
    for emb in &config.embeddings {
        out.push_str(&format!(",{}", emb.model));
    }
    out.push('\n');
    for row in &rows {
        out.push_str(&format!("{},{}", row.split, row.selection));
        for emb in &config.embeddings {
            let count = cases
                .iter()
                .filter(|c| c.manifest.validity == "valid" && c.cell.embedding == emb.model)
                .filter(|c| match row.split {
                    "dataset" => c.cell.corpus == row.selection,
                    "data size" => c.cell.size.to_string() == row.selection,
                    "clusters" => c.case.algorithm.to_string() == row.selection,
                    "n_clust" => n_clust_bucket(c.case.n_clusters) == row.selection,
                    "reduction" => c.cell.reduction.label() == row.selection,
                    _ => false,
                })
                .count();
            out.push_str(&format!(",{count}"));
        }
        out.push('\n');
    }
    paths.push(write_file(&env.report_dir().join("cases.csv"), &out)?);

    let mut rejected = String::from("case_id,validity\n");
    for c in cases {
        if c.manifest.validity != "valid" {
            rejected.push_str(&format!("{},{}\n", c.case_id, c.manifest.validity));
        }
    }
    paths.push(write_file(&env.report_dir().join("rejected_cases.csv"), &rejected)?);
    Ok(())
}

fn histogram_csv(values: &[f64], bins: usize, low: f64, high: f64) -> String {
    let mut out = String::from("bin_low,bin_high,count\n");
    if let Ok(h) = histogram(values, bins, low, high) {
        for ((lo, hi), count) in h.edges().into_iter().zip(&h.counts) {
            out.push_str(&format!("{},{},{count}\n", fmt(lo), fmt(hi)));
        }
        out.push_str(&format!("overflow,,{}\n", h.overflow));
    }
    out
}

fn split_histogram_csv(groups: &[(String, Vec<f64>)], bins: usize, low: f64, high: f64) -> String {
    let mut out = String::from("split_value,bin_low,bin_high,count\n");
    for (name, values) in groups {
        if let Ok(h) = histogram(values, bins, low, high) {
            for ((lo, hi), count) in h.edges().into_iter().zip(&h.counts) {
                out.push_str(&format!("{name},{},{},{count}\n", fmt(lo), fmt(hi)));
            }
            out.push_str(&format!("{name},overflow,,{}\n", h.overflow));
        }
    }
    out
}

/// Per-cluster data for the primary scorer across all valid cases.
struct ClusterLevel {
    /// (case index, cluster score rows) pairs.
    per_case: Vec<(usize, Vec<ClusterScore>)>,
}

fn collect_cluster_level(
    env: &RunEnv,
    cases: &[CaseData],
    kind: ScorerKind,
    model: &str,
) -> ClusterLevel {
    let index = scorer_record_index(env, kind, model);
    let mut per_case = Vec::new();
    for (i, data) in cases.iter().enumerate() {
        if data.manifest.validity != "valid" {
            continue;
        }
        let Some(chunk_keys) = chunk_id_shas(env, &data.cell.corpus, data.cell.size) else {
            continue;
        };
        let records: Vec<ScoreRecord> = records_for_ids(&index, &chunk_keys);
        let scores = cluster_scores(&records, &data.case, &data.ids);
        per_case.push((i, scores));
    }
    ClusterLevel { per_case }
}

/// Figure 1 / 4 / 5-9 analogs for the primary scorer.
fn write_histograms(
    config: &Config,
    env: &RunEnv,
    cases: &[CaseData],
    level: &ClusterLevel,
    paths: &mut Vec<PathBuf>,
) -> Result<(), RunnerError> {
    let dir = env.report_dir().join("histograms");

    let all_means: Vec<f64> = level
        .per_case
        .iter()
        .flat_map(|(_, scores)| scores.iter().map(|s| s.mean))
        .collect();
    paths.push(write_file(
        &dir.join("cluster_iun_20bin.csv"),
        &histogram_csv(&all_means, 20, 1.0, 5.0),
    )?);

    let all_stdevs: Vec<f64> = level
        .per_case
        .iter()
        .flat_map(|(_, scores)| scores.iter().map(|s| s.stdev))
        .collect();
    paths.push(write_file(
        &dir.join("in_cluster_stdev_50bin.csv"),
        &histogram_csv(&all_stdevs, 50, 0.0, 2.0),
    )?);

    let group_values = |key: &dyn Fn(&CaseData) -> String, order: &[String]| -> Vec<(String, Vec<f64>)> {
        order
            .iter()
            .map(|sel| {
                let values: Vec<f64> = level
                    .per_case
                    .iter()
                    .filter(|(i, _)| key(&cases[*i]) == *sel)
                    .flat_map(|(_, scores)| scores.iter().map(|s| s.mean))
                    .collect();
                (sel.clone(), values)
            })
            .collect()
    };

    let datasets: Vec<String> = config.corpora.iter().map(|c| c.name.clone()).collect();
    let sizes: Vec<String> = config.run.sizes.iter().map(|s| s.to_string()).collect();
    let embeddings: Vec<String> = config.embeddings.iter().map(|e| e.model.clone()).collect();
    let mut algorithms: Vec<String> = config.clustering.algorithms.clone();
    for x in &config.clustering.external {
        let label = format!("external:{}", x.label);
        if !algorithms.contains(&label) {
            algorithms.push(label);
        }
    }
    let reductions: Vec<String> = config.reduction_specs().iter().map(|r| r.label()).collect();

    let splits: [(&str, Box<dyn Fn(&CaseData) -> String>, &[String]); 5] = [
        ("dataset", Box::new(|c: &CaseData| c.cell.corpus.clone()), &datasets),
        ("size", Box::new(|c: &CaseData| c.cell.size.to_string()), &sizes),
        ("embedding", Box::new(|c: &CaseData| c.cell.embedding.clone()), &embeddings),
        ("algorithm", Box::new(|c: &CaseData| c.case.algorithm.to_string()), &algorithms),
        ("reduction", Box::new(|c: &CaseData| c.cell.reduction.label()), &reductions),
    ];
    for (name, key, order) in splits {
        let groups = group_values(&*key, order);
        paths.push(write_file(
            &dir.join(format!("cluster_iun_by_{name}.csv")),
            &split_histogram_csv(&groups, 4, 1.0, 5.0),
        )?);
    }
    Ok(())
}

/// Pooled normalized rank gaps between the primary feature and the primary
/// scorer, for the three n_clusters groupings.
fn write_gap_curves(
    env: &RunEnv,
    cases: &[CaseData],
    level: &ClusterLevel,
    primary: FeatureKind,
    paths: &mut Vec<PathBuf>,
) -> Result<Vec<(String, Option<GapCurve>)>, RunnerError> {
    let dir = env.report_dir().join("gaps");
    let mut tagged: Vec<(usize, Vec<f64>)> = Vec::new(); // (n_clusters, gaps)
    for (i, scores) in &level.per_case {
        let data = &cases[*i];
        let by_cluster: HashMap<usize, f64> =
            scores.iter().map(|s| (s.cluster_id, s.mean)).collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for row in &data.feature_rows {
            if let (Some(v), Some(&s)) = (row.value(primary), by_cluster.get(&row.cluster_id)) {
                xs.push(v);
                ys.push(s);
            }
        }
        if xs.len() < 3 {
            continue;
        }
        if let Ok(gaps) = rank_gaps(&xs, &ys) {
            tagged.push((data.case.n_clusters, gaps));
        }
    }

    let groups: [(&str, Box<dyn Fn(usize) -> bool>); 3] = [
        ("le50", Box::new(|n| n <= 50)),
        ("all", Box::new(|_| true)),
        ("gt50", Box::new(|n| n > 50)),
    ];
    let mut summaries = Vec::new();
    for (name, want) in groups {
        let pooled: Vec<f64> = tagged
            .iter()
            .filter(|(n, _)| want(*n))
            .flat_map(|(_, gaps)| gaps.iter().copied())
            .collect();
        let curve = GapCurve::from_gaps(pooled).ok();
        let mut out = String::from("normalized_gap,cumulative_fraction\n");
        if let Some(c) = &curve {
            for (g, f) in c.gaps.iter().zip(&c.cumulative) {
                out.push_str(&format!("{},{}\n", fmt(*g), fmt(*f)));
            }
        }
        paths.push(write_file(&dir.join(format!("gap_curve_{name}.csv")), &out)?);
        summaries.push((name.to_string(), curve));
    }

    let mut out = String::from("group,median,avg,p97_5\n");
    for (name, curve) in &summaries {
        let label = match name.as_str() {
            "le50" => "<=50",
            "all" => "All",
            "gt50" => ">50",
            other => other,
        };
        match curve {
            Some(c) => {
                out.push_str(&format!("{label},{},{},{}\n", fmt(c.median), fmt(c.avg), fmt(c.p97_5)))
            }
            None => out.push_str(&format!("{label},,,\n")),
        }
    }
    paths.push(write_file(&dir.join("gap_summary.csv"), &out)?);
    Ok(summaries)
}

/// Ordered variant list for the comparison table: the standalone components,
/// the D90 - Dp family, the combo and the average-anchored variant.
pub(crate) fn variant_order() -> Vec<FeatureKind> {
    let mut kinds = vec![FeatureKind::D90, FeatureKind::NegD50];
    for p in [10u32, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65] {
        kinds.push(FeatureKind::D90MinusP(p));
    }
    kinds.push(FeatureKind::Combo);
    kinds.push(FeatureKind::AvgMinusD50);
    kinds
}

struct VariantRow {
    scorer: String,
    variant: String,
    avg: f64,
    stdev: f64,
    f_pos: f64,
    n_cases: usize,
}

/// Table 5 / Table 10 analog: correlation of every variant with the cluster
/// scores, aggregated over all valid cases per scorer.
fn variant_table(
    config: &Config,
    env: &RunEnv,
    cases: &[CaseData],
) -> Vec<VariantRow> {
    let mut rows = Vec::new();
    for scorer in &config.scorers {
        let Ok(kind) = scorer.kind() else { continue };
        let level = collect_cluster_level(env, cases, kind, &scorer.model);
        for variant in variant_order() {
            let mut taus = Vec::new();
            for (i, scores) in &level.per_case {
                let data = &cases[*i];
                let by_cluster: HashMap<usize, f64> =
                    scores.iter().map(|s| (s.cluster_id, s.mean)).collect();
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for row in &data.feature_rows {
                    if let (Some(v), Some(&s)) =
                        (row.value(variant), by_cluster.get(&row.cluster_id))
                    {
                        xs.push(v);
                        ys.push(s);
                    }
                }
                if xs.len() < 3 {
                    continue;
                }
                if let Ok(tau) = kendall_tau_b(&xs, &ys) {
                    taus.push(tau);
                }
            }
            if taus.is_empty() {
                continue;
            }
            let summary = summarize_group(String::new(), &taus);
            rows.push(VariantRow {
                scorer: scorer.label().to_string(),
                variant: variant.name(),
                avg: summary.avg,
                stdev: summary.stdev,
                f_pos: summary.f_pos,
                n_cases: summary.n_cases,
            });
        }
    }
    rows
}

struct CrossScorerRow {
    scorer_a: String,
    scorer_b: String,
    corpus: String,
    tau_b: f64,
    n: usize,
}

/// Table 1 analog: document-level correlations between scorer pairs.
fn cross_scorer_table(config: &Config, env: &RunEnv) -> Vec<CrossScorerRow> {
    let mut indexes = Vec::new();
    for scorer in &config.scorers {
        let Ok(kind) = scorer.kind() else { continue };
        indexes.push((scorer.label().to_string(), scorer_record_index(env, kind, &scorer.model)));
    }
    let mut rows = Vec::new();
    for i in 0..indexes.len() {
        for j in i + 1..indexes.len() {
            for corpus in &config.corpora {
                let Some(size) = largest_chunked_size(config, env, &corpus.name) else {
                    continue;
                };
                let Some(chunk_keys) = chunk_id_shas(env, &corpus.name, size) else { continue };
                let a = records_for_ids(&indexes[i].1, &chunk_keys);
                let b = records_for_ids(&indexes[j].1, &chunk_keys);
                if let Ok((tau, n)) = cross_scorer_correlation(&a, &b) {
                    rows.push(CrossScorerRow {
                        scorer_a: indexes[i].0.clone(),
                        scorer_b: indexes[j].0.clone(),
                        corpus: corpus.name.clone(),
                        tau_b: tau,
                        n,
                    });
                }
            }
        }
    }
    rows
}

fn markdown_grid(config: &Config, results: &[CorrelationResult]) -> String {
    let rows = section_rows(config);
    let mut out = String::new();
    out.push_str("| split | selection |");
    for scorer in &config.scorers {
        for emb in &config.embeddings {
            out.push_str(&format!(" {}/{} |", scorer.label(), emb.model));
        }
    }
    out.push('\n');
    out.push_str("|---|---|");
    for _ in 0..config.scorers.len() * config.embeddings.len() {
        out.push_str("---|");
    }
    out.push('\n');
    for row in &rows {
        out.push_str(&format!("| {} | {} |", row.split, row.selection));
        for scorer in &config.scorers {
            for emb in &config.embeddings {
                let vals: Vec<f64> = results
                    .iter()
                    .filter(|r| {
                        r.scorer == scorer.label()
                            && r.embedding == emb.model
                            && row_matches(row, r)
                    })
                    .map(|r| r.tau_b)
                    .collect();
                if vals.is_empty() {
                    out.push_str(" |");
                } else {
                    out.push_str(&format!(" {:.2} |", Stat::Avg.pick(&vals)));
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Writes the full report bundle; returns the emitted paths.
pub fn write_report(config: &Config, env: &RunEnv) -> Result<Vec<PathBuf>, RunnerError> {
    let correlations_path = env.correlations_path();
    if !correlations_path.exists() {
        return Err(RunnerError::Report(
            "correlations.csv missing; run the correlate stage first".into(),
        ));
    }
    let all_results = read_correlations(&correlations_path)?;
    if all_results.is_empty() {
        return Err(RunnerError::Report("no correlation results; nothing to report".into()));
    }
    let kinds = config.feature_kinds()?;
    let primary = kinds[0];
    let primary_results: Vec<CorrelationResult> = all_results
        .iter()
        .filter(|r| r.feature == primary.name())
        .cloned()
        .collect();

    let cases = load_case_data(config, env);
    let mut paths = Vec::new();

    write_grid_tables(config, env, &primary_results, &mut paths)?;
    write_case_counts(config, env, &cases, &mut paths)?;

    let primary_scorer = &config.scorers[0];
    let primary_kind = primary_scorer.kind().map_err(RunnerError::Config)?;
    let level = collect_cluster_level(env, &cases, primary_kind, &primary_scorer.model);
    write_histograms(config, env, &cases, &level, &mut paths)?;
    let gap_summaries = write_gap_curves(env, &cases, &level, primary, &mut paths)?;

    let variants = variant_table(config, env, &cases);
    let mut out = String::from("scorer,variant,avg,stdev,f_pos,n_cases\n");
    for v in &variants {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            v.scorer,
            v.variant,
            fmt(v.avg),
            fmt(v.stdev),
            fmt(v.f_pos),
            v.n_cases
        ));
    }
    paths.push(write_file(&env.report_dir().join("feature_variants.csv"), &out)?);

    let cross = cross_scorer_table(config, env);
    let mut out = String::from("scorer_a,scorer_b,corpus,tau_b,n\n");
    for r in &cross {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.scorer_a,
            r.scorer_b,
            r.corpus,
            fmt(r.tau_b),
            r.n
        ));
    }
    paths.push(write_file(&env.report_dir().join("cross_scorer.csv"), &out)?);

    // markdown summary
    let valid = cases.iter().filter(|c| c.manifest.validity == "valid").count();
    let rejected = cases.len() - valid;
    let mut md = String::new();
    md.push_str("# Cluster ranking report\n\n");
    md.push_str(&format!(
        "- clustering cases: {} valid, {} rejected\n- correlations: {}\n- primary feature: {}\n- primary scorer: {}\n\n",
        valid,
        rejected,
        all_results.len(),
        primary.name(),
        primary_scorer.label()
    ));
    md.push_str(&format!("## Kendall tau-b averages ({})\n\n", primary.name()));
    md.push_str(&markdown_grid(config, &primary_results));
    md.push('\n');

    md.push_str("## Feature decomposition\n\n| feature | avg | stdev | f_pos |\n|---|---|---|---|\n");
    for want in ["d90", "neg_d50", "d90_50"] {
        if let Some(v) = variants
            .iter()
            .find(|v| v.scorer == primary_scorer.label() && v.variant == want)
        {
            md.push_str(&format!(
                "| {} | {:.2} | {:.2} | {:.4} |\n",
                v.variant, v.avg, v.stdev, v.f_pos
            ));
        }
    }
    md.push('\n');

    md.push_str("## Feature variants\n\n| variant | avg | stdev | f_pos |\n|---|---|---|---|\n");
    for v in variants.iter().filter(|v| v.scorer == primary_scorer.label()) {
        md.push_str(&format!(
            "| {} | {:.2} | {:.2} | {:.4} |\n",
            v.variant, v.avg, v.stdev, v.f_pos
        ));
    }
    md.push('\n');

    md.push_str("## Rank gaps between feature and score\n\n| clusters | median | avg | p97.5 |\n|---|---|---|---|\n");
    for (name, curve) in &gap_summaries {
        let label = match name.as_str() {
            "le50" => "<= 50",
            "all" => "All",
            "gt50" => "> 50",
            other => other,
        };
        match curve {
            Some(c) => md.push_str(&format!(
                "| {label} | {:.2} | {:.2} | {:.2} |\n",
                c.median, c.avg, c.p97_5
            )),
            None => md.push_str(&format!("| {label} | - | - | - |\n")),
        }
    }
    md.push('\n');

    if !cross.is_empty() {
        md.push_str("## Cross-scorer correlations\n\n| pair | corpus | tau_b | n |\n|---|---|---|---|\n");
        for r in &cross {
            md.push_str(&format!(
                "| {}-{} | {} | {:.2} | {} |\n",
                r.scorer_a, r.scorer_b, r.corpus, r.tau_b, r.n
            ));
        }
        md.push('\n');
    }

    paths.push(write_file(&env.report_dir().join("report.md"), &md)?);
    Ok(paths)
}
