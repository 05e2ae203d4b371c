//! End-to-end runner behavior on a small synthetic experiment: planning
//! arithmetic, cache satisfaction, resume, failure isolation, manifest
//! guarding, and report determinism.

mod common;

use std::path::Path;

use common::fixture::{build_fixture, FixtureParams};
use iun_core::runner::{self, Config, RunEnv, RunnerError, Stage};

fn small_params() -> FixtureParams {
    FixtureParams {
        n_docs: 150,
        dim: 16,
        n_topics: 12,
        seed: 3,
        sizes: vec![150],
        target_ks: vec![20, 30],
        pca_dim: 8,
        algorithms: vec!["kmeans".into(), "ward".into()],
        run_seed: 5,
        parallelism: 2,
    }
}

fn load(config_path: &Path) -> (Config, RunEnv) {
    let config = Config::load(config_path).expect("config loads");
    let env = RunEnv::new(&config, config_path.parent().unwrap());
    (config, env)
}

#[test]
fn plan_enumerates_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut params = small_params();
    // 1 corpus x 1 size x 1 embedding x 1 reduction x 2 algorithms x 9 ks
    params.sizes = vec![150];
    params.target_ks = (20..=100).step_by(10).collect();
    let config_path = build_fixture(dir.path(), &params);
    let (config, env) = load(&config_path);
    let plan = runner::plan(&config, &env).unwrap();
    assert_eq!(plan.count(Stage::Cluster), 18);
    assert_eq!(plan.count(Stage::Chunk), 1);
    assert_eq!(plan.count(Stage::Reduce), 1);
    assert_eq!(plan.count(Stage::Features), 18);
    assert_eq!(plan.runnable(Stage::Cluster), 18); // cold cache
}

#[test]
fn warm_cache_leaves_no_runnable_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = build_fixture(dir.path(), &small_params());
    let (config, env) = load(&config_path);

    let outcome = runner::run(&config, &env, Stage::Score).unwrap();
    assert_eq!(outcome.failed, 0, "score run failed: {outcome:?}");

    let plan = runner::plan(&config, &env).unwrap();
    assert_eq!(plan.runnable(Stage::Score), 0);
    assert_eq!(plan.runnable(Stage::Chunk), 0);
}

#[test]
fn full_run_produces_correlations_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = build_fixture(dir.path(), &small_params());
    let (config, env) = load(&config_path);

    let outcome = runner::run(&config, &env, Stage::Report).unwrap();
    assert_eq!(outcome.failed, 0);
    assert_eq!(outcome.skipped, 0);

    let correlations = runner::read_correlations(&env.correlations_path()).unwrap();
    // 4 valid cases x 2 scorers x 1 feature
    assert_eq!(correlations.len(), 8);
    for r in &correlations {
        assert!(r.n >= 3);
        assert!(r.tau_b.abs() <= 1.0);
    }
    for file in [
        "tables/tau_avg.csv",
        "tables/tau_stdev.csv",
        "tables/tau_fpos.csv",
        "tables/spearman_avg.csv",
        "cases.csv",
        "rejected_cases.csv",
        "histograms/cluster_iun_20bin.csv",
        "histograms/in_cluster_stdev_50bin.csv",
        "histograms/cluster_iun_by_dataset.csv",
        "gaps/gap_curve_all.csv",
        "gaps/gap_summary.csv",
        "feature_variants.csv",
        "cross_scorer.csv",
        "report.md",
    ] {
        let path = env.report_dir().join(file);
        assert!(path.exists(), "missing report file {file}");
    }

    // cross-scorer table has the LLM-B pair for the corpus
    let cross = std::fs::read_to_string(env.report_dir().join("cross_scorer.csv")).unwrap();
    assert!(cross.lines().count() >= 2, "cross_scorer.csv empty:\n{cross}");
    assert!(cross.contains("LLM,B,FIX"));

    // gap summary carries the three grouping rows
    let gaps = std::fs::read_to_string(env.report_dir().join("gaps/gap_summary.csv")).unwrap();
    assert!(gaps.contains("<=50,"));
    assert!(gaps.contains("All,"));
    assert!(gaps.contains(">50,"));
}

#[test]
fn rerun_resumes_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = build_fixture(dir.path(), &small_params());
    let (config, env) = load(&config_path);

    runner::run(&config, &env, Stage::Cluster).unwrap();
    // everything up to clustering is now cached
    let plan = runner::plan(&config, &env).unwrap();
    assert_eq!(plan.runnable(Stage::Chunk), 0);
    assert_eq!(plan.runnable(Stage::Reduce), 0);
    assert_eq!(plan.runnable(Stage::Cluster), 0);
    assert_eq!(plan.runnable(Stage::Score), 2); // scorers not yet imported

    let reduced = env.reduced_path("FIX", 150, "SYN", "pca8");
    let before = std::fs::metadata(&reduced).unwrap().modified().unwrap();
    let outcome = runner::run(&config, &env, Stage::Report).unwrap();
    assert_eq!(outcome.failed, 0);
    let after = std::fs::metadata(&reduced).unwrap().modified().unwrap();
    assert_eq!(before, after, "cached artifact was rewritten on resume");
}

#[test]
fn auth_failing_scorer_isolates_to_its_cells() {
    let server = common::StubServer::start(|_, _| (401, serde_json::json!({"error": "bad key"})));
    let dir = tempfile::tempdir().unwrap();
    let config_path = build_fixture(dir.path(), &small_params());
    let text = std::fs::read_to_string(&config_path).unwrap();
    let text = text.replace(
        "[run]",
        &format!(
            "[[scorers]]\nkind = \"llm\"\nmodel = \"DEAD\"\nendpoint = \"{}\"\n\n[run]",
            server.url()
        ),
    );
    std::fs::write(&config_path, text).unwrap();

    let (config, env) = load(&config_path);
    let outcome = runner::run(&config, &env, Stage::Report).unwrap();
    assert!(outcome.failed >= 1, "auth-failing scorer should fail: {outcome:?}");

    // the file scorers still produced their correlations
    let correlations = runner::read_correlations(&env.correlations_path()).unwrap();
    let scorers: std::collections::HashSet<&str> =
        correlations.iter().map(|r| r.scorer.as_str()).collect();
    assert!(scorers.contains("LLM"));
    assert!(scorers.contains("B"));
    assert!(!scorers.contains("DEAD"));
}

#[test]
fn manifest_refuses_mixed_configs() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = build_fixture(dir.path(), &small_params());
    let (config, env) = load(&config_path);
    runner::run(&config, &env, Stage::Chunk).unwrap();

    let mut other = config.clone();
    other.run.target_ks = vec![25];
    match runner::run(&other, &env, Stage::Chunk) {
        Err(RunnerError::ManifestMismatch { .. }) => {}
        other => panic!("expected manifest mismatch, got {other:?}"),
    }
}

#[test]
fn identical_runs_emit_identical_bundles() {
    // parallelism must not leak into any artifact
    let mut bundles: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for parallelism in [2, 1, 4] {
        let dir = tempfile::tempdir().unwrap();
        let config_path = build_fixture(dir.path(), &small_params());
        let (mut config, env) = load(&config_path);
        config.run.parallelism = parallelism;
        let outcome = runner::run(&config, &env, Stage::Report).unwrap();
        assert_eq!(outcome.failed, 0);
        let mut files = Vec::new();
        collect_files(&env.output, &env.output, &mut files);
        // the manifest differs only through the config hash (parallelism is
        // part of the config); artifacts must not
        files.retain(|(name, _)| name != "manifest.json");
        files.sort();
        bundles.push(files);
    }
    let names: Vec<&String> = bundles[0].iter().map(|(n, _)| n).collect();
    assert!(names.iter().any(|n| n.contains("report.md")));
    assert_eq!(bundles[0], bundles[1], "report bundles differ between identical runs");
    assert_eq!(bundles[0], bundles[2], "report bundle depends on parallelism");
}

#[test]
fn correlations_recompute_exactly_from_cached_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = build_fixture(dir.path(), &small_params());
    let (config, env) = load(&config_path);
    runner::run(&config, &env, Stage::Correlate).unwrap();

    let correlations = runner::read_correlations(&env.correlations_path()).unwrap();
    let row = correlations
        .iter()
        .find(|r| r.algorithm == "kmeans" && r.n_clusters == 20 && r.scorer == "LLM")
        .expect("kmeans k20 LLM row present");

    // rebuild the same join from the artifacts on disk
    let case_id = "FIX-150-SYN-pca8-kmeans-k20";
    let features =
        iun_core::features::read_feature_table(&env.features_path(case_id)).unwrap();
    let chunks =
        iun_core::corpus::read_chunks_file(&env.chunks_path("FIX", 150)).unwrap();
    let ids: Vec<String> = chunks.iter().map(|c| c.doc_id.clone()).collect();
    let matrix = iun_core::embeddings::read_matrix(&env.reduced_path("FIX", 150, "SYN", "pca8"))
        .unwrap();
    let case = iun_core::clustering::read_case(
        &env.case_csv_path(case_id),
        &env.case_manifest_path(case_id),
        &matrix,
    )
    .unwrap();
    let records: Vec<_> =
        iun_core::scoring::load_scores(&env.scores_path(iun_core::scoring::ScorerKind::File, "LLM"))
            .unwrap()
            .into_iter()
            .filter(|r| {
                r.is_ok()
                    && chunks
                        .iter()
                        .any(|c| c.doc_id == r.doc_id && c.sha256 == r.chunk_sha256)
            })
            .collect();
    let cluster_means = iun_core::scoring::cluster_scores(&records, &case, &ids);
    let by_cluster: std::collections::HashMap<usize, f64> =
        cluster_means.iter().map(|s| (s.cluster_id, s.mean)).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for f in &features {
        if let Some(&mean) = by_cluster.get(&f.cluster_id) {
            xs.push(f.d90_50);
            ys.push(mean);
        }
    }
    assert_eq!(xs.len(), row.n);
    let tau = iun_core::stats::kendall_tau_b(&xs, &ys).unwrap();
    assert_eq!(tau, row.tau_b, "recomputed tau differs from the emitted value");
    let rho = iun_core::stats::spearman(&xs, &ys).unwrap();
    assert_eq!(rho, row.spearman);
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            let rel = path.strip_prefix(root).unwrap().display().to_string();
            out.push((rel, std::fs::read(&path).unwrap()));
        }
    }
}
