//! Config-driven orchestration of the experiment grid: datasets x sizes x
//! embeddings x reductions x algorithms x target ks x scorers x features.
//! Every stage writes immutable artifacts into the cache directory, a
//! manifest tracks per-task status, and reruns resume from whatever already
//! exists. Failures isolate to their grid cell.

pub mod config;
mod report;

pub use config::Config;
pub use report::write_report;

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{
    kmeans, load_assignments, read_case, validate_case, ward, write_case, CaseManifest,
    CaseValidity, ClusterCase,
};
use crate::corpus::{load_corpus, read_chunks_file, top_chunk, write_chunks_file, Chunk, CorpusSpec, DEFAULT_CHUNK_LIMIT};
use crate::embeddings::{
    embed_remote, read_matrix, reduce_pca, write_matrix, ReductionMethod,
    ReductionSpec, RemoteEmbedOptions,
};
use crate::features::{feature_table, read_feature_table, write_feature_table};
use crate::scoring::{cluster_scores, score_corpus, ClusterScore, ScoreCache, ScoreOptions, ScoreRecord, ScorerKind};
use crate::stats::{correlate_values, CorrelationResult, StatsError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config: {0}")]
    Config(String),
    #[error("manifest belongs to a different config (hash {found}, expected {expected}); refusing to mix experiments")]
    ManifestMismatch { found: String, expected: String },
    #[error("report: {0}")]
    Report(String),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Chunk,
    Embed,
    Reduce,
    Cluster,
    Score,
    Features,
    Correlate,
    Report,
}

pub const ALL_STAGES: [Stage; 8] = [
    Stage::Chunk,
    Stage::Embed,
    Stage::Reduce,
    Stage::Cluster,
    Stage::Score,
    Stage::Features,
    Stage::Correlate,
    Stage::Report,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Chunk => "chunk",
            Stage::Embed => "embed",
            Stage::Reduce => "reduce",
            Stage::Cluster => "cluster",
            Stage::Score => "score",
            Stage::Features => "features",
            Stage::Correlate => "correlate",
            Stage::Report => "report",
        }
    }

    /// Stages a target stage needs, itself included.
    pub fn closure(self) -> Vec<Stage> {
        match self {
            Stage::Chunk => vec![Stage::Chunk],
            Stage::Embed => vec![Stage::Chunk, Stage::Embed],
            Stage::Reduce => vec![Stage::Chunk, Stage::Embed, Stage::Reduce],
            Stage::Cluster => vec![Stage::Chunk, Stage::Embed, Stage::Reduce, Stage::Cluster],
            Stage::Score => vec![Stage::Chunk, Stage::Score],
            Stage::Features => vec![
                Stage::Chunk,
                Stage::Embed,
                Stage::Reduce,
                Stage::Cluster,
                Stage::Features,
            ],
            Stage::Correlate => vec![
                Stage::Chunk,
                Stage::Embed,
                Stage::Reduce,
                Stage::Cluster,
                Stage::Score,
                Stage::Features,
                Stage::Correlate,
            ],
            Stage::Report => ALL_STAGES.to_vec(),
        }
    }
}

/// Where a run reads its inputs and writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunEnv {
    /// Directory relative config paths resolve against.
    pub base: PathBuf,
    pub cache: PathBuf,
    pub output: PathBuf,
}

impl RunEnv {
    pub fn new(config: &Config, base: impl Into<PathBuf>) -> RunEnv {
        let base = base.into();
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        RunEnv {
            cache: resolve(&config.run.cache_dir),
            output: resolve(&config.run.output_dir),
            base,
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn chunks_path(&self, corpus: &str, size: usize) -> PathBuf {
        self.cache.join("chunks").join(format!("{corpus}-{size}.jsonl"))
    }

    pub fn embed_path(&self, corpus: &str, model: &str) -> PathBuf {
        self.cache.join("embeddings").join(format!("{corpus}-{model}.emb1"))
    }

    pub fn embed_checkpoint_path(&self, corpus: &str, model: &str) -> PathBuf {
        self.cache.join("checkpoints").join(format!("{corpus}-{model}.jsonl"))
    }

    pub fn reduced_path(&self, corpus: &str, size: usize, model: &str, red: &str) -> PathBuf {
        self.cache.join("reduced").join(format!("{corpus}-{size}-{model}-{red}.emb1"))
    }

    pub fn case_csv_path(&self, case_id: &str) -> PathBuf {
        self.cache.join("cases").join(format!("{case_id}.csv"))
    }

    pub fn case_manifest_path(&self, case_id: &str) -> PathBuf {
        self.cache.join("cases").join(format!("{case_id}.json"))
    }

    pub fn features_path(&self, case_id: &str) -> PathBuf {
        self.cache.join("features").join(format!("{case_id}.csv"))
    }

    pub fn scores_path(&self, kind: ScorerKind, model: &str) -> PathBuf {
        self.cache.join("scores").join(format!("{}-{model}.jsonl", kind.as_str()))
    }

    pub fn correlations_path(&self) -> PathBuf {
        self.output.join("correlations.csv")
    }

    pub fn skipped_path(&self) -> PathBuf {
        self.output.join("correlations_skipped.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.output.join("report")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output.join("manifest.json")
    }
}

/// One cluster-grid cell.
#[derive(Debug, Clone)]
pub struct ClusterCell {
    pub corpus: String,
    pub size: usize,
    pub embedding: String,
    pub reduction: ReductionSpec,
    pub algo: CellAlgo,
}

#[derive(Debug, Clone)]
pub enum CellAlgo {
    KMeans(usize),
    Ward(usize),
    External(config::ExternalAssignments),
}

impl ClusterCell {
    pub fn case_id(&self) -> String {
        let algo = match &self.algo {
            CellAlgo::KMeans(k) => format!("kmeans-k{k}"),
            CellAlgo::Ward(k) => format!("ward-k{k}"),
            CellAlgo::External(x) => format!("ext-{}", x.label),
        };
        format!(
            "{}-{}-{}-{}-{}",
            self.corpus,
            self.size,
            self.embedding,
            self.reduction.label(),
            algo
        )
    }
}

/// The full cluster grid in deterministic order: corpora x sizes x
/// embeddings x reductions x (native algorithms x ks, then external files).
pub fn cluster_cells(config: &Config) -> Vec<ClusterCell> {
    let reductions = config.reduction_specs();
    let mut cells = Vec::new();
    for corpus in &config.corpora {
        for &size in &config.run.sizes {
            for emb in &config.embeddings {
                for red in &reductions {
                    for algo in &config.clustering.algorithms {
                        for &k in &config.run.target_ks {
                            let algo = match algo.as_str() {
                                "kmeans" => CellAlgo::KMeans(k),
                                "ward" => CellAlgo::Ward(k),
                                _ => unreachable!("validated"),
                            };
                            cells.push(ClusterCell {
                                corpus: corpus.name.clone(),
                                size,
                                embedding: emb.model.clone(),
                                reduction: red.clone(),
                                algo,
                            });
                        }
                    }
                    for x in &config.clustering.external {
                        if x.corpus == corpus.name
                            && x.size == size
                            && x.embedding == emb.model
                            && x.reduction == red.label()
                        {
                            cells.push(ClusterCell {
                                corpus: corpus.name.clone(),
                                size,
                                embedding: emb.model.clone(),
                                reduction: red.clone(),
                                algo: CellAlgo::External(x.clone()),
                            });
                        }
                    }
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaskRecord {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<String>,
}

impl TaskRecord {
    fn done(outputs: Vec<PathBuf>) -> Self {
        TaskRecord {
            status: "done".into(),
            detail: None,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }

    fn done_with(outputs: Vec<PathBuf>, detail: String) -> Self {
        TaskRecord { detail: Some(detail), ..TaskRecord::done(outputs) }
    }

    fn failed(detail: String) -> Self {
        TaskRecord { status: "failed".into(), detail: Some(detail), outputs: vec![] }
    }

    fn skipped(detail: String) -> Self {
        TaskRecord { status: "skipped".into(), detail: Some(detail), outputs: vec![] }
    }

    /// Validity rejections are expected outcomes, not failures; they do not
    /// affect the exit code.
    fn rejected(detail: String) -> Self {
        TaskRecord { status: "rejected".into(), detail: Some(detail), outputs: vec![] }
    }

    pub fn is_done(&self) -> bool {
        self.status == "done"
    }
}

/// Per-task status ledger, persisted after every stage. Contains no
/// timestamps, so identical runs produce identical manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// Stage name -> "complete" or "partial:<failed+skipped>".
    #[serde(default)]
    pub stages: BTreeMap<String, String>,
    pub tasks: BTreeMap<String, TaskRecord>,
}

impl RunManifest {
    pub fn load_or_new(env: &RunEnv, config: &Config) -> Result<RunManifest, RunnerError> {
        let path = env.manifest_path();
        let expected = config.hash();
        if path.exists() {
            let manifest: RunManifest = serde_json::from_reader(std::fs::File::open(&path)?)?;
            if manifest.config_hash != expected {
                return Err(RunnerError::ManifestMismatch {
                    found: manifest.config_hash,
                    expected,
                });
            }
            Ok(manifest)
        } else {
            Ok(RunManifest {
                config_hash: expected,
                stages: BTreeMap::new(),
                tasks: BTreeMap::new(),
            })
        }
    }

    pub fn save(&self, env: &RunEnv) -> Result<(), RunnerError> {
        std::fs::create_dir_all(&env.output)?;
        let tmp = env.manifest_path().with_extension("json.tmp");
        serde_json::to_writer_pretty(std::fs::File::create(&tmp)?, self)?;
        std::fs::rename(tmp, env.manifest_path())?;
        Ok(())
    }

    fn record(&mut self, id: String, rec: TaskRecord) {
        self.tasks.insert(id, rec);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOutcome {
    pub done: usize,
    pub failed: usize,
    pub skipped: usize,
    /// Tasks whose case fell outside the 20-100 cluster validity window.
    pub rejected: usize,
}

impl RunOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failed == 0 && self.skipped == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTask {
    pub id: String,
    pub stage: Stage,
    pub cached: bool,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub tasks: Vec<PlannedTask>,
}

impl Plan {
    pub fn runnable(&self, stage: Stage) -> usize {
        self.tasks.iter().filter(|t| t.stage == stage && !t.cached).count()
    }

    pub fn count(&self, stage: Stage) -> usize {
        self.tasks.iter().filter(|t| t.stage == stage).count()
    }
}

/// Enumerates the full task grid and checks which tasks the cache already
/// satisfies.
pub fn plan(config: &Config, env: &RunEnv) -> Result<Plan, RunnerError> {
    config.validate()?;
    let mut tasks = Vec::new();

    for corpus in &config.corpora {
        for &size in &config.run.sizes {
            tasks.push(PlannedTask {
                id: format!("chunk/{}-{size}", corpus.name),
                stage: Stage::Chunk,
                cached: env.chunks_path(&corpus.name, size).exists(),
            });
        }
    }

    for corpus in &config.corpora {
        for emb in &config.embeddings {
            let cached = match emb.matrices.iter().find(|m| m.corpus == corpus.name) {
                Some(m) => env.resolve(&m.path).exists(),
                None => env.embed_path(&corpus.name, &emb.model).exists(),
            };
            tasks.push(PlannedTask {
                id: format!("embed/{}-{}", corpus.name, emb.model),
                stage: Stage::Embed,
                cached,
            });
        }
    }

    let reductions = config.reduction_specs();
    for corpus in &config.corpora {
        for &size in &config.run.sizes {
            for emb in &config.embeddings {
                for red in &reductions {
                    tasks.push(PlannedTask {
                        id: format!("reduce/{}-{size}-{}-{}", corpus.name, emb.model, red.label()),
                        stage: Stage::Reduce,
                        cached: env
                            .reduced_path(&corpus.name, size, &emb.model, &red.label())
                            .exists(),
                    });
                }
            }
        }
    }

    for cell in cluster_cells(config) {
        let id = cell.case_id();
        let cached =
            env.case_csv_path(&id).exists() && env.case_manifest_path(&id).exists();
        tasks.push(PlannedTask { id: format!("cluster/{id}"), stage: Stage::Cluster, cached });
    }

    for scorer in &config.scorers {
        let kind = scorer.kind().map_err(RunnerError::Config)?;
        match kind {
            ScorerKind::File => {
                tasks.push(PlannedTask {
                    id: format!("score/{}", scorer.label()),
                    stage: Stage::Score,
                    cached: env.scores_path(kind, &scorer.model).exists(),
                });
            }
            _ => {
                let cache_path = env.scores_path(kind, &scorer.model);
                let cache = if cache_path.exists() {
                    Some(ScoreCache::open(&cache_path).map_err(|e| RunnerError::Config(e.to_string()))?)
                } else {
                    None
                };
                for corpus in &config.corpora {
                    let cached = match (&cache, largest_chunked_size(config, env, &corpus.name)) {
                        (Some(cache), Some(size)) => {
                            match read_chunks_file(&env.chunks_path(&corpus.name, size)) {
                                Ok(chunks) => chunks.iter().all(|c| {
                                    cache
                                        .get(&c.doc_id, kind.as_str(), &scorer.model, &c.sha256)
                                        .is_some()
                                }),
                                Err(_) => false,
                            }
                        }
                        _ => false,
                    };
                    tasks.push(PlannedTask {
                        id: format!("score/{}-{}", scorer.label(), corpus.name),
                        stage: Stage::Score,
                        cached,
                    });
                }
            }
        }
    }

    for cell in cluster_cells(config) {
        let id = cell.case_id();
        tasks.push(PlannedTask {
            id: format!("features/{id}"),
            stage: Stage::Features,
            cached: env.features_path(&id).exists(),
        });
    }

    tasks.push(PlannedTask { id: "correlate".into(), stage: Stage::Correlate, cached: false });
    tasks.push(PlannedTask { id: "report".into(), stage: Stage::Report, cached: false });

    Ok(Plan { tasks })
}

fn largest_chunked_size(config: &Config, env: &RunEnv, corpus: &str) -> Option<usize> {
    config
        .run
        .sizes
        .iter()
        .copied()
        .filter(|&s| env.chunks_path(corpus, s).exists())
        .max()
}

/// Runs every stage the target needs, in order, resuming from cached
/// artifacts. Cell failures are recorded in the manifest, not raised.
pub fn run(config: &Config, env: &RunEnv, target: Stage) -> Result<RunOutcome, RunnerError> {
    config.validate()?;
    std::fs::create_dir_all(&env.cache)?;
    std::fs::create_dir_all(&env.output)?;
    let mut manifest = RunManifest::load_or_new(env, config)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.parallelism)
        .build()
        .map_err(|e| RunnerError::Config(format!("thread pool: {e}")))?;

    let stages = target.closure();
    for stage in ALL_STAGES {
        if !stages.contains(&stage) {
            continue;
        }
        let results: Vec<(String, TaskRecord)> = match stage {
            Stage::Chunk => chunk_stage(config, env, &pool),
            Stage::Embed => embed_stage(config, env),
            Stage::Reduce => reduce_stage(config, env, &pool),
            Stage::Cluster => cluster_stage(config, env, &pool),
            Stage::Score => score_stage(config, env),
            Stage::Features => features_stage(config, env, &pool),
            Stage::Correlate => correlate_stage(config, env)?,
            Stage::Report => {
                let rec = match write_report(config, env) {
                    Ok(paths) => TaskRecord::done(paths),
                    Err(e) => TaskRecord::failed(e.to_string()),
                };
                vec![("report".to_string(), rec)]
            }
        };
        let troubled = results
            .iter()
            .filter(|(_, r)| r.status == "failed" || r.status == "skipped")
            .count();
        for (id, rec) in results {
            manifest.record(id, rec);
        }
        let status = if troubled == 0 {
            "complete".to_string()
        } else {
            format!("partial:{troubled}")
        };
        manifest.stages.insert(stage.name().to_string(), status);
        manifest.save(env)?;
    }

    let mut outcome = RunOutcome { done: 0, failed: 0, skipped: 0, rejected: 0 };
    for rec in manifest.tasks.values() {
        match rec.status.as_str() {
            "done" => outcome.done += 1,
            "failed" => outcome.failed += 1,
            "rejected" => outcome.rejected += 1,
            _ => outcome.skipped += 1,
        }
    }
    Ok(outcome)
}

fn chunk_stage(
    config: &Config,
    env: &RunEnv,
    pool: &rayon::ThreadPool,
) -> Vec<(String, TaskRecord)> {
    use rayon::prelude::*;
    let cells: Vec<(String, PathBuf, usize)> = config
        .corpora
        .iter()
        .flat_map(|c| {
            config
                .run
                .sizes
                .iter()
                .map(move |&s| (c.name.clone(), env.resolve(&c.path), s))
        })
        .collect();
    pool.install(|| {
        cells
            .par_iter()
            .map(|(name, path, size)| {
                let id = format!("chunk/{name}-{size}");
                let out = env.chunks_path(name, *size);
                if out.exists() {
                    return (id, TaskRecord::done(vec![out]));
                }
                let spec = CorpusSpec { name: name.clone(), path: path.clone(), size: *size };
                let rec = (|| -> Result<TaskRecord, String> {
                    let docs = load_corpus(&spec).map_err(|e| e.to_string())?;
                    let chunks: Vec<Chunk> =
                        docs.iter().map(|d| top_chunk(d, DEFAULT_CHUNK_LIMIT)).collect();
                    if let Some(parent) = out.parent() {
                        std::fs::create_dir_all(parent).map_err(|e| e.to_string())?;
                    }
                    write_chunks_file(&chunks, &out).map_err(|e| e.to_string())?;
                    Ok(TaskRecord::done(vec![out.clone()]))
                })();
                (id, rec.unwrap_or_else(TaskRecord::failed))
            })
            .collect()
    })
}

fn embed_stage(config: &Config, env: &RunEnv) -> Vec<(String, TaskRecord)> {
    let mut out = Vec::new();
    for corpus in &config.corpora {
        for emb in &config.embeddings {
            let id = format!("embed/{}-{}", corpus.name, emb.model);
            let rec = match emb.matrices.iter().find(|m| m.corpus == corpus.name) {
                Some(m) => {
                    let path = env.resolve(&m.path);
                    if path.exists() {
                        TaskRecord::done(vec![path])
                    } else {
                        TaskRecord::failed(format!("matrix file missing: {}", path.display()))
                    }
                }
                None => {
                    let endpoint = emb.endpoint.clone().expect("validated");
                    let target = env.embed_path(&corpus.name, &emb.model);
                    if target.exists() {
                        TaskRecord::done(vec![target])
                    } else {
                        match largest_chunked_size(config, env, &corpus.name) {
                            None => TaskRecord::skipped("no chunked corpus available".into()),
                            Some(size) => {
                                let result = (|| -> Result<TaskRecord, String> {
                                    let chunks =
                                        read_chunks_file(&env.chunks_path(&corpus.name, size))
                                            .map_err(|e| e.to_string())?;
                                    let opts = RemoteEmbedOptions {
                                        batch_size: emb.batch_size,
                                        checkpoint: Some(
                                            env.embed_checkpoint_path(&corpus.name, &emb.model),
                                        ),
                                        ..Default::default()
                                    };
                                    let m = embed_remote(&chunks, &endpoint, &emb.model, &opts)
                                        .map_err(|e| e.to_string())?;
                                    write_matrix(&m, &target).map_err(|e| e.to_string())?;
                                    Ok(TaskRecord::done(vec![target.clone()]))
                                })();
                                result.unwrap_or_else(TaskRecord::failed)
                            }
                        }
                    }
                }
            };
            out.push((id, rec));
        }
    }
    out
}

/// Source path of the raw (unreduced) matrix for (corpus, embedding).
fn raw_matrix_path(config: &Config, env: &RunEnv, corpus: &str, model: &str) -> PathBuf {
    let emb = config
        .embeddings
        .iter()
        .find(|e| e.model == model)
        .expect("validated");
    match emb.matrices.iter().find(|m| m.corpus == corpus) {
        Some(m) => env.resolve(&m.path),
        None => env.embed_path(corpus, model),
    }
}

fn reduce_stage(
    config: &Config,
    env: &RunEnv,
    pool: &rayon::ThreadPool,
) -> Vec<(String, TaskRecord)> {
    use rayon::prelude::*;
    let reductions = config.reduction_specs();
    let mut cells = Vec::new();
    for corpus in &config.corpora {
        for &size in &config.run.sizes {
            for emb in &config.embeddings {
                for red in &reductions {
                    cells.push((corpus.name.clone(), size, emb.model.clone(), red.clone()));
                }
            }
        }
    }
    pool.install(|| {
        cells
            .par_iter()
            .map(|(corpus, size, model, red)| {
                let id = format!("reduce/{corpus}-{size}-{model}-{}", red.label());
                let out = env.reduced_path(corpus, *size, model, &red.label());
                if out.exists() {
                    return (id, TaskRecord::done(vec![out]));
                }
                let rec = reduce_cell(config, env, corpus, *size, model, red, &out);
                (id, rec)
            })
            .collect()
    })
}

fn reduce_cell(
    config: &Config,
    env: &RunEnv,
    corpus: &str,
    size: usize,
    model: &str,
    red: &ReductionSpec,
    out: &Path,
) -> TaskRecord {
    let chunks_path = env.chunks_path(corpus, size);
    if !chunks_path.exists() {
        return TaskRecord::skipped(format!("missing chunks for {corpus}-{size}"));
    }
    let result = (|| -> Result<TaskRecord, String> {
        let chunks = read_chunks_file(&chunks_path).map_err(|e| e.to_string())?;
        let ids: Vec<String> = chunks.iter().map(|c| c.doc_id.clone()).collect();

        let reduced = match red.method {
            ReductionMethod::ExternalUmap => {
                let emb = config
                    .embeddings
                    .iter()
                    .find(|e| e.model == model)
                    .expect("validated");
                let rref = emb
                    .reduced
                    .iter()
                    .find(|r| r.corpus == corpus && r.size == size)
                    .ok_or_else(|| {
                        format!(
                            "no pre-reduced matrix configured for {corpus}-{size}-{model}-{}",
                            red.label()
                        )
                    })?;
                let m = read_matrix(&env.resolve(&rref.path)).map_err(|e| e.to_string())?;
                if m.reduction != *red {
                    return Err(format!(
                        "pre-reduced matrix carries reduction {:?}, expected {:?}",
                        m.reduction.label(),
                        red.label()
                    ));
                }
                m.select_by_ids(&ids).map_err(|e| e.to_string())?
            }
            _ => {
                let raw_path = raw_matrix_path(config, env, corpus, model);
                if !raw_path.exists() {
                    return Ok(TaskRecord::skipped(format!(
                        "missing raw matrix {}",
                        raw_path.display()
                    )));
                }
                let raw = read_matrix(&raw_path).map_err(|e| e.to_string())?;
                if raw.reduction.method != ReductionMethod::None {
                    return Err("raw matrix is already reduced".into());
                }
                let sliced = raw.select_by_ids(&ids).map_err(|e| e.to_string())?;
                match red.method {
                    ReductionMethod::None => sliced,
                    ReductionMethod::Pca => {
                        let out_dim = red.out_dim.expect("validated");
                        reduce_pca(&sliced, out_dim).map_err(|e| e.to_string())?
                    }
                    ReductionMethod::ExternalUmap => unreachable!(),
                }
            }
        };
        write_matrix(&reduced, out).map_err(|e| e.to_string())?;
        Ok(TaskRecord::done(vec![out.to_path_buf()]))
    })();
    result.unwrap_or_else(TaskRecord::failed)
}

fn cluster_stage(
    config: &Config,
    env: &RunEnv,
    pool: &rayon::ThreadPool,
) -> Vec<(String, TaskRecord)> {
    use rayon::prelude::*;
    let cells = cluster_cells(config);
    let seed = config.run.seed;
    pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let case_id = cell.case_id();
                let id = format!("cluster/{case_id}");
                let csv = env.case_csv_path(&case_id);
                let json = env.case_manifest_path(&case_id);
                if csv.exists() && json.exists() {
                    return (id, TaskRecord::done(vec![csv, json]));
                }
                let reduced_path = env.reduced_path(
                    &cell.corpus,
                    cell.size,
                    &cell.embedding,
                    &cell.reduction.label(),
                );
                if !reduced_path.exists() {
                    return (
                        id,
                        TaskRecord::skipped(format!(
                            "missing reduced matrix {}",
                            reduced_path.display()
                        )),
                    );
                }
                let rec = (|| -> Result<TaskRecord, String> {
                    let m = read_matrix(&reduced_path).map_err(|e| e.to_string())?;
                    let case: ClusterCase = match &cell.algo {
                        CellAlgo::KMeans(k) => kmeans(&m, *k, seed).map_err(|e| e.to_string())?,
                        CellAlgo::Ward(k) => ward(&m, *k).map_err(|e| e.to_string())?,
                        CellAlgo::External(x) => {
                            load_assignments(&env.resolve(&x.path), &m, &x.label)
                                .map_err(|e| e.to_string())?
                        }
                    }
                    .with_corpus(cell.corpus.clone(), cell.size);
                    write_case(&case, m.ids(), &csv, &json).map_err(|e| e.to_string())?;
                    let validity = match validate_case(&case) {
                        CaseValidity::Valid => "valid".to_string(),
                        CaseValidity::Rejected(r) => format!("rejected:{}", r.code()),
                    };
                    Ok(TaskRecord::done_with(vec![csv.clone(), json.clone()], validity))
                })();
                (id, rec.unwrap_or_else(TaskRecord::failed))
            })
            .collect()
    })
}

fn score_stage(config: &Config, env: &RunEnv) -> Vec<(String, TaskRecord)> {
    let mut out = Vec::new();
    for scorer in &config.scorers {
        let kind = match scorer.kind() {
            Ok(k) => k,
            Err(e) => {
                out.push((format!("score/{}", scorer.label()), TaskRecord::failed(e)));
                continue;
            }
        };
        match kind {
            ScorerKind::File => {
                let id = format!("score/{}", scorer.label());
                let source = env.resolve(scorer.path.as_ref().expect("validated"));
                let target = env.scores_path(kind, &scorer.model);
                let rec = (|| -> Result<TaskRecord, String> {
                    let records =
                        crate::scoring::load_scores(&source).map_err(|e| e.to_string())?;
                    let mut cache = ScoreCache::open(&target).map_err(|e| e.to_string())?;
                    let added = cache.import(records).map_err(|e| e.to_string())?;
                    Ok(TaskRecord::done_with(
                        vec![target.clone()],
                        format!("imported {added} new records"),
                    ))
                })();
                out.push((id, rec.unwrap_or_else(TaskRecord::failed)));
            }
            _ => {
                let spec = match scorer.to_spec() {
                    Ok(s) => s,
                    Err(e) => {
                        for corpus in &config.corpora {
                            out.push((
                                format!("score/{}-{}", scorer.label(), corpus.name),
                                TaskRecord::failed(e.clone()),
                            ));
                        }
                        continue;
                    }
                };
                if spec.endpoint.is_none() {
                    for corpus in &config.corpora {
                        out.push((
                            format!("score/{}-{}", scorer.label(), corpus.name),
                            TaskRecord::failed(format!(
                                "no endpoint configured and {} unset",
                                crate::http::API_BASE_ENV
                            )),
                        ));
                    }
                    continue;
                }
                let cache_path = env.scores_path(kind, &scorer.model);
                let mut cache = match ScoreCache::open(&cache_path) {
                    Ok(c) => c,
                    Err(e) => {
                        for corpus in &config.corpora {
                            out.push((
                                format!("score/{}-{}", scorer.label(), corpus.name),
                                TaskRecord::failed(e.to_string()),
                            ));
                        }
                        continue;
                    }
                };
                for corpus in &config.corpora {
                    let id = format!("score/{}-{}", scorer.label(), corpus.name);
                    let rec = match largest_chunked_size(config, env, &corpus.name) {
                        None => TaskRecord::skipped("no chunked corpus available".into()),
                        Some(size) => {
                            let opts = ScoreOptions {
                                in_flight: config.run.parallelism,
                                rate_per_sec: scorer.rate_per_sec,
                                ..Default::default()
                            };
                            match read_chunks_file(&env.chunks_path(&corpus.name, size)) {
                                Err(e) => TaskRecord::failed(e.to_string()),
                                Ok(chunks) => {
                                    match score_corpus(&chunks, &spec, &mut cache, &opts) {
                                        Ok(summary) => TaskRecord::done_with(
                                            vec![cache_path.clone()],
                                            format!(
                                                "total {} cached {} calls {} ok {} failed {}{}",
                                                summary.total,
                                                summary.from_cache,
                                                summary.network_calls,
                                                summary.ok,
                                                summary.failed,
                                                if summary.warned_failure_rate {
                                                    " (failure rate above 1%)"
                                                } else {
                                                    ""
                                                }
                                            ),
                                        ),
                                        Err(e) => TaskRecord::failed(e.to_string()),
                                    }
                                }
                            }
                        }
                    };
                    out.push((id, rec));
                }
            }
        }
    }
    out
}

fn features_stage(
    config: &Config,
    env: &RunEnv,
    pool: &rayon::ThreadPool,
) -> Vec<(String, TaskRecord)> {
    use rayon::prelude::*;
    let cells = cluster_cells(config);
    pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let case_id = cell.case_id();
                let id = format!("features/{case_id}");
                let out = env.features_path(&case_id);
                if out.exists() {
                    return (id, TaskRecord::done(vec![out]));
                }
                let csv = env.case_csv_path(&case_id);
                let json = env.case_manifest_path(&case_id);
                if !csv.exists() || !json.exists() {
                    return (id, TaskRecord::skipped("missing cluster case".into()));
                }
                let rec = (|| -> Result<TaskRecord, String> {
                    let manifest: CaseManifest =
                        serde_json::from_reader(std::fs::File::open(&json).map_err(|e| e.to_string())?)
                            .map_err(|e| e.to_string())?;
                    if manifest.validity != "valid" {
                        return Ok(TaskRecord::rejected(manifest.validity));
                    }
                    let reduced_path = env.reduced_path(
                        &cell.corpus,
                        cell.size,
                        &cell.embedding,
                        &cell.reduction.label(),
                    );
                    let m = read_matrix(&reduced_path).map_err(|e| e.to_string())?;
                    let case = read_case(&csv, &json, &m).map_err(|e| e.to_string())?;
                    let rows = feature_table(&m, &case).map_err(|e| e.to_string())?;
                    write_feature_table(&rows, &out).map_err(|e| e.to_string())?;
                    Ok(TaskRecord::done(vec![out.clone()]))
                })();
                (id, rec.unwrap_or_else(TaskRecord::failed))
            })
            .collect()
    })
}

/// A correlation that could not be computed, with the machine-readable reason.
#[derive(Debug, Clone, Serialize)]
pub struct SkippedCorrelation {
    pub case_id: String,
    pub feature: String,
    pub scorer: String,
    pub reason: String,
}

/// Loads everything the correlation join needs for one case.
pub(crate) struct CaseData {
    pub cell: ClusterCell,
    pub case_id: String,
    pub manifest: CaseManifest,
    pub case: ClusterCase,
    pub ids: Vec<String>,
    pub feature_rows: Vec<crate::features::FeatureRow>,
}

pub(crate) fn load_case_data(config: &Config, env: &RunEnv) -> Vec<CaseData> {
    let mut out = Vec::new();
    for cell in cluster_cells(config) {
        let case_id = cell.case_id();
        let csv = env.case_csv_path(&case_id);
        let json = env.case_manifest_path(&case_id);
        if !csv.exists() || !json.exists() {
            continue;
        }
        let Ok(file) = std::fs::File::open(&json) else { continue };
        let Ok(manifest) = serde_json::from_reader::<_, CaseManifest>(file) else { continue };
        let chunks_path = env.chunks_path(&cell.corpus, cell.size);
        let Ok(chunks) = read_chunks_file(&chunks_path) else { continue };
        let ids: Vec<String> = chunks.iter().map(|c| c.doc_id.clone()).collect();
        let Ok(labels_case) = read_case_labels(&csv, &ids) else { continue };
        let case = ClusterCase {
            dataset: manifest.dataset.clone(),
            corpus_size: manifest.corpus_size,
            embedding: manifest.embedding.clone(),
            reduction: manifest.reduction.clone(),
            algorithm: manifest.algorithm.clone(),
            target_k: manifest.target_k,
            seed: manifest.seed,
            n_clusters: manifest.n_clusters,
            labels: labels_case,
        };
        let feature_rows = match read_feature_table(&env.features_path(&case_id)) {
            Ok(rows) => rows,
            Err(_) => Vec::new(),
        };
        out.push(CaseData { cell, case_id, manifest, case, ids, feature_rows });
    }
    out
}

fn read_case_labels(csv_path: &Path, ids: &[String]) -> Result<Vec<i64>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(|e| e.to_string())?;
    let mut by_id: HashMap<String, i64> = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        let id = row.get(0).unwrap_or("").to_string();
        let label: i64 = row
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| format!("bad label: {e}"))?;
        by_id.insert(id, label);
    }
    ids.iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| format!("missing id {id:?}")))
        .collect()
}

/// Ok score records keyed by (doc_id, sha) for one scorer.
pub(crate) fn scorer_record_index(
    env: &RunEnv,
    kind: ScorerKind,
    model: &str,
) -> HashMap<(String, String), ScoreRecord> {
    let path = env.scores_path(kind, model);
    let mut map = HashMap::new();
    if !path.exists() {
        return map;
    }
    if let Ok(records) = crate::scoring::load_scores(&path) {
        for r in records {
            map.insert((r.doc_id.clone(), r.chunk_sha256.clone()), r);
        }
    }
    map
}

/// Score records matching the given chunks (sha-checked), for cluster_scores.
pub(crate) fn records_for_ids(
    index: &HashMap<(String, String), ScoreRecord>,
    chunks: &[(String, String)],
) -> Vec<ScoreRecord> {
    chunks
        .iter()
        .filter_map(|(id, sha)| index.get(&(id.clone(), sha.clone())).cloned())
        .collect()
}

pub(crate) fn chunk_id_shas(env: &RunEnv, corpus: &str, size: usize) -> Option<Vec<(String, String)>> {
    read_chunks_file(&env.chunks_path(corpus, size))
        .ok()
        .map(|chunks| chunks.into_iter().map(|c| (c.doc_id, c.sha256)).collect())
}

fn correlate_stage(config: &Config, env: &RunEnv) -> Result<Vec<(String, TaskRecord)>, RunnerError> {
    let kinds = config.feature_kinds()?;
    let cases = load_case_data(config, env);

    let mut indexes: Vec<(ScorerKind, String, HashMap<(String, String), ScoreRecord>)> = Vec::new();
    for scorer in &config.scorers {
        let kind = scorer.kind().map_err(RunnerError::Config)?;
        indexes.push((kind, scorer.model.clone(), scorer_record_index(env, kind, &scorer.model)));
    }

    let mut results: Vec<CorrelationResult> = Vec::new();
    let mut skipped: Vec<SkippedCorrelation> = Vec::new();

    for data in &cases {
        if data.manifest.validity != "valid" {
            for (_, model, _) in &indexes {
                for kind in &kinds {
                    skipped.push(SkippedCorrelation {
                        case_id: data.case_id.clone(),
                        feature: kind.name(),
                        scorer: model.clone(),
                        reason: data.manifest.validity.clone(),
                    });
                }
            }
            continue;
        }
        let chunk_keys: Vec<(String, String)> =
            match chunk_id_shas(env, &data.cell.corpus, data.cell.size) {
                Some(keys) => keys,
                None => continue,
            };
        for (_kind, model, index) in &indexes {
            let records = records_for_ids(index, &chunk_keys);
            let scores: Vec<ClusterScore> = cluster_scores(&records, &data.case, &data.ids);
            let score_by_cluster: HashMap<usize, f64> =
                scores.iter().map(|s| (s.cluster_id, s.mean)).collect();
            for kind in &kinds {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for row in &data.feature_rows {
                    if let (Some(v), Some(&s)) =
                        (row.value(*kind), score_by_cluster.get(&row.cluster_id))
                    {
                        xs.push(v);
                        ys.push(s);
                    }
                }
                match correlate_values(&xs, &ys) {
                    Ok((tau_b, spearman)) => results.push(CorrelationResult {
                        dataset: data.cell.corpus.clone(),
                        size: data.cell.size,
                        embedding: data.cell.embedding.clone(),
                        reduction: data.cell.reduction.label(),
                        algorithm: data.case.algorithm.to_string(),
                        n_clusters: data.case.n_clusters,
                        feature: kind.name(),
                        scorer: model.clone(),
                        tau_b,
                        spearman,
                        n: xs.len(),
                    }),
                    Err(StatsError::TooFew { got, .. }) => skipped.push(SkippedCorrelation {
                        case_id: data.case_id.clone(),
                        feature: kind.name(),
                        scorer: model.clone(),
                        reason: format!("insufficient_overlap:{got}"),
                    }),
                    Err(StatsError::Undefined(w)) => skipped.push(SkippedCorrelation {
                        case_id: data.case_id.clone(),
                        feature: kind.name(),
                        scorer: model.clone(),
                        reason: format!("degenerate:{w}"),
                    }),
                    Err(e) => skipped.push(SkippedCorrelation {
                        case_id: data.case_id.clone(),
                        feature: kind.name(),
                        scorer: model.clone(),
                        reason: e.to_string(),
                    }),
                }
            }
        }
    }

    write_correlations(&results, &env.correlations_path())?;
    write_skipped(&skipped, &env.skipped_path())?;
    let detail = format!("{} correlations, {} skipped", results.len(), skipped.len());
    Ok(vec![(
        "correlate".to_string(),
        TaskRecord::done_with(vec![env.correlations_path(), env.skipped_path()], detail),
    )])
}

const CORRELATIONS_HEADER: &str =
    "dataset,size,embedding,reduction,algorithm,n_clusters,feature,scorer,tau_b,spearman,n";

fn write_correlations(rows: &[CorrelationResult], path: &Path) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from(CORRELATIONS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.size,
            r.embedding,
            r.reduction,
            r.algorithm,
            r.n_clusters,
            r.feature,
            r.scorer,
            r.tau_b,
            r.spearman,
            r.n
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_skipped(rows: &[SkippedCorrelation], path: &Path) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from("case_id,feature,scorer,reason\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.case_id, r.feature, r.scorer, r.reason));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads correlations.csv back into memory (full float precision survives the
/// shortest-round-trip formatting).
pub fn read_correlations(path: &Path) -> Result<Vec<CorrelationResult>, RunnerError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CORRELATIONS_HEADER => {}
        other => {
            return Err(RunnerError::Report(format!(
                "unexpected correlations header: {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let p: Vec<&str> = line.split(',').collect();
        if p.len() != 11 {
            return Err(RunnerError::Report(format!("bad correlations row: {line:?}")));
        }
        let parse_f = |s: &str| -> Result<f64, RunnerError> {
            s.parse().map_err(|_| RunnerError::Report(format!("bad float {s:?}")))
        };
        let parse_u = |s: &str| -> Result<usize, RunnerError> {
            s.parse().map_err(|_| RunnerError::Report(format!("bad integer {s:?}")))
        };
        out.push(CorrelationResult {
            dataset: p[0].to_string(),
            size: parse_u(p[1])?,
            embedding: p[2].to_string(),
            reduction: p[3].to_string(),
            algorithm: p[4].to_string(),
            n_clusters: parse_u(p[5])?,
            feature: p[6].to_string(),
            scorer: p[7].to_string(),
            tau_b: parse_f(p[8])?,
            spearman: parse_f(p[9])?,
            n: parse_u(p[10])?,
        });
    }
    Ok(out)
}
