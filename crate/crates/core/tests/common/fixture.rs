//! Deterministic synthetic experiment builder: a topic-structured corpus,
//! matching embedding matrix, precomputed score files and a pipeline config.
//! The committed golden fixture and the runner tests both come from here.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use iun_core::corpus::{top_chunk, Document, DEFAULT_CHUNK_LIMIT};
use iun_core::embeddings::{write_matrix, EmbeddingMatrix, ReductionSpec};
use iun_core::scoring::{ScoreRecord, ScoreStatus};

use super::gaussian;

pub struct FixtureParams {
    pub n_docs: usize,
    pub dim: usize,
    pub n_topics: usize,
    pub seed: u64,
    pub sizes: Vec<usize>,
    pub target_ks: Vec<usize>,
    pub pca_dim: usize,
    pub algorithms: Vec<String>,
    pub run_seed: u64,
    pub parallelism: usize,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            n_docs: 500,
            dim: 64,
            n_topics: 25,
            seed: 11,
            sizes: vec![500],
            target_ks: vec![20, 30],
            pca_dim: 20,
            algorithms: vec!["kmeans".into(), "ward".into()],
            run_seed: 7,
            parallelism: 2,
        }
    }
}

const NOUNS: &[&str] = &[
    "council", "storm", "election", "factory", "river", "museum", "airport", "hospital",
    "festival", "bridge", "market", "railway", "harbor", "school", "theater", "stadium",
];
const VERBS: &[&str] = &[
    "reopened", "collapsed", "expanded", "closed", "flooded", "recovered", "vanished",
    "surged", "stalled", "derailed", "merged", "relocated",
];
const PLACES: &[&str] = &[
    "Norwich", "Dresden", "Porto", "Tampere", "Ghent", "Leeds", "Graz", "Malmo",
    "Bergen", "Utrecht", "Basel", "Turin",
];
const TAILS: &[&str] = &[
    "Officials confirmed the report on Monday.",
    "Residents described the scene in detail.",
    "An inquiry is expected to follow.",
    "The mayor promised further updates.",
    "Witnesses spoke to local reporters.",
    "Recovery work continued overnight.",
    "Experts called the development unusual.",
    "A spokesperson declined to comment.",
];

fn synth_text(rng: &mut ChaCha8Rng, topic: usize, long: bool) -> String {
    let lead = format!(
        "The {} {} near {}.",
        NOUNS[topic % NOUNS.len()],
        VERBS[rng.random_range(0..VERBS.len())],
        PLACES[rng.random_range(0..PLACES.len())],
    );
    let extra = if long { 14 } else { rng.random_range(1..4) };
    let mut sentences = vec![lead];
    for _ in 0..extra {
        sentences.push(TAILS[rng.random_range(0..TAILS.len())].to_string());
    }
    sentences.join(" ")
}

/// Builds the experiment files under `dir` and returns the config path.
pub fn build_fixture(dir: &Path, params: &FixtureParams) -> PathBuf {
    std::fs::create_dir_all(dir).expect("fixture dir");
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // topic geometry: centers, with topics scoring >= 4 pulling the nearest
    // half of the other topic centers 20% closer
    let mut centers: Vec<Vec<f64>> = (0..params.n_topics)
        .map(|_| (0..params.dim).map(|_| 3.0 * gaussian(&mut rng)).collect())
        .collect();
    let base_score = |t: usize| 1 + ((t * 7 + 3) % 5) as i64;
    let original = centers.clone();
    for imp in 0..params.n_topics {
        if base_score(imp) < 4 {
            continue;
        }
        let anchor = original[imp].clone();
        let mut others: Vec<(usize, f64)> = (0..params.n_topics)
            .filter(|&c| c != imp)
            .map(|c| {
                let d: f64 = original[c]
                    .iter()
                    .zip(&anchor)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (c, d)
            })
            .collect();
        others.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for &(c, _) in others.iter().take((params.n_topics - 1) / 2) {
            for j in 0..params.dim {
                centers[c][j] += 0.2 * (anchor[j] - centers[c][j]);
            }
        }
    }

    // documents, embeddings, scores
    let mut docs = Vec::new();
    let mut rows = Vec::new();
    let mut llm_records = Vec::new();
    let mut b_records = Vec::new();
    for i in 0..params.n_docs {
        let topic = i % params.n_topics;
        let long = i % 37 == 5;
        let id = format!("doc{i:04}");
        let text = synth_text(&mut rng, topic, long);
        let doc = Document { id: id.clone(), text };
        let chunk = top_chunk(&doc, DEFAULT_CHUNK_LIMIT);

        let row: Vec<f64> =
            centers[topic].iter().map(|v| v + 0.35 * gaussian(&mut rng)).collect();
        rows.push(row);

        let shift: i64 = match rng.random_range(0..6u32) {
            0 => -1,
            1 => 1,
            _ => 0,
        };
        let llm_score = (base_score(topic) + shift).clamp(1, 5) as f64;
        // two deterministic scoring failures exercise the failed-record path
        if i == 123 || i == 321 {
            llm_records.push(ScoreRecord {
                doc_id: id.clone(),
                scorer: "llm".into(),
                model: "LLM".into(),
                chunk_sha256: chunk.sha256.clone(),
                score: None,
                status: ScoreStatus::Failed,
                reason: Some("unparseable answer".into()),
            });
        } else {
            llm_records.push(ScoreRecord::ok(
                id.clone(),
                iun_core::scoring::ScorerKind::Llm,
                "LLM",
                chunk.sha256.clone(),
                llm_score,
            ));
        }
        let b_score = 0.3 * llm_score + 0.25 * rng.random::<f64>();
        b_records.push(ScoreRecord::ok(
            id.clone(),
            iun_core::scoring::ScorerKind::Nli,
            "B",
            chunk.sha256.clone(),
            (b_score * 1e6).round() / 1e6,
        ));
        docs.push(doc);
    }

    let mut corpus = std::fs::File::create(dir.join("corpus.jsonl")).expect("corpus file");
    for d in &docs {
        writeln!(corpus, "{}", serde_json::to_string(d).expect("doc json")).expect("write doc");
    }

    let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
    let matrix = EmbeddingMatrix::new(
        ids,
        params.dim,
        rows.into_iter().flatten().collect(),
        "SYN",
        ReductionSpec::none(),
    )
    .expect("fixture matrix");
    write_matrix(&matrix, &dir.join("embeddings.emb1")).expect("write matrix");

    for (name, records) in [("scores_llm.jsonl", &llm_records), ("scores_b.jsonl", &b_records)] {
        let mut f = std::fs::File::create(dir.join(name)).expect("score file");
        for r in records {
            writeln!(f, "{}", serde_json::to_string(r).expect("record json")).expect("write rec");
        }
    }

    let ks = params
        .target_ks
        .iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let sizes = params
        .sizes
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let algorithms = params
        .algorithms
        .iter()
        .map(|a| format!("{a:?}"))
        .collect::<Vec<_>>()
        .join(", ");
    let config = format!(
        r#"[[corpora]]
name = "FIX"
path = "corpus.jsonl"

[[embeddings]]
model = "SYN"

[[embeddings.matrices]]
corpus = "FIX"
path = "embeddings.emb1"

[[reductions]]
method = "pca"
out_dim = {pca}

[clustering]
algorithms = [{algorithms}]

[[scorers]]
kind = "file"
model = "LLM"
path = "scores_llm.jsonl"

[[scorers]]
kind = "file"
model = "B"
path = "scores_b.jsonl"

[run]
sizes = [{sizes}]
target_ks = [{ks}]
seed = {seed}
parallelism = {par}
output_dir = "out"
cache_dir = "cache"
"#,
        pca = params.pca_dim,
        algorithms = algorithms,
        sizes = sizes,
        ks = ks,
        seed = params.run_seed,
        par = params.parallelism,
    );
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, config).expect("write config");
    config_path
}
