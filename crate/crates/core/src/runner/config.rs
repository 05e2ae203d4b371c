//! TOML experiment configuration: which corpora, sizes, embeddings,
//! reductions, clustering algorithms, scorers and features make up the grid,
//! plus run-level knobs. Validation reports the offending field path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embeddings::{ReductionMethod, ReductionSpec};
use crate::features::FeatureKind;
use crate::scoring::{PromptVariant, RetryPolicy, ScorerKind, ScorerSpec};

use super::RunnerError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Config {
    pub corpora: Vec<CorpusEntry>,
    pub embeddings: Vec<EmbeddingEntry>,
    pub reductions: Vec<ReductionEntry>,
    #[serde(default)]
    pub clustering: ClusteringSection,
    pub scorers: Vec<ScorerEntry>,
    #[serde(default)]
    pub features: FeaturesSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixRef {
    pub corpus: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedRef {
    pub corpus: String,
    pub size: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub model: String,
    /// Precomputed raw matrices, one per corpus.
    #[serde(default)]
    pub matrices: Vec<MatrixRef>,
    /// Precomputed reduced matrices for external-umap reductions.
    #[serde(default)]
    pub reduced: Vec<ReducedRef>,
    /// Remote embedding service; used for corpora without a matrix file.
    pub endpoint: Option<String>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_batch_size() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionEntry {
    pub method: String,
    pub out_dim: Option<usize>,
    pub n_neighbors: Option<u32>,
    pub min_dist: Option<f64>,
}

impl ReductionEntry {
    pub fn to_spec(&self) -> Result<ReductionSpec, String> {
        let spec = match self.method.as_str() {
            "none" => ReductionSpec::none(),
            "pca" => ReductionSpec {
                method: ReductionMethod::Pca,
                out_dim: self.out_dim,
                n_neighbors: None,
                min_dist: None,
            },
            "external-umap" => ReductionSpec {
                method: ReductionMethod::ExternalUmap,
                out_dim: self.out_dim,
                n_neighbors: self.n_neighbors,
                min_dist: self.min_dist,
            },
            other => return Err(format!("unknown method {other:?}")),
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClusteringSection {
    #[serde(default)]
    pub algorithms: Vec<String>,
    #[serde(default)]
    pub external: Vec<ExternalAssignments>,
}

/// One externally computed assignment file, pinned to its grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalAssignments {
    pub label: String,
    pub corpus: String,
    pub size: usize,
    pub embedding: String,
    /// Reduction label this file was computed on, e.g. "pca20" or "d20-n10".
    pub reduction: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScorerEntry {
    pub kind: String,
    pub model: String,
    pub endpoint: Option<String>,
    pub path: Option<PathBuf>,
    #[serde(default = "default_prompt_variant")]
    pub prompt_variant: String,
    /// Re-ask unparseable LLM answers at temperatures 0.0 / 0.3 / 0.7.
    #[serde(default)]
    pub escalation: bool,
    pub rate_per_sec: Option<f64>,
}

fn default_prompt_variant() -> String {
    "user".into()
}

impl ScorerEntry {
    pub fn kind(&self) -> Result<ScorerKind, String> {
        match self.kind.as_str() {
            "llm" => Ok(ScorerKind::Llm),
            "nli" => Ok(ScorerKind::Nli),
            "file" => Ok(ScorerKind::File),
            other => Err(format!("unknown scorer kind {other:?}")),
        }
    }

    pub fn to_spec(&self) -> Result<ScorerSpec, String> {
        let kind = self.kind()?;
        let prompt_variant = match self.prompt_variant.as_str() {
            "user" => PromptVariant::User,
            "system" => PromptVariant::System,
            other => return Err(format!("unknown prompt_variant {other:?}")),
        };
        let endpoint = match kind {
            ScorerKind::File => None,
            _ => self.endpoint.clone().or_else(crate::http::api_base_from_env),
        };
        let retry = if self.escalation {
            RetryPolicy::with_escalation()
        } else {
            RetryPolicy::default()
        };
        Ok(ScorerSpec { kind, model: self.model.clone(), endpoint, prompt_variant, retry })
    }

    /// Stable label used in report columns and file names.
    pub fn label(&self) -> &str {
        &self.model
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturesSection {
    #[serde(default = "default_features")]
    pub variants: Vec<String>,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection { variants: default_features() }
    }
}

fn default_features() -> Vec<String> {
    vec!["d90_50".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_ks")]
    pub target_ks: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_sizes() -> Vec<usize> {
    vec![5000, 10000, 15000, 20000]
}

fn default_ks() -> Vec<usize> {
    (20..=100).step_by(10).collect()
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4)
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, RunnerError> {
        let config: Config =
            toml::from_str(text).map_err(|e| RunnerError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config, RunnerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::from_toml(&text)
    }

    /// Hash over the semantic configuration; used to refuse mixing manifests
    /// of different experiments.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        crate::corpus::sha256_hex(canonical.as_bytes())
    }

    pub fn feature_kinds(&self) -> Result<Vec<FeatureKind>, RunnerError> {
        self.features
            .variants
            .iter()
            .enumerate()
            .map(|(i, name)| {
                FeatureKind::parse(name)
                    .map_err(|e| RunnerError::Config(format!("features.variants[{i}]: {e}")))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let fail = |msg: String| Err(RunnerError::Config(msg));
        // labels end up in artifact file names and CSV cells
        let safe_label =
            |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));

        if self.corpora.is_empty() {
            return fail("corpora: at least one corpus required".into());
        }
        for (i, c) in self.corpora.iter().enumerate() {
            if !safe_label(&c.name) {
                return fail(format!(
                    "corpora[{i}].name: {:?} must be non-empty [A-Za-z0-9._-]",
                    c.name
                ));
            }
            if self.corpora[..i].iter().any(|o| o.name == c.name) {
                return fail(format!("corpora[{i}].name: duplicate {:?}", c.name));
            }
        }

        if self.embeddings.is_empty() {
            return fail("embeddings: at least one embedding required".into());
        }
        for (i, e) in self.embeddings.iter().enumerate() {
            if !safe_label(&e.model) {
                return fail(format!(
                    "embeddings[{i}].model: {:?} must be non-empty [A-Za-z0-9._-]",
                    e.model
                ));
            }
            if self.embeddings[..i].iter().any(|o| o.model == e.model) {
                return fail(format!("embeddings[{i}].model: duplicate {:?}", e.model));
            }
            if e.batch_size < 1 {
                return fail(format!("embeddings[{i}].batch_size: must be >= 1"));
            }
            for (j, m) in e.matrices.iter().enumerate() {
                if !self.corpora.iter().any(|c| c.name == m.corpus) {
                    return fail(format!(
                        "embeddings[{i}].matrices[{j}].corpus: unknown corpus {:?}",
                        m.corpus
                    ));
                }
            }
            for (j, r) in e.reduced.iter().enumerate() {
                if !self.corpora.iter().any(|c| c.name == r.corpus) {
                    return fail(format!(
                        "embeddings[{i}].reduced[{j}].corpus: unknown corpus {:?}",
                        r.corpus
                    ));
                }
            }
            for c in &self.corpora {
                let has_matrix = e.matrices.iter().any(|m| m.corpus == c.name);
                if !has_matrix && e.endpoint.is_none() {
                    return fail(format!(
                        "embeddings[{i}]: no matrix for corpus {:?} and no endpoint",
                        c.name
                    ));
                }
            }
        }

        if self.reductions.is_empty() {
            return fail("reductions: at least one reduction required".into());
        }
        let mut labels = Vec::new();
        for (i, r) in self.reductions.iter().enumerate() {
            let spec = r
                .to_spec()
                .map_err(|e| RunnerError::Config(format!("reductions[{i}]: {e}")))?;
            let label = spec.label();
            if labels.contains(&label) {
                return fail(format!("reductions[{i}]: duplicate reduction {label:?}"));
            }
            labels.push(label);
        }

        for (i, a) in self.clustering.algorithms.iter().enumerate() {
            if a != "kmeans" && a != "ward" {
                return fail(format!("clustering.algorithms[{i}]: unknown algorithm {a:?}"));
            }
            if self.clustering.algorithms[..i].contains(a) {
                return fail(format!("clustering.algorithms[{i}]: duplicate {a:?}"));
            }
        }
        for (i, x) in self.clustering.external.iter().enumerate() {
            if !safe_label(&x.label) {
                return fail(format!(
                    "clustering.external[{i}].label: {:?} must be non-empty [A-Za-z0-9._-]",
                    x.label
                ));
            }
            if !self.corpora.iter().any(|c| c.name == x.corpus) {
                return fail(format!("clustering.external[{i}].corpus: unknown {:?}", x.corpus));
            }
            if !self.embeddings.iter().any(|e| e.model == x.embedding) {
                return fail(format!(
                    "clustering.external[{i}].embedding: unknown {:?}",
                    x.embedding
                ));
            }
            if !labels.contains(&x.reduction) {
                return fail(format!(
                    "clustering.external[{i}].reduction: no reduction labeled {:?}",
                    x.reduction
                ));
            }
            if !self.run.sizes.contains(&x.size) {
                return fail(format!(
                    "clustering.external[{i}].size: {} not in run.sizes",
                    x.size
                ));
            }
        }
        if self.clustering.algorithms.is_empty() && self.clustering.external.is_empty() {
            return fail("clustering: no algorithms and no external assignments".into());
        }

        if self.scorers.is_empty() {
            return fail("scorers: at least one scorer required".into());
        }
        for (i, s) in self.scorers.iter().enumerate() {
            let kind = s
                .kind()
                .map_err(|e| RunnerError::Config(format!("scorers[{i}].kind: {e}")))?;
            if !safe_label(&s.model) {
                return fail(format!(
                    "scorers[{i}].model: {:?} must be non-empty [A-Za-z0-9._-]",
                    s.model
                ));
            }
            if self.scorers[..i].iter().any(|o| o.model == s.model) {
                return fail(format!("scorers[{i}].model: duplicate {:?}", s.model));
            }
            match kind {
                ScorerKind::File => {
                    if s.path.is_none() {
                        return fail(format!("scorers[{i}].path: required for kind \"file\""));
                    }
                }
                _ => {
                    s.to_spec()
                        .map_err(|e| RunnerError::Config(format!("scorers[{i}]: {e}")))?;
                }
            }
        }

        for (i, v) in self.features.variants.iter().enumerate() {
            FeatureKind::parse(v)
                .map_err(|e| RunnerError::Config(format!("features.variants[{i}]: {e}")))?;
        }
        if self.features.variants.is_empty() {
            return fail("features.variants: at least one feature required".into());
        }

        if self.run.sizes.is_empty() {
            return fail("run.sizes: at least one size required".into());
        }
        if self.run.target_ks.is_empty() && !self.clustering.algorithms.is_empty() {
            return fail("run.target_ks: at least one k required for native clustering".into());
        }
        let min_size = *self.run.sizes.iter().min().expect("nonempty");
        for (i, &k) in self.run.target_ks.iter().enumerate() {
            if k < 1 || k > min_size {
                return fail(format!(
                    "run.target_ks[{i}]: {k} outside [1, {min_size}] (smallest size)"
                ));
            }
        }
        if self.run.parallelism < 1 {
            return fail("run.parallelism: must be >= 1".into());
        }
        Ok(())
    }

    pub fn reduction_specs(&self) -> Vec<ReductionSpec> {
        self.reductions
            .iter()
            .map(|r| r.to_spec().expect("validated"))
            .collect()
    }
}
