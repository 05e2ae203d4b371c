//! Content-addressed score cache: JSONL records keyed by
//! (doc_id, scorer, model, chunk_sha256). The cache is the single source of
//! truth for score_corpus — only misses ever reach the network, and a warm
//! rerun performs zero calls.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::corpus::Chunk;

use super::{
    llm_score, nli_score, LlmClient, NliClient, ScoreRecord, ScorerKind, ScorerSpec, ScoringError,
};

type Key = (String, String, String, String);

fn key_of(r: &ScoreRecord) -> Key {
    (r.doc_id.clone(), r.scorer.clone(), r.model.clone(), r.chunk_sha256.clone())
}

fn conflict(existing: &ScoreRecord, incoming: &ScoreRecord) -> Option<ScoringError> {
    if existing.score == incoming.score && existing.status == incoming.status {
        return None;
    }
    Some(ScoringError::ConflictingScores {
        doc_id: incoming.doc_id.clone(),
        a: existing.score.unwrap_or(f64::NAN),
        b: incoming.score.unwrap_or(f64::NAN),
    })
}

pub struct ScoreCache {
    path: Option<PathBuf>,
    map: HashMap<Key, ScoreRecord>,
    writer: Option<BufWriter<File>>,
}

impl ScoreCache {
    /// Opens (or creates) a file-backed cache; existing records are loaded
    /// and validated.
    pub fn open(path: &Path) -> Result<Self, ScoringError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut map = HashMap::new();
        if path.exists() {
            for rec in load_scores(path)? {
                map.insert(key_of(&rec), rec);
            }
        }
        let writer = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(ScoreCache { path: Some(path.to_path_buf()), map, writer: Some(writer) })
    }

    pub fn in_memory() -> Self {
        ScoreCache { path: None, map: HashMap::new(), writer: None }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, doc_id: &str, scorer: &str, model: &str, sha: &str) -> Option<&ScoreRecord> {
        self.map.get(&(doc_id.to_string(), scorer.to_string(), model.to_string(), sha.to_string()))
    }

    /// Inserts a record; identical duplicates are no-ops, disagreeing ones an
    /// error. Returns whether the record was new.
    pub fn insert(&mut self, rec: ScoreRecord) -> Result<bool, ScoringError> {
        rec.validate()?;
        let key = key_of(&rec);
        if let Some(existing) = self.map.get(&key) {
            return match conflict(existing, &rec) {
                Some(e) => Err(e),
                None => Ok(false),
            };
        }
        if let Some(w) = self.writer.as_mut() {
            serde_json::to_writer(&mut *w, &rec)
                .map_err(|e| ScoringError::MalformedRecord { line: 0, reason: e.to_string() })?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.map.insert(key, rec);
        Ok(true)
    }

    pub fn import(&mut self, records: Vec<ScoreRecord>) -> Result<usize, ScoringError> {
        let mut added = 0;
        for rec in records {
            if self.insert(rec)? {
                added += 1;
            }
        }
        Ok(added)
    }

    /// Records for one scorer, sorted by doc id.
    pub fn records_for(&self, scorer: &str, model: &str) -> Vec<ScoreRecord> {
        let mut out: Vec<ScoreRecord> = self
            .map
            .values()
            .filter(|r| r.scorer == scorer && r.model == model)
            .cloned()
            .collect();
        out.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        out
    }
}

/// Reads and validates a JSONL score file. Exact duplicates collapse to one
/// record; disagreeing duplicates are an error.
pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>, ScoringError> {
    let file = File::open(path)?;
    let mut seen: HashMap<Key, usize> = HashMap::new();
    let mut out: Vec<ScoreRecord> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreRecord = serde_json::from_str(&line)
            .map_err(|e| ScoringError::MalformedRecord { line: line_no, reason: e.to_string() })?;
        rec.validate()?;
        let key = key_of(&rec);
        match seen.get(&key) {
            Some(&at) => {
                if let Some(e) = conflict(&out[at], &rec) {
                    return Err(e);
                }
            }
            None => {
                seen.insert(key, out.len());
                out.push(rec);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub in_flight: usize,
    pub rate_per_sec: Option<f64>,
    pub timeout: Duration,
    pub api_key: Option<String>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            in_flight: 4,
            rate_per_sec: None,
            timeout: Duration::from_secs(60),
            api_key: crate::http::api_key_from_env(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub total: usize,
    pub from_cache: usize,
    pub network_calls: usize,
    pub ok: usize,
    pub failed: usize,
    pub failure_fraction: f64,
    /// Set when an LLM scorer's failure fraction exceeds 1%.
    pub warned_failure_rate: bool,
}

struct RateLimiter {
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    fn new(per_sec: f64) -> Self {
        RateLimiter { per_sec, state: Mutex::new((1.0, Instant::now())) }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().expect("limiter poisoned");
                let now = Instant::now();
                let elapsed = now.duration_since(s.1).as_secs_f64();
                s.0 = (s.0 + elapsed * self.per_sec).min(self.per_sec.max(1.0));
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                (1.0 - s.0) / self.per_sec
            };
            std::thread::sleep(Duration::from_secs_f64(wait.min(1.0)));
        }
    }
}

/// Scores every chunk, cache-first. Misses run on up to `in_flight` worker
/// threads under the optional rate limit; fresh records append to the cache.
pub fn score_corpus(
    chunks: &[Chunk],
    spec: &ScorerSpec,
    cache: &mut ScoreCache,
    opts: &ScoreOptions,
) -> Result<ScoreSummary, ScoringError> {
    spec.validate()?;
    if spec.kind == ScorerKind::File {
        return Err(ScoringError::InvalidKind("file".into()));
    }

    let scorer = spec.kind.as_str();
    let misses: Vec<&Chunk> = chunks
        .iter()
        .filter(|c| cache.get(&c.doc_id, scorer, &spec.model, &c.sha256).is_none())
        .collect();
    let from_cache = chunks.len() - misses.len();
    let network_calls = misses.len();

    if !misses.is_empty() {
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| ScoringError::InvalidSpec("missing endpoint".into()))?;
        let limiter = opts.rate_per_sec.map(RateLimiter::new);
        let queue = Mutex::new(misses.iter().copied());
        let (tx, rx) = mpsc::channel::<Result<ScoreRecord, ScoringError>>();
        let workers = opts.in_flight.max(1).min(misses.len());

        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let queue = &queue;
                let limiter = limiter.as_ref();
                let endpoint = endpoint.clone();
                let api_key = opts.api_key.clone();
                scope.spawn(move || {
                    let llm = LlmClient::new(endpoint.clone(), api_key.clone(), opts.timeout);
                    let nli = NliClient::new(endpoint, api_key, opts.timeout);
                    loop {
                        let chunk = {
                            let mut q = queue.lock().expect("queue poisoned");
                            match q.next() {
                                Some(c) => c,
                                None => break,
                            }
                        };
                        if let Some(l) = limiter {
                            l.acquire();
                        }
                        let result = match spec.kind {
                            ScorerKind::Llm => llm_score(&llm, chunk, spec),
                            ScorerKind::Nli => nli_score(&nli, chunk, spec),
                            ScorerKind::File => unreachable!("rejected above"),
                        };
                        if tx.send(result).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(tx);
            for result in rx {
                let rec = result?;
                cache.insert(rec)?;
            }
            Ok::<(), ScoringError>(())
        })?;
    }

    let mut ok = 0usize;
    let mut failed = 0usize;
    for c in chunks {
        match cache.get(&c.doc_id, scorer, &spec.model, &c.sha256) {
            Some(r) if r.is_ok() => ok += 1,
            Some(_) => failed += 1,
            None => {
                return Err(ScoringError::InvalidScore {
                    doc_id: c.doc_id.clone(),
                    reason: "record missing after scoring".into(),
                })
            }
        }
    }
    let failure_fraction = if chunks.is_empty() { 0.0 } else { failed as f64 / chunks.len() as f64 };
    let warned_failure_rate = spec.kind == ScorerKind::Llm && failure_fraction > 0.01;
    if warned_failure_rate {
        log::warn!(
            "LLM scoring failure fraction {:.2}% exceeds the expected 1% ({} of {})",
            failure_fraction * 100.0,
            failed,
            chunks.len()
        );
    }
    Ok(ScoreSummary {
        total: chunks.len(),
        from_cache,
        network_calls,
        ok,
        failed,
        failure_fraction,
        warned_failure_rate,
    })
}
