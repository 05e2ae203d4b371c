//! Corpus ingestion: JSONL news corpora, size-prefixed subsets, sentence
//! splitting, and extraction of the leading chunk that gets embedded and scored.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus file {path}: {source}")]
    FileRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSONL record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: invalid document: {reason}")]
    InvalidDocument { line: usize, reason: String },
    #[error("corpus has only {available} documents, {requested} requested")]
    ShortCorpus { available: usize, requested: usize },
    #[error("chunk digest mismatch for {id:?}: stored {stored}, computed {computed}")]
    DigestMismatch {
        id: String,
        stored: String,
        computed: String,
    },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// One news text with its corpus-unique identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

/// The leading whole-sentence prefix of a document within the character budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub text: String,
    pub char_len: usize,
    pub sha256: String,
}

impl Chunk {
    pub fn new(doc_id: String, text: String) -> Self {
        let char_len = text.chars().count();
        let sha256 = sha256_hex(text.as_bytes());
        Chunk { doc_id, text, char_len, sha256 }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Which corpus file to load and how many leading documents to take.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub name: String,
    pub path: PathBuf,
    pub size: usize,
}

#[derive(Deserialize)]
struct RawDoc {
    id: String,
    text: String,
}

/// Reads the first `spec.size` documents of a JSONL corpus, in file order.
/// Lines past the requested prefix are never parsed.
pub fn load_corpus(spec: &CorpusSpec) -> Result<Vec<Document>, CorpusError> {
    let file = File::open(&spec.path).map_err(|source| CorpusError::FileRead {
        path: spec.path.clone(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut docs = Vec::with_capacity(spec.size.min(1 << 20));
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDoc = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        if raw.id.is_empty() {
            return Err(CorpusError::InvalidDocument {
                line: line_no,
                reason: "empty id".into(),
            });
        }
        if raw.text.trim().is_empty() {
            return Err(CorpusError::InvalidDocument {
                line: line_no,
                reason: "empty text".into(),
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id: raw.id });
        }
        docs.push(Document { id: raw.id, text: raw.text });
        if docs.len() == spec.size {
            return Ok(docs);
        }
    }
    Err(CorpusError::ShortCorpus { available: docs.len(), requested: spec.size })
}

const OPENING_QUOTES: &[char] = &['"', '\'', '\u{201C}', '\u{2018}', '\u{00AB}'];
const CLOSING_QUOTES: &[char] = &['"', '\'', '\u{201D}', '\u{2019}', '\u{00BB}', ')'];

/// Titles and other dotted tokens that never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "St.", "Jr.", "Sr.", "Gen.", "Rep.", "Sen.", "Gov.",
    "Lt.", "Col.", "Sgt.", "Capt.", "Mt.", "Ft.", "vs.", "etc.", "e.g.", "i.e.", "Inc.", "Ltd.",
    "Co.", "Corp.", "No.", "Jan.", "Feb.", "Mar.", "Apr.", "Jun.", "Jul.", "Aug.", "Sep.",
    "Sept.", "Oct.", "Nov.", "Dec.",
];

fn is_abbreviation(token: &str) -> bool {
    if ABBREVIATIONS.contains(&token) {
        return true;
    }
    // Single-letter initials ("J.") and dotted acronyms ("U.S.", "U.S.A.").
    let chars: Vec<char> = token.chars().collect();
    if chars.len() >= 2 && chars.len() % 2 == 0 {
        let mut alt = true;
        for (i, c) in chars.iter().enumerate() {
            let want_letter = i % 2 == 0;
            if want_letter && !c.is_alphabetic() {
                alt = false;
                break;
            }
            if !want_letter && *c != '.' {
                alt = false;
                break;
            }
        }
        if alt {
            return true;
        }
    }
    false
}

fn is_opener(c: char) -> bool {
    c.is_uppercase() || c.is_ascii_digit() || OPENING_QUOTES.contains(&c)
}

/// Rule-based sentence splitter. Boundaries occur after '.', '!' or '?'
/// (plus any closing quotes) followed by whitespace and an uppercase, digit
/// or opening-quote character, with abbreviation protection on '.'.
/// A text with no detected boundary comes back as a single sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let mut sentences = Vec::new();
    let mut start = 0usize; // index into chars

    let mut i = 0usize;
    while i < n {
        let c = chars[i].1;
        if c == '.' || c == '!' || c == '?' {
            // Absorb closing quotes right after the terminator.
            let mut end = i + 1;
            while end < n && CLOSING_QUOTES.contains(&chars[end].1) {
                end += 1;
            }
            // Need whitespace then an opener for a boundary.
            let mut next = end;
            while next < n && chars[next].1.is_whitespace() {
                next += 1;
            }
            let boundary = next > end && next < n && is_opener(chars[next].1) && {
                if c == '.' {
                    // Token ending at this period, e.g. "Dr." or "U.S.".
                    let mut t = i;
                    while t > start && !chars[t - 1].1.is_whitespace() {
                        t -= 1;
                    }
                    let token: String = chars[t..=i].iter().map(|&(_, ch)| ch).collect();
                    !is_abbreviation(&token)
                } else {
                    true
                }
            };
            if boundary {
                let lo = chars[start].0;
                let hi = if end < n { chars[end].0 } else { text.len() };
                let sentence = text[lo..hi].trim();
                if !sentence.is_empty() {
                    sentences.push(sentence.to_string());
                }
                start = next;
                i = next;
                continue;
            }
        }
        i += 1;
    }
    if start < n {
        let lo = chars[start].0;
        let sentence = text[lo..].trim();
        if !sentence.is_empty() {
            sentences.push(sentence.to_string());
        }
    }
    if sentences.is_empty() {
        let t = text.trim();
        if !t.is_empty() {
            sentences.push(t.to_string());
        }
    }
    sentences
}

/// Greedy whole-sentence prefix within `limit` characters (single joining
/// spaces counted). The first sentence is always kept, even when it alone
/// exceeds the budget.
pub fn top_chunk(doc: &Document, limit: usize) -> Chunk {
    let sentences = split_sentences(&doc.text);
    let mut text = String::new();
    let mut total = 0usize;
    for (i, s) in sentences.iter().enumerate() {
        let len = s.chars().count();
        if i == 0 {
            text.push_str(s);
            total = len;
            continue;
        }
        if total + 1 + len > limit {
            break;
        }
        text.push(' ');
        text.push_str(s);
        total += 1 + len;
    }
    Chunk::new(doc.id.clone(), text)
}

pub const DEFAULT_CHUNK_LIMIT: usize = 1000;

#[derive(Serialize, Deserialize)]
struct ChunkLine {
    id: String,
    chunk: String,
    sha256: String,
}

/// Writes chunks as JSONL with keys "id", "chunk", "sha256".
pub fn write_chunks<W: Write>(chunks: &[Chunk], mut out: W) -> Result<(), CorpusError> {
    for c in chunks {
        let line = ChunkLine {
            id: c.doc_id.clone(),
            chunk: c.text.clone(),
            sha256: c.sha256.clone(),
        };
        serde_json::to_writer(&mut out, &line)
            .map_err(|e| CorpusError::MalformedLine { line: 0, reason: e.to_string() })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_chunks_file(chunks: &[Chunk], path: &Path) -> Result<(), CorpusError> {
    let mut f = File::create(path)?;
    write_chunks(chunks, &mut f)?;
    f.flush()?;
    Ok(())
}

/// Reads a chunk JSONL file, recomputing and checking every digest.
pub fn read_chunks_file(path: &Path) -> Result<Vec<Chunk>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::FileRead {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut chunks = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: ChunkLine = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        let computed = sha256_hex(raw.chunk.as_bytes());
        if computed != raw.sha256 {
            return Err(CorpusError::DigestMismatch {
                id: raw.id,
                stored: raw.sha256,
                computed,
            });
        }
        let char_len = raw.chunk.chars().count();
        chunks.push(Chunk { doc_id: raw.id, text: raw.chunk, char_len, sha256: raw.sha256 });
    }
    Ok(chunks)
}
