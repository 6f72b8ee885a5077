//! File formats: corpus and pair JSONL, checkpoints, CSV logs, and atomic
//! writes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stylelab_core::data::corpus::{Corpus, Document};
use stylelab_core::data::tokenizer::Vocab;

use crate::error::{AppError, AppResult};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
    move |source| AppError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp-{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_bytes(path: &Path) -> AppResult<Vec<u8>> {
    if !path.exists() {
        return Err(AppError::MissingInput(path.to_path_buf()));
    }
    fs::read(path).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> AppResult<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

pub fn to_json_pretty<T: Serialize>(path: &Path, value: &T) -> AppResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|source| AppError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    v.push(b'\n');
    Ok(v)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    write_atomic(path, &to_json_pretty(path, value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| AppError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> AppResult<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|source| AppError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> AppResult<Vec<T>> {
    let bytes = read_bytes(path)?;
    let mut rows = Vec::new();
    for line in BufReader::new(bytes.as_slice()).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|source| AppError::Json {
            path: path.to_path_buf(),
            source,
        })?);
    }
    Ok(rows)
}

/// One line of the corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusLine {
    pub id: usize,
    pub author_id: usize,
    pub topic_id: usize,
    pub style_factors: Vec<u32>,
    pub text: String,
}

impl From<&Document> for CorpusLine {
    fn from(d: &Document) -> Self {
        Self {
            id: d.id,
            author_id: d.author_id,
            topic_id: d.topic_id,
            style_factors: d.style_factors.clone(),
            text: d.raw_text.clone(),
        }
    }
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> AppResult<()> {
    let lines: Vec<CorpusLine> = corpus.documents.iter().map(CorpusLine::from).collect();
    write_jsonl(path, &lines)
}

/// Reads a corpus file, tokenizing each text with `vocab`.
pub fn read_corpus(path: &Path, vocab: &Vocab) -> AppResult<Corpus> {
    let lines: Vec<CorpusLine> = read_jsonl(path)?;
    let docs = lines
        .into_iter()
        .map(|l| Document {
            id: l.id,
            author_id: l.author_id,
            topic_id: l.topic_id,
            style_factors: l.style_factors,
            tokens: vocab.tokenize(&l.text),
            raw_text: l.text,
        })
        .collect();
    Ok(Corpus::from_documents(docs, vocab.clone())?)
}

pub const CHECKPOINT_FORMAT: &str = "stylelab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON wrapper around a model. Floats are written in
/// round-trip form, so loading reproduces every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub model: T,
}

pub fn save_checkpoint<T: Serialize>(path: &Path, kind: &str, model: &T) -> AppResult<()> {
    write_json(
        path,
        &Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            model,
        },
    )
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path, kind: &str) -> AppResult<T> {
    let c: Checkpoint<T> = read_json(path)?;
    if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
        return Err(AppError::Invalid(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            c.format,
            c.version
        )));
    }
    if c.kind != kind {
        return Err(AppError::Invalid(format!(
            "{}: expected a {kind} checkpoint, found {}",
            path.display(),
            c.kind
        )));
    }
    Ok(c.model)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> AppResult<()> {
    let csv_err = |source| AppError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| AppError::Invalid(format!("{}: {e}", path.display())))?;
    write_atomic(path, &bytes)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> AppResult<Vec<T>> {
    let bytes = read_bytes(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|source| AppError::Csv {
            path: path.to_path_buf(),
            source,
        })
}
