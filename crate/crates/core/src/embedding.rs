//! Phrase embeddings: file and HTTP-service backed lookup with a cache, and cosine similarity.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub const EMBEDDING_FORMAT_VERSION: u32 = 1;

const SERVICE_TIMEOUT: Duration = Duration::from_secs(10);
const SERVICE_RETRIES: u32 = 2;
const RETRY_BASE_DELAY: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("no embedding for phrase {0:?}")]
    Missing(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("embedding file {path}: {message}")]
    File { path: String, message: String },
    #[error("embedding service transport error: {0}")]
    Transport(String),
    #[error("embedding service contract violation: {0}")]
    Contract(String),
    #[error("no phrases requested")]
    EmptyRequest,
}

/// A finite, non-empty vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector<F> {
    values: Vec<F>,
}

impl<F: Real> EmbeddingVector<F> {
    pub fn new(values: Vec<F>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::InvalidVector("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector("non-finite entry".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn norm(&self) -> F {
        self.values.iter().map(|&v| v * v).sum::<F>().sqrt()
    }

    /// Converts between float widths.
    pub fn cast<G: Real>(&self) -> EmbeddingVector<G> {
        EmbeddingVector {
            values: self
                .values
                .iter()
                .map(|v| G::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity<F: Real>(a: &[F], b: &[F]) -> Result<F, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let dot: F = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<F>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<F>().sqrt();
    if na == F::zero() || nb == F::zero() {
        return Err(EmbeddingError::ZeroVector);
    }
    let one = F::one();
    Ok((dot / (na * nb)).max(-one).min(one))
}

/// Anything that can turn phrases into vectors, in request order.
pub trait EmbeddingProvider: Sync {
    fn embed(&self, phrases: &[String]) -> Result<Vec<EmbeddingVector<f64>>, EmbeddingError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingSource {
    File(PathBuf),
    Service(String),
}

impl EmbeddingSource {
    /// `http://` and `https://` locations select service mode, anything else is a file.
    pub fn parse(location: &str) -> Self {
        if location.starts_with("http://") || location.starts_with("https://") {
            Self::Service(location.trim_end_matches('/').to_string())
        } else {
            Self::File(PathBuf::from(location))
        }
    }
}

#[derive(Debug, Default)]
struct Cache {
    dim: Option<usize>,
    vectors: HashMap<String, EmbeddingVector<f64>>,
}

impl Cache {
    fn insert(&mut self, text: String, v: EmbeddingVector<f64>) -> Result<(), EmbeddingError> {
        match self.dim {
            Some(d) if d != v.dim() => {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: d,
                    actual: v.dim(),
                })
            }
            None => self.dim = Some(v.dim()),
            _ => {}
        }
        if self.vectors.insert(text.clone(), v).is_some() {
            log::warn!("duplicate embedding for {text:?}; keeping the last one");
        }
        Ok(())
    }
}

/// Cache-first phrase → vector lookup.
///
/// File mode serves only what the file contains. Service mode batches cache
/// misses into one request; requests are serialized per gateway.
pub struct EmbeddingGateway {
    source: EmbeddingSource,
    cache: Mutex<Cache>,
    agent: Option<ureq::Agent>,
}

impl std::fmt::Debug for EmbeddingGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingGateway")
            .field("source", &self.source)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    dim: usize,
    format_version: u32,
}

#[derive(Serialize, Deserialize)]
struct FileRecord {
    text: String,
    vector: Vec<f64>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingGateway {
    /// Opens a file or service location (see [`EmbeddingSource::parse`]).
    pub fn open(location: &str) -> Result<Self, EmbeddingError> {
        match EmbeddingSource::parse(location) {
            EmbeddingSource::File(path) => Self::from_file(path),
            EmbeddingSource::Service(url) => Ok(Self::service(url)),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let file_err = |message: String| EmbeddingError::File {
            path: path.display().to_string(),
            message,
        };
        let file = fs::File::open(path).map_err(|e| file_err(e.to_string()))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header: FileHeader = loop {
            match lines.next() {
                Some((_, Ok(l))) if l.trim().is_empty() => continue,
                Some((_, Ok(l))) => {
                    break serde_json::from_str(&l).map_err(|e| file_err(format!("header: {e}")))?
                }
                Some((_, Err(e))) => return Err(file_err(e.to_string())),
                None => return Err(file_err("missing header record".into())),
            }
        };
        if header.format_version != EMBEDDING_FORMAT_VERSION {
            return Err(file_err(format!(
                "unsupported format_version {}",
                header.format_version
            )));
        }
        if header.dim == 0 {
            return Err(file_err("dim must be positive".into()));
        }
        let mut cache = Cache {
            dim: Some(header.dim),
            ..Default::default()
        };
        for (idx, line) in lines {
            let line = line.map_err(|e| file_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FileRecord = serde_json::from_str(&line)
                .map_err(|e| file_err(format!("line {}: {e}", idx + 1)))?;
            let v = EmbeddingVector::new(rec.vector)
                .map_err(|e| file_err(format!("line {}: {e}", idx + 1)))?;
            cache
                .insert(rec.text, v)
                .map_err(|e| file_err(format!("line {}: {e}", idx + 1)))?;
        }
        Ok(Self {
            source: EmbeddingSource::File(path.to_path_buf()),
            cache: Mutex::new(cache),
            agent: None,
        })
    }

    /// A file-mode gateway over in-memory records.
    pub fn from_records<I>(records: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut cache = Cache::default();
        for (text, values) in records {
            cache.insert(text, EmbeddingVector::new(values)?)?;
        }
        Ok(Self {
            source: EmbeddingSource::File(PathBuf::new()),
            cache: Mutex::new(cache),
            agent: None,
        })
    }

    pub fn service(url: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(SERVICE_TIMEOUT))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            source: EmbeddingSource::Service(url.into().trim_end_matches('/').to_string()),
            cache: Mutex::new(Cache::default()),
            agent: Some(agent),
        }
    }

    pub fn source(&self) -> &EmbeddingSource {
        &self.source
    }

    pub fn dim(&self) -> Option<usize> {
        self.lock().dim
    }

    pub fn cached_len(&self) -> usize {
        self.lock().vectors.len()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Cache> {
        self.cache.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// One vector per phrase, in order.
    pub fn get_vectors<S: AsRef<str>>(
        &self,
        phrases: &[S],
    ) -> Result<Vec<EmbeddingVector<f64>>, EmbeddingError> {
        if phrases.is_empty() {
            return Err(EmbeddingError::EmptyRequest);
        }
        // Held for the whole call: at most one service batch in flight.
        let mut cache = self.lock();
        let mut misses: Vec<String> = Vec::new();
        for p in phrases {
            let p = p.as_ref();
            if !cache.vectors.contains_key(p) && !misses.iter().any(|m| m == p) {
                misses.push(p.to_string());
            }
        }
        if !misses.is_empty() {
            match &self.source {
                EmbeddingSource::File(_) => return Err(EmbeddingError::Missing(misses.swap_remove(0))),
                EmbeddingSource::Service(url) => {
                    let agent = self.agent.as_ref().expect("service gateway has an agent");
                    let fetched = fetch_with_retry(agent, url, &misses)?;
                    if let Some(d) = cache.dim {
                        if d != fetched.dim {
                            return Err(EmbeddingError::Contract(format!(
                                "service dim {} differs from cached dim {d}",
                                fetched.dim
                            )));
                        }
                    }
                    for (text, values) in misses.into_iter().zip(fetched.vectors) {
                        let v = EmbeddingVector::new(values)
                            .map_err(|e| EmbeddingError::Contract(e.to_string()))?;
                        cache.insert(text, v)?;
                    }
                }
            }
        }
        Ok(phrases
            .iter()
            .map(|p| cache.vectors[p.as_ref()].clone())
            .collect())
    }
}

impl EmbeddingProvider for EmbeddingGateway {
    fn embed(&self, phrases: &[String]) -> Result<Vec<EmbeddingVector<f64>>, EmbeddingError> {
        self.get_vectors(phrases)
    }
}

enum Attempt {
    Retry(EmbeddingError),
    Fail(EmbeddingError),
}

fn fetch_with_retry(
    agent: &ureq::Agent,
    url: &str,
    texts: &[String],
) -> Result<EmbedResponse, EmbeddingError> {
    let mut delay = RETRY_BASE_DELAY;
    let mut attempt = 0;
    loop {
        match fetch_once(agent, url, texts) {
            Ok(r) => return Ok(r),
            Err(Attempt::Fail(e)) => return Err(e),
            Err(Attempt::Retry(e)) if attempt >= SERVICE_RETRIES => return Err(e),
            Err(Attempt::Retry(e)) => {
                log::warn!("embedding request failed ({e}); retrying in {delay:?}");
                thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
        }
    }
}

fn fetch_once(agent: &ureq::Agent, url: &str, texts: &[String]) -> Result<EmbedResponse, Attempt> {
    let endpoint = format!("{url}/embed");
    let mut resp = agent
        .post(&endpoint)
        .send_json(EmbedRequest { texts })
        .map_err(|e| Attempt::Retry(EmbeddingError::Transport(e.to_string())))?;
    let status = resp.status().as_u16();
    if status != 200 {
        let err = EmbeddingError::Contract(format!("{endpoint} returned HTTP {status}"));
        return Err(if status >= 500 {
            Attempt::Retry(err)
        } else {
            Attempt::Fail(err)
        });
    }
    let body: EmbedResponse = resp
        .body_mut()
        .read_json()
        .map_err(|e| Attempt::Fail(EmbeddingError::Contract(format!("bad response body: {e}"))))?;
    if body.vectors.len() != texts.len() {
        return Err(Attempt::Fail(EmbeddingError::Contract(format!(
            "requested {} vectors, got {}",
            texts.len(),
            body.vectors.len()
        ))));
    }
    if body.dim == 0 || body.vectors.iter().any(|v| v.len() != body.dim) {
        return Err(Attempt::Fail(EmbeddingError::Contract(format!(
            "vectors do not match declared dim {}",
            body.dim
        ))));
    }
    Ok(body)
}

/// Renders records in the embedding JSON-lines format.
pub fn write_embedding_file<'a, I>(dim: usize, records: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let header = FileHeader {
        dim,
        format_version: EMBEDDING_FORMAT_VERSION,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for (text, vector) in records {
        let rec = FileRecord {
            text: text.to_string(),
            vector: vector.to_vec(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}
