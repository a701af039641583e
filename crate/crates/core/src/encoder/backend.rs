//! Frozen text encoders. Backends hold no trainable state: the same text
//! always maps to the same word-token matrix.

use std::time::Duration;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    ExternalService,
    HashStub,
}

/// W × E word-level vectors for one text.
#[derive(Debug, Clone, PartialEq)]
pub struct WordTokenSequence {
    pub tokens: Array2<f64>,
    /// Row holding a sentence-level special token (e.g. `[CLS]`), if the encoder emits one.
    pub special_token: Option<usize>,
}

impl WordTokenSequence {
    pub fn new(tokens: Array2<f64>, special_token: Option<usize>) -> Result<Self> {
        if tokens.nrows() == 0 || tokens.ncols() == 0 {
            return Err(Error::Backend(format!(
                "empty token matrix {:?}",
                tokens.dim()
            )));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Backend("non-finite token embedding".into()));
        }
        if let Some(i) = special_token {
            if i >= tokens.nrows() {
                return Err(Error::Backend(format!(
                    "special token index {i} out of range for {} rows",
                    tokens.nrows()
                )));
            }
        }
        Ok(WordTokenSequence {
            tokens,
            special_token,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

pub trait TextEmbeddingBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn model_id(&self) -> &str;
    fn native_dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<WordTokenSequence>;

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<WordTokenSequence>> {
        texts.iter().map(|t| self.encode(t)).collect()
    }
}

/// Hermetic backend: each whitespace token maps to a unit vector built from
/// seeded Gaussian vectors of its character trigrams (plus the whole token).
/// Tokens sharing n-grams get correlated vectors.
#[derive(Debug, Clone)]
pub struct HashStub {
    dim: usize,
    with_special: bool,
    model_id: String,
}

pub const DEFAULT_STUB_DIM: usize = 64;

impl Default for HashStub {
    fn default() -> Self {
        Self::new(DEFAULT_STUB_DIM)
    }
}

impl HashStub {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        HashStub {
            dim,
            with_special: false,
            model_id: format!("hash-stub-{dim}"),
        }
    }

    /// Prepend a sentence-level token keyed by the whole text.
    pub fn with_special_token(mut self) -> Self {
        self.with_special = true;
        self.model_id = format!("hash-stub-{}-cls", self.dim);
        self
    }

    fn gaussian(&self, key: &[u8]) -> Array1<f64> {
        let digest = Sha256::digest(key);
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        Array1::from_shape_simple_fn(self.dim, || StandardNormal.sample(&mut rng))
    }

    fn unit(mut v: Array1<f64>) -> Array1<f64> {
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 {
            v /= norm;
        }
        v
    }

    pub fn token_vector(&self, token: &str) -> Array1<f64> {
        let padded: Vec<char> = format!("<{token}>").chars().collect();
        let mut acc = self.gaussian(format!("word:{token}").as_bytes());
        for gram in padded.windows(3) {
            let gram: String = gram.iter().collect();
            acc += &self.gaussian(format!("tri:{gram}").as_bytes());
        }
        Self::unit(acc)
    }
}

impl TextEmbeddingBackend for HashStub {
    fn kind(&self) -> BackendKind {
        BackendKind::HashStub
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn native_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<WordTokenSequence> {
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::Backend("cannot encode empty text".into()));
        }
        let offset = usize::from(self.with_special);
        let mut tokens = Array2::zeros((words.len() + offset, self.dim));
        if self.with_special {
            let cls = Self::unit(self.gaussian(format!("cls:{text}").as_bytes()));
            tokens.row_mut(0).assign(&cls);
        }
        for (i, w) in words.iter().enumerate() {
            tokens.row_mut(i + offset).assign(&self.token_vector(w));
        }
        WordTokenSequence::new(tokens, self.with_special.then_some(0))
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [&'a str],
    #[serde(skip_serializing_if = "Option::is_none")]
    layer: Option<i32>,
}

/// Service reply: either word-level `token_embeddings` or pre-pooled `embeddings`.
#[derive(Debug, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    #[serde(default)]
    pub embeddings: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub token_embeddings: Option<Vec<Vec<Vec<f64>>>>,
}

impl EmbedResponse {
    /// Convert to per-text sequences. Pre-pooled replies become single-row
    /// sequences and are rejected when word-level output is required.
    pub fn into_sequences(self, expected: usize, require_word_level: bool) -> Result<Vec<WordTokenSequence>> {
        let dim = self.dim;
        let to_matrix = |rows: Vec<Vec<f64>>| -> Result<Array2<f64>> {
            let w = rows.len();
            let mut flat = Vec::with_capacity(w * dim);
            for r in rows {
                if r.len() != dim {
                    return Err(Error::Backend(format!(
                        "row of length {} in a response declaring dim {dim}",
                        r.len()
                    )));
                }
                flat.extend(r);
            }
            Array2::from_shape_vec((w, dim), flat).map_err(|e| Error::Backend(e.to_string()))
        };
        let seqs: Vec<WordTokenSequence> = match (self.token_embeddings, self.embeddings) {
            (Some(per_text), _) => per_text
                .into_iter()
                .map(|rows| WordTokenSequence::new(to_matrix(rows)?, None))
                .collect::<Result<_>>()?,
            (None, Some(_)) if require_word_level => {
                return Err(Error::Backend(
                    "service returned pooled embeddings but word-level tokens are required".into(),
                ))
            }
            (None, Some(pooled)) => pooled
                .into_iter()
                .map(|row| WordTokenSequence::new(to_matrix(vec![row])?, None))
                .collect::<Result<_>>()?,
            (None, None) => {
                return Err(Error::Backend(
                    "response has neither `token_embeddings` nor `embeddings`".into(),
                ))
            }
        };
        if seqs.len() != expected {
            return Err(Error::Backend(format!(
                "asked for {expected} texts, got {} embeddings",
                seqs.len()
            )));
        }
        Ok(seqs)
    }
}

/// HTTP JSON client for an external embedding service.
#[derive(Debug, Clone)]
pub struct ServiceBackend {
    pub url: String,
    pub model_id: String,
    pub dim: usize,
    /// Hidden layer for decoder-only models; `None` means the final layer.
    pub layer: Option<i32>,
    pub require_word_level: bool,
    pub texts_per_request: usize,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

pub const EMBED_URL_ENV: &str = "METATST_EMBED_URL";

impl ServiceBackend {
    pub fn new(url: impl Into<String>, model_id: impl Into<String>, dim: usize) -> Self {
        ServiceBackend {
            url: url.into(),
            model_id: model_id.into(),
            dim,
            layer: None,
            require_word_level: true,
            texts_per_request: 32,
            max_in_flight: 4,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn from_env(model_id: impl Into<String>, dim: usize) -> Result<Self> {
        let url = std::env::var(EMBED_URL_ENV)
            .map_err(|_| Error::Config(format!("{EMBED_URL_ENV} is not set")))?;
        Ok(Self::new(url, model_id, dim))
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<WordTokenSequence>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::Backend("cannot encode empty text".into()));
        }
        let body = EmbedRequest {
            model: &self.model_id,
            texts,
            layer: self.layer,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| Error::BackendUnavailable(format!("{}: {e}", self.url)))?;
        let status = resp.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(Error::BackendUnavailable(format!("{}: HTTP {status}", self.url)));
        }
        if status >= 400 {
            return Err(Error::Backend(format!("{}: HTTP {status}", self.url)));
        }
        let parsed: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Backend(format!("malformed response: {e}")))?;
        if parsed.dim != self.dim {
            return Err(Error::Backend(format!(
                "service dim {} differs from configured {}",
                parsed.dim, self.dim
            )));
        }
        parsed.into_sequences(texts.len(), self.require_word_level)
    }

    /// Retries retryable failures with linear backoff.
    pub fn encode_with_retry(&self, texts: &[&str], attempts: usize) -> Result<Vec<WordTokenSequence>> {
        let mut last = None;
        for attempt in 0..attempts.max(1) {
            match self.request(texts) {
                Err(e) if e.is_retryable() => {
                    log::warn!("embedding request failed (attempt {}): {e}", attempt + 1);
                    last = Some(e);
                    std::thread::sleep(Duration::from_millis(200 * (attempt as u64 + 1)));
                }
                other => return other,
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

impl TextEmbeddingBackend for ServiceBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::ExternalService
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn native_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<WordTokenSequence> {
        let mut out = self.request(&[text])?;
        Ok(out.remove(0))
    }

    /// Splits into requests of `texts_per_request`, at most `max_in_flight` concurrently.
    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<WordTokenSequence>> {
        let chunks: Vec<&[&str]> = texts.chunks(self.texts_per_request.max(1)).collect();
        let mut out = Vec::with_capacity(texts.len());
        for wave in chunks.chunks(self.max_in_flight.max(1)) {
            let results: Vec<Result<Vec<WordTokenSequence>>> = std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|chunk| scope.spawn(move || self.encode_with_retry(chunk, 3)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_is_deterministic_and_unit_norm() {
        let stub = HashStub::default();
        let a = stub.encode("abc").unwrap();
        assert_eq!(a, stub.encode("abc").unwrap());
        let seq = stub.encode("the quick brown fox 0.1234").unwrap();
        assert_eq!(seq.len(), 5);
        for row in seq.tokens.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn stub_repeated_and_permuted_tokens() {
        let stub = HashStub::new(16);
        let aa = stub.encode("a a").unwrap();
        assert_eq!(aa.tokens.row(0), aa.tokens.row(1));
        let ab = stub.encode("a b").unwrap();
        let ba = stub.encode("b a").unwrap();
        assert_eq!(ab.tokens.row(0), ba.tokens.row(1));
        assert_eq!(ab.tokens.row(1), ba.tokens.row(0));
        assert_ne!(ab.tokens, ba.tokens);
    }

    #[test]
    fn stub_rejects_empty_text() {
        assert!(HashStub::default().encode("").is_err());
        assert!(HashStub::default().encode("   ").is_err());
    }

    #[test]
    fn stub_special_token() {
        let stub = HashStub::new(8).with_special_token();
        let seq = stub.encode("x y").unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.special_token, Some(0));
        assert_ne!(stub.model_id(), HashStub::new(8).model_id());
    }

    #[test]
    fn response_parsing_modes() {
        let word: EmbedResponse = serde_json::from_str(
            r#"{"dim":2,"token_embeddings":[[[1,0],[0,1]],[[0.5,0.5]]]}"#,
        )
        .unwrap();
        let seqs = word.into_sequences(2, true).unwrap();
        assert_eq!(seqs[0].tokens.dim(), (2, 2));
        assert_eq!(seqs[1].tokens.dim(), (1, 2));

        let pooled = r#"{"dim":2,"embeddings":[[1,2]]}"#;
        let r: EmbedResponse = serde_json::from_str(pooled).unwrap();
        assert!(r.into_sequences(1, true).is_err());
        let r: EmbedResponse = serde_json::from_str(pooled).unwrap();
        assert_eq!(r.into_sequences(1, false).unwrap()[0].len(), 1);

        let bad: EmbedResponse = serde_json::from_str(r#"{"dim":3,"embeddings":[[1,2]]}"#).unwrap();
        assert!(bad.into_sequences(1, false).is_err());
    }

    #[test]
    fn unreachable_service_is_retryable() {
        let svc = ServiceBackend {
            timeout: Duration::from_millis(500),
            ..ServiceBackend::new("http://127.0.0.1:9/embed", "t5-base", 768)
        };
        let err = svc.encode("hello").unwrap_err();
        assert!(err.is_retryable(), "{err}");
    }
}
