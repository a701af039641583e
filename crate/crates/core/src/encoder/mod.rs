//! Metadata paragraphs → aligned metadata tokens: frozen text encoder,
//! word-token aggregation, then the trainable alignment MLP.

mod aggregate;
mod align;
mod backend;
mod cache;

pub use aggregate::{
    aggregate, average_pooling, special_token, AggregationKind, AggregationStrategy, RouterAggregator,
    RouterCache, ROUTER_COUNTS,
};
pub use align::{AlignCache, ModalAlign};
pub use backend::{
    BackendKind, EmbedResponse, HashStub, ServiceBackend, TextEmbeddingBackend, WordTokenSequence,
    DEFAULT_STUB_DIM, EMBED_URL_ENV,
};
pub use cache::{cache_key, decode_records, encode_record, CacheKey, EmbeddingCache, CACHE_DIR_ENV, CACHE_FILE_NAME};

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::metadata::{MetadataBundle, META_LEVELS, TEMPLATE_VERSION};
use crate::tokens::{TokenBlock, TokenKind};

/// Per-sample metadata input to the model.
#[derive(Debug, Clone, PartialEq)]
pub enum MetaInput {
    /// Aggregated native vectors, M × E (parameter-free strategies).
    Native(Array2<f64>),
    /// Raw word sequences, aggregated inside the model (router strategy).
    Words([Arc<WordTokenSequence>; META_LEVELS]),
}

/// Turns metadata bundles into model inputs, memoizing everything the frozen
/// backend produces.
pub struct MetaEmbedder {
    backend: Arc<dyn TextEmbeddingBackend>,
    strategy: AggregationStrategy,
    cache: Arc<EmbeddingCache>,
    words: RwLock<HashMap<CacheKey, Arc<WordTokenSequence>>>,
}

impl std::fmt::Debug for MetaEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetaEmbedder")
            .field("model_id", &self.backend.model_id())
            .field("strategy", &self.strategy)
            .field("cached", &self.cache.len())
            .finish()
    }
}

impl MetaEmbedder {
    pub fn new(
        backend: Arc<dyn TextEmbeddingBackend>,
        strategy: AggregationStrategy,
        cache: Arc<EmbeddingCache>,
    ) -> Result<Self> {
        strategy.validate()?;
        Ok(MetaEmbedder {
            backend,
            strategy,
            cache,
            words: RwLock::new(HashMap::new()),
        })
    }

    pub fn backend(&self) -> &dyn TextEmbeddingBackend {
        self.backend.as_ref()
    }

    pub fn strategy(&self) -> AggregationStrategy {
        self.strategy
    }

    pub fn native_dim(&self) -> usize {
        self.backend.native_dim()
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn key(&self, text: &str) -> CacheKey {
        cache_key(self.backend.model_id(), TEMPLATE_VERSION, &self.strategy.tag(), text)
    }

    pub fn encode_text(&self, text: &str) -> Result<WordTokenSequence> {
        if text.trim().is_empty() {
            return Err(Error::Metadata("cannot encode empty text".into()));
        }
        self.backend.encode(text)
    }

    /// Aggregated vector without consulting the cache. Values are rounded to
    /// f32 so a cached copy is bitwise identical.
    pub fn compute_native(&self, text: &str) -> Result<Vec<f32>> {
        if !self.strategy.is_parameter_free() {
            return Err(Error::Aggregation(
                "router aggregation is trainable; native vectors are computed inside the model".into(),
            ));
        }
        let seq = self.encode_text(text)?;
        let v = aggregate(&seq, &self.strategy, None)?;
        Ok(v.iter().map(|&x| x as f32).collect())
    }

    pub fn native_vector(&self, text: &str) -> Result<Array1<f64>> {
        let key = self.key(text);
        let stored = match self.cache.get(&key) {
            Some(v) if v.len() == self.native_dim() => v,
            Some(v) => {
                log::warn!(
                    "cache entry has dim {} instead of {}; recomputing",
                    v.len(),
                    self.native_dim()
                );
                Arc::from(self.compute_native(text)?)
            }
            None => self.cache.insert(key, self.compute_native(text)?)?,
        };
        Ok(stored.iter().map(|&x| f64::from(x)).collect())
    }

    pub fn word_sequence(&self, text: &str) -> Result<Arc<WordTokenSequence>> {
        let key = self.key(text);
        if let Some(seq) = self.words.read().expect("word cache poisoned").get(&key) {
            return Ok(seq.clone());
        }
        let seq = Arc::new(self.encode_text(text)?);
        let mut map = self.words.write().expect("word cache poisoned");
        Ok(map.entry(key).or_insert(seq).clone())
    }

    pub fn meta_input(&self, bundle: &MetadataBundle) -> Result<MetaInput> {
        let texts = bundle.texts();
        if self.strategy.is_parameter_free() {
            let mut block = Array2::zeros((META_LEVELS, self.native_dim()));
            for (i, text) in texts.iter().enumerate() {
                block.row_mut(i).assign(&self.native_vector(text)?);
            }
            Ok(MetaInput::Native(block))
        } else {
            Ok(MetaInput::Words([
                self.word_sequence(texts[0])?,
                self.word_sequence(texts[1])?,
                self.word_sequence(texts[2])?,
            ]))
        }
    }

    /// Encode uncached texts in one backend batch.
    pub fn prefetch(&self, texts: &[&str]) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let missing: Vec<&str> = texts
            .iter()
            .copied()
            .filter(|t| seen.insert(*t))
            .filter(|t| {
                let key = self.key(t);
                if self.strategy.is_parameter_free() {
                    self.cache.get(&key).is_none()
                } else {
                    !self.words.read().expect("word cache poisoned").contains_key(&key)
                }
            })
            .collect();
        if missing.is_empty() {
            return Ok(());
        }
        let seqs = self.backend.encode_batch(&missing)?;
        for (text, seq) in missing.iter().zip(seqs) {
            let key = self.key(text);
            if self.strategy.is_parameter_free() {
                let v = aggregate(&seq, &self.strategy, None)?;
                self.cache.insert(key, v.iter().map(|&x| x as f32).collect())?;
            } else {
                self.words
                    .write()
                    .expect("word cache poisoned")
                    .entry(key)
                    .or_insert_with(|| Arc::new(seq));
            }
        }
        Ok(())
    }

    /// Full metadata embedding: aggregate each level, then align to model space.
    pub fn meta_embed(
        &self,
        bundle: &MetadataBundle,
        align: &ModalAlign,
        router: Option<&RouterAggregator>,
    ) -> Result<TokenBlock> {
        let native = match self.meta_input(bundle)? {
            MetaInput::Native(block) => block,
            MetaInput::Words(seqs) => {
                let mut block = Array2::zeros((META_LEVELS, self.native_dim()));
                for (i, seq) in seqs.iter().enumerate() {
                    block.row_mut(i).assign(&aggregate(seq, &self.strategy, router)?);
                }
                block
            }
        };
        if native.ncols() != align.native_dim() {
            return Err(Error::Shape(format!(
                "alignment expects native dim {}, backend gives {}",
                align.native_dim(),
                native.ncols()
            )));
        }
        Ok(TokenBlock::new(align.forward(&native).0, TokenKind::Meta))
    }
}
