mod common;

use std::sync::Arc;

use common::*;
use metatst::encoder::{AggregationStrategy, EmbeddingCache, HashStub, MetaEmbedder, CACHE_FILE_NAME};
use metatst::model::ModelBatch;
use metatst::nn::Module;
use metatst::prepared::PreparedDataset;
use metatst::train::{train_individual, TrainOptions};

fn embedder(cache: Arc<EmbeddingCache>) -> MetaEmbedder {
    MetaEmbedder::new(Arc::new(HashStub::new(32)), AggregationStrategy::average_pooling(), cache).unwrap()
}

#[test]
fn cached_vectors_equal_recomputation_over_many_texts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(CACHE_FILE_NAME);
    let texts: Vec<String> = (0..1000)
        .map(|i| format!("This sample starts at 2020-01-01T{:02}:00:00 with mean {}.{:04}", i % 24, i, i * 7 % 10000))
        .collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    {
        let e = embedder(Arc::new(EmbeddingCache::open(&path, Some(32)).unwrap()));
        e.prefetch(&refs).unwrap();
        assert_eq!(e.cache().len(), 1000);
    }
    let warm = embedder(Arc::new(EmbeddingCache::open(&path, Some(32)).unwrap()));
    assert_eq!(warm.cache().len(), 1000);
    let cold = embedder(Arc::new(EmbeddingCache::in_memory()));
    for t in &refs {
        let (a, b) = (warm.native_vector(t).unwrap(), cold.native_vector(t).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), "{t}");
    }
}

#[test]
fn cache_survives_a_torn_write() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(CACHE_FILE_NAME);
    {
        let e = embedder(Arc::new(EmbeddingCache::open(&path, Some(32)).unwrap()));
        e.prefetch(&["one", "two", "three"]).unwrap();
    }
    let len = std::fs::metadata(&path).unwrap().len();
    let f = std::fs::OpenOptions::new().write(true).open(&path).unwrap();
    f.set_len(len - 5).unwrap();
    drop(f);
    let e = embedder(Arc::new(EmbeddingCache::open(&path, Some(32)).unwrap()));
    assert_eq!(e.cache().len(), 2);
    e.native_vector("three").unwrap();
    assert_eq!(e.cache().len(), 3);
    let again = EmbeddingCache::open(&path, Some(32)).unwrap();
    assert_eq!(again.len(), 3);
}

#[test]
fn text_encoder_stays_frozen_during_training() {
    let config = metatst::ModelConfig {
        batch_size: 8,
        train_epochs: 2,
        embed_dim: 32,
        ..tiny_config()
    };
    let emb = embedder(Arc::new(EmbeddingCache::in_memory()));
    let probe = "This is a time series dataset named Frozen.";
    let before = emb.native_vector(probe).unwrap();
    let mut rng = seeded(3);
    let mut gen = |n| (0..n).map(|_| random_sample(&mut rng, "Frozen", 24, 1, 4)).collect::<Vec<_>>();
    let ds = PreparedDataset::from_samples(&descriptor("Frozen", "Fixed.", 1), &config, gen(24), gen(4), gen(4), Some(&emb)).unwrap();
    let (model, _) = train_individual(&config, &ds, &TrainOptions::default()).unwrap();
    // No parameter of the model belongs to the text encoder.
    assert!(model.param_names().iter().all(|n| !n.contains("backend") && !n.contains("encoder.embed")));
    let fresh = embedder(Arc::new(EmbeddingCache::in_memory()));
    assert_eq!(emb.native_vector(probe).unwrap(), before);
    assert_eq!(fresh.native_vector(probe).unwrap(), before);
    // Metadata tokens come from the same frozen vectors after training.
    let batch = ModelBatch::from_samples(&[&ds.test.samples[0]], vec![ds.test.meta[0].clone()]).unwrap();
    assert_eq!(model.predict(&batch).unwrap().dim(), (1, 4));
}
