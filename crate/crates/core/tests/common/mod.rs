#![allow(dead_code)]

use std::sync::Arc;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use metatst::data::TimeWindowSample;
use metatst::encoder::{MetaInput, WordTokenSequence};
use metatst::metadata::SampleStats;
use metatst::model::{ModelBatch, Mode};
use metatst::nn::Module;
use metatst::{MetaTst, ModelConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn t0() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2020, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

pub fn random_sample(rng: &mut ChaCha8Rng, id: &str, t_en: usize, c: usize, s: usize) -> TimeWindowSample {
    let x_en = Array1::from_shape_simple_fn(t_en, || rng.random_range(-2.0..2.0));
    let start = t0() + Duration::hours(rng.random_range(0..10_000));
    TimeWindowSample {
        dataset_id: id.into(),
        start_timestamp: start,
        x_en: x_en.clone(),
        x_ex: Array2::from_shape_simple_fn((t_en, c), || rng.random_range(-2.0..2.0)),
        y_en: Array1::from_shape_simple_fn(s, || rng.random_range(-1.0..1.0)),
        stats: SampleStats::from_history(start, x_en.iter().copied()),
        history_rows: 0..t_en,
        target_rows: t_en..t_en + s,
        target_start_timestamp: start + Duration::hours(t_en as i64),
    }
}

pub fn random_native(rng: &mut ChaCha8Rng, e: usize) -> MetaInput {
    MetaInput::Native(Array2::from_shape_simple_fn((3, e), || rng.random_range(-1.0..1.0)))
}

pub fn random_words(rng: &mut ChaCha8Rng, e: usize) -> MetaInput {
    let mut seq = || {
        let w = rng.random_range(1..6);
        Arc::new(
            WordTokenSequence::new(Array2::from_shape_simple_fn((w, e), || rng.random_range(-1.0..1.0)), None)
                .unwrap(),
        )
    };
    MetaInput::Words([seq(), seq(), seq()])
}

/// D=8, L=1, 2 heads, N=2 patches, E=8, S=4, no dropout.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        seq_len: 24,
        exo_len: None,
        pred_len: 4,
        patch_len: 12,
        patch_stride: None,
        e_layers: 1,
        d_model: 8,
        d_ff: 16,
        n_heads: 2,
        embed_dim: 8,
        dropout: 0.0,
        ..ModelConfig::short_term()
    }
}

pub fn mse(pred: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let n = pred.len() as f64;
    pred.iter().zip(y.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}

pub fn loss(model: &MetaTst, batch: &ModelBatch) -> f64 {
    let pred = model.predict(batch).unwrap();
    mse(&pred, &batch.y)
}

/// (name, index, analytic, numeric) for every trainable scalar.
pub fn gradient_pairs(model: &mut MetaTst, batch: &ModelBatch, step: f64) -> Vec<(String, usize, f64, f64)> {
    model.zero_grad();
    let (pred, cache) = model.forward(batch, Mode::Eval).unwrap();
    let n = pred.len() as f64;
    let dpred = (&pred - &batch.y) * (2.0 / n);
    model.backward(&cache, &dpred);

    let mut analytic = Vec::new();
    model.visit("", &mut |name, p| {
        if p.trainable {
            analytic.push((name.to_string(), p.grad.iter().copied().collect::<Vec<_>>()));
        }
    });

    let mut out = Vec::new();
    for (name, grads) in analytic {
        for (idx, &a) in grads.iter().enumerate() {
            let nudge = |m: &mut MetaTst, delta: f64| {
                m.visit_mut("", &mut |n, p| {
                    if n == name {
                        let cols = p.value.ncols();
                        p.value[[idx / cols, idx % cols]] += delta;
                    }
                });
            };
            nudge(model, step);
            let plus = loss(model, batch);
            nudge(model, -2.0 * step);
            let minus = loss(model, batch);
            nudge(model, step);
            out.push((name.clone(), idx, a, (plus - minus) / (2.0 * step)));
        }
    }
    out
}

/// |a - n| / max(|a|, |n|), with gradients below `floor` in both routes
/// compared on an absolute scale of `floor`.
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Below this magnitude central differences at step 1e-6 cannot resolve a
/// 1e-4 relative error (round-off is ~1e-10 absolute for O(1) losses).
pub const GRAD_FLOOR: f64 = 1e-5;

pub fn descriptor(name: &str, note: &str, c: usize) -> metatst::data::DatasetDescriptor {
    let mut variate_names: Vec<String> = (0..c).map(|j| format!("x{j}")).collect();
    variate_names.push("y".into());
    metatst::data::DatasetDescriptor {
        name: name.into(),
        domain: "Synthetic".into(),
        frequency: "1 Hour".into(),
        variate_names,
        endogenous_name: "y".into(),
        endogenous_description: Some("Signal".into()),
        exogenous_descriptions: "Noise".into(),
        source_note: note.into(),
    }
}

pub fn hash_embedder(dim: usize) -> metatst::encoder::MetaEmbedder {
    use metatst::encoder::{AggregationStrategy, EmbeddingCache, HashStub};
    metatst::encoder::MetaEmbedder::new(
        Arc::new(HashStub::new(dim)),
        AggregationStrategy::average_pooling(),
        Arc::new(EmbeddingCache::in_memory()),
    )
    .unwrap()
}

/// Windows with i.i.d. Gaussian histories and future `sign * sin(2πt/24)`.
pub fn sine_samples(rng: &mut ChaCha8Rng, id: &str, n: usize, t_en: usize, c: usize, s: usize, sign: f64) -> Vec<TimeWindowSample> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|i| {
            let mut normal = || -> f64 { StandardNormal.sample(&mut *rng) };
            let x_en = Array1::from_shape_simple_fn(t_en, &mut normal);
            let x_ex = Array2::from_shape_simple_fn((t_en, c), &mut normal);
            let y_en = Array1::from_shape_fn(s, |t| sign * (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin());
            let start = t0() + Duration::hours(i as i64);
            TimeWindowSample {
                dataset_id: id.into(),
                start_timestamp: start,
                stats: SampleStats::from_history(start, x_en.iter().copied()),
                x_en,
                x_ex,
                y_en,
                history_rows: i..i + t_en,
                target_rows: i + t_en..i + t_en + s,
                target_start_timestamp: start + Duration::hours(t_en as i64),
            }
        })
        .collect()
}
