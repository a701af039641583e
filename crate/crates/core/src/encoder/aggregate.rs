//! Collapsing a word-token sequence into one native-space vector.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backend::WordTokenSequence;
use crate::error::{Error, Result};
use crate::nn::{join, softmax_backward_rows, softmax_rows, Linear, Module, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    SpecialToken,
    AveragePooling,
    Router,
}

impl AggregationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationKind::SpecialToken => "special_token",
            AggregationKind::AveragePooling => "average_pooling",
            AggregationKind::Router => "router",
        }
    }
}

pub const ROUTER_COUNTS: [usize; 3] = [3, 6, 12];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationStrategy {
    pub kind: AggregationKind,
    /// Number of router tokens; only meaningful for [`AggregationKind::Router`].
    #[serde(default = "default_routers")]
    pub routers: usize,
}

fn default_routers() -> usize {
    ROUTER_COUNTS[0]
}

impl Default for AggregationStrategy {
    fn default() -> Self {
        Self::average_pooling()
    }
}

impl AggregationStrategy {
    pub fn average_pooling() -> Self {
        AggregationStrategy {
            kind: AggregationKind::AveragePooling,
            routers: default_routers(),
        }
    }

    pub fn special_token() -> Self {
        AggregationStrategy {
            kind: AggregationKind::SpecialToken,
            routers: default_routers(),
        }
    }

    pub fn router(count: usize) -> Self {
        AggregationStrategy {
            kind: AggregationKind::Router,
            routers: count,
        }
    }

    pub fn is_parameter_free(&self) -> bool {
        self.kind != AggregationKind::Router
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AggregationKind::Router && !ROUTER_COUNTS.contains(&self.routers) {
            return Err(Error::Config(format!(
                "router count must be one of {ROUTER_COUNTS:?}, got {}",
                self.routers
            )));
        }
        Ok(())
    }

    /// Tag used in cache keys.
    pub fn tag(&self) -> String {
        match self.kind {
            AggregationKind::Router => format!("router{}", self.routers),
            k => k.as_str().to_string(),
        }
    }
}

pub fn average_pooling(seq: &WordTokenSequence) -> Array1<f64> {
    seq.tokens
        .mean_axis(Axis(0))
        .expect("sequence has at least one row")
}

pub fn special_token(seq: &WordTokenSequence) -> Result<Array1<f64>> {
    let idx = seq.special_token.ok_or_else(|| {
        Error::Aggregation("special_token strategy needs an encoder that emits a special token".into())
    })?;
    Ok(seq.tokens.row(idx).to_owned())
}

pub fn aggregate(
    seq: &WordTokenSequence,
    strategy: &AggregationStrategy,
    router: Option<&RouterAggregator>,
) -> Result<Array1<f64>> {
    if seq.is_empty() {
        return Err(Error::Aggregation("empty word sequence".into()));
    }
    match strategy.kind {
        AggregationKind::AveragePooling => Ok(average_pooling(seq)),
        AggregationKind::SpecialToken => special_token(seq),
        AggregationKind::Router => {
            let router = router.ok_or_else(|| {
                Error::Aggregation("router strategy used without initialized router parameters".into())
            })?;
            router.forward(seq).map(|(v, _)| v)
        }
    }
}

/// Learned latent queries that cross-attend over the word tokens.
///
/// Queries are `routers · W_q`, keys are `words · W_k`, values are the raw
/// word vectors split across heads, so every router output is a convex
/// combination of words. The aggregate is the mean over routers.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterAggregator {
    /// R × E
    pub routers: Param,
    pub query: Linear,
    pub key: Linear,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct RouterCache {
    words: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    /// per head, R × W
    probs: Vec<Array2<f64>>,
}

impl RouterAggregator {
    pub fn new<R: Rng + ?Sized>(count: usize, dim: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        if n_heads == 0 || !dim.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "native dim {dim} is not divisible by {n_heads} heads"
            )));
        }
        Ok(RouterAggregator {
            routers: Param::normal(count, dim, 0.02, rng),
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            n_heads,
        })
    }

    pub fn count(&self) -> usize {
        self.routers.value.nrows()
    }

    pub fn dim(&self) -> usize {
        self.routers.value.ncols()
    }

    pub fn forward(&self, seq: &WordTokenSequence) -> Result<(Array1<f64>, RouterCache)> {
        if seq.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "router expects dim {}, sequence has {}",
                self.dim(),
                seq.dim()
            )));
        }
        let words = &seq.tokens;
        let q = self.query.forward(&self.routers.value);
        let k = self.key.forward(words);
        let dh = self.dim() / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((self.count(), self.dim()));
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = h * dh..(h + 1) * dh;
            let mut a = q.slice(s![.., cols.clone()]).dot(&k.slice(s![.., cols.clone()]).t()) * scale;
            softmax_rows(&mut a);
            out.slice_mut(s![.., cols.clone()])
                .assign(&a.dot(&words.slice(s![.., cols])));
            probs.push(a);
        }
        let pooled = out.mean_axis(Axis(0)).expect("at least one router");
        Ok((
            pooled,
            RouterCache {
                words: words.clone(),
                q,
                k,
                probs,
            },
        ))
    }

    /// Accumulates router/query/key gradients given dL/d(pooled).
    pub fn backward(&mut self, cache: &RouterCache, dpooled: ndarray::ArrayView1<'_, f64>) {
        let r = self.count() as f64;
        let dh = self.dim() / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dout_row = dpooled.mapv(|v| v / r);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        for h in 0..self.n_heads {
            let cols = h * dh..(h + 1) * dh;
            let a = &cache.probs[h];
            let words_h = cache.words.slice(s![.., cols.clone()]);
            // every router row receives the same upstream gradient
            let dctx_row = dout_row.slice(s![cols.clone()]);
            let da_row = words_h.dot(&dctx_row);
            let da = Array2::from_shape_fn(a.raw_dim(), |(_, w)| da_row[w]);
            let dscores = softmax_backward_rows(a, &da) * scale;
            dq.slice_mut(s![.., cols.clone()])
                .assign(&dscores.dot(&cache.k.slice(s![.., cols.clone()])));
            dk.slice_mut(s![.., cols.clone()])
                .assign(&dscores.t().dot(&cache.q.slice(s![.., cols])));
        }
        let drouters = self.query.backward(&self.routers.value, &dq);
        self.routers.grad += &drouters;
        self.key.accumulate(&cache.words, &dk);
    }
}

impl Module for RouterAggregator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "tokens"), &self.routers);
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "tokens"), &mut self.routers);
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(rows: Array2<f64>) -> WordTokenSequence {
        WordTokenSequence::new(rows, None).unwrap()
    }

    #[test]
    fn average_of_two_rows() {
        let s = seq(array![[1.0, 0.0], [0.0, 1.0]]);
        let v = aggregate(&s, &AggregationStrategy::average_pooling(), None).unwrap();
        assert_eq!(v, array![0.5, 0.5]);
    }

    #[test]
    fn single_row_is_identity_for_all_strategies() {
        let row = array![[0.3, -1.2, 0.7, 2.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let router = RouterAggregator::new(6, 4, 2, &mut rng).unwrap();
        let plain = seq(row.clone());
        let with_cls = WordTokenSequence::new(row.clone(), Some(0)).unwrap();
        let expect = row.row(0).to_owned();
        assert_eq!(aggregate(&plain, &AggregationStrategy::average_pooling(), None).unwrap(), expect);
        assert_eq!(aggregate(&with_cls, &AggregationStrategy::special_token(), None).unwrap(), expect);
        let r = aggregate(&plain, &AggregationStrategy::router(6), Some(&router)).unwrap();
        for (a, b) in r.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn strategy_errors() {
        let s = seq(array![[1.0, 2.0]]);
        assert!(aggregate(&s, &AggregationStrategy::special_token(), None).is_err());
        assert!(aggregate(&s, &AggregationStrategy::router(3), None).is_err());
        assert!(AggregationStrategy::router(5).validate().is_err());
        assert!(AggregationStrategy::router(12).validate().is_ok());
    }

    #[test]
    fn router_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut router = RouterAggregator::new(3, 4, 2, &mut rng).unwrap();
        let words = seq(Array2::from_shape_fn((5, 4), |(i, j)| ((i * 4 + j) as f64 * 0.7).sin()));
        let weights = array![0.3, -0.5, 1.1, 0.2];
        let loss = |r: &RouterAggregator| r.forward(&words).unwrap().0.dot(&weights);

        let (_, cache) = router.forward(&words).unwrap();
        router.zero_grad();
        router.backward(&cache, weights.view());
        let mut grads = Vec::new();
        router.visit("", &mut |name, p| grads.push((name.to_string(), p.grad.clone())));

        for (name, grad) in grads {
            for idx in 0..grad.len() {
                let mut plus = router.clone();
                let mut minus = router.clone();
                let h = 1e-6;
                let bump = |r: &mut RouterAggregator, d: f64| {
                    r.visit_mut("", &mut |n, p| {
                        if n == name {
                            let cols = p.value.ncols();
                            p.value[[idx / cols, idx % cols]] += d;
                        }
                    })
                };
                bump(&mut plus, h);
                bump(&mut minus, -h);
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = grad.as_slice().unwrap()[idx];
                assert!((fd - an).abs() < 1e-7 + 1e-5 * fd.abs(), "{name}[{idx}]: fd {fd} vs {an}");
            }
        }
    }

    proptest! {
        #[test]
        fn average_pooling_is_permutation_invariant_and_bounded(
            rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..12),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let w = rows.len();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let m = Array2::from_shape_vec((w, 3), flat).unwrap();
            let out = average_pooling(&seq(m.clone()));
            for (j, col) in m.columns().into_iter().enumerate() {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo - 1e-12 <= out[j] && out[j] <= hi + 1e-12);
            }
            let mut order: Vec<usize> = (0..w).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled = m.select(Axis(0), &order);
            let out2 = average_pooling(&seq(shuffled));
            for (a, b) in out.iter().zip(out2.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn router_output_stays_in_column_bounds(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..8),
            seed in any::<u64>(),
        ) {
            let w = rows.len();
            let m = Array2::from_shape_vec((w, 4), rows.into_iter().flatten().collect()).unwrap();
            let router = RouterAggregator::new(3, 4, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let out = router.forward(&seq(m.clone())).unwrap().0;
            for (j, col) in m.columns().into_iter().enumerate() {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo - 1e-9 <= out[j] && out[j] <= hi + 1e-9);
            }
        }
    }
}
