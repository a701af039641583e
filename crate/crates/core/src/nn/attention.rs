use ndarray::{s, Array2};
use rand::Rng;

use super::layers::{softmax_backward_rows, softmax_rows, Linear};
use super::{join, Module, Param};

/// Full (unmasked) multi-head self-attention over each sequence of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    context: Array2<f64>,
    /// Softmax matrices, indexed `b * n_heads + h`, each K × K.
    pub probs: Vec<Array2<f64>>,
    seq_len: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(d_model: usize, n_heads: usize, rng: &mut R) -> Self {
        assert!(n_heads > 0 && d_model.is_multiple_of(n_heads), "d_model must divide into heads");
        MultiHeadAttention {
            query: Linear::new(d_model, d_model, rng),
            key: Linear::new(d_model, d_model, rng),
            value: Linear::new(d_model, d_model, rng),
            out: Linear::new(d_model, d_model, rng),
            n_heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.query.d_out() / self.n_heads
    }

    /// `x` holds `x.nrows() / seq_len` sequences of `seq_len` tokens.
    pub fn forward(&self, x: &Array2<f64>, seq_len: usize) -> (Array2<f64>, AttentionCache) {
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let batch = x.nrows() / seq_len;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut context = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(batch * self.n_heads);
        for b in 0..batch {
            let rows = b * seq_len..(b + 1) * seq_len;
            for h in 0..self.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let mut a = qh.dot(&kh.t()) * scale;
                softmax_rows(&mut a);
                context
                    .slice_mut(s![rows.clone(), cols])
                    .assign(&a.dot(&vh));
                probs.push(a);
            }
        }
        let y = self.out.forward(&context);
        let cache = AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            context,
            probs,
            seq_len,
        };
        (y, cache)
    }

    pub fn backward(&mut self, cache: &AttentionCache, dy: &Array2<f64>) -> Array2<f64> {
        let dcontext = self.out.backward(&cache.context, dy);
        let seq_len = cache.seq_len;
        let batch = cache.x.nrows() / seq_len;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for b in 0..batch {
            let rows = b * seq_len..(b + 1) * seq_len;
            for h in 0..self.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let a = &cache.probs[b * self.n_heads + h];
                let qh = cache.q.slice(s![rows.clone(), cols.clone()]);
                let kh = cache.k.slice(s![rows.clone(), cols.clone()]);
                let vh = cache.v.slice(s![rows.clone(), cols.clone()]);
                let dctx = dcontext.slice(s![rows.clone(), cols.clone()]);
                let da = dctx.dot(&vh.t());
                dv.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&a.t().dot(&dctx));
                let dscores = softmax_backward_rows(a, &da) * scale;
                dq.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&dscores.dot(&kh));
                dk.slice_mut(s![rows.clone(), cols])
                    .assign(&dscores.t().dot(&qh));
            }
        }
        let mut dx = self.query.backward(&cache.x, &dq);
        dx += &self.key.backward(&cache.x, &dk);
        dx += &self.value.backward(&cache.x, &dv);
        dx
    }
}

impl Module for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}
