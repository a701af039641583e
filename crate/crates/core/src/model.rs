//! The forecasting network: patch-wise endogenous tokens, series-wise
//! exogenous tokens and aligned metadata tokens are concatenated, fused by a
//! post-norm Transformer encoder, and the endogenous outputs are flattened
//! into a linear forecasting head.
//!
//! Only endogenous tokens carry (learned) positional encodings, so the
//! network is equivariant to any permutation of the exogenous variates and
//! the head, which reads endogenous rows only, is invariant to it.

use ndarray::{s, Array1, Array2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::TimeWindowSample;
use crate::encoder::{AlignCache, MetaInput, ModalAlign, RouterAggregator, RouterCache};
use crate::error::{Error, Result};
use crate::metadata::META_LEVELS;
use crate::nn::{
    all_finite, dropout_backward, dropout_forward, join, Activation, AttentionCache, LayerNorm,
    LayerNormCache, Linear, Module, MultiHeadAttention, Param,
};
use crate::tokens::{TokenBlock, TokenKind};

/// Linear P → D over non-overlapping patches plus learned positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbed {
    pub proj: Linear,
    /// N × D
    pub position: Param,
    pub patch_len: usize,
}

impl PatchEmbed {
    pub fn new(seq_len: usize, patch_len: usize, d_model: usize, rng: &mut dyn RngCore) -> Self {
        let n = seq_len / patch_len;
        PatchEmbed {
            proj: Linear::new(patch_len, d_model, rng),
            position: Param::normal(n, d_model, 0.02, rng),
            patch_len,
        }
    }

    pub fn patch_count(&self) -> usize {
        self.position.value.nrows()
    }

    /// B × T → (B·N) × P, dropping the oldest `T mod P` values.
    fn patches(&self, x_en: &Array2<f64>) -> Result<Array2<f64>> {
        let (b, t) = x_en.dim();
        let p = self.patch_len;
        let n = self.patch_count();
        if t < p || t / p != n {
            return Err(Error::Shape(format!(
                "endogenous length {t} gives {} patches of {p}, model expects {n}",
                t / p
            )));
        }
        let tail = x_en.slice(s![.., t - n * p..]).to_owned();
        tail
            .into_shape_with_order((b * n, p))
            .map_err(|e| Error::Shape(e.to_string()))
    }

    fn forward(&self, x_en: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let patches = self.patches(x_en)?;
        let mut y = self.proj.forward(&patches);
        let n = self.patch_count();
        for (i, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            row += &self.position.value.row(i % n);
        }
        Ok((y, patches))
    }

    fn backward(&mut self, patches: &Array2<f64>, dy: &Array2<f64>) {
        self.proj.accumulate(patches, dy);
        let n = self.patch_count();
        for (i, row) in dy.axis_iter(Axis(0)).enumerate() {
            let mut g = self.position.grad.row_mut(i % n);
            g += &row;
        }
    }
}

impl Module for PatchEmbed {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.proj.visit(&join(prefix, "proj"), f);
        f(&join(prefix, "position"), &self.position);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.proj.visit_mut(&join(prefix, "proj"), f);
        f(&join(prefix, "position"), &mut self.position);
    }
}

/// Post-norm Transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    pub attention: AttentionCache,
    attn_mask: Option<Array2<f64>>,
    norm1: LayerNormCache,
    x1: Array2<f64>,
    f1: Array2<f64>,
    act_mask: Option<Array2<f64>>,
    g: Array2<f64>,
    ff_mask: Option<Array2<f64>>,
    norm2: LayerNormCache,
}

impl EncoderLayer {
    pub fn new(d_model: usize, n_heads: usize, d_ff: usize, dropout: f64, rng: &mut dyn RngCore) -> Self {
        EncoderLayer {
            attention: MultiHeadAttention::new(d_model, n_heads, rng),
            norm1: LayerNorm::new(d_model),
            ff1: Linear::new(d_model, d_ff, rng),
            ff2: Linear::new(d_ff, d_model, rng),
            norm2: LayerNorm::new(d_model),
            dropout,
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        seq_len: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, LayerCache) {
        let (a, attention) = self.attention.forward(x, seq_len);
        let (a, attn_mask) = dropout_forward(a, self.dropout, rng.as_deref_mut());
        let (x1, norm1) = self.norm1.forward(&(x + &a));
        let f1 = self.ff1.forward(&x1);
        let g = Activation::Gelu.forward(&f1);
        let (g, act_mask) = dropout_forward(g, self.dropout, rng.as_deref_mut());
        let f2 = self.ff2.forward(&g);
        let (f2, ff_mask) = dropout_forward(f2, self.dropout, rng);
        let (out, norm2) = self.norm2.forward(&(&x1 + &f2));
        (
            out,
            LayerCache {
                attention,
                attn_mask,
                norm1,
                x1,
                f1,
                act_mask,
                g,
                ff_mask,
                norm2,
            },
        )
    }

    pub fn backward(&mut self, cache: &LayerCache, dy: &Array2<f64>) -> Array2<f64> {
        let dr2 = self.norm2.backward(&cache.norm2, dy);
        let df2 = dropout_backward(dr2.clone(), &cache.ff_mask);
        let dg = self.ff2.backward(&cache.g, &df2);
        let dg = dropout_backward(dg, &cache.act_mask);
        let df1 = Activation::Gelu.backward(&cache.f1, &dg);
        let mut dx1 = self.ff1.backward(&cache.x1, &df1);
        dx1 += &dr2;
        let dr1 = self.norm1.backward(&cache.norm1, &dx1);
        let da = dropout_backward(dr1.clone(), &cache.attn_mask);
        let mut dx = self.attention.backward(&cache.attention, &da);
        dx += &dr1;
        dx
    }
}

impl Module for EncoderLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.attention.visit(&join(prefix, "attention"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.ff1.visit(&join(prefix, "ff1"), f);
        self.ff2.visit(&join(prefix, "ff2"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.ff1.visit_mut(&join(prefix, "ff1"), f);
        self.ff2.visit_mut(&join(prefix, "ff2"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
    }
}

/// A homogeneous batch: every sample has the same number of exogenous variates.
#[derive(Debug, Clone)]
pub struct ModelBatch {
    /// B × T_en
    pub x_en: Array2<f64>,
    /// (B·C) × T_ex, sample `b` variate `j` at row `b·C + j`
    pub x_ex: Array2<f64>,
    pub exo_count: usize,
    /// One entry per sample; empty when metadata is not used.
    pub meta: Vec<MetaInput>,
    /// B × S (zero columns when targets are unknown)
    pub y: Array2<f64>,
}

impl ModelBatch {
    pub fn from_samples(samples: &[&TimeWindowSample], meta: Vec<MetaInput>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("batch"))?;
        let b = samples.len();
        let (t_en, s) = (first.x_en.len(), first.y_en.len());
        let (t_ex, c) = first.x_ex.dim();
        let mut x_en = Array2::zeros((b, t_en));
        let mut x_ex = Array2::zeros((b * c, t_ex));
        let mut y = Array2::zeros((b, s));
        for (i, smp) in samples.iter().enumerate() {
            if smp.x_en.len() != t_en || smp.y_en.len() != s || smp.x_ex.dim() != (t_ex, c) {
                return Err(Error::Shape(format!(
                    "sample {i} of dataset `{}` differs in shape from the first sample of `{}`",
                    smp.dataset_id, first.dataset_id
                )));
            }
            x_en.row_mut(i).assign(&smp.x_en);
            y.row_mut(i).assign(&smp.y_en);
            for j in 0..c {
                x_ex.row_mut(i * c + j).assign(&smp.x_ex.column(j));
            }
        }
        if !meta.is_empty() && meta.len() != b {
            return Err(Error::Shape(format!(
                "{} metadata inputs for {b} samples",
                meta.len()
            )));
        }
        Ok(ModelBatch {
            x_en,
            x_ex,
            exo_count: c,
            meta,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.x_en.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x_en.nrows() == 0
    }
}

/// Token layout of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub batch: usize,
    pub endo: usize,
    pub exo: usize,
    pub meta: usize,
}

impl Layout {
    pub fn tokens(&self) -> usize {
        self.endo + self.exo + self.meta
    }

    pub fn kinds(&self) -> Vec<TokenKind> {
        let mut k = vec![TokenKind::Endo; self.endo];
        k.extend(std::iter::repeat_n(TokenKind::Exo, self.exo));
        k.extend(std::iter::repeat_n(TokenKind::Meta, self.meta));
        k
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layout: Layout,
    patches: Option<Array2<f64>>,
    exo_in: Option<Array2<f64>>,
    routers: Vec<RouterCache>,
    align: Option<AlignCache>,
    pub layers: Vec<LayerCache>,
    head_in: Array2<f64>,
}

impl ForwardCache {
    /// Softmax matrices of layer `l`, indexed `b * n_heads + h`.
    pub fn attention_probs(&self, layer: usize) -> &[Array2<f64>] {
        &self.layers[layer].attention.probs
    }
}

/// Whether dropout is active.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaTst {
    config: ModelConfig,
    pub patch: Option<PatchEmbed>,
    /// Stand-in endogenous token when endogenous input is ablated.
    pub placeholder: Option<Param>,
    pub series: Option<Linear>,
    pub align: Option<ModalAlign>,
    pub router: Option<RouterAggregator>,
    pub layers: Vec<EncoderLayer>,
    pub head: Linear,
}

impl MetaTst {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let ab = config.ablation;
        let patch = (!ab.drop_endo).then(|| PatchEmbed::new(config.seq_len, config.patch_len, d, &mut rng));
        let placeholder = ab.drop_endo.then(|| Param::normal(1, d, 0.02, &mut rng));
        let series = (!ab.drop_exo).then(|| Linear::new(config.exo_len(), d, &mut rng));
        let align = (!ab.drop_meta).then(|| {
            let mut a = ModalAlign::new(config.embed_dim, d, &mut rng);
            a.activation = config.align_activation;
            a
        });
        let router = if !ab.drop_meta && !config.aggregation.is_parameter_free() {
            Some(RouterAggregator::new(
                config.aggregation.routers,
                config.embed_dim,
                config.n_heads,
                &mut rng,
            )?)
        } else {
            None
        };
        let layers = (0..config.e_layers)
            .map(|_| EncoderLayer::new(d, config.n_heads, config.d_ff, config.dropout, &mut rng))
            .collect();
        let head = Linear::new(config.endo_tokens() * d, config.pred_len, &mut rng);
        Ok(MetaTst {
            config: config.clone(),
            patch,
            placeholder,
            series,
            align,
            router,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn uses_meta(&self) -> bool {
        self.align.is_some()
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Prefix of the forecasting-head parameters.
    pub const HEAD: &'static str = "head";

    fn layout(&self, batch: &ModelBatch) -> Layout {
        Layout {
            batch: batch.len(),
            endo: self.config.endo_tokens(),
            exo: if self.series.is_some() { batch.exo_count } else { 0 },
            meta: if self.uses_meta() { META_LEVELS } else { 0 },
        }
    }

    fn check_finite(a: &Array2<f64>, layer: &str) -> Result<()> {
        if all_finite(a) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                layer: layer.to_string(),
            })
        }
    }

    pub fn forward(&self, batch: &ModelBatch, mode: Mode<'_>) -> Result<(Array2<f64>, ForwardCache)> {
        let layout = self.layout(batch);
        let (b, d) = (layout.batch, self.d_model());
        if b == 0 {
            return Err(Error::Empty("batch"));
        }
        let k = layout.tokens();
        let mut h = Array2::zeros((b * k, d));

        // endogenous
        let mut patches = None;
        if let Some(pe) = &self.patch {
            let (tokens, p) = pe.forward(&batch.x_en)?;
            for i in 0..b {
                h.slice_mut(s![i * k..i * k + layout.endo, ..])
                    .assign(&tokens.slice(s![i * layout.endo..(i + 1) * layout.endo, ..]));
            }
            patches = Some(p);
        } else if let Some(ph) = &self.placeholder {
            for i in 0..b {
                h.row_mut(i * k).assign(&ph.value.row(0));
            }
        }

        // exogenous
        let mut exo_in = None;
        if let (Some(series), true) = (&self.series, layout.exo > 0) {
            if batch.x_ex.ncols() != series.d_in() {
                return Err(Error::Shape(format!(
                    "exogenous length {} but model expects {}",
                    batch.x_ex.ncols(),
                    series.d_in()
                )));
            }
            let tokens = series.forward(&batch.x_ex);
            let c = layout.exo;
            for i in 0..b {
                h.slice_mut(s![i * k + layout.endo..i * k + layout.endo + c, ..])
                    .assign(&tokens.slice(s![i * c..(i + 1) * c, ..]));
            }
            exo_in = Some(batch.x_ex.clone());
        }

        // metadata
        let mut routers = Vec::new();
        let mut align_cache = None;
        if let Some(align) = &self.align {
            if batch.meta.len() != b {
                return Err(Error::Shape(format!(
                    "model uses metadata but batch has {} metadata inputs for {b} samples",
                    batch.meta.len()
                )));
            }
            let e = align.native_dim();
            let mut native = Array2::zeros((b * META_LEVELS, e));
            for (i, m) in batch.meta.iter().enumerate() {
                match m {
                    MetaInput::Native(block) => {
                        if block.dim() != (META_LEVELS, e) {
                            return Err(Error::Shape(format!(
                                "metadata block {:?}, expected ({META_LEVELS}, {e})",
                                block.dim()
                            )));
                        }
                        native.slice_mut(s![i * META_LEVELS..(i + 1) * META_LEVELS, ..]).assign(block);
                    }
                    MetaInput::Words(seqs) => {
                        let router = self.router.as_ref().ok_or_else(|| {
                            Error::Aggregation("word-level metadata needs router parameters".into())
                        })?;
                        for (lvl, seq) in seqs.iter().enumerate() {
                            let (v, cache) = router.forward(seq)?;
                            native.row_mut(i * META_LEVELS + lvl).assign(&v);
                            routers.push(cache);
                        }
                    }
                }
            }
            let (tokens, cache) = align.forward(&native);
            let off = layout.endo + layout.exo;
            for i in 0..b {
                h.slice_mut(s![i * k + off..(i + 1) * k, ..])
                    .assign(&tokens.slice(s![i * META_LEVELS..(i + 1) * META_LEVELS, ..]));
            }
            align_cache = Some(cache);
        }
        Self::check_finite(&h, "embedding")?;

        let (h, layers) = self.run_encoder(h, k, mode)?;
        let head_in = Self::gather_endo(&h, layout);
        let pred = self.head.forward(&head_in);
        Self::check_finite(&pred, Self::HEAD)?;
        Ok((
            pred,
            ForwardCache {
                layout,
                patches,
                exo_in,
                routers,
                align: align_cache,
                layers,
                head_in,
            },
        ))
    }

    fn run_encoder(
        &self,
        mut h: Array2<f64>,
        seq_len: usize,
        mode: Mode<'_>,
    ) -> Result<(Array2<f64>, Vec<LayerCache>)> {
        let mut rng: Option<&mut ChaCha8Rng> = match mode {
            Mode::Eval => None,
            Mode::Train(r) => Some(r),
        };
        let mut caches = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (out, cache) = layer.forward(&h, seq_len, rng.as_deref_mut());
            Self::check_finite(&out, &format!("encoder.{l}"))?;
            h = out;
            caches.push(cache);
        }
        Ok((h, caches))
    }

    /// B × (N·D): endogenous rows of each sequence, flattened row-major.
    fn gather_endo(h: &Array2<f64>, layout: Layout) -> Array2<f64> {
        let (k, n) = (layout.tokens(), layout.endo);
        let d = h.ncols();
        let mut out = Array2::zeros((layout.batch, n * d));
        for i in 0..layout.batch {
            let rows = h.slice(s![i * k..i * k + n, ..]);
            out.row_mut(i)
                .assign(&Array1::from_iter(rows.iter().copied()));
        }
        out
    }

    /// Accumulates gradients of every parameter given dL/d(prediction).
    pub fn backward(&mut self, cache: &ForwardCache, dpred: &Array2<f64>) {
        let layout = cache.layout;
        let (b, k, d) = (layout.batch, layout.tokens(), self.d_model());
        let dhead = self.head.backward(&cache.head_in, dpred);
        let mut dh = Array2::zeros((b * k, d));
        for i in 0..b {
            for n in 0..layout.endo {
                dh.row_mut(i * k + n)
                    .assign(&dhead.slice(s![i, n * d..(n + 1) * d]));
            }
        }
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            dh = layer.backward(lc, &dh);
        }

        if let (Some(pe), Some(patches)) = (&mut self.patch, &cache.patches) {
            let mut dtok = Array2::zeros((b * layout.endo, d));
            for i in 0..b {
                dtok.slice_mut(s![i * layout.endo..(i + 1) * layout.endo, ..])
                    .assign(&dh.slice(s![i * k..i * k + layout.endo, ..]));
            }
            pe.backward(patches, &dtok);
        }
        if let Some(ph) = &mut self.placeholder {
            for i in 0..b {
                let mut g = ph.grad.row_mut(0);
                g += &dh.row(i * k);
            }
        }
        if let (Some(series), Some(x_ex)) = (&mut self.series, &cache.exo_in) {
            let c = layout.exo;
            let mut dtok = Array2::zeros((b * c, d));
            for i in 0..b {
                dtok.slice_mut(s![i * c..(i + 1) * c, ..])
                    .assign(&dh.slice(s![i * k + layout.endo..i * k + layout.endo + c, ..]));
            }
            series.accumulate(x_ex, &dtok);
        }
        if let (Some(align), Some(ac)) = (&mut self.align, &cache.align) {
            let off = layout.endo + layout.exo;
            let mut dtok = Array2::zeros((b * META_LEVELS, d));
            for i in 0..b {
                dtok.slice_mut(s![i * META_LEVELS..(i + 1) * META_LEVELS, ..])
                    .assign(&dh.slice(s![i * k + off..(i + 1) * k, ..]));
            }
            let dnative = align.backward(ac, &dtok);
            if let Some(router) = &mut self.router {
                for (r, rc) in cache.routers.iter().enumerate() {
                    router.backward(rc, dnative.row(r));
                }
            }
        }
    }

    /// Accumulates head gradients only; enough when the backbone is frozen.
    pub fn backward_head(&mut self, cache: &ForwardCache, dpred: &Array2<f64>) {
        self.head.accumulate(&cache.head_in, dpred);
    }

    /// True when every trainable parameter belongs to the head.
    pub fn only_head_trainable(&self) -> bool {
        let mut only = true;
        let head = format!("{}.", Self::HEAD);
        self.visit("", &mut |name, p| {
            if p.trainable && !name.starts_with(&head) {
                only = false;
            }
        });
        only
    }

    pub fn predict(&self, batch: &ModelBatch) -> Result<Array2<f64>> {
        self.forward(batch, Mode::Eval).map(|(p, _)| p)
    }

    // Single-sample views of the pipeline stages.

    pub fn patch_embed(&self, x_en: &Array1<f64>) -> Result<TokenBlock> {
        let pe = self
            .patch
            .as_ref()
            .ok_or_else(|| Error::Config("endogenous input is ablated".into()))?;
        let x = x_en.view().insert_axis(Axis(0)).to_owned();
        let (tokens, _) = pe.forward(&x)?;
        Ok(TokenBlock::new(tokens, TokenKind::Endo))
    }

    /// One token per column of `x_ex` (T_ex × C).
    pub fn series_embed(&self, x_ex: &Array2<f64>) -> Result<TokenBlock> {
        let series = self
            .series
            .as_ref()
            .ok_or_else(|| Error::Config("exogenous input is ablated".into()))?;
        if x_ex.ncols() == 0 {
            return Ok(TokenBlock::empty(self.d_model()));
        }
        if x_ex.nrows() != series.d_in() {
            return Err(Error::Shape(format!(
                "exogenous length {} but model expects {}",
                x_ex.nrows(),
                series.d_in()
            )));
        }
        Ok(TokenBlock::new(series.forward(&x_ex.t().to_owned()), TokenKind::Exo))
    }

    /// h⁰ → h^L for a single token sequence, eval mode.
    pub fn encoder_forward(&self, h0: &TokenBlock) -> Result<TokenBlock> {
        if h0.dim() != self.d_model() {
            return Err(Error::Shape(format!(
                "tokens have dim {}, model dim is {}",
                h0.dim(),
                self.d_model()
            )));
        }
        Self::check_finite(&h0.tokens, "input")?;
        let (h, _) = self.run_encoder(h0.tokens.clone(), h0.len(), Mode::Eval)?;
        Ok(TokenBlock {
            tokens: h,
            kinds: h0.kinds.clone(),
        })
    }

    /// Reads the first N rows of h^L.
    pub fn forecast(&self, hl: &TokenBlock) -> Result<Array1<f64>> {
        let n = self.config.endo_tokens();
        if hl.len() < n || hl.dim() != self.d_model() {
            return Err(Error::Shape(format!(
                "need at least {n} tokens of dim {}, got {:?}",
                self.d_model(),
                hl.tokens.dim()
            )));
        }
        let flat = Array1::from_iter(hl.tokens.slice(s![0..n, ..]).iter().copied());
        Ok(self.head.forward(&flat.insert_axis(Axis(0))).row(0).to_owned())
    }

    /// Aligned metadata tokens (M × D) for one sample.
    pub fn meta_tokens(&self, meta: &MetaInput) -> Result<TokenBlock> {
        let align = self
            .align
            .as_ref()
            .ok_or_else(|| Error::Config("metadata input is ablated".into()))?;
        let native = match meta {
            MetaInput::Native(block) => block.clone(),
            MetaInput::Words(seqs) => {
                let router = self
                    .router
                    .as_ref()
                    .ok_or_else(|| Error::Aggregation("router parameters missing".into()))?;
                let mut block = Array2::zeros((META_LEVELS, router.dim()));
                for (i, seq) in seqs.iter().enumerate() {
                    block.row_mut(i).assign(&router.forward(seq)?.0);
                }
                block
            }
        };
        Ok(TokenBlock::new(align.forward(&native).0, TokenKind::Meta))
    }

    /// Full eval-mode forward for one sample.
    pub fn model_forward(&self, sample: &TimeWindowSample, meta: Option<&MetaInput>) -> Result<Array1<f64>> {
        let meta = if self.uses_meta() {
            vec![meta
                .ok_or_else(|| Error::Config("model uses metadata but none was supplied".into()))?
                .clone()]
        } else {
            Vec::new()
        };
        let batch = ModelBatch::from_samples(&[sample], meta)?;
        Ok(self.predict(&batch)?.row(0).to_owned())
    }

    /// h⁰ for one sample, with kind labels.
    pub fn informative_embedding(&self, sample: &TimeWindowSample, meta: Option<&MetaInput>) -> Result<TokenBlock> {
        let d = self.d_model();
        let endo = match (&self.patch, &self.placeholder) {
            (Some(_), _) => self.patch_embed(&sample.x_en)?,
            (None, Some(ph)) => TokenBlock::new(ph.value.clone(), TokenKind::Endo),
            (None, None) => unreachable!("either patches or placeholder exist"),
        };
        let exo = if self.series.is_some() {
            self.series_embed(&sample.x_ex)?
        } else {
            TokenBlock::empty(d)
        };
        let meta = match (self.uses_meta(), meta) {
            (true, Some(m)) => self.meta_tokens(m)?,
            (true, None) => return Err(Error::Config("model uses metadata but none was supplied".into())),
            (false, _) => TokenBlock::empty(d),
        };
        crate::tokens::informative_concat(&endo, &exo, &meta)
    }
}

impl Module for MetaTst {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        if let Some(p) = &self.patch {
            p.visit(&join(prefix, "patch"), f);
        }
        if let Some(p) = &self.placeholder {
            f(&join(prefix, "placeholder"), p);
        }
        if let Some(s) = &self.series {
            s.visit(&join(prefix, "series"), f);
        }
        if let Some(a) = &self.align {
            a.visit(&join(prefix, "align"), f);
        }
        if let Some(r) = &self.router {
            r.visit(&join(prefix, "router"), f);
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("encoder.{i}")), f);
        }
        self.head.visit(&join(prefix, Self::HEAD), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(p) = &mut self.patch {
            p.visit_mut(&join(prefix, "patch"), f);
        }
        if let Some(p) = &mut self.placeholder {
            f(&join(prefix, "placeholder"), p);
        }
        if let Some(s) = &mut self.series {
            s.visit_mut(&join(prefix, "series"), f);
        }
        if let Some(a) = &mut self.align {
            a.visit_mut(&join(prefix, "align"), f);
        }
        if let Some(r) = &mut self.router {
            r.visit_mut(&join(prefix, "router"), f);
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("encoder.{i}")), f);
        }
        self.head.visit_mut(&join(prefix, Self::HEAD), f);
    }
}
