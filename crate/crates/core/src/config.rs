//! Architecture and training hyperparameters. Field names follow the usual
//! `e_layers` / `d_model` / `d_ff` / `n_heads` vocabulary so published
//! configurations can be pasted in directly.

use serde::{Deserialize, Serialize};

use crate::encoder::{AggregationStrategy, DEFAULT_STUB_DIM};
use crate::error::{Error, Result};
use crate::metadata::SampleTextOptions;
use crate::nn::Activation;

pub const E_LAYERS_GRID: [usize; 3] = [1, 2, 3];
pub const D_MODEL_GRID: [usize; 3] = [128, 256, 512];
pub const D_FF_GRID: [usize; 3] = [512, 1024, 2048];
pub const N_HEADS_GRID: [usize; 3] = [4, 8, 16];
pub const BATCH_SIZE_GRID: [usize; 4] = [16, 32, 64, 128];
pub const DROPOUT_GRID: [f64; 4] = [0.0, 0.1, 0.2, 0.3];
pub const LONG_TERM_HORIZONS: [usize; 4] = [96, 192, 336, 720];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    #[serde(default)]
    pub drop_endo: bool,
    #[serde(default)]
    pub drop_exo: bool,
    #[serde(default)]
    pub drop_meta: bool,
}

impl Ablation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.drop_endo && self.drop_exo && self.drop_meta {
            return Err(Error::Config("cannot drop all three token types".into()));
        }
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        !(self.drop_endo || self.drop_exo || self.drop_meta)
    }

    /// Row label used in ablation tables.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.drop_endo {
            parts.push("En.");
        }
        if self.drop_exo {
            parts.push("Ex.");
        }
        if self.drop_meta {
            parts.push("Meta");
        }
        if parts.is_empty() {
            "Full".into()
        } else {
            format!("w/o {}", parts.join(" & "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub seq_len: usize,
    /// Exogenous look-back; defaults to `seq_len`.
    #[serde(default)]
    pub exo_len: Option<usize>,
    pub pred_len: usize,
    pub e_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub patch_len: usize,
    /// Must equal `patch_len` (non-overlapping patches).
    #[serde(default)]
    pub patch_stride: Option<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_epochs: usize,
    /// Native dimension E of the text encoder.
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub aggregation: AggregationStrategy,
    #[serde(default)]
    pub align_activation: Activation,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub sample_text: SampleTextOptions,
}

fn default_embed_dim() -> usize {
    DEFAULT_STUB_DIM
}

impl ModelConfig {
    /// Unified short-term setting: 168 → 24, patch 24.
    pub fn short_term() -> Self {
        ModelConfig {
            seq_len: 168,
            exo_len: None,
            pred_len: 24,
            e_layers: 3,
            d_model: 256,
            d_ff: 2048,
            n_heads: 8,
            patch_len: 24,
            patch_stride: None,
            dropout: 0.1,
            learning_rate: 1e-4,
            batch_size: 32,
            train_epochs: 10,
            embed_dim: DEFAULT_STUB_DIM,
            aggregation: AggregationStrategy::average_pooling(),
            align_activation: Activation::Gelu,
            ablation: Ablation::none(),
            sample_text: SampleTextOptions::default(),
        }
    }

    /// Unified long-term setting: 96 → `pred_len`, patch 12.
    pub fn long_term(pred_len: usize) -> Self {
        ModelConfig {
            seq_len: 96,
            pred_len,
            patch_len: 12,
            ..Self::short_term()
        }
    }

    pub fn exo_len(&self) -> usize {
        self.exo_len.unwrap_or(self.seq_len)
    }

    /// Number of endogenous tokens N (1 placeholder when endo is dropped).
    pub fn endo_tokens(&self) -> usize {
        if self.ablation.drop_endo {
            1
        } else {
            self.seq_len / self.patch_len
        }
    }

    pub fn meta_tokens(&self) -> usize {
        if self.ablation.drop_meta {
            0
        } else {
            crate::metadata::META_LEVELS
        }
    }

    /// K = N + C + M for `c` exogenous variates.
    pub fn token_count(&self, c: usize) -> usize {
        let c = if self.ablation.drop_exo { 0 } else { c };
        self.endo_tokens() + c + self.meta_tokens()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.seq_len == 0 || self.pred_len == 0 {
            return err("seq_len and pred_len must be positive".into());
        }
        if self.exo_len() == 0 || self.exo_len() > self.seq_len {
            return err(format!("exo_len {} must be in 1..={}", self.exo_len(), self.seq_len));
        }
        if self.patch_len == 0 || self.patch_len > self.seq_len {
            return err(format!(
                "patch_len {} must be in 1..={}",
                self.patch_len, self.seq_len
            ));
        }
        if let Some(stride) = self.patch_stride {
            if stride != self.patch_len {
                return err(format!(
                    "patches are non-overlapping: patch_stride {stride} must equal patch_len {}",
                    self.patch_len
                ));
            }
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return err(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 || self.embed_dim == 0 || self.batch_size == 0 {
            return err("d_ff, embed_dim and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !self.aggregation.is_parameter_free() && !self.embed_dim.is_multiple_of(self.n_heads) {
            return err(format!(
                "router aggregation needs embed_dim {} divisible by n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        self.aggregation.validate()?;
        self.ablation.validate()
    }

    /// Whether the values lie inside the published search grids.
    pub fn within_search_grid(&self) -> bool {
        E_LAYERS_GRID.contains(&self.e_layers)
            && D_MODEL_GRID.contains(&self.d_model)
            && D_FF_GRID.contains(&self.d_ff)
            && N_HEADS_GRID.contains(&self.n_heads)
            && BATCH_SIZE_GRID.contains(&self.batch_size)
            && DROPOUT_GRID.contains(&self.dropout)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
