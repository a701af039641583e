//! Run specification, manifest and the shared setup of training commands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use metatst::config::Ablation;
use metatst::encoder::{
    AggregationStrategy, EmbeddingCache, HashStub, MetaEmbedder, ServiceBackend, TextEmbeddingBackend,
    CACHE_DIR_ENV, CACHE_FILE_NAME,
};
use metatst::metadata::TEMPLATE_VERSION;
use metatst::prepared::PreparedDataset;
use metatst::registry::Registry;
use metatst::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{AggregationChoice, BackendChoice, CliError, CliResult, RunArgs};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TEST_METRICS_FILE: &str = "test_metrics.json";

/// Everything needed to re-execute a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub command: String,
    pub registry: PathBuf,
    pub config_path: Option<PathBuf>,
    pub datasets: Vec<String>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub ablation: Ablation,
    pub backend: BackendChoice,
    pub model_id: String,
    pub aggregation: AggregationStrategy,
    pub template_version: String,
    pub config: ModelConfig,
    /// Hash of every other field.
    #[serde(default)]
    pub run_id: String,
}

impl RunSpec {
    pub fn new(command: &str, args: &RunArgs, datasets: &[String], ablation: Ablation) -> CliResult<Self> {
        let mut config = load_config(args.config.as_deref())?;
        apply_overrides(&mut config, args);
        config.ablation = ablation;
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let model_id = match (args.backend, &args.model_id) {
            (BackendChoice::HashStub, _) => HashStub::new(config.embed_dim).model_id().to_string(),
            (BackendChoice::Service, Some(id)) => id.clone(),
            (BackendChoice::Service, None) => {
                return Err(CliError::Usage("--backend service needs --model-id".into()))
            }
        };
        let mut spec = RunSpec {
            command: command.into(),
            registry: args.registry.clone(),
            config_path: args.config.clone(),
            datasets: datasets.to_vec(),
            seed: args.seed,
            out_dir: args.out.clone(),
            ablation,
            backend: args.backend,
            model_id,
            aggregation: config.aggregation,
            template_version: TEMPLATE_VERSION.into(),
            config,
            run_id: String::new(),
        };
        let body = serde_json::to_vec(&spec)?;
        let digest = Sha256::digest(&body);
        spec.run_id = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        Ok(spec)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(format!("{}-{}", self.command, self.run_id))
    }

    /// Create the run directory, clear stale logs and write the manifest.
    pub fn materialize(&self) -> CliResult<PathBuf> {
        let dir = self.run_dir();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for stale in [metatst::train::METRICS_FILE, metatst::train::CHECKPOINT_FILE, TEST_METRICS_FILE] {
            let p = dir.join(stale);
            if p.exists() {
                std::fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(dir)
    }

    pub fn load(run_dir: &Path) -> CliResult<Self> {
        let p = run_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
    }

    pub fn train_options(&self, dir: &Path) -> metatst::train::TrainOptions {
        metatst::train::TrainOptions {
            seed: self.seed,
            run_id: self.run_id.clone(),
            out_dir: Some(dir.to_path_buf()),
            model_id: self.model_id.clone(),
            ..Default::default()
        }
    }

    pub fn embedder(&self) -> CliResult<Option<MetaEmbedder>> {
        if self.config.ablation.drop_meta {
            return Ok(None);
        }
        let dim = self.config.embed_dim;
        let strategy = self.config.aggregation;
        let backend: Arc<dyn TextEmbeddingBackend> = match self.backend {
            BackendChoice::HashStub => {
                let stub = HashStub::new(dim);
                Arc::new(if strategy.kind == metatst::encoder::AggregationKind::SpecialToken {
                    stub.with_special_token()
                } else {
                    stub
                })
            }
            BackendChoice::Service => {
                let mut svc = ServiceBackend::from_env(&self.model_id, dim)?;
                svc.require_word_level = strategy.kind != metatst::encoder::AggregationKind::AveragePooling;
                Arc::new(svc)
            }
        };
        let cache = match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) if strategy.is_parameter_free() => {
                let dir = PathBuf::from(dir);
                std::fs::create_dir_all(&dir)?;
                EmbeddingCache::open(&dir.join(CACHE_FILE_NAME), Some(dim))?
            }
            _ => EmbeddingCache::in_memory(),
        };
        Ok(Some(MetaEmbedder::new(backend, strategy, Arc::new(cache))?))
    }

    pub fn prepare(&self, embedder: Option<&MetaEmbedder>) -> CliResult<Vec<PreparedDataset>> {
        let registry = Registry::load(&self.registry).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut out = Vec::new();
        for name in &self.datasets {
            registry.entry(name).map_err(|e| CliError::Usage(e.to_string()))?;
            let d = registry.load_dataset(name)?;
            log::info!("preparing {name}: {} rows", d.table.values.nrows());
            out.push(PreparedDataset::from_table(&d.descriptor, &d.table, &d.split, &self.config, embedder)?);
        }
        Ok(out)
    }
}

/// Config file keys overlay the short-term preset.
pub fn load_config(path: Option<&Path>) -> CliResult<ModelConfig> {
    let base = ModelConfig::short_term();
    let Some(path) = path else { return Ok(base) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let overlay: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut merged: toml::Table = toml::from_str(&base.to_toml()).map_err(|e| CliError::Runtime(e.into()))?;
    merged.extend(overlay);
    let text = toml::to_string(&merged).map_err(|e| CliError::Runtime(e.into()))?;
    ModelConfig::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn apply_overrides(c: &mut ModelConfig, a: &RunArgs) {
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = a.$field { c.$field = v; })*};
    }
    set!(embed_dim, seq_len, pred_len, e_layers, d_model, d_ff, n_heads, patch_len, dropout, learning_rate, batch_size, train_epochs);
    match a.aggregation {
        Some(AggregationChoice::AveragePooling) => c.aggregation = AggregationStrategy::average_pooling(),
        Some(AggregationChoice::SpecialToken) => c.aggregation = AggregationStrategy::special_token(),
        Some(AggregationChoice::Router) => c.aggregation = AggregationStrategy::router(a.routers.unwrap_or(3)),
        None => {
            if let Some(r) = a.routers {
                c.aggregation.routers = r;
            }
        }
    }
}
