//! Windowed splits of one dataset with their metadata inputs attached.

use ndarray::Array2;

use crate::config::ModelConfig;
use crate::data::{
    split_and_normalize, window_stream, DatasetDescriptor, NormalizationStats, RawTable, SplitSpec,
    TimeWindowSample, WindowSpec,
};
use crate::encoder::{MetaEmbedder, MetaInput};
use crate::error::{Error, Result};
use crate::metadata::{meta_parse_with, MetadataBundle, SampleTextOptions, TaskDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Samples of one split and, when metadata is used, one input per sample.
#[derive(Debug, Clone, Default)]
pub struct SplitData {
    pub samples: Vec<TimeWindowSample>,
    pub bundles: Vec<MetadataBundle>,
    pub meta: Vec<MetaInput>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacked targets, n × S.
    pub fn targets(&self) -> Array2<f64> {
        let s = self.samples.first().map_or(0, |x| x.y_en.len());
        let mut out = Array2::zeros((self.len(), s));
        for (i, smp) in self.samples.iter().enumerate() {
            out.row_mut(i).assign(&smp.y_en);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub id: String,
    pub descriptor: DatasetDescriptor,
    pub task: TaskDescriptor,
    pub window: WindowSpec,
    pub stats: Option<NormalizationStats>,
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
}

impl PreparedDataset {
    /// Split, normalize, window, render metadata and (optionally) embed it.
    pub fn from_table(
        descriptor: &DatasetDescriptor,
        table: &RawTable,
        split: &SplitSpec,
        config: &ModelConfig,
        embedder: Option<&MetaEmbedder>,
    ) -> Result<Self> {
        descriptor.validate()?;
        let window = WindowSpec {
            t_en: config.seq_len,
            t_ex: config.exo_len(),
            horizon: config.pred_len,
            stride: 1,
        };
        let segs = split_and_normalize(&descriptor.name, table, split, window.t_en, window.horizon)?;
        let collect = |seg| -> Result<Vec<TimeWindowSample>> { Ok(window_stream(seg, window)?.collect()) };
        let (train, val, test) = (collect(&segs.train)?, collect(&segs.val)?, collect(&segs.test)?);
        let mut ds = Self::from_samples(descriptor, config, train, val, test, embedder)?;
        ds.stats = Some(segs.stats);
        Ok(ds)
    }

    /// Wrap pre-built windows (e.g. synthetic data).
    pub fn from_samples(
        descriptor: &DatasetDescriptor,
        config: &ModelConfig,
        train: Vec<TimeWindowSample>,
        val: Vec<TimeWindowSample>,
        test: Vec<TimeWindowSample>,
        embedder: Option<&MetaEmbedder>,
    ) -> Result<Self> {
        let task = TaskDescriptor::new(descriptor, config.seq_len, config.pred_len);
        let window = WindowSpec {
            t_en: config.seq_len,
            t_ex: config.exo_len(),
            horizon: config.pred_len,
            stride: 1,
        };
        let opts = config.sample_text;
        let wrap = |samples: Vec<TimeWindowSample>| -> Result<SplitData> {
            build_split(descriptor, &task, samples, opts, embedder)
        };
        Ok(PreparedDataset {
            id: descriptor.name.clone(),
            descriptor: descriptor.clone(),
            task: task.clone(),
            window,
            stats: None,
            train: wrap(train)?,
            val: wrap(val)?,
            test: wrap(test)?,
        })
    }

    pub fn split(&self, split: Split) -> &SplitData {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn exogenous_count(&self) -> usize {
        self.train
            .samples
            .first()
            .or(self.test.samples.first())
            .map_or(self.descriptor.exogenous_count(), |s| s.exogenous_count())
    }

    pub fn has_meta(&self) -> bool {
        !self.train.meta.is_empty() || !self.test.meta.is_empty()
    }

    /// Checks window geometry against a model configuration.
    pub fn check_compatible(&self, config: &ModelConfig) -> Result<()> {
        let want = (config.seq_len, config.exo_len(), config.pred_len);
        let have = (self.window.t_en, self.window.t_ex, self.window.horizon);
        if want != have {
            return Err(Error::Incompatible {
                dataset: self.id.clone(),
                reason: format!(
                    "windows (T_en, T_ex, S) = {have:?}, model expects {want:?}"
                ),
            });
        }
        for split in [&self.train, &self.val, &self.test] {
            if let Some(s) = split.samples.iter().find(|s| {
                (s.x_en.len(), s.x_ex.nrows(), s.y_en.len()) != want
            }) {
                return Err(Error::Incompatible {
                    dataset: self.id.clone(),
                    reason: format!(
                        "sample at rows {:?} has shape ({}, {}, {})",
                        s.history_rows,
                        s.x_en.len(),
                        s.x_ex.nrows(),
                        s.y_en.len()
                    ),
                });
            }
        }
        let uses_meta = !config.ablation.drop_meta;
        if uses_meta && !self.has_meta() && !(self.train.is_empty() && self.test.is_empty()) {
            return Err(Error::Incompatible {
                dataset: self.id.clone(),
                reason: "model uses metadata but dataset was prepared without an embedder".into(),
            });
        }
        Ok(())
    }
}

fn build_split(
    descriptor: &DatasetDescriptor,
    task: &TaskDescriptor,
    samples: Vec<TimeWindowSample>,
    opts: SampleTextOptions,
    embedder: Option<&MetaEmbedder>,
) -> Result<SplitData> {
    let bundles = samples
        .iter()
        .map(|s| meta_parse_with(descriptor, task, &s.stats, opts))
        .collect::<Result<Vec<_>>>()?;
    let meta = match embedder {
        Some(e) => {
            let texts: Vec<&str> = bundles.iter().flat_map(|b| b.texts()).collect();
            e.prefetch(&texts)?;
            bundles.iter().map(|b| e.meta_input(b)).collect::<Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };
    Ok(SplitData {
        samples,
        bundles,
        meta,
    })
}

impl SplitData {
    /// Model batch for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<crate::model::ModelBatch> {
        let samples: Vec<&TimeWindowSample> = indices.iter().map(|&i| &self.samples[i]).collect();
        let meta = if self.meta.is_empty() {
            Vec::new()
        } else {
            indices.iter().map(|&i| self.meta[i].clone()).collect()
        };
        crate::model::ModelBatch::from_samples(&samples, meta)
    }
}
