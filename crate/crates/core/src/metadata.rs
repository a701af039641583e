//! Renders dataset-, task- and sample-level metadata into fixed natural
//! language paragraphs.
//!
//! Templates live in `resources/templates` and use `{placeholder}` slots.
//! Any wording change must bump [`TEMPLATE_VERSION`], which is part of the
//! embedding cache key.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::data::DatasetDescriptor;
use crate::error::{Error, Result};

pub const TEMPLATE_VERSION: &str = "template_v1";

pub const DATASET_TEMPLATE: &str = include_str!("../resources/templates/dataset.txt");
pub const TASK_TEMPLATE: &str = include_str!("../resources/templates/task.txt");
pub const SAMPLE_TEMPLATE: &str = include_str!("../resources/templates/sample.txt");
/// Sample template without min/max.
pub const SAMPLE_TEMPLATE_BASIC: &str = include_str!("../resources/templates/sample_basic.txt");

/// Number of metadata levels (dataset, task, sample).
pub const META_LEVELS: usize = 3;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaLevel {
    Dataset,
    Task,
    Sample,
}

impl MetaLevel {
    pub const ALL: [MetaLevel; META_LEVELS] = [MetaLevel::Dataset, MetaLevel::Task, MetaLevel::Sample];

    pub fn as_str(self) -> &'static str {
        match self {
            MetaLevel::Dataset => "dataset",
            MetaLevel::Task => "task",
            MetaLevel::Sample => "sample",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub target_name: String,
    pub input_length: usize,
    pub output_length: usize,
    pub task_kind: String,
}

impl TaskDescriptor {
    pub fn new(dataset: &DatasetDescriptor, input_length: usize, output_length: usize) -> Self {
        TaskDescriptor {
            target_name: dataset.target_label().to_string(),
            input_length,
            output_length,
            task_kind: Self::kind_for(output_length).to_string(),
        }
    }

    /// Day-ahead style horizons are short-term, anything of 96 steps or more is long-term.
    pub fn kind_for(output_length: usize) -> &'static str {
        if output_length >= 96 {
            "long-term forecasting"
        } else {
            "short-term forecasting"
        }
    }
}

/// Statistics of a sample's raw endogenous history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub start_timestamp: NaiveDateTime,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SampleStats {
    pub fn from_history(start: NaiveDateTime, values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().collect();
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        SampleStats {
            start_timestamp: start,
            // rounding can push the mean a ulp outside [min, max]
            mean: mean.clamp(min, max),
            std: var.sqrt(),
            min,
            max,
        }
    }
}

/// The three rendered paragraphs, in (dataset, task, sample) order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetadataBundle {
    pub dataset_text: String,
    pub task_text: String,
    pub sample_text: String,
}

impl MetadataBundle {
    pub fn level_count(&self) -> usize {
        META_LEVELS
    }

    pub fn texts(&self) -> [&str; META_LEVELS] {
        [&self.dataset_text, &self.task_text, &self.sample_text]
    }

    pub fn text(&self, level: MetaLevel) -> &str {
        match level {
            MetaLevel::Dataset => &self.dataset_text,
            MetaLevel::Task => &self.task_text,
            MetaLevel::Sample => &self.sample_text,
        }
    }
}

/// Which statistics the sample paragraph mentions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleTextOptions {
    /// Exclude min/max, keeping only start timestamp, mean and std.
    #[serde(default)]
    pub basic: bool,
}

fn fill(template: &str, slots: &[(&str, &str)]) -> Result<String> {
    let mut out = template.to_string();
    for (key, value) in slots {
        if value.trim().is_empty() {
            return Err(Error::Metadata(format!("placeholder `{key}` has an empty value")));
        }
        out = out.replace(&format!("{{{key}}}"), value);
    }
    if let Some(start) = out.find('{') {
        let rest = &out[start..];
        let end = rest.find('}').map(|e| e + 1).unwrap_or(rest.len());
        return Err(Error::Metadata(format!("unfilled placeholder {}", &rest[..end])));
    }
    Ok(out)
}

pub fn render_dataset_text(d: &DatasetDescriptor) -> Result<String> {
    fill(
        DATASET_TEMPLATE,
        &[
            ("name", &d.name),
            ("domain", &d.domain),
            ("frequency", &d.frequency),
            ("exogenous_descriptions", &d.exogenous_descriptions),
            ("source_note", &d.source_note),
        ],
    )
}

pub fn render_task_text(t: &TaskDescriptor) -> Result<String> {
    if t.input_length == 0 || t.output_length == 0 {
        return Err(Error::Metadata(format!(
            "task lengths must be positive (input {}, output {})",
            t.input_length, t.output_length
        )));
    }
    fill(
        TASK_TEMPLATE,
        &[
            ("task_kind", &t.task_kind),
            ("target", &t.target_name),
            ("input_length", &t.input_length.to_string()),
            ("output_length", &t.output_length.to_string()),
        ],
    )
}

pub fn render_sample_text(s: &SampleStats) -> Result<String> {
    render_sample_text_with(s, SampleTextOptions::default())
}

pub fn render_sample_text_with(s: &SampleStats, opts: SampleTextOptions) -> Result<String> {
    for (name, v) in [("mean", s.mean), ("std", s.std), ("min", s.min), ("max", s.max)] {
        if !v.is_finite() {
            return Err(Error::Metadata(format!("sample statistic `{name}` is {v}")));
        }
    }
    let start = s.start_timestamp.format(TIMESTAMP_FORMAT).to_string();
    let (mean, std) = (format!("{:.4}", s.mean), format!("{:.4}", s.std));
    if opts.basic {
        fill(
            SAMPLE_TEMPLATE_BASIC,
            &[("start", &start), ("mean", &mean), ("std", &std)],
        )
    } else {
        fill(
            SAMPLE_TEMPLATE,
            &[
                ("start", &start),
                ("mean", &mean),
                ("std", &std),
                ("min", &format!("{:.4}", s.min)),
                ("max", &format!("{:.4}", s.max)),
            ],
        )
    }
}

pub fn meta_parse(
    dataset: &DatasetDescriptor,
    task: &TaskDescriptor,
    sample: &SampleStats,
) -> Result<MetadataBundle> {
    meta_parse_with(dataset, task, sample, SampleTextOptions::default())
}

pub fn meta_parse_with(
    dataset: &DatasetDescriptor,
    task: &TaskDescriptor,
    sample: &SampleStats,
    opts: SampleTextOptions,
) -> Result<MetadataBundle> {
    Ok(MetadataBundle {
        dataset_text: render_dataset_text(dataset)?,
        task_text: render_task_text(task)?,
        sample_text: render_sample_text_with(sample, opts)?,
    })
}

/// All canonical templates, for auditing.
pub fn dump_templates() -> String {
    format!(
        "# {TEMPLATE_VERSION}\n[dataset]\n{DATASET_TEMPLATE}\n\n[task]\n{TASK_TEMPLATE}\n\n\
         [sample]\n{SAMPLE_TEMPLATE}\n\n[sample_basic]\n{SAMPLE_TEMPLATE_BASIC}\n"
    )
}
