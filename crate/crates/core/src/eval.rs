//! Metrics, attention inspection, metadata representation export and
//! result tables.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{write_tensors, NamedTensors};
use crate::encoder::MetaInput;
use crate::error::{Error, Result};
use crate::metadata::{MetaLevel, META_LEVELS};
use crate::model::{MetaTst, ModelBatch, Mode};
use crate::prepared::{PreparedDataset, Split};
use crate::tokens::TokenKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub dataset_id: String,
    pub horizon: usize,
    pub split: String,
    pub mse: f64,
    pub mae: f64,
    /// Number of forecast windows.
    pub n_samples: usize,
}

/// Mean squared and mean absolute error over all elements.
pub fn mse_mae(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<(f64, f64)> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::Empty("metric input"));
    }
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(target.iter()) {
        let e = p - t;
        se += e * e;
        ae += e.abs();
    }
    Ok((se / n as f64, ae / n as f64))
}

pub fn compute_metrics(
    dataset_id: &str,
    split: &str,
    pred: ArrayView2<f64>,
    target: ArrayView2<f64>,
) -> Result<ForecastMetrics> {
    let (mse, mae) = mse_mae(pred, target)?;
    Ok(ForecastMetrics {
        dataset_id: dataset_id.to_string(),
        horizon: pred.ncols(),
        split: split.to_string(),
        mse,
        mae,
        n_samples: pred.nrows(),
    })
}

/// Element-weighted pooling of several metric sets.
pub fn pooled(metrics: &[ForecastMetrics]) -> Result<(f64, f64)> {
    let weights: Vec<f64> = metrics.iter().map(|m| (m.n_samples * m.horizon) as f64).collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroDivision("pooled metrics over zero elements"));
    }
    let mse = metrics.iter().zip(&weights).map(|(m, w)| m.mse * w).sum::<f64>() / total;
    let mae = metrics.iter().zip(&weights).map(|(m, w)| m.mae * w).sum::<f64>() / total;
    Ok((mse, mae))
}

/// Unweighted mean over horizons (or any list of runs).
pub fn horizon_average(metrics: &[ForecastMetrics]) -> Result<(f64, f64)> {
    if metrics.is_empty() {
        return Err(Error::Empty("horizon average"));
    }
    let n = metrics.len() as f64;
    Ok((
        metrics.iter().map(|m| m.mse).sum::<f64>() / n,
        metrics.iter().map(|m| m.mae).sum::<f64>() / n,
    ))
}

/// Predictions and targets of one split, both n × S, in window order.
pub fn predict_split(
    model: &MetaTst,
    ds: &PreparedDataset,
    split: Split,
    batch_size: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let data = ds.split(split);
    if data.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let s = model.config().pred_len;
    let mut pred = Array2::zeros((data.len(), s));
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk)?;
        let p = model.predict(&batch)?;
        pred.slice_mut(s![chunk[0]..chunk[0] + chunk.len(), ..]).assign(&p);
    }
    Ok((pred, data.targets()))
}

pub fn evaluate(model: &MetaTst, ds: &PreparedDataset, split: Split, batch_size: usize) -> Result<ForecastMetrics> {
    let (pred, target) = predict_split(model, ds, split, batch_size)?;
    compute_metrics(&ds.id, split.as_str(), pred.view(), target.view())
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub dataset: String,
    pub epoch: usize,
    pub split: String,
    pub mse: f64,
    pub mae: f64,
}

pub fn append_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
        .collect()
}

/// Attention averaged over heads and layers for one sample.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    /// K × K, row = query token, column = key token.
    pub matrix: Array2<f64>,
    pub kinds: Vec<TokenKind>,
}

impl AttentionMap {
    /// Sub-block with queries of kind `from` and keys of kind `to`.
    pub fn block(&self, from: TokenKind, to: TokenKind) -> Array2<f64> {
        let rows: Vec<usize> = self.index_of(from);
        let cols: Vec<usize> = self.index_of(to);
        Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| self.matrix[[rows[i], cols[j]]])
    }

    fn index_of(&self, kind: TokenKind) -> Vec<usize> {
        self.kinds.iter().enumerate().filter(|(_, k)| **k == kind).map(|(i, _)| i).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        self.kinds
            .iter()
            .map(|k| {
                let tag = match k {
                    TokenKind::Endo => "endo",
                    TokenKind::Exo => "exo",
                    TokenKind::Meta => "meta",
                };
                let c = counts.entry(tag).or_default();
                *c += 1;
                format!("{tag}{}", *c - 1)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let labels = self.labels();
        let mut out = format!("query,{}\n", labels.join(","));
        for (i, row) in self.matrix.rows().into_iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:.8}")).collect();
            out.push_str(&format!("{},{}\n", labels[i], vals.join(",")));
        }
        out
    }
}

pub fn extract_attention(model: &MetaTst, ds: &PreparedDataset, split: Split, index: usize) -> Result<AttentionMap> {
    let data = ds.split(split);
    if index >= data.len() {
        return Err(Error::Window(format!(
            "sample {index} out of range for {} split of `{}` ({} samples)",
            split.as_str(),
            ds.id,
            data.len()
        )));
    }
    attention_for_batch(model, &data.batch(&[index])?)
}

/// Attention of the first sample of `batch`.
pub fn attention_for_batch(model: &MetaTst, batch: &ModelBatch) -> Result<AttentionMap> {
    let layers = model.layers.len();
    if layers == 0 {
        return Err(Error::Config("attention needs at least one encoder layer".into()));
    }
    let (_, cache) = model.forward(batch, Mode::Eval)?;
    let heads = model.config().n_heads;
    let k = cache.layout.tokens();
    let mut matrix = Array2::zeros((k, k));
    for l in 0..layers {
        for p in &cache.attention_probs(l)[..heads] {
            matrix += p;
        }
    }
    matrix /= (layers * heads) as f64;
    Ok(AttentionMap {
        matrix,
        kinds: cache.layout.kinds(),
    })
}

/// Aligned metadata token of one sample at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaRepresentation {
    pub dataset_id: String,
    pub sample_index: usize,
    pub level: MetaLevel,
    pub vector: Array1<f64>,
}

pub fn export_meta_representations(
    model: &MetaTst,
    datasets: &[&PreparedDataset],
    split: Split,
) -> Result<Vec<MetaRepresentation>> {
    if !model.uses_meta() {
        return Err(Error::Config("model has no metadata tokens".into()));
    }
    let levels = [MetaLevel::Dataset, MetaLevel::Task, MetaLevel::Sample];
    let mut out = Vec::new();
    for ds in datasets {
        for (i, meta) in ds.split(split).meta.iter().enumerate() {
            let block = model.meta_tokens(meta)?;
            for (l, level) in levels.iter().enumerate().take(META_LEVELS) {
                out.push(MetaRepresentation {
                    dataset_id: ds.id.clone(),
                    sample_index: i,
                    level: *level,
                    vector: block.tokens.row(l).to_owned(),
                });
            }
        }
    }
    Ok(out)
}

/// Metadata tokens of a single input, 3 × D.
pub fn meta_tokens_of(model: &MetaTst, meta: &MetaInput) -> Result<Array2<f64>> {
    Ok(model.meta_tokens(meta)?.tokens)
}

pub fn meta_representations_csv(reps: &[MetaRepresentation]) -> String {
    let d = reps.first().map_or(0, |r| r.vector.len());
    let mut out = String::from("dataset_id,sample_index,level");
    for j in 0..d {
        out.push_str(&format!(",d{j}"));
    }
    out.push('\n');
    for r in reps {
        out.push_str(&format!("{},{},{}", r.dataset_id, r.sample_index, r.level.as_str()));
        for v in &r.vector {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// One tensor per (dataset, level), rows in sample order.
pub fn write_meta_representations(path: &Path, reps: &[MetaRepresentation]) -> Result<()> {
    let mut grouped: BTreeMap<String, Vec<&MetaRepresentation>> = BTreeMap::new();
    for r in reps {
        grouped
            .entry(format!("{}.{}", r.dataset_id, r.level.as_str()))
            .or_default()
            .push(r);
    }
    let mut tensors = NamedTensors::new();
    for (name, rows) in grouped {
        let d = rows[0].vector.len();
        let mut m = Array2::zeros((rows.len(), d));
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).assign(&r.vector);
        }
        tensors.insert(name, m);
    }
    write_tensors(path, &tensors, Default::default())
}

/// Canonical column order of the electricity price benchmark.
pub const EPF_ORDER: [&str; 5] = ["NP", "PJM", "BE", "FR", "DE"];

/// Joint vs individual results of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub dataset: String,
    pub joint: Option<(f64, f64)>,
    pub individual: Option<(f64, f64)>,
}

/// Relative improvement of joint over individual training.
pub fn promotion(joint: f64, individual: f64) -> Result<f64> {
    if individual == 0.0 {
        return Err(Error::ZeroDivision("promotion with zero individual error"));
    }
    Ok(1.0 - joint / individual)
}

fn order_datasets(names: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut names: Vec<String> = names.into_iter().collect();
    names.sort_by_key(|n| (EPF_ORDER.iter().position(|e| e == n).unwrap_or(EPF_ORDER.len()), n.clone()));
    names.dedup();
    names
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

fn marker(p: f64) -> &'static str {
    if p > 0.0 {
        "↑"
    } else if p < 0.0 {
        "↓"
    } else {
        ""
    }
}

/// Markdown table: datasets as columns plus `Avg.`, joint / individual
/// metrics and promotion as rows. Missing pairs render as `-`.
pub fn result_table(entries: &[ComparisonEntry]) -> String {
    let names = order_datasets(entries.iter().map(|e| e.dataset.clone()));
    let by_name: BTreeMap<&str, &ComparisonEntry> = entries.iter().map(|e| (e.dataset.as_str(), e)).collect();
    let get = |n: &str| by_name.get(n).copied();

    let avg = |f: &dyn Fn(&ComparisonEntry) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = names.iter().filter_map(|n| get(n).and_then(f)).collect();
        (vals.len() == names.len() && !vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };

    let mut header = vec!["Setting".to_string()];
    header.extend(names.iter().cloned());
    header.push("Avg.".into());
    let mut rows = Vec::new();
    type Pick = fn(&ComparisonEntry) -> Option<f64>;
    let picks: [(&str, Pick); 4] = [
        ("Joint MSE", |e| e.joint.map(|x| x.0)),
        ("Joint MAE", |e| e.joint.map(|x| x.1)),
        ("Individual MSE", |e| e.individual.map(|x| x.0)),
        ("Individual MAE", |e| e.individual.map(|x| x.1)),
    ];
    for (label, pick) in picks {
        let mut row = vec![label.to_string()];
        row.extend(names.iter().map(|n| cell(get(n).and_then(pick))));
        row.push(cell(avg(&pick)));
        rows.push(row);
    }
    for (label, idx) in [("Promotion MSE", 0usize), ("Promotion MAE", 1)] {
        let promo = move |e: &ComparisonEntry| -> Option<f64> {
            let (j, i) = (e.joint?, e.individual?);
            let (j, i) = if idx == 0 { (j.0, i.0) } else { (j.1, i.1) };
            promotion(j, i).ok()
        };
        let fmt = |p: Option<f64>| p.map_or("-".into(), |p| format!("{:.1}%{}", p * 100.0, marker(p)));
        let mut row = vec![label.to_string()];
        row.extend(names.iter().map(|n| fmt(get(n).and_then(promo))));
        row.push(fmt(avg(&promo)));
        rows.push(row);
    }
    markdown(&header, &rows)
}

/// Markdown table of ablation variants (rows) by dataset (columns), MSE/MAE.
pub fn ablation_table(results: &[(String, ForecastMetrics)]) -> String {
    let names = order_datasets(results.iter().map(|(_, m)| m.dataset_id.clone()));
    let mut variants: Vec<String> = Vec::new();
    for (v, _) in results {
        if !variants.contains(v) {
            variants.push(v.clone());
        }
    }
    let mut header = vec!["Variant".to_string()];
    header.extend(names.iter().cloned());
    let rows = variants
        .iter()
        .map(|v| {
            let mut row = vec![v.clone()];
            row.extend(names.iter().map(|n| {
                results
                    .iter()
                    .find(|(rv, m)| rv == v && &m.dataset_id == n)
                    .map_or("-".into(), |(_, m)| format!("{:.3}/{:.3}", m.mse, m.mae))
            }));
            row
        })
        .collect::<Vec<_>>();
    markdown(&header, &rows)
}

fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = format!("| {} |\n", header.join(" | "));
    out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for r in rows {
        out.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    out
}
