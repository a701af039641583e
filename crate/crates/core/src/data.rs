//! Benchmark ingestion: CSV loading, train/val/test borders, z-scoring and
//! sliding windows.
//!
//! Borders follow the TSLib convention: the validation and test segments are
//! prefixed with the last `look_back` rows of the preceding segment, and the
//! scaler is fitted on the training rows only.

use std::collections::HashSet;
use std::fs::File;
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::SampleStats;

/// Static description of one benchmark dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub domain: String,
    pub frequency: String,
    /// Variate column names, endogenous last. Empty means "take from the CSV header".
    #[serde(default)]
    pub variate_names: Vec<String>,
    pub endogenous_name: String,
    /// Human-readable target, e.g. "Nord Pool Electricity Price". Falls back to
    /// `endogenous_name` when absent.
    #[serde(default)]
    pub endogenous_description: Option<String>,
    pub exogenous_descriptions: String,
    #[serde(default)]
    pub source_note: String,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("name", &self.name),
            ("domain", &self.domain),
            ("frequency", &self.frequency),
            ("endogenous_name", &self.endogenous_name),
        ] {
            if value.trim().is_empty() {
                return Err(Error::Descriptor(format!("field `{field}` is empty")));
            }
        }
        if self.variate_names.is_empty() {
            return Err(Error::Descriptor("variate_names is empty".into()));
        }
        let mut seen = HashSet::new();
        for v in &self.variate_names {
            if !seen.insert(v.as_str()) {
                return Err(Error::Descriptor(format!("duplicate variate `{v}`")));
            }
        }
        if self.variate_names.last() != Some(&self.endogenous_name) {
            return Err(Error::Descriptor(format!(
                "endogenous variate `{}` must be the last column",
                self.endogenous_name
            )));
        }
        Ok(())
    }

    pub fn target_label(&self) -> &str {
        self.endogenous_description
            .as_deref()
            .unwrap_or(&self.endogenous_name)
    }

    pub fn exogenous_count(&self) -> usize {
        self.variate_names.len().saturating_sub(1)
    }
}

/// Timestamped real matrix as read from disk.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub timestamps: Vec<NaiveDateTime>,
    pub columns: Vec<String>,
    /// rows × variates
    pub values: Array2<f64>,
}

impl RawTable {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn variates(&self) -> usize {
        self.values.ncols()
    }

    /// Move the named column to the last position, keeping the others in order.
    pub fn with_endogenous_last(mut self, name: &str) -> Result<Self> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Descriptor(format!("no column named `{name}`")))?;
        if idx + 1 == self.columns.len() {
            return Ok(self);
        }
        let mut order: Vec<usize> = (0..self.columns.len()).filter(|&i| i != idx).collect();
        order.push(idx);
        self.columns = order.iter().map(|&i| self.columns[i].clone()).collect();
        self.values = self.values.select(Axis(1), &order);
        Ok(self)
    }
}

/// Accepts ISO-8601 (`2016-07-01T00:00:00`, optionally with offset) and
/// `YYYY-MM-DD HH:MM:SS`.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.naive_utc())
}

pub fn load_csv(path: &Path, descriptor: &DatasetDescriptor) -> Result<RawTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let table = read_csv(file)?;
    if !descriptor.variate_names.is_empty() && descriptor.variate_names != table.columns {
        let mut expected = descriptor.variate_names.clone();
        expected.sort();
        let mut found = table.columns.clone();
        found.sort();
        if expected != found {
            return Err(Error::Descriptor(format!(
                "{}: header {:?} does not match descriptor variates {:?}",
                path.display(),
                table.columns,
                descriptor.variate_names
            )));
        }
    }
    log::info!(
        "loaded {}: {} rows, columns {:?}",
        path.display(),
        table.rows(),
        table.columns
    );
    Ok(table)
}

/// Parse a `date,<variates...>` CSV from any reader.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(Error::Csv("need a date column and at least one variate".into()));
    }
    if headers.get(0).map(str::trim) != Some("date") {
        return Err(Error::CsvCell {
            row: 0,
            column: headers.get(0).unwrap_or_default().to_string(),
            message: "first column must be named `date`".into(),
        });
    }
    let columns: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let width = columns.len();

    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut flat = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // 1-based data rows, header is row 0
        let row = i + 1;
        let record = record.map_err(|e| Error::Csv(format!("row {row}: {e}")))?;
        if record.len() != width + 1 {
            return Err(Error::CsvCell {
                row,
                column: "*".into(),
                message: format!("expected {} fields, found {}", width + 1, record.len()),
            });
        }
        let raw_ts = &record[0];
        let ts = parse_timestamp(raw_ts).ok_or_else(|| Error::CsvCell {
            row,
            column: "date".into(),
            message: format!("unparseable timestamp `{raw_ts}`"),
        })?;
        if let Some(prev) = timestamps.last() {
            if *prev >= ts {
                return Err(Error::NonMonotonic {
                    row,
                    prev: prev.to_string(),
                    next: ts.to_string(),
                });
            }
        }
        timestamps.push(ts);
        for (j, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::CsvCell {
                row,
                column: columns[j].clone(),
                message: format!("non-numeric value `{cell}`"),
            })?;
            flat.push(v);
        }
    }
    let values = Array2::from_shape_vec((timestamps.len(), width), flat)
        .map_err(|e| Error::Csv(e.to_string()))?;
    Ok(RawTable {
        timestamps,
        columns,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderMode {
    /// Ratios applied to the full table length.
    Ratio,
    /// Ratios applied to a fixed row budget; rows past it are ignored (ETT convention).
    FixedRows { total_rows: usize },
}

/// Train/val/test proportions as integer parts, e.g. 7:1:2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub parts: [u32; 3],
    pub border_mode: BorderMode,
}

impl SplitSpec {
    pub fn ratio(train: u32, val: u32, test: u32) -> Self {
        SplitSpec {
            parts: [train, val, test],
            border_mode: BorderMode::Ratio,
        }
    }

    /// ETTh*: 12/4/4 months of hourly rows.
    pub fn ett_hourly() -> Self {
        SplitSpec {
            parts: [6, 2, 2],
            border_mode: BorderMode::FixedRows {
                total_rows: 20 * 30 * 24,
            },
        }
    }

    /// ETTm*: 12/4/4 months of 15-minute rows.
    pub fn ett_minutely() -> Self {
        SplitSpec {
            parts: [6, 2, 2],
            border_mode: BorderMode::FixedRows {
                total_rows: 20 * 30 * 24 * 4,
            },
        }
    }

    /// Default split for a dataset name: 6:2:2 for ETT, 7:1:2 otherwise.
    pub fn for_dataset(name: &str) -> Self {
        if name.starts_with("ETTh") {
            Self::ett_hourly()
        } else if name.starts_with("ETTm") {
            Self::ett_minutely()
        } else {
            Self::ratio(7, 1, 2)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts.contains(&0) {
            return Err(Error::Config(format!(
                "split parts must be positive, got {:?}",
                self.parts
            )));
        }
        Ok(())
    }

    /// Row counts (train, val, test) for a table of `rows` rows.
    pub fn row_counts(&self, rows: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let total = match self.border_mode {
            BorderMode::Ratio => rows,
            BorderMode::FixedRows { total_rows } => {
                if rows < total_rows {
                    return Err(Error::SegmentTooShort {
                        segment: "table",
                        rows,
                        needed: total_rows,
                    });
                }
                total_rows
            }
        };
        let sum: usize = self.parts.iter().map(|&p| p as usize).sum();
        let train = total * self.parts[0] as usize / sum;
        let test = total * self.parts[2] as usize / sum;
        let val = total - train - test;
        Ok((train, val, test))
    }
}

/// Per-variate z-score parameters fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Variates whose std was zero and replaced by 1.
    pub degenerate: Vec<bool>,
}

impl NormalizationStats {
    pub fn fit(train: ArrayView2<'_, f64>) -> Result<Self> {
        if train.nrows() == 0 {
            return Err(Error::Empty("normalization fit on zero rows"));
        }
        let n = train.nrows() as f64;
        let mut mean = Vec::with_capacity(train.ncols());
        let mut std = Vec::with_capacity(train.ncols());
        let mut degenerate = Vec::with_capacity(train.ncols());
        for col in train.axis_iter(Axis(1)) {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let m = if lo == hi { lo } else { col.sum() / n };
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(m);
            if sd > 1e-12 * m.abs().max(1.0) && sd.is_finite() {
                std.push(sd);
                degenerate.push(false);
            } else {
                std.push(1.0);
                degenerate.push(true);
            }
        }
        Ok(NormalizationStats {
            mean,
            std,
            degenerate,
        })
    }

    pub fn normalize(&self, values: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = values.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, sd) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - m) / sd);
        }
        out
    }

    pub fn denormalize(&self, values: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = values.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, sd) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| v * sd + m);
        }
        out
    }

    /// Map a normalized endogenous series back to raw units.
    pub fn denormalize_endogenous(&self, values: &[f64]) -> Vec<f64> {
        let j = self.mean.len() - 1;
        values.iter().map(|v| v * self.std[j] + self.mean[j]).collect()
    }
}

/// One contiguous slice of a table, normalized with training statistics.
#[derive(Debug, Clone)]
pub struct Segment {
    pub name: &'static str,
    pub dataset_id: String,
    /// Absolute row index (in the source table) of the first row.
    pub row_offset: usize,
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Array2<f64>,
    pub raw: Array2<f64>,
}

impl Segment {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn variates(&self) -> usize {
        self.values.ncols()
    }

    /// Windows obtainable with stride 1.
    pub fn window_count(&self, look_back: usize, horizon: usize) -> usize {
        (self.rows() + 1).saturating_sub(look_back + horizon)
    }
}

#[derive(Debug, Clone)]
pub struct SplitSegments {
    pub train: Segment,
    pub val: Segment,
    pub test: Segment,
    pub stats: NormalizationStats,
}

pub fn split_and_normalize(
    dataset_id: &str,
    table: &RawTable,
    spec: &SplitSpec,
    look_back: usize,
    horizon: usize,
) -> Result<SplitSegments> {
    let needed = look_back + horizon;
    if table.rows() < needed.max(1) {
        return Err(Error::SegmentTooShort {
            segment: "table",
            rows: table.rows(),
            needed,
        });
    }
    let (n_train, n_val, n_test) = spec.row_counts(table.rows())?;
    let total = n_train + n_val + n_test;
    let borders = [
        ("train", 0, n_train),
        ("val", n_train.saturating_sub(look_back), n_train + n_val),
        ("test", (n_train + n_val).saturating_sub(look_back), total),
    ];

    let stats = NormalizationStats::fit(table.values.slice(s![0..n_train, ..]))?;
    for (j, &deg) in stats.degenerate.iter().enumerate() {
        if deg {
            log::warn!(
                "{dataset_id}: variate `{}` is constant on the training split; std set to 1",
                table.columns[j]
            );
        }
    }

    let mut segs = Vec::with_capacity(3);
    for (name, lo, hi) in borders {
        let rows = hi - lo;
        if rows < needed.max(1) {
            return Err(Error::SegmentTooShort {
                segment: name,
                rows,
                needed: needed.max(1),
            });
        }
        let raw = table.values.slice(s![lo..hi, ..]).to_owned();
        segs.push(Segment {
            name,
            dataset_id: dataset_id.to_string(),
            row_offset: lo,
            timestamps: table.timestamps[lo..hi].to_vec(),
            values: stats.normalize(raw.view()),
            raw,
        });
    }
    let test = segs.pop().expect("three segments");
    let val = segs.pop().expect("three segments");
    let train = segs.pop().expect("three segments");
    Ok(SplitSegments {
        train,
        val,
        test,
        stats,
    })
}

/// Window geometry. Exogenous history is right-aligned with the endogenous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub t_en: usize,
    pub t_ex: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(t_en: usize, horizon: usize) -> Self {
        WindowSpec {
            t_en,
            t_ex: t_en,
            horizon,
            stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_en == 0 || self.t_ex == 0 || self.horizon == 0 {
            return Err(Error::Window(format!(
                "lengths must be positive (t_en={}, t_ex={}, horizon={})",
                self.t_en, self.t_ex, self.horizon
            )));
        }
        if self.t_ex > self.t_en {
            return Err(Error::Window(format!(
                "exogenous look-back {} exceeds endogenous look-back {}",
                self.t_ex, self.t_en
            )));
        }
        if self.stride == 0 {
            return Err(Error::Window("stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// One supervised example. All values are in normalized space except `stats`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeWindowSample {
    pub dataset_id: String,
    pub start_timestamp: NaiveDateTime,
    pub x_en: Array1<f64>,
    /// T_ex × C
    pub x_ex: Array2<f64>,
    pub y_en: Array1<f64>,
    /// Statistics of the raw endogenous history.
    pub stats: SampleStats,
    /// Absolute table rows of the endogenous history.
    pub history_rows: Range<usize>,
    /// Absolute table rows of the target.
    pub target_rows: Range<usize>,
    pub target_start_timestamp: NaiveDateTime,
}

impl TimeWindowSample {
    pub fn exogenous_count(&self) -> usize {
        self.x_ex.ncols()
    }
}

/// Lazily windows a segment. Endogenous = last variate, exogenous = the rest.
pub struct WindowIter<'a> {
    segment: &'a Segment,
    spec: WindowSpec,
    next_start: usize,
    last_start: Option<usize>,
}

pub fn window_stream(segment: &Segment, spec: WindowSpec) -> Result<WindowIter<'_>> {
    spec.validate()?;
    if segment.variates() == 0 {
        return Err(Error::Window("segment has no variates".into()));
    }
    let span = spec.t_en + spec.horizon;
    let last_start = segment.rows().checked_sub(span);
    Ok(WindowIter {
        segment,
        spec,
        next_start: 0,
        last_start,
    })
}

impl WindowIter<'_> {
    fn make(&self, i: usize) -> TimeWindowSample {
        let seg = self.segment;
        let WindowSpec {
            t_en, t_ex, horizon, ..
        } = self.spec;
        let en = seg.variates() - 1;
        let x_en = seg.values.slice(s![i..i + t_en, en]).to_owned();
        let x_ex = seg.values.slice(s![i + t_en - t_ex..i + t_en, ..en]).to_owned();
        let y_en = seg
            .values
            .slice(s![i + t_en..i + t_en + horizon, en])
            .to_owned();
        let raw_hist = seg.raw.slice(s![i..i + t_en, en]);
        let stats = SampleStats::from_history(seg.timestamps[i], raw_hist.iter().copied());
        let abs = seg.row_offset + i;
        TimeWindowSample {
            dataset_id: seg.dataset_id.clone(),
            start_timestamp: seg.timestamps[i],
            x_en,
            x_ex,
            y_en,
            stats,
            history_rows: abs..abs + t_en,
            target_rows: abs + t_en..abs + t_en + horizon,
            target_start_timestamp: seg.timestamps[i + t_en],
        }
    }
}

impl Iterator for WindowIter<'_> {
    type Item = TimeWindowSample;

    fn next(&mut self) -> Option<Self::Item> {
        let last = self.last_start?;
        if self.next_start > last {
            return None;
        }
        let item = self.make(self.next_start);
        self.next_start += self.spec.stride;
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = match self.last_start {
            Some(last) if self.next_start <= last => (last - self.next_start) / self.spec.stride + 1,
            _ => 0,
        };
        (n, Some(n))
    }
}

impl ExactSizeIterator for WindowIter<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};

    fn hourly(rows: usize) -> Vec<NaiveDateTime> {
        let t0 = NaiveDate::from_ymd_opt(2016, 7, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        (0..rows).map(|i| t0 + Duration::hours(i as i64)).collect()
    }

    fn table(rows: usize, cols: usize) -> RawTable {
        RawTable {
            timestamps: hourly(rows),
            columns: (0..cols).map(|j| format!("v{j}")).collect(),
            values: Array2::from_shape_fn((rows, cols), |(i, j)| {
                (i as f64 * 0.37 + j as f64).sin() * (j + 1) as f64 + j as f64
            }),
        }
    }

    #[test]
    fn parses_small_csv() {
        let csv = "date,a,b\n2020-01-01 00:00:00,1,2\n2020-01-01 01:00:00,3,4\n\
                   2020-01-01T02:00:00,5,6\n2020-01-01 03:00:00,7,8\n";
        let t = read_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.rows(), 4);
        assert_eq!(t.columns, vec!["a", "b"]);
        assert_eq!(t.values[[3, 1]], 8.0);
    }

    #[test]
    fn non_numeric_cell_is_named() {
        let csv = "date,a,b\n2020-01-01 00:00:00,1,2\n2020-01-01 01:00:00,3,oops\n";
        match read_csv(csv.as_bytes()) {
            Err(Error::CsvCell { row, column, message }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
                assert!(message.contains("oops"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_monotonic_and_bad_timestamps() {
        let csv = "date,a\n2020-01-01 01:00:00,1\n2020-01-01 00:00:00,2\n";
        assert!(matches!(
            read_csv(csv.as_bytes()),
            Err(Error::NonMonotonic { row: 2, .. })
        ));
        let csv = "date,a\n01/02/2020,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes()),
            Err(Error::CsvCell { row: 1, .. })
        ));
    }

    #[test]
    fn moves_endogenous_column_last() {
        let t = table(5, 3).with_endogenous_last("v0").unwrap();
        assert_eq!(t.columns, vec!["v1", "v2", "v0"]);
        assert_eq!(t.values[[2, 2]], table(5, 3).values[[2, 0]]);
    }

    #[test]
    fn descriptor_validation() {
        let mut d = DatasetDescriptor {
            name: "NP".into(),
            domain: "Electricity".into(),
            frequency: "1 Hour".into(),
            variate_names: vec!["load".into(), "wind".into(), "price".into()],
            endogenous_name: "price".into(),
            endogenous_description: None,
            exogenous_descriptions: "Grid Load, Wind Power".into(),
            source_note: String::new(),
        };
        d.validate().unwrap();
        d.endogenous_name = "load".into();
        assert!(d.validate().is_err());
        d.endogenous_name = "price".into();
        d.variate_names[1] = "load".into();
        assert!(d.validate().is_err());
    }

    #[test]
    fn ett_hourly_window_counts() {
        // 17,420 rows, of which the first 14,400 are used
        let t = table(17_420, 7);
        let segs = split_and_normalize("ETTh1", &t, &SplitSpec::ett_hourly(), 96, 0).unwrap();
        assert_eq!(segs.train.window_count(96, 0), 8_545);
        assert_eq!(segs.val.window_count(96, 0), 2_881);
        assert_eq!(segs.test.window_count(96, 0), 2_881);
    }

    #[test]
    fn epf_window_counts() {
        // 2013-01-01 .. 2018-12-24 hourly
        let t = table(52_416, 3);
        let segs = split_and_normalize("NP", &t, &SplitSpec::ratio(7, 1, 2), 168, 24).unwrap();
        assert_eq!(segs.train.window_count(168, 24), 36_500);
        assert_eq!(segs.val.window_count(168, 24), 5_219);
        assert_eq!(segs.test.window_count(168, 24), 10_460);
    }

    #[test]
    fn constant_column_is_flagged() {
        let mut t = table(200, 3);
        t.values.column_mut(1).fill(4.2);
        let segs = split_and_normalize("x", &t, &SplitSpec::ratio(7, 1, 2), 10, 5).unwrap();
        assert!(segs.stats.degenerate[1]);
        assert!(!segs.stats.degenerate[0]);
        assert_eq!(segs.stats.std[1], 1.0);
        assert!(segs.train.values.column(1).iter().all(|&v| v == 0.0));
        assert!(segs.test.values.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_segment_errors() {
        let t = table(100, 2);
        assert!(matches!(
            split_and_normalize("x", &t, &SplitSpec::ratio(7, 1, 2), 96, 24),
            Err(Error::SegmentTooShort { .. })
        ));
        let t = table(100, 2);
        // val segment has 10 + 10 rows, needs 35
        assert!(matches!(
            split_and_normalize("x", &t, &SplitSpec::ratio(7, 1, 2), 10, 25),
            Err(Error::SegmentTooShort { segment: "val", .. })
        ));
    }

    #[test]
    fn window_counts_and_columns() {
        let t = table(400, 7);
        let segs = split_and_normalize("ETTx", &t, &SplitSpec::ratio(7, 1, 2), 96, 24).unwrap();
        let mut seg = segs.train.clone();
        seg.values = seg.values.slice(s![0..120, ..]).to_owned();
        seg.raw = seg.raw.slice(s![0..120, ..]).to_owned();
        seg.timestamps.truncate(120);
        let w: Vec<_> = window_stream(&seg, WindowSpec::new(96, 24)).unwrap().collect();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].x_en.len(), 96);
        assert_eq!(w[0].x_ex.dim(), (96, 6));
        assert_eq!(w[0].x_en[5], seg.values[[5, 6]]);
        assert_eq!(w[0].x_ex[[5, 2]], seg.values[[5, 2]]);
        assert_eq!(w[0].y_en[0], seg.values[[96, 6]]);
    }

    #[test]
    fn exogenous_window_is_right_aligned() {
        let t = table(300, 3);
        let segs = split_and_normalize("x", &t, &SplitSpec::ratio(7, 1, 2), 48, 12).unwrap();
        let spec = WindowSpec {
            t_en: 48,
            t_ex: 16,
            horizon: 12,
            stride: 1,
        };
        let s0 = window_stream(&segs.train, spec).unwrap().next().unwrap();
        assert_eq!(s0.x_ex.nrows(), 16);
        assert_eq!(s0.x_ex[[0, 1]], segs.train.values[[32, 1]]);
        let bad = WindowSpec { t_ex: 49, ..spec };
        assert!(matches!(window_stream(&segs.train, bad), Err(Error::Window(_))));
    }

    #[test]
    fn strided_windows() {
        let t = table(300, 2);
        let segs = split_and_normalize("x", &t, &SplitSpec::ratio(7, 1, 2), 20, 5).unwrap();
        let spec = WindowSpec {
            stride: 3,
            ..WindowSpec::new(20, 5)
        };
        let it = window_stream(&segs.train, spec).unwrap();
        let n = it.len();
        let v: Vec<_> = it.collect();
        assert_eq!(v.len(), n);
        assert_eq!(n, (210 - 25) / 3 + 1);
        assert_eq!(v[1].history_rows.start, 3);
    }
}
