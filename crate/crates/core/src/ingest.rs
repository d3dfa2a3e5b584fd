//! Batch ingestion: sample logs and annotation files in, labeled feature rows out.
//!
//! Sample logs come as csv (`ts,dev,co2,voc,pm25,pm10,t,rh`) or ndjson with the
//! same keys. Samples are snapped onto a regular grid, short gaps are
//! forward-filled, and each annotation becomes one window of features.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{extract_features, feature_schema, FeatureConfig, FeatureError, FeatureSchema};
use crate::model::{
    parse_activity_label, validate_sample, ActivityAnnotation, ActivityLabel, DeviceId,
    PollutantKind, PollutantSample, Readings,
};
use crate::series::AlignedSeries;

/// Longest gap, in seconds, that alignment forward-fills.
pub const MAX_FILL_GAP: f64 = 5.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: unknown activity label `{text}`")]
    UnknownLabel { line: usize, text: String },
    #[error("unsupported format `{0}`")]
    UnsupportedFormat(String),
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error("no samples to align")]
    EmptyInput,
    #[error("sample from unknown device `{0}`")]
    UnknownDevice(String),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    Csv,
    Ndjson,
}

impl std::str::FromStr for SampleFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(SampleFormat::Csv),
            "ndjson" | "jsonl" => Ok(SampleFormat::Ndjson),
            other => Err(IngestError::UnsupportedFormat(other.to_string())),
        }
    }
}

impl SampleFormat {
    /// Guess from a file extension.
    pub fn from_path(path: &std::path::Path) -> Result<Self, IngestError> {
        path.extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default()
            .parse()
    }
}

/// A record that failed to parse or validate, by 1-based physical line.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordIssue {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub samples: Vec<PollutantSample>,
    pub rejected: Vec<RecordIssue>,
}

pub const SAMPLE_CSV_HEADER: &str = "ts,dev,co2,voc,pm25,pm10,t,rh";

/// Parses a sample log. Bad records are collected in `rejected`, or abort the
/// parse when `strict` is set.
pub fn parse_sample_log<R: Read>(mut stream: R, format: SampleFormat, strict: bool) -> Result<ParsedLog, IngestError> {
    let mut bytes = Vec::new();
    stream.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes).map_err(|_| IngestError::InvalidUtf8)?;
    let mut out = ParsedLog::default();
    let reject = |out: &mut ParsedLog, line: usize, reason: String| -> Result<(), IngestError> {
        if strict {
            return Err(IngestError::MalformedRecord { line, reason });
        }
        log::warn!("skipping record at line {line}: {reason}");
        out.rejected.push(RecordIssue { line, reason });
        Ok(())
    };
    match format {
        SampleFormat::Ndjson => {
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match parse_ndjson_sample(line).and_then(|s| validate_sample(s).map_err(|e| e.to_string())) {
                    Ok(s) => out.samples.push(s.into_inner()),
                    Err(reason) => reject(&mut out, i + 1, reason)?,
                }
            }
        }
        SampleFormat::Csv => {
            let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
            let Some((_, header)) = lines.next() else {
                return Ok(out);
            };
            let columns = CsvColumns::from_header(header).map_err(|reason| IngestError::MalformedRecord { line: 1, reason })?;
            for (i, line) in lines {
                match columns
                    .parse(line)
                    .and_then(|s| validate_sample(s).map_err(|e| e.to_string()))
                {
                    Ok(s) => out.samples.push(s.into_inner()),
                    Err(reason) => reject(&mut out, i + 1, reason)?,
                }
            }
        }
    }
    Ok(out)
}

struct CsvColumns {
    ts: usize,
    dev: usize,
    readings: Vec<(usize, PollutantKind)>,
}

impl CsvColumns {
    fn from_header(header: &str) -> Result<Self, String> {
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        let find = |name: &str| names.iter().position(|n| n.eq_ignore_ascii_case(name));
        let ts = find("ts").ok_or("header lacks `ts` column")?;
        let dev = find("dev").ok_or("header lacks `dev` column")?;
        let readings = PollutantKind::ALL
            .into_iter()
            .filter_map(|k| find(k.token()).map(|i| (i, k)))
            .collect();
        Ok(Self { ts, dev, readings })
    }

    fn parse(&self, line: &str) -> Result<PollutantSample, String> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let field = |i: usize| fields.get(i).copied().unwrap_or("");
        let ts = parse_number(field(self.ts)).ok_or_else(|| format!("bad ts `{}`", field(self.ts)))?;
        let device = DeviceId::new(field(self.dev)).map_err(|e| e.to_string())?;
        let mut readings = Readings::new();
        for &(i, kind) in &self.readings {
            let raw = field(i);
            if raw.is_empty() {
                continue;
            }
            let v = parse_number(raw).ok_or_else(|| format!("bad {kind} value `{raw}`"))?;
            readings.set(kind, Some(v));
        }
        Ok(PollutantSample { ts, device, readings })
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok()
}

/// Parses one ndjson sample object; unknown keys are ignored.
pub fn parse_ndjson_sample(line: &str) -> Result<PollutantSample, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("invalid json: {e}"))?;
    let obj = value.as_object().ok_or("record is not a json object")?;
    let ts = obj
        .get("ts")
        .and_then(serde_json::Value::as_f64)
        .ok_or("missing or non-numeric `ts`")?;
    let dev = obj
        .get("dev")
        .and_then(serde_json::Value::as_str)
        .ok_or("missing or non-string `dev`")?;
    let device = DeviceId::new(dev).map_err(|e| e.to_string())?;
    let mut readings = Readings::new();
    for kind in PollutantKind::ALL {
        match obj.get(kind.token()) {
            None | Some(serde_json::Value::Null) => {}
            Some(v) => {
                let x = v.as_f64().ok_or_else(|| format!("non-numeric `{}`", kind.token()))?;
                readings.set(kind, Some(x));
            }
        }
    }
    Ok(PollutantSample { ts, device, readings })
}

/// Canonical single-line json form of a sample, without trailing newline.
/// Numbers are written in shortest round-trip form.
pub fn sample_to_ndjson(sample: &PollutantSample) -> String {
    let mut line = String::with_capacity(96);
    line.push_str("{\"ts\":");
    line.push_str(&json_number(sample.ts));
    line.push_str(",\"dev\":");
    line.push_str(&serde_json::Value::String(sample.device.to_string()).to_string());
    for (kind, v) in sample.readings.iter() {
        line.push_str(",\"");
        line.push_str(kind.token());
        line.push_str("\":");
        line.push_str(&json_number(v));
    }
    line.push('}');
    line
}

fn json_number(v: f64) -> String {
    serde_json::to_string(&v).unwrap_or_else(|_| "null".into())
}

pub fn write_sample_log<W: Write>(mut sink: W, samples: &[PollutantSample], format: SampleFormat) -> std::io::Result<()> {
    match format {
        SampleFormat::Ndjson => {
            for s in samples {
                writeln!(sink, "{}", sample_to_ndjson(s))?;
            }
        }
        SampleFormat::Csv => {
            writeln!(sink, "{SAMPLE_CSV_HEADER}")?;
            for s in samples {
                write!(sink, "{},{}", s.ts, s.device)?;
                for kind in PollutantKind::ALL {
                    match s.readings.get(kind) {
                        Some(v) => write!(sink, ",{v}")?,
                        None => write!(sink, ",")?,
                    }
                }
                writeln!(sink)?;
            }
        }
    }
    Ok(())
}

/// Reads `ts,label[,annotator]` rows, returning annotations sorted by time.
/// A header row is optional.
pub fn parse_annotations<R: Read>(stream: R) -> Result<Vec<ActivityAnnotation>, IngestError> {
    let reader = std::io::BufReader::new(stream);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => IngestError::InvalidUtf8,
            _ => IngestError::Io(e),
        })?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if line_no == 1 && fields[0].eq_ignore_ascii_case("ts") {
            continue;
        }
        if fields.len() < 2 {
            return Err(IngestError::MalformedRecord {
                line: line_no,
                reason: "expected ts,label[,annotator]".into(),
            });
        }
        let ts = parse_number(fields[0])
            .filter(|t| t.is_finite())
            .ok_or_else(|| IngestError::MalformedRecord {
                line: line_no,
                reason: format!("bad ts `{}`", fields[0]),
            })?;
        let label = parse_activity_label(fields[1]).map_err(|_| IngestError::UnknownLabel {
            line: line_no,
            text: fields[1].to_string(),
        })?;
        let annotator = fields.get(2).filter(|a| !a.is_empty()).map(|a| a.to_string());
        out.push(ActivityAnnotation { ts, label, annotator });
    }
    out.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    Ok(out)
}

pub fn write_annotations<W: Write>(mut sink: W, annotations: &[ActivityAnnotation]) -> std::io::Result<()> {
    writeln!(sink, "ts,label,annotator")?;
    for a in annotations {
        writeln!(sink, "{},{},{}", a.ts, a.label, a.annotator.as_deref().unwrap_or(""))?;
    }
    Ok(())
}

/// Global grid cell of a timestamp: nearest multiple of `step`, ties to the earlier cell.
fn grid_cell(ts: f64, step: f64) -> i64 {
    (ts / step - 0.5).ceil() as i64
}

/// Snaps samples onto one grid spanning the earliest to the latest sample.
///
/// Grid times are multiples of `step`. When several samples land on one cell,
/// each reading is taken from the last sample (in input order) that carries it.
/// Gaps of at most [`MAX_FILL_GAP`] seconds are forward-filled; longer gaps
/// stay missing.
pub fn align_series(samples: &[PollutantSample], devices: &[DeviceId], step: f64) -> Result<AlignedSeries, IngestError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(IngestError::ConfigMismatch(format!("step must be positive, got {step}")));
    }
    if samples.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let mut device_idx = Vec::with_capacity(samples.len());
    for s in samples {
        let d = devices
            .iter()
            .position(|d| d == &s.device)
            .ok_or_else(|| IngestError::UnknownDevice(s.device.to_string()))?;
        device_idx.push(d);
    }
    let cells: Vec<i64> = samples.iter().map(|s| grid_cell(s.ts, step)).collect();
    let first = *cells.iter().min().expect("non-empty");
    let last = *cells.iter().max().expect("non-empty");
    let len = usize::try_from(last - first + 1)
        .map_err(|_| IngestError::ConfigMismatch("grid span overflow".into()))?;
    let mut series = AlignedSeries::empty(devices.to_vec(), first as f64 * step, step, len);
    for ((s, &d), &c) in samples.iter().zip(&device_idx).zip(&cells) {
        let k = (c - first) as usize;
        for (kind, v) in s.readings.iter() {
            series.set(d, kind, k, Some(v));
        }
    }
    let max_fill = (MAX_FILL_GAP / step + 1e-9).floor() as usize;
    for d in 0..devices.len() {
        for kind in PollutantKind::ALL {
            forward_fill(series.channel_mut(d, kind), max_fill);
        }
    }
    Ok(series)
}

fn forward_fill(channel: &mut [f64], max_cells: usize) {
    let mut i = 0;
    let mut last: Option<f64> = None;
    while i < channel.len() {
        if !channel[i].is_nan() {
            last = Some(channel[i]);
            i += 1;
            continue;
        }
        let start = i;
        while i < channel.len() && channel[i].is_nan() {
            i += 1;
        }
        if let Some(v) = last {
            if i - start <= max_cells {
                channel[start..i].fill(v);
            }
        }
    }
}

/// Like [`align_series`], but starts a new series wherever no device reports
/// for more than `split_gap` seconds, so long outages cost no memory.
pub fn align_segments(
    samples: &[PollutantSample],
    devices: &[DeviceId],
    step: f64,
    split_gap: f64,
) -> Result<Vec<AlignedSeries>, IngestError> {
    if samples.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    // Stable sort keeps input order among samples of one cell, preserving last-wins.
    order.sort_by_key(|&i| grid_cell(samples[i].ts, step));
    let max_cells = (split_gap / step).max(1.0);
    let mut segments = Vec::new();
    let mut group: Vec<PollutantSample> = Vec::new();
    let mut prev_cell: Option<i64> = None;
    for i in order {
        let cell = grid_cell(samples[i].ts, step);
        if let Some(p) = prev_cell {
            if (cell - p) as f64 > max_cells {
                segments.push(align_series(&group, devices, step)?);
                group.clear();
            }
        }
        prev_cell = Some(cell);
        group.push(samples[i].clone());
    }
    segments.push(align_series(&group, devices, step)?);
    Ok(segments)
}

/// Flattens a series back into samples, one per device and populated cell.
pub fn series_to_samples(series: &AlignedSeries) -> Vec<PollutantSample> {
    let mut out = Vec::new();
    for k in 0..series.len() {
        for (d, device) in series.devices().iter().enumerate() {
            let mut readings = Readings::new();
            for kind in PollutantKind::ALL {
                readings.set(kind, series.get(d, kind, k));
            }
            if !readings.is_empty() {
                out.push(PollutantSample {
                    ts: series.time(k),
                    device: device.clone(),
                    readings,
                });
            }
        }
    }
    out
}

/// Where a window sits relative to its annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowPlacement {
    /// `[t - tau/2, t + tau/2)`
    #[default]
    Centered,
    /// `[t - tau, t)`
    Trailing,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub placement: WindowPlacement,
    pub features: FeatureConfig,
}

impl WindowConfig {
    pub fn window_start(&self, t: f64) -> f64 {
        match self.placement {
            WindowPlacement::Centered => t - self.features.tau / 2.0,
            WindowPlacement::Trailing => t - self.features.tau,
        }
    }

    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex_digest(text.as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub window_start: f64,
    pub window_len: f64,
    pub label: ActivityLabel,
    pub annotation_ts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub features: Vec<f64>,
    pub label: ActivityLabel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub out_of_bounds: usize,
    pub too_many_missing: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.out_of_bounds + self.too_many_missing
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub seed: Option<u64>,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub schema: FeatureSchema,
    pub rows: Vec<LabeledRow>,
    /// One per row when built from telemetry; empty when loaded from csv.
    pub windows: Vec<LabeledWindow>,
    pub skipped: SkipCounts,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.rows.iter().map(|r| r.features.as_slice()).collect()
    }

    pub fn labels(&self) -> Vec<ActivityLabel> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            windows: if self.windows.len() == self.rows.len() {
                indices.iter().map(|&i| self.windows[i].clone()).collect()
            } else {
                Vec::new()
            },
            skipped: SkipCounts::default(),
            provenance: self.provenance.clone(),
        }
    }
}

pub fn build_labeled_windows(
    aligned: &AlignedSeries,
    annotations: &[ActivityAnnotation],
    cfg: &WindowConfig,
) -> Result<LabeledDataset, IngestError> {
    build_labeled_windows_multi(std::slice::from_ref(aligned), annotations, cfg)
}

/// Builds one feature row per annotation from whichever segment fully
/// contains its window. Annotations without a complete, sufficiently
/// populated window are counted in `skipped`.
pub fn build_labeled_windows_multi(
    segments: &[AlignedSeries],
    annotations: &[ActivityAnnotation],
    cfg: &WindowConfig,
) -> Result<LabeledDataset, IngestError> {
    let first = segments.first().ok_or(IngestError::EmptyInput)?;
    let devices = first.devices().to_vec();
    let step = first.step();
    if segments
        .iter()
        .any(|s| s.devices() != devices.as_slice() || (s.step() - step).abs() > 1e-12)
    {
        return Err(IngestError::ConfigMismatch(
            "segments disagree on devices or grid step".into(),
        ));
    }
    let cells = cfg.features.window_cells(step)?;
    let schema = feature_schema(&devices, &cfg.features)?;

    let mut rows = Vec::new();
    let mut windows = Vec::new();
    let mut skipped = SkipCounts::default();
    for ann in annotations {
        let start_time = cfg.window_start(ann.ts);
        let hit = segments.iter().find_map(|seg| {
            let start = seg.first_cell_at_or_after(start_time);
            let start = usize::try_from(start).ok()?;
            seg.window(start, cells)
        });
        let Some(window) = hit else {
            skipped.out_of_bounds += 1;
            continue;
        };
        match extract_features(&window, &cfg.features) {
            Ok(v) => {
                windows.push(LabeledWindow {
                    window_start: window.start_time(),
                    window_len: cfg.features.tau,
                    label: ann.label,
                    annotation_ts: ann.ts,
                });
                rows.push(LabeledRow {
                    features: v.0,
                    label: ann.label,
                });
            }
            Err(FeatureError::TooManyMissing { .. }) => skipped.too_many_missing += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if skipped.total() > 0 {
        log::warn!(
            "skipped {} of {} annotations ({} out of bounds, {} with too many missing cells)",
            skipped.total(),
            annotations.len(),
            skipped.out_of_bounds,
            skipped.too_many_missing
        );
    }
    Ok(LabeledDataset {
        schema,
        rows,
        windows,
        skipped,
        provenance: Provenance {
            sources: Vec::new(),
            seed: None,
            config_digest: cfg.digest(),
        },
    })
}

/// Features of every complete window `[start, start + tau)` whose start moves
/// by `stride` seconds from the beginning of the series. Windows with too many
/// missing cells are skipped.
pub fn sliding_windows(
    series: &AlignedSeries,
    features: &FeatureConfig,
    stride: f64,
) -> Result<Vec<(f64, Vec<f64>)>, IngestError> {
    let cells = features.window_cells(series.step())?;
    let stride_cells = (stride / series.step()).round() as usize;
    if stride_cells == 0 {
        return Err(IngestError::ConfigMismatch(format!("stride {stride} is below the grid step")));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while let Some(window) = series.window(start, cells) {
        match extract_features(&window, features) {
            Ok(v) => out.push((window.start_time(), v.0)),
            Err(FeatureError::TooManyMissing { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        start += stride_cells;
    }
    Ok(out)
}

/// Writes the schema names plus a final `label` column, one row per window.
pub fn write_dataset_csv<W: Write>(sink: W, dataset: &LabeledDataset) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<&str> = dataset.schema.names().iter().map(String::as_str).collect();
    header.push("label");
    w.write_record(&header).map_err(csv_io)?;
    for row in &dataset.rows {
        let mut record: Vec<String> = row.features.iter().map(|v| v.to_string()).collect();
        record.push(row.label.to_string());
        w.write_record(&record).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> IngestError {
    IngestError::Io(std::io::Error::other(e))
}

pub fn read_dataset_csv<R: Read>(stream: R) -> Result<LabeledDataset, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(stream);
    let header = reader
        .headers()
        .map_err(|e| IngestError::MalformedRecord { line: 1, reason: e.to_string() })?
        .clone();
    let names: Vec<String> = header.iter().map(str::to_string).collect();
    if names.last().map(String::as_str) != Some("label") || names.len() < 2 {
        return Err(IngestError::MalformedRecord {
            line: 1,
            reason: "last column must be `label`".into(),
        });
    }
    let width = names.len() - 1;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| IngestError::MalformedRecord { line, reason: e.to_string() })?;
        if record.len() != names.len() {
            return Err(IngestError::MalformedRecord {
                line,
                reason: format!("expected {} fields, found {}", names.len(), record.len()),
            });
        }
        let mut features = Vec::with_capacity(width);
        for field in record.iter().take(width) {
            let v = parse_number(field)
                .filter(|v| v.is_finite())
                .ok_or_else(|| IngestError::MalformedRecord {
                    line,
                    reason: format!("bad feature value `{field}`"),
                })?;
            features.push(v);
        }
        let text = &record[width];
        let label = parse_activity_label(text).map_err(|_| IngestError::UnknownLabel {
            line,
            text: text.to_string(),
        })?;
        rows.push(LabeledRow { features, label });
    }
    let mut names = names;
    names.pop();
    Ok(LabeledDataset {
        schema: FeatureSchema::from_names(names),
        rows,
        windows: Vec::new(),
        skipped: SkipCounts::default(),
        provenance: Provenance::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev(s: &str) -> DeviceId {
        DeviceId::new(s).unwrap()
    }

    fn co2_sample(ts: f64, device: &str, co2: f64) -> PollutantSample {
        PollutantSample {
            ts,
            device: dev(device),
            readings: Readings::new().with(PollutantKind::Co2, co2),
        }
    }

    #[test]
    fn csv_log() {
        let text = "ts,dev,co2,voc,pm25,pm10,t,rh\n\
                    1700000000,d1,412,100,10,20,25,50\n\
                    1700000001,d1,413,,10,20,25,50\n\
                    1700000002,d1,414,100,10,20,25,50\n";
        let log = parse_sample_log(text.as_bytes(), SampleFormat::Csv, false).unwrap();
        assert_eq!(log.samples.len(), 3);
        assert!(log.rejected.is_empty());
        assert_eq!(log.samples[1].readings.get(PollutantKind::Voc), None);
        assert_eq!(log.samples[2].readings.get(PollutantKind::Co2), Some(414.0));
    }

    #[test]
    fn csv_log_bad_record() {
        let text = "ts,dev,co2\n1700000000,d1,abc\n1700000001,d1,400\n1700000002,d1,401\n";
        let log = parse_sample_log(text.as_bytes(), SampleFormat::Csv, false).unwrap();
        assert_eq!(log.samples.len(), 2);
        assert_eq!(log.rejected.len(), 1);
        assert_eq!(log.rejected[0].line, 2);
        let strict = parse_sample_log(text.as_bytes(), SampleFormat::Csv, true);
        assert!(matches!(strict, Err(IngestError::MalformedRecord { line: 2, .. })));
    }

    #[test]
    fn csv_unknown_columns_ignored() {
        let text = "dev,no2,ts,co2\nd1,3.0,1700000000,400\n";
        let log = parse_sample_log(text.as_bytes(), SampleFormat::Csv, true).unwrap();
        assert_eq!(log.samples[0].ts, 1_700_000_000.0);
        assert_eq!(log.samples[0].readings.get(PollutantKind::Co2), Some(400.0));
    }

    #[test]
    fn ndjson_log() {
        let text = "{\"ts\":1700000000,\"dev\":\"d1\",\"co2\":412.0,\"no2\":7}\n\
                    \n\
                    {\"ts\":\"x\"}\n\
                    {\"ts\":1700000001,\"dev\":\"d1\",\"rh\":130}\n";
        let log = parse_sample_log(text.as_bytes(), SampleFormat::Ndjson, false).unwrap();
        assert_eq!(log.samples.len(), 1);
        assert_eq!(
            log.rejected.iter().map(|r| r.line).collect::<Vec<_>>(),
            vec![3, 4]
        );
    }

    #[test]
    fn ndjson_write_then_read() {
        let samples = vec![
            PollutantSample {
                ts: 1_700_000_000.25,
                device: dev("d1"),
                readings: Readings::new()
                    .with(PollutantKind::Co2, 412.123_456_789_012_3)
                    .with(PollutantKind::Humidity, 55.5),
            },
            co2_sample(1_700_000_001.0, "d2", 0.1 + 0.2),
        ];
        for format in [SampleFormat::Ndjson, SampleFormat::Csv] {
            let mut buf = Vec::new();
            write_sample_log(&mut buf, &samples, format).unwrap();
            let back = parse_sample_log(buf.as_slice(), format, true).unwrap();
            assert_eq!(back.samples, samples);
        }
    }

    #[test]
    fn non_utf8_input() {
        let bytes = [0xff, 0xfe, b'\n'];
        assert!(matches!(
            parse_sample_log(&bytes[..], SampleFormat::Ndjson, false),
            Err(IngestError::InvalidUtf8)
        ));
    }

    #[test]
    fn annotations() {
        let text = "ts,label,annotator\n1700000060,fan on,v2\n1700000000,enter,v1\n1700000030,Exit\n";
        let anns = parse_annotations(text.as_bytes()).unwrap();
        assert_eq!(anns.len(), 3);
        assert_eq!(anns[0].label, ActivityLabel::Enter);
        assert_eq!(anns[0].annotator.as_deref(), Some("v1"));
        assert_eq!(anns[1].annotator, None);
        assert_eq!(anns[2].label, ActivityLabel::FanOn);

        let bad = "1700000000,enter,v1\n1700000060,smoking\n";
        assert!(matches!(
            parse_annotations(bad.as_bytes()),
            Err(IngestError::UnknownLabel { line: 2, .. })
        ));
        assert!(matches!(
            parse_annotations("abc,enter\n".as_bytes()),
            Err(IngestError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn align_full_coverage() {
        let samples: Vec<_> = (0..600).map(|i| co2_sample(1000.0 + i as f64, "d1", 400.0)).collect();
        let s = align_series(&samples, &[dev("d1")], 1.0).unwrap();
        assert_eq!(s.len(), 600);
        assert_eq!(s.t0(), 1000.0);
        assert!(s.channel(0, PollutantKind::Co2).iter().all(|v| !v.is_nan()));
    }

    #[test]
    fn align_gap_policy() {
        // cells 0..9, then a 3-cell gap, 13..19, then a 10-cell gap, 30..34
        let mut samples = Vec::new();
        for i in (0..10).chain(13..20).chain(30..35) {
            samples.push(co2_sample(i as f64, "d1", i as f64));
        }
        let s = align_series(&samples, &[dev("d1")], 1.0).unwrap();
        let c = s.channel(0, PollutantKind::Co2);
        assert_eq!(s.len(), 35);
        assert_eq!(&c[10..13], &[9.0, 9.0, 9.0]);
        assert!(c[20..30].iter().all(|v| v.is_nan()));
        assert_eq!(c[30], 30.0);
    }

    #[test]
    fn align_duplicates_last_wins() {
        let samples = vec![
            co2_sample(0.0, "d1", 1.0),
            co2_sample(0.2, "d1", 2.0),
            co2_sample(1.0, "d1", 3.0),
        ];
        let s = align_series(&samples, &[dev("d1")], 1.0).unwrap();
        assert_eq!(s.channel(0, PollutantKind::Co2), &[2.0, 3.0]);
        // exact half-way ties snap to the earlier cell
        let tie = align_series(&[co2_sample(0.5, "d1", 9.0), co2_sample(2.0, "d1", 1.0)], &[dev("d1")], 1.0).unwrap();
        assert_eq!(tie.t0(), 0.0);
    }

    #[test]
    fn align_errors() {
        assert!(matches!(align_series(&[], &[dev("d1")], 1.0), Err(IngestError::EmptyInput)));
        assert!(matches!(
            align_series(&[co2_sample(0.0, "d9", 1.0)], &[dev("d1")], 1.0),
            Err(IngestError::UnknownDevice(_))
        ));
    }

    #[test]
    fn segments_split_on_long_outage() {
        let mut samples: Vec<_> = (0..100).map(|i| co2_sample(i as f64, "d1", 400.0)).collect();
        samples.extend((5000..5100).map(|i| co2_sample(i as f64, "d1", 401.0)));
        let segs = align_segments(&samples, &[dev("d1")], 1.0, 600.0).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].len(), segs[1].len()), (100, 100));
        assert_eq!(segs[1].t0(), 5000.0);
    }

    fn full_series(len: usize) -> AlignedSeries {
        let mut s = AlignedSeries::empty(vec![dev("d1")], 0.0, 1.0, len);
        for kind in PollutantKind::ALL {
            for (k, v) in s.channel_mut(0, kind).iter_mut().enumerate() {
                *v = 10.0 + (k % 17) as f64;
            }
        }
        s
    }

    #[test]
    fn labeled_windows_bounds() {
        let series = full_series(3600);
        let anns = vec![
            ActivityAnnotation { ts: 10.0, label: ActivityLabel::Enter, annotator: None },
            ActivityAnnotation { ts: 1800.0, label: ActivityLabel::Exit, annotator: None },
            ActivityAnnotation { ts: 3300.0, label: ActivityLabel::Eating, annotator: None },
            ActivityAnnotation { ts: 3500.0, label: ActivityLabel::Eating, annotator: None },
        ];
        let ds = build_labeled_windows(&series, &anns, &WindowConfig::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.skipped.out_of_bounds, 2);
        assert_eq!(ds.len() + ds.skipped.total(), anns.len());
        assert_eq!(ds.windows[0].window_start, 1500.0);
        assert_eq!(ds.rows[0].features.len(), 54);

        let trailing = WindowConfig {
            placement: WindowPlacement::Trailing,
            ..WindowConfig::default()
        };
        let ds = build_labeled_windows(&series, &anns, &trailing).unwrap();
        assert_eq!(ds.windows[0].window_start, 1200.0);
        assert_eq!(ds.len(), 3);
    }

    #[test]
    fn labeled_windows_missing() {
        let mut series = full_series(3600);
        series.channel_mut(0, PollutantKind::Pm10)[1500..1600].fill(f64::NAN);
        let anns = vec![ActivityAnnotation { ts: 1800.0, label: ActivityLabel::Exit, annotator: None }];
        let ds = build_labeled_windows(&series, &anns, &WindowConfig::default()).unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(ds.skipped.too_many_missing, 1);
    }

    #[test]
    fn tau_must_match_step() {
        let series = full_series(100);
        let mut cfg = WindowConfig::default();
        cfg.features.tau = 10.5;
        assert!(matches!(
            build_labeled_windows(&series, &[], &cfg),
            Err(IngestError::Feature(FeatureError::ConfigMismatch(_)))
        ));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let series = full_series(3600);
        let anns = vec![
            ActivityAnnotation { ts: 1800.0, label: ActivityLabel::AcOn, annotator: None },
            ActivityAnnotation { ts: 2000.0, label: ActivityLabel::FanOff, annotator: None },
        ];
        let ds = build_labeled_windows(&series, &anns, &WindowConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &ds).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("d1.co2.min,d1.co2.max,"));
        assert!(text.lines().next().unwrap().ends_with("d1.rh.long_stay,label"));
        let back = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back.schema, ds.schema);
        assert_eq!(back.rows, ds.rows);
    }

    #[test]
    fn sliding_window_stride() {
        let series = full_series(1200);
        let rows = sliding_windows(&series, &FeatureConfig::default(), 60.0).unwrap();
        assert_eq!(rows.len(), 11);
        assert_eq!(rows[1].0, 60.0);
    }
}
