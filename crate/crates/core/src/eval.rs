//! Evaluation protocol: splits, cross-validation, weighted metrics, ROC and
//! the benchmark report.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{LabeledDataset, Provenance};
use crate::model::ActivityLabel;
use crate::models::{train, ClassifierError, ModelSpec, TrainedModel};
use crate::rng::{derive_seed, substream};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("train fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("class `{label}` has {count} sample(s); at least {needed} required")]
    ClassTooSmall {
        label: ActivityLabel,
        count: usize,
        needed: usize,
    },
    #[error("cannot make {k} folds from {n} rows")]
    KTooLarge { k: usize, n: usize },
    #[error("labels and predictions differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label `{0}` is not in the class list")]
    UnknownClass(ActivityLabel),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unsupported report format `{0}`")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

fn classes_of(labels: &[ActivityLabel]) -> Vec<ActivityLabel> {
    let mut c = labels.to_vec();
    c.sort();
    c.dedup();
    c
}

/// Per-class shuffled index lists, classes in label order.
fn shuffled_by_class(labels: &[ActivityLabel], rng: &mut impl rand::Rng) -> Vec<(ActivityLabel, Vec<usize>)> {
    classes_of(labels)
        .into_iter()
        .map(|c| {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            idx.shuffle(rng);
            (c, idx)
        })
        .collect()
}

/// Train and test row indices, each sorted. Every class contributes
/// `round(n_c · train_frac)` rows to train, clamped so both sides get one.
pub fn stratified_split(
    labels: &[ActivityLabel],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(EvalError::InvalidFraction(train_frac));
    }
    let mut rng = substream(seed, "eval.split");
    let groups = shuffled_by_class(labels, &mut rng);
    if let Some((label, idx)) = groups.iter().find(|(_, idx)| idx.len() < 2) {
        return Err(EvalError::ClassTooSmall {
            label: *label,
            count: idx.len(),
            needed: 2,
        });
    }
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for (_, idx) in groups {
        let n = idx.len();
        let take = ((n as f64 * train_frac).round() as usize).clamp(1, n - 1);
        tr.extend_from_slice(&idx[..take]);
        te.extend_from_slice(&idx[take..]);
    }
    tr.sort_unstable();
    te.sort_unstable();
    Ok((tr, te))
}

/// Plain shuffled split ignoring classes.
pub fn random_split(n: usize, train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(EvalError::InvalidFraction(train_frac));
    }
    if n < 2 {
        return Err(EvalError::EmptyDataset);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "eval.split"));
    let take = ((n as f64 * train_frac).round() as usize).clamp(1, n - 1);
    let (mut tr, mut te) = (idx[..take].to_vec(), idx[take..].to_vec());
    tr.sort_unstable();
    te.sort_unstable();
    Ok((tr, te))
}

/// Test-fold indices (each sorted) of a stratified k-fold partition.
///
/// Rows are dealt round-robin class by class, continuing the fold counter
/// across classes, so fold sizes and per-class counts differ by at most one.
/// If some class has fewer than `k` rows this falls back to plain k-fold.
pub fn stratified_kfold(labels: &[ActivityLabel], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    let n = labels.len();
    if k < 2 || k > n {
        return Err(EvalError::KTooLarge { k, n });
    }
    let mut rng = substream(seed, "eval.kfold");
    let groups = shuffled_by_class(labels, &mut rng);
    let order: Vec<usize> = if let Some((label, idx)) = groups.iter().find(|(_, idx)| idx.len() < k) {
        log::warn!(
            "class `{}` has only {} rows for {k} folds; using unstratified folds",
            label.as_str(),
            idx.len()
        );
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all
    } else {
        groups.into_iter().flat_map(|(_, idx)| idx).collect()
    };
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Plain k-fold test indices.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 || k > n {
        return Err(EvalError::KTooLarge { k, n });
    }
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut substream(seed, "eval.kfold"));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in all.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Indices in `0..n` not in the sorted list `fold`.
pub fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n - fold.len());
    let mut j = 0;
    for i in 0..n {
        if j < fold.len() && fold[j] == i {
            j += 1;
        } else {
            out.push(i);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<ActivityLabel>,
    /// `counts[i][j]`: true class `i` predicted as `j`.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }
}

pub fn confusion_matrix(
    y_true: &[ActivityLabel],
    y_pred: &[ActivityLabel],
    classes: &[ActivityLabel],
) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let pos = |l: &ActivityLabel| classes.iter().position(|c| c == l).ok_or(EvalError::UnknownClass(*l));
    let mut counts = vec![vec![0; classes.len()]; classes.len()];
    for (t, p) in y_true.iter().zip(y_pred) {
        counts[pos(t)?][pos(p)?] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: ActivityLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Support-weighted precision, recall and F1. Precision of a never-predicted
/// class is 0, and F1 is 0 when precision and recall both are.
pub fn weighted_metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let k = cm.classes.len();
    let mut per_class = Vec::with_capacity(k);
    let (mut p, mut f) = (0.0, 0.0);
    for i in 0..k {
        let support: usize = cm.counts[i].iter().sum();
        let predicted: usize = (0..k).map(|j| cm.counts[j][i]).sum();
        let tp = cm.counts[i][i] as f64;
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let w = support as f64 / total as f64;
        p += w * precision;
        f += w * f1;
        per_class.push(ClassMetrics {
            label: cm.classes[i],
            precision,
            recall,
            f1,
            support,
        });
    }
    // Σ (support/total)·(tp/support) is exactly trace/total
    Ok(Metrics {
        precision: p,
        recall: cm.accuracy(),
        f1: f,
        accuracy: cm.accuracy(),
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub label: ActivityLabel,
    /// `(false positive rate, true positive rate)` from (0,0) to (1,1).
    /// Empty when the class is absent.
    pub points: Vec<(f64, f64)>,
    /// `None` when the class has no positives or no negatives.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub curves: Vec<RocCurve>,
    /// Mean over classes with a defined AUC.
    pub macro_auc: Option<f64>,
}

/// One ROC curve for a single positive/negative scoring, with tied scores
/// stepping together so the trapezoid area counts ties as one half.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> (Vec<(f64, f64)>, Option<f64>) {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return (Vec::new(), None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // trapezoid in count units, normalised at the end
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    (points, Some(area / (n_pos as f64 * n_neg as f64)))
}

/// One-vs-rest ROC per class of `classes`; `scores[i][c]` is sample `i`'s score for class `c`.
pub fn roc_ovr(y_true: &[ActivityLabel], scores: &[Vec<f64>], classes: &[ActivityLabel]) -> Result<RocResult, EvalError> {
    if y_true.len() != scores.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), scores.len()));
    }
    if let Some(l) = y_true.iter().find(|l| !classes.contains(l)) {
        return Err(EvalError::UnknownClass(*l));
    }
    let curves: Vec<RocCurve> = classes
        .iter()
        .enumerate()
        .map(|(c, &label)| {
            let s: Vec<f64> = scores.iter().map(|row| row[c]).collect();
            let pos: Vec<bool> = y_true.iter().map(|&l| l == label).collect();
            let (points, auc) = roc_curve(&s, &pos);
            RocCurve { label, points, auc }
        })
        .collect();
    let defined: Vec<f64> = curves.iter().filter_map(|c| c.auc).collect();
    let macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(RocResult { curves, macro_auc })
}

/// Metrics, confusion matrix and ROC of `model` on `dataset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    pub roc: RocResult,
}

pub fn evaluate(model: &TrainedModel, dataset: &LabeledDataset) -> Result<Evaluation, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let y = dataset.labels();
    let mut scores = Vec::with_capacity(y.len());
    let mut pred = Vec::with_capacity(y.len());
    for row in &dataset.rows {
        let s = model.predict_scores(&row.features)?;
        pred.push(model.classes[crate::models::argmax(&s)]);
        scores.push(s);
    }
    // classes unseen in training still get a row and column
    let mut classes = model.classes.clone();
    for l in &y {
        if !classes.contains(l) {
            classes.push(*l);
        }
    }
    classes.sort();
    let full_scores: Vec<Vec<f64>> = scores
        .iter()
        .map(|s| {
            classes
                .iter()
                .map(|c| model.classes.iter().position(|m| m == c).map_or(0.0, |i| s[i]))
                .collect()
        })
        .collect();
    let confusion = confusion_matrix(&y, &pred, &classes)?;
    Ok(Evaluation {
        metrics: weighted_metrics(&confusion)?,
        roc: roc_ovr(&y, &full_scores, &classes)?,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Protocol {
    pub train_frac: f64,
    pub k: usize,
    pub seed: u64,
    pub stratify: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            train_frac: 0.7,
            k: 5,
            seed: 0,
            stratify: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl From<&Metrics> for Prf {
    fn from(m: &Metrics) -> Self {
        Self {
            f1: m.f1,
            precision: m.precision,
            recall: m.recall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub spec: ModelSpec,
    pub train: Prf,
    pub test: Prf,
    pub cv_train_mean: f64,
    pub cv_test_mean: f64,
    pub cv_train_std: f64,
    pub cv_test_std: f64,
    pub test_confusion: ConfusionMatrix,
    pub test_roc: RocResult,
}

impl BenchmarkRow {
    pub fn model_name(&self) -> &'static str {
        self.spec.family.display_name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub protocol: Protocol,
    pub provenance: Provenance,
    pub n_rows: usize,
    pub n_features: usize,
}

impl BenchmarkReport {
    pub fn empty(protocol: Protocol) -> Self {
        Self {
            rows: Vec::new(),
            protocol,
            provenance: Provenance::default(),
            n_rows: 0,
            n_features: 0,
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn accuracy_on(model: &TrainedModel, dataset: &LabeledDataset, rows: &[usize]) -> Result<f64, EvalError> {
    let mut hit = 0;
    for &i in rows {
        let row = &dataset.rows[i];
        if model.predict(&row.features)? == row.label {
            hit += 1;
        }
    }
    Ok(hit as f64 / rows.len() as f64)
}

fn fit_rows(spec: &ModelSpec, dataset: &LabeledDataset, rows: &[usize]) -> Result<TrainedModel, EvalError> {
    let x: Vec<&[f64]> = rows.iter().map(|&i| dataset.rows[i].features.as_slice()).collect();
    let y: Vec<ActivityLabel> = rows.iter().map(|&i| dataset.rows[i].label).collect();
    Ok(train(spec, &x, &y)?)
}

/// Holdout metrics and k-fold accuracy for every spec, rows in the given order.
///
/// Model seeds are derived from the protocol seed mixed with each spec's own seed.
pub fn run_benchmark(
    dataset: &LabeledDataset,
    specs: &[ModelSpec],
    protocol: &Protocol,
) -> Result<BenchmarkReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let labels = dataset.labels();
    let n = labels.len();
    let (train_idx, test_idx) = if protocol.stratify {
        stratified_split(&labels, protocol.train_frac, protocol.seed)?
    } else {
        random_split(n, protocol.train_frac, protocol.seed)?
    };
    let folds = if protocol.stratify {
        stratified_kfold(&labels, protocol.k, protocol.seed)?
    } else {
        kfold(n, protocol.k, protocol.seed)?
    };
    let train_set = dataset.subset(&train_idx);
    let test_set = dataset.subset(&test_idx);
    let model_seed = derive_seed(protocol.seed, "model");

    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let spec = spec.clone().with_seed(model_seed ^ spec.seed);
        log::info!("benchmark: {} {}", spec.family, spec.params_label());
        let model = fit_rows(&spec, &train_set, &(0..train_set.len()).collect::<Vec<_>>())?;
        let on_train = evaluate(&model, &train_set)?;
        let on_test = evaluate(&model, &test_set)?;
        let (mut cv_tr, mut cv_te) = (Vec::new(), Vec::new());
        for fold in &folds {
            let rest = complement(n, fold);
            let m = fit_rows(&spec, dataset, &rest)?;
            cv_tr.push(accuracy_on(&m, dataset, &rest)?);
            cv_te.push(accuracy_on(&m, dataset, fold)?);
        }
        let (cv_train_mean, cv_train_std) = mean_std(&cv_tr);
        let (cv_test_mean, cv_test_std) = mean_std(&cv_te);
        rows.push(BenchmarkRow {
            spec,
            train: Prf::from(&on_train.metrics),
            test: Prf::from(&on_test.metrics),
            cv_train_mean,
            cv_test_mean,
            cv_train_std,
            cv_test_std,
            test_confusion: on_test.confusion,
            test_roc: on_test.roc,
        });
    }
    Ok(BenchmarkReport {
        rows,
        protocol: protocol.clone(),
        provenance: dataset.provenance.clone(),
        n_rows: n,
        n_features: dataset.schema.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Markdown,
    PlotData,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" | "text-table" | "txt" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            "plot-data" | "plot" => Ok(Self::PlotData),
            other => Err(EvalError::UnsupportedFormat(other.to_string())),
        }
    }
}

pub const REPORT_CSV_HEADER: [&str; 12] = [
    "model",
    "params",
    "train_f1",
    "train_p",
    "train_r",
    "test_f1",
    "test_p",
    "test_r",
    "cv_train_mean",
    "cv_test_mean",
    "cv_train_std",
    "cv_test_std",
];

const TABLE_HEADER: [&str; 12] = [
    "Model",
    "Parameter",
    "Train F1",
    "Train P",
    "Train R",
    "Test F1",
    "Test P",
    "Test R",
    "CV Train Mean",
    "CV Test Mean",
    "CV Train Std",
    "CV Test Std",
];

fn metric_values(r: &BenchmarkRow) -> [f64; 10] {
    [
        r.train.f1,
        r.train.precision,
        r.train.recall,
        r.test.f1,
        r.test.precision,
        r.test.recall,
        r.cv_train_mean,
        r.cv_test_mean,
        r.cv_train_std,
        r.cv_test_std,
    ]
}

fn table_cells(report: &BenchmarkReport) -> Vec<Vec<String>> {
    report
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.model_name().to_string(), r.spec.params_label()];
            cells.extend(metric_values(r).iter().map(|v| format!("{v:.4}")));
            cells
        })
        .collect()
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn render_report(report: &BenchmarkReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut w = csv_writer();
            w.write_record(REPORT_CSV_HEADER).expect("in-memory write");
            for r in &report.rows {
                let mut rec = vec![r.spec.family.as_str().to_string(), r.spec.params_label()];
                rec.extend(metric_values(r).iter().map(|v| v.to_string()));
                w.write_record(&rec).expect("in-memory write");
            }
            finish_csv(w)
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            let _ = writeln!(out, "| {} |", TABLE_HEADER.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(TABLE_HEADER.len()));
            for cells in table_cells(report) {
                let _ = writeln!(out, "| {} |", cells.join(" | "));
            }
            out
        }
        ReportFormat::Text => {
            let body = table_cells(report);
            let widths: Vec<usize> = (0..TABLE_HEADER.len())
                .map(|c| body.iter().map(|r| r[c].len()).chain([TABLE_HEADER[c].len()]).max().unwrap_or(0))
                .collect();
            let line = |cells: &[String]| {
                cells
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            };
            let mut out = String::new();
            let head: Vec<String> = TABLE_HEADER.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(out, "{}", line(&head));
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            for cells in &body {
                let _ = writeln!(out, "{}", line(cells));
            }
            out
        }
        ReportFormat::PlotData => {
            let mut w = csv_writer();
            w.write_record(["model", "params", "kind", "class", "key", "x", "y"])
                .expect("in-memory write");
            for r in &report.rows {
                let (m, p) = (r.spec.family.as_str().to_string(), r.spec.params_label());
                for curve in &r.test_roc.curves {
                    let class = curve.label.as_str();
                    for (i, (x, y)) in curve.points.iter().enumerate() {
                        w.write_record([&m, &p, "roc", class, &i.to_string(), &x.to_string(), &y.to_string()])
                            .expect("in-memory write");
                    }
                    let auc = curve.auc.map_or_else(|| "absent".to_string(), |a| a.to_string());
                    w.write_record([&m, &p, "auc", class, "", "", &auc]).expect("in-memory write");
                }
                let cm = &r.test_confusion;
                for (i, t) in cm.classes.iter().enumerate() {
                    for (j, q) in cm.classes.iter().enumerate() {
                        w.write_record([&m, &p, "confusion", t.as_str(), q.as_str(), "", &cm.counts[i][j].to_string()])
                            .expect("in-memory write");
                    }
                }
            }
            finish_csv(w)
        }
    }
}
