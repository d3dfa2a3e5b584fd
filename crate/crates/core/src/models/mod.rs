//! Lightweight classifiers over window feature vectors.
//!
//! Every family is trained deterministically from a [`ModelSpec`] and produces
//! a [`TrainedModel`] that scores a feature vector with one probability-like
//! value per class.

mod bayes;
mod knn;
mod linalg;
mod logistic;
pub mod mlp;
mod persist;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::hex_digest;
use crate::model::ActivityLabel;

pub use persist::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("feature matrix has {rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("row {row} has {got} features, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("input has {got} features, model expects {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("unsupported model file version: {0}")]
    VersionMismatch(String),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    DecisionTree,
    RandomForest,
    Knn,
    GaussianNb,
    LogisticRegression,
    Mlp,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::DecisionTree,
        Family::RandomForest,
        Family::Knn,
        Family::GaussianNb,
        Family::LogisticRegression,
        Family::Mlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::DecisionTree => "decision_tree",
            Family::RandomForest => "random_forest",
            Family::Knn => "knn",
            Family::GaussianNb => "gaussian_nb",
            Family::LogisticRegression => "logistic_regression",
            Family::Mlp => "mlp",
        }
    }

    /// Human-readable name used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Family::DecisionTree => "Decision Tree",
            Family::RandomForest => "Random Forest",
            Family::Knn => "kNN",
            Family::GaussianNb => "Gaussian NB",
            Family::LogisticRegression => "Logistic Regression",
            Family::Mlp => "Neural Network",
        }
    }

    fn normalizes_by_default(self) -> bool {
        matches!(self, Family::Knn | Family::LogisticRegression | Family::Mlp)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let alias = match s.as_str() {
            "dt" | "tree" => "decision_tree",
            "rf" | "forest" => "random_forest",
            "gnb" | "naive_bayes" => "gaussian_nb",
            "lr" | "logreg" => "logistic_regression",
            "nn" | "neural_network" => "mlp",
            other => other,
        };
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == alias)
            .ok_or_else(|| ClassifierError::InvalidSpec(format!("unknown model family `{s}`")))
    }
}

/// What to train. Family-specific fields are ignored by other families;
/// unset optional fields take the family default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub max_depth: usize,
    pub n_estimators: usize,
    /// Sample each tree's rows with replacement.
    pub bootstrap: bool,
    /// Features tried per split; `None` means all for a lone tree and √F for a forest.
    pub max_features: Option<usize>,
    pub k: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub l2: Option<f64>,
    pub normalize: Option<bool>,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            family: Family::RandomForest,
            max_depth: 10,
            n_estimators: 50,
            bootstrap: true,
            max_features: None,
            k: 10,
            hidden: vec![64, 64, 64],
            learning_rate: None,
            epochs: None,
            batch_size: 32,
            l2: None,
            normalize: None,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            ..Self::default()
        }
    }

    pub fn decision_tree(max_depth: usize) -> Self {
        Self {
            max_depth,
            ..Self::new(Family::DecisionTree)
        }
    }

    pub fn random_forest(n_estimators: usize, max_depth: usize) -> Self {
        Self {
            n_estimators,
            max_depth,
            ..Self::new(Family::RandomForest)
        }
    }

    pub fn knn(k: usize) -> Self {
        Self {
            k,
            ..Self::new(Family::Knn)
        }
    }

    pub fn gaussian_nb() -> Self {
        Self::new(Family::GaussianNb)
    }

    pub fn logistic_regression() -> Self {
        Self::new(Family::LogisticRegression)
    }

    pub fn mlp(hidden: &[usize]) -> Self {
        Self {
            hidden: hidden.to_vec(),
            ..Self::new(Family::Mlp)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The classifier grid compared in the benchmark, in report order.
    pub fn reference_grid() -> Vec<ModelSpec> {
        let mut grid = Vec::new();
        grid.extend([10, 20, 30, 40].map(Self::decision_tree));
        grid.extend([10, 20, 30, 40].map(Self::knn));
        grid.extend([30, 50, 100].map(|n| Self::random_forest(n, 10)));
        grid.extend([&[64, 64][..], &[64, 64, 64], &[128, 128], &[128, 128, 128]].map(Self::mlp));
        grid.push(Self::gaussian_nb());
        grid.push(Self::logistic_regression());
        grid
    }

    pub fn normalize_enabled(&self) -> bool {
        self.normalize.unwrap_or(self.family.normalizes_by_default())
    }

    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.family {
            Family::Mlp => 1e-3,
            _ => 0.1,
        })
    }

    pub fn effective_epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.family {
            Family::Mlp => 200,
            _ => 5000,
        })
    }

    pub fn effective_l2(&self) -> f64 {
        self.l2.unwrap_or(match self.family {
            Family::LogisticRegression => 1e-4,
            _ => 0.0,
        })
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidSpec(m.to_string()));
        match self.family {
            Family::DecisionTree | Family::RandomForest if self.max_depth == 0 => bad("max_depth must be positive"),
            Family::RandomForest if self.n_estimators == 0 => bad("n_estimators must be positive"),
            Family::DecisionTree | Family::RandomForest if self.max_features == Some(0) => {
                bad("max_features must be positive")
            }
            Family::Knn if self.k == 0 => bad("k must be positive"),
            Family::Mlp if self.hidden.is_empty() || self.hidden.contains(&0) => {
                bad("hidden layer sizes must be non-empty and positive")
            }
            Family::Mlp if self.batch_size == 0 => bad("batch_size must be positive"),
            Family::Mlp | Family::LogisticRegression => {
                let lr = self.effective_learning_rate();
                let l2 = self.effective_l2();
                if !(lr.is_finite() && lr > 0.0) {
                    bad("learning_rate must be positive")
                } else if !(l2.is_finite() && l2 >= 0.0) {
                    bad("l2 must be non-negative")
                } else if self.effective_epochs() == 0 {
                    bad("epochs must be positive")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Compact parameter summary for report tables.
    pub fn params_label(&self) -> String {
        match self.family {
            Family::DecisionTree => format!("max_depth={}", self.max_depth),
            Family::RandomForest => format!("n_estimators={} max_depth={}", self.n_estimators, self.max_depth),
            Family::Knn => format!("k={}", self.k),
            Family::GaussianNb => "-".into(),
            Family::LogisticRegression => format!("l2={}", self.effective_l2()),
            Family::Mlp => format!(
                "hidden=[{}]",
                self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
            ),
        }
    }

    pub fn digest(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("spec serializes").as_bytes())
    }
}

/// Per-feature z-score statistics from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    /// Zero-variance features get 1.
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows as f64;
        let mut mean = vec![0.0; x.cols];
        for r in 0..x.rows {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols];
        for r in 0..x.rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, ClassifierError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(ClassifierError::RaggedRow {
                    row: i,
                    got: r.len(),
                    expected: cols,
                });
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(ClassifierError::NonFiniteFeature { row: i, col: j });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fitted {
    /// Training data held a single class.
    Constant,
    Tree(tree::Tree),
    Forest { trees: Vec<tree::Tree> },
    Knn(knn::Knn),
    GaussianNb(bayes::GaussianNb),
    Logistic(logistic::Logistic),
    Mlp(mlp::Network),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub family: Family,
    pub spec: ModelSpec,
    pub spec_digest: String,
    /// Sorted; score vectors follow this order.
    pub classes: Vec<ActivityLabel>,
    pub n_features: usize,
    pub normalizer: Option<Normalizer>,
    pub fitted: Fitted,
}

/// Fits `spec` to rows `x` with labels `y`.
///
/// A single-class training set yields a constant predictor and a warning
/// rather than an error.
pub fn train<R: AsRef<[f64]>>(spec: &ModelSpec, x: &[R], y: &[ActivityLabel]) -> Result<TrainedModel, ClassifierError> {
    spec.validate()?;
    if x.len() != y.len() {
        return Err(ClassifierError::LengthMismatch {
            rows: x.len(),
            labels: y.len(),
        });
    }
    if x.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let raw = Matrix::from_rows(x)?;
    let mut classes = y.to_vec();
    classes.sort();
    classes.dedup();
    let targets: Vec<usize> = y
        .iter()
        .map(|l| classes.binary_search(l).expect("label in class list"))
        .collect();

    let normalizer = spec.normalize_enabled().then(|| Normalizer::fit(&raw));
    let matrix = match &normalizer {
        Some(norm) => {
            let mut m = raw.clone();
            for r in 0..m.rows {
                let z = norm.apply(raw.row(r));
                m.data[r * m.cols..(r + 1) * m.cols].copy_from_slice(&z);
            }
            m
        }
        None => raw,
    };

    let n_classes = classes.len();
    let fitted = if n_classes == 1 {
        log::warn!(
            "training data contains only class `{}`; using a constant predictor",
            classes[0].as_str()
        );
        Fitted::Constant
    } else {
        match spec.family {
            Family::DecisionTree => Fitted::Tree(tree::fit_tree(
                &matrix,
                &targets,
                n_classes,
                &tree::TreeParams {
                    max_depth: spec.max_depth,
                    max_features: spec.max_features,
                },
                &mut tree::no_rng(),
            )),
            Family::RandomForest => Fitted::Forest {
                trees: tree::fit_forest(&matrix, &targets, n_classes, spec),
            },
            Family::Knn => Fitted::Knn(knn::Knn::fit(&matrix, &targets, spec.k)),
            Family::GaussianNb => Fitted::GaussianNb(bayes::GaussianNb::fit(&matrix, &targets, n_classes)),
            Family::LogisticRegression => Fitted::Logistic(logistic::Logistic::fit(&matrix, &targets, n_classes, spec)),
            Family::Mlp => Fitted::Mlp(mlp::train_network(&matrix, &targets, n_classes, spec)),
        }
    };
    Ok(TrainedModel {
        family: spec.family,
        spec: spec.clone(),
        spec_digest: spec.digest(),
        classes,
        n_features: matrix.cols,
        normalizer,
        fitted,
    })
}

impl TrainedModel {
    fn check(&self, x: &[f64]) -> Result<(), ClassifierError> {
        if x.len() != self.n_features {
            return Err(ClassifierError::SchemaMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// One non-negative score per class in [`TrainedModel::classes`] order, summing to 1.
    pub fn predict_scores(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        self.check(x)?;
        let z;
        let x = match &self.normalizer {
            Some(norm) => {
                z = norm.apply(x);
                &z[..]
            }
            None => x,
        };
        let k = self.classes.len();
        Ok(match &self.fitted {
            Fitted::Constant => vec![1.0],
            Fitted::Tree(t) => t.leaf(x).to_vec(),
            Fitted::Forest { trees } => {
                let mut acc = vec![0.0; k];
                for t in trees {
                    for (a, p) in acc.iter_mut().zip(t.leaf(x)) {
                        *a += p;
                    }
                }
                let n = trees.len() as f64;
                acc.iter_mut().for_each(|a| *a /= n);
                acc
            }
            Fitted::Knn(m) => m.scores(x, k),
            Fitted::GaussianNb(m) => m.posterior(x),
            Fitted::Logistic(m) => m.probabilities(x),
            Fitted::Mlp(net) => net.forward(x),
        })
    }

    /// Highest-scoring class; ties go to the earlier class in the class list.
    pub fn predict(&self, x: &[f64]) -> Result<ActivityLabel, ClassifierError> {
        let scores = self.predict_scores(x)?;
        Ok(self.classes[argmax(&scores)])
    }

    pub fn predict_many<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<ActivityLabel>, ClassifierError> {
        rows.iter().map(|r| self.predict(r.as_ref())).collect()
    }
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable in-place softmax.
pub(crate) fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActivityLabel::{Enter, Exit, FanOn};

    fn xor() -> (Vec<Vec<f64>>, Vec<ActivityLabel>) {
        (
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            vec![Enter, Exit, Exit, Enter],
        )
    }

    fn accuracy(m: &TrainedModel, x: &[Vec<f64>], y: &[ActivityLabel]) -> f64 {
        let p = m.predict_many(x).unwrap();
        p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn tree_fits_xor() {
        let (x, y) = xor();
        for depth in [2, 3, 10] {
            let m = train(&ModelSpec::decision_tree(depth), &x, &y).unwrap();
            assert_eq!(accuracy(&m, &x, &y), 1.0);
        }
    }

    #[test]
    fn logistic_cannot_fit_xor() {
        let (x, y) = xor();
        let m = train(&ModelSpec::logistic_regression(), &x, &y).unwrap();
        assert!(accuracy(&m, &x, &y) <= 0.75);
    }

    #[test]
    fn single_class_is_constant() {
        let x = vec![vec![1.0], vec![2.0]];
        let m = train(&ModelSpec::mlp(&[4]), &x, &[FanOn, FanOn]).unwrap();
        assert_eq!(m.fitted, Fitted::Constant);
        assert_eq!(m.predict(&[100.0]).unwrap(), FanOn);
        assert_eq!(m.predict_scores(&[-3.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn input_errors() {
        let spec = ModelSpec::gaussian_nb();
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(train(&spec, &empty, &[]), Err(ClassifierError::EmptyDataset)));
        assert!(matches!(
            train(&spec, &[vec![f64::NAN], vec![1.0]], &[Enter, Exit]),
            Err(ClassifierError::NonFiniteFeature { row: 0, col: 0 })
        ));
        assert!(matches!(
            train(&spec, &[vec![1.0]], &[Enter, Exit]),
            Err(ClassifierError::LengthMismatch { .. })
        ));
        let m = train(&spec, &[vec![0.0], vec![1.0]], &[Enter, Exit]).unwrap();
        assert!(matches!(
            m.predict(&[1.0, 2.0]),
            Err(ClassifierError::SchemaMismatch { expected: 1, got: 2 })
        ));
        assert!(ModelSpec::mlp(&[]).validate().is_err());
        assert!(ModelSpec::knn(0).validate().is_err());
    }

    #[test]
    fn family_names_parse() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
        assert_eq!("RF".parse::<Family>().unwrap(), Family::RandomForest);
        assert!("svm".parse::<Family>().is_err());
    }

    #[test]
    fn reference_grid_shape() {
        let grid = ModelSpec::reference_grid();
        assert_eq!(grid.len(), 17);
        assert!(grid.iter().all(|s| s.validate().is_ok()));
    }

    #[test]
    fn zero_variance_feature_gets_unit_std() {
        let m = Matrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let n = Normalizer::fit(&m);
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, 1.0]);
    }
}
