use serde::{Deserialize, Serialize};

use super::linalg::{affine, combine, dot};
use super::{softmax, Matrix, ModelSpec};

/// Stop once the full gradient norm falls below this.
pub const GRAD_TOLERANCE: f64 = 1e-6;

/// Multinomial logistic regression fitted by full-batch gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub features: usize,
    /// Row-major `[class][feature]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Logistic {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, spec: &ModelSpec) -> Self {
        let lr = spec.effective_learning_rate();
        let l2 = spec.effective_l2();
        let f = x.cols;
        let n = x.rows as f64;
        let mut m = Self {
            features: f,
            weights: vec![0.0; n_classes * f],
            bias: vec![0.0; n_classes],
        };
        let mut p = vec![0.0; x.rows * n_classes];
        let mut column = vec![0.0; x.rows];
        let mut gw = vec![0.0; n_classes * f];
        let mut gb = vec![0.0; n_classes];
        for _ in 0..spec.effective_epochs() {
            affine(&x.data, f, &m.weights, &m.bias, &mut p);
            for (row, &t) in p.chunks_exact_mut(n_classes).zip(y) {
                softmax(row);
                row[t] -= 1.0;
            }
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut norm = 0.0;
            for c in 0..n_classes {
                let mut sum = 0.0;
                for (r, v) in column.iter_mut().enumerate() {
                    *v = p[r * n_classes + c];
                    sum += *v;
                }
                gb[c] = sum / n;
                norm += gb[c] * gb[c];
                let g = &mut gw[c * f..(c + 1) * f];
                combine(&column, &x.data, f, 0, g);
                for (g, w) in g.iter_mut().zip(&m.weights[c * f..(c + 1) * f]) {
                    *g = *g / n + l2 * w;
                    norm += *g * *g;
                }
            }
            if norm.sqrt() < GRAD_TOLERANCE {
                break;
            }
            for (b, g) in m.bias.iter_mut().zip(&gb) {
                *b -= lr * g;
            }
            for (w, g) in m.weights.iter_mut().zip(&gw) {
                *w -= lr * g;
            }
        }
        m
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = self
            .weights
            .chunks_exact(self.features)
            .zip(&self.bias)
            .map(|(w, b)| b + dot(w, x))
            .collect();
        softmax(&mut z);
        z
    }
}
