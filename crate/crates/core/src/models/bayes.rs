use serde::{Deserialize, Serialize};

use super::{softmax, Matrix};

/// Added to every variance, relative to the largest feature variance.
pub const VAR_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub log_prior: Vec<f64>,
    /// `[class][feature]`
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl GaussianNb {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize) -> Self {
        let f = x.cols;
        let mut count = vec![0usize; n_classes];
        let mut mean = vec![vec![0.0; f]; n_classes];
        for (r, &c) in y.iter().enumerate() {
            count[c] += 1;
            for (m, v) in mean[c].iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        for (m, &n) in mean.iter_mut().zip(&count) {
            m.iter_mut().for_each(|v| *v /= n.max(1) as f64);
        }
        let mut var = vec![vec![0.0; f]; n_classes];
        for (r, &c) in y.iter().enumerate() {
            for ((s, v), m) in var[c].iter_mut().zip(x.row(r)).zip(&mean[c]) {
                *s += (v - m) * (v - m);
            }
        }
        for (s, &n) in var.iter_mut().zip(&count) {
            s.iter_mut().for_each(|v| *v /= n.max(1) as f64);
        }

        // smoothing scale: largest variance of any feature over all rows
        let mut max_var = 0.0f64;
        for j in 0..f {
            let mu = (0..x.rows).map(|r| x.row(r)[j]).sum::<f64>() / x.rows as f64;
            let v = (0..x.rows).map(|r| (x.row(r)[j] - mu).powi(2)).sum::<f64>() / x.rows as f64;
            max_var = max_var.max(v);
        }
        let eps = VAR_SMOOTHING * if max_var > 0.0 { max_var } else { 1.0 };
        var.iter_mut().flatten().for_each(|v| *v += eps);

        let n = y.len() as f64;
        Self {
            log_prior: count.iter().map(|&c| (c as f64 / n).ln()).collect(),
            mean,
            var,
        }
    }

    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.log_prior.len())
            .map(|c| {
                self.log_prior[c]
                    + x.iter()
                        .zip(&self.mean[c])
                        .zip(&self.var[c])
                        .map(|((v, m), s)| -0.5 * ((std::f64::consts::TAU * s).ln() + (v - m) * (v - m) / s))
                        .sum::<f64>()
            })
            .collect();
        softmax(&mut z);
        z
    }
}
