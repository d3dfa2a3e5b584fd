use serde::{Deserialize, Serialize};

use super::Matrix;

/// Stored exemplars; scores are vote fractions among the `k` nearest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub cols: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Knn {
    pub fn fit(x: &Matrix, y: &[usize], k: usize) -> Self {
        Self {
            k,
            cols: x.cols,
            x: x.data.clone(),
            y: y.to_vec(),
        }
    }

    /// Euclidean neighbours; equal distances go to the lower training index.
    pub fn scores(&self, q: &[f64], n_classes: usize) -> Vec<f64> {
        let mut dist: Vec<(f64, usize)> = self
            .x
            .chunks_exact(self.cols)
            .enumerate()
            .map(|(i, row)| (row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let k = self.k.min(dist.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, cmp);
        }
        let mut votes = vec![0.0; n_classes];
        for &(_, i) in &dist[..k] {
            votes[self.y[i]] += 1.0;
        }
        votes.iter_mut().for_each(|v| *v /= k as f64);
        votes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_fractions() {
        // 7 neighbours of class 0 at distance 1, 3 of class 1 at distance 2, far ones ignored
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..7 {
            rows.push([1.0]);
            y.push(0);
        }
        for _ in 0..3 {
            rows.push([2.0]);
            y.push(1);
        }
        for _ in 0..5 {
            rows.push([50.0]);
            y.push(1);
        }
        let m = Knn::fit(&Matrix::from_rows(&rows).unwrap(), &y, 10);
        let s = m.scores(&[0.0], 2);
        assert!((s[0] - 0.7).abs() < 1e-12);
        assert!((s[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn distance_ties_take_lower_index() {
        let m = Knn::fit(&Matrix::from_rows(&[[1.0], [-1.0]]).unwrap(), &[1, 0], 1);
        assert_eq!(m.scores(&[0.0], 2), vec![0.0, 1.0]);
    }
}
