//! CART decision trees with Gini impurity, and bagged forests of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix, ModelSpec};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { dist: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root first.
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Class distribution of the leaf `x` falls into.
    pub fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { dist } => return dist,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

pub struct TreeParams {
    pub max_depth: usize,
    /// Features drawn per split; `None` tries all.
    pub max_features: Option<usize>,
}

/// Generator for trees that never draw (all features tried at each split).
pub fn no_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// Fits a tree on all rows of `x`.
pub fn fit_tree(x: &Matrix, y: &[usize], n_classes: usize, params: &TreeParams, rng: &mut ChaCha8Rng) -> Tree {
    let rows: Vec<usize> = (0..x.rows).collect();
    fit_tree_on(x, y, n_classes, params, rng, rows)
}

fn fit_tree_on(
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
    rows: Vec<usize>,
) -> Tree {
    let mut b = Builder {
        x,
        y,
        n_classes,
        params,
        rng,
        nodes: Vec::new(),
        buf: Vec::with_capacity(rows.len()),
    };
    b.grow(rows, 0);
    Tree { nodes: b.nodes }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    n_classes: usize,
    params: &'a TreeParams,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
    buf: Vec<(f64, usize)>,
}

impl Builder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let mut counts = vec![0usize; self.n_classes];
        for &r in &rows {
            counts[self.y[r]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let split = if pure || depth >= self.params.max_depth || rows.len() < 2 {
            None
        } else {
            self.best_split(&rows, &counts)
        };
        let Some((feature, threshold)) = split else {
            let n = rows.len() as f64;
            self.nodes.push(Node::Leaf {
                dist: counts.iter().map(|&c| c as f64 / n).collect(),
            });
            return id;
        };
        self.nodes.push(Node::Leaf { dist: Vec::new() });
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| self.x.row(i)[feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let f = self.x.cols;
        match self.params.max_features {
            Some(m) if m < f => {
                let mut all: Vec<usize> = (0..f).collect();
                for i in 0..m {
                    let j = self.rng.gen_range(i..f);
                    all.swap(i, j);
                }
                let mut picked = all[..m].to_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..f).collect(),
        }
    }

    /// Lowest weighted Gini; ties go to the lower feature, then the lower threshold.
    /// Splits that do not reduce impurity are still taken when the node is impure.
    fn best_split(&mut self, rows: &[usize], counts: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let total_sq: u64 = counts.iter().map(|&c| (c * c) as u64).sum();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut left = vec![0u64; self.n_classes];
        for feature in self.candidate_features() {
            self.buf.clear();
            self.buf.extend(rows.iter().map(|&r| (self.x.row(r)[feature], r)));
            self.buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if self.buf[0].0 == self.buf[n - 1].0 {
                continue;
            }
            left.iter_mut().for_each(|c| *c = 0);
            let (mut sq_l, mut sq_r) = (0u64, total_sq);
            for i in 0..n - 1 {
                let c = self.y[self.buf[i].1];
                let right_c = counts[c] as u64 - left[c];
                sq_l += 2 * left[c] + 1;
                sq_r -= 2 * right_c - 1;
                left[c] += 1;
                let (v, next) = (self.buf[i].0, self.buf[i + 1].0);
                if v == next {
                    continue;
                }
                let (nl, nr) = ((i + 1) as f64, (n - i - 1) as f64);
                let score = (nl - sq_l as f64 / nl) + (nr - sq_r as f64 / nr);
                if best.is_none_or(|b| score < b.0) {
                    let mut threshold = v + (next - v) / 2.0;
                    if !(threshold < next) {
                        threshold = v;
                    }
                    best = Some((score, feature, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Bagged trees. Tree `i` draws from its own stream of the seed, so the first
/// trees are the same whatever the ensemble size.
pub fn fit_forest(x: &Matrix, y: &[usize], n_classes: usize, spec: &ModelSpec) -> Vec<Tree> {
    let mtry = spec
        .max_features
        .unwrap_or_else(|| ((x.cols as f64).sqrt().round() as usize).max(1));
    let params = TreeParams {
        max_depth: spec.max_depth,
        max_features: Some(mtry),
    };
    let seed = derive_seed(spec.seed, "model.forest");
    (0..spec.n_estimators)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let rows: Vec<usize> = if spec.bootstrap {
                (0..x.rows).map(|_| rng.gen_range(0..x.rows)).collect()
            } else {
                (0..x.rows).collect()
            };
            fit_tree_on(x, y, n_classes, &params, &mut rng, rows)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stump_on_separable_line() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0], [10.0]]).unwrap();
        let t = fit_tree(&x, &[0, 0, 1, 1], 2, &TreeParams { max_depth: 5, max_features: None }, &mut no_rng());
        assert_eq!(t.depth(), 1);
        match &t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 2.5);
            }
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn ties_prefer_lower_feature() {
        // both features separate perfectly
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let t = fit_tree(&x, &[0, 1], 2, &TreeParams { max_depth: 3, max_features: None }, &mut no_rng());
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn depth_limit_respected() {
        let rows: Vec<[f64; 1]> = (0..64).map(|i| [i as f64]).collect();
        let y: Vec<usize> = (0..64).map(|i| i % 2).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let t = fit_tree(&x, &y, 2, &TreeParams { max_depth: 3, max_features: None }, &mut no_rng());
        assert!(t.depth() <= 3);
        for n in &t.nodes {
            if let Node::Leaf { dist } = n {
                assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
