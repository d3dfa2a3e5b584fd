//! Fully connected ReLU network with a softmax output, trained by mini-batch
//! gradient descent with momentum.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{affine, axpy, combine};
use super::{softmax, Matrix, ModelSpec};
use crate::rng::substream;

pub const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[output][input]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    /// He-style uniform initialisation, `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|io| {
                let (inputs, outputs) = (io[0], io[1]);
                let bound = (6.0 / inputs as f64).sqrt();
                Layer {
                    inputs,
                    outputs,
                    w: (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
                    b: vec![0.0; outputs],
                }
            })
            .collect();
        Self { layers }
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                    ..*l
                })
                .collect(),
        }
    }

    /// Activations of every layer for `rows` row-major inputs; the last entry
    /// holds the softmax outputs.
    fn activations(&self, x: Vec<f64>, rows: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; rows * l.outputs];
            affine(acts.last().expect("input pushed"), l.inputs, &l.w, &l.b, &mut z);
            if i + 1 < self.layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                z.chunks_exact_mut(l.outputs).for_each(softmax);
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x.to_vec(), 1).pop().expect("at least one layer")
    }

    /// Adds the summed cross-entropy gradient of a batch into `grad` and
    /// returns the summed loss.
    fn accumulate(&self, x: Vec<f64>, targets: &[usize], grad: &mut Network) -> f64 {
        let rows = targets.len();
        let acts = self.activations(x, rows);
        let mut delta = acts.last().expect("output").clone();
        let classes = delta.len() / rows;
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            loss -= delta[r * classes + t].max(f64::MIN_POSITIVE).ln();
            delta[r * classes + t] -= 1.0;
        }
        let mut column = vec![0.0; rows];
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let input = &acts[li];
            let g = &mut grad.layers[li];
            for o in 0..l.outputs {
                for r in 0..rows {
                    column[r] = delta[r * l.outputs + o];
                    g.b[o] += column[r];
                }
                combine(&column, input, l.inputs, 0, &mut g.w[o * l.inputs..(o + 1) * l.inputs]);
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; rows * l.inputs];
            for r in 0..rows {
                let p = &mut prev[r * l.inputs..(r + 1) * l.inputs];
                combine(&delta[r * l.outputs..(r + 1) * l.outputs], &l.w, l.inputs, 0, p);
                for (p, a) in p.iter_mut().zip(&input[r * l.inputs..]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        loss
    }

    /// Cross-entropy loss of one sample plus `l2/2·‖W‖²`, and its gradient.
    pub fn loss_and_gradient(&self, x: &[f64], target: usize, l2: f64) -> (f64, Network) {
        let mut grad = self.zeros_like();
        let mut loss = self.accumulate(x.to_vec(), &[target], &mut grad);
        for (l, g) in self.layers.iter().zip(&mut grad.layers) {
            loss += 0.5 * l2 * l.w.iter().map(|w| w * w).sum::<f64>();
            axpy(l2, &l.w, &mut g.w);
        }
        (loss, grad)
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&p[at..at + nw]);
            l.b.copy_from_slice(&p[at + nw..at + nw + nb]);
            at += nw + nb;
        }
    }
}

pub fn train_network(x: &Matrix, y: &[usize], n_classes: usize, spec: &ModelSpec) -> Network {
    let mut rng = substream(spec.seed, "model.mlp");
    let mut sizes = vec![x.cols];
    sizes.extend(&spec.hidden);
    sizes.push(n_classes);
    let mut net = Network::init(&sizes, &mut rng);
    let mut velocity = net.zeros_like();
    let mut grad = net.zeros_like();
    let lr = spec.effective_learning_rate();
    let l2 = spec.effective_l2();
    let mut order: Vec<usize> = (0..x.rows).collect();
    for _ in 0..spec.effective_epochs() {
        order.shuffle(&mut rng);
        for batch in order.chunks(spec.batch_size) {
            for l in &mut grad.layers {
                l.w.iter_mut().for_each(|v| *v = 0.0);
                l.b.iter_mut().for_each(|v| *v = 0.0);
            }
            let mut inputs = Vec::with_capacity(batch.len() * x.cols);
            for &r in batch {
                inputs.extend_from_slice(x.row(r));
            }
            let targets: Vec<usize> = batch.iter().map(|&r| y[r]).collect();
            net.accumulate(inputs, &targets, &mut grad);
            let scale = 1.0 / batch.len() as f64;
            for ((l, g), v) in net.layers.iter_mut().zip(&grad.layers).zip(&mut velocity.layers) {
                for ((w, gw), vw) in l.w.iter_mut().zip(&g.w).zip(&mut v.w) {
                    *vw = MOMENTUM * *vw - lr * (gw * scale + l2 * *w);
                    *w += *vw;
                }
                for ((b, gb), vb) in l.b.iter_mut().zip(&g.b).zip(&mut v.b) {
                    *vb = MOMENTUM * *vb - lr * gb * scale;
                    *b += *vb;
                }
            }
        }
    }
    net
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Forward pass written out independently with explicit loops.
    fn reference_forward(net: &Network, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (i, l) in net.layers.iter().enumerate() {
            let mut z = vec![0.0; l.outputs];
            for o in 0..l.outputs {
                let mut s = l.b[o];
                for j in 0..l.inputs {
                    s += l.w[o * l.inputs + j] * a[j];
                }
                z[o] = if i + 1 < net.layers.len() { s.max(0.0) } else { s };
            }
            a = z;
        }
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Network::init(&[7, 5, 6, 3], &mut rng);
        for _ in 0..50 {
            let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = net.forward(&x);
            let b = reference_forward(&net, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-9);
            }
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut net = Network::init(&[2, 4, 3], &mut rng);
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let target = rng.gen_range(0..3);
            let (_, g) = net.loss_and_gradient(&x, target, 0.01);
            let analytic = g.params();
            let p = net.params();
            let h = 1e-6;
            let mut num = Vec::new();
            for i in 0..p.len() {
                let mut q = p.clone();
                q[i] += h;
                net.set_params(&q);
                let up = net.loss_and_gradient(&x, target, 0.01).0;
                q[i] -= 2.0 * h;
                net.set_params(&q);
                let down = net.loss_and_gradient(&x, target, 0.01).0;
                num.push((up - down) / (2.0 * h));
            }
            net.set_params(&p);
            let diff: f64 = analytic.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + num.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff / scale.max(1e-12) < 1e-4);
        }
    }
}
