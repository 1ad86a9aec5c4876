//! Fully connected feed-forward network trained by mini-batch gradient
//! descent with momentum on the mean squared error.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation value `a = f(z)`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning rate at epoch `e` is `learning_rate / (1 + lr_decay · e)`.
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            epochs: 40,
            batch_size: 64,
            learning_rate: 0.02,
            momentum: 0.9,
            lr_decay: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    /// Per layer: weights (`out x in`, row-major) then biases.
    params: Vec<f64>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng>(sizes: Vec<usize>, activation: Activation, rng: &mut R) -> Self {
        let n_params = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let mut params = Vec::with_capacity(n_params);
        for w in sizes.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound)));
            params.extend(std::iter::repeat(0.0).take(w[1]));
        }
        Self { sizes, activation, params }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn n_in(&self) -> usize {
        self.sizes[0]
    }

    fn n_out(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Forward pass keeping every layer's activations in `acts` (input first).
    fn forward_cached(&self, x: &[f64], acts: &mut [Vec<f64>]) {
        acts[0].copy_from_slice(x);
        let n_layers = self.sizes.len() - 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let (prev, rest) = acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + row.iter().zip(input.iter()).map(|(a, b)| a * b).sum::<f64>();
                out[o] = if l + 1 < n_layers { self.activation.apply(z) } else { z };
            }
            off += n_in * n_out + n_out;
        }
    }

    fn scratch(&self) -> Vec<Vec<f64>> {
        self.sizes.iter().map(|&n| vec![0.0; n]).collect()
    }

    pub fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let mut acts = self.scratch();
        self.forward_cached(x, &mut acts);
        out.copy_from_slice(acts.last().unwrap());
    }

    /// Mean squared error over `rows` (row-major inputs/targets) and its
    /// gradient with respect to the flattened parameters, written to `grad`.
    pub fn loss_and_gradient(&self, x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let (n_in, n_out) = (self.n_in(), self.n_out());
        let rows = x.len() / n_in;
        let n_layers = self.sizes.len() - 1;
        let norm = 1.0 / (rows * n_out) as f64;
        let mut acts = self.scratch();
        let mut delta: Vec<Vec<f64>> = self.sizes.iter().map(|&n| vec![0.0; n]).collect();
        let offsets: Vec<usize> = std::iter::once(0)
            .chain(self.sizes.windows(2).scan(0, |acc, w| {
                *acc += w[0] * w[1] + w[1];
                Some(*acc)
            }))
            .collect();
        let mut loss = 0.0;
        for r in 0..rows {
            self.forward_cached(&x[r * n_in..(r + 1) * n_in], &mut acts);
            let target = &y[r * n_out..(r + 1) * n_out];
            for o in 0..n_out {
                let e = acts[n_layers][o] - target[o];
                loss += e * e;
                delta[n_layers][o] = 2.0 * e * norm;
            }
            for l in (0..n_layers).rev() {
                let (ni, no) = (self.sizes[l], self.sizes[l + 1]);
                let off = offsets[l];
                let (gw, gb) = grad[off..off + ni * no + no].split_at_mut(ni * no);
                for o in 0..no {
                    let d = delta[l + 1][o];
                    gb[o] += d;
                    let a = &acts[l];
                    for (g, av) in gw[o * ni..(o + 1) * ni].iter_mut().zip(a.iter()) {
                        *g += d * av;
                    }
                }
                if l > 0 {
                    let w = &self.params[off..off + ni * no];
                    let (lower, upper) = delta.split_at_mut(l + 1);
                    let dl = &mut lower[l];
                    dl.fill(0.0);
                    for o in 0..no {
                        let d = upper[0][o];
                        for (acc, wv) in dl.iter_mut().zip(&w[o * ni..(o + 1) * ni]) {
                            *acc += wv * d;
                        }
                    }
                    for (acc, a) in dl.iter_mut().zip(&acts[l]) {
                        *acc *= self.activation.derivative_from_output(*a);
                    }
                }
            }
        }
        loss * norm
    }

    /// Trains a fresh network. Returns it with the mean training loss of each epoch.
    pub fn fit(x: &[f64], n_in: usize, y: &[f64], n_out: usize, params: &MlpParams) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut sizes = vec![n_in];
        sizes.extend(&params.hidden);
        sizes.push(n_out);
        let mut net = Self::new(sizes, params.activation, &mut rng);
        let rows = x.len() / n_in;
        let batch = params.batch_size.max(1);
        let mut order: Vec<usize> = (0..rows).collect();
        let mut velocity = vec![0.0; net.params.len()];
        let mut grad = vec![0.0; net.params.len()];
        let mut bx = Vec::with_capacity(batch * n_in);
        let mut by = Vec::with_capacity(batch * n_out);
        let mut history = Vec::with_capacity(params.epochs);
        for epoch in 0..params.epochs {
            order.shuffle(&mut rng);
            let lr = params.learning_rate / (1.0 + params.lr_decay * epoch as f64);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                bx.clear();
                by.clear();
                for &r in chunk {
                    bx.extend_from_slice(&x[r * n_in..(r + 1) * n_in]);
                    by.extend_from_slice(&y[r * n_out..(r + 1) * n_out]);
                }
                epoch_loss += net.loss_and_gradient(&bx, &by, &mut grad) * chunk.len() as f64;
                for ((p, v), g) in net.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                    *v = params.momentum * *v - lr * g;
                    *p += *v;
                }
            }
            history.push(epoch_loss / rows.max(1) as f64);
        }
        (net, history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..10 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..10 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (x, y)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Mlp::new(vec![6, 8, 8, 3], Activation::Tanh, &mut rng);
        let mut grad = vec![0.0; net.parameters().len()];
        net.loss_and_gradient(&x, &y, &mut grad);
        let mut scratch = grad.clone();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..grad.len() {
            let p0 = net.params[i];
            net.params[i] = p0 + h;
            let up = net.loss_and_gradient(&x, &y, &mut scratch);
            net.params[i] = p0 - h;
            let down = net.loss_and_gradient(&x, &y, &mut scratch);
            net.params[i] = p0;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-5, "worst relative gradient error {worst:e}");
    }

    #[test]
    fn learns_a_smooth_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..400 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.chunks(2).map(|r| 0.5 * r[0] - 0.3 * r[1] * r[1]).collect();
        let p = MlpParams { hidden: vec![16], epochs: 200, batch_size: 32, learning_rate: 0.05, ..Default::default() };
        let (net, history) = Mlp::fit(&x, 2, &y, 1, &p);
        assert!(history.last().unwrap() < &(0.05 * history[0]));
        let mut out = [0.0];
        net.predict_into(&[0.5, 0.5], &mut out);
        assert!((out[0] - (0.25 - 0.075)).abs() < 0.05);
    }
}
