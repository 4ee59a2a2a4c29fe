//! Minimal dense-layer toolkit over flat parameter vectors, with hand-written
//! backward passes and the two optimizers used for training.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Hands out contiguous slices of one flat parameter vector.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, n: usize) -> usize {
        let off = self.len;
        self.len += n;
        off
    }

    pub fn dense(&mut self, n_in: usize, n_out: usize) -> Dense {
        let w = self.alloc(n_in * n_out);
        let b = self.alloc(n_out);
        Dense { n_in, n_out, w, b }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Affine map `y = W x + b`; `W` is row-major `n_out x n_in` at offset `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
}

impl Dense {
    pub fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.n_in * self.n_out]
    }

    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        let w = self.weights(p);
        for (o, yo) in y.iter_mut().enumerate().take(self.n_out) {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            *yo = p[self.b + o] + dot(row, x);
        }
    }

    /// Adds `W x` only (no bias).
    pub fn matvec_add(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let w = self.weights(p);
        for (o, yo) in y.iter_mut().enumerate().take(self.n_out) {
            *yo += dot(&w[o * self.n_in..(o + 1) * self.n_in], x);
        }
    }

    /// Accumulates parameter gradients for upstream `dy` at input `x`, and adds
    /// `W^T dy` into `dx` when given.
    pub fn backward(
        &self,
        p: &[f64],
        x: &[f64],
        dy: &[f64],
        grad: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        self.backward_weights(x, dy, grad);
        for (o, d) in dy.iter().enumerate() {
            grad[self.b + o] += d;
        }
        if let Some(dx) = dx {
            self.backward_input(p, dy, dx);
        }
    }

    pub fn backward_weights(&self, x: &[f64], dy: &[f64], grad: &mut [f64]) {
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let g = &mut grad[self.w + o * self.n_in..self.w + (o + 1) * self.n_in];
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += d * xi;
            }
        }
    }

    pub fn backward_input(&self, p: &[f64], dy: &[f64], dx: &mut [f64]) {
        let w = self.weights(p);
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (dxi, wi) in dx.iter_mut().zip(&w[o * self.n_in..(o + 1) * self.n_in]) {
                *dxi += d * wi;
            }
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(&self, p: &mut [f64], rng: &mut Rng) {
        let a = (6.0 / (self.n_in + self.n_out) as f64).sqrt();
        for w in &mut p[self.w..self.w + self.n_in * self.n_out] {
            *w = rng.random_range(-a..a);
        }
        p[self.b..self.b + self.n_out].fill(0.0);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Heavy-ball momentum gradient descent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Momentum {
    pub lr: f64,
    pub beta: f64,
    velocity: Vec<f64>,
}

impl Momentum {
    pub fn new(n: usize, lr: f64, beta: f64) -> Self {
        Self {
            lr,
            beta,
            velocity: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.beta * *v + g;
            *p -= self.lr * *v;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, m), v), g) in params
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(grad)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Per-feature mean and standard deviation; constant features get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    pub fn fit<'a>(n: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        for r in rows {
            for i in 0..n {
                sum[i] += r[i];
                sq[i] += r[i] * r[i];
            }
            count += 1;
        }
        if count == 0 {
            return Self::identity(n);
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / c - m * m).max(0.0);
                if var.sqrt() < 1e-9 {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut layout = ParamLayout::new();
        let d = layout.dense(3, 2);
        let mut p = vec![0.0; layout.len()];
        d.init(&mut p, &mut rng::stream(1, &[]));
        p[d.b] = 0.3;
        let x = [0.2, -0.7, 1.1];
        let dy = [0.5, -1.5];
        let f = |p: &[f64], x: &[f64]| {
            let mut y = [0.0; 2];
            d.forward(p, x, &mut y);
            dot(&y, &dy)
        };
        let mut grad = vec![0.0; p.len()];
        let mut dx = [0.0; 3];
        d.backward(&p, &x, &dy, &mut grad, Some(&mut dx));
        let h = 1e-6;
        for i in 0..p.len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += h;
            b[i] -= h;
            assert!(((f(&a, &x) - f(&b, &x)) / (2.0 * h) - grad[i]).abs() < 1e-8);
        }
        for i in 0..3 {
            let mut a = x;
            let mut b = x;
            a[i] += h;
            b[i] -= h;
            assert!(((f(&p, &a) - f(&p, &b)) / (2.0 * h) - dx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(100.0), 100.0);
        let h = 1e-6;
        for x in [-3.0, -0.2, 0.0, 1.4] {
            assert!(((silu(x + h) - silu(x - h)) / (2.0 * h) - silu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn optimizers_descend_a_quadratic() {
        let grad = |p: &[f64]| vec![2.0 * (p[0] - 3.0), 2.0 * (p[1] + 1.0)];
        let mut p = vec![0.0, 0.0];
        let mut opt = Momentum::new(2, 0.05, 0.9);
        for _ in 0..500 {
            let g = grad(&p);
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 3.0).abs() < 1e-6 && (p[1] + 1.0).abs() < 1e-6);
        let mut p = vec![0.0, 0.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g = grad(&p);
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 3.0).abs() < 1e-3 && (p[1] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(2, rows.iter().map(|r| r.as_slice()));
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
    }
}
