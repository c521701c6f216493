//! Dense building blocks with explicit backward passes.
//!
//! Weights are row-major `out x in`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::params::{Grads, ParamId, ParamStore};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic function, clamped so the result stays strictly inside (0, 1).
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `out = W x` for a `rows x cols` matrix.
#[inline]
pub fn matvec(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// `dx += W^T dy`.
#[inline]
pub fn matvec_t_acc(w: &[f64], cols: usize, dy: &[f64], dx: &mut [f64]) {
    for (d, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if *d != 0.0 {
            for (x, r) in dx.iter_mut().zip(row) {
                *x += d * r;
            }
        }
    }
}

/// `dw += dy ⊗ x`.
#[inline]
pub fn outer_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (d, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if *d != 0.0 {
            for (w, xi) in row.iter_mut().zip(x) {
                *w += d * xi;
            }
        }
    }
}

#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Kaiming-style normal, std `sqrt(2 / fan_in)`.
    Kaiming,
    /// Uniform in `[-a, a]`.
    Uniform(f64),
    Zeros,
}

pub fn init_values<R: Rng>(rng: &mut R, n: usize, fan_in: usize, init: Init) -> Vec<f64> {
    match init {
        Init::Kaiming => {
            let sd = (2.0 / fan_in as f64).sqrt();
            (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
        }
        Init::Uniform(a) => (0..n).map(|_| rng.gen_range(-a..=a)).collect(),
        Init::Zeros => vec![0.0; n],
    }
}

/// Affine layer `y = W x + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            vec![out_dim, in_dim],
            init_values(rng, out_dim * in_dim, in_dim, init),
        );
        let b = bias.then(|| store.add(format!("{name}.bias"), vec![out_dim], vec![0.0; out_dim]));
        Linear { w, b, in_dim, out_dim }
    }

    #[inline]
    pub fn forward(&self, store: &ParamStore, x: &[f64], out: &mut [f64]) {
        matvec(store.get(self.w), self.in_dim, x, out);
        if let Some(b) = self.b {
            for (o, bi) in out.iter_mut().zip(store.get(b)) {
                *o += bi;
            }
        }
    }

    /// Accumulate parameter gradients; `dx += W^T dy` when requested.
    #[inline]
    pub fn backward(&self, store: &ParamStore, x: &[f64], dy: &[f64], grads: &mut Grads, dx: Option<&mut [f64]>) {
        outer_acc(grads.get_mut(self.w), dy, x);
        if let Some(b) = self.b {
            axpy(1.0, dy, grads.get_mut(b));
        }
        if let Some(dx) = dx {
            matvec_t_acc(store.get(self.w), self.in_dim, dy, dx);
        }
    }
}

/// Two-layer perceptron `l2(relu(l1(x)))`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, dims: [usize; 3]) -> Self {
        Mlp {
            l1: Linear::new(store, rng, &format!("{name}.0"), dims[0], dims[1], true, Init::Kaiming),
            l2: Linear::new(store, rng, &format!("{name}.1"), dims[1], dims[2], true, Init::Kaiming),
        }
    }

    /// Writes the post-ReLU hidden layer into `hidden` and the output into `out`.
    #[inline]
    pub fn forward(&self, store: &ParamStore, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        self.l1.forward(store, x, hidden);
        hidden.iter_mut().for_each(|h| *h = h.max(0.0));
        self.l2.forward(store, hidden, out);
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        x: &[f64],
        hidden: &[f64],
        dy: &[f64],
        grads: &mut Grads,
        dx: Option<&mut [f64]>,
    ) {
        let mut dh = vec![0.0; hidden.len()];
        self.l2.backward(store, hidden, dy, grads, Some(&mut dh));
        for (d, h) in dh.iter_mut().zip(hidden) {
            if *h <= 0.0 {
                *d = 0.0;
            }
        }
        self.l1.backward(store, x, &dh, grads, dx);
    }
}
