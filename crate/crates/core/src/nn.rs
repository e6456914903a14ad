//! Dense networks with hand-written reverse-mode gradients and Adam.
//!
//! Batches are row-major `(batch, features)` matrices. Hidden layers use ReLU; the
//! output activation is chosen per network (tanh for actors, identity for critics).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("input has {got} features, network expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("a network needs at least an input and an output size")]
    TooFewLayers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(inputs, outputs)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, limit: f64, rng: &mut R) -> Self {
        let mut d = Self::zeros(fan_in, fan_out);
        d.w.mapv_inplace(|_| rng.random_range(-limit..limit));
        d.b.mapv_inplace(|_| rng.random_range(-limit..limit));
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: Activation,
}

/// Intermediate values kept by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Parameter gradients laid out like [`Mlp::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Dense::zeros(l.w.nrows(), l.w.ncols())).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
    }
}

impl Mlp {
    /// He-uniform hidden layers, ±3e-3 uniform output layer.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Activation, rng: &mut R) -> Result<Self, NnError> {
        if sizes.len() < 2 {
            return Err(NnError::TooFewLayers);
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let limit = if i == last { 3e-3 } else { (6.0 / w[0] as f64).sqrt() };
                Dense::uniform(w[0], w[1], limit, rng)
            })
            .collect();
        Ok(Self { layers, output })
    }

    pub fn zeros(sizes: &[usize], output: Activation) -> Result<Self, NnError> {
        if sizes.len() < 2 {
            return Err(NnError::TooFewLayers);
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            output,
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::InputDim {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&x)?;
        let n = self.layers.len();
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b;
            if i + 1 < n {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        if self.output == Activation::Tanh {
            h.mapv_inplace(f64::tanh);
        }
        Ok(h)
    }

    /// Single-sample convenience wrapper around [`Mlp::forward`].
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| NnError::Shape(e.to_string()))?;
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache, NnError> {
        self.check_input(&x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.w) + &l.b;
            inputs.push(h);
            h = z;
            if i + 1 < n {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        if self.output == Activation::Tanh {
            h.mapv_inplace(f64::tanh);
        }
        Ok(ForwardCache { inputs, output: h })
    }

    /// Gradients of `sum(grad_out ⊙ output)` with respect to parameters and inputs.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>), NnError> {
        if grad_out.dim() != cache.output.dim() {
            return Err(NnError::Shape(format!(
                "upstream gradient {:?} vs output {:?}",
                grad_out.dim(),
                cache.output.dim()
            )));
        }
        let mut delta = grad_out.to_owned();
        if self.output == Activation::Tanh {
            delta.zip_mut_with(&cache.output, |d, y| *d *= 1.0 - y * y);
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Dense { w: gw, b: gb });
            let mut d_in = delta.dot(&l.w.t());
            if i > 0 {
                // ReLU gate: the cached input of layer i is the activated output of layer i-1.
                d_in.zip_mut_with(input, |d, a| {
                    if *a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = d_in;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
    }

    /// Overwrites all parameters from a flat vector in [`Mlp::flatten`] order.
    pub fn load_flat(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

/// target ← τ·source + (1−τ)·target.
pub fn soft_update(target: &mut Mlp, source: &Mlp, tau: f64) {
    for (t, s) in target.layers.iter_mut().zip(&source.layers) {
        t.w.zip_mut_with(&s.w, |a, b| *a = tau * b + (1.0 - tau) * *a);
        t.b.zip_mut_with(&s.b, |a, b| *a = tau * b + (1.0 - tau) * *a);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Gradients,
    pub v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn update(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            let g = if g.is_finite() { g } else { 0.0 };
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            ndarray::Zip::from(&mut layer.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
            ndarray::Zip::from(&mut layer.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
        }
    }

    pub fn flatten_moments(&self) -> (Vec<f64>, Vec<f64>) {
        (self.m.flatten(), self.v.flatten())
    }

    pub fn load_moments(&mut self, net: &Mlp, m: &[f64], v: &[f64], step: u64) -> Result<(), NnError> {
        let mut mm = net.clone();
        mm.load_flat(m)?;
        let mut vv = net.clone();
        vv.load_flat(v)?;
        self.m = Gradients { layers: mm.layers };
        self.v = Gradients { layers: vv.layers };
        self.step = step;
        Ok(())
    }
}
