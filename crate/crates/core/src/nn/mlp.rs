//! Sine-activated multilayer perceptrons.
//!
//! Hidden layers compute `sin(omega * (W x + b))`; the output layer is affine.
//! `omega` is `omega0` on the first layer and `omega_hidden` afterwards.
//!
//! Evaluation state lives in an [`MlpContext`] rather than in the network, so
//! one network can be evaluated from many workers at once. A context caches
//! layer inputs and pre-activations for every jet channel, which is enough to
//! run reverse mode through value *and* derivative channels: a loss defined on
//! `d/dt` of the output gets exact parameter gradients.

use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::jet::{Jet2, JetBatch, JetLayout};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Sine,
    /// Affine hidden layers. Only useful for tests: every second derivative vanishes.
    Identity,
}

/// Shape and frequency settings for a [`SineMlp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    pub omega0: f64,
    pub omega_hidden: f64,
}

impl MlpSpec {
    pub fn new(dims: &[usize], omega0: f64) -> Self {
        Self { dims: dims.to_vec(), omega0, omega_hidden: 1.0 }
    }

    /// `input -> hidden x layers -> output`.
    pub fn uniform(input: usize, hidden: usize, layers: usize, output: usize, omega0: f64) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, layers));
        dims.push(output);
        Self::new(&dims, omega0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SineMlp {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    omega0: f64,
    omega_hidden: f64,
    activation: Activation,
}

impl SineMlp {
    /// Randomly initialized network.
    ///
    /// First-layer weights are uniform in `[-1/fan_in, 1/fan_in]`; later layers
    /// in `[-sqrt(6/fan_in)/omega_hidden, +sqrt(6/fan_in)/omega_hidden]`.
    /// Biases are uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        for l in 0..net.weights.len() {
            let fan_in = net.dims[l] as f64;
            let w_lim = if l == 0 { 1.0 / fan_in } else { (6.0 / fan_in).sqrt() / spec.omega_hidden };
            let b_lim = 1.0 / fan_in.sqrt();
            net.weights[l].mapv_inplace(|_| rng.random_range(-w_lim..=w_lim));
            net.biases[l].mapv_inplace(|_| rng.random_range(-b_lim..=b_lim));
        }
        Ok(net)
    }

    /// Network with every weight and bias zero.
    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        if spec.dims.len() < 2 || spec.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("bad layer dims {:?}", spec.dims)));
        }
        if !(spec.omega0 > 0.0 && spec.omega_hidden > 0.0) {
            return Err(Error::InvalidArgument("omega must be positive".into()));
        }
        let weights = spec.dims.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect();
        let biases = spec.dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(Self {
            dims: spec.dims.clone(),
            weights,
            biases,
            omega0: spec.omega0,
            omega_hidden: spec.omega_hidden,
            activation: Activation::Sine,
        })
    }

    pub fn from_parts(
        spec: &MlpSpec,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        if weights.len() != net.weights.len() || biases.len() != net.biases.len() {
            return Err(Error::InvalidArgument("layer count mismatch".into()));
        }
        for (l, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            if w.dim() != net.weights[l].dim() || b.len() != net.biases[l].len() {
                return Err(Error::InvalidArgument(format!("layer {l} shape mismatch")));
            }
            net.weights[l] = w;
            net.biases[l] = b;
        }
        net.activation = activation;
        Ok(net)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn spec(&self) -> MlpSpec {
        MlpSpec { dims: self.dims.clone(), omega0: self.omega0, omega_hidden: self.omega_hidden }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn omega_hidden(&self) -> f64 {
        self.omega_hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters as slices: all weight matrices (row-major), then all biases.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let w = self.weights.iter().map(|w| w.as_slice().expect("standard layout"));
        let b = self.biases.iter().map(|b| b.as_slice().expect("standard layout"));
        w.chain(b).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let w = self.weights.iter_mut().map(|w| w.as_slice_mut().expect("standard layout"));
        let b = self.biases.iter_mut().map(|b| b.as_slice_mut().expect("standard layout"));
        w.chain(b).collect()
    }

    /// Parameter at flat index `idx` in [`SineMlp::param_slices`] order.
    pub fn param(&self, mut idx: usize) -> f64 {
        for s in self.param_slices() {
            if idx < s.len() {
                return s[idx];
            }
            idx -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, v: f64) {
        for s in self.param_slices_mut() {
            if idx < s.len() {
                s[idx] = v;
                return;
            }
            idx -= s.len();
        }
        panic!("parameter index out of range");
    }

    fn omega(&self, layer: usize) -> f64 {
        if layer == 0 {
            self.omega0
        } else {
            self.omega_hidden
        }
    }

    fn is_hidden(&self, layer: usize) -> bool {
        layer + 1 < self.weights.len()
    }

    /// Evaluate on a single input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let col = Array2::from_shape_vec((x.len(), 1), x.to_vec()).expect("column shape");
        let y = self.forward_batch(col.view())?;
        Ok(y.column(0).to_vec())
    }

    /// Evaluate on a `input_dim x batch` block, returning `output_dim x batch`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let input = JetBatch::from_values(x.to_owned());
        Ok(self.propagate(&input, None)?.into_raw())
    }

    /// Evaluate on scalar jets (one per input feature).
    pub fn forward_jet(&self, x: &[Jet2]) -> Result<Vec<Jet2>> {
        let input = JetBatch::from_jets(x)?;
        Ok(self.propagate(&input, None)?.sample(0))
    }

    /// Evaluate a jet batch without recording anything for reverse mode.
    pub fn forward_jets(&self, input: &JetBatch) -> Result<JetBatch> {
        self.propagate(input, None)
    }

    fn propagate(&self, input: &JetBatch, mut cache: Option<&mut Vec<LayerCache>>) -> Result<JetBatch> {
        if input.dim() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: input.dim() });
        }
        let layout = Arc::clone(input.layout());
        let batch = input.batch();
        let mut x = input.raw().clone();
        for l in 0..self.weights.len() {
            let mut z = self.weights[l].dot(&x);
            {
                let mut value = z.slice_mut(s![.., 0..batch]);
                value += &self.biases[l].view().insert_axis(Axis(1));
            }
            if self.is_hidden(l) {
                let h = match self.activation {
                    Activation::Sine => {
                        z *= self.omega(l);
                        let h = sine_jet(&z, &layout, batch);
                        if let Some(c) = cache.as_deref_mut() {
                            c.push(LayerCache { input: x, pre: Some(z) });
                        }
                        h
                    }
                    Activation::Identity => {
                        if let Some(c) = cache.as_deref_mut() {
                            c.push(LayerCache { input: x, pre: None });
                        }
                        z
                    }
                };
                x = h;
            } else {
                if let Some(c) = cache.as_deref_mut() {
                    c.push(LayerCache { input: x, pre: None });
                }
                x = z;
            }
        }
        JetBatch::from_raw(x, batch, layout)
    }
}

struct LayerCache {
    input: Array2<f64>,
    pre: Option<Array2<f64>>,
}

struct Cache {
    dims: Vec<usize>,
    layout: Arc<JetLayout>,
    batch: usize,
    layers: Vec<LayerCache>,
}

/// Per-worker evaluation state: cached activations from the last traced forward pass.
#[derive(Default)]
pub struct MlpContext {
    cache: Option<Cache>,
}

impl MlpContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear(&mut self) {
        self.cache = None;
    }

    /// Forward pass that records what [`MlpContext::backward`] needs.
    pub fn forward(&mut self, net: &SineMlp, input: &JetBatch) -> Result<JetBatch> {
        let mut layers = Vec::with_capacity(net.weights.len());
        let out = net.propagate(input, Some(&mut layers))?;
        self.cache = Some(Cache {
            dims: net.dims.clone(),
            layout: Arc::clone(input.layout()),
            batch: input.batch(),
            layers,
        });
        Ok(out)
    }

    /// Reverse pass of the cached evaluation.
    ///
    /// `upstream` is the cotangent of every output channel. Parameter gradients
    /// of `<upstream, output>` are added into `tape`; the returned batch is the
    /// cotangent of every input channel.
    pub fn backward(&self, net: &SineMlp, upstream: &JetBatch, tape: &mut ParamGrad) -> Result<JetBatch> {
        let cache = self.cache.as_ref().ok_or(Error::NoCachedForward)?;
        if cache.dims != net.dims {
            return Err(Error::InvalidArgument("context was recorded for another network".into()));
        }
        if upstream.dim() != net.output_dim() {
            return Err(Error::Shape { expected: net.output_dim(), got: upstream.dim() });
        }
        if upstream.batch() != cache.batch || **upstream.layout() != *cache.layout {
            return Err(Error::JetShape("upstream does not match cached jet shape".into()));
        }
        if !tape.matches(net) {
            return Err(Error::InvalidArgument("gradient tape shape mismatch".into()));
        }
        let batch = cache.batch;
        let mut g = upstream.raw().clone();
        for l in (0..net.weights.len()).rev() {
            let lc = &cache.layers[l];
            if let Some(pre) = &lc.pre {
                g = sine_jet_backward(pre, &g, &cache.layout, batch);
                g *= net.omega(l);
            }
            general_mat_mul(1.0, &g, &lc.input.t(), 1.0, &mut tape.weights[l]);
            tape.biases[l] += &g.slice(s![.., 0..batch]).sum_axis(Axis(1));
            g = net.weights[l].t().dot(&g);
        }
        JetBatch::from_raw(g, batch, Arc::clone(&cache.layout))
    }

    /// Single-sample, value-only reverse pass: returns `d(upstream . y)/dx`.
    pub fn backward_values(&self, net: &SineMlp, upstream: &[f64], tape: &mut ParamGrad) -> Result<Vec<f64>> {
        let col = Array2::from_shape_vec((upstream.len(), 1), upstream.to_vec())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let g = self.backward(net, &JetBatch::from_values(col), tape)?;
        Ok(g.value().column(0).to_vec())
    }
}

/// Elementwise `sin` on a jet block whose columns are `channels x batch`.
fn sine_jet(a: &Array2<f64>, layout: &JetLayout, batch: usize) -> Array2<f64> {
    let dirs = layout.dirs();
    let pairs = layout.pairs();
    let cols = a.ncols();
    let mut h = Array2::zeros(a.raw_dim());
    let a_s = a.as_slice().expect("standard layout");
    let h_s = h.as_slice_mut().expect("standard layout");
    for (ar, hr) in a_s.chunks_exact(cols).zip(h_s.chunks_exact_mut(cols)) {
        for b in 0..batch {
            let (s0, c0) = ar[b].sin_cos();
            hr[b] = s0;
            for i in 0..dirs {
                let k = (1 + i) * batch + b;
                hr[k] = c0 * ar[k];
            }
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let k = (1 + dirs + p) * batch + b;
                let ai = ar[(1 + i) * batch + b];
                let aj = ar[(1 + j) * batch + b];
                hr[k] = c0 * ar[k] - s0 * ai * aj;
            }
        }
    }
    h
}

/// Cotangent of the pre-activation given the cotangent of [`sine_jet`]'s output.
fn sine_jet_backward(a: &Array2<f64>, gh: &Array2<f64>, layout: &JetLayout, batch: usize) -> Array2<f64> {
    let dirs = layout.dirs();
    let pairs = layout.pairs();
    let cols = a.ncols();
    let mut ga = Array2::zeros(a.raw_dim());
    let a_s = a.as_slice().expect("standard layout");
    let gh_s = gh.as_slice().expect("standard layout");
    let ga_s = ga.as_slice_mut().expect("standard layout");
    for ((ar, gr), gar) in a_s
        .chunks_exact(cols)
        .zip(gh_s.chunks_exact(cols))
        .zip(ga_s.chunks_exact_mut(cols))
    {
        for b in 0..batch {
            let (s0, c0) = ar[b].sin_cos();
            let mut g0 = c0 * gr[b];
            for i in 0..dirs {
                let k = (1 + i) * batch + b;
                g0 -= s0 * gr[k] * ar[k];
                gar[k] = c0 * gr[k];
            }
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let k = (1 + dirs + p) * batch + b;
                let ki = (1 + i) * batch + b;
                let kj = (1 + j) * batch + b;
                let gp = gr[k];
                g0 -= gp * (s0 * ar[k] + c0 * ar[ki] * ar[kj]);
                gar[ki] -= gp * s0 * ar[kj];
                gar[kj] -= gp * s0 * ar[ki];
                gar[k] = c0 * gp;
            }
            gar[b] = g0;
        }
    }
    ga
}

/// Gradient accumulators shaped like a [`SineMlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGrad {
    pub fn zeros_like(net: &SineMlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    fn matches(&self, net: &SineMlp) -> bool {
        self.weights.len() == net.weights.len()
            && self.weights.iter().zip(&net.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&net.biases).all(|(a, b)| a.len() == b.len())
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let w = self.weights.iter().map(|w| w.as_slice().expect("standard layout"));
        let b = self.biases.iter().map(|b| b.as_slice().expect("standard layout"));
        w.chain(b).collect()
    }

    /// Flat entry in [`SineMlp::param_slices`] order.
    pub fn get(&self, mut idx: usize) -> f64 {
        for s in self.slices() {
            if idx < s.len() {
                return s[idx];
            }
            idx -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn add_assign(&mut self, other: &ParamGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &ParamGrad, k: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(k, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(k, b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.weights {
            *a *= k;
        }
        for a in &mut self.biases {
            *a *= k;
        }
    }

    pub fn fill(&mut self, v: f64) {
        for a in &mut self.weights {
            a.fill(v);
        }
        for a in &mut self.biases {
            a.fill(v);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}
