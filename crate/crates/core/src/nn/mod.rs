//! Feed-forward networks with ELU hidden activations, exact reverse-mode
//! gradients and Adam.
//!
//! Two evaluation paths exist. The per-sample [`Mlp::forward`] /
//! [`Mlp::backward`] pair is written as plain loops and is the reference
//! contract. The row-batched [`Mlp::forward_batch`] /
//! [`Mlp::backward_batch`] pair computes the same quantities with GEMM and
//! is what the training loops use. Both are deterministic.
//!
//! Weights are row-major `(out_dim, in_dim)`. Everything is `f64`.

mod adam;
pub mod checkpoint;

pub use adam::{Adam, AdamConfig};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[inline]
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    out_dim: usize,
    in_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Dense {
    pub fn new(out_dim: usize, in_dim: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::Config("layer dims must be > 0".into()));
        }
        if weights.len() != out_dim * in_dim || biases.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {out_dim}x{in_dim} got {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        Ok(Self {
            out_dim,
            in_dim,
            weights,
            biases,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weights: vec![0.0; out_dim * in_dim],
            biases: vec![0.0; out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }
}

/// Fixed elementwise affine maps around the trainable layers: the network
/// computes `out_scale * f((x - in_shift) / in_scale) + out_shift`. Never
/// trained; gradients flow through it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub in_shift: Vec<f64>,
    pub in_scale: Vec<f64>,
    pub out_shift: Vec<f64>,
    pub out_scale: Vec<f64>,
}

impl Scaling {
    pub fn identity(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_shift: vec![0.0; in_dim],
            in_scale: vec![1.0; in_dim],
            out_shift: vec![0.0; out_dim],
            out_scale: vec![1.0; out_dim],
        }
    }

    fn check(&self, in_dim: usize, out_dim: usize) -> Result<()> {
        if self.in_shift.len() != in_dim
            || self.in_scale.len() != in_dim
            || self.out_shift.len() != out_dim
            || self.out_scale.len() != out_dim
        {
            return Err(Error::Shape(format!(
                "scaling is {}/{} -> {}/{}, network is {in_dim} -> {out_dim}",
                self.in_shift.len(),
                self.in_scale.len(),
                self.out_shift.len(),
                self.out_scale.len()
            )));
        }
        let all = self
            .in_shift
            .iter()
            .chain(&self.in_scale)
            .chain(&self.out_shift)
            .chain(&self.out_scale);
        if !all.clone().all(|v| v.is_finite())
            || self
                .in_scale
                .iter()
                .chain(&self.out_scale)
                .any(|&v| v == 0.0)
        {
            return Err(Error::Config(
                "scaling needs finite values and nonzero scales".into(),
            ));
        }
        Ok(())
    }

    fn normalize(&self, x: &mut [f64]) {
        let n = self.in_scale.len();
        for (c, v) in x.iter_mut().enumerate() {
            *v = (*v - self.in_shift[c % n]) / self.in_scale[c % n];
        }
    }

    fn denormalize(&self, y: &mut [f64]) {
        let n = self.out_scale.len();
        for (c, v) in y.iter_mut().enumerate() {
            *v = *v * self.out_scale[c % n] + self.out_shift[c % n];
        }
    }
}

/// Network parameters: a chain of [`Dense`] layers, ELU between them and
/// identity on the output, optionally wrapped in a fixed [`Scaling`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    scaling: Option<Scaling>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, deterministic per seed.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                let weights = (0..fan_in * fan_out)
                    .map(|_| dist.sample(&mut rng))
                    .collect();
                Dense {
                    out_dim: fan_out,
                    in_dim: fan_in,
                    weights,
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            layers,
            scaling: None,
        })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense::zeros(w[1], w[0]))
            .collect();
        Ok(Self {
            layers,
            scaling: None,
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    l + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Self {
            layers,
            scaling: None,
        })
    }

    pub fn scaling(&self) -> Option<&Scaling> {
        self.scaling.as_ref()
    }

    pub fn set_scaling(&mut self, scaling: Option<Scaling>) -> Result<()> {
        if let Some(s) = &scaling {
            s.check(self.input_dim(), self.output_dim())?;
        }
        self.scaling = scaling;
        Ok(())
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.out_dim));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Sets the final layer to zero, so the output is the scaling's
    /// `out_shift` (exactly zero without scaling).
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.len() - 1;
        let layer = &mut self.layers[last];
        layer.weights.fill(0.0);
        layer.biases.fill(0.0);
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let last = self.layers.len() - 1;
        let mut h = input.to_vec();
        if let Some(s) = &self.scaling {
            s.normalize(&mut h);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.out_dim);
            for r in 0..layer.out_dim {
                let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                let mut acc = layer.biases[r];
                for (w, x) in row.iter().zip(&h) {
                    acc += w * x;
                }
                next.push(if l < last { elu(acc) } else { acc });
            }
            h = next;
        }
        if let Some(s) = &self.scaling {
            s.denormalize(&mut h);
        }
        Ok(h)
    }

    /// Gradients of `<upstream, forward(input)>` with respect to every
    /// parameter and to the input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Grads, Vec<f64>)> {
        self.check_input(input.len())?;
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream has {} entries, network outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let last = self.layers.len() - 1;
        // activations[l] is the input of layer l; pre[l] its pre-activation
        let mut x = input.to_vec();
        if let Some(s) = &self.scaling {
            s.normalize(&mut x);
        }
        let mut activations = vec![x];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let h = &activations[l];
            let z: Vec<f64> = (0..layer.out_dim)
                .map(|r| {
                    let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                    layer.biases[r] + row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>()
                })
                .collect();
            let a = if l < last {
                z.iter().map(|&v| elu(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            activations.push(a);
        }

        let mut grads = Grads::zeros_like(self);
        let mut delta = upstream.to_vec();
        self.scale_upstream(&mut delta);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l < last {
                for (d, z) in delta.iter_mut().zip(&pre[l]) {
                    *d *= elu_grad(*z);
                }
            }
            let h = &activations[l];
            let g = &mut grads.layers[l];
            for r in 0..layer.out_dim {
                g.biases[r] += delta[r];
                for c in 0..layer.in_dim {
                    g.weights[r * layer.in_dim + c] += delta[r] * h[c];
                }
            }
            let mut below = vec![0.0; layer.in_dim];
            for r in 0..layer.out_dim {
                for c in 0..layer.in_dim {
                    below[c] += layer.weights[r * layer.in_dim + c] * delta[r];
                }
            }
            delta = below;
        }
        self.scale_input_grad(&mut delta);
        Ok((grads, delta))
    }

    /// Row-batched forward. `inputs` is `rows x input_dim` row-major.
    pub fn forward_batch(&self, inputs: &[f64], rows: usize) -> Result<Vec<f64>> {
        Ok(self.forward_batch_traced(inputs, rows)?.output)
    }

    /// Row-batched forward that keeps what the backward pass needs.
    pub fn forward_batch_traced(&self, inputs: &[f64], rows: usize) -> Result<BatchTrace> {
        if inputs.len() != rows * self.input_dim() {
            return Err(Error::Shape(format!(
                "batch of {rows} rows needs {} inputs, got {}",
                rows * self.input_dim(),
                inputs.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = inputs.to_vec();
        if let Some(s) = &self.scaling {
            s.normalize(&mut h);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = affine_rows(layer, &h, rows);
            layer_inputs.push(h);
            if l < last {
                let a: Vec<f64> = z.iter().map(|&v| elu(v)).collect();
                pre.push(std::mem::take(&mut z));
                h = a;
            } else {
                h = z;
            }
        }
        if let Some(s) = &self.scaling {
            s.denormalize(&mut h);
        }
        Ok(BatchTrace {
            rows,
            layer_inputs,
            pre,
            output: h,
        })
    }

    /// Accumulates into `grads` the parameter gradient of
    /// `sum_r <upstream_r, output_r>` and returns the input gradient
    /// (`rows x input_dim`).
    pub fn backward_batch(
        &self,
        trace: &BatchTrace,
        upstream: &[f64],
        grads: &mut Grads,
    ) -> Result<Vec<f64>> {
        let rows = trace.rows;
        if upstream.len() != rows * self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream for {rows} rows needs {} entries, got {}",
                rows * self.output_dim(),
                upstream.len()
            )));
        }
        grads.check_congruent(self)?;
        let last = self.layers.len() - 1;
        let mut delta = upstream.to_vec();
        self.scale_upstream(&mut delta);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l < last {
                for (d, z) in delta.iter_mut().zip(&trace.pre[l]) {
                    *d *= elu_grad(*z);
                }
            }
            let (out_dim, in_dim) = (layer.out_dim, layer.in_dim);
            let h = &trace.layer_inputs[l];
            let g = &mut grads.layers[l];
            // dW (out x in) += delta^T (out x rows) * h (rows x in)
            unsafe {
                matrixmultiply::dgemm(
                    out_dim,
                    rows,
                    in_dim,
                    1.0,
                    delta.as_ptr(),
                    1,
                    out_dim as isize,
                    h.as_ptr(),
                    in_dim as isize,
                    1,
                    1.0,
                    g.weights.as_mut_ptr(),
                    in_dim as isize,
                    1,
                );
            }
            for r in 0..rows {
                for (gb, d) in g
                    .biases
                    .iter_mut()
                    .zip(&delta[r * out_dim..(r + 1) * out_dim])
                {
                    *gb += d;
                }
            }
            // d_in (rows x in) = delta (rows x out) * W (out x in)
            let mut below = vec![0.0; rows * in_dim];
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    out_dim,
                    in_dim,
                    1.0,
                    delta.as_ptr(),
                    out_dim as isize,
                    1,
                    layer.weights.as_ptr(),
                    in_dim as isize,
                    1,
                    0.0,
                    below.as_mut_ptr(),
                    in_dim as isize,
                    1,
                );
            }
            delta = below;
        }
        self.scale_input_grad(&mut delta);
        Ok(delta)
    }

    fn scale_upstream(&self, upstream: &mut [f64]) {
        if let Some(s) = &self.scaling {
            let n = s.out_scale.len();
            for (c, u) in upstream.iter_mut().enumerate() {
                *u *= s.out_scale[c % n];
            }
        }
    }

    fn scale_input_grad(&self, grad: &mut [f64]) {
        if let Some(s) = &self.scaling {
            let n = s.in_scale.len();
            for (c, g) in grad.iter_mut().enumerate() {
                *g /= s.in_scale[c % n];
            }
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {len} entries, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "layer_sizes needs at least 2 entries, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config(format!(
            "layer_sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// `h (rows x in) * W^T + b` for one layer.
fn affine_rows(layer: &Dense, h: &[f64], rows: usize) -> Vec<f64> {
    let (out_dim, in_dim) = (layer.out_dim, layer.in_dim);
    let mut z = Vec::with_capacity(rows * out_dim);
    for _ in 0..rows {
        z.extend_from_slice(&layer.biases);
    }
    unsafe {
        matrixmultiply::dgemm(
            rows,
            in_dim,
            out_dim,
            1.0,
            h.as_ptr(),
            in_dim as isize,
            1,
            layer.weights.as_ptr(),
            1,
            in_dim as isize,
            1.0,
            z.as_mut_ptr(),
            out_dim as isize,
            1,
        );
    }
    z
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    rows: usize,
    layer_inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl BatchTrace {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Per-parameter gradient arrays, shape-congruent with an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<LayerGrad>,
}

impl Grads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.biases.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Location of the first non-finite entry, e.g. `layer 1 weights[3]`.
    pub fn first_non_finite(&self) -> Option<String> {
        for (l, g) in self.layers.iter().enumerate() {
            if let Some(i) = g.weights.iter().position(|v| !v.is_finite()) {
                return Some(format!("layer {l} weights[{i}]"));
            }
            if let Some(i) = g.biases.iter().position(|v| !v.is_finite()) {
                return Some(format!("layer {l} biases[{i}]"));
            }
        }
        None
    }

    pub(crate) fn check_congruent(&self, mlp: &Mlp) -> Result<()> {
        let ok = self.layers.len() == mlp.layers.len()
            && self.layers.iter().zip(&mlp.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(
                "gradient buffer does not match network shape".into(),
            ))
        }
    }
}
