//! Dense multilayer perceptrons over flat parameter vectors.
//!
//! Every network in the crate (actor, critics, hypernetwork, generated
//! targets) is a [`NetSpec`] plus a [`ParamVector`]. Layer `l` occupies a
//! contiguous block of the vector: its weight matrix in row-major
//! `(out_dim, in_dim)` order followed by its `out_dim` biases. A layer
//! computes `act(W x + b)`.
//!
//! Gradients are exact reverse-mode derivatives computed over a whole
//! mini-batch at once; batches are row-major `(batch, features)` matrices.

use std::ops::{Deref, DerefMut};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn slope_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawNetSpec")]
pub struct NetSpec {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
}

#[derive(Deserialize)]
struct RawNetSpec {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
}

impl TryFrom<RawNetSpec> for NetSpec {
    type Error = Error;

    fn try_from(raw: RawNetSpec) -> Result<Self> {
        NetSpec::new(raw.layer_sizes, raw.activations)
    }
}

impl NetSpec {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::contract(
                "a network needs at least an input and an output size",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::contract("layer sizes must be positive"));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::contract(format!(
                "{} layer boundaries but {} activations",
                layer_sizes.len() - 1,
                activations.len()
            )));
        }
        Ok(Self {
            layer_sizes,
            activations,
        })
    }

    /// Hidden layers share one activation; the output layer gets its own.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        output_act: Activation,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(output_act);
        Self::new(sizes, acts)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    /// `(in_dim, out_dim)` of layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.layer_sizes[l], self.layer_sizes[l + 1])
    }

    pub fn layer_param_count(&self, l: usize) -> usize {
        let (i, o) = self.layer_shape(l);
        i * o + o
    }

    pub fn num_params(&self) -> usize {
        (0..self.num_layers())
            .map(|l| self.layer_param_count(l))
            .sum()
    }

    /// Offset of each layer's block inside the flat vector.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut at = 0;
        for l in 0..self.num_layers() {
            offsets.push(at);
            at += self.layer_param_count(l);
        }
        offsets
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::contract(format!(
                "parameter vector has {} entries, network needs {}",
                params.len(),
                self.num_params()
            )));
        }
        Ok(())
    }

    fn layer_views<'a>(
        &'a self,
        params: &'a [f64],
    ) -> impl Iterator<Item = (ArrayView2<'a, f64>, ArrayView1<'a, f64>, Activation)> + 'a {
        let mut at = 0;
        (0..self.num_layers()).map(move |l| {
            let (i, o) = self.layer_shape(l);
            let w = ArrayView2::from_shape((o, i), &params[at..at + i * o]).unwrap();
            let b = ArrayView1::from(&params[at + i * o..at + i * o + o]);
            at += i * o + o;
            (w, b, self.activations[l])
        })
    }
}

/// Flat parameter storage for one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Mean squared elementwise difference.
    pub fn mean_sq_diff(&self, other: &[f64]) -> f64 {
        assert_eq!(self.len(), other.len());
        if self.is_empty() {
            return 0.0;
        }
        self.iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.len() as f64
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
pub fn init_params(spec: &NetSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(spec.num_params());
    for l in 0..spec.num_layers() {
        let (i, o) = spec.layer_shape(l);
        let bound = (1.0 / i as f64).sqrt();
        values.extend((0..i * o).map(|_| rng.random_range(-bound..=bound)));
        values.extend(std::iter::repeat_n(0.0, o));
    }
    ParamVector(values)
}

/// Single-sample forward pass.
pub fn forward(spec: &NetSpec, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
    Ok(forward_batch(spec, params, x)?.into_raw_vec_and_offset().0)
}

pub fn forward_batch(
    spec: &NetSpec,
    params: &[f64],
    inputs: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    spec.check_params(params)?;
    check_input(spec, inputs)?;
    let mut a = inputs.to_owned();
    for (w, b, act) in spec.layer_views(params) {
        a = affine(a.view(), w, b, act);
    }
    Ok(a)
}

fn check_input(spec: &NetSpec, inputs: ArrayView2<f64>) -> Result<()> {
    if inputs.ncols() != spec.input_dim() {
        return Err(Error::contract(format!(
            "input width {} does not match network input {}",
            inputs.ncols(),
            spec.input_dim()
        )));
    }
    Ok(())
}

fn affine(
    a: ArrayView2<f64>,
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    act: Activation,
) -> Array2<f64> {
    let mut z = a.dot(&w.t());
    z += &b;
    if act != Activation::Identity {
        z.mapv_inplace(|v| act.apply(v));
    }
    z
}

/// Activations kept from a forward pass so it can be differentiated.
#[derive(Clone, Debug)]
pub struct Trace {
    // activations[0] is the input, activations[l + 1] the output of layer l
    activations: Vec<Array2<f64>>,
}

pub struct Gradients {
    pub params: ParamVector,
    /// d(loss)/d(input), shaped like the batch input.
    pub input: Array2<f64>,
}

pub fn forward_trace(spec: &NetSpec, params: &[f64], inputs: ArrayView2<f64>) -> Result<Trace> {
    spec.check_params(params)?;
    check_input(spec, inputs)?;
    let mut activations = Vec::with_capacity(spec.num_layers() + 1);
    activations.push(inputs.to_owned());
    for (w, b, act) in spec.layer_views(params) {
        let next = affine(activations.last().unwrap().view(), w, b, act);
        activations.push(next);
    }
    Ok(Trace { activations })
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().unwrap()
    }

    /// Back-propagates `d_output` (gradient of the loss w.r.t. the network
    /// output) to the parameters and the input.
    pub fn backward(
        &self,
        spec: &NetSpec,
        params: &[f64],
        d_output: ArrayView2<f64>,
    ) -> Result<Gradients> {
        spec.check_params(params)?;
        if d_output.dim() != self.output().dim() {
            return Err(Error::contract(format!(
                "output gradient shape {:?} does not match output {:?}",
                d_output.dim(),
                self.output().dim()
            )));
        }
        let mut grads = vec![0.0; params.len()];
        let offsets = spec.layer_offsets();
        let layers: Vec<_> = spec.layer_views(params).collect();

        let mut delta = d_output.to_owned();
        for l in (0..spec.num_layers()).rev() {
            let (w, _, act) = layers[l];
            let out = &self.activations[l + 1];
            if act != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(out)
                    .for_each(|d, &y| *d *= act.slope_at_output(y));
            }
            let (i, o) = spec.layer_shape(l);
            let at = offsets[l];
            let dw = delta.t().dot(&self.activations[l]);
            // Logical (row-major) order regardless of the product's memory layout.
            for (g, v) in grads[at..at + i * o].iter_mut().zip(dw.iter()) {
                *g = *v;
            }
            let db = delta.sum_axis(Axis(0));
            for (g, v) in grads[at + i * o..at + i * o + o].iter_mut().zip(db.iter()) {
                *g = *v;
            }
            delta = delta.dot(&w);
        }
        Ok(Gradients {
            params: ParamVector(grads),
            input: delta,
        })
    }
}

/// Mean squared error over every output element of the batch, with its
/// exact gradient.
pub fn mse_gradient(
    spec: &NetSpec,
    params: &[f64],
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
) -> Result<(f64, ParamVector)> {
    if inputs.nrows() == 0 {
        return Err(Error::contract("empty batch"));
    }
    if targets.dim() != (inputs.nrows(), spec.output_dim()) {
        return Err(Error::contract(format!(
            "targets shaped {:?}, expected ({}, {})",
            targets.dim(),
            inputs.nrows(),
            spec.output_dim()
        )));
    }
    let trace = forward_trace(spec, params, inputs)?;
    let (loss, d_out) = mse_loss(trace.output().view(), targets);
    let grads = trace.backward(spec, params, d_out.view())?;
    Ok((loss, grads.params))
}

/// Mean squared error and its derivative w.r.t. `predictions`.
pub fn mse_loss(predictions: ArrayView2<f64>, targets: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let n = predictions.len() as f64;
    let diff = &predictions - &targets;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self::with_hyper(len, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.len() || grads.len() != self.len() {
            return Err(Error::contract(format!(
                "adam state sized {}, params {}, grads {}",
                self.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
