//! Parameter storage, the layers the networks are assembled from, and the
//! Adam optimizer.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Gradients, Graph, Var};
use crate::tensor::{Scalar, Shape, Tensor};

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

/// Batch-normalisation epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;

/// Whether normalisation layers use batch statistics (and update their
/// running estimates) or the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Named learnable arrays plus named non-learnable buffers (running
/// statistics). Layers refer to slots by index.
#[derive(Clone, Debug)]
pub struct ParamSet<T> {
    id: u64,
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    buffer_names: Vec<String>,
    buffers: Vec<Vec<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_SET_ID.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
            buffer_names: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Vec<T>) -> usize {
        self.buffer_names.push(name.into());
        self.buffers.push(value);
        self.buffers.len() - 1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.values[i]
    }

    pub fn buffer(&self, i: usize) -> &[T] {
        &self.buffers[i]
    }

    pub fn buffer_mut(&mut self, i: usize) -> &mut Vec<T> {
        &mut self.buffers[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Vec<T>)> {
        self.buffer_names.iter().map(String::as_str).zip(&self.buffers)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Binds slot `i` into `g`. Frozen bindings are constants.
    pub fn bind(&self, g: &mut Graph<T>, i: usize, trainable: bool) -> Var {
        g.bind_param(self.id, i, &self.values[i], trainable)
    }

    pub fn grads(&self, g: &Graph<T>, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        grads.for_set(g, self.id, self.values.len())
    }

    pub fn zero_all(&mut self) {
        for v in &mut self.values {
            v.data_mut().fill(T::zero());
        }
    }

    /// Copies values and buffers from a set with identical layout.
    pub fn copy_from(&mut self, other: &ParamSet<T>) {
        assert_eq!(self.names, other.names, "parameter layout mismatch");
        self.values.clone_from(&other.values);
        self.buffers.clone_from(&other.buffers);
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            id: NEXT_SET_ID.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            buffer_names: self.buffer_names.clone(),
            buffers: self
                .buffers
                .iter()
                .map(|b| b.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect())
                .collect(),
        }
    }

    pub(crate) fn set_value(&mut self, name: &str, value: Tensor<T>) -> bool {
        match self.names.iter().position(|n| n == name) {
            Some(i) if self.values[i].shape() == value.shape() => {
                self.values[i] = value;
                true
            }
            _ => false,
        }
    }

    pub(crate) fn set_buffer(&mut self, name: &str, value: Vec<T>) -> bool {
        match self.buffer_names.iter().position(|n| n == name) {
            Some(i) if self.buffers[i].len() == value.len() => {
                self.buffers[i] = value;
                true
            }
            _ => false,
        }
    }
}

/// Uniform fan-in scaled initialisation, bound `1/sqrt(fan_in)`.
pub fn fan_in_uniform<T: Scalar>(shape: Shape, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| T::from_f64_lossy(rng.random_range(-bound..bound))).collect(),
    )
}

/// Square-kernel convolution, stride 1, "same" zero padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: usize,
    pub bias: Option<usize>,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = params.add(
            format!("{name}.weight"),
            fan_in_uniform([out_channels, in_channels, kernel, kernel], fan_in, rng),
        );
        let bias = bias.then(|| {
            params.add(
                format!("{name}.bias"),
                fan_in_uniform([1, out_channels, 1, 1], fan_in, rng),
            )
        });
        Self {
            weight,
            bias,
            kernel,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamSet<T>, x: Var, trainable: bool) -> Var {
        let w = p.bind(g, self.weight, trainable);
        let b = self.bias.map(|b| p.bind(g, b, trainable));
        g.conv2d(x, w, b, self.kernel / 2)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
    pub channels: usize,
}

impl BatchNorm {
    /// Identity-initialised: scale 1, shift 0, running mean 0, running var 1.
    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: params.add(format!("{name}.gamma"), Tensor::full([1, channels, 1, 1], T::one())),
            beta: params.add(format!("{name}.beta"), Tensor::zeros([1, channels, 1, 1])),
            running_mean: params.add_buffer(format!("{name}.running_mean"), vec![T::zero(); channels]),
            running_var: params.add_buffer(format!("{name}.running_var"), vec![T::one(); channels]),
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &mut ParamSet<T>, x: Var, mode: Mode, trainable: bool) -> Var {
        let gamma = p.bind(g, self.gamma, trainable);
        let beta = p.bind(g, self.beta, trainable);
        let eps = T::from_f64_lossy(BN_EPS);
        match mode {
            Mode::Train => {
                let (y, mean, var) = g.batch_norm_train(x, gamma, beta, eps);
                let m = T::from_f64_lossy(BN_MOMENTUM);
                let one = T::one();
                for (r, v) in p.buffer_mut(self.running_mean).iter_mut().zip(mean) {
                    *r = (one - m) * *r + m * v;
                }
                for (r, v) in p.buffer_mut(self.running_var).iter_mut().zip(var) {
                    *r = (one - m) * *r + m * v;
                }
                y
            }
            Mode::Eval => {
                let mean = p.buffer(self.running_mean).to_vec();
                let var = p.buffer(self.running_var).to_vec();
                g.batch_norm_eval(x, gamma, beta, &mean, &var, eps)
            }
        }
    }
}

/// 3x3 convolution, batch normalisation, rectifier.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv::new(params, &format!("{name}.conv"), cin, cout, 3, true, rng),
            bn: BatchNorm::new(params, &format!("{name}.bn"), cout),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &mut ParamSet<T>, x: Var, mode: Mode, trainable: bool) -> Var {
        let y = self.conv.forward(g, p, x, trainable);
        let y = self.bn.forward(g, p, y, mode, trainable);
        g.relu(y)
    }
}

/// Two stacked [`ConvBnRelu`] blocks.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub first: ConvBnRelu,
    pub second: ConvBnRelu,
}

impl DoubleConv {
    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            first: ConvBnRelu::new(params, &format!("{name}.0"), cin, cout, rng),
            second: ConvBnRelu::new(params, &format!("{name}.1"), cout, cout, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &mut ParamSet<T>, x: Var, mode: Mode, trainable: bool) -> Var {
        let y = self.first.forward(g, p, x, mode, trainable);
        self.second.forward(g, p, y, mode, trainable)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 8e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Slots with no gradient are left untouched.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = |p: &ParamSet<T>| p.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates, one vector per slot.
    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// Restores a saved state; false when the layout differs.
    pub fn restore(&mut self, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> bool {
        let fits = |a: &[Vec<T>], b: &[Vec<T>]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len());
        if !fits(&self.m, &m) || !fits(&self.v, &v) {
            return false;
        }
        self.step = step;
        self.m = m;
        self.v = v;
        true
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Tensor<T>>]) {
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let lr = T::from_f64_lossy(c.learning_rate / bc1);
        let eps = T::from_f64_lossy(c.eps);
        let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
        let one = T::one();
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let w = params.get_mut(i).data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *w = *w - lr * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
    }
}
