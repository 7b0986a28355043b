//! Scalar-output feed-forward network with rectified hidden layers.
//!
//! Parameters live in one flat buffer, layer by layer, each layer storing a
//! row-major `[outputs × inputs]` weight matrix followed by its bias vector.
//! Gradients and optimizer moments share that layout, so the optimizer and
//! checkpointing operate on plain slices.
//!
//! The network is generic over [`Real`]: `f32` for training runs and `f64`
//! as the reference precision used by the numerical oracles.

mod adam;
mod checkpoint;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, sidecar_path, write_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};

pub trait Real:
    Float + Copy + Default + Debug + Send + Sync + AddAssign + MulAssign + std::iter::Sum + 'static
{
    const BYTES: usize;
    const NAME: &'static str;

    fn of(x: f64) -> Self;
    fn get(self) -> f64;
    fn put_le(self, out: &mut Vec<u8>);
    fn take_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const BYTES: usize = 4;
    const NAME: &'static str = "f32";

    fn of(x: f64) -> Self {
        x as f32
    }
    fn get(self) -> f64 {
        self as f64
    }
    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const BYTES: usize = 8;
    const NAME: &'static str = "f64";

    fn of(x: f64) -> Self {
        x
    }
    fn get(self) -> f64 {
        self
    }
    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSlot {
    inputs: usize,
    outputs: usize,
    weights: usize,
    biases: usize,
}

fn plan(dims: &[usize]) -> Result<Vec<LayerSlot>> {
    if dims.len() < 2 {
        return Err(Error::Config(format!(
            "network needs at least an input and an output dimension, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Config(format!("zero-width layer in {dims:?}")));
    }
    if dims[dims.len() - 1] != 1 {
        return Err(Error::Config(format!("output dimension must be 1, got {dims:?}")));
    }
    let mut offset = 0;
    Ok(dims
        .windows(2)
        .map(|w| {
            let slot = LayerSlot {
                inputs: w[0],
                outputs: w[1],
                weights: offset,
                biases: offset + w[0] * w[1],
            };
            offset += w[0] * w[1] + w[1];
            slot
        })
        .collect())
}

/// `Σ (inputs · outputs + outputs)` over consecutive layer pairs.
pub fn parameter_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<R: Real> {
    dims: Vec<usize>,
    params: Vec<R>,
    layers: Vec<LayerSlot>,
}

/// A parameter-shaped buffer: gradients and update directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<R: Real> {
    pub values: Vec<R>,
}

impl<R: Real> Gradient<R> {
    pub fn zeros(len: usize) -> Self {
        Gradient {
            values: vec![R::zero(); len],
        }
    }

    pub fn zeros_like(net: &Network<R>) -> Self {
        Self::zeros(net.num_params())
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = R::zero());
    }

    pub fn scale(&mut self, by: R) {
        self.values.iter_mut().for_each(|v| *v *= by);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-call activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Workspace<R: Real> {
    activations: Vec<Vec<R>>,
    delta: Vec<R>,
    delta_next: Vec<R>,
}

impl<R: Real> Workspace<R> {
    pub fn new(dims: &[usize]) -> Self {
        let widest = dims.iter().copied().max().unwrap_or(0);
        Workspace {
            activations: dims.iter().map(|&d| vec![R::zero(); d]).collect(),
            delta: vec![R::zero(); widest],
            delta_next: vec![R::zero(); widest],
        }
    }
}

#[inline]
fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut acc = [R::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = R::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<R: Real>(alpha: R, x: &[R], y: &mut [R]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl<R: Real> Network<R> {
    /// Fan-in scaled uniform initialization, `U(-1/√fan_in, 1/√fan_in)` for
    /// weights and biases, deterministic in `seed`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        let layers = plan(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(parameter_count(dims));
        for l in &layers {
            let bound = 1.0 / (l.inputs as f64).sqrt();
            for _ in 0..l.inputs * l.outputs + l.outputs {
                params.push(R::of(rng.random_range(-bound..bound)));
            }
        }
        Ok(Network {
            dims: dims.to_vec(),
            params,
            layers,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let layers = plan(dims)?;
        Ok(Network {
            dims: dims.to_vec(),
            params: vec![R::zero(); parameter_count(dims)],
            layers,
        })
    }

    pub fn from_params(dims: &[usize], params: Vec<R>) -> Result<Self> {
        let layers = plan(dims)?;
        if params.len() != parameter_count(dims) {
            return Err(Error::WidthMismatch {
                expected: parameter_count(dims),
                found: params.len(),
            });
        }
        Ok(Network {
            dims: dims.to_vec(),
            params,
            layers,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[R] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [R] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn workspace(&self) -> Workspace<R> {
        Workspace::new(&self.dims)
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        let mut ws = self.workspace();
        self.forward_with(input, &mut ws).map(R::get)
    }

    /// Forward pass that keeps activations in `ws` for a following
    /// [`Network::accumulate_gradient`].
    pub fn forward_with(&self, input: &[f64], ws: &mut Workspace<R>) -> Result<R> {
        if input.len() != self.dims[0] {
            return Err(Error::WidthMismatch {
                expected: self.dims[0],
                found: input.len(),
            });
        }
        for (a, &x) in ws.activations[0].iter_mut().zip(input) {
            *a = R::of(x);
        }
        let last = self.layers.len() - 1;
        for (l, slot) in self.layers.iter().enumerate() {
            let (before, after) = ws.activations.split_at_mut(l + 1);
            let inp = &before[l];
            let out = &mut after[0];
            let w = &self.params[slot.weights..slot.biases];
            let b = &self.params[slot.biases..slot.biases + slot.outputs];
            for o in 0..slot.outputs {
                let z = b[o] + dot(&w[o * slot.inputs..(o + 1) * slot.inputs], inp);
                out[o] = if l < last && z <= R::zero() { R::zero() } else { z };
            }
        }
        Ok(ws.activations[self.layers.len()][0])
    }

    /// Adds `scale · ∂f/∂w` to `grad`, using the activations from the last
    /// [`Network::forward_with`] on `ws`. Rectifiers contribute a zero
    /// subgradient at a zero pre-activation.
    pub fn accumulate_gradient(&self, ws: &mut Workspace<R>, scale: R, grad: &mut Gradient<R>) {
        debug_assert_eq!(grad.len(), self.params.len());
        ws.delta[0] = scale;
        for (l, slot) in self.layers.iter().enumerate().rev() {
            let inp = &ws.activations[l];
            {
                let g = &mut grad.values;
                for o in 0..slot.outputs {
                    let d = ws.delta[o];
                    if d == R::zero() {
                        continue;
                    }
                    let row = slot.weights + o * slot.inputs;
                    axpy(d, inp, &mut g[row..row + slot.inputs]);
                    g[slot.biases + o] += d;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[slot.weights..slot.biases];
            let next = &mut ws.delta_next[..slot.inputs];
            next.iter_mut().for_each(|v| *v = R::zero());
            for o in 0..slot.outputs {
                let d = ws.delta[o];
                if d != R::zero() {
                    axpy(d, &w[o * slot.inputs..(o + 1) * slot.inputs], next);
                }
            }
            // the layer below is rectified: pass gradient only where it fired
            for (n, &a) in next.iter_mut().zip(inp.iter()) {
                if a <= R::zero() {
                    *n = R::zero();
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_next);
        }
    }

    /// Exact gradient of the scalar output with respect to every parameter.
    pub fn backward_grad(&self, input: &[f64]) -> Result<Gradient<R>> {
        let mut ws = self.workspace();
        self.forward_with(input, &mut ws)?;
        let mut grad = Gradient::zeros_like(self);
        self.accumulate_gradient(&mut ws, R::one(), &mut grad);
        Ok(grad)
    }
}
