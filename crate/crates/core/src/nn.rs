//! Parameter storage and the small layers shared by the networks.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Named, ordered parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Put every tensor on `tape`; trainable tensors become gradient leaves.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Binding {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { tape.variable(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Binding { vars }
    }
}

/// Tape handles for a bound [`ParamSet`], in the same order.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    #[inline]
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients for every parameter, zero-filled where none flowed.
    pub fn grads(&self, params: &ParamSet, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().zip(&params.tensors).map(|(&v, t)| grads.tensor(v, t)).collect()
    }
}

/// Square-kernel convolution with bias.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Registers a convolution with `N(0, 0.02²)` weights and zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let weight = params.add(alloc::format!("{name}.weight"), gaussian(rng, &[cout, cin, kernel, kernel], 0.02));
        let bias = params.add(alloc::format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { weight, bias, cin, cout, kernel, stride, pad }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Var {
        tape.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.stride, self.pad)
    }
}

/// Instance normalization with optional learnable per-channel affine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceNorm {
    pub affine: Option<(usize, usize)>,
    pub eps: f64,
}

impl InstanceNorm {
    pub const EPS: f64 = 1e-5;

    pub fn plain() -> Self {
        Self { affine: None, eps: Self::EPS }
    }

    pub fn affine(params: &mut ParamSet, name: &str, channels: usize) -> Self {
        let scale = params.add(alloc::format!("{name}.scale"), Tensor::ones(&[channels]));
        let shift = params.add(alloc::format!("{name}.shift"), Tensor::zeros(&[channels]));
        Self { affine: Some((scale, shift)), eps: Self::EPS }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Var {
        let y = tape.instance_norm(x, self.eps);
        match self.affine {
            Some((s, t)) => tape.channel_affine(y, p.var(s), p.var(t)),
            None => y,
        }
    }
}

pub(crate) fn gaussian<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}
