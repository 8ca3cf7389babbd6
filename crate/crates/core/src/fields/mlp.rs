//! Batched multilayer perceptron with hand-written reverse mode.
//!
//! Activations are stored row-major, one row per sample. Each layer computes
//! `z = W h + b`, `a = act(z)` and outputs `h + a` when residual, else `a`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Silu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(T::zero()),
            Activation::Silu => z * sigmoid(z),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Silu => {
                let s = sigmoid(z);
                s * (T::one() + z * (T::one() - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (T::one() - s)
            }
        }
    }

    /// Zero second derivative almost everywhere.
    pub fn is_piecewise_linear(self) -> bool {
        matches!(self, Activation::Identity | Activation::Relu)
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Silu => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub(crate) fn from_code(c: u32) -> Option<Self> {
        Some(match c {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Silu,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
    pub residual: bool,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation, residual: bool) -> Self {
        assert!(!residual || in_dim == out_dim, "residual layer must be square");
        Linear {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
            activation,
            residual,
        }
    }

    #[inline]
    pub fn w(&self, row: usize, col: usize) -> T {
        self.weight[row * self.in_dim + col]
    }

    /// `out <- rows x out_dim` pre-activations of `input`.
    fn pre_activation(&self, input: &[T], rows: usize, out: &mut [T]) {
        for row in out.chunks_exact_mut(self.out_dim) {
            row.copy_from_slice(&self.bias);
        }
        T::gemm(
            rows,
            self.in_dim,
            self.out_dim,
            T::one(),
            input,
            self.in_dim as isize,
            1,
            &self.weight,
            1,
            self.in_dim as isize,
            T::one(),
            out,
            self.out_dim as isize,
            1,
        );
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

/// Values retained by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    pub rows: usize,
    /// Input of each layer (`inputs[0]` is the network input).
    pub inputs: Vec<Vec<T>>,
    /// Pre-activation of each layer.
    pub pre: Vec<Vec<T>>,
    pub output: Vec<T>,
}

/// Result of [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct MlpBackward<T> {
    pub input_grad: Vec<T>,
    /// Gradient w.r.t. each layer's pre-activation, when requested.
    pub pre_grads: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.in_dim, l.out_dim, l.activation, l.residual))
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }

    fn check_input(&self, input: &[T], rows: usize) -> Result<()> {
        if input.len() != rows * self.input_dim() {
            return Err(invalid(format!(
                "mlp input has {} values, expected {} rows x {}",
                input.len(),
                rows,
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T], rows: usize) -> Result<MlpCache<T>> {
        self.check_input(input, rows)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = input.to_vec();
        for layer in &self.layers {
            let mut z = vec![T::zero(); rows * layer.out_dim];
            layer.pre_activation(&h, rows, &mut z);
            let out = activate(layer, &h, &z);
            inputs.push(h);
            pre.push(z);
            h = out;
        }
        Ok(MlpCache { rows, inputs, pre, output: h })
    }

    /// Forward pass without keeping intermediates.
    pub fn infer(&self, input: &[T], rows: usize) -> Result<Vec<T>> {
        self.check_input(input, rows)?;
        let mut h = input.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers {
            z.clear();
            z.resize(rows * layer.out_dim, T::zero());
            layer.pre_activation(&h, rows, &mut z);
            h = activate(layer, &h, &z);
        }
        Ok(h)
    }

    /// Reverse pass: accumulates parameter gradients into `grads` and returns
    /// the gradient with respect to the network input.
    pub fn backward(
        &self,
        cache: &MlpCache<T>,
        output_grad: &[T],
        grads: &mut Mlp<T>,
        keep_pre_grads: bool,
    ) -> Result<MlpBackward<T>> {
        let rows = cache.rows;
        if output_grad.len() != rows * self.output_dim() {
            return Err(invalid(format!(
                "output gradient has {} values, expected {}",
                output_grad.len(),
                rows * self.output_dim()
            )));
        }
        if cache.pre.len() != self.layers.len() || !same_shape(self, grads) {
            return Err(invalid("cache or gradient buffer does not match network"));
        }
        let mut pre_grads = keep_pre_grads.then(|| vec![Vec::new(); self.layers.len()]);
        let mut dh = output_grad.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[k];
            let h_in = &cache.inputs[k];
            let dz: Vec<T> = dh
                .iter()
                .zip(z)
                .map(|(g, z)| *g * layer.activation.derivative(*z))
                .collect();
            let g = &mut grads.layers[k];
            // dW += dz^T h_in
            T::gemm(
                layer.out_dim,
                rows,
                layer.in_dim,
                T::one(),
                &dz,
                1,
                layer.out_dim as isize,
                h_in,
                layer.in_dim as isize,
                1,
                T::one(),
                &mut g.weight,
                layer.in_dim as isize,
                1,
            );
            for row in dz.chunks_exact(layer.out_dim) {
                for (b, d) in g.bias.iter_mut().zip(row) {
                    *b += *d;
                }
            }
            // dh_in = dz W (+ dh through the skip connection)
            let mut dh_in = if layer.residual { dh } else { vec![T::zero(); rows * layer.in_dim] };
            T::gemm(
                rows,
                layer.out_dim,
                layer.in_dim,
                T::one(),
                &dz,
                layer.out_dim as isize,
                1,
                &layer.weight,
                layer.in_dim as isize,
                1,
                T::one(),
                &mut dh_in,
                layer.in_dim as isize,
                1,
            );
            if let Some(pg) = pre_grads.as_mut() {
                pg[k] = dz;
            }
            dh = dh_in;
        }
        Ok(MlpBackward { input_grad: dh, pre_grads })
    }

    /// Parameter gradient of `sum_r <tangent_r, d out_r / d in_r>` style
    /// objectives for networks with piecewise-linear activations.
    ///
    /// `pre_grads` are the pre-activation gradients of a unit-seeded
    /// [`Mlp::backward`] on a scalar-output network; `input_tangent` is the
    /// objective's gradient with respect to that input gradient (`rows x in`).
    /// Second-derivative terms vanish for ReLU/identity, so only the weight
    /// matrices receive contributions.
    pub fn input_gradient_param_grads(
        &self,
        cache: &MlpCache<T>,
        pre_grads: &[Vec<T>],
        input_tangent: &[T],
        grads: &mut Mlp<T>,
    ) -> Result<()> {
        if self.layers.iter().any(|l| !l.activation.is_piecewise_linear() || l.residual) {
            return Err(invalid("double backprop requires plain ReLU/identity layers"));
        }
        if self.output_dim() != 1 || pre_grads.len() != self.layers.len() {
            return Err(invalid("double backprop requires a scalar network and its unit adjoints"));
        }
        let rows = cache.rows;
        if input_tangent.len() != rows * self.input_dim() {
            return Err(invalid("input tangent shape mismatch"));
        }
        let mut tangent = input_tangent.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            // dW_k += dz_k^T t_{k-1}
            T::gemm(
                layer.out_dim,
                rows,
                layer.in_dim,
                T::one(),
                &pre_grads[k],
                1,
                layer.out_dim as isize,
                &tangent,
                layer.in_dim as isize,
                1,
                T::one(),
                &mut grads.layers[k].weight,
                layer.in_dim as isize,
                1,
            );
            if k == last {
                break;
            }
            // t_k = D_k (t_{k-1} W_k^T)
            let mut next = vec![T::zero(); rows * layer.out_dim];
            T::gemm(
                rows,
                layer.in_dim,
                layer.out_dim,
                T::one(),
                &tangent,
                layer.in_dim as isize,
                1,
                &layer.weight,
                1,
                layer.in_dim as isize,
                T::zero(),
                &mut next,
                layer.out_dim as isize,
                1,
            );
            for (t, z) in next.iter_mut().zip(&cache.pre[k]) {
                *t *= layer.activation.derivative(*z);
            }
            tangent = next;
        }
        Ok(())
    }
}

fn activate<T: Scalar>(layer: &Linear<T>, h: &[T], z: &[T]) -> Vec<T> {
    let act = layer.activation;
    if layer.residual {
        h.iter().zip(z).map(|(h, z)| *h + act.apply(*z)).collect()
    } else {
        z.iter().map(|z| act.apply(*z)).collect()
    }
}

fn same_shape<T>(a: &Mlp<T>, b: &Mlp<T>) -> bool {
    a.layers.len() == b.layers.len()
        && a
            .layers
            .iter()
            .zip(&b.layers)
            .all(|(x, y)| x.in_dim == y.in_dim && x.out_dim == y.out_dim)
}
