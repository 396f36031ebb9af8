//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! An [`Mlp`] does not own its weights. It records where its segments live
//! inside a [`ParamVector`], so online and target copies of a network share
//! one descriptor type and one flat buffer.
//!
//! Layer `l` computes `y = act(W x + b)` with `W` stored row-major as
//! `(out_dim, in_dim)`. Hidden layers use `activation`, the last layer uses
//! `output_activation`, optionally followed by a parameter-free layer norm.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, Matrix};
use super::param::{Layout, ParamVector};
use crate::error::{check_dim, Error, Result};

const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub output_activation: Activation,
    pub output_layernorm: bool,
}

impl MlpSpec {
    /// ELU hidden layers and a linear output.
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            activation: Activation::Elu,
            output_activation: Activation::Identity,
            output_layernorm: false,
        }
    }

    pub fn with_output_activation(mut self, act: Activation) -> Self {
        self.output_activation = act;
        self
    }

    pub fn with_activation(mut self, act: Activation) -> Self {
        self.activation = act;
        self
    }

    pub fn with_layernorm(mut self) -> Self {
        self.output_layernorm = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "MLP dimensions must be >= 1, got {} -> {:?} -> {}",
                self.input_dim, self.hidden_dims, self.output_dim
            )));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone)]
struct Dense {
    in_dim: usize,
    out_dim: usize,
    weight: usize,
    bias: usize,
    act: Activation,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    name: String,
    spec: MlpSpec,
    layers: Vec<Dense>,
}

/// Intermediate values from [`Mlp::forward_cached`] needed by the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each dense layer.
    inputs: Vec<Matrix>,
    /// Pre-activations of each dense layer.
    pre: Vec<Matrix>,
    /// Post-activations of each dense layer.
    post: Vec<Matrix>,
    /// Layer-norm output and per-row inverse std, when enabled.
    norm: Option<(Matrix, Vec<f64>)>,
}

impl Mlp {
    /// Appends this network's segments (`{name}.{l}.weight`, `{name}.{l}.bias`)
    /// to `layout` and returns a descriptor pointing at them.
    pub fn register(name: &str, spec: MlpSpec, layout: &mut Layout) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let last = dims.len() - 1;
        let mut layers = Vec::with_capacity(dims.len());
        for (l, (i, o)) in dims.into_iter().enumerate() {
            let weight = layout.push(format!("{name}.{l}.weight"), &[o, i])?;
            let bias = layout.push(format!("{name}.{l}.bias"), &[o])?;
            let act = if l == last {
                spec.output_activation
            } else {
                spec.activation
            };
            layers.push(Dense {
                in_dim: i,
                out_dim: o,
                weight,
                bias,
                act,
            });
        }
        Ok(Self {
            name: name.to_owned(),
            spec,
            layers,
        })
    }

    /// A network described by `spec` occupying a layout of its own.
    pub fn standalone(spec: MlpSpec) -> Result<(Self, Arc<Layout>)> {
        let mut layout = Layout::new();
        let mlp = Self::register("mlp", spec, &mut layout)?;
        Ok((mlp, Arc::new(layout)))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Group prefix selecting this network's segments.
    pub fn group(&self) -> String {
        format!("{}.", self.name)
    }

    /// Verifies that `params` carries this network's segments with the
    /// expected shapes at the expected offsets.
    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        for (l, d) in self.layers.iter().enumerate() {
            for (kind, offset, shape) in [
                ("weight", d.weight, vec![d.out_dim, d.in_dim]),
                ("bias", d.bias, vec![d.out_dim]),
            ] {
                let name = format!("{}.{l}.{kind}", self.name);
                let seg = params.layout().find(&name).ok_or_else(|| Error::DimensionMismatch {
                    segment: name.clone(),
                    expected: shape.iter().product(),
                    actual: 0,
                })?;
                if seg.shape != shape || seg.offset != offset {
                    return Err(Error::DimensionMismatch {
                        segment: name,
                        expected: shape.iter().product(),
                        actual: seg.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init_uniform<R: Rng + ?Sized>(&self, params: &mut ParamVector, rng: &mut R) {
        let values = params.values_mut();
        for d in &self.layers {
            let bound = 1.0 / (d.in_dim as f64).sqrt();
            for v in &mut values[d.weight..d.weight + d.in_dim * d.out_dim] {
                *v = rng.random_range(-bound..=bound);
            }
            for v in &mut values[d.bias..d.bias + d.out_dim] {
                *v = rng.random_range(-bound..=bound);
            }
        }
    }

    fn check_input(&self, params: &ParamVector, cols: usize) -> Result<()> {
        check_dim(&format!("{}.0.weight", self.name), self.spec.input_dim, cols)?;
        let last = self.layers.last().expect("at least one layer");
        if params.len() < last.bias + last.out_dim {
            return Err(Error::DimensionMismatch {
                segment: format!("{}.{}.bias", self.name, self.layers.len() - 1),
                expected: last.bias + last.out_dim,
                actual: params.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(params, &Matrix::row_vector(input))?.into_vec())
    }

    pub fn forward_batch(&self, params: &ParamVector, input: &Matrix) -> Result<Matrix> {
        self.check_input(params, input.cols())?;
        let p = params.values();
        let mut x = dense(p, &self.layers[0], input);
        for d in &self.layers[1..] {
            x = dense(p, d, &x);
        }
        if self.spec.output_layernorm {
            x = layernorm(&x).0;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, params: &ParamVector, input: &Matrix) -> Result<(Matrix, MlpCache)> {
        self.check_input(params, input.cols())?;
        let p = params.values();
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
            norm: None,
        };
        let mut x = input.clone();
        for d in &self.layers {
            let pre = affine(p, d, &x);
            let mut post = pre.clone();
            for v in post.as_mut_slice() {
                *v = d.act.apply(*v);
            }
            cache.inputs.push(std::mem::replace(&mut x, post.clone()));
            cache.pre.push(pre);
            cache.post.push(post);
        }
        if self.spec.output_layernorm {
            let (y, inv_std) = layernorm(&x);
            cache.norm = Some((y.clone(), inv_std));
            x = y;
        }
        Ok((x, cache))
    }

    /// Back-propagates `out_grad` through the cached pass. Parameter
    /// gradients are accumulated into `grad` when given; the gradient with
    /// respect to the network input is returned.
    pub fn backward(
        &self,
        params: &ParamVector,
        cache: &MlpCache,
        out_grad: &Matrix,
        mut grad: Option<&mut ParamVector>,
    ) -> Result<Matrix> {
        check_dim(
            &format!("{} output gradient", self.name),
            self.spec.output_dim,
            out_grad.cols(),
        )?;
        let rows = out_grad.rows();
        check_dim(&format!("{} batch", self.name), cache.inputs[0].rows(), rows)?;
        let p = params.values();

        let mut g = match &cache.norm {
            Some((y, inv_std)) => layernorm_backward(y, inv_std, out_grad),
            None => out_grad.clone(),
        };

        for (l, d) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[l];
            let post = &cache.post[l];
            let input = &cache.inputs[l];
            // dL/d(pre-activation)
            for (i, gv) in g.as_mut_slice().iter_mut().enumerate() {
                let (x, y) = (pre.as_slice()[i], post.as_slice()[i]);
                *gv *= d.act.derivative(x, y);
            }
            if let Some(gr) = grad.as_deref_mut() {
                let gv = gr.values_mut();
                for r in 0..rows {
                    let gr_row = g.row(r);
                    let in_row = input.row(r);
                    for (o, &go) in gr_row.iter().enumerate() {
                        if go != 0.0 {
                            let w = d.weight + o * d.in_dim;
                            axpy(go, in_row, &mut gv[w..w + d.in_dim]);
                            gv[d.bias + o] += go;
                        }
                    }
                }
            }
            let mut next = Matrix::zeros(rows, d.in_dim);
            for r in 0..rows {
                let gr_row = g.row(r);
                let out = next.row_mut(r);
                for (o, &go) in gr_row.iter().enumerate() {
                    if go != 0.0 {
                        let w = d.weight + o * d.in_dim;
                        axpy(go, &p[w..w + d.in_dim], out);
                    }
                }
            }
            g = next;
        }
        Ok(g)
    }
}

fn affine(p: &[f64], d: &Dense, x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), d.out_dim);
    let bias = &p[d.bias..d.bias + d.out_dim];
    for r in 0..x.rows() {
        let xr = x.row(r);
        let orow = out.row_mut(r);
        for o in 0..d.out_dim {
            let w = d.weight + o * d.in_dim;
            orow[o] = bias[o] + dot(&p[w..w + d.in_dim], xr);
        }
    }
    out
}

fn dense(p: &[f64], d: &Dense, x: &Matrix) -> Matrix {
    let mut out = affine(p, d, x);
    if d.act != Activation::Identity {
        for v in out.as_mut_slice() {
            *v = d.act.apply(*v);
        }
    }
    out
}

fn layernorm(x: &Matrix) -> (Matrix, Vec<f64>) {
    let n = x.cols() as f64;
    let mut y = x.clone();
    let mut inv_stds = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = y.row_mut(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + LAYERNORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv_std;
        }
        inv_stds.push(inv_std);
    }
    (y, inv_stds)
}

fn layernorm_backward(y: &Matrix, inv_std: &[f64], dy: &Matrix) -> Matrix {
    let n = y.cols() as f64;
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, dyr) = (y.row(r), dy.row(r));
        let mean_dy = dyr.iter().sum::<f64>() / n;
        let mean_dy_y = dot(dyr, yr) / n;
        for (j, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = inv_std[r] * (dyr[j] - mean_dy - yr[j] * mean_dy_y);
        }
    }
    dx
}

/// Evaluates a standalone network whose parameters carry exactly the
/// segments `mlp.{l}.weight` / `mlp.{l}.bias` described by `spec`.
pub fn mlp_forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    let (mlp, _) = Mlp::standalone(spec.clone())?;
    mlp.check_params(params)?;
    mlp.forward(params, input)
}

/// Gradients of `<output, output_grad>` with respect to the parameters and the input.
pub fn mlp_backward(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
    output_grad: &[f64],
) -> Result<(ParamVector, Vec<f64>)> {
    let (mlp, _) = Mlp::standalone(spec.clone())?;
    mlp.check_params(params)?;
    check_dim("mlp output gradient", spec.output_dim, output_grad.len())?;
    let (_, cache) = mlp.forward_cached(params, &Matrix::row_vector(input))?;
    let mut grad = params.zeros_like();
    let input_grad = mlp.backward(params, &cache, &Matrix::row_vector(output_grad), Some(&mut grad))?;
    Ok((grad, input_grad.into_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn standalone(spec: &MlpSpec) -> (Mlp, ParamVector) {
        let (mlp, layout) = Mlp::standalone(spec.clone()).unwrap();
        (mlp, ParamVector::zeros(layout))
    }

    #[test]
    fn zero_weights_give_activation_of_bias_composition() {
        let spec = MlpSpec::new(3, &[2], 2).with_output_activation(Activation::Tanh);
        let (_, mut p) = standalone(&spec);
        p.segment_mut("mlp.0.bias").unwrap().copy_from_slice(&[0.5, -2.0]);
        p.segment_mut("mlp.1.bias").unwrap().copy_from_slice(&[0.25, -0.75]);
        let y = mlp_forward(&spec, &p, &[9.0, -4.0, 1.0]).unwrap();
        // Hidden layer output is discarded by zero weights; output = tanh(b1).
        assert_eq!(y, vec![0.25f64.tanh(), (-0.75f64).tanh()]);
    }

    #[test]
    fn identity_network_passes_input_through() {
        let spec = MlpSpec::new(3, &[], 3).with_output_activation(Activation::Identity);
        let (_, mut p) = standalone(&spec);
        let w = p.segment_mut("mlp.0.weight").unwrap();
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.7, 2.5];
        assert_eq!(mlp_forward(&spec, &p, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn hand_evaluated_elu_network() {
        // 2 -> 2 (ELU) -> 1 (identity)
        let spec = MlpSpec::new(2, &[2], 1);
        let (_, mut p) = standalone(&spec);
        p.segment_mut("mlp.0.weight").unwrap().copy_from_slice(&[0.5, 0.25, -1.0, 2.0]);
        p.segment_mut("mlp.0.bias").unwrap().copy_from_slice(&[0.1, 0.2]);
        p.segment_mut("mlp.1.weight").unwrap().copy_from_slice(&[1.5, -0.5]);
        p.segment_mut("mlp.1.bias").unwrap().copy_from_slice(&[0.3]);
        // h0 = 0.5 - 0.25 + 0.1 = 0.35 -> ELU 0.35
        // h1 = -1 - 2 + 0.2 = -2.8 -> ELU e^-2.8 - 1
        let h1 = (-2.8f64).exp() - 1.0;
        let expected = 1.5 * 0.35 - 0.5 * h1 + 0.3;
        let y = mlp_forward(&spec, &p, &[1.0, -1.0]).unwrap();
        assert!((y[0] - expected).abs() < 1e-15, "{} vs {expected}", y[0]);
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let spec = MlpSpec::new(3, &[], 2);
        let (_, mut p) = standalone(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Mlp::standalone(spec.clone()).unwrap().0.init_uniform(&mut p, &mut rng);
        let x = [1.0, -2.0, 0.5];
        let g = [0.7, -1.1];
        let (grad, _) = mlp_backward(&spec, &p, &x, &g).unwrap();
        let w = grad.segment("mlp.0.weight").unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(w[o * 3 + i], g[o] * x[i]);
            }
        }
        assert_eq!(grad.segment("mlp.0.bias").unwrap(), &g);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let spec = MlpSpec::new(3, &[4, 4], 2).with_layernorm();
        let (mlp, mut p) = standalone(&spec);
        mlp.init_uniform(&mut p, &mut ChaCha8Rng::seed_from_u64(3));
        let (grad, dx) = mlp_backward(&spec, &p, &[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(grad.values().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layernorm_output_is_standardised() {
        let spec = MlpSpec::new(2, &[8], 16).with_layernorm();
        let (mlp, mut p) = standalone(&spec);
        mlp.init_uniform(&mut p, &mut ChaCha8Rng::seed_from_u64(9));
        let y = mlp.forward(&p, &[0.4, -0.9]).unwrap();
        let mean = y.iter().sum::<f64>() / 16.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn wrong_input_dim_names_first_segment() {
        let spec = MlpSpec::new(3, &[4], 1);
        let (_, p) = standalone(&spec);
        match mlp_forward(&spec, &p, &[1.0, 2.0]) {
            Err(Error::DimensionMismatch { segment, expected, actual }) => {
                assert_eq!(segment, "mlp.0.weight");
                assert_eq!((expected, actual), (3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_layout_names_offending_segment() {
        let spec = MlpSpec::new(3, &[4], 1);
        let other = MlpSpec::new(3, &[5], 1);
        let (_, p) = standalone(&other);
        match mlp_forward(&spec, &p, &[1.0, 2.0, 3.0]) {
            Err(Error::DimensionMismatch { segment, .. }) => assert_eq!(segment, "mlp.0.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
