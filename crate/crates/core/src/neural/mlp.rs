use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::Activation;
use super::tape::{Grads, Tape, Var};
use crate::error::{check_len, Error, Result};
use crate::linalg;

/// Parameter initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Weights and biases `U(-1/√fan_in, 1/√fan_in)`.
    #[default]
    UniformKaiming,
    /// First layer `U(-1/fan_in, 1/fan_in)`, later layers
    /// `U(-√(6/fan_in)/w0, √(6/fan_in)/w0)`; biases as in `UniformKaiming`.
    SirenUniform,
}

impl Init {
    /// Half-width of the uniform range used for the weights of layer `index`.
    pub fn weight_bound(&self, index: usize, fan_in: usize, w0: f64) -> f64 {
        let fan_in = fan_in as f64;
        match self {
            Init::UniformKaiming => 1.0 / fan_in.sqrt(),
            Init::SirenUniform if index == 0 => 1.0 / fan_in,
            Init::SirenUniform => (6.0 / fan_in).sqrt() / w0,
        }
    }

    pub fn bias_bound(&self, fan_in: usize) -> f64 {
        1.0 / (fan_in as f64).sqrt()
    }
}

/// One affine map. `weight` is `in × out`, `bias` is `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

/// Feed-forward network: affine → activation for every hidden layer, affine output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    layers: Vec<Layer>,
}

fn validate_spec(dims: &[usize], activations: &[Activation]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidSpec(
            "need at least input and output dimensions".into(),
        ));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(Error::InvalidSpec(format!("layer {pos} has zero width")));
    }
    if activations.len() != dims.len() - 2 {
        return Err(Error::InvalidSpec(format!(
            "{} hidden layers but {} activations",
            dims.len() - 2,
            activations.len()
        )));
    }
    for a in activations {
        a.validate().map_err(Error::InvalidSpec)?;
    }
    Ok(())
}

impl Mlp {
    /// Randomly initialized network, deterministic in `seed`.
    pub fn new(dims: &[usize], activations: &[Activation], init: Init, seed: u64) -> Result<Self> {
        validate_spec(dims, activations)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w0 = activations
            .iter()
            .find_map(|a| match a {
                Activation::Sine { w0 } => Some(*w0),
                _ => None,
            })
            .unwrap_or(1.0);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let wb = init.weight_bound(i, fan_in, w0);
                let bb = init.bias_bound(fan_in);
                let weight =
                    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-wb..=wb));
                let bias =
                    Array2::from_shape_simple_fn((1, fan_out), || rng.random_range(-bb..=bb));
                Layer { weight, bias }
            })
            .collect();
        Ok(Self {
            layer_dims: dims.to_vec(),
            activations: activations.to_vec(),
            layers,
        })
    }

    /// All parameters zero: the network outputs exactly zero for every input.
    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        validate_spec(dims, activations)?;
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array2::zeros((1, w[1])),
            })
            .collect();
        Ok(Self {
            layer_dims: dims.to_vec(),
            activations: activations.to_vec(),
            layers,
        })
    }

    pub fn from_layers(activations: Vec<Activation>, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpec("no layers".into()));
        }
        let mut dims = vec![layers[0].weight.nrows()];
        for (i, l) in layers.iter().enumerate() {
            if l.weight.nrows() != *dims.last().unwrap() {
                return Err(Error::InvalidSpec(format!(
                    "layer {i} input width mismatch"
                )));
            }
            if l.bias.dim() != (1, l.weight.ncols()) {
                return Err(Error::InvalidSpec(format!("layer {i} bias shape mismatch")));
            }
            dims.push(l.weight.ncols());
        }
        validate_spec(&dims, &activations)?;
        Ok(Self {
            layer_dims: dims,
            activations,
            layers,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// `Σ (in·out + out)` over layers.
    pub fn param_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Estimated floating point operations of one forward pass: `2·Σ in·out`.
    pub fn flops(&self) -> u64 {
        self.layer_dims
            .windows(2)
            .map(|w| 2 * (w[0] * w[1]) as u64)
            .sum()
    }

    /// Parameters in order `W0, b0, W1, b1, …`.
    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params().iter().map(|p| p.dim()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.iter().all(|x| x.is_finite()))
    }

    /// Row-wise forward pass over an `n × in` batch.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_len("network input", self.input_dim(), x.ncols())?;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = linalg::matmul(&h, &layer.weight);
            z += &layer.bias;
            if let Some(act) = self.activations.get(i) {
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).unwrap();
        Ok(self.forward_batch(&x)?.row(0).to_vec())
    }

    /// Records the parameters on `tape`; `trainable = false` records them as constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.param(l.weight.clone()), tape.param(l.bias.clone()))
                } else {
                    (
                        tape.constant(l.weight.clone()),
                        tape.constant(l.bias.clone()),
                    )
                }
            })
            .collect();
        BoundMlp {
            layers,
            activations: self.activations.clone(),
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
        }
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp<'t> {
    layers: Vec<(Var<'t>, Var<'t>)>,
    activations: Vec<Activation>,
    input_dim: usize,
    output_dim: usize,
}

impl<'t> BoundMlp<'t> {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Forward pass over an `n × in` node.
    pub fn forward_matrix(&self, x: Var<'t>) -> Var<'t> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let mut z = h.matmul(w).add_row(b);
            if let Some(&act) = self.activations.get(i) {
                z = z.activate(act);
            }
            h = z;
        }
        h
    }

    pub fn params(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Gradients in the same order as [`Mlp::params`].
    pub fn grads(&self, grads: &Grads) -> Vec<Array2<f64>> {
        self.params().into_iter().map(|p| grads.wrt(p)).collect()
    }
}

/// A learned map from a flat input vector to a flat output vector.
///
/// Implemented for plain `f64` evaluation by [`Mlp`] and for batched tape
/// evaluation (one column per component) by [`BoundMlp`].
pub trait Approximator<T> {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, input: &[T]) -> Result<Vec<T>>;
    fn flops(&self) -> u64;
}

impl Approximator<f64> for Mlp {
    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }
    fn output_dim(&self) -> usize {
        Mlp::output_dim(self)
    }
    fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input)
    }
    fn flops(&self) -> u64 {
        Mlp::flops(self)
    }
}

impl<'t> Approximator<Var<'t>> for BoundMlp<'t> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn eval(&self, input: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        check_len("network input", self.input_dim, input.len())?;
        let x = Var::concat(input);
        Ok(self.forward_matrix(x).columns())
    }
    fn flops(&self) -> u64 {
        let mut dims = vec![self.input_dim];
        for (w, _) in &self.layers {
            dims.push(w.shape().1);
        }
        dims.windows(2).map(|w| 2 * (w[0] * w[1]) as u64).sum()
    }
}

/// Stacks equal-length rows into an `n × m` matrix.
pub fn stack_rows(rows: &[Vec<f64>]) -> Array2<f64> {
    let m = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((rows.len(), m));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&ndarray::ArrayView1::from(src.as_slice()));
    }
    out
}
