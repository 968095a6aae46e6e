//! Feed-forward network with hand-derived reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{sigmoid, Matrix, Vector};
use crate::error::{ensure_len, shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y = f(x)`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Dense layer `y = f(W x + b)`, with `W` stored as `output_dim × input_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vector, activation: Activation) -> Result<Self> {
        ensure_len("layer bias", bias.len(), weights.rows())?;
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Layer>", into = "Vec<Layer>")]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl TryFrom<Vec<Layer>> for MlpParams {
    type Error = Error;

    fn try_from(layers: Vec<Layer>) -> Result<Self> {
        Self::new(layers)
    }
}

impl From<MlpParams> for Vec<Layer> {
    fn from(p: MlpParams) -> Self {
        p.layers
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(shape_err("network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(shape_err(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for layer in &layers {
            ensure_len("layer bias", layer.bias.len(), layer.output_dim())?;
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights and zero biases. `zero_last` zeroes the final
    /// layer so the network starts as the zero map.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        zero_last: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(shape_err(format!(
                "{} dims need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        let count = activations.len();
        let mut layers = Vec::with_capacity(count);
        for (k, (w, &act)) in dims.windows(2).zip(activations).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            if fan_in == 0 || fan_out == 0 {
                return Err(shape_err("layer dims must be positive"));
            }
            let data = if zero_last && k + 1 == count {
                vec![0.0; fan_in * fan_out]
            } else {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect()
            };
            layers.push(Layer::new(
                Matrix::new(fan_out, fan_in, data)?,
                Vector::zeros(fan_out),
                act,
            )?);
        }
        Self::new(layers)
    }

    /// Network with the same architecture as `self` and every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weights: Matrix::zeros(l.output_dim(), l.input_dim()),
                bias: Vector::zeros(l.output_dim()),
                activation: l.activation,
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure_len("flat parameters", flat.len(), self.param_count())?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        let mut rest = flat;
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            l.weights.data_mut().copy_from_slice(&rest[..nw]);
            rest = &rest[nw..];
            let nb = l.bias.len();
            l.bias = Vector::new(rest[..nb].to_vec())?;
            rest = &rest[nb..];
        }
        Ok(())
    }

    /// Applies `f(param, index_within_flat)` in `to_flat` order.
    pub(crate) fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64, usize)) {
        let mut idx = 0;
        for l in &mut self.layers {
            for w in l.weights.data_mut() {
                f(w, idx);
                idx += 1;
            }
            for b in l.bias.as_mut_slice() {
                f(b, idx);
                idx += 1;
            }
        }
    }
}

/// Per-layer activations recorded by [`mlp_forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl Tape {
    pub fn layer_count(&self) -> usize {
        self.inputs.len()
    }
}

/// Gradients with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl MlpGradients {
    pub fn zeros(params: &MlpParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| LayerGradient {
                weights: vec![0.0; l.weights.data().len()],
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        Self { layers }
    }

    pub fn matches(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, l)| {
                g.weights.len() == l.weights.data().len() && g.bias.len() == l.bias.len()
            })
    }

    pub fn add_assign(&mut self, other: &MlpGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights.iter_mut().for_each(|x| *x *= factor);
            g.bias.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(&g.weights);
            out.extend_from_slice(&g.bias);
        }
        out
    }

    pub(crate) fn flat_iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied())
    }
}

pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vector, Tape)> {
    ensure_len("network input", input.len(), params.input_dim())?;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut outputs = Vec::with_capacity(params.layers.len());
    let mut current = input.to_vec();
    for layer in &params.layers {
        let mut pre = layer.weights.matvec_unchecked(&current);
        for (p, b) in pre.iter_mut().zip(layer.bias.iter()) {
            *p = layer.activation.apply(*p + b);
        }
        inputs.push(std::mem::replace(&mut current, pre.clone()));
        outputs.push(pre);
    }
    let out = Vector::new(current)?;
    Ok((out, Tape { inputs, outputs }))
}

/// Reverse pass: returns parameter gradients and the gradient with respect
/// to the network input.
pub fn mlp_backward(
    params: &MlpParams,
    tape: &Tape,
    output_gradient: &[f64],
) -> Result<(MlpGradients, Vector)> {
    if tape.layer_count() != params.layers.len()
        || tape
            .inputs
            .iter()
            .zip(&tape.outputs)
            .zip(&params.layers)
            .any(|((i, o), l)| i.len() != l.input_dim() || o.len() != l.output_dim())
    {
        return Err(shape_err("tape does not match network architecture"));
    }
    ensure_len("output gradient", output_gradient.len(), params.output_dim())?;

    let mut grads = Vec::with_capacity(params.layers.len());
    let mut upstream = output_gradient.to_vec();
    for ((layer, input), output) in params
        .layers
        .iter()
        .zip(&tape.inputs)
        .zip(&tape.outputs)
        .rev()
    {
        let delta: Vec<f64> = upstream
            .iter()
            .zip(output)
            .map(|(g, &y)| g * layer.activation.derivative_from_output(y))
            .collect();
        let cols = layer.input_dim();
        let mut weights = vec![0.0; delta.len() * cols];
        for (row, &d) in weights.chunks_exact_mut(cols).zip(&delta) {
            if d == 0.0 {
                continue;
            }
            for (w, &x) in row.iter_mut().zip(input) {
                *w = d * x;
            }
        }
        upstream = layer.weights.matvec_transposed_unchecked(&delta);
        grads.push(LayerGradient {
            weights,
            bias: delta,
        });
    }
    grads.reverse();
    if upstream.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input gradient".into()));
    }
    Ok((MlpGradients { layers: grads }, Vector::new(upstream)?))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::fd::{finite_difference_gradient, relative_error};

    fn single(weights: Matrix, bias: Vec<f64>, act: Activation) -> MlpParams {
        MlpParams::new(vec![Layer::new(weights, Vector::new(bias).unwrap(), act).unwrap()]).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::init(&[3, 5, 2], &[Activation::Tanh, Activation::Identity], false, &mut rng)
            .unwrap()
            .zeros_like();
        let (out, _) = mlp_forward(&p, &[0.3, -1.0, 7.0]).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let p = single(Matrix::identity(2), vec![0.0, 0.0], Activation::Identity);
        let (out, _) = mlp_forward(&p, &[1.0, 2.0]).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_sigmoid_layer_gives_half() {
        let p = single(Matrix::zeros(3, 2), vec![0.0; 3], Activation::Sigmoid);
        let (out, _) = mlp_forward(&p, &[4.0, -9.0]).unwrap();
        assert_eq!(out.as_slice(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn forward_rejects_wrong_input_len() {
        let p = single(Matrix::identity(2), vec![0.0, 0.0], Activation::Identity);
        assert!(matches!(mlp_forward(&p, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn unchained_layers_are_rejected() {
        let a = Layer::new(Matrix::zeros(3, 2), Vector::zeros(3), Activation::Tanh).unwrap();
        let b = Layer::new(Matrix::zeros(1, 4), Vector::zeros(1), Activation::Identity).unwrap();
        assert!(MlpParams::new(vec![a, b]).is_err());
        assert!(MlpParams::new(vec![]).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MlpParams::init(&[3, 4, 2], &[Activation::Tanh, Activation::Sigmoid], false, &mut rng)
            .unwrap();
        let (_, tape) = mlp_forward(&p, &[0.1, 0.2, 0.3]).unwrap();
        let (g, gin) = mlp_backward(&p, &tape, &[0.0, 0.0]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(gin.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradients_match_calculus() {
        let w = Matrix::new(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]).unwrap();
        let p = single(w.clone(), vec![0.1, -0.2], Activation::Identity);
        let x = [2.0, -1.0, 4.0];
        let g = [0.5, -3.0];
        let (_, tape) = mlp_forward(&p, &x).unwrap();
        let (grads, gin) = mlp_backward(&p, &tape, &g).unwrap();
        let expected_w: Vec<f64> = g.iter().flat_map(|gi| x.iter().map(move |xj| gi * xj)).collect();
        assert_eq!(grads.layers[0].weights, expected_w);
        assert_eq!(grads.layers[0].bias, g.to_vec());
        assert_eq!(gin.as_slice(), w.matvec_transposed(&g).unwrap().as_slice());
    }

    #[test]
    fn mismatched_tape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = MlpParams::init(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], false, &mut rng)
            .unwrap();
        let b = MlpParams::init(&[3, 5, 2], &[Activation::Tanh, Activation::Identity], false, &mut rng)
            .unwrap();
        let (_, tape) = mlp_forward(&a, &[0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(mlp_backward(&b, &tape, &[1.0, 1.0]), Err(Error::Shape(_))));
        assert!(matches!(mlp_backward(&a, &tape, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn two_layer_tanh_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = MlpParams::init(&[3, 6, 2], &[Activation::Tanh, Activation::Tanh], false, &mut rng)
                .unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let head: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, tape) = mlp_forward(&p, &x).unwrap();
            let (grads, gin) = mlp_backward(&p, &tape, &head).unwrap();

            let scalar = |params: &MlpParams, input: &[f64]| {
                let (o, _) = mlp_forward(params, input).unwrap();
                o.iter().zip(&head).map(|(a, b)| a * b).sum::<f64>()
            };
            let fd_in = finite_difference_gradient(|xx| scalar(&p, xx), &x, 1e-5).unwrap();
            assert!(relative_error(&gin, &fd_in) < 1e-5);

            let flat = p.to_flat();
            let fd_params = finite_difference_gradient(
                |theta| {
                    let mut q = p.clone();
                    q.set_flat(theta).unwrap();
                    scalar(&q, &x)
                },
                &flat,
                1e-5,
            )
            .unwrap();
            assert!(relative_error(&grads.to_flat(), &fd_params) < 1e-5);
        }
    }
}
