use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{gemm, Matrix, Real};
use crate::{Error, Result};

/// Nonlinearity applied between layers (never after the last one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply<T: Real>(self, x: &mut [T]) {
        match self {
            Activation::Relu => x.iter_mut().for_each(|v| {
                if *v < T::ZERO {
                    *v = T::ZERO
                }
            }),
            Activation::Tanh => x.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activation output.
    fn backprop<T: Real>(self, out: &[T], grad: &mut [T]) {
        match self {
            Activation::Relu => {
                for (g, &o) in grad.iter_mut().zip(out) {
                    if o <= T::ZERO {
                        *g = T::ZERO;
                    }
                }
            }
            Activation::Tanh => {
                for (g, &o) in grad.iter_mut().zip(out) {
                    *g *= T::ONE - o * o;
                }
            }
            Activation::Identity => {}
        }
    }
}

/// Affine layer `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![T::ZERO; output],
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_width(&self) -> usize {
        self.weight.rows()
    }
}

/// A multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams<T> {
    pub layers: Vec<Linear<T>>,
    pub activation: Activation,
}

/// Per-layer inputs recorded by [`MlpParams::forward`]. `inputs[0]` is the
/// network input; `inputs[l]` is the post-activation output of layer `l - 1`.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    inputs: Vec<Matrix<T>>,
}

impl<T: Real> MlpCache<T> {
    /// Number of scalars retained.
    pub fn retained(&self) -> usize {
        self.inputs.iter().map(|m| m.rows() * m.cols()).sum()
    }

    pub fn input(&self) -> &Matrix<T> {
        &self.inputs[0]
    }
}

impl<T: Real> MlpParams<T> {
    /// All-zero network with the given layer widths `[in, h1, ..., out]`.
    pub fn zeros(widths: &[usize], activation: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| Linear::zeros(w[0], w[1]))
            .collect();
        Self { layers, activation }
    }

    /// He-style Gaussian initialisation; the output layer is scaled by `out_scale`.
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        out_scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut mlp = Self::zeros(widths, activation);
        let last = mlp.layers.len() - 1;
        for (l, layer) in mlp.layers.iter_mut().enumerate() {
            let fan_in = layer.input_width() as f64;
            let std = if l == last {
                out_scale / fan_in.sqrt()
            } else {
                (2.0 / fan_in).sqrt()
            };
            for w in layer.weight.as_mut_slice() {
                let z: f64 = StandardNormal.sample(rng);
                *w = T::from_f64(z * std);
            }
        }
        mlp
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.input_width(), l.output_width()))
                .collect(),
            activation: self.activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(|l| l.output_width()));
        w
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    /// Batched forward pass over the rows of `x`.
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, MlpCache<T>)> {
        if x.cols() != self.input_width() {
            return Err(Error::Config(format!(
                "mlp input width {} does not match expected {}",
                x.cols(),
                self.input_width()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Matrix::zeros(current.rows(), layer.output_width());
            affine_rows(layer, &current, &mut out);
            if l != last {
                self.activation.apply(out.as_mut_slice());
            }
            inputs.push(current);
            current = out;
        }
        Ok((current, MlpCache { inputs }))
    }

    /// Forward pass without keeping a cache.
    pub fn eval(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.input_width() {
            return Err(Error::Config(format!(
                "mlp input width {} does not match expected {}",
                x.cols(),
                self.input_width()
            )));
        }
        let last = self.layers.len() - 1;
        let mut current: Option<Matrix<T>> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let src = current.as_ref().unwrap_or(x);
            let mut out = Matrix::zeros(src.rows(), layer.output_width());
            affine_rows(layer, src, &mut out);
            if l != last {
                self.activation.apply(out.as_mut_slice());
            }
            current = Some(out);
        }
        Ok(current.expect("at least one layer"))
    }

    /// Single-vector forward pass.
    pub fn forward_vec(&self, x: &[T]) -> Result<(Vec<T>, MlpCache<T>)> {
        let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let (y, cache) = self.forward(&xm)?;
        Ok((y.into_vec(), cache))
    }

    /// Reverse pass: accumulates parameter gradients of `sum(y .* dy)` into
    /// `grads` and returns the input gradient when `want_input_grad` is set.
    pub fn backward_into(
        &self,
        cache: &MlpCache<T>,
        dy: &Matrix<T>,
        grads: &mut MlpParams<T>,
        want_input_grad: bool,
    ) -> Result<Option<Matrix<T>>> {
        self.check_cache(cache)?;
        let rows = cache.inputs[0].rows();
        if dy.shape() != (rows, self.output_width()) {
            return Err(Error::Contract(format!(
                "upstream gradient shape {:?} does not match cached batch {:?}",
                dy.shape(),
                (rows, self.output_width())
            )));
        }
        if grads.widths() != self.widths() {
            return Err(Error::Contract("gradient record shape mismatch".into()));
        }
        let mut delta = dy.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let g = &mut grads.layers[l];
            // dW += delta^T * input
            gemm(T::ONE, &delta, true, input, false, T::ONE, &mut g.weight);
            for r in 0..rows {
                for (b, d) in g.bias.iter_mut().zip(delta.row(r)) {
                    *b += *d;
                }
            }
            if l == 0 && !want_input_grad {
                return Ok(None);
            }
            let mut prev = Matrix::zeros(rows, layer.input_width());
            gemm(T::ONE, &delta, false, &layer.weight, false, T::ZERO, &mut prev);
            if l > 0 {
                self.activation.backprop(input.as_slice(), prev.as_mut_slice());
            }
            delta = prev;
        }
        Ok(Some(delta))
    }

    /// Reverse pass returning `(dx, dparams)` for a fresh gradient record.
    pub fn backward(
        &self,
        cache: &MlpCache<T>,
        dy: &Matrix<T>,
    ) -> Result<(Matrix<T>, MlpParams<T>)> {
        let mut grads = self.zeros_like();
        let dx = self
            .backward_into(cache, dy, &mut grads, true)?
            .expect("input gradient requested");
        Ok((dx, grads))
    }

    fn check_cache(&self, cache: &MlpCache<T>) -> Result<()> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "cache holds {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        let rows = cache.inputs[0].rows();
        for (layer, input) in self.layers.iter().zip(&cache.inputs) {
            if input.cols() != layer.input_width() || input.rows() != rows {
                return Err(Error::Contract(
                    "cache does not belong to this network".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(&l.bias[..]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias[..]);
        }
        out
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|b| U::from_f64(b.to_f64())).collect(),
                })
                .collect(),
            activation: self.activation,
        }
    }
}

fn affine_rows<T: Real>(layer: &Linear<T>, x: &Matrix<T>, out: &mut Matrix<T>) {
    for r in 0..out.rows() {
        out.row_mut(r).copy_from_slice(&layer.bias);
    }
    gemm(T::ONE, x, false, &layer.weight, true, T::ONE, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_return_bias() {
        let mut mlp = MlpParams::<f64>::zeros(&[3, 2], Activation::Relu);
        mlp.layers[0].bias = vec![0.5, -1.5];
        let (y, _) = mlp.forward_vec(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.5, -1.5]);
    }

    #[test]
    fn identity_layer_is_identity() {
        let mut mlp = MlpParams::<f64>::zeros(&[2, 2], Activation::Identity);
        mlp.layers[0].weight = Matrix::identity(2);
        let (y, _) = mlp.forward_vec(&[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn two_layer_matches_hand_evaluation() {
        // z1 = W1 x + b1 = (1 - 2, 0.5 + 4 - 3) = (-1, 1.5) -> relu (0, 1.5)
        // y = 2 * 0 + 1 * 1.5 + 0.25 = 1.75
        let mut mlp = MlpParams::<f64>::zeros(&[2, 2, 1], Activation::Relu);
        mlp.layers[0].weight = Matrix::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        mlp.layers[0].bias = vec![0.0, -3.0];
        mlp.layers[1].weight = Matrix::from_vec(1, 2, vec![2.0, 1.0]).unwrap();
        mlp.layers[1].bias = vec![0.25];
        let (y, _) = mlp.forward_vec(&[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.75]);
    }

    #[test]
    fn single_linear_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = MlpParams::<f64>::init(&[3, 2], Activation::Relu, 1.0, &mut rng);
        let (_, cache) = mlp.forward_vec(&[0.3, -0.2, 0.9]).unwrap();
        let dy = Matrix::from_vec(1, 2, vec![1.5, -0.5]).unwrap();
        let (dx, _) = mlp.backward(&cache, &dy).unwrap();
        let expected = mlp.layers[0].weight.transpose().matvec(&[1.5, -0.5]);
        assert_eq!(dx.as_slice(), &expected[..]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mlp = MlpParams::<f64>::init(&[4, 3, 2], Activation::Relu, 1.0, &mut rng);
        let (_, cache) = mlp.forward_vec(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let (dx, g) = mlp.backward(&cache, &Matrix::zeros(1, 2)).unwrap();
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = MlpParams::<f64>::init(&[2, 3, 1], Activation::Relu, 1.0, &mut rng);
        let b = MlpParams::<f64>::init(&[2, 4, 1], Activation::Relu, 1.0, &mut rng);
        let (_, cache) = a.forward_vec(&[1.0, 1.0]).unwrap();
        let err = b.backward(&cache, &Matrix::zeros(1, 1)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let err = a.backward(&cache, &Matrix::zeros(2, 1)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn wrong_input_width_is_config_error() {
        let mlp = MlpParams::<f32>::zeros(&[3, 1], Activation::Relu);
        assert!(matches!(mlp.forward_vec(&[1.0]), Err(Error::Config(_))));
    }
}
