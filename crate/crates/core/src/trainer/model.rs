use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn apply_on_tape(self, tape: &Tape, v: Var) -> Result<Var> {
        match self {
            Activation::Tanh => tape.tanh(v),
            Activation::Relu => tape.relu(v),
            Activation::Identity => Ok(v),
        }
    }
}

/// One affine layer: `activation(W x + b)` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        match (weight.shape(), bias.shape()) {
            (&[out, _], &[b]) if out == b => Ok(Self {
                weight,
                bias,
                activation,
            }),
            (w, b) => Err(Error::shape("layer", w, b)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Feed-forward embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    layers: Vec<Layer>,
}

impl EncoderModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("encoder needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    "encoder",
                    pair[0].weight.shape(),
                    pair[1].weight.shape(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases. Hidden layers use `hidden_act`,
    /// the last layer `output_act`.
    pub fn random(
        input_dim: usize,
        hidden: &[usize],
        embed_dim: usize,
        hidden_act: Activation,
        output_act: Activation,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || embed_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut rng = SeededRng::for_stream(seed, Stream::ModelInit);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(embed_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.uniform_in(-limit, limit))
                .collect();
            let act = if i + 2 == dims.len() {
                output_act
            } else {
                hidden_act
            };
            layers.push(Layer::new(
                Tensor::matrix(fan_out, fan_in, data)?,
                Tensor::zeros(vec![fan_out]),
                act,
            )?);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Gradient-free forward pass. Arithmetic order matches the tape pass,
    /// so both produce bitwise-identical embeddings.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("forward", &[self.input_dim()], &[x.len()]));
        }
        let mut h = x.to_vec();
        for layer in &self.layers {
            let (out, inp) = (layer.out_dim(), layer.in_dim());
            let w = layer.weight.data();
            let b = layer.bias.data();
            h = (0..out)
                .map(|r| {
                    let mut acc = 0.0;
                    for (j, &hj) in h.iter().enumerate().take(inp) {
                        acc += w[r * inp + j] * hj;
                    }
                    layer.activation.apply(acc + b[r])
                })
                .collect();
        }
        Ok(h)
    }

    /// Records every parameter on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundEncoder {
        let params = self
            .layers
            .iter()
            .map(|l| {
                (
                    tape.leaf(l.weight.clone(), trainable),
                    tape.leaf(l.bias.clone(), trainable),
                    l.activation,
                )
            })
            .collect();
        BoundEncoder {
            params,
            input_dim: self.input_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weight before bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("set_flat_params", &[self.num_params()], &[flat.len()]));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for t in [&mut l.weight, &mut l.bias] {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// SHA-256 over the little-endian bytes of every parameter.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.flat_params() {
            h.update(v.to_le_bytes());
        }
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Encoder parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    params: Vec<(Var, Var, Activation)>,
    input_dim: usize,
}

impl BoundEncoder {
    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x)?;
        if shape != [self.input_dim] {
            return Err(Error::shape("forward", &[self.input_dim], &shape));
        }
        let mut h = x;
        for &(w, b, act) in &self.params {
            let z = tape.add(tape.matmul(w, h)?, b)?;
            h = act.apply_on_tape(tape, z)?;
        }
        Ok(h)
    }

    /// Parameter gradients in [`EncoderModel::flat_params`] order; zeros for
    /// parameters the last sweep did not reach.
    pub fn flat_grad(&self, tape: &Tape) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for &(w, b, _) in &self.params {
            for v in [w, b] {
                match tape.grad(v)? {
                    Some(g) => out.extend_from_slice(g.data()),
                    None => out.extend(std::iter::repeat(0.0).take(tape.shape(v)?.iter().product())),
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity2() -> EncoderModel {
        EncoderModel::new(vec![Layer::new(
            Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(vec![2]),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        assert_eq!(identity2().forward(&[0.25, -3.0]).unwrap(), vec![0.25, -3.0]);
    }

    #[test]
    fn tanh_layer_by_hand() {
        // W = [[1, 2], [-1, 0.5]], b = [0.1, -0.2], x = [0.3, -0.4]
        // Wx + b = [0.3 - 0.8 + 0.1, -0.3 - 0.2 - 0.2] = [-0.4, -0.7]
        let m = EncoderModel::new(vec![Layer::new(
            Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap(),
            Tensor::vector(vec![0.1, -0.2]),
            Activation::Tanh,
        )
        .unwrap()])
        .unwrap();
        let y = m.forward(&[0.3, -0.4]).unwrap();
        assert!((y[0] - (-0.4f64).tanh()).abs() < 1e-15);
        assert!((y[1] - (-0.7f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn zero_relu_model_gives_zero_embedding_which_cannot_be_projected() {
        let m = EncoderModel::new(vec![Layer::new(
            Tensor::zeros(vec![3, 2]),
            Tensor::zeros(vec![3]),
            Activation::Relu,
        )
        .unwrap()])
        .unwrap();
        let e = m.forward(&[1.0, -1.0]).unwrap();
        assert_eq!(e, vec![0.0; 3]);
        assert!(matches!(
            crate::geometry::project_to_sphere(&e),
            Err(Error::DegenerateVector { .. })
        ));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        assert!(matches!(identity2().forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn layers_must_chain() {
        let a = Layer::new(Tensor::zeros(vec![3, 2]), Tensor::zeros(vec![3]), Activation::Tanh).unwrap();
        let b = Layer::new(Tensor::zeros(vec![2, 4]), Tensor::zeros(vec![2]), Activation::Tanh).unwrap();
        assert!(EncoderModel::new(vec![a, b]).is_err());
    }

    #[test]
    fn tape_forward_is_bitwise_equal_to_inference() {
        let m = EncoderModel::random(5, &[7], 4, Activation::Tanh, Activation::Identity, 3).unwrap();
        let x = [0.3, -1.1, 0.7, 2.0, -0.5];
        let tape = Tape::new();
        let bound = m.bind(&tape, false);
        let y = bound.forward(&tape, tape.vector(&x)).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), m.forward(&x).unwrap().as_slice());
    }

    #[test]
    fn flat_params_round_trip_and_checksum() {
        let mut m = EncoderModel::random(3, &[4], 2, Activation::Tanh, Activation::Tanh, 9).unwrap();
        let before = m.checksum();
        let mut p = m.flat_params();
        assert_eq!(p.len(), 3 * 4 + 4 + 4 * 2 + 2);
        m.set_flat_params(&p).unwrap();
        assert_eq!(m.checksum(), before);
        p[0] += 1e-12;
        m.set_flat_params(&p).unwrap();
        assert_ne!(m.checksum(), before);
        assert!(m.set_flat_params(&p[1..]).is_err());
    }

    #[test]
    fn random_init_is_seeded() {
        let a = EncoderModel::random(4, &[6], 3, Activation::Tanh, Activation::Tanh, 1).unwrap();
        let b = EncoderModel::random(4, &[6], 3, Activation::Tanh, Activation::Tanh, 1).unwrap();
        let c = EncoderModel::random(4, &[6], 3, Activation::Tanh, Activation::Tanh, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
