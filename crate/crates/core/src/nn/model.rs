use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{softmax_rows, Gradients, Tape, Var};
use super::Matrix;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    NetD,
    NetS,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::NetD => "netd",
            Role::NetS => "nets",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Role::NetD => 1,
            Role::NetS => 2,
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "netd" => Ok(Role::NetD),
            "nets" => Ok(Role::NetS),
            other => Err(Error::invalid(format!("unknown role {other:?}"))),
        }
    }
}

/// Layer widths from input to output; hidden layers use a rectifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub widths: Vec<usize>,
}

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("architecture needs an input and an output width"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid(format!("zero-width layer in {widths:?}")));
        }
        Ok(Architecture { widths })
    }

    /// `input -> hidden... -> classes`.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(classes);
        Architecture::new(widths)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    /// Width of the representation feeding the output layer.
    pub fn penultimate_dim(&self) -> usize {
        self.widths[self.widths.len() - 2]
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.widths.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let widths = s
            .split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::invalid(format!("bad architecture {s:?}")))?;
        Architecture::new(widths)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in x out`.
    pub weight: Matrix,
    /// `1 x out`.
    pub bias: Matrix,
}

/// Parameters of a multilayer rectifier classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub arch: Architecture,
    pub role: Role,
    pub layers: Vec<Dense>,
}

/// Parameter-shaped gradient set, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub layers: Vec<Dense>,
}

impl ModelGrads {
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.as_slice().iter().chain(l.bias.as_slice()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }
}

/// Parameter nodes and outputs of one forward pass recorded on a tape.
pub struct TapedForward {
    params: Vec<Var>,
    pub logits: Var,
    /// Input to the output layer (after the last rectifier).
    pub penultimate: Var,
}

impl Mlp {
    /// He-style initialisation: weights ~ N(0, 1/fan_in), biases zero.
    pub fn init(arch: &Architecture, role: Role, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[rng::STREAM_INIT, role.stream()]);
        let layers = arch
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive fan-in");
                let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
                Dense { weight: Matrix::from_vec(fan_in, fan_out, data), bias: Matrix::zeros(1, fan_out) }
            })
            .collect();
        Mlp { arch: arch.clone(), role, layers }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.arch.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, model expects {}",
                batch.cols(),
                self.arch.input_dim()
            )));
        }
        Ok(())
    }

    /// Returns `(penultimate activations, logits)`.
    pub fn forward_with_features(&self, batch: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_input(batch)?;
        let mut h = batch.clone();
        let last = self.layers.len() - 1;
        for layer in &self.layers[..last] {
            h = affine(&h, layer);
            h.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0));
        }
        let logits = affine(&h, &self.layers[last]);
        Ok((h, logits))
    }

    pub fn forward_logits(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_with_features(batch)?.1)
    }

    /// Sign pattern of every hidden pre-activation, row by row. Two
    /// parameter settings with equal patterns lie in the same linear piece.
    pub fn activation_pattern(&self, batch: &Matrix) -> Result<Vec<bool>> {
        self.check_input(batch)?;
        let mut pattern = Vec::new();
        let mut h = batch.clone();
        for layer in &self.layers[..self.layers.len() - 1] {
            h = affine(&h, layer);
            pattern.extend(h.as_slice().iter().map(|&x| x > 0.0));
            h.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0));
        }
        Ok(pattern)
    }

    pub fn predict_probs(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.forward_logits(batch)?))
    }

    /// Records the forward pass on `tape` with every weight and bias as a
    /// parameter node.
    pub fn forward_taped(&self, tape: &mut Tape, batch: &Matrix) -> Result<TapedForward> {
        self.check_input(batch)?;
        let mut params = Vec::with_capacity(2 * self.layers.len());
        let mut h = tape.constant(batch.clone());
        let mut penultimate = h;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(layer.weight.clone());
            let b = tape.param(layer.bias.clone());
            params.push(w);
            params.push(b);
            let z = tape.matmul(h, w);
            let z = tape.add_row(z, b);
            if i < last {
                h = tape.relu(z);
                penultimate = h;
            } else {
                h = z;
            }
        }
        Ok(TapedForward { params, logits: h, penultimate })
    }

    /// Reverse sweep from `loss`, reshaped into per-layer gradients.
    pub fn backward(&self, tape: &Tape, fwd: &TapedForward, loss: Var) -> Result<ModelGrads> {
        let grads: Gradients = tape.backward(loss)?;
        let pick = |v: Var| grads.get(v).cloned().expect("parameter recorded on this tape");
        let layers = fwd
            .params
            .chunks_exact(2)
            .map(|wb| Dense { weight: pick(wb[0]), bias: pick(wb[1]) })
            .collect();
        Ok(ModelGrads { layers })
    }

    /// Convenience: value and gradient of `loss_fn(logits)`.
    pub fn value_and_grad(
        &self,
        batch: &Matrix,
        loss_fn: impl FnOnce(&mut Tape, Var) -> Var,
    ) -> Result<(f64, ModelGrads)> {
        let mut tape = Tape::new();
        let fwd = self.forward_taped(&mut tape, batch)?;
        let loss = loss_fn(&mut tape, fwd.logits);
        let value = tape.value(loss)[(0, 0)];
        let grads = self.backward(&tape, &fwd, loss)?;
        Ok((value, grads))
    }

    /// Flat mutable view over every parameter, layer order, weight then bias.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.as_mut_slice().iter_mut().chain(l.bias.as_mut_slice().iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.as_slice().iter().chain(l.bias.as_slice()))
    }
}

fn affine(h: &Matrix, layer: &Dense) -> Matrix {
    let mut z = h.matmul(&layer.weight);
    let b = layer.bias.as_slice();
    for r in 0..z.rows() {
        for (x, bb) in z.row_mut(r).iter_mut().zip(b) {
            *x += bb;
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Architecture {
        Architecture::mlp(4, &[8, 8], 3).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = Mlp::init(&arch(), Role::NetD, 5);
        assert_eq!(a, Mlp::init(&arch(), Role::NetD, 5));
        assert_ne!(a, Mlp::init(&arch(), Role::NetD, 6));
        assert!(a.layers.iter().all(|l| l.bias.as_slice().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_variance_matches_fan_in() {
        let arch = Architecture::mlp(200, &[100], 2).unwrap();
        let m = Mlp::init(&arch, Role::NetS, 1);
        let w = m.layers[0].weight.as_slice();
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let target = 1.0 / 200.0;
        assert!((var - target).abs() <= 0.2 * target, "variance {var}");
    }

    #[test]
    fn zero_width_rejected() {
        assert!(Architecture::new(vec![4, 0, 2]).is_err());
        assert!(Architecture::new(vec![4]).is_err());
        assert_eq!("8,64,64,4".parse::<Architecture>().unwrap().widths, vec![8, 64, 64, 4]);
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let mut m = Mlp::init(&arch(), Role::NetD, 1);
        m.params_mut().for_each(|p| *p = 0.0);
        let x = Matrix::from_vec(3, 4, (0..12).map(f64::from).collect());
        let z = m.forward_logits(&x).unwrap();
        assert_eq!(z.shape(), (3, 3));
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_selects_weight_row() {
        let arch = Architecture::new(vec![3, 2]).unwrap();
        let mut m = Mlp::init(&arch, Role::NetD, 1);
        m.layers[0].weight = Matrix::from_vec(3, 2, vec![1., 2., 3., 4., 5., 6.]);
        let x = Matrix::from_vec(1, 3, vec![0., 1., 0.]);
        assert_eq!(m.forward_logits(&x).unwrap().as_slice(), &[3., 4.]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let m = Mlp::init(&arch(), Role::NetD, 1);
        assert!(matches!(m.forward_logits(&Matrix::zeros(2, 5)), Err(Error::Shape(_))));
    }

    #[test]
    fn taped_forward_matches_plain_forward() {
        let m = Mlp::init(&arch(), Role::NetD, 3);
        let x = Matrix::from_vec(2, 4, vec![0.1, -0.4, 1.2, 0.3, -1.0, 0.5, 0.2, 0.9]);
        let mut tape = Tape::new();
        let fwd = m.forward_taped(&mut tape, &x).unwrap();
        let (feat, logits) = m.forward_with_features(&x).unwrap();
        assert_eq!(tape.value(fwd.logits), &logits);
        assert_eq!(tape.value(fwd.penultimate), &feat);
    }
}
