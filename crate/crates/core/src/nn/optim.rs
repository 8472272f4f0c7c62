use serde::{Deserialize, Serialize};

use super::model::{Mlp, ModelGrads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { learning_rate: 0.02, momentum: 0.8, weight_decay: 5e-4 }
    }
}

/// SGD with classic momentum and coupled L2 weight decay:
///
/// ```text
/// v <- momentum * v + grad + weight_decay * theta
/// theta <- theta - lr * v
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: SgdConfig,
    velocity: Vec<f64>,
}

impl OptimState {
    pub fn new(model: &Mlp, config: SgdConfig) -> Result<Self> {
        for (name, v) in [
            ("learning_rate", config.learning_rate),
            ("momentum", config.momentum),
            ("weight_decay", config.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(OptimState { config, velocity: vec![0.0; model.num_params()] })
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Applies one update in place. A non-finite gradient leaves both the
    /// model and the velocity untouched.
    pub fn step(&mut self, model: &mut Mlp, grads: &ModelGrads) -> Result<()> {
        let n = model.num_params();
        let gn: usize = grads.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.as_slice().len()).sum();
        if n != gn || n != self.velocity.len() {
            return Err(Error::Shape(format!(
                "model has {n} parameters, gradient {gn}, velocity {}",
                self.velocity.len()
            )));
        }
        if let Some((i, g)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i} is {g}; step aborted")));
        }
        let SgdConfig { learning_rate: lr, momentum: m, weight_decay: wd } = self.config;
        for ((theta, v), &g) in model.params_mut().zip(self.velocity.iter_mut()).zip(grads.iter()) {
            *v = m * *v + g + wd * *theta;
            *theta -= lr * *v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, Matrix, Role};

    fn scalar_model(theta: f64) -> Mlp {
        let arch = Architecture::new(vec![1, 1]).unwrap();
        let mut m = Mlp::init(&arch, Role::NetD, 0);
        m.layers[0].weight = Matrix::scalar(theta);
        m
    }

    fn unit_grad(g: f64) -> ModelGrads {
        let mut grads = ModelGrads { layers: scalar_model(0.0).layers };
        grads.layers[0].weight = Matrix::scalar(g);
        grads.layers[0].bias = Matrix::zeros(1, 1);
        grads
    }

    #[test]
    fn hand_iterated_momentum() {
        let mut m = scalar_model(1.0);
        let cfg = SgdConfig { learning_rate: 0.1, momentum: 0.8, weight_decay: 0.0 };
        let mut opt = OptimState::new(&m, cfg).unwrap();
        opt.step(&mut m, &unit_grad(1.0)).unwrap();
        assert!((opt.velocity()[0] - 1.0).abs() < 1e-12);
        assert!((m.layers[0].weight[(0, 0)] - 0.9).abs() < 1e-12);
        opt.step(&mut m, &unit_grad(1.0)).unwrap();
        assert!((opt.velocity()[0] - 1.8).abs() < 1e-12);
        assert!((m.layers[0].weight[(0, 0)] - 0.72).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_is_coupled() {
        let mut m = scalar_model(2.0);
        let cfg = SgdConfig { learning_rate: 0.1, momentum: 0.0, weight_decay: 0.5 };
        let mut opt = OptimState::new(&m, cfg).unwrap();
        opt.step(&mut m, &unit_grad(0.0)).unwrap();
        assert!((m.layers[0].weight[(0, 0)] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_a_null_step() {
        let mut m = scalar_model(1.5);
        let before = m.clone();
        let mut opt = OptimState::new(&m, SgdConfig { learning_rate: 0.0, ..Default::default() }).unwrap();
        opt.step(&mut m, &unit_grad(3.0)).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut m = scalar_model(1.0);
        let before = m.clone();
        let mut opt = OptimState::new(&m, SgdConfig::default()).unwrap();
        assert!(matches!(opt.step(&mut m, &unit_grad(f64::NAN)), Err(Error::NonFinite(_))));
        assert_eq!(m, before);
        assert!(opt.velocity().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_hyperparameters_rejected() {
        let m = scalar_model(1.0);
        assert!(OptimState::new(&m, SgdConfig { momentum: -0.1, ..Default::default() }).is_err());
    }
}
