use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    None,
    GaussianJitter,
}

/// Stochastic input perturbation. The random stream is supplied by the
/// caller so every call site owns a reproducible sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub mode: AugmentMode,
    pub jitter_sigma: f64,
}

impl AugmentSpec {
    pub const NONE: AugmentSpec = AugmentSpec { mode: AugmentMode::None, jitter_sigma: 0.0 };

    pub fn jitter(sigma: f64) -> Result<Self> {
        let spec = AugmentSpec { mode: AugmentMode::GaussianJitter, jitter_sigma: sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::invalid(format!("jitter_sigma must be >= 0, got {}", self.jitter_sigma)));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.mode == AugmentMode::None || self.jitter_sigma == 0.0
    }

    /// Returns an augmented copy; each entry gets its own draw.
    pub fn apply(&self, batch: &Matrix, rng: &mut Rng) -> Matrix {
        if self.is_identity() {
            return batch.clone();
        }
        let noise = Normal::new(0.0, self.jitter_sigma).expect("validated sigma");
        let mut out = batch.clone();
        for x in out.as_mut_slice() {
            *x += noise.sample(rng);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn identity_cases() {
        let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let mut r = rng::stream(0, &[]);
        assert_eq!(AugmentSpec::NONE.apply(&x, &mut r), x);
        assert_eq!(AugmentSpec::jitter(0.0).unwrap().apply(&x, &mut r), x);
        assert!(AugmentSpec::jitter(-1.0).is_err());
    }

    #[test]
    fn repeated_draws_differ() {
        let x = Matrix::from_vec(1, 4, vec![0.5; 4]);
        let spec = AugmentSpec::jitter(0.1).unwrap();
        let mut r = rng::stream(3, &[]);
        let a = spec.apply(&x, &mut r);
        let b = spec.apply(&x, &mut r);
        assert!(a.as_slice().iter().zip(b.as_slice()).any(|(p, q)| p != q));
        assert!(a.as_slice().iter().zip(x.as_slice()).any(|(p, q)| p != q));
    }

    #[test]
    fn jitter_has_requested_spread() {
        let x = Matrix::zeros(100, 100);
        let mut r = rng::stream(9, &[]);
        let y = AugmentSpec::jitter(0.3).unwrap().apply(&x, &mut r);
        let n = y.as_slice().len() as f64;
        let mean = y.sum() / n;
        let var = y.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01);
        assert!((var.sqrt() - 0.3).abs() < 0.01);
    }
}
