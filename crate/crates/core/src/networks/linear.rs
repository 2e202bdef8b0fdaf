//! Linear score family Ω = Φ·Θ with Φ fixed and Θ trainable.
//!
//! σ is ignored: the fixed-noise-level analysis treats the noise scale as a
//! constant, so the family carries no conditioning.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

use super::{ParamSet, Tensor};

#[derive(Clone, Debug)]
pub struct LinearFamily {
    /// Fixed output conditioning Φ (D×D).
    pub phi: Matrix,
    /// Standard deviation of the iid Θ entries at initialization.
    pub theta_std: f64,
}

impl LinearFamily {
    pub fn new(phi: Matrix) -> Result<Self> {
        if !phi.is_square() {
            return Err(Error::Dimension("phi must be square".into()));
        }
        Ok(Self { phi, theta_std: 1.0 })
    }

    pub fn with_theta_std(mut self, std: f64) -> Self {
        self.theta_std = std;
        self
    }

    pub fn dim(&self) -> usize {
        self.phi.rows()
    }

    pub fn sample_params(&self, stream: &mut RngStream) -> ParamSet {
        let d = self.dim();
        let mut data = stream.gaussian(d * d);
        for v in data.iter_mut() {
            *v *= self.theta_std;
        }
        ParamSet::new(vec![Tensor { name: "theta".into(), shape: vec![d, d], data }])
    }

    fn theta<'a>(&self, params: &'a ParamSet) -> Result<&'a Tensor> {
        params
            .get("theta")
            .filter(|t| t.shape == [self.dim(), self.dim()])
            .ok_or_else(|| Error::Dimension("linear family expects a D×D theta tensor".into()))
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let theta = self.theta(params)?;
        let mut tx = vec![0.0; d];
        for r in 0..d {
            let row = &theta.data[r * d..(r + 1) * d];
            tx[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        self.phi.matvec(&tx)
    }

    /// Gradient with respect to Θ of ⟨cot, ΦΘx⟩ is Φᵀ·cot·xᵀ.
    pub fn backward(&self, params: &ParamSet, x: &[f64], cot: &[f64]) -> Result<ParamSet> {
        let d = self.dim();
        self.theta(params)?;
        let phit_cot = self.phi.vecmat(cot)?;
        let mut grad = vec![0.0; d * d];
        for r in 0..d {
            let g = phit_cot[r];
            if g == 0.0 {
                continue;
            }
            for c in 0..d {
                grad[r * d + c] = g * x[c];
            }
        }
        Ok(ParamSet::new(vec![Tensor { name: "theta".into(), shape: vec![d, d], data: grad }]))
    }
}
