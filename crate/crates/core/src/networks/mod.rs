//! Score-network families: parameter sampling, forward evaluation
//! F(x_σ, σ), and manual reverse-mode parameter gradients.
//!
//! Four families are provided. `linear` is the fixed-conditioning model
//! Ω = Φ·Θ. `mlp` is a two-hidden-layer SiLU network with a sinusoidal
//! σ-embedding. `conv_unet_mini` is a two-level convolutional U-Net with
//! configurable resampling, the subject of the impulse-response probe.
//! `token_linear` applies one shared affine map per patch token followed by
//! an orthonormal unpatchify.

mod conv;
mod linear;
mod mlp;
mod token;

pub use conv::{ConvUnetFamily, PadMode, Resample};
pub use linear::LinearFamily;
pub use mlp::MlpFamily;
pub use token::TokenLinearFamily;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Elementwise activations used by the families and the analytic geometry
/// helpers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Silu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { name: name.to_string(), shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// A kind-matched collection of parameter tensors plus the stream that drew
/// them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
    /// (master_seed, stream_id) of the sampling stream, when drawn randomly.
    pub drawn_from: Option<(u64, u64)>,
}

const PARAM_MAGIC: u32 = 0x5350_4152; // "SPAR"

impl ParamSet {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors, drawn_from: None }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn flat_len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn zero_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(&t.name, &t.shape))
                .collect(),
            drawn_from: None,
        }
    }

    /// self += a·other, tensor by tensor. Shapes must match.
    pub fn axpy(&mut self, a: f64, other: &ParamSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Dimension("axpy: tensor count mismatch".into()));
        }
        for (t, o) in self.tensors.iter_mut().zip(&other.tensors) {
            if t.shape != o.shape {
                return Err(Error::Dimension(format!("axpy: shape mismatch on {}", t.name)));
            }
            for (x, y) in t.data.iter_mut().zip(&o.data) {
                *x += a * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for t in self.tensors.iter_mut() {
            for x in t.data.iter_mut() {
                *x *= a;
            }
        }
    }

    pub fn frob_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Flat little-endian binary blob: magic, version, tensor table with
    /// names and shapes, then all f64 payloads in declaration order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&PARAM_MAGIC.to_le_bytes());
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Parse { offset: *pos, message: "truncated parameter blob".into() });
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let magic = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if magic != PARAM_MAGIC {
            return Err(Error::Parse { offset: 0, message: format!("bad magic {:#x}", magic) });
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != 1 {
            return Err(Error::Parse { offset: 4, message: format!("unsupported version {}", version) });
        }
        let n_tensors = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut headers = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|e| Error::Parse { offset: pos, message: e.to_string() })?;
            let ndim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
            }
            headers.push((name, shape));
        }
        let mut tensors = Vec::with_capacity(n_tensors);
        for (name, shape) in headers {
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            tensors.push(Tensor { name, shape, data });
        }
        Ok(ParamSet { tensors, drawn_from: None })
    }
}

/// Gradient of a scalar loss with respect to a network output.
pub type Cotangent = Vec<f64>;

/// Impulse-response probe output for image families.
#[derive(Clone, Debug)]
pub struct ImpulseReport {
    /// Flattened (channels, height, width) response image.
    pub response: Vec<f64>,
    /// ‖r − flip_h(r)‖₂ + ‖r − flip_v(r)‖₂ over all channels.
    pub asymmetry_score: f64,
}

/// A parameterized score-network family.
#[derive(Clone, Debug)]
pub enum NetworkFamily {
    Linear(LinearFamily),
    Mlp(MlpFamily),
    ConvUnetMini(ConvUnetFamily),
    TokenLinear(TokenLinearFamily),
}

impl NetworkFamily {
    pub fn dim(&self) -> usize {
        match self {
            NetworkFamily::Linear(f) => f.dim(),
            NetworkFamily::Mlp(f) => f.dim(),
            NetworkFamily::ConvUnetMini(f) => f.dim(),
            NetworkFamily::TokenLinear(f) => f.dim(),
        }
    }

    /// (channels, height, width) for families with an image layout.
    pub fn image_layout(&self) -> Option<(usize, usize, usize)> {
        match self {
            NetworkFamily::ConvUnetMini(f) => Some((f.channels, f.height, f.width)),
            NetworkFamily::TokenLinear(f) => Some((f.channels, f.height, f.width)),
            _ => None,
        }
    }

    pub fn kind_label(&self) -> &'static str {
        match self {
            NetworkFamily::Linear(_) => "linear",
            NetworkFamily::Mlp(_) => "mlp",
            NetworkFamily::ConvUnetMini(_) => "conv_unet_mini",
            NetworkFamily::TokenLinear(_) => "token_linear",
        }
    }

    pub fn sample_params(&self, stream: &mut RngStream) -> ParamSet {
        let mut params = match self {
            NetworkFamily::Linear(f) => f.sample_params(stream),
            NetworkFamily::Mlp(f) => f.sample_params(stream),
            NetworkFamily::ConvUnetMini(f) => f.sample_params(stream),
            NetworkFamily::TokenLinear(f) => f.sample_params(stream),
        };
        params.drawn_from = Some((stream.master_seed(), stream.stream_id()));
        params
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "forward: input length {} but family dimension {}",
                x.len(),
                self.dim()
            )));
        }
        match self {
            NetworkFamily::Linear(f) => f.forward(params, x),
            NetworkFamily::Mlp(f) => f.forward(params, x, sigma),
            NetworkFamily::ConvUnetMini(f) => f.forward(params, x, sigma),
            NetworkFamily::TokenLinear(f) => f.forward(params, x),
        }
    }

    /// Gradient of ⟨cotangent, forward(x, σ)⟩ with respect to every
    /// parameter, in the same tensor layout as `params`.
    pub fn backward(
        &self,
        params: &ParamSet,
        x: &[f64],
        sigma: f64,
        cotangent: &[f64],
    ) -> Result<ParamSet> {
        if x.len() != self.dim() || cotangent.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "backward: input/cotangent length {}/{} but family dimension {}",
                x.len(),
                cotangent.len(),
                self.dim()
            )));
        }
        match self {
            NetworkFamily::Linear(f) => f.backward(params, x, cotangent),
            NetworkFamily::Mlp(f) => f.backward(params, x, sigma, cotangent),
            NetworkFamily::ConvUnetMini(f) => f.backward(params, x, sigma, cotangent),
            NetworkFamily::TokenLinear(f) => f.backward(params, x, cotangent),
        }
    }

    /// Replace every convolution kernel by its flip-symmetrized average.
    /// No-op for families without spatial kernels.
    pub fn symmetrize_kernels(&self, params: &mut ParamSet) {
        if let NetworkFamily::ConvUnetMini(f) = self {
            f.symmetrize_kernels(params);
        }
    }

    /// Response to a unit impulse at `(row, col)`, evaluated at the
    /// geometric mid-range σ of the family's σ interval, together with the
    /// flip asymmetry score.
    pub fn impulse_response(
        &self,
        params: &ParamSet,
        impulse_location: (usize, usize),
    ) -> Result<ImpulseReport> {
        let (c, h, w) = self.image_layout().ok_or_else(|| {
            Error::InvalidArgument(format!("{} family has no image layout", self.kind_label()))
        })?;
        let (row, col) = impulse_location;
        if row >= h || col >= w {
            return Err(Error::InvalidArgument(format!(
                "impulse location ({}, {}) outside {}x{} grid",
                row, col, h, w
            )));
        }
        let mut x = vec![0.0; c * h * w];
        for ch in 0..c {
            x[ch * h * w + row * w + col] = 1.0;
        }
        let sigma = match self {
            NetworkFamily::ConvUnetMini(f) => (f.sigma_range.0 * f.sigma_range.1).sqrt(),
            _ => 1.0,
        };
        let response = self.forward(params, &x, sigma)?;
        let asymmetry_score = flip_asymmetry(&response, c, h, w);
        Ok(ImpulseReport { response, asymmetry_score })
    }
}

pub(crate) fn flip_h(img: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        for r in 0..h {
            for x in 0..w {
                out[ch * h * w + r * w + x] = img[ch * h * w + r * w + (w - 1 - x)];
            }
        }
    }
    out
}

pub(crate) fn flip_v(img: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        for r in 0..h {
            let src = ch * h * w + (h - 1 - r) * w;
            let dst = ch * h * w + r * w;
            out[dst..dst + w].copy_from_slice(&img[src..src + w]);
        }
    }
    out
}

fn flip_asymmetry(img: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let fh = flip_h(img, c, h, w);
    let fv = flip_v(img, c, h, w);
    let d1: f64 = img.iter().zip(&fh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let d2: f64 = img.iter().zip(&fv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    d1 + d2
}

/// Sinusoidal embedding of a noise level: `n_freqs` geometrically spaced
/// frequencies applied to log-σ normalized over the σ range.
pub(crate) fn sigma_embedding(sigma: f64, n_freqs: usize, range: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = range;
    let t = if hi > lo && sigma > 0.0 {
        ((sigma.ln() - lo.ln()) / (hi.ln() - lo.ln())).clamp(-1.0, 2.0)
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(2 * n_freqs);
    for k in 0..n_freqs {
        let omega = std::f64::consts::PI * (1u64 << k) as f64;
        out.push((omega * t).sin());
        out.push((omega * t).cos());
    }
    out
}

/// Finite-difference gradient check helper shared by the family tests:
/// returns the maximum relative error between `backward` and a central
/// difference of ⟨cot, forward⟩ with the given step.
#[doc(hidden)]
pub fn finite_difference_max_rel_error(
    family: &NetworkFamily,
    params: &ParamSet,
    x: &[f64],
    sigma: f64,
    cot: &[f64],
    step: f64,
) -> f64 {
    let grad = family.backward(params, x, sigma, cot).expect("backward");
    let mut worst = 0.0f64;
    for (ti, t) in params.tensors.iter().enumerate() {
        for i in 0..t.data.len() {
            let mut plus = params.clone();
            plus.tensors[ti].data[i] += step;
            let mut minus = params.clone();
            minus.tensors[ti].data[i] -= step;
            let fp = family.forward(&plus, x, sigma).expect("forward");
            let fm = family.forward(&minus, x, sigma).expect("forward");
            let fd: f64 = fp
                .iter()
                .zip(fm.iter())
                .zip(cot)
                .map(|((p, m), c)| c * (p - m) / (2.0 * step))
                .sum();
            let an = grad.tensors[ti].data[i];
            let denom = fd.abs().max(an.abs()).max(1e-4);
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paramset_blob_round_trip() {
        let p = ParamSet::new(vec![
            Tensor { name: "w".into(), shape: vec![2, 3], data: vec![1.0, -2.5, 3.0, 0.0, 1e-300, 7.7] },
            Tensor { name: "b".into(), shape: vec![3], data: vec![0.1, 0.2, 0.3] },
        ]);
        let bytes = p.to_bytes();
        let q = ParamSet::from_bytes(&bytes).unwrap();
        assert_eq!(p.tensors, q.tensors);
    }

    #[test]
    fn paramset_blob_rejects_truncation() {
        let p = ParamSet::new(vec![Tensor::zeros("w", &[4])]);
        let bytes = p.to_bytes();
        let err = ParamSet::from_bytes(&bytes[..bytes.len() - 3]);
        assert!(matches!(err, Err(Error::Parse { .. })));
    }

    #[test]
    fn silu_grad_matches_fd() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (Activation::Silu.eval(x + h) - Activation::Silu.eval(x - h)) / (2.0 * h);
            assert!((fd - Activation::Silu.grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn sigma_embedding_is_deterministic_and_bounded() {
        let e1 = sigma_embedding(0.5, 8, (0.01, 100.0));
        let e2 = sigma_embedding(0.5, 8, (0.01, 100.0));
        assert_eq!(e1, e2);
        assert_eq!(e1.len(), 16);
        assert!(e1.iter().all(|v| v.abs() <= 1.0));
        let other = sigma_embedding(2.0, 8, (0.01, 100.0));
        assert_ne!(e1, other);
    }
}
