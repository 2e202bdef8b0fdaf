//! Two-hidden-layer SiLU MLP with a sinusoidal σ-embedding added to the
//! first hidden pre-activation. Kaiming fan-in initialization for weights;
//! bias groups are drawn from configurable (mean, std) pairs, zero by
//! default. An optional fixed per-output scale profile provides explicit
//! anisotropic output conditioning for sweep experiments.

use crate::error::{Error, Result};
use crate::numerics::RngStream;

use super::{sigma_embedding, Activation, ParamSet, Tensor};

#[derive(Clone, Debug)]
pub struct MlpFamily {
    pub dim: usize,
    /// Hidden width as a multiple of `dim`.
    pub hidden_mult: usize,
    pub n_freqs: usize,
    /// (σ_min, σ_max) used by the embedding.
    pub sigma_range: (f64, f64),
    /// When false the σ-embedding projection is initialized to zero, making
    /// the network unconditioned on σ.
    pub embed: bool,
    /// Output bias initialization (mean, std); (0, 0) by default.
    pub output_bias: (f64, f64),
    /// Hidden bias initialization std; 0 by default.
    pub hidden_bias_std: f64,
    /// Optional fixed per-output scale γ applied after the last layer.
    pub output_scale: Option<Vec<f64>>,
}

impl MlpFamily {
    pub fn new(dim: usize, sigma_range: (f64, f64)) -> Self {
        Self {
            dim,
            hidden_mult: 4,
            n_freqs: 8,
            sigma_range,
            embed: true,
            output_bias: (0.0, 0.0),
            hidden_bias_std: 0.0,
            output_scale: None,
        }
    }

    pub fn with_output_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != self.dim {
            return Err(Error::Dimension("output scale length must equal dim".into()));
        }
        self.output_scale = Some(scale);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.dim * self.hidden_mult
    }

    pub fn sample_params(&self, stream: &mut RngStream) -> ParamSet {
        let (d, h) = (self.dim, self.hidden());
        let e = 2 * self.n_freqs;
        let gauss_scaled = |stream: &mut RngStream, n: usize, std: f64| -> Vec<f64> {
            let mut v = stream.gaussian(n);
            for x in v.iter_mut() {
                *x *= std;
            }
            v
        };
        let kaiming = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let bias = |stream: &mut RngStream, n: usize, mean: f64, std: f64| -> Vec<f64> {
            let mut v = gauss_scaled(stream, n, std);
            for x in v.iter_mut() {
                *x += mean;
            }
            v
        };
        let embed_std = if self.embed { kaiming(e) } else { 0.0 };
        ParamSet::new(vec![
            Tensor { name: "w1".into(), shape: vec![h, d], data: gauss_scaled(stream, h * d, kaiming(d)) },
            Tensor { name: "b1".into(), shape: vec![h], data: bias(stream, h, 0.0, self.hidden_bias_std) },
            Tensor { name: "embed".into(), shape: vec![h, e], data: gauss_scaled(stream, h * e, embed_std) },
            Tensor { name: "w2".into(), shape: vec![h, h], data: gauss_scaled(stream, h * h, kaiming(h)) },
            Tensor { name: "b2".into(), shape: vec![h], data: bias(stream, h, 0.0, self.hidden_bias_std) },
            Tensor { name: "w3".into(), shape: vec![d, h], data: gauss_scaled(stream, d * h, kaiming(h)) },
            Tensor { name: "b3".into(), shape: vec![d], data: bias(stream, d, self.output_bias.0, self.output_bias.1) },
        ])
    }

    fn check(&self, params: &ParamSet) -> Result<()> {
        let (d, h) = (self.dim, self.hidden());
        let e = 2 * self.n_freqs;
        let expect: [(&str, &[usize]); 7] = [
            ("w1", &[h, d]),
            ("b1", &[h]),
            ("embed", &[h, e]),
            ("w2", &[h, h]),
            ("b2", &[h]),
            ("w3", &[d, h]),
            ("b3", &[d]),
        ];
        for (name, shape) in expect {
            let t = params
                .get(name)
                .ok_or_else(|| Error::Dimension(format!("mlp params missing {}", name)))?;
            if t.shape != shape {
                return Err(Error::Dimension(format!("mlp tensor {} has shape {:?}, want {:?}", name, t.shape, shape)));
            }
        }
        Ok(())
    }

    fn run(&self, params: &ParamSet, x: &[f64], sigma: f64) -> Result<MlpTrace> {
        self.check(params)?;
        let (d, h) = (self.dim, self.hidden());
        let w1 = params.get("w1").unwrap();
        let b1 = params.get("b1").unwrap();
        let embed = params.get("embed").unwrap();
        let w2 = params.get("w2").unwrap();
        let b2 = params.get("b2").unwrap();
        let w3 = params.get("w3").unwrap();
        let b3 = params.get("b3").unwrap();

        let emb = sigma_embedding(sigma, self.n_freqs, self.sigma_range);
        let e = emb.len();

        let mut a1 = vec![0.0; h];
        for r in 0..h {
            let wrow = &w1.data[r * d..(r + 1) * d];
            let erow = &embed.data[r * e..(r + 1) * e];
            let mut acc = b1.data[r];
            acc += wrow.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            acc += erow.iter().zip(&emb).map(|(a, b)| a * b).sum::<f64>();
            a1[r] = acc;
        }
        let h1: Vec<f64> = a1.iter().map(|&v| Activation::Silu.eval(v)).collect();

        let mut a2 = vec![0.0; h];
        for r in 0..h {
            let wrow = &w2.data[r * h..(r + 1) * h];
            a2[r] = b2.data[r] + wrow.iter().zip(&h1).map(|(a, b)| a * b).sum::<f64>();
        }
        let h2: Vec<f64> = a2.iter().map(|&v| Activation::Silu.eval(v)).collect();

        let mut y = vec![0.0; d];
        for r in 0..d {
            let wrow = &w3.data[r * h..(r + 1) * h];
            y[r] = b3.data[r] + wrow.iter().zip(&h2).map(|(a, b)| a * b).sum::<f64>();
        }
        if let Some(scale) = &self.output_scale {
            for (v, s) in y.iter_mut().zip(scale) {
                *v *= s;
            }
        }
        Ok(MlpTrace { emb, a1, h1, a2, h2, y })
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        Ok(self.run(params, x, sigma)?.y)
    }

    pub fn backward(
        &self,
        params: &ParamSet,
        x: &[f64],
        sigma: f64,
        cot: &[f64],
    ) -> Result<ParamSet> {
        let trace = self.run(params, x, sigma)?;
        let (d, h) = (self.dim, self.hidden());
        let e = trace.emb.len();
        let w2 = params.get("w2").unwrap();
        let w3 = params.get("w3").unwrap();

        let dy: Vec<f64> = match &self.output_scale {
            Some(scale) => cot.iter().zip(scale).map(|(c, s)| c * s).collect(),
            None => cot.to_vec(),
        };

        let mut g_w3 = vec![0.0; d * h];
        let mut dh2 = vec![0.0; h];
        for r in 0..d {
            let g = dy[r];
            let wrow = &w3.data[r * h..(r + 1) * h];
            let grow = &mut g_w3[r * h..(r + 1) * h];
            for c in 0..h {
                grow[c] = g * trace.h2[c];
                dh2[c] += g * wrow[c];
            }
        }
        let g_b3 = dy.clone();

        let da2: Vec<f64> =
            dh2.iter().zip(&trace.a2).map(|(g, a)| g * Activation::Silu.grad(*a)).collect();

        let mut g_w2 = vec![0.0; h * h];
        let mut dh1 = vec![0.0; h];
        for r in 0..h {
            let g = da2[r];
            if g == 0.0 {
                continue;
            }
            let wrow = &w2.data[r * h..(r + 1) * h];
            let grow = &mut g_w2[r * h..(r + 1) * h];
            for c in 0..h {
                grow[c] = g * trace.h1[c];
                dh1[c] += g * wrow[c];
            }
        }
        let g_b2 = da2.clone();

        let da1: Vec<f64> =
            dh1.iter().zip(&trace.a1).map(|(g, a)| g * Activation::Silu.grad(*a)).collect();

        let mut g_w1 = vec![0.0; h * d];
        let mut g_embed = vec![0.0; h * e];
        for r in 0..h {
            let g = da1[r];
            if g == 0.0 {
                continue;
            }
            for c in 0..d {
                g_w1[r * d + c] = g * x[c];
            }
            for c in 0..e {
                g_embed[r * e + c] = g * trace.emb[c];
            }
        }
        let g_b1 = da1.clone();

        Ok(ParamSet::new(vec![
            Tensor { name: "w1".into(), shape: vec![h, d], data: g_w1 },
            Tensor { name: "b1".into(), shape: vec![h], data: g_b1 },
            Tensor { name: "embed".into(), shape: vec![h, e], data: g_embed },
            Tensor { name: "w2".into(), shape: vec![h, h], data: g_w2 },
            Tensor { name: "b2".into(), shape: vec![h], data: g_b2 },
            Tensor { name: "w3".into(), shape: vec![d, h], data: g_w3 },
            Tensor { name: "b3".into(), shape: vec![d], data: g_b3 },
        ]))
    }
}

struct MlpTrace {
    emb: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    y: Vec<f64>,
}
