//! Minimal two-level convolutional U-Net.
//!
//! Structure: 3×3 conv → SiLU → per-channel affine σ-conditioning →
//! downsample → 3×3 conv → SiLU → upsample → skip-add → 3×3 conv. The
//! downsample/upsample pair is configurable between `nearest` (index map,
//! not flip-symmetric) and `area` (adaptive average pooling, flip-symmetric
//! for every size), which is the resampling ablation this family exists to
//! exercise. Padding is zero by default and deliberately kept: border
//! artifacts are part of the studied geometry. Circular padding is available
//! for translation-equivariance checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

use super::{sigma_embedding, Activation, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    Nearest,
    Area,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Zero,
    Circular,
}

#[derive(Clone, Debug)]
pub struct ConvUnetFamily {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Feature channels in the two conv blocks.
    pub hidden_channels: usize,
    pub resample: Resample,
    pub pad: PadMode,
    pub n_freqs: usize,
    pub sigma_range: (f64, f64),
}

impl ConvUnetFamily {
    pub fn new(channels: usize, height: usize, width: usize, sigma_range: (f64, f64)) -> Self {
        Self {
            channels,
            height,
            width,
            hidden_channels: 16,
            resample: Resample::Nearest,
            pad: PadMode::Zero,
            n_freqs: 8,
            sigma_range,
        }
    }

    pub fn with_resample(mut self, r: Resample) -> Self {
        self.resample = r;
        self
    }

    pub fn with_pad(mut self, p: PadMode) -> Self {
        self.pad = p;
        self
    }

    pub fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn down_size(&self) -> (usize, usize) {
        ((self.height / 2).max(1), (self.width / 2).max(1))
    }

    pub fn sample_params(&self, stream: &mut RngStream) -> ParamSet {
        let (c, f) = (self.channels, self.hidden_channels);
        let e = 2 * self.n_freqs;
        let kaiming = |stream: &mut RngStream, n: usize, fan_in: usize| -> Vec<f64> {
            let std = (2.0 / fan_in as f64).sqrt();
            let mut v = stream.gaussian(n);
            for x in v.iter_mut() {
                *x *= std;
            }
            v
        };
        ParamSet::new(vec![
            Tensor { name: "conv_in.weight".into(), shape: vec![f, c, 3, 3], data: kaiming(stream, f * c * 9, c * 9) },
            Tensor { name: "conv_in.bias".into(), shape: vec![f], data: vec![0.0; f] },
            Tensor { name: "film.weight".into(), shape: vec![2 * f, e], data: kaiming(stream, 2 * f * e, e) },
            Tensor { name: "film.bias".into(), shape: vec![2 * f], data: vec![0.0; 2 * f] },
            Tensor { name: "conv_mid.weight".into(), shape: vec![f, f, 3, 3], data: kaiming(stream, f * f * 9, f * 9) },
            Tensor { name: "conv_mid.bias".into(), shape: vec![f], data: vec![0.0; f] },
            Tensor { name: "conv_out.weight".into(), shape: vec![c, f, 3, 3], data: kaiming(stream, c * f * 9, f * 9) },
            Tensor { name: "conv_out.bias".into(), shape: vec![c], data: vec![0.0; c] },
        ])
    }

    /// Average each 3×3 kernel with its horizontal, vertical, and double
    /// flips so the convolution commutes with image flips.
    pub fn symmetrize_kernels(&self, params: &mut ParamSet) {
        for name in ["conv_in.weight", "conv_mid.weight", "conv_out.weight"] {
            if let Some(t) = params.get_mut(name) {
                for k in t.data.chunks_mut(9) {
                    let orig: Vec<f64> = k.to_vec();
                    for ky in 0..3 {
                        for kx in 0..3 {
                            k[ky * 3 + kx] = 0.25
                                * (orig[ky * 3 + kx]
                                    + orig[ky * 3 + (2 - kx)]
                                    + orig[(2 - ky) * 3 + kx]
                                    + orig[(2 - ky) * 3 + (2 - kx)]);
                        }
                    }
                }
            }
        }
    }

    fn check(&self, params: &ParamSet) -> Result<()> {
        let (c, f) = (self.channels, self.hidden_channels);
        let e = 2 * self.n_freqs;
        let expect: [(&str, Vec<usize>); 8] = [
            ("conv_in.weight", vec![f, c, 3, 3]),
            ("conv_in.bias", vec![f]),
            ("film.weight", vec![2 * f, e]),
            ("film.bias", vec![2 * f]),
            ("conv_mid.weight", vec![f, f, 3, 3]),
            ("conv_mid.bias", vec![f]),
            ("conv_out.weight", vec![c, f, 3, 3]),
            ("conv_out.bias", vec![c]),
        ];
        for (name, shape) in expect {
            let t = params
                .get(name)
                .ok_or_else(|| Error::Dimension(format!("conv params missing {}", name)))?;
            if t.shape != shape {
                return Err(Error::Dimension(format!(
                    "conv tensor {} has shape {:?}, want {:?}",
                    name, t.shape, shape
                )));
            }
        }
        Ok(())
    }

    fn run(&self, params: &ParamSet, x: &[f64], sigma: f64) -> Result<UnetTrace> {
        self.check(params)?;
        let (c, f) = (self.channels, self.hidden_channels);
        let (h, w) = (self.height, self.width);
        let (h2, w2) = self.down_size();

        let emb = sigma_embedding(sigma, self.n_freqs, self.sigma_range);

        let w_in = params.get("conv_in.weight").unwrap();
        let b_in = params.get("conv_in.bias").unwrap();
        let w_film = params.get("film.weight").unwrap();
        let b_film = params.get("film.bias").unwrap();
        let w_mid = params.get("conv_mid.weight").unwrap();
        let b_mid = params.get("conv_mid.bias").unwrap();
        let w_out = params.get("conv_out.weight").unwrap();
        let b_out = params.get("conv_out.bias").unwrap();

        let a1 = conv3x3(x, c, h, w, &w_in.data, &b_in.data, f, self.pad);
        let h0: Vec<f64> = a1.iter().map(|&v| Activation::Silu.eval(v)).collect();

        // Per-channel affine conditioning from the σ-embedding.
        let e = emb.len();
        let mut film = vec![0.0; 2 * f];
        for r in 0..2 * f {
            let row = &w_film.data[r * e..(r + 1) * e];
            film[r] = b_film.data[r] + row.iter().zip(&emb).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut f0 = vec![0.0; f * h * w];
        for ch in 0..f {
            let (s, t) = (film[ch], film[f + ch]);
            for i in 0..h * w {
                f0[ch * h * w + i] = h0[ch * h * w + i] * (1.0 + s) + t;
            }
        }

        let d = resample(&f0, f, h, w, h2, w2, self.resample);
        let a2 = conv3x3(&d, f, h2, w2, &w_mid.data, &b_mid.data, f, self.pad);
        let h1: Vec<f64> = a2.iter().map(|&v| Activation::Silu.eval(v)).collect();
        let up = resample(&h1, f, h2, w2, h, w, self.resample);

        let m: Vec<f64> = f0.iter().zip(&up).map(|(a, b)| a + b).collect();
        let y = conv3x3(&m, f, h, w, &w_out.data, &b_out.data, c, self.pad);

        Ok(UnetTrace { emb, a1, h0, film, d, a2, m, y })
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
        let tr = self.run(params, x, sigma)?;
        let (c, f) = (self.channels, self.hidden_channels);
        let (h, w) = (self.height, self.width);
        let (h2, w2) = self.down_size();
        let e = tr.emb.len();

        let w_mid = params.get("conv_mid.weight").unwrap();
        let w_out = params.get("conv_out.weight").unwrap();

        // conv_out
        let (dm, g_w_out, g_b_out) =
            conv3x3_backward(&tr.m, f, h, w, &w_out.data, c, cot, self.pad);

        // skip add: dm feeds both f0 and the upsampled branch
        let dh1 = resample_adjoint(&dm, f, h2, w2, h, w, self.resample);
        let da2: Vec<f64> =
            dh1.iter().zip(&tr.a2).map(|(g, a)| g * Activation::Silu.grad(*a)).collect();
        let (dd, g_w_mid, g_b_mid) =
            conv3x3_backward(&tr.d, f, h2, w2, &w_mid.data, f, &da2, self.pad);
        let mut df0 = resample_adjoint(&dd, f, h, w, h2, w2, self.resample);
        for (g, m) in df0.iter_mut().zip(&dm) {
            *g += m;
        }

        // FiLM
        let mut dh0 = vec![0.0; f * h * w];
        let mut dfilm = vec![0.0; 2 * f];
        for ch in 0..f {
            let s = tr.film[ch];
            let mut gs = 0.0;
            let mut gt = 0.0;
            for i in 0..h * w {
                let g = df0[ch * h * w + i];
                dh0[ch * h * w + i] = g * (1.0 + s);
                gs += g * tr.h0[ch * h * w + i];
                gt += g;
            }
            dfilm[ch] = gs;
            dfilm[f + ch] = gt;
        }
        let mut g_w_film = vec![0.0; 2 * f * e];
        for r in 0..2 * f {
            let g = dfilm[r];
            if g != 0.0 {
                for k in 0..e {
                    g_w_film[r * e + k] = g * tr.emb[k];
                }
            }
        }
        let g_b_film = dfilm;

        let da1: Vec<f64> =
            dh0.iter().zip(&tr.a1).map(|(g, a)| g * Activation::Silu.grad(*a)).collect();
        let w_in = params.get("conv_in.weight").unwrap();
        let (_dx, g_w_in, g_b_in) =
            conv3x3_backward(x, c, h, w, &w_in.data, f, &da1, self.pad);

        Ok(ParamSet::new(vec![
            Tensor { name: "conv_in.weight".into(), shape: vec![f, c, 3, 3], data: g_w_in },
            Tensor { name: "conv_in.bias".into(), shape: vec![f], data: g_b_in },
            Tensor { name: "film.weight".into(), shape: vec![2 * f, e], data: g_w_film },
            Tensor { name: "film.bias".into(), shape: vec![2 * f], data: g_b_film },
            Tensor { name: "conv_mid.weight".into(), shape: vec![f, f, 3, 3], data: g_w_mid },
            Tensor { name: "conv_mid.bias".into(), shape: vec![f], data: g_b_mid },
            Tensor { name: "conv_out.weight".into(), shape: vec![c, f, 3, 3], data: g_w_out },
            Tensor { name: "conv_out.bias".into(), shape: vec![c], data: g_b_out },
        ]))
    }
}

struct UnetTrace {
    emb: Vec<f64>,
    a1: Vec<f64>,
    h0: Vec<f64>,
    film: Vec<f64>,
    d: Vec<f64>,
    a2: Vec<f64>,
    m: Vec<f64>,
    y: Vec<f64>,
}

#[inline]
fn pad_index(i: isize, n: usize, pad: PadMode) -> Option<usize> {
    if i >= 0 && (i as usize) < n {
        return Some(i as usize);
    }
    match pad {
        PadMode::Zero => None,
        PadMode::Circular => Some(i.rem_euclid(n as isize) as usize),
    }
}

/// 3×3 same-size convolution; weights laid out (c_out, c_in, 3, 3).
pub(crate) fn conv3x3(
    inp: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    c_out: usize,
    pad: PadMode,
) -> Vec<f64> {
    let mut out = vec![0.0; c_out * h * w];
    for o in 0..c_out {
        let out_plane = &mut out[o * h * w..(o + 1) * h * w];
        out_plane.fill(bias[o]);
        for i in 0..c_in {
            let in_plane = &inp[i * h * w..(i + 1) * h * w];
            let k = &weights[(o * c_in + i) * 9..(o * c_in + i) * 9 + 9];
            for y in 0..h {
                for ky in 0..3usize {
                    let src_y = match pad_index(y as isize + ky as isize - 1, h, pad) {
                        Some(v) => v,
                        None => continue,
                    };
                    let row = &in_plane[src_y * w..(src_y + 1) * w];
                    for kx in 0..3usize {
                        let kv = k[ky * 3 + kx];
                        if kv == 0.0 {
                            continue;
                        }
                        let dst = &mut out_plane[y * w..(y + 1) * w];
                        for x in 0..w {
                            if let Some(src_x) = pad_index(x as isize + kx as isize - 1, w, pad) {
                                dst[x] += kv * row[src_x];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of [`conv3x3`]; returns (d_input, d_weights, d_bias).
pub(crate) fn conv3x3_backward(
    inp: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    c_out: usize,
    d_out: &[f64],
    pad: PadMode,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut d_in = vec![0.0; c_in * h * w];
    let mut d_w = vec![0.0; c_out * c_in * 9];
    let mut d_b = vec![0.0; c_out];
    for o in 0..c_out {
        let g_plane = &d_out[o * h * w..(o + 1) * h * w];
        d_b[o] = g_plane.iter().sum();
        for i in 0..c_in {
            let in_plane = &inp[i * h * w..(i + 1) * h * w];
            let d_in_plane = &mut d_in[i * h * w..(i + 1) * h * w];
            let k = &weights[(o * c_in + i) * 9..(o * c_in + i) * 9 + 9];
            let gk = &mut d_w[(o * c_in + i) * 9..(o * c_in + i) * 9 + 9];
            for y in 0..h {
                for ky in 0..3usize {
                    let src_y = match pad_index(y as isize + ky as isize - 1, h, pad) {
                        Some(v) => v,
                        None => continue,
                    };
                    for kx in 0..3usize {
                        let mut acc = 0.0;
                        let kv = k[ky * 3 + kx];
                        for x in 0..w {
                            if let Some(src_x) = pad_index(x as isize + kx as isize - 1, w, pad) {
                                let g = g_plane[y * w + x];
                                acc += g * in_plane[src_y * w + src_x];
                                d_in_plane[src_y * w + src_x] += g * kv;
                            }
                        }
                        gk[ky * 3 + kx] += acc;
                    }
                }
            }
        }
    }
    (d_in, d_w, d_b)
}

/// Per-axis adaptive pooling window: `[start, end)` source indices feeding
/// output cell `i`. Reflection-symmetric by construction, which is what makes
/// area resampling commute with flips.
#[inline]
fn pool_window(i: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let start = i * n_in / n_out;
    let end = ((i + 1) * n_in).div_ceil(n_out);
    (start, end)
}

pub(crate) fn resample(
    inp: &[f64],
    c: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
    mode: Resample,
) -> Vec<f64> {
    let mut out = vec![0.0; c * h_out * w_out];
    match mode {
        Resample::Nearest => {
            for ch in 0..c {
                for y in 0..h_out {
                    let sy = y * h_in / h_out;
                    for x in 0..w_out {
                        let sx = x * w_in / w_out;
                        out[ch * h_out * w_out + y * w_out + x] =
                            inp[ch * h_in * w_in + sy * w_in + sx];
                    }
                }
            }
        }
        Resample::Area => {
            for ch in 0..c {
                for y in 0..h_out {
                    let (y0, y1) = pool_window(y, h_in, h_out);
                    for x in 0..w_out {
                        let (x0, x1) = pool_window(x, w_in, w_out);
                        let mut acc = 0.0;
                        for sy in y0..y1 {
                            for sx in x0..x1 {
                                acc += inp[ch * h_in * w_in + sy * w_in + sx];
                            }
                        }
                        out[ch * h_out * w_out + y * w_out + x] =
                            acc / ((y1 - y0) * (x1 - x0)) as f64;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn resample_adjoint(
    d_out: &[f64],
    c: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
    mode: Resample,
) -> Vec<f64> {
    // Adjoint of the linear map resample(h_in,w_in → h_out,w_out).
    let mut d_in = vec![0.0; c * h_in * w_in];
    match mode {
        Resample::Nearest => {
            for ch in 0..c {
                for y in 0..h_out {
                    let sy = y * h_in / h_out;
                    for x in 0..w_out {
                        let sx = x * w_in / w_out;
                        d_in[ch * h_in * w_in + sy * w_in + sx] +=
                            d_out[ch * h_out * w_out + y * w_out + x];
                    }
                }
            }
        }
        Resample::Area => {
            for ch in 0..c {
                for y in 0..h_out {
                    let (y0, y1) = pool_window(y, h_in, h_out);
                    for x in 0..w_out {
                        let (x0, x1) = pool_window(x, w_in, w_out);
                        let g = d_out[ch * h_out * w_out + y * w_out + x]
                            / ((y1 - y0) * (x1 - x0)) as f64;
                        for sy in y0..y1 {
                            for sx in x0..x1 {
                                d_in[ch * h_in * w_in + sy * w_in + sx] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}
