//! Token-linear family: patchify into T tokens, apply one shared zero-mean
//! affine map to every token, unpatchify through the fixed orthonormal
//! rearrangement. The minimal family with transformer-style output
//! structure (at most T distinct geometry eigenvalues).

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

use super::{ParamSet, Tensor};

#[derive(Clone, Debug)]
pub struct TokenLinearFamily {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Patch side length; must divide height and width.
    pub patch: usize,
    pub weight_std: f64,
    pub bias_std: f64,
    /// When true each token gets its own independent bias draw (the
    /// transformer-layer parameterization); when false one bias vector is
    /// shared by every token and the map is fully token-equivariant.
    pub per_token_bias: bool,
}

impl TokenLinearFamily {
    pub fn new(channels: usize, height: usize, width: usize, patch: usize) -> Result<Self> {
        if patch == 0 || height % patch != 0 || width % patch != 0 {
            return Err(Error::InvalidArgument(format!(
                "patch size {} must divide image {}x{}",
                patch, height, width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            patch,
            weight_std: 1.0,
            bias_std: 1.0,
            per_token_bias: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Number of tokens.
    pub fn n_tokens(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Per-token dimension.
    pub fn token_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    /// Flat index of pixel (c, y, x).
    #[inline]
    fn pixel(&self, c: usize, y: usize, x: usize) -> usize {
        c * self.height * self.width + y * self.width + x
    }

    /// Pixel indices of token `t` in token-vector order.
    fn token_pixels(&self, t: usize) -> Vec<usize> {
        let tiles_x = self.width / self.patch;
        let (by, bx) = (t / tiles_x, t % tiles_x);
        let mut idx = Vec::with_capacity(self.token_len());
        for c in 0..self.channels {
            for py in 0..self.patch {
                for px in 0..self.patch {
                    idx.push(self.pixel(c, by * self.patch + py, bx * self.patch + px));
                }
            }
        }
        idx
    }

    /// The unpatchify map as an explicit permutation matrix (orthonormal).
    pub fn unpatchify_matrix(&self) -> Matrix {
        let d = self.dim();
        let mut q = Matrix::zeros(d, d);
        let l = self.token_len();
        for t in 0..self.n_tokens() {
            for (k, &p) in self.token_pixels(t).iter().enumerate() {
                q.set(p, t * l + k, 1.0);
            }
        }
        q
    }

    fn bias_len(&self) -> usize {
        if self.per_token_bias {
            self.n_tokens() * self.token_len()
        } else {
            self.token_len()
        }
    }

    #[inline]
    fn bias_offset(&self, t: usize) -> usize {
        if self.per_token_bias {
            t * self.token_len()
        } else {
            0
        }
    }

    pub fn sample_params(&self, stream: &mut RngStream) -> ParamSet {
        let l = self.token_len();
        let mut w = stream.gaussian(l * l);
        for v in w.iter_mut() {
            *v *= self.weight_std;
        }
        let mut b = stream.gaussian(self.bias_len());
        for v in b.iter_mut() {
            *v *= self.bias_std;
        }
        ParamSet::new(vec![
            Tensor { name: "weight".into(), shape: vec![l, l], data: w },
            Tensor { name: "bias".into(), shape: vec![self.bias_len()], data: b },
        ])
    }

    fn check(&self, params: &ParamSet) -> Result<()> {
        let l = self.token_len();
        match (params.get("weight"), params.get("bias")) {
            (Some(w), Some(b)) if w.shape == [l, l] && b.shape == [self.bias_len()] => Ok(()),
            _ => Err(Error::Dimension("token_linear parameter shapes do not match family".into())),
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Result<Vec<f64>> {
        self.check(params)?;
        let w = params.get("weight").unwrap();
        let b = params.get("bias").unwrap();
        let l = self.token_len();
        let mut out = vec![0.0; self.dim()];
        let mut token = vec![0.0; l];
        for t in 0..self.n_tokens() {
            let pixels = self.token_pixels(t);
            let boff = self.bias_offset(t);
            for (k, &p) in pixels.iter().enumerate() {
                token[k] = x[p];
            }
            for (r, &p) in pixels.iter().enumerate() {
                let row = &w.data[r * l..(r + 1) * l];
                out[p] =
                    b.data[boff + r] + row.iter().zip(&token).map(|(a, v)| a * v).sum::<f64>();
            }
        }
        Ok(out)
    }

    pub fn backward(&self, params: &ParamSet, x: &[f64], cot: &[f64]) -> Result<ParamSet> {
        self.check(params)?;
        let l = self.token_len();
        let mut g_w = vec![0.0; l * l];
        let mut g_b = vec![0.0; self.bias_len()];
        let mut token = vec![0.0; l];
        let mut ct = vec![0.0; l];
        for t in 0..self.n_tokens() {
            let pixels = self.token_pixels(t);
            let boff = self.bias_offset(t);
            for (k, &p) in pixels.iter().enumerate() {
                token[k] = x[p];
                ct[k] = cot[p];
            }
            for r in 0..l {
                let g = ct[r];
                g_b[boff + r] += g;
                if g == 0.0 {
                    continue;
                }
                let row = &mut g_w[r * l..(r + 1) * l];
                for c in 0..l {
                    row[c] += g * token[c];
                }
            }
        }
        Ok(ParamSet::new(vec![
            Tensor { name: "weight".into(), shape: vec![l, l], data: g_w },
            Tensor { name: "bias".into(), shape: vec![self.bias_len()], data: g_b },
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{finite_difference_max_rel_error, NetworkFamily};

    #[test]
    fn identity_weights_identity_map() {
        let fam = TokenLinearFamily::new(1, 4, 4, 2).unwrap();
        let l = fam.token_len();
        let params = ParamSet::new(vec![
            Tensor { name: "weight".into(), shape: vec![l, l], data: Matrix::identity(l).data().to_vec() },
            Tensor { name: "bias".into(), shape: vec![l], data: vec![0.0; l] },
        ]);
        let mut stream = RngStream::new(1, 0);
        let x = stream.gaussian(16);
        assert_eq!(fam.forward(&params, &x).unwrap(), x);
    }

    #[test]
    fn unpatchify_is_orthonormal_permutation() {
        let fam = TokenLinearFamily::new(2, 4, 4, 2).unwrap();
        let q = fam.unpatchify_matrix();
        let qtq = q.transpose().matmul(&q).unwrap();
        assert!(qtq.sub(&Matrix::identity(fam.dim())).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn token_permutation_equivariance() {
        // Swapping two tokens of the input swaps the same tokens of the output.
        let fam = TokenLinearFamily::new(1, 4, 4, 2).unwrap();
        let mut stream = RngStream::new(2, 0);
        let params = fam.sample_params(&mut stream);
        let x = stream.gaussian(16);

        let swap_tokens = |v: &[f64], a: usize, b: usize| -> Vec<f64> {
            let mut out = v.to_vec();
            let pa = fam.token_pixels(a);
            let pb = fam.token_pixels(b);
            for (&i, &j) in pa.iter().zip(&pb) {
                out[i] = v[j];
                out[j] = v[i];
            }
            out
        };

        let y = fam.forward(&params, &x).unwrap();
        let y_swapped = fam.forward(&params, &swap_tokens(&x, 0, 3)).unwrap();
        let expected = swap_tokens(&y, 0, 3);
        for (a, b) in y_swapped.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for per_token_bias in [false, true] {
            let mut fam = TokenLinearFamily::new(1, 4, 4, 2).unwrap();
            fam.per_token_bias = per_token_bias;
            let wrapped = NetworkFamily::TokenLinear(fam.clone());
            let mut stream = RngStream::new(3, 0);
            let params = fam.sample_params(&mut stream);
            let x = stream.gaussian(16);
            let cot = stream.gaussian(16);
            let err = finite_difference_max_rel_error(&wrapped, &params, &x, 1.0, &cot, 1e-4);
            assert!(err <= 1e-5, "fd error {} (per_token_bias={})", err, per_token_bias);
        }
    }
}
