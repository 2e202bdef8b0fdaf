//! Average geometry estimation and score anisotropy directions.
//!
//! The geometry of a network family under a probing distribution is the
//! expected outer product of network outputs over fresh parameter draws.
//! It is estimated by a chunked Monte Carlo: every chunk of samples owns a
//! derived random stream and a Welford accumulator, and partials are merged
//! in fixed chunk order, so the result is bitwise independent of the number
//! of worker threads. SADs are the eigenvectors of the geometry in
//! ascending eigenvalue order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{Activation, NetworkFamily};
use crate::numerics::{sym_eig, vecops, Matrix, RngStream};

/// Fraction of non-finite outputs tolerated before estimation fails.
const MAX_REJECT_FRACTION: f64 = 0.001;
/// Relative floor below which negative geometry eigenvalues are an error.
const PSD_FLOOR: f64 = 1e-8;
/// Samples per parallel accumulation chunk.
const CHUNK: usize = 1024;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeKind {
    /// x fixed at the origin.
    DeltaZero,
    /// x ~ N(0, σ_P² I).
    IsotropicGaussian { sigma_p: f64 },
    /// x = x₀ + σ·ε along the forward noising process of a fixed sample.
    AroundSample { x0: Vec<f64> },
}

/// The law of the (x_σ, σ) pairs fed to freshly initialized networks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeDistribution {
    pub kind: ProbeKind,
    /// σ drawn uniformly from these levels.
    pub sigma_levels: Vec<f64>,
}

impl ProbeDistribution {
    pub fn delta_zero(sigma_levels: Vec<f64>) -> Result<Self> {
        Self::new(ProbeKind::DeltaZero, sigma_levels)
    }

    pub fn isotropic(sigma_p: f64, sigma_levels: Vec<f64>) -> Result<Self> {
        Self::new(ProbeKind::IsotropicGaussian { sigma_p }, sigma_levels)
    }

    pub fn around_sample(x0: Vec<f64>, sigma_levels: Vec<f64>) -> Result<Self> {
        Self::new(ProbeKind::AroundSample { x0 }, sigma_levels)
    }

    pub fn new(kind: ProbeKind, sigma_levels: Vec<f64>) -> Result<Self> {
        if sigma_levels.is_empty() || sigma_levels.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "sigma levels must be nonempty and positive".into(),
            ));
        }
        Ok(Self { kind, sigma_levels })
    }

    /// Draw one (x_σ, σ) pair.
    pub fn draw(&self, dim: usize, stream: &mut RngStream) -> (Vec<f64>, f64) {
        let sigma = self.sigma_levels[stream.below(self.sigma_levels.len())];
        let x = match &self.kind {
            ProbeKind::DeltaZero => vec![0.0; dim],
            ProbeKind::IsotropicGaussian { sigma_p } => {
                vecops::scale(&stream.gaussian(dim), *sigma_p)
            }
            ProbeKind::AroundSample { x0 } => {
                let eps = stream.gaussian(dim);
                x0.iter().zip(&eps).map(|(a, e)| a + sigma * e).collect()
            }
        };
        (x, sigma)
    }

    /// Mean of σ² over the levels; used by analytic geometry formulas.
    pub fn mean_sigma_sq(&self) -> f64 {
        self.sigma_levels.iter().map(|s| s * s).sum::<f64>() / self.sigma_levels.len() as f64
    }
}

/// Anything whose freshly-initialized output can be probed: draws parameters
/// from the stream and evaluates at (x, σ).
pub trait InitFamily: Sync {
    fn dim(&self) -> usize;
    fn draw_output(&self, stream: &mut RngStream, x: &[f64], sigma: f64) -> Vec<f64>;
    fn descriptor(&self) -> String {
        "family".into()
    }
}

impl InitFamily for NetworkFamily {
    fn dim(&self) -> usize {
        NetworkFamily::dim(self)
    }

    fn draw_output(&self, stream: &mut RngStream, x: &[f64], sigma: f64) -> Vec<f64> {
        let params = self.sample_params(stream);
        self.forward(&params, x, sigma).unwrap_or_else(|_| vec![f64::NAN; NetworkFamily::dim(self)])
    }

    fn descriptor(&self) -> String {
        self.kind_label().to_string()
    }
}

/// Monte Carlo estimate of the average geometry.
#[derive(Clone, Debug)]
pub struct GeometryEstimate {
    /// Symmetric D×D running mean of outer products.
    pub g: Matrix,
    pub n_samples: usize,
    pub n_rejected: usize,
    /// Per-entry Monte Carlo standard error.
    pub standard_error: Matrix,
    pub probe: ProbeDistribution,
    pub family: String,
}

/// Welford accumulator over the packed upper triangle.
struct TriAccum {
    count: usize,
    rejected: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl TriAccum {
    fn new(len: usize) -> Self {
        Self { count: 0, rejected: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn push(&mut self, y: &[f64], dim: usize) {
        if !y.iter().all(|v| v.is_finite()) {
            self.rejected += 1;
            return;
        }
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        let mut k = 0;
        for i in 0..dim {
            let yi = y[i];
            for j in i..dim {
                let v = yi * y[j];
                let delta = v - self.mean[k];
                self.mean[k] += delta * inv;
                self.m2[k] += delta * (v - self.mean[k]);
                k += 1;
            }
        }
    }

    /// Chan-style merge; deterministic because it is always applied in
    /// ascending chunk order.
    fn merge(&mut self, other: &TriAccum) {
        if other.count == 0 {
            self.rejected += other.rejected;
            return;
        }
        if self.count == 0 {
            self.rejected += other.rejected;
            self.count = other.count;
            self.mean.copy_from_slice(&other.mean);
            self.m2.copy_from_slice(&other.m2);
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * (nb / n);
            self.m2[k] += other.m2[k] + delta * delta * (na * nb / n);
        }
        self.count += other.count;
        self.rejected += other.rejected;
    }
}

/// Estimate the average geometry from `n_samples` fresh (θ, x, σ) draws.
pub fn estimate_geometry(
    family: &dyn InitFamily,
    probe: &ProbeDistribution,
    n_samples: usize,
    stream: &RngStream,
) -> Result<GeometryEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let dim = family.dim();
    let tri_len = dim * (dim + 1) / 2;
    let n_chunks = n_samples.div_ceil(CHUNK);

    let partials: Vec<TriAccum> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = TriAccum::new(tri_len);
            let lo = chunk * CHUNK;
            let hi = ((chunk + 1) * CHUNK).min(n_samples);
            let mut s = stream.derive(&[0x67656f6d, chunk as u64]);
            for _ in lo..hi {
                let (x, sigma) = probe.draw(dim, &mut s);
                let y = family.draw_output(&mut s, &x, sigma);
                acc.push(&y, dim);
            }
            acc
        })
        .collect();

    let mut total = TriAccum::new(tri_len);
    for p in &partials {
        total.merge(p);
    }

    if total.count == 0 {
        return Err(Error::Estimation("all samples rejected".into()));
    }
    if (total.rejected as f64) > MAX_REJECT_FRACTION * n_samples as f64 {
        return Err(Error::Estimation(format!(
            "{} of {} samples produced non-finite outputs",
            total.rejected, n_samples
        )));
    }

    let n = total.count;
    let mut g = Matrix::zeros(dim, dim);
    let mut se = Matrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        for j in i..dim {
            g.set(i, j, total.mean[k]);
            g.set(j, i, total.mean[k]);
            let var = if n > 1 { total.m2[k] / (n as f64 - 1.0) } else { 0.0 };
            let e = (var / n as f64).sqrt();
            se.set(i, j, e);
            se.set(j, i, e);
            k += 1;
        }
    }

    Ok(GeometryEstimate {
        g,
        n_samples: n,
        n_rejected: total.rejected,
        standard_error: se,
        probe: probe.clone(),
        family: family.descriptor(),
    })
}

/// Ordered orthonormal score anisotropy directions.
#[derive(Clone, Debug)]
pub struct SadBasis {
    /// Columns are the SADs, ascending eigenvalue order.
    pub directions: Matrix,
    /// Ascending eigenvalues, small negatives clamped to zero.
    pub eigenvalues: Vec<f64>,
}

impl SadBasis {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn direction(&self, k: usize) -> Vec<f64> {
        self.directions.column(k)
    }
}

/// Extract SADs from a geometry estimate.
pub fn extract_sads(g: &GeometryEstimate) -> Result<SadBasis> {
    sads_from_matrix(&g.g)
}

/// SADs of an explicit symmetric PSD matrix: eigenvectors in ascending
/// eigenvalue order with the library's deterministic tie-breaks.
pub fn sads_from_matrix(g: &Matrix) -> Result<SadBasis> {
    let eig = sym_eig(g)?;
    let d = eig.eigenvalues.len();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if let Some(min_ev) = eig.eigenvalues.last() {
        if *min_ev < -PSD_FLOOR * max_ev.max(f64::MIN_POSITIVE) {
            return Err(Error::Estimation(format!(
                "geometry is not positive semidefinite: min eigenvalue {:e}",
                min_ev
            )));
        }
    }
    // Reverse cluster by cluster: eigenvalues become ascending while the
    // deterministic within-cluster order is preserved.
    let scale = max_ev.max(f64::MIN_POSITIVE);
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && (eig.eigenvalues[end - 1] - eig.eigenvalues[end]).abs() <= 1e-8 * scale {
            end += 1;
        }
        blocks.push((start, end));
        start = end;
    }
    let order: Vec<usize> =
        blocks.iter().rev().flat_map(|&(s, e)| (s..e).collect::<Vec<_>>()).collect();

    let mut directions = Matrix::zeros(d, d);
    let mut eigenvalues = Vec::with_capacity(d);
    for (k, &src) in order.iter().enumerate() {
        directions.set_column(k, &eig.eigenvectors.column(src));
        eigenvalues.push(eig.eigenvalues[src].max(0.0));
    }
    Ok(SadBasis { directions, eigenvalues })
}

/// Markov bound on the probability of a large directional derivative:
/// vᵀ G v / η².
pub fn markov_bound(v: &[f64], g: &GeometryEstimate, eta: f64) -> Result<f64> {
    if eta <= 0.0 {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let norm = vecops::norm2(v);
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!("v must be unit norm, got {}", norm)));
    }
    let gv = g.g.matvec(v)?;
    Ok(vecops::dot(v, &gv) / (eta * eta))
}

/// Number of distinct eigenvalues under single-linkage clustering with a
/// relative gap tolerance. Input must be sorted (either direction).
pub fn distinct_eigenvalue_count(eigenvalues: &[f64], rel_tol: f64) -> usize {
    if eigenvalues.is_empty() {
        return 0;
    }
    let scale = eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
    let mut clusters = 1;
    for w in eigenvalues.windows(2) {
        if (w[1] - w[0]).abs() > rel_tol * scale {
            clusters += 1;
        }
    }
    clusters
}

/// Analytic geometry structures for the three architecture classes.
#[derive(Clone, Debug)]
pub enum AnalyticGeometrySpec {
    /// α·I + β·𝟙𝟙ᵀ from the conditional moments of one output unit.
    MlpLastLayer { dim: usize, var: f64, mean_sq: f64 },
    /// I_{c_out} ⊗ A + 𝟙𝟙ᵀ_{c_out} ⊗ B.
    ConvLastLayer { c_out: usize, a: Matrix, b: Matrix },
    /// Q [(σ_W²·E[hhᵀ] + σ_b²·I_T) ⊗ I_{l_out}] Qᵀ.
    TokenLinear { q: Matrix, e_hht: Matrix, sigma_w2: f64, sigma_b2: f64, l_out: usize },
}

pub fn analytic_geometry(spec: &AnalyticGeometrySpec) -> Result<Matrix> {
    match spec {
        AnalyticGeometrySpec::MlpLastLayer { dim, var, mean_sq } => {
            let mut g = Matrix::zeros(*dim, *dim);
            for i in 0..*dim {
                for j in 0..*dim {
                    g.set(i, j, mean_sq + if i == j { *var } else { 0.0 });
                }
            }
            Ok(g)
        }
        AnalyticGeometrySpec::ConvLastLayer { c_out, a, b } => {
            if !a.is_square() || a.rows() != b.rows() || !b.is_square() {
                return Err(Error::Dimension(
                    "conv geometry blocks must be square and equal size".into(),
                ));
            }
            let ones = Matrix::from_fn(*c_out, *c_out, |_, _| 1.0);
            Matrix::identity(*c_out).kron(a).add(&ones.kron(b))
        }
        AnalyticGeometrySpec::TokenLinear { q, e_hht, sigma_w2, sigma_b2, l_out } => {
            if !e_hht.is_square() {
                return Err(Error::Dimension("E[hhᵀ] must be square".into()));
            }
            let t = e_hht.rows();
            let inner = e_hht
                .scale(*sigma_w2)
                .add(&Matrix::identity(t).scale(*sigma_b2))?
                .kron(&Matrix::identity(*l_out));
            if q.rows() != t * l_out {
                return Err(Error::Dimension("unpatchify dimension mismatch".into()));
            }
            q.matmul(&inner)?.matmul(&q.transpose())
        }
    }
}

/// Mean and second moment of φ(g) for g ~ N(mean, std²), via 64-point
/// Gauss-Hermite quadrature. Nodes come from the Golub-Welsch
/// eigendecomposition of the Jacobi matrix, reusing the library eigensolver.
pub fn activation_moments(act: Activation, mean: f64, std: f64) -> (f64, f64) {
    let (nodes, weights) = gauss_hermite_64();
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        // Change of variables g = mean + std·√2·x; the 1/√π factor is folded
        // into the normalized weights.
        let g = mean + std * std::f64::consts::SQRT_2 * x;
        let z = act.eval(g);
        m1 += w * z;
        m2 += w * z * z;
    }
    (m1, m2)
}

fn gauss_hermite_64() -> (Vec<f64>, Vec<f64>) {
    // Jacobi matrix for Hermite polynomials: off-diagonal b_k = sqrt(k/2).
    let n = 64;
    let mut j = Matrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j.set(k - 1, k, b);
        j.set(k, k - 1, b);
    }
    let eig = sym_eig(&j).expect("Jacobi matrix is symmetric");
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    // Weight is the squared first component of each eigenvector; normalized
    // so the weights sum to one.
    for k in 0..n {
        nodes.push(eig.eigenvalues[k]);
        let v0 = eig.eigenvectors.get(0, k);
        weights.push(v0 * v0);
    }
    (nodes, weights)
}

/// Last-layer family z = φ(W·h + b) with a fixed feature vector h; the
/// structural setting of the MLP geometry result.
#[derive(Clone, Debug)]
pub struct DenseLastLayer {
    pub dim: usize,
    pub hidden: Vec<f64>,
    pub activation: Activation,
    pub weight_std: f64,
    pub bias_mean: f64,
    pub bias_std: f64,
}

impl DenseLastLayer {
    /// Exact geometry from conditional moments (Gauss-Hermite for the
    /// nonlinear activations).
    pub fn analytic(&self) -> Matrix {
        let s2 = self.weight_std * self.weight_std * vecops::dot(&self.hidden, &self.hidden)
            + self.bias_std * self.bias_std;
        let (m1, m2) = activation_moments(self.activation, self.bias_mean, s2.sqrt());
        analytic_geometry(&AnalyticGeometrySpec::MlpLastLayer {
            dim: self.dim,
            var: m2 - m1 * m1,
            mean_sq: m1 * m1,
        })
        .expect("static shape")
    }
}

impl InitFamily for DenseLastLayer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw_output(&self, stream: &mut RngStream, _x: &[f64], _sigma: f64) -> Vec<f64> {
        let l = self.hidden.len();
        let mut out = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            let w = stream.gaussian(l);
            let b = self.bias_mean + self.bias_std * stream.normal();
            let pre = self.weight_std * vecops::dot(&w, &self.hidden) + b;
            out.push(self.activation.eval(pre));
        }
        out
    }

    fn descriptor(&self) -> String {
        "dense_last_layer".into()
    }
}

/// Last-layer convolution family z = conv(h) + b with a fixed input image
/// and identity activation; the structural setting of the CNN geometry
/// result. Zero padding, 3×3 kernels, one shared scalar bias per channel.
#[derive(Clone, Debug)]
pub struct ConvLastLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    /// Fixed input image (c_in × height × width).
    pub input: Vec<f64>,
    pub weight_std: f64,
    pub bias_mean: f64,
    pub bias_std: f64,
}

impl ConvLastLayer {
    fn l(&self) -> usize {
        self.height * self.width
    }

    /// Patch of the input seen by output position p, flattened over
    /// (c_in, ky, kx) with zeros outside the grid.
    fn patch(&self, p: usize) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let (y, x) = (p / w, p % w);
        let mut out = Vec::with_capacity(self.c_in * 9);
        for c in 0..self.c_in {
            for ky in 0..3isize {
                for kx in 0..3isize {
                    let sy = y as isize + ky - 1;
                    let sx = x as isize + kx - 1;
                    if sy >= 0 && (sy as usize) < h && sx >= 0 && (sx as usize) < w {
                        out.push(self.input[c * h * w + sy as usize * w + sx as usize]);
                    } else {
                        out.push(0.0);
                    }
                }
            }
        }
        out
    }

    /// Exact A and B blocks: Cov(z_a, z_b) = σ_W²·⟨patch_a, patch_b⟩ + σ_b²
    /// and the conditional mean is μ_b at every position.
    pub fn analytic_blocks(&self) -> (Matrix, Matrix) {
        let l = self.l();
        let mut a = Matrix::zeros(l, l);
        let patches: Vec<Vec<f64>> = (0..l).map(|p| self.patch(p)).collect();
        for i in 0..l {
            for j in 0..l {
                let cov = self.weight_std * self.weight_std * vecops::dot(&patches[i], &patches[j])
                    + self.bias_std * self.bias_std;
                a.set(i, j, cov);
            }
        }
        let b = Matrix::from_fn(l, l, |_, _| self.bias_mean * self.bias_mean);
        (a, b)
    }

    pub fn analytic(&self) -> Matrix {
        let (a, b) = self.analytic_blocks();
        analytic_geometry(&AnalyticGeometrySpec::ConvLastLayer { c_out: self.c_out, a, b })
            .expect("static shape")
    }
}

impl InitFamily for ConvLastLayer {
    fn dim(&self) -> usize {
        self.c_out * self.l()
    }

    fn draw_output(&self, stream: &mut RngStream, _x: &[f64], _sigma: f64) -> Vec<f64> {
        let l = self.l();
        let mut weights = stream.gaussian(self.c_out * self.c_in * 9);
        for v in weights.iter_mut() {
            *v *= self.weight_std;
        }
        let mut out = vec![0.0; self.c_out * l];
        for o in 0..self.c_out {
            let b = self.bias_mean + self.bias_std * stream.normal();
            let k = &weights[o * self.c_in * 9..(o + 1) * self.c_in * 9];
            for p in 0..l {
                out[o * l + p] = b + vecops::dot(k, &self.patch(p));
            }
        }
        out
    }

    fn descriptor(&self) -> String {
        "conv_last_layer".into()
    }
}

/// Exact geometry of a [`crate::networks::TokenLinearFamily`] under a probe:
/// E[hhᵀ] over tokens has entries h̄ᵢᵀh̄ⱼ + E[σ²]·L·δᵢⱼ because patchify
/// routes disjoint probe-noise coordinates to different tokens.
///
/// With per-token independent biases this is the canonical
/// Q[(σ_W²·E[hhᵀ] + σ_b²·I)⊗I]Qᵀ structure; a bias shared across tokens
/// contributes σ_b²·𝟙𝟙ᵀ_T instead of σ_b²·I_T, which still has at most T
/// distinct eigenvalues.
pub fn token_linear_analytic(
    family: &crate::networks::TokenLinearFamily,
    probe: &ProbeDistribution,
) -> Result<Matrix> {
    let t = family.n_tokens();
    let l = family.token_len();
    let (x0, noise_var) = match &probe.kind {
        ProbeKind::DeltaZero => (vec![0.0; family.dim()], 0.0),
        ProbeKind::IsotropicGaussian { sigma_p } => (vec![0.0; family.dim()], sigma_p * sigma_p),
        ProbeKind::AroundSample { x0 } => (x0.clone(), probe.mean_sigma_sq()),
    };
    let q = family.unpatchify_matrix();
    // Token means: h̄ = patchify(x₀) = Qᵀ·x₀.
    let tokens = q.vecmat(&x0)?;
    let mut e_hht = Matrix::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            let hi = &tokens[i * l..(i + 1) * l];
            let hj = &tokens[j * l..(j + 1) * l];
            let mut v = vecops::dot(hi, hj);
            if i == j {
                v += noise_var * l as f64;
            }
            e_hht.set(i, j, v);
        }
    }
    let sigma_w2 = family.weight_std * family.weight_std;
    let sigma_b2 = family.bias_std * family.bias_std;
    if family.per_token_bias {
        analytic_geometry(&AnalyticGeometrySpec::TokenLinear { q, e_hht, sigma_w2, sigma_b2, l_out: l })
    } else {
        let ones = Matrix::from_fn(t, t, |_, _| 1.0);
        let inner =
            e_hht.scale(sigma_w2).add(&ones.scale(sigma_b2))?.kron(&Matrix::identity(l));
        q.matmul(&inner)?.matmul(&q.transpose())
    }
}
