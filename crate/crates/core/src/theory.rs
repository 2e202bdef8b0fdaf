//! Closed-form validators for linear denoising score matching: the optimal
//! linear score, the deterministic GD error recursion with its predicted
//! per-direction rates, and per-sample SGD with its stationary
//! gradient-noise covariance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sym_eig, vecops, Matrix, RngStream};

/// Optimal linear score for data N(0, vvᵀ) at noise level σ:
/// Ω* = (vvᵀ/(σ²+1) − I)/σ² = −(vvᵀ + σ²I)⁻¹.
pub fn optimal_score(v: &[f64], sigma: f64) -> Result<Matrix> {
    check_unit(v)?;
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    let d = v.len();
    let s2 = sigma * sigma;
    let mut m = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let vv = v[i] * v[j] / (s2 + 1.0);
            let id = if i == j { 1.0 } else { 0.0 };
            m.set(i, j, (vv - id) / s2);
        }
    }
    Ok(m)
}

/// Max-abs entry of Ω·(vvᵀ + σ²I) + I; zero at the stationary point.
pub fn stationarity_residual(omega: &Matrix, v: &[f64], sigma: f64) -> Result<f64> {
    let d = v.len();
    let s2 = sigma * sigma;
    let mut cov = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            cov.set(i, j, v[i] * v[j] + if i == j { s2 } else { 0.0 });
        }
    }
    let prod = omega.matmul(&cov)?;
    let resid = prod.add(&Matrix::identity(d))?;
    Ok(resid.max_abs())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsmMode {
    /// Deterministic recursion on the mean error.
    GdMean,
    /// Per-sample stochastic gradients; `batch` fresh (x, ε) pairs per step.
    Sgd { batch: usize, theta0_std: f64 },
}

#[derive(Clone, Debug)]
pub struct LinearDsmConfig {
    pub phi: Matrix,
    pub v: Vec<f64>,
    pub sigma: f64,
    pub eta: f64,
    pub steps: usize,
    pub mode: DsmMode,
    pub seed: u64,
}

impl LinearDsmConfig {
    fn validate(&self) -> Result<()> {
        if !self.phi.is_square() || self.phi.rows() != self.v.len() {
            return Err(Error::Dimension("phi and v sizes disagree".into()));
        }
        check_unit(&self.v)?;
        if self.sigma <= 0.0 || self.eta <= 0.0 {
            return Err(Error::InvalidArgument("sigma and eta must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step Frobenius error ‖Ω_t − Ω*‖_F with a log-linear rate fitted to
/// the final third of the trace.
#[derive(Clone, Debug)]
pub struct ErrorTrace {
    pub errors: Vec<f64>,
    /// exp(slope) of the least-squares fit of ln error, i.e. the per-step
    /// decay multiplier.
    pub fitted_rate: Option<f64>,
}

impl ErrorTrace {
    /// Least-squares slope of ln(error) over the window [lo, hi).
    pub fn fit_rate(errors: &[f64], lo: usize, hi: usize) -> Option<f64> {
        let hi = hi.min(errors.len());
        if hi <= lo + 1 {
            return None;
        }
        let pts: Vec<(f64, f64)> = (lo..hi)
            .filter(|&t| errors[t] > 0.0 && errors[t].is_finite())
            .map(|t| (t as f64, errors[t].ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom == 0.0 {
            return None;
        }
        Some(((n * sxy - sx * sy) / denom).exp())
    }
}

/// Deterministic mean-error recursion E_t = E_{t−1} − 2η·ΦΦᵀ·E_{t−1}·(vvᵀ+σ²I)
/// from E₀ = −Ω* (zero-mean initialization).
pub fn gd_mean_trace(config: &LinearDsmConfig) -> Result<ErrorTrace> {
    config.validate()?;
    if !matches!(config.mode, DsmMode::GdMean) {
        return Err(Error::InvalidArgument("gd_mean_trace needs mode = gd_mean".into()));
    }
    let d = config.v.len();
    let phi_phit = config.phi.matmul(&config.phi.transpose())?;
    // Stability: the update multipliers are 1 − 2η·ν·λ over eigenvalues ν of
    // (vvᵀ+σ²I) and λ of ΦΦᵀ; require spectral radius < 1.
    let lam_max = sym_eig(&phi_phit)?.eigenvalues[0];
    let nu_max = config.sigma * config.sigma + 1.0;
    if 2.0 * config.eta * nu_max * lam_max >= 2.0 {
        return Err(Error::InvalidArgument(format!(
            "eta {} too large: spectral radius of the GD update exceeds 1",
            config.eta
        )));
    }

    let s2 = config.sigma * config.sigma;
    let mut cov = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            cov.set(i, j, config.v[i] * config.v[j] + if i == j { s2 } else { 0.0 });
        }
    }
    let omega_star = optimal_score(&config.v, config.sigma)?;
    let mut e = omega_star.scale(-1.0);
    let mut errors = Vec::with_capacity(config.steps + 1);
    errors.push(e.frob_norm());
    for _ in 0..config.steps {
        let update = phi_phit.matmul(&e)?.matmul(&cov)?;
        e = e.sub(&update.scale(2.0 * config.eta))?;
        let norm = e.frob_norm();
        if !norm.is_finite() {
            return Err(Error::Divergence { step: errors.len(), loss: norm, trace: vec![] });
        }
        errors.push(norm);
    }
    let lo = errors.len() * 2 / 3;
    let fitted_rate = ErrorTrace::fit_rate(&errors, lo, errors.len());
    Ok(ErrorTrace { errors, fitted_rate })
}

/// Predicted GD rate constant ρ_i = min[(σ²+1)·λ_i, σ²·min_{j≠i} λ_j] for
/// data aligned with eigenvector u_i of ΦΦᵀ. `i` is 1-based in descending
/// eigenvalue order; requires λ_{D−1} > λ_D > 0.
pub fn predicted_rate(eigvals_desc: &[f64], i: usize, sigma: f64) -> Result<f64> {
    let d = eigvals_desc.len();
    if i == 0 || i > d {
        return Err(Error::InvalidArgument(format!("index {} out of range 1..={}", i, d)));
    }
    if eigvals_desc.iter().any(|l| *l <= 0.0) {
        return Err(Error::InvalidArgument("eigenvalues must be positive".into()));
    }
    if d >= 2 && eigvals_desc[d - 2] <= eigvals_desc[d - 1] {
        return Err(Error::InvalidArgument(
            "rate prediction requires λ_{D-1} > λ_D (anisotropy vanishes at equality)".into(),
        ));
    }
    let s2 = sigma * sigma;
    let lam_i = eigvals_desc[i - 1];
    let min_other = eigvals_desc
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i - 1)
        .map(|(_, l)| *l)
        .fold(f64::INFINITY, f64::min);
    Ok(((s2 + 1.0) * lam_i).min(s2 * min_other))
}

/// Stochastic gradient of the per-sample DSM objective at Θ:
/// ∇ = 2Φᵀ(ΦΘ·q + ε/σ)·qᵀ with q = x + σ·ε.
fn sgd_gradient(
    phi: &Matrix,
    omega: &Matrix,
    q: &[f64],
    eps: &[f64],
    sigma: f64,
) -> Result<Matrix> {
    let mut inner = omega.matvec(q)?;
    for (iv, e) in inner.iter_mut().zip(eps) {
        *iv += e / sigma;
    }
    let p = phi.vecmat(&inner)?;
    Ok(vecops::outer(&p, q).scale(2.0))
}

#[derive(Clone, Debug)]
pub struct SgdOutcome {
    pub trace: ErrorTrace,
    /// Mean error over the final 20% of steps.
    pub stationary_error: f64,
}

/// Per-sample SGD on the linear DSM model with data x = g·v, g ~ N(0, 1).
pub fn sgd_simulate(config: &LinearDsmConfig) -> Result<SgdOutcome> {
    config.validate()?;
    let (batch, theta0_std) = match config.mode {
        DsmMode::Sgd { batch, theta0_std } => (batch.max(1), theta0_std),
        _ => return Err(Error::InvalidArgument("sgd_simulate needs mode = sgd".into())),
    };
    let d = config.v.len();
    let omega_star = optimal_score(&config.v, config.sigma)?;
    let mut stream = RngStream::new(config.seed, 0x7367_64);
    let mut theta = Matrix::from_vec(
        d,
        d,
        stream.gaussian(d * d).iter().map(|g| g * theta0_std).collect(),
    )?;

    let mut errors = Vec::with_capacity(config.steps + 1);
    let mut omega = config.phi.matmul(&theta)?;
    errors.push(omega.sub(&omega_star)?.frob_norm());
    for step in 0..config.steps {
        let mut grad = Matrix::zeros(d, d);
        for _ in 0..batch {
            let g = stream.normal();
            let eps = stream.gaussian(d);
            let q: Vec<f64> =
                config.v.iter().zip(&eps).map(|(vi, e)| g * vi + config.sigma * e).collect();
            let sample = sgd_gradient(&config.phi, &omega, &q, &eps, config.sigma)?;
            grad = grad.add(&sample)?;
        }
        grad = grad.scale(1.0 / batch as f64);
        theta = theta.sub(&grad.scale(config.eta))?;
        omega = config.phi.matmul(&theta)?;
        let err = omega.sub(&omega_star)?.frob_norm();
        if !err.is_finite() {
            return Err(Error::Divergence { step, loss: err, trace: vec![] });
        }
        errors.push(err);
    }
    let tail_start = (errors.len() as f64 * 0.8) as usize;
    let stationary_error =
        errors[tail_start..].iter().sum::<f64>() / (errors.len() - tail_start) as f64;
    // Rate fit over the pre-plateau segment (first fifth after start).
    let fitted_rate = ErrorTrace::fit_rate(&errors, 0, errors.len() / 5);
    Ok(SgdOutcome { trace: ErrorTrace { errors, fitted_rate }, stationary_error })
}

/// Monte Carlo estimate of the stochastic-gradient covariance trace at the
/// optimum, with the closed-form comparison value
/// tr = 4/(σ²(σ²+1))·(1 + σ²·D)·λ where λ = vᵀΦΦᵀv.
#[derive(Clone, Debug)]
pub struct GradCovEstimate {
    pub mc_trace: f64,
    pub mc_standard_error: f64,
    pub closed_form: f64,
}

pub fn stochastic_grad_covariance(
    phi: &Matrix,
    v: &[f64],
    sigma: f64,
    n_samples: usize,
    stream: &mut RngStream,
) -> Result<GradCovEstimate> {
    check_unit(v)?;
    let d = v.len();
    let omega_star = optimal_score(v, sigma)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let g = stream.normal();
        let eps = stream.gaussian(d);
        let q: Vec<f64> = v.iter().zip(&eps).map(|(vi, e)| g * vi + sigma * e).collect();
        let grad = sgd_gradient(phi, &omega_star, &q, &eps, sigma)?;
        // The gradient is zero-mean at the optimum, so E‖∇‖²_F is the
        // covariance trace.
        let sq = grad.frob_norm().powi(2);
        sum += sq;
        sum_sq += sq * sq;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let s2 = sigma * sigma;
    let phi_phit = phi.matmul(&phi.transpose())?;
    let lam = vecops::dot(v, &phi_phit.matvec(v)?);
    let closed_form = 4.0 / (s2 * (s2 + 1.0)) * (1.0 + s2 * d as f64) * lam;
    Ok(GradCovEstimate { mc_trace: mean, mc_standard_error: (var / n).sqrt(), closed_form })
}

fn check_unit(v: &[f64]) -> Result<()> {
    let n = vecops::norm2(v);
    if (n - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!("v must be unit norm, got {}", n)));
    }
    Ok(())
}

/// The standard five-eigenvalue test conditioning Φ = diag(√5, √4, √3, √2, 1).
pub fn reference_phi() -> Matrix {
    Matrix::diag(&[5.0f64.sqrt(), 2.0, 3.0f64.sqrt(), 2.0f64.sqrt(), 1.0])
}
