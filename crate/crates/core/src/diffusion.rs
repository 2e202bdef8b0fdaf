//! Denoising score matching under the noise-prediction convention, with a
//! linear noise schedule, SGD/Adam training, ancestral sampling, and
//! annealed Langevin dynamics.
//!
//! Networks predict the injected noise from the variance-preserving state,
//! ε̂ = F(x_t, σ_t) with x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε, which keeps inputs
//! well-conditioned across the whole σ range. x_t is an invertible
//! rescaling of the noised sample x₀ + σ_t·ε (by √ᾱ_t, with
//! σ_t = √((1−ᾱ_t)/ᾱ_t)), and the score in those coordinates is
//! s = −ε̂/σ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataLayout, Dataset};
use crate::error::{Error, Result};
use crate::networks::{NetworkFamily, ParamSet};
use crate::numerics::{vecops, Matrix, RngStream};

#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Cumulative products ᾱ_t, indexed from t = 1 at position 0.
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn n_steps(&self) -> usize {
        self.betas.len()
    }

    /// VE-equivalent noise level at step t (1-based).
    pub fn sigma(&self, t: usize) -> f64 {
        let ab = self.alpha_bars[t - 1];
        ((1.0 - ab) / ab).sqrt()
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma(1)
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma(self.n_steps())
    }

    /// All σ levels in step order.
    pub fn sigma_levels(&self) -> Vec<f64> {
        (1..=self.n_steps()).map(|t| self.sigma(t)).collect()
    }
}

/// Linear β schedule with ᾱ_t = Π(1−β_s).
pub fn make_schedule(n_steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if n_steps < 2 {
        return Err(Error::InvalidArgument("schedule needs at least 2 steps".into()));
    }
    if !(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_min < beta_max < 1, got {} and {}",
            beta_min, beta_max
        )));
    }
    let n = n_steps as f64;
    let betas: Vec<f64> =
        (0..n_steps).map(|t| beta_min + (beta_max - beta_min) * t as f64 / (n - 1.0)).collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(n_steps);
    let mut prod = 1.0;
    for a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule { betas, alphas, alpha_bars })
}

/// Desk-scale schedule: β endpoints of the canonical 1000-step linear
/// schedule rescaled so the terminal ᾱ stays near pure noise at any step
/// count.
pub fn desk_schedule(n_steps: usize) -> Result<NoiseSchedule> {
    let scale = 1000.0 / n_steps as f64;
    make_schedule(n_steps, (1e-4 * scale).min(0.01), (0.02 * scale).min(0.5))
}

/// Anything that predicts the injected noise from the variance-preserving
/// state x_t at VE-equivalent level σ.
pub trait EpsPredictor: Sync {
    fn dim(&self) -> usize;
    fn predict(&self, x_t: &[f64], sigma: f64) -> Vec<f64>;

    /// Evaluate from the variance-exploding state x₀ + σ·ε instead; the two
    /// are related by x_t = x_ve/√(1+σ²).
    fn predict_ve(&self, x_ve: &[f64], sigma: f64) -> Vec<f64> {
        let x_t = vecops::scale(x_ve, 1.0 / (1.0 + sigma * sigma).sqrt());
        self.predict(&x_t, sigma)
    }
}

/// A trained (or freshly sampled) network family as a predictor.
pub struct NetworkPredictor<'a> {
    pub family: &'a NetworkFamily,
    pub params: &'a ParamSet,
}

impl EpsPredictor for NetworkPredictor<'_> {
    fn dim(&self) -> usize {
        self.family.dim()
    }

    fn predict(&self, x_t: &[f64], sigma: f64) -> Vec<f64> {
        self.family
            .forward(self.params, x_t, sigma)
            .unwrap_or_else(|_| vec![f64::NAN; self.family.dim()])
    }
}

/// Exact noise predictor for N(0, d·vvᵀ) data: with p_σ = N(0, d·vvᵀ+σ²I),
/// E[ε | x_σ] = −σ·∇log p_σ(x_σ) = σ·(d·vvᵀ+σ²I)⁻¹·x_σ, expanded by
/// Sherman-Morrison. `scale = 0` degenerates to the pure-noise case ε̂ = x/σ.
pub struct RankOneOracle {
    pub v: Vec<f64>,
    pub scale: f64,
}

impl EpsPredictor for RankOneOracle {
    fn dim(&self) -> usize {
        self.v.len()
    }

    fn predict(&self, x_t: &[f64], sigma: f64) -> Vec<f64> {
        let x_ve = vecops::scale(x_t, (1.0 + sigma * sigma).sqrt());
        let s2 = sigma * sigma;
        let vx = vecops::dot(&self.v, &x_ve);
        let coef = self.scale * vx / (s2 + self.scale);
        x_ve.iter().zip(&self.v).map(|(x, v)| (x - coef * v) / sigma).collect()
    }
}

/// Exact noise predictor for isotropic Gaussian data N(0, s²·I):
/// ε̂ = σ·x_ve/(s² + σ²).
pub struct IsotropicGaussianOracle {
    pub dim: usize,
    pub data_var: f64,
}

impl EpsPredictor for IsotropicGaussianOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x_t: &[f64], sigma: f64) -> Vec<f64> {
        let c = sigma * (1.0 + sigma * sigma).sqrt() / (self.data_var + sigma * sigma);
        vecops::scale(x_t, c)
    }
}

/// One sample's contribution to the DSM batch: the noisy network input
/// (variance-preserving state), its noise level, and the loss cotangent
/// with respect to the network output.
#[derive(Clone, Debug)]
pub struct DsmSample {
    pub x_t: Vec<f64>,
    pub sigma: f64,
    pub cotangent: Vec<f64>,
}

/// Monte Carlo DSM batch loss (mean of ‖ε̂ − ε‖²) plus per-sample output
/// cotangents of that mean.
pub fn dsm_loss(
    family: &NetworkFamily,
    params: &ParamSet,
    data: &Dataset,
    indices: &[usize],
    schedule: &NoiseSchedule,
    stream: &mut RngStream,
) -> Result<(f64, Vec<DsmSample>)> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("dsm_loss needs a nonempty batch".into()));
    }
    let d = family.dim();
    if data.dim() != d {
        return Err(Error::Dimension("dataset dimension does not match family".into()));
    }
    let b = indices.len() as f64;
    let mut loss = 0.0;
    let mut samples = Vec::with_capacity(indices.len());
    for &idx in indices {
        let x0 = data.row(idx);
        let t = 1 + stream.below(schedule.n_steps());
        let sigma = schedule.sigma(t);
        let ab = schedule.alpha_bars[t - 1];
        let (c0, c1) = (ab.sqrt(), (1.0 - ab).sqrt());
        let eps = stream.gaussian(d);
        let x_sigma: Vec<f64> = x0.iter().zip(&eps).map(|(x, e)| c0 * x + c1 * e).collect();
        let eps_hat = family.forward(params, &x_sigma, sigma)?;
        let mut sample_loss = 0.0;
        let mut cot = vec![0.0; d];
        for i in 0..d {
            let r = eps_hat[i] - eps[i];
            sample_loss += r * r;
            cot[i] = 2.0 * r / b;
        }
        if !sample_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "dsm loss at sample {} with sigma {}",
                idx, sigma
            )));
        }
        loss += sample_loss / b;
        samples.push(DsmSample { x_t: x_sigma, sigma, cotangent: cot });
    }
    Ok((loss, samples))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Loss is recorded into the logged trace every this many steps.
    pub log_every: usize,
}

impl TrainConfig {
    pub fn new(batch_size: usize, iterations: usize, learning_rate: f64) -> Self {
        Self {
            batch_size,
            iterations,
            learning_rate,
            optimizer: Optimizer::Adam,
            seed: 0,
            log_every: 100,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.learning_rate <= 0.0 || self.log_every == 0 {
            return Err(Error::InvalidArgument("train config fields must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainTrace {
    /// (step, loss) every `log_every` steps.
    pub logged: Vec<(usize, f64)>,
    /// Loss at every step.
    pub step_losses: Vec<f64>,
    pub final_params: ParamSet,
    pub wall_seconds: f64,
}

const DIVERGENCE_LOSS: f64 = 1e6;

struct AdamState {
    m: ParamSet,
    v: ParamSet,
    t: usize,
}

/// Minibatch DSM training from a fresh initialization. Deterministic in
/// `config.seed`: two identical calls produce bitwise-identical traces.
pub fn train(
    family: &NetworkFamily,
    dataset: &Dataset,
    config: &TrainConfig,
    schedule: &NoiseSchedule,
) -> Result<TrainTrace> {
    config.validate()?;
    if dataset.dim() != family.dim() {
        return Err(Error::Dimension("dataset dimension does not match family".into()));
    }
    let start = std::time::Instant::now();
    let mut init_stream = RngStream::new(config.seed, 0x696e6974);
    let mut params = family.sample_params(&mut init_stream);
    let mut batch_stream = RngStream::new(config.seed, 0x7472_6169);

    let mut adam = AdamState { m: params.zero_like(), v: params.zero_like(), t: 0 };
    let mut logged = Vec::new();
    let mut step_losses = Vec::with_capacity(config.iterations);

    for step in 0..config.iterations {
        let indices: Vec<usize> =
            (0..config.batch_size).map(|_| batch_stream.below(dataset.n())).collect();
        let (loss, samples) =
            dsm_loss(family, &params, dataset, &indices, schedule, &mut batch_stream)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { step, loss, trace: logged });
        }
        step_losses.push(loss);
        if step % config.log_every == 0 {
            logged.push((step, loss));
        }

        // Accumulate parameter gradients in fixed sample order.
        let mut grad = params.zero_like();
        for s in &samples {
            let g = family.backward(&params, &s.x_t, s.sigma, &s.cotangent)?;
            grad.axpy(1.0, &g)?;
        }

        match config.optimizer {
            Optimizer::Sgd => {
                params.axpy(-config.learning_rate, &grad)?;
            }
            Optimizer::Adam => {
                adam.t += 1;
                let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                let bc1 = 1.0 - b1f64_pow(b1, adam.t);
                let bc2 = 1.0 - b1f64_pow(b2, adam.t);
                for ((pt, mt), (vt, gt)) in params
                    .tensors
                    .iter_mut()
                    .zip(adam.m.tensors.iter_mut())
                    .zip(adam.v.tensors.iter_mut().zip(&grad.tensors))
                {
                    for ((p, m), (v, g)) in
                        pt.data.iter_mut().zip(mt.data.iter_mut()).zip(vt.data.iter_mut().zip(&gt.data))
                    {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *p -= config.learning_rate * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        if !params.all_finite() {
            return Err(Error::Divergence { step, loss: f64::INFINITY, trace: logged });
        }
    }

    if config.iterations == 0 || (config.iterations - 1) % config.log_every != 0 {
        if let Some(last) = step_losses.last() {
            logged.push((config.iterations - 1, *last));
        }
    }

    Ok(TrainTrace {
        logged,
        step_losses,
        final_params: params,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[inline]
fn b1f64_pow(base: f64, exp: usize) -> f64 {
    base.powi(exp as i32)
}

/// Standard ancestral chain from the Gaussian prior. Chains are independent
/// and parallelized; chain i derives its own stream, so results do not
/// depend on worker count.
pub fn sample_ancestral(
    predictor: &dyn EpsPredictor,
    schedule: &NoiseSchedule,
    n: usize,
    stream: &RngStream,
) -> Result<Dataset> {
    let d = predictor.dim();
    if n == 0 {
        // An explicitly empty dataset; bypasses the n >= 1 constructor.
        return Ok(Dataset {
            samples: Matrix::zeros(0, d),
            layout: DataLayout::Flat { dim: d },
            provenance: "ancestral(empty)".into(),
        });
    }
    let t_max = schedule.n_steps();
    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|chain| {
            let mut s = stream.derive(&[0x616e63, chain as u64]);
            let mut x = s.gaussian(d);
            for t in (1..=t_max).rev() {
                let ab = schedule.alpha_bars[t - 1];
                let a = schedule.alphas[t - 1];
                let beta = schedule.betas[t - 1];
                let sigma_t = schedule.sigma(t);
                let eps_hat = predictor.predict(&x, sigma_t);
                let coef = beta / (1.0 - ab).sqrt();
                let inv_sqrt_a = 1.0 / a.sqrt();
                for i in 0..d {
                    x[i] = inv_sqrt_a * (x[i] - coef * eps_hat[i]);
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "ancestral chain {} diverged at step {}",
                        chain, t
                    )));
                }
                if t > 1 {
                    let ab_prev = schedule.alpha_bars[t - 2];
                    let beta_tilde = beta * (1.0 - ab_prev) / (1.0 - ab);
                    let noise_scale = beta_tilde.sqrt();
                    let z = s.gaussian(d);
                    for i in 0..d {
                        x[i] += noise_scale * z[i];
                    }
                }
            }
            Ok(x)
        })
        .collect();

    let mut samples = Matrix::zeros(n, d);
    for (i, row) in rows.into_iter().enumerate() {
        samples.row_mut(i).copy_from_slice(&row?);
    }
    Dataset::new(samples, DataLayout::Flat { dim: d }, "ancestral")
}

/// Langevin iterations x ← x + (η/2)·score(x) + √η·z. Returns the full
/// trajectory including the start point.
pub fn sample_langevin(
    score: impl Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    eta: f64,
    k: usize,
    stream: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    if eta <= 0.0 {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one iteration".into()));
    }
    let d = x0.len();
    let sqrt_eta = eta.sqrt();
    let mut traj = Vec::with_capacity(k + 1);
    traj.push(x0.to_vec());
    let mut x = x0.to_vec();
    for step in 0..k {
        let s = score(&x);
        let z = stream.gaussian(d);
        for i in 0..d {
            x[i] += 0.5 * eta * s[i] + sqrt_eta * z[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("langevin iterate at step {}", step)));
        }
        traj.push(x.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::LinearFamily;

    #[test]
    fn schedule_canonical_values() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        assert!((s.alpha_bars[0] - 0.9999).abs() < 1e-12);
        assert!(s.alpha_bars[999] < 1e-3, "terminal alpha_bar {}", s.alpha_bars[999]);
        // σ strictly increasing.
        for t in 1..1000 {
            assert!(s.sigma(t + 1) > s.sigma(t));
        }
        assert!(make_schedule(1, 1e-4, 0.02).is_err());
        assert!(make_schedule(10, 0.02, 1e-4).is_err());
    }

    #[test]
    fn zero_network_loss_equals_dimension() {
        // F ≡ 0 ⇒ loss = E‖ε‖² = D.
        let fam = NetworkFamily::Linear(LinearFamily::new(Matrix::identity(2)).unwrap());
        let mut params = fam.sample_params(&mut RngStream::new(1, 0));
        params.get_mut("theta").unwrap().data.fill(0.0);
        let data = Dataset::new(
            Matrix::zeros(1, 2).add(&Matrix::zeros(1, 2)).unwrap(),
            DataLayout::Flat { dim: 2 },
            "origin",
        )
        .unwrap();
        let schedule = make_schedule(100, 1e-4, 0.02).unwrap();
        let mut stream = RngStream::new(2, 0);
        let indices: Vec<usize> = vec![0; 4000];
        let (loss, _) = dsm_loss(&fam, &params, &data, &indices, &schedule, &mut stream).unwrap();
        assert!((loss - 2.0).abs() < 0.15, "loss {}", loss);
    }

    #[test]
    fn oracle_beats_zero_network_on_isotropic_data() {
        // Perfect denoiser loss is the conditional-variance floor
        // E_t[D/(1+σ_t²)], strictly below the zero-network loss D.
        let d = 3;
        let schedule = make_schedule(50, 1e-3, 0.2).unwrap();
        let oracle = IsotropicGaussianOracle { dim: d, data_var: 1.0 };
        let mut stream = RngStream::new(3, 0);
        let n = 20_000;
        let mut loss = 0.0;
        for _ in 0..n {
            let t = 1 + stream.below(schedule.n_steps());
            let sigma = schedule.sigma(t);
            let x0 = stream.gaussian(d);
            let eps = stream.gaussian(d);
            let x_sigma: Vec<f64> = x0.iter().zip(&eps).map(|(x, e)| x + sigma * e).collect();
            let eps_hat = oracle.predict_ve(&x_sigma, sigma);
            loss += eps_hat
                .iter()
                .zip(&eps)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n as f64;
        }
        let floor: f64 = (1..=50)
            .map(|t| d as f64 / (1.0 + schedule.sigma(t).powi(2)))
            .sum::<f64>()
            / 50.0;
        assert!(loss < d as f64, "oracle loss {} not below zero-network {}", loss, d);
        assert!((loss - floor).abs() / floor < 0.05, "loss {} vs floor {}", loss, floor);
    }

    #[test]
    fn dsm_loss_deterministic() {
        let fam = NetworkFamily::Linear(LinearFamily::new(Matrix::identity(2)).unwrap());
        let params = fam.sample_params(&mut RngStream::new(4, 0));
        let mut v = vec![0.0, 0.0];
        v[0] = 1.0;
        let data = crate::data::sample_rank_one(&v, 2, 100, &mut RngStream::new(5, 0)).unwrap();
        let schedule = make_schedule(10, 1e-4, 0.02).unwrap();
        let (l1, _) =
            dsm_loss(&fam, &params, &data, &[0, 1, 2], &schedule, &mut RngStream::new(6, 0))
                .unwrap();
        let (l2, _) =
            dsm_loss(&fam, &params, &data, &[0, 1, 2], &schedule, &mut RngStream::new(6, 0))
                .unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn train_deterministic_and_zero_iterations() {
        let fam = NetworkFamily::Mlp(crate::networks::MlpFamily::new(2, (0.01, 10.0)));
        let mut v = vec![1.0, 0.0];
        v[0] = 1.0;
        let data = crate::data::sample_rank_one(&v, 2, 200, &mut RngStream::new(7, 0)).unwrap();
        let schedule = make_schedule(20, 1e-3, 0.2).unwrap();
        let mut cfg = TrainConfig::new(8, 30, 1e-3);
        cfg.seed = 11;
        let t1 = train(&fam, &data, &cfg, &schedule).unwrap();
        let t2 = train(&fam, &data, &cfg, &schedule).unwrap();
        assert_eq!(t1.step_losses, t2.step_losses);
        assert_eq!(t1.final_params.tensors, t2.final_params.tensors);

        cfg.iterations = 0;
        let t0 = train(&fam, &data, &cfg, &schedule).unwrap();
        let mut init_stream = RngStream::new(cfg.seed, 0x696e6974);
        let init = fam.sample_params(&mut init_stream);
        assert_eq!(t0.final_params.tensors, init.tensors);
    }

    #[test]
    fn linear_gd_contracts_toward_optimum() {
        // Fixed σ = 1 via a 2-step schedule is awkward; instead verify the
        // full-schedule loss decreases substantially under SGD.
        let d = 4;
        let phi = Matrix::identity(d);
        let fam = NetworkFamily::Linear(LinearFamily::new(phi).unwrap());
        let mut v = vec![0.0; d];
        v[0] = 1.0;
        let data = crate::data::sample_rank_one(&v, d, 2000, &mut RngStream::new(8, 0)).unwrap();
        let schedule = make_schedule(50, 1e-3, 0.2).unwrap();
        let mut cfg = TrainConfig::new(16, 800, 2e-3);
        cfg.optimizer = Optimizer::Sgd;
        cfg.seed = 9;
        let trace = train(&fam, &data, &cfg, &schedule).unwrap();
        let early: f64 = trace.step_losses[..50].iter().sum::<f64>() / 50.0;
        let late: f64 =
            trace.step_losses[750..].iter().sum::<f64>() / (trace.step_losses.len() - 750) as f64;
        assert!(late < early * 0.8, "early {} late {}", early, late);
    }

    #[test]
    fn ancestral_oracle_recovers_standard_gaussian() {
        let d = 4;
        let schedule = make_schedule(200, 5e-4, 0.1).unwrap();
        let oracle = IsotropicGaussianOracle { dim: d, data_var: 1.0 };
        let n = 10_000;
        let ds = sample_ancestral(&oracle, &schedule, n, &RngStream::new(9, 0)).unwrap();
        let mut mean = vec![0.0; d];
        for row in ds.rows_iter() {
            vecops::axpy(&mut mean, 1.0 / n as f64, row);
        }
        for m in &mean {
            assert!(m.abs() <= 4.0 / (n as f64).sqrt() * 3.0, "mean {}", m);
        }
        let mut var = 0.0;
        for row in ds.rows_iter() {
            var += row.iter().map(|v| v * v).sum::<f64>() / (n * d) as f64;
        }
        assert!((var - 1.0).abs() < 0.05, "variance {}", var);
    }

    #[test]
    fn ancestral_empty_and_deterministic() {
        let schedule = make_schedule(10, 1e-3, 0.2).unwrap();
        let oracle = IsotropicGaussianOracle { dim: 2, data_var: 1.0 };
        let empty = sample_ancestral(&oracle, &schedule, 0, &RngStream::new(10, 0)).unwrap();
        assert_eq!(empty.samples.rows(), 0);
        let a = sample_ancestral(&oracle, &schedule, 5, &RngStream::new(10, 1)).unwrap();
        let b = sample_ancestral(&oracle, &schedule, 5, &RngStream::new(10, 1)).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn langevin_standard_gaussian_stationary() {
        // score(x) = −x: discretized OU chain with stationary variance
        // 1/(1 − η/4) ≈ 1. The chain decorrelates over ~2/η steps, so the
        // pooled estimate over coordinates is what carries the 10% check.
        let eta = 0.01;
        let k = 60_000;
        let d = 4;
        let mut stream = RngStream::new(11, 0);
        let x0 = vec![5.0; d];
        let traj = sample_langevin(|x| x.iter().map(|v| -v).collect(), &x0, eta, k, &mut stream)
            .unwrap();
        let tail = &traj[k / 2..];
        let mut pooled = 0.0;
        for i in 0..d {
            let mean: f64 = tail.iter().map(|x| x[i]).sum::<f64>() / tail.len() as f64;
            let var: f64 =
                tail.iter().map(|x| (x[i] - mean) * (x[i] - mean)).sum::<f64>() / tail.len() as f64;
            assert!((var - 1.0).abs() < 0.3, "coordinate {} variance {}", i, var);
            pooled += var / d as f64;
        }
        assert!((pooled - 1.0).abs() < 0.1, "pooled variance {}", pooled);
    }

    #[test]
    fn langevin_zero_score_random_walk() {
        let eta = 0.05;
        let k = 1000;
        let n_chains = 2000;
        let mut acc = vec![0.0; k + 1];
        for c in 0..n_chains {
            let mut stream = RngStream::new(12, c as u64);
            let traj =
                sample_langevin(|x| vec![0.0; x.len()], &[0.0], eta, k, &mut stream).unwrap();
            for (t, x) in traj.iter().enumerate() {
                acc[t] += x[0] * x[0] / n_chains as f64;
            }
        }
        // Variance grows linearly with slope η: least-squares through all t.
        let n = (k + 1) as f64;
        let sx: f64 = (0..=k).map(|t| t as f64).sum();
        let sy: f64 = acc.iter().sum();
        let sxx: f64 = (0..=k).map(|t| (t * t) as f64).sum();
        let sxy: f64 = acc.iter().enumerate().map(|(t, a)| t as f64 * a).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((slope - eta).abs() / eta < 0.1, "slope {}", slope);
    }

    #[test]
    fn langevin_single_step_formula() {
        let eta = 0.04;
        let mut stream = RngStream::new(13, 0);
        let mut replay = stream.clone();
        let x0 = vec![1.0, -2.0];
        let traj =
            sample_langevin(|x| x.iter().map(|v| -2.0 * v).collect(), &x0, eta, 1, &mut stream)
                .unwrap();
        let z = replay.gaussian(2);
        for i in 0..2 {
            let expected = x0[i] + 0.5 * eta * (-2.0 * x0[i]) + eta.sqrt() * z[i];
            assert!((traj[1][i] - expected).abs() < 1e-15);
        }
    }
}
