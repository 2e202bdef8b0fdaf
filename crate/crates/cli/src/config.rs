//! Experiment configuration: TOML or JSON files with dotted-path command
//! line overrides, resolved into concrete library objects.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sadkit::bases::BasisKind;
use sadkit::data::{downscale, load_idx, Dataset};
use sadkit::diffusion::{make_schedule, NoiseSchedule, Optimizer, TrainConfig};
use sadkit::geometry::{ProbeDistribution, ProbeKind};
use sadkit::networks::{
    ConvUnetFamily, LinearFamily, MlpFamily, NetworkFamily, PadMode, Resample, TokenLinearFamily,
};
use sadkit::numerics::Matrix;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    BasisSweep,
    SadSweep,
    AlignmentStudy,
    TheoryFig4,
    ImpulseProbe,
    GeometryReport,
    SphereStudy,
}

impl Recipe {
    pub fn label(&self) -> &'static str {
        match self {
            Recipe::BasisSweep => "basis_sweep",
            Recipe::SadSweep => "sad_sweep",
            Recipe::AlignmentStudy => "alignment_study",
            Recipe::TheoryFig4 => "theory_fig4",
            Recipe::ImpulseProbe => "impulse_probe",
            Recipe::GeometryReport => "geometry_report",
            Recipe::SphereStudy => "sphere_study",
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub recipe: Recipe,
    pub master_seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub family: Option<FamilySpec>,
    #[serde(default)]
    pub probe: ProbeSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub metric: MetricSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Linear {
        #[serde(default)]
        phi_diag: Option<Vec<f64>>,
        #[serde(default)]
        phi_csv: Option<PathBuf>,
        #[serde(default = "one")]
        theta_std: f64,
    },
    Mlp {
        dim: usize,
        #[serde(default = "four")]
        hidden_mult: usize,
        #[serde(default = "yes")]
        embed: bool,
        #[serde(default)]
        output_bias_mean: f64,
        #[serde(default)]
        output_bias_std: f64,
        #[serde(default)]
        hidden_bias_std: f64,
        /// Optional geometric per-output conditioning profile (lo, hi):
        /// output i is scaled by lo·(hi/lo)^(i/(D−1)).
        #[serde(default)]
        output_scale_span: Option<(f64, f64)>,
    },
    ConvUnetMini {
        channels: usize,
        height: usize,
        width: usize,
        #[serde(default = "sixteen")]
        hidden_channels: usize,
        #[serde(default = "nearest")]
        resample: Resample,
        #[serde(default = "zero_pad")]
        pad: PadMode,
    },
    TokenLinear {
        channels: usize,
        height: usize,
        width: usize,
        patch: usize,
        #[serde(default = "one")]
        weight_std: f64,
        #[serde(default = "one")]
        bias_std: f64,
        #[serde(default)]
        per_token_bias: bool,
    },
}

fn one() -> f64 {
    1.0
}
fn four() -> usize {
    4
}
fn sixteen() -> usize {
    16
}
fn yes() -> bool {
    true
}
fn nearest() -> Resample {
    Resample::Nearest
}
fn zero_pad() -> PadMode {
    PadMode::Zero
}

impl FamilySpec {
    pub fn build(&self, sigma_range: (f64, f64)) -> Result<NetworkFamily, CliError> {
        match self {
            FamilySpec::Linear { phi_diag, phi_csv, theta_std } => {
                let phi = match (phi_diag, phi_csv) {
                    (Some(d), None) => Matrix::diag(d),
                    (None, Some(path)) => Matrix::load_csv(path)?,
                    _ => {
                        return Err(CliError::Config(
                            "linear family needs exactly one of phi_diag or phi_csv".into(),
                        ))
                    }
                };
                Ok(NetworkFamily::Linear(
                    LinearFamily::new(phi)?.with_theta_std(*theta_std),
                ))
            }
            FamilySpec::Mlp {
                dim,
                hidden_mult,
                embed,
                output_bias_mean,
                output_bias_std,
                hidden_bias_std,
                output_scale_span,
            } => {
                let mut fam = MlpFamily::new(*dim, sigma_range);
                fam.hidden_mult = *hidden_mult;
                fam.embed = *embed;
                fam.output_bias = (*output_bias_mean, *output_bias_std);
                fam.hidden_bias_std = *hidden_bias_std;
                if let Some((lo, hi)) = output_scale_span {
                    if *lo <= 0.0 || *hi <= 0.0 {
                        return Err(CliError::Config("output scale span must be positive".into()));
                    }
                    let d = *dim;
                    let profile: Vec<f64> = (0..d)
                        .map(|i| {
                            if d == 1 {
                                *lo
                            } else {
                                lo * (hi / lo).powf(i as f64 / (d as f64 - 1.0))
                            }
                        })
                        .collect();
                    fam = fam.with_output_scale(profile)?;
                }
                Ok(NetworkFamily::Mlp(fam))
            }
            FamilySpec::ConvUnetMini { channels, height, width, hidden_channels, resample, pad } => {
                let mut fam = ConvUnetFamily::new(*channels, *height, *width, sigma_range)
                    .with_resample(*resample)
                    .with_pad(*pad);
                fam.hidden_channels = *hidden_channels;
                Ok(NetworkFamily::ConvUnetMini(fam))
            }
            FamilySpec::TokenLinear {
                channels,
                height,
                width,
                patch,
                weight_std,
                bias_std,
                per_token_bias,
            } => {
                let mut fam = TokenLinearFamily::new(*channels, *height, *width, *patch)?;
                fam.weight_std = *weight_std;
                fam.bias_std = *bias_std;
                fam.per_token_bias = *per_token_bias;
                Ok(NetworkFamily::TokenLinear(fam))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeSpec {
    DeltaZero,
    IsotropicGaussian { sigma_p: f64 },
    /// Probe around dataset sample `sample_index` along the forward process.
    AroundSample { sample_index: usize },
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec::DeltaZero
    }
}

impl ProbeSpec {
    pub fn build(
        &self,
        schedule: &NoiseSchedule,
        dataset: Option<&Dataset>,
    ) -> Result<ProbeDistribution, CliError> {
        let levels = schedule.sigma_levels();
        let kind = match self {
            ProbeSpec::DeltaZero => ProbeKind::DeltaZero,
            ProbeSpec::IsotropicGaussian { sigma_p } => {
                ProbeKind::IsotropicGaussian { sigma_p: *sigma_p }
            }
            ProbeSpec::AroundSample { sample_index } => {
                let ds = dataset.ok_or_else(|| {
                    CliError::Config("around_sample probe needs a dataset".into())
                })?;
                if *sample_index >= ds.n() {
                    return Err(CliError::Config(format!(
                        "probe sample index {} out of range (dataset has {})",
                        sample_index,
                        ds.n()
                    )));
                }
                ProbeKind::AroundSample { x0: ds.row(*sample_index).to_vec() }
            }
        };
        Ok(ProbeDistribution::new(kind, levels)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub beta_min: Option<f64>,
    #[serde(default)]
    pub beta_max: Option<f64>,
}

fn default_steps() -> usize {
    200
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { n_steps: default_steps(), beta_min: None, beta_max: None }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule, CliError> {
        match (self.beta_min, self.beta_max) {
            (Some(lo), Some(hi)) => Ok(make_schedule(self.n_steps, lo, hi)?),
            (None, None) => Ok(sadkit::diffusion::desk_schedule(self.n_steps)?),
            _ => Err(CliError::Config("set both beta_min and beta_max or neither".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Rank-one Gaussian along a direction chosen by the recipe.
    RankOne {
        #[serde(default = "default_n")]
        n: usize,
    },
    Idx {
        images: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default = "one_usize")]
        downscale: usize,
        #[serde(default)]
        limit: Option<usize>,
    },
}

fn default_n() -> usize {
    10_000
}
fn one_usize() -> usize {
    1
}

impl DatasetSpec {
    /// Materialize a file-backed dataset. Synthetic kinds are produced by
    /// the recipes themselves since their parameters are unit-dependent.
    pub fn load(&self) -> Result<Option<Dataset>, CliError> {
        match self {
            DatasetSpec::RankOne { .. } => Ok(None),
            DatasetSpec::Idx { images, labels, downscale: factor, limit } => {
                let (mut ds, _labels) = load_idx(images, labels.as_deref())?;
                if let Some(limit) = limit {
                    if *limit < ds.n() {
                        let d = ds.dim();
                        let mut m = Matrix::zeros(*limit, d);
                        for i in 0..*limit {
                            m.row_mut(i).copy_from_slice(ds.row(i));
                        }
                        ds = Dataset::new(m, ds.layout, format!("{}[..{}]", ds.provenance, limit))?;
                    }
                }
                if *factor > 1 {
                    ds = downscale(&ds, *factor)?;
                }
                Ok(Some(ds))
            }
        }
    }

    pub fn n(&self) -> usize {
        match self {
            DatasetSpec::RankOne { n } => *n,
            DatasetSpec::Idx { .. } => default_n(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_iters")]
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_opt")]
    pub optimizer: Optimizer,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_batch() -> usize {
    32
}
fn default_iters() -> usize {
    1500
}
fn default_lr() -> f64 {
    1e-3
}
fn default_opt() -> Optimizer {
    Optimizer::Adam
}
fn default_log_every() -> usize {
    100
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            batch_size: default_batch(),
            iterations: default_iters(),
            learning_rate: default_lr(),
            optimizer: default_opt(),
            log_every: default_log_every(),
        }
    }
}

impl TrainSpec {
    pub fn build(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed,
            log_every: self.log_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    /// Projection count factor: L = l_factor · D.
    #[serde(default = "default_l_factor")]
    pub l_factor: usize,
    /// Samples drawn from the model (and matched against as many fresh
    /// ground-truth draws).
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
}

fn default_l_factor() -> usize {
    64
}
fn default_n_eval() -> usize {
    2000
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self { l_factor: default_l_factor(), n_eval: default_n_eval() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_geom_samples")]
    pub geometry_samples: usize,
    /// sad_sweep: number of SADs, spread over first/middle/last thirds.
    #[serde(default = "default_n_select")]
    pub n_select: usize,
    /// basis_sweep: basis to sweep and optional column subset.
    #[serde(default)]
    pub basis: Option<BasisKind>,
    #[serde(default)]
    pub columns: Vec<usize>,
    /// alignment_study: transforms to evaluate.
    #[serde(default = "default_transforms")]
    pub transforms: Vec<String>,
    /// sphere_study: sphere radius.
    #[serde(default = "one")]
    pub radius: f64,
    /// impulse_probe: impulse location; defaults to the grid center.
    #[serde(default)]
    pub impulse_location: Option<(usize, usize)>,
    /// theory_fig4: σ, η, steps for the linear DSM runs.
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_theory_steps")]
    pub steps: usize,
    #[serde(default = "default_sgd_steps")]
    pub sgd_steps: usize,
    #[serde(default = "default_cov_samples")]
    pub covariance_samples: usize,
}

fn default_seeds() -> usize {
    3
}
fn default_geom_samples() -> usize {
    100_000
}
fn default_n_select() -> usize {
    12
}
fn default_transforms() -> Vec<String> {
    vec!["w_min".into(), "identity".into(), "w_max".into()]
}
fn default_eta() -> f64 {
    1e-3
}
fn default_theory_steps() -> usize {
    10_000
}
fn default_sgd_steps() -> usize {
    20_000
}
fn default_cov_samples() -> usize {
    100_000
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            geometry_samples: default_geom_samples(),
            n_select: default_n_select(),
            basis: None,
            columns: Vec::new(),
            transforms: default_transforms(),
            radius: one(),
            impulse_location: None,
            sigma: one(),
            eta: default_eta(),
            steps: default_theory_steps(),
            sgd_steps: default_sgd_steps(),
            covariance_samples: default_cov_samples(),
        }
    }
}

/// Parse a config file (TOML by default, JSON when the extension is .json)
/// and apply `key.path=value` overrides before deserializing.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {}", path.display(), e)))?;
    let is_json = path.extension().map(|e| e == "json").unwrap_or(false)
        || text.trim_start().starts_with('{');
    if is_json {
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("json parse error: {}", e)))?;
        for ov in overrides {
            apply_json_override(&mut value, ov)?;
        }
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("config error: {}", e)))
    } else {
        let mut value: toml::Value = text
            .parse()
            .map_err(|e| CliError::Config(format!("toml parse error: {}", e)))?;
        for ov in overrides {
            apply_toml_override(&mut value, ov)?;
        }
        value.try_into().map_err(|e| CliError::Config(format!("config error: {}", e)))
    }
}

fn split_override(ov: &str) -> Result<(Vec<&str>, &str), CliError> {
    let (path, raw) = ov
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{}' is not key=value", ov)))?;
    Ok((path.split('.').collect(), raw))
}

fn apply_toml_override(value: &mut toml::Value, ov: &str) -> Result<(), CliError> {
    let (path, raw) = split_override(ov)?;
    let parsed: toml::Value = match raw.parse::<i64>() {
        Ok(v) => toml::Value::Integer(v),
        Err(_) => match raw.parse::<f64>() {
            Ok(v) => toml::Value::Float(v),
            Err(_) => match raw {
                "true" => toml::Value::Boolean(true),
                "false" => toml::Value::Boolean(false),
                other => toml::Value::String(other.to_string()),
            },
        },
    };
    let mut cursor = value;
    for (i, key) in path.iter().enumerate() {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override path '{}' hits a non-table", ov)))?;
        if i + 1 == path.len() {
            table.insert(key.to_string(), parsed);
            return Ok(());
        }
        cursor = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}

fn apply_json_override(value: &mut serde_json::Value, ov: &str) -> Result<(), CliError> {
    let (path, raw) = split_override(ov)?;
    let parsed: serde_json::Value = match raw.parse::<i64>() {
        Ok(v) => v.into(),
        Err(_) => match raw.parse::<f64>() {
            Ok(v) => serde_json::json!(v),
            Err(_) => match raw {
                "true" => true.into(),
                "false" => false.into(),
                other => other.into(),
            },
        },
    };
    let mut cursor = value;
    for (i, key) in path.iter().enumerate() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override path '{}' hits a non-object", ov)))?;
        if i + 1 == path.len() {
            obj.insert(key.to_string(), parsed);
            return Ok(());
        }
        cursor = obj.entry(key.to_string()).or_insert_with(|| serde_json::json!({}));
    }
    Ok(())
}
