//! Pinned configurations for the two training-based acceptance studies.
//! Both run the real experiment recipes end to end at desk scale.

use sadkit_cli::config::{
    DatasetSpec, ExperimentConfig, FamilySpec, MetricSpec, ProbeSpec, Recipe, ScheduleSpec,
    SweepSpec, TrainSpec,
};
use sadkit_cli::recipes::{mean_by_label, run_experiment, spearman};

/// Conjecture trend: mlp family at D = 64 with explicit geometric output
/// conditioning, 12 SADs spanning the spectrum, 3 seeds, per-sample SGD.
/// Returns the Spearman correlation between SAD eigenvalue and mean MSW₂.
pub fn run_sad_trend() -> (f64, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        recipe: Recipe::SadSweep,
        master_seed: 7001,
        out_dir: dir.path().to_path_buf(),
        workers: None,
        family: Some(FamilySpec::Mlp {
            dim: 64,
            hidden_mult: 4,
            embed: true,
            output_bias_mean: 0.0,
            output_bias_std: 0.0,
            hidden_bias_std: 0.0,
            output_scale_span: Some((0.5, 2.0)),
        }),
        probe: ProbeSpec::DeltaZero,
        schedule: ScheduleSpec { n_steps: 100, beta_min: Some(1e-3), beta_max: Some(0.16) },
        dataset: Some(DatasetSpec::RankOne { n: 8000 }),
        train: TrainSpec {
            batch_size: 1,
            iterations: 40_000,
            learning_rate: 1e-3,
            optimizer: sadkit::diffusion::Optimizer::Sgd,
            log_every: 500,
        },
        metric: MetricSpec { l_factor: 64, n_eval: 1000 },
        sweep: SweepSpec {
            seeds: 3,
            geometry_samples: 30_000,
            n_select: 12,
            ..Default::default()
        },
    };
    let report = run_experiment(&cfg).expect("sweep runs");
    assert_eq!(report.n_failed, 0, "failed units: {:?}", report.rows);

    let eigs = mean_by_label(&report.rows, |r| r.eigenvalue);
    let msws = mean_by_label(&report.rows, |r| r.msw2);
    let xs: Vec<f64> = eigs.iter().map(|(_, e)| *e).collect();
    let ys: Vec<f64> = msws.iter().map(|(_, m)| *m).collect();
    let rho = spearman(&xs, &ys);
    let detail = format!(
        "12 SADs × 3 seeds, eigenvalues {:.3}–{:.3}, mean MSW₂ {:.1}–{:.1}",
        xs.first().unwrap(),
        xs.last().unwrap(),
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(0.0f64, f64::max)
    );
    (rho, detail)
}

pub struct AlignmentOutcome {
    pub alpha_min: f64,
    pub alpha_id: f64,
    pub alpha_max: f64,
    pub msw_min: f64,
    pub msw_id: f64,
}

/// Alignment study: conv U-Net on MNIST downscaled to 14×14; mean MSW₂
/// over 3 seeds for W_min vs identity, with exact α ordering.
pub fn run_alignment() -> AlignmentOutcome {
    let dir = tempfile::tempdir().unwrap();
    let mnist = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/mnist/t10k-images-idx3-ubyte");
    let cfg = ExperimentConfig {
        recipe: Recipe::AlignmentStudy,
        master_seed: 8001,
        out_dir: dir.path().to_path_buf(),
        workers: None,
        family: Some(FamilySpec::ConvUnetMini {
            channels: 1,
            height: 14,
            width: 14,
            hidden_channels: 16,
            resample: sadkit::networks::Resample::Nearest,
            pad: sadkit::networks::PadMode::Zero,
        }),
        probe: ProbeSpec::IsotropicGaussian { sigma_p: 1.0 },
        schedule: ScheduleSpec { n_steps: 100, beta_min: None, beta_max: None },
        dataset: Some(DatasetSpec::Idx {
            images: mnist,
            labels: None,
            downscale: 2,
            limit: None,
        }),
        train: TrainSpec {
            batch_size: 32,
            iterations: 12_000,
            learning_rate: 1e-3,
            optimizer: sadkit::diffusion::Optimizer::Adam,
            log_every: 500,
        },
        metric: MetricSpec { l_factor: 64, n_eval: 1000 },
        sweep: SweepSpec {
            seeds: 3,
            geometry_samples: 30_000,
            transforms: vec!["w_min".into(), "identity".into(), "w_max".into()],
            ..Default::default()
        },
    };
    let report = run_experiment(&cfg).expect("study runs");
    assert_eq!(report.n_failed, 0, "failed units: {:?}", report.rows);

    let alphas = mean_by_label(&report.rows, |r| r.alpha);
    let msws = mean_by_label(&report.rows, |r| r.msw2);
    let get = |list: &[(String, f64)], key: &str| -> f64 {
        list.iter().find(|(l, _)| l == key).map(|(_, v)| *v).expect("unit present")
    };
    AlignmentOutcome {
        alpha_min: get(&alphas, "w_min"),
        alpha_id: get(&alphas, "identity"),
        alpha_max: get(&alphas, "w_max"),
        msw_min: get(&msws, "w_min"),
        msw_id: get(&msws, "identity"),
    }
}
