//! End-to-end smoke runs of every recipe at tiny scale, plus the report
//! determinism contract (identical configs → identical CSV bodies).

use std::path::Path;

use sadkit_cli::config::{
    DatasetSpec, ExperimentConfig, FamilySpec, MetricSpec, ProbeSpec, Recipe, ScheduleSpec,
    SweepSpec, TrainSpec,
};
use sadkit_cli::recipes::run_experiment;

fn tiny_config(recipe: Recipe, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        recipe,
        master_seed: 11,
        out_dir: out.to_path_buf(),
        workers: None,
        family: Some(FamilySpec::Mlp {
            dim: 4,
            hidden_mult: 2,
            embed: true,
            output_bias_mean: 0.0,
            output_bias_std: 0.0,
            hidden_bias_std: 0.0,
            output_scale_span: None,
        }),
        probe: ProbeSpec::DeltaZero,
        schedule: ScheduleSpec { n_steps: 20, beta_min: None, beta_max: None },
        dataset: Some(DatasetSpec::RankOne { n: 200 }),
        train: TrainSpec {
            batch_size: 8,
            iterations: 40,
            learning_rate: 1e-3,
            optimizer: sadkit::diffusion::Optimizer::Adam,
            log_every: 10,
        },
        metric: MetricSpec { l_factor: 8, n_eval: 100 },
        sweep: SweepSpec {
            seeds: 2,
            geometry_samples: 2000,
            n_select: 3,
            ..Default::default()
        },
    }
}

#[test]
fn geometry_report_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(Recipe::GeometryReport, dir.path());
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.n_failed, 0);
    assert!(report.out_dir.join("geometry.csv").exists());
    assert!(report.out_dir.join("geometry.json").exists());
    assert!(report.out_dir.join("report.csv").exists());
    assert!(report.out_dir.join("sads").join("sad_0000.pgm").exists());
}

#[test]
fn sad_sweep_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(Recipe::SadSweep, &dir.path().join("a"));
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.n_failed, 0, "rows: {:?}", report.rows);
    // 3 SADs × 2 seeds.
    assert_eq!(report.rows.len(), 6);
    for row in &report.rows {
        assert!(row.msw2.unwrap() >= 0.0);
        assert!(row.eigenvalue.is_some());
        assert!(row.alpha.is_some());
    }
    let body_a = std::fs::read(report.out_dir.join("report.csv")).unwrap();

    // Identical config (different out dir) reproduces the CSV body exactly.
    let mut cfg_b = tiny_config(Recipe::SadSweep, &dir.path().join("b"));
    cfg_b.out_dir = dir.path().join("b");
    let report_b = run_experiment(&cfg_b).unwrap();
    let body_b = std::fs::read(report_b.out_dir.join("report.csv")).unwrap();
    assert_eq!(body_a, body_b);

    // Config echo round-trips.
    let echo: ExperimentConfig = serde_json::from_str(
        &std::fs::read_to_string(report.out_dir.join("config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(echo, cfg);
}

#[test]
fn basis_sweep_smoke_with_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(Recipe::BasisSweep, dir.path());
    cfg.sweep.basis = Some(sadkit::bases::BasisKind::Dct);
    cfg.sweep.seeds = 1;
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.n_failed, 0, "rows: {:?}", report.rows);
    assert_eq!(report.rows.len(), 4);
    assert!(report.out_dir.join("heatmap.pgm").exists());
    assert!(report.out_dir.join("heatmap.csv").exists());
}

#[test]
fn impulse_probe_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(Recipe::ImpulseProbe, dir.path());
    cfg.family = Some(FamilySpec::ConvUnetMini {
        channels: 1,
        height: 5,
        width: 5,
        hidden_channels: 4,
        resample: sadkit::networks::Resample::Nearest,
        pad: sadkit::networks::PadMode::Zero,
    });
    cfg.sweep.seeds = 2;
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.n_failed, 0, "rows: {:?}", report.rows);
    assert_eq!(report.rows.len(), 4); // nearest + area × 2 seeds
    for row in &report.rows {
        let score = row.asymmetry_score.unwrap();
        match row.label.as_str() {
            "area" => assert!(score <= 1e-8, "area score {}", score),
            "nearest" => assert!(score > 1e-3, "nearest score {}", score),
            other => panic!("unexpected unit {}", other),
        }
    }
}

#[test]
fn theory_fig4_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(Recipe::TheoryFig4, dir.path());
    cfg.family = None; // default Φ spectrum
    cfg.sweep.seeds = 1;
    cfg.sweep.steps = 500;
    cfg.sweep.sgd_steps = 500;
    cfg.sweep.covariance_samples = 2000;
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.n_failed, 0, "rows: {:?}", report.rows);
    assert_eq!(report.rows.len(), 5);
    assert!(report.out_dir.join("rates.json").exists());
    assert!(report.out_dir.join("direction_1").join("0").join("gd_trace.csv").exists());
}

#[test]
fn sphere_study_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(Recipe::SphereStudy, dir.path());
    cfg.family = Some(FamilySpec::Mlp {
        dim: 8,
        hidden_mult: 2,
        embed: true,
        output_bias_mean: 0.0,
        output_bias_std: 0.0,
        hidden_bias_std: 0.0,
        output_scale_span: None,
    });
    cfg.sweep.seeds = 1;
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.n_failed, 0, "rows: {:?}", report.rows);
    assert_eq!(report.rows.len(), 2);
}

#[test]
fn failure_isolation_keeps_other_units() {
    // A diverging learning rate aborts its unit but not the sweep.
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(Recipe::SadSweep, dir.path());
    cfg.train.learning_rate = 1e9;
    cfg.sweep.seeds = 1;
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.n_failed > 0);
    for row in &report.rows {
        if row.status != "ok" {
            assert!(row.status.starts_with("failed:"), "status {}", row.status);
        }
    }
    // The report file still exists with every row present.
    let body = std::fs::read_to_string(report.out_dir.join("report.csv")).unwrap();
    assert_eq!(body.lines().count(), 4);
}
