//! Experiment recipes. Every recipe expands into a deterministic set of
//! (unit, seed) tasks executed on the worker pool; a failing task is
//! recorded in its report row and the sweep continues. All randomness is
//! derived from the master seed through labeled streams, so a re-run with
//! the same config reproduces every artifact byte for byte.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use sadkit::alignment::{alpha, extremal_transforms, second_moment};
use sadkit::bases::{build_basis, random_orthogonal, OrthoTransform};
use sadkit::data::{apply_transform, sample_rank_one, sphere_dataset, DataLayout, Dataset};
use sadkit::diffusion::{sample_ancestral, train, NetworkPredictor, NoiseSchedule};
use sadkit::geometry::{estimate_geometry, extract_sads, GeometryEstimate, SadBasis};
use sadkit::metrics::{msw2_with, sw2_with, ProjectionSet};
use sadkit::networks::{NetworkFamily, Resample};
use sadkit::numerics::{sym_eig, Matrix, RngStream};
use sadkit::theory::{
    gd_mean_trace, predicted_rate, sgd_simulate, stochastic_grad_covariance, DsmMode,
    LinearDsmConfig,
};

use crate::config::{ExperimentConfig, FamilySpec, Recipe};
use crate::pgm::{render_heatmap_grid, vector_pgm, write_pgm};
use crate::report::{
    write_config_echo, write_meta, write_report_csv, write_series_csv, write_trace_csv,
    ExperimentReport, ReportRow, RunMeta,
};
use crate::CliError;

/// Stream labels: one fixed tag per purpose keeps every consumer of the
/// master seed on a disjoint stream.
mod tag {
    pub const GEOMETRY: u64 = 1;
    pub const DATA: u64 = 2;
    pub const TRUTH: u64 = 3;
    pub const METRIC: u64 = 4;
    pub const SAMPLER: u64 = 5;
    pub const TRAIN: u64 = 6;
    pub const PARAMS: u64 = 7;
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    let start = std::time::Instant::now();
    let out = config.out_dir.join(config.recipe.label());
    std::fs::create_dir_all(&out)?;
    write_config_echo(&out, config)?;

    let (rows, audit) = match config.recipe {
        Recipe::GeometryReport => run_geometry_report(config, &out)?,
        Recipe::SadSweep => run_sad_sweep(config, &out)?,
        Recipe::BasisSweep => run_basis_sweep(config, &out)?,
        Recipe::AlignmentStudy => run_alignment_study(config, &out)?,
        Recipe::TheoryFig4 => run_theory_fig4(config, &out)?,
        Recipe::ImpulseProbe => run_impulse_probe(config, &out)?,
        Recipe::SphereStudy => run_sphere_study(config, &out)?,
    };

    write_report_csv(&out.join("report.csv"), config.recipe.label(), &rows)?;
    let n_failed = rows.iter().filter(|r| r.status != "ok").count();
    write_meta(
        &out,
        &RunMeta {
            recipe: config.recipe.label(),
            n_rows: rows.len(),
            n_failed,
            wall_seconds: start.elapsed().as_secs_f64(),
            determinism_audit: audit.as_deref(),
            version: env!("CARGO_PKG_VERSION"),
        },
    )?;
    Ok(ExperimentReport { recipe: config.recipe.label().into(), rows, n_failed, out_dir: out })
}

fn master(config: &ExperimentConfig) -> RngStream {
    RngStream::new(config.master_seed, 0)
}

fn family_of(config: &ExperimentConfig, schedule: &NoiseSchedule) -> Result<NetworkFamily, CliError> {
    let spec = config
        .family
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{} needs a [family]", config.recipe.label())))?;
    spec.build((schedule.sigma_min(), schedule.sigma_max()))
}

fn unit_dir(out: &Path, label: &str, seed: u64) -> Result<PathBuf, CliError> {
    let dir = out.join(label).join(seed.to_string());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Image grid used for eigenvector visualization: the family layout when
/// present, a square when the dimension is a perfect square, else a strip.
fn render_grid(family: &NetworkFamily) -> (usize, usize) {
    if let Some((_, h, w)) = family.image_layout() {
        return (h, w);
    }
    let d = family.dim();
    let side = (d as f64).sqrt().round() as usize;
    if side * side == d {
        (side, side)
    } else {
        (1, d)
    }
}

struct MeasuredRun {
    sw2: f64,
    msw2: f64,
    final_loss: f64,
}

/// Train on `train_data`, draw `n_eval` model samples, optionally map them
/// back through a transform, and measure against `truth`. Saves the trace
/// and both sample sets under `dir`.
#[allow(clippy::too_many_arguments)]
fn train_sample_measure(
    config: &ExperimentConfig,
    family: &NetworkFamily,
    schedule: &NoiseSchedule,
    train_data: &Dataset,
    truth: &Dataset,
    back_transform: Option<&OrthoTransform>,
    streams: &RecipeStreams,
    dir: &Path,
) -> Result<MeasuredRun, CliError> {
    let train_cfg = config.train.build(streams.train_seed);
    let trace = train(family, train_data, &train_cfg, schedule)?;
    write_trace_csv(&dir.join("trace.csv"), &trace.logged)?;
    std::fs::write(dir.join("params.bin"), trace.final_params.to_bytes())?;

    let predictor = NetworkPredictor { family, params: &trace.final_params };
    let sampled = sample_ancestral(&predictor, schedule, config.metric.n_eval, &streams.sampler)?;
    let model_samples = match back_transform {
        Some(w) => {
            // The model lives in transformed coordinates; map back with Wᵀ.
            let mut m = Matrix::zeros(sampled.n(), sampled.dim());
            for i in 0..sampled.n() {
                let x = w.apply_transpose(sampled.row(i))?;
                m.row_mut(i).copy_from_slice(&x);
            }
            Dataset::new(m, DataLayout::Flat { dim: sampled.dim() }, "ancestral·back")?
        }
        None => sampled,
    };

    model_samples.samples.save_csv(&dir.join("samples.csv"))?;
    truth.samples.save_csv(&dir.join("truth.csv"))?;

    let dirs = ProjectionSet::sample(
        model_samples.dim(),
        config.metric.l_factor * model_samples.dim(),
        &streams.metric,
    );
    let sw = sw2_with(&model_samples, truth, &dirs)?;
    let msw = msw2_with(&model_samples, truth, &dirs)?;
    let final_loss = trace.step_losses.last().copied().unwrap_or(f64::NAN);
    Ok(MeasuredRun { sw2: sw, msw2: msw, final_loss })
}

/// Per-(unit, seed) derived streams.
struct RecipeStreams {
    data: RngStream,
    truth: RngStream,
    metric: RngStream,
    sampler: RngStream,
    params: RngStream,
    train_seed: u64,
}

fn streams_for(config: &ExperimentConfig, unit: usize, seed: u64) -> RecipeStreams {
    let m = master(config);
    let key = |t: u64| m.derive(&[t, unit as u64, seed]);
    RecipeStreams {
        data: key(tag::DATA),
        truth: key(tag::TRUTH),
        metric: key(tag::METRIC),
        sampler: key(tag::SAMPLER),
        params: key(tag::PARAMS),
        train_seed: sadkit::numerics::derive_stream_id(&[
            config.master_seed,
            tag::TRAIN,
            unit as u64,
            seed,
        ]),
    }
}

/// Recompute the max-sliced metric of one row from its archived sample
/// files; returns a short audit note.
fn determinism_audit(
    config: &ExperimentConfig,
    out: &Path,
    rows: &[ReportRow],
) -> Result<Option<String>, CliError> {
    let row = match rows.iter().find(|r| r.status == "ok" && r.msw2.is_some()) {
        Some(r) => r,
        None => return Ok(None),
    };
    let dir = out.join(&row.label).join(row.seed.to_string());
    let samples = Matrix::load_csv(&dir.join("samples.csv"))?;
    let truth = Matrix::load_csv(&dir.join("truth.csv"))?;
    let d = samples.cols();
    let x = Dataset::new(samples, DataLayout::Flat { dim: d }, "audit")?;
    let y = Dataset::new(truth, DataLayout::Flat { dim: d }, "audit")?;
    let streams = streams_for(config, row.unit, row.seed);
    let dirs = ProjectionSet::sample(d, config.metric.l_factor * d, &streams.metric);
    let recomputed = msw2_with(&x, &y, &dirs)?;
    let recorded = row.msw2.unwrap();
    if recomputed != recorded {
        return Err(CliError::Runtime(format!(
            "determinism audit failed on {}/{}: recorded {} recomputed {}",
            row.label, row.seed, recorded, recomputed
        )));
    }
    Ok(Some(format!("row {}/{} msw2 recomputed identically", row.label, row.seed)))
}

fn estimate_family_geometry(
    config: &ExperimentConfig,
    family: &NetworkFamily,
    schedule: &NoiseSchedule,
    dataset: Option<&Dataset>,
) -> Result<GeometryEstimate, CliError> {
    let probe = config.probe.build(schedule, dataset)?;
    let stream = master(config).derive(&[tag::GEOMETRY]);
    Ok(estimate_geometry(family, &probe, config.sweep.geometry_samples, &stream)?)
}

fn save_geometry(out: &Path, est: &GeometryEstimate, sads: &SadBasis) -> Result<(), CliError> {
    est.g.save_csv(&out.join("geometry.csv"))?;
    est.standard_error.save_csv(&out.join("geometry_se.csv"))?;
    let meta = serde_json::json!({
        "family": est.family,
        "n_samples": est.n_samples,
        "n_rejected": est.n_rejected,
        "probe": est.probe,
        "se_max": est.standard_error.max_abs(),
        "eigenvalues_ascending": sads.eigenvalues,
    });
    std::fs::write(
        out.join("geometry.json"),
        serde_json::to_string_pretty(&meta).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// geometry_report

fn run_geometry_report(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<ReportRow>, Option<String>), CliError> {
    let schedule = config.schedule.build()?;
    let family = family_of(config, &schedule)?;
    let dataset = config.dataset.as_ref().map(|d| d.load()).transpose()?.flatten();
    let est = estimate_family_geometry(config, &family, &schedule, dataset.as_ref())?;
    let sads = extract_sads(&est)?;
    save_geometry(out, &est, &sads)?;

    let (gh, gw) = render_grid(&family);
    let d = sads.dim();
    let export: Vec<usize> = if d <= 16 {
        (0..d).collect()
    } else {
        (0..8).chain(d - 8..d).collect()
    };
    let sad_dir = out.join("sads");
    std::fs::create_dir_all(&sad_dir)?;
    let mut rows = Vec::new();
    for &k in &export {
        let v = sads.direction(k);
        // Image families render the first channel plane.
        vector_pgm(&sad_dir.join(format!("sad_{:04}.pgm", k)), &v[..gh * gw], gh, gw)?;
        let mut row = ReportRow::ok(k, format!("sad_{:04}", k), 0);
        row.eigenvalue = Some(sads.eigenvalues[k]);
        rows.push(row);
    }
    Ok((rows, None))
}

// ---------------------------------------------------------------------------
// sad_sweep

/// Ascending-order SAD indices spread over the spectrum: first, middle, and
/// last thirds when the count divides evenly, an even spread otherwise.
pub fn select_sad_indices(d: usize, n_select: usize) -> Vec<usize> {
    if n_select >= d {
        return (0..d).collect();
    }
    if n_select % 3 == 0 {
        let k = n_select / 3;
        let mid = (d - k) / 2;
        (0..k).chain(mid..mid + k).chain(d - k..d).collect()
    } else {
        let mut v: Vec<usize> = (0..n_select)
            .map(|i| ((i as f64) * (d as f64 - 1.0) / (n_select as f64 - 1.0)).round() as usize)
            .collect();
        v.dedup();
        v
    }
}

fn run_sad_sweep(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<ReportRow>, Option<String>), CliError> {
    let schedule = config.schedule.build()?;
    let family = family_of(config, &schedule)?;
    let d = family.dim();
    let n_data = config.dataset.as_ref().map(|ds| ds.n()).unwrap_or(10_000);

    let est = estimate_family_geometry(config, &family, &schedule, None)?;
    let sads = extract_sads(&est)?;
    save_geometry(out, &est, &sads)?;

    let indices = select_sad_indices(d, config.sweep.n_select);
    let (gh, gw) = render_grid(&family);
    let sad_dir = out.join("sads");
    std::fs::create_dir_all(&sad_dir)?;
    for &k in &indices {
        let v = sads.direction(k);
        vector_pgm(&sad_dir.join(format!("sad_{:04}.pgm", k)), &v[..gh * gw], gh, gw)?;
    }

    let tasks: Vec<(usize, u64)> = indices
        .iter()
        .enumerate()
        .flat_map(|(u, _)| (0..config.sweep.seeds as u64).map(move |s| (u, s)))
        .collect();

    let rows: Vec<ReportRow> = tasks
        .par_iter()
        .map(|&(unit, seed)| {
            let k = indices[unit];
            let label = format!("sad_{:04}", k);
            let run = || -> Result<ReportRow, CliError> {
                let streams = streams_for(config, unit, seed);
                let dir = unit_dir(out, &label, seed)?;
                let v = sads.direction(k);
                let mut data_stream = streams.data.clone();
                let train_data = sample_rank_one(&v, d, n_data, &mut data_stream)?;
                let mut truth_stream = streams.truth.clone();
                let truth = sample_rank_one(&v, d, config.metric.n_eval, &mut truth_stream)?;
                let measured = train_sample_measure(
                    config, &family, &schedule, &train_data, &truth, None, &streams, &dir,
                )?;
                let c = second_moment(&train_data);
                let a = alpha(&OrthoTransform::identity(d), &est.g, &c)?;
                let mut row = ReportRow::ok(unit, label.clone(), seed);
                row.eigenvalue = Some(sads.eigenvalues[k]);
                row.alpha = Some(a);
                row.sw2 = Some(measured.sw2);
                row.msw2 = Some(measured.msw2);
                row.final_loss = Some(measured.final_loss);
                Ok(row)
            };
            run().unwrap_or_else(|e| ReportRow::failed(unit, label, seed, &e))
        })
        .collect();

    let audit = determinism_audit(config, out, &rows)?;
    Ok((rows, audit))
}

// ---------------------------------------------------------------------------
// basis_sweep

fn run_basis_sweep(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<ReportRow>, Option<String>), CliError> {
    let schedule = config.schedule.build()?;
    let family = family_of(config, &schedule)?;
    let d = family.dim();
    let kind = config
        .sweep
        .basis
        .ok_or_else(|| CliError::Config("basis_sweep needs sweep.basis".into()))?;
    let (gh, gw) = render_grid(&family);
    let basis = build_basis(kind, gh, gw)?;
    if basis.dim != d {
        return Err(CliError::Config(format!(
            "basis dimension {} does not match family dimension {}",
            basis.dim, d
        )));
    }
    basis.matrix.save_csv(&out.join("basis.csv"))?;
    std::fs::write(
        out.join("basis_layout.json"),
        serde_json::to_string_pretty(&basis.index_layout)
            .map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;

    let columns: Vec<usize> = if config.sweep.columns.is_empty() {
        (0..d).collect()
    } else {
        config.sweep.columns.clone()
    };
    if let Some(&bad) = columns.iter().find(|&&c| c >= d) {
        return Err(CliError::Config(format!("basis column {} out of range", bad)));
    }
    let n_data = config.dataset.as_ref().map(|ds| ds.n()).unwrap_or(10_000);

    let tasks: Vec<(usize, u64)> = columns
        .iter()
        .enumerate()
        .flat_map(|(u, _)| (0..config.sweep.seeds as u64).map(move |s| (u, s)))
        .collect();

    let rows: Vec<ReportRow> = tasks
        .par_iter()
        .map(|&(unit, seed)| {
            let col = columns[unit];
            let label = format!("col_{:04}", col);
            let run = || -> Result<ReportRow, CliError> {
                let streams = streams_for(config, unit, seed);
                let dir = unit_dir(out, &label, seed)?;
                let v = basis.column(col);
                let mut data_stream = streams.data.clone();
                let train_data = sample_rank_one(&v, d, n_data, &mut data_stream)?;
                let mut truth_stream = streams.truth.clone();
                let truth = sample_rank_one(&v, d, config.metric.n_eval, &mut truth_stream)?;
                let measured = train_sample_measure(
                    config, &family, &schedule, &train_data, &truth, None, &streams, &dir,
                )?;
                let mut row = ReportRow::ok(unit, label.clone(), seed);
                row.sw2 = Some(measured.sw2);
                row.msw2 = Some(measured.msw2);
                row.final_loss = Some(measured.final_loss);
                Ok(row)
            };
            run().unwrap_or_else(|e| ReportRow::failed(unit, label, seed, &e))
        })
        .collect();

    // Heat map over mean MSW₂ per column (full sweeps only).
    if columns.len() == d {
        let mut means = vec![0.0; d];
        let mut ok = true;
        for (u, col) in columns.iter().enumerate() {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.unit == u && r.status == "ok")
                .filter_map(|r| r.msw2)
                .collect();
            if vals.is_empty() {
                ok = false;
                break;
            }
            means[*col] = vals.iter().sum::<f64>() / vals.len() as f64;
        }
        if ok {
            let grid = render_heatmap_grid(&means, &basis, gh, gw)?;
            grid.save_csv(&out.join("heatmap.csv"))?;
            write_pgm(&out.join("heatmap.pgm"), grid.cols(), grid.rows(), grid.data())?;
        }
    }

    let audit = determinism_audit(config, out, &rows)?;
    Ok((rows, audit))
}

// ---------------------------------------------------------------------------
// alignment_study

fn run_alignment_study(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<ReportRow>, Option<String>), CliError> {
    let schedule = config.schedule.build()?;
    let family = family_of(config, &schedule)?;
    let d = family.dim();
    let spec = config
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Config("alignment_study needs a [dataset]".into()))?;
    let full = spec
        .load()?
        .ok_or_else(|| CliError::Config("alignment_study needs a file-backed dataset".into()))?;
    if full.dim() != d {
        return Err(CliError::Config(format!(
            "dataset dimension {} does not match family dimension {}",
            full.dim(),
            d
        )));
    }

    // Train/eval split: metrics compare model samples against held-out data.
    let n_train = (full.n() * 4) / 5;
    let slice = |lo: usize, hi: usize, name: &str| -> Result<Dataset, CliError> {
        let mut m = Matrix::zeros(hi - lo, d);
        for i in lo..hi {
            m.row_mut(i - lo).copy_from_slice(full.row(i));
        }
        Ok(Dataset::new(m, full.layout, format!("{}:{}", full.provenance, name))?)
    };
    let train_split = slice(0, n_train, "train")?;
    let eval_split = slice(n_train, full.n(), "eval")?;

    let est = estimate_family_geometry(config, &family, &schedule, Some(&train_split))?;
    let sads = extract_sads(&est)?;
    save_geometry(out, &est, &sads)?;

    let c = second_moment(&train_split);
    c.save_csv(&out.join("second_moment.csv"))?;
    let ext = extremal_transforms(&est.g, &c)?;
    ext.w_min.matrix.save_csv(&out.join("w_min.csv"))?;
    ext.w_max.matrix.save_csv(&out.join("w_max.csv"))?;

    let transforms: Vec<(String, OrthoTransform)> = config
        .sweep
        .transforms
        .iter()
        .map(|name| -> Result<(String, OrthoTransform), CliError> {
            let w = match name.as_str() {
                "w_min" => ext.w_min.clone(),
                "w_max" => ext.w_max.clone(),
                "identity" => OrthoTransform::identity(d),
                "random" => {
                    let mut s = master(config).derive(&[tag::PARAMS, 0xAAAA]);
                    random_orthogonal(d, &mut s)
                }
                other => return Err(CliError::Config(format!("unknown transform '{}'", other))),
            };
            Ok((name.clone(), w))
        })
        .collect::<Result<_, _>>()?;

    let tasks: Vec<(usize, u64)> = transforms
        .iter()
        .enumerate()
        .flat_map(|(u, _)| (0..config.sweep.seeds as u64).map(move |s| (u, s)))
        .collect();

    let rows: Vec<ReportRow> = tasks
        .par_iter()
        .map(|&(unit, seed)| {
            let (name, w) = &transforms[unit];
            let label = name.clone();
            let run = || -> Result<ReportRow, CliError> {
                let streams = streams_for(config, unit, seed);
                let dir = unit_dir(out, &label, seed)?;
                let a = alpha(w, &est.g, &c)?;
                let transformed = apply_transform(&train_split, w)?;
                let measured = train_sample_measure(
                    config,
                    &family,
                    &schedule,
                    &transformed,
                    &eval_split,
                    Some(w),
                    &streams,
                    &dir,
                )?;
                let mut row = ReportRow::ok(unit, label.clone(), seed);
                row.alpha = Some(a);
                row.sw2 = Some(measured.sw2);
                row.msw2 = Some(measured.msw2);
                row.final_loss = Some(measured.final_loss);
                Ok(row)
            };
            run().unwrap_or_else(|e| ReportRow::failed(unit, label.clone(), seed, &e))
        })
        .collect();

    let audit = determinism_audit(config, out, &rows)?;
    Ok((rows, audit))
}

// ---------------------------------------------------------------------------
// theory_fig4

fn run_theory_fig4(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<ReportRow>, Option<String>), CliError> {
    let phi = match &config.family {
        Some(FamilySpec::Linear { phi_diag: Some(d), .. }) => {
            Matrix::diag(&d.iter().map(|l| l.sqrt()).collect::<Vec<_>>())
        }
        None => sadkit::theory::reference_phi(),
        _ => {
            return Err(CliError::Config(
                "theory_fig4 uses family.kind = linear with phi_diag as the ΦΦᵀ spectrum".into(),
            ))
        }
    };
    let d = phi.rows();
    let phi_phit = phi.matmul(&phi.transpose())?;
    let eig = sym_eig(&phi_phit)?;
    let sigma = config.sweep.sigma;
    let eta = config.sweep.eta;

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for i in 1..=d {
        let label = format!("direction_{}", i);
        let v = eig.eigenvectors.column(i - 1);
        let rho = predicted_rate(&eig.eigenvalues, i, sigma)?;

        let gd_cfg = LinearDsmConfig {
            phi: phi.clone(),
            v: v.clone(),
            sigma,
            eta,
            steps: config.sweep.steps,
            mode: DsmMode::GdMean,
            seed: 0,
        };
        let gd = gd_mean_trace(&gd_cfg)?;
        let dir0 = unit_dir(out, &label, 0)?;
        write_series_csv(&dir0.join("gd_trace.csv"), "frobenius_error", &gd.errors)?;

        let mut stationary = Vec::new();
        for seed in 0..config.sweep.seeds as u64 {
            let sgd_cfg = LinearDsmConfig {
                phi: phi.clone(),
                v: v.clone(),
                sigma,
                eta,
                steps: config.sweep.sgd_steps,
                mode: DsmMode::Sgd { batch: 1, theta0_std: 1e-2 },
                seed: sadkit::numerics::derive_stream_id(&[
                    config.master_seed,
                    tag::TRAIN,
                    i as u64,
                    seed,
                ]),
            };
            let sgd = sgd_simulate(&sgd_cfg)?;
            let dir = unit_dir(out, &label, seed)?;
            write_series_csv(&dir.join("sgd_trace.csv"), "frobenius_error", &sgd.trace.errors)?;
            let mut row = ReportRow::ok(i - 1, label.clone(), seed);
            row.eigenvalue = Some(eig.eigenvalues[i - 1]);
            row.gd_fitted_rate = gd.fitted_rate;
            row.rho_predicted = Some(rho);
            row.sgd_stationary_error = Some(sgd.stationary_error);
            stationary.push(sgd.stationary_error);
            rows.push(row);
        }

        let mut cov_stream = master(config).derive(&[tag::METRIC, i as u64]);
        let cov = stochastic_grad_covariance(
            &phi,
            &v,
            sigma,
            config.sweep.covariance_samples,
            &mut cov_stream,
        )?;
        summary.push(serde_json::json!({
            "direction": i,
            "lambda": eig.eigenvalues[i - 1],
            "rho_predicted": rho,
            "gd_fitted_rate": gd.fitted_rate,
            "sgd_stationary_error_mean": stationary.iter().sum::<f64>() / stationary.len() as f64,
            "grad_cov_trace_mc": cov.mc_trace,
            "grad_cov_trace_se": cov.mc_standard_error,
            "grad_cov_trace_closed_form": cov.closed_form,
        }));
    }
    std::fs::write(
        out.join("rates.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    Ok((rows, None))
}

// ---------------------------------------------------------------------------
// impulse_probe

fn run_impulse_probe(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<ReportRow>, Option<String>), CliError> {
    let schedule = config.schedule.build()?;
    let base = match &config.family {
        Some(FamilySpec::ConvUnetMini { .. }) => family_of(config, &schedule)?,
        _ => return Err(CliError::Config("impulse_probe needs a conv_unet_mini family".into())),
    };
    let (c, h, w) = base.image_layout().expect("conv family has image layout");
    let _ = c;
    let location = config.sweep.impulse_location.unwrap_or(((h - 1) / 2, (w - 1) / 2));

    let variants: Vec<(String, NetworkFamily)> = [Resample::Nearest, Resample::Area]
        .into_iter()
        .map(|mode| {
            let mut fam = match &base {
                NetworkFamily::ConvUnetMini(f) => f.clone(),
                _ => unreachable!(),
            };
            fam.resample = mode;
            (
                match mode {
                    Resample::Nearest => "nearest".to_string(),
                    Resample::Area => "area".to_string(),
                },
                NetworkFamily::ConvUnetMini(fam),
            )
        })
        .collect();

    let mut rows = Vec::new();
    for (unit, (label, fam)) in variants.iter().enumerate() {
        for seed in 0..config.sweep.seeds as u64 {
            let run = || -> Result<ReportRow, CliError> {
                let streams = streams_for(config, unit, seed);
                let dir = unit_dir(out, label, seed)?;
                let mut pstream = streams.params.clone();
                let mut params = fam.sample_params(&mut pstream);
                fam.symmetrize_kernels(&mut params);
                let rep = fam.impulse_response(&params, location)?;
                write_pgm(&dir.join("response.pgm"), w, h, &rep.response[..h * w])?;
                let mut row = ReportRow::ok(unit, label.clone(), seed);
                row.asymmetry_score = Some(rep.asymmetry_score);
                Ok(row)
            };
            rows.push(run().unwrap_or_else(|e| ReportRow::failed(unit, label.clone(), seed, &e)));
        }
    }
    Ok((rows, None))
}

// ---------------------------------------------------------------------------
// sphere_study

fn run_sphere_study(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<ReportRow>, Option<String>), CliError> {
    let schedule = config.schedule.build()?;
    let family = family_of(config, &schedule)?;
    let d = family.dim();
    if d < 6 {
        return Err(CliError::Config("sphere_study needs dimension at least 6".into()));
    }
    let n_data = config.dataset.as_ref().map(|ds| ds.n()).unwrap_or(10_000);

    let est = estimate_family_geometry(config, &family, &schedule, None)?;
    let sads = extract_sads(&est)?;
    save_geometry(out, &est, &sads)?;

    // Subspaces spanned by the first three (preferred) and last three SADs.
    let units: Vec<(String, [Vec<f64>; 3])> = vec![
        (
            "first_sads".into(),
            [sads.direction(0), sads.direction(1), sads.direction(2)],
        ),
        (
            "last_sads".into(),
            [sads.direction(d - 3), sads.direction(d - 2), sads.direction(d - 1)],
        ),
    ];

    let tasks: Vec<(usize, u64)> = units
        .iter()
        .enumerate()
        .flat_map(|(u, _)| (0..config.sweep.seeds as u64).map(move |s| (u, s)))
        .collect();

    let rows: Vec<ReportRow> = tasks
        .par_iter()
        .map(|&(unit, seed)| {
            let (label, basis3) = &units[unit];
            let run = || -> Result<ReportRow, CliError> {
                let streams = streams_for(config, unit, seed);
                let dir = unit_dir(out, label, seed)?;
                let mut data_stream = streams.data.clone();
                let train_data =
                    sphere_dataset(basis3, config.sweep.radius, n_data, &mut data_stream)?;
                let mut truth_stream = streams.truth.clone();
                let truth = sphere_dataset(
                    basis3,
                    config.sweep.radius,
                    config.metric.n_eval,
                    &mut truth_stream,
                )?;
                let measured = train_sample_measure(
                    config, &family, &schedule, &train_data, &truth, None, &streams, &dir,
                )?;
                let c = second_moment(&train_data);
                let a = alpha(&OrthoTransform::identity(d), &est.g, &c)?;
                let mut row = ReportRow::ok(unit, label.clone(), seed);
                row.alpha = Some(a);
                row.sw2 = Some(measured.sw2);
                row.msw2 = Some(measured.msw2);
                row.final_loss = Some(measured.final_loss);
                Ok(row)
            };
            run().unwrap_or_else(|e| ReportRow::failed(unit, label.clone(), seed, &e))
        })
        .collect();

    let audit = determinism_audit(config, out, &rows)?;
    Ok((rows, audit))
}

/// Mean over ok-rows of a column, grouped by unit label, in first-seen order.
pub fn mean_by_label(
    rows: &[ReportRow],
    get: impl Fn(&ReportRow) -> Option<f64>,
) -> Vec<(String, f64)> {
    let mut order: Vec<String> = Vec::new();
    let mut sums: std::collections::HashMap<String, (f64, usize)> = Default::default();
    for r in rows.iter().filter(|r| r.status == "ok") {
        if let Some(v) = get(r) {
            if !sums.contains_key(&r.label) {
                order.push(r.label.clone());
            }
            let e = sums.entry(r.label.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    order
        .into_iter()
        .map(|l| {
            let (s, n) = sums[&l];
            (l, s / n as f64)
        })
        .collect()
}

/// Spearman rank correlation (no tie correction; inputs are de-duplicated
/// floats in practice).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..xs.len() {
        let a = rx[i] - mean;
        let b = ry[i] - mean;
        num += a * b;
        dx += a * a;
        dy += b * b;
    }
    num / (dx.sqrt() * dy.sqrt())
}
