use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sadkit::bases::{build_basis, BasisKind, OrthoTransform};
use sadkit::data::{DataLayout, Dataset};
use sadkit::diffusion::{sample_ancestral, train, NetworkPredictor};
use sadkit::geometry::sads_from_matrix;
use sadkit::metrics::{msw2, sw2, w2_1d};
use sadkit::networks::ParamSet;
use sadkit::numerics::Matrix;

use sadkit_cli::config::{load_config, ExperimentConfig, Recipe};
use sadkit_cli::pgm::{render_heatmap_grid, vector_pgm, write_pgm};
use sadkit_cli::recipes::run_experiment;
use sadkit_cli::report::{write_report_csv, write_trace_csv};
use sadkit_cli::CliError;

#[derive(Parser)]
#[command(name = "sadkit", about = "Score-network geometry and directional generalization harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count (defaults to the machine).
    #[arg(long)]
    workers: Option<usize>,
    /// Dotted-path config overrides, e.g. --override train.iterations=500.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = load_config(&self.config, &self.overrides)?;
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(w) = self.workers.or(cfg.workers) {
            // A failed build means a pool already exists; keep going.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment recipe end to end.
    Run(ConfigArgs),
    /// Estimate the average geometry of a family (geometry_report recipe).
    Geometry(ConfigArgs),
    /// Extract SADs from a saved geometry matrix.
    Sads {
        /// geometry.csv produced by the geometry subcommand.
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Render the eigenvectors as height×width images.
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
    },
    /// Train one model on the configured dataset and save the checkpoint.
    Train(ConfigArgs),
    /// Sample from a trained checkpoint.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// params.bin checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Wasserstein metrics between two sample CSV files.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Projection count; defaults to 64·D.
        #[arg(long)]
        l: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Alignment α of a dataset with a saved geometry, plus W_min/W_max.
    Align {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        geometry: PathBuf,
    },
    /// Linear DSM theory runs (theory_fig4 recipe).
    Theory(ConfigArgs),
    /// Assemble a metric heat map from a sweep report.
    Render {
        /// report.csv from a basis_sweep run.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        basis: String,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => run_recipe(args, None),
        Command::Geometry(args) => run_recipe(args, Some(Recipe::GeometryReport)),
        Command::Theory(args) => run_recipe(args, Some(Recipe::TheoryFig4)),
        Command::Sads { geometry, out, height, width } => cmd_sads(&geometry, &out, height, width),
        Command::Train(args) => cmd_train(args),
        Command::Sample { cfg, checkpoint, n } => cmd_sample(cfg, &checkpoint, n),
        Command::Metrics { a, b, l, seed } => cmd_metrics(&a, &b, l, seed),
        Command::Align { cfg, geometry } => cmd_align(cfg, &geometry),
        Command::Render { report, basis, height, width, out } => {
            cmd_render(&report, &basis, height, width, &out)
        }
    }
}

fn run_recipe(args: ConfigArgs, force: Option<Recipe>) -> Result<(), CliError> {
    let mut cfg = args.load()?;
    if let Some(recipe) = force {
        cfg.recipe = recipe;
    }
    let report = run_experiment(&cfg)?;
    println!(
        "{}: {} rows ({} failed) -> {}",
        report.recipe,
        report.rows.len(),
        report.n_failed,
        report.out_dir.display()
    );
    if report.n_failed > 0 {
        return Err(CliError::Runtime(format!(
            "{} of {} units failed; partial report written",
            report.n_failed,
            report.rows.len()
        )));
    }
    Ok(())
}

fn cmd_sads(
    geometry: &PathBuf,
    out: &PathBuf,
    height: Option<usize>,
    width: Option<usize>,
) -> Result<(), CliError> {
    let g = Matrix::load_csv(geometry)?;
    let sads = sads_from_matrix(&g)?;
    std::fs::create_dir_all(out)?;
    let d = sads.dim();
    let (h, w) = match (height, width) {
        (Some(h), Some(w)) if h * w == d => (h, w),
        (None, None) => {
            let side = (d as f64).sqrt().round() as usize;
            if side * side == d {
                (side, side)
            } else {
                (1, d)
            }
        }
        _ => return Err(CliError::Config("height×width must equal the dimension".into())),
    };
    let mut eig = String::from("index,eigenvalue\n");
    for k in 0..d {
        eig.push_str(&format!("{},{}\n", k, sads.eigenvalues[k]));
        vector_pgm(&out.join(format!("sad_{:04}.pgm", k)), &sads.direction(k), h, w)?;
    }
    std::fs::write(out.join("eigenvalues.csv"), eig)?;
    println!("{} SADs -> {}", d, out.display());
    Ok(())
}

fn build_training_inputs(
    cfg: &ExperimentConfig,
) -> Result<(sadkit::networks::NetworkFamily, Dataset, sadkit::diffusion::NoiseSchedule), CliError>
{
    let schedule = cfg.schedule.build()?;
    let family = cfg
        .family
        .as_ref()
        .ok_or_else(|| CliError::Config("needs a [family]".into()))?
        .build((schedule.sigma_min(), schedule.sigma_max()))?;
    let dataset = match &cfg.dataset {
        Some(spec) => match spec.load()? {
            Some(ds) => ds,
            None => {
                return Err(CliError::Config(
                    "train/sample need a file-backed dataset (synthetic datasets are built by recipes)"
                        .into(),
                ))
            }
        },
        None => return Err(CliError::Config("needs a [dataset]".into())),
    };
    Ok((family, dataset, schedule))
}

fn cmd_train(args: ConfigArgs) -> Result<(), CliError> {
    let cfg = args.load()?;
    let (family, dataset, schedule) = build_training_inputs(&cfg)?;
    let train_cfg = cfg.train.build(cfg.master_seed);
    let trace = train(&family, &dataset, &train_cfg, &schedule)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_trace_csv(&cfg.out_dir.join("trace.csv"), &trace.logged)?;
    std::fs::write(cfg.out_dir.join("params.bin"), trace.final_params.to_bytes())?;
    println!(
        "trained {} steps, final loss {} -> {}",
        cfg.train.iterations,
        trace.step_losses.last().unwrap_or(&f64::NAN),
        cfg.out_dir.display()
    );
    Ok(())
}

fn cmd_sample(args: ConfigArgs, checkpoint: &PathBuf, n: usize) -> Result<(), CliError> {
    let cfg = args.load()?;
    let schedule = cfg.schedule.build()?;
    let family = cfg
        .family
        .as_ref()
        .ok_or_else(|| CliError::Config("needs a [family]".into()))?
        .build((schedule.sigma_min(), schedule.sigma_max()))?;
    let params = ParamSet::from_bytes(&std::fs::read(checkpoint)?)?;
    let predictor = NetworkPredictor { family: &family, params: &params };
    let stream = sadkit::numerics::RngStream::new(cfg.master_seed, 0x73616d70);
    let ds = sample_ancestral(&predictor, &schedule, n, &stream)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    ds.samples.save_csv(&cfg.out_dir.join("samples.csv"))?;
    println!("{} samples -> {}", n, cfg.out_dir.join("samples.csv").display());
    Ok(())
}

fn cmd_metrics(a: &PathBuf, b: &PathBuf, l: Option<usize>, seed: u64) -> Result<(), CliError> {
    let ma = Matrix::load_csv(a)?;
    let mb = Matrix::load_csv(b)?;
    if ma.cols() != mb.cols() {
        return Err(CliError::Config("sample files have different dimensions".into()));
    }
    let d = ma.cols();
    let x = Dataset::new(ma, DataLayout::Flat { dim: d }, a.display().to_string())?;
    let y = Dataset::new(mb, DataLayout::Flat { dim: d }, b.display().to_string())?;
    let l = l.unwrap_or_else(|| sadkit::metrics::default_projection_count(d));
    let stream = sadkit::numerics::RngStream::new(seed, 0x6d657472);
    println!("metric,value,l,seed,a,b");
    if d == 1 {
        let w = w2_1d(x.samples.data(), y.samples.data())?;
        println!("w2,{},,{},{},{}", w, seed, x.provenance, y.provenance);
    }
    let s = sw2(&x, &y, l, &stream)?;
    let m = msw2(&x, &y, l, &stream)?;
    println!("sw2,{},{},{},{},{}", s, l, seed, x.provenance, y.provenance);
    println!("msw2,{},{},{},{},{}", m, l, seed, x.provenance, y.provenance);
    Ok(())
}

fn cmd_align(args: ConfigArgs, geometry: &PathBuf) -> Result<(), CliError> {
    let cfg = args.load()?;
    let g = Matrix::load_csv(geometry)?;
    let dataset = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Config("align needs a [dataset]".into()))?
        .load()?
        .ok_or_else(|| CliError::Config("align needs a file-backed dataset".into()))?;
    let c = sadkit::alignment::second_moment(&dataset);
    let ext = sadkit::alignment::extremal_transforms(&g, &c)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    ext.w_min.matrix.save_csv(&cfg.out_dir.join("w_min.csv"))?;
    ext.w_max.matrix.save_csv(&cfg.out_dir.join("w_max.csv"))?;

    let id = OrthoTransform::identity(g.rows());
    let mut rows = Vec::new();
    for (unit, (label, w)) in
        [("w_min", &ext.w_min), ("identity", &id), ("w_max", &ext.w_max)].iter().enumerate()
    {
        let a = sadkit::alignment::alpha(w, &g, &c)?;
        let mut row = sadkit_cli::report::ReportRow::ok(unit, *label, 0);
        row.alpha = Some(a);
        rows.push(row);
    }
    write_report_csv(&cfg.out_dir.join("alignment.csv"), "align", &rows)?;
    for r in &rows {
        println!("{}: alpha = {}", r.label, r.alpha.unwrap());
    }
    if ext.tied_g || ext.tied_c {
        println!("note: tied spectrum detected; extremal transforms are one valid choice");
    }
    Ok(())
}

fn cmd_render(
    report: &PathBuf,
    basis: &str,
    height: usize,
    width: usize,
    out: &PathBuf,
) -> Result<(), CliError> {
    let kind = match basis {
        "canonical" => BasisKind::Canonical,
        "dct" => BasisKind::Dct,
        "dst" => BasisKind::Dst,
        "hadamard" => BasisKind::Hadamard,
        "haar2d" => BasisKind::Haar2d,
        other => return Err(CliError::Config(format!("unknown basis '{}'", other))),
    };
    let b = build_basis(kind, height, width)?;
    let d = height * width;

    // Mean MSW₂ per column from the report rows.
    let text = std::fs::read_to_string(report)?;
    let mut sums = vec![(0.0f64, 0usize); d];
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 9 || fields[4] != "ok" {
            continue;
        }
        let label = fields[2];
        let col: usize = label
            .strip_prefix("col_")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Config(format!("row label '{}' is not col_<k>", label)))?;
        let msw: f64 = fields[8]
            .parse()
            .map_err(|_| CliError::Config(format!("bad msw2 value '{}'", fields[8])))?;
        sums[col].0 += msw;
        sums[col].1 += 1;
    }
    let values: Result<Vec<f64>, CliError> = sums
        .iter()
        .enumerate()
        .map(|(c, (s, n))| {
            if *n == 0 {
                Err(CliError::Config(format!("report has no rows for column {}", c)))
            } else {
                Ok(s / *n as f64)
            }
        })
        .collect();
    let grid = render_heatmap_grid(&values?, &b, height, width)?;
    std::fs::create_dir_all(out)?;
    grid.save_csv(&out.join("heatmap.csv"))?;
    write_pgm(&out.join("heatmap.pgm"), grid.cols(), grid.rows(), grid.data())?;
    println!("heatmap -> {}", out.display());
    Ok(())
}
