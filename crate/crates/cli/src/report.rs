//! Experiment report assembly: one CSV row per (unit, seed), a config echo,
//! and environment metadata. The CSV body is a pure function of the config,
//! so identical configs reproduce it byte for byte; wall-clock facts stay in
//! meta.json.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Clone, Debug, Default, Serialize)]
pub struct ReportRow {
    pub unit: usize,
    pub label: String,
    pub seed: u64,
    pub status: String,
    pub eigenvalue: Option<f64>,
    pub alpha: Option<f64>,
    pub sw2: Option<f64>,
    pub msw2: Option<f64>,
    pub final_loss: Option<f64>,
    pub gd_fitted_rate: Option<f64>,
    pub rho_predicted: Option<f64>,
    pub sgd_stationary_error: Option<f64>,
    pub asymmetry_score: Option<f64>,
}

impl ReportRow {
    pub fn ok(unit: usize, label: impl Into<String>, seed: u64) -> Self {
        Self { unit, label: label.into(), seed, status: "ok".into(), ..Default::default() }
    }

    pub fn failed(unit: usize, label: impl Into<String>, seed: u64, err: &CliError) -> Self {
        Self {
            unit,
            label: label.into(),
            seed,
            status: format!("failed: {}", err).replace(['\n', ','], ";"),
            ..Default::default()
        }
    }
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub recipe: String,
    pub rows: Vec<ReportRow>,
    pub n_failed: usize,
    pub out_dir: std::path::PathBuf,
}

const COLUMNS: &str = "recipe,unit,label,seed,status,eigenvalue,alpha,sw2,msw2,final_loss,gd_fitted_rate,rho_predicted,sgd_stationary_error,asymmetry_score";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{}", x)).unwrap_or_default()
}

pub fn write_report_csv(path: &Path, recipe: &str, rows: &[ReportRow]) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", COLUMNS)?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            recipe,
            r.unit,
            r.label,
            r.seed,
            r.status,
            fmt_opt(r.eigenvalue),
            fmt_opt(r.alpha),
            fmt_opt(r.sw2),
            fmt_opt(r.msw2),
            fmt_opt(r.final_loss),
            fmt_opt(r.gd_fitted_rate),
            fmt_opt(r.rho_predicted),
            fmt_opt(r.sgd_stationary_error),
            fmt_opt(r.asymmetry_score),
        )?;
    }
    Ok(())
}

/// Write a (step, loss) trace.
pub fn write_trace_csv(path: &Path, trace: &[(usize, f64)]) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss")?;
    for (step, loss) in trace {
        writeln!(f, "{},{}", step, loss)?;
    }
    Ok(())
}

/// Write per-step scalar values (e.g. Frobenius error traces).
pub fn write_series_csv(path: &Path, header: &str, values: &[f64]) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,{}", header)?;
    for (i, v) in values.iter().enumerate() {
        writeln!(f, "{},{}", i, v)?;
    }
    Ok(())
}

/// Echo the resolved config next to the report; parsing the echo must
/// reproduce the config exactly.
pub fn write_config_echo(dir: &Path, config: &ExperimentConfig) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(config)
        .map_err(|e| CliError::Config(format!("config echo: {}", e)))?;
    std::fs::write(dir.join("config.json"), text)?;
    Ok(())
}

#[derive(Serialize)]
pub struct RunMeta<'a> {
    pub recipe: &'a str,
    pub n_rows: usize,
    pub n_failed: usize,
    pub wall_seconds: f64,
    pub determinism_audit: Option<&'a str>,
    pub version: &'a str,
}

pub fn write_meta(dir: &Path, meta: &RunMeta) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| CliError::Config(format!("meta: {}", e)))?;
    std::fs::write(dir.join("meta.json"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_deterministic_formatting() {
        let dir = tempfile::tempdir().unwrap();
        let mut row = ReportRow::ok(0, "unit_0", 3);
        row.msw2 = Some(1.25e-3);
        row.eigenvalue = Some(2.0);
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_report_csv(&p1, "test", &[row.clone()]).unwrap();
        write_report_csv(&p2, "test", &[row]).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let body = std::fs::read_to_string(&p1).unwrap();
        assert!(body.starts_with(COLUMNS));
        assert!(body.contains("0.00125"));
    }
}
