//! Incremental `metrics.csv` writer.

use std::fs::{File, OpenOptions};
use std::path::Path;

use csf_core::trainer::{IterationMetrics, METRICS_HEADER};

use crate::error::{CliError, CliResult};

pub struct MetricsWriter {
    inner: csv::Writer<File>,
    path: std::path::PathBuf,
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV record; absent values are empty cells. Floats use the shortest
/// representation that round-trips.
pub fn record(m: &IterationMetrics) -> Vec<String> {
    vec![
        m.iteration.to_string(),
        m.env_steps.to_string(),
        cell(m.loss_repr),
        cell(m.loss_sf),
        cell(m.loss_actor),
        m.alpha.to_string(),
        cell(m.mean_reward),
        cell(m.e_sq_norm_dphi),
        cell(m.coverage),
        cell(m.goal_staying_frac),
        m.wall_s.to_string(),
    ]
}

impl MetricsWriter {
    /// Start a fresh file with a header. An existing file is only replaced
    /// with `force`.
    pub fn create(path: &Path, force: bool) -> CliResult<Self> {
        if path.exists() && !force {
            return Err(CliError::usage(format!(
                "{} already exists; pass --force to overwrite",
                path.display()
            )));
        }
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = Self {
            inner: csv::Writer::from_writer(file),
            path: path.to_path_buf(),
        };
        w.write(METRICS_HEADER.iter().map(|s| s.to_string()).collect())?;
        Ok(w)
    }

    /// Continue an existing file after a resume.
    pub fn append(path: &Path) -> CliResult<Self> {
        let file = OpenOptions::new().append(true).open(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            inner: csv::Writer::from_writer(file),
            path: path.to_path_buf(),
        })
    }

    fn write(&mut self, row: Vec<String>) -> CliResult<()> {
        self.inner.write_record(&row).map_err(|e| CliError::io(&self.path, e))?;
        self.inner.flush().map_err(|e| CliError::io(&self.path, e))
    }

    pub fn push(&mut self, m: &IterationMetrics) -> CliResult<()> {
        self.write(record(m))
    }
}

/// Rows of a metrics file as string records, header excluded.
pub fn read_rows(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| CliError::io(path, e))?.iter().map(String::from).collect();
    if header != METRICS_HEADER {
        return Err(CliError::usage(format!("{}: unexpected header {header:?}", path.display())));
    }
    r.records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(|e| CliError::io(path, e)))
        .collect()
}

/// The last non-empty coverage value in a metrics file.
pub fn final_coverage(path: &Path) -> CliResult<f64> {
    let col = METRICS_HEADER.iter().position(|&h| h == "coverage").unwrap();
    read_rows(path)?
        .iter()
        .rev()
        .find_map(|r| r[col].parse::<f64>().ok())
        .ok_or_else(|| CliError::usage(format!("{}: no coverage recorded", path.display())))
}
