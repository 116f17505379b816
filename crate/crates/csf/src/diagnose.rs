//! The `diagnose` verb: representation statistics over a trajectory dump.

use std::fs;
use std::path::{Path, PathBuf};

use csf_core::evalsuite::{log_partition_slope, repr_diagnostics, DiagnosticRecord, DiagnosticSamples, LinearFit};
use csf_core::repr::ReprNet;
use csf_core::sphere;
use csf_core::DenseArray;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::checkpoint;
use crate::error::{CliError, CliResult};
use crate::eval::{checkpoint_config, run_dir_of};
use crate::train::{read_trajectories, TransitionRecord};

pub const DIAGNOSTICS_NAME: &str = "diagnostics.json";
pub const HISTOGRAM_DIR: &str = "histograms";

#[derive(Debug, Clone, Default)]
pub struct DiagnoseArgs {
    pub checkpoint: PathBuf,
    pub buffer: PathBuf,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    #[serde(flatten)]
    pub record: DiagnosticRecord,
    /// Upper tail of χ²_d at the Rayleigh statistic.
    pub rayleigh_p_value: f64,
    /// Regression of `log Z(Δφ)` on `‖Δφ‖²`.
    pub log_partition_fit: LinearFit,
}

/// Upper-tail probability of the Rayleigh statistic under uniform
/// directions.
pub fn rayleigh_p_value(statistic: f64, d: usize) -> f64 {
    let chi = ChiSquared::new(d as f64).expect("positive dimension");
    chi.sf(statistic)
}

/// `Δφ` and the skills of each transition, observations normalized as the
/// networks saw them in training.
pub fn transition_features(
    repr: &ReprNet,
    normalizer: &csf_core::envs::StateNormalizer,
    transitions: &[TransitionRecord],
) -> CliResult<(DenseArray, DenseArray)> {
    let obs_dim = repr.obs_dim();
    let d = repr.skill_dim();
    for (i, t) in transitions.iter().enumerate() {
        if t.obs.len() != obs_dim || t.next_obs.len() != obs_dim || t.z.len() != d {
            return Err(CliError::usage(format!(
                "transition {i} has obs {} / skill {} entries, checkpoint expects {obs_dim} / {d}",
                t.obs.len(),
                t.z.len()
            )));
        }
    }
    let s = DenseArray::from_rows(obs_dim, transitions.iter().map(|t| t.obs.as_slice()))?;
    let s2 = DenseArray::from_rows(obs_dim, transitions.iter().map(|t| t.next_obs.as_slice()))?;
    let z = DenseArray::from_rows(d, transitions.iter().map(|t| t.z.as_slice()))?;
    let deltas = repr.pair_features(&normalizer.normalize_batch(&s), &normalizer.normalize_batch(&s2))?;
    Ok((deltas, z))
}

pub fn diagnose_features(deltas: &DenseArray, z: &DenseArray) -> CliResult<(DiagnosticsReport, DiagnosticSamples)> {
    let (record, samples) = repr_diagnostics(deltas, z)?;
    let fit = log_partition_slope(deltas)?;
    let report = DiagnosticsReport {
        rayleigh_p_value: rayleigh_p_value(record.rayleigh_statistic, record.skill_dim),
        record,
        log_partition_fit: fit,
    };
    Ok((report, samples))
}

fn write_columns(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string)).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Raw samples for the histogram panels, one file per panel:
/// `sq_norm.csv` (`sq_norm`), `residual.csv` (`residual_0..`),
/// `direction.csv` (`direction_0..`, plus `angle` when `d = 2`) and
/// `log_partition.csv` (`sq_norm`, `log_partition`).
pub fn write_histograms(dir: &Path, deltas: &DenseArray, samples: &DiagnosticSamples) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let d = deltas.cols();
    write_columns(&dir.join("sq_norm.csv"), &["sq_norm".into()], samples.sq_norms.iter().map(|&v| vec![v]))?;
    let res_header: Vec<String> = (0..d).map(|k| format!("residual_{k}")).collect();
    let res = &samples.residuals;
    write_columns(&dir.join("residual.csv"), &res_header, (0..res.rows()).map(|i| res.row(i).to_vec()))?;
    let mut dir_header: Vec<String> = (0..d).map(|k| format!("direction_{k}")).collect();
    if d == 2 {
        dir_header.push("angle".into());
    }
    let u = &samples.directions;
    write_columns(
        &dir.join("direction.csv"),
        &dir_header,
        (0..u.rows()).map(|i| {
            let mut row = u.row(i).to_vec();
            if d == 2 {
                row.push(row[1].atan2(row[0]));
            }
            row
        }),
    )?;
    let mut lp = Vec::with_capacity(deltas.rows());
    for i in 0..deltas.rows() {
        let w = deltas.row(i);
        let r = sphere::norm(w);
        if r <= sphere::MAX_ARGUMENT {
            lp.push(vec![r * r, sphere::log_partition(w)?]);
        }
    }
    write_columns(
        &dir.join("log_partition.csv"),
        &["sq_norm".into(), "log_partition".into()],
        lp.into_iter(),
    )
}

pub fn diagnose(args: &DiagnoseArgs) -> CliResult<(DiagnosticsReport, PathBuf)> {
    if !args.checkpoint.exists() {
        return Err(CliError::usage(format!("checkpoint {} does not exist", args.checkpoint.display())));
    }
    let cfg = checkpoint_config(&args.checkpoint, args.config.as_deref())?;
    let transitions = read_trajectories(&args.buffer)?;
    let state = checkpoint::load_state(&args.checkpoint, cfg)?;
    let (deltas, z) = transition_features(&state.repr, &state.normalizer, &transitions)?;
    let (report, samples) = diagnose_features(&deltas, &z)?;

    let out_dir = args.out.clone().unwrap_or_else(|| run_dir_of(&args.checkpoint));
    write_histograms(&out_dir.join(HISTOGRAM_DIR), &deltas, &samples)?;
    let path = out_dir.join(DIAGNOSTICS_NAME);
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::io(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok((report, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rayleigh_tail_matches_closed_form_in_two_dimensions() {
        // χ²₂ has survival function exp(−x/2).
        for x in [0.0, 0.5, 3.0, 12.0] {
            assert!((rayleigh_p_value(x, 2) - (-x / 2.0f64).exp()).abs() < 1e-12);
        }
    }
}
