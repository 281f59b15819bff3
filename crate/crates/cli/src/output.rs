//! File formats: CSV and JSON writers for the three result kinds plus the
//! profile reader used by the fit subcommand. Floats are written with 17
//! significant digits so a read-back loses nothing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mqpore::profile::QuadratureReport;
use mqpore::{AveragedProfile, FamilySplit, FitParams, ProfileFit, TimeSeries};

use crate::{CliError, Format};

pub const SCHEMA_VERSION: u32 = 1;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

#[derive(Serialize, Deserialize)]
struct TimeSeriesDoc {
    schema_version: u32,
    kind: String,
    n_spins: u32,
    coupling: f64,
    /// Negative orders are omitted; they mirror the positive ones exactly.
    symmetric: bool,
    spectra: Vec<SpectrumDoc>,
}

#[derive(Serialize, Deserialize)]
struct SpectrumDoc {
    t: f64,
    intensities: BTreeMap<i32, f64>,
}

pub fn write_time_series(
    series: &TimeSeries,
    path: &Path,
    format: Format,
) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            let mut out = String::from("t,order,intensity\n");
            for (spectrum, &t) in series.spectra.iter().zip(&series.grid) {
                for (&k, &v) in spectrum.intensities.range(0..) {
                    let _ = writeln!(out, "{},{k},{}", num(t), num(v));
                }
            }
            write_file(path, &out)
        }
        Format::Json => {
            let doc = TimeSeriesDoc {
                schema_version: SCHEMA_VERSION,
                kind: "time_series".into(),
                n_spins: series.system.n_spins(),
                coupling: series.system.coupling(),
                symmetric: true,
                spectra: series
                    .spectra
                    .iter()
                    .zip(&series.grid)
                    .map(|(s, &t)| SpectrumDoc {
                        t,
                        intensities: s.intensities.range(0..).map(|(&k, &v)| (k, v)).collect(),
                    })
                    .collect(),
            };
            write_file(path, &to_json(&doc)?)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ProfileDoc {
    schema_version: u32,
    kind: String,
    n_spins: u32,
    coupling: f64,
    t0: f64,
    k0_periods: u32,
    period: f64,
    symmetric: bool,
    averaged: BTreeMap<u32, f64>,
    quadrature: QuadratureReport,
}

pub fn write_profile(
    profile: &AveragedProfile,
    path: &Path,
    format: Format,
) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "# schema_version,{SCHEMA_VERSION}");
            let _ = writeln!(out, "# kind,averaged_profile");
            let _ = writeln!(out, "# n_spins,{}", profile.system.n_spins());
            let _ = writeln!(out, "# coupling,{}", num(profile.system.coupling()));
            let _ = writeln!(out, "# t0,{}", num(profile.t0));
            let _ = writeln!(out, "# k0_periods,{}", profile.k0_periods);
            let _ = writeln!(out, "# period,{}", num(profile.period));
            let _ = writeln!(out, "# symmetric,true");
            let _ = writeln!(out, "# final_step,{}", num(profile.quadrature.final_step));
            let _ = writeln!(
                out,
                "# refinement_levels,{}",
                profile.quadrature.refinement_levels
            );
            let _ = writeln!(
                out,
                "# last_max_change,{}",
                num(profile.quadrature.last_max_change)
            );
            let _ = writeln!(out, "# evaluations,{}", profile.quadrature.evaluations);
            out.push_str("order,intensity\n");
            for (&k, &v) in &profile.averaged {
                let _ = writeln!(out, "{k},{}", num(v));
            }
            write_file(path, &out)
        }
        Format::Json => {
            let doc = ProfileDoc {
                schema_version: SCHEMA_VERSION,
                kind: "averaged_profile".into(),
                n_spins: profile.system.n_spins(),
                coupling: profile.system.coupling(),
                t0: profile.t0,
                k0_periods: profile.k0_periods,
                period: profile.period,
                symmetric: true,
                averaged: profile.averaged.clone(),
                quadrature: profile.quadrature,
            };
            write_file(path, &to_json(&doc)?)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FitDoc {
    schema_version: u32,
    kind: String,
    j_bar_zero: f64,
    staged: FitParams,
    joint: FitParams,
    staged_rms_gamma1: f64,
    staged_rms_gamma2: f64,
    joint_rms_gamma1: f64,
    joint_rms_gamma2: f64,
    normalization_residual_staged: f64,
    normalization_residual_joint: f64,
}

pub fn write_fit(fit: &ProfileFit, path: &Path, format: Format) -> Result<(), CliError> {
    let staged_residual = mqpore::profile::eq_normalization_residual(&fit.staged, fit.j_bar_zero);
    let joint_residual = mqpore::normalization_residual(fit);
    match format {
        Format::Csv => {
            let mut out = String::from("set,parameter,value\n");
            for (name, p) in [("staged", &fit.staged), ("joint", &fit.joint)] {
                for (param, value) in [
                    ("A1", p.amp1),
                    ("A2", p.amp2),
                    ("alpha1", p.alpha1),
                    ("alpha2", p.alpha2),
                    ("a1", p.a1),
                    ("a2", p.a2),
                ] {
                    let _ = writeln!(out, "{name},{param},{}", num(value));
                }
            }
            for (param, value) in [
                ("j_bar_zero", fit.j_bar_zero),
                ("staged_rms_gamma1", fit.staged_residuals.gamma1),
                ("staged_rms_gamma2", fit.staged_residuals.gamma2),
                ("joint_rms_gamma1", fit.joint_residuals.gamma1),
                ("joint_rms_gamma2", fit.joint_residuals.gamma2),
                ("normalization_residual_staged", staged_residual),
                ("normalization_residual_joint", joint_residual),
            ] {
                let _ = writeln!(out, "meta,{param},{}", num(value));
            }
            write_file(path, &out)
        }
        Format::Json => {
            let doc = FitDoc {
                schema_version: SCHEMA_VERSION,
                kind: "profile_fit".into(),
                j_bar_zero: fit.j_bar_zero,
                staged: fit.staged,
                joint: fit.joint,
                staged_rms_gamma1: fit.staged_residuals.gamma1,
                staged_rms_gamma2: fit.staged_residuals.gamma2,
                joint_rms_gamma1: fit.joint_residuals.gamma1,
                joint_rms_gamma2: fit.joint_residuals.gamma2,
                normalization_residual_staged: staged_residual,
                normalization_residual_joint: joint_residual,
            };
            write_file(path, &to_json(&doc)?)
        }
    }
}

fn to_json<T: Serialize>(doc: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(doc).map_err(|e| CliError::Io(format!("encoding JSON: {e}")))
}

/// Load a stored profile (either format, detected from the content) and
/// split it into the fit families.
pub fn read_profile_for_fit(path: &Path) -> Result<(FamilySplit, f64), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    let averaged = if text.trim_start().starts_with('{') {
        let doc: ProfileDoc = serde_json::from_str(&text).map_err(|e| {
            CliError::Usage(format!("{}: JSON parse error: {e}", path.display()))
        })?;
        if doc.kind != "averaged_profile" {
            return Err(CliError::Usage(format!(
                "{}: expected kind 'averaged_profile', found '{}'",
                path.display(),
                doc.kind
            )));
        }
        doc.averaged
    } else {
        parse_profile_csv(&text, path)?
    };
    let Some(&zero_order) = averaged.get(&0) else {
        return Err(CliError::Usage(format!(
            "{}: profile lacks the order-0 intensity",
            path.display()
        )));
    };
    let mut gamma1 = BTreeMap::new();
    let mut gamma2 = BTreeMap::new();
    for (&k, &v) in &averaged {
        if k == 0 {
            continue;
        } else if k % 4 == 2 {
            gamma1.insert(k, v);
        } else {
            gamma2.insert(k, v);
        }
    }
    Ok((
        FamilySplit {
            gamma1,
            gamma2,
            zero_order,
        },
        zero_order,
    ))
}

fn parse_profile_csv(text: &str, path: &Path) -> Result<BTreeMap<u32, f64>, CliError> {
    let mut averaged = BTreeMap::new();
    let mut saw_header = false;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != "order,intensity" {
                return Err(CliError::Usage(format!(
                    "{}:{lineno}: expected header 'order,intensity', found '{line}'",
                    path.display()
                )));
            }
            saw_header = true;
            continue;
        }
        let mut fields = line.split(',');
        let (Some(order_field), Some(value_field), None) =
            (fields.next(), fields.next(), fields.next())
        else {
            return Err(CliError::Usage(format!(
                "{}:{lineno}: expected two fields 'order,intensity', found '{line}'",
                path.display()
            )));
        };
        let order: u32 = order_field.trim().parse().map_err(|e| {
            CliError::Usage(format!(
                "{}:{lineno}: field 'order' ('{order_field}') is not a nonnegative integer: {e}",
                path.display()
            ))
        })?;
        let value: f64 = value_field.trim().parse().map_err(|e| {
            CliError::Usage(format!(
                "{}:{lineno}: field 'intensity' ('{value_field}') is not a number: {e}",
                path.display()
            ))
        })?;
        averaged.insert(order, value);
    }
    if !saw_header {
        return Err(CliError::Usage(format!(
            "{}: no 'order,intensity' table found",
            path.display()
        )));
    }
    Ok(averaged)
}
