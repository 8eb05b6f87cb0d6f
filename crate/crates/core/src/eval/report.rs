//! Report files: the rule table CSV, the JSON bundle and the latent scatter CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{EvalReport, FoldResult};
use crate::error::Result;
use crate::simulator::{FactorVector, FACTOR_NAMES};

/// `v<crate version>`, the version string recorded in bundles.
pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Columns `rule,mean_yellow_speed,standard_error,kappa,balanced_accuracy`;
/// a streaming row named `Streaming-Windowed-Average` follows when present.
pub fn write_rule_table<W: Write>(mut out: W, report: &EvalReport) -> Result<()> {
    writeln!(out, "rule,mean_yellow_speed,standard_error,kappa,balanced_accuracy")?;
    for r in &report.rules {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.rule.name(),
            r.mean_yellow_speed,
            r.standard_error,
            r.kappa,
            opt(r.balanced_accuracy)
        )?;
    }
    if let Some(s) = &report.stream {
        writeln!(
            out,
            "Streaming-Windowed-Average,{},{},{},{}",
            s.mean_yellow_speed,
            s.standard_error,
            s.kappa,
            opt(s.balanced_accuracy)
        )?;
    }
    Ok(())
}

/// Columns `factor,normalized_kl`.
pub fn write_kl_table<W: Write>(mut out: W, report: &EvalReport) -> Result<()> {
    writeln!(out, "factor,normalized_kl")?;
    for name in FACTOR_NAMES {
        writeln!(out, "{},{}", name, report.normalized_kl[name])?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalBundle {
    pub version: String,
    pub config_hash: String,
    pub report: EvalReport,
    pub folds: Vec<FoldResult>,
}

pub fn write_bundle<W: Write>(mut out: W, bundle: &EvalBundle) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, bundle)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScatterRow {
    pub subject_id: usize,
    pub z: Vec<f64>,
    pub factors: FactorVector,
    pub deploy: bool,
}

/// Columns `subject_id,z0,...,z{D-1},<factor names>,decision`.
pub fn write_scatter<W: Write>(mut out: W, rows: &[ScatterRow]) -> Result<()> {
    let dim = rows.first().map_or(2, |r| r.z.len());
    let zcols: Vec<String> = (0..dim).map(|k| format!("z{k}")).collect();
    writeln!(
        out,
        "subject_id,{},{},decision",
        zcols.join(","),
        FACTOR_NAMES.join(",")
    )?;
    for r in rows {
        let z: Vec<String> = r.z.iter().map(|v| v.to_string()).collect();
        let f: Vec<String> = r.factors.to_array().iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{}",
            r.subject_id,
            z.join(","),
            f.join(","),
            u8::from(r.deploy)
        )?;
    }
    Ok(())
}
