//! Cross-variant CSV report.
//!
//! One row per (variant, phase) plus a `total` row per variant. The header
//! is fixed; optional cells (imbalance, bytes copied, cache misses, wall
//! time, improvement) are left empty where a quantity does not apply to a
//! row. CSV is the canonical output; plots are external tooling's job.

use std::path::Path;

use crate::error::Result;

pub const REPORT_HEADER: &str = "variant,decomp,schedule,order,strategy,view,phase,mean_ms,max_ms,imbalance,bytes_copied,cache_misses,total_wall_ms,improvement_vs_baseline";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub variant: String,
    pub decomp: String,
    pub schedule: String,
    pub order: String,
    pub strategy: String,
    pub view: String,
    /// Phase name, or "Total" for the whole-step row.
    pub phase: String,
    pub mean_ms: f64,
    pub max_ms: f64,
    pub imbalance: Option<f64>,
    pub bytes_copied: Option<u64>,
    pub cache_misses: Option<u64>,
    pub total_wall_ms: Option<f64>,
    pub improvement_vs_baseline: Option<f64>,
}

/// (baseline − variant) / baseline; positive means the variant is faster.
pub fn improvement(baseline_ms: f64, variant_ms: f64) -> Option<f64> {
    if baseline_ms > 0.0 {
        Some((baseline_ms - variant_ms) / baseline_ms)
    } else {
        None
    }
}

/// Fill every row's improvement column against the same-phase row of
/// `baseline_variant`, using mean phase time (wall time for total rows).
pub fn fill_improvements(rows: &mut [ReportRow], baseline_variant: &str) {
    let reference: Vec<(String, f64)> = rows
        .iter()
        .filter(|r| r.variant == baseline_variant)
        .map(|r| (r.phase.clone(), r.total_wall_ms.unwrap_or(r.mean_ms)))
        .collect();
    for row in rows.iter_mut() {
        let base = reference
            .iter()
            .find(|(phase, _)| *phase == row.phase)
            .map(|(_, ms)| *ms);
        row.improvement_vs_baseline = base
            .and_then(|b| improvement(b, row.total_wall_ms.unwrap_or(row.mean_ms)));
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn opt_u64(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{},{},{},{},{}\n",
            r.variant,
            r.decomp,
            r.schedule,
            r.order,
            r.strategy,
            r.view,
            r.phase,
            r.mean_ms,
            r.max_ms,
            opt_f64(r.imbalance),
            opt_u64(r.bytes_copied),
            opt_u64(r.cache_misses),
            opt_f64(r.total_wall_ms),
            opt_f64(r.improvement_vs_baseline),
        ));
    }
    out
}

pub fn emit_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    std::fs::write(path, report_csv(rows))?;
    Ok(())
}
