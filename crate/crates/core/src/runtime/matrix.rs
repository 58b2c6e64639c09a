//! Variant-matrix sweeps with a bitwise equivalence gate.
//!
//! A sweep expands the configured `vary.*` axes into a cartesian product of
//! variants, runs each one `run.reps` times in process, and emits one Total
//! row per variant. Every repetition's snapshot must match the baseline's
//! first snapshot bit for bit; a mismatch aborts the sweep, because a timing
//! comparison between runs that computed different fields is meaningless.

use std::time::Duration;

use crate::error::{Error, Result};
use crate::grid::Decomposition;
use crate::perf::report::{fill_improvements, ReportRow};
use crate::runtime::config::{RunConfig, TransportKind};
use crate::runtime::exec::{run_local_with, CorruptGhost, RunArtifacts, Snapshot};

/// One matrix entry: a display label plus the fully resolved config.
#[derive(Debug, Clone)]
pub struct VariantSpec {
    pub label: String,
    pub cfg: RunConfig,
}

fn axis<T: Clone>(declared: &[T]) -> Vec<Option<T>> {
    if declared.is_empty() {
        vec![None]
    } else {
        declared.iter().cloned().map(Some).collect()
    }
}

/// Expand a config into its variant list: the baseline first, then the
/// cartesian product over every non-empty `vary` axis. Axes left empty keep
/// the baseline setting and do not appear in labels. Matrix runs are always
/// in-process; the transport axis is not part of the sweep.
pub fn expand_matrix(base: &RunConfig) -> Vec<VariantSpec> {
    let mut baseline = base.clone();
    baseline.transport = TransportKind::InProcess;
    let mut out = vec![VariantSpec {
        label: "baseline".to_string(),
        cfg: baseline.clone(),
    }];
    let vary = &base.vary;
    if vary.is_empty() {
        return out;
    }
    for d in axis(&vary.decomps) {
        for schedule in axis(&vary.schedules) {
            for order in axis(&vary.orders) {
                for strategy in axis(&vary.strategies) {
                    for view in axis(&vary.views) {
                        let mut cfg = baseline.clone();
                        let mut parts = Vec::new();
                        if let Some((px, py)) = d {
                            cfg.decomp = Decomposition { px, py };
                            parts.push(format!("decomp={px}x{py}"));
                        }
                        if let Some(p) = schedule {
                            cfg.policy = p;
                            parts.push(format!("schedule={p}"));
                        }
                        if let Some(o) = order {
                            cfg.order = o;
                            parts.push(format!("order={o}"));
                        }
                        if let Some(s) = strategy {
                            cfg.strategy = s;
                            parts.push(format!("strategy={s}"));
                        }
                        if let Some(v) = view {
                            cfg.view_mode = v;
                            parts.push(format!("view={v}"));
                        }
                        out.push(VariantSpec {
                            label: parts.join(","),
                            cfg,
                        });
                    }
                }
            }
        }
    }
    out
}

fn median_ms(walls: &[Duration]) -> f64 {
    let mut ms: Vec<f64> = walls.iter().map(|d| d.as_secs_f64() * 1e3).collect();
    ms.sort_by(f64::total_cmp);
    let n = ms.len();
    if n % 2 == 1 {
        ms[n / 2]
    } else {
        (ms[n / 2 - 1] + ms[n / 2]) / 2.0
    }
}

fn variant_row(var: &VariantSpec, walls: &[Duration], first: &RunArtifacts) -> ReportRow {
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let mean = walls.iter().map(|d| ms(*d)).sum::<f64>() / walls.len() as f64;
    let max = walls.iter().map(|d| ms(*d)).fold(0.0, f64::max);
    ReportRow {
        variant: var.label.clone(),
        decomp: var.cfg.decomp.to_string(),
        schedule: var.cfg.policy.to_string(),
        order: var.cfg.order.to_string(),
        strategy: var.cfg.strategy.to_string(),
        view: var.cfg.view_mode.to_string(),
        phase: "Total".to_string(),
        mean_ms: mean,
        max_ms: max,
        imbalance: first.imbalance(),
        bytes_copied: Some(first.total_bytes_copied()),
        cache_misses: None,
        total_wall_ms: Some(median_ms(walls)),
        improvement_vs_baseline: None,
    }
}

/// Run the full matrix and return one Total row per variant, baseline first,
/// with improvement columns filled against the baseline's median wall time.
pub fn run_matrix(base: &RunConfig) -> Result<Vec<ReportRow>> {
    run_matrix_with(base, None)
}

/// As [`run_matrix`], with an optional ghost corruption injected into every
/// non-baseline repetition so the equivalence gate itself can be exercised.
pub fn run_matrix_with(
    base: &RunConfig,
    corrupt: Option<CorruptGhost>,
) -> Result<Vec<ReportRow>> {
    let variants = expand_matrix(base);
    let mut rows = Vec::with_capacity(variants.len());
    let mut reference: Option<Snapshot> = None;
    for (i, var) in variants.iter().enumerate() {
        let mut walls = Vec::with_capacity(base.reps);
        let mut first: Option<RunArtifacts> = None;
        for rep in 0..base.reps {
            let inject = if i == 0 { None } else { corrupt };
            let art = run_local_with(&var.cfg, inject)?;
            match &reference {
                None => reference = Some(art.snapshot.clone()),
                Some(expected) => {
                    if !art.snapshot.bitwise_equal(expected) {
                        let detail = match art.snapshot.max_abs_diff(expected) {
                            Ok(d) => format!("max abs diff {d:e}"),
                            Err(_) => "snapshot shape mismatch".to_string(),
                        };
                        return Err(Error::Equivalence(format!(
                            "variant '{}' repetition {} diverges from the baseline field ({})",
                            var.label, rep, detail
                        )));
                    }
                }
            }
            walls.push(art.wall);
            if first.is_none() {
                first = Some(art);
            }
        }
        let first = first.expect("config validation requires reps >= 1");
        rows.push(variant_row(var, &walls, &first));
    }
    fill_improvements(&mut rows, "baseline");
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halo::FaceId;
    use crate::runtime::config::resolve_config;
    use crate::schedule::SchedulePolicy;
    use crate::stencil::LoopOrder;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn small_base(extra: &[(&str, &str)]) -> RunConfig {
        let mut pairs = vec![
            ("grid.nx", "12"),
            ("grid.ny", "10"),
            ("grid.nz", "6"),
            ("stencil.rx", "2"),
            ("stencil.ry", "2"),
            ("stencil.rz", "1"),
            ("run.steps", "3"),
            ("run.threads", "1"),
            ("run.reps", "2"),
            ("source.x", "6"),
            ("source.y", "5"),
            ("source.z", "3"),
        ];
        pairs.extend_from_slice(extra);
        resolve_config(&[], &[], &kv(&pairs)).unwrap()
    }

    #[test]
    fn empty_axes_yield_the_baseline_row_alone() {
        let base = small_base(&[]);
        let rows = run_matrix(&base).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].variant, "baseline");
        assert_eq!(rows[0].phase, "Total");
        assert_eq!(rows[0].improvement_vs_baseline, Some(0.0));
        assert!(rows[0].total_wall_ms.is_some());
        assert!(rows[0].bytes_copied.is_some());
    }

    #[test]
    fn two_axes_expand_to_the_declared_cartesian_product() {
        let base = small_base(&[
            ("vary.schedule", "static,dynamic"),
            ("vary.order", "yzx,zyx"),
        ]);
        let variants = expand_matrix(&base);
        let labels: Vec<&str> = variants.iter().map(|v| v.label.as_str()).collect();
        assert_eq!(
            labels,
            [
                "baseline",
                "schedule=static,order=yzx",
                "schedule=static,order=zyx",
                "schedule=dynamic,order=yzx",
                "schedule=dynamic,order=zyx",
            ]
        );
        let dyn_zyx = &variants[4].cfg;
        assert_eq!(dyn_zyx.policy, SchedulePolicy::Dynamic);
        assert_eq!(dyn_zyx.order, LoopOrder::Zyx);
        for v in &variants {
            assert_eq!(v.cfg.transport, TransportKind::InProcess);
            assert_eq!(v.cfg.strategy, base.strategy);
            assert_eq!(v.cfg.view_mode, base.view_mode);
            assert_eq!(v.cfg.decomp.px, base.decomp.px);
            assert_eq!(v.cfg.decomp.py, base.decomp.py);
            assert_eq!(v.cfg.steps, base.steps);
            assert_eq!(v.cfg.seed, base.seed);
        }
    }

    #[test]
    fn sweep_rows_carry_resolved_axis_values_and_improvements() {
        let base = small_base(&[("vary.view", "copy,alias")]);
        let rows = run_matrix(&base).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].variant, "baseline");
        assert_eq!(rows[1].variant, "view=copy");
        assert_eq!(rows[1].view, "copy");
        assert_eq!(rows[2].variant, "view=alias");
        assert_eq!(rows[2].view, "alias");
        assert_eq!(rows[0].improvement_vs_baseline, Some(0.0));
        assert!(rows.iter().all(|r| r.improvement_vs_baseline.is_some()));
        assert!(rows.iter().all(|r| r.phase == "Total"));
        assert!(rows[1].bytes_copied.unwrap() > 0);
        assert_eq!(rows[2].bytes_copied, Some(0));
    }

    #[test]
    fn a_diverging_variant_aborts_the_sweep() {
        let base = small_base(&[("decomp.px", "2"), ("vary.view", "copy,alias")]);
        let corrupt = CorruptGhost {
            rank: 1,
            step: 1,
            face: FaceId::XLow,
        };
        let err = run_matrix_with(&base, Some(corrupt)).unwrap_err();
        match err {
            Error::Equivalence(msg) => {
                assert!(msg.contains("view=copy"), "{msg}");
                assert!(msg.contains("repetition 0"), "{msg}");
            }
            other => panic!("expected an equivalence failure, got {other:?}"),
        }
    }

    #[test]
    fn median_wall_time_splits_even_and_odd_rep_counts() {
        let ms = Duration::from_millis;
        assert_eq!(median_ms(&[ms(10), ms(20)]), 15.0);
        assert_eq!(median_ms(&[ms(3), ms(1), ms(2)]), 2.0);
        assert_eq!(median_ms(&[ms(7)]), 7.0);
    }
}
