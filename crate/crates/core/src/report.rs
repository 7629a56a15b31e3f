//! Deterministic result files: fixed-precision CSV tables and JSON
//! summaries, written atomically (temp file + rename) so failures never
//! leave partial output behind.

use std::io::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde_json::json;

use crate::optimizer::{DualSolution, MarginalPriceSet, PrimalSolution};
use crate::stability::{ConvergenceReport, CounterexampleRow};

/// Fixed 12-significant-digit formatting used for every CSV number, so
/// acceptance runs are byte-diffable across machines.
pub fn format_sig(x: f64) -> String {
    format!("{x:.11e}")
}

/// Writes `contents` to `path` atomically: the bytes land in a temporary
/// file in the target directory, which is then renamed over the
/// destination.  Parent directories are created as needed.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&parent)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Joins one CSV row.
fn row(fields: &[String]) -> String {
    let mut line = fields.join(",");
    line.push('\n');
    line
}

/// Per-index experiment table.
pub fn stability_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("n,u_n,v_n,du_dx,dv_dy,kyfan_X,kyfan_Y,hausdorff_P,tv_distance\n");
    for r in &report.records {
        out.push_str(&row(&[
            r.n.to_string(),
            format_sig(r.u),
            format_sig(r.v),
            format_sig(r.du_dx),
            format_sig(r.dv_dy),
            format_sig(r.kyfan_x),
            format_sig(r.kyfan_y),
            format_sig(r.hausdorff_p),
            format_sig(r.tv),
        ]));
    }
    out
}

/// Instability experiment table (both the fixed-level and diagonal runs
/// share this shape).
pub fn counterexample_csv(rows: &[CounterexampleRow]) -> String {
    let mut out = String::from("m,n,tv,kyfan\n");
    for r in rows {
        out.push_str(&row(&[
            r.level.to_string(),
            r.n.to_string(),
            format_sig(r.tv),
            format_sig(r.kyfan),
        ]));
    }
    out
}

/// Per-atom table of a primal solution.
pub fn primal_csv(primal: &PrimalSolution) -> String {
    let mut out = String::from("atom,terminal_wealth,total_payoff,shadow_density\n");
    for i in 0..primal.terminal_wealth.len() {
        out.push_str(&row(&[
            i.to_string(),
            format_sig(primal.terminal_wealth[i]),
            format_sig(primal.total_payoff[i]),
            format_sig(primal.shadow_density[i]),
        ]));
    }
    out
}

/// Per-atom table of a dual solution.
pub fn dual_csv(dual: &DualSolution) -> String {
    let mut out = String::from("atom,density,shadow_density\n");
    for i in 0..dual.density.len() {
        out.push_str(&row(&[
            i.to_string(),
            format_sig(dual.density[i]),
            format_sig(dual.shadow_density[i]),
        ]));
    }
    out
}

/// Table of price vectors, one row per point.
pub fn price_points_csv(points: &[DVector<f64>]) -> String {
    let dim = points.first().map_or(0, |p| p.len());
    let mut header: Vec<String> = vec!["index".to_string()];
    header.extend((1..=dim).map(|j| format!("r_{j}")));
    let mut out = row(&header);
    for (k, p) in points.iter().enumerate() {
        let mut fields = vec![k.to_string()];
        fields.extend(p.iter().map(|&v| format_sig(v)));
        out.push_str(&row(&fields));
    }
    out
}

/// JSON summary of a matched solve.
pub fn solve_summary(
    primal: &PrimalSolution,
    dual: &DualSolution,
    prices: &MarginalPriceSet,
    seed: Option<u64>,
) -> String {
    let points: Vec<Vec<f64>> = prices
        .points
        .iter()
        .map(|p| p.iter().copied().collect())
        .collect();
    let doc = json!({
        "u": primal.value,
        "du_dx": primal.marginal_value,
        "marginal_bundle_value": primal
            .marginal_bundle_value
            .iter()
            .copied()
            .collect::<Vec<f64>>(),
        "v": dual.value,
        "dv_dy": dual.capital_marginal,
        "y": dual.y,
        "r": dual.r.iter().copied().collect::<Vec<f64>>(),
        "price_set": points,
        "price_set_diameter": prices.diameter(),
        "kkt_residual_primal": primal.kkt_residual,
        "kkt_residual_dual": dual.kkt_residual,
        "seed": seed,
    });
    pretty(doc)
}

/// JSON summary of a stability experiment: the verdicts, the limit solution
/// data, and the family validation readings.
pub fn stability_summary(report: &ConvergenceReport, seed: Option<u64>) -> String {
    let v = &report.verdicts;
    let onsets: Vec<serde_json::Value> = v
        .hausdorff_onsets
        .iter()
        .map(|(eps, onset)| json!({"epsilon": eps, "onset": onset}))
        .collect();
    let doc = json!({
        "verdicts": {
            "values_pass": v.values_pass,
            "kyfan_pass": v.kyfan_pass,
            "hausdorff_pass": v.hausdorff_pass,
            "semicontinuity_pass": v.semicontinuity_pass,
            "all_pass": v.all_pass(),
            "value_gap": v.value_gap,
            "derivative_gap": v.derivative_gap,
            "kyfan_gap": v.kyfan_gap,
            "hausdorff_onsets": onsets,
            "liminf_defect": v.liminf_defect,
            "limsup_defect": v.limsup_defect,
        },
        "thresholds": {
            "value": report.thresholds.value,
            "kyfan": report.thresholds.kyfan,
            "hausdorff_ladder": report.thresholds.hausdorff_ladder,
        },
        "limit": {
            "u": report.limit.u,
            "v": report.limit.v,
            "du_dx": report.limit.du_dx,
            "dv_dy": report.limit.dv_dy,
            "price_set_size": report.limit.prices.points.len(),
        },
        "validation": {
            "final_tv": report.validation.final_tv,
            "monotone_from_position": report.validation.monotone_from_position,
            "final_utility_gap": report.validation.final_utility_gap,
        },
        "records": report.records.len(),
        "seed": seed,
    });
    pretty(doc)
}

/// JSON summary of the instability experiment.
pub fn counterexample_summary(
    fixed: &[CounterexampleRow],
    diagonal: &[CounterexampleRow],
    seed: Option<u64>,
) -> String {
    let last_fixed = fixed.last();
    let last_diag = diagonal.last();
    let doc = json!({
        "fixed_level": {
            "rows": fixed.len(),
            "final_n": last_fixed.map(|r| r.n),
            "final_tv": last_fixed.map(|r| r.tv),
            "final_kyfan": last_fixed.map(|r| r.kyfan),
        },
        "diagonal": {
            "rows": diagonal.len(),
            "final_level": last_diag.map(|r| r.level),
            "final_tv": last_diag.map(|r| r.tv),
            "final_kyfan": last_diag.map(|r| r.kyfan),
        },
        "seed": seed,
    });
    pretty(doc)
}

fn pretty(doc: serde_json::Value) -> String {
    let mut text = serde_json::to_string_pretty(&doc).expect("serializable document");
    text.push('\n');
    text
}
