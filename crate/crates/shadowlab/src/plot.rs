//! Plot-data emission: CSV tables derived from a finished report.

use crate::error::{Error, Result};
use crate::experiment::ExperimentReport;

/// Tabular dumps: `trace-distance`, `error-vs-delta`, `branches`,
/// `side-map`.
pub fn emit_plot_data(report: &ExperimentReport, kind: &str) -> Result<String> {
    match kind {
        "trace-distance" => trace_distance(report),
        "error-vs-delta" => error_vs_delta(report),
        "branches" => branches(report),
        "side-map" => side_map(report),
        other => Err(Error::BadParameter(format!("unknown plot kind `{other}`"))),
    }
}

fn trace_distance(report: &ExperimentReport) -> Result<String> {
    let mut out = String::from("delta,t,distance\n");
    for o in &report.body.per_delta {
        for &(t, d) in &o.trace_distance {
            out.push_str(&format!("{},{},{}\n", o.delta, t, d));
        }
    }
    Ok(out)
}

fn error_vs_delta(report: &ExperimentReport) -> Result<String> {
    let mut out = String::from(
        "delta,achieved_error,best_grid_error,min_candidate_error,grid_modulus,traced,candidates\n",
    );
    for o in &report.body.per_delta {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            o.delta,
            o.verdict.achieved_error,
            o.verdict.best_grid_error,
            o.verdict.min_candidate_error,
            o.verdict.grid_modulus,
            o.verdict.traced,
            o.verdict.candidate_count
        ));
    }
    Ok(out)
}

fn branches(report: &ExperimentReport) -> Result<String> {
    let lm = report
        .body
        .landmarks
        .as_ref()
        .ok_or_else(|| Error::BadParameter("report has no landmark data".into()))?;
    let mut out = String::from("curve,x,y,z\n");
    for p in &lm.branch_left {
        out.push_str(&format!("left,{},{},{}\n", p[0], p[1], p[2]));
    }
    for p in &lm.branch_right {
        out.push_str(&format!("right,{},{},{}\n", p[0], p[1], p[2]));
    }
    out.push_str(&format!("y_left,{},{},{}\n", lm.y_left[0], lm.y_left[1], lm.y_left[2]));
    out.push_str(&format!("y_right,{},{},{}\n", lm.y_right[0], lm.y_right[1], lm.y_right[2]));
    out.push_str(&format!("sigma,{},{},{}\n", lm.sigma[0], lm.sigma[1], lm.sigma[2]));
    Ok(out)
}

fn side_map(report: &ExperimentReport) -> Result<String> {
    if report.body.side_checks.is_empty() {
        return Err(Error::BadParameter("report has no side-classification data".into()));
    }
    let mut out = String::from("x,y,z,verdict\n");
    for c in &report.body.side_checks {
        let label = match c.verdict {
            crate::section::SideVerdict::Side { positive } => {
                if positive {
                    "side+"
                } else {
                    "side-"
                }
            }
            crate::section::SideVerdict::BiSide => "bi-side",
            crate::section::SideVerdict::Neither => "neither",
            crate::section::SideVerdict::Inconclusive => "inconclusive",
        };
        out.push_str(&format!("{},{},{},{}\n", c.point[0], c.point[1], c.point[2], label));
    }
    Ok(out)
}
