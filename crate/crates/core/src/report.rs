//! Prediction exports: raw point CSV and per-target SVG plots.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::lane_graph::Scenario;
use crate::model::PredictionSet;

/// Columns `scenario_id, agent_id, mode, step, x, y, confidence`.
pub fn prediction_csv(scenes: &[(String, PredictionSet)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Argument(format!("csv: {e}"));
    w.write_record(["scenario_id", "agent_id", "mode", "step", "x", "y", "confidence"]).map_err(err)?;
    for (id, pred) in scenes {
        for (t, &agent) in pred.target_ids.iter().enumerate() {
            for (k, mode) in pred.trajectories[t].iter().enumerate() {
                let conf = pred.confidences[t][k].to_string();
                for (step, p) in mode.iter().enumerate() {
                    w.write_record([
                        id.as_str(),
                        &agent.to_string(),
                        &k.to_string(),
                        &step.to_string(),
                        &p.x.to_string(),
                        &p.y.to_string(),
                        &conf,
                    ])
                    .map_err(err)?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Argument(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn points_attr(pts: &[Point2]) -> String {
    let mut s = String::new();
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{:.3},{:.3}", p.x, p.y);
    }
    s
}

/// Lanes in gray, the history in solid blue, ground truth in solid green and
/// each predicted mode as a dashed red line. `scene` must be in the same
/// frame as `pred`; `target` indexes `pred.target_ids`.
pub fn svg_plot(scene: &Scenario, pred: &PredictionSet, target: usize) -> Result<String> {
    let agent = *pred
        .target_ids
        .get(target)
        .ok_or_else(|| Error::Argument(format!("target index {target} out of range")))?;
    let history: Vec<Point2> = scene.agents[agent].states.iter().filter(|s| s.observed).map(|s| s.position()).collect();
    let gt: Vec<Point2> = scene
        .ground_truth
        .as_ref()
        .and_then(|g| g.get(agent))
        .cloned()
        .unwrap_or_default();

    let focus = history.iter().chain(&gt).chain(pred.trajectories[target].iter().flatten());
    let (mut lo, mut hi) = (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in focus {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Argument("nothing finite to plot".into()));
    }
    let margin = 10.0;
    let (x0, y0) = (lo.x - margin, lo.y - margin);
    let (w, h) = (hi.x - lo.x + 2.0 * margin, hi.y - lo.y + 2.0 * margin);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.3} {:.3} {:.3} {:.3}" width="800" height="{:.0}">"#,
        x0,
        -(y0 + h),
        w,
        h,
        800.0 * h / w
    );
    let _ = writeln!(svg, r#"<g transform="scale(1,-1)" fill="none" stroke-linecap="round">"#);
    for lane in &scene.lanes {
        let _ = writeln!(
            svg,
            r##"<polyline class="lane" points="{}" stroke="#999999" stroke-width="0.3"/>"##,
            points_attr(&lane.points())
        );
    }
    let _ = writeln!(
        svg,
        r#"<polyline class="history" points="{}" stroke="blue" stroke-width="0.4"/>"#,
        points_attr(&history)
    );
    if !gt.is_empty() {
        let _ = writeln!(
            svg,
            r#"<polyline class="ground_truth" points="{}" stroke="green" stroke-width="0.4"/>"#,
            points_attr(&gt)
        );
    }
    for (k, mode) in pred.trajectories[target].iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<polyline class="prediction" data-mode="{k}" data-confidence="{:.4}" points="{}" stroke="red" stroke-width="0.3" stroke-dasharray="1,0.6"/>"#,
            pred.confidences[target][k],
            points_attr(mode)
        );
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}
