//! Displacement metrics over multimodal predictions.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::model::{Model, PredictionSet, SceneInputs};

pub const MISS_THRESHOLD: f64 = 2.0;

/// Smallest endpoint error over modes, with the index of that mode.
/// Ties go to the lowest index.
pub fn min_fde(pred: &[Vec<Point2>], gt: &[Point2]) -> (f64, usize) {
    assert!(!pred.is_empty(), "at least one mode");
    let end = *gt.last().expect("non-empty ground truth");
    let mut best = (f64::INFINITY, 0);
    for (k, mode) in pred.iter().enumerate() {
        let d = mode.last().expect("non-empty mode").distance(end);
        if d < best.0 {
            best = (d, k);
        }
    }
    best
}

/// Mean per-step error of the mode selected by [`min_fde`].
pub fn min_ade(pred: &[Vec<Point2>], gt: &[Point2]) -> f64 {
    let (_, k) = min_fde(pred, gt);
    average_displacement(&pred[k], gt)
}

fn average_displacement(mode: &[Point2], gt: &[Point2]) -> f64 {
    assert_eq!(mode.len(), gt.len(), "mode and ground truth lengths");
    mode.iter().zip(gt).map(|(a, b)| a.distance(*b)).sum::<f64>() / gt.len() as f64
}

/// Fraction of errors strictly above `threshold`.
pub fn miss_rate(min_fdes: &[f64], threshold: f64) -> Result<f64> {
    if min_fdes.is_empty() {
        return Err(Error::Argument("miss rate of an empty list".into()));
    }
    Ok(min_fdes.iter().filter(|&&d| d > threshold).count() as f64 / min_fdes.len() as f64)
}

pub fn b_min_fde(min_fde: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("best-mode probability {p} outside [0, 1]")));
    }
    Ok(min_fde + (1.0 - p) * (1.0 - p))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgentMetrics {
    pub scenario_id: String,
    pub agent_id: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub b_min_fde: f64,
    pub miss: u8,
}

impl AgentMetrics {
    pub fn evaluate(scenario_id: &str, agent_id: usize, pred: &[Vec<Point2>], confidences: &[f64], gt: &[Point2]) -> Result<Self> {
        let (fde, k) = min_fde(pred, gt);
        let p = confidences.get(k).copied().unwrap_or(0.0).clamp(0.0, 1.0);
        Ok(Self {
            scenario_id: scenario_id.to_string(),
            agent_id,
            min_ade: average_displacement(&pred[k], gt),
            min_fde: fde,
            b_min_fde: b_min_fde(fde, p)?,
            miss: u8::from(fde > MISS_THRESHOLD),
        })
    }
}

/// Per-agent records plus unweighted means over all target agents.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalResult {
    pub min_ade: f64,
    pub min_fde: f64,
    pub b_min_fde: f64,
    pub miss_rate: f64,
    pub records: Vec<AgentMetrics>,
}

impl EvalResult {
    pub fn from_records(records: Vec<AgentMetrics>) -> Result<Self> {
        let n = records.len() as f64;
        let fdes: Vec<f64> = records.iter().map(|r| r.min_fde).collect();
        let miss_rate = miss_rate(&fdes, MISS_THRESHOLD)?;
        let mean = |f: fn(&AgentMetrics) -> f64| records.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            min_ade: mean(|r| r.min_ade),
            min_fde: mean(|r| r.min_fde),
            b_min_fde: mean(|r| r.b_min_fde),
            miss_rate,
            records,
        })
    }

    /// Accumulates records for every target of a prediction set.
    pub fn push_scene(records: &mut Vec<AgentMetrics>, scenario_id: &str, pred: &PredictionSet, gt: &[Vec<Point2>]) -> Result<()> {
        if gt.len() != pred.target_ids.len() {
            return Err(Error::MissingGroundTruth(format!(
                "{scenario_id}: {} ground-truth tracks for {} targets",
                gt.len(),
                pred.target_ids.len()
            )));
        }
        for (i, &agent) in pred.target_ids.iter().enumerate() {
            records.push(AgentMetrics::evaluate(scenario_id, agent, &pred.trajectories[i], &pred.confidences[i], &gt[i])?);
        }
        Ok(())
    }

    /// One row per agent, then a `summary` row whose `miss` column holds the miss rate.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Argument(format!("csv: {e}"));
        w.write_record(["scenario_id", "agent_id", "min_ade", "min_fde", "b_min_fde", "miss"]).map_err(io)?;
        for r in &self.records {
            w.write_record([
                r.scenario_id.clone(),
                r.agent_id.to_string(),
                r.min_ade.to_string(),
                r.min_fde.to_string(),
                r.b_min_fde.to_string(),
                r.miss.to_string(),
            ])
            .map_err(io)?;
        }
        w.write_record([
            "summary".to_string(),
            String::new(),
            self.min_ade.to_string(),
            self.min_fde.to_string(),
            self.b_min_fde.to_string(),
            self.miss_rate.to_string(),
        ])
        .map_err(io)?;
        let bytes = w.into_inner().map_err(|e| Error::Argument(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Predicts every named scene (in parallel, results in input order) and
/// scores the targets against their ground truth.
pub fn evaluate_model(model: &Model, scenes: &[(String, SceneInputs)]) -> Result<(EvalResult, Vec<(String, PredictionSet)>)> {
    let predictions: Vec<(String, PredictionSet)> = scenes
        .par_iter()
        .map(|(id, inputs)| model.predict(inputs).map(|p| (id.clone(), p)))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for ((id, inputs), (_, pred)) in scenes.iter().zip(&predictions) {
        let gt = inputs
            .ground_truth
            .as_ref()
            .ok_or_else(|| Error::MissingGroundTruth(id.clone()))?;
        EvalResult::push_scene(&mut records, id, pred, gt)?;
    }
    Ok((EvalResult::from_records(records)?, predictions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(start: Point2, step: Point2, n: usize) -> Vec<Point2> {
        (1..=n).map(|i| start + step * i as f64).collect()
    }

    #[test]
    fn endpoint_examples() {
        let gt = vec![Point2::ORIGIN; 3];
        let mode = vec![Point2::ORIGIN, Point2::ORIGIN, Point2::new(3.0, 4.0)];
        assert_eq!(min_fde(&[mode], &gt), (5.0, 0));
        assert_eq!(min_fde(&[gt.clone()], &gt).0, 0.0);
        let ends = [2.5, 1.2, 7.0].map(|d| vec![Point2::new(d, 0.0)]);
        assert_eq!(min_fde(&ends, &[Point2::ORIGIN]), (1.2, 1));
    }

    #[test]
    fn ade_examples() {
        let gt = line(Point2::ORIGIN, Point2::new(1.0, 0.0), 4);
        assert_eq!(min_ade(&[gt.clone()], &gt), 0.0);
        let shifted: Vec<_> = gt.iter().map(|&p| p + Point2::new(3.0, 4.0)).collect();
        assert!((min_ade(&[shifted], &gt) - 5.0).abs() < 1e-12);

        // A: errors 0, 0, 3 (ADE 1, FDE 3). B: errors 2.5, 2.5, 1 (ADE 2, FDE 1).
        let gt = vec![Point2::ORIGIN; 3];
        let a = vec![Point2::ORIGIN, Point2::ORIGIN, Point2::new(3.0, 0.0)];
        let b = vec![Point2::new(2.5, 0.0), Point2::new(2.5, 0.0), Point2::new(1.0, 0.0)];
        assert!((average_displacement(&a, &gt) - 1.0).abs() < 1e-12);
        assert!((min_ade(&[a, b], &gt) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn miss_rate_examples() {
        assert_eq!(miss_rate(&[1.9, 2.5], 2.0).unwrap(), 0.5);
        assert_eq!(miss_rate(&[0.0; 4], 2.0).unwrap(), 0.0);
        assert_eq!(miss_rate(&[2.0], 2.0).unwrap(), 0.0);
        assert!(miss_rate(&[], 2.0).is_err());
    }

    #[test]
    fn brier_examples() {
        assert_eq!(b_min_fde(5.0, 1.0).unwrap(), 5.0);
        assert_eq!(b_min_fde(5.0, 0.5).unwrap(), 5.25);
        assert_eq!(b_min_fde(0.0, 0.0).unwrap(), 1.0);
        assert!(b_min_fde(1.0, 1.5).is_err());
        assert!(b_min_fde(1.0, -0.1).is_err());
    }

    #[test]
    fn csv_has_summary_row() {
        let gt = vec![line(Point2::ORIGIN, Point2::new(1.0, 0.0), 2)];
        let pred = PredictionSet {
            target_ids: vec![3],
            trajectories: vec![vec![gt[0].clone(), line(Point2::ORIGIN, Point2::new(0.0, 5.0), 2)]],
            confidences: vec![vec![0.75, 0.25]],
        };
        let mut records = Vec::new();
        EvalResult::push_scene(&mut records, "s0", &pred, &gt).unwrap();
        let r = EvalResult::from_records(records).unwrap();
        assert_eq!(r.b_min_fde, 0.0625);
        let text = r.to_csv().unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "s0,3,0,0,0.0625,0");
        assert!(lines[2].starts_with("summary,,"));
    }

    fn arb_modes(k: usize, t: usize) -> impl Strategy<Value = Vec<Vec<Point2>>> {
        prop::collection::vec(prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64).prop_map(|(x, y)| Point2::new(x, y)), t), k)
    }

    proptest! {
        #[test]
        fn more_modes_never_hurt(modes in arb_modes(4, 5), gt in arb_modes(1, 5)) {
            let gt = &gt[0];
            let full = min_fde(&modes, gt).0;
            for drop in 0..modes.len() {
                let mut subset = modes.clone();
                subset.remove(drop);
                prop_assert!(full <= min_fde(&subset, gt).0);
            }
            let (_, k) = min_fde(&modes, gt);
            let max_step = modes[k].iter().zip(gt).map(|(a, b)| a.distance(*b)).fold(0.0, f64::max);
            prop_assert!(min_ade(&modes, gt) <= max_step + 1e-12);
        }

        #[test]
        fn brier_gap_in_unit_interval(fde in 0.0..50.0f64, p in 0.0..=1.0f64) {
            let gap = b_min_fde(fde, p).unwrap() - fde;
            prop_assert!((0.0..=1.0 + 1e-15).contains(&gap));
        }
    }
}
