//! Winner-takes-all regression, endpoint, and margin classification losses.

use lgt_autodiff::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::model::DecodedModes;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Classification margin.
    pub epsilon: f64,
    /// Huber transition point, meters.
    pub huber_delta: f64,
    pub w_reg: f64,
    pub w_cls: f64,
    pub w_goal: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            huber_delta: 1.0,
            w_reg: 1.0,
            w_cls: 1.0,
            w_goal: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config(format!("huber_delta must be > 0, got {}", self.huber_delta)));
        }
        Ok(())
    }
}

/// Mode whose final point is closest to the ground-truth final point; ties
/// go to the lowest index.
pub fn select_best_mode(modes: &[Vec<Point2>], gt: &[Point2]) -> usize {
    let end = *gt.last().expect("ground truth has at least one step");
    let mut best = (f64::INFINITY, 0);
    for (k, m) in modes.iter().enumerate() {
        let d = m.last().expect("mode has at least one step").distance(end);
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// `Σ_i Σ_{k≠k̂} max(0, c_k + ε − c_k̂) / (N (K − 1))` over `confidences [N, K]`.
pub fn classification_loss<'g>(confidences: Var<'g>, best: &[usize], epsilon: f64) -> Result<Var<'g>> {
    let shape = confidences.shape();
    let (n, k) = (shape[0], shape[1]);
    if k < 2 {
        return Err(Error::ClassificationUndefined(k));
    }
    if best.len() != n || best.iter().any(|&b| b >= k) {
        return Err(Error::Argument(format!("best modes {best:?} do not fit confidences {shape:?}")));
    }
    let g = confidences.graph();
    let one_hot = g.constant(Tensor::from_fn(&[n, k], |i| f64::from(best[i / k] == i % k)));
    let others = g.constant(Tensor::from_fn(&[n, k], |i| f64::from(best[i / k] != i % k)));
    // Each row of `winner` repeats that row's best-mode confidence.
    let winner = confidences.mul(one_hot)?.matmul(g.constant(Tensor::ones(&[k, k])))?;
    let hinge = confidences.sub(winner)?.add_scalar(epsilon).relu().mul(others)?;
    Ok(hinge.sum().scale(1.0 / (n * (k - 1)) as f64))
}

/// Huber sum over every coordinate of `pred [N, 2T']` divided by `N·T'`.
pub fn regression_loss<'g>(pred: Var<'g>, gt: &Tensor, delta: f64) -> Result<Var<'g>> {
    if pred.shape() != gt.shape() {
        return Err(lgt_autodiff::Error::Shape {
            op: "regression_loss",
            lhs: pred.shape(),
            rhs: gt.shape().to_vec(),
        }
        .into());
    }
    let steps = gt.len() / 2;
    let residual = pred.sub(pred.graph().constant(gt.clone()))?;
    Ok(residual.smooth_l1(delta)?.sum().scale(1.0 / steps as f64))
}

/// Huber sum over endpoint coordinates `[N, 2]` divided by `N`.
pub fn goal_loss<'g>(pred_end: Var<'g>, gt_end: &Tensor, delta: f64) -> Result<Var<'g>> {
    if pred_end.shape() != gt_end.shape() {
        return Err(lgt_autodiff::Error::Shape {
            op: "goal_loss",
            lhs: pred_end.shape(),
            rhs: gt_end.shape().to_vec(),
        }
        .into());
    }
    let n = gt_end.shape()[0];
    let residual = pred_end.sub(pred_end.graph().constant(gt_end.clone()))?;
    Ok(residual.smooth_l1(delta)?.sum().scale(1.0 / n as f64))
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts<'g> {
    pub reg: Var<'g>,
    pub cls: Var<'g>,
    pub goal: Var<'g>,
    pub total: Var<'g>,
}

/// Plain values of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossValues {
    pub total: f64,
    pub reg: f64,
    pub cls: f64,
    pub goal: f64,
}

impl LossParts<'_> {
    pub fn values(&self) -> LossValues {
        let v = |x: Var<'_>| x.value().data()[0];
        LossValues {
            total: v(self.total),
            reg: v(self.reg),
            cls: v(self.cls),
            goal: v(self.goal),
        }
    }
}

pub fn total_loss<'g>(reg: Var<'g>, cls: Var<'g>, goal: Var<'g>, cfg: &LossConfig) -> Result<Var<'g>> {
    Ok(reg.scale(cfg.w_reg).add(cls.scale(cfg.w_cls))?.add(goal.scale(cfg.w_goal))?)
}

fn flatten(rows: &[Vec<Point2>]) -> Tensor {
    let t = rows.first().map_or(0, Vec::len);
    Tensor::from_fn(&[rows.len(), 2 * t], |i| {
        let p = rows[i / (2 * t)][(i % (2 * t)) / 2];
        if i % 2 == 0 {
            p.x
        } else {
            p.y
        }
    })
}

/// Every loss term for decoded modes against `gt [N][T']`.
pub fn scene_loss<'g>(decoded: &DecodedModes<'g>, gt: &[Vec<Point2>], cfg: &LossConfig) -> Result<LossParts<'g>> {
    let n = gt.len();
    let k = decoded.trajectories.len();
    let steps = gt.first().map_or(0, Vec::len);
    let values: Vec<Tensor> = decoded.trajectories.iter().map(|t| t.value()).collect();
    let best: Vec<usize> = (0..n)
        .map(|i| {
            let modes: Vec<Vec<Point2>> = values
                .iter()
                .map(|v| v.data()[i * 2 * steps..(i + 1) * 2 * steps].chunks(2).map(|c| Point2::new(c[0], c[1])).collect())
                .collect();
            select_best_mode(&modes, &gt[i])
        })
        .collect();

    let g = decoded.scores.graph();
    let mut chosen: Option<Var<'g>> = None;
    for (mode, traj) in decoded.trajectories.iter().enumerate().take(k) {
        let pick = g.constant(Tensor::from_fn(&[n, 2 * steps], |i| f64::from(best[i / (2 * steps)] == mode)));
        let part = traj.mul(pick)?;
        chosen = Some(match chosen {
            Some(c) => c.add(part)?,
            None => part,
        });
    }
    let chosen = chosen.ok_or_else(|| Error::Argument("no modes to score".into()))?;
    let gt_flat = flatten(gt);
    let reg = regression_loss(chosen, &gt_flat, cfg.huber_delta)?;
    let gt_end = Tensor::from_fn(&[n, 2], |i| gt_flat.data()[(i / 2) * 2 * steps + 2 * steps - 2 + i % 2]);
    let goal = goal_loss(chosen.narrow(2 * steps - 2, 2)?, &gt_end, cfg.huber_delta)?;
    let cls = classification_loss(decoded.confidences, &best, cfg.epsilon)?;
    let total = total_loss(reg, cls, goal, cfg)?;
    Ok(LossParts { reg, cls, goal, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lgt_autodiff::Graph;

    fn modes(ends: &[(f64, f64)]) -> Vec<Vec<Point2>> {
        ends.iter().map(|&(x, y)| vec![Point2::ORIGIN, Point2::new(x, y)]).collect()
    }

    #[test]
    fn best_mode_examples() {
        let gt = [Point2::ORIGIN, Point2::ORIGIN];
        assert_eq!(select_best_mode(&modes(&[(2.0, 0.0), (1.0, 0.0), (3.0, 0.0)]), &gt), 1);
        assert_eq!(select_best_mode(&modes(&[(2.0, 0.0), (0.0, 0.0)]), &gt), 1);
        assert_eq!(select_best_mode(&modes(&[(1.0, 0.0), (4.0, 0.0), (0.0, 1.0)]), &gt), 0);
    }

    fn cls(c: &[f64], best: usize, eps: f64) -> f64 {
        let g = Graph::new();
        let conf = g.constant(Tensor::new(vec![1, c.len()], c.to_vec()).unwrap());
        classification_loss(conf, &[best], eps).unwrap().item().unwrap()
    }

    #[test]
    fn classification_examples() {
        assert_eq!(cls(&[0.8, 0.3], 0, 0.2), 0.0);
        assert!((cls(&[0.8, 0.7], 0, 0.2) - 0.1).abs() < 1e-12);
        assert_eq!(cls(&[0.25; 4], 2, 0.0), 0.0);
        let g = Graph::new();
        let err = classification_loss(g.constant(Tensor::ones(&[1, 1])), &[0], 0.2).unwrap_err();
        assert!(err.to_string().contains("classification loss undefined"));
    }

    #[test]
    fn regression_and_goal_examples() {
        let g = Graph::new();
        let gt = Tensor::zeros(&[1, 2]);
        let reg = |r: f64| regression_loss(g.constant(Tensor::from_rows(&[vec![r, 0.0]]).unwrap()), &gt, 1.0).unwrap().item().unwrap();
        assert_eq!(reg(0.0), 0.0);
        assert_eq!(reg(0.5), 0.125);
        assert_eq!(reg(2.0), 1.5);

        let goal = goal_loss(g.constant(Tensor::from_rows(&[vec![0.3, 0.4]]).unwrap()), &gt, 1.0).unwrap().item().unwrap();
        assert!((goal - 0.125).abs() < 1e-15);
        let twice = Tensor::from_rows(&[vec![0.3, 0.4], vec![0.3, 0.4]]).unwrap();
        let dup = goal_loss(g.constant(twice), &Tensor::zeros(&[2, 2]), 1.0).unwrap().item().unwrap();
        assert!((dup - goal).abs() < 1e-15);
        assert!(regression_loss(g.constant(Tensor::zeros(&[1, 4])), &gt, 1.0).is_err());
    }

    #[test]
    fn total_is_weighted_sum() {
        let g = Graph::new();
        let s = |v: f64| g.constant(Tensor::scalar(v));
        let cfg = LossConfig::default();
        assert_eq!(total_loss(s(0.0), s(0.0), s(0.0), &cfg).unwrap().item().unwrap(), 0.0);
        assert_eq!(total_loss(s(1.0), s(2.0), s(3.0), &cfg).unwrap().item().unwrap(), 6.0);
        let only_cls = LossConfig {
            w_reg: 0.0,
            w_goal: 0.0,
            ..cfg
        };
        assert_eq!(total_loss(s(1.0), s(2.0), s(3.0), &only_cls).unwrap().item().unwrap(), 2.0);
    }

    fn decoded<'g>(g: &'g Graph, modes: &[Vec<f64>], scores: &[f64]) -> DecodedModes<'g> {
        let trajectories = modes.iter().map(|m| g.param(Tensor::new(vec![1, m.len()], m.clone()).unwrap())).collect();
        let scores = g.param(Tensor::new(vec![1, scores.len()], scores.to_vec()).unwrap());
        DecodedModes {
            trajectories,
            scores,
            confidences: scores.softmax(None).unwrap(),
        }
    }

    #[test]
    fn only_best_mode_receives_regression_gradient() {
        let g = Graph::new();
        let d = decoded(&g, &[vec![0.0, 0.0, 5.0, 5.0], vec![0.5, 0.1, 1.0, 0.2]], &[0.3, -0.1]);
        let gt = vec![vec![Point2::new(0.4, 0.0), Point2::new(1.0, 0.0)]];
        let parts = scene_loss(&d, &gt, &LossConfig::default()).unwrap();
        let grads = g.backward(parts.total).unwrap();
        assert!(grads.wrt(d.trajectories[0]).data().iter().all(|&v| v == 0.0));
        assert!(grads.wrt(d.trajectories[1]).data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn loss_is_zero_for_exact_confident_prediction() {
        let g = Graph::new();
        let d = decoded(&g, &[vec![1.0, 2.0, 3.0, 4.0], vec![9.0, 9.0, 9.0, 9.0]], &[10.0, 0.0]);
        let gt = vec![vec![Point2::new(1.0, 2.0), Point2::new(3.0, 4.0)]];
        let v = scene_loss(&d, &gt, &LossConfig::default()).unwrap().values();
        assert_eq!((v.reg, v.goal, v.cls), (0.0, 0.0, 0.0));
    }
}
