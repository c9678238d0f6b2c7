//! Scene data model: lanes, their connectivity, and agent histories.
//!
//! Time index `T - 1` of every history is the reference time ("t = 0").
//! Lane ids are arbitrary integers; matrices are indexed by a lane's position
//! in [`Scenario::lanes`].

mod io;
mod normalize;
mod resample;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cumulative_lengths, point_at_arc_length, Point2};

pub use io::{parse_scenario, write_scenario};
pub use normalize::normalize_scenario;
pub use resample::resample_lane_nodes;

pub type LaneId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneType {
    Vehicle,
    Bus,
    Bike,
    Other,
}

impl LaneType {
    pub const ALL: [LaneType; 4] = [LaneType::Vehicle, LaneType::Bus, LaneType::Bike, LaneType::Other];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
    Bus,
    Other,
}

impl AgentType {
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaneNode {
    pub index: usize,
    pub position: Point2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lane {
    pub lane_id: LaneId,
    pub centerline: Vec<LaneNode>,
    pub lane_type: LaneType,
}

impl Lane {
    pub fn new(lane_id: LaneId, lane_type: LaneType, points: &[Point2]) -> Self {
        let centerline = points
            .iter()
            .enumerate()
            .map(|(index, &position)| LaneNode { index, position })
            .collect();
        Self {
            lane_id,
            centerline,
            lane_type,
        }
    }

    pub fn points(&self) -> Vec<Point2> {
        self.centerline.iter().map(|n| n.position).collect()
    }

    pub fn length(&self) -> f64 {
        crate::geometry::polyline_length(&self.points())
    }

    /// Point halfway along the centerline by arc length.
    pub fn midpoint(&self) -> Point2 {
        let pts = self.points();
        match pts.len() {
            0 => Point2::ORIGIN,
            1 => pts[0],
            _ => {
                let cum = cumulative_lengths(&pts);
                point_at_arc_length(&pts, &cum, cum[cum.len() - 1] / 2.0).0
            }
        }
    }
}

/// A lateral neighbor relation with the boundary type between the two lanes.
#[derive(Clone, Debug, PartialEq)]
pub struct LateralLink {
    pub a: LaneId,
    pub b: LaneId,
    pub connection_type: String,
}

/// `predecessors` holds `(a, b)` when `b` is a predecessor of `a`;
/// `successors` holds `(a, b)` when `b` is a successor of `a`;
/// `left`/`right` hold `(a, b, type)` when `b` is the left/right neighbor of `a`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LaneConnectivity {
    pub predecessors: Vec<(LaneId, LaneId)>,
    pub successors: Vec<(LaneId, LaneId)>,
    pub left: Vec<LateralLink>,
    pub right: Vec<LateralLink>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Serialized as the `padding` flag: 1 when observed, 0 for a padded step.
    pub observed: bool,
    pub category: u8,
    pub agent_type: AgentType,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
}

impl AgentState {
    pub fn padded(agent_type: AgentType, category: u8) -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            observed: false,
            category,
            agent_type,
            heading: 0.0,
            vx: 0.0,
            vy: 0.0,
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentHistory {
    pub states: Vec<AgentState>,
}

impl AgentHistory {
    pub fn agent_type(&self) -> AgentType {
        self.states.first().map_or(AgentType::Other, |s| s.agent_type)
    }

    /// Position at the reference time, falling back to the latest observed step.
    pub fn reference_position(&self) -> Option<Point2> {
        self.states.iter().rev().find(|s| s.observed).map(|s| s.position())
    }

    pub fn is_observed_at_reference(&self) -> bool {
        self.states.last().is_some_and(|s| s.observed)
    }
}

/// History and future lengths a scene must have.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScenarioShape {
    pub history: usize,
    pub future: usize,
}

impl Default for ScenarioShape {
    fn default() -> Self {
        Self { history: 50, future: 60 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub lanes: Vec<Lane>,
    pub connectivity: LaneConnectivity,
    pub agents: Vec<AgentHistory>,
    pub target_ids: Vec<usize>,
    pub ground_truth: Option<Vec<Vec<Point2>>>,
}

impl Scenario {
    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn lane_index(&self) -> HashMap<LaneId, usize> {
        self.lanes.iter().enumerate().map(|(i, l)| (l.lane_id, i)).collect()
    }

    pub fn lane_midpoints(&self) -> Vec<Point2> {
        self.lanes.iter().map(Lane::midpoint).collect()
    }

    pub fn agent_positions(&self) -> Vec<Point2> {
        self.agents
            .iter()
            .map(|a| a.reference_position().unwrap_or(Point2::ORIGIN))
            .collect()
    }

    /// Copy with every centerline resampled to `n` equally spaced nodes.
    pub fn resampled(&self, n: usize) -> Result<Scenario> {
        let lanes = self
            .lanes
            .iter()
            .map(|l| resample_lane_nodes(l, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario {
            lanes,
            ..self.clone()
        })
    }

    /// Checks every structural invariant, naming the first one violated.
    pub fn validate(&self, shape: &ScenarioShape) -> Result<()> {
        let mut ids = HashSet::new();
        for lane in &self.lanes {
            if !ids.insert(lane.lane_id) {
                return Err(Error::validation("duplicate lane id", format!("lane {}", lane.lane_id)));
            }
            if lane.centerline.len() < 2 {
                return Err(Error::validation(
                    "centerline length",
                    format!("lane {} has {} points, needs >= 2", lane.lane_id, lane.centerline.len()),
                ));
            }
            let mut seen = HashSet::new();
            for node in &lane.centerline {
                if !node.position.is_finite() {
                    return Err(Error::validation("finite positions", format!("lane {}", lane.lane_id)));
                }
                if !seen.insert(node.index) {
                    return Err(Error::validation(
                        "node index unique",
                        format!("lane {} repeats node {}", lane.lane_id, node.index),
                    ));
                }
            }
            if let Some(w) = lane.centerline.windows(2).find(|w| w[0].position == w[1].position) {
                return Err(Error::validation(
                    "consecutive nodes distinct",
                    format!("lane {} node {}", lane.lane_id, w[1].index),
                ));
            }
        }

        let c = &self.connectivity;
        let pairs = c
            .predecessors
            .iter()
            .chain(&c.successors)
            .copied()
            .chain(c.left.iter().chain(&c.right).map(|l| (l.a, l.b)));
        for (a, b) in pairs {
            for id in [a, b] {
                if !ids.contains(&id) {
                    return Err(Error::validation("unknown lane", format!("lane id {id} is not defined")));
                }
            }
            if a == b {
                return Err(Error::validation("no self pairs", format!("lane {a} connects to itself")));
            }
        }
        let pred: HashSet<(LaneId, LaneId)> = c.predecessors.iter().copied().collect();
        let succ_rev: HashSet<(LaneId, LaneId)> = c.successors.iter().map(|&(a, b)| (b, a)).collect();
        if pred != succ_rev {
            let odd = pred
                .symmetric_difference(&succ_rev)
                .min()
                .copied()
                .unwrap_or_default();
            return Err(Error::validation(
                "predecessors reverse successors",
                format!("pair {odd:?} has no reverse counterpart"),
            ));
        }

        for (i, agent) in self.agents.iter().enumerate() {
            if agent.states.len() != shape.history {
                return Err(Error::validation(
                    "history length",
                    format!("agent {i} has {} states, expected {}", agent.states.len(), shape.history),
                ));
            }
            for s in &agent.states {
                if s.category > 3 {
                    return Err(Error::validation("category range", format!("agent {i} category {}", s.category)));
                }
                let values = [s.x, s.y, s.heading, s.vx, s.vy];
                if s.observed && values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation("finite states", format!("agent {i}")));
                }
            }
        }

        if self.target_ids.is_empty() {
            return Err(Error::validation("targets", "target list is empty"));
        }
        if let Some(&t) = self.target_ids.iter().find(|&&t| t >= self.agents.len()) {
            return Err(Error::validation(
                "targets",
                format!("target {t} out of range for {} agents", self.agents.len()),
            ));
        }
        if let Some(gt) = &self.ground_truth {
            if gt.len() != self.agents.len() {
                return Err(Error::validation(
                    "ground truth length",
                    format!("{} rows for {} agents", gt.len(), self.agents.len()),
                ));
            }
            if let Some((i, row)) = gt.iter().enumerate().find(|(_, r)| r.len() != shape.future) {
                return Err(Error::validation(
                    "ground truth length",
                    format!("agent {i} has {} future points, expected {}", row.len(), shape.future),
                ));
            }
            if gt.iter().flatten().any(|p| !p.is_finite()) {
                return Err(Error::validation("finite positions", "ground truth"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn state(x: f64, y: f64, heading: f64) -> AgentState {
        AgentState {
            x,
            y,
            observed: true,
            category: 3,
            agent_type: AgentType::Vehicle,
            heading,
            vx: heading.cos(),
            vy: heading.sin(),
        }
    }

    pub(crate) fn two_lane_scene(t: usize) -> Scenario {
        Scenario {
            lanes: vec![
                Lane::new(10, LaneType::Vehicle, &[Point2::new(0.0, 0.0), Point2::new(10.0, 0.0)]),
                Lane::new(11, LaneType::Vehicle, &[Point2::new(10.0, 0.0), Point2::new(20.0, 0.0)]),
            ],
            connectivity: LaneConnectivity {
                predecessors: vec![(11, 10)],
                successors: vec![(10, 11)],
                left: vec![],
                right: vec![],
            },
            agents: vec![AgentHistory {
                states: (0..t).map(|k| state(k as f64 * 0.1, 0.0, 0.0)).collect(),
            }],
            target_ids: vec![0],
            ground_truth: None,
        }
    }

    fn invariant_of(r: Result<()>) -> &'static str {
        match r {
            Err(Error::Validation { invariant, .. }) => invariant,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn valid_scene_passes() {
        two_lane_scene(5).validate(&ScenarioShape { history: 5, future: 3 }).unwrap();
    }

    #[test]
    fn short_history_is_rejected() {
        let s = two_lane_scene(49);
        assert_eq!(invariant_of(s.validate(&ScenarioShape::default())), "history length");
    }

    #[test]
    fn unknown_lane_is_rejected() {
        let mut s = two_lane_scene(5);
        s.connectivity.successors.push((10, 99));
        assert_eq!(invariant_of(s.validate(&ScenarioShape { history: 5, future: 3 })), "unknown lane");
    }

    #[test]
    fn unmatched_predecessor_is_rejected() {
        let mut s = two_lane_scene(5);
        s.connectivity.predecessors.clear();
        assert_eq!(
            invariant_of(s.validate(&ScenarioShape { history: 5, future: 3 })),
            "predecessors reverse successors"
        );
    }

    #[test]
    fn bad_targets_are_rejected() {
        let mut s = two_lane_scene(5);
        s.target_ids = vec![3];
        assert_eq!(invariant_of(s.validate(&ScenarioShape { history: 5, future: 3 })), "targets");
        s.target_ids.clear();
        assert_eq!(invariant_of(s.validate(&ScenarioShape { history: 5, future: 3 })), "targets");
    }

    #[test]
    fn midpoint_is_half_arc_length() {
        let lane = Lane::new(
            0,
            LaneType::Bus,
            &[Point2::new(0.0, 0.0), Point2::new(5.0, 0.0), Point2::new(5.0, 5.0)],
        );
        assert_eq!(lane.midpoint(), Point2::new(5.0, 0.0));
    }
}
