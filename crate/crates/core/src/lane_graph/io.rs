//! JSON scenario documents.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    AgentHistory, AgentState, AgentType, Lane, LaneConnectivity, LaneId, LaneType, LateralLink,
    Scenario, ScenarioShape,
};
use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    lanes: Vec<RawLane>,
    connectivity: RawConnectivity,
    agents: Vec<RawAgent>,
    targets: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<Vec<Vec<[f64; 2]>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLane {
    id: LaneId,
    #[serde(rename = "type")]
    lane_type: LaneType,
    centerline: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConnectivity {
    #[serde(default)]
    successors: Vec<(LaneId, LaneId)>,
    #[serde(default)]
    predecessors: Vec<(LaneId, LaneId)>,
    #[serde(default)]
    left: Vec<(LaneId, LaneId, String)>,
    #[serde(default)]
    right: Vec<(LaneId, LaneId, String)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    states: Vec<RawState>,
}

/// `[x, y, padding, category, type, heading, vx, vy]`
type RawState = (f64, f64, u8, u8, AgentType, f64, f64, f64);

fn lateral(links: Vec<(LaneId, LaneId, String)>) -> Vec<LateralLink> {
    links
        .into_iter()
        .map(|(a, b, connection_type)| LateralLink { a, b, connection_type })
        .collect()
}

fn lateral_raw(links: &[LateralLink]) -> Vec<(LaneId, LaneId, String)> {
    links.iter().map(|l| (l.a, l.b, l.connection_type.clone())).collect()
}

impl RawScenario {
    fn into_scenario(self) -> Result<Scenario> {
        let agents = self
            .agents
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                let states = a
                    .states
                    .into_iter()
                    .map(|(x, y, padding, category, agent_type, heading, vx, vy)| {
                        if padding > 1 {
                            return Err(Error::validation("padding flag", format!("agent {i} padding {padding}")));
                        }
                        Ok(AgentState {
                            x,
                            y,
                            observed: padding == 1,
                            category,
                            agent_type,
                            heading,
                            vx,
                            vy,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(AgentHistory { states })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario {
            lanes: self
                .lanes
                .into_iter()
                .map(|l| {
                    let pts: Vec<Point2> = l.centerline.into_iter().map(Point2::from).collect();
                    Lane::new(l.id, l.lane_type, &pts)
                })
                .collect(),
            connectivity: LaneConnectivity {
                predecessors: self.connectivity.predecessors,
                successors: self.connectivity.successors,
                left: lateral(self.connectivity.left),
                right: lateral(self.connectivity.right),
            },
            agents,
            target_ids: self.targets,
            ground_truth: self
                .ground_truth
                .map(|gt| gt.into_iter().map(|row| row.into_iter().map(Point2::from).collect()).collect()),
        })
    }

    fn from_scenario(s: &Scenario) -> Self {
        RawScenario {
            lanes: s
                .lanes
                .iter()
                .map(|l| RawLane {
                    id: l.lane_id,
                    lane_type: l.lane_type,
                    centerline: l.centerline.iter().map(|n| n.position.to_array()).collect(),
                })
                .collect(),
            connectivity: RawConnectivity {
                successors: s.connectivity.successors.clone(),
                predecessors: s.connectivity.predecessors.clone(),
                left: lateral_raw(&s.connectivity.left),
                right: lateral_raw(&s.connectivity.right),
            },
            agents: s
                .agents
                .iter()
                .map(|a| RawAgent {
                    states: a
                        .states
                        .iter()
                        .map(|st| {
                            (
                                st.x,
                                st.y,
                                u8::from(st.observed),
                                st.category,
                                st.agent_type,
                                st.heading,
                                st.vx,
                                st.vy,
                            )
                        })
                        .collect(),
                })
                .collect(),
            targets: s.target_ids.clone(),
            ground_truth: s
                .ground_truth
                .as_ref()
                .map(|gt| gt.iter().map(|row| row.iter().map(|p| p.to_array()).collect()).collect()),
        }
    }
}

impl Scenario {
    /// Parses and validates a scenario document; `origin` labels errors.
    pub fn from_json_str(text: &str, shape: &ScenarioShape, origin: &Path) -> Result<Scenario> {
        let raw: RawScenario = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let scenario = raw.into_scenario()?;
        scenario.validate(shape)?;
        Ok(scenario)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&RawScenario::from_scenario(self)).expect("scenario serializes")
    }
}

pub fn parse_scenario(path: &Path, shape: &ScenarioShape) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scenario::from_json_str(&text, shape, path)
}

pub fn write_scenario(path: &Path, scenario: &Scenario) -> Result<()> {
    std::fs::write(path, scenario.to_json_string()).map_err(|e| Error::io(path, e))
}
