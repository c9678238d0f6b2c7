//! Tensors fed to the network, extracted from a normalized scene.
//!
//! Agent step features (`M_a = 9`): `x/10, y/10, observed, category/3,
//! type/(types-1), cos h, sin h, vx/10, vy/10`; padded steps are all zero.
//! Lane node features (`M_m = 8`): `x/10, y/10`, unit direction, lane-type one-hot.

use lgt_autodiff::{Mask, Tensor};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::lane_graph::{AgentType, LaneType, Scenario};
use crate::model::ModelConfig;
use crate::topology::{build_topology, TopologyMatrices};

pub const AGENT_FEATURES: usize = 9;
pub const LANE_FEATURES: usize = 8;
const POSITION_SCALE: f64 = 0.1;

/// A batch of sequences with their key mask and mean-pool weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    /// `[B, L, M]`
    pub feats: Tensor,
    /// `[B, L, L]`; `None` when every step is observed.
    pub mask: Option<Mask>,
    /// `[B, 1, L]`, each row averaging the observed steps.
    pub pool: Tensor,
}

impl SequenceBatch {
    pub fn new(feats: Tensor, observed: &[Vec<bool>]) -> Result<Self> {
        let shape = feats.shape().to_vec();
        if shape.len() != 3 || observed.len() != shape[0] || observed.iter().any(|o| o.len() != shape[1]) {
            return Err(Error::Argument(format!(
                "sequence batch {shape:?} does not match observed flags"
            )));
        }
        let (b, l) = (shape[0], shape[1]);
        let mut pool = Tensor::zeros(&[b, 1, l]);
        for (i, obs) in observed.iter().enumerate() {
            let count = obs.iter().filter(|&&o| o).count();
            if count == 0 {
                return Err(Error::EmptyHistory(i));
            }
            for (t, &o) in obs.iter().enumerate() {
                if o {
                    pool.data_mut()[i * l + t] = 1.0 / count as f64;
                }
            }
        }
        let mask = if observed.iter().flatten().all(|&o| o) {
            None
        } else {
            Some(Mask::from_fn(&[b, l, l], |k| observed[k / (l * l)][k % l]))
        };
        Ok(Self { feats, mask, pool })
    }
}

/// Everything the model consumes for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneInputs {
    pub agents: SequenceBatch,
    pub lanes: SequenceBatch,
    pub agent_positions: Vec<Point2>,
    pub lane_positions: Vec<Point2>,
    pub topology: TopologyMatrices,
    pub targets: Vec<usize>,
    /// Reference position of each target, where its decoded trajectory starts.
    pub anchors: Vec<Point2>,
    /// `[targets][T']`, when the scene carries ground truth.
    pub ground_truth: Option<Vec<Vec<Point2>>>,
}

impl SceneInputs {
    /// `scene` must already be normalized; lanes are resampled to `N_ls` here.
    pub fn build(scene: &Scenario, cfg: &ModelConfig) -> Result<Self> {
        if scene.agents.is_empty() {
            return Err(Error::NoAgents);
        }
        if scene.lanes.is_empty() {
            return Err(Error::NoLanes);
        }
        scene.validate(&cfg.shape())?;
        let scene = scene.resampled(cfg.n_ls)?;
        let (t, n_a) = (cfg.t, scene.num_agents());

        let mut agent_feats = Tensor::zeros(&[n_a, t, AGENT_FEATURES]);
        let mut observed = vec![vec![false; t]; n_a];
        for (i, agent) in scene.agents.iter().enumerate() {
            for (s, st) in agent.states.iter().enumerate() {
                if !st.observed {
                    continue;
                }
                observed[i][s] = true;
                let f = [
                    st.x * POSITION_SCALE,
                    st.y * POSITION_SCALE,
                    1.0,
                    f64::from(st.category) / 3.0,
                    st.agent_type.index() as f64 / (AgentType::COUNT - 1) as f64,
                    st.heading.cos(),
                    st.heading.sin(),
                    st.vx * POSITION_SCALE,
                    st.vy * POSITION_SCALE,
                ];
                let base = (i * t + s) * AGENT_FEATURES;
                agent_feats.data_mut()[base..base + AGENT_FEATURES].copy_from_slice(&f);
            }
        }

        let (n_l, n_ls) = (scene.num_lanes(), cfg.n_ls);
        let mut lane_feats = Tensor::zeros(&[n_l, n_ls, LANE_FEATURES]);
        for (i, lane) in scene.lanes.iter().enumerate() {
            let pts = lane.points();
            for (s, p) in pts.iter().enumerate() {
                let (a, b) = if s + 1 < pts.len() { (pts[s], pts[s + 1]) } else { (pts[s - 1], pts[s]) };
                let dir = (b - a) * (1.0 / a.distance(b));
                let mut f = [0.0; LANE_FEATURES];
                f[..4].copy_from_slice(&[p.x * POSITION_SCALE, p.y * POSITION_SCALE, dir.x, dir.y]);
                f[4 + lane.lane_type.index()] = 1.0;
                let base = (i * n_ls + s) * LANE_FEATURES;
                lane_feats.data_mut()[base..base + LANE_FEATURES].copy_from_slice(&f);
            }
        }
        debug_assert_eq!(LaneType::ALL.len(), LANE_FEATURES - 4);

        let agent_positions = scene.agent_positions();
        let anchors = scene.target_ids.iter().map(|&i| agent_positions[i]).collect();
        Ok(Self {
            agents: SequenceBatch::new(agent_feats, &observed)?,
            lanes: SequenceBatch::new(lane_feats, &vec![vec![true; n_ls]; n_l])?,
            agent_positions,
            lane_positions: scene.lane_midpoints(),
            topology: build_topology(&scene, &cfg.connection_types)?,
            targets: scene.target_ids.clone(),
            anchors,
            ground_truth: scene
                .ground_truth
                .as_ref()
                .map(|gt| scene.target_ids.iter().map(|&i| gt[i].clone()).collect()),
        })
    }

    pub fn num_agents(&self) -> usize {
        self.agent_positions.len()
    }

    pub fn num_lanes(&self) -> usize {
        self.lane_positions.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane_graph::tests::two_lane_scene;
    use crate::lane_graph::AgentState;

    #[test]
    fn padded_steps_are_zero_and_masked() {
        let mut cfg = ModelConfig {
            t: 4,
            t_prime: 2,
            n_ls: 3,
            ..ModelConfig::default()
        };
        let mut s = two_lane_scene(4);
        s.agents[0].states[0] = AgentState {
            x: 99.0,
            ..AgentState::padded(AgentType::Vehicle, 3)
        };
        let inputs = SceneInputs::build(&s, &cfg).unwrap();
        assert!(inputs.agents.feats.data()[..AGENT_FEATURES].iter().all(|&v| v == 0.0));
        assert_eq!(inputs.agents.pool.data(), &[0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        let mask = inputs.agents.mask.unwrap();
        assert!(!mask.keep()[0] && mask.keep()[1] && !mask.keep()[4]);
        assert_eq!(inputs.lanes.feats.shape(), &[2, 3, LANE_FEATURES]);
        assert!(inputs.lanes.mask.is_none());

        for st in &mut s.agents[0].states {
            st.observed = false;
        }
        cfg.t = 4;
        assert!(matches!(SceneInputs::build(&s, &cfg), Err(Error::EmptyHistory(0))));
    }
}
