//! The full predictor: AgentNet and MapNet encoders, FusionNet, and the
//! multimodal decoder.

pub mod agent_net;
mod config;
pub mod decoder;
pub mod features;
pub mod fusion;
pub mod layers;
pub mod map_net;

use lgt_autodiff::{Graph, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use agent_net::AgentNet;
pub use config::ModelConfig;
pub use decoder::{DecodedModes, Decoder};
pub use features::{SceneInputs, SequenceBatch};
pub use fusion::{FusionNet, FusionPositions};
pub use map_net::MapNet;

use crate::error::Result;
use crate::geometry::Point2;
use crate::lane_graph::{normalize_scenario, Scenario};
use crate::nn::{AttentionProbe, Ctx};

/// K trajectories of T' points per target, with a probability per mode.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub target_ids: Vec<usize>,
    /// `[targets][K][T']`
    pub trajectories: Vec<Vec<Vec<Point2>>>,
    /// `[targets][K]`, rows sum to 1.
    pub confidences: Vec<Vec<f64>>,
}

impl PredictionSet {
    pub fn from_decoded(decoded: &DecodedModes<'_>, target_ids: &[usize]) -> Self {
        let conf = decoded.confidences.value();
        let k = decoded.trajectories.len();
        let modes: Vec<_> = decoded.trajectories.iter().map(|t| t.value()).collect();
        let trajectories = (0..target_ids.len())
            .map(|i| {
                modes
                    .iter()
                    .map(|m| {
                        let row = &m.data()[i * m.last_dim()..(i + 1) * m.last_dim()];
                        row.chunks(2).map(|c| Point2::new(c[0], c[1])).collect()
                    })
                    .collect()
            })
            .collect();
        let confidences = conf.data().chunks(k).map(<[f64]>::to_vec).collect();
        Self {
            target_ids: target_ids.to_vec(),
            trajectories,
            confidences,
        }
    }

    pub fn num_modes(&self) -> usize {
        self.confidences.first().map_or(0, Vec::len)
    }
}

/// Normalizes to the first target's frame and extracts the model inputs.
pub fn prepare_scene(scenario: &Scenario, cfg: &ModelConfig) -> Result<SceneInputs> {
    let first = *scenario
        .target_ids
        .first()
        .ok_or_else(|| crate::error::Error::validation("targets", "target list is empty"))?;
    let normalized = normalize_scenario(scenario, first)?;
    SceneInputs::build(&normalized, cfg)
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub seed: u64,
    pub params: ParamStore,
    pub agent_net: AgentNet,
    pub map_net: MapNet,
    pub fusion: FusionNet,
    pub decoder: Decoder,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent_net = AgentNet::new(&mut params, &mut rng, &cfg)?;
        let map_net = MapNet::new(&mut params, &mut rng, &cfg)?;
        let fusion = FusionNet::new(&mut params, &mut rng, &cfg)?;
        let decoder = Decoder::new(&mut params, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1), &cfg)?;
        Ok(Self {
            cfg,
            seed,
            params,
            agent_net,
            map_net,
            fusion,
            decoder,
        })
    }

    /// Encode, fuse and decode one scene on the tape.
    pub fn forward<'g>(&self, ctx: &Ctx<'_, 'g>, inputs: &SceneInputs) -> Result<DecodedModes<'g>> {
        let agents = self.agent_net.forward(ctx, &inputs.agents)?;
        let lanes = self.map_net.forward(ctx, &inputs.lanes, &inputs.topology)?;
        let pos = FusionPositions {
            agents: &inputs.agent_positions,
            lanes: &inputs.lane_positions,
        };
        let fused = self.fusion.forward(ctx, agents, lanes, pos, &inputs.topology)?;
        let targets = fused.gather_rows(&inputs.targets)?;
        self.decoder.forward(ctx, targets, &inputs.anchors)
    }

    pub fn predict(&self, inputs: &SceneInputs) -> Result<PredictionSet> {
        let g = Graph::new();
        let params = self.params.bind(&g);
        let decoded = self.forward(&Ctx::new(&g, &params), inputs)?;
        Ok(PredictionSet::from_decoded(&decoded, &inputs.targets))
    }

    /// Like [`Model::predict`], also returning every attention probability tensor.
    pub fn predict_probed(&self, inputs: &SceneInputs) -> Result<(PredictionSet, Vec<(String, lgt_autodiff::Tensor)>)> {
        let g = Graph::new();
        let params = self.params.bind(&g);
        let probe = AttentionProbe::new();
        let decoded = self.forward(&Ctx::new(&g, &params).with_probe(&probe), inputs)?;
        Ok((PredictionSet::from_decoded(&decoded, &inputs.targets), probe.take()))
    }
}

/// Predicts a raw scene: normalization, topology, and the forward pass.
pub fn model_forward(scenario: &Scenario, model: &Model) -> Result<PredictionSet> {
    model.predict(&prepare_scene(scenario, &model.cfg)?)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::error::Error;
    use crate::lane_graph::LaneConnectivity;
    use crate::model::features::AGENT_FEATURES;
    use lgt_autodiff::Tensor;

    pub(crate) use crate::presets::{tiny_config, tiny_scene};

    #[test]
    fn prediction_shapes_and_probabilities() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 1).unwrap();
        let pred = model_forward(&tiny_scene(0, &cfg), &model).unwrap();
        assert_eq!(pred.trajectories.len(), 1);
        assert_eq!(pred.trajectories[0].len(), 3);
        assert_eq!(pred.trajectories[0][0].len(), 4);
        assert!((pred.confidences[0].iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(pred.trajectories.iter().flatten().flatten().all(|p| p.is_finite()));
    }

    #[test]
    fn default_shapes() {
        let cfg = ModelConfig {
            hte_layers: 1,
            lgt_layers: 1,
            ..ModelConfig::default()
        };
        let mut scene = tiny_scene(0, &cfg);
        scene.target_ids = vec![0, 1];
        scene.agents[1].states[cfg.t - 1].observed = true;
        let model = Model::new(cfg, 2).unwrap();
        let pred = model_forward(&scene, &model).unwrap();
        assert_eq!(pred.trajectories.len(), 2);
        assert!(pred.trajectories.iter().all(|t| t.len() == 6 && t.iter().all(|m| m.len() == 60)));
        assert!(pred.confidences.iter().all(|c| c.len() == 6));
    }

    #[test]
    fn repeated_forward_is_bit_identical() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 3).unwrap();
        let scene = tiny_scene(5, &cfg);
        assert_eq!(model_forward(&scene, &model).unwrap(), model_forward(&scene, &model).unwrap());
    }

    #[test]
    fn zero_output_layers_give_identical_zero_modes() {
        let cfg = tiny_config();
        let mut model = Model::new(cfg.clone(), 4).unwrap();
        for head in model.decoder.heads.clone() {
            head.last().zero(&mut model.params);
        }
        let pred = model_forward(&tiny_scene(1, &cfg), &model).unwrap();
        for mode in &pred.trajectories[0] {
            assert!(mode.iter().all(|p| *p == Point2::ORIGIN));
        }
        for c in &pred.confidences[0] {
            assert!((c - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hte_zero_input_with_zero_aggregator_is_zero() {
        let cfg = tiny_config();
        let mut model = Model::new(cfg.clone(), 5).unwrap();
        model.agent_net.hte.aggregate.last().clone().zero(&mut model.params);
        let batch = SequenceBatch::new(Tensor::zeros(&[1, cfg.t, AGENT_FEATURES]), &[vec![true; cfg.t]]).unwrap();
        let g = Graph::new();
        let params = model.params.bind(&g);
        let out = model.agent_net.hte_forward(&Ctx::new(&g, &params), &batch).unwrap().value();
        assert_eq!(out.shape(), &[1, cfg.d]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_histories_encode_identically() {
        let cfg = ModelConfig { d: 64, ..tiny_config() };
        let model = Model::new(cfg.clone(), 6).unwrap();
        let row = Tensor::from_fn(&[1, cfg.t, AGENT_FEATURES], |i| (i as f64 * 0.37).sin());
        let mut data = row.data().to_vec();
        data.extend_from_slice(row.data());
        data.extend(row.data().iter().map(|v| v * 0.5));
        let batch = SequenceBatch::new(Tensor::new(vec![3, cfg.t, AGENT_FEATURES], data).unwrap(), &vec![vec![true; cfg.t]; 3]).unwrap();
        let g = Graph::new();
        let params = model.params.bind(&g);
        let out = model.agent_net.hte_forward(&Ctx::new(&g, &params), &batch).unwrap().value();
        assert_eq!(out.shape(), &[3, 64]);
        for c in 0..64 {
            assert!((out.at(&[0, c]) - out.at(&[1, c])).abs() < 1e-12);
        }
    }

    #[test]
    fn padded_step_values_do_not_matter() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 7).unwrap();
        let scene = tiny_scene(2, &cfg);
        let mut perturbed = scene.clone();
        let st = &mut perturbed.agents[1].states[0];
        assert!(!st.observed);
        st.x = 123.0;
        st.vx = -40.0;
        st.heading = 2.0;
        assert_eq!(model_forward(&scene, &model).unwrap(), model_forward(&perturbed, &model).unwrap());
    }

    #[test]
    fn single_lane_lgt_annihilates_attention() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 8).unwrap();
        let mut scene = tiny_scene(0, &cfg);
        scene.lanes.truncate(1);
        scene.connectivity = LaneConnectivity::default();
        let inputs = prepare_scene(&scene, &cfg).unwrap();
        let g = Graph::new();
        let params = model.params.bind(&g);
        let ctx = Ctx::new(&g, &params);
        let bias = crate::attention::compose_bias_matrices(&ctx, &inputs.topology, &model.map_net.lgt.bias, cfg.toggles()).unwrap();
        let x = model.map_net.ne.forward(&ctx, &inputs.lanes).unwrap();
        let attn = &model.map_net.lgt.layers[0].attn;
        let q = attn.w_q.forward(&ctx, x).unwrap();
        let pre = crate::attention::lgt_attention(q, q, attn.w_v.forward(&ctx, x).unwrap(), &bias, &cfg.attention()).unwrap();
        assert!(pre.value().data().iter().all(|&v| v == 0.0));
        let out = model.map_net.forward(&ctx, &inputs.lanes, &inputs.topology).unwrap();
        assert_eq!(out.shape(), vec![1, cfg.d]);
    }

    #[test]
    fn missing_parts_are_errors() {
        let cfg = tiny_config();
        let mut scene = tiny_scene(0, &cfg);
        scene.lanes.clear();
        scene.connectivity = LaneConnectivity::default();
        assert!(matches!(prepare_scene(&scene, &cfg), Err(Error::NoLanes)));
        let model = Model::new(cfg.clone(), 0).unwrap();
        let g = Graph::new();
        let params = model.params.bind(&g);
        let empty = g.constant(Tensor::zeros(&[0, cfg.d]));
        assert!(matches!(model.agent_net.ain_forward(&Ctx::new(&g, &params), empty), Err(Error::NoAgents)));
    }
}
