//! Named setups shared by the acceptance suite, the CLI and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Point2;
use crate::lane_graph::{AgentHistory, AgentState, AgentType, Lane, LaneConnectivity, LaneType, LateralLink, Scenario};
use crate::model::ModelConfig;
use crate::synth::{GeneratorConfig, SpeedProfile, Template};
use crate::training::{LossConfig, TrainConfig};

/// Gradient-check scale: T=5, T'=4, D=8, one layer per stack.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        t: 5,
        t_prime: 4,
        k: 3,
        d: 8,
        heads: 2,
        hte_layers: 1,
        ain_layers: 1,
        ne_layers: 1,
        lgt_layers: 1,
        fusion_layers: 1,
        ffn_hidden: 8,
        decoder_hidden: 8,
        n_ls: 4,
        ..ModelConfig::default()
    }
}

/// Three lanes (a chain plus a lateral neighbor) and two agents,
/// the second padded at its first step.
pub fn tiny_scene(seed: u64, cfg: &ModelConfig) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = || rng.random_range(-0.3..0.3);
    let lanes = vec![
        Lane::new(0, LaneType::Vehicle, &[Point2::new(-10.0, 0.0), Point2::new(0.0, jitter())]),
        Lane::new(1, LaneType::Vehicle, &[Point2::new(0.0, 0.0), Point2::new(10.0, jitter())]),
        Lane::new(2, LaneType::Bus, &[Point2::new(0.0, 3.5), Point2::new(10.0, 3.5 + jitter())]),
    ];
    let connectivity = LaneConnectivity {
        predecessors: vec![(1, 0)],
        successors: vec![(0, 1)],
        left: vec![LateralLink { a: 1, b: 2, connection_type: "dashed".into() }],
        right: vec![LateralLink { a: 2, b: 1, connection_type: "solid".into() }],
    };
    let agents: Vec<AgentHistory> = (0..2)
        .map(|a| {
            let y0 = 3.5 * a as f64 + jitter();
            let speed = 5.0 + jitter();
            AgentHistory {
                states: (0..cfg.t)
                    .map(|s| {
                        let x = -4.0 + 0.1 * speed * s as f64 + 2.0 * a as f64;
                        AgentState {
                            x,
                            y: y0 + 0.01 * s as f64,
                            observed: !(a == 1 && s == 0),
                            category: 3 - a as u8,
                            agent_type: AgentType::Vehicle,
                            heading: 0.05 * a as f64,
                            vx: speed,
                            vy: 0.1,
                        }
                    })
                    .collect(),
            }
        })
        .collect();
    let ground_truth = Some(
        agents
            .iter()
            .map(|a| {
                let last = a.states.last().unwrap();
                (1..=cfg.t_prime)
                    .map(|s| Point2::new(last.x + 0.5 * s as f64, last.y + 0.02 * s as f64))
                    .collect()
            })
            .collect(),
    );
    Scenario {
        lanes,
        connectivity,
        agents,
        target_ids: vec![0],
        ground_truth,
    }
}


/// A model, data and optimizer setup with a fixed seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub model: ModelConfig,
    pub model_seed: u64,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub train_scenarios: usize,
    pub holdout_scenarios: usize,
}

impl Preset {
    /// Generator config for the held-out split, seeded apart from training.
    pub fn holdout_generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: self.generator.seed ^ 0x5EED_0F_4E1D_0017,
            ..self.generator.clone()
        }
    }
}

/// Eight scenes memorized by the toy model in 500 full-batch steps.
pub fn overfit() -> Preset {
    Preset {
        model: ModelConfig::default(),
        model_seed: 7,
        generator: GeneratorConfig {
            seed: 2024,
            template: Template::Mixed,
            profile: SpeedProfile::Mixed,
            agent_count: 3,
            ..GeneratorConfig::default()
        },
        train: TrainConfig {
            epochs: 500,
            batch_size: 8,
            lr: 2e-3,
            lr_decayed: 5e-4,
            decay_epoch: 400,
            shuffle_seed: 1,
            max_steps: Some(500),
            ..TrainConfig::default()
        },
        loss: LossConfig::default(),
        train_scenarios: 8,
        holdout_scenarios: 0,
    }
}

/// 64 training and 16 held-out scenes for comparing bias ablations.
pub fn overfit_holdout() -> Preset {
    let base = overfit();
    Preset {
        train: TrainConfig {
            epochs: 40,
            max_steps: None,
            decay_epoch: 30,
            ..base.train
        },
        train_scenarios: 64,
        holdout_scenarios: 16,
        ..base
    }
}
