use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, BiasToggles};
use crate::error::{Error, Result};
use crate::lane_graph::ScenarioShape;
use crate::model::features::{AGENT_FEATURES, LANE_FEATURES};
use crate::topology::default_categories;

/// Shape constants and architecture switches. Serialized keys match the
/// conventional symbols (`T`, `T_prime`, `K`, `D`, `N_ls`, `M_a`, `M_m`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// History steps.
    #[serde(rename = "T")]
    pub t: usize,
    /// Future steps.
    #[serde(rename = "T_prime")]
    pub t_prime: usize,
    /// Predicted modes.
    #[serde(rename = "K")]
    pub k: usize,
    /// Feature width shared by agents and lanes.
    #[serde(rename = "D")]
    pub d: usize,
    pub heads: usize,
    pub hte_layers: usize,
    pub ain_layers: usize,
    pub ne_layers: usize,
    pub lgt_layers: usize,
    /// Repetitions of the A2L, L2L, L2A, A2A sequence.
    pub fusion_layers: usize,
    pub ffn_hidden: usize,
    pub decoder_hidden: usize,
    pub e_a2a: usize,
    pub e_a2l: usize,
    pub e_l2a: usize,
    /// Nodes per resampled lane.
    #[serde(rename = "N_ls")]
    pub n_ls: usize,
    #[serde(rename = "M_a")]
    pub m_a: usize,
    #[serde(rename = "M_m")]
    pub m_m: usize,
    pub connection_types: Vec<String>,
    /// Hidden width of the connection-type map; 0 makes it linear.
    pub type_hidden: usize,
    pub use_b: bool,
    pub use_d_inter: bool,
    pub use_d_outer: bool,
    /// When false every fusion stage attends over all keys.
    pub local_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t: 50,
            t_prime: 60,
            k: 6,
            d: 32,
            heads: 2,
            hte_layers: 2,
            ain_layers: 1,
            ne_layers: 1,
            lgt_layers: 2,
            fusion_layers: 1,
            ffn_hidden: 64,
            decoder_hidden: 64,
            e_a2a: 16,
            e_a2l: 32,
            e_l2a: 8,
            n_ls: 10,
            m_a: AGENT_FEATURES,
            m_m: LANE_FEATURES,
            connection_types: default_categories(),
            type_hidden: 0,
            use_b: true,
            use_d_inter: true,
            use_d_outer: true,
            local_attention: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("T", self.t),
            ("T_prime", self.t_prime),
            ("K", self.k),
            ("D", self.d),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("e_a2a", self.e_a2a),
            ("e_a2l", self.e_a2l),
            ("e_l2a", self.e_l2a),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n_ls < 2 {
            return Err(Error::Config(format!("N_ls must be >= 2, got {}", self.n_ls)));
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!("D = {} is not divisible by heads = {}", self.d, self.heads)));
        }
        if self.m_a != AGENT_FEATURES || self.m_m != LANE_FEATURES {
            return Err(Error::Config(format!(
                "M_a and M_m are fixed by the feature layout ({AGENT_FEATURES}, {LANE_FEATURES}), got ({}, {})",
                self.m_a, self.m_m
            )));
        }
        if self.connection_types.is_empty() {
            return Err(Error::Config("connection_types must not be empty".into()));
        }
        Ok(())
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig::new(self.d, self.heads).expect("validated config")
    }

    pub fn toggles(&self) -> BiasToggles {
        BiasToggles {
            use_b: self.use_b,
            use_d_inter: self.use_d_inter,
            use_d_outer: self.use_d_outer,
        }
    }

    pub fn set_toggles(&mut self, t: BiasToggles) {
        self.use_b = t.use_b;
        self.use_d_inter = t.use_d_inter;
        self.use_d_outer = t.use_d_outer;
    }

    pub fn shape(&self) -> ScenarioShape {
        ScenarioShape {
            history: self.t,
            future: self.t_prime,
        }
    }
}
