//! Hypergraph attention network with semantic fusion.
//!
//! Node features start from structural and concept embeddings; hyperedge
//! updates fuse a per-edge semantics table built from note embeddings (visit
//! edges) and concept embeddings (self-loop edges).

mod forward;
mod gradcheck;
mod params;
pub(crate) mod tape;

use serde::{Deserialize, Serialize};

use crate::data::TaskKind;
use crate::error::{Error, Result};

pub use forward::{
    bce_loss, build_hyperedge_semantics, classify, edges_to_node, evaluate, forward, fused_edge_update,
    init_node_features, loss, nodes_to_edge, predict, Attended, EdgeSpec, Evaluation, HyperedgeSemantics,
    LayerState, ModelInputs,
};
pub use gradcheck::{gradient_check, GradCheckReport, TensorCheck, TinyInstance};
pub use params::{Checkpoint, ModelParameters, EMBED_CONCEPT, EMBED_STRUCTURAL};

/// Largest supported depth.
pub const MAX_LAYERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// Structural embedding width.
    pub d1: usize,
    /// Semantic (concept and note) embedding width.
    pub d2: usize,
    pub task_kind: TaskKind,
    pub use_concept_semantics: bool,
    pub use_note_semantics: bool,
    /// Adds the previous layer's embeddings to each update.
    pub residual: bool,
    /// Layer normalization after each update, with learned gain and bias.
    pub layer_norm: bool,
    /// Trains copies of the structural and concept tables instead of keeping
    /// them fixed.
    pub train_embeddings: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 48,
            layers: 2,
            heads: 4,
            d1: 32,
            d2: 32,
            task_kind: TaskKind::Binary,
            use_concept_semantics: true,
            use_note_semantics: true,
            residual: false,
            layer_norm: false,
            train_embeddings: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.d1 == 0 || self.d2 == 0 {
            return Err(Error::Config("hidden, heads, d1 and d2 must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden dimension {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(1..=MAX_LAYERS).contains(&self.layers) {
            return Err(Error::Config(format!("layers must be in 1..={MAX_LAYERS}, got {}", self.layers)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        ModelConfig::default().validate().unwrap();
        assert!(ModelConfig { hidden: 10, heads: 4, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { layers: 0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { layers: 5, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { d2: 0, ..Default::default() }.validate().is_err());
    }
}
