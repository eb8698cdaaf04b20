use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::skipgram::{train_skipgram, SkipGramConfig};
use super::{EmbeddingTable, TableKind};
use crate::error::{Error, Result};
use crate::hypergraph::{Hypergraph, WeightedGraph};

/// Graph the walks run on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WalkSubstrate {
    /// Weighted co-occurrence graph of codes.
    #[default]
    Clique,
    /// Bipartite code/visit graph; visit vertices are dropped from the corpus.
    Incidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub substrate: WalkSubstrate,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig { walks_per_node: 10, walk_length: 20, substrate: WalkSubstrate::Clique, seed: 0 }
    }
}

fn step(rng: &mut ChaCha8Rng, neighbors: &[(usize, f64)]) -> usize {
    let total: f64 = neighbors.iter().map(|&(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    for &(j, w) in neighbors {
        if u < w {
            return j;
        }
        u -= w;
    }
    neighbors[neighbors.len() - 1].0
}

/// `walks_per_node` rounds over all nodes in index order. Each step moves to a
/// neighbour with probability proportional to edge weight; a walk from an
/// isolated node is just that node.
pub fn random_walks(g: &WeightedGraph, walks_per_node: usize, walk_length: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if walk_length < 2 || walks_per_node < 1 {
        return Err(Error::Config(format!(
            "need walk_length >= 2 and walks_per_node >= 1, got {walk_length} and {walks_per_node}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut walks = Vec::with_capacity(walks_per_node * g.n_nodes());
    for _ in 0..walks_per_node {
        for start in 0..g.n_nodes() {
            let mut walk = Vec::with_capacity(walk_length);
            walk.push(start);
            let mut cur = start;
            while walk.len() < walk_length {
                let nb = g.neighbors(cur);
                if nb.is_empty() {
                    break;
                }
                cur = step(&mut rng, nb);
                walk.push(cur);
            }
            walks.push(walk);
        }
    }
    Ok(walks)
}

/// Runs walks on the configured substrate and trains skip-gram vectors keyed
/// by code id.
pub fn structural_embeddings(h: &Hypergraph, walk: &WalkConfig, sg: &SkipGramConfig) -> Result<EmbeddingTable> {
    let n = h.n_nodes();
    let walks = match walk.substrate {
        WalkSubstrate::Clique => random_walks(&h.clique_expansion(), walk.walks_per_node, walk.walk_length, walk.seed)?,
        WalkSubstrate::Incidence => {
            // Twice the length so the code-only projection keeps roughly
            // walk_length tokens.
            let raw = random_walks(&h.incidence_expansion(), walk.walks_per_node, 2 * walk.walk_length, walk.seed)?;
            raw.into_iter()
                .filter(|w| w[0] < n)
                .map(|w| w.into_iter().filter(|&v| v < n).collect())
                .collect()
        }
    };
    let vectors = train_skipgram(&walks, n, sg)?;
    EmbeddingTable::new(TableKind::Structural, h.node_ids().to_vec(), vectors)
}
