//! Skip-gram with negative sampling over node-index walks.

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig { dim: 32, window: 5, negatives: 5, epochs: 5, learning_rate: 0.025, seed: 0 }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unigram^0.75 negative-sampling distribution as a cumulative table.
struct NegativeTable {
    cumulative: Vec<f64>,
}

impl NegativeTable {
    fn new(counts: &[usize]) -> Option<Self> {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        (acc > 0.0).then_some(NegativeTable { cumulative })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

/// Returns an `n_nodes × dim` matrix. Nodes absent from the corpus keep their
/// seeded initial vector.
pub fn train_skipgram(walks: &[Vec<usize>], n_nodes: usize, cfg: &SkipGramConfig) -> Result<Array2<f64>> {
    if cfg.dim < 2 {
        return Err(Error::Config(format!("skip-gram dimension must be >= 2, got {}", cfg.dim)));
    }
    if walks.iter().all(|w| w.is_empty()) {
        return Err(Error::Data("empty walk corpus".into()));
    }
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input = Array2::from_shape_fn((n_nodes, d), |_| (rng.random::<f64>() - 0.5) / d as f64);
    let mut output = Array2::<f64>::zeros((n_nodes, d));

    let mut counts = vec![0usize; n_nodes];
    for &v in walks.iter().flatten() {
        counts[v] += 1;
    }
    let Some(negatives) = NegativeTable::new(&counts) else {
        return Ok(input);
    };

    let pairs_per_epoch: usize = walks
        .iter()
        .map(|w| {
            (0..w.len())
                .map(|i| i.min(cfg.window) + (w.len() - 1 - i).min(cfg.window))
                .sum::<usize>()
        })
        .sum();
    let total = (pairs_per_epoch * cfg.epochs).max(1) as f64;
    let mut seen = 0usize;
    let mut grad = vec![0.0; d];

    for _ in 0..cfg.epochs {
        for walk in walks {
            for (i, &center) in walk.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(walk.len() - 1);
                for (j, &context) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let lr = cfg.learning_rate * (1.0 - seen as f64 / total).max(1e-4);
                    seen += 1;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = negatives.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let score: f64 = input.row(center).dot(&output.row(target));
                        let g = (label - sigmoid(score)) * lr;
                        let center_row = input.row(center);
                        for (acc, &x) in grad.iter_mut().zip(output.row(target)) {
                            *acc += g * x;
                        }
                        Zip::from(output.row_mut(target))
                            .and(center_row)
                            .for_each(|o, &c| *o += g * c);
                    }
                    for (x, g) in input.row_mut(center).iter_mut().zip(&grad) {
                        *x += g;
                    }
                }
            }
        }
    }
    Ok(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::random_walks;
    use crate::hypergraph::WeightedGraph;

    fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
        a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
    }

    #[test]
    fn output_shape_matches_nodes() {
        let g = WeightedGraph::from_pairs(4, [(0, 1, 1.0), (1, 2, 1.0)]);
        let walks = random_walks(&g, 2, 5, 0).unwrap();
        let cfg = SkipGramConfig { dim: 6, ..SkipGramConfig::default() };
        let v = train_skipgram(&walks, 4, &cfg).unwrap();
        assert_eq!(v.dim(), (4, 6));
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn isolated_node_keeps_initial_vector() {
        let g = WeightedGraph::from_pairs(3, [(0, 1, 1.0)]);
        let walks = random_walks(&g, 3, 6, 0).unwrap();
        let cfg = SkipGramConfig { dim: 4, ..SkipGramConfig::default() };
        let trained = train_skipgram(&walks, 3, &cfg).unwrap();
        let untouched = train_skipgram(&[vec![0]], 3, &SkipGramConfig { epochs: 0, ..cfg }).unwrap();
        assert_eq!(trained.row(2), untouched.row(2));
    }

    #[test]
    fn invalid_inputs() {
        let cfg = SkipGramConfig { dim: 0, ..SkipGramConfig::default() };
        assert!(train_skipgram(&[vec![0, 1]], 2, &cfg).is_err());
        assert!(train_skipgram(&[], 2, &SkipGramConfig::default()).is_err());
    }

    #[test]
    fn barbell_cliques_separate() {
        let mut pairs = Vec::new();
        for base in [0, 5] {
            for i in 0..5 {
                for j in i + 1..5 {
                    pairs.push((base + i, base + j, 1.0));
                }
            }
        }
        pairs.push((4, 5, 1.0));
        let g = WeightedGraph::from_pairs(10, pairs);
        let (mut intra, mut inter) = (0.0, 0.0);
        for seed in 0..5 {
            let walks = random_walks(&g, 10, 20, seed).unwrap();
            let cfg = SkipGramConfig { dim: 8, seed, ..SkipGramConfig::default() };
            let v = train_skipgram(&walks, 10, &cfg).unwrap();
            let (mut a, mut na, mut b, mut nb) = (0.0, 0, 0.0, 0);
            for i in 0..10 {
                for j in i + 1..10 {
                    let c = cosine(v.row(i), v.row(j));
                    if (i < 5) == (j < 5) {
                        a += c;
                        na += 1;
                    } else {
                        b += c;
                        nb += 1;
                    }
                }
            }
            intra += a / na as f64;
            inter += b / nb as f64;
        }
        assert!(intra / 5.0 > inter / 5.0, "intra {intra} inter {inter}");
    }
}
