use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelInputs};
use crate::error::{Error, Result};

/// Named parameter tensors. Biases are stored as `1 × width` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    tensors: BTreeMap<String, Array2<f64>>,
}

/// Trainable structural table, present when `train_embeddings` is set.
pub const EMBED_STRUCTURAL: &str = "embed.structural";
/// Trainable concept table, present when `train_embeddings` is set.
pub const EMBED_CONCEPT: &str = "embed.concept";

pub(crate) fn layer_name(l: usize, direction: &str, part: &str) -> String {
    format!("layer{l}.{direction}.{part}")
}

/// Every tensor name with its `(fan_in, width)` shape.
fn layout(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let d = cfg.hidden;
    let mut out = vec![
        ("input.w".to_string(), (cfg.d1 + cfg.d2, d)),
        ("input.b".to_string(), (1, d)),
        ("edge_init.w".to_string(), (d, d)),
        ("edge_init.b".to_string(), (1, d)),
        ("mlp1.w1".to_string(), (cfg.d2, d)),
        ("mlp1.b1".to_string(), (1, d)),
        ("mlp1.w2".to_string(), (d, d)),
        ("mlp1.b2".to_string(), (1, d)),
        ("mlp2.w1".to_string(), (2 * d, d)),
        ("mlp2.b1".to_string(), (1, d)),
        ("mlp2.w2".to_string(), (d, d)),
        ("mlp2.b2".to_string(), (1, d)),
        ("cls.w1".to_string(), (cfg.layers * d, d)),
        ("cls.b1".to_string(), (1, d)),
        ("cls.w2".to_string(), (d, cfg.task_kind.n_labels())),
        ("cls.b2".to_string(), (1, cfg.task_kind.n_labels())),
    ];
    for l in 1..=cfg.layers {
        for dir in ["v2e", "e2v"] {
            for part in ["q", "k", "v", "o"] {
                out.push((layer_name(l, dir, part), (d, d)));
            }
            out.push((layer_name(l, dir, "o_bias"), (1, d)));
            if cfg.layer_norm {
                out.push((layer_name(l, dir, "ln_gain"), (1, d)));
                out.push((layer_name(l, dir, "ln_bias"), (1, d)));
            }
        }
    }
    out
}

fn fan_in(cfg: &ModelConfig, name: &str, shape: (usize, usize)) -> usize {
    if shape.0 > 1 {
        return shape.0;
    }
    // A bias shares the fan-in of the weight it follows.
    let d = cfg.hidden;
    match name {
        "input.b" => cfg.d1 + cfg.d2,
        "mlp1.b1" => cfg.d2,
        "mlp2.b1" => 2 * d,
        "cls.b1" => cfg.layers * d,
        _ => d,
    }
}

impl ModelParameters {
    /// Uniform `±1/sqrt(fan_in)` initialization from `seed`; layer-norm
    /// gains start at one and their biases at zero. Embedding tables are not
    /// created here, see [`Self::for_inputs`].
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shapes = layout(cfg);
        shapes.sort_by(|a, b| a.0.cmp(&b.0));
        let tensors = shapes
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".ln_gain") {
                    Array2::ones(shape)
                } else if name.ends_with(".ln_bias") {
                    Array2::zeros(shape)
                } else {
                    let bound = 1.0 / (fan_in(cfg, &name, shape) as f64).sqrt();
                    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
                };
                (name, t)
            })
            .collect();
        Ok(ModelParameters { tensors })
    }

    /// [`Self::init`] plus, with `train_embeddings`, tables seeded from the
    /// inputs.
    pub fn for_inputs(cfg: &ModelConfig, inputs: &ModelInputs, seed: u64) -> Result<Self> {
        let mut p = Self::init(cfg, seed)?;
        if cfg.train_embeddings {
            p.attach_embeddings(inputs);
        }
        Ok(p)
    }

    /// Adds (or resets) the trainable tables from the input rows.
    pub fn attach_embeddings(&mut self, inputs: &ModelInputs) {
        self.tensors.insert(EMBED_STRUCTURAL.to_string(), inputs.structural().clone());
        self.tensors.insert(EMBED_CONCEPT.to_string(), inputs.concept().clone());
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ModelParameters {
            tensors: layout(cfg).into_iter().map(|(n, s)| (n, Array2::zeros(s))).collect(),
        })
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        ModelParameters {
            tensors: self.tensors.iter().map(|(n, t)| (n.clone(), Array2::zeros(t.raw_dim()))).collect(),
        }
    }

    /// Rows of the trainable tables, if present.
    pub fn embedding_rows(&self) -> Option<usize> {
        self.tensors.get(EMBED_STRUCTURAL).map(|t| t.nrows())
    }

    /// Checks that names and shapes match `cfg`.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let mut expected = layout(cfg);
        if cfg.train_embeddings {
            let n = self.embedding_rows().ok_or_else(|| Error::Shape(format!("missing tensor {EMBED_STRUCTURAL}")))?;
            expected.push((EMBED_STRUCTURAL.to_string(), (n, cfg.d1)));
            expected.push((EMBED_CONCEPT.to_string(), (n, cfg.d2)));
        }
        if expected.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in expected {
            match self.tensors.get(&name) {
                Some(t) if t.dim() == shape => {}
                Some(t) => {
                    return Err(Error::Shape(format!("{name}: expected {shape:?}, found {:?}", t.dim())))
                }
                None => return Err(Error::Shape(format!("missing tensor {name}"))),
            }
        }
        if self.tensors.values().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.tensors.get(name).unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.tensors.get_mut(name).unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn n_values(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors.values().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// All values in name order, row-major within each tensor.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.values().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn unflatten(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_values() {
            return Err(Error::Shape(format!("expected {} values, got {}", self.n_values(), values.len())));
        }
        let mut offset = 0;
        for t in self.tensors.values_mut() {
            let n = t.len();
            t.iter_mut().zip(&values[offset..offset + n]).for_each(|(x, &v)| *x = v);
            offset += n;
        }
        Ok(())
    }
}

/// Versioned checkpoint: configuration plus every tensor, stored as JSON with
/// round-trip-exact floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: ModelParameters,
}

impl Checkpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(config: ModelConfig, params: ModelParameters) -> Self {
        Checkpoint { format_version: Self::FORMAT_VERSION, config, params }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format_version != Self::FORMAT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                ck.format_version
            )));
        }
        ck.params.check(&ck.config)?;
        Ok(ck)
    }
}
