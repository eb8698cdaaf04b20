//! Finite-difference verification of the analytic gradient.

use ndarray::{array, Array1, Array2};

use super::forward::{evaluate, loss, EdgeSpec, ModelInputs};
use super::{ModelConfig, ModelParameters};
use crate::error::{Error, Result};

/// Tensors with more entries than this are checked on an evenly strided
/// sample.
const FULL_CHECK_LIMIT: usize = 1000;
const SAMPLE_SIZE: usize = 200;
/// Denominator floor of the relative error.
const REL_FLOOR: f64 = 1e-6;

/// Three codes `A, B, C`; visits `v1 = {A, B}` (label 1) and `v2 = {B, C}`
/// (label 0); `d1 = d2 = 4`, `d = 8`, two heads.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub inputs: ModelInputs,
    pub cfg: ModelConfig,
    pub params: ModelParameters,
    pub rows: Vec<usize>,
    pub targets: Array2<f64>,
}

impl TinyInstance {
    pub fn canonical(layers: usize) -> Result<Self> {
        let cfg = ModelConfig { hidden: 8, layers, heads: 2, d1: 4, d2: 4, seed: 11, ..ModelConfig::default() };
        let s = Array2::from_shape_fn((3, 4), |(i, j)| (1.0 + (4 * i + j) as f64).sin() * 0.8);
        let c = Array2::from_shape_fn((3, 4), |(i, j)| (0.5 + (3 * i + 2 * j) as f64).cos() * 0.8);
        let note = |k: f64| Array1::from_shape_fn(4, |j| (k + 0.9 * j as f64).sin() * 0.8);
        let edges = vec![
            EdgeSpec { id: "v1".into(), members: vec![0, 1], note: Some(note(0.3)) },
            EdgeSpec { id: "v2".into(), members: vec![1, 2], note: Some(note(2.1)) },
            EdgeSpec { id: "self:A".into(), members: vec![0], note: None },
            EdgeSpec { id: "self:B".into(), members: vec![1], note: None },
            EdgeSpec { id: "self:C".into(), members: vec![2], note: None },
        ];
        let inputs = ModelInputs::from_parts(vec!["A".into(), "B".into(), "C".into()], s, c, edges)?;
        let params = ModelParameters::init(&cfg, cfg.seed)?;
        Ok(TinyInstance { inputs, cfg, params, rows: vec![0, 1], targets: array![[1.0], [0.0]] })
    }

    /// Same inputs under `cfg`, with freshly initialized parameters.
    pub fn with_config(self, cfg: ModelConfig) -> Result<Self> {
        let params = ModelParameters::for_inputs(&cfg, &self.inputs, cfg.seed)?;
        Ok(TinyInstance { cfg, params, ..self })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn checked_entries(len: usize) -> Vec<usize> {
    if len <= FULL_CHECK_LIMIT {
        (0..len).collect()
    } else {
        (0..len).step_by(len.div_ceil(SAMPLE_SIZE)).collect()
    }
}

/// Compares the analytic gradient of the training loss against central
/// differences with step `eps` for every parameter tensor.
pub fn gradient_check(inst: &TinyInstance, eps: f64) -> Result<GradCheckReport> {
    let TinyInstance { inputs, cfg, params, rows, targets } = inst;
    let analytic = evaluate(inputs, params, cfg, rows, targets)?.grads;
    if analytic.iter().any(|(_, g)| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    let mut probe = params.clone();
    let mut tensors = Vec::new();
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let entries = checked_entries(params.get(&name).len());
        let ncols = params.get(&name).ncols();
        let mut worst = 0.0f64;
        for &idx in &entries {
            let at = [idx / ncols, idx % ncols];
            let orig = params.get(&name)[at];
            probe.get_mut(&name)[at] = orig + eps;
            let up = loss(inputs, &probe, cfg, rows, targets)?;
            probe.get_mut(&name)[at] = orig - eps;
            let down = loss(inputs, &probe, cfg, rows, targets)?;
            probe.get_mut(&name)[at] = orig;
            let numeric = (up - down) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::NonFinite(format!("numeric gradient of {name}")));
            }
            worst = worst.max(relative_error(analytic.get(&name)[at], numeric));
        }
        tensors.push(TensorCheck { name, checked: entries.len(), max_rel_error: worst });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, tensors })
}
