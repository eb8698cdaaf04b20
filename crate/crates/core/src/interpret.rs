//! Per-visit code importance from the node-to-hyperedge attention weights.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{LayerState, ModelInputs};

/// Which layer's attention to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "LayerSpec", into = "LayerSpec")]
pub enum LayerChoice {
    #[default]
    Final,
    /// 1-based layer index.
    Layer(usize),
    /// Average over all layers.
    Mean,
}

impl fmt::Display for LayerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerChoice::Final => f.write_str("final"),
            LayerChoice::Layer(l) => write!(f, "{l}"),
            LayerChoice::Mean => f.write_str("mean"),
        }
    }
}

/// Config form: a layer index as an integer, anything else by name.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LayerSpec {
    Index(usize),
    Name(String),
}

impl From<LayerChoice> for LayerSpec {
    fn from(l: LayerChoice) -> Self {
        match l {
            LayerChoice::Layer(n) => LayerSpec::Index(n),
            other => LayerSpec::Name(other.to_string()),
        }
    }
}

impl TryFrom<LayerSpec> for LayerChoice {
    type Error = Error;

    fn try_from(s: LayerSpec) -> Result<Self> {
        match s {
            LayerSpec::Index(n) => n.to_string().parse(),
            LayerSpec::Name(name) => name.parse(),
        }
    }
}

impl FromStr for LayerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" | "last" => Ok(LayerChoice::Final),
            "mean" => Ok(LayerChoice::Mean),
            n => n
                .parse()
                .ok()
                .filter(|&l| l >= 1)
                .map(LayerChoice::Layer)
                .ok_or_else(|| Error::Config(format!("layer must be 'final', 'mean' or a positive index, got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCode {
    pub code_id: String,
    pub concept_name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeImportanceReport {
    pub visit_id: String,
    pub variant: String,
    pub layer: LayerChoice,
    /// Descending by score, ties by code id.
    pub ranked: Vec<RankedCode>,
}

impl NodeImportanceReport {
    pub fn top(&self, k: usize) -> &[RankedCode] {
        &self.ranked[..k.min(self.ranked.len())]
    }

    /// Ranked codes with scores, then the note when given.
    pub fn to_text(&self, note: Option<&str>) -> String {
        let mut out = format!("visit {} (variant {}, layer {})\n", self.visit_id, self.variant, self.layer);
        let id_w = self.ranked.iter().map(|r| r.code_id.len()).max().unwrap_or(0);
        let name_w = self.ranked.iter().map(|r| r.concept_name.chars().count()).max().unwrap_or(0);
        for (i, r) in self.ranked.iter().enumerate() {
            let pad = name_w - r.concept_name.chars().count();
            let _ = writeln!(
                out,
                "  {:>2}. {:<id_w$}  {}{}  {:.6}",
                i + 1,
                r.code_id,
                r.concept_name,
                " ".repeat(pad),
                r.score
            );
        }
        if let Some(note) = note.filter(|n| !n.trim().is_empty()) {
            out.push_str("  note:\n");
            for line in note.lines() {
                let _ = writeln!(out, "    {line}");
            }
        }
        out
    }
}

/// Importance of each member code of `visit_id`: its head-averaged attention
/// weight in the node-to-hyperedge step. Concept names come from `ds` when
/// given.
pub fn node_importance(
    state: &LayerState,
    inputs: &ModelInputs,
    visit_id: &str,
    layer: LayerChoice,
    variant: &str,
    ds: Option<&Dataset>,
) -> Result<NodeImportanceReport> {
    let pos = inputs
        .visit_index(visit_id)
        .ok_or_else(|| Error::Data(format!("unknown visit '{visit_id}'")))?;
    let edge = inputs.visit_edge(pos);
    let n_layers = state.edge_attention.len();
    let scores: Vec<f64> = match layer {
        LayerChoice::Final => state.edge_attention[n_layers - 1][edge].clone(),
        LayerChoice::Layer(l) if (1..=n_layers).contains(&l) => state.edge_attention[l - 1][edge].clone(),
        LayerChoice::Layer(l) => {
            return Err(Error::Config(format!("layer {l} outside 1..={n_layers}")));
        }
        LayerChoice::Mean => {
            let width = state.edge_attention[0][edge].len();
            (0..width)
                .map(|j| state.edge_attention.iter().map(|rows| rows[edge][j]).sum::<f64>() / n_layers as f64)
                .collect()
        }
    };
    let mut ranked: Vec<RankedCode> = inputs
        .edge_members(edge)
        .iter()
        .zip(scores)
        .map(|(&node, score)| {
            let code_id = inputs.node_ids()[node].clone();
            let concept_name = ds
                .and_then(|d| d.code(&code_id))
                .map_or_else(|| code_id.clone(), |c| c.concept_name.clone());
            RankedCode { code_id, concept_name, score }
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.code_id.cmp(&b.code_id)));
    Ok(NodeImportanceReport { visit_id: visit_id.to_string(), variant: variant.to_string(), layer, ranked })
}

/// Overlap of two variants' top-k codes for the same visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub visit_id: String,
    /// Requested k clipped to the visit size.
    pub k: usize,
    pub left: String,
    pub right: String,
    pub shared: Vec<String>,
    pub only_left: Vec<String>,
    pub only_right: Vec<String>,
}

impl VariantComparison {
    pub fn to_text(&self) -> String {
        let list = |v: &[String]| if v.is_empty() { "(none)".to_string() } else { v.join(", ") };
        format!(
            "visit {} top-{}: shared [{}]; only {} [{}]; only {} [{}]\n",
            self.visit_id,
            self.k,
            list(&self.shared),
            self.left,
            list(&self.only_left),
            self.right,
            list(&self.only_right)
        )
    }
}

pub fn compare_variants(left: &NodeImportanceReport, right: &NodeImportanceReport, k: usize) -> VariantComparison {
    let k = k.min(left.ranked.len()).min(right.ranked.len());
    let ids = |r: &NodeImportanceReport| -> Vec<String> { r.top(k).iter().map(|c| c.code_id.clone()).collect() };
    let (a, b) = (ids(left), ids(right));
    VariantComparison {
        visit_id: left.visit_id.clone(),
        k,
        left: left.variant.clone(),
        right: right.variant.clone(),
        shared: a.iter().filter(|c| b.contains(c)).cloned().collect(),
        only_left: a.iter().filter(|c| !b.contains(c)).cloned().collect(),
        only_right: b.iter().filter(|c| !a.contains(c)).cloned().collect(),
    }
}
