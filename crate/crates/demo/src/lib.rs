//! WebAssembly bindings for the browser demo. Every export takes and returns
//! plain strings or numbers; structured results are JSON.

use hyperfuse::data::{
    filter_note_sections, generate_synthetic_dataset, split_dataset, SignalSpec, Split, TaskKind,
    DEFAULT_BLOCKED_SECTIONS,
};
use hyperfuse::embed::{embed_dataset, EmbeddingProvider, FallbackEmbedder, SkipGramConfig, WalkConfig};
use hyperfuse::hypergraph::build_hypergraph;
use hyperfuse::interpret::{node_importance, LayerChoice};
use hyperfuse::model::{forward, ModelConfig};
use hyperfuse::train::{train_one, TrainConfig, TrainingData};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Drops blocked note sections. `blocked` is comma-separated; empty means
/// the default administrative sections.
#[wasm_bindgen]
pub fn filter_note(note: &str, blocked: &str) -> String {
    let custom: Vec<&str> = blocked.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if custom.is_empty() {
        filter_note_sections(note, DEFAULT_BLOCKED_SECTIONS)
    } else {
        filter_note_sections(note, &custom)
    }
}

/// Cosine similarity of two texts under the offline hashed-token embedder.
#[wasm_bindgen]
pub fn text_similarity(a: &str, b: &str, dim: usize) -> Result<f64, JsValue> {
    let e = FallbackEmbedder::new(dim, 0).map_err(js_err)?;
    Ok(e.embed(a).iter().zip(e.embed(b)).map(|(x, y)| x * y).sum())
}

#[derive(Debug, Serialize)]
pub struct RankedOut {
    pub code: String,
    pub name: String,
    pub score: f64,
    pub determining: bool,
}

#[derive(Debug, Serialize)]
pub struct VisitOut {
    pub visit: String,
    pub ranked: Vec<RankedOut>,
}

#[derive(Debug, Serialize)]
pub struct ToyRun {
    pub n_visits: usize,
    pub n_codes: usize,
    pub train_loss: Vec<f64>,
    pub val_auroc: Vec<f64>,
    pub selected_epoch: usize,
    pub test_auroc: Option<f64>,
    /// Share of positive test visits whose determining codes rank top-2.
    pub top2_hit_rate: f64,
    pub examples: Vec<VisitOut>,
}

/// Generates a structure-planted dataset, trains the full model and ranks
/// the codes of positive test visits by attention.
pub fn toy_run(n_visits: usize, seed: u64, epochs: usize) -> hyperfuse::Result<ToyRun> {
    let n_codes = (n_visits / 10).clamp(12, 60);
    let (ds, planted) =
        generate_synthetic_dataset(n_visits, n_codes, TaskKind::Binary, &SignalSpec::structure_only(), seed)?;
    let ds = split_dataset(ds, seed)?;
    let h = build_hypergraph(&ds)?;
    let provider = EmbeddingProvider::fallback(8, seed)?;
    let sg = SkipGramConfig { dim: 8, ..SkipGramConfig::default() };
    let emb = embed_dataset(&ds, &h, &WalkConfig::default(), &sg, &provider, DEFAULT_BLOCKED_SECTIONS)?;
    let data = TrainingData::from_tables(&ds, &h, &emb.structural, &emb.concept, &emb.note)?;
    let cfg = ModelConfig { hidden: 16, heads: 2, layers: 2, d1: 8, d2: 8, seed, ..ModelConfig::default() };
    let tcfg = TrainConfig { max_epochs: epochs, patience: epochs, ..TrainConfig::default() };
    let (params, record) = train_one(&data, &cfg, &tcfg, seed)?;

    let state = forward(&data.inputs, &params, &cfg)?;
    let mut hits = 0;
    let mut examples = Vec::new();
    let positives: Vec<_> =
        ds.visits().iter().filter(|v| ds.split_of(&v.visit_id) == Some(Split::Test) && v.label[0]).collect();
    for v in &positives {
        let report = node_importance(&state, &data.inputs, &v.visit_id, LayerChoice::Final, "full", Some(&ds))?;
        let determining = planted.determining_codes(0, v);
        let top: Vec<&str> = report.top(2).iter().map(|c| c.code_id.as_str()).collect();
        if !determining.is_empty() && determining.iter().all(|c| top.contains(&c.as_str())) {
            hits += 1;
        }
        if examples.len() < 6 {
            examples.push(VisitOut {
                visit: v.visit_id.clone(),
                ranked: report
                    .ranked
                    .iter()
                    .map(|c| RankedOut {
                        code: c.code_id.clone(),
                        name: c.concept_name.clone(),
                        score: c.score,
                        determining: determining.contains(&c.code_id),
                    })
                    .collect(),
            });
        }
    }
    Ok(ToyRun {
        n_visits,
        n_codes,
        train_loss: record.epochs.iter().map(|e| e.train_loss).collect(),
        val_auroc: record.epochs.iter().map(|e| e.val_auroc).collect(),
        selected_epoch: record.selected_epoch,
        test_auroc: record.test.auroc,
        top2_hit_rate: if positives.is_empty() { 0.0 } else { hits as f64 / positives.len() as f64 },
        examples,
    })
}

/// `toy_run` as JSON for the page.
#[wasm_bindgen]
pub fn train_toy(n_visits: usize, seed: u64, epochs: usize) -> Result<String, JsValue> {
    let run = toy_run(n_visits.clamp(60, 2000), seed, epochs.clamp(1, 300)).map_err(js_err)?;
    serde_json::to_string(&run).map_err(js_err)
}
