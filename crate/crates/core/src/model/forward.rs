use std::collections::BTreeMap;
use std::rc::Rc;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{layer_name, ModelParameters, EMBED_CONCEPT, EMBED_STRUCTURAL};
use super::tape::{sigmoid, Groups, Tape, Var, BCE_EPS};
use super::ModelConfig;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::hypergraph::{EdgeKind, Hypergraph};

/// Dense model inputs: per-node structural and concept rows, per-edge note
/// rows and the incidence structure. Self-loop edges carry no note row.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs {
    node_ids: Vec<String>,
    structural: Array2<f64>,
    concept: Array2<f64>,
    notes: Array2<f64>,
    self_loop: Vec<bool>,
    edge_nodes: Vec<Vec<usize>>,
    node_edges: Vec<Vec<usize>>,
    visit_rows: Vec<usize>,
    visit_ids: Vec<String>,
}

/// One edge for [`ModelInputs::from_parts`]. `note: None` marks a self-loop.
#[derive(Debug, Clone)]
pub struct EdgeSpec {
    pub id: String,
    pub members: Vec<usize>,
    pub note: Option<Array1<f64>>,
}

impl ModelInputs {
    /// Gathers table rows for every node and visit of `h`, each table
    /// multiplied by its [`EmbeddingTable::input_scale`]. Self-loops are added
    /// when missing.
    pub fn from_hypergraph(
        h: &Hypergraph,
        structural: &EmbeddingTable,
        concept: &EmbeddingTable,
        notes: &EmbeddingTable,
    ) -> Result<Self> {
        let h = h.add_self_loops();
        let s = structural.gather(h.node_ids())? * structural.input_scale();
        let c = concept.gather(h.node_ids())? * concept.input_scale();
        let note_scale = notes.input_scale();
        let edges = h
            .edges()
            .iter()
            .map(|e| {
                let note = match e.kind {
                    EdgeKind::SelfLoop => None,
                    EdgeKind::Visit => {
                        let visit = e.visit_id.as_deref().unwrap_or(&e.edge_id);
                        let row = notes.get(visit).ok_or_else(|| {
                            Error::Data(format!("hyperedge '{}': no note embedding for visit '{visit}'", e.edge_id))
                        })?;
                        Some(row.to_owned() * note_scale)
                    }
                };
                Ok(EdgeSpec { id: e.edge_id.clone(), members: e.members.clone(), note })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(h.node_ids().to_vec(), s, c, edges)
    }

    /// Builds inputs from explicit rows. Every node must belong to at least
    /// one edge.
    pub fn from_parts(
        node_ids: Vec<String>,
        structural: Array2<f64>,
        concept: Array2<f64>,
        edges: Vec<EdgeSpec>,
    ) -> Result<Self> {
        let n = node_ids.len();
        if structural.nrows() != n || concept.nrows() != n {
            return Err(Error::Shape(format!(
                "{n} nodes but {} structural and {} concept rows",
                structural.nrows(),
                concept.nrows()
            )));
        }
        let d2 = concept.ncols();
        let mut notes = Array2::zeros((edges.len(), d2));
        let mut self_loop = Vec::with_capacity(edges.len());
        let mut edge_nodes = Vec::with_capacity(edges.len());
        let mut node_edges = vec![Vec::new(); n];
        let mut visit_rows = Vec::new();
        let mut visit_ids = Vec::new();
        for (ei, e) in edges.into_iter().enumerate() {
            if e.members.is_empty() {
                return Err(Error::Data(format!("hyperedge '{}' has no members", e.id)));
            }
            if let Some(&bad) = e.members.iter().find(|&&m| m >= n) {
                return Err(Error::Data(format!("hyperedge '{}': node index {bad} out of range", e.id)));
            }
            match e.note {
                Some(row) => {
                    if row.len() != d2 {
                        return Err(Error::Shape(format!(
                            "hyperedge '{}': note width {} but concept width {d2}",
                            e.id,
                            row.len()
                        )));
                    }
                    notes.row_mut(ei).assign(&row);
                    self_loop.push(false);
                    visit_rows.push(ei);
                    visit_ids.push(e.id);
                }
                None => {
                    if e.members.len() != 1 {
                        return Err(Error::Data(format!("self-loop '{}' must have exactly one member", e.id)));
                    }
                    self_loop.push(true);
                }
            }
            for &m in &e.members {
                node_edges[m].push(ei);
            }
            edge_nodes.push(e.members);
        }
        if let Some(v) = node_edges.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!("node '{}' belongs to no hyperedge", node_ids[v])));
        }
        if notes.iter().chain(&structural).chain(&concept).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model inputs".into()));
        }
        Ok(ModelInputs {
            node_ids,
            structural,
            concept,
            notes,
            self_loop,
            edge_nodes,
            node_edges,
            visit_rows,
            visit_ids,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_nodes.len()
    }

    pub fn d1(&self) -> usize {
        self.structural.ncols()
    }

    pub fn d2(&self) -> usize {
        self.concept.ncols()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn structural(&self) -> &Array2<f64> {
        &self.structural
    }

    pub fn concept(&self) -> &Array2<f64> {
        &self.concept
    }

    /// Visit ids in classification order.
    pub fn visit_ids(&self) -> &[String] {
        &self.visit_ids
    }

    /// Position of `visit_id` in [`Self::visit_ids`].
    pub fn visit_index(&self, visit_id: &str) -> Option<usize> {
        self.visit_ids.iter().position(|v| v == visit_id)
    }

    /// Edge index of the `i`-th visit.
    pub fn visit_edge(&self, i: usize) -> usize {
        self.visit_rows[i]
    }

    pub fn edge_members(&self, edge: usize) -> &[usize] {
        &self.edge_nodes[edge]
    }

    pub fn node_edges(&self, node: usize) -> &[usize] {
        &self.node_edges[node]
    }

    pub fn is_self_loop(&self, edge: usize) -> bool {
        self.self_loop[edge]
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.d1() != cfg.d1 || self.d2() != cfg.d2 {
            return Err(Error::Shape(format!(
                "inputs have d1={}, d2={} but the model expects d1={}, d2={}",
                self.d1(),
                self.d2(),
                cfg.d1,
                cfg.d2
            )));
        }
        Ok(())
    }
}

/// Pre-projection node features `[S_v ; C_v]` from the input tables, with
/// `C_v` zeroed when concept semantics are disabled.
pub fn init_node_features(inputs: &ModelInputs, cfg: &ModelConfig) -> Result<Array2<f64>> {
    inputs.check(cfg)?;
    let concept = if cfg.use_concept_semantics {
        inputs.concept.clone()
    } else {
        Array2::zeros(inputs.concept.raw_dim())
    };
    Ok(concatenate![Axis(1), inputs.structural, concept])
}

/// Concept row feeding each edge's semantics: the member for self-loops,
/// none for visit edges (which use their note row).
fn self_loop_members(inputs: &ModelInputs) -> Vec<Option<usize>> {
    inputs
        .self_loop
        .iter()
        .zip(&inputs.edge_nodes)
        .map(|(&s, members)| s.then(|| members[0]))
        .collect()
}

/// Per-edge semantics table `H`, one row per hyperedge.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperedgeSemantics {
    pub h: Array2<f64>,
}

pub fn build_hyperedge_semantics(
    inputs: &ModelInputs,
    params: &ModelParameters,
    cfg: &ModelConfig,
) -> Result<HyperedgeSemantics> {
    inputs.check(cfg)?;
    params.check(cfg)?;
    let mut net = Net::new(params, false);
    let (_, c) = net.tables(inputs, cfg)?;
    let h = net.semantics(inputs, cfg, c);
    Ok(HyperedgeSemantics { h: net.tape.value(h).clone() })
}

/// Embeddings after every layer plus head-averaged attention records.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    /// Node embeddings for layers `0..=L`.
    pub x: Vec<Array2<f64>>,
    /// Hyperedge embeddings for layers `0..=L`.
    pub e: Vec<Array2<f64>>,
    pub semantics: HyperedgeSemantics,
    /// `edge_attention[l - 1][edge]`: weights over the edge's members, in
    /// member order.
    pub edge_attention: Vec<Vec<Vec<f64>>>,
    /// `node_attention[l - 1][node]`: weights over the node's incident edges.
    pub node_attention: Vec<Vec<Vec<f64>>>,
    visit_rows: Vec<usize>,
}

impl LayerState {
    pub fn layers(&self) -> usize {
        self.e.len() - 1
    }
}

/// Output of one attention aggregation for a single target.
#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    pub output: Array1<f64>,
    /// Head-averaged weights over the sources.
    pub weights: Vec<f64>,
}

/// Loss, gradient and per-visit probabilities from one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub grads: ModelParameters,
    pub probs: Array2<f64>,
}

struct Net {
    tape: Tape,
    vars: BTreeMap<String, Var>,
}

impl Net {
    fn new(params: &ModelParameters, trainable: bool) -> Self {
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
                (name.to_string(), v)
            })
            .collect();
        Net { tape, vars }
    }

    fn p(&self, name: &str) -> Var {
        self.vars[name]
    }

    fn linear(&mut self, x: Var, w: &str, b: &str) -> Var {
        let (w, b) = (self.p(w), self.p(b));
        self.tape.linear(x, w, b)
    }

    /// One hidden ReLU layer followed by a linear output.
    fn mlp(&mut self, prefix: &str, x: Var) -> Var {
        let hidden = self.linear(x, &format!("{prefix}.w1"), &format!("{prefix}.b1"));
        let hidden = self.tape.relu(hidden);
        self.linear(hidden, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
    }

    /// Multi-head attention of `targets` over `sources` grouped by `groups`,
    /// then output projection and ReLU. Returns `(attention node, output)`.
    fn attend(&mut self, l: usize, dir: &str, targets: Var, sources: Var, groups: Groups, heads: usize) -> (Var, Var) {
        let wq = self.p(&layer_name(l, dir, "q"));
        let wk = self.p(&layer_name(l, dir, "k"));
        let wv = self.p(&layer_name(l, dir, "v"));
        let q = self.tape.matmul(targets, wq);
        let k = self.tape.matmul(sources, wk);
        let v = self.tape.matmul(sources, wv);
        let att = self.tape.attention(q, k, v, groups, heads);
        let out = self.linear(att, &layer_name(l, dir, "o"), &layer_name(l, dir, "o_bias"));
        (att, self.tape.relu(out))
    }

    fn fuse(&mut self, aggregated: Var, h: Var) -> Var {
        let cat = self.tape.concat_cols(&[aggregated, h]);
        self.mlp("mlp2", cat)
    }

    /// Structural and concept tables: trainable copies from the parameters
    /// or the fixed inputs. Concept rows are zero when concept semantics are
    /// disabled.
    fn tables(&mut self, inputs: &ModelInputs, cfg: &ModelConfig) -> Result<(Var, Var)> {
        let (s, c) = if cfg.train_embeddings {
            let (s, c) = (self.p(EMBED_STRUCTURAL), self.p(EMBED_CONCEPT));
            let rows = self.tape.value(s).nrows();
            if rows != inputs.n_nodes() {
                return Err(Error::Shape(format!(
                    "trained embeddings cover {rows} nodes but the inputs have {}",
                    inputs.n_nodes()
                )));
            }
            (s, c)
        } else {
            (self.tape.constant(inputs.structural.clone()), self.tape.constant(inputs.concept.clone()))
        };
        if cfg.use_concept_semantics {
            Ok((s, c))
        } else {
            Ok((s, self.tape.constant(Array2::zeros(inputs.concept.raw_dim()))))
        }
    }

    /// `H`: the semantics MLP over note rows (visit edges) and member concept
    /// rows (self-loops).
    fn semantics(&mut self, inputs: &ModelInputs, cfg: &ModelConfig, concept: Var) -> Var {
        if !cfg.use_note_semantics {
            return self.tape.constant(Array2::zeros((inputs.n_edges(), cfg.hidden)));
        }
        let notes = self.tape.constant(inputs.notes.clone());
        let loops = self.tape.select_rows(concept, Rc::new(self_loop_members(inputs)));
        let src = self.tape.add(notes, loops);
        self.mlp("mlp1", src)
    }

    fn norm(&mut self, x: Var, l: usize, dir: &str) -> Var {
        let (g, b) = (self.p(&layer_name(l, dir, "ln_gain")), self.p(&layer_name(l, dir, "ln_bias")));
        self.tape.layer_norm(x, g, b)
    }
}

struct Built {
    net: Net,
    x: Vec<Var>,
    e: Vec<Var>,
    h: Var,
    v2e: Vec<Var>,
    e2v: Vec<Var>,
}

fn ensure_finite(m: &Array2<f64>, what: impl FnOnce() -> String) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

fn build(inputs: &ModelInputs, params: &ModelParameters, cfg: &ModelConfig, trainable: bool) -> Result<Built> {
    cfg.validate()?;
    inputs.check(cfg)?;
    params.check(cfg)?;
    let mut net = Net::new(params, trainable);
    let edge_groups: Groups = Rc::new(inputs.edge_nodes.clone());
    let node_groups: Groups = Rc::new(inputs.node_edges.clone());

    let (s, c) = net.tables(inputs, cfg)?;
    let raw = net.tape.concat_cols(&[s, c]);
    let x0 = net.linear(raw, "input.w", "input.b");
    let x0 = net.tape.relu(x0);
    let pooled = net.tape.group_mean(x0, edge_groups.clone());
    let e0 = net.linear(pooled, "edge_init.w", "edge_init.b");
    let h = net.semantics(inputs, cfg, c);
    ensure_finite(net.tape.value(e0), || "initial embeddings".into())?;
    ensure_finite(net.tape.value(h), || "hyperedge semantics".into())?;

    let (mut x, mut e) = (vec![x0], vec![e0]);
    let (mut v2e, mut e2v) = (Vec::new(), Vec::new());
    for l in 1..=cfg.layers {
        let (xp, ep) = (x[l - 1], e[l - 1]);
        let (att, agg) = net.attend(l, "v2e", ep, xp, edge_groups.clone(), cfg.heads);
        let mut el = net.fuse(agg, h);
        if cfg.residual {
            el = net.tape.add(el, ep);
        }
        if cfg.layer_norm {
            el = net.norm(el, l, "v2e");
        }
        let (att_n, mut xl) = net.attend(l, "e2v", xp, el, node_groups.clone(), cfg.heads);
        if cfg.residual {
            xl = net.tape.add(xl, xp);
        }
        if cfg.layer_norm {
            xl = net.norm(xl, l, "e2v");
        }
        ensure_finite(net.tape.value(el), || format!("layer {l} hyperedge embeddings"))?;
        ensure_finite(net.tape.value(xl), || format!("layer {l} node embeddings"))?;
        v2e.push(att);
        e2v.push(att_n);
        e.push(el);
        x.push(xl);
    }
    Ok(Built { net, x, e, h, v2e, e2v })
}

fn head_average(weights: &[Vec<f64>], heads: usize) -> Vec<Vec<f64>> {
    weights
        .iter()
        .map(|w| {
            let n = w.len() / heads;
            (0..n).map(|j| (0..heads).map(|h| w[h * n + j]).sum::<f64>() / heads as f64).collect()
        })
        .collect()
}

fn records(tape: &Tape, atts: &[Var]) -> Vec<Vec<Vec<f64>>> {
    atts.iter()
        .map(|&a| {
            let (w, heads) = tape.attention_weights(a);
            head_average(w, heads)
        })
        .collect()
}

pub fn forward(inputs: &ModelInputs, params: &ModelParameters, cfg: &ModelConfig) -> Result<LayerState> {
    let b = build(inputs, params, cfg, false)?;
    let tape = &b.net.tape;
    Ok(LayerState {
        x: b.x.iter().map(|&v| tape.value(v).clone()).collect(),
        e: b.e.iter().map(|&v| tape.value(v).clone()).collect(),
        semantics: HyperedgeSemantics { h: tape.value(b.h).clone() },
        edge_attention: records(tape, &b.v2e),
        node_attention: records(tape, &b.e2v),
        visit_rows: inputs.visit_rows.clone(),
    })
}

fn logits(net: &mut Net, e: &[Var], visit_rows: &[usize]) -> Var {
    let rows = Rc::new(visit_rows.to_vec());
    let picked: Vec<Var> = e.iter().map(|&el| net.tape.gather_rows(el, rows.clone())).collect();
    let cat = net.tape.concat_cols(&picked);
    net.mlp("cls", cat)
}

/// Per-visit probabilities (`n_visits × n_labels`) from the concatenated
/// hyperedge embeddings of layers `1..=L`. Self-loops are not classified.
pub fn classify(state: &LayerState, params: &ModelParameters, cfg: &ModelConfig) -> Result<Array2<f64>> {
    params.check(cfg)?;
    if state.layers() != cfg.layers {
        return Err(Error::Shape(format!("state has {} layers, config {}", state.layers(), cfg.layers)));
    }
    let mut net = Net::new(params, false);
    let e: Vec<Var> = state.e[1..].iter().map(|m| net.tape.constant(m.clone())).collect();
    let z = logits(&mut net, &e, &state.visit_rows);
    Ok(net.tape.value(z).mapv(sigmoid))
}

pub fn predict(inputs: &ModelInputs, params: &ModelParameters, cfg: &ModelConfig) -> Result<Array2<f64>> {
    classify(&forward(inputs, params, cfg)?, params, cfg)
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(probs: &Array2<f64>, labels: &Array2<f64>) -> f64 {
    assert_eq!(probs.dim(), labels.dim(), "probability and label shapes differ");
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / probs.len().max(1) as f64
}

/// Loss over the visits at positions `rows`, without gradients.
pub fn loss(
    inputs: &ModelInputs,
    params: &ModelParameters,
    cfg: &ModelConfig,
    rows: &[usize],
    targets: &Array2<f64>,
) -> Result<f64> {
    check_targets(inputs, cfg, rows, targets)?;
    let Built { mut net, e, .. } = build(inputs, params, cfg, false)?;
    let z = logits(&mut net, &e[1..], &inputs.visit_rows);
    let l = net.tape.bce_with_logits(z, Rc::new(rows.to_vec()), targets.clone());
    Ok(net.tape.value(l)[[0, 0]])
}

fn check_targets(inputs: &ModelInputs, cfg: &ModelConfig, rows: &[usize], targets: &Array2<f64>) -> Result<()> {
    if targets.dim() != (rows.len(), cfg.task_kind.n_labels()) {
        return Err(Error::Shape(format!(
            "targets {:?} for {} rows and {} labels",
            targets.dim(),
            rows.len(),
            cfg.task_kind.n_labels()
        )));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= inputs.visit_rows.len()) {
        return Err(Error::Shape(format!("visit position {bad} out of range")));
    }
    Ok(())
}

/// Forward and backward pass with the loss taken over the visits at
/// positions `rows` (indices into [`ModelInputs::visit_ids`]); every edge
/// still propagates messages.
pub fn evaluate(
    inputs: &ModelInputs,
    params: &ModelParameters,
    cfg: &ModelConfig,
    rows: &[usize],
    targets: &Array2<f64>,
) -> Result<Evaluation> {
    check_targets(inputs, cfg, rows, targets)?;
    let Built { mut net, e, .. } = build(inputs, params, cfg, true)?;
    let z = logits(&mut net, &e[1..], &inputs.visit_rows);
    let loss = net.tape.bce_with_logits(z, Rc::new(rows.to_vec()), targets.clone());
    let value = net.tape.value(loss)[[0, 0]];
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let probs = net.tape.value(z).mapv(sigmoid);
    let grads_by_node = net.tape.backward(loss);
    let mut grads = params.zeros_like();
    for (name, g) in grads.iter_mut() {
        if let Some(computed) = &grads_by_node[net.vars[name].index()] {
            g.assign(computed);
        }
    }
    Ok(Evaluation { loss: value, grads, probs })
}

fn single_target(
    sources: ArrayView2<f64>,
    query: ArrayView1<f64>,
    params: &ModelParameters,
    cfg: &ModelConfig,
    layer: usize,
    dir: &str,
) -> Result<Attended> {
    params.check(cfg)?;
    if sources.nrows() == 0 {
        return Err(Error::Data("attention over an empty set".into()));
    }
    if !(1..=cfg.layers).contains(&layer) {
        return Err(Error::Config(format!("layer {layer} outside 1..={}", cfg.layers)));
    }
    if sources.ncols() != cfg.hidden || query.len() != cfg.hidden {
        return Err(Error::Shape(format!("attention inputs must be {} wide", cfg.hidden)));
    }
    let mut net = Net::new(params, false);
    let t = net.tape.constant(query.to_owned().insert_axis(Axis(0)));
    let s = net.tape.constant(sources.to_owned());
    let groups: Groups = Rc::new(vec![(0..sources.nrows()).collect()]);
    let (att, out) = net.attend(layer, dir, t, s, groups, cfg.heads);
    let (w, heads) = net.tape.attention_weights(att);
    Ok(Attended {
        output: net.tape.value(out).row(0).to_owned(),
        weights: head_average(w, heads).remove(0),
    })
}

/// Hyperedge update from its member node embeddings (rows of `members`),
/// queried by the edge's previous embedding.
pub fn nodes_to_edge(
    members: ArrayView2<f64>,
    query: ArrayView1<f64>,
    params: &ModelParameters,
    cfg: &ModelConfig,
    layer: usize,
) -> Result<Attended> {
    single_target(members, query, params, cfg, layer, "v2e")
}

/// Node update from its incident hyperedge embeddings, queried by the node's
/// previous embedding.
pub fn edges_to_node(
    incident: ArrayView2<f64>,
    query: ArrayView1<f64>,
    params: &ModelParameters,
    cfg: &ModelConfig,
    layer: usize,
) -> Result<Attended> {
    single_target(incident, query, params, cfg, layer, "e2v")
}

/// Fuses an aggregated hyperedge embedding with its semantics row.
pub fn fused_edge_update(
    aggregated: ArrayView1<f64>,
    h_row: ArrayView1<f64>,
    params: &ModelParameters,
    cfg: &ModelConfig,
) -> Result<Array1<f64>> {
    params.check(cfg)?;
    if aggregated.len() != cfg.hidden || h_row.len() != cfg.hidden {
        return Err(Error::Shape(format!(
            "fusion inputs are {} and {} wide, expected {}",
            aggregated.len(),
            h_row.len(),
            cfg.hidden
        )));
    }
    let mut net = Net::new(params, false);
    let a = net.tape.constant(aggregated.to_owned().insert_axis(Axis(0)));
    let h = net.tape.constant(h_row.to_owned().insert_axis(Axis(0)));
    let out = net.fuse(a, h);
    Ok(net.tape.value(out).row(0).to_owned())
}
