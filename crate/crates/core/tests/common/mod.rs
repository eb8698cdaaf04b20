//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use hyperfuse::model::{EdgeSpec, ModelConfig, ModelInputs, ModelParameters, EMBED_CONCEPT, EMBED_STRUCTURAL};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        assert_eq!(a[i].len(), k);
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn affine(x: &Mat, w: &Array2<f64>, b: &Array2<f64>) -> Mat {
    let mut out = matmul(x, &to_mat(w));
    for row in &mut out {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b[[0, j]];
        }
    }
    out
}

fn relu(mut x: Mat) -> Mat {
    for row in &mut x {
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    x
}

fn layer_norm(row: &mut [f64], p: &ModelParameters, l: usize, dir: &str) {
    let gain = p.get(&format!("layer{l}.{dir}.ln_gain"));
    let bias = p.get(&format!("layer{l}.{dir}.ln_bias"));
    let m = row.len() as f64;
    let mean = row.iter().sum::<f64>() / m;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    let sd = (var + 1e-5).sqrt();
    for (c, v) in row.iter_mut().enumerate() {
        *v = (*v - mean) / sd * gain[[0, c]] + bias[[0, c]];
    }
}

fn mlp(x: &Mat, p: &ModelParameters, prefix: &str) -> Mat {
    let g = |s: &str| p.get(&format!("{prefix}.{s}"));
    let hidden = relu(affine(x, g("w1"), g("b1")));
    affine(&hidden, g("w2"), g("b2"))
}

/// One target attending over `sources`; returns the ReLU output and the
/// head-averaged weights in source order.
fn attend_one(query: &[f64], sources: &Mat, p: &ModelParameters, layer: usize, dir: &str, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let g = |s: &str| p.get(&format!("layer{layer}.{dir}.{s}"));
    let q = matmul(&vec![query.to_vec()], &to_mat(g("q"))).remove(0);
    let k = matmul(sources, &to_mat(g("k")));
    let v = matmul(sources, &to_mat(g("v")));
    let d = q.len();
    let dh = d / heads;
    let mut concat = vec![0.0; d];
    let mut avg = vec![0.0; sources.len()];
    for h in 0..heads {
        let lo = h * dh;
        let scores: Vec<f64> = k
            .iter()
            .map(|kr| (lo..lo + dh).map(|c| q[c] * kr[c]).sum::<f64>() / (dh as f64).sqrt())
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            let a = e / z;
            avg[j] += a / heads as f64;
            for c in lo..lo + dh {
                concat[c] += a * v[j][c];
            }
        }
    }
    let out = relu(affine(&vec![concat], g("o"), g("o_bias"))).remove(0);
    (out, avg)
}

/// A hypergraph spelled out as plain rows.
#[derive(Debug, Clone)]
pub struct PlainGraph {
    pub node_ids: Vec<String>,
    pub structural: Mat,
    pub concept: Mat,
    /// `(id, members, note)`; `note` is `None` for self-loops.
    pub edges: Vec<(String, Vec<usize>, Option<Vec<f64>>)>,
}

impl PlainGraph {
    pub fn inputs(&self) -> ModelInputs {
        let arr = |m: &Mat| Array2::from_shape_fn((m.len(), m[0].len()), |(i, j)| m[i][j]);
        let edges = self
            .edges
            .iter()
            .map(|(id, members, note)| EdgeSpec {
                id: id.clone(),
                members: members.clone(),
                note: note.as_ref().map(|n| Array1::from(n.clone())),
            })
            .collect();
        ModelInputs::from_parts(self.node_ids.clone(), arr(&self.structural), arr(&self.concept), edges).unwrap()
    }

    pub fn visit_ids(&self) -> Vec<String> {
        self.edges.iter().filter(|e| e.2.is_some()).map(|e| e.0.clone()).collect()
    }
}

/// Everything the reference forward pass produces.
#[derive(Debug, Clone)]
pub struct OracleOutput {
    pub x: Vec<Mat>,
    pub e: Vec<Mat>,
    pub h: Mat,
    /// `[layer][edge]`, member order.
    pub edge_attention: Vec<Vec<Vec<f64>>>,
    /// `[layer][node]`, incident edges in edge order.
    pub node_attention: Vec<Vec<Vec<f64>>>,
    /// Visit probabilities in edge order, self-loops skipped.
    pub probs: Mat,
}

/// Straight-line forward pass written from the model definition.
pub fn oracle_forward(g: &PlainGraph, p: &ModelParameters, cfg: &ModelConfig) -> OracleOutput {
    let n = g.node_ids.len();
    let d2 = g.concept[0].len();
    let (structural, concept) = if cfg.train_embeddings {
        (to_mat(p.get(EMBED_STRUCTURAL)), to_mat(p.get(EMBED_CONCEPT)))
    } else {
        (g.structural.clone(), g.concept.clone())
    };
    let raw: Mat = (0..n)
        .map(|v| {
            let mut row = structural[v].clone();
            if cfg.use_concept_semantics {
                row.extend(&concept[v]);
            } else {
                row.extend(vec![0.0; d2]);
            }
            row
        })
        .collect();
    let x0 = relu(affine(&raw, p.get("input.w"), p.get("input.b")));
    let pooled: Mat = g
        .edges
        .iter()
        .map(|(_, members, _)| {
            let mut m = vec![0.0; cfg.hidden];
            for &v in members {
                for c in 0..cfg.hidden {
                    m[c] += x0[v][c];
                }
            }
            m.iter().map(|s| s / members.len() as f64).collect()
        })
        .collect();
    let e0 = affine(&pooled, p.get("edge_init.w"), p.get("edge_init.b"));
    let h: Mat = if cfg.use_note_semantics {
        let src: Mat = g
            .edges
            .iter()
            .map(|(_, members, note)| match note {
                Some(n) => n.clone(),
                None if cfg.use_concept_semantics => concept[members[0]].clone(),
                None => vec![0.0; d2],
            })
            .collect();
        mlp(&src, p, "mlp1")
    } else {
        vec![vec![0.0; cfg.hidden]; g.edges.len()]
    };
    let incident: Vec<Vec<usize>> =
        (0..n).map(|v| (0..g.edges.len()).filter(|&e| g.edges[e].1.contains(&v)).collect()).collect();

    let (mut xs, mut es) = (vec![x0], vec![e0]);
    let (mut ea, mut na) = (Vec::new(), Vec::new());
    for l in 1..=cfg.layers {
        let (xp, ep) = (&xs[l - 1], &es[l - 1]);
        let mut el = Vec::new();
        let mut att_e = Vec::new();
        for (ei, (_, members, _)) in g.edges.iter().enumerate() {
            let src: Mat = members.iter().map(|&v| xp[v].clone()).collect();
            let (agg, w) = attend_one(&ep[ei], &src, p, l, "v2e", cfg.heads);
            let mut cat = agg;
            cat.extend(&h[ei]);
            let mut row = mlp(&vec![cat], p, "mlp2").remove(0);
            if cfg.residual {
                for c in 0..cfg.hidden {
                    row[c] += ep[ei][c];
                }
            }
            if cfg.layer_norm {
                layer_norm(&mut row, p, l, "v2e");
            }
            el.push(row);
            att_e.push(w);
        }
        let mut xl = Vec::new();
        let mut att_n = Vec::new();
        for v in 0..n {
            let src: Mat = incident[v].iter().map(|&e| el[e].clone()).collect();
            let (mut row, w) = attend_one(&xp[v], &src, p, l, "e2v", cfg.heads);
            if cfg.residual {
                for c in 0..cfg.hidden {
                    row[c] += xp[v][c];
                }
            }
            if cfg.layer_norm {
                layer_norm(&mut row, p, l, "e2v");
            }
            xl.push(row);
            att_n.push(w);
        }
        es.push(el);
        xs.push(xl);
        ea.push(att_e);
        na.push(att_n);
    }
    let visits: Vec<usize> = (0..g.edges.len()).filter(|&e| g.edges[e].2.is_some()).collect();
    let features: Mat = visits
        .iter()
        .map(|&e| (1..=cfg.layers).flat_map(|l| es[l][e].clone()).collect())
        .collect();
    let probs = mlp(&features, p, "cls")
        .into_iter()
        .map(|r| r.into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect())
        .collect();
    OracleOutput { x: xs, e: es, h, edge_attention: ea, node_attention: na, probs }
}

/// The three-code, two-visit instance: `v1 = {A, B}`, `v2 = {B, C}` plus a
/// self-loop per code, with `d1 = d2 = 4`.
pub fn tiny_graph() -> PlainGraph {
    let s = (0..3).map(|i| (0..4).map(|j| (1.0 + (4 * i + j) as f64).sin() * 0.8).collect()).collect();
    let c = (0..3).map(|i| (0..4).map(|j| (0.5 + (3 * i + 2 * j) as f64).cos() * 0.8).collect()).collect();
    let note = |k: f64| Some((0..4).map(|j| (k + 0.9 * j as f64).sin() * 0.8).collect());
    PlainGraph {
        node_ids: vec!["A".into(), "B".into(), "C".into()],
        structural: s,
        concept: c,
        edges: vec![
            ("v1".into(), vec![0, 1], note(0.3)),
            ("v2".into(), vec![1, 2], note(2.1)),
            ("self:A".into(), vec![0], None),
            ("self:B".into(), vec![1], None),
            ("self:C".into(), vec![2], None),
        ],
    }
}

pub fn max_abs_diff(a: &Mat, b: &Array2<f64>) -> f64 {
    assert_eq!((a.len(), a[0].len()), b.dim());
    a.iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, v)| (v - b[[i, j]]).abs()))
        .fold(0.0, f64::max)
}

/// Random visits (≤ `max_visits`) over up to 15 codes, each code with a
/// self-loop, Gaussian-ish rows of widths `d1` and `d2`.
pub fn random_graph(rng: &mut ChaCha8Rng, max_visits: usize, d1: usize, d2: usize) -> PlainGraph {
    let n = rng.random_range(2..=15);
    let n_visits = rng.random_range(1..=max_visits);
    let row = |rng: &mut ChaCha8Rng, d: usize| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect::<Vec<f64>>();
    let structural = (0..n).map(|_| row(rng, d1)).collect();
    let concept = (0..n).map(|_| row(rng, d2)).collect();
    let mut edges = Vec::new();
    for i in 0..n_visits {
        let size = rng.random_range(1..=n.min(6));
        let mut members: Vec<usize> = (0..n).collect();
        members.shuffle(rng);
        members.truncate(size);
        edges.push((format!("v{i:03}"), members, Some(row(rng, d2))));
    }
    for v in 0..n {
        edges.push((format!("self:n{v}"), vec![v], None));
    }
    PlainGraph { node_ids: (0..n).map(|v| format!("n{v}")).collect(), structural, concept, edges }
}

/// The same hypergraph with nodes, edges and members reordered.
pub fn permuted(g: &PlainGraph, rng: &mut ChaCha8Rng) -> PlainGraph {
    let n = g.node_ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    // order[new] = old
    let mut new_of = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        new_of[old] = new;
    }
    let mut edges: Vec<_> = g
        .edges
        .iter()
        .map(|(id, members, note)| {
            let mut m: Vec<usize> = members.iter().map(|&v| new_of[v]).collect();
            m.shuffle(rng);
            (id.clone(), m, note.clone())
        })
        .collect();
    edges.shuffle(rng);
    PlainGraph {
        node_ids: order.iter().map(|&o| g.node_ids[o].clone()).collect(),
        structural: order.iter().map(|&o| g.structural[o].clone()).collect(),
        concept: order.iter().map(|&o| g.concept[o].clone()).collect(),
        edges,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Brute-force metric definitions.
pub mod metrics {
    pub fn accuracy(p: &[f64], y: &[bool], t: f64) -> f64 {
        let hits = p.iter().zip(y).filter(|(&pi, &yi)| (pi >= t) == yi).count();
        hits as f64 / p.len() as f64
    }

    /// Fraction of positive/negative pairs ordered correctly, ties half.
    pub fn auroc(p: &[f64], y: &[bool]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for i in 0..p.len() {
            for j in 0..p.len() {
                if y[i] && !y[j] {
                    pairs += 1.0;
                    if p[i] > p[j] {
                        num += 1.0;
                    } else if p[i] == p[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    /// `sum_k (R_k - R_{k-1}) P_k` over every distinct score threshold,
    /// with precision and recall recounted from scratch at each threshold.
    pub fn average_precision(p: &[f64], y: &[bool]) -> f64 {
        let n_pos = y.iter().filter(|&&b| b).count() as f64;
        let mut thresholds: Vec<f64> = p.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let (mut ap, mut prev_recall) = (0.0, 0.0);
        for t in thresholds {
            let predicted: Vec<usize> = (0..p.len()).filter(|&i| p[i] >= t).collect();
            let tp = predicted.iter().filter(|&&i| y[i]).count() as f64;
            let recall = tp / n_pos;
            ap += (recall - prev_recall) * tp / predicted.len() as f64;
            prev_recall = recall;
        }
        ap
    }

    /// F1 of one class from counted confusion cells; 0 when the class is
    /// neither predicted nor present.
    fn class_f1(pred: &[bool], truth: &[bool]) -> f64 {
        let tp = pred.iter().zip(truth).filter(|(&a, &b)| a && b).count();
        let fp = pred.iter().zip(truth).filter(|(&a, &b)| a && !b).count();
        let fn_ = pred.iter().zip(truth).filter(|(&a, &b)| !a && b).count();
        if tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    }

    pub fn macro_f1(p: &[f64], y: &[bool], t: f64) -> f64 {
        let pred: Vec<bool> = p.iter().map(|&v| v >= t).collect();
        let not = |v: &[bool]| v.iter().map(|b| !b).collect::<Vec<_>>();
        (class_f1(&pred, y) + class_f1(&not(&pred), &not(y))) / 2.0
    }
}

/// Random scores and labels of length ≤ 50 with both classes present.
/// Scores are drawn from a small grid half the time to force ties.
pub fn random_scores(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.random_range(2..=50);
        let coarse = rng.random_bool(0.5);
        let p: Vec<f64> = (0..n)
            .map(|_| if coarse { rng.random_range(0..5) as f64 / 4.0 } else { rng.random::<f64>() })
            .collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if y.iter().any(|&b| b) && y.iter().any(|&b| !b) {
            return (p, y);
        }
    }
}
