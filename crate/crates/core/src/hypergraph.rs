//! Visit/code hypergraph: codes are nodes, visits are hyperedges, plus one
//! singleton self-loop hyperedge per node.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Visit,
    SelfLoop,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Visit => "visit",
            EdgeKind::SelfLoop => "selfloop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperedge {
    pub edge_id: String,
    /// Sorted node indices.
    pub members: Vec<usize>,
    pub kind: EdgeKind,
    /// Source visit for visit-kind edges.
    pub visit_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypergraph {
    node_ids: Vec<String>,
    edges: Vec<Hyperedge>,
}

fn selfloop_id(code_id: &str) -> String {
    format!("self:{code_id}")
}

impl Hypergraph {
    /// Builds a hypergraph directly from node ids and visit member lists.
    /// Nodes and edges are sorted by id; member lists are deduplicated.
    pub fn from_visits<'a, I>(visits: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a [String])>,
    {
        let visits: BTreeMap<&str, BTreeSet<&str>> = visits
            .into_iter()
            .map(|(id, codes)| (id, codes.iter().map(String::as_str).collect()))
            .collect();
        if let Some((id, _)) = visits.iter().find(|(_, c)| c.is_empty()) {
            return Err(Error::Data(format!("empty visit '{id}'")));
        }
        let node_ids: Vec<String> = visits
            .values()
            .flatten()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(String::from)
            .collect();
        let index: HashMap<&str, usize> =
            node_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let edges = visits
            .iter()
            .map(|(id, codes)| {
                let mut members: Vec<usize> = codes.iter().map(|c| index[c]).collect();
                members.sort_unstable();
                Hyperedge {
                    edge_id: id.to_string(),
                    members,
                    kind: EdgeKind::Visit,
                    visit_id: Some(id.to_string()),
                }
            })
            .collect();
        Ok(Hypergraph { node_ids, edges })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn edges(&self) -> &[Hyperedge] {
        &self.edges
    }

    pub fn node_index(&self, code_id: &str) -> Option<usize> {
        self.node_ids.binary_search_by(|n| n.as_str().cmp(code_id)).ok()
    }

    /// Index of the visit-kind edge for `visit_id`.
    pub fn edge_of_visit(&self, visit_id: &str) -> Option<usize> {
        self.edges
            .iter()
            .position(|e| e.kind == EdgeKind::Visit && e.visit_id.as_deref() == Some(visit_id))
    }

    /// Indices of visit-kind edges, in edge order.
    pub fn visit_edges(&self) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == EdgeKind::Visit)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn has_self_loops(&self) -> bool {
        self.edges.iter().any(|e| e.kind == EdgeKind::SelfLoop)
    }

    /// Appends one self-loop per node that lacks one.
    pub fn add_self_loops(&self) -> Hypergraph {
        let mut covered = vec![false; self.n_nodes()];
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::SelfLoop) {
            covered[e.members[0]] = true;
        }
        let mut out = self.clone();
        for (i, id) in self.node_ids.iter().enumerate() {
            if !covered[i] {
                out.edges.push(Hyperedge {
                    edge_id: selfloop_id(id),
                    members: vec![i],
                    kind: EdgeKind::SelfLoop,
                    visit_id: None,
                });
            }
        }
        out
    }

    pub fn incidence(&self) -> Incidence {
        let mut node_edges = vec![Vec::new(); self.n_nodes()];
        let edge_nodes: Vec<Vec<usize>> = self.edges.iter().map(|e| e.members.clone()).collect();
        for (ei, members) in edge_nodes.iter().enumerate() {
            for &v in members {
                node_edges[v].push(ei);
            }
        }
        Incidence { node_edges, edge_nodes }
    }

    /// Weighted co-occurrence graph: every pair inside a visit hyperedge gains
    /// weight 1. Self-loops contribute nothing.
    pub fn clique_expansion(&self) -> WeightedGraph {
        let mut weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::Visit) {
            for (a, &i) in e.members.iter().enumerate() {
                for &j in &e.members[a + 1..] {
                    *weights.entry((i, j)).or_default() += 1.0;
                }
            }
        }
        WeightedGraph::from_pairs(self.n_nodes(), weights.into_iter().map(|((i, j), w)| (i, j, w)))
    }

    /// Bipartite node/visit graph: vertices `0..n_nodes` are codes, the rest
    /// are visit hyperedges in edge order. Unit weights.
    pub fn incidence_expansion(&self) -> WeightedGraph {
        let visits: Vec<&Hyperedge> = self.edges.iter().filter(|e| e.kind == EdgeKind::Visit).collect();
        let n = self.n_nodes();
        let pairs = visits
            .iter()
            .enumerate()
            .flat_map(|(k, e)| e.members.iter().map(move |&v| (v, n + k, 1.0)));
        WeightedGraph::from_pairs(n + visits.len(), pairs)
    }

    /// Text dump, one edge per line: `edge_id<TAB>kind<TAB>node_id,...`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let members: Vec<&str> = e.members.iter().map(|&i| self.node_ids[i].as_str()).collect();
            let _ = writeln!(out, "{}\t{}\t{}", e.edge_id, e.kind.as_str(), members.join(","));
        }
        out
    }
}

/// One visit-kind hyperedge per visit; nodes are the codes that occur in at
/// least one visit.
pub fn build_hypergraph(ds: &Dataset) -> Result<Hypergraph> {
    Hypergraph::from_visits(ds.visits().iter().map(|v| (v.visit_id.as_str(), v.codes.as_slice())))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Incidence {
    pub node_edges: Vec<Vec<usize>>,
    pub edge_nodes: Vec<Vec<usize>>,
}

/// Undirected weighted graph stored as symmetric adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    /// Builds from `(i, j, w)` pairs; each undirected edge listed once.
    pub fn from_pairs(n_nodes: usize, pairs: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut adjacency = vec![Vec::new(); n_nodes];
        for (i, j, w) in pairs {
            assert!(i != j && i < n_nodes && j < n_nodes, "bad edge ({i}, {j})");
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(j, _)| j);
        }
        WeightedGraph { adjacency }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .map(|p| self.adjacency[i][p].1)
            .unwrap_or(0.0)
    }

    /// Edges with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().filter(move |&&(j, _)| i < j).map(move |&(j, w)| (i, j, w)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hg(visits: &[(&str, &[&str])]) -> Hypergraph {
        let owned: Vec<(String, Vec<String>)> = visits
            .iter()
            .map(|(id, c)| (id.to_string(), c.iter().map(|s| s.to_string()).collect()))
            .collect();
        Hypergraph::from_visits(owned.iter().map(|(id, c)| (id.as_str(), c.as_slice()))).unwrap()
    }

    #[test]
    fn builds_nodes_and_edges() {
        let h = hg(&[("v1", &["A", "B"]), ("v2", &["B", "C"])]);
        assert_eq!(h.n_nodes(), 3);
        assert_eq!(h.n_edges(), 2);
        assert!(h.edges().iter().all(|e| e.members.len() == 2));
        assert_eq!(h.node_index("C"), Some(2));
    }

    #[test]
    fn single_code_visit_is_a_visit_edge() {
        let h = hg(&[("v1", &["A"])]);
        assert_eq!(h.edges()[0].members, vec![0]);
        assert_eq!(h.edges()[0].kind, EdgeKind::Visit);
    }

    #[test]
    fn repeated_codes_are_deduplicated() {
        let h = hg(&[("v1", &["A", "A", "B"])]);
        assert_eq!(h.edges()[0].members, vec![0, 1]);
    }

    #[test]
    fn empty_visit_is_an_error() {
        let empty: Vec<String> = Vec::new();
        assert!(Hypergraph::from_visits([("v1", empty.as_slice())]).is_err());
    }

    #[test]
    fn self_loops_are_idempotent() {
        let h = hg(&[("v1", &["A", "B"]), ("v2", &["B", "C"])]).add_self_loops();
        assert_eq!(h.n_edges(), 5);
        assert_eq!(h.add_self_loops().n_edges(), 5);
        let inc = h.incidence();
        assert!(inc.node_edges.iter().all(|l| l.len() >= 2));
        for (v, list) in inc.node_edges.iter().enumerate() {
            let loops = list.iter().filter(|&&e| h.edges()[e].kind == EdgeKind::SelfLoop).count();
            assert_eq!(loops, 1, "node {v}");
        }
        let empty = Hypergraph::from_visits(std::iter::empty()).unwrap();
        assert_eq!(empty.add_self_loops(), empty);
    }

    #[test]
    fn clique_expansion_weights() {
        let h = hg(&[("v1", &["A", "B", "C"])]);
        let g = h.clique_expansion();
        assert_eq!(g.edges(), vec![(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)]);

        let h = hg(&[("v1", &["A", "B"]), ("v2", &["A", "B"])]).add_self_loops();
        let g = h.clique_expansion();
        assert_eq!(g.weight(0, 1), 2.0);
        assert_eq!(g.weight(1, 0), 2.0);
    }

    #[test]
    fn selfloop_only_node_is_isolated() {
        let h = hg(&[("v1", &["A"]), ("v2", &["B", "C"])]).add_self_loops();
        let g = h.clique_expansion();
        assert!(g.neighbors(0).is_empty());
    }

    #[test]
    fn incidence_expansion_is_bipartite() {
        let h = hg(&[("v1", &["A", "B"]), ("v2", &["B"])]).add_self_loops();
        let g = h.incidence_expansion();
        assert_eq!(g.n_nodes(), 4);
        assert_eq!(g.neighbors(1), &[(2, 1.0), (3, 1.0)]);
    }

    #[test]
    fn dump_format() {
        let h = hg(&[("v1", &["A", "B"])]).add_self_loops();
        assert_eq!(h.dump(), "v1\tvisit\tA,B\nself:A\tselfloop\tA\nself:B\tselfloop\tB\n");
    }

    fn arb_visits() -> impl Strategy<Value = Vec<Vec<String>>> {
        proptest::collection::vec(
            proptest::collection::vec((0..12u8).prop_map(|c| format!("c{c:02}")), 1..6),
            1..50,
        )
    }

    fn build(visits: &[Vec<String>], order: &[usize]) -> Hypergraph {
        let ids: Vec<String> = (0..visits.len()).map(|i| format!("v{i:03}")).collect();
        Hypergraph::from_visits(order.iter().map(|&i| (ids[i].as_str(), visits[i].as_slice()))).unwrap()
    }

    proptest! {
        #[test]
        fn incidence_round_trip(visits in arb_visits()) {
            let order: Vec<usize> = (0..visits.len()).collect();
            let h = build(&visits, &order).add_self_loops();
            let inc = h.incidence();
            for (e, members) in inc.edge_nodes.iter().enumerate() {
                for v in 0..h.n_nodes() {
                    prop_assert_eq!(members.contains(&v), inc.node_edges[v].contains(&e));
                }
            }
            prop_assert_eq!(h.n_edges(), visits.len() + h.n_nodes());
        }

        #[test]
        fn clique_weights_count_shared_visits(visits in arb_visits()) {
            let order: Vec<usize> = (0..visits.len()).collect();
            let h = build(&visits, &order);
            let g = h.clique_expansion();
            for i in 0..h.n_nodes() {
                for j in 0..h.n_nodes() {
                    if i == j { continue; }
                    let (a, b) = (&h.node_ids()[i], &h.node_ids()[j]);
                    let count = visits.iter().filter(|v| v.contains(a) && v.contains(b)).count();
                    prop_assert_eq!(g.weight(i, j), count as f64);
                }
            }
        }

        #[test]
        fn construction_ignores_visit_order(visits in arb_visits(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut order: Vec<usize> = (0..visits.len()).collect();
            let base = build(&visits, &order);
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(build(&visits, &order), base);
        }
    }
}
