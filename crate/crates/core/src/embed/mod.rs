//! Structural (random walk + skip-gram) and semantic (text) embeddings.

mod cache;
mod skipgram;
mod text;
mod walk;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;

pub use cache::EmbeddingCache;
pub use skipgram::{train_skipgram, SkipGramConfig};
pub use text::{
    embed_concepts, embed_notes, embed_texts, EmbeddingProvider, FallbackEmbedder, ProviderStats,
    RemoteConfig, TextEmbedder,
};
#[cfg(feature = "remote")]
pub use text::RemoteEmbedder;
pub use walk::{random_walks, structural_embeddings, WalkConfig, WalkSubstrate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Structural,
    Concept,
    Note,
}

impl TableKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TableKind::Structural => "structural",
            TableKind::Concept => "concept",
            TableKind::Note => "note",
        }
    }
}

impl fmt::Display for TableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structural" => Ok(TableKind::Structural),
            "concept" => Ok(TableKind::Concept),
            "note" => Ok(TableKind::Note),
            other => Err(Error::Data(format!("unknown table kind '{other}'"))),
        }
    }
}

/// Keyed rows of equal width. Keys are code ids (structural, concept) or
/// visit ids (note).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    kind: TableKind,
    keys: Vec<String>,
    index: HashMap<String, usize>,
    data: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(kind: TableKind, keys: Vec<String>, data: Array2<f64>) -> Result<Self> {
        if data.nrows() != keys.len() {
            return Err(Error::Shape(format!(
                "{kind} table: {} keys but {} rows",
                keys.len(),
                data.nrows()
            )));
        }
        if data.ncols() == 0 {
            return Err(Error::Shape(format!("{kind} table has zero width")));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{kind} table")));
        }
        let mut index = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if index.insert(k.clone(), i).is_some() {
                return Err(Error::Data(format!("{kind} table: duplicate key '{k}'")));
            }
        }
        Ok(EmbeddingTable { kind, keys, index, data })
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn get(&self, key: &str) -> Option<ArrayView1<'_, f64>> {
        self.index.get(key).map(|&i| self.data.row(i))
    }

    /// Factor that brings the mean norm of the nonzero rows to `sqrt(dim)`,
    /// i.e. unit mean square per entry. 1 for an all-zero table.
    pub fn input_scale(&self) -> f64 {
        let norms: Vec<f64> = self
            .data
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .filter(|&n| n > 0.0)
            .collect();
        if norms.is_empty() {
            return 1.0;
        }
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        (self.dim() as f64).sqrt() / mean
    }

    /// Rows for `keys`, in that order.
    pub fn gather<S: AsRef<str>>(&self, keys: &[S]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((keys.len(), self.dim()));
        for (r, k) in keys.iter().enumerate() {
            let row = self.get(k.as_ref()).ok_or_else(|| {
                Error::Data(format!("{} table has no row for '{}'", self.kind, k.as_ref()))
            })?;
            out.row_mut(r).assign(&row);
        }
        Ok(out)
    }

    /// `#kind<TAB>dim` header, then `key<TAB>comma-separated floats` per row.
    pub fn to_text(&self) -> String {
        let mut out = format!("#{}\t{}\n", self.kind, self.dim());
        for (k, row) in self.keys.iter().zip(self.data.rows()) {
            out.push_str(k);
            out.push('\t');
            out.push_str(&format_floats(row.iter().copied()));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty table file".into()))?;
        let (kind, dim) = header
            .strip_prefix('#')
            .and_then(|h| h.split_once('\t'))
            .ok_or_else(|| Error::Data(format!("bad table header '{header}'")))?;
        let kind: TableKind = kind.parse()?;
        let dim: usize = dim
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("bad table dim '{dim}'")))?;
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let (key, floats) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("table row {}: missing tab", i + 2)))?;
            let row = parse_floats(floats)
                .ok_or_else(|| Error::Data(format!("table row {}: bad float", i + 2)))?;
            if row.len() != dim {
                return Err(Error::Shape(format!("table row {}: width {} != {dim}", i + 2, row.len())));
            }
            keys.push(key.to_string());
            values.extend(row);
        }
        let data = Array2::from_shape_vec((keys.len(), dim), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        EmbeddingTable::new(kind, keys, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

pub(crate) fn format_floats(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse_floats(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|x| x.trim().parse::<f64>().ok()).collect()
}

/// The three tables the model consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub structural: EmbeddingTable,
    pub concept: EmbeddingTable,
    pub note: EmbeddingTable,
}

/// Structural vectors from `h`, concept vectors for every registered code and
/// note vectors for every visit.
pub fn embed_dataset<S: AsRef<str>>(
    ds: &Dataset,
    h: &Hypergraph,
    walk: &WalkConfig,
    skipgram: &SkipGramConfig,
    provider: &EmbeddingProvider,
    blocked_sections: &[S],
) -> Result<EmbeddingSet> {
    Ok(EmbeddingSet {
        structural: structural_embeddings(h, walk, skipgram)?,
        concept: embed_concepts(provider, ds)?,
        note: embed_notes(provider, ds, blocked_sections)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn gather_reports_missing_keys() {
        let t = EmbeddingTable::new(TableKind::Concept, vec!["a".into(), "b".into()], array![[1.0, 2.0], [3.0, 4.0]])
            .unwrap();
        assert_eq!(t.gather(&["b", "a"]).unwrap(), array![[3.0, 4.0], [1.0, 2.0]]);
        assert!(t.gather(&["z"]).unwrap_err().to_string().contains("'z'"));
    }

    #[test]
    fn rejects_bad_tables() {
        let dup = EmbeddingTable::new(TableKind::Note, vec!["a".into(), "a".into()], Array2::zeros((2, 2)));
        assert!(dup.is_err());
        let nan = EmbeddingTable::new(TableKind::Note, vec!["a".into()], array![[f64::NAN]]);
        assert!(nan.is_err());
        let zero = EmbeddingTable::new(TableKind::Note, vec!["a".into()], Array2::zeros((1, 0)));
        assert!(zero.is_err());
    }

    #[test]
    fn input_scale_targets_unit_mean_square() {
        let t = EmbeddingTable::new(TableKind::Note, vec!["a".into(), "b".into(), "z".into()], array![[3.0, 4.0], [0.0, 1.0], [0.0, 0.0]])
            .unwrap();
        assert!((t.input_scale() - 2f64.sqrt() / 3.0).abs() < 1e-15);
        let zero = EmbeddingTable::new(TableKind::Note, vec!["a".into()], Array2::zeros((1, 3))).unwrap();
        assert_eq!(zero.input_scale(), 1.0);
    }

    #[test]
    fn header_records_dim() {
        let t = EmbeddingTable::new(TableKind::Structural, vec!["c1".into()], Array2::zeros((1, 64))).unwrap();
        assert!(t.to_text().starts_with("#structural\t64\n"));
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(values in proptest::collection::vec(-1e6f64..1e6, 1..40), dim in 1usize..5) {
            let rows = values.len() / dim;
            prop_assume!(rows > 0);
            let data = Array2::from_shape_vec((rows, dim), values[..rows * dim].to_vec()).unwrap();
            let keys = (0..rows).map(|i| format!("k{i}")).collect();
            let t = EmbeddingTable::new(TableKind::Note, keys, data).unwrap();
            prop_assert_eq!(EmbeddingTable::from_text(&t.to_text()).unwrap(), t);
        }
    }
}
