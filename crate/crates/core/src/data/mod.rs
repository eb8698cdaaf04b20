//! EHR-style datasets: a code registry, visits with optional notes, labels and
//! train/validation/test assignments.

mod io;
mod notes;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, write_dataset, DatasetFiles};
pub use notes::{filter_note_sections, DEFAULT_BLOCKED_SECTIONS};
pub use synth::{generate_synthetic_dataset, PlantedSignal, SignalSpec};

/// Number of conditions in the multi-label phenotyping task.
pub const MULTILABEL_ARITY: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Binary,
    #[serde(rename = "multilabel-25")]
    Multilabel25,
}

impl TaskKind {
    pub fn n_labels(self) -> usize {
        match self {
            TaskKind::Binary => 1,
            TaskKind::Multilabel25 => MULTILABEL_ARITY,
        }
    }

    pub fn from_arity(n: usize) -> Option<Self> {
        match n {
            1 => Some(TaskKind::Binary),
            MULTILABEL_ARITY => Some(TaskKind::Multilabel25),
            _ => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Binary => f.write_str("binary"),
            TaskKind::Multilabel25 => f.write_str("multilabel-25"),
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(TaskKind::Binary),
            "multilabel-25" | "multilabel" => Ok(TaskKind::Multilabel25),
            other => Err(Error::Config(format!("unknown task kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicalCode {
    pub code_id: String,
    pub system: String,
    pub concept_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub visit_id: String,
    pub codes: Vec<String>,
    /// Empty when the visit has no note.
    pub note_text: String,
    /// One entry for binary tasks, 25 for the phenotyping task.
    pub label: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SplitStrategy {
    #[default]
    Uniform,
    /// Spreads positives (any label set) evenly over the three splits.
    Stratified,
}

/// Code registry plus visits. Construct with [`Dataset::new`], which checks
/// every cross-reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    codes: Vec<MedicalCode>,
    code_index: HashMap<String, usize>,
    visits: Vec<VisitRecord>,
    task_kind: TaskKind,
    splits: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn new(codes: Vec<MedicalCode>, visits: Vec<VisitRecord>, task_kind: TaskKind) -> Result<Self> {
        let mut code_index = HashMap::with_capacity(codes.len());
        for (i, c) in codes.iter().enumerate() {
            if c.concept_name.trim().is_empty() {
                return Err(Error::Data(format!("code '{}' has an empty concept name", c.code_id)));
            }
            if code_index.insert(c.code_id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate code_id '{}'", c.code_id)));
            }
        }
        let mut seen = HashMap::with_capacity(visits.len());
        for v in &visits {
            if seen.insert(v.visit_id.as_str(), ()).is_some() {
                return Err(Error::Data(format!("duplicate visit_id '{}'", v.visit_id)));
            }
            if v.codes.is_empty() {
                return Err(Error::Data(format!("empty visit '{}'", v.visit_id)));
            }
            if let Some(bad) = v.codes.iter().find(|c| !code_index.contains_key(c.as_str())) {
                return Err(Error::Data(format!(
                    "visit '{}' references unknown code '{bad}'",
                    v.visit_id
                )));
            }
            if v.label.len() != task_kind.n_labels() {
                return Err(Error::Data(format!(
                    "visit '{}' has {} label(s), task {task_kind} expects {}",
                    v.visit_id,
                    v.label.len(),
                    task_kind.n_labels()
                )));
            }
        }
        Ok(Dataset {
            codes,
            code_index,
            visits,
            task_kind,
            splits: BTreeMap::new(),
        })
    }

    pub fn codes(&self) -> &[MedicalCode] {
        &self.codes
    }

    pub fn visits(&self) -> &[VisitRecord] {
        &self.visits
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn code(&self, code_id: &str) -> Option<&MedicalCode> {
        self.code_index.get(code_id).map(|&i| &self.codes[i])
    }

    /// Position of a code in the registry.
    pub fn code_rank(&self, code_id: &str) -> Option<usize> {
        self.code_index.get(code_id).copied()
    }

    pub fn visit(&self, visit_id: &str) -> Option<&VisitRecord> {
        self.visits.iter().find(|v| v.visit_id == visit_id)
    }

    pub fn splits(&self) -> &BTreeMap<String, Split> {
        &self.splits
    }

    pub fn split_of(&self, visit_id: &str) -> Option<Split> {
        self.splits.get(visit_id).copied()
    }

    pub fn is_split(&self) -> bool {
        !self.visits.is_empty() && self.splits.len() == self.visits.len()
    }

    /// Visit ids assigned to `split`, in visit order.
    pub fn split_ids(&self, split: Split) -> Vec<&str> {
        self.visits
            .iter()
            .filter(|v| self.split_of(&v.visit_id) == Some(split))
            .map(|v| v.visit_id.as_str())
            .collect()
    }

    /// Replaces every note with its textualized visit. For datasets that ship
    /// without natural notes.
    pub fn textualize_notes(&mut self) -> Result<()> {
        let texts = self
            .visits
            .iter()
            .map(|v| textualize_visit(v, self))
            .collect::<Result<Vec<_>>>()?;
        for (v, t) in self.visits.iter_mut().zip(texts) {
            v.note_text = t;
        }
        Ok(())
    }

    pub fn with_splits(mut self, splits: BTreeMap<String, Split>) -> Result<Self> {
        if splits.len() != self.visits.len()
            || self.visits.iter().any(|v| !splits.contains_key(&v.visit_id))
        {
            return Err(Error::Data("split assignment must cover every visit exactly once".into()));
        }
        self.splits = splits;
        Ok(self)
    }
}

/// Split sizes `(train, val, test)` for `n` visits: floor for val and test,
/// remainder to train.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n / 10;
    let test = n / 5;
    (n - val - test, val, test)
}

pub fn split_dataset(ds: Dataset, seed: u64) -> Result<Dataset> {
    split_dataset_with(ds, seed, SplitStrategy::Uniform)
}

pub fn split_dataset_with(ds: Dataset, seed: u64, strategy: SplitStrategy) -> Result<Dataset> {
    let n = ds.visits.len();
    if n < 10 {
        return Err(Error::Data(format!(
            "need at least 10 labeled visits to split, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = match strategy {
        SplitStrategy::Uniform => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx
        }
        SplitStrategy::Stratified => {
            let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| ds.visits[i].label.iter().any(|&b| b));
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            // Merge the two strata by fractional rank so each split receives
            // roughly the global class proportions.
            let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
            for (stratum, members) in [&pos, &neg].into_iter().enumerate() {
                let m = members.len() as f64;
                keyed.extend(
                    members
                        .iter()
                        .enumerate()
                        .map(|(r, &i)| ((r as f64 + 0.5) / m, stratum, i)),
                );
            }
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().map(|(_, _, i)| i).collect()
        }
    };
    let (_, n_val, n_test) = split_sizes(n);
    let mut splits = BTreeMap::new();
    for (rank, &i) in order.iter().enumerate() {
        let s = if rank < n_val {
            Split::Val
        } else if rank < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        };
        splits.insert(ds.visits[i].visit_id.clone(), s);
    }
    ds.with_splits(splits)
}

/// Renders a visit as one sentence listing its concept names in registry
/// order, e.g. `Patient visit with: hypertension; metformin`.
pub fn textualize_visit(visit: &VisitRecord, ds: &Dataset) -> Result<String> {
    let mut ranked = Vec::with_capacity(visit.codes.len());
    for c in &visit.codes {
        let rank = ds.code_rank(c).ok_or_else(|| {
            Error::Data(format!("visit '{}' references unknown code '{c}'", visit.visit_id))
        })?;
        ranked.push(rank);
    }
    ranked.sort_unstable();
    ranked.dedup();
    let names: Vec<&str> = ranked.iter().map(|&r| ds.codes[r].concept_name.as_str()).collect();
    Ok(format!("Patient visit with: {}", names.join("; ")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(id: &str, name: &str) -> MedicalCode {
        MedicalCode {
            code_id: id.into(),
            system: "TEST".into(),
            concept_name: name.into(),
        }
    }

    fn visit(id: &str, codes: &[&str], y: bool) -> VisitRecord {
        VisitRecord {
            visit_id: id.into(),
            codes: codes.iter().map(|s| s.to_string()).collect(),
            note_text: String::new(),
            label: vec![y],
        }
    }

    fn toy(n: usize) -> Dataset {
        let codes = vec![code("A", "alpha"), code("B", "beta"), code("C", "gamma")];
        let visits = (0..n)
            .map(|i| visit(&format!("v{i:03}"), &["A", "B"], i % 3 == 0))
            .collect();
        Dataset::new(codes, visits, TaskKind::Binary).unwrap()
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        assert_eq!(split_sizes(100), (70, 10, 20));
        assert_eq!(split_sizes(10), (7, 1, 2));
        assert_eq!(split_sizes(19), (15, 1, 3));
        assert_eq!(split_sizes(2000), (1400, 200, 400));
    }

    #[test]
    fn split_hundred_visits() {
        let ds = split_dataset(toy(100), 0).unwrap();
        assert_eq!(ds.split_ids(Split::Train).len(), 70);
        assert_eq!(ds.split_ids(Split::Val).len(), 10);
        assert_eq!(ds.split_ids(Split::Test).len(), 20);
    }

    #[test]
    fn split_ten_visits() {
        let ds = split_dataset(toy(10), 3).unwrap();
        assert_eq!(ds.split_ids(Split::Train).len(), 7);
        assert_eq!(ds.split_ids(Split::Val).len(), 1);
        assert_eq!(ds.split_ids(Split::Test).len(), 2);
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_dataset(toy(57), 11).unwrap();
        let b = split_dataset(toy(57), 11).unwrap();
        assert_eq!(a.splits(), b.splits());
        let c = split_dataset(toy(57), 12).unwrap();
        assert_ne!(a.splits(), c.splits());
    }

    #[test]
    fn split_rejects_tiny_dataset() {
        assert!(split_dataset(toy(9), 0).is_err());
    }

    #[test]
    fn stratified_split_keeps_sizes_and_spreads_positives() {
        let ds = split_dataset_with(toy(300), 5, SplitStrategy::Stratified).unwrap();
        assert_eq!(ds.split_ids(Split::Val).len(), 30);
        assert_eq!(ds.split_ids(Split::Test).len(), 60);
        let pos_in = |s| {
            ds.split_ids(s)
                .iter()
                .filter(|id| ds.visit(id).unwrap().label[0])
                .count()
        };
        assert!((pos_in(Split::Val) as i64 - 10).abs() <= 1);
        assert!((pos_in(Split::Test) as i64 - 20).abs() <= 1);
    }

    #[test]
    fn textualize_lists_names_in_registry_order() {
        let codes = vec![code("htn", "hypertension"), code("met", "metformin")];
        let v = visit("v1", &["met", "htn"], true);
        let ds = Dataset::new(codes, vec![v.clone()], TaskKind::Binary).unwrap();
        let t = textualize_visit(&v, &ds).unwrap();
        assert_eq!(t, "Patient visit with: hypertension; metformin");
        assert_eq!(t, textualize_visit(&v, &ds).unwrap());

        let single = visit("v2", &["met"], false);
        assert_eq!(textualize_visit(&single, &ds).unwrap(), "Patient visit with: metformin");
    }

    #[test]
    fn dataset_rejects_bad_references() {
        let codes = vec![code("A", "alpha")];
        let err = Dataset::new(codes.clone(), vec![visit("v1", &["Z"], true)], TaskKind::Binary)
            .unwrap_err();
        assert!(err.to_string().contains("unknown code 'Z'"));
        let err = Dataset::new(codes.clone(), vec![visit("v1", &[], true)], TaskKind::Binary)
            .unwrap_err();
        assert!(err.to_string().contains("empty visit"));
        let err = Dataset::new(codes, vec![visit("v1", &["A"], true)], TaskKind::Multilabel25)
            .unwrap_err();
        assert!(err.to_string().contains("expects 25"));
    }
}
