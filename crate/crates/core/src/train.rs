//! Full-batch AdamW training with validation-AUROC model selection, seed
//! suites, ablation variants and the hyperparameter grid.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{auroc, compute_metrics, Metrics, DEFAULT_THRESHOLD};
use crate::hypergraph::Hypergraph;
use crate::model::{evaluate, predict, ModelConfig, ModelInputs, ModelParameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seeds: usize,
    /// Seeds run are `base_seed..base_seed + seeds`.
    pub base_seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Concurrent runs in a suite.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            max_epochs: 200,
            patience: 20,
            seeds: 5,
            base_seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.beta1, self.beta2, self.epsilon];
        if positive.iter().any(|&x| !(x > 0.0 && x.is_finite())) || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate, betas and epsilon must be positive".into()));
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("betas must be below 1".into()));
        }
        if self.max_epochs == 0 || self.seeds == 0 || self.workers == 0 {
            return Err(Error::Config("max_epochs, seeds and workers must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.base_seed + i).collect()
    }
}

/// Which semantic pathways a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    Full,
    NoConcept,
    NoNote,
    /// Both pathways removed.
    Backbone,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoConcept, Variant::NoNote, Variant::Backbone];
    pub const ABLATION: [Variant; 3] = [Variant::Full, Variant::NoConcept, Variant::NoNote];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoConcept => "w/o-concept",
            Variant::NoNote => "w/o-note",
            Variant::Backbone => "backbone",
        }
    }

    /// File-system friendly name.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoConcept => "no-concept",
            Variant::NoNote => "no-note",
            Variant::Backbone => "backbone",
        }
    }

    pub fn apply(self, cfg: &ModelConfig) -> ModelConfig {
        let (concept, note) = match self {
            Variant::Full => (true, true),
            Variant::NoConcept => (false, true),
            Variant::NoNote => (true, false),
            Variant::Backbone => (false, false),
        };
        ModelConfig { use_concept_semantics: concept, use_note_semantics: note, ..cfg.clone() }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.as_str().to_string()
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s || v.slug() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// Model inputs plus aligned labels and split positions.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub inputs: ModelInputs,
    /// `visits × labels`, rows aligned with `inputs.visit_ids()`.
    pub labels: Array2<f64>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl TrainingData {
    pub fn new(ds: &Dataset, inputs: ModelInputs) -> Result<Self> {
        if !ds.is_split() {
            return Err(Error::Data("dataset has no train/val/test split".into()));
        }
        let by_id: HashMap<&str, usize> =
            ds.visits().iter().enumerate().map(|(i, v)| (v.visit_id.as_str(), i)).collect();
        let k = ds.task_kind().n_labels();
        let mut labels = Array2::zeros((inputs.visit_ids().len(), k));
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (pos, id) in inputs.visit_ids().iter().enumerate() {
            let &vi = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Data(format!("visit '{id}' is not in the dataset")))?;
            for (c, &y) in ds.visits()[vi].label.iter().enumerate() {
                labels[[pos, c]] = if y { 1.0 } else { 0.0 };
            }
            match ds.split_of(id) {
                Some(Split::Train) => train.push(pos),
                Some(Split::Val) => val.push(pos),
                Some(Split::Test) => test.push(pos),
                None => unreachable!("split covers every visit"),
            }
        }
        if train.is_empty() || val.is_empty() || test.is_empty() {
            return Err(Error::Data("every split needs at least one visit".into()));
        }
        Ok(TrainingData { inputs, labels, train, val, test })
    }

    pub fn from_tables(
        ds: &Dataset,
        h: &Hypergraph,
        structural: &EmbeddingTable,
        concept: &EmbeddingTable,
        notes: &EmbeddingTable,
    ) -> Result<Self> {
        Self::new(ds, ModelInputs::from_hypergraph(h, structural, concept, notes)?)
    }

    pub fn rows(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn targets(&self, split: Split) -> Array2<f64> {
        self.labels.select(Axis(0), self.rows(split))
    }

    pub fn n_labels(&self) -> usize {
        self.labels.ncols()
    }
}

/// AdamW with decoupled weight decay applied to every tensor.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: ModelParameters,
    v: ModelParameters,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, like: &ModelParameters) -> Self {
        let mut zeros = like.clone();
        zeros.iter_mut().for_each(|(_, t)| t.fill(0.0));
        AdamW {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &ModelParameters) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
        let shrink = 1.0 - lr * self.weight_decay;
        let names: Vec<String> = params.names().map(String::from).collect();
        for name in names {
            let g = grads.get(&name);
            let m = self.m.get_mut(&name);
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| *m = b1 * *m + (1.0 - b1) * g);
            let v = self.v.get_mut(&name);
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let (m, v) = (self.m.get(&name), self.v.get(&name));
            ndarray::Zip::from(params.get_mut(&name)).and(m).and(v).for_each(|p, &m, &v| {
                *p = *p * shrink - lr * (m / c1) / ((v / c2).sqrt() + eps);
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean validation AUROC; 0.5 when undefined.
    pub val_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the restored parameters.
    pub selected_epoch: usize,
    pub val: Metrics,
    pub test: Metrics,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    /// Line records `epoch\tsplit\tmetric\tvalue`.
    pub fn log_lines(&self) -> String {
        let mut out = String::from("epoch\tsplit\tmetric\tvalue\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{}\ttrain\tloss\t{}", e.epoch, e.train_loss);
            let _ = writeln!(out, "{}\tval\tAUROC\t{}", e.epoch, e.val_auroc);
        }
        let sel = self.selected_epoch;
        for (split, m) in [("val", &self.val), ("test", &self.test)] {
            let _ = writeln!(out, "{sel}\t{split}\tACC\t{}", m.accuracy);
            let _ = writeln!(out, "{sel}\t{split}\tAUROC\t{}", fmt_opt(m.auroc));
            let _ = writeln!(out, "{sel}\t{split}\tAUPR\t{}", fmt_opt(m.aupr));
            let _ = writeln!(out, "{sel}\t{split}\tF1\t{}", m.macro_f1);
        }
        out
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

fn parse_opt(s: &str) -> Option<Option<f64>> {
    if s == "n/a" {
        Some(None)
    } else {
        s.parse().ok().map(Some)
    }
}

fn mean_auroc(probs: &Array2<f64>, labels: &Array2<f64>) -> f64 {
    let vals: Vec<f64> = (0..probs.ncols())
        .filter_map(|c| {
            let p = probs.column(c).to_vec();
            let y: Vec<bool> = labels.column(c).iter().map(|&v| v >= 0.5).collect();
            auroc(&p, &y).ok()
        })
        .collect();
    if vals.is_empty() {
        0.5
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Wall-clock timer; reads zero where the platform has no clock.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn secs(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

/// Trains one model. Loss uses training visits only; the returned parameters
/// are those of the epoch with the highest validation AUROC (earliest on
/// ties).
pub fn train_one(
    data: &TrainingData,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelParameters, RunRecord)> {
    train_cfg.validate()?;
    if data.n_labels() != model_cfg.task_kind.n_labels() {
        return Err(Error::Config(format!(
            "model predicts {} labels but the data has {}",
            model_cfg.task_kind.n_labels(),
            data.n_labels()
        )));
    }
    let started = Stopwatch::start();
    let mut params = ModelParameters::for_inputs(model_cfg, &data.inputs, seed)?;
    let mut opt = AdamW::new(train_cfg, &params);
    let train_targets = data.targets(Split::Train);
    let val_targets = data.targets(Split::Val);

    let mut epochs = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    let mut wait = 0;
    for epoch in 0..train_cfg.max_epochs {
        let ev = match evaluate(&data.inputs, &params, model_cfg, &data.train, &train_targets) {
            Ok(ev) => ev,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        let val_auroc = mean_auroc(&ev.probs.select(Axis(0), &data.val), &val_targets);
        log::debug!("seed {seed} epoch {epoch}: loss {:.6} val AUROC {val_auroc:.4}", ev.loss);
        epochs.push(EpochRecord { epoch, train_loss: ev.loss, val_auroc });
        if val_auroc > best.0 {
            best = (val_auroc, epoch, params.clone());
            wait = 0;
        } else {
            wait += 1;
            if wait > train_cfg.patience {
                break;
            }
        }
        opt.step(&mut params, &ev.grads);
        if params.iter().any(|(_, t)| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::Diverged { epoch, loss: ev.loss });
        }
    }
    let (_, selected_epoch, params) = best;
    let probs = predict(&data.inputs, &params, model_cfg)?;
    let split_metrics = |split: Split| {
        let rows = data.rows(split);
        compute_metrics(probs.select(Axis(0), rows).view(), data.targets(split).view(), DEFAULT_THRESHOLD)
    };
    let record = RunRecord {
        variant: String::new(),
        seed,
        epochs,
        selected_epoch,
        val: split_metrics(Split::Val)?,
        test: split_metrics(Split::Test)?,
        wall_clock_secs: started.secs(),
    };
    Ok((params, record))
}

/// One trained run of a suite.
#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub variant: Variant,
    pub config: ModelConfig,
    pub params: ModelParameters,
    pub record: RunRecord,
}

/// Runs every `variant × seed` combination. Results come back in
/// variant-major, seed-minor order regardless of `train_cfg.workers`.
pub fn run_suite(
    data: &TrainingData,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    variants: &[Variant],
) -> Result<Vec<SuiteRun>> {
    train_cfg.validate()?;
    let jobs: Vec<(Variant, u64)> =
        variants.iter().flat_map(|&v| train_cfg.seed_list().into_iter().map(move |s| (v, s))).collect();
    let run = |&(variant, seed): &(Variant, u64)| -> Result<SuiteRun> {
        let config = variant.apply(model_cfg);
        let (params, mut record) = train_one(data, &config, train_cfg, seed)?;
        record.variant = variant.as_str().to_string();
        log::info!(
            "{variant} seed {seed}: test AUROC {} after {} epochs ({:.1}s)",
            fmt_opt(record.test.auroc),
            record.epochs.len(),
            record.wall_clock_secs
        );
        Ok(SuiteRun { variant, config, params, record })
    };
    if train_cfg.workers <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(run).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SuiteRun>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..train_cfg.workers.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let out = run(&jobs[i]);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Groups test metrics by variant, in first-seen order.
pub fn test_metrics_by_variant(records: &[RunRecord]) -> Vec<(String, Vec<Metrics>)> {
    let mut out: Vec<(String, Vec<Metrics>)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|(v, _)| *v == r.variant) {
            Some((_, ms)) => ms.push(r.test),
            None => out.push((r.variant.clone(), vec![r.test])),
        }
    }
    out
}

const SUMMARY_HEADER: &str = "variant\tseed\tselected_epoch\tACC\tAUROC\tAUPR\tF1\tskipped_labels";

/// Suite summary, one line per run with its test metrics. Wall-clock time is
/// left out so the file is reproducible.
pub fn write_summary(records: &[RunRecord]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in records {
        let m = &r.test;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.variant,
            r.seed,
            r.selected_epoch,
            m.accuracy,
            fmt_opt(m.auroc),
            fmt_opt(m.aupr),
            m.macro_f1,
            m.skipped_labels
        );
    }
    out
}

/// Parses [`write_summary`] output into per-variant test metrics.
pub fn read_summary(text: &str) -> Result<Vec<(String, Vec<Metrics>)>> {
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(Error::Data("summary: unexpected header".into()));
    }
    let mut out: Vec<(String, Vec<Metrics>)> = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let bad = || Error::Data(format!("summary line {}: malformed record", i + 2));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(bad());
        }
        let m = Metrics {
            accuracy: f[3].parse().map_err(|_| bad())?,
            auroc: parse_opt(f[4]).ok_or_else(bad)?,
            aupr: parse_opt(f[5]).ok_or_else(bad)?,
            macro_f1: f[6].parse().map_err(|_| bad())?,
            skipped_labels: f[7].parse().map_err(|_| bad())?,
        };
        match out.iter_mut().find(|(v, _)| v == f[0]) {
            Some((_, ms)) => ms.push(m),
            None => out.push((f[0].to_string(), vec![m])),
        }
    }
    Ok(out)
}

/// The swept hyperparameters: hidden width × depth, and the
/// structural:semantic embedding width ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub hidden: Vec<usize>,
    pub layers: Vec<usize>,
    pub ratios: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid { hidden: vec![24, 48, 72, 96], layers: vec![1, 2, 3, 4], ratios: vec![0.5, 0.67, 1.0, 1.5, 2.0] }
    }
}

/// `d1 = round(ratio × d2)`.
pub fn structural_dim(ratio: f64, d2: usize) -> Result<usize> {
    let d1 = (ratio * d2 as f64).round();
    if !(d1 >= 1.0) {
        return Err(Error::Config(format!("ratio {ratio} with d2={d2} gives no structural dimensions")));
    }
    Ok(d1 as usize)
}

impl HyperGrid {
    /// Model configurations over hidden × layers, hidden-major.
    pub fn model_configs(&self, base: &ModelConfig) -> Vec<ModelConfig> {
        self.hidden
            .iter()
            .flat_map(|&hidden| self.layers.iter().map(move |&layers| ModelConfig { hidden, layers, ..base.clone() }))
            .collect()
    }

    /// `(ratio, d1)` for each ratio.
    pub fn structural_dims(&self, d2: usize) -> Result<Vec<(f64, usize)>> {
        self.ratios.iter().map(|&r| Ok((r, structural_dim(r, d2)?))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub ratio: f64,
    pub d1: usize,
    pub hidden: usize,
    pub layers: usize,
    pub mean_val_auroc: f64,
    pub mean_test_auroc: f64,
    pub records: Vec<RunRecord>,
}

/// Trains every grid point over the configured seeds. `data_for` supplies
/// the training data for a structural width `d1`.
pub fn run_grid(
    grid: &HyperGrid,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    mut data_for: impl FnMut(usize) -> Result<TrainingData>,
) -> Result<Vec<GridResult>> {
    let mut out = Vec::new();
    for (ratio, d1) in grid.structural_dims(base.d2)? {
        let data = data_for(d1)?;
        for cfg in grid.model_configs(&ModelConfig { d1, ..base.clone() }) {
            cfg.validate()?;
            let runs = run_suite(&data, &cfg, train_cfg, &[Variant::Full])?;
            let records: Vec<RunRecord> = runs.into_iter().map(|r| r.record).collect();
            let mean = |f: &dyn Fn(&RunRecord) -> f64| records.iter().map(f).sum::<f64>() / records.len() as f64;
            out.push(GridResult {
                ratio,
                d1,
                hidden: cfg.hidden,
                layers: cfg.layers,
                mean_val_auroc: mean(&|r| r.epochs[r.selected_epoch].val_auroc),
                mean_test_auroc: mean(&|r| r.test.auroc.unwrap_or(0.5)),
                records,
            });
        }
    }
    Ok(out)
}

/// Grid point with the best mean validation AUROC (first on ties).
pub fn best_grid_point(results: &[GridResult]) -> Option<&GridResult> {
    results.iter().fold(None, |best: Option<&GridResult>, r| match best {
        Some(b) if b.mean_val_auroc >= r.mean_val_auroc => Some(b),
        _ => Some(r),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        assert!(TrainConfig { patience: 300, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { seeds: 0, ..Default::default() }.validate().is_err());
        assert_eq!(TrainConfig { base_seed: 10, seeds: 3, ..Default::default() }.seed_list(), vec![10, 11, 12]);
    }

    #[test]
    fn variants_set_flags() {
        let base = ModelConfig::default();
        let b = Variant::Backbone.apply(&base);
        assert!(!b.use_concept_semantics && !b.use_note_semantics);
        let c = Variant::NoConcept.apply(&base);
        assert!(!c.use_concept_semantics && c.use_note_semantics);
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(v.slug().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn grid_enumeration() {
        let g = HyperGrid::default();
        let cfgs = g.model_configs(&ModelConfig::default());
        assert_eq!(cfgs.len(), 16);
        assert!(cfgs.iter().all(|c| c.validate().is_ok()));
        let dims = g.structural_dims(32).unwrap();
        assert_eq!(dims.iter().map(|d| d.1).collect::<Vec<_>>(), vec![16, 21, 32, 48, 64]);
    }

    #[test]
    fn adamw_first_step_moves_by_learning_rate() {
        let cfg = ModelConfig { hidden: 4, layers: 1, heads: 2, d1: 2, d2: 2, ..Default::default() };
        let mut p = ModelParameters::zeros(&cfg).unwrap();
        let mut g = p.clone();
        g.iter_mut().for_each(|(_, t)| t.fill(3.0));
        let mut opt = AdamW::new(&TrainConfig::default(), &p);
        opt.step(&mut p, &g);
        assert!(p.iter().all(|(_, t)| t.iter().all(|&x| (x + 1e-3).abs() < 1e-9)));
    }

    #[test]
    fn summary_round_trip() {
        let m = Metrics { accuracy: 0.75, auroc: Some(1.0 / 3.0), aupr: None, macro_f1: 0.1, skipped_labels: 2 };
        let rec = |variant: &str, seed| RunRecord {
            variant: variant.into(),
            seed,
            epochs: vec![],
            selected_epoch: 0,
            val: m,
            test: m,
            wall_clock_secs: 1.0,
        };
        let text = write_summary(&[rec("full", 0), rec("full", 1), rec("backbone", 0)]);
        let parsed = read_summary(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].1, vec![m, m]);
        assert!(read_summary("nonsense").is_err());
    }
}
