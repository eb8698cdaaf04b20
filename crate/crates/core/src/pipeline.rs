//! Config-driven experiment stages over a fixed output layout:
//!
//! ```text
//! <output_dir>/
//!   data/{records,codes,notes}.tsv
//!   embeddings/{structural,concept,note}.tsv, cache.tsv
//!   runs/<variant>/seed<k>/{checkpoint.json,log.tsv}
//!   summary.tsv
//!   report.txt, report.tsv
//!   explain/<visit>.txt
//!   grid.tsv
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::data::{
    filter_note_sections, generate_synthetic_dataset, load_dataset, split_dataset_with, write_dataset, Dataset,
    DatasetFiles, SignalSpec, Split, SplitStrategy, TaskKind, DEFAULT_BLOCKED_SECTIONS,
};
use crate::embed::{
    embed_concepts, embed_notes, structural_embeddings, EmbeddingCache, EmbeddingProvider, EmbeddingSet,
    EmbeddingTable, FallbackEmbedder, ProviderStats, RemoteConfig, SkipGramConfig, TableKind, WalkConfig,
};
use crate::error::{Error, Result};
use crate::eval::{aggregate, compute_metrics, Metrics, MetricsReport, DEFAULT_THRESHOLD};
use crate::hypergraph::{build_hypergraph, Hypergraph};
use crate::interpret::{compare_variants, node_importance, LayerChoice, NodeImportanceReport, VariantComparison};
use crate::model::{forward, predict, Checkpoint, ModelConfig};
use crate::train::{
    best_grid_point, run_grid, run_suite, structural_dim, write_summary, GridResult, HyperGrid, RunRecord,
    TrainConfig, TrainingData, Variant,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub records: Option<PathBuf>,
    pub codes: Option<PathBuf>,
    pub notes: Option<PathBuf>,
    pub n_visits: usize,
    pub n_codes: usize,
    pub task: TaskKind,
    /// `mixed`, `structure` or `semantics`.
    pub signal: String,
    pub seed: u64,
    pub split_seed: u64,
    pub stratified: bool,
    /// Replace every note with the textualized visit.
    pub textualize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            records: None,
            codes: None,
            notes: None,
            n_visits: 2000,
            n_codes: 200,
            task: TaskKind::Binary,
            signal: "mixed".into(),
            seed: 0,
            split_seed: 0,
            stratified: false,
            textualize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Fallback,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Semantic width (concept and note vectors).
    pub d2: usize,
    /// Structural width. Mutually exclusive with `ratio`; `d2` when neither
    /// is set.
    pub d1: Option<usize>,
    /// Structural:semantic width ratio, `d1 = round(ratio * d2)`.
    pub ratio: Option<f64>,
    pub provider: ProviderKind,
    /// Seed of the fallback embedder.
    pub seed: u64,
    pub batch_size: usize,
    pub max_text_chars: Option<usize>,
    pub blocked_sections: Vec<String>,
    pub walk: WalkConfig,
    /// `dim` is replaced by the structural width.
    pub skipgram: SkipGramConfig,
    pub remote: RemoteConfig,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            d2: 32,
            d1: None,
            ratio: None,
            provider: ProviderKind::Fallback,
            seed: 0,
            batch_size: 64,
            max_text_chars: Some(8000),
            blocked_sections: DEFAULT_BLOCKED_SECTIONS.iter().map(|s| s.to_string()).collect(),
            walk: WalkConfig::default(),
            skipgram: SkipGramConfig::default(),
            remote: RemoteConfig::default(),
        }
    }
}

impl EmbeddingConfig {
    pub fn structural_dim(&self) -> Result<usize> {
        match (self.d1, self.ratio) {
            (Some(_), Some(_)) => Err(Error::Config("set either embedding.d1 or embedding.ratio, not both".into())),
            (Some(0), None) => Err(Error::Config("embedding.d1 must be positive".into())),
            (Some(d1), None) => Ok(d1),
            (None, Some(r)) => structural_dim(r, self.d2),
            (None, None) => Ok(self.d2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub variants: Vec<Variant>,
    /// Variant the significance flags compare against.
    pub reference: Variant,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { variants: Variant::ALL.to_vec(), reference: Variant::Full }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub k: usize,
    pub layer: LayerChoice,
    pub variant: Variant,
    /// Variant whose top-k codes are compared; skipped when not trained.
    pub compare: Option<Variant>,
    /// Checkpoint seed; `train.base_seed` when unset.
    pub seed: Option<u64>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { k: 5, layer: LayerChoice::Final, variant: Variant::Full, compare: Some(Variant::Backbone), seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub embedding: EmbeddingConfig,
    /// `d1`, `d2` and `task_kind` are taken from the embedding tables and
    /// dataset.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub suite: SuiteConfig,
    pub grid: HyperGrid,
    pub explain: ExplainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            embedding: EmbeddingConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            suite: SuiteConfig::default(),
            grid: HyperGrid::default(),
            explain: ExplainConfig::default(),
        }
    }
}

/// Every config key with its default, as printed by `--help`.
pub const CONFIG_REFERENCE: &str = r#"output_dir = "out"            # all artifacts go here

[data]
source = "synthetic"          # "synthetic" (written by `generate`) or "files"
records = "records.tsv"       # files: visit_id<TAB>label<TAB>code,code,...
codes = "codes.tsv"           # files: code_id<TAB>system<TAB>concept_name
notes = "notes.tsv"           # files, optional: visit_id<TAB>note with \n escapes
n_visits = 2000               # synthetic size
n_codes = 200
task = "binary"               # "binary" or "multilabel-25"
signal = "mixed"              # synthetic signal: "mixed", "structure", "semantics"
seed = 0                      # generator seed
split_seed = 0                # 7:1:2 split shuffle seed
stratified = false            # spread positives evenly over the splits
textualize = false            # replace notes with "Patient visit with: ..."

[embedding]
d2 = 32                       # concept/note width
d1 = 32                       # structural width (default d2); or use ratio
ratio = 1.0                   # d1 = round(ratio * d2); exclusive with d1
provider = "fallback"         # "fallback" (offline hashing) or "remote"
seed = 0                      # fallback embedder seed
batch_size = 64               # texts per provider call
max_text_chars = 8000         # longer texts are truncated
blocked_sections = ["Admission Date", ...]   # note sections dropped before embedding

[embedding.walk]
walks_per_node = 10
walk_length = 20
substrate = "clique"          # "clique" or "incidence"
seed = 0

[embedding.skipgram]
dim = 32                      # ignored; the structural width is used
window = 5
negatives = 5
epochs = 5
learning_rate = 0.025
seed = 0

[embedding.remote]
endpoint = "https://api.openai.com/v1/embeddings"
model = "text-embedding-ada-002"
api_key_env = "OPENAI_API_KEY"   # environment variable holding the credential
batch_size = 64
timeout_secs = 60
max_retries = 3
retry_backoff_ms = 500
raw_dim = 1536                # optional check of the returned width
projection_seed = 0           # seeded projection from raw_dim to d2

[model]
hidden = 48
layers = 2                    # 1..=4
heads = 4                     # must divide hidden
d1 = 32                       # ignored; taken from the structural table
d2 = 32                       # ignored; taken from the semantic tables
task_kind = "binary"          # ignored; taken from the dataset
use_concept_semantics = true  # overridden per variant
use_note_semantics = true     # overridden per variant
residual = false
layer_norm = false            # normalize each layer's edge and node updates
train_embeddings = false      # train the structural and concept tables
seed = 0                      # unused; runs are seeded by train.base_seed

[train]
learning_rate = 0.001
weight_decay = 0.001          # decoupled (AdamW)
max_epochs = 200
patience = 20                 # non-improving validation-AUROC epochs tolerated
seeds = 5
base_seed = 0
beta1 = 0.9
beta2 = 0.999
epsilon = 1e-8
workers = 1                   # concurrent runs

[suite]
variants = ["full", "w/o-concept", "w/o-note", "backbone"]
reference = "full"            # significance flags compare against this variant

[grid]
hidden = [24, 48, 72, 96]
layers = [1, 2, 3, 4]
ratios = [0.5, 0.67, 1.0, 1.5, 2.0]

[explain]
k = 5                         # clipped to the visit size
layer = "final"               # "final", "mean" or a 1-based layer
variant = "full"
compare = "backbone"          # optional second variant
seed = 0                      # default train.base_seed
"#;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [&mut self.data.records, &mut self.data.codes, &mut self.data.notes].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.structural_dim()?;
        if self.embedding.d2 == 0 {
            return Err(Error::Config("embedding.d2 must be positive".into()));
        }
        if self.suite.variants.is_empty() {
            return Err(Error::Config("suite.variants is empty".into()));
        }
        if self.data.source == DataSource::Files && (self.data.records.is_none() || self.data.codes.is_none()) {
            return Err(Error::Config("data.source = \"files\" needs data.records and data.codes".into()));
        }
        SignalSpec::from_name(&self.data.signal)?;
        self.train.validate()?;
        self.model_config(self.embedding.structural_dim()?, self.embedding.d2).validate()
    }

    fn model_config(&self, d1: usize, d2: usize) -> ModelConfig {
        ModelConfig { d1, d2, task_kind: self.data.task, ..self.model.clone() }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.output_dir)
    }
}

/// Artifact paths under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data(&self) -> DatasetFiles {
        DatasetFiles::in_dir(self.root.join("data"))
    }

    pub fn table(&self, kind: TableKind) -> PathBuf {
        self.root.join("embeddings").join(format!("{kind}.tsv"))
    }

    pub fn cache(&self) -> PathBuf {
        self.root.join("embeddings").join("cache.tsv")
    }

    pub fn run_dir(&self, variant: Variant, seed: u64) -> PathBuf {
        self.root.join("runs").join(variant.slug()).join(format!("seed{seed}"))
    }

    pub fn checkpoint(&self, variant: Variant, seed: u64) -> PathBuf {
        self.run_dir(variant, seed).join("checkpoint.json")
    }

    pub fn run_log(&self, variant: Variant, seed: u64) -> PathBuf {
        self.run_dir(variant, seed).join("log.tsv")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.tsv")
    }

    pub fn report_text(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn report_tsv(&self) -> PathBuf {
        self.root.join("report.tsv")
    }

    pub fn explanation(&self, visit_id: &str) -> PathBuf {
        let safe: String =
            visit_id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
        self.root.join("explain").join(format!("{safe}.txt"))
    }

    pub fn grid(&self) -> PathBuf {
        self.root.join("grid.tsv")
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub n_visits: usize,
    pub n_codes: usize,
    /// Fraction of positive entries over all labels.
    pub positive_rate: f64,
    pub files: Vec<PathBuf>,
}

impl GenerateSummary {
    pub fn to_text(&self) -> String {
        format!(
            "{} visits, {} codes, positive rate {:.3}\n",
            self.n_visits, self.n_codes, self.positive_rate
        )
    }
}

/// Writes the synthetic dataset into `data/`.
pub fn generate(cfg: &ExperimentConfig) -> Result<GenerateSummary> {
    if cfg.data.source != DataSource::Synthetic {
        return Err(Error::Config("generate needs data.source = \"synthetic\"".into()));
    }
    let spec = SignalSpec::from_name(&cfg.data.signal)?;
    let (ds, _) = generate_synthetic_dataset(cfg.data.n_visits, cfg.data.n_codes, cfg.data.task, &spec, cfg.data.seed)?;
    let files = cfg.layout().data();
    write_dataset(&ds, &files)?;
    let total: usize = ds.visits().iter().map(|v| v.label.len()).sum();
    let positives: usize = ds.visits().iter().map(|v| v.label.iter().filter(|&&b| b).count()).sum();
    Ok(GenerateSummary {
        n_visits: ds.visits().len(),
        n_codes: ds.codes().len(),
        positive_rate: positives as f64 / total as f64,
        files: [Some(files.records), Some(files.codes), files.notes].into_iter().flatten().collect(),
    })
}

/// The configured dataset, textualized when requested and split.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let files = match cfg.data.source {
        DataSource::Synthetic => {
            let files = cfg.layout().data();
            if !files.records.exists() {
                return Err(Error::missing("dataset", &files.records, "generate"));
            }
            files
        }
        DataSource::Files => DatasetFiles {
            records: cfg.data.records.clone().ok_or_else(|| Error::Config("data.records is not set".into()))?,
            codes: cfg.data.codes.clone().ok_or_else(|| Error::Config("data.codes is not set".into()))?,
            notes: cfg.data.notes.clone(),
        },
    };
    let mut ds = load_dataset(&files)?;
    if ds.task_kind() != cfg.data.task {
        return Err(Error::Data(format!("dataset is {} but data.task is {}", ds.task_kind(), cfg.data.task)));
    }
    if cfg.data.textualize {
        ds.textualize_notes()?;
    }
    let strategy = if cfg.data.stratified { SplitStrategy::Stratified } else { SplitStrategy::Uniform };
    split_dataset_with(ds, cfg.data.split_seed, strategy)
}

/// Text-embedding provider with the persistent cache of the output layout.
pub fn make_provider(cfg: &ExperimentConfig) -> Result<EmbeddingProvider> {
    let e = &cfg.embedding;
    let cache = EmbeddingCache::open(cfg.layout().cache())?;
    let provider = match e.provider {
        ProviderKind::Fallback => EmbeddingProvider::new(Box::new(FallbackEmbedder::new(e.d2, e.seed)?), cache),
        #[cfg(feature = "remote")]
        ProviderKind::Remote => {
            let remote = crate::embed::RemoteEmbedder::new(e.remote.clone(), e.d2)?;
            EmbeddingProvider::new(Box::new(remote), cache).with_batch_size(e.remote.batch_size)
        }
        #[cfg(not(feature = "remote"))]
        ProviderKind::Remote => {
            return Err(Error::Config("built without the `remote` feature".into()));
        }
    };
    let provider = if e.provider == ProviderKind::Fallback { provider.with_batch_size(e.batch_size) } else { provider };
    Ok(provider.with_max_text_chars(e.max_text_chars))
}

fn structural_table(cfg: &ExperimentConfig, h: &Hypergraph, d1: usize) -> Result<EmbeddingTable> {
    let sg = SkipGramConfig { dim: d1, ..cfg.embedding.skipgram.clone() };
    structural_embeddings(h, &cfg.embedding.walk, &sg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedSummary {
    pub d1: usize,
    pub d2: usize,
    pub n_nodes: usize,
    pub n_visits: usize,
    pub stats: ProviderStats,
}

impl EmbedSummary {
    pub fn to_text(&self) -> String {
        format!(
            "structural {} x {}, concept/note width {}, {} visits; provider calls {}, computed {}, cache hits {}\n",
            self.n_nodes, self.d1, self.d2, self.n_visits, self.stats.calls, self.stats.computed, self.stats.cache_hits
        )
    }
}

/// Builds the hypergraph and writes the three embedding tables.
pub fn embed(cfg: &ExperimentConfig) -> Result<EmbedSummary> {
    cfg.validate()?;
    let ds = load_data(cfg)?;
    let h = build_hypergraph(&ds)?;
    let d1 = cfg.embedding.structural_dim()?;
    let provider = make_provider(cfg)?;
    let layout = cfg.layout();
    let structural = structural_table(cfg, &h, d1)?;
    let concept = embed_concepts(&provider, &ds)?;
    let note = embed_notes(&provider, &ds, &cfg.embedding.blocked_sections)?;
    for t in [&structural, &concept, &note] {
        t.save(&layout.table(t.kind()))?;
    }
    Ok(EmbedSummary { d1, d2: cfg.embedding.d2, n_nodes: h.n_nodes(), n_visits: note.len(), stats: provider.stats() })
}

pub fn load_tables(cfg: &ExperimentConfig) -> Result<EmbeddingSet> {
    let layout = cfg.layout();
    let load = |kind: TableKind| -> Result<EmbeddingTable> {
        let path = layout.table(kind);
        if !path.exists() {
            return Err(Error::missing(format!("{kind} embeddings"), path, "embed"));
        }
        let t = EmbeddingTable::load(&path)?;
        if t.kind() != kind {
            return Err(Error::Data(format!("{} holds a {} table", path.display(), t.kind())));
        }
        Ok(t)
    };
    let set = EmbeddingSet {
        structural: load(TableKind::Structural)?,
        concept: load(TableKind::Concept)?,
        note: load(TableKind::Note)?,
    };
    if set.concept.dim() != set.note.dim() {
        return Err(Error::Shape(format!(
            "concept width {} != note width {}",
            set.concept.dim(),
            set.note.dim()
        )));
    }
    Ok(set)
}

/// Dataset, hypergraph and stored tables assembled for training.
pub struct Prepared {
    pub dataset: Dataset,
    pub data: TrainingData,
    pub model: ModelConfig,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let dataset = load_data(cfg)?;
    let tables = load_tables(cfg)?;
    let h = build_hypergraph(&dataset)?;
    let data = TrainingData::from_tables(&dataset, &h, &tables.structural, &tables.concept, &tables.note)?;
    let model = cfg.model_config(tables.structural.dim(), tables.concept.dim());
    model.validate()?;
    Ok(Prepared { dataset, data, model })
}

/// Trains every configured variant and seed, writing checkpoints, run logs
/// and the suite summary.
pub fn train(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let runs = run_suite(&prep.data, &prep.model, &cfg.train, &cfg.suite.variants)?;
    let layout = cfg.layout();
    for run in &runs {
        Checkpoint::new(run.config.clone(), run.params.clone()).save(&layout.checkpoint(run.variant, run.record.seed))?;
        write_file(&layout.run_log(run.variant, run.record.seed), &run.record.log_lines())?;
    }
    let records: Vec<RunRecord> = runs.into_iter().map(|r| r.record).collect();
    write_file(&layout.summary(), &write_summary(&records))?;
    Ok(records)
}

fn load_checkpoint(layout: &Layout, variant: Variant, seed: u64) -> Result<Checkpoint> {
    let path = layout.checkpoint(variant, seed);
    if !path.exists() {
        return Err(Error::missing("checkpoint", path, "train"));
    }
    Checkpoint::load(&path)
}

fn check_inputs(ck: &Checkpoint, data: &TrainingData) -> Result<()> {
    if ck.config.d1 != data.inputs.d1() || ck.config.d2 != data.inputs.d2() {
        return Err(Error::Shape(format!(
            "checkpoint expects d1={}, d2={} but the tables have d1={}, d2={}",
            ck.config.d1,
            ck.config.d2,
            data.inputs.d1(),
            data.inputs.d2()
        )));
    }
    Ok(())
}

/// Recomputes test metrics from every checkpoint and writes the aggregated
/// report as an aligned table and as line records.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let layout = cfg.layout();
    let mut checkpoints = Vec::new();
    for &variant in &cfg.suite.variants {
        for seed in cfg.train.seed_list() {
            checkpoints.push((variant, load_checkpoint(&layout, variant, seed)?));
        }
    }
    let prep = prepare(cfg)?;
    let rows = prep.data.rows(Split::Test);
    let targets = prep.data.targets(Split::Test);
    let mut runs: Vec<(String, Vec<Metrics>)> = Vec::new();
    for (variant, ck) in &checkpoints {
        check_inputs(ck, &prep.data)?;
        let probs = predict(&prep.data.inputs, &ck.params, &ck.config)?;
        let m = compute_metrics(probs.select(Axis(0), rows).view(), targets.view(), DEFAULT_THRESHOLD)?;
        match runs.iter_mut().find(|(v, _)| v == variant.as_str()) {
            Some((_, ms)) => ms.push(m),
            None => runs.push((variant.as_str().to_string(), vec![m])),
        }
    }
    let report = aggregate(&runs, cfg.suite.reference.as_str())?;
    write_file(&layout.report_text(), &report.to_table())?;
    write_file(&layout.report_tsv(), &report.to_tsv())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub report: NodeImportanceReport,
    pub comparison: Option<VariantComparison>,
    pub text: String,
}

/// Ranks the codes of `visit_id` by attention for the configured variant
/// and compares its top-k with the comparison variant when that was trained.
pub fn explain(cfg: &ExperimentConfig, visit_id: &str) -> Result<Explanation> {
    cfg.validate()?;
    let ex = &cfg.explain;
    let layout = cfg.layout();
    let seed = ex.seed.unwrap_or(cfg.train.base_seed);
    let main = load_checkpoint(&layout, ex.variant, seed)?;
    let prep = prepare(cfg)?;
    let report_for = |ck: &Checkpoint, variant: Variant| -> Result<NodeImportanceReport> {
        check_inputs(ck, &prep.data)?;
        let state = forward(&prep.data.inputs, &ck.params, &ck.config)?;
        node_importance(&state, &prep.data.inputs, visit_id, ex.layer, variant.as_str(), Some(&prep.dataset))
    };
    let report = report_for(&main, ex.variant)?;
    let k = ex.k.min(report.ranked.len());
    let top = NodeImportanceReport { ranked: report.top(k).to_vec(), ..report.clone() };
    let note = prep
        .dataset
        .visit(visit_id)
        .map(|v| filter_note_sections(&v.note_text, &cfg.embedding.blocked_sections))
        .unwrap_or_default();
    let mut text = top.to_text(Some(&note));
    let comparison = match ex.compare.filter(|&v| v != ex.variant) {
        Some(other) if layout.checkpoint(other, seed).exists() => {
            let other_report = report_for(&load_checkpoint(&layout, other, seed)?, other)?;
            let cmp = compare_variants(&report, &other_report, k);
            text.push_str(&cmp.to_text());
            Some(cmp)
        }
        Some(other) => {
            log::warn!("no {other} checkpoint for seed {seed}; skipping the comparison");
            None
        }
        None => None,
    };
    write_file(&layout.explanation(visit_id), &text)?;
    Ok(Explanation { report: top, comparison, text })
}

/// Header of the grid result file.
pub const GRID_HEADER: &str = "ratio\td1\thidden\tlayers\tmean_val_AUROC\tmean_test_AUROC";

pub fn grid_to_tsv(results: &[GridResult]) -> String {
    let mut out = format!("{GRID_HEADER}\n");
    for r in results {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.ratio, r.d1, r.hidden, r.layers, r.mean_val_auroc, r.mean_test_auroc
        );
    }
    out
}

/// Sweeps hidden width, depth and structural:semantic width ratio with the
/// full variant. Structural tables are rebuilt per ratio; semantic tables
/// come from `embed`.
pub fn gridsearch(cfg: &ExperimentConfig) -> Result<Vec<GridResult>> {
    cfg.validate()?;
    let dataset = load_data(cfg)?;
    let tables = load_tables(cfg)?;
    let h = build_hypergraph(&dataset)?;
    let base = cfg.model_config(tables.structural.dim(), tables.concept.dim());
    let results = run_grid(&cfg.grid, &base, &cfg.train, |d1| {
        let structural = structural_table(cfg, &h, d1)?;
        TrainingData::from_tables(&dataset, &h, &structural, &tables.concept, &tables.note)
    })?;
    let mut text = grid_to_tsv(&results);
    if let Some(best) = best_grid_point(&results) {
        let _ = writeln!(
            text,
            "# best: ratio {} (d1={}), hidden {}, layers {}",
            best.ratio, best.d1, best.hidden, best.layers
        );
    }
    write_file(&cfg.layout().grid(), &text)?;
    Ok(results)
}
