use std::fs;
use std::path::Path;

use hyperfuse::embed::TableKind;
use hyperfuse::model::ModelConfig;
use hyperfuse::pipeline::{self, DataSource, ExperimentConfig, GRID_HEADER};
use hyperfuse::train::{read_summary, HyperGrid, Variant};
use hyperfuse::Error;
use tempfile::tempdir;

fn small(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = dir.to_path_buf();
    cfg.data.n_visits = 240;
    cfg.data.n_codes = 40;
    cfg.embedding.d2 = 8;
    cfg.embedding.ratio = Some(1.0);
    cfg.embedding.skipgram.epochs = 1;
    cfg.model = ModelConfig { hidden: 8, heads: 2, ..ModelConfig::default() };
    cfg.train.seeds = 2;
    cfg.train.max_epochs = 10;
    cfg.train.patience = 3;
    cfg.suite.variants = vec![Variant::Full, Variant::Backbone];
    cfg
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn full_chain_writes_every_artifact() {
    let dir = tempdir().unwrap();
    let cfg = small(dir.path());
    let layout = cfg.layout();

    let g = pipeline::generate(&cfg).unwrap();
    assert_eq!((g.n_visits, g.n_codes), (240, 40));
    assert!(g.files.iter().all(|f| f.exists()));

    let e = pipeline::embed(&cfg).unwrap();
    assert_eq!((e.d1, e.d2), (8, 8));
    for kind in [TableKind::Structural, TableKind::Concept, TableKind::Note] {
        assert!(layout.table(kind).exists());
    }
    assert!(layout.cache().exists());

    let records = pipeline::train(&cfg).unwrap();
    assert_eq!(records.len(), 4);
    for v in [Variant::Full, Variant::Backbone] {
        for seed in cfg.train.seed_list() {
            assert!(layout.checkpoint(v, seed).exists());
            assert_eq!(first_line(&layout.run_log(v, seed)), "epoch\tsplit\tmetric\tvalue");
        }
    }
    let summary = read_summary(&fs::read_to_string(layout.summary()).unwrap()).unwrap();
    assert_eq!(summary.len(), 2);
    assert!(summary.iter().all(|(_, ms)| ms.len() == 2));

    // evaluate recomputes exactly what training reported
    let report = pipeline::evaluate(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.reference, "full");
    for (variant, ms) in &summary {
        let row = report.row(variant).unwrap();
        assert_eq!(row.n_runs, ms.len());
    }
    let tsv = fs::read_to_string(layout.report_tsv()).unwrap();
    assert_eq!(tsv, report.to_tsv());
    assert!(layout.report_text().exists());

    let visit = fs::read_to_string(cfg.layout().data().records).unwrap();
    let visit_id = visit.lines().find(|l| !l.starts_with('#')).unwrap().split('\t').next().unwrap().to_string();
    let ex = pipeline::explain(&cfg, &visit_id).unwrap();
    assert!(ex.report.ranked.len() <= cfg.explain.k);
    let cmp = ex.comparison.expect("backbone was trained");
    assert_eq!((cmp.left.as_str(), cmp.right.as_str()), ("full", "backbone"));
    assert_eq!(fs::read_to_string(layout.explanation(&visit_id)).unwrap(), ex.text);
}

#[test]
fn stages_name_the_step_that_is_missing() {
    let dir = tempdir().unwrap();
    let cfg = small(dir.path());

    let err = pipeline::embed(&cfg).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact { step: "generate", .. }), "{err}");
    assert_eq!(err.exit_code(), 2);

    pipeline::generate(&cfg).unwrap();
    let err = pipeline::train(&cfg).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact { step: "embed", .. }), "{err}");

    pipeline::embed(&cfg).unwrap();
    let err = pipeline::evaluate(&cfg).unwrap_err();
    assert!(err.to_string().contains("no checkpoint"), "{err}");
    assert!(err.to_string().contains("run `train` first"), "{err}");
    let err = pipeline::explain(&cfg, "v0").unwrap_err();
    assert!(err.to_string().contains("no checkpoint"), "{err}");
}

#[test]
fn second_embed_is_served_from_the_cache() {
    let dir = tempdir().unwrap();
    let cfg = small(dir.path());
    pipeline::generate(&cfg).unwrap();
    let first = pipeline::embed(&cfg).unwrap();
    assert!(first.stats.calls > 0 && first.stats.computed > 0);
    let note_table = fs::read(cfg.layout().table(TableKind::Note)).unwrap();

    let second = pipeline::embed(&cfg).unwrap();
    assert_eq!(second.stats.calls, 0);
    assert_eq!(second.stats.computed, 0);
    assert_eq!(second.stats.cache_hits, first.stats.computed + first.stats.cache_hits);
    assert_eq!(fs::read(cfg.layout().table(TableKind::Note)).unwrap(), note_table);
}

#[test]
fn width_ratio_sets_structural_table_width() {
    let dir = tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.embedding.d2 = 32;
    cfg.embedding.ratio = Some(2.0);
    pipeline::generate(&cfg).unwrap();
    let e = pipeline::embed(&cfg).unwrap();
    assert_eq!(e.d1, 64);
    assert_eq!(first_line(&cfg.layout().table(TableKind::Structural)), "#structural\t64");
    assert_eq!(first_line(&cfg.layout().table(TableKind::Concept)), "#concept\t32");
    assert_eq!(first_line(&cfg.layout().table(TableKind::Note)), "#note\t32");

    cfg.embedding.d1 = Some(10);
    assert!(matches!(pipeline::embed(&cfg).unwrap_err(), Error::Config(_)));
}

fn write_files_dataset(dir: &Path) {
    let codes = "c1\tICD9\tessential hypertension\nc2\tICD9\ttype 2 diabetes\nc3\tATC\tmetformin\n\
                 c4\tICD9\tacute kidney failure\nc5\tATC\tfurosemide\n";
    let mut records = String::from("# visit\tlabel\tcodes\n");
    let mut notes = String::new();
    for i in 0..20 {
        let codes = match i % 4 {
            0 => "c1,c2,c3",
            1 => "c4,c5",
            2 => "c1,c4,c5",
            _ => "c2,c3",
        };
        records.push_str(&format!("v{i}\t{}\t{codes}\n", i % 2));
        if i % 3 != 0 {
            notes.push_str(&format!("v{i}\tHistory:\\npatient visit {i}\\nSocial History:\\nsmokes\n"));
        }
    }
    fs::write(dir.join("codes.tsv"), codes).unwrap();
    fs::write(dir.join("records.tsv"), records).unwrap();
    fs::write(dir.join("notes.tsv"), notes).unwrap();
}

#[test]
fn user_files_drive_the_pipeline_and_explain_clips_k() {
    let data_dir = tempdir().unwrap();
    write_files_dataset(data_dir.path());
    let out = tempdir().unwrap();
    let mut cfg = small(out.path());
    cfg.data.source = DataSource::Files;
    cfg.data.records = Some(data_dir.path().join("records.tsv"));
    cfg.data.codes = Some(data_dir.path().join("codes.tsv"));
    cfg.data.notes = Some(data_dir.path().join("notes.tsv"));
    cfg.data.textualize = true;
    cfg.suite.variants = vec![Variant::Full];
    cfg.explain.k = 3;

    assert!(matches!(pipeline::generate(&cfg).unwrap_err(), Error::Config(_)));
    let e = pipeline::embed(&cfg).unwrap();
    assert_eq!((e.n_nodes, e.n_visits), (5, 20));
    pipeline::train(&cfg).unwrap();
    pipeline::evaluate(&cfg).unwrap();

    // v1 holds two codes: the ranking cannot be longer than the visit.
    let ex = pipeline::explain(&cfg, "v1").unwrap();
    assert_eq!(ex.report.ranked.len(), 2);
    let mut ids: Vec<&str> = ex.report.ranked.iter().map(|c| c.code_id.as_str()).collect();
    ids.sort();
    assert_eq!(ids, ["c4", "c5"]);
    assert!(ex.comparison.is_none());
    assert!(ex.text.contains("furosemide"));
    assert!(!ex.text.contains("smokes"));

    let err = pipeline::explain(&cfg, "nope").unwrap_err();
    assert!(err.to_string().contains("nope"), "{err}");
}

#[test]
fn gridsearch_writes_one_row_per_point() {
    let dir = tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.seeds = 1;
    cfg.train.max_epochs = 3;
    cfg.train.patience = 1;
    cfg.grid = HyperGrid { hidden: vec![8], layers: vec![1, 2], ratios: vec![0.5, 1.0] };
    pipeline::generate(&cfg).unwrap();
    pipeline::embed(&cfg).unwrap();
    let results = pipeline::gridsearch(&cfg).unwrap();
    assert_eq!(results.len(), 4);
    let text = fs::read_to_string(cfg.layout().grid()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], GRID_HEADER);
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("# best: ratio "));
    let d1s: Vec<&str> = lines[1..5].iter().map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(d1s, ["4", "4", "8", "8"]);
}

#[test]
fn config_survives_a_toml_round_trip() {
    let dir = tempdir().unwrap();
    let cfg = small(dir.path());
    let text = cfg.to_toml();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    let path = dir.path().join("exp.toml");
    fs::write(&path, text).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
}
