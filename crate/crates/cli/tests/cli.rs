use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::{tempdir, TempDir};

const BASE: &str = r#"
output_dir = "out"

[data]
n_visits = 240
n_codes = 40

[embedding]
d2 = 8
ratio = 1.0

[embedding.skipgram]
epochs = 1

[model]
hidden = 8
heads = 2

[train]
seeds = 2
max_epochs = 8
patience = 3

[suite]
variants = ["full", "backbone"]
"#;

fn hyperfuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperfuse"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hyperfuse(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str], code: i32) -> String {
    let out = hyperfuse(dir, args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn project(config: &str) -> (TempDir, PathBuf) {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), config).unwrap();
    let out = dir.path().join("out");
    (dir, out)
}

fn first_visit(out: &Path) -> String {
    let text = fs::read_to_string(out.join("data/records.tsv")).unwrap();
    text.lines().find(|l| !l.starts_with('#')).unwrap().split('\t').next().unwrap().to_string()
}

fn run_chain(dir: &Path) {
    for stage in ["generate", "embed", "train", "evaluate"] {
        ok(dir, &["-c", "exp.toml", stage]);
    }
}

#[test]
fn stages_compose_on_a_fresh_directory() {
    let (dir, out) = project(BASE);
    let d = dir.path();
    let summary = ok(d, &["-c", "exp.toml", "generate"]);
    assert!(summary.starts_with("240 visits"), "{summary}");
    for f in ["records.tsv", "codes.tsv", "notes.tsv"] {
        assert!(out.join("data").join(f).exists());
    }
    ok(d, &["-c", "exp.toml", "embed"]);
    let trained = ok(d, &["-c", "exp.toml", "train"]);
    assert_eq!(trained.lines().filter(|l| l.contains("test AUROC")).count(), 4);
    let table = ok(d, &["-c", "exp.toml", "evaluate"]);
    assert!(table.contains("AUROC") && table.contains("backbone"));
    assert!(out.join("report.tsv").exists() && out.join("report.txt").exists());

    let visit = first_visit(&out);
    let text = ok(d, &["-c", "exp.toml", "explain", &visit, "--k", "2"]);
    assert!(text.starts_with(&format!("visit {visit}")));
    assert!(text.contains("only backbone"), "{text}");
    assert_eq!(fs::read_to_string(out.join("explain").join(format!("{visit}.txt"))).unwrap(), text);

    let alone = ok(d, &["-c", "exp.toml", "explain", &visit, "--no-compare", "--layer", "1"]);
    assert!(alone.contains("layer 1") && !alone.contains("only backbone"), "{alone}");
}

#[test]
fn reruns_reproduce_every_artifact() {
    let (a, out_a) = project(BASE);
    let (b, out_b) = project(BASE);
    run_chain(a.path());
    run_chain(b.path());
    for rel in [
        "data/records.tsv",
        "data/notes.tsv",
        "embeddings/structural.tsv",
        "embeddings/note.tsv",
        "summary.tsv",
        "report.tsv",
        "runs/full/seed1/checkpoint.json",
        "runs/backbone/seed0/log.tsv",
    ] {
        assert_eq!(fs::read(out_a.join(rel)).unwrap(), fs::read(out_b.join(rel)).unwrap(), "{rel}");
    }
    let before = fs::read(out_a.join("data/records.tsv")).unwrap();
    ok(a.path(), &["-c", "exp.toml", "generate"]);
    assert_eq!(fs::read(out_a.join("data/records.tsv")).unwrap(), before);
}

#[test]
fn second_embed_hits_the_cache_only() {
    let (dir, _) = project(BASE);
    ok(dir.path(), &["-c", "exp.toml", "generate"]);
    let first = ok(dir.path(), &["-c", "exp.toml", "embed"]);
    assert!(!first.contains("provider calls 0"), "{first}");
    let second = ok(dir.path(), &["-c", "exp.toml", "embed"]);
    assert!(second.contains("provider calls 0, computed 0"), "{second}");
}

#[test]
fn ratio_two_doubles_the_structural_width() {
    let (dir, out) = project(BASE);
    ok(dir.path(), &["-c", "exp.toml", "generate"]);
    ok(dir.path(), &["-c", "exp.toml", "--set", "embedding.d2=32", "--set", "embedding.ratio=2", "embed"]);
    let header = fs::read_to_string(out.join("embeddings/structural.tsv")).unwrap();
    assert_eq!(header.lines().next(), Some("#structural\t64"));
}

#[test]
fn ablation_suite_reports_three_variants() {
    let config = BASE.replace("n_codes = 40", "n_codes = 40\nsignal = \"semantics\"").replace(
        r#"variants = ["full", "backbone"]"#,
        r#"variants = ["full", "w/o-concept", "no-note"]"#,
    );
    let (dir, out) = project(&config);
    run_chain(dir.path());
    let tsv = fs::read_to_string(out.join("report.tsv")).unwrap();
    let mut variants: Vec<&str> =
        tsv.lines().skip_while(|l| l.starts_with('#')).skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    variants.dedup();
    assert_eq!(variants, ["full", "w/o-concept", "w/o-note"]);
}

#[test]
fn missing_upstream_steps_are_named() {
    let (dir, _) = project(BASE);
    let err = fails(dir.path(), &["-c", "exp.toml", "embed"], 2);
    assert!(err.contains("run `generate` first"), "{err}");
    ok(dir.path(), &["-c", "exp.toml", "generate"]);
    ok(dir.path(), &["-c", "exp.toml", "embed"]);
    let err = fails(dir.path(), &["-c", "exp.toml", "evaluate"], 2);
    assert!(err.contains("no checkpoint"), "{err}");
}

#[test]
fn explain_clips_k_to_the_visit_size() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("codes.tsv"), "a\tICD9\tasthma\nb\tATC\tsalbutamol\nc\tICD9\tpneumonia\n").unwrap();
    let records: String = (0..12)
        .map(|i| format!("p{i}\t{}\t{}\n", i % 2, if i % 3 == 0 { "a,b" } else { "a,b,c" }))
        .collect();
    fs::write(d.join("records.tsv"), records).unwrap();
    let config = BASE.replace(
        "n_visits = 240",
        "source = \"files\"\nrecords = \"records.tsv\"\ncodes = \"codes.tsv\"\ntextualize = true",
    );
    fs::write(d.join("exp.toml"), config).unwrap();
    for stage in ["embed", "train"] {
        ok(d, &["-c", "exp.toml", stage]);
    }
    let text = ok(d, &["-c", "exp.toml", "explain", "p0", "--k", "3", "--no-compare"]);
    let ranks = text.lines().filter(|l| l.trim_start().starts_with(|c: char| c.is_ascii_digit())).count();
    assert_eq!(ranks, 2, "{text}");
}

#[test]
fn usage_and_config_errors_exit_one() {
    let (dir, _) = project(BASE);
    let d = dir.path();
    fails(d, &["generate"], 1);
    fails(d, &["-c", "missing.toml", "generate"], 1);
    fails(d, &["frobnicate"], 1);
    fails(d, &["-c", "exp.toml", "explain"], 1);
    let err = fails(d, &["-c", "exp.toml", "--set", "model.colour=3", "generate"], 1);
    assert!(err.contains("colour"), "{err}");
    fails(d, &["-c", "exp.toml", "--set", "model.heads=3", "train"], 1);
    fails(d, &["-c", "exp.toml", "train", "--variants", "everything"], 1);
}

#[test]
fn provider_failures_exit_three_with_keys() {
    let config = format!(
        "{BASE}\n[embedding.remote]\nendpoint = \"http://127.0.0.1:9/v1/embeddings\"\nmax_retries = 0\ntimeout_secs = 2\n"
    )
    .replace("ratio = 1.0", "ratio = 1.0\nprovider = \"remote\"");
    let (dir, _) = project(&config);
    ok(dir.path(), &["-c", "exp.toml", "generate"]);
    let err = fails(dir.path(), &["-c", "exp.toml", "embed"], 3);
    assert!(err.contains("failed keys: c0000"), "{err}");
}

#[test]
fn gradcheck_reports_and_enforces_tolerance() {
    let dir = tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck"]);
    assert_eq!(out.lines().filter(|l| l.contains("max relative error")).count(), 2);
    fails(dir.path(), &["gradcheck", "--layers", "1", "--tolerance", "1e-12"], 4);
    let flagged = ok(dir.path(), &["gradcheck", "--layers", "2", "--layer-norm", "--train-embeddings"]);
    assert_eq!(flagged.lines().count(), 1, "{flagged}");
}

#[test]
fn help_documents_the_config_file() {
    let dir = tempdir().unwrap();
    let help = ok(dir.path(), &["--help"]);
    for key in ["[embedding.skipgram]", "[embedding.remote]", "api_key_env", "patience", "ratios", "[explain]"] {
        assert!(help.contains(key), "--help lacks {key}");
    }
}

#[test]
fn flags_override_config_keys() {
    let (dir, _) = project(BASE);
    let shown = ok(dir.path(), &["-c", "exp.toml", "--workers", "3", "--seeds", "5", "-o", "elsewhere", "show-config"]);
    assert!(shown.contains("workers = 3") && shown.contains("seeds = 5"), "{shown}");
    assert!(shown.contains("output_dir = \"elsewhere\""), "{shown}");
    let shown = ok(dir.path(), &["-c", "exp.toml", "--set", "explain.layer=2", "show-config"]);
    assert!(shown.contains("layer = 2"), "{shown}");
}
