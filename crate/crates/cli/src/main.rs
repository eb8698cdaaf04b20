use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use hyperfuse::interpret::LayerChoice;
use hyperfuse::model::{gradient_check, ModelConfig, TinyInstance};
use hyperfuse::pipeline::{self, ExperimentConfig, CONFIG_REFERENCE};
use hyperfuse::train::Variant;
use hyperfuse::Error;

/// Hypergraph fusion of visit structure, code concepts and clinical notes.
#[derive(Debug, Parser)]
#[command(name = "hyperfuse", version, after_long_help = config_help())]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment config file (TOML); every stage reads the same file.
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(short, long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Overrides `train.workers`.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides `train.seeds`.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Overrides any config key, e.g. `--set model.layers=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic dataset files.
    Generate,
    /// Build the hypergraph and write structural, concept and note tables.
    Embed,
    /// Train every configured variant and seed.
    Train {
        /// Comma-separated variants; overrides `suite.variants`.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
    },
    /// Recompute test metrics from checkpoints and write the report.
    Evaluate,
    /// Rank the codes of one visit by attention.
    Explain {
        visit_id: String,
        #[arg(short, long)]
        k: Option<usize>,
        /// `final`, `mean` or a 1-based layer index.
        #[arg(long)]
        layer: Option<LayerChoice>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Second variant to compare against.
        #[arg(long, conflicts_with = "no_compare")]
        compare: Option<Variant>,
        #[arg(long)]
        no_compare: bool,
        /// Checkpoint seed; defaults to `train.base_seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep hidden width, depth and structural:semantic width ratio.
    Gridsearch,
    /// Compare analytic and finite-difference gradients on a tiny instance.
    Gradcheck {
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        layers: Vec<usize>,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        layer_norm: bool,
        #[arg(long)]
        train_embeddings: bool,
    },
    /// Print the effective configuration after overrides.
    ShowConfig,
}

fn config_help() -> String {
    format!("Configuration file keys and defaults:\n\n{CONFIG_REFERENCE}")
}

fn apply_override(table: &mut toml::Table, spec: &str) -> hyperfuse::Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not KEY=VALUE")))?;
    let value = match raw.parse::<toml::Value>() {
        Ok(v) => v,
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in '{spec}'")))?;
    let mut node = table;
    for part in parts {
        node = node
            .entry(part)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{part}' in '{key}' is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn load_config(g: &Global) -> hyperfuse::Result<ExperimentConfig> {
    let path = g
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config FILE".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for spec in &g.overrides {
        apply_override(&mut table, spec)?;
    }
    let mut cfg = ExperimentConfig::from_toml(&table.to_string())?;
    if let Some(dir) = &g.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(w) = g.workers {
        cfg.train.workers = w;
    }
    if let Some(s) = g.seeds {
        cfg.train.seeds = s;
    }
    // Paths from the file are relative to it; the flag is relative to the cwd.
    let flag_dir = g.output_dir.is_some();
    let out = cfg.output_dir.clone();
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    if flag_dir {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> hyperfuse::Result<()> {
    if let Command::Gradcheck { layers, eps, tolerance, layer_norm, train_embeddings } = &cli.command {
        let mut worst = 0.0f64;
        for &l in layers {
            let tiny = TinyInstance::canonical(l)?;
            let cfg = ModelConfig { layer_norm: *layer_norm, train_embeddings: *train_embeddings, ..tiny.cfg.clone() };
            let report = gradient_check(&tiny.with_config(cfg)?, *eps)?;
            let at = report.worst().map_or("-", |t| t.name.as_str());
            println!("layers {l}: max relative error {:.3e} ({at})", report.max_rel_error);
            worst = worst.max(report.max_rel_error);
        }
        if worst >= *tolerance {
            return Err(Error::NonFinite(format!("gradient error {worst:.3e} exceeds {tolerance:.1e}")));
        }
        return Ok(());
    }

    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Generate => print!("{}", pipeline::generate(&cfg)?.to_text()),
        Command::Embed => print!("{}", pipeline::embed(&cfg)?.to_text()),
        Command::Train { variants } => {
            if let Some(v) = variants {
                cfg.suite.variants = v;
            }
            let records = pipeline::train(&cfg)?;
            for r in &records {
                let auroc = r.test.auroc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
                println!(
                    "{} seed {}: selected epoch {} of {}, test AUROC {auroc}",
                    r.variant,
                    r.seed,
                    r.selected_epoch,
                    r.epochs.len()
                );
            }
            println!("summary: {}", cfg.layout().summary().display());
        }
        Command::Evaluate => {
            print!("{}", pipeline::evaluate(&cfg)?.to_table());
            println!("report: {}", cfg.layout().report_tsv().display());
        }
        Command::Explain { visit_id, k, layer, variant, compare, no_compare, seed } => {
            let ex = &mut cfg.explain;
            ex.k = k.unwrap_or(ex.k);
            ex.layer = layer.unwrap_or(ex.layer);
            ex.variant = variant.unwrap_or(ex.variant);
            ex.seed = seed.or(ex.seed);
            if no_compare {
                ex.compare = None;
            } else if compare.is_some() {
                ex.compare = compare;
            }
            print!("{}", pipeline::explain(&cfg, &visit_id)?.text);
        }
        Command::Gridsearch => {
            print!("{}", pipeline::grid_to_tsv(&pipeline::gridsearch(&cfg)?));
            println!("grid: {}", cfg.layout().grid().display());
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
        Command::Gradcheck { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Provider { failed_keys, .. } = &e {
                if !failed_keys.is_empty() {
                    eprintln!("failed keys: {}", failed_keys.join(", "));
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
