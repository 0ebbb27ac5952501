//! The `semcom` command line: `prepare`, `train`, `sweep`, `plot` and
//! `gradcheck`. Exit codes are 0 on success, 1 for usage or configuration
//! errors, 2 for data errors and 3 for numerical failures.

pub mod config;
pub mod plot;
pub mod sweep;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use config::{DataSection, ExperimentConfig, OutputDir, Scheme, SimilarityKind, SweepSection};

use crate::baseline::HuffmanCodebook;
use crate::corpus::{filter_and_split, read_corpus, SplitConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, ParamStore};
use crate::trainer::{train, write_history};

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const TRAIN_FILE: &str = "train.txt";
pub const TEST_FILE: &str = "test.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CODEBOOK_FILE: &str = "codebook.tsv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Parser)]
#[command(name = "semcom", version, about = "Semantic text transmission experiments")]
pub struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter and split the corpus, build the vocabulary and Huffman codebook.
    Prepare,
    /// Train the learned codec on the prepared training split.
    Train,
    /// Evaluate every scheme over the configured channels, SNRs and seeds.
    Sweep {
        /// Checkpoint to evaluate instead of `<out>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render BLEU and similarity curves from a results table.
    Plot {
        /// Results table instead of `<out>/results.csv`.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Finite-difference check of every operator and of the full pipeline.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Contents of `manifest.json` written by `prepare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub corpus: PathBuf,
    pub input_sentences: usize,
    pub excluded: usize,
    pub train: usize,
    pub test: usize,
    pub vocab_size: usize,
    pub codebook_symbols: usize,
    pub interleaver_seed: u64,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.overrides)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.train.checkpoint_path = None;
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Prepare => prepare(&cfg).map(|m| {
            println!(
                "prepared {} train / {} test sentences ({} excluded), vocabulary {}, config {}",
                m.train,
                m.test,
                m.excluded,
                m.vocab_size,
                &m.config_hash[..12]
            );
        }),
        Command::Train => train_command(&cfg),
        Command::Sweep { checkpoint } => {
            let out = OutputDir::create(&cfg.output.dir)?;
            let ckpt = checkpoint.clone().unwrap_or_else(|| cfg.output.dir.join(CHECKPOINT_FILE));
            let records = sweep::run_sweep(&cfg, &out, &ckpt)?;
            println!("wrote {} rows to {}", records.len(), out.root().join(RESULTS_FILE).display());
            Ok(())
        }
        Command::Plot { results } => {
            let out = OutputDir::create(&cfg.output.dir)?;
            let path = results.clone().unwrap_or_else(|| cfg.output.dir.join(RESULTS_FILE));
            let report = plot::plot_results(&path, &out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for f in &report.files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Gradcheck { seed } => gradcheck(*seed),
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Manifest> {
    let out = OutputDir::create(&cfg.output.dir)?;
    let d = &cfg.data;
    let sentences = read_corpus(&d.corpus)?;
    let input_sentences = sentences.len();
    let split_cfg = SplitConfig {
        min_len: d.min_len,
        max_len: d.max_len,
        train_ratio: d.train_ratio,
        seed: d.seed,
    };
    let mut split = filter_and_split(sentences, &split_cfg)?;
    if let Some(cap) = d.max_sentences {
        let n_train = ((cap as f64) * d.train_ratio).round() as usize;
        split.train.truncate(n_train);
        split.test.truncate(cap - n_train.min(cap));
    }
    if split.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let vocab = Vocabulary::build(&split.train, d.vocab_size)?;
    let codebook = HuffmanCodebook::from_corpus(&split.train)?;
    vocab.save(&out.file(VOCAB_FILE)?)?;
    codebook.save(&out.file(CODEBOOK_FILE)?)?;
    write_sentences(&out.file(TRAIN_FILE)?, &split.train)?;
    write_sentences(&out.file(TEST_FILE)?, &split.test)?;
    let manifest = Manifest {
        config_hash: cfg.hash(),
        corpus: d.corpus.clone(),
        input_sentences,
        excluded: split.excluded,
        train: split.train.len(),
        test: split.test.len(),
        vocab_size: vocab.len(),
        codebook_symbols: codebook.len(),
        interleaver_seed: cfg.sweep.turbo.interleaver_seed,
    };
    let path = out.file(MANIFEST_FILE)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn write_sentences(path: &std::path::Path, sentences: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    for s in sentences {
        text.push_str(&s.join(" "));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn train_command(cfg: &ExperimentConfig) -> Result<()> {
    let out = OutputDir::create(&cfg.output.dir)?;
    let vocab = Vocabulary::load(&out.file(VOCAB_FILE)?)?;
    let sentences = read_corpus(&out.file(TRAIN_FILE)?)?;
    let rows: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.frame(s)).collect();
    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = vocab.len();
    let params = ParamStore::init(&model_cfg, cfg.train.seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.checkpoint_path = Some(out.file(CHECKPOINT_FILE)?);
    log::info!("training {} parameters on {} sentences", params.num_scalars(), rows.len());
    let outcome = train(&rows, &model_cfg, params, &train_cfg)?;
    save_checkpoint(&out.file(CHECKPOINT_FILE)?, &model_cfg, &outcome.params)?;
    write_history(&out.file(LOSS_FILE)?, &outcome.history)?;
    let last = outcome.history.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "trained {} steps, final loss {last:.4}; {} complex symbols per word",
        outcome.history.len(),
        model_cfg.symbols_per_token
    );
    Ok(())
}

pub fn gradcheck(seed: u64) -> Result<()> {
    const TOL: f64 = 1e-4;
    const PIPELINE_TOL: f64 = 1e-3;
    let mut failed = Vec::new();
    for r in crate::tensor::gradcheck::op_suite(seed)? {
        let ok = r.passed(TOL);
        println!("{} {:<28} rel {:.2e} ({} entries)", if ok { "ok  " } else { "FAIL" }, r.name, r.rel_error, r.checked_entries);
        if !ok {
            failed.push(r.name);
        }
    }
    let r = crate::model::pipeline_gradcheck(seed)?;
    let ok = r.passed(PIPELINE_TOL);
    println!("{} {:<28} rel {:.2e} ({} entries)", if ok { "ok  " } else { "FAIL" }, r.name, r.rel_error, r.checked_entries);
    if !ok {
        failed.push(r.name);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("gradient check failed for {}", failed.join(", "))))
    }
}
