use std::path::{Path, PathBuf};

use semcom::cli::{run, Manifest};
use semcom::eval::read_records;

fn setup(dir: &Path) -> PathBuf {
    let corpus = dir.join("corpus.txt");
    std::fs::write(&corpus, semcom::corpus::synthetic::generate(120, 5).join("\n")).unwrap();
    let cfg = dir.join("tiny.toml");
    std::fs::write(
        &cfg,
        format!(
            r#"
[data]
corpus = "{}"
max_len = 12
vocab_size = 300
max_sentences = 60

[model]
d_model = 16
heads = 2
layers = 1
d_ff = 32
tx_hidden = 16
rx_hidden = [16, 32]

[train]
batch_size = 8
epochs = 1
max_steps = 3
log_every = 0

[sweep]
snr_db = [0.0, 12.0]
seeds = [0, 1]
max_sentences = 4
batch_size = 4
workers = 2
similarity = "lexical"
turbo = {{ block_len = 128, iterations = 2, interleaver_seed = 7 }}
"#,
            corpus.display()
        ),
    )
    .unwrap();
    cfg
}

fn semcom(cfg: &Path, out: &Path, rest: &[&str]) -> i32 {
    let mut args = vec!["semcom".to_string(), "-c".into(), cfg.display().to_string(), "--out".into(), out.display().to_string()];
    args.extend(rest.iter().map(|s| s.to_string()));
    run(args)
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(["semcom", "--help"]), 0);
    assert_eq!(run(["semcom"]), 1);
    assert_eq!(run(["semcom", "frobnicate"]), 1);
    assert_eq!(run(["semcom", "--set", "train.epochs=\"many\"", "prepare"]), 1);
    assert_eq!(run(["semcom", "--set", "sweep.snr_db=[6.0,0.0]", "prepare"]), 1);
    assert_eq!(run(["semcom", "-c", "/nonexistent/semcom.toml", "prepare"]), 1);
}

#[test]
fn missing_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let code = run([
        "semcom".to_string(),
        "--out".into(),
        out.display().to_string(),
        "--set".into(),
        format!("data.corpus=\"{}\"", dir.path().join("missing.txt").display()),
        "prepare".into(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn sweep_without_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");
    assert_eq!(semcom(&cfg, &out, &["prepare"]), 0);
    assert_eq!(semcom(&cfg, &out, &["sweep"]), 1);
}

#[test]
fn prepare_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(semcom(&cfg, &a, &["prepare"]), 0);
    assert_eq!(semcom(&cfg, &b, &["prepare"]), 0);
    for f in ["manifest.json", "vocab.tsv", "codebook.tsv", "train.txt", "test.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.train + m.test, 60);
    assert_eq!(m.config_hash.len(), 64);
    assert_eq!(m.interleaver_seed, 7);
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");
    for cmd in ["prepare", "train", "sweep", "plot"] {
        assert_eq!(semcom(&cfg, &out, &[cmd]), 0, "{cmd}");
    }
    let written = files_under(&out);
    assert!(written.iter().all(|p| p.starts_with(&out)));
    for f in ["model.ckpt", "loss.csv", "results.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let loss = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 3);

    let rows = read_records(&out.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2 * 2);
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.avg_bleu) && (0.0..=1.0).contains(&r.similarity));
        assert_eq!(r.n_sentences, 4);
    }

    let plots = files_under(&out.join("plots"));
    let names: Vec<String> = plots.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["avg_bleu_awgn.svg", "avg_bleu_rayleigh.svg", "similarity_awgn.svg", "similarity_rayleigh.svg"]);
    let before: Vec<Vec<u8>> = plots.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(semcom(&cfg, &out, &["plot"]), 0);
    let after: Vec<Vec<u8>> = plots.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(before, after);

    // Same configuration and seeds give identical rows.
    let first = std::fs::read(out.join("results.csv")).unwrap();
    assert_eq!(semcom(&cfg, &out, &["--set", "sweep.workers=1", "sweep"]), 0);
    let again = read_records(&out.join("results.csv")).unwrap();
    for (a, b) in rows.iter().zip(&again) {
        assert_eq!((a.scheme.as_str(), a.channel.as_str(), a.snr_db, a.seed), (b.scheme.as_str(), b.channel.as_str(), b.snr_db, b.seed));
        assert_eq!((a.avg_bleu, a.similarity), (b.avg_bleu, b.similarity));
    }
    assert_ne!(first.len(), 0);
}

#[test]
fn plot_omits_missing_series_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let out = semcom::cli::OutputDir::create(&dir.path().join("out")).unwrap();
    let csv = dir.path().join("r.csv");
    std::fs::write(
        &csv,
        "scheme,channel,snr_db,bleu1,bleu2,bleu3,bleu4,avg_bleu,similarity,n_sentences,seed,config_hash\n\
         proposed,awgn,0,1,1,1,1,1,1,3,0,h\n\
         proposed,awgn,6,1,1,1,1,1,1,3,0,h\n\
         huffman_turbo,rayleigh,0,0.5,0.5,0.5,0.5,0.5,0.5,3,0,h\n",
    )
    .unwrap();
    let report = semcom::cli::plot::plot_results(&csv, &out).unwrap();
    assert_eq!(report.files.len(), 4);
    assert_eq!(report.warnings.len(), 4);
    assert!(report.warnings[0].contains("huffman_turbo"));
}
