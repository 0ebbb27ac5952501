//! Scoring of reconstructed sentences: BLEU-1..4 with their mean, and
//! sentence similarity from a pluggable embedding provider.

mod bleu;
pub mod similarity;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu_n, corpus_bleu, BleuReport};
pub use similarity::{EmbeddingService, EmbeddingServiceConfig, LexicalSimilarity, SimilarityProvider};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusScore {
    pub bleu: BleuReport,
    pub similarity: f64,
    /// Name of the provider that produced `similarity`.
    pub provider: String,
    /// Non-fatal problems, e.g. a fallback to the lexical provider.
    pub warnings: Vec<String>,
}

/// Sentence-level scores averaged over the corpus. If `provider` fails, the
/// lexical provider is used instead and a warning is recorded.
pub fn score_corpus(candidates: &[Vec<String>], references: &[Vec<String>], provider: &dyn SimilarityProvider) -> Result<CorpusScore> {
    let bleu = corpus_bleu(candidates, references)?;
    let pairs: Vec<(String, String)> = candidates.iter().zip(references).map(|(c, r)| (c.join(" "), r.join(" "))).collect();
    let mut warnings = Vec::new();
    let (scores, name) = match provider.similarities(&pairs) {
        Ok(s) => (s, provider.name().to_string()),
        Err(e) => {
            let msg = format!("similarity provider {} failed ({e}); using lexical fallback", provider.name());
            log::warn!("{msg}");
            warnings.push(msg);
            (LexicalSimilarity.similarities(&pairs)?, LexicalSimilarity.name().to_string())
        }
    };
    let similarity = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
    Ok(CorpusScore { bleu, similarity, provider: name, warnings })
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub scheme: String,
    pub channel: String,
    pub snr_db: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub avg_bleu: f64,
    pub similarity: f64,
    pub n_sentences: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl ExperimentRecord {
    pub fn new(scheme: &str, channel: &str, snr_db: f64, seed: u64, config_hash: &str, score: &CorpusScore) -> Self {
        let b = &score.bleu;
        ExperimentRecord {
            scheme: scheme.into(),
            channel: channel.into(),
            snr_db,
            bleu1: b.bleu[0],
            bleu2: b.bleu[1],
            bleu3: b.bleu[2],
            bleu4: b.bleu[3],
            avg_bleu: b.avg_bleu,
            similarity: score.similarity,
            n_sentences: b.n_sentences,
            seed,
            config_hash: config_hash.into(),
        }
    }
}

pub fn write_records(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a results CSV; a malformed row is reported with its line number.
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text)
}

pub fn parse_records(text: &str) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.deserialize::<ExperimentRecord>() {
        match row {
            Ok(r) => out.push(r),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                return Err(Error::Parse { line, msg: e.to_string() });
            }
        }
    }
    Ok(out)
}
