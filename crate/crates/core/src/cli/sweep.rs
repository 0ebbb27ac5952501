//! SNR sweep over schemes, channels and seeds. Jobs run on a bounded pool of
//! scoped threads; records flow to a single writer and are stored in job
//! order, so the table does not depend on scheduling.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, OutputDir, Scheme, SimilarityKind};
use super::{CODEBOOK_FILE, RESULTS_FILE, TEST_FILE, VOCAB_FILE};
use crate::baseline::{BaselineChain, HuffmanCodebook};
use crate::channel::{ChannelKind, ChannelRealization};
use crate::corpus::{read_corpus, TokenBatch, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{score_corpus, write_records, EmbeddingService, EmbeddingServiceConfig, ExperimentRecord, LexicalSimilarity, SimilarityProvider};
use crate::model::{greedy_transmit, load_checkpoint, ModelConfig, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Job {
    pub scheme: Scheme,
    pub channel: ChannelKind,
    pub snr_db: f64,
    pub seed: u64,
}

impl Job {
    /// Noise and fading seed, a function of the job coordinates only.
    pub fn channel_seed(&self) -> u64 {
        let key = format!("{}/{}/{}/{}", self.scheme.name(), self.channel.name(), self.snr_db.to_bits(), self.seed);
        let d = Sha256::digest(key.as_bytes());
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

pub fn jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let s = &cfg.sweep;
    let mut out = Vec::new();
    for &scheme in &s.schemes {
        for &channel in &s.channels {
            for &snr_db in &s.snr_db {
                for &seed in &s.seeds {
                    out.push(Job { scheme, channel, snr_db, seed });
                }
            }
        }
    }
    out
}

pub struct LearnedCodec {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub vocab: Vocabulary,
}

impl LearnedCodec {
    /// Sends `sentences` in batches of `batch_size`, one fading block per
    /// sentence, and returns the greedy reconstructions.
    pub fn transmit(&self, sentences: &[Vec<String>], kind: ChannelKind, snr_db: f64, seed: u64, batch_size: usize) -> Result<Vec<Vec<String>>> {
        let mut out = Vec::with_capacity(sentences.len());
        for (i, chunk) in sentences.chunks(batch_size).enumerate() {
            let rows: Vec<Vec<usize>> = chunk.iter().map(|s| self.vocab.frame(s)).collect();
            let batch = TokenBatch::from_ids(&rows)?;
            let channel = ChannelRealization::draw(kind, snr_db, batch.batch, seed.wrapping_add(i as u64));
            for ids in greedy_transmit(&self.params, &self.cfg, &batch, Some(&channel))? {
                out.push(ids.iter().map(|&t| self.vocab.token(t).to_string()).collect());
            }
        }
        Ok(out)
    }
}

fn provider(kind: SimilarityKind) -> Result<Box<dyn SimilarityProvider>> {
    if kind == SimilarityKind::Auto {
        if let Some(c) = EmbeddingServiceConfig::from_env() {
            log::info!("similarity: embedding service at {}", c.endpoint);
            return Ok(Box::new(EmbeddingService::new(c)?));
        }
    }
    Ok(Box::new(LexicalSimilarity))
}

fn run_job(
    job: &Job,
    refs: &[Vec<String>],
    learned: Option<&LearnedCodec>,
    baseline: Option<&BaselineChain>,
    cfg: &ExperimentConfig,
    provider: &dyn SimilarityProvider,
    hash: &str,
) -> Result<ExperimentRecord> {
    let seed = job.channel_seed();
    let cands = match job.scheme {
        Scheme::Proposed => learned
            .ok_or_else(|| Error::Contract("learned codec not loaded".into()))?
            .transmit(refs, job.channel, job.snr_db, seed, cfg.sweep.batch_size)?,
        Scheme::HuffmanTurbo => baseline
            .ok_or_else(|| Error::Contract("baseline not loaded".into()))?
            .run_chain(refs, job.channel, job.snr_db, seed)?,
    };
    let score = score_corpus(&cands, refs, provider)?;
    log::info!(
        "{} {} {:>5.1} dB seed {}: bleu {:.4} sim {:.4}",
        job.scheme.name(),
        job.channel.name(),
        job.snr_db,
        job.seed,
        score.bleu.avg_bleu,
        score.similarity
    );
    Ok(ExperimentRecord::new(job.scheme.name(), job.channel.name(), job.snr_db, job.seed, hash, &score))
}

/// Runs every job and writes `results.csv` into `out`.
pub fn run_sweep(cfg: &ExperimentConfig, out: &OutputDir, checkpoint: &Path) -> Result<Vec<ExperimentRecord>> {
    let vocab = Vocabulary::load(&out.file(VOCAB_FILE)?)?;
    let mut refs = read_corpus(&out.file(TEST_FILE)?)?;
    if let Some(n) = cfg.sweep.max_sentences {
        refs.truncate(n);
    }
    if refs.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let learned = if cfg.sweep.schemes.contains(&Scheme::Proposed) {
        if !checkpoint.exists() {
            return Err(Error::Config(format!("checkpoint {} not found; run `semcom train` first", checkpoint.display())));
        }
        let (model_cfg, params) = load_checkpoint(checkpoint)?;
        if model_cfg.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "checkpoint vocabulary {} does not match prepared vocabulary {}",
                model_cfg.vocab_size,
                vocab.len()
            )));
        }
        Some(LearnedCodec { cfg: model_cfg, params, vocab })
    } else {
        None
    };
    let baseline = if cfg.sweep.schemes.contains(&Scheme::HuffmanTurbo) {
        let codebook = HuffmanCodebook::load(&out.file(CODEBOOK_FILE)?)?;
        Some(BaselineChain::new(codebook, cfg.sweep.turbo.clone())?)
    } else {
        None
    };
    let provider = provider(cfg.sweep.similarity)?;
    let hash = cfg.hash();
    let jobs = jobs(cfg);
    let workers = match cfg.sweep.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<ExperimentRecord>)>();
    let mut slots: Vec<Option<ExperimentRecord>> = vec![None; jobs.len()];
    std::thread::scope(|s| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next, refs, hash) = (&jobs, &next, &refs, &hash);
            let (learned, baseline, provider) = (learned.as_ref(), baseline.as_ref(), provider.as_ref());
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = run_job(&jobs[i], refs, learned, baseline, cfg, provider, hash);
                let failed = r.is_err();
                if tx.send((i, r)).is_err() || failed {
                    break;
                }
            });
        }
        drop(tx);
        for (i, r) in rx {
            match r {
                Ok(rec) => slots[i] = Some(rec),
                Err(e) => {
                    next.store(jobs.len(), Ordering::SeqCst);
                    return Err(e);
                }
            }
        }
        Ok(())
    })?;
    let records: Vec<ExperimentRecord> = slots.into_iter().map(|r| r.expect("every job reported")).collect();
    write_records(&out.file(RESULTS_FILE)?, &records)?;
    Ok(records)
}
