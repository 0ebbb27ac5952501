//! End-to-end training through the simulated channel.
//!
//! A producer thread shuffles the corpus, assembles padded batches and draws
//! the per-batch channel state; the training loop consumes them through a
//! bounded queue and applies Adam updates one batch at a time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelKind, ChannelRealization};
use crate::corpus::TokenBatch;
use crate::error::{Error, Result};
use crate::model::{self, save_checkpoint, ModelConfig, ParamStore};
use crate::tensor::{Tape, Tensor};

/// How the training SNR is chosen for each batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SnrPolicy {
    Uniform { min_db: f64, max_db: f64 },
    Fixed { snr_db: f64 },
    Noiseless,
}

impl SnrPolicy {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            SnrPolicy::Uniform { min_db, max_db } => {
                if max_db > min_db {
                    rng.gen_range(min_db..max_db)
                } else {
                    min_db
                }
            }
            SnrPolicy::Fixed { snr_db } => snr_db,
            SnrPolicy::Noiseless => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub snr: SnrPolicy,
    pub channel: ChannelKind,
    pub seed: u64,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub checkpoint_path: Option<PathBuf>,
    /// Steps between checkpoints (0: only at the end).
    pub checkpoint_every: usize,
    /// Depth of the batch queue between the producer and the optimizer.
    pub queue_depth: usize,
    /// Steps between progress log lines (0: silent).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            batch_size: 256,
            epochs: 80,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: Some(1.0),
            snr: SnrPolicy::Uniform { min_db: 0.0, max_db: 20.0 },
            channel: ChannelKind::Awgn,
            seed: 0,
            max_steps: None,
            checkpoint_path: None,
            checkpoint_every: 0,
            queue_depth: 4,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return fail("adam betas must lie in [0, 1) and eps must be > 0");
        }
        if let SnrPolicy::Uniform { min_db, max_db } = self.snr {
            if !(min_db <= max_db) {
                return fail("uniform SNR range is empty");
            }
        }
        if self.queue_depth == 0 {
            return fail("queue_depth must be >= 1");
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

/// One Adam update with bias correction. Parameters without a gradient are
/// left alone.
pub fn adam_step(params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    for (name, g) in grads {
        if let Some(i) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient in parameter {name} at index {i}")));
        }
        match params.get(name) {
            Some(p) if p.shape() == g.shape() => {}
            _ => return Err(Error::Contract(format!("gradient for unknown or mis-shaped parameter {name}"))),
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// Loss and parameter gradients for one batch.
pub fn loss_and_grads(
    params: &ParamStore,
    cfg: &ModelConfig,
    batch: &TokenBatch,
    channel: Option<&ChannelRealization>,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let tape = Tape::new();
    let p = params.bind(&tape, true);
    let loss = model::loss(batch, &p, cfg, channel)?;
    let value = loss.value().data()[0];
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {value}")));
    }
    let g = tape.backward(loss)?;
    let grads = p.iter().map(|(k, v)| (k.clone(), g.get_or_zeros(*v))).collect();
    Ok((value, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub snr_db: f64,
}

pub struct TrainOutcome {
    pub params: ParamStore,
    pub history: Vec<LossRecord>,
}

struct Job {
    epoch: usize,
    batch: TokenBatch,
    channel: ChannelRealization,
}

fn produce(rows: &[Vec<usize>], cfg: &TrainConfig, tx: std::sync::mpsc::SyncSender<Result<Job>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                return;
            }
            let picked: Vec<Vec<usize>> = chunk.iter().map(|&i| rows[i].clone()).collect();
            let snr = cfg.snr.sample(&mut rng);
            let channel_seed = rng.gen::<u64>();
            let job = TokenBatch::from_ids(&picked).map(|batch| Job {
                epoch,
                channel: ChannelRealization::draw(cfg.channel, snr, batch.batch, channel_seed),
                batch,
            });
            if tx.send(job).is_err() {
                return;
            }
            step += 1;
        }
    }
}

/// Trains `params` on framed id rows (`START … END`). The parameter set and
/// loss history are returned; on a numerical failure the error is returned
/// and any checkpoint written earlier is left untouched.
pub fn train(rows: &[Vec<usize>], model_cfg: &ModelConfig, params: ParamStore, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut params = params;
    let mut state = AdamState::default();
    let mut history = Vec::new();
    let (tx, rx) = sync_channel::<Result<Job>>(cfg.queue_depth);

    std::thread::scope(|s| -> Result<()> {
        s.spawn(move || produce(rows, cfg, tx));
        for (step, job) in rx.into_iter().enumerate() {
            let job = job?;
            let channel = Some(&job.channel);
            let (loss, mut grads) = loss_and_grads(&params, model_cfg, &job.batch, channel)
                .map_err(|e| Error::Numerical(format!("step {step}: {e}")))?;
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam_step(&mut params, &grads, &mut state, cfg)?;
            history.push(LossRecord { step, epoch: job.epoch, loss, snr_db: job.channel.snr_db });
            if cfg.log_every > 0 && step % cfg.log_every == 0 {
                log::info!("step {step} epoch {} loss {loss:.4} snr {:.1} dB", job.epoch, job.channel.snr_db);
            }
            if let Some(path) = &cfg.checkpoint_path {
                if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                    save_checkpoint(path, model_cfg, &params)?;
                }
            }
        }
        Ok(())
    })?;

    if let Some(path) = &cfg.checkpoint_path {
        save_checkpoint(path, model_cfg, &params)?;
    }
    Ok(TrainOutcome { params, history })
}

/// Writes `step,epoch,loss,snr_db` rows.
pub fn write_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in history {
        w.serialize(r).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
