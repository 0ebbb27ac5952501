//! The end-to-end learned transceiver: semantic encoder, channel encoder,
//! physical channel, channel decoder and semantic decoder.

mod config;
mod params;

pub use config::ModelConfig;
pub use params::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Bound, ParamStore, CHECKPOINT_VERSION};

use crate::chancodec::{channel_decode, channel_encode};
use crate::channel::ChannelRealization;
use crate::corpus::{TokenBatch, Vocabulary};
use crate::error::Result;
use crate::semcodec::{decode, decode_step, encode};
use crate::tensor::{Tape, Var};

/// Received features `[B, L, d]` after encoder, channel and receiver.
/// `channel = None` is the ideal (noiseless, unit-gain) link.
pub fn transceive<'t>(
    batch: &TokenBatch,
    p: &Bound<'t>,
    cfg: &ModelConfig,
    channel: Option<&ChannelRealization>,
) -> Result<Var<'t>> {
    let z = encode(batch, p, cfg)?;
    let x = channel_encode(z, &batch.pad_mask, p, cfg)?;
    let y = match channel {
        Some(ch) => ch.straight_through(x, &batch.pad_mask)?,
        None => x,
    };
    channel_decode(y, p, cfg)
}

/// Teacher-forced masked cross-entropy of the whole pipeline.
pub fn loss<'t>(batch: &TokenBatch, p: &Bound<'t>, cfg: &ModelConfig, channel: Option<&ChannelRealization>) -> Result<Var<'t>> {
    let memory = transceive(batch, p, cfg, channel)?;
    let (input, target, active) = batch.shifted();
    let logits = decode(memory, &batch.pad_mask, &input, &active, p, cfg)?;
    logits.cross_entropy_with_logits(&target, &active)
}

/// Greedy reconstruction of every row. Row `b` emits at most
/// `lengths[b] − 1` tokens and stops at END; the returned rows exclude
/// START and END.
pub fn greedy_transmit(
    params: &ParamStore,
    cfg: &ModelConfig,
    batch: &TokenBatch,
    channel: Option<&ChannelRealization>,
) -> Result<Vec<Vec<usize>>> {
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let memory = transceive(batch, &p, cfg, channel)?;
    let budget: Vec<usize> = batch.lengths.iter().map(|&l| l.saturating_sub(1).max(1)).collect();
    let steps = budget.iter().copied().max().unwrap_or(1);
    let mut partial = vec![vec![Vocabulary::START]; batch.batch];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); batch.batch];
    let mut done = vec![false; batch.batch];
    for step in 0..steps {
        // Each step replays the decoder on its own tape to keep memory flat.
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let mem = tape.constant((*memory.value()).clone());
        let logits = decode_step(mem, &batch.pad_mask, &partial, &p, cfg)?;
        let v = cfg.vocab_size;
        let values = logits.value();
        for b in 0..batch.batch {
            let row = &values.data()[b * v..(b + 1) * v];
            let next = argmax(row);
            if !done[b] {
                if next == Vocabulary::END {
                    done[b] = true;
                } else {
                    out[b].push(next);
                    if step + 1 >= budget[b] {
                        done[b] = true;
                    }
                }
            }
            partial[b].push(next);
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    Ok(out)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Finite-difference check of the full encoder → channel → decoder loss on a
/// small model (`d = 16`, one sentence pair of up to six framed tokens,
/// vocabulary 20), probing a sample of weights from every stage.
pub fn pipeline_gradcheck(seed: u64) -> Result<crate::tensor::gradcheck::CheckResult> {
    use crate::channel::ChannelKind;
    use rand::SeedableRng;

    let mut cfg = ModelConfig::tiny(20, 16, 1);
    cfg.rx_hidden = vec![16, 32];
    let params = ParamStore::init(&cfg, seed)?;
    let batch = TokenBatch::from_ids(&[vec![1, 5, 9, 7, 4, 2], vec![1, 11, 6, 2]])?;
    let channel = ChannelRealization::draw(ChannelKind::Rayleigh, 10.0, 2, seed);
    let probes = [
        "enc.emb",
        "enc.0.sa.wq",
        "enc.0.ca.conv1.w",
        "enc.0.ca.squeeze.w",
        "enc.0.ffn.w1",
        "tx.w1",
        "rx.w1",
        "dec.0.ca.merge.w",
        "dec.0.xa.wv",
        "out.w",
    ];
    let inputs = probes
        .iter()
        .map(|n| params.get(n).cloned().ok_or_else(|| crate::Error::Contract(format!("missing {n}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    crate::tensor::gradcheck::check("pipeline", &inputs, 1e-5, Some(24), &mut rng, |tape, xs| {
        let mut p = params.bind(tape, false);
        for (name, &x) in probes.iter().zip(xs) {
            p.set(name, x)?;
        }
        loss(&batch, &p, &cfg, Some(&channel))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipeline_gradient_matches_finite_differences() {
        let r = pipeline_gradcheck(1).unwrap();
        assert!(r.passed(1e-3), "{r:?}");
    }

    #[test]
    fn greedy_output_respects_length_budget() {
        let cfg = ModelConfig::tiny(16, 8, 1);
        let params = ParamStore::init(&cfg, 2).unwrap();
        let batch = TokenBatch::from_ids(&[vec![1, 4, 5, 2], vec![1, 6, 2]]).unwrap();
        let out = greedy_transmit(&params, &cfg, &batch, None).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[0].len() <= 3 && out[1].len() <= 2);
        assert!(out.iter().flatten().all(|&t| t != Vocabulary::END));
    }
}
