//! Separate source and channel coding: word-level Huffman, rate-1/3 turbo
//! code and Gray QPSK over the same simulated channel as the learned codec.

pub mod huffman;
pub mod qpsk;
pub mod turbo;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use huffman::HuffmanCodebook;
pub use turbo::{TurboCodec, TurboConfig};

use crate::channel::{ChannelKind, ChannelRealization, SymbolFrame};
use crate::error::Result;

/// Converts `E_b/N_0` to the per-complex-symbol SNR used by the channel
/// (`E_s/N_0 = bits_per_symbol · rate · E_b/N_0`).
pub fn esn0_db(ebn0_db: f64, rate: f64, bits_per_symbol: usize) -> f64 {
    ebn0_db + 10.0 * (rate * bits_per_symbol as f64).log10()
}

pub struct BaselineChain {
    pub codebook: HuffmanCodebook,
    pub turbo: TurboCodec,
}

impl BaselineChain {
    pub fn new(codebook: HuffmanCodebook, turbo: TurboConfig) -> Result<Self> {
        Ok(BaselineChain { codebook, turbo: TurboCodec::new(turbo)? })
    }

    /// Channel uses (complex symbols) spent on one sentence.
    pub fn symbols_for(&self, tokens: &[String]) -> Result<usize> {
        let bits = self.codebook.encode_sentence(tokens)?.len();
        Ok(self.turbo.blocks_for(bits) * self.turbo.coded_block_len() / 2)
    }

    /// Sends one sentence as its own fading block. The receiver knows the
    /// payload length and the channel gain.
    pub fn transmit_sentence(&self, tokens: &[String], kind: ChannelKind, snr_db: f64, seed: u64) -> Result<Vec<String>> {
        let info: Vec<u8> = self.codebook.encode_sentence(tokens)?.into_iter().map(u8::from).collect();
        let coded = self.turbo.encode(&info);
        let frame = SymbolFrame::single(qpsk::modulate(&coded)?);
        let channel = ChannelRealization::draw(kind, snr_db, 1, seed);
        let y = channel.equalize(&channel.transmit(&frame)?)?;
        let llrs = qpsk::demodulate_soft(&y.symbols, channel.equalized_noise_var(0));
        let decoded = self.turbo.decode(&llrs)?;
        let bits: Vec<bool> = decoded[..info.len()].iter().map(|&b| b == 1).collect();
        Ok(self.codebook.decode(&bits))
    }

    /// Tokens → Huffman → turbo → QPSK → channel → equalizer → soft demod →
    /// turbo decoder → Huffman decoder, one independent fading block per
    /// sentence. Output is deterministic for a fixed `seed`.
    pub fn run_chain(&self, sentences: &[Vec<String>], kind: ChannelKind, snr_db: f64, seed: u64) -> Result<Vec<Vec<String>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sentences
            .iter()
            .map(|s| self.transmit_sentence(s, kind, snr_db, rng.gen()))
            .collect()
    }
}
