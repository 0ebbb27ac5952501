//! Rate-1/3 parallel-concatenated convolutional (turbo) code built from two
//! recursive systematic (7,5)₈ encoders, decoded by iterative log-MAP.
//!
//! Block layout on the wire, `K` information bits:
//!
//! ```text
//! x[0..K] | p1[0..K] | p2[0..K] | tail1 (x, p, x, p) | tail2 (x, p, x, p)
//! ```
//!
//! Each constituent encoder is driven back to the zero state by two tail
//! steps, so a block carries `3K + 8` coded bits. LLRs follow the
//! convention `L = ln P(b = 0) / P(b = 1)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STATES: usize = 4;
const MEMORY: usize = 2;
pub const TAIL_BITS: usize = 4 * MEMORY;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurboConfig {
    pub block_len: usize,
    pub iterations: usize,
    pub interleaver_seed: u64,
}

impl Default for TurboConfig {
    fn default() -> Self {
        TurboConfig {
            block_len: 1024,
            iterations: 5,
            interleaver_seed: 0x7u64,
        }
    }
}

/// One RSC step from `state = (s1, s2)` packed as `s1 << 1 | s2`.
/// Feedback 1 + D + D² (7), feedforward 1 + D² (5).
fn rsc_step(state: usize, u: u8) -> (usize, u8) {
    let (s1, s2) = ((state >> 1) as u8 & 1, state as u8 & 1);
    let a = u ^ s1 ^ s2;
    let p = a ^ s2;
    (((a as usize) << 1) | s1 as usize, p)
}

/// Input that zeroes the feedback, used for termination.
fn tail_input(state: usize) -> u8 {
    ((state >> 1) ^ state) as u8 & 1
}

/// Seeded block interleaver.
#[derive(Clone, Debug, PartialEq)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Interleaver { perm }
    }

    /// `out[i] = x[perm[i]]`.
    pub fn apply<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.perm.iter().map(|&p| x[p]).collect()
    }

    pub fn invert<T: Copy + Default>(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); y.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = y[i];
        }
        out
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }
}

pub struct TurboCodec {
    pub cfg: TurboConfig,
    interleaver: Interleaver,
}

fn rsc_encode(bits: &[u8]) -> (Vec<u8>, [u8; 2 * MEMORY]) {
    let mut state = 0;
    let mut parity = Vec::with_capacity(bits.len());
    for &u in bits {
        let (next, p) = rsc_step(state, u);
        parity.push(p);
        state = next;
    }
    let mut tail = [0u8; 2 * MEMORY];
    for k in 0..MEMORY {
        let u = tail_input(state);
        let (next, p) = rsc_step(state, u);
        tail[2 * k] = u;
        tail[2 * k + 1] = p;
        state = next;
    }
    debug_assert_eq!(state, 0);
    (parity, tail)
}

#[inline]
fn max_star(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

/// log-MAP (BCJR) pass over one terminated constituent trellis.
/// `sys`, `par` have `K + MEMORY` entries, `apriori` has `K`; returns the
/// a-posteriori LLRs of the `K` information bits.
fn log_map(sys: &[f64], par: &[f64], apriori: &[f64]) -> Vec<f64> {
    let n = sys.len();
    let k = apriori.len();
    let ninf = f64::NEG_INFINITY;
    let mut next = [[0usize; 2]; STATES];
    let mut out = [[0u8; 2]; STATES];
    for s in 0..STATES {
        for u in 0..2u8 {
            let (ns, p) = rsc_step(s, u);
            next[s][u as usize] = ns;
            out[s][u as usize] = p;
        }
    }
    let sign = |b: u8| if b == 0 { 1.0 } else { -1.0 };
    let gamma = |t: usize, s: usize, u: u8| -> f64 {
        let la = if t < k { apriori[t] } else { 0.0 };
        0.5 * (sign(u) * (sys[t] + la) + sign(out[s][u as usize]) * par[t])
    };

    let mut alpha = vec![[ninf; STATES]; n + 1];
    alpha[0][0] = 0.0;
    for t in 0..n {
        for s in 0..STATES {
            let a = alpha[t][s];
            if a == ninf {
                continue;
            }
            for u in 0..2u8 {
                let ns = next[s][u as usize];
                alpha[t + 1][ns] = max_star(alpha[t + 1][ns], a + gamma(t, s, u));
            }
        }
        let m = alpha[t + 1].iter().cloned().fold(ninf, f64::max);
        alpha[t + 1].iter_mut().for_each(|x| *x -= m);
    }
    let mut beta = vec![[ninf; STATES]; n + 1];
    beta[n][0] = 0.0;
    for t in (0..n).rev() {
        for s in 0..STATES {
            let mut acc = ninf;
            for u in 0..2u8 {
                let b = beta[t + 1][next[s][u as usize]];
                if b != ninf {
                    acc = max_star(acc, gamma(t, s, u) + b);
                }
            }
            beta[t][s] = acc;
        }
        let m = beta[t].iter().cloned().fold(ninf, f64::max);
        beta[t].iter_mut().for_each(|x| *x -= m);
    }
    (0..k)
        .map(|t| {
            let (mut l0, mut l1) = (ninf, ninf);
            for s in 0..STATES {
                if alpha[t][s] == ninf {
                    continue;
                }
                for u in 0..2u8 {
                    let v = alpha[t][s] + gamma(t, s, u) + beta[t + 1][next[s][u as usize]];
                    if u == 0 {
                        l0 = max_star(l0, v);
                    } else {
                        l1 = max_star(l1, v);
                    }
                }
            }
            l0 - l1
        })
        .collect()
}

impl TurboCodec {
    pub fn new(cfg: TurboConfig) -> Result<Self> {
        if cfg.block_len == 0 || cfg.iterations == 0 {
            return Err(Error::Config("turbo block length and iterations must be positive".into()));
        }
        let interleaver = Interleaver::new(cfg.block_len, cfg.interleaver_seed);
        Ok(TurboCodec { cfg, interleaver })
    }

    pub fn interleaver(&self) -> &Interleaver {
        &self.interleaver
    }

    pub fn coded_block_len(&self) -> usize {
        3 * self.cfg.block_len + TAIL_BITS
    }

    /// Number of blocks needed for `n` information bits (at least one).
    pub fn blocks_for(&self, n: usize) -> usize {
        n.div_ceil(self.cfg.block_len).max(1)
    }

    fn encode_block(&self, info: &[u8], out: &mut Vec<u8>) {
        let (p1, t1) = rsc_encode(info);
        let (p2, t2) = rsc_encode(&self.interleaver.apply(info));
        out.extend_from_slice(info);
        out.extend_from_slice(&p1);
        out.extend_from_slice(&p2);
        out.extend_from_slice(&t1);
        out.extend_from_slice(&t2);
    }

    /// Encodes `bits` (0/1), zero-padding the last block.
    pub fn encode(&self, bits: &[u8]) -> Vec<u8> {
        let k = self.cfg.block_len;
        let blocks = self.blocks_for(bits.len());
        let mut out = Vec::with_capacity(blocks * self.coded_block_len());
        let mut block = vec![0u8; k];
        for b in 0..blocks {
            block.iter_mut().for_each(|x| *x = 0);
            let src = &bits[(b * k).min(bits.len())..((b + 1) * k).min(bits.len())];
            block[..src.len()].copy_from_slice(src);
            self.encode_block(&block, &mut out);
        }
        out
    }

    fn decode_block(&self, llr: &[f64]) -> Vec<u8> {
        let k = self.cfg.block_len;
        let (sys, rest) = llr.split_at(k);
        let (p1, rest) = rest.split_at(k);
        let (p2, tails) = rest.split_at(k);
        let (mut sys1, mut par1) = (sys.to_vec(), p1.to_vec());
        let (mut sys2, mut par2) = (self.interleaver.apply(sys), p2.to_vec());
        for m in 0..MEMORY {
            sys1.push(tails[2 * m]);
            par1.push(tails[2 * m + 1]);
            sys2.push(tails[2 * MEMORY + 2 * m]);
            par2.push(tails[2 * MEMORY + 2 * m + 1]);
        }
        let sys_i = self.interleaver.apply(sys);
        let mut ext2 = vec![0.0; k]; // deinterleaved extrinsic from decoder 2
        let mut post = vec![0.0; k];
        for _ in 0..self.cfg.iterations {
            let app1 = log_map(&sys1, &par1, &ext2);
            let ext1: Vec<f64> = (0..k).map(|i| app1[i] - sys[i] - ext2[i]).collect();
            let a2 = self.interleaver.apply(&ext1);
            let app2 = log_map(&sys2, &par2, &a2);
            let e2: Vec<f64> = (0..k).map(|i| app2[i] - sys_i[i] - a2[i]).collect();
            ext2 = self.interleaver.invert(&e2);
            post = self.interleaver.invert(&app2);
        }
        post.iter().map(|&l| (l < 0.0) as u8).collect()
    }

    /// Hard decisions for all blocks in `llrs` (a whole number of coded
    /// blocks).
    pub fn decode(&self, llrs: &[f64]) -> Result<Vec<u8>> {
        let n = self.coded_block_len();
        if llrs.is_empty() || !llrs.len().is_multiple_of(n) {
            return Err(Error::Framing(format!("{} LLRs is not a multiple of the coded block length {n}", llrs.len())));
        }
        Ok(llrs.chunks_exact(n).flat_map(|b| self.decode_block(b)).collect())
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn small(k: usize) -> TurboCodec {
        TurboCodec::new(TurboConfig { block_len: k, ..TurboConfig::default() }).unwrap()
    }

    fn bpsk_llrs(coded: &[u8], ebn0_db: f64, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
        // Es/N0 per real BPSK symbol = R · Eb/N0, noise variance N0/2 per dim
        let esn0 = rate * 10f64.powf(ebn0_db / 10.0);
        let var = 1.0 / (2.0 * esn0);
        coded
            .iter()
            .map(|&b| {
                let x = if b == 0 { 1.0 } else { -1.0 };
                let y = x + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
                2.0 * y / var
            })
            .collect()
    }

    #[test]
    fn rsc_trellis_matches_hand_table() {
        // (state, input) -> (next, parity) for the (7,5) RSC
        let expect = [
            ((0, 0), (0, 0)),
            ((0, 1), (2, 1)),
            ((1, 0), (2, 0)),
            ((1, 1), (0, 1)),
            ((2, 0), (3, 1)),
            ((2, 1), (1, 0)),
            ((3, 0), (1, 1)),
            ((3, 1), (3, 0)),
        ];
        for ((s, u), (ns, p)) in expect {
            assert_eq!(rsc_step(s, u), (ns, p), "state {s} input {u}");
        }
    }

    #[test]
    fn interleaver_is_a_bijection() {
        let il = Interleaver::new(1024, 9);
        let mut seen = il.permutation().to_vec();
        seen.sort_unstable();
        assert_eq!(seen, (0..1024).collect::<Vec<_>>());
        let x: Vec<usize> = (0..1024).map(|i| i * 7 % 13).collect();
        assert_eq!(il.invert(&il.apply(&x)), x);
    }

    #[test]
    fn coded_length_and_termination() {
        let codec = small(64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bits: Vec<u8> = (0..100).map(|_| rng.gen_range(0..2)).collect();
        let coded = codec.encode(&bits);
        assert_eq!(coded.len(), 2 * (3 * 64 + 8));
        let (_, tail) = rsc_encode(&bits[..64]);
        assert_eq!(&coded[3 * 64..3 * 64 + 4], &tail);
    }

    #[test]
    fn noiseless_llrs_decode_exactly() {
        let codec = small(256);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bits: Vec<u8> = (0..600).map(|_| rng.gen_range(0..2)).collect();
        let llrs: Vec<f64> = codec.encode(&bits).iter().map(|&b| if b == 0 { 40.0 } else { -40.0 }).collect();
        let out = codec.decode(&llrs).unwrap();
        assert_eq!(&out[..600], &bits[..]);
        assert!(out[600..].iter().all(|&b| b == 0));
    }

    #[test]
    fn single_flipped_bit_is_corrected() {
        let codec = small(512);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bits: Vec<u8> = (0..512).map(|_| rng.gen_range(0..2)).collect();
        let coded = codec.encode(&bits);
        for pos in [0, 17, 511, 700, 1300, 1535] {
            let mut llrs: Vec<f64> = coded.iter().map(|&b| if b == 0 { 20.0 } else { -20.0 }).collect();
            llrs[pos] = -llrs[pos];
            assert_eq!(codec.decode(&llrs).unwrap(), bits, "flip at {pos}");
        }
    }

    #[test]
    fn llr_length_mismatch_is_a_framing_error() {
        let codec = small(16);
        assert!(matches!(codec.decode(&[0.0; 10]), Err(Error::Framing(_))));
    }

    #[test]
    fn coding_gain_at_two_db() {
        let codec = small(1024);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20 * 1024;
        let bits: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let llrs = bpsk_llrs(&codec.encode(&bits), 2.0, 1.0 / 3.0, &mut rng);
        let out = codec.decode(&llrs).unwrap();
        let errors = out.iter().zip(&bits).filter(|(a, b)| a != b).count();
        let ber = errors as f64 / n as f64;
        // uncoded BPSK at 2 dB: Q(√(2·10^0.2)) ≈ 0.0375
        assert!(ber < 0.0375 / 10.0, "coded BER {ber}");
    }

    #[test]
    fn all_zero_and_random_codewords_fail_alike() {
        let codec = small(256);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60 * 256;
        let ber = |bits: &[u8], rng: &mut ChaCha8Rng| {
            let llrs = bpsk_llrs(&codec.encode(bits), 0.5, 1.0 / 3.0, rng);
            let out = codec.decode(&llrs).unwrap();
            out.iter().zip(bits).filter(|(a, b)| a != b).count() as f64 / bits.len() as f64
        };
        let zeros = vec![0u8; n];
        let random: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let (bz, br) = (ber(&zeros, &mut rng), ber(&random, &mut rng));
        assert!(bz > 0.0 && br > 0.0);
        let ratio = bz / br;
        assert!((0.5..2.0).contains(&ratio), "zeros {bz} random {br}");
    }
}
