//! Learned semantic transmission of text over noisy channels.
//!
//! A dual-attention Transformer codec (spatial self-attention fused with a
//! multi-kernel channel-wise attention branch) trained end to end through
//! simulated AWGN and Rayleigh block-fading channels, next to a classical
//! Huffman + Turbo + QPSK chain and a BLEU / sentence-similarity harness.

pub mod error;
pub mod tensor;
pub mod corpus;
pub mod channel;
pub mod cli;
pub mod model;
pub mod semcodec;
pub mod chancodec;
pub mod trainer;
pub mod baseline;
pub mod eval;

pub use error::{Error, Result};
