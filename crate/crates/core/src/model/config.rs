use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer sizes of the semantic and channel codecs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Dual-attention layers in the encoder and in the decoder.
    pub layers: usize,
    pub d_ff: usize,
    /// Kernel sizes of the parallel convolution banks in the channel branch.
    pub kernel_sizes: Vec<usize>,
    /// Bottleneck ratio of the channel gate (`d → d/r → d`).
    pub reduction: usize,
    /// Transmitter hidden dense width.
    pub tx_hidden: usize,
    /// Complex channel symbols emitted per token.
    pub symbols_per_token: usize,
    /// Receiver hidden dense widths; the output width is `d_model`.
    pub rx_hidden: Vec<usize>,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 22_000,
            d_model: 128,
            heads: 8,
            layers: 3,
            d_ff: 512,
            kernel_sizes: vec![3, 5, 7],
            reduction: 8,
            tx_hidden: 256,
            symbols_per_token: 8,
            rx_hidden: vec![128, 512],
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Small model used for quick experiments and tests.
    pub fn tiny(vocab_size: usize, d_model: usize, layers: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model,
            heads: 4,
            layers,
            d_ff: 2 * d_model,
            reduction: 4,
            tx_hidden: 2 * d_model,
            rx_hidden: vec![d_model, 2 * d_model],
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 5 {
            return fail(format!("vocabulary size {} < 5", self.vocab_size));
        }
        if self.d_model == 0 || self.heads == 0 || self.layers == 0 || self.d_ff == 0 {
            return fail("model dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return fail(format!("{} heads do not divide d_model {}", self.heads, self.d_model));
        }
        if self.reduction == 0 || !self.d_model.is_multiple_of(self.reduction) {
            return fail(format!("reduction {} must divide d_model {}", self.reduction, self.d_model));
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.iter().any(|k| k % 2 == 0) {
            return fail(format!("kernel sizes must be odd and non-empty, got {:?}", self.kernel_sizes));
        }
        if self.symbols_per_token == 0 || self.tx_hidden == 0 || self.rx_hidden.contains(&0) {
            return fail("channel codec widths must be positive".into());
        }
        if !(self.ln_eps > 0.0) {
            return fail("ln_eps must be > 0".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_layout() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!((c.heads, c.layers, c.d_model, c.d_ff), (8, 3, 128, 512));
        assert_eq!(c.kernel_sizes, [3, 5, 7]);
        assert_eq!((c.tx_hidden, 2 * c.symbols_per_token), (256, 16));
        assert_eq!(c.rx_hidden, [128, 512]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ModelConfig::default();
        c.heads = 7;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.kernel_sizes = vec![3, 4];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.reduction = 3;
        assert!(c.validate().is_err());
    }
}
