//! Dense channel encoder and decoder around the physical channel.
//!
//! Transmitter, per token: `d → tx_hidden (ReLU) → 2·M_t` reals, read as
//! `M_t` complex symbols (even index real, odd index imaginary), then scaled
//! so the batch has unit average symbol power. Receiver: `2·M_t → rx_hidden…
//! (ReLU) → d`.

use crate::channel::SymbolFrame;
use crate::error::{Error, Result};
use crate::model::{Bound, ModelConfig};
use crate::tensor::Var;

/// `[B, L, d]` features to `[B, L, 2·M_t]` interleaved symbols with unit
/// average power over the tokens marked in `active`. Padded tokens are
/// silenced (all-zero symbols).
pub fn channel_encode<'t>(features: Var<'t>, active: &[bool], p: &Bound<'t>, cfg: &ModelConfig) -> Result<Var<'t>> {
    let s = features.shape();
    if s.len() != 3 || s[2] != cfg.d_model {
        return Err(Error::dim("channel_encode", &s, &[0, 0, cfg.d_model]));
    }
    if active.len() != s[0] * s[1] {
        return Err(Error::dim("channel_encode mask", &s[..2], &[active.len()]));
    }
    let m2 = 2 * cfg.symbols_per_token;
    let raw = features
        .dense(p.get("tx.w1")?, Some(p.get("tx.b1")?))?
        .relu()
        .dense(p.get("tx.w2")?, Some(p.get("tx.b2")?))?;
    let mask: Vec<f64> = active
        .iter()
        .flat_map(|&a| std::iter::repeat_n(if a { 1.0 } else { 0.0 }, m2))
        .collect();
    raw.normalize_power(Some(&mask), 1.0)
}

/// `[B, L, 2·M_t]` received (equalized) symbols to `[B, L, d]` features.
pub fn channel_decode<'t>(received: Var<'t>, p: &Bound<'t>, cfg: &ModelConfig) -> Result<Var<'t>> {
    let s = received.shape();
    if s.len() != 3 || s[2] != 2 * cfg.symbols_per_token {
        return Err(Error::Framing(format!(
            "receiver expects [B, L, {}] symbol reals, got {s:?}",
            2 * cfg.symbols_per_token
        )));
    }
    let mut x = received;
    for j in 0..cfg.rx_hidden.len() {
        x = x.dense(p.get(&format!("rx.w{j}"))?, Some(p.get(&format!("rx.b{j}"))?))?.relu();
    }
    let last = cfg.rx_hidden.len();
    x.dense(p.get(&format!("rx.w{last}"))?, Some(p.get(&format!("rx.b{last}"))?))
}

/// Packs an encoded `[B, L, 2·M_t]` tensor into a complex frame.
pub fn to_frame(encoded: Var<'_>, active: &[bool]) -> Result<SymbolFrame> {
    SymbolFrame::from_interleaved(&encoded.value(), active.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamStore;
    use crate::tensor::{gradcheck, Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize) -> (ModelConfig, ParamStore) {
        let cfg = ModelConfig::tiny(12, d, 1);
        let params = ParamStore::init(&cfg, 3).unwrap();
        (cfg, params)
    }

    #[test]
    fn eight_complex_symbols_per_token_at_unit_power() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.symbols_per_token, 8);
        let (cfg, params) = setup(16);
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = tape.constant(gradcheck::randn(&[2, 5, 16], &mut rng));
        let active = [true, true, true, false, false, true, true, true, true, true];
        let x = channel_encode(z, &active, &p, &cfg).unwrap();
        assert_eq!(x.shape(), vec![2, 5, 16]);
        let frame = to_frame(x, &active).unwrap();
        assert_eq!(frame.per_token, 8);
        assert!((frame.mean_power() - 1.0).abs() < 1e-6);
        for t in [3, 4] {
            assert!(frame.symbols[t * 8..(t + 1) * 8].iter().all(|c| c.norm() == 0.0));
        }
    }

    #[test]
    fn zero_weights_are_a_numerical_error() {
        let (cfg, mut params) = setup(8);
        for (name, t) in params.iter_mut() {
            if name.starts_with("tx.") {
                *t = Tensor::zeros(t.shape());
            }
        }
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let z = tape.constant(Tensor::full(&[1, 3, 8], 0.7));
        assert!(matches!(channel_encode(z, &[true; 3], &p, &cfg), Err(Error::Numerical(_))));
    }

    #[test]
    fn decode_restores_feature_shape() {
        let (cfg, params) = setup(16);
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = tape.constant(gradcheck::randn(&[3, 4, 16], &mut rng));
        let x = channel_encode(z, &[true; 12], &p, &cfg).unwrap();
        assert_eq!(channel_decode(x, &p, &cfg).unwrap().shape(), z.shape());
        let bad = tape.constant(Tensor::zeros(&[3, 4, 10]));
        assert!(matches!(channel_decode(bad, &p, &cfg), Err(Error::Framing(_))));
    }

    #[test]
    fn codec_gradient_matches_finite_differences() {
        let (cfg, params) = setup(8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = gradcheck::randn(&[2, 3, 8], &mut rng);
        let active = [true, true, false, true, true, true];
        let r = gradcheck::check("chancodec", &[z], 1e-5, Some(64), &mut rng, |tape, xs| {
            let p = params.bind(tape, false);
            let x = channel_encode(xs[0], &active, &p, &cfg)?;
            let y = channel_decode(x, &p, &cfg)?;
            gradcheck::weighted_sum(y, 9)
        })
        .unwrap();
        assert!(r.passed(1e-4), "{r:?}");
    }
}
