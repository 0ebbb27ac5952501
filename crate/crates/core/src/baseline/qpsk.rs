//! Gray-mapped QPSK: bit pair `(b0, b1)` → `((1 − 2b0) + j(1 − 2b1)) / √2`.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Smallest noise variance used when forming LLRs, so a noiseless link gives
/// large but finite values.
const MIN_NOISE_VAR: f64 = 1e-12;

pub fn modulate(bits: &[u8]) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(2) {
        return Err(Error::Framing(format!("QPSK needs an even number of bits, got {}", bits.len())));
    }
    let a = std::f64::consts::FRAC_1_SQRT_2;
    Ok(bits
        .chunks_exact(2)
        .map(|p| Complex64::new(a * (1.0 - 2.0 * p[0] as f64), a * (1.0 - 2.0 * p[1] as f64)))
        .collect())
}

/// Exact per-bit LLRs `ln P(0)/P(1)` for Gray QPSK in complex Gaussian noise
/// of variance `noise_var` (per complex symbol): `2√2·Re(y)/σ²` and
/// `2√2·Im(y)/σ²`.
pub fn demodulate_soft(y: &[Complex64], noise_var: f64) -> Vec<f64> {
    let s = 2.0 * std::f64::consts::SQRT_2 / noise_var.max(MIN_NOISE_VAR);
    y.iter().flat_map(|c| [s * c.re, s * c.im]).collect()
}

/// Per-symbol noise variances, e.g. `σ²/|h|²` after zero-forcing.
pub fn demodulate_soft_varying(y: &[Complex64], noise_var: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(noise_var)
        .flat_map(|(c, &v)| {
            let s = 2.0 * std::f64::consts::SQRT_2 / v.max(MIN_NOISE_VAR);
            [s * c.re, s * c.im]
        })
        .collect()
}

pub fn hard_decisions(llrs: &[f64]) -> Vec<u8> {
    llrs.iter().map(|&l| (l < 0.0) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_have_unit_power() {
        let bits = [0, 0, 0, 1, 1, 0, 1, 1];
        for s in modulate(&bits).unwrap() {
            assert!((s.norm_sqr() - 1.0).abs() < 1e-15);
        }
        assert!(modulate(&[1]).is_err());
    }

    #[test]
    fn noiseless_signs_recover_bits() {
        let bits = [0, 1, 1, 1, 0, 0, 1, 0];
        let y = modulate(&bits).unwrap();
        assert_eq!(hard_decisions(&demodulate_soft(&y, 0.0)), bits);
        assert!(demodulate_soft(&y, 0.0).iter().all(|l| l.is_finite()));
    }

    #[test]
    fn llr_matches_gaussian_likelihood_ratio() {
        // per-dimension variance σ²/2, amplitudes ±1/√2
        let var = 0.7;
        let y = Complex64::new(0.31, -0.52);
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let lik = |v: f64, m: f64| (-(v - m).powi(2) / var).exp();
        let want0 = (lik(y.re, a) / lik(y.re, -a)).ln();
        let want1 = (lik(y.im, a) / lik(y.im, -a)).ln();
        let got = demodulate_soft(&[y], var);
        assert!((got[0] - want0).abs() < 1e-12 && (got[1] - want1).abs() < 1e-12);
        assert!((got[0] - 2.0 * std::f64::consts::SQRT_2 * y.re / var).abs() < 1e-12);
    }
}
