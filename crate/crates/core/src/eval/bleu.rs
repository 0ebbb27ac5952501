use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence-level BLEU for a single n-gram order: clipped n-gram precision
/// times the brevity penalty `exp(1 − r/c)` (when `c < r`).
///
/// Conventions: an empty candidate scores 0; zero clipped matches give the
/// precision floor `1/(2·count)`; a candidate too short to hold any n-gram
/// scores 1 if the reference has none either, else 0.
pub fn bleu_n<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::Config(format!("BLEU order must be 1..=4, got {n}")));
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(0.0);
    }
    let r = reference.len();
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let total: usize = cand.values().sum();
    let precision = if total == 0 {
        if refs.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        let matched: usize = cand.iter().map(|(g, &k)| k.min(refs.get(g).copied().unwrap_or(0))).sum();
        if matched == 0 {
            1.0 / (2.0 * total as f64)
        } else {
            matched as f64 / total as f64
        }
    };
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * precision)
}

/// BLEU-1..4 averaged over sentences, and their mean.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub bleu: [f64; 4],
    pub avg_bleu: f64,
    pub n_sentences: usize,
}

pub fn corpus_bleu<T: AsRef<str>>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<BleuReport> {
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut sums = [0.0; 4];
    for (c, r) in candidates.iter().zip(references) {
        for (n, s) in sums.iter_mut().enumerate() {
            *s += bleu_n(c, r, n + 1)?;
        }
    }
    let count = candidates.len();
    let bleu = if count == 0 { [0.0; 4] } else { sums.map(|s| s / count as f64) };
    Ok(BleuReport {
        bleu,
        avg_bleu: bleu.iter().sum::<f64>() / 4.0,
        n_sentences: count,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_sentences_score_one() {
        let s = w("the commission supports the report .");
        for n in 1..=4 {
            assert_eq!(bleu_n(&s, &s, n).unwrap(), 1.0);
        }
        let short = w("yes");
        assert_eq!(bleu_n(&short, &short, 4).unwrap(), 1.0);
    }

    #[test]
    fn clipping_fixture() {
        let got = bleu_n(&w("the the the the"), &w("the cat"), 1).unwrap();
        assert!((got - 0.25).abs() < 1e-9);
    }

    #[test]
    fn brevity_penalty_fixture() {
        let got = bleu_n(&w("the cat"), &w("the cat sat down"), 1).unwrap();
        assert!((got - (-1f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn edge_conventions() {
        let empty: Vec<String> = vec![];
        assert_eq!(bleu_n(&empty, &w("a b"), 1).unwrap(), 0.0);
        // no bigram matches among 3 candidate bigrams -> floor 1/6
        assert!((bleu_n(&w("a b c d"), &w("d c b a"), 2).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(bleu_n(&w("a"), &w("a b"), 2).unwrap(), 0.0);
        assert!(bleu_n(&w("a"), &w("a"), 5).is_err());
    }

    #[test]
    fn corpus_report_averages() {
        let cands = vec![w("a b c d"), w("the the the the")];
        let refs = vec![w("a b c d"), w("the cat")];
        let r = corpus_bleu(&cands, &refs).unwrap();
        assert!((r.bleu[0] - (1.0 + 0.25) / 2.0).abs() < 1e-12);
        assert!((r.avg_bleu - r.bleu.iter().sum::<f64>() / 4.0).abs() < 1e-15);
        assert_eq!(r.n_sentences, 2);
        assert!(corpus_bleu(&cands, &refs[..1]).is_err());
    }

    #[test]
    fn corruption_lowers_scores_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reference = w("we must strengthen the common policy on the protection of workers in all regions .");
        let vocab = w("alpha beta gamma delta epsilon zeta eta theta iota kappa");
        let mut last = [f64::INFINITY; 4];
        for rate in [0.0, 0.1, 0.2, 0.3, 0.4, 0.5] {
            let mut mean = [0.0; 4];
            for _ in 0..100 {
                let cand: Vec<String> = reference
                    .iter()
                    .map(|t| if rng.gen_bool(rate) { vocab[rng.gen_range(0..vocab.len())].clone() } else { t.clone() })
                    .collect();
                for (n, m) in mean.iter_mut().enumerate() {
                    *m += bleu_n(&cand, &reference, n + 1).unwrap() / 100.0;
                }
            }
            for n in 0..4 {
                assert!(mean[n] <= last[n] + 1e-12, "rate {rate} order {}", n + 1);
            }
            last = mean;
        }
    }

    proptest! {
        #[test]
        fn renaming_tokens_keeps_scores(c in proptest::collection::vec(0u8..6, 0..12), r in proptest::collection::vec(0u8..6, 1..12), shift in 1u8..6) {
            let name = |x: u8| format!("t{x}");
            let rename = |x: u8| format!("t{}", (x + shift) % 6);
            let (c1, r1): (Vec<String>, Vec<String>) = (c.iter().map(|&x| name(x)).collect(), r.iter().map(|&x| name(x)).collect());
            let (c2, r2): (Vec<String>, Vec<String>) = (c.iter().map(|&x| rename(x)).collect(), r.iter().map(|&x| rename(x)).collect());
            for n in 1..=4 {
                let a = bleu_n(&c1, &r1, n).unwrap();
                prop_assert_eq!(a, bleu_n(&c2, &r2, n).unwrap());
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }
    }
}
