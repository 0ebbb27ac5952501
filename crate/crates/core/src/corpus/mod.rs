//! Text ingestion: tokenization, length filtering, vocabulary and padded
//! token batches.

pub mod synthetic;
mod vocab;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use vocab::Vocabulary;

use crate::error::{Error, Result};

/// Lowercases, splits on whitespace and makes every character that is
/// neither alphanumeric nor whitespace a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Sentence-length window and split parameters.
#[derive(Clone, Debug)]
pub struct SplitConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub train_ratio: f64,
    pub seed: u64,
}

impl SplitConfig {
    /// 4-36 token sentences, 90/10 split.
    pub fn standard(seed: u64) -> Self {
        SplitConfig {
            min_len: 4,
            max_len: 36,
            train_ratio: 0.9,
            seed,
        }
    }

    /// 37-100 token sentences.
    pub fn long_sentences(seed: u64) -> Self {
        SplitConfig {
            min_len: 37,
            max_len: 100,
            ..Self::standard(seed)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<Vec<String>>,
    pub test: Vec<Vec<String>>,
    /// Sentences dropped by the length window.
    pub excluded: usize,
}

/// Keeps sentences whose token count lies in `[min_len, max_len]` and
/// splits them with a seeded shuffle.
pub fn filter_and_split(sentences: Vec<Vec<String>>, cfg: &SplitConfig) -> Result<Split> {
    if cfg.min_len < 1 || cfg.min_len > cfg.max_len {
        return Err(Error::Config(format!(
            "invalid length window [{}, {}]",
            cfg.min_len, cfg.max_len
        )));
    }
    if !(0.0..=1.0).contains(&cfg.train_ratio) {
        return Err(Error::Config(format!("train ratio {} outside [0, 1]", cfg.train_ratio)));
    }
    let total = sentences.len();
    let mut kept: Vec<Vec<String>> = sentences
        .into_iter()
        .filter(|s| (cfg.min_len..=cfg.max_len).contains(&s.len()))
        .collect();
    if kept.is_empty() {
        return Err(Error::Data(format!(
            "no sentences of {}-{} tokens among {total} input lines",
            cfg.min_len, cfg.max_len
        )));
    }
    let excluded = total - kept.len();
    kept.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_train = ((kept.len() as f64) * cfg.train_ratio).round() as usize;
    let test = kept.split_off(n_train.min(kept.len()));
    Ok(Split {
        train: kept,
        test,
        excluded,
    })
}

/// Reads one sentence per line, tokenized; blank lines are skipped.
pub fn read_corpus(path: &std::path::Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .collect())
}

/// Padded batch of framed sentences (`START tokens.. END PAD..`).
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    /// Row-major `[batch × max_len]`.
    pub ids: Vec<usize>,
    pub batch: usize,
    pub max_len: usize,
    /// Framed length of each row, including START and END.
    pub lengths: Vec<usize>,
    /// True exactly at non-PAD positions.
    pub pad_mask: Vec<bool>,
}

impl TokenBatch {
    pub fn from_sentences(sentences: &[Vec<String>], vocab: &Vocabulary) -> Result<Self> {
        let rows: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.frame(s)).collect();
        Self::from_ids(&rows)
    }

    /// Pads already-framed id rows.
    pub fn from_ids(rows: &[Vec<usize>]) -> Result<Self> {
        if rows.is_empty() || rows.iter().any(Vec::is_empty) {
            return Err(Error::Contract("batch needs at least one non-empty row".into()));
        }
        let max_len = rows.iter().map(Vec::len).max().unwrap_or(0);
        let batch = rows.len();
        let mut ids = vec![Vocabulary::PAD; batch * max_len];
        let mut pad_mask = vec![false; batch * max_len];
        for (b, row) in rows.iter().enumerate() {
            for (t, &id) in row.iter().enumerate() {
                ids[b * max_len + t] = id;
                pad_mask[b * max_len + t] = true;
            }
        }
        Ok(TokenBatch {
            ids,
            batch,
            max_len,
            lengths: rows.iter().map(Vec::len).collect(),
            pad_mask,
        })
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.max_len..b * self.max_len + self.lengths[b]]
    }

    /// Teacher-forcing split: decoder inputs are positions `0..L-1`, targets
    /// are positions `1..L`; `active` marks non-PAD targets.
    pub fn shifted(&self) -> (Vec<usize>, Vec<usize>, Vec<bool>) {
        let l = self.max_len - 1;
        let mut input = Vec::with_capacity(self.batch * l);
        let mut target = Vec::with_capacity(self.batch * l);
        let mut active = Vec::with_capacity(self.batch * l);
        for b in 0..self.batch {
            let row = &self.ids[b * self.max_len..(b + 1) * self.max_len];
            input.extend_from_slice(&row[..l]);
            target.extend_from_slice(&row[1..]);
            active.extend(self.pad_mask[b * self.max_len + 1..(b + 1) * self.max_len].iter());
        }
        (input, target, active)
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.ids.iter().find(|&&id| id >= vocab_size) {
            Some(id) => Err(Error::Data(format!(
                "token id {id} out of range for vocabulary of {vocab_size}"
            ))),
            None => Ok(()),
        }
    }
}

/// Consecutive batches of at most `batch_size` sentences.
pub fn batch(sentences: &[Vec<String>], vocab: &Vocabulary, batch_size: usize) -> Result<Vec<TokenBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    sentences
        .chunks(batch_size)
        .map(|c| TokenBatch::from_sentences(c, vocab))
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Hello, world."), ["hello", ",", "world", "."]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a a a"), ["a", "a", "a"]);
    }

    #[test]
    fn filter_defaults_and_long_mode() {
        let c = SplitConfig::standard(0);
        assert_eq!((c.min_len, c.max_len), (4, 36));
        let l = SplitConfig::long_sentences(0);
        assert_eq!((l.min_len, l.max_len), (37, 100));
        let s = filter_and_split(vec![words("a b c"), words("a b c d")], &c).unwrap();
        assert_eq!(s.excluded, 1);
        assert_eq!(s.train.len() + s.test.len(), 1);
    }

    #[test]
    fn filter_errors() {
        let c = SplitConfig { min_len: 5, max_len: 4, ..SplitConfig::standard(0) };
        assert!(matches!(filter_and_split(vec![], &c), Err(Error::Config(_))));
        let c = SplitConfig::standard(0);
        assert!(matches!(filter_and_split(vec![words("a b")], &c), Err(Error::Data(_))));
    }

    #[test]
    fn split_is_disjoint_cover_and_seeded() {
        let sents: Vec<Vec<String>> = (0..50)
            .map(|i| words(&format!("w{i} x y z")))
            .collect();
        let a = filter_and_split(sents.clone(), &SplitConfig::standard(7)).unwrap();
        let b = filter_and_split(sents.clone(), &SplitConfig::standard(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 45);
        let mut all: Vec<_> = a.train.iter().chain(&a.test).cloned().collect();
        all.sort();
        let mut orig = sents;
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn batch_framing() {
        let vocab = Vocabulary::build(&[words("a b")], 100).unwrap();
        let b = TokenBatch::from_sentences(&[words("a b")], &vocab).unwrap();
        let (a_id, b_id) = (vocab.id("a"), vocab.id("b"));
        assert_eq!(b.ids, vec![Vocabulary::START, a_id, b_id, Vocabulary::END]);
        assert_eq!(vocab.id("zzz"), Vocabulary::UNK);
        let two = TokenBatch::from_sentences(&[words("a b a b"), words("a b a b a b")], &vocab).unwrap();
        assert_eq!(two.max_len, 8);
        assert_eq!(&two.ids[6..8], &[Vocabulary::PAD, Vocabulary::PAD]);
        assert_eq!(two.pad_mask[..8], [true, true, true, true, true, true, false, false]);
        two.check_vocab(vocab.len()).unwrap();
    }

    #[test]
    fn shifted_targets_align() {
        let vocab = Vocabulary::build(&[words("a b")], 100).unwrap();
        let b = TokenBatch::from_sentences(&[words("a"), words("a b")], &vocab).unwrap();
        let (inp, tgt, act) = b.shifted();
        assert_eq!(inp.len(), 2 * 3);
        assert_eq!(inp[0], Vocabulary::START);
        assert_eq!(tgt[..3], [vocab.id("a"), Vocabulary::END, Vocabulary::PAD]);
        assert_eq!(act[..3], [true, true, false]);
    }

    proptest! {
        #[test]
        fn detokenize_roundtrip_up_to_case_and_spacing(s in "[A-Za-z ,.;!?'()-]{0,60}") {
            let round = detokenize(&tokenize(&s));
            let squash = |x: &str| x.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(squash(&round), squash(&s.to_lowercase()));
            prop_assert_eq!(tokenize(&round), tokenize(&s));
        }
    }
}
