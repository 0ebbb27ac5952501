use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Token ↔ id table with four reserved ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    to_id: HashMap<String, usize>,
    tokens: Vec<String>,
}

const RESERVED: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const START: usize = 1;
    pub const END: usize = 2;
    pub const UNK: usize = 3;

    /// Keeps the `max_size - 4` most frequent tokens (ties broken
    /// lexicographically).
    pub fn build(sentences: &[Vec<String>], max_size: usize) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_size.saturating_sub(RESERVED.len()));
        if ranked.is_empty() {
            return Err(Error::Data("vocabulary would contain no tokens".into()));
        }
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
    }

    fn from_tokens(rest: impl IntoIterator<Item = String>) -> Result<Self> {
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(rest)
            .collect();
        let mut to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if to_id.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocabulary { to_id, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.to_id.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[Self::UNK], String::as_str)
    }

    /// `START ids.. END`.
    pub fn frame(&self, sentence: &[String]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(sentence.len() + 2);
        ids.push(Self::START);
        ids.extend(sentence.iter().map(|t| self.id(t)));
        ids.push(Self::END);
        ids
    }

    /// Inverse of [`frame`](Self::frame): drops START/PAD and stops at END.
    pub fn unframe(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .copied()
            .filter(|&i| i != Self::START && i != Self::PAD)
            .take_while(|&i| i != Self::END)
            .map(|i| self.token(i).to_string())
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (tok, id) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: "expected token<TAB>id".into(),
            })?;
            let id: usize = id.trim().parse().map_err(|_| Error::Parse {
                line: n + 1,
                msg: format!("bad id {id:?}"),
            })?;
            if id != n {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("ids must be consecutive, expected {n}, got {id}"),
                });
            }
            entries.push(tok.to_string());
        }
        if entries.len() <= RESERVED.len() || entries[..RESERVED.len()] != RESERVED {
            return Err(Error::Data("vocabulary file lacks the reserved header tokens".into()));
        }
        Self::from_tokens(entries.into_iter().skip(RESERVED.len()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}
