//! Word-level Huffman code with an end-of-sentence symbol and a byte escape
//! for words that were not seen while building the codebook.
//!
//! An escaped word is sent as `<esc>`, an 8-bit byte count and its UTF-8
//! bytes, most significant bit first.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;

use crate::error::{Error, Result};

pub const ESCAPE: &str = "<esc>";
pub const END_OF_SENTENCE: &str = "</s>";

#[derive(Clone, Debug, PartialEq)]
pub struct HuffmanCodebook {
    codes: BTreeMap<String, Vec<bool>>,
    trie: Vec<TrieNode>,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct TrieNode {
    next: [Option<usize>; 2],
    symbol: Option<String>,
}

impl HuffmanCodebook {
    /// Optimal prefix code for the given counts. Ties are broken by symbol
    /// order so the result is deterministic. A lone symbol gets the code `0`.
    pub fn from_counts<I, S>(counts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut merged: BTreeMap<String, u64> = BTreeMap::new();
        for (s, c) in counts {
            *merged.entry(s.into()).or_default() += c;
        }
        if merged.is_empty() {
            return Err(Error::Encoding("cannot build a code for an empty alphabet".into()));
        }
        let symbols: Vec<String> = merged.keys().cloned().collect();
        let mut codes: BTreeMap<String, Vec<bool>> = BTreeMap::new();
        if symbols.len() == 1 {
            codes.insert(symbols[0].clone(), vec![false]);
            return Self::from_codes(codes);
        }

        // children[i] for internal node i (offset by the leaf count)
        let n = symbols.len();
        let mut children: Vec<(usize, usize)> = Vec::new();
        let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
            merged.values().enumerate().map(|(i, &c)| Reverse((c.max(1), i))).collect();
        while heap.len() > 1 {
            let Reverse((c0, a)) = heap.pop().expect("len > 1");
            let Reverse((c1, b)) = heap.pop().expect("len > 1");
            children.push((a, b));
            heap.push(Reverse((c0 + c1, n + children.len() - 1)));
        }
        let root = heap.pop().expect("one node left").0 .1;
        let mut stack = vec![(root, Vec::new())];
        while let Some((node, prefix)) = stack.pop() {
            if node < n {
                codes.insert(symbols[node].clone(), prefix);
            } else {
                let (a, b) = children[node - n];
                let mut left = prefix.clone();
                left.push(false);
                let mut right = prefix;
                right.push(true);
                stack.push((a, left));
                stack.push((b, right));
            }
        }
        Self::from_codes(codes)
    }

    /// Word counts over the training sentences, plus the escape and
    /// end-of-sentence symbols.
    pub fn from_corpus(sentences: &[Vec<String>]) -> Result<Self> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
        counts.insert(END_OF_SENTENCE.into(), sentences.len().max(1) as u64);
        counts.insert(ESCAPE.into(), 1);
        Self::from_counts(counts)
    }

    /// Validates that `codes` is prefix-free and builds the decoding trie.
    pub fn from_codes(codes: BTreeMap<String, Vec<bool>>) -> Result<Self> {
        let mut trie = vec![TrieNode::default()];
        for (sym, code) in &codes {
            if code.is_empty() {
                return Err(Error::Encoding(format!("empty codeword for {sym:?}")));
            }
            let mut at = 0;
            for &bit in code {
                if trie[at].symbol.is_some() {
                    return Err(Error::Encoding(format!("codeword of {sym:?} extends another codeword")));
                }
                at = match trie[at].next[bit as usize] {
                    Some(i) => i,
                    None => {
                        trie.push(TrieNode::default());
                        let i = trie.len() - 1;
                        trie[at].next[bit as usize] = Some(i);
                        i
                    }
                };
            }
            if trie[at].symbol.is_some() || trie[at].next.iter().any(Option::is_some) {
                return Err(Error::Encoding(format!("codeword of {sym:?} is a prefix of another")));
            }
            trie[at].symbol = Some(sym.clone());
        }
        Ok(HuffmanCodebook { codes, trie })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, symbol: &str) -> Option<&[bool]> {
        self.codes.get(symbol).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<bool>)> {
        self.codes.iter()
    }

    fn push_escaped(&self, token: &str, out: &mut Vec<bool>) -> Result<()> {
        let esc = self
            .code(ESCAPE)
            .ok_or_else(|| Error::Encoding(format!("{token:?} is not in the codebook and no escape exists")))?;
        let bytes = token.as_bytes();
        if bytes.len() > 255 {
            return Err(Error::Encoding(format!("token of {} bytes is too long to escape", bytes.len())));
        }
        out.extend_from_slice(esc);
        for &byte in std::iter::once(&(bytes.len() as u8)).chain(bytes) {
            out.extend((0..8).rev().map(|k| byte >> k & 1 == 1));
        }
        Ok(())
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Vec<bool>> {
        let mut out = Vec::new();
        for t in tokens {
            match self.codes.get(t) {
                Some(code) if t != ESCAPE && t != END_OF_SENTENCE => out.extend_from_slice(code),
                _ => self.push_escaped(t, &mut out)?,
            }
        }
        Ok(out)
    }

    /// `tokens` followed by the end-of-sentence codeword (when the codebook
    /// has one).
    pub fn encode_sentence(&self, tokens: &[String]) -> Result<Vec<bool>> {
        let mut bits = self.encode(tokens)?;
        if let Some(eos) = self.code(END_OF_SENTENCE) {
            bits.extend_from_slice(eos);
        }
        Ok(bits)
    }

    /// Greedy prefix decoding. Stops at end-of-sentence; an incomplete
    /// trailing codeword (or escape) is dropped.
    pub fn decode(&self, bits: &[bool]) -> Vec<String> {
        let mut out = Vec::new();
        let mut i = 0;
        'outer: while i < bits.len() {
            let mut at = 0;
            let symbol = loop {
                if let Some(s) = &self.trie[at].symbol {
                    break s;
                }
                if i >= bits.len() {
                    break 'outer;
                }
                match self.trie[at].next[bits[i] as usize] {
                    Some(next) => at = next,
                    // Unused branch of an incomplete code: restart at the root.
                    None => at = 0,
                }
                i += 1;
            };
            match symbol.as_str() {
                END_OF_SENTENCE => break,
                ESCAPE => {
                    let read_byte = |from: usize| -> Option<u8> {
                        bits.get(from..from + 8).map(|b| b.iter().fold(0u8, |acc, &x| acc << 1 | x as u8))
                    };
                    let Some(n) = read_byte(i) else { break };
                    i += 8;
                    let mut bytes = Vec::with_capacity(n as usize);
                    for _ in 0..n {
                        let Some(b) = read_byte(i) else { break 'outer };
                        bytes.push(b);
                        i += 8;
                    }
                    out.push(String::from_utf8_lossy(&bytes).into_owned());
                }
                _ => out.push(symbol.clone()),
            }
        }
        out
    }

    /// `token<TAB>bitstring` lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (t, code) in &self.codes {
            s.push_str(t);
            s.push('\t');
            s.extend(code.iter().map(|&b| if b { '1' } else { '0' }));
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut codes = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parse = |msg: &str| Error::Parse { line: n + 1, msg: msg.to_string() };
            let (tok, bits) = line.split_once('\t').ok_or_else(|| parse("expected token<TAB>bits"))?;
            let code = bits
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(parse("codeword must be 0/1")),
                })
                .collect::<Result<Vec<bool>>>()?;
            if codes.insert(tok.to_string(), code).is_some() {
                return Err(parse("duplicate token"));
            }
        }
        Self::from_codes(codes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}
