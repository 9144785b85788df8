//! Tokenizers for the two encoder flavours.
//!
//! Both use the XLM-R special-token layout: `<s>`=0, `<pad>`=1, `</s>`=2,
//! `<unk>`=3.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::seed::fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub cls: u32,
    pub pad: u32,
    pub sep: u32,
    pub unk: u32,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            cls: 0,
            pad: 1,
            sep: 2,
            unk: 3,
        }
    }
}

const FIRST_HASHED_ID: u32 = 4;

/// Word-level tokenizer that hashes each token into a fixed id range. Latin
/// words split on non-alphanumerics, punctuation is kept as single tokens,
/// and CJK ideographs are one token each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedTokenizer {
    pub vocab_size: usize,
    pub lowercase: bool,
}

impl HashedTokenizer {
    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size <= FIRST_HASHED_ID as usize {
            return Err(Error::Config(format!(
                "vocab_size must exceed {FIRST_HASHED_ID}, got {vocab_size}"
            )));
        }
        Ok(Self {
            vocab_size,
            lowercase: true,
        })
    }

    pub fn pieces(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<String>| {
            if !word.is_empty() {
                out.push(std::mem::take(word));
            }
        };
        for c in text.chars() {
            if is_cjk(c) {
                flush(&mut word, &mut out);
                out.push(c.to_string());
            } else if c.is_alphanumeric() || c == '\'' {
                if self.lowercase {
                    word.extend(c.to_lowercase());
                } else {
                    word.push(c);
                }
            } else if c.is_whitespace() {
                flush(&mut word, &mut out);
            } else {
                flush(&mut word, &mut out);
                out.push(c.to_string());
            }
        }
        flush(&mut word, &mut out);
        out
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let span = (self.vocab_size as u64) - u64::from(FIRST_HASHED_ID);
        self.pieces(text)
            .iter()
            .map(|p| FIRST_HASHED_ID + (fnv1a(p.as_bytes()) % span) as u32)
            .collect()
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2FA1F
        | 0x3040..=0x30FF | 0xAC00..=0xD7AF | 0x3000..=0x303F | 0xFF00..=0xFFEF)
}

const WORD_MARK: char = '\u{2581}';

/// SentencePiece unigram model loaded from a `tokenizer.json`: whitespace
/// pre-splitting with a `▁` word marker, then Viterbi segmentation maximising
/// the summed piece log-probabilities. Consecutive unknown characters fuse
/// into one `<unk>`.
#[derive(Debug, Clone)]
pub struct UnigramTokenizer {
    pieces: HashMap<String, (u32, f64)>,
    max_piece_chars: usize,
    unk_score: f64,
    specials: SpecialTokens,
    vocab_size: usize,
}

impl UnigramTokenizer {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let json: Value = serde_json::from_str(&text)
            .map_err(|e| Error::json(format!("parsing {}", path.display()), e))?;
        Self::from_json(&json).map_err(|e| Error::Model(format!("{}: {e}", path.display())))
    }

    pub fn from_json(json: &Value) -> Result<Self> {
        let model = json.get("model").unwrap_or(json);
        if model.get("type").and_then(Value::as_str) != Some("Unigram") {
            return Err(Error::Model("tokenizer model type must be Unigram".into()));
        }
        let vocab = model
            .get("vocab")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Model("tokenizer vocab missing".into()))?;
        let mut pieces = HashMap::with_capacity(vocab.len());
        let mut min_score = f64::INFINITY;
        let mut max_piece_chars = 1;
        for (id, entry) in vocab.iter().enumerate() {
            let (piece, score) = entry
                .as_array()
                .and_then(|e| Some((e.first()?.as_str()?, e.get(1)?.as_f64()?)))
                .ok_or_else(|| Error::Model(format!("bad vocab entry {id}")))?;
            min_score = min_score.min(score);
            max_piece_chars = max_piece_chars.max(piece.chars().count());
            pieces.entry(piece.to_string()).or_insert((id as u32, score));
        }
        let lookup = |p: &str, fallback: u32| pieces.get(p).map_or(fallback, |&(id, _)| id);
        let unk_id = model
            .get("unk_id")
            .and_then(Value::as_u64)
            .map_or_else(|| lookup("<unk>", 3), |id| id as u32);
        let specials = SpecialTokens {
            cls: lookup("<s>", 0),
            pad: lookup("<pad>", 1),
            sep: lookup("</s>", 2),
            unk: unk_id,
        };
        Ok(Self {
            vocab_size: vocab.len(),
            pieces,
            max_piece_chars,
            unk_score: min_score - 10.0,
            specials,
        })
    }

    pub fn specials(&self) -> SpecialTokens {
        self.specials
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            let marked: String = std::iter::once(WORD_MARK).chain(word.chars()).collect();
            self.segment(&marked, &mut ids);
        }
        ids
    }

    fn segment(&self, word: &str, out: &mut Vec<u32>) {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let n = bounds.len() - 1;
        // best[i] = (score, start char, token id) of the best path ending at char i
        let mut best: Vec<(f64, usize, u32)> = vec![(f64::NEG_INFINITY, 0, 0); n + 1];
        best[0].0 = 0.0;
        for start in 0..n {
            let base = best[start].0;
            if base == f64::NEG_INFINITY {
                continue;
            }
            let mut matched_single = false;
            for end in start + 1..=n.min(start + self.max_piece_chars) {
                if let Some(&(id, score)) = self.pieces.get(&word[bounds[start]..bounds[end]]) {
                    matched_single |= end == start + 1;
                    if base + score > best[end].0 {
                        best[end] = (base + score, start, id);
                    }
                }
            }
            if !matched_single && base + self.unk_score > best[start + 1].0 {
                best[start + 1] = (base + self.unk_score, start, self.specials.unk);
            }
        }
        let mut path = Vec::new();
        let mut end = n;
        while end > 0 {
            let (_, start, id) = best[end];
            path.push(id);
            end = start;
        }
        let mut prev_unk = false;
        for id in path.into_iter().rev() {
            let is_unk = id == self.specials.unk;
            if !(is_unk && prev_unk) {
                out.push(id);
            }
            prev_unk = is_unk;
        }
    }
}

#[derive(Debug, Clone)]
pub enum Tokenizer {
    Hashed(HashedTokenizer),
    Unigram(UnigramTokenizer),
}

impl Tokenizer {
    pub fn encode(&self, text: &str) -> Vec<u32> {
        match self {
            Tokenizer::Hashed(t) => t.encode(text),
            Tokenizer::Unigram(t) => t.encode(text),
        }
    }

    pub fn specials(&self) -> SpecialTokens {
        match self {
            Tokenizer::Hashed(_) => SpecialTokens::default(),
            Tokenizer::Unigram(t) => t.specials(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hashed_pieces_split_words_punct_and_cjk() {
        let t = HashedTokenizer::new(1000).unwrap();
        assert_eq!(
            t.pieces("The food was AMAZING!!"),
            vec!["the", "food", "was", "amazing", "!", "!"]
        );
        assert_eq!(t.pieces("服务很好"), vec!["服", "务", "很", "好"]);
        assert_eq!(t.pieces("  "), Vec::<String>::new());
        let ids = t.encode("food food");
        assert_eq!(ids[0], ids[1]);
        assert!(ids.iter().all(|&i| (4..1000).contains(&i)));
        assert!(HashedTokenizer::new(4).is_err());
    }

    fn toy_unigram() -> UnigramTokenizer {
        let tok = json!({"model": {"type": "Unigram", "unk_id": 3, "vocab": [
            ["<s>", 0.0], ["<pad>", 0.0], ["</s>", 0.0], ["<unk>", 0.0],
            ["\u{2581}the", -1.0], ["\u{2581}", -2.0], ["food", -3.0],
            ["\u{2581}food", -2.5], ["f", -4.0], ["o", -4.0], ["d", -4.0], ["\u{2581}goo", -3.0]
        ]}});
        UnigramTokenizer::from_json(&tok).unwrap()
    }

    #[test]
    fn unigram_viterbi_prefers_best_path() {
        let t = toy_unigram();
        // "▁food" as one piece (-2.5) beats "▁"+"food" (-5.0)
        assert_eq!(t.encode("the food"), vec![4, 7]);
        assert_eq!(t.specials(), SpecialTokens::default());
    }

    #[test]
    fn unigram_unknowns_fuse() {
        let t = toy_unigram();
        // "▁xyz": ▁ known, x y z unknown -> one fused <unk>
        assert_eq!(t.encode("xyz"), vec![5, 3]);
        assert_eq!(t.encode("goo"), vec![11]);
        assert!(t.encode("").is_empty());
    }

    #[test]
    fn unigram_requires_model_type() {
        assert!(UnigramTokenizer::from_json(&json!({"model": {"type": "BPE"}})).is_err());
    }
}
