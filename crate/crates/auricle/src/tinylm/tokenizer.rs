//! Character-level tokenizer with an extendable special-token vocabulary.
//!
//! Special tokens are matched greedily (longest first) and always tokenize as
//! a single id; they can never be produced by text that does not contain
//! their literal spelling.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK_ID: u32 = 0;
pub const EOS_ID: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    /// id -> piece text. Reserved pieces first, then single characters, then
    /// special tokens in registration order.
    pieces: Vec<String>,
    char_ids: HashMap<char, u32>,
    /// (literal, id) sorted by descending literal length for greedy matching.
    specials: Vec<(String, u32)>,
    base_len: usize,
}

impl Tokenizer {
    /// Base vocabulary: `<unk>`, `<eos>`, printable ASCII and newline.
    pub fn ascii() -> Tokenizer {
        let mut pieces = vec!["<unk>".to_string(), "<eos>".to_string()];
        let mut char_ids = HashMap::new();
        for ch in (' '..='~').chain(std::iter::once('\n')) {
            char_ids.insert(ch, pieces.len() as u32);
            pieces.push(ch.to_string());
        }
        let base_len = pieces.len();
        Tokenizer {
            pieces,
            char_ids,
            specials: Vec::new(),
            base_len,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn base_len(&self) -> usize {
        self.base_len
    }

    pub fn eos_id(&self) -> u32 {
        EOS_ID
    }

    /// Registered special-token literals in id order.
    pub fn special_tokens(&self) -> Vec<String> {
        self.pieces[self.base_len..].to_vec()
    }

    /// Returns a tokenizer with `tokens` appended as atomic special tokens.
    /// New ids are contiguous, starting at the previous vocabulary size.
    pub fn with_special_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Tokenizer> {
        let mut next = self.clone();
        for token in tokens {
            let token = token.as_ref();
            if token.is_empty() {
                return Err(Error::TokenizerContract("empty special token".into()));
            }
            if next.pieces.iter().any(|p| p == token) {
                return Err(Error::TokenConflict(token.to_string()));
            }
            let id = next.pieces.len() as u32;
            next.pieces.push(token.to_string());
            next.specials.push((token.to_string(), id));
        }
        next.specials
            .sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(next)
    }

    pub fn token_id(&self, piece: &str) -> Option<u32> {
        if let Some((_, id)) = self.specials.iter().find(|(p, _)| p == piece) {
            return Some(*id);
        }
        let mut chars = piece.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => self.char_ids.get(&c).copied(),
            _ => None,
        }
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_with_offsets(text)
            .into_iter()
            .map(|(id, _)| id)
            .collect()
    }

    /// Tokenizes and reports each token's byte range in `text`.
    pub fn encode_with_offsets(&self, text: &str) -> Vec<(u32, Range<usize>)> {
        let mut out = Vec::new();
        let bytes = text.as_bytes();
        let mut pos = 0usize;
        'outer: while pos < bytes.len() {
            for (literal, id) in &self.specials {
                if bytes[pos..].starts_with(literal.as_bytes()) {
                    out.push((*id, pos..pos + literal.len()));
                    pos += literal.len();
                    continue 'outer;
                }
            }
            let ch = text[pos..].chars().next().expect("in-bounds char");
            let len = ch.len_utf8();
            let id = self.char_ids.get(&ch).copied().unwrap_or(UNK_ID);
            out.push((id, pos..pos + len));
            pos += len;
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                UNK_ID => out.push('\u{FFFD}'),
                EOS_ID => {}
                _ => match self.pieces.get(id as usize) {
                    Some(piece) => out.push_str(piece),
                    None => out.push('\u{FFFD}'),
                },
            }
        }
        out
    }

    pub fn state(&self) -> TokenizerState {
        TokenizerState {
            base: "ascii-v1".to_string(),
            special_tokens: self.special_tokens(),
        }
    }

    pub fn from_state(state: &TokenizerState) -> Result<Tokenizer> {
        if state.base != "ascii-v1" {
            return Err(Error::Config(format!(
                "unknown tokenizer base '{}'",
                state.base
            )));
        }
        Tokenizer::ascii().with_special_tokens(&state.special_tokens)
    }
}

/// Serializable tokenizer description stored inside checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerState {
    pub base: String,
    pub special_tokens: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spanprep::{CLOSE_DELIM, OPEN_DELIM};
    use proptest::prelude::*;

    fn imagine_tokenizer() -> Tokenizer {
        Tokenizer::ascii()
            .with_special_tokens(&[OPEN_DELIM, CLOSE_DELIM])
            .unwrap()
    }

    #[test]
    fn special_ids_are_appended_contiguously() {
        let base = Tokenizer::ascii();
        let v = base.vocab_size() as u32;
        let tok = imagine_tokenizer();
        assert_eq!(tok.token_id(OPEN_DELIM), Some(v));
        assert_eq!(tok.token_id(CLOSE_DELIM), Some(v + 1));
        assert_eq!(tok.vocab_size(), base.vocab_size() + 2);
    }

    #[test]
    fn special_token_encodes_atomically() {
        let tok = imagine_tokenizer();
        let ids = tok.encode(OPEN_DELIM);
        assert_eq!(ids, vec![tok.token_id(OPEN_DELIM).unwrap()]);
    }

    #[test]
    fn special_token_inside_text() {
        let tok = imagine_tokenizer();
        let ids = tok.encode(&format!("x {OPEN_DELIM} y"));
        let open = tok.token_id(OPEN_DELIM).unwrap();
        assert_eq!(
            ids,
            vec![
                tok.token_id("x").unwrap(),
                tok.token_id(" ").unwrap(),
                open,
                tok.token_id(" ").unwrap(),
                tok.token_id("y").unwrap(),
            ]
        );
    }

    #[test]
    fn duplicate_special_is_conflict() {
        let tok = imagine_tokenizer();
        assert!(tok.with_special_tokens(&[OPEN_DELIM]).is_err());
    }

    #[test]
    fn decode_restores_special_literals() {
        let tok = imagine_tokenizer();
        let text = format!("{OPEN_DELIM}abc{CLOSE_DELIM}");
        assert_eq!(tok.decode(&tok.encode(&text)), text);
    }

    #[test]
    fn offsets_cover_text() {
        let tok = imagine_tokenizer();
        let text = format!("hi {OPEN_DELIM}x{CLOSE_DELIM}");
        let toks = tok.encode_with_offsets(&text);
        let mut pos = 0;
        for (_, range) in &toks {
            assert_eq!(range.start, pos);
            pos = range.end;
        }
        assert_eq!(pos, text.len());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn roundtrip_over_base_alphabet(s in "[ -~\n]{0,200}") {
            // strings containing a special literal decode back to themselves too,
            // so no filtering is needed
            let tok = imagine_tokenizer();
            prop_assert_eq!(tok.decode(&tok.encode(&s)), s);
        }

        #[test]
        fn ordinary_text_never_yields_special_ids(s in "[ -~\n]{0,200}") {
            let tok = imagine_tokenizer();
            prop_assume!(!s.contains(OPEN_DELIM) && !s.contains(CLOSE_DELIM));
            let open = tok.token_id(OPEN_DELIM).unwrap();
            let close = tok.token_id(CLOSE_DELIM).unwrap();
            prop_assert!(tok.encode(&s).iter().all(|&id| id != open && id != close));
        }
    }
}
