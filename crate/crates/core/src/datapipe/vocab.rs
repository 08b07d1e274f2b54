//! Fixed word-level vocabulary built from the taxonomy and phrase banks.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use crate::assets;
use crate::datapipe::taxonomy::Taxonomy;
use crate::error::{Error, Result};
use crate::phrases::PhraseBank;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MAX_VOCAB: usize = 512;
const SPECIALS: [&str; 2] = ["<pad>", "<unk>"];

/// Words used by the instruction and reasoning templates.
pub const TEMPLATE_WORDS: &[&str] = &[
    "laws", "causal", "material", "the", "subject", "so", "stays", "same", "then", "nothing",
    "changes", "static", "camera",
];

pub fn split_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() > MAX_VOCAB {
            return Err(Error::InvalidInput(format!(
                "vocabulary has {} entries, maximum is {MAX_VOCAB}",
                tokens.len()
            )));
        }
        if tokens.len() < 2 || tokens[0] != SPECIALS[0] || tokens[1] != SPECIALS[1] {
            return Err(Error::InvalidInput(
                "vocabulary must start with <pad> and <unk>".into(),
            ));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocab { tokens, index })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    /// Rebuilds the vocabulary from the taxonomy and phrase assets.
    pub fn from_assets(tax: &Taxonomy, bank: &PhraseBank) -> Result<Self> {
        let mut words: BTreeSet<String> = tax.words().into_iter().collect();
        for t in bank.transitions.values() {
            let mut texts = vec![
                t.start_state.as_str(),
                t.trigger_event.as_str(),
                t.transition_description.as_str(),
                t.final_state.as_str(),
            ];
            texts.extend(t.law.as_deref());
            texts.extend(t.material.as_deref());
            texts.extend(t.evolution.as_deref());
            texts.extend(t.triggers.iter().map(String::as_str));
            texts.extend(t.null_triggers.iter().map(String::as_str));
            texts.extend(t.state_clauses.values().map(String::as_str));
            for s in texts {
                words.extend(split_words(s));
            }
        }
        for p in bank.principles.values() {
            words.extend(split_words(p));
        }
        words.extend(TEMPLATE_WORDS.iter().map(|w| w.to_string()));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn shipped() -> &'static Vocab {
        static V: OnceLock<Vocab> = OnceLock::new();
        V.get_or_init(|| Vocab::parse(assets::VOCAB_TXT).expect("shipped vocabulary"))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_words(text)
            .iter()
            .map(|w| self.index.get(w).copied().unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| i != PAD)
            .map(|&i| self.tokens.get(i as usize).map_or("<unk>", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// True when `needle` occurs as a contiguous run inside `haystack`.
pub fn contains_sequence(haystack: &[u32], needle: &[u32]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_vocab_matches_assets() {
        let built = Vocab::from_assets(Taxonomy::shipped(), PhraseBank::shipped()).unwrap();
        if std::env::var_os("PHYSTRAN_REGEN_VOCAB").is_some() {
            let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/vocab.txt");
            std::fs::write(path, built.to_text()).unwrap();
            return;
        }
        assert_eq!(
            built.to_text(),
            assets::VOCAB_TXT,
            "assets/vocab.txt is stale; rerun this test with PHYSTRAN_REGEN_VOCAB=1"
        );
        assert!(built.len() <= MAX_VOCAB);
    }

    #[test]
    fn encode_decode() {
        let v = Vocab::shipped();
        let ids = v.encode("Drop it, so the ball falls!");
        assert!(!ids.contains(&UNK));
        assert_eq!(v.decode(&ids), "drop it so the ball falls");
        assert_eq!(v.encode("zyzzyva"), vec![UNK]);
    }

    #[test]
    fn sequence_search() {
        assert!(contains_sequence(&[1, 2, 3, 4], &[2, 3]));
        assert!(!contains_sequence(&[1, 2, 3, 4], &[3, 2]));
        assert!(!contains_sequence(&[1, 2], &[]));
    }
}
