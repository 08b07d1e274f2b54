//! Phrase banks keyed by transition type, shared by prompt templating,
//! annotation, reasoning generation and instruction lookup.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::assets;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
pub struct TransitionPhrases {
    pub start_state: String,
    pub trigger_event: String,
    pub transition_description: String,
    pub final_state: String,
    #[serde(default)]
    pub law: Option<String>,
    #[serde(default)]
    pub material: Option<String>,
    #[serde(default)]
    pub triggers: Vec<String>,
    #[serde(default)]
    pub null_triggers: Vec<String>,
    #[serde(default)]
    pub evolution: Option<String>,
    #[serde(default)]
    pub state_clauses: BTreeMap<String, String>,
    #[serde(default)]
    pub expected_final: Option<String>,
    #[serde(default)]
    pub principles: Vec<String>,
    #[serde(default)]
    pub null_principles: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PhraseBank {
    pub version: u32,
    pub transitions: BTreeMap<String, TransitionPhrases>,
    pub principles: BTreeMap<String, String>,
}

impl PhraseBank {
    pub fn parse(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn shipped() -> &'static PhraseBank {
        static BANK: OnceLock<PhraseBank> = OnceLock::new();
        BANK.get_or_init(|| PhraseBank::parse(assets::PHRASES_JSON).expect("shipped phrase bank"))
    }

    pub fn transition(&self, name: &str) -> Result<&TransitionPhrases> {
        self.transitions
            .get(name)
            .ok_or_else(|| Error::UnsupportedTransition(name.to_string()))
    }

    pub fn principle_phrase(&self, id: &str) -> Option<&str> {
        self.principles.get(id).map(String::as_str)
    }

    /// Exact-match lookup of an instruction against the trigger lists.
    /// Returns the transition and whether the match was a null trigger.
    /// The longest matching trigger wins.
    pub fn match_instruction(&self, instruction: &str) -> Option<(&str, bool)> {
        let norm = normalize(instruction);
        let mut best: Option<(&str, bool, usize)> = None;
        for (name, t) in &self.transitions {
            let cands = t
                .triggers
                .iter()
                .map(|s| (s, false))
                .chain(t.null_triggers.iter().map(|s| (s, true)));
            for (trig, is_null) in cands {
                let trig = normalize(trig);
                if contains_words(&norm, &trig) && best.is_none_or(|b| trig.len() > b.2) {
                    best = Some((name.as_str(), is_null, trig.len()));
                }
            }
        }
        best.map(|(n, z, _)| (n, z))
    }
}

pub fn fill_subject(template: &str, subject: &str) -> String {
    template.replace("{subject}", subject)
}

fn normalize(s: &str) -> String {
    s.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn contains_words(haystack: &str, needle: &str) -> bool {
    let padded = format!(" {haystack} ");
    padded.contains(&format!(" {needle} "))
}
