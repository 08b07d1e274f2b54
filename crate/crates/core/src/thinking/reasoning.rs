//! Template-based reasoning traces: physical laws, causal unfolding and
//! material behavior.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::datapipe::verify::VerificationRecord;
use crate::datapipe::vocab::Vocab;
use crate::error::{Error, Result};
use crate::phrases::{fill_subject, PhraseBank};
use crate::synthworld::principles::{initial_state_key, proposed};
use crate::synthworld::TransitionSpec;

pub const SUBJECT_WORD: &str = "subject";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub text: String,
    pub tokens: Vec<u32>,
    /// Token spans of the laws, causal and material parts.
    pub parts: [Range<usize>; 3],
}

impl ReasoningTrace {
    pub fn part(&self, i: usize) -> &[u32] {
        &self.tokens[self.parts[i].clone()]
    }
}

/// Observed state keys at the start and end of a transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEvidence {
    pub initial: String,
    pub final_state: String,
}

/// The instruction a user would give for this transition.
pub fn instruction_text(spec: &TransitionSpec, subject: &str) -> Result<String> {
    let phrases = PhraseBank::shipped().transition(&spec.transition_type)?;
    let evolution = if spec.is_null_trigger() {
        "stays the same".to_string()
    } else {
        phrases
            .evolution
            .clone()
            .unwrap_or_else(|| phrases.transition_description.clone())
    };
    Ok(format!(
        "{} so the {subject} {evolution}",
        spec.trigger_text
    ))
}

fn instruction_is_null(instruction: &[u32], vocab: &Vocab, transition: &str) -> bool {
    let text = vocab.decode(instruction);
    matches!(PhraseBank::shipped().match_instruction(&text), Some((t, true)) if t == transition)
}

/// Fills the three-part template. With a verification record only its
/// aligned principles are cited; without one the default set is used.
/// Without evidence the initial state is the transition's default and the
/// final state its expected outcome (or the initial state for a null
/// trigger).
pub fn generate_reasoning(
    spec: &TransitionSpec,
    instruction: &[u32],
    verification: Option<&VerificationRecord>,
    evidence: Option<&StateEvidence>,
) -> Result<ReasoningTrace> {
    spec.validate()?;
    let kind = spec.kind()?;
    let bank = PhraseBank::shipped();
    let vocab = Vocab::shipped();
    let phrases = bank.transition(kind.name())?;
    let null = spec.is_null_trigger() || instruction_is_null(instruction, vocab, kind.name());

    let cited: Vec<String> = match verification {
        Some(v) => v.aligned().map(String::from).collect(),
        None => proposed(kind, null).into_iter().map(String::from).collect(),
    };
    let mut laws = vec![phrases.law.clone().unwrap_or_default()];
    for p in &cited {
        let phrase = bank
            .principle_phrase(p)
            .ok_or_else(|| Error::UnknownPrinciple {
                principle: p.clone(),
                transition: kind.name().to_string(),
            })?;
        laws.push(phrase.to_string());
    }
    let laws = format!("laws: {}.", laws.join("; "));

    let (initial, final_key) = match evidence {
        Some(e) => (e.initial.clone(), e.final_state.clone()),
        None => {
            let initial = initial_state_key(kind).to_string();
            let fin = if null {
                initial.clone()
            } else {
                phrases
                    .expected_final
                    .clone()
                    .unwrap_or_else(|| initial.clone())
            };
            (initial, fin)
        }
    };
    let clause = |key: &str| -> Result<String> {
        phrases
            .state_clauses
            .get(key)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no state clause `{key}` for {kind}")))
    };
    let middle = if null {
        "nothing changes".to_string()
    } else {
        fill_subject(&phrases.transition_description, SUBJECT_WORD)
    };
    let causal = format!(
        "causal: the {SUBJECT_WORD} {}, {middle}, then the {SUBJECT_WORD} {}.",
        clause(&initial)?,
        clause(&final_key)?
    );
    let material = format!(
        "material: {}.",
        phrases.material.clone().unwrap_or_default()
    );

    let mut tokens = Vec::new();
    let mut parts: [Range<usize>; 3] = Default::default();
    for (i, text) in [&laws, &causal, &material].into_iter().enumerate() {
        let start = tokens.len();
        tokens.extend(vocab.encode(text));
        parts[i] = start..tokens.len();
    }
    Ok(ReasoningTrace {
        text: format!("{laws} {causal} {material}"),
        tokens,
        parts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::vocab::{contains_sequence, UNK};
    use crate::synthworld::{SpecOptions, TransitionKind, Verdict};

    fn spec(kind: TransitionKind, null: bool) -> TransitionSpec {
        let opts = SpecOptions {
            null_trigger: null,
            jitter: 0,
        };
        TransitionSpec::sample(kind, "ice", opts, 0).unwrap()
    }

    #[test]
    fn parts_are_nonempty_and_in_vocab() {
        for kind in TransitionKind::ALL {
            for null in [false, true] {
                let r = generate_reasoning(&spec(kind, null), &[], None, None).unwrap();
                for i in 0..3 {
                    assert!(r.part(i).len() > 1);
                }
                assert!(!r.tokens.contains(&UNK), "{}", r.text);
            }
        }
    }

    #[test]
    fn melting_laws_mention_the_law() {
        let s = spec(TransitionKind::Melting, false);
        let r = generate_reasoning(&s, &[], None, None).unwrap();
        let law = Vocab::shipped().encode("heat turns a solid into liquid");
        assert!(contains_sequence(r.part(0), &law));
        assert_eq!(r, generate_reasoning(&s, &[], None, None).unwrap());
    }

    #[test]
    fn contradicted_phrase_is_excluded() {
        let s = spec(TransitionKind::LightDimming, false);
        let v = VerificationRecord::from_verdicts(vec![
            ("brightness_decreases".into(), Verdict::Align),
            ("steady_fade".into(), Verdict::Align),
            ("refraction_bends_light".into(), Verdict::Contradict),
        ]);
        let r = generate_reasoning(&s, &[], Some(&v), None).unwrap();
        let vocab = Vocab::shipped();
        assert!(!contains_sequence(
            &r.tokens,
            &vocab.encode("refraction bends light")
        ));
        assert!(contains_sequence(
            &r.tokens,
            &vocab.encode("overall brightness decreases")
        ));
    }

    #[test]
    fn null_trigger_keeps_the_state() {
        let s = spec(TransitionKind::GravityDrop, true);
        let r = generate_reasoning(&s, &[], None, None).unwrap();
        assert!(r.text.contains("the subject is high above the floor, nothing changes, then the subject is high above the floor"));
    }

    #[test]
    fn null_instruction_is_recognized() {
        let s = spec(TransitionKind::LightDimming, false);
        let ins = Vocab::shipped().encode("keep the lamp on");
        let r = generate_reasoning(&s, &ins, None, None).unwrap();
        assert!(r.text.contains("nothing changes"));
    }
}
