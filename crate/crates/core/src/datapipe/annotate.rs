//! Constraint-aware annotation: instruction plus reasoning that cites only
//! aligned principles.

use super::prompt::PromptRecord;
use super::sample::EditSample;
use super::verify::VerificationRecord;
use super::vocab::{contains_sequence, Vocab};
use crate::error::{Error, Result};
use crate::phrases::PhraseBank;
use crate::synthworld::principles::measure_state;
use crate::synthworld::{sample_keyframes, Trajectory, DEFAULT_KEYFRAMES};
use crate::thinking::reasoning::{
    generate_reasoning, instruction_text, ReasoningTrace, StateEvidence,
};

#[derive(Debug, Clone)]
pub struct Annotation {
    pub instruction: String,
    pub reasoning: ReasoningTrace,
}

pub trait AnnotatorClient {
    fn annotate(
        &self,
        traj: &Trajectory,
        prompt: &PromptRecord,
        verification: &VerificationRecord,
    ) -> Result<Annotation>;
}

/// Deterministic annotator: measures the start and end states from the
/// frames and fills the reasoning template.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleAnnotator;

impl AnnotatorClient for OracleAnnotator {
    fn annotate(
        &self,
        traj: &Trajectory,
        prompt: &PromptRecord,
        verification: &VerificationRecord,
    ) -> Result<Annotation> {
        let kind = traj.spec.kind()?;
        let initial = measure_state(kind, traj.first())
            .ok_or_else(|| Error::InvalidInput("initial state is not measurable".into()))?;
        let final_state = if traj.spec.is_null_trigger() {
            initial
        } else {
            measure_state(kind, traj.last())
                .ok_or_else(|| Error::InvalidInput("final state is not measurable".into()))?
        };
        let instruction = instruction_text(&traj.spec, &prompt.subject)?;
        let evidence = StateEvidence {
            initial: initial.to_string(),
            final_state: final_state.to_string(),
        };
        let tokens = Vocab::shipped().encode(&instruction);
        let reasoning =
            generate_reasoning(&traj.spec, &tokens, Some(verification), Some(&evidence))?;
        Ok(Annotation {
            instruction,
            reasoning,
        })
    }
}

pub fn annotate_sample(
    sample_id: &str,
    traj: &Trajectory,
    prompt: &PromptRecord,
    verification: &VerificationRecord,
    annotator: &dyn AnnotatorClient,
) -> Result<EditSample> {
    if !verification.retained {
        return Err(Error::NotRetained(sample_id.to_string()));
    }
    let wrap = |e: Error| Error::Annotation {
        sample_id: sample_id.to_string(),
        reason: e.to_string(),
    };
    let ann = annotator
        .annotate(traj, prompt, verification)
        .map_err(wrap)?;
    let vocab = Vocab::shipped();
    let bank = PhraseBank::shipped();
    for p in &verification.negative_evidence {
        if let Some(phrase) = bank.principle_phrase(p) {
            if contains_sequence(&ann.reasoning.tokens, &vocab.encode(phrase)) {
                return Err(wrap(Error::InvalidInput(format!(
                    "reasoning cites excluded principle `{p}`"
                ))));
            }
        }
    }
    let keyframes = sample_keyframes(traj, DEFAULT_KEYFRAMES).map_err(wrap)?;
    Ok(EditSample {
        sample_id: sample_id.to_string(),
        spec: traj.spec.clone(),
        seed: traj.seed,
        subject: prompt.subject.clone(),
        source: traj.first().clone(),
        target: traj.last().clone(),
        keyframes,
        instruction: vocab.encode(&ann.instruction),
        instruction_text: ann.instruction,
        reasoning: ann.reasoning,
        verification: verification.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::prompt::instantiate_prompt;
    use crate::datapipe::taxonomy::Taxonomy;
    use crate::synthworld::{
        generate_trajectory, SpecOptions, TransitionKind, TransitionSpec, Verdict,
    };

    fn setup(kind: TransitionKind, null: bool) -> (Trajectory, PromptRecord) {
        let node = Taxonomy::shipped().transition(kind.name()).unwrap();
        let prompt = instantiate_prompt(&node, 1).unwrap();
        let opts = SpecOptions {
            null_trigger: null,
            jitter: 0,
        };
        let spec = TransitionSpec::sample(kind, &prompt.subject, opts, 1).unwrap();
        (generate_trajectory(&spec, 1).unwrap(), prompt)
    }

    #[test]
    fn melting_cites_volume_decrease() {
        let (t, p) = setup(TransitionKind::Melting, false);
        let v = VerificationRecord::from_verdicts(vec![
            ("volume_decreases".into(), Verdict::Align),
            ("liquid_spreads".into(), Verdict::Align),
            ("mass_conserved".into(), Verdict::Contradict),
        ]);
        let s = annotate_sample("m0", &t, &p, &v, &OracleAnnotator).unwrap();
        let vocab = Vocab::shipped();
        assert!(contains_sequence(
            &s.reasoning.tokens,
            &vocab.encode("volume decreases")
        ));
        assert!(!contains_sequence(
            &s.reasoning.tokens,
            &vocab.encode("total mass is conserved")
        ));
        assert_eq!(s.keyframes.len(), 6);
        assert_eq!(s.source.data(), t.first().data());
        assert_eq!(s.target.data(), t.last().data());
        assert!(s.reasoning.text.contains("is a solid block"));
        assert!(s
            .reasoning
            .text
            .contains("then the subject is partly melted"));
    }

    #[test]
    fn rejected_records_are_refused() {
        let (t, p) = setup(TransitionKind::Melting, false);
        let v =
            VerificationRecord::from_verdicts(vec![("volume_decreases".into(), Verdict::Unknown)]);
        assert!(matches!(
            annotate_sample("m1", &t, &p, &v, &OracleAnnotator),
            Err(Error::NotRetained(id)) if id == "m1"
        ));
    }

    #[test]
    fn null_trigger_final_clause_equals_initial() {
        let (t, p) = setup(TransitionKind::DiffusionMixing, true);
        let v = VerificationRecord::from_verdicts(vec![("scene_static".into(), Verdict::Align)]);
        let s = annotate_sample("d0", &t, &p, &v, &OracleAnnotator).unwrap();
        assert!(s
            .reasoning
            .text
            .contains("the subject is a small dense drop, nothing changes, then the subject is a small dense drop"));
        assert!(s.instruction_text.ends_with("stays the same"));
    }

    struct Failing;
    impl AnnotatorClient for Failing {
        fn annotate(
            &self,
            _: &Trajectory,
            _: &PromptRecord,
            _: &VerificationRecord,
        ) -> Result<Annotation> {
            Err(Error::InvalidInput("offline".into()))
        }
    }

    #[test]
    fn annotator_failure_names_the_sample() {
        let (t, p) = setup(TransitionKind::GravityDrop, false);
        let v = VerificationRecord::from_verdicts(vec![("com_descends".into(), Verdict::Align)]);
        assert!(matches!(
            annotate_sample("g7", &t, &p, &v, &Failing),
            Err(Error::Annotation { sample_id, .. }) if sample_id == "g7"
        ));
    }
}
