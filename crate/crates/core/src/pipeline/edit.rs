//! The inference workflow: reasoning, query contextualization, feature
//! prediction and guided sampling, in that order.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::backbone::{frames_to_data, sample_ode, ConditionSet};
use crate::datapipe::Vocab;
use crate::encoders::FeatureSource;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::guidance::{modulate_tensor, ModulationConfig};
use crate::model::ModelState;
use crate::phrases::PhraseBank;
use crate::synthworld::principles::measure_state;
use crate::synthworld::{SpecOptions, TransitionKind, TransitionSpec};
use crate::thinking::{generate_reasoning, PrefixCache, StateEvidence};
use crate::trainer::pad_text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditConfig {
    pub sample_steps: usize,
    pub seed: u64,
    pub modulation: ModulationConfig,
    pub use_reasoning: bool,
    pub use_queries: bool,
    /// Replaces the guidance tokens with zeros during sampling.
    pub zero_guidance: bool,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            sample_steps: 20,
            seed: 0,
            modulation: ModulationConfig::default(),
            use_reasoning: true,
            use_queries: true,
            zero_guidance: false,
        }
    }
}

/// The transition an instruction asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditHint {
    pub kind: TransitionKind,
    pub null_trigger: bool,
}

impl EditHint {
    /// Exact-match lookup of the instruction against the phrase bank.
    pub fn from_instruction(instruction: &str) -> Result<Self> {
        let (name, null_trigger) = PhraseBank::shipped()
            .match_instruction(instruction)
            .ok_or_else(|| {
                Error::UnsupportedTransition(format!("no transition matches `{instruction}`"))
            })?;
        Ok(EditHint {
            kind: TransitionKind::from_name(name)?,
            null_trigger,
        })
    }

    pub fn from_name(name: &str, null_trigger: bool) -> Result<Self> {
        Ok(EditHint {
            kind: TransitionKind::from_name(name)?,
            null_trigger,
        })
    }

    /// A nominal spec carrying the transition identity and trigger.
    pub fn spec(&self) -> Result<TransitionSpec> {
        let opts = SpecOptions {
            null_trigger: self.null_trigger,
            jitter: 0,
        };
        TransitionSpec::sample(self.kind, "object", opts, 0)
    }
}

/// One edit request.
#[derive(Debug, Clone)]
pub struct EditRequest<'a> {
    pub source: &'a Frame,
    pub instruction: &'a [u32],
    pub hint: EditHint,
}

/// Stages of the workflow in the order they ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkflowStage {
    Reasoning,
    Queries,
    Projection,
    SamplingStep,
}

#[derive(Debug, Clone, Default)]
pub struct WorkflowTrace {
    pub stages: Vec<WorkflowStage>,
}

impl WorkflowTrace {
    /// True when every stage precedes the next stage kind.
    pub fn is_ordered(&self) -> bool {
        self.stages.windows(2).all(|w| (w[0] as u8) <= (w[1] as u8))
    }
}

/// The reasoning trace produced at edit time: the source state is
/// measured and the outcome is the transition's expected final state.
pub fn edit_reasoning(source: &Frame, instruction: &[u32], hint: EditHint) -> Result<Vec<u32>> {
    let spec = hint.spec()?;
    let phrases = PhraseBank::shipped().transition(hint.kind.name())?;
    let initial = measure_state(hint.kind, source)
        .unwrap_or_else(|| crate::synthworld::principles::initial_state_key(hint.kind))
        .to_string();
    let final_state = if hint.null_trigger {
        initial.clone()
    } else {
        phrases
            .expected_final
            .clone()
            .unwrap_or_else(|| initial.clone())
    };
    let evidence = StateEvidence {
        initial,
        final_state,
    };
    Ok(generate_reasoning(&spec, instruction, None, Some(&evidence))?.tokens)
}

/// Edits a batch of sources, recording the workflow.
pub fn edit_batch(
    state: &ModelState,
    requests: &[EditRequest],
    cfg: &EditConfig,
    trace: &mut WorkflowTrace,
) -> Result<Vec<Frame>> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let (h, w, c) = state.cfg.frame_dims();
    for r in requests {
        if r.source.dims() != (h, w, c) {
            return Err(Error::Shape(format!(
                "source is {:?}, model expects {:?}",
                r.source.dims(),
                (h, w, c)
            )));
        }
    }
    cfg.modulation.validate()?;
    let reasoning: Vec<Vec<u32>> = if cfg.use_reasoning {
        trace.stages.push(WorkflowStage::Reasoning);
        requests
            .iter()
            .map(|r| edit_reasoning(r.source, r.instruction, r.hint))
            .collect::<Result<_>>()?
    } else {
        vec![Vec::new(); requests.len()]
    };
    let enc = &state.features.encoders;
    let kq = state.queries.len()?;
    let prefixes: Vec<PrefixCache> = requests
        .iter()
        .zip(&reasoning)
        .map(|(r, z)| {
            state
                .context
                .encode_prefix(enc, r.source, r.instruction, z, kq)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&PrefixCache> = prefixes.iter().collect();
    let (text, text_len) = pad_text(&refs)?;

    let predictions = if cfg.use_queries {
        trace.stages.push(WorkflowStage::Queries);
        let q = state.context.query_forward(&refs, &state.queries)?;
        trace.stages.push(WorkflowStage::Projection);
        Some(state.project_predictions(&q)?)
    } else {
        None
    };
    let sources: Vec<&Frame> = requests.iter().map(|r| r.source).collect();
    let source = frames_to_data(
        &sources,
        state.cfg.backbone.patch,
        state.device(),
        state.dtype(),
    )?;
    let modulation = cfg.modulation.with_source(FeatureSource::Prediction);
    let b = requests.len();
    let stages = RefCell::new(std::mem::take(&mut trace.stages));
    let cond_at = |t: f64| -> Result<ConditionSet> {
        stages.borrow_mut().push(WorkflowStage::SamplingStep);
        let guidance = match &predictions {
            Some((ps, pt)) => {
                let g = modulate_tensor(&vec![t; b], ps, pt, &modulation)?;
                Some(if cfg.zero_guidance {
                    g.zeros_like()?
                } else {
                    g
                })
            }
            None => None,
        };
        Ok(ConditionSet {
            source: source.clone(),
            text: text.clone(),
            text_len: text_len.clone(),
            guidance,
        })
    };
    let out = sample_ode(&state.denoiser, b, cond_at, cfg.sample_steps, cfg.seed);
    trace.stages = stages.into_inner();
    out
}

/// Edits one source frame.
pub fn edit_image(
    state: &ModelState,
    source: &Frame,
    instruction: &[u32],
    hint: EditHint,
    cfg: &EditConfig,
) -> Result<(Frame, WorkflowTrace)> {
    let mut trace = WorkflowTrace::default();
    let req = EditRequest {
        source,
        instruction,
        hint,
    };
    let mut out = edit_batch(state, std::slice::from_ref(&req), cfg, &mut trace)?;
    Ok((out.remove(0), trace))
}

/// Edits from free text: tokenizes and resolves the hint from the phrase bank.
pub fn edit_from_text(
    state: &ModelState,
    source: &Frame,
    instruction: &str,
    cfg: &EditConfig,
) -> Result<(Frame, WorkflowTrace)> {
    let hint = EditHint::from_instruction(instruction)?;
    let tokens = Vocab::shipped().encode(instruction);
    edit_image(state, source, &tokens, hint, cfg)
}
