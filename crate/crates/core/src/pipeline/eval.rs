//! Scoring edits against the closed-form oracle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::edit::{edit_batch, EditConfig, EditHint, EditRequest, WorkflowTrace};
use crate::datapipe::EditSample;
use crate::error::Result;
use crate::frame::Frame;
use crate::model::ModelState;
use crate::seed;
use crate::synthworld::principles::{evaluate, proposed};
use crate::synthworld::{oracle_final_frame, TransitionSpec, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub oracle_mse: f64,
    /// Verdicts of the applicable principles on the pair (source, output).
    pub predicates: BTreeMap<String, Verdict>,
}

impl Fidelity {
    pub fn pass_rate(&self) -> f64 {
        if self.predicates.is_empty() {
            return 0.0;
        }
        let n = self
            .predicates
            .values()
            .filter(|v| **v == Verdict::Align)
            .count();
        n as f64 / self.predicates.len() as f64
    }
}

/// Oracle MSE plus principle verdicts. A principle is applicable when it
/// reaches a verdict on the oracle pair (source, oracle final frame).
pub fn physics_fidelity(output: &Frame, spec: &TransitionSpec, source: &Frame) -> Result<Fidelity> {
    let kind = spec.validate_executable()?;
    let oracle = oracle_final_frame(spec)?;
    let oracle_mse = output.mse(&oracle)?;
    let reference = [source.clone(), oracle];
    let pair = [source.clone(), output.clone()];
    let predicates = proposed(kind, spec.is_null_trigger())
        .into_iter()
        .filter(|p| evaluate(&reference, p) != Verdict::Unknown)
        .map(|p| (p.to_string(), evaluate(&pair, p)))
        .collect();
    Ok(Fidelity {
        oracle_mse,
        predicates,
    })
}

/// Score of one held-out sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub transition: String,
    pub sample_id: String,
    pub oracle_mse: f64,
    pub pass_rate: f64,
}

/// Edits every held-out sample and scores it. Batches are formed in
/// sample order so the sampling noise of a cell is the same for every
/// state evaluated under the same config.
pub fn evaluate_state(
    state: &ModelState,
    heldout: &[EditSample],
    cfg: &EditConfig,
    batch: usize,
) -> Result<Vec<CellResult>> {
    let mut cells = Vec::with_capacity(heldout.len());
    for (bi, chunk) in heldout.chunks(batch.max(1)).enumerate() {
        let requests = chunk
            .iter()
            .map(|s| {
                Ok(EditRequest {
                    source: &s.source,
                    instruction: &s.instruction,
                    hint: EditHint::from_name(&s.spec.transition_type, s.spec.is_null_trigger())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg_b = EditConfig {
            seed: seed::derive_str(cfg.seed, "eval-batch", bi as u64),
            ..cfg.clone()
        };
        let outputs = edit_batch(state, &requests, &cfg_b, &mut WorkflowTrace::default())?;
        for (s, out) in chunk.iter().zip(&outputs) {
            let f = physics_fidelity(out, &s.spec, &s.source)?;
            cells.push(CellResult {
                transition: s.spec.transition_type.clone(),
                sample_id: s.sample_id.clone(),
                oracle_mse: f.oracle_mse,
                pass_rate: f.pass_rate(),
            });
        }
    }
    Ok(cells)
}
