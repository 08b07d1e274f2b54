use serde::{Deserialize, Serialize};

use super::verify::VerificationRecord;
use crate::frame::Frame;
use crate::synthworld::TransitionSpec;
use crate::thinking::reasoning::ReasoningTrace;

/// One training row: an editing pair with its instruction, reasoning,
/// intermediate keyframes and verification record.
#[derive(Debug, Clone)]
pub struct EditSample {
    pub sample_id: String,
    pub spec: TransitionSpec,
    pub seed: u64,
    pub subject: String,
    pub source: Frame,
    pub target: Frame,
    pub keyframes: Vec<Frame>,
    pub instruction_text: String,
    pub instruction: Vec<u32>,
    pub reasoning: ReasoningTrace,
    pub verification: VerificationRecord,
}

/// The serializable part of an [`EditSample`]; frames are stored by path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub domain: String,
    pub subdomain: String,
    pub transition_type: String,
    pub seed: u64,
    pub subject: String,
    pub spec: TransitionSpec,
    pub source: String,
    pub target: String,
    pub keyframes: Vec<String>,
    pub instruction: String,
    pub instruction_tokens: Vec<u32>,
    pub reasoning: ReasoningTrace,
    pub verification: VerificationRecord,
}
