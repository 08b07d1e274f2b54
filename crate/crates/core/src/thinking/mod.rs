//! Dual thinking: reasoning traces, the frozen context encoder, the shared
//! transition queries and the projection heads.

pub mod context;
pub mod reasoning;

pub use context::{ContextConfig, ContextEncoder, PrefixCache, ProjectionHead, QueryBank};
pub use reasoning::{generate_reasoning, instruction_text, ReasoningTrace, StateEvidence};
