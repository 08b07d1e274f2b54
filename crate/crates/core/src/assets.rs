//! Text assets compiled into the crate.

pub const TAXONOMY_JSON: &str = include_str!("../assets/taxonomy.json");
pub const PHRASES_JSON: &str = include_str!("../assets/phrases.json");
pub const VOCAB_TXT: &str = include_str!("../assets/vocab.txt");
pub const MANIFEST_SCHEMA: &str = include_str!("../assets/schema/manifest.schema.json");
pub const TRAJECTORY_SCHEMA: &str = include_str!("../assets/schema/trajectory.schema.json");
pub const CHECKPOINT_SCHEMA: &str = include_str!("../assets/schema/checkpoint.md");

/// Prompt templates for the optional model-backed clients.
pub mod prompts {
    pub const VIDEO_INSTRUCTION: &str = include_str!("../assets/prompts/video_instruction.txt");
    pub const PRINCIPLE_PLAN: &str = include_str!("../assets/prompts/principle_plan.txt");
    pub const RULE_CRITIC: &str = include_str!("../assets/prompts/rule_critic.txt");
    pub const STATE_TRANSITION: &str = include_str!("../assets/prompts/state_transition.txt");
}
