//! End-to-end editing, oracle scoring and the ablation harness.

pub mod ablation;
pub mod edit;
pub mod eval;

pub use ablation::{
    cell_wins, run_ablation, run_variant, AblationConfig, AblationVariant, EvalReport,
    VariantMetrics, VariantRow,
};
pub use edit::{
    edit_batch, edit_from_text, edit_image, EditConfig, EditHint, EditRequest, WorkflowStage,
    WorkflowTrace,
};
pub use eval::{evaluate_state, physics_fidelity, CellResult, Fidelity};
