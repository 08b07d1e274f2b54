//! Dataset construction: taxonomy, prompt templating, stability filtering,
//! principle verification, constraint-aware annotation and manifests.

pub mod annotate;
pub mod generate;
#[cfg(feature = "http")]
pub mod http;
pub mod manifest;
pub mod prompt;
pub mod sample;
pub mod stability;
pub mod taxonomy;
pub mod verify;
pub mod vocab;

pub use annotate::{annotate_sample, AnnotatorClient, OracleAnnotator};
pub use generate::{generate_dataset, generate_samples, GenConfig};
pub use manifest::{
    build_manifest, load_manifest, DatasetSummary, ManifestSummary, RetentionStats,
};
pub use prompt::{instantiate_prompt, PromptRecord};
pub use sample::EditSample;
pub use stability::{camera_stability_filter, StabilityResult};
pub use taxonomy::{Taxonomy, TaxonomyNode};
pub use verify::{verify_trajectory, OracleVerifier, VerificationRecord, VerifierClient};
pub use vocab::Vocab;
