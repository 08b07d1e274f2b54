//! The synthetic transition world: specs, closed-form laws, rendering,
//! principle predicates and keyframe sampling.

pub mod keyframes;
pub mod principles;
pub mod scene;
pub mod spec;
pub mod store;

pub use keyframes::{keyframe_indices, sample_keyframes, DEFAULT_KEYFRAMES};
pub use principles::{check_principle, Verdict};
pub use scene::{generate_trajectory, oracle_final_frame, Trajectory};
pub use spec::{SpecOptions, TransitionKind, TransitionSpec, DEFAULT_DURATION, MIN_DURATION};
