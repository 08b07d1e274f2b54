//! Physics-aware image editing as predictive state transition.
//!
//! The crate is organised bottom-up: [`synthworld`] renders transitions
//! with closed-form laws, [`datapipe`] turns them into verified editing
//! samples, the model modules ([`encoders`], [`thinking`], [`guidance`],
//! [`backbone`]) implement dual-thinking guidance around a flow-matching
//! denoiser, [`trainer`] routes the composite loss and [`pipeline`] runs
//! editing, evaluation and ablations.

pub mod assets;
pub mod backbone;
pub mod config;
pub mod datapipe;
pub mod encoders;
pub mod error;
pub mod frame;
pub mod guidance;
pub mod model;
pub mod nn;
pub mod phrases;
pub mod pipeline;
pub mod seed;
pub mod synthworld;
pub mod thinking;
pub mod trainer;

pub use error::{Error, Result};
pub use frame::Frame;
