//! Two-level reference alignment (TLRA) for robust multimodal sentiment
//! prediction under missing and unreliable modalities.
//!
//! The pipeline has three stages: per-modality encoding into a shared
//! sentiment space, representation-level alignment (template-guided
//! completion of missing modalities against complete-sample references),
//! and decision-level alignment (prototype soft guidance plus cross-modal
//! voting with suppression of disagreeing modalities). Everything runs on
//! a small self-contained reverse-mode tape, so the whole loss is
//! differentiable and verifiable against finite differences.

pub mod cli;
pub mod completion;
pub mod data;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod losses;
pub mod numeric;
pub mod prototypes;
pub mod trainer;

pub use error::{Result, TlraError};
