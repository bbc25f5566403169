//! Attention-based feature distillation.
//!
//! A teacher network's intermediate features are transferred to a student
//! network through soft links learned by an attention meta-network. Every
//! teacher/student feature pair gets a link strength, and the per-pair
//! distillation distances are weighted by those strengths while the student
//! and the meta-network train jointly.
//!
//! The crate is organized around five pieces:
//!
//! * [`backbone`] — compact ResNet / Wide-ResNet classifiers exposing their
//!   residual-block outputs as feature candidates.
//! * [`meta`] — the attention meta-network producing the link matrix.
//! * [`distill`] — channel pooling, resampling, distances, the weighted
//!   distillation loss, and the fixed-link baselines.
//! * [`data`] + [`train`] — dataset ingestion, augmentation, and the SGD
//!   training harness with attention tracing.
//! * [`config`] + [`checkpoint`] — declarative experiment configs and the
//!   versioned parameter container.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod meta;
pub mod nn;
pub mod parallel;
pub mod params;
pub mod trace;
pub mod train;

pub use error::{AfdError, Result};
