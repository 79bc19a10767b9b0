//! Certification engine for multi-label classifiers under adversarial patch
//! attacks.
//!
//! Every class of a multi-label classifier is defended separately with
//! double-masking. Per-class certification results are pooled into provable
//! lower bounds on true positives and upper bounds on false positives and
//! false negatives, which are then tightened using the single-patch location
//! constraint.

pub mod attack;
pub mod backend;
pub mod cleanser;
pub mod demux;
pub mod error;
pub mod geometry;
pub mod image;
pub mod labels;
pub mod metrics;
pub mod query;
pub mod runner;
pub mod synth;

pub use backend::{BinaryView, Classifier, ScoreVector, SyntheticModel, Thresholds};
pub use demux::{AttackerMode, CertSummary};
pub use error::{Error, Result};
pub use geometry::{generate_mask_set, verify_covering, Mask, MaskSet, PatchSize, PatchSpec};
pub use image::Image;
pub use labels::LabelBits;
