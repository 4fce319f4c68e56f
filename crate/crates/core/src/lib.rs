//! Detecting adversarial text by comparing two (or three) independently
//! trained classifiers, and repairing flagged inputs by voting over
//! meaning-preserving perturbations.

pub mod api;
pub mod batch;
pub mod classifier;
pub mod config;
pub mod detector;
pub mod embedding;
pub mod fixtures;
pub mod perturb;
pub mod repair;
pub mod report;
pub mod services;
pub mod testing;
pub mod text;
pub mod voting;

pub use classifier::{Classifier, ClassifierError, ClassifierHandle, LabelSet, ProbVector};
pub use detector::{DetectionVerdict, Detector};
pub use embedding::EmbeddingStore;
pub use perturb::{Method, PerturbConfig};
pub use repair::{repair, RepairConfig, RepairOutcome, RepairRun, Resources};
pub use voting::SprtParams;
