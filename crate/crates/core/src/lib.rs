//! Linear semantic boundaries in a Gaussian latent space.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] – latent codes, unit semantic directions, edits and
//!   conditional (projected) directions.
//! * [`svm`] – a deterministic linear soft-margin SVM used to recover
//!   boundaries from labeled latent codes.
//! * [`oracle`] – an analytic generator with planted semantic directions,
//!   standing in for a GAN plus an attribute classifier.
//! * [`pipeline`] – sampling, candidate selection, boundary fitting,
//!   correlation analysis, Monte Carlo concentration checks and
//!   distance/artifact experiments.
//! * [`lsds`] – the binary sample-dataset file format.

pub mod geometry;
pub mod lsds;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod svm;

pub use geometry::{ConditionSet, DirectionMeta, GeometryError, LatentCode, SemanticDirection, Space};
pub use oracle::{FaceParams, GeneratorConfig, GeneratorSpec, OracleError};
pub use svm::{LabeledDataset, SvmConfig, SvmError, TrainedBoundary};
