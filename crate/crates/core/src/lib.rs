//! Numerical laboratory for the layer-wise feature weighting that projection
//! heads induce in contrastive and supervised pretraining.
//!
//! The crate is organised bottom-up: [`data`] generates the synthetic
//! distributions, [`models`] holds the network families, [`losses`] evaluates
//! objectives and their gradients, [`training`] integrates gradient flow,
//! [`theory`] provides the closed-form predictions and [`evaluation`] probes
//! learned representations. [`verify`] bundles the property suites used by
//! the command-line tool and the acceptance tests.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod models;
pub mod theory;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use data::{DownstreamSpec, PretrainSpec, SubclassSpec};
pub use losses::{LossKind, Objective};
pub use models::{DiagonalNet, FeatureWeightProfile, LinearStack, Model};
pub use theory::{DepthScaling, TheoryPrediction};
pub use training::{TrainConfig, Trajectory};
