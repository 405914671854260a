//! Shared fixtures for the benchmarks under `benches/`.

use projhead_core::data::{DownstreamSpec, PretrainSpec, SubclassSpec};
use projhead_core::training::{balanced_init_linear, init_diagonal};
use projhead_core::Model;

/// Five unit-magnitude features with increasing disruption.
pub fn graded_spec() -> PretrainSpec {
    PretrainSpec::new(vec![1.0; 5], vec![0.0, 0.25, 0.5, 0.75, 1.0], 0.01, 4).unwrap()
}

pub fn graded_downstream() -> DownstreamSpec {
    DownstreamSpec::new(vec![1.0; 5], 4).unwrap()
}

/// Two-feature data where augmentation destroys the second feature.
pub fn destroyed_spec() -> PretrainSpec {
    PretrainSpec::new(vec![1.0, 1.0], vec![0.0, 1.0], 0.0, 2).unwrap()
}

pub fn subclass_spec() -> SubclassSpec {
    SubclassSpec::uniform(2, 1.0).unwrap()
}

pub fn linear_model(d: usize, p: usize, seed: u64) -> Model {
    balanced_init_linear(&[d, p, p], 0.1, seed).unwrap().into()
}

pub fn diagonal_model() -> Model {
    init_diagonal(vec![1.2, 2.0], vec![1.0, 0.3], 0.25).unwrap().into()
}
