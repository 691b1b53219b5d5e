//! Scenario generation: CIFAR-10 ingestion, colored-square injection and the
//! synthetic Gaussian-mode generator.

pub mod cifar;
mod sample;
mod spec;
pub mod spurious;
pub mod synth;

pub use cifar::{binarize_label, read_cifar10_batch, Image};
pub use sample::{spurious_feature_id, Rgb, Sample, Scenario, TaskData};
pub use spec::{ten_class_synth, CifarScenarioSpec, ClassIncrementalSpec, ScenarioSpec};
pub use spurious::{
    build_cifar_scenario, build_task, inject_square, sample_colors, sample_support, SourcePool,
    SpuriousSpec,
};
pub use synth::{
    build_class_incremental_synth, build_synth_scenario, synth_sample, SynthGenerator,
    SynthScenarioSpec, SynthSpec,
};
