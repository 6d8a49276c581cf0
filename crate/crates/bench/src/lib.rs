//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use deflicker::flow::FlowProvider;
use deflicker::synth::{generate, SynthSpec, SynthVideo};
use deflicker::trainer::TrainingVideo;

/// The canonical 32×32, 20-frame synthetic video.
pub fn b1() -> SynthVideo {
    generate(&SynthSpec::b1()).expect("B1 spec is valid")
}

pub fn b1_training_video() -> TrainingVideo {
    let v = b1();
    TrainingVideo {
        triplet: v.triplet,
        flows: Arc::new(v.flows) as Arc<dyn FlowProvider>,
    }
}
