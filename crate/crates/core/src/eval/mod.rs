//! Evaluation against synthetic ground truth: stream generation, slicing,
//! matching, confusion tables, parameter sweeps and benchmarks.

mod bench;
mod matching;
mod slices;
mod sweep;
mod synth;

pub use bench::{bench_scenario, benchmark, benchmark_topology, resident_memory_bytes, BenchReport};
pub use matching::{
    confusion, event_box, match_boxes, match_events, start_stop_confusion, ConfusionMatrix,
    ConfusionRates, EmptyTruth, MatchedPair, Matching, StartStopMatrix, Tolerances,
};
pub use slices::{extract_slices, Slice};
pub use sweep::{run_sweep, sweep_to_csv, ParameterGrid, SweepRow};
pub use synth::{
    synth_generate, ForcedBlock, GroundTruthLabel, ScenarioError, SyntheticScenario,
    SyntheticStream, TransmitterKind, TransmitterSpec, DEFAULT_NOISE_SIGMA_DB,
};

use crate::config::DetectorConfig;
use crate::engine::Engine;
use crate::model::{BandPlan, PsdSample, SampleError, SpectrumEvent};

/// Runs detection and grouping over a finite stream and returns every completed event.
pub fn run_pipeline(
    stream: impl IntoIterator<Item = PsdSample>,
    plan: &BandPlan,
    cfg: &DetectorConfig,
) -> Result<Vec<SpectrumEvent>, SampleError> {
    let mut engine = Engine::new(plan.clone(), cfg);
    let mut events = Vec::new();
    for s in stream {
        events.extend(engine.process(&s)?.closed);
    }
    events.extend(engine.finish().closed);
    Ok(events)
}

/// Reads newline-delimited ground-truth labels.
pub fn read_truth_ndjson(text: &str) -> Result<Vec<GroundTruthLabel>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

pub fn write_truth_ndjson(labels: &[GroundTruthLabel]) -> String {
    labels
        .iter()
        .map(|l| serde_json::to_string(l).expect("label serializes") + "\n")
        .collect()
}
