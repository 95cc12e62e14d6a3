//! Single-threaded detect→group pipeline over a whole band.

use crate::config::DetectorConfig;
use crate::detector::{BinBank, Detection};
use crate::grouping::{GroupingStage, TickOutput};
use crate::model::{validate_sample, BandPlan, Millis, PsdSample, SampleError};

/// All bin pipelines plus the grouping stage, driven one sample at a time.
#[derive(Debug, Clone)]
pub struct Engine {
    bank: BinBank,
    stage: GroupingStage,
    last_timestamp: Option<Millis>,
    detections: Vec<Detection>,
    ticks: u64,
}

impl Engine {
    pub fn new(plan: BandPlan, cfg: &DetectorConfig) -> Self {
        Self {
            bank: BinBank::new(0..plan.bin_count(), cfg),
            stage: GroupingStage::new(plan, cfg.freq_gap_f, cfg.time_gap_t),
            last_timestamp: None,
            detections: Vec::new(),
            ticks: 0,
        }
    }

    pub fn plan(&self) -> &BandPlan {
        self.stage.plan()
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Validates and processes one sample.
    pub fn process(&mut self, sample: &PsdSample) -> Result<TickOutput, SampleError> {
        validate_sample(sample, self.stage.plan(), self.last_timestamp)?;
        self.last_timestamp = Some(sample.timestamp);
        self.ticks += 1;
        self.bank
            .process(&sample.values, sample.timestamp, &mut self.detections);
        Ok(self.stage.on_tick(sample.timestamp, &self.detections))
    }

    /// Detections of the most recent tick.
    pub fn last_detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn finish(&mut self) -> TickOutput {
        self.stage.flush()
    }
}
