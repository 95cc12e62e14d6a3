//! Reproducible synthetic PSD streams with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{dbm_to_mw, mw_to_dbm, BandPlan, Millis, PsdSample};

/// Log-domain spread of a PSD floor averaged over roughly 32 periodograms.
pub const DEFAULT_NOISE_SIGMA_DB: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TransmitterKind {
    /// Narrow blocks at a fresh random position for every burst.
    NarrowbandHopper,
    /// Wide blocks, at `centerBin` when given.
    WidebandBurst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TransmitterSpec {
    pub kind: TransmitterKind,
    pub power_dbm: f64,
    pub bandwidth_bins: usize,
    pub mean_duration_ms: f64,
    /// Mean idle time between the end of one burst and the start of the next.
    pub mean_interval_ms: f64,
    /// Duration floor; one tick when absent.
    #[serde(default)]
    pub min_duration_ms: Option<f64>,
    #[serde(default)]
    pub center_bin: Option<usize>,
}

/// A block emitted exactly as given, in addition to the random transmitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ForcedBlock {
    pub t_start: Millis,
    /// Inclusive; the last tick timestamp covered.
    pub t_stop: Millis,
    pub f_start_bin: usize,
    pub f_stop_bin: usize,
    pub power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SyntheticScenario {
    pub band: BandPlan,
    pub duration_ms: Millis,
    pub tick_interval_ms: Millis,
    #[serde(default)]
    pub start_time_ms: Millis,
    pub noise_floor_dbm: f64,
    pub noise_sigma_db: f64,
    #[serde(default)]
    pub transmitters: Vec<TransmitterSpec>,
    #[serde(default)]
    pub forced_blocks: Vec<ForcedBlock>,
    #[serde(default)]
    pub seed: u64,
}

/// One labelled transmission block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroundTruthLabel {
    pub t_start: Millis,
    pub t_stop: Millis,
    pub f_start_bin: usize,
    pub f_stop_bin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    label: GroundTruthLabel,
    power_mw: f64,
}

impl SyntheticScenario {
    /// A quiet band with no transmitters.
    pub fn noise_only(band: BandPlan, ticks: u64, tick_interval_ms: Millis, seed: u64) -> Self {
        Self {
            band,
            duration_ms: ticks as Millis * tick_interval_ms,
            tick_interval_ms,
            start_time_ms: 0,
            noise_floor_dbm: -100.0,
            noise_sigma_db: DEFAULT_NOISE_SIGMA_DB,
            transmitters: Vec::new(),
            forced_blocks: Vec::new(),
            seed,
        }
    }

    pub fn from_toml(document: &str) -> Result<Self, ScenarioError> {
        let s: Self = toml::from_str(document).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario is always representable")
    }

    pub fn tick_count(&self) -> u64 {
        (self.duration_ms / self.tick_interval_ms).max(0) as u64
    }

    pub fn tick_time(&self, k: u64) -> Millis {
        self.start_time_ms + k as Millis * self.tick_interval_ms
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.tick_interval_ms <= 0 {
            return bad("tickIntervalMs must be positive".into());
        }
        if self.duration_ms < 0 {
            return bad("durationMs must be non-negative".into());
        }
        if !(self.noise_sigma_db.is_finite() && self.noise_sigma_db >= 0.0) {
            return bad("noiseSigmaDb must be finite and non-negative".into());
        }
        if !self.noise_floor_dbm.is_finite() {
            return bad("noiseFloorDbm must be finite".into());
        }
        let n = self.band.bin_count();
        for (i, tx) in self.transmitters.iter().enumerate() {
            if tx.bandwidth_bins == 0 || tx.bandwidth_bins > n {
                return bad(format!("transmitter {i}: bandwidthBins must be in 1..={n}"));
            }
            if !(tx.mean_duration_ms > 0.0 && tx.mean_interval_ms > 0.0) {
                return bad(format!("transmitter {i}: mean durations must be positive"));
            }
            if let Some(c) = tx.center_bin {
                if c >= n {
                    return bad(format!("transmitter {i}: centerBin outside the band"));
                }
            }
        }
        for (i, b) in self.forced_blocks.iter().enumerate() {
            if b.t_stop < b.t_start || b.f_stop_bin < b.f_start_bin || b.f_stop_bin >= n {
                return bad(format!("forced block {i} is malformed"));
            }
        }
        Ok(())
    }

    fn blocks(&self) -> Vec<Block> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.band.bin_count();
        let dt = self.tick_interval_ms;
        let ticks = self.tick_count();
        let mut blocks: Vec<Block> = self
            .forced_blocks
            .iter()
            .map(|b| Block {
                label: GroundTruthLabel {
                    t_start: b.t_start,
                    t_stop: b.t_stop,
                    f_start_bin: b.f_start_bin,
                    f_stop_bin: b.f_stop_bin,
                },
                power_mw: dbm_to_mw(b.power_dbm),
            })
            .collect();

        for tx in &self.transmitters {
            let gap = Exp::new(1.0 / tx.mean_interval_ms).expect("validated");
            let dur = Exp::new(1.0 / tx.mean_duration_ms).expect("validated");
            let floor = tx.min_duration_ms.unwrap_or(dt as f64).max(dt as f64);
            let bw = tx.bandwidth_bins;
            let mut t = gap.sample(&mut rng);
            loop {
                let d = dur.sample(&mut rng).max(floor);
                let first_tick = (t / dt as f64).ceil() as u64;
                if first_tick >= ticks {
                    break;
                }
                let len = ((d / dt as f64).round() as u64).max(1);
                let last_tick = (first_tick + len - 1).min(ticks - 1);
                let start_bin = match (tx.kind, tx.center_bin) {
                    (TransmitterKind::WidebandBurst, Some(c)) => {
                        c.saturating_sub(bw / 2).min(n - bw)
                    }
                    _ => rng.random_range(0..=n - bw),
                };
                blocks.push(Block {
                    label: GroundTruthLabel {
                        t_start: self.tick_time(first_tick),
                        t_stop: self.tick_time(last_tick),
                        f_start_bin: start_bin,
                        f_stop_bin: start_bin + bw - 1,
                    },
                    power_mw: dbm_to_mw(tx.power_dbm),
                });
                t += d + gap.sample(&mut rng);
            }
        }
        blocks.sort_by_key(|b| (b.label.t_start, b.label.f_start_bin, b.label.t_stop, b.label.f_stop_bin));
        blocks
    }
}

/// Streams a scenario tick by tick; yields exactly `tick_count` samples.
pub struct SyntheticStream {
    scenario: SyntheticScenario,
    blocks: Vec<Block>,
    next_block: usize,
    active: Vec<Block>,
    tick: u64,
    ticks: u64,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    extra_mw: Vec<f64>,
}

impl SyntheticStream {
    pub fn scenario(&self) -> &SyntheticScenario {
        &self.scenario
    }

    pub fn len(&self) -> u64 {
        self.ticks
    }

    pub fn is_empty(&self) -> bool {
        self.ticks == 0
    }
}

impl Iterator for SyntheticStream {
    type Item = PsdSample;

    fn next(&mut self) -> Option<PsdSample> {
        if self.tick >= self.ticks {
            return None;
        }
        let t = self.scenario.tick_time(self.tick);
        self.tick += 1;
        self.active.retain(|b| b.label.t_stop >= t);
        while let Some(b) = self.blocks.get(self.next_block) {
            if b.label.t_start > t {
                break;
            }
            if b.label.t_stop >= t {
                self.active.push(*b);
            }
            self.next_block += 1;
        }
        let n = self.scenario.band.bin_count();
        let mut values: Vec<f64> = (0..n).map(|_| self.noise.sample(&mut self.rng)).collect();
        if !self.active.is_empty() {
            self.extra_mw.iter_mut().for_each(|x| *x = 0.0);
            for b in &self.active {
                for x in &mut self.extra_mw[b.label.f_start_bin..=b.label.f_stop_bin] {
                    *x += b.power_mw;
                }
            }
            for (v, &extra) in values.iter_mut().zip(&self.extra_mw) {
                if extra > 0.0 {
                    *v = mw_to_dbm(dbm_to_mw(*v) + extra);
                }
            }
        }
        Some(PsdSample::new(t, values))
    }
}

/// Builds the sample stream and its ground-truth labels.
pub fn synth_generate(scenario: &SyntheticScenario) -> (SyntheticStream, Vec<GroundTruthLabel>) {
    let blocks = scenario.blocks();
    let truth = blocks.iter().map(|b| b.label).collect();
    let noise = Normal::new(scenario.noise_floor_dbm, scenario.noise_sigma_db)
        .expect("validated noise parameters");
    let stream = SyntheticStream {
        scenario: scenario.clone(),
        blocks,
        next_block: 0,
        active: Vec::new(),
        tick: 0,
        ticks: scenario.tick_count(),
        // Noise draws use their own stream so adding a transmitter never reshuffles the floor.
        rng: ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x9e37_79b9_7f4a_7c15),
        noise,
        extra_mw: vec![0.0; scenario.band.bin_count()],
    };
    (stream, truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band() -> BandPlan {
        BandPlan::new(868.0e6, 1000.0, 16).unwrap()
    }

    #[test]
    fn zero_transmitters_is_pure_noise() {
        let s = SyntheticScenario::noise_only(band(), 500, 100, 3);
        let (stream, truth) = synth_generate(&s);
        assert!(truth.is_empty());
        let samples: Vec<_> = stream.collect();
        assert_eq!(samples.len(), 500);
        let mean: f64 = samples.iter().flat_map(|s| s.values.iter()).sum::<f64>() / (500.0 * 16.0);
        assert!((mean + 100.0).abs() < 0.1);
    }

    #[test]
    fn forced_block_is_the_only_label() {
        let mut s = SyntheticScenario::noise_only(band(), 100, 100, 1);
        s.forced_blocks.push(ForcedBlock {
            t_start: 1000,
            t_stop: 2900,
            f_start_bin: 4,
            f_stop_bin: 6,
            power_dbm: -70.0,
        });
        let (stream, truth) = synth_generate(&s);
        assert_eq!(
            truth,
            vec![GroundTruthLabel { t_start: 1000, t_stop: 2900, f_start_bin: 4, f_stop_bin: 6 }]
        );
        for sample in stream {
            let inside = (1000..=2900).contains(&sample.timestamp);
            for (b, &v) in sample.values.iter().enumerate() {
                if inside && (4..=6).contains(&b) {
                    assert!(v > -71.0, "{v}");
                } else {
                    assert!(v < -90.0, "{v}");
                }
            }
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let mut s = SyntheticScenario::noise_only(band(), 300, 100, 11);
        s.transmitters.push(TransmitterSpec {
            kind: TransmitterKind::NarrowbandHopper,
            power_dbm: -75.0,
            bandwidth_bins: 2,
            mean_duration_ms: 800.0,
            mean_interval_ms: 2000.0,
            min_duration_ms: None,
            center_bin: None,
        });
        let (a, ta) = synth_generate(&s);
        let (b, tb) = synth_generate(&s);
        assert_eq!(ta, tb);
        assert!(!ta.is_empty());
        let a: Vec<_> = a.collect();
        let b: Vec<_> = b.collect();
        assert!(a.iter().zip(&b).all(|(x, y)| x.timestamp == y.timestamp
            && x.values.iter().zip(&y.values).all(|(p, q)| p.to_bits() == q.to_bits())));
    }

    #[test]
    fn wideband_uses_center_bin() {
        let mut s = SyntheticScenario::noise_only(band(), 1000, 100, 5);
        s.transmitters.push(TransmitterSpec {
            kind: TransmitterKind::WidebandBurst,
            power_dbm: -70.0,
            bandwidth_bins: 6,
            mean_duration_ms: 500.0,
            mean_interval_ms: 3000.0,
            min_duration_ms: Some(300.0),
            center_bin: Some(8),
        });
        let (_, truth) = synth_generate(&s);
        assert!(!truth.is_empty());
        for l in &truth {
            assert_eq!((l.f_start_bin, l.f_stop_bin), (5, 10));
            assert!(l.t_stop - l.t_start >= 200);
        }
    }

    #[test]
    fn scenario_toml_round_trip() {
        let mut s = SyntheticScenario::noise_only(band(), 10, 100, 2);
        s.forced_blocks.push(ForcedBlock { t_start: 0, t_stop: 100, f_start_bin: 0, f_stop_bin: 1, power_dbm: -60.0 });
        let back = SyntheticScenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }
}
