//! Throughput and memory measurement of the detection pipeline.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::config::DetectorConfig;
use crate::engine::Engine;
use crate::eval::{SyntheticScenario, TransmitterKind, TransmitterSpec};
use crate::model::{BandPlan, Millis, PsdSample, SampleError};
use crate::topology::{run_topology, TopologyError, TopologyOptions};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchReport {
    pub samples: u64,
    pub bins: usize,
    pub events: u64,
    pub wall_seconds: f64,
    pub samples_per_second: f64,
    pub stream_duration_ms: Millis,
    /// Stream duration divided by processing wall time.
    pub realtime_factor: f64,
    /// Highest resident set size seen while the run was in progress; 0 when unavailable.
    pub peak_memory_bytes: u64,
}

/// Current resident set size from `/proc/self/status`.
pub fn resident_memory_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Samples RSS on a background thread until dropped.
struct MemorySampler {
    stop: Arc<AtomicBool>,
    peak: Arc<AtomicU64>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl MemorySampler {
    fn start(period: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let peak = Arc::new(AtomicU64::new(resident_memory_bytes().unwrap_or(0)));
        let handle = {
            let (stop, peak) = (stop.clone(), peak.clone());
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    if let Some(rss) = resident_memory_bytes() {
                        peak.fetch_max(rss, Ordering::Relaxed);
                    }
                    std::thread::sleep(period);
                }
            })
        };
        Self {
            stop,
            peak,
            handle: Some(handle),
        }
    }

    fn finish(mut self) -> u64 {
        if let Some(rss) = resident_memory_bytes() {
            self.peak.fetch_max(rss, Ordering::Relaxed);
        }
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
        self.peak.load(Ordering::Relaxed)
    }
}

fn measure<E>(
    plan: &BandPlan,
    tick_interval_ms: Millis,
    run: impl FnOnce() -> Result<(u64, u64), E>,
) -> Result<BenchReport, E> {
    let sampler = MemorySampler::start(Duration::from_millis(5));
    let started = Instant::now();
    let result = run();
    let wall = started.elapsed().as_secs_f64().max(1e-9);
    let peak = sampler.finish();
    let (samples, events) = result?;
    let duration = samples as Millis * tick_interval_ms;
    Ok(BenchReport {
        samples,
        bins: plan.bin_count(),
        events,
        wall_seconds: wall,
        samples_per_second: samples as f64 / wall,
        stream_duration_ms: duration,
        realtime_factor: duration as f64 / 1000.0 / wall,
        peak_memory_bytes: peak,
    })
}

/// Runs the sequential engine over `stream` and measures it.
pub fn benchmark(
    stream: impl IntoIterator<Item = PsdSample>,
    plan: &BandPlan,
    cfg: &DetectorConfig,
    tick_interval_ms: Millis,
) -> Result<BenchReport, SampleError> {
    measure(plan, tick_interval_ms, || {
        let mut engine = Engine::new(plan.clone(), cfg);
        let mut events = 0u64;
        let mut samples = 0u64;
        for s in stream {
            events += engine.process(&s)?.closed.len() as u64;
            samples += 1;
        }
        events += engine.finish().closed.len() as u64;
        Ok((samples, events))
    })
}

/// Same measurement through the threaded topology.
pub fn benchmark_topology(
    stream: impl Iterator<Item = PsdSample> + Send,
    plan: &BandPlan,
    cfg: &DetectorConfig,
    tick_interval_ms: Millis,
    opts: &TopologyOptions,
) -> Result<BenchReport, TopologyError> {
    measure(plan, tick_interval_ms, || {
        let summary = run_topology(stream.map(Ok), plan, cfg, opts, |_| Ok(()))?;
        Ok((summary.ticks, summary.events))
    })
}

/// Benchmark workload: a noisy band with a few hopping and bursty transmitters.
pub fn bench_scenario(bins: usize, ticks: u64, tick_interval_ms: Millis, seed: u64) -> SyntheticScenario {
    let band = BandPlan::new(868.0e6, 1000.0, bins).expect("bins must be positive");
    let mut s = SyntheticScenario::noise_only(band, ticks, tick_interval_ms, seed);
    let tick = tick_interval_ms as f64;
    s.transmitters = vec![
        TransmitterSpec {
            kind: TransmitterKind::NarrowbandHopper,
            power_dbm: -70.0,
            bandwidth_bins: 3.min(bins),
            mean_duration_ms: 30.0 * tick,
            mean_interval_ms: 20.0 * tick,
            min_duration_ms: None,
            center_bin: None,
        },
        TransmitterSpec {
            kind: TransmitterKind::WidebandBurst,
            power_dbm: -65.0,
            bandwidth_bins: (bins / 10).max(1),
            mean_duration_ms: 50.0 * tick,
            mean_interval_ms: 200.0 * tick,
            min_duration_ms: None,
            center_bin: None,
        },
    ];
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{synth_generate, SyntheticScenario};

    #[test]
    fn short_stream_has_finite_positive_throughput() {
        let plan = BandPlan::new(0.0, 1.0, 8).unwrap();
        let s = SyntheticScenario::noise_only(plan.clone(), 50, 100, 1);
        let (stream, _) = synth_generate(&s);
        let r = benchmark(stream, &plan, &DetectorConfig::default(), 100).unwrap();
        assert_eq!(r.samples, 50);
        assert!(r.samples_per_second.is_finite() && r.samples_per_second > 0.0);
        assert!(r.realtime_factor > 0.0);
        if cfg!(target_os = "linux") {
            assert!(r.peak_memory_bytes > 0);
        }
    }
}
