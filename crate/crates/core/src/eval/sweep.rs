//! Batch detection runs over a grid of detector configurations.

use std::collections::BTreeMap;

use serde::Serialize;

use super::matching::{confusion, match_events, ConfusionMatrix, ConfusionRates, Tolerances};
use super::run_pipeline;
use super::synth::GroundTruthLabel;
use crate::config::{load_config, ConfigError, DetectorConfig};
use crate::model::{BandPlan, PsdSample};

/// Cartesian product of parameter values applied over a base config.
///
/// The TOML form maps detector keys to arrays (or single values):
///
/// ```toml
/// alpha = [0.001, 0.01, 0.05]
/// freqGapF = [1, 3]
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterGrid {
    axes: BTreeMap<String, Vec<toml::Value>>,
}

impl ParameterGrid {
    pub fn from_toml(document: &str) -> Result<Self, ConfigError> {
        let table: toml::Table =
            toml::from_str(document).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let axes = table
            .into_iter()
            .map(|(k, v)| match v {
                toml::Value::Array(xs) => (k, xs),
                other => (k, vec![other]),
            })
            .collect();
        Ok(Self { axes })
    }

    pub fn axis(mut self, key: &str, values: Vec<toml::Value>) -> Self {
        self.axes.insert(key.to_string(), values);
        self
    }

    /// Every combination over `base`, in lexicographic key order.
    pub fn expand(&self, base: &DetectorConfig) -> Vec<(String, Result<DetectorConfig, ConfigError>)> {
        let base_table: toml::Table =
            toml::from_str(&base.to_toml()).expect("serialized config parses");
        let mut combos: Vec<Vec<(&String, &toml::Value)>> = vec![Vec::new()];
        for (k, values) in &self.axes {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((k, v));
                        c
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(|combo| {
                let mut table = base_table.clone();
                let mut label = Vec::new();
                for (k, v) in combo {
                    table.insert(k.clone(), v.clone());
                    label.push(format!("{k}={v}"));
                }
                // A changed window size must pull the warmup along with it.
                if !self.axes.contains_key("warmupSamples") {
                    table.remove("warmupSamples");
                }
                let label = if label.is_empty() { "base".to_string() } else { label.join(",") };
                let text = toml::to_string(&table).expect("table serializes");
                (label, load_config(&text))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepRow {
    pub label: String,
    pub config: Option<DetectorConfig>,
    pub detected: usize,
    pub truth: usize,
    pub confusion: Option<ConfusionMatrix>,
    pub rates: Option<ConfusionRates>,
    pub error: Option<String>,
}

/// Runs the full detect→group pipeline once per configuration over identical input.
///
/// Runs are independent and execute on scoped threads; failures are recorded
/// in their row.
pub fn run_sweep(
    stream: &[PsdSample],
    truth: &[GroundTruthLabel],
    plan: &BandPlan,
    grid: &[(String, Result<DetectorConfig, ConfigError>)],
    tolerances: Tolerances,
) -> Vec<SweepRow> {
    assert!(!grid.is_empty(), "parameter grid must not be empty");
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(grid.len());
    let mut rows: Vec<Option<SweepRow>> = vec![None; grid.len()];
    std::thread::scope(|scope| {
        let chunk = grid.len().div_ceil(workers);
        for (slot, jobs) in rows.chunks_mut(chunk).zip(grid.chunks(chunk)) {
            scope.spawn(move || {
                for (out, (label, cfg)) in slot.iter_mut().zip(jobs) {
                    *out = Some(run_one(stream, truth, plan, label, cfg, tolerances));
                }
            });
        }
    });
    rows.into_iter().map(|r| r.expect("every row is filled")).collect()
}

fn run_one(
    stream: &[PsdSample],
    truth: &[GroundTruthLabel],
    plan: &BandPlan,
    label: &str,
    cfg: &Result<DetectorConfig, ConfigError>,
    tol: Tolerances,
) -> SweepRow {
    let mut row = SweepRow {
        label: label.to_string(),
        config: cfg.as_ref().ok().cloned(),
        detected: 0,
        truth: truth.len(),
        confusion: None,
        rates: None,
        error: None,
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    match run_pipeline(stream.iter().cloned(), plan, cfg) {
        Ok(events) => {
            let m = match_events(&events, truth, tol.time_ms, tol.freq_bins);
            let c = confusion(&m);
            row.detected = events.len();
            row.rates = c.rates().ok();
            row.confusion = Some(c);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// CSV rendering of a sweep table.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "label,detected,truth,correctlyDetected,undetected,falselyDetected,correctRate,missedRate,falseRate,error\n",
    );
    for r in rows {
        let c = r.confusion.unwrap_or(ConfusionMatrix {
            correctly_detected: 0,
            undetected: 0,
            falsely_detected: 0,
        });
        let rate = |f: fn(&ConfusionRates) -> f64| r.rates.as_ref().map_or(String::new(), |x| format!("{:.6}", f(x)));
        out.push_str(&format!(
            "\"{}\",{},{},{},{},{},{},{},{},\"{}\"\n",
            r.label.replace('"', "\"\""),
            r.detected,
            r.truth,
            c.correctly_detected,
            c.undetected,
            c.falsely_detected,
            rate(|x| x.correct),
            rate(|x| x.missed),
            rate(|x| x.false_detections),
            r.error.as_deref().unwrap_or("").replace('"', "\"\""),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_expands_cartesian() {
        let g = ParameterGrid::from_toml("alpha = [0.001, 0.05]\nfreqGapF = [1, 2, 3]\n").unwrap();
        let combos = g.expand(&DetectorConfig::default());
        assert_eq!(combos.len(), 6);
        assert_eq!(combos[0].0, "alpha=0.001,freqGapF=1");
        assert!(combos.iter().all(|(_, c)| c.is_ok()));
    }

    #[test]
    fn window_axis_moves_warmup() {
        let g = ParameterGrid::from_toml("recentWinSize = 8").unwrap();
        let (_, cfg) = &g.expand(&DetectorConfig::default())[0];
        assert_eq!(cfg.as_ref().unwrap().warmup_samples, 208);
    }

    #[test]
    fn invalid_combination_is_recorded_not_fatal() {
        let plan = BandPlan::new(0.0, 1.0, 4).unwrap();
        let g = ParameterGrid::from_toml("alpha = [0.01, 2.0]").unwrap();
        let rows = run_sweep(&[], &[], &plan, &g.expand(&DetectorConfig::default()), Tolerances::for_tick(100));
        assert_eq!(rows.len(), 2);
        assert!(rows[0].error.is_none());
        assert_eq!(rows[0].confusion.unwrap().correctly_detected, 0);
        assert!(rows[0].rates.is_none());
        assert!(rows[1].error.as_deref().unwrap().contains("alpha"));
        let csv = sweep_to_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
    }
}
