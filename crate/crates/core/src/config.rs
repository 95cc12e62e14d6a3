//! Detector configuration and the TOML config file loader.
//!
//! Detector parameters live as flat top-level keys. An optional `[band]` table
//! describes the band plan and optional `[[channels]]` entries declare the
//! channel table used by reports.
//!
//! ```toml
//! recentWinSize = 20
//! historicWinSize = 200
//! alpha = 0.01
//!
//! [band]
//! startFrequencyHz = 868.0e6
//! binWidthHz = 1000.0
//! binCount = 200
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::BandPlan;
use crate::report::ChannelSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {reason}")]
    InvariantViolation { field: &'static str, reason: String },
}

impl ConfigError {
    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::InvariantViolation {
            field,
            reason: reason.into(),
        }
    }
}

/// Per-bin detector and grouping parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DetectorConfig {
    pub recent_win_size: usize,
    pub historic_win_size: usize,
    pub hist_lower_bound: f64,
    pub hist_upper_bound: f64,
    pub num_hist_bins: usize,
    pub add_overflow_bins: bool,
    pub alpha: f64,
    /// Rising-mean hysteresis in dB gating the chi-square verdict.
    pub margin_db: f64,
    /// Inactive bins that may be bridged inside one event.
    pub freq_gap_f: usize,
    /// Silent ticks an event survives before it is closed.
    pub time_gap_t: usize,
    pub warmup_samples: usize,
}

pub const DEFAULT_RECENT_WIN_SIZE: usize = 20;
pub const DEFAULT_HISTORIC_WIN_SIZE: usize = 200;

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            recent_win_size: DEFAULT_RECENT_WIN_SIZE,
            historic_win_size: DEFAULT_HISTORIC_WIN_SIZE,
            hist_lower_bound: -120.0,
            hist_upper_bound: -20.0,
            num_hist_bins: 20,
            add_overflow_bins: true,
            alpha: 0.01,
            margin_db: 1.0,
            freq_gap_f: 1,
            time_gap_t: 2,
            warmup_samples: DEFAULT_RECENT_WIN_SIZE + DEFAULT_HISTORIC_WIN_SIZE,
        }
    }
}

/// Deserialization shape: every key optional, warmup defaults to the window sum.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawDetectorConfig {
    recent_win_size: Option<usize>,
    historic_win_size: Option<usize>,
    hist_lower_bound: Option<f64>,
    hist_upper_bound: Option<f64>,
    num_hist_bins: Option<usize>,
    add_overflow_bins: Option<bool>,
    alpha: Option<f64>,
    margin_db: Option<f64>,
    freq_gap_f: Option<usize>,
    time_gap_t: Option<usize>,
    warmup_samples: Option<usize>,
}

impl RawDetectorConfig {
    fn resolve(self) -> DetectorConfig {
        let d = DetectorConfig::default();
        let recent = self.recent_win_size.unwrap_or(d.recent_win_size);
        let historic = self.historic_win_size.unwrap_or(d.historic_win_size);
        DetectorConfig {
            recent_win_size: recent,
            historic_win_size: historic,
            hist_lower_bound: self.hist_lower_bound.unwrap_or(d.hist_lower_bound),
            hist_upper_bound: self.hist_upper_bound.unwrap_or(d.hist_upper_bound),
            num_hist_bins: self.num_hist_bins.unwrap_or(d.num_hist_bins),
            add_overflow_bins: self.add_overflow_bins.unwrap_or(d.add_overflow_bins),
            alpha: self.alpha.unwrap_or(d.alpha),
            margin_db: self.margin_db.unwrap_or(d.margin_db),
            freq_gap_f: self.freq_gap_f.unwrap_or(d.freq_gap_f),
            time_gap_t: self.time_gap_t.unwrap_or(d.time_gap_t),
            warmup_samples: self.warmup_samples.unwrap_or(recent + historic),
        }
    }
}

impl<'de> Deserialize<'de> for DetectorConfig {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let cfg = RawDetectorConfig::deserialize(deserializer)?.resolve();
        cfg.validate().map_err(serde::de::Error::custom)?;
        Ok(cfg)
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.recent_win_size < 2 {
            return Err(ConfigError::invalid("recentWinSize", "must be at least 2"));
        }
        if self.historic_win_size <= self.recent_win_size {
            return Err(ConfigError::invalid(
                "historicWinSize",
                format!(
                    "must exceed recentWinSize ({} <= {})",
                    self.historic_win_size, self.recent_win_size
                ),
            ));
        }
        if !self.hist_lower_bound.is_finite() {
            return Err(ConfigError::invalid("histLowerBound", "must be finite"));
        }
        if !(self.hist_upper_bound.is_finite() && self.hist_upper_bound > self.hist_lower_bound)
        {
            return Err(ConfigError::invalid(
                "histUpperBound",
                "must be finite and above histLowerBound",
            ));
        }
        if self.num_hist_bins < 2 {
            return Err(ConfigError::invalid("numHistBins", "must be at least 2"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConfigError::invalid("alpha", "must lie strictly between 0 and 1"));
        }
        if !(self.margin_db.is_finite() && self.margin_db >= 0.0) {
            return Err(ConfigError::invalid("marginDb", "must be finite and non-negative"));
        }
        if self.warmup_samples < self.recent_win_size + self.historic_win_size {
            return Err(ConfigError::invalid(
                "warmupSamples",
                "must be at least recentWinSize + historicWinSize",
            ));
        }
        Ok(())
    }

    /// Serializes to the flat TOML form accepted by [`load_config`].
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("detector config is always representable")
    }
}

/// Parses a detector config document. Unspecified keys take their defaults.
pub fn load_config(document: &str) -> Result<DetectorConfig, ConfigError> {
    let table: toml::Table = toml::from_str(document).map_err(|e| ConfigError::Parse(e.to_string()))?;
    detector_from_table(table)
}

fn detector_from_table(table: toml::Table) -> Result<DetectorConfig, ConfigError> {
    let raw: RawDetectorConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let cfg = raw.resolve();
    cfg.validate()?;
    Ok(cfg)
}

/// Everything a config file may carry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EngineConfig {
    pub detector: DetectorConfig,
    pub band: Option<BandPlan>,
    pub channels: Option<Vec<ChannelSpec>>,
}

/// Parses a full config file: detector keys plus optional `[band]` and `[[channels]]`.
pub fn load_engine_config(document: &str) -> Result<EngineConfig, ConfigError> {
    let mut table: toml::Table =
        toml::from_str(document).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let band = match table.remove("band") {
        Some(v) => Some(
            v.try_into::<BandPlan>()
                .map_err(|e| ConfigError::Parse(format!("[band]: {e}")))?,
        ),
        None => None,
    };
    let channels = match table.remove("channels") {
        Some(v) => Some(
            v.try_into::<Vec<ChannelSpec>>()
                .map_err(|e| ConfigError::Parse(format!("[[channels]]: {e}")))?,
        ),
        None => None,
    };
    Ok(EngineConfig {
        detector: detector_from_table(table)?,
        band,
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = load_config("").unwrap();
        assert_eq!(cfg, DetectorConfig::default());
        assert_eq!(cfg.recent_win_size, 20);
        assert_eq!(cfg.historic_win_size, 200);
        assert_eq!(cfg.num_hist_bins, 20);
        assert_eq!(cfg.alpha, 0.01);
        assert_eq!(cfg.freq_gap_f, 1);
        assert_eq!(cfg.time_gap_t, 2);
        assert_eq!(cfg.warmup_samples, 220);
    }

    #[test]
    fn inverted_windows_name_the_field() {
        let err = load_config("recentWinSize = 500\nhistoricWinSize = 100\n").unwrap_err();
        match err {
            ConfigError::InvariantViolation { field, .. } => assert_eq!(field, "historicWinSize"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn passthrough_values() {
        let cfg = load_config("alpha = 0.05\nfreqGapF = 3\n").unwrap();
        assert_eq!(cfg.alpha, 0.05);
        assert_eq!(cfg.freq_gap_f, 3);
        assert_eq!(cfg.time_gap_t, 2);
    }

    #[test]
    fn warmup_follows_window_sizes() {
        let cfg = load_config("recentWinSize = 4\n").unwrap();
        assert_eq!(cfg.warmup_samples, 204);
        assert!(load_config("warmupSamples = 10\n").is_err());
    }

    #[test]
    fn unknown_keys_and_garbage_are_parse_errors() {
        assert!(matches!(load_config("alhpa = 0.1"), Err(ConfigError::Parse(_))));
        assert!(matches!(load_config("alpha = "), Err(ConfigError::Parse(_))));
        assert!(matches!(
            load_config("alpha = 1.5"),
            Err(ConfigError::InvariantViolation { field: "alpha", .. })
        ));
    }

    #[test]
    fn engine_config_sections() {
        let doc = r#"
alpha = 0.02

[band]
startFrequencyHz = 868.0e6
binWidthHz = 1000.0
binCount = 8

[[channels]]
name = "low"
lowHz = 868.0e6
highHz = 868.004e6
"#;
        let cfg = load_engine_config(doc).unwrap();
        assert_eq!(cfg.detector.alpha, 0.02);
        assert_eq!(cfg.band.unwrap().bin_count(), 8);
        assert_eq!(cfg.channels.unwrap()[0].name, "low");
    }

    fn arb_config() -> impl Strategy<Value = DetectorConfig> {
        (
            2usize..64,
            1usize..500,
            -150.0f64..-50.0,
            1.0f64..100.0,
            2usize..64,
            any::<bool>(),
            0.0001f64..0.5,
            0.0f64..5.0,
            0usize..10,
            0usize..10,
            0usize..100,
        )
            .prop_map(|(r, dh, lo, span, b, ov, alpha, m, f, t, extra)| DetectorConfig {
                recent_win_size: r,
                historic_win_size: r + dh,
                hist_lower_bound: lo,
                hist_upper_bound: lo + span,
                num_hist_bins: b,
                add_overflow_bins: ov,
                alpha,
                margin_db: m,
                freq_gap_f: f,
                time_gap_t: t,
                warmup_samples: 2 * r + dh + extra,
            })
    }

    proptest! {
        #[test]
        fn serialize_reload_round_trip(cfg in arb_config()) {
            let text = cfg.to_toml();
            prop_assert_eq!(load_config(&text).unwrap(), cfg);
        }
    }
}
