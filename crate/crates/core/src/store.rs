//! Indexed event store with range and location queries.
//!
//! Query documents use the operator spellings `$ne`, `$gt`, `$lt` for range
//! predicates and `$location` with `$radius` or `$limit` for spatial lookups:
//!
//! ```json
//! { "$from": "MergedTx", "tStart": { "$gt": 1000 }, "channelHz": { "$ne": 868.3e6 } }
//! { "$from": "MergedTx", "location": { "$location": [46.05, 14.5], "$limit": 3 } }
//! ```

use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{Location, SpectrumEvent};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate event id {0}")]
    DuplicateId(u64),
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("store file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("store file {path} line {line}: {source}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: SpectrumEvent,
}

/// Queryable scalar fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Id,
    TStart,
    TStop,
    FStartBin,
    FStopBin,
    FStartHz,
    FStopHz,
    ChannelHz,
    MeanPowerDbm,
}

impl Field {
    pub const ALL: [Field; 9] = [
        Field::Id,
        Field::TStart,
        Field::TStop,
        Field::FStartBin,
        Field::FStopBin,
        Field::FStartHz,
        Field::FStopHz,
        Field::ChannelHz,
        Field::MeanPowerDbm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Id => "id",
            Field::TStart => "tStart",
            Field::TStop => "tStop",
            Field::FStartBin => "fStartBin",
            Field::FStopBin => "fStopBin",
            Field::FStartHz => "fStartHz",
            Field::FStopHz => "fStopHz",
            Field::ChannelHz => "channelHz",
            Field::MeanPowerDbm => "meanPowerDbm",
        }
    }

    pub fn parse(name: &str) -> Result<Field, StoreError> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| StoreError::UnknownField(name.to_string()))
    }

    pub fn value(self, e: &SpectrumEvent) -> f64 {
        match self {
            Field::Id => e.id as f64,
            Field::TStart => e.t_start as f64,
            Field::TStop => e.t_stop as f64,
            Field::FStartBin => e.f_start_bin as f64,
            Field::FStopBin => e.f_stop_bin as f64,
            Field::FStartHz => e.f_start_hz,
            Field::FStopHz => e.f_stop_hz,
            Field::ChannelHz => e.channel_hz,
            Field::MeanPowerDbm => e.mean_power_dbm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Predicate {
    NotEqual(f64),
    GreaterThan(f64),
    LessThan(f64),
}

impl Predicate {
    pub fn test(self, v: f64) -> bool {
        match self {
            Predicate::NotEqual(x) => v != x,
            Predicate::GreaterThan(x) => v > x,
            Predicate::LessThan(x) => v < x,
        }
    }

    fn operand(self) -> f64 {
        match self {
            Predicate::NotEqual(x) | Predicate::GreaterThan(x) | Predicate::LessThan(x) => x,
        }
    }
}

/// Conjunction of field predicates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RangeQuery {
    terms: Vec<(Field, Predicate)>,
}

impl RangeQuery {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn and(mut self, field: Field, p: Predicate) -> Self {
        self.terms.push((field, p));
        self
    }

    pub fn ne(self, field: Field, v: f64) -> Self {
        self.and(field, Predicate::NotEqual(v))
    }

    pub fn gt(self, field: Field, v: f64) -> Self {
        self.and(field, Predicate::GreaterThan(v))
    }

    pub fn lt(self, field: Field, v: f64) -> Self {
        self.and(field, Predicate::LessThan(v))
    }

    pub fn terms(&self) -> &[(Field, Predicate)] {
        &self.terms
    }

    pub fn matches(&self, e: &SpectrumEvent) -> bool {
        self.terms.iter().all(|(f, p)| p.test(f.value(e)))
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.terms.is_empty() {
            return Err(StoreError::InvalidQuery("at least one predicate is required".into()));
        }
        if let Some((f, _)) = self.terms.iter().find(|(_, p)| p.operand().is_nan()) {
            return Err(StoreError::InvalidQuery(format!("NaN operand on {}", f.name())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocationConstraint {
    RadiusMeters(f64),
    Limit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationQuery {
    pub center: Location,
    pub constraint: LocationConstraint,
}

impl LocationQuery {
    pub fn radius(center: Location, meters: f64) -> Self {
        Self {
            center,
            constraint: LocationConstraint::RadiusMeters(meters),
        }
    }

    pub fn nearest(center: Location, limit: usize) -> Self {
        Self {
            center,
            constraint: LocationConstraint::Limit(limit),
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let c = self.center;
        if !(c.latitude.is_finite() && c.latitude.abs() <= 90.0 && c.longitude.is_finite()) {
            return Err(StoreError::InvalidQuery("center out of range".into()));
        }
        match self.constraint {
            LocationConstraint::RadiusMeters(r) if !(r > 0.0 && r.is_finite()) => {
                Err(StoreError::InvalidQuery("$radius must be positive".into()))
            }
            LocationConstraint::Limit(0) => Err(StoreError::InvalidQuery("$limit must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

/// Great-circle distance in meters on a spherical Earth.
pub fn haversine_m(a: Location, b: Location) -> f64 {
    let (p1, p2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dp = p2 - p1;
    let dl = (b.longitude - a.longitude).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Lower bound on the distance to any point at latitude `lat` (meridian arc).
fn latitude_bound_m(center_lat: f64, lat: f64) -> f64 {
    EARTH_RADIUS_M * (lat - center_lat).abs().to_radians() * (1.0 - 1e-9)
}

type Key = OrderedFloat<f64>;

/// One logical store (the frequency-grouped or the time-grouped events).
#[derive(Debug, Default)]
pub struct EventStore {
    events: Vec<StoredEvent>,
    by_id: HashMap<u64, u64>,
    by_time: BTreeMap<Key, Vec<u64>>,
    by_channel: BTreeMap<Key, Vec<u64>>,
    /// (latitude, seq) for events carrying a location.
    by_latitude: BTreeMap<(Key, u64), Location>,
    journal: Option<(PathBuf, File)>,
}

impl EventStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens an append-only NDJSON journal, replaying any existing records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut store = Self::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: SpectrumEvent =
                    serde_json::from_str(&line).map_err(|source| StoreError::Corrupt {
                        path: path.clone(),
                        line: i + 1,
                        source,
                    })?;
                store.insert(event)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        store.journal = Some((path, file));
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn get(&self, seq: u64) -> Option<&StoredEvent> {
        self.events.get(seq as usize)
    }

    pub fn get_by_id(&self, id: u64) -> Option<&StoredEvent> {
        self.by_id.get(&id).and_then(|&s| self.get(s))
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredEvent> {
        self.events.iter()
    }

    pub fn insert(&mut self, event: SpectrumEvent) -> Result<u64, StoreError> {
        if self.by_id.contains_key(&event.id) {
            return Err(StoreError::DuplicateId(event.id));
        }
        if let Some((path, file)) = &mut self.journal {
            let line = serde_json::to_string(&event).expect("events always serialize");
            writeln!(file, "{line}").map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
        }
        let seq = self.events.len() as u64;
        self.by_id.insert(event.id, seq);
        self.by_time
            .entry(OrderedFloat(event.t_start as f64))
            .or_default()
            .push(seq);
        self.by_channel
            .entry(OrderedFloat(event.channel_hz))
            .or_default()
            .push(seq);
        if let Some(loc) = event.location {
            self.by_latitude.insert((OrderedFloat(loc.latitude), seq), loc);
        }
        self.events.push(StoredEvent { seq, event });
        Ok(seq)
    }

    /// Events satisfying every predicate, in insertion order.
    pub fn query(&self, q: &RangeQuery) -> Result<Vec<&StoredEvent>, StoreError> {
        q.validate()?;
        let mut seqs = match self.index_candidates(q) {
            Some(c) => c,
            None => (0..self.events.len() as u64).collect(),
        };
        seqs.retain(|&s| q.matches(&self.events[s as usize].event));
        seqs.sort_unstable();
        Ok(seqs.into_iter().map(|s| &self.events[s as usize]).collect())
    }

    /// Narrowest candidate set from the time or channel index, if any bound applies.
    fn index_candidates(&self, q: &RangeQuery) -> Option<Vec<u64>> {
        let mut best: Option<Vec<u64>> = None;
        for (field, index) in [(Field::TStart, &self.by_time), (Field::ChannelHz, &self.by_channel)] {
            let mut lo = Bound::Unbounded;
            let mut hi = Bound::Unbounded;
            for (f, p) in q.terms() {
                if *f != field {
                    continue;
                }
                match *p {
                    Predicate::GreaterThan(x) => {
                        if matches!(lo, Bound::Unbounded) || matches!(lo, Bound::Excluded(OrderedFloat(y)) if x > y) {
                            lo = Bound::Excluded(OrderedFloat(x));
                        }
                    }
                    Predicate::LessThan(x) => {
                        if matches!(hi, Bound::Unbounded) || matches!(hi, Bound::Excluded(OrderedFloat(y)) if x < y) {
                            hi = Bound::Excluded(OrderedFloat(x));
                        }
                    }
                    Predicate::NotEqual(_) => {}
                }
            }
            if matches!((lo, hi), (Bound::Unbounded, Bound::Unbounded)) {
                continue;
            }
            let empty = match (lo, hi) {
                (Bound::Excluded(a), Bound::Excluded(b)) => a >= b,
                _ => false,
            };
            let found: Vec<u64> = if empty {
                Vec::new()
            } else {
                index.range((lo, hi)).flat_map(|(_, s)| s.iter().copied()).collect()
            };
            if best.as_ref().is_none_or(|b| found.len() < b.len()) {
                best = Some(found);
            }
        }
        best
    }

    /// Located events by ascending distance, ties by sequence number.
    pub fn query_location(&self, q: &LocationQuery) -> Result<Vec<(&StoredEvent, f64)>, StoreError> {
        q.validate()?;
        let hits = match q.constraint {
            LocationConstraint::RadiusMeters(r) => self.within_radius(q.center, r),
            LocationConstraint::Limit(k) => self.nearest(q.center, k),
        };
        Ok(hits
            .into_iter()
            .map(|(d, s)| (&self.events[s as usize], d))
            .collect())
    }

    fn within_radius(&self, center: Location, r: f64) -> Vec<(f64, u64)> {
        // Slack keeps the latitude band conservative under rounding.
        let dlat = (r / EARTH_RADIUS_M).to_degrees() * (1.0 + 1e-9) + 1e-12;
        let lo = (OrderedFloat(center.latitude - dlat), 0);
        let hi = (OrderedFloat(center.latitude + dlat), u64::MAX);
        let mut out: Vec<(f64, u64)> = self
            .by_latitude
            .range(lo..=hi)
            .map(|(&(_, s), &loc)| (haversine_m(center, loc), s))
            .filter(|&(d, _)| d <= r)
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    fn nearest(&self, center: Location, k: usize) -> Vec<(f64, u64)> {
        // Max-heap of the best k, keyed by (distance, seq).
        let mut best: BinaryHeap<(Key, u64)> = BinaryHeap::with_capacity(k + 1);
        let pivot = (OrderedFloat(center.latitude), 0u64);
        let mut up = self.by_latitude.range(pivot..);
        let mut down = self.by_latitude.range(..pivot).rev();
        let (mut next_up, mut next_down) = (up.next(), down.next());
        loop {
            let bound_up = next_up.map(|(&(lat, _), _)| latitude_bound_m(center.latitude, lat.0));
            let bound_down = next_down.map(|(&(lat, _), _)| latitude_bound_m(center.latitude, lat.0));
            let take_up = match (bound_up, bound_down) {
                (None, None) => break,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (Some(a), Some(b)) => a <= b,
            };
            let bound = if take_up { bound_up } else { bound_down }.unwrap();
            if best.len() == k && best.peek().is_some_and(|&(d, _)| bound > d.0) {
                break;
            }
            let (&(_, seq), &loc) = if take_up {
                let e = next_up.unwrap();
                next_up = up.next();
                e
            } else {
                let e = next_down.unwrap();
                next_down = down.next();
                e
            };
            best.push((OrderedFloat(haversine_m(center, loc)), seq));
            if best.len() > k {
                best.pop();
            }
        }
        let mut out: Vec<(f64, u64)> = best.into_iter().map(|(d, s)| (d.0, s)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    /// Id sets held by the linear store and each index, for consistency checks.
    pub fn index_ids(&self) -> [Vec<u64>; 3] {
        let ids = |seqs: &mut dyn Iterator<Item = u64>| {
            let mut v: Vec<u64> = seqs.map(|s| self.events[s as usize].event.id).collect();
            v.sort_unstable();
            v
        };
        [
            ids(&mut self.events.iter().map(|e| e.seq)),
            ids(&mut self.by_time.values().flatten().copied()),
            ids(&mut self.by_channel.values().flatten().copied()),
        ]
    }
}

/// The two logical stores a query document may name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StoreName {
    /// Frequency-grouped, per-tick transmissions.
    Transmissions,
    /// Time-grouped events.
    #[default]
    MergedTx,
}

impl StoreName {
    pub fn parse(s: &str) -> Result<Self, StoreError> {
        match s {
            "Transmissions" => Ok(StoreName::Transmissions),
            "MergedTx" => Ok(StoreName::MergedTx),
            other => Err(StoreError::InvalidQuery(format!("unknown store {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryKind {
    Range(RangeQuery),
    Location(LocationQuery),
}

/// A parsed JSON query document.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryDocument {
    pub from: StoreName,
    pub kind: QueryKind,
}

fn number(v: &Value, what: &str) -> Result<f64, StoreError> {
    v.as_f64()
        .ok_or_else(|| StoreError::InvalidQuery(format!("{what} must be a number")))
}

impl QueryDocument {
    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| StoreError::InvalidQuery(e.to_string()))?;
        Self::from_value(&doc)
    }

    pub fn from_value(doc: &Value) -> Result<Self, StoreError> {
        let obj = doc
            .as_object()
            .ok_or_else(|| StoreError::InvalidQuery("query must be an object".into()))?;
        let mut from = StoreName::default();
        let mut range = RangeQuery::new();
        let mut location = None;
        for (key, spec) in obj {
            if key == "$from" {
                let name = spec
                    .as_str()
                    .ok_or_else(|| StoreError::InvalidQuery("$from must be a string".into()))?;
                from = StoreName::parse(name)?;
                continue;
            }
            let ops = spec
                .as_object()
                .ok_or_else(|| StoreError::InvalidQuery(format!("{key}: expected an operator object")))?;
            if key == "location" {
                if location.is_some() {
                    return Err(StoreError::InvalidQuery("only one location clause is allowed".into()));
                }
                location = Some(parse_location(ops)?);
                continue;
            }
            let field = Field::parse(key)?;
            for (op, v) in ops {
                let x = number(v, op)?;
                let p = match op.as_str() {
                    "$ne" => Predicate::NotEqual(x),
                    "$gt" => Predicate::GreaterThan(x),
                    "$lt" => Predicate::LessThan(x),
                    other => return Err(StoreError::InvalidQuery(format!("unknown operator {other}"))),
                };
                range = range.and(field, p);
            }
        }
        let kind = match location {
            Some(_) if !range.terms().is_empty() => {
                return Err(StoreError::InvalidQuery(
                    "location and range clauses cannot be combined".into(),
                ))
            }
            Some(l) => QueryKind::Location(l),
            None => QueryKind::Range(range),
        };
        Ok(Self { from, kind })
    }
}

fn parse_location(ops: &serde_json::Map<String, Value>) -> Result<LocationQuery, StoreError> {
    let center = ops
        .get("$location")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 2)
        .ok_or_else(|| StoreError::InvalidQuery("$location must be [latitude, longitude]".into()))?;
    let center = Location::new(number(&center[0], "latitude")?, number(&center[1], "longitude")?);
    let q = match (ops.get("$radius"), ops.get("$limit")) {
        (Some(r), None) => LocationQuery::radius(center, number(r, "$radius")?),
        (None, Some(k)) => {
            let k = k
                .as_u64()
                .ok_or_else(|| StoreError::InvalidQuery("$limit must be a non-negative integer".into()))?;
            LocationQuery::nearest(center, k as usize)
        }
        _ => {
            return Err(StoreError::InvalidQuery(
                "exactly one of $radius or $limit is required".into(),
            ))
        }
    };
    if let Some(k) = ops.keys().find(|k| !matches!(k.as_str(), "$location" | "$radius" | "$limit")) {
        return Err(StoreError::InvalidQuery(format!("unknown operator {k}")));
    }
    q.validate()?;
    Ok(q)
}

/// Both logical stores behind a single-writer, many-reader lock.
#[derive(Debug, Clone, Default)]
pub struct SharedStore {
    inner: Arc<RwLock<Stores>>,
}

#[derive(Debug, Default)]
pub struct Stores {
    pub transmissions: EventStore,
    pub merged: EventStore,
}

impl Stores {
    pub fn get(&self, name: StoreName) -> &EventStore {
        match name {
            StoreName::Transmissions => &self.transmissions,
            StoreName::MergedTx => &self.merged,
        }
    }

    /// Runs a parsed document, returning matches as JSON records in result order.
    pub fn run(&self, doc: &QueryDocument) -> Result<Vec<StoredEvent>, StoreError> {
        let store = self.get(doc.from);
        Ok(match &doc.kind {
            QueryKind::Range(q) => store.query(q)?.into_iter().cloned().collect(),
            QueryKind::Location(q) => store
                .query_location(q)?
                .into_iter()
                .map(|(e, _)| e.clone())
                .collect(),
        })
    }
}

impl SharedStore {
    pub fn new(stores: Stores) -> Self {
        Self {
            inner: Arc::new(RwLock::new(stores)),
        }
    }

    pub fn insert(&self, name: StoreName, event: SpectrumEvent) -> Result<u64, StoreError> {
        let mut guard = self.inner.write().unwrap_or_else(|p| p.into_inner());
        match name {
            StoreName::Transmissions => guard.transmissions.insert(event),
            StoreName::MergedTx => guard.merged.insert(event),
        }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Stores> {
        self.inner.read().unwrap_or_else(|p| p.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BandPlan;

    fn ev(id: u64, t: i64, bin: usize) -> SpectrumEvent {
        let plan = BandPlan::new(868.0e6, 100.0e3, 16).unwrap();
        SpectrumEvent::from_bins(id, t, t + 500, bin, bin, -70.0, 6, &plan)
    }

    #[test]
    fn sequences_and_duplicates() {
        let mut s = EventStore::new();
        assert_eq!(s.insert(ev(7, 0, 1)).unwrap(), 0);
        assert_eq!(s.insert(ev(8, 0, 1)).unwrap(), 1);
        assert!(matches!(s.insert(ev(7, 5, 2)), Err(StoreError::DuplicateId(7))));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn time_window_query() {
        let mut s = EventStore::new();
        for (i, t) in [10, 20, 30].into_iter().enumerate() {
            s.insert(ev(i as u64, t, 0)).unwrap();
        }
        let q = RangeQuery::new().gt(Field::TStart, 15.0).lt(Field::TStart, 30.0);
        let hits = s.query(&q).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].event.t_start, 20);
        assert!(EventStore::new().query(&q).unwrap().is_empty());
    }

    #[test]
    fn channel_not_equal() {
        let mut s = EventStore::new();
        for i in 0..3 {
            s.insert(ev(i, 0, i as usize + 2)).unwrap();
        }
        // Bin 3 of a 100 kHz grid starting at 868.0 MHz is centered on 868.35 MHz.
        let excluded = s.get(1).unwrap().event.channel_hz;
        let hits = s.query(&RangeQuery::new().ne(Field::ChannelHz, excluded)).unwrap();
        let ids: Vec<u64> = hits.iter().map(|e| e.event.id).collect();
        assert_eq!(ids, vec![0, 2]);
    }

    #[test]
    fn empty_query_is_rejected() {
        assert!(EventStore::new().query(&RangeQuery::new()).is_err());
    }

    #[test]
    fn radius_and_limit() {
        let center = Location::new(46.0, 14.5);
        // 100 m and 5 km due north.
        let near = Location::new(46.0 + (100.0 / EARTH_RADIUS_M).to_degrees(), 14.5);
        let far = Location::new(46.0 + (5000.0 / EARTH_RADIUS_M).to_degrees(), 14.5);
        let mut s = EventStore::new();
        s.insert(ev(1, 0, 0).with_location(far)).unwrap();
        s.insert(ev(2, 0, 0).with_location(near)).unwrap();
        s.insert(ev(3, 0, 0)).unwrap();
        let hits = s.query_location(&LocationQuery::radius(center, 1000.0)).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0.event.id, 2);
        assert!((hits[0].1 - 100.0).abs() < 1e-6);
        let k1 = s.query_location(&LocationQuery::nearest(center, 1)).unwrap();
        assert_eq!(k1[0].0.event.id, 2);
        let exact = s.query_location(&LocationQuery::radius(near, 1.0)).unwrap();
        assert_eq!(exact[0].0.event.id, 2);
    }

    #[test]
    fn parses_documents() {
        let d = QueryDocument::parse(r#"{"$from":"Transmissions","tStart":{"$gt":0,"$lt":9},"id":{"$ne":3}}"#).unwrap();
        assert_eq!(d.from, StoreName::Transmissions);
        match d.kind {
            QueryKind::Range(q) => assert_eq!(q.terms().len(), 3),
            _ => panic!(),
        }
        let d = QueryDocument::parse(r#"{"location":{"$location":[1.0,2.0],"$limit":4}}"#).unwrap();
        assert_eq!(d.from, StoreName::MergedTx);
        assert!(matches!(d.kind, QueryKind::Location(LocationQuery { constraint: LocationConstraint::Limit(4), .. })));
        assert!(matches!(QueryDocument::parse(r#"{"power":{"$gt":1}}"#), Err(StoreError::UnknownField(_))));
        assert!(QueryDocument::parse(r#"{"location":{"$location":[1,2],"$radius":5,"$limit":1}}"#).is_err());
        assert!(QueryDocument::parse(r#"{"tStart":{"$gte":1}}"#).is_err());
    }

    #[test]
    fn journal_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.ndjson");
        {
            let mut s = EventStore::open(&path).unwrap();
            s.insert(ev(1, 10, 0)).unwrap();
            s.insert(ev(2, 20, 1).with_location(Location::new(1.0, 2.0))).unwrap();
        }
        let s = EventStore::open(&path).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get_by_id(2).unwrap().event.location, Some(Location::new(1.0, 2.0)));
    }
}
