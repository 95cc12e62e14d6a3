//! Ingest topology: sample decoding, bin partitioning across workers, the
//! per-tick barrier and the threaded runner. Workers may also run behind a
//! TCP connection speaking length-prefixed binary frames.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::ops::Range;
use std::sync::Arc;
use std::time::Duration;

use crossbeam::channel::{bounded, Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::DetectorConfig;
use crate::detector::{BinActivity, BinBank, Detection, Direction};
use crate::grouping::{GroupingStage, TickOutput};
use crate::model::{validate_sample, BandPlan, Millis, PsdSample, SampleError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum WireFormat {
    /// `timestamp_ms,v0,v1,...` one record per line.
    CsvLine,
    /// Little-endian u64 timestamp followed by N little-endian f32 values.
    BinaryF32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("truncated record: expected {expected} bytes, got {actual}")]
    TruncatedRecord { expected: usize, actual: usize },
}

pub fn binary_record_len(bins: usize) -> usize {
    8 + 4 * bins
}

pub fn decode_sample(record: &[u8], format: WireFormat, bins: usize) -> Result<PsdSample, DecodeError> {
    match format {
        WireFormat::CsvLine => decode_csv(record, bins),
        WireFormat::BinaryF32 => decode_binary(record, bins),
    }
}

fn decode_csv(record: &[u8], bins: usize) -> Result<PsdSample, DecodeError> {
    let line = std::str::from_utf8(record)
        .map_err(|_| DecodeError::MalformedRecord("not UTF-8".into()))?
        .trim();
    let mut fields = line.split(',');
    let ts = fields.next().unwrap_or_default().trim();
    let timestamp: Millis = ts
        .parse()
        .map_err(|_| DecodeError::MalformedRecord(format!("bad timestamp {ts:?}")))?;
    let values = fields
        .enumerate()
        .map(|(i, f)| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| DecodeError::MalformedRecord(format!("bad value {f:?} at bin {i}")))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if values.len() != bins {
        return Err(DecodeError::MalformedRecord(format!(
            "expected {bins} values, got {}",
            values.len()
        )));
    }
    Ok(PsdSample::new(timestamp, values))
}

fn decode_binary(record: &[u8], bins: usize) -> Result<PsdSample, DecodeError> {
    let expected = binary_record_len(bins);
    if record.len() < expected {
        return Err(DecodeError::TruncatedRecord {
            expected,
            actual: record.len(),
        });
    }
    if record.len() > expected {
        return Err(DecodeError::MalformedRecord(format!(
            "expected {expected} bytes, got {}",
            record.len()
        )));
    }
    let raw_ts = u64::from_le_bytes(record[..8].try_into().expect("8 bytes"));
    let timestamp = Millis::try_from(raw_ts)
        .map_err(|_| DecodeError::MalformedRecord(format!("timestamp {raw_ts} out of range")))?;
    let values = record[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(PsdSample::new(timestamp, values))
}

/// Inverse of [`decode_sample`]. Binary output narrows values to f32; negative
/// timestamps cannot be represented in that format.
pub fn encode_sample(sample: &PsdSample, format: WireFormat) -> Vec<u8> {
    match format {
        WireFormat::CsvLine => {
            let mut s = sample.timestamp.to_string();
            for v in &sample.values {
                s.push(',');
                s.push_str(&v.to_string());
            }
            s.push('\n');
            s.into_bytes()
        }
        WireFormat::BinaryF32 => {
            let mut out = Vec::with_capacity(binary_record_len(sample.values.len()));
            out.extend_from_slice(&(sample.timestamp as u64).to_le_bytes());
            for &v in &sample.values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            out
        }
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid worker count {workers} for {bins} bins")]
    InvalidWorkerCount { workers: usize, bins: usize },
    #[error("record {index}: {error}")]
    Decode { index: u64, error: DecodeError },
    #[error("record {index}: {error}")]
    Sample { index: u64, error: SampleError },
    #[error("source: {0}")]
    Source(#[from] io::Error),
    #[error("stalled at tick {seq}: no batch from workers {missing:?}")]
    StallTimeout { seq: u64, missing: Vec<usize> },
    #[error("barrier buffer overflow: {buffered} batches buffered, limit {limit}")]
    BufferOverflow { buffered: usize, limit: usize },
    #[error("batch from unknown worker {0}")]
    UnknownWorker(usize),
    #[error("worker failure: {0}")]
    Worker(String),
    #[error("sink: {0}")]
    Sink(String),
}

impl TopologyError {
    /// Zero-based index of the offending input record, if any.
    pub fn record_index(&self) -> Option<u64> {
        match self {
            TopologyError::Decode { index, .. } | TopologyError::Sample { index, .. } => Some(*index),
            _ => None,
        }
    }
}

/// Reads records from a byte stream.
pub struct SampleReader<R> {
    reader: R,
    format: WireFormat,
    bins: usize,
    index: u64,
    buf: Vec<u8>,
    done: bool,
}

impl<R: BufRead> SampleReader<R> {
    pub fn new(reader: R, format: WireFormat, bins: usize) -> Self {
        Self {
            reader,
            format,
            bins,
            index: 0,
            buf: Vec::new(),
            done: false,
        }
    }

    fn next_record(&mut self) -> Result<Option<PsdSample>, TopologyError> {
        match self.format {
            WireFormat::CsvLine => loop {
                self.buf.clear();
                if self.reader.read_until(b'\n', &mut self.buf)? == 0 {
                    return Ok(None);
                }
                if self.buf.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                return self.decode().map(Some);
            },
            WireFormat::BinaryF32 => {
                let want = binary_record_len(self.bins);
                self.buf.clear();
                (&mut self.reader).take(want as u64).read_to_end(&mut self.buf)?;
                if self.buf.is_empty() {
                    return Ok(None);
                }
                self.decode().map(Some)
            }
        }
    }

    fn decode(&mut self) -> Result<PsdSample, TopologyError> {
        let index = self.index;
        self.index += 1;
        decode_sample(&self.buf, self.format, self.bins).map_err(|error| TopologyError::Decode { index, error })
    }
}

impl<R: BufRead> Iterator for SampleReader<R> {
    type Item = Result<PsdSample, TopologyError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let r = self.next_record().transpose();
        if !matches!(r, Some(Ok(_))) {
            self.done = true;
        }
        r
    }
}

/// Contiguous, balanced bin ranges, one per worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partitioning {
    pub ranges: Vec<Range<usize>>,
}

impl Partitioning {
    pub fn worker_count(&self) -> usize {
        self.ranges.len()
    }
}

pub fn partition(bins: usize, workers: usize) -> Result<Partitioning, TopologyError> {
    if workers == 0 || workers > bins {
        return Err(TopologyError::InvalidWorkerCount { workers, bins });
    }
    let (base, extra) = (bins / workers, bins % workers);
    let mut start = 0;
    let ranges = (0..workers)
        .map(|w| {
            let len = base + usize::from(w < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect();
    Ok(Partitioning { ranges })
}

/// One worker's verdicts for one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictBatch {
    /// Tick sequence number, starting at 0.
    pub seq: u64,
    pub timestamp: Millis,
    pub worker_id: usize,
    pub detections: Vec<Detection>,
}

/// A tick whose batches have all arrived, detections in bin order.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteTick {
    pub seq: u64,
    pub timestamp: Millis,
    pub detections: Vec<Detection>,
}

/// Releases ticks in order once every worker's batch has arrived.
#[derive(Debug)]
pub struct TickBarrier {
    workers: usize,
    high_watermark: usize,
    next_seq: u64,
    pending: BTreeMap<u64, Vec<Option<VerdictBatch>>>,
    buffered: usize,
}

impl TickBarrier {
    pub fn new(workers: usize, high_watermark: usize) -> Self {
        Self {
            workers,
            high_watermark,
            next_seq: 0,
            pending: BTreeMap::new(),
            buffered: 0,
        }
    }

    pub fn buffered(&self) -> usize {
        self.buffered
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Workers whose batch for the next tick is still outstanding.
    pub fn missing(&self) -> Vec<usize> {
        match self.pending.get(&self.next_seq) {
            Some(slots) => (0..self.workers).filter(|&w| slots[w].is_none()).collect(),
            None => (0..self.workers).collect(),
        }
    }

    /// Accepts a batch and returns every tick it completes, in order.
    pub fn push(&mut self, batch: VerdictBatch) -> Result<Vec<CompleteTick>, TopologyError> {
        if batch.worker_id >= self.workers {
            return Err(TopologyError::UnknownWorker(batch.worker_id));
        }
        if batch.seq < self.next_seq {
            return Err(TopologyError::Worker(format!(
                "worker {} resent released tick {}",
                batch.worker_id, batch.seq
            )));
        }
        if self.buffered >= self.high_watermark {
            return Err(TopologyError::BufferOverflow {
                buffered: self.buffered + 1,
                limit: self.high_watermark,
            });
        }
        let workers = self.workers;
        let slots = self.pending.entry(batch.seq).or_insert_with(|| vec![None; workers]);
        let w = batch.worker_id;
        if slots[w].is_some() {
            return Err(TopologyError::Worker(format!("worker {w} sent tick {} twice", batch.seq)));
        }
        slots[w] = Some(batch);
        self.buffered += 1;

        let mut released = Vec::new();
        while let Some(slots) = self.pending.get(&self.next_seq) {
            if slots.iter().any(Option::is_none) {
                break;
            }
            let slots = self.pending.remove(&self.next_seq).expect("present");
            self.buffered -= workers;
            let timestamp = slots[0].as_ref().expect("complete").timestamp;
            let detections = slots
                .into_iter()
                .flat_map(|b| b.expect("complete").detections)
                .collect();
            released.push(CompleteTick {
                seq: self.next_seq,
                timestamp,
                detections,
            });
            self.next_seq += 1;
        }
        Ok(released)
    }
}

#[derive(Debug, Clone)]
pub struct TopologyOptions {
    pub workers: usize,
    /// Capacity of every inter-stage queue.
    pub queue_capacity: usize,
    /// Maximum batches held by the barrier.
    pub high_watermark: usize,
    pub stall_timeout: Duration,
    /// Remote worker addresses; when set, one per worker replaces the local threads.
    pub remote_workers: Vec<String>,
}

impl Default for TopologyOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            queue_capacity: 64,
            high_watermark: 4096,
            stall_timeout: Duration::from_secs(30),
            remote_workers: Vec::new(),
        }
    }
}

impl TopologyOptions {
    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TopologySummary {
    pub ticks: u64,
    pub events: u64,
    pub notifications: u64,
}

type Tick = (u64, Arc<PsdSample>);

/// Runs spout → workers → barrier → grouping, handing each tick's output to `sink`.
///
/// On end of stream every open event is flushed. Bounded queues block the
/// spout when downstream stages fall behind.
pub fn run_topology<I, S>(
    source: I,
    plan: &BandPlan,
    cfg: &DetectorConfig,
    opts: &TopologyOptions,
    mut sink: S,
) -> Result<TopologySummary, TopologyError>
where
    I: Iterator<Item = Result<PsdSample, TopologyError>> + Send,
    S: FnMut(&TickOutput) -> Result<(), String>,
{
    let parts = partition(plan.bin_count(), opts.workers)?;
    if !opts.remote_workers.is_empty() && opts.remote_workers.len() != opts.workers {
        return Err(TopologyError::InvalidWorkerCount {
            workers: opts.remote_workers.len(),
            bins: plan.bin_count(),
        });
    }
    let cap = opts.queue_capacity.max(1);
    let (batch_tx, batch_rx) = bounded::<Result<VerdictBatch, TopologyError>>(cap * opts.workers);
    let mut tick_txs = Vec::with_capacity(opts.workers);
    let mut tick_rxs = Vec::with_capacity(opts.workers);
    for _ in 0..opts.workers {
        let (tx, rx) = bounded::<Tick>(cap);
        tick_txs.push(tx);
        tick_rxs.push(rx);
    }

    std::thread::scope(|scope| {
        let spout = scope.spawn({
            let plan = plan.clone();
            move || spout_loop(source, &plan, tick_txs)
        });
        for (w, (rx, range)) in tick_rxs.into_iter().zip(parts.ranges.iter().cloned()).enumerate() {
            let out = batch_tx.clone();
            match opts.remote_workers.get(w) {
                None => {
                    let cfg = cfg.clone();
                    scope.spawn(move || local_worker(w, range, &cfg, rx, out));
                }
                Some(addr) => {
                    let handshake = WorkerHandshake {
                        worker_id: w,
                        start: range.start,
                        end: range.end,
                        bins: plan.bin_count(),
                        config: cfg.clone(),
                    };
                    scope.spawn(move || {
                        if let Err(e) = remote_worker_link(addr, handshake, rx, out.clone()) {
                            let _ = out.send(Err(e));
                        }
                    });
                }
            }
        }
        drop(batch_tx);

        let grouped = group_loop(plan, cfg, opts, batch_rx, &mut sink);
        // A failed grouping stage dropped its receiver, which unwinds the workers and spout.
        let spout_result = spout.join().map_err(|_| TopologyError::Worker("spout panicked".into()))?;
        match (grouped, spout_result) {
            (Err(e), _) => Err(e),
            (Ok(_), Err(e)) => Err(e),
            (Ok(summary), Ok(())) => Ok(summary),
        }
    })
}

fn spout_loop<I>(source: I, plan: &BandPlan, outs: Vec<Sender<Tick>>) -> Result<(), TopologyError>
where
    I: Iterator<Item = Result<PsdSample, TopologyError>>,
{
    let mut last = None;
    for (seq, item) in source.enumerate() {
        let sample = item?;
        validate_sample(&sample, plan, last).map_err(|error| TopologyError::Sample {
            index: seq as u64,
            error,
        })?;
        last = Some(sample.timestamp);
        let sample = Arc::new(sample);
        for out in &outs {
            if out.send((seq as u64, Arc::clone(&sample))).is_err() {
                // Downstream has shut down; its error is reported there.
                return Ok(());
            }
        }
    }
    Ok(())
}

fn local_worker(
    worker_id: usize,
    range: Range<usize>,
    cfg: &DetectorConfig,
    rx: Receiver<Tick>,
    out: Sender<Result<VerdictBatch, TopologyError>>,
) {
    let mut bank = BinBank::new(range.clone(), cfg);
    for (seq, sample) in rx {
        let mut detections = Vec::with_capacity(range.len());
        bank.process(&sample.values[range.clone()], sample.timestamp, &mut detections);
        let batch = VerdictBatch {
            seq,
            timestamp: sample.timestamp,
            worker_id,
            detections,
        };
        if out.send(Ok(batch)).is_err() {
            return;
        }
    }
}

fn group_loop<S>(
    plan: &BandPlan,
    cfg: &DetectorConfig,
    opts: &TopologyOptions,
    rx: Receiver<Result<VerdictBatch, TopologyError>>,
    sink: &mut S,
) -> Result<TopologySummary, TopologyError>
where
    S: FnMut(&TickOutput) -> Result<(), String>,
{
    let mut barrier = TickBarrier::new(opts.workers, opts.high_watermark);
    let mut stage = GroupingStage::new(plan.clone(), cfg.freq_gap_f, cfg.time_gap_t);
    let mut summary = TopologySummary::default();
    let mut emit = |out: &TickOutput, summary: &mut TopologySummary| {
        summary.events += out.closed.len() as u64;
        summary.notifications += out.notifications.len() as u64;
        sink(out).map_err(TopologyError::Sink)
    };
    loop {
        // Only a partially collected tick can stall; an idle source may wait indefinitely.
        let msg = if barrier.buffered() > 0 {
            match rx.recv_timeout(opts.stall_timeout) {
                Ok(m) => m,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(TopologyError::StallTimeout {
                        seq: barrier.next_seq(),
                        missing: barrier.missing(),
                    })
                }
                Err(RecvTimeoutError::Disconnected) => break,
            }
        } else {
            match rx.recv() {
                Ok(m) => m,
                Err(_) => break,
            }
        };
        for tick in barrier.push(msg?)? {
            summary.ticks += 1;
            let out = stage.on_tick(tick.timestamp, &tick.detections);
            emit(&out, &mut summary)?;
        }
    }
    if barrier.buffered() > 0 {
        return Err(TopologyError::StallTimeout {
            seq: barrier.next_seq(),
            missing: barrier.missing(),
        });
    }
    let out = stage.flush();
    emit(&out, &mut summary)?;
    Ok(summary)
}

/// Writes one `u32` little-endian length-prefixed frame.
pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)
}

/// Reads one frame; `None` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut payload = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut payload)?;
    Ok(Some(payload))
}

const DETECTION_WARMUP: u8 = 0;
const DETECTION_VERDICT: u8 = 1;

pub fn encode_batch(b: &VerdictBatch) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + b.detections.len() * 64);
    out.extend_from_slice(&b.seq.to_le_bytes());
    out.extend_from_slice(&b.timestamp.to_le_bytes());
    out.extend_from_slice(&(b.worker_id as u32).to_le_bytes());
    out.extend_from_slice(&(b.detections.len() as u32).to_le_bytes());
    for d in &b.detections {
        match d {
            Detection::Warmup => out.push(DETECTION_WARMUP),
            Detection::Verdict(a) => {
                out.push(DETECTION_VERDICT);
                out.extend_from_slice(&(a.bin_index as u32).to_le_bytes());
                out.extend_from_slice(&a.timestamp.to_le_bytes());
                out.push(u8::from(a.active));
                out.extend_from_slice(&a.p_value.to_le_bytes());
                out.extend_from_slice(&a.chi_square_stat.to_le_bytes());
                out.extend_from_slice(&a.dof.to_le_bytes());
                out.extend_from_slice(&a.recent_mean.to_le_bytes());
                out.extend_from_slice(&a.historic_mean.to_le_bytes());
                out.push(match a.direction {
                    Direction::Rising => 0,
                    Direction::Falling => 1,
                    Direction::Flat => 2,
                });
                out.extend_from_slice(&a.value_dbm.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        if self.buf.len() < N {
            return Err(DecodeError::TruncatedRecord {
                expected: N,
                actual: self.buf.len(),
            });
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn decode_batch(payload: &[u8]) -> Result<VerdictBatch, DecodeError> {
    let mut c = Cursor { buf: payload };
    let seq = c.u64()?;
    let timestamp = c.i64()?;
    let worker_id = c.u32()? as usize;
    let n = c.u32()? as usize;
    let mut detections = Vec::with_capacity(n.min(payload.len()));
    for _ in 0..n {
        detections.push(match c.u8()? {
            DETECTION_WARMUP => Detection::Warmup,
            DETECTION_VERDICT => Detection::Verdict(BinActivity {
                bin_index: c.u32()? as usize,
                timestamp: c.i64()?,
                active: c.u8()? != 0,
                p_value: c.f64()?,
                chi_square_stat: c.f64()?,
                dof: c.u32()?,
                recent_mean: c.f64()?,
                historic_mean: c.f64()?,
                direction: match c.u8()? {
                    0 => Direction::Rising,
                    1 => Direction::Falling,
                    2 => Direction::Flat,
                    d => return Err(DecodeError::MalformedRecord(format!("direction tag {d}"))),
                },
                value_dbm: c.f64()?,
            }),
            tag => return Err(DecodeError::MalformedRecord(format!("detection tag {tag}"))),
        });
    }
    if !c.buf.is_empty() {
        return Err(DecodeError::MalformedRecord(format!("{} trailing bytes", c.buf.len())));
    }
    Ok(VerdictBatch {
        seq,
        timestamp,
        worker_id,
        detections,
    })
}

fn encode_sample_frame(seq: u64, sample: &PsdSample) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * sample.values.len());
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&sample.timestamp.to_le_bytes());
    for v in &sample.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_sample_frame(frame: &[u8], bins: usize) -> Result<(u64, PsdSample), DecodeError> {
    let expected = 16 + 8 * bins;
    if frame.len() != expected {
        return Err(DecodeError::TruncatedRecord {
            expected,
            actual: frame.len(),
        });
    }
    let mut c = Cursor { buf: frame };
    let seq = c.u64()?;
    let timestamp = c.i64()?;
    let values = (0..bins).map(|_| c.f64()).collect::<Result<_, _>>()?;
    Ok((seq, PsdSample::new(timestamp, values)))
}

/// First frame on a worker connection: JSON describing the worker's slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkerHandshake {
    pub worker_id: usize,
    pub start: usize,
    pub end: usize,
    pub bins: usize,
    pub config: DetectorConfig,
}

fn wire_err(e: DecodeError) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e)
}

/// Serves one coordinator connection: handshake, then a sample frame in and a
/// verdict batch frame out per tick. Sample frames carry a u64 tick sequence,
/// an i64 timestamp and the full band as f64 values, all little-endian.
pub fn serve_worker(mut conn: TcpStream) -> io::Result<()> {
    conn.set_nodelay(true)?;
    let hello = read_frame(&mut conn)?
        .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "missing handshake"))?;
    let hs: WorkerHandshake =
        serde_json::from_slice(&hello).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    if hs.start >= hs.end || hs.end > hs.bins {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad bin range"));
    }
    let mut bank = BinBank::new(hs.start..hs.end, &hs.config);
    let mut reader = io::BufReader::new(conn.try_clone()?);
    let mut writer = io::BufWriter::new(conn);
    while let Some(frame) = read_frame(&mut reader)? {
        let (seq, sample) = decode_sample_frame(&frame, hs.bins).map_err(wire_err)?;
        let mut detections = Vec::with_capacity(hs.end - hs.start);
        bank.process(&sample.values[hs.start..hs.end], sample.timestamp, &mut detections);
        let batch = VerdictBatch {
            seq,
            timestamp: sample.timestamp,
            worker_id: hs.worker_id,
            detections,
        };
        write_frame(&mut writer, &encode_batch(&batch))?;
        writer.flush()?;
    }
    Ok(())
}

/// Accepts coordinator connections forever, one thread each.
pub fn listen_worker(addr: impl ToSocketAddrs) -> io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    for conn in listener.incoming() {
        let conn = conn?;
        std::thread::spawn(move || serve_worker(conn));
    }
    Ok(())
}

fn remote_worker_link(
    addr: &str,
    handshake: WorkerHandshake,
    rx: Receiver<Tick>,
    out: Sender<Result<VerdictBatch, TopologyError>>,
) -> Result<(), TopologyError> {
    let mut conn = TcpStream::connect(addr)?;
    conn.set_nodelay(true)?;
    write_frame(&mut conn, &serde_json::to_vec(&handshake).expect("handshake serializes"))?;
    let mut reader = io::BufReader::new(conn.try_clone()?);
    let expected_worker = handshake.worker_id;
    std::thread::scope(|scope| {
        let receiver = scope.spawn(move || -> Result<(), TopologyError> {
            while let Some(frame) = read_frame(&mut reader)? {
                let batch = decode_batch(&frame).map_err(|e| TopologyError::Worker(e.to_string()))?;
                if batch.worker_id != expected_worker {
                    return Err(TopologyError::UnknownWorker(batch.worker_id));
                }
                if out.send(Ok(batch)).is_err() {
                    break;
                }
            }
            Ok(())
        });
        let mut writer = io::BufWriter::new(&conn);
        for (seq, sample) in rx {
            write_frame(&mut writer, &encode_sample_frame(seq, &sample))?;
            writer.flush()?;
        }
        drop(writer);
        conn.shutdown(std::net::Shutdown::Write)?;
        receiver
            .join()
            .map_err(|_| TopologyError::Worker("link reader panicked".into()))?
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_binary_agree() {
        let csv = decode_sample(b"100,-95.0,-60.5", WireFormat::CsvLine, 2).unwrap();
        assert_eq!(csv, PsdSample::new(100, vec![-95.0, -60.5]));
        let bin = encode_sample(&csv, WireFormat::BinaryF32);
        assert_eq!(decode_sample(&bin, WireFormat::BinaryF32, 2).unwrap(), csv);
        let back = encode_sample(&csv, WireFormat::CsvLine);
        assert_eq!(decode_sample(&back, WireFormat::CsvLine, 2).unwrap(), csv);
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(
            decode_sample(b"100,-95.0", WireFormat::CsvLine, 2),
            Err(DecodeError::MalformedRecord(_))
        ));
        assert!(matches!(
            decode_sample(b"x,1,2", WireFormat::CsvLine, 2),
            Err(DecodeError::MalformedRecord(_))
        ));
        assert_eq!(
            decode_sample(&[0u8; 12], WireFormat::BinaryF32, 2),
            Err(DecodeError::TruncatedRecord { expected: 16, actual: 12 })
        );
    }

    #[test]
    fn reader_reports_record_index() {
        let text = "1,-90\n2,-91\n\n3,oops\n4,-90\n";
        let items: Vec<_> = SampleReader::new(text.as_bytes(), WireFormat::CsvLine, 1).collect();
        assert_eq!(items.len(), 3);
        assert_eq!(items[2].as_ref().unwrap_err().record_index(), Some(2));
    }

    #[test]
    fn binary_reader_flags_partial_tail() {
        let mut bytes = encode_sample(&PsdSample::new(5, vec![-90.0]), WireFormat::BinaryF32);
        bytes.extend_from_slice(&[1, 2, 3]);
        let items: Vec<_> = SampleReader::new(&bytes[..], WireFormat::BinaryF32, 1).collect();
        assert!(items[0].is_ok());
        assert!(matches!(
            items[1],
            Err(TopologyError::Decode { index: 1, error: DecodeError::TruncatedRecord { .. } })
        ));
    }

    #[test]
    fn partitions() {
        assert_eq!(partition(1200, 1).unwrap().ranges, vec![0..1200]);
        assert_eq!(partition(10, 3).unwrap().ranges, vec![0..4, 4..7, 7..10]);
        assert_eq!(partition(3, 3).unwrap().ranges, vec![0..1, 1..2, 2..3]);
        assert!(partition(3, 4).is_err());
        assert!(partition(3, 0).is_err());
    }

    fn batch(w: usize, seq: u64) -> VerdictBatch {
        VerdictBatch {
            seq,
            timestamp: seq as Millis * 100,
            worker_id: w,
            detections: vec![Detection::Warmup],
        }
    }

    #[test]
    fn barrier_releases_in_order() {
        let mut b = TickBarrier::new(2, 16);
        assert!(b.push(batch(0, 0)).unwrap().is_empty());
        assert!(b.push(batch(1, 1)).unwrap().is_empty());
        let r = b.push(batch(1, 0)).unwrap();
        assert_eq!(r.iter().map(|t| t.seq).collect::<Vec<_>>(), vec![0]);
        assert_eq!(r[0].detections.len(), 2);
        let r = b.push(batch(0, 1)).unwrap();
        assert_eq!(r[0].seq, 1);
        assert_eq!(b.buffered(), 0);
    }

    #[test]
    fn single_worker_passes_through() {
        let mut b = TickBarrier::new(1, 4);
        for s in 0..3 {
            assert_eq!(b.push(batch(0, s)).unwrap()[0].seq, s);
        }
    }

    #[test]
    fn barrier_overflow() {
        let mut b = TickBarrier::new(2, 2);
        b.push(batch(0, 0)).unwrap();
        b.push(batch(0, 1)).unwrap();
        assert!(matches!(b.push(batch(0, 2)), Err(TopologyError::BufferOverflow { .. })));
        assert_eq!(b.missing(), vec![1]);
    }

    #[test]
    fn batch_codec_round_trip() {
        let a = BinActivity {
            bin_index: 7,
            timestamp: -3,
            active: true,
            p_value: 1e-9,
            chi_square_stat: 40.5,
            dof: 3,
            recent_mean: -70.0,
            historic_mean: -99.5,
            direction: Direction::Rising,
            value_dbm: -69.25,
        };
        let b = VerdictBatch {
            seq: 9,
            timestamp: 900,
            worker_id: 2,
            detections: vec![Detection::Warmup, Detection::Verdict(a)],
        };
        let bytes = encode_batch(&b);
        assert_eq!(decode_batch(&bytes).unwrap(), b);
        assert!(decode_batch(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn frames_round_trip() {
        let mut wire = Vec::new();
        write_frame(&mut wire, b"abc").unwrap();
        write_frame(&mut wire, b"").unwrap();
        assert_eq!(&wire[..4], &3u32.to_le_bytes());
        let mut r = &wire[..];
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"abc");
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"");
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn stall_is_reported() {
        // Worker 1 never reports; the barrier holds worker 0's batch until the deadline.
        let (tx, rx) = bounded(4);
        tx.send(Ok(batch(0, 0))).unwrap();
        let plan = BandPlan::new(0.0, 1.0, 2).unwrap();
        let opts = TopologyOptions {
            workers: 2,
            stall_timeout: Duration::from_millis(50),
            ..TopologyOptions::default()
        };
        let err = group_loop(&plan, &DetectorConfig::default(), &opts, rx, &mut |_: &TickOutput| Ok(())).unwrap_err();
        assert!(matches!(err, TopologyError::StallTimeout { seq: 0, ref missing } if missing == &vec![1]));
        drop(tx);
    }
}
