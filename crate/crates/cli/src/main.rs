use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use spectrum_streamer::eval::{
    bench_scenario, benchmark, benchmark_topology, read_truth_ndjson, run_sweep, sweep_to_csv, synth_generate,
    write_truth_ndjson, ParameterGrid, SyntheticScenario, Tolerances,
};
use spectrum_streamer::grouping::{EventNotification, TickOutput};
use spectrum_streamer::report::{ReportFormat, ReportPeriod, ReportState};
use spectrum_streamer::store::{EventStore, QueryDocument, StoreName, Stores};
use spectrum_streamer::topology::{
    encode_sample, run_topology, SampleReader, TopologyError, TopologyOptions, TopologySummary, WireFormat,
};
use spectrum_streamer::{load_engine_config, BandPlan, Engine, EngineConfig, Millis, PsdSample, SpectrumEvent};

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

#[derive(Parser)]
#[command(name = "spectrum-streamer", version, about = "Detect, store and report wireless transmissions in PSD streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Live detection from a file, stdin or a socket; NDJSON notifications out.
    Detect(DetectArgs),
    /// Sequential detection over a recorded file.
    Replay(ReplayArgs),
    /// Statistical report over stored events or detect output.
    Report(ReportArgs),
    /// Range or location query over stored events.
    Query(QueryArgs),
    /// Synthetic stream and ground truth from a scenario.
    Generate(GenerateArgs),
    /// Confusion tables against ground truth, optionally over a parameter grid.
    Eval(EvalArgs),
    /// Throughput and memory on a synthetic band.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Binary,
}

impl From<Format> for WireFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => WireFormat::CsvLine,
            Format::Binary => WireFormat::BinaryF32,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Render {
    Json,
    Text,
}

#[derive(Args, Clone)]
struct BandArgs {
    /// Detector config TOML, optionally with [band] and [[channels]].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bin count; overrides the config's [band].
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long, requires = "bins", default_value_t = 0.0)]
    start_hz: f64,
    #[arg(long, requires = "bins", default_value_t = 1.0)]
    bin_width_hz: f64,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    band: BandArgs,
    /// Sample file, or `-` for stdin.
    #[arg(long, conflicts_with = "listen")]
    input: Option<String>,
    /// Accept one sample connection on this address.
    #[arg(long)]
    listen: Option<String>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for the transmissions and merged event journals.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    band: BandArgs,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    band: BandArgs,
    /// NDJSON events or detect output.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 100)]
    tick_ms: Millis,
    #[arg(long)]
    period_start: Option<Millis>,
    /// Exclusive end of the period.
    #[arg(long)]
    period_end: Option<Millis>,
    #[arg(long, value_enum, default_value = "text")]
    render: Render,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    band: BandArgs,
    /// NDJSON events or detect output, loaded as the MergedTx store.
    #[arg(long, required_unless_present = "store")]
    input: Option<PathBuf>,
    /// Journal directory written by detect/replay --store.
    #[arg(long, conflicts_with = "input")]
    store: Option<PathBuf>,
    /// Query document: inline JSON or a path to a JSON file.
    #[arg(long)]
    query: String,
    #[arg(long, default_value_t = 100)]
    tick_ms: Millis,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    band: BandArgs,
    /// Generate the stream and truth from this scenario.
    #[arg(long, conflicts_with_all = ["input", "truth"])]
    scenario: Option<PathBuf>,
    #[arg(long, requires = "scenario")]
    seed: Option<u64>,
    /// Recorded stream; needs --truth.
    #[arg(long, requires = "truth")]
    input: Option<PathBuf>,
    #[arg(long, requires = "input")]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Tick interval of a recorded stream.
    #[arg(long, default_value_t = 100)]
    tick_ms: Millis,
    /// Parameter grid TOML: each key maps to a list of values.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Output file; `.csv` selects CSV, anything else JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1200)]
    bins: usize,
    #[arg(long, default_value_t = 36_000)]
    ticks: u64,
    #[arg(long, default_value_t = 100)]
    tick_ms: Millis,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Detect(a) => detect(a),
        Command::Replay(a) => replay(a),
        Command::Report(a) => report(a),
        Command::Query(a) => query(a),
        Command::Generate(a) => generate(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        None => Ok(EngineConfig::default()),
        Some(p) => load_engine_config(&read_text(p)?).map_err(|e| usage(format!("{}: {e}", p.display()))),
    }
}

impl BandArgs {
    fn resolve(&self) -> Result<(EngineConfig, BandPlan)> {
        let cfg = load_config(self.config.as_deref())?;
        let plan = match self.bins {
            Some(n) => BandPlan::new(self.start_hz, self.bin_width_hz, n).map_err(|e| usage(e.to_string()))?,
            None => cfg
                .band
                .clone()
                .ok_or_else(|| usage("no band plan: pass --bins or add a [band] table to --config"))?,
        };
        Ok((cfg, plan))
    }

    fn resolve_optional(&self) -> Result<(EngineConfig, Option<BandPlan>)> {
        if self.bins.is_some() {
            let (cfg, plan) = self.resolve()?;
            return Ok((cfg, Some(plan)));
        }
        let cfg = load_config(self.config.as_deref())?;
        let plan = cfg.band.clone();
        Ok((cfg, plan))
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn open_input(path: &str) -> Result<Box<dyn BufRead + Send>> {
    if path == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = fs::File::open(path).with_context(|| format!("opening {path}"))?;
    Ok(Box::new(BufReader::new(f)))
}

/// Writes notifications as NDJSON and mirrors groups and closed events into the journals.
struct EventSink {
    out: Box<dyn Write>,
    plan: BandPlan,
    stores: Option<Stores>,
    next_group_id: u64,
}

impl EventSink {
    fn new(out: Box<dyn Write>, plan: BandPlan, store_dir: Option<&Path>) -> Result<Self> {
        let stores = match store_dir {
            None => None,
            Some(dir) => {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                Some(Stores {
                    transmissions: EventStore::open(dir.join("transmissions.ndjson"))?,
                    merged: EventStore::open(dir.join("merged.ndjson"))?,
                })
            }
        };
        let next_group_id = stores.as_ref().map_or(0, |s| s.transmissions.len() as u64);
        Ok(Self {
            out,
            plan,
            stores,
            next_group_id,
        })
    }

    fn emit(&mut self, tick: &TickOutput) -> Result<()> {
        for n in &tick.notifications {
            serde_json::to_writer(&mut self.out, n)?;
            self.out.write_all(b"\n")?;
            self.out.flush()?;
        }
        if let Some(stores) = &mut self.stores {
            for g in &tick.groups {
                stores.transmissions.insert(g.to_event(self.next_group_id, &self.plan))?;
                self.next_group_id += 1;
            }
            for e in &tick.closed {
                stores.merged.insert(e.clone())?;
            }
        }
        Ok(())
    }

    fn finish(mut self, summary: TopologySummary) -> Result<()> {
        let line = json!({
            "type": "summary",
            "ticks": summary.ticks,
            "events": summary.events,
            "notifications": summary.notifications,
        });
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

fn install_interrupt_handler() {
    let _ = ctrlc::set_handler(|| INTERRUPTED.store(true, Ordering::SeqCst));
}

fn detect(a: DetectArgs) -> Result<()> {
    let (cfg, plan) = a.band.resolve()?;
    let input: Box<dyn BufRead + Send> = match (&a.input, &a.listen) {
        (Some(path), None) => open_input(path)?,
        (None, Some(addr)) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            let (conn, peer) = listener.accept()?;
            eprintln!("source connected from {peer}");
            Box::new(BufReader::new(conn))
        }
        _ => return Err(usage("detect needs exactly one of --input or --listen")),
    };
    if a.workers == 0 || a.workers > plan.bin_count() {
        return Err(usage(format!("--workers must lie in 1..={}", plan.bin_count())));
    }
    install_interrupt_handler();
    let reader = SampleReader::new(input, a.format.into(), plan.bin_count());
    let source = reader.take_while(|_| !INTERRUPTED.load(Ordering::SeqCst));
    let mut sink = EventSink::new(open_out(a.out.as_deref())?, plan.clone(), a.store.as_deref())?;
    let opts = TopologyOptions::with_workers(a.workers);
    let summary = run_topology(source, &plan, &cfg.detector, &opts, |tick| {
        sink.emit(tick).map_err(|e| format!("{e:#}"))
    })
    .map_err(topology_error)?;
    sink.finish(summary)
}

fn topology_error(e: TopologyError) -> anyhow::Error {
    match e.record_index() {
        Some(_) => anyhow!("{e}"),
        None => anyhow!("pipeline: {e}"),
    }
}

fn replay(a: ReplayArgs) -> Result<()> {
    let (cfg, plan) = a.band.resolve()?;
    let input = open_input(a.input.to_str().ok_or_else(|| usage("input path is not UTF-8"))?)?;
    let reader = SampleReader::new(input, a.format.into(), plan.bin_count());
    let mut sink = EventSink::new(open_out(a.out.as_deref())?, plan.clone(), a.store.as_deref())?;
    let mut engine = Engine::new(plan, &cfg.detector);
    let mut summary = TopologySummary::default();
    let count = |tick: &TickOutput, s: &mut TopologySummary| {
        s.events += tick.closed.len() as u64;
        s.notifications += tick.notifications.len() as u64;
    };
    for (index, item) in reader.enumerate() {
        let sample = item.map_err(topology_error)?;
        let tick = engine
            .process(&sample)
            .map_err(|error| topology_error(TopologyError::Sample { index: index as u64, error }))?;
        summary.ticks += 1;
        count(&tick, &mut summary);
        sink.emit(&tick)?;
    }
    let tick = engine.finish();
    count(&tick, &mut summary);
    sink.emit(&tick)?;
    sink.finish(summary)
}

/// Reads stored events, detect output or a mix; TxStart and summary lines are skipped.
fn read_events(path: &Path, plan: Option<&BandPlan>, tick_ms: Millis) -> Result<Vec<SpectrumEvent>> {
    let text = read_text(path)?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value =
            serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        if v.get("type").and_then(Value::as_str) == Some("summary") {
            continue;
        }
        if v.get("kind").is_some() {
            let n: EventNotification =
                serde_json::from_value(v).with_context(|| format!("{} line {}", path.display(), i + 1))?;
            if n.t_stop.is_none() {
                continue;
            }
            let plan = plan.ok_or_else(|| usage("notification input needs a band plan (--bins or [band])"))?;
            events.extend(n.to_event(plan, Some(tick_ms)));
            continue;
        }
        events.push(serde_json::from_value(v).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(events)
}

fn report(a: ReportArgs) -> Result<()> {
    let (cfg, plan) = a.band.resolve()?;
    if a.tick_ms <= 0 {
        return Err(usage("--tick-ms must be positive"));
    }
    let events = read_events(&a.input, Some(&plan), a.tick_ms)?;
    let start = a
        .period_start
        .or_else(|| events.iter().map(|e| e.t_start).min())
        .unwrap_or(0);
    let end = match a.period_end {
        Some(e) => e,
        None => {
            let last = events.iter().map(|e| e.t_stop).max().unwrap_or(start);
            let ticks = ((last - start).max(0) / a.tick_ms) + 1;
            start + ticks * a.tick_ms
        }
    };
    let period = ReportPeriod::new(start, end, a.tick_ms).map_err(|e| usage(e.to_string()))?;
    let mut state = ReportState::new(period, plan, cfg.channels);
    for e in &events {
        state.accumulate(e)?;
    }
    let format = match a.render {
        Render::Json => ReportFormat::Json,
        Render::Text => ReportFormat::Text,
    };
    let mut out = open_out(a.out.as_deref())?;
    out.write_all(state.finalize().render(format).as_bytes())?;
    out.flush()?;
    Ok(())
}

fn query(a: QueryArgs) -> Result<()> {
    let doc_text = if a.query.trim_start().starts_with('{') {
        a.query.clone()
    } else {
        read_text(Path::new(&a.query))?
    };
    let doc = QueryDocument::parse(&doc_text).map_err(|e| usage(e.to_string()))?;
    let stores = match (&a.input, &a.store) {
        (Some(path), None) => {
            let (_, plan) = a.band.resolve_optional()?;
            let mut stores = Stores::default();
            for e in read_events(path, plan.as_ref(), a.tick_ms)? {
                stores.merged.insert(e)?;
            }
            stores
        }
        (None, Some(dir)) => {
            let load = |name: &str| -> Result<EventStore> {
                let p = dir.join(name);
                if !p.exists() {
                    return Ok(EventStore::new());
                }
                let mut s = EventStore::new();
                for e in read_events(&p, None, a.tick_ms)? {
                    s.insert(e)?;
                }
                Ok(s)
            };
            Stores {
                transmissions: load("transmissions.ndjson")?,
                merged: load("merged.ndjson")?,
            }
        }
        _ => return Err(usage("query needs exactly one of --input or --store")),
    };
    if a.input.is_some() && doc.from == StoreName::Transmissions {
        return Err(usage("--input files load as MergedTx; use --store for Transmissions"));
    }
    let hits = stores.run(&doc).map_err(|e| usage(e.to_string()))?;
    let mut out = open_out(a.out.as_deref())?;
    serde_json::to_writer(&mut out, &hits)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<SyntheticScenario> {
    let mut s = SyntheticScenario::from_toml(&read_text(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let scenario = load_scenario(&a.scenario, a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let (stream, truth) = synth_generate(&scenario);
    let format: WireFormat = a.format.into();
    let name = match format {
        WireFormat::CsvLine => "stream.csv",
        WireFormat::BinaryF32 => "stream.bin",
    };
    let stream_path = a.out.join(name);
    let mut w = BufWriter::new(fs::File::create(&stream_path)?);
    let mut samples = 0u64;
    for s in stream {
        w.write_all(&encode_sample(&s, format))?;
        samples += 1;
    }
    w.flush()?;
    let truth_path = a.out.join("truth.ndjson");
    fs::write(&truth_path, write_truth_ndjson(&truth))?;
    let band_path = a.out.join("band.toml");
    fs::write(&band_path, band_toml(&scenario.band))?;
    println!(
        "{}",
        json!({
            "samples": samples,
            "labels": truth.len(),
            "seed": scenario.seed,
            "stream": stream_path,
            "truth": truth_path,
            "band": band_path,
        })
    );
    Ok(())
}

fn band_toml(plan: &BandPlan) -> String {
    format!(
        "[band]\nstartFrequencyHz = {:?}\nbinWidthHz = {:?}\nbinCount = {}\n",
        plan.start_frequency_hz(),
        plan.bin_width_hz(),
        plan.bin_count()
    )
}

fn eval(a: EvalArgs) -> Result<()> {
    let (stream, truth, plan, tick_ms, cfg) = match (&a.scenario, &a.input, &a.truth) {
        (Some(path), None, None) => {
            let s = load_scenario(path, a.seed)?;
            let cfg = load_config(a.band.config.as_deref())?;
            let (stream, truth) = synth_generate(&s);
            (stream.collect::<Vec<PsdSample>>(), truth, s.band.clone(), s.tick_interval_ms, cfg)
        }
        (None, Some(input), Some(truth)) => {
            let (cfg, plan) = a.band.resolve()?;
            let file = open_input(input.to_str().ok_or_else(|| usage("input path is not UTF-8"))?)?;
            let stream = SampleReader::new(file, a.format.into(), plan.bin_count())
                .collect::<Result<Vec<_>, _>>()
                .map_err(topology_error)?;
            let labels = read_truth_ndjson(&read_text(truth)?).with_context(|| format!("parsing {}", truth.display()))?;
            (stream, labels, plan, a.tick_ms, cfg)
        }
        _ => return Err(usage("eval needs --scenario, or --input with --truth")),
    };
    let grid = match &a.grid {
        Some(p) => ParameterGrid::from_toml(&read_text(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => ParameterGrid::default(),
    };
    let combos = grid.expand(&cfg.detector);
    let rows = run_sweep(&stream, &truth, &plan, &combos, Tolerances::for_tick(tick_ms));
    let csv = a
        .out
        .as_ref()
        .and_then(|p| p.extension())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let body = if csv {
        sweep_to_csv(&rows)
    } else {
        serde_json::to_string_pretty(&rows)? + "\n"
    };
    let mut out = open_out(a.out.as_deref())?;
    out.write_all(body.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    if a.bins == 0 || a.tick_ms <= 0 {
        return Err(usage("--bins and --tick-ms must be positive"));
    }
    if a.workers == 0 || a.workers > a.bins {
        return Err(usage(format!("--workers must lie in 1..={}", a.bins)));
    }
    let scenario = bench_scenario(a.bins, a.ticks, a.tick_ms, a.seed);
    let plan = scenario.band.clone();
    let (stream, _) = synth_generate(&scenario);
    let report = if a.workers == 1 {
        benchmark(stream, &plan, &cfg.detector, a.tick_ms)?
    } else {
        let opts = TopologyOptions {
            workers: a.workers,
            stall_timeout: Duration::from_secs(120),
            ..TopologyOptions::default()
        };
        benchmark_topology(stream, &plan, &cfg.detector, a.tick_ms, &opts).map_err(topology_error)?
    };
    let mut v = serde_json::to_value(&report)?;
    v["workers"] = json!(a.workers);
    let mut out = open_out(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &v)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
