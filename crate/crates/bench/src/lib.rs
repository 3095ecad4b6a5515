//! Benchmark harness: per-event documentation cost, manufacture-size
//! sweeps and trace-length sweeps, written as CSV.
//!
//! Op counts are exact and reproducible for a given seed. Elapsed times are
//! local wall-clock measurements and are reported, never asserted.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Utc};
use didchain_core::clock::SteppingClock;
use didchain_core::error::{Classify, ErrorCode};
use didchain_core::events::{ActorSpec, CommitMode, Engine, EngineConfig, EngineError, Role};
use didchain_core::identity::Did;
use didchain_core::ledger::TxKind;
use didchain_core::scenario::{closure_scenario, run_scenario, ScenarioError};
use didchain_core::trace::{fit_trace_model, trace, TraceError, TraceFit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Classify for BenchError {
    fn code(&self) -> ErrorCode {
        match self {
            BenchError::InvalidParams(_) => ErrorCode::MalformedRequest,
            BenchError::Engine(e) => e.code(),
            BenchError::Scenario(e) => e.code(),
            BenchError::Trace(e) => e.code(),
            BenchError::Csv(_) => ErrorCode::Internal,
        }
    }
}

/// One CSV row. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario_id: String,
    pub event_type: String,
    pub x: u64,
    pub doc_ops_create: u64,
    pub doc_ops_update: u64,
    pub trace_resolutions: Option<u64>,
    pub elapsed_ms: f64,
}

pub const CSV_HEADER: &str = "scenario_id,event_type,x,doc_ops_create,doc_ops_update,trace_resolutions,elapsed_ms";

/// Writes `rows` with a header row and LF line endings.
pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<(), BenchError> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    if rows.is_empty() {
        writer.write_record(CSV_HEADER.split(','))?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv(text: &str) -> Result<Vec<BenchRow>, BenchError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    Ok(reader.deserialize().collect::<Result<_, _>>()?)
}

fn bench_start() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2024-03-05T00:00:00Z").expect("valid").with_timezone(&Utc)
}

fn fresh_engine(config: &EngineConfig) -> Result<Engine, BenchError> {
    Ok(Engine::new(config.clone(), Arc::new(SteppingClock::starting_at(bench_start())))?)
}

fn spec(alias: &str, role: Role) -> ActorSpec {
    ActorSpec {
        alias: alias.into(),
        role,
        balance: u64::MAX / 4,
        mode: Default::default(),
        seed: None,
        public_key: None,
    }
}

/// Ledger ops and wall time of one engine call.
fn measured<T>(engine: &mut Engine, f: impl FnOnce(&mut Engine) -> Result<T, EngineError>) -> Result<(T, u64, u64, f64), EngineError> {
    let creates = engine.ledger().count_by_kind(TxKind::Create);
    let updates = engine.ledger().count_by_kind(TxKind::Update);
    let started = Instant::now();
    let out = f(engine)?;
    let elapsed = started.elapsed().as_secs_f64() * 1000.0;
    Ok((
        out,
        (engine.ledger().count_by_kind(TxKind::Create) - creates) as u64,
        (engine.ledger().count_by_kind(TxKind::Update) - updates) as u64,
        elapsed,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventsParams {
    pub assets_per_event: usize,
    pub compartments: usize,
    pub mode: CommitMode,
    pub seed: u64,
}

impl Default for EventsParams {
    fn default() -> Self {
        Self {
            assets_per_event: 30,
            compartments: 2,
            mode: CommitMode::ServiceList,
            seed: 0,
        }
    }
}

/// Produce, ship, receive and manufacture batches of `assets_per_event`
/// each; one row per (event type, asset) with `x` the 1-based index in its
/// batch. Product `i` consumes batch asset `i` plus `compartments - 1`
/// fillers prepared outside the measurement.
pub fn bench_events(params: &EventsParams) -> Result<Vec<BenchRow>, BenchError> {
    if params.assets_per_event == 0 || params.compartments == 0 {
        return Err(BenchError::InvalidParams("counts must be at least 1".into()));
    }
    let config = EngineConfig {
        seed: params.seed,
        ..Default::default()
    };
    let mut engine = fresh_engine(&config)?;
    engine.register_actor(spec("producer", Role::Producer))?;
    engine.register_actor(spec("manufacturer", Role::Manufacturer))?;
    let id = format!("events-{}", params.seed);
    let n = params.assets_per_event;
    let mut rows = Vec::with_capacity(4 * n);
    let row = |event: &str, i: usize, c: u64, u: u64, ms: f64| BenchRow {
        scenario_id: id.clone(),
        event_type: event.into(),
        x: i as u64 + 1,
        doc_ops_create: c,
        doc_ops_update: u,
        trace_resolutions: None,
        elapsed_ms: ms,
    };

    let mut batch = Vec::with_capacity(n);
    for i in 0..n {
        let ((did, _), c, u, ms) = measured(&mut engine, |e| e.produce("producer", BTreeMap::new()))?;
        rows.push(row("produce", i, c, u, ms));
        batch.push(did);
    }
    for (i, did) in batch.iter().enumerate() {
        let (_, c, u, ms) = measured(&mut engine, |e| e.ship("producer", did, "manufacturer"))?;
        rows.push(row("ship", i, c, u, ms));
    }
    for (i, did) in batch.iter().enumerate() {
        let (_, c, u, ms) = measured(&mut engine, |e| e.receive("manufacturer", did))?;
        rows.push(row("receive", i, c, u, ms));
    }
    let fillers = received_inputs(&mut engine, n * (params.compartments - 1))?;
    for (i, did) in batch.iter().enumerate() {
        let mut inputs = vec![did.clone()];
        inputs.extend_from_slice(&fillers[i * (params.compartments - 1)..(i + 1) * (params.compartments - 1)]);
        let (_, c, u, ms) = measured(&mut engine, |e| e.manufacture("manufacturer", &inputs, BTreeMap::new(), params.mode))?;
        rows.push(row("manufacture", i, c, u, ms));
    }
    Ok(rows)
}

/// `count` raw materials delivered to and received by "manufacturer".
fn received_inputs(engine: &mut Engine, count: usize) -> Result<Vec<Did>, BenchError> {
    (0..count)
        .map(|_| {
            let (did, _) = engine.produce("producer", BTreeMap::new())?;
            engine.ship("producer", &did, "manufacturer")?;
            engine.receive("manufacturer", &did)?;
            Ok(did)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepParams {
    pub start: usize,
    pub max_n: usize,
    pub step: usize,
    pub compat_limit: Option<usize>,
    pub mode: CommitMode,
    pub seed: u64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            start: 1,
            max_n: 68,
            step: 1,
            compat_limit: None,
            mode: CommitMode::ServiceList,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEndpoint {
    pub n: usize,
    pub error_code: ErrorCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<BenchRow>,
    /// Largest n that was accepted.
    pub max_accepted: Option<usize>,
    /// First rejected n, which ends the sweep.
    pub endpoint: Option<SweepEndpoint>,
    /// Every accepted step has the same creates and updates-per-compartment.
    pub affine: bool,
}

/// Manufactures one product per n in `start..=max_n` (by `step`) from n
/// received compartments, stopping at the first rejection.
pub fn bench_manufacture_sweep(params: &SweepParams) -> Result<SweepReport, BenchError> {
    if params.start == 0 || params.step == 0 || params.max_n < params.start {
        return Err(BenchError::InvalidParams("need 1 <= start <= max_n and step >= 1".into()));
    }
    let config = EngineConfig {
        seed: params.seed,
        max_compartments_per_tx: params.compat_limit,
        ..Default::default()
    };
    let mut engine = fresh_engine(&config)?;
    engine.register_actor(spec("producer", Role::Producer))?;
    engine.register_actor(spec("manufacturer", Role::Manufacturer))?;
    let id = format!("sweep-{}", params.mode);
    let mut report = SweepReport {
        rows: Vec::new(),
        max_accepted: None,
        endpoint: None,
        affine: true,
    };
    let mut pool: Vec<Did> = Vec::new();
    for n in (params.start..=params.max_n).step_by(params.step) {
        if pool.len() < n {
            let more = received_inputs(&mut engine, n - pool.len())?;
            pool.extend(more);
        }
        let inputs: Vec<Did> = pool[..n].to_vec();
        match measured(&mut engine, |e| e.manufacture("manufacturer", &inputs, BTreeMap::new(), params.mode)) {
            Ok((_, c, u, ms)) => {
                pool.drain(..n);
                report.rows.push(BenchRow {
                    scenario_id: id.clone(),
                    event_type: "manufacture".into(),
                    x: n as u64,
                    doc_ops_create: c,
                    doc_ops_update: u,
                    trace_resolutions: None,
                    elapsed_ms: ms,
                });
                report.max_accepted = Some(n);
            }
            Err(e) => {
                report.endpoint = Some(SweepEndpoint { n, error_code: e.code() });
                break;
            }
        }
    }
    report.affine = is_affine(&report.rows);
    Ok(report)
}

/// Constant creates and a constant update slope per unit of x.
fn is_affine(rows: &[BenchRow]) -> bool {
    let Some(first) = rows.first() else {
        return true;
    };
    let slope = rows.get(1).map(|second| {
        (second.doc_ops_update as f64 - first.doc_ops_update as f64) / (second.x as f64 - first.x as f64)
    });
    rows.iter().all(|r| {
        r.doc_ops_create == first.doc_ops_create
            && slope.is_none_or(|s| {
                let predicted = first.doc_ops_update as f64 + s * (r.x as f64 - first.x as f64);
                predicted == r.doc_ops_update as f64
            })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSweepParams {
    pub num_assets: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub max_depth: usize,
    pub mode: CommitMode,
    pub seed: u64,
    /// Build and trace samples on the rayon pool. Op counts are unaffected.
    pub parallel: bool,
}

impl Default for TraceSweepParams {
    fn default() -> Self {
        Self {
            num_assets: 383,
            min_events: 1,
            max_events: 25,
            max_depth: 3,
            mode: CommitMode::ServiceList,
            seed: 0,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSweepReport {
    pub rows: Vec<BenchRow>,
    /// OLS of resolutions on total events.
    pub resolution_fit: TraceFit,
    /// OLS of local trace seconds on total events.
    pub time_fit: TraceFit,
}

/// Event count of sample `i`. The first two samples pin both ends of the
/// range so the fit always has spread.
fn sample_events(params: &TraceSweepParams, i: usize, rng: &mut ChaCha8Rng) -> usize {
    match i {
        0 => params.min_events,
        1 => params.max_events,
        _ => rng.random_range(params.min_events..=params.max_events),
    }
}

fn trace_sample(params: &TraceSweepParams, i: usize) -> Result<BenchRow, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(i as u64);
    let events = sample_events(params, i, &mut rng);
    let (script, root) = closure_scenario(&mut rng, events, params.max_depth, params.mode);
    let config = EngineConfig {
        seed: params.seed.wrapping_add(i as u64),
        ..Default::default()
    };
    let mut engine = fresh_engine(&config)?;
    let run = run_scenario(&mut engine, &script)?;
    let did = &run.assets[&root];
    let started = Instant::now();
    let report = trace(engine.registry(), engine.store(), did)?;
    let elapsed_ms = started.elapsed().as_secs_f64() * 1000.0;
    Ok(BenchRow {
        scenario_id: format!("trace-{i}"),
        event_type: "trace".into(),
        x: report.events.len() as u64,
        doc_ops_create: engine.ledger().count_by_kind(TxKind::Create) as u64,
        doc_ops_update: engine.ledger().count_by_kind(TxKind::Update) as u64,
        trace_resolutions: Some(report.resolution_count),
        elapsed_ms,
    })
}

/// Traces `num_assets` generated supply chains with event counts drawn
/// uniformly from `min_events..=max_events` and fits both measures.
pub fn bench_trace_sweep(params: &TraceSweepParams) -> Result<TraceSweepReport, BenchError> {
    if params.num_assets < 2 || params.min_events == 0 || params.max_events <= params.min_events {
        return Err(BenchError::InvalidParams("need num_assets >= 2 and 1 <= min_events < max_events".into()));
    }
    let rows: Vec<BenchRow> = if params.parallel {
        (0..params.num_assets).into_par_iter().map(|i| trace_sample(params, i)).collect::<Result<_, _>>()?
    } else {
        (0..params.num_assets).map(|i| trace_sample(params, i)).collect::<Result<_, _>>()?
    };
    let resolutions: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.x as f64, r.trace_resolutions.unwrap_or_default() as f64))
        .collect();
    let times: Vec<(f64, f64)> = rows.iter().map(|r| (r.x as f64, r.elapsed_ms / 1000.0)).collect();
    Ok(TraceSweepReport {
        resolution_fit: fit_trace_model(&resolutions)?,
        time_fit: fit_trace_model(&times)?,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(x: u64, c: u64, u: u64) -> BenchRow {
        BenchRow {
            scenario_id: "s".into(),
            event_type: "manufacture".into(),
            x,
            doc_ops_create: c,
            doc_ops_update: u,
            trace_resolutions: None,
            elapsed_ms: 0.0,
        }
    }

    #[test]
    fn affine_check() {
        assert!(is_affine(&[row(1, 1, 2), row(2, 1, 3), row(5, 1, 6)]));
        assert!(!is_affine(&[row(1, 1, 2), row(2, 1, 3), row(3, 1, 5)]));
        assert!(!is_affine(&[row(1, 1, 2), row(2, 2, 3)]));
        assert!(is_affine(&[]));
    }

    #[test]
    fn csv_header_and_line_endings() {
        let mut out = Vec::new();
        write_csv(&[row(3, 1, 4)], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\ns,manufacture,3,1,4,,0.0\n"));
        assert_eq!(read_csv(&text).unwrap(), vec![row(3, 1, 4)]);
        let mut empty = Vec::new();
        write_csv(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), format!("{CSV_HEADER}\n"));
    }
}
