use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use didchain_bench::{
    bench_events, bench_manufacture_sweep, bench_trace_sweep, write_csv, EventsParams, SweepParams, TraceSweepParams,
};
use didchain_core::costing::{ledger_cost, scenario_cost, stakeholder_cost};
use didchain_core::error::{Classify, ErrorCode};
use didchain_core::events::{ActorSpec, AssetStatus, CommitMode, Engine, EngineError, Role};
use didchain_core::identity::{Did, KeyMode, VerificationKey, VersionId};
use didchain_core::scenario::{run_scenario, ScenarioScript};
use didchain_core::trace::{trace, track, verify_history_chain, TraceReport};
use didchain_gateway::{clock_for, GatewayConfig};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "didchain", version, about = "Supply-chain documentation on versioned DIDs")]
struct Cli {
    /// Engine state directory.
    #[arg(long, global = true, env = "DIDCHAIN_DATA_DIR", default_value = "didchain-data")]
    data_dir: PathBuf,
    /// TOML configuration (fees, price, limits, gateway settings).
    #[arg(long, global = true, env = "DIDCHAIN_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for DID generation and derived keys of a new data directory.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use a deterministic one-second clock starting here (RFC 3339).
    #[arg(long, global = true)]
    clock_start: Option<DateTime<Utc>>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Reject manufacture with more compartments than this.
    #[arg(long, global = true)]
    compat_limit: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Manage participants.
    #[command(subcommand)]
    Actor(ActorCmd),
    /// Document a new raw material.
    Produce {
        #[arg(long)]
        actor: String,
        /// key=value, repeatable.
        #[arg(long = "attr", value_parser = parse_attr)]
        attributes: Vec<(String, String)>,
    },
    /// Hand an asset over to another actor.
    Ship {
        #[arg(long)]
        actor: String,
        #[arg(long)]
        asset: Did,
        #[arg(long)]
        to: String,
    },
    /// Accept a shipped asset.
    Receive {
        #[arg(long)]
        actor: String,
        #[arg(long)]
        asset: Did,
    },
    /// Create a product from compartments.
    Manufacture {
        #[arg(long)]
        actor: String,
        /// Compartment DIDs, or a single count N to use the actor's N
        /// oldest eligible assets.
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        compartments: Vec<String>,
        #[arg(long, default_value = "service-list")]
        mode: CommitMode,
        #[arg(long = "attr", value_parser = parse_attr)]
        attributes: Vec<(String, String)>,
    },
    /// Take an asset out of circulation.
    Withdraw {
        #[arg(long)]
        actor: String,
        #[arg(long)]
        asset: Did,
        #[arg(long, default_value = "")]
        reason: String,
        /// Also deactivate the DID.
        #[arg(long)]
        deactivate: bool,
    },
    /// Resolve a DID document (head, or a given version).
    Resolve {
        did: Did,
        #[arg(long, conflicts_with = "version_id")]
        version: Option<u32>,
        #[arg(long)]
        version_id: Option<String>,
    },
    /// List the version metadata of a DID.
    Versions { did: Did },
    /// Full recursive history of an asset.
    Trace { did: Did },
    /// Current state of an asset from its head document.
    Track { did: Did },
    /// Fees per account, per stakeholder role, or for a scenario script.
    CostReport {
        /// Per-role cost model instead of charged fees.
        #[arg(long, conflicts_with = "script")]
        model: bool,
        /// Compartments per product for the model.
        #[arg(long, default_value_t = 2)]
        compartments: u64,
        /// Predict per-actor costs of a scenario script without running it.
        #[arg(long)]
        script: Option<PathBuf>,
        /// USD per CT; defaults to the configured price.
        #[arg(long)]
        price: Option<rust_decimal::Decimal>,
    },
    /// Check every stored object and every DID version chain.
    VerifyStore,
    /// Execute a scenario script.
    RunScenario { script: PathBuf },
    /// Benchmarks writing CSV.
    Bench {
        #[command(subcommand)]
        kind: BenchCmd,
        /// Output directory.
        #[arg(long, global = true, default_value = "bench-out")]
        out: PathBuf,
    },
    /// Run the HTTP gateway.
    Serve {
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Subcommand)]
enum ActorCmd {
    /// Register a participant with a funded account.
    Create {
        alias: String,
        #[arg(long)]
        role: Role,
        #[arg(long, default_value_t = 0)]
        balance: u64,
        /// Hex Ed25519 seed for a service-held key.
        #[arg(long, conflicts_with = "public_key")]
        key_seed: Option<String>,
        /// Multibase public key; the actor then signs client-side.
        #[arg(long)]
        public_key: Option<String>,
    },
    /// List registered participants.
    List,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Per-event documentation batches.
    Events {
        #[arg(long, default_value_t = 30)]
        assets: usize,
        #[arg(long, default_value_t = 2)]
        compartments: usize,
    },
    /// Manufacture-size sweep.
    Sweep {
        #[arg(long, default_value_t = 1)]
        start: usize,
        #[arg(long, default_value_t = 68)]
        max_n: usize,
        #[arg(long, default_value_t = 1)]
        step: usize,
        #[arg(long, default_value = "service-list")]
        mode: CommitMode,
    },
    /// Trace-length sweep with regression fits.
    Trace {
        #[arg(long, default_value_t = 383)]
        assets: usize,
        #[arg(long, default_value_t = 1)]
        min_events: usize,
        #[arg(long, default_value_t = 25)]
        max_events: usize,
        #[arg(long, default_value_t = 3)]
        max_depth: usize,
        #[arg(long)]
        parallel: bool,
    },
}

fn parse_attr(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

/// A classified failure: the code goes to stderr and the exit status is 1.
struct Failure {
    code: ErrorCode,
    message: String,
}

fn fail<E: Classify + Display>(e: E) -> Failure {
    Failure {
        code: e.code(),
        message: e.to_string(),
    }
}

fn failure(code: ErrorCode, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

type CliResult = Result<Output, Failure>;

/// What a command prints: JSON for `--format json`, text otherwise.
struct Output {
    json: Value,
    text: String,
}

fn output(json: Value, text: impl Into<String>) -> CliResult {
    Ok(Output { json, text: text.into() })
}

fn to_json<T: serde::Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("output types serialize")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let format = cli.format;
    match run(cli) {
        Ok(out) => {
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&out.json).expect("json")),
                Format::Text => {
                    if !out.text.is_empty() {
                        println!("{}", out.text.trim_end());
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}: {}", f.code, f.message);
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<GatewayConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => GatewayConfig::load(path).map_err(fail)?,
        None => GatewayConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.engine.seed = seed;
    }
    if cli.clock_start.is_some() {
        config.clock_start = cli.clock_start;
    }
    config.data_dir = Some(cli.data_dir.clone());
    Ok(config)
}

/// The persisted engine with this invocation's overrides applied.
struct Session {
    engine: Engine,
    saved_limit: Option<usize>,
}

impl Session {
    fn open(cli: &Cli, config: &GatewayConfig) -> Result<Self, Failure> {
        let mut engine = Engine::open(&cli.data_dir, config.engine.clone(), clock_for(config, None)).map_err(fail)?;
        engine.set_clock(clock_for(config, engine.last_timestamp()));
        let saved_limit = engine.config().max_compartments_per_tx;
        if cli.compat_limit.is_some() {
            engine.set_max_compartments_per_tx(cli.compat_limit);
        }
        Ok(Self { engine, saved_limit })
    }

    /// Persists state without the per-invocation limit override.
    fn save(&mut self) -> Result<(), Failure> {
        let current = self.engine.config().max_compartments_per_tx;
        self.engine.set_max_compartments_per_tx(self.saved_limit);
        let result = self.engine.save().map_err(fail);
        self.engine.set_max_compartments_per_tx(current);
        result
    }
}

fn run(cli: Cli) -> CliResult {
    let config = load_config(&cli)?;
    match &cli.command {
        Cmd::Bench { kind, out } => return run_bench(&cli, kind, out),
        Cmd::Serve { bind } => return serve(config, bind.clone()),
        _ => {}
    }
    let mut session = Session::open(&cli, &config)?;
    let result = dispatch(&cli, &mut session);
    // Committed work persists even if a later step of the command failed.
    session.save()?;
    result
}

fn dispatch(cli: &Cli, session: &mut Session) -> CliResult {
    let engine = &mut session.engine;
    match &cli.command {
        Cmd::Actor(ActorCmd::Create {
            alias,
            role,
            balance,
            key_seed,
            public_key,
        }) => {
            let public_key = public_key
                .as_deref()
                .map(str::parse::<VerificationKey>)
                .transpose()
                .map_err(fail)?;
            let spec = ActorSpec {
                alias: alias.clone(),
                role: *role,
                balance: *balance,
                mode: if public_key.is_some() { KeyMode::ClientManagedSecret } else { KeyMode::InternalSecret },
                seed: key_seed.clone(),
                public_key,
            };
            let actor = engine.register_actor(spec).map_err(fail)?;
            let json = json!({ "alias": actor.alias, "did": actor.did, "role": actor.role, "account": actor.account });
            let text = format!("{} {} {}", actor.alias, actor.role.as_str(), actor.did);
            output(json, text)
        }
        Cmd::Actor(ActorCmd::List) => {
            let rows: Vec<Value> = engine
                .actors()
                .map(|a| {
                    let balance = engine.ledger().balance_of(&a.account).unwrap_or_default();
                    json!({ "alias": a.alias, "did": a.did, "role": a.role, "balance": balance })
                })
                .collect();
            let text = engine
                .actors()
                .map(|a| {
                    let balance = engine.ledger().balance_of(&a.account).unwrap_or_default();
                    format!("{:<16} {:<13} {:>10} CT  {}", a.alias, a.role.as_str(), balance, a.did)
                })
                .collect::<Vec<_>>()
                .join("\n");
            output(Value::Array(rows), text)
        }
        Cmd::Produce { actor, attributes } => {
            let (did, cid) = engine.produce(actor, attributes.iter().cloned().collect()).map_err(fail)?;
            output(json!({ "asset": did, "cid": cid }), format!("{did} {cid}"))
        }
        Cmd::Ship { actor, asset, to } => {
            let cid = engine.ship(actor, asset, to).map_err(fail)?;
            output(json!({ "asset": asset, "cid": cid }), cid.to_string())
        }
        Cmd::Receive { actor, asset } => {
            let cid = engine.receive(actor, asset).map_err(fail)?;
            output(json!({ "asset": asset, "cid": cid }), cid.to_string())
        }
        Cmd::Manufacture {
            actor,
            compartments,
            mode,
            attributes,
        } => {
            let inputs = compartment_inputs(engine, actor, compartments)?;
            let (did, cid) = engine
                .manufacture(actor, &inputs, attributes.iter().cloned().collect(), *mode)
                .map_err(fail)?;
            output(json!({ "asset": did, "cid": cid, "compartments": inputs }), format!("{did} {cid}"))
        }
        Cmd::Withdraw {
            actor,
            asset,
            reason,
            deactivate,
        } => {
            let cid = engine.withdraw(actor, asset, reason, *deactivate).map_err(fail)?;
            output(json!({ "asset": asset, "cid": cid }), cid.to_string())
        }
        Cmd::Resolve { did, version, version_id } => {
            let registry = engine.registry();
            let doc = match (version, version_id) {
                (Some(n), _) => registry.resolve_version_number(did, *n),
                (None, Some(id)) => VersionId::parse(id).and_then(|id| registry.resolve_version(did, &id)),
                (None, None) => registry.resolve(did),
            }
            .map_err(fail)?;
            let json = to_json(&doc);
            let text = serde_json::to_string_pretty(&json).expect("json");
            output(json, text)
        }
        Cmd::Versions { did } => {
            let versions = engine.registry().list_versions(did).map_err(fail)?;
            let text = versions
                .iter()
                .map(|m| {
                    let flag = if m.deactivated { " deactivated" } else { "" };
                    format!("v{:<4} {} {}{flag}", m.version, m.updated.to_rfc3339(), m.version_id)
                })
                .collect::<Vec<_>>()
                .join("\n");
            output(json!({ "did": did, "versions": versions }), text)
        }
        Cmd::Trace { did } => {
            let report = trace(engine.registry(), engine.store(), did).map_err(fail)?;
            let text = trace_text(&report);
            output(to_json(&report), text)
        }
        Cmd::Track { did } => {
            let report = track(engine.registry(), did).map_err(fail)?;
            let status = report.status.map_or("-".to_string(), |s| format!("{s:?}"));
            let controllers: Vec<String> = report.controllers.iter().map(Did::to_string).collect();
            let text = format!(
                "{} {:?} status={} version={} controller={}{}",
                report.did,
                report.kind,
                status,
                report.version,
                controllers.join(","),
                if report.deactivated { " deactivated" } else { "" }
            );
            output(to_json(&report), text)
        }
        Cmd::CostReport {
            model,
            compartments,
            script,
            price,
        } => cost_report(engine, *model, *compartments, script.as_deref(), *price),
        Cmd::VerifyStore => verify_store(engine),
        Cmd::RunScenario { script } => {
            let text = fs::read_to_string(script).map_err(|e| failure(ErrorCode::MalformedScript, format!("{}: {e}", script.display())))?;
            let script = ScenarioScript::from_json(&text).map_err(fail)?;
            let run = run_scenario(engine, &script).map_err(fail)?;
            let fees: u64 = run.outcomes.iter().map(|o| o.fees_charged).sum();
            let mut lines: Vec<String> = run.assets.iter().map(|(alias, did)| format!("{alias:<16} {did}")).collect();
            lines.push(format!("{} events, {fees} CT", run.outcomes.len()));
            let json = json!({ "actors": run.actors, "assets": run.assets, "events": run.outcomes.len(), "fees_ct": fees, "outcomes": run.outcomes });
            output(json, lines.join("\n"))
        }
        Cmd::Bench { .. } | Cmd::Serve { .. } => unreachable!("handled before the engine opens"),
    }
}

/// Explicit DIDs, or a count meaning the actor's oldest eligible assets.
fn compartment_inputs(engine: &Engine, actor: &str, given: &[String]) -> Result<Vec<Did>, Failure> {
    if let [single] = given {
        if let Ok(count) = single.parse::<usize>() {
            // Same order as the engine: the count check comes first.
            if let Some(limit) = engine.config().max_compartments_per_tx {
                if count > limit {
                    return Err(fail(EngineError::CompartmentLimitExceeded { count, limit }));
                }
            }
            let holder = engine.actor(actor).map_err(fail)?.did.clone();
            let mut eligible: Vec<_> = engine
                .assets()
                .filter(|a| a.current_controller == holder && matches!(a.status, AssetStatus::Produced | AssetStatus::Received))
                .filter(|a| !a.deactivated)
                .collect();
            eligible.sort_by_key(|a| a.event_cids.len());
            if eligible.len() < count {
                return Err(failure(
                    ErrorCode::MalformedRequest,
                    format!("{actor} holds {} eligible assets, {count} requested", eligible.len()),
                ));
            }
            return Ok(eligible.into_iter().take(count).map(|a| a.did.clone()).collect());
        }
    }
    given.iter().map(|s| s.parse::<Did>().map_err(fail)).collect()
}

fn trace_text(report: &TraceReport) -> String {
    let mut lines = vec![format!(
        "{}: {} events, {} resolutions, {}",
        report.root,
        report.events.len(),
        report.resolution_count,
        if report.verified { "verified" } else { "NOT verified" }
    )];
    for ev in &report.events {
        lines.push(format!(
            "  {} {:<11} v{:<3} {} {}",
            ev.record.timestamp.to_rfc3339(),
            ev.record.event_type.as_str(),
            ev.version,
            ev.asset,
            ev.cid
        ));
    }
    for issue in &report.issues {
        lines.push(format!("  issue: {issue}"));
    }
    lines.join("\n")
}

fn cost_report(engine: &Engine, model: bool, n: u64, script: Option<&Path>, price: Option<rust_decimal::Decimal>) -> CliResult {
    let price = price.unwrap_or(engine.ledger().config().token_price_usd);
    if price <= rust_decimal::Decimal::ZERO {
        return Err(failure(ErrorCode::MalformedRequest, "price must be positive"));
    }
    let fees = *engine.ledger().fees();
    let reports = if model {
        Role::ALL.iter().map(|r| stakeholder_cost(*r, n, &fees, price)).collect()
    } else if let Some(path) = script {
        let text = fs::read_to_string(path).map_err(|e| failure(ErrorCode::MalformedScript, format!("{}: {e}", path.display())))?;
        let script = ScenarioScript::from_json(&text).map_err(fail)?;
        scenario_cost(&script, &fees, price, engine.config().lean_receiving).map_err(fail)?
    } else {
        ledger_cost(engine.ledger(), price)
    };
    let total_ct: u64 = reports.iter().map(|r| r.total_ct).sum();
    let mut lines = vec![format!(
        "{:<16} {:>7} {:>7} {:>7} {:>10} {:>12}",
        "stakeholder", "creates", "updates", "deact", "CT", "USD"
    )];
    for r in &reports {
        lines.push(format!(
            "{:<16} {:>7} {:>7} {:>7} {:>10} {:>12}",
            r.stakeholder, r.creates, r.updates, r.deactivates, r.total_ct, r.total_usd
        ));
    }
    if !model {
        lines.push(format!("{:<16} {:>7} {:>7} {:>7} {:>10}", "total", "", "", "", total_ct));
    }
    output(json!({ "price_usd": price, "total_ct": total_ct, "reports": reports }), lines.join("\n"))
}

fn verify_store(engine: &Engine) -> CliResult {
    let scan = engine.store().scan().map_err(fail)?;
    let mut chain_failures = Vec::new();
    let dids: Vec<Did> = engine.registry().dids().cloned().collect();
    for did in &dids {
        let verdict = verify_history_chain(engine.registry(), did).map_err(fail)?;
        if !verdict.ok {
            chain_failures.push(verdict);
        }
    }
    let ok = scan.is_clean() && chain_failures.is_empty();
    let mut lines = vec![format!(
        "{} objects checked, {} corrupt; {} DIDs checked, {} broken chains",
        scan.checked,
        scan.violations.len(),
        dids.len(),
        chain_failures.len()
    )];
    lines.extend(scan.violations.iter().map(|c| format!("  corrupt object {c}")));
    lines.extend(chain_failures.iter().map(|v| {
        let f = v.failure.as_ref().expect("failed verdicts carry a failure");
        format!("  {} v{}: {}", v.did, f.version, f.reason)
    }));
    if !ok {
        return Err(failure(ErrorCode::IntegrityViolation, lines.join("\n")));
    }
    output(
        json!({ "objects_checked": scan.checked, "dids_checked": dids.len(), "ok": true }),
        lines.join("\n"),
    )
}

fn run_bench(cli: &Cli, kind: &BenchCmd, out: &Path) -> CliResult {
    fs::create_dir_all(out).map_err(|e| failure(ErrorCode::Internal, format!("{}: {e}", out.display())))?;
    let seed = cli.seed.unwrap_or(0);
    let write = |name: &str, rows: &[didchain_bench::BenchRow]| -> Result<PathBuf, Failure> {
        let path = out.join(name);
        let file = fs::File::create(&path).map_err(|e| failure(ErrorCode::Internal, format!("{}: {e}", path.display())))?;
        write_csv(rows, std::io::BufWriter::new(file)).map_err(fail)?;
        Ok(path)
    };
    match kind {
        BenchCmd::Events { assets, compartments } => {
            let rows = bench_events(&EventsParams {
                assets_per_event: *assets,
                compartments: *compartments,
                mode: CommitMode::ServiceList,
                seed,
            })
            .map_err(fail)?;
            let path = write("events.csv", &rows)?;
            output(json!({ "csv": path, "rows": rows.len() }), format!("{} rows -> {}", rows.len(), path.display()))
        }
        BenchCmd::Sweep { start, max_n, step, mode } => {
            let report = bench_manufacture_sweep(&SweepParams {
                start: *start,
                max_n: *max_n,
                step: *step,
                compat_limit: cli.compat_limit,
                mode: *mode,
                seed,
            })
            .map_err(fail)?;
            let path = write("sweep.csv", &report.rows)?;
            let end = report
                .endpoint
                .as_ref()
                .map_or("none".to_string(), |e| format!("n={} {}", e.n, e.error_code));
            let text = format!(
                "{} rows -> {}\nmax accepted: {}\nendpoint: {end}\naffine: {}",
                report.rows.len(),
                path.display(),
                report.max_accepted.map_or("none".to_string(), |n| n.to_string()),
                report.affine
            );
            output(
                json!({ "csv": path, "max_accepted": report.max_accepted, "endpoint": report.endpoint, "affine": report.affine }),
                text,
            )
        }
        BenchCmd::Trace {
            assets,
            min_events,
            max_events,
            max_depth,
            parallel,
        } => {
            let report = bench_trace_sweep(&TraceSweepParams {
                num_assets: *assets,
                min_events: *min_events,
                max_events: *max_events,
                max_depth: *max_depth,
                mode: CommitMode::ServiceList,
                seed,
                parallel: *parallel,
            })
            .map_err(fail)?;
            let path = write("trace.csv", &report.rows)?;
            let r = &report.resolution_fit;
            let t = &report.time_fit;
            let text = format!(
                "{} rows -> {}\nresolutions = {:.4}·x + {:.4} (R² = {:.6})\nseconds     = {:.6}·x + {:.6} (R² = {:.4})",
                report.rows.len(),
                path.display(),
                r.model.a,
                r.model.b,
                r.r_squared,
                t.model.a,
                t.model.b,
                t.r_squared
            );
            output(
                json!({ "csv": path, "resolution_fit": report.resolution_fit, "time_fit": report.time_fit }),
                text,
            )
        }
    }
}

fn serve(mut config: GatewayConfig, bind: Option<String>) -> CliResult {
    config.apply_env().map_err(fail)?;
    config.apply_overrides(bind, None).map_err(fail)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| failure(ErrorCode::Internal, e.to_string()))?;
    runtime.block_on(didchain_gateway::serve(config)).map_err(fail)?;
    output(Value::Null, "")
}
