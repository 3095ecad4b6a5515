//! Scenario scripts: an actor table plus an ordered list of event commands
//! that refer to assets by alias. Used by the CLI, the benchmarks and tests.
//!
//! ```json
//! {
//!   "actors": [{"alias": "farm", "role": "Producer", "balance": 1000}],
//!   "commands": [
//!     {"op": "produce", "actor": "farm", "asset": "milk"},
//!     {"op": "ship", "actor": "farm", "asset": "milk", "to": "dairy"},
//!     {"op": "manufacture", "actor": "dairy", "asset": "cheese",
//!      "compartments": ["milk", "yeast"], "mode": "service-list"},
//!     {"op": "withdraw", "actor": "shop", "asset": "cheese", "reason": "recall", "deactivate": false}
//!   ]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Classify, ErrorCode};
use crate::events::{ActorSpec, CommitMode, Engine, EngineError, EventOutcome, EventRequest, Role};
use crate::identity::Did;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("malformed script: {0}")]
    MalformedScript(String),
    #[error("command {index} ({op}) failed: {source}")]
    Command {
        index: usize,
        op: &'static str,
        #[source]
        source: EngineError,
    },
    #[error("actor setup failed: {0}")]
    Setup(#[source] EngineError),
}

impl Classify for ScenarioError {
    fn code(&self) -> ErrorCode {
        match self {
            ScenarioError::MalformedScript(_) => ErrorCode::MalformedScript,
            ScenarioError::Command { source, .. } | ScenarioError::Setup(source) => source.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Command {
    Produce {
        actor: String,
        asset: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        attributes: BTreeMap<String, String>,
    },
    Ship {
        actor: String,
        asset: String,
        to: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        attributes: BTreeMap<String, String>,
    },
    Receive {
        actor: String,
        asset: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        attributes: BTreeMap<String, String>,
    },
    Manufacture {
        actor: String,
        asset: String,
        compartments: Vec<String>,
        #[serde(default)]
        mode: CommitMode,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        attributes: BTreeMap<String, String>,
    },
    Withdraw {
        actor: String,
        asset: String,
        #[serde(default)]
        reason: String,
        #[serde(default)]
        deactivate: bool,
    },
}

impl Command {
    pub fn actor(&self) -> &str {
        match self {
            Command::Produce { actor, .. }
            | Command::Ship { actor, .. }
            | Command::Receive { actor, .. }
            | Command::Manufacture { actor, .. }
            | Command::Withdraw { actor, .. } => actor,
        }
    }

    pub fn asset(&self) -> &str {
        match self {
            Command::Produce { asset, .. }
            | Command::Ship { asset, .. }
            | Command::Receive { asset, .. }
            | Command::Manufacture { asset, .. }
            | Command::Withdraw { asset, .. } => asset,
        }
    }

    pub fn op(&self) -> &'static str {
        match self {
            Command::Produce { .. } => "produce",
            Command::Ship { .. } => "ship",
            Command::Receive { .. } => "receive",
            Command::Manufacture { .. } => "manufacture",
            Command::Withdraw { .. } => "withdraw",
        }
    }

    fn mints_asset(&self) -> bool {
        matches!(self, Command::Produce { .. } | Command::Manufacture { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub commands: Vec<Command>,
}

impl ScenarioScript {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let script: ScenarioScript = serde_json::from_str(text).map_err(|e| ScenarioError::MalformedScript(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    /// Unique actor aliases, declared actors only, every asset alias minted
    /// once before it is used.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |why: String| Err(ScenarioError::MalformedScript(why));
        let mut actors = BTreeSet::new();
        for a in &self.actors {
            if a.alias.is_empty() {
                return bad("empty actor alias".into());
            }
            if !actors.insert(a.alias.as_str()) {
                return bad(format!("actor alias {:?} declared twice", a.alias));
            }
        }
        let mut assets = BTreeSet::new();
        for (i, c) in self.commands.iter().enumerate() {
            if !actors.contains(c.actor()) {
                return bad(format!("command {i} references undeclared actor {:?}", c.actor()));
            }
            if let Command::Ship { to, .. } = c {
                if !actors.contains(to.as_str()) {
                    return bad(format!("command {i} ships to undeclared actor {to:?}"));
                }
            }
            if let Command::Manufacture { compartments, .. } = c {
                for comp in compartments {
                    if !assets.contains(comp.as_str()) {
                        return bad(format!("command {i} consumes unknown asset {comp:?}"));
                    }
                }
            }
            if c.mints_asset() {
                if !assets.insert(c.asset()) {
                    return bad(format!("command {i} re-mints asset alias {:?}", c.asset()));
                }
            } else if !assets.contains(c.asset()) {
                return bad(format!("command {i} references unknown asset {:?}", c.asset()));
            }
        }
        Ok(())
    }

    pub fn event_count(&self) -> usize {
        self.commands.len()
    }
}

/// What a scenario run produced.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub assets: BTreeMap<String, Did>,
    pub actors: BTreeMap<String, Did>,
    pub outcomes: Vec<EventOutcome>,
}

/// Registers the script's actors (reusing same-role actors that already
/// exist) and executes every command in order, stopping at the first error.
pub fn run_scenario(engine: &mut Engine, script: &ScenarioScript) -> Result<ScenarioRun, ScenarioError> {
    script.validate()?;
    let mut run = ScenarioRun::default();
    for spec in &script.actors {
        let did = match engine.actor(&spec.alias) {
            Ok(existing) if existing.role == spec.role => existing.did.clone(),
            Ok(_) => return Err(ScenarioError::Setup(EngineError::ActorExists(spec.alias.clone()))),
            Err(_) => engine.register_actor(spec.clone()).map_err(ScenarioError::Setup)?.did.clone(),
        };
        run.actors.insert(spec.alias.clone(), did);
    }
    for (index, command) in script.commands.iter().enumerate() {
        let did_of = |alias: &str| run.assets.get(alias).cloned().expect("validated");
        let request = match command {
            Command::Produce { actor, attributes, .. } => EventRequest::Produce {
                actor: actor.clone(),
                attributes: attributes.clone(),
            },
            Command::Ship {
                actor, asset, to, attributes,
            } => EventRequest::Ship {
                actor: actor.clone(),
                asset: did_of(asset),
                to: to.clone(),
                attributes: attributes.clone(),
            },
            Command::Receive { actor, asset, attributes } => EventRequest::Receive {
                actor: actor.clone(),
                asset: did_of(asset),
                attributes: attributes.clone(),
            },
            Command::Manufacture {
                actor,
                compartments,
                mode,
                attributes,
                ..
            } => EventRequest::Manufacture {
                actor: actor.clone(),
                compartments: compartments.iter().map(|c| did_of(c)).collect(),
                mode: *mode,
                attributes: attributes.clone(),
            },
            Command::Withdraw {
                actor,
                asset,
                reason,
                deactivate,
            } => EventRequest::Withdraw {
                actor: actor.clone(),
                asset: did_of(asset),
                reason: reason.clone(),
                deactivate: *deactivate,
            },
        };
        let outcome = engine.submit(request).map_err(|source| ScenarioError::Command {
            index,
            op: command.op(),
            source,
        })?;
        if command.mints_asset() {
            run.assets.insert(command.asset().to_string(), outcome.asset.clone());
        }
        run.outcomes.push(outcome);
    }
    Ok(run)
}

/// Shape of generated scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomScenarioParams {
    pub min_events: usize,
    pub max_events: usize,
    /// Largest compartment list a generated manufacture uses.
    pub max_compartments: usize,
    pub balance: u64,
    pub mode: CommitMode,
}

impl Default for RandomScenarioParams {
    fn default() -> Self {
        Self {
            min_events: 5,
            max_events: 100,
            max_compartments: 4,
            balance: 1_000_000,
            mode: CommitMode::ServiceList,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ModelStatus {
    Held,
    InTransit,
    Gone,
}

#[derive(Debug, Clone)]
struct ModelAsset {
    alias: String,
    holder: String,
    status: ModelStatus,
}

fn standard_actors(balance: u64) -> Vec<ActorSpec> {
    let spec = |alias: &str, role| ActorSpec {
        alias: alias.to_string(),
        role,
        balance,
        mode: Default::default(),
        seed: None,
        public_key: None,
    };
    vec![
        spec("producer-1", Role::Producer),
        spec("producer-2", Role::Producer),
        spec("supplier-1", Role::Supplier),
        spec("supplier-2", Role::Supplier),
        spec("manufacturer-1", Role::Manufacturer),
        spec("manufacturer-2", Role::Manufacturer),
        spec("retailer-1", Role::Retailer),
        spec("customer-1", Role::Customer),
    ]
}

/// A valid script with a uniformly drawn number of events in
/// `[min_events, max_events]`. Every step picks uniformly among the moves
/// that are legal in the current model state: produce, ship a held asset to
/// a random participant, receive an in-transit asset, manufacture from 1 to
/// `max_compartments` held inputs, or withdraw (a quarter of withdrawals
/// also deactivate).
pub fn random_scenario(rng: &mut impl Rng, params: &RandomScenarioParams) -> ScenarioScript {
    let actors = standard_actors(params.balance);
    let names: Vec<String> = actors.iter().map(|a| a.alias.clone()).collect();
    let role_of: BTreeMap<&str, Role> = actors.iter().map(|a| (a.alias.as_str(), a.role)).collect();
    let producers: Vec<&str> = actors.iter().filter(|a| a.role == Role::Producer).map(|a| a.alias.as_str()).collect();
    let target = rng.random_range(params.min_events..=params.max_events.max(params.min_events));

    let mut assets: Vec<ModelAsset> = Vec::new();
    let mut commands = Vec::with_capacity(target);
    let mut next_id = 0usize;
    let mut fresh = |prefix: &str| {
        next_id += 1;
        format!("{prefix}-{next_id}")
    };
    while commands.len() < target {
        let held: Vec<usize> = (0..assets.len()).filter(|&i| assets[i].status == ModelStatus::Held).collect();
        let in_transit: Vec<usize> = (0..assets.len()).filter(|&i| assets[i].status == ModelStatus::InTransit).collect();
        let makers: Vec<&str> = names
            .iter()
            .map(String::as_str)
            .filter(|n| role_of[n] == Role::Manufacturer && held.iter().any(|&i| assets[i].holder == *n))
            .collect();
        let mut moves = vec![0u8];
        if !held.is_empty() {
            moves.extend([1, 1, 4]);
        }
        if !in_transit.is_empty() {
            moves.extend([2, 2]);
        }
        if !makers.is_empty() {
            moves.extend([3, 3]);
        }
        match *moves.choose(rng).expect("produce is always legal") {
            0 => {
                let actor = producers.choose(rng).expect("producers exist").to_string();
                let alias = fresh("material");
                commands.push(Command::Produce {
                    actor: actor.clone(),
                    asset: alias.clone(),
                    attributes: BTreeMap::new(),
                });
                assets.push(ModelAsset {
                    alias,
                    holder: actor,
                    status: ModelStatus::Held,
                });
            }
            1 => {
                let i = *held.choose(rng).expect("non-empty");
                let to = names.choose(rng).expect("actors exist").clone();
                commands.push(Command::Ship {
                    actor: assets[i].holder.clone(),
                    asset: assets[i].alias.clone(),
                    to: to.clone(),
                    attributes: BTreeMap::new(),
                });
                assets[i].holder = to;
                assets[i].status = ModelStatus::InTransit;
            }
            2 => {
                let i = *in_transit.choose(rng).expect("non-empty");
                commands.push(Command::Receive {
                    actor: assets[i].holder.clone(),
                    asset: assets[i].alias.clone(),
                    attributes: BTreeMap::new(),
                });
                assets[i].status = ModelStatus::Held;
            }
            3 => {
                let maker = makers.choose(rng).expect("non-empty").to_string();
                let mine: Vec<usize> = held.iter().copied().filter(|&i| assets[i].holder == maker).collect();
                let count = rng.random_range(1..=mine.len().min(params.max_compartments.max(1)));
                let picked: Vec<usize> = mine.choose_multiple(rng, count).copied().collect();
                let alias = fresh("product");
                commands.push(Command::Manufacture {
                    actor: maker.clone(),
                    asset: alias.clone(),
                    compartments: picked.iter().map(|&i| assets[i].alias.clone()).collect(),
                    mode: params.mode,
                    attributes: BTreeMap::new(),
                });
                for i in picked {
                    assets[i].status = ModelStatus::Gone;
                }
                assets.push(ModelAsset {
                    alias,
                    holder: maker,
                    status: ModelStatus::Held,
                });
            }
            _ => {
                let i = *held.choose(rng).expect("non-empty");
                commands.push(Command::Withdraw {
                    actor: assets[i].holder.clone(),
                    asset: assets[i].alias.clone(),
                    reason: "generated".into(),
                    deactivate: rng.random_bool(0.25),
                });
                assets[i].status = ModelStatus::Gone;
            }
        }
    }
    ScenarioScript { actors, commands }
}

/// A script whose last-minted asset (returned alias) has exactly `events`
/// events in its compartment closure. Products nest up to `max_depth`
/// levels; inputs travel producer → manufacturer and extra events are
/// ship/receive round trips.
pub fn closure_scenario(rng: &mut impl Rng, events: usize, max_depth: usize, mode: CommitMode) -> (ScenarioScript, String) {
    assert!(events >= 1, "an asset has at least one event");
    let actors = vec![
        ActorSpec {
            alias: "producer".into(),
            role: Role::Producer,
            balance: 10_000_000,
            mode: Default::default(),
            seed: None,
            public_key: None,
        },
        ActorSpec {
            alias: "manufacturer".into(),
            role: Role::Manufacturer,
            balance: 10_000_000,
            mode: Default::default(),
            seed: None,
            public_key: None,
        },
        ActorSpec {
            alias: "carrier".into(),
            role: Role::Supplier,
            balance: 10_000_000,
            mode: Default::default(),
            seed: None,
            public_key: None,
        },
    ];
    let mut builder = ClosureBuilder {
        rng,
        commands: Vec::new(),
        next_id: 0,
        mode,
    };
    let root = builder.root(events, max_depth);
    (
        ScenarioScript {
            actors,
            commands: builder.commands,
        },
        root,
    )
}

struct ClosureBuilder<'r, R: Rng> {
    rng: &'r mut R,
    commands: Vec<Command>,
    next_id: usize,
    mode: CommitMode,
}

impl<R: Rng> ClosureBuilder<'_, R> {
    fn alias(&mut self, prefix: &str) -> String {
        self.next_id += 1;
        format!("{prefix}-{}", self.next_id)
    }

    fn push_ship(&mut self, from: &str, asset: &str, to: &str) {
        self.commands.push(Command::Ship {
            actor: from.into(),
            asset: asset.into(),
            to: to.into(),
            attributes: BTreeMap::new(),
        });
    }

    fn push_receive(&mut self, by: &str, asset: &str) {
        self.commands.push(Command::Receive {
            actor: by.into(),
            asset: asset.into(),
            attributes: BTreeMap::new(),
        });
    }

    fn push_produce(&mut self) -> String {
        let alias = self.alias("material");
        self.commands.push(Command::Produce {
            actor: "producer".into(),
            asset: alias.clone(),
            attributes: BTreeMap::new(),
        });
        alias
    }

    /// `count` alternating ship/receive events from `holder`, bouncing via
    /// the carrier. May end in transit.
    fn open_tail(&mut self, asset: &str, holder: &str, count: usize) {
        let mut holder = holder.to_string();
        for i in 0..count {
            if i % 2 == 0 {
                let to = if holder == "carrier" { "manufacturer" } else { "carrier" };
                self.push_ship(&holder, asset, to);
                holder = to.to_string();
            } else {
                self.push_receive(&holder, asset);
            }
        }
    }

    /// `pairs` ship-to-self/receive round trips by the manufacturer.
    fn closed_tail(&mut self, asset: &str, pairs: usize) {
        for _ in 0..pairs {
            self.push_ship("manufacturer", asset, "manufacturer");
            self.push_receive("manufacturer", asset);
        }
    }

    fn root(&mut self, events: usize, max_depth: usize) -> String {
        if events < 4 || self.rng.random_bool(0.15) {
            let alias = self.push_produce();
            self.open_tail(&alias, "producer", events - 1);
            return alias;
        }
        let tail = self.rng.random_range(0..=(events - 4).min(6));
        let alias = self.product(events - tail, max_depth);
        self.open_tail(&alias, "manufacturer", tail);
        alias
    }

    /// Input held by the manufacturer with exactly `events >= 3` events in
    /// its closure. Odd counts can be raw materials; even counts need a
    /// nested product.
    fn compartment(&mut self, events: usize, depth: usize) -> String {
        debug_assert!(events >= 3);
        let nest = events.is_multiple_of(2) || (depth > 0 && events >= 4 && self.rng.random_bool(0.3));
        if !nest {
            let alias = self.push_produce();
            self.push_ship("producer", &alias, "manufacturer");
            self.push_receive("manufacturer", &alias);
            self.closed_tail(&alias, (events - 3) / 2);
            return alias;
        }
        let pairs = self.rng.random_range(0..=((events - 4) / 2).min(2));
        let alias = self.product(events - 2 * pairs, depth);
        self.closed_tail(&alias, pairs);
        alias
    }

    /// Product whose Manufacture event plus its inputs' closures total
    /// `events >= 4`. Below depth 0 inputs are split into odd sizes where
    /// possible so they can stay raw.
    fn product(&mut self, events: usize, depth: usize) -> String {
        let inputs = events - 1;
        let max_parts = (inputs / 3).clamp(1, 4);
        let free = depth > 0 && self.rng.random_bool(0.5);
        let odd_counts: Vec<usize> = (1..=max_parts).filter(|m| m % 2 == inputs % 2).collect();
        let sizes = if free || odd_counts.is_empty() {
            let parts = self.rng.random_range(1..=max_parts);
            let mut sizes = vec![3usize; parts];
            for _ in 0..inputs - 3 * parts {
                let i = self.rng.random_range(0..parts);
                sizes[i] += 1;
            }
            sizes
        } else {
            let parts = *odd_counts.choose(self.rng).expect("non-empty");
            let mut sizes = vec![3usize; parts];
            for _ in 0..(inputs - 3 * parts) / 2 {
                let i = self.rng.random_range(0..parts);
                sizes[i] += 2;
            }
            sizes
        };
        let compartments: Vec<String> = sizes
            .into_iter()
            .map(|n| self.compartment(n, depth.saturating_sub(1)))
            .collect();
        let alias = self.alias("product");
        self.commands.push(Command::Manufacture {
            actor: "manufacturer".into(),
            asset: alias.clone(),
            compartments,
            mode: self.mode,
            attributes: BTreeMap::new(),
        });
        alias
    }
}
