#![allow(dead_code)]

use std::sync::Arc;

use chrono::{DateTime, Utc};
use didchain_core::clock::SteppingClock;
use didchain_core::events::{ActorSpec, Engine, EngineConfig, Role};

pub fn start() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2024-03-05T09:00:00Z").unwrap().with_timezone(&Utc)
}

pub fn engine_with(config: EngineConfig) -> Engine {
    Engine::new(config, Arc::new(SteppingClock::starting_at(start()))).unwrap()
}

pub fn engine() -> Engine {
    engine_with(EngineConfig::default())
}

pub fn actor(alias: &str, role: Role, balance: u64) -> ActorSpec {
    ActorSpec {
        alias: alias.into(),
        role,
        balance,
        mode: Default::default(),
        seed: None,
        public_key: None,
    }
}

/// farm (Producer), dairy (Manufacturer), truck (Supplier), shop (Retailer),
/// alice (Customer), each with 10 000 CT.
pub fn dairy_engine(config: EngineConfig) -> Engine {
    let mut e = engine_with(config);
    for (alias, role) in [
        ("farm", Role::Producer),
        ("dairy", Role::Manufacturer),
        ("truck", Role::Supplier),
        ("shop", Role::Retailer),
        ("alice", Role::Customer),
    ] {
        e.register_actor(actor(alias, role, 10_000)).unwrap();
    }
    e
}
