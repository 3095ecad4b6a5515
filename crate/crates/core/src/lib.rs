pub mod canonical;
pub mod cid;
pub mod clock;
pub mod error;
pub mod identity;
pub mod ledger;
pub mod merkle;
pub mod store;
pub mod events;
pub mod costing;
pub mod scenario;
pub mod trace;
