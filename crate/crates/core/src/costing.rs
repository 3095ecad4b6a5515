//! Fee model per stakeholder and per scenario, in whole CT with a single
//! half-up rounding to cents when converting to USD.

use std::collections::BTreeMap;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Classify, ErrorCode};
use crate::events::{Role, UnknownRole};
use crate::ledger::{FeeSchedule, Ledger, TokenAmount, TxKind};
use crate::scenario::{Command, ScenarioError, ScenarioScript};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CostError {
    #[error(transparent)]
    UnknownRole(#[from] UnknownRole),
}

impl Classify for CostError {
    fn code(&self) -> ErrorCode {
        ErrorCode::UnknownRole
    }
}

/// Operation counts and their price for one stakeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    /// Role name for model rows, actor alias for scenario rows.
    pub stakeholder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    pub creates: u64,
    pub updates: u64,
    #[serde(default)]
    pub deactivates: u64,
    pub total_ct: TokenAmount,
    pub total_usd: Decimal,
}

impl CostReport {
    pub fn from_counts(stakeholder: impl Into<String>, role: Option<Role>, creates: u64, updates: u64, deactivates: u64, fees: &FeeSchedule, price: Decimal) -> Self {
        let total_ct = creates * fees.create_fee + updates * fees.update_fee + deactivates * fees.deactivate_fee;
        Self {
            stakeholder: stakeholder.into(),
            role,
            creates,
            updates,
            deactivates,
            total_ct,
            total_usd: usd(total_ct, price),
        }
    }

    fn add(&mut self, kind: TxKind) {
        match kind {
            TxKind::Create => self.creates += 1,
            TxKind::Update => self.updates += 1,
            TxKind::Deactivate => self.deactivates += 1,
        }
    }

    fn reprice(&mut self, fees: &FeeSchedule, price: Decimal) {
        *self = Self::from_counts(std::mem::take(&mut self.stakeholder), self.role, self.creates, self.updates, self.deactivates, fees, price);
    }
}

/// Exact USD value of `ct` at `price`.
pub fn usd_exact(ct: TokenAmount, price: Decimal) -> Decimal {
    Decimal::from(ct) * price
}

/// USD rounded half-up to cents.
pub fn usd(ct: TokenAmount, price: Decimal) -> Decimal {
    usd_exact(ct, price).round_dp_with_strategy(2, RoundingStrategy::MidpointAwayFromZero)
}

/// Creates and updates a stakeholder pays per asset or product it handles.
/// `n` counts compartments and only matters for manufacturers.
pub fn stakeholder_ops(role: Role, n: u64) -> (u64, u64) {
    match role {
        Role::Producer => (1, 1),
        Role::Supplier | Role::Retailer => (0, 2),
        Role::Manufacturer => (1, 1 + n),
        Role::Customer => (0, 1),
    }
}

pub fn stakeholder_cost(role: Role, n: u64, fees: &FeeSchedule, price: Decimal) -> CostReport {
    let (creates, updates) = stakeholder_ops(role, n);
    CostReport::from_counts(role.as_str(), Some(role), creates, updates, 0, fees, price)
}

/// [`stakeholder_cost`] for a role given by name.
pub fn stakeholder_cost_named(role: &str, n: u64, fees: &FeeSchedule, price: Decimal) -> Result<CostReport, CostError> {
    Ok(stakeholder_cost(role.parse()?, n, fees, price))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManufactureCost {
    pub ct: TokenAmount,
    pub usd_exact: Decimal,
    pub usd: Decimal,
}

/// One product creation plus one update per compartment and one for shipping.
pub fn manufacture_total_cost(n: u64, fees: &FeeSchedule, price: Decimal) -> ManufactureCost {
    let ct = fees.create_fee + (1 + n) * fees.update_fee;
    ManufactureCost {
        ct,
        usd_exact: usd_exact(ct, price),
        usd: usd(ct, price),
    }
}

/// Per-actor cost of running `script`, derived from the commands alone.
/// `lean_receiving` must match the engine the script runs on.
pub fn scenario_cost(script: &ScenarioScript, fees: &FeeSchedule, price: Decimal, lean_receiving: bool) -> Result<Vec<CostReport>, ScenarioError> {
    script.validate()?;
    let mut reports: BTreeMap<&str, CostReport> = script
        .actors
        .iter()
        .map(|a| (a.alias.as_str(), CostReport::from_counts(a.alias.clone(), Some(a.role), 0, 0, 0, fees, price)))
        .collect();
    for command in &script.commands {
        let report = reports.get_mut(command.actor()).expect("validated");
        match command {
            Command::Produce { .. } => report.add(TxKind::Create),
            Command::Ship { .. } | Command::Receive { .. } => report.add(TxKind::Update),
            Command::Manufacture { compartments, .. } => {
                report.add(TxKind::Create);
                if !lean_receiving {
                    report.updates += compartments.len() as u64;
                }
            }
            Command::Withdraw { deactivate, .. } => {
                report.add(TxKind::Update);
                if *deactivate {
                    report.add(TxKind::Deactivate);
                }
            }
        }
    }
    let mut out: Vec<CostReport> = reports.into_values().collect();
    for r in &mut out {
        r.reprice(fees, price);
    }
    Ok(out)
}

/// Per-account cost as actually charged, from the ledger's history.
pub fn ledger_cost(ledger: &Ledger, price: Decimal) -> Vec<CostReport> {
    let fees = *ledger.fees();
    let mut reports: BTreeMap<String, CostReport> = ledger
        .accounts()
        .map(|a| (a.account_id.to_string(), CostReport::from_counts(a.account_id.to_string(), None, 0, 0, 0, &fees, price)))
        .collect();
    let mut charged: BTreeMap<String, TokenAmount> = BTreeMap::new();
    for tx in ledger.transactions() {
        let key = tx.payer.to_string();
        reports.get_mut(&key).expect("payer has an account").add(tx.kind);
        *charged.entry(key).or_default() += tx.fee_charged;
    }
    reports
        .into_values()
        .map(|mut r| {
            // Fees are flat, so counts × schedule equals what was charged;
            // the charged sum is authoritative either way.
            let total = charged.get(&r.stakeholder).copied().unwrap_or(0);
            r.reprice(&fees, price);
            r.total_ct = total;
            r.total_usd = usd(total, price);
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn price() -> Decimal {
        Decimal::new(117, 3)
    }

    #[test]
    fn rounding_is_half_up_once() {
        assert_eq!(usd(75, price()), Decimal::new(878, 2));
        assert_eq!(usd_exact(75, price()), Decimal::new(8775, 3));
        assert_eq!(usd(25, price()), Decimal::new(293, 2));
    }

    #[test]
    fn manufacture_slope_is_update_fee() {
        let fees = FeeSchedule::default();
        for n in 0..200u64 {
            let d = manufacture_total_cost(n + 1, &fees, price()).ct - manufacture_total_cost(n, &fees, price()).ct;
            assert_eq!(d, fees.update_fee);
        }
        assert_eq!(manufacture_total_cost(0, &fees, price()).ct, 75);
    }

    #[test]
    fn price_only_rescales_usd() {
        let fees = FeeSchedule::default();
        let a = stakeholder_cost(Role::Producer, 0, &fees, price());
        let b = stakeholder_cost(Role::Producer, 0, &fees, Decimal::new(234, 3));
        assert_eq!(a.total_ct, b.total_ct);
        assert_eq!(b.total_usd, Decimal::new(1755, 2));
    }

    #[test]
    fn unknown_role_name() {
        let err = stakeholder_cost_named("Auditor", 0, &FeeSchedule::default(), price()).unwrap_err();
        assert_eq!(err.code(), ErrorCode::UnknownRole);
        assert_eq!(stakeholder_cost_named("customer", 0, &FeeSchedule::default(), price()).unwrap().total_ct, 25);
    }
}
