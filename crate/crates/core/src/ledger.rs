//! Fixed-fee, size-gated verifiable data registry ledger.
//!
//! Every DID write is one [`LedgerTransaction`]: it is charged the flat fee
//! for its kind, must fit under the block size limit, and receives the next
//! sequence number. Transactions are never removed or edited.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SharedClock, SystemClock};
use crate::error::{Classify, ErrorCode};

/// Whole ledger tokens (CT). Indivisible.
pub type TokenAmount = u64;

/// Default block size limit: 200 KiB.
pub const DEFAULT_BLOCK_SIZE_LIMIT: usize = 200 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("account {0} already exists")]
    AccountExists(AccountId),
    #[error("insufficient balance on {account}: have {balance} CT, need {required} CT")]
    InsufficientBalance {
        account: AccountId,
        balance: TokenAmount,
        required: TokenAmount,
    },
    #[error("payload of {size} bytes exceeds the {limit}-byte block limit")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("invalid ledger configuration: {0}")]
    ConfigInvalid(String),
}

impl Classify for LedgerError {
    fn code(&self) -> ErrorCode {
        match self {
            LedgerError::UnknownAccount(_) => ErrorCode::UnknownAccount,
            LedgerError::AccountExists(_) => ErrorCode::Conflict,
            LedgerError::InsufficientBalance { .. } => ErrorCode::InsufficientBalance,
            LedgerError::PayloadTooLarge { .. } => ErrorCode::PayloadTooLarge,
            LedgerError::ConfigInvalid(_) => ErrorCode::ConfigInvalid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(String);

impl AccountId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AccountId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    Create,
    Update,
    Deactivate,
}

/// Flat fee per write kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeeSchedule {
    pub create_fee: TokenAmount,
    pub update_fee: TokenAmount,
    /// No reference value exists; a deactivation is priced like an update.
    pub deactivate_fee: TokenAmount,
}

impl Default for FeeSchedule {
    fn default() -> Self {
        Self {
            create_fee: 50,
            update_fee: 25,
            deactivate_fee: 25,
        }
    }
}

impl FeeSchedule {
    pub fn fee_for(&self, kind: TxKind) -> TokenAmount {
        match kind {
            TxKind::Create => self.create_fee,
            TxKind::Update => self.update_fee,
            TxKind::Deactivate => self.deactivate_fee,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LedgerConfig {
    pub block_size_limit: usize,
    /// USD per CT. Default is the 2024-03-05 market snapshot of $0.117.
    pub token_price_usd: Decimal,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self {
            block_size_limit: DEFAULT_BLOCK_SIZE_LIMIT,
            token_price_usd: Decimal::new(117, 3),
        }
    }
}

impl LedgerConfig {
    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.block_size_limit == 0 {
            return Err(LedgerError::ConfigInvalid("block_size_limit must be > 0".into()));
        }
        if self.token_price_usd <= Decimal::ZERO {
            return Err(LedgerError::ConfigInvalid("token_price_usd must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub account_id: AccountId,
    pub balance: TokenAmount,
    pub initial_balance: TokenAmount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTransaction {
    pub tx_id: String,
    pub kind: TxKind,
    pub payer: AccountId,
    pub payload_size: usize,
    pub fee_charged: TokenAmount,
    pub sequence: u64,
    pub timestamp: DateTime<Utc>,
    /// The DID the write touched, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

fn default_clock() -> SharedClock {
    Arc::new(SystemClock)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ledger {
    config: LedgerConfig,
    fees: FeeSchedule,
    accounts: BTreeMap<AccountId, Account>,
    transactions: Vec<LedgerTransaction>,
    #[serde(skip, default = "default_clock")]
    clock: SharedClock,
}

impl Ledger {
    pub fn new(config: LedgerConfig, fees: FeeSchedule, clock: SharedClock) -> Result<Self, LedgerError> {
        config.validate()?;
        Ok(Self {
            config,
            fees,
            accounts: BTreeMap::new(),
            transactions: Vec::new(),
            clock,
        })
    }

    pub fn set_clock(&mut self, clock: SharedClock) {
        self.clock = clock;
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn fees(&self) -> &FeeSchedule {
        &self.fees
    }

    /// Creates a pre-funded account. There is no transfer operation; funding
    /// happens only here.
    pub fn open_account(&mut self, id: AccountId, balance: TokenAmount) -> Result<&Account, LedgerError> {
        if self.accounts.contains_key(&id) {
            return Err(LedgerError::AccountExists(id));
        }
        Ok(self.accounts.entry(id.clone()).or_insert(Account {
            account_id: id,
            balance,
            initial_balance: balance,
        }))
    }

    pub fn account(&self, id: &AccountId) -> Result<&Account, LedgerError> {
        self.accounts.get(id).ok_or_else(|| LedgerError::UnknownAccount(id.clone()))
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    pub fn balance_of(&self, id: &AccountId) -> Result<TokenAmount, LedgerError> {
        Ok(self.account(id)?.balance)
    }

    /// Checks that `payer` can cover `amount` without committing anything.
    pub fn ensure_affordable(&self, payer: &AccountId, amount: TokenAmount) -> Result<(), LedgerError> {
        let account = self.account(payer)?;
        if account.balance < amount {
            return Err(LedgerError::InsufficientBalance {
                account: payer.clone(),
                balance: account.balance,
                required: amount,
            });
        }
        Ok(())
    }

    pub fn ensure_fits(&self, payload_size: usize) -> Result<(), LedgerError> {
        if payload_size > self.config.block_size_limit {
            return Err(LedgerError::PayloadTooLarge {
                size: payload_size,
                limit: self.config.block_size_limit,
            });
        }
        Ok(())
    }

    /// Commits one write. On error nothing changes.
    pub fn submit(
        &mut self,
        kind: TxKind,
        payer: &AccountId,
        payload_size: usize,
        subject: Option<String>,
    ) -> Result<LedgerTransaction, LedgerError> {
        let fee = self.fees.fee_for(kind);
        self.account(payer)?;
        self.ensure_fits(payload_size)?;
        self.ensure_affordable(payer, fee)?;

        let sequence = self.transactions.last().map_or(1, |tx| tx.sequence + 1);
        let tx = LedgerTransaction {
            tx_id: format!("tx-{sequence:010}"),
            kind,
            payer: payer.clone(),
            payload_size,
            fee_charged: fee,
            sequence,
            timestamp: self.clock.now(),
            subject,
        };
        let account = self.accounts.get_mut(payer).expect("checked above");
        account.balance -= fee;
        self.transactions.push(tx.clone());
        Ok(tx)
    }

    /// All committed transactions paid by `payer`, in sequence order.
    pub fn tx_history(&self, payer: &AccountId) -> Result<Vec<LedgerTransaction>, LedgerError> {
        self.account(payer)?;
        Ok(self.transactions.iter().filter(|tx| &tx.payer == payer).cloned().collect())
    }

    pub fn transactions(&self) -> &[LedgerTransaction] {
        &self.transactions
    }

    pub fn count_by_kind(&self, kind: TxKind) -> usize {
        self.transactions.iter().filter(|tx| tx.kind == kind).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger() -> Ledger {
        Ledger::new(LedgerConfig::default(), FeeSchedule::default(), default_clock()).unwrap()
    }

    #[test]
    fn create_charges_fifty() {
        let mut l = ledger();
        let a = AccountId::new("a");
        l.open_account(a.clone(), 100).unwrap();
        let tx = l.submit(TxKind::Create, &a, 1075, None).unwrap();
        assert_eq!(tx.fee_charged, 50);
        assert_eq!(l.balance_of(&a).unwrap(), 50);
    }

    #[test]
    fn update_drains_exact_balance() {
        let mut l = ledger();
        let a = AccountId::new("a");
        l.open_account(a.clone(), 25).unwrap();
        let tx = l.submit(TxKind::Update, &a, 500, None).unwrap();
        assert_eq!(tx.fee_charged, 25);
        assert_eq!(l.balance_of(&a).unwrap(), 0);
    }

    #[test]
    fn one_byte_over_limit_rejected() {
        let mut l = ledger();
        let a = AccountId::new("a");
        l.open_account(a.clone(), 1000).unwrap();
        assert!(matches!(
            l.submit(TxKind::Update, &a, 204_801, None),
            Err(LedgerError::PayloadTooLarge { size: 204_801, limit: 204_800 })
        ));
        assert!(l.submit(TxKind::Update, &a, 204_800, None).is_ok());
    }

    #[test]
    fn insufficient_balance_and_unknown_account() {
        let mut l = ledger();
        let a = AccountId::new("a");
        l.open_account(a.clone(), 49).unwrap();
        assert!(matches!(
            l.submit(TxKind::Create, &a, 10, None),
            Err(LedgerError::InsufficientBalance { balance: 49, required: 50, .. })
        ));
        assert_eq!(l.balance_of(&a).unwrap(), 49);
        assert!(l.transactions().is_empty());
        let ghost = AccountId::new("ghost");
        assert_eq!(l.balance_of(&ghost), Err(LedgerError::UnknownAccount(ghost.clone())));
        assert!(l.tx_history(&ghost).is_err());
    }

    #[test]
    fn balance_after_create_and_updates() {
        let mut l = ledger();
        let a = AccountId::new("a");
        l.open_account(a.clone(), 1000).unwrap();
        assert_eq!(l.balance_of(&a).unwrap(), 1000);
        l.submit(TxKind::Create, &a, 10, None).unwrap();
        assert_eq!(l.balance_of(&a).unwrap(), 950);
        l.submit(TxKind::Update, &a, 10, None).unwrap();
        l.submit(TxKind::Update, &a, 10, None).unwrap();
        assert_eq!(l.balance_of(&a).unwrap(), 900);
    }

    #[test]
    fn history_is_per_payer_and_ordered() {
        let mut l = ledger();
        let a = AccountId::new("a");
        let b = AccountId::new("b");
        l.open_account(a.clone(), 1000).unwrap();
        l.open_account(b.clone(), 1000).unwrap();
        assert!(l.tx_history(&a).unwrap().is_empty());
        l.submit(TxKind::Create, &a, 10, None).unwrap();
        l.submit(TxKind::Create, &b, 10, None).unwrap();
        l.submit(TxKind::Update, &a, 10, None).unwrap();
        let ha = l.tx_history(&a).unwrap();
        let hb = l.tx_history(&b).unwrap();
        assert_eq!(ha.iter().map(|t| t.kind).collect::<Vec<_>>(), vec![TxKind::Create, TxKind::Update]);
        assert!(ha[1].sequence > ha[0].sequence);
        assert!(ha.iter().all(|t| hb.iter().all(|u| u.tx_id != t.tx_id)));
    }

    #[test]
    fn zero_limit_is_invalid() {
        let cfg = LedgerConfig { block_size_limit: 0, ..Default::default() };
        assert!(matches!(
            Ledger::new(cfg, FeeSchedule::default(), default_clock()),
            Err(LedgerError::ConfigInvalid(_))
        ));
    }

    proptest! {
        #[test]
        fn fee_conservation_and_size_gate(
            ops in proptest::collection::vec((0u8..3, 204_700usize..204_900), 1..60),
            initial in 0u64..2_000,
        ) {
            let mut l = ledger();
            let a = AccountId::new("a");
            l.open_account(a.clone(), initial).unwrap();
            let mut snapshots = Vec::new();
            for (k, size) in ops {
                let kind = [TxKind::Create, TxKind::Update, TxKind::Deactivate][k as usize];
                let _ = l.submit(kind, &a, size, None);
                snapshots.push(l.tx_history(&a).unwrap());
            }
            let history = l.tx_history(&a).unwrap();
            let spent: u64 = history.iter().map(|t| t.fee_charged).sum();
            prop_assert_eq!(initial - spent, l.balance_of(&a).unwrap());
            prop_assert!(history.iter().all(|t| t.payload_size <= DEFAULT_BLOCK_SIZE_LIMIT));
            prop_assert!(history.iter().all(|t| t.fee_charged == l.fees().fee_for(t.kind)));
            prop_assert!(history.windows(2).all(|w| w[0].sequence < w[1].sequence));
            for pair in snapshots.windows(2) {
                prop_assert!(pair[1].starts_with(&pair[0]));
            }
        }
    }
}
