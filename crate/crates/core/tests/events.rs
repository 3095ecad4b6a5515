mod common;

use std::collections::BTreeMap;

use common::{actor, dairy_engine, engine_with};
use didchain_core::error::{Classify, ErrorCode};
use didchain_core::events::{AssetStatus, CommitMode, EngineConfig, EngineError, EventRequest, Role};
use didchain_core::identity::{KeyMode, KeyPair, Proof, ServiceType, STATUS_WITHDRAWN};
use didchain_core::ledger::{AccountId, TxKind};
use didchain_core::store::{verify_linkage, EventType, LinkageVerdict};

fn balance(e: &didchain_core::events::Engine, alias: &str) -> u64 {
    e.ledger().balance_of(&AccountId::new(alias)).unwrap()
}

#[test]
fn produce_creates_version_one_with_event_link() {
    let mut e = dairy_engine(EngineConfig::default());
    let (milk, cid) = e.produce("farm", BTreeMap::from([("kind".into(), "milk".into())])).unwrap();
    let doc = e.registry().resolve(&milk).unwrap();
    assert_eq!(doc.metadata.version, 1);
    let links: Vec<_> = doc.document.services_of(ServiceType::EventMetadata).collect();
    assert_eq!(links.len(), 1);
    assert_eq!(links[0].endpoint, cid.to_string());
    assert_eq!(balance(&e, "farm"), 10_000 - 50);
    assert_eq!(e.asset(&milk).unwrap().status, AssetStatus::Produced);
    let record = e.store().get(&cid).unwrap();
    assert_eq!(record.event_type, EventType::Produce);
    assert_eq!(record.attributes["kind"], "milk");
}

#[test]
fn two_produce_calls_are_disjoint() {
    let mut e = dairy_engine(EngineConfig::default());
    let (a, ca) = e.produce("farm", BTreeMap::new()).unwrap();
    let (b, cb) = e.produce("farm", BTreeMap::new()).unwrap();
    assert_ne!(a, b);
    assert_ne!(ca, cb);
    assert_eq!(e.asset(&a).unwrap().event_cids, vec![ca]);
    assert_eq!(e.asset(&b).unwrap().event_cids, vec![cb]);
}

#[test]
fn only_producers_produce() {
    let mut e = dairy_engine(EngineConfig::default());
    let err = e.produce("truck", BTreeMap::new()).unwrap_err();
    assert!(matches!(err, EngineError::WrongRole { .. }));
    assert!(e.ledger().transactions().is_empty());
}

#[test]
fn ship_hands_control_to_recipient() {
    let mut e = dairy_engine(EngineConfig::default());
    let (milk, _) = e.produce("farm", BTreeMap::new()).unwrap();
    e.ship("farm", &milk, "dairy").unwrap();
    let doc = e.registry().resolve(&milk).unwrap();
    assert_eq!(doc.metadata.version, 2);
    assert_eq!(doc.document.controller, vec![e.actor("dairy").unwrap().did.clone()]);
    assert_eq!(doc.document.verification_method[0].public_key, e.actor("dairy").unwrap().verification_keys[0]);
    assert_eq!(e.asset(&milk).unwrap().status, AssetStatus::InTransit);
}

#[test]
fn non_controller_ship_changes_nothing() {
    let mut e = dairy_engine(EngineConfig::default());
    let (milk, _) = e.produce("farm", BTreeMap::new()).unwrap();
    let txs = e.ledger().transactions().len();
    let err = e.ship("truck", &milk, "dairy").unwrap_err();
    assert_eq!(err.code(), ErrorCode::NotController);
    assert_eq!(e.ledger().transactions().len(), txs);
    assert_eq!(e.registry().version_count(&milk).unwrap(), 1);
    assert_eq!(e.asset(&milk).unwrap().status, AssetStatus::Produced);
}

#[test]
fn receive_rules() {
    let mut e = dairy_engine(EngineConfig::default());
    let (milk, _) = e.produce("farm", BTreeMap::new()).unwrap();
    // Nothing shipped yet.
    assert_eq!(e.receive("farm", &milk).unwrap_err().code(), ErrorCode::WrongState);
    e.ship("farm", &milk, "truck").unwrap();
    // The sender lost control with the shipping update.
    assert_eq!(e.receive("farm", &milk).unwrap_err().code(), ErrorCode::NotController);
    let before = balance(&e, "truck");
    let receipt = e.receive("truck", &milk).unwrap();
    e.ship("truck", &milk, "dairy").unwrap();
    assert_eq!(before - balance(&e, "truck"), 50);
    assert_eq!(e.registry().resolve(&milk).unwrap().metadata.version, 4);
    let record = e.store().get(&receipt).unwrap();
    assert_eq!(record.counterparty_did.as_ref(), Some(&e.actor("farm").unwrap().did));
}

#[test]
fn cheese_from_milk_and_yeast() {
    let mut e = dairy_engine(EngineConfig::default());
    let (milk, _) = e.produce("farm", BTreeMap::new()).unwrap();
    let (yeast, _) = e.produce("farm", BTreeMap::new()).unwrap();
    for m in [&milk, &yeast] {
        e.ship("farm", m, "dairy").unwrap();
        e.receive("dairy", m).unwrap();
    }
    let creates = e.ledger().count_by_kind(TxKind::Create);
    let updates = e.ledger().count_by_kind(TxKind::Update);
    let before = balance(&e, "dairy");
    let (cheese, cid) = e.manufacture("dairy", &[milk.clone(), yeast.clone()], BTreeMap::new(), CommitMode::ServiceList).unwrap();
    assert_eq!(e.ledger().count_by_kind(TxKind::Create) - creates, 1);
    assert_eq!(e.ledger().count_by_kind(TxKind::Update) - updates, 2);
    assert_eq!(before - balance(&e, "dairy"), 100);

    let doc = e.registry().resolve(&cheese).unwrap();
    let listed: Vec<_> = doc.document.services_of(ServiceType::Compartment).map(|s| s.endpoint.clone()).collect();
    assert_eq!(listed, vec![milk.to_string(), yeast.to_string()]);
    let record = e.store().get(&cid).unwrap();
    assert_eq!(record.compartments, vec![milk.clone(), yeast.clone()]);
    for m in [&milk, &yeast] {
        assert_eq!(e.asset(m).unwrap().status, AssetStatus::Consumed);
        let head = e.registry().resolve(m).unwrap();
        let back: Vec<_> = head.document.services_of(ServiceType::ConsumedBy).collect();
        assert_eq!(back[0].endpoint, cheese.to_string());
    }
    // Consumed inputs cannot be used again.
    let err = e.manufacture("dairy", &[milk], BTreeMap::new(), CommitMode::ServiceList).unwrap_err();
    assert_eq!(err.code(), ErrorCode::WrongState);
}

#[test]
fn manufacturer_total_including_ship() {
    for n in 1..6usize {
        let mut e = dairy_engine(EngineConfig::default());
        let inputs: Vec<_> = (0..n)
            .map(|_| {
                let (m, _) = e.produce("farm", BTreeMap::new()).unwrap();
                e.ship("farm", &m, "dairy").unwrap();
                m
            })
            .collect();
        for m in &inputs {
            e.receive("dairy", m).unwrap();
        }
        let before = balance(&e, "dairy");
        let (p, _) = e.manufacture("dairy", &inputs, BTreeMap::new(), CommitMode::ServiceList).unwrap();
        e.ship("dairy", &p, "shop").unwrap();
        assert_eq!(before - balance(&e, "dairy"), 50 + (1 + n as u64) * 25);
    }
}

#[test]
fn manufacture_checks_every_compartment() {
    let mut e = dairy_engine(EngineConfig::default());
    let (milk, _) = e.produce("farm", BTreeMap::new()).unwrap();
    // Farm still controls the milk.
    let err = e.manufacture("dairy", std::slice::from_ref(&milk), BTreeMap::new(), CommitMode::ServiceList).unwrap_err();
    assert_eq!(err.code(), ErrorCode::NotController);
    e.ship("farm", &milk, "dairy").unwrap();
    // In transit is not enough without lean receiving.
    let err = e.manufacture("dairy", std::slice::from_ref(&milk), BTreeMap::new(), CommitMode::ServiceList).unwrap_err();
    assert_eq!(err.code(), ErrorCode::WrongState);
    e.receive("dairy", &milk).unwrap();
    let err = e.manufacture("dairy", &[milk.clone(), milk.clone()], BTreeMap::new(), CommitMode::ServiceList).unwrap_err();
    assert!(matches!(err, EngineError::DuplicateCompartment(_)));
    let err = e.manufacture("dairy", &[], BTreeMap::new(), CommitMode::ServiceList).unwrap_err();
    assert_eq!(err.code(), ErrorCode::MalformedRequest);
}

#[test]
fn capacity_bound_service_list_vs_merkle() {
    let mut e = engine_with(EngineConfig::default());
    e.register_actor(actor("farm", Role::Producer, 1_000_000)).unwrap();
    e.register_actor(actor("plant", Role::Manufacturer, 1_000_000)).unwrap();
    let mut inputs = Vec::new();
    for _ in 0..796 {
        let (m, _) = e.produce("farm", BTreeMap::new()).unwrap();
        e.ship("farm", &m, "plant").unwrap();
        e.receive("plant", &m).unwrap();
        inputs.push(m);
    }
    let txs = e.ledger().transactions().len();
    let err = e.manufacture("plant", &inputs, BTreeMap::new(), CommitMode::ServiceList).unwrap_err();
    assert_eq!(err.code(), ErrorCode::PayloadTooLarge);
    assert_eq!(e.ledger().transactions().len(), txs);
    let (p, _) = e.manufacture("plant", &inputs, BTreeMap::new(), CommitMode::MerkleRoot).unwrap();
    let doc = e.registry().resolve(&p).unwrap();
    assert_eq!(doc.document.services_of(ServiceType::CompartmentMerkleRoot).count(), 1);
    assert_eq!(doc.document.services_of(ServiceType::Compartment).count(), 0);
}

#[test]
fn compat_limit_is_checked_first() {
    let config = EngineConfig {
        max_compartments_per_tx: Some(2),
        ..Default::default()
    };
    let mut e = dairy_engine(config);
    let inputs: Vec<_> = (0..3).map(|_| e.produce("farm", BTreeMap::new()).unwrap().0).collect();
    // Farm controls the inputs, but the count check comes before control.
    let err = e.manufacture("dairy", &inputs, BTreeMap::new(), CommitMode::ServiceList).unwrap_err();
    assert_eq!(err.code(), ErrorCode::CompartmentLimitExceeded);
}

#[test]
fn withdraw_paths() {
    let mut e = dairy_engine(EngineConfig::default());
    let (a, _) = e.produce("farm", BTreeMap::new()).unwrap();
    e.withdraw("farm", &a, "spoiled", false).unwrap();
    let head = e.registry().resolve(&a).unwrap();
    assert_eq!(head.status(), Some(STATUS_WITHDRAWN));
    assert!(!head.metadata.deactivated);
    assert_eq!(e.withdraw("farm", &a, "again", false).unwrap_err().code(), ErrorCode::WrongState);
    assert_eq!(e.ship("farm", &a, "dairy").unwrap_err().code(), ErrorCode::WrongState);

    let (b, _) = e.produce("farm", BTreeMap::new()).unwrap();
    let before = e.ledger().transactions().len();
    e.withdraw("farm", &b, "recall", true).unwrap();
    let kinds: Vec<_> = e.ledger().transactions()[before..].iter().map(|t| t.kind).collect();
    assert_eq!(kinds, vec![TxKind::Update, TxKind::Deactivate]);
    assert_eq!(e.ship("farm", &b, "dairy").unwrap_err().code(), ErrorCode::Deactivated);
    // History stays resolvable.
    assert_eq!(e.registry().version_count(&b).unwrap(), 3);
    assert_eq!(e.registry().resolve_version_number(&b, 1).unwrap().metadata.version, 1);

    // In transit cannot be withdrawn.
    let (c, _) = e.produce("farm", BTreeMap::new()).unwrap();
    e.ship("farm", &c, "truck").unwrap();
    assert_eq!(e.withdraw("truck", &c, "lost", false).unwrap_err().code(), ErrorCode::WrongState);
}

#[test]
fn circular_reuse_of_withdrawn_asset() {
    let mut e = dairy_engine(EngineConfig::default());
    let (a, _) = e.produce("farm", BTreeMap::new()).unwrap();
    e.ship("farm", &a, "dairy").unwrap();
    e.receive("dairy", &a).unwrap();
    e.withdraw("dairy", &a, "end of life", false).unwrap();
    let err = e.manufacture("dairy", std::slice::from_ref(&a), BTreeMap::new(), CommitMode::ServiceList).unwrap_err();
    assert_eq!(err.code(), ErrorCode::WrongState);
    e.set_circular_reuse(true);
    let (p, _) = e.manufacture("dairy", std::slice::from_ref(&a), BTreeMap::new(), CommitMode::ServiceList).unwrap();
    assert_eq!(e.asset(&a).unwrap().consumed_by.as_ref(), Some(&p));
}

#[test]
fn lean_receiving_fixes_manufacturer_cost() {
    let config = EngineConfig {
        lean_receiving: true,
        ..Default::default()
    };
    for n in [1usize, 5, 40] {
        let mut e = dairy_engine(config.clone());
        let inputs: Vec<_> = (0..n)
            .map(|_| {
                let (m, _) = e.produce("farm", BTreeMap::new()).unwrap();
                e.ship("farm", &m, "dairy").unwrap();
                m
            })
            .collect();
        let before = balance(&e, "dairy");
        let (p, _) = e.manufacture("dairy", &inputs, BTreeMap::new(), CommitMode::ServiceList).unwrap();
        e.ship("dairy", &p, "shop").unwrap();
        assert_eq!(before - balance(&e, "dairy"), 75, "n = {n}");
    }
}

#[test]
fn insufficient_balance_commits_nothing() {
    let mut e = engine_with(EngineConfig::default());
    e.register_actor(actor("farm", Role::Producer, 49)).unwrap();
    let err = e.produce("farm", BTreeMap::new()).unwrap_err();
    assert_eq!(err.code(), ErrorCode::InsufficientBalance);
    assert_eq!(e.assets().count(), 0);
    assert_eq!(e.store().len().unwrap(), 0);

    // Enough for the product, not for every consume update.
    let mut e = engine_with(EngineConfig::default());
    e.register_actor(actor("farm", Role::Producer, 10_000)).unwrap();
    e.register_actor(actor("plant", Role::Manufacturer, 50 + 25 + 25 + 25 + 24)).unwrap();
    let inputs: Vec<_> = (0..3)
        .map(|_| {
            let (m, _) = e.produce("farm", BTreeMap::new()).unwrap();
            e.ship("farm", &m, "plant").unwrap();
            m
        })
        .collect();
    e.receive("plant", &inputs[0]).unwrap();
    e.receive("plant", &inputs[1]).unwrap();
    e.receive("plant", &inputs[2]).unwrap();
    let txs = e.ledger().transactions().len();
    let err = e.manufacture("plant", &inputs, BTreeMap::new(), CommitMode::ServiceList).unwrap_err();
    assert_eq!(err.code(), ErrorCode::InsufficientBalance);
    assert_eq!(e.ledger().transactions().len(), txs);
    for m in &inputs {
        assert_eq!(e.asset(m).unwrap().status, AssetStatus::Received);
    }
}

#[test]
fn client_managed_actor_signs_prepared_steps() {
    let mut e = dairy_engine(EngineConfig::default());
    let key = KeyPair::from_seed(&[9u8; 32]).unwrap();
    let mut spec = actor("coop", Role::Producer, 1000);
    spec.mode = KeyMode::ClientManagedSecret;
    spec.public_key = Some(key.verification_key());
    e.register_actor(spec).unwrap();

    // The service refuses to sign for it.
    let err = e.produce("coop", BTreeMap::new()).unwrap_err();
    assert!(matches!(err, EngineError::ServerSigningForbidden(_)));

    // Produce has no signed step (creation is authorized by payment).
    let prepared = e
        .prepare(EventRequest::Produce {
            actor: "coop".into(),
            attributes: BTreeMap::new(),
        })
        .unwrap();
    assert_eq!(prepared.signing_steps().count(), 0);
    let out = e.commit_prepared(&prepared.cid, vec![]).unwrap();
    let asset = out.asset;

    let prepared = e
        .prepare(EventRequest::Withdraw {
            actor: "coop".into(),
            asset: asset.clone(),
            reason: "test".into(),
            deactivate: true,
        })
        .unwrap();
    let steps: Vec<_> = prepared.signing_steps().cloned().collect();
    assert_eq!(steps.len(), 2);
    let forged = KeyPair::from_seed(&[8u8; 32]).unwrap();
    let bad: Vec<_> = steps
        .iter()
        .map(|s| Proof {
            verification_method: String::new(),
            signature: forged.sign(&s.payload),
        })
        .collect();
    let txs = e.ledger().transactions().len();
    assert_eq!(e.commit_prepared(&prepared.cid, bad).unwrap_err().code(), ErrorCode::Unauthorized);
    assert_eq!(e.ledger().transactions().len(), txs);
    let good: Vec<_> = steps
        .iter()
        .map(|s| Proof {
            verification_method: String::new(),
            signature: key.sign(&s.payload),
        })
        .collect();
    let out = e.commit_prepared(&prepared.cid, good).unwrap();
    assert_eq!(out.versions.len(), 2);
    assert!(e.registry().resolve(&asset).unwrap().metadata.deactivated);
}

#[test]
fn stale_prepared_event_is_rejected() {
    let mut e = dairy_engine(EngineConfig::default());
    let (milk, _) = e.produce("farm", BTreeMap::new()).unwrap();
    let prepared = e
        .prepare(EventRequest::Ship {
            actor: "farm".into(),
            asset: milk.clone(),
            to: "dairy".into(),
            attributes: BTreeMap::new(),
        })
        .unwrap();
    e.ship("farm", &milk, "truck").unwrap();
    let err = e.commit_prepared(&prepared.cid, vec![]).unwrap_err();
    assert!(matches!(err.code(), ErrorCode::NotController | ErrorCode::Conflict), "{err}");
}

#[test]
fn links_are_trusted_by_controller_at_commit_time() {
    let mut e = dairy_engine(EngineConfig::default());
    let (milk, produce) = e.produce("farm", BTreeMap::new()).unwrap();
    let ship = e.ship("farm", &milk, "dairy").unwrap();
    let receive = e.receive("dairy", &milk).unwrap();
    let history = e.registry().history(&milk).unwrap();
    for cid in [produce, ship, receive] {
        let verdict = verify_linkage(e.store(), &cid, &history, |_| Vec::new()).unwrap();
        assert_eq!(verdict, LinkageVerdict::TrustedByLinkage, "{cid}");
    }
}

#[test]
fn persisted_engine_resumes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let clock = || std::sync::Arc::new(didchain_core::clock::SteppingClock::starting_at(common::start()));
    let (milk, docs) = {
        let mut e = didchain_core::events::Engine::open(dir.path(), EngineConfig::default(), clock()).unwrap();
        e.register_actor(actor("farm", Role::Producer, 500)).unwrap();
        e.register_actor(actor("dairy", Role::Manufacturer, 500)).unwrap();
        let (milk, _) = e.produce("farm", BTreeMap::new()).unwrap();
        e.ship("farm", &milk, "dairy").unwrap();
        e.save().unwrap();
        (milk.clone(), e.registry().history(&milk).unwrap())
    };
    let mut e = didchain_core::events::Engine::open(dir.path(), EngineConfig::default(), clock()).unwrap();
    assert_eq!(e.registry().history(&milk).unwrap(), docs);
    assert_eq!(e.asset(&milk).unwrap().status, AssetStatus::InTransit);
    e.receive("dairy", &milk).unwrap();
    assert_eq!(e.registry().version_count(&milk).unwrap(), 3);
    assert!(e.store().scan().unwrap().is_clean());
}
