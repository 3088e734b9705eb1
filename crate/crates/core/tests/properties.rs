mod common;

use proptest::prelude::*;
use rust_decimal::Decimal;
use sha2::{Digest as _, Sha256};

use common::{id, World};
use medledger::crypto::{self, generate_identity};
use medledger::ehr::{classify, DenyReason, Flag, Payload, Profile, Rejection};
use medledger::exporter::{export, parse, Dataset, DatasetKind, ExportFormat};
use medledger::ledger::{check_transaction, merkle_root, Block, SigCache, Transaction, Violation};
use medledger::network::sim::{run_simulation, Scenario, SimConfig};
use medledger::consensus::ConsensusKind;

/// Reference Merkle construction written directly against SHA-256.
fn oracle_root(ids: &[[u8; 32]]) -> [u8; 32] {
    if ids.is_empty() {
        return Sha256::digest([0u8]).into();
    }
    let mut level = ids.to_vec();
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        level = level
            .chunks(2)
            .map(|p| {
                let mut h = Sha256::new();
                h.update(p[0]);
                h.update(p[1]);
                h.finalize().into()
            })
            .collect();
    }
    level[0]
}

fn sample_txs(n: usize, salt: u64) -> Vec<Transaction> {
    let who = id("prop-merkle");
    (0..n)
        .map(|i| Transaction::new_signed(&who, i as u64, salt, Payload::AddMedication { name: format!("m{salt}-{i}"), stock: 1 }))
        .collect()
}

fn cell() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            any::<char>().prop_filter("no NUL", |c| *c != '\0'),
            Just(','),
            Just('"'),
            Just('\n'),
            Just('\r'),
            Just('<'),
            Just('&'),
            Just(' '),
        ],
        0..10,
    )
    .prop_map(|v| v.into_iter().collect())
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (0..DatasetKind::ALL.len()).prop_flat_map(|k| {
        let kind = DatasetKind::ALL[k];
        proptest::collection::vec(proptest::collection::vec(cell(), kind.columns().len()), 0..6)
            .prop_map(move |rows| Dataset { kind, rows })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn export_round_trips_in_every_format(d in dataset()) {
        for f in ExportFormat::ALL {
            let bytes = export(&d, f);
            prop_assert_eq!(parse(&bytes, f).unwrap(), d.clone());
            prop_assert_eq!(export(&d, f), bytes);
        }
    }

    #[test]
    fn signatures_bind_key_and_message(seed in proptest::collection::vec(any::<u8>(), 1..40), msg in proptest::collection::vec(any::<u8>(), 0..200), flip in any::<usize>()) {
        let me = generate_identity(&seed).unwrap();
        let sig = me.sign(&msg);
        prop_assert!(crypto::verify(me.public_key(), &msg, &sig));
        let mut other = msg.clone();
        if other.is_empty() { other.push(1) } else { let i = flip % other.len(); other[i] ^= 0x80; }
        prop_assert!(!crypto::verify(me.public_key(), &other, &sig));
        prop_assert_eq!(crypto::digest(&msg).0, <[u8; 32]>::from(Sha256::digest(&msg)));
    }

    #[test]
    fn classify_is_inclusive_interval(lo in -100_000i64..100_000, width in 0i64..50_000, v in -200_000i64..200_000, scale in 0u32..4) {
        let (min, max, val) = (Decimal::new(lo, scale), Decimal::new(lo + width, scale), Decimal::new(v, scale));
        let expect = if v < lo { Flag::Low } else if v > lo + width { Flag::High } else { Flag::Normal };
        prop_assert_eq!(classify(val, min, max), expect);
    }

    #[test]
    fn merkle_root_matches_reference(n in 0usize..17, salt in any::<u64>(), swap in any::<(usize, usize)>()) {
        let txs = sample_txs(n, salt);
        let ids: Vec<[u8; 32]> = txs.iter().map(|t| t.tx_id.0).collect();
        prop_assert_eq!(merkle_root(&txs).0, oracle_root(&ids));
        if n >= 2 {
            let (a, b) = (swap.0 % n, swap.1 % n);
            prop_assume!(a != b);
            let mut swapped = txs.clone();
            swapped.swap(a, b);
            prop_assert_ne!(merkle_root(&swapped), merkle_root(&txs));
        }
    }

    #[test]
    fn block_codec_round_trips_and_detects_flips(n in 0usize..5, salt in any::<u64>(), pos in any::<usize>(), bit in 0u8..8) {
        let cast = common::Cast::new("prop-codec");
        let mut block: Block = cast.genesis();
        block.transactions.extend(sample_txs(n, salt));
        let bytes = block.encode();
        let back = Block::decode(&bytes).unwrap();
        prop_assert_eq!(back.digest(), block.digest());
        let mut m = bytes.clone();
        let i = pos % m.len();
        m[i] ^= 1 << bit;
        if let Ok(b) = Block::decode(&m) {
            prop_assert!(b.digest() != block.digest() || b.encode() != bytes);
        }
    }

    #[test]
    fn rejected_transactions_leave_state_untouched(skew in 1u64..5, stock in any::<u32>(), slot in 24u8..) {
        let mut w = World::new("prop-reject");
        let admin = w.cast.admin.clone();
        let before = w.state.state_hash();
        let nonce = w.state.expected_nonce(&admin.address()) + skew;
        let tx = Transaction::new_signed(&admin, nonce, w.now, Payload::AddMedication { name: "x".into(), stock: stock as u64 });
        let strict = check_transaction(&tx, &w.state, &mut SigCache::new(), false);
        prop_assert!(matches!(strict, Err(Violation::NonceViolation { .. })), "{:?}", strict);
        let stale = Transaction::new_signed(&admin, 0, w.now, Payload::AddMedication { name: "x".into(), stock: 1 });
        w.apply(&admin, Payload::AddMedication { name: "y".into(), stock: 1 }).unwrap();
        prop_assert!(check_transaction(&stale, &w.state, &mut SigCache::new(), true).is_err());
        let before_rejections = w.state.state_hash();
        prop_assert_ne!(before_rejections, before);

        let (patient, doctor) = (w.cast.patient.clone(), w.cast.doctor.address());
        let r = w.apply(&patient, Payload::AddMedication { name: "x".into(), stock: stock as u64 });
        prop_assert!(matches!(r, Err(Rejection::Denied(DenyReason::Forbidden))), "{:?}", r);
        let date = chrono::NaiveDate::from_ymd_opt(2024, 1, 2).unwrap();
        let r = w.apply(&patient, Payload::RequestAppointment { doctor, date, slot, purpose: "p".into() });
        prop_assert_eq!(r.unwrap_err(), Rejection::InvalidSlot(slot));
        prop_assert_eq!(w.state.state_hash(), before_rejections);
        let ok = w.apply(&patient, Payload::UpdateProfile { profile: Profile::named("Renamed") });
        prop_assert!(ok.is_ok());
        prop_assert_ne!(w.state.state_hash(), before_rejections);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulation_is_deterministic_and_converges(seed in any::<u64>(), nodes in 1usize..6, k in 0usize..3) {
        let kind = ConsensusKind::ALL[k];
        let scen = Scenario::generate(kind, nodes, 30, seed);
        let cfg = SimConfig::new(nodes, seed);
        let a = run_simulation(&cfg, &scen);
        let b = run_simulation(&cfg, &scen);
        prop_assert_eq!(a.to_csv(), b.to_csv());
        prop_assert!(a.converged, "{}", a.summary());
        prop_assert_eq!(a.committed, a.submitted);
        prop_assert!(a.tips.iter().all(|t| *t == a.tips[0]));
    }
}
