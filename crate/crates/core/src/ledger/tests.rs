use super::*;
use crate::consensus::{ConsensusConfig, ConsensusKind};
use crate::crypto::{digest_parts, generate_identity};
use crate::ehr::{Profile, Role};

const T0: u64 = 1_700_000_000_000;

fn admin() -> Identity {
    generate_identity(b"ledger-admin").unwrap()
}

fn dpos(delegate: &Identity) -> ConsensusConfig {
    let mut c = ConsensusConfig::new(ConsensusKind::DPoS);
    c.delegates = vec![delegate.address()];
    c.slot_ms = Some(1000);
    c
}

fn genesis_chain() -> (Chain, Identity) {
    let a = admin();
    let chain = Chain::from_genesis(genesis_block(&a, "Admin", vec![], None, T0), dpos(&a)).unwrap();
    (chain, a)
}

fn next_block(chain: &Chain, proposer: &Identity, txs: Vec<Transaction>) -> Block {
    let slot = chain.height() + 1;
    let (block, _) = build_block(
        chain.parent_view(),
        txs,
        proposer,
        SealProof::DPoS { slot_index: slot },
        T0 + slot * 1000,
        chain.consensus(),
    )
    .unwrap();
    block
}

fn med(admin: &Identity, nonce: u64, name: &str) -> Transaction {
    Transaction::new_signed(admin, nonce, T0 + nonce, Payload::AddMedication { name: name.into(), stock: 1 })
}

/// Independent recursive pair-hash Merkle oracle.
fn oracle_root(leaves: &[Digest]) -> Digest {
    fn level(nodes: &[Digest]) -> Digest {
        if nodes.len() == 1 {
            return nodes[0];
        }
        let next: Vec<Digest> = nodes
            .chunks(2)
            .map(|p| {
                let right = p.get(1).unwrap_or(&p[0]);
                digest(&[p[0].as_bytes().as_slice(), right.as_bytes()].concat())
            })
            .collect();
        level(&next)
    }
    if leaves.is_empty() {
        return digest(&[0u8]);
    }
    level(leaves)
}

#[test]
fn merkle_matches_oracle() {
    let a = admin();
    assert_eq!(merkle_root(&[]), digest(&[0]));
    for n in 1..=9 {
        let txs: Vec<_> = (0..n).map(|i| med(&a, i, "x")).collect();
        let ids: Vec<_> = txs.iter().map(|t| t.tx_id).collect();
        assert_eq!(merkle_root(&txs), oracle_root(&ids), "n = {n}");
    }
    let mut txs: Vec<_> = (0..4).map(|i| med(&a, i, "x")).collect();
    let before = merkle_root(&txs);
    txs.swap(1, 2);
    assert_ne!(merkle_root(&txs), before);
}

#[test]
fn tx_id_covers_body() {
    let a = admin();
    let tx = med(&a, 0, "A");
    assert_eq!(tx.computed_id(), tx.tx_id);
    assert!(tx.verify_with(a.public_key()));
    let mut forged = tx.clone();
    forged.nonce = 9;
    assert!(!forged.verify_with(a.public_key()));
    assert_eq!(digest_parts(&[]), digest_parts(&[]));
}

#[test]
fn empty_block_and_valid_blocks_accepted() {
    let (mut chain, a) = genesis_chain();
    let b1 = next_block(&chain, &a, vec![]);
    assert_eq!(b1.height(), 1);
    assert_eq!(b1.header.merkle_root, digest(&[0]));
    chain.append(b1, None).unwrap();
    let txs = vec![med(&a, 1, "A"), med(&a, 2, "B"), med(&a, 3, "C")];
    let b2 = next_block(&chain, &a, txs);
    chain.append(b2, Some(T0 + 2000)).unwrap();
    assert_eq!(chain.state().medications.len(), 3);
    assert_eq!(chain.height(), 2);
    let id = chain.block(2).unwrap().transactions[1].tx_id;
    assert_eq!(chain.find_tx(&id).unwrap().0, 2);
}

#[test]
fn build_rejects_bad_signature_naming_tx() {
    let (chain, a) = genesis_chain();
    let mut bad = med(&a, 1, "A");
    bad.signature = generate_identity(b"other").unwrap().sign(b"nope");
    let err = build_block(chain.parent_view(), vec![bad.clone()], &a, SealProof::DPoS { slot_index: 1 }, T0 + 1000, chain.consensus())
        .unwrap_err();
    assert!(matches!(err, BuildError::InvalidTransaction { tx_id, .. } if tx_id == bad.tx_id));
}

#[test]
fn payload_mutation_after_sealing_breaks_merkle_root() {
    let (chain, a) = genesis_chain();
    let mut block = next_block(&chain, &a, vec![med(&a, 1, "A")]);
    block.transactions[0].payload = Payload::AddMedication { name: "B".into(), stock: 1 };
    let violations = chain.validate_block(&block, None).unwrap_err();
    assert!(violations.iter().any(|v| matches!(v, Violation::MerkleRootMismatch { .. })), "{violations:?}");
    assert!(violations.iter().any(|v| matches!(v, Violation::TxIdMismatch(_))));
}

#[test]
fn reused_nonce_is_a_violation() {
    let (mut chain, a) = genesis_chain();
    let b1 = next_block(&chain, &a, vec![med(&a, 1, "A")]);
    chain.append(b1, None).unwrap();
    let mut b2 = next_block(&chain, &a, vec![]);
    b2.transactions = vec![med(&a, 1, "again")];
    b2.header.merkle_root = merkle_root(&b2.transactions);
    b2.reseal(SealProof::DPoS { slot_index: 2 }, &a);
    let v = chain.validate_block(&b2, None).unwrap_err();
    assert_eq!(v, vec![Violation::NonceViolation { tx: b2.transactions[0].tx_id, expected: 2, found: 1 }]);
}

#[test]
fn violations_are_collected() {
    let (chain, a) = genesis_chain();
    let mut b = next_block(&chain, &a, vec![]);
    b.header.parent = Digest::ZERO;
    b.header.height = 7;
    let v = chain.validate_block(&b, None).unwrap_err();
    assert!(matches!(v[0], Violation::ParentMismatch { .. }));
    assert!(matches!(v[1], Violation::HeightMismatch { expected: 1, found: 7 }));
    assert!(v.contains(&Violation::BadProposerSignature));
}

#[test]
fn unscheduled_proposer_and_clock_skew() {
    let (chain, a) = genesis_chain();
    let stranger = generate_identity(b"stranger").unwrap();
    let b = next_block(&chain, &stranger, vec![]);
    assert!(chain.validate_block(&b, None).unwrap_err().contains(&Violation::BadSeal));
    let ok = next_block(&chain, &a, vec![]);
    let v = chain.validate_block(&ok, Some(T0 + 1000 + CLOCK_TOLERANCE_MS + 1)).unwrap_err();
    assert!(matches!(v[..], [Violation::TimestampOutOfRange { .. }]));
    assert!(chain.validate_block(&ok, Some(T0 + 1000 + CLOCK_TOLERANCE_MS)).is_ok());
}

#[test]
fn capacity_is_enforced() {
    let (chain, a) = genesis_chain();
    let mut c = chain.consensus().clone();
    c.max_block_txs = 2;
    let txs = (1..=3).map(|n| med(&a, n, "m")).collect();
    let err = build_block(chain.parent_view(), txs, &a, SealProof::DPoS { slot_index: 1 }, T0 + 1000, &c).unwrap_err();
    assert_eq!(err, BuildError::TooManyTransactions { count: 3, max: 2 });
}

#[test]
fn registration_and_use_in_same_block() {
    let (chain, a) = genesis_chain();
    let user = generate_identity(b"user").unwrap();
    let reg = Transaction::new_signed(
        &user,
        0,
        T0,
        Payload::RegisterUser { public_key: user.public_key().clone(), role: Role::Patient, profile: Profile::named("U") },
    );
    let activate = Transaction::new_signed(
        &a,
        1,
        T0,
        Payload::SetUserStatus { user: user.address(), status: crate::ehr::AccountStatus::Active },
    );
    let upd = Transaction::new_signed(&user, 1, T0, Payload::UpdateProfile { profile: Profile::named("U2") });
    let block = next_block(&chain, &a, vec![reg, activate, upd]);
    let state = chain.validate_block(&block, None).unwrap();
    assert_eq!(state.account(&user.address()).unwrap().profile.name, "U2");
}

#[test]
fn fork_choice_rules() {
    let (base, a) = genesis_chain();
    let mut long = base.clone();
    for _ in 0..3 {
        let b = next_block(&long, &a, vec![]);
        long.append(b, None).unwrap();
    }
    let mut short = base.clone();
    let b = next_block(&short, &a, vec![med(&a, 1, "fork")]);
    short.append(b, None).unwrap();

    assert_eq!(fork_choice(&[&short, &long]).unwrap().tip(), long.tip());
    assert_eq!(fork_choice(&[&long, &short]).unwrap().tip(), long.tip());
    assert_eq!(fork_choice(&[&base]).unwrap().tip(), base.tip());
    assert!(matches!(fork_choice(&[]), Err(ChainError::NoCandidates)));

    let mut sibling = base.clone();
    let b = next_block(&sibling, &a, vec![med(&a, 1, "sibling")]);
    sibling.append(b, None).unwrap();
    let lower = if short.tip() < sibling.tip() { short.tip() } else { sibling.tip() };
    assert_eq!(fork_choice(&[&short, &sibling]).unwrap().tip(), lower);
    assert_eq!(fork_choice(&[&sibling, &short]).unwrap().tip(), lower);
    assert!(better_tip((1, Digest([0x7f; 32])), (1, Digest([0xaa; 32]))));
}

#[test]
fn store_round_trip_and_replay() {
    let (mut chain, a) = genesis_chain();
    for n in 1..=4 {
        let b = next_block(&chain, &a, vec![med(&a, n, "m")]);
        chain.append(b, None).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let mut store = ChainStore::open(dir.path().join("chain.bin")).unwrap();
    for b in chain.blocks() {
        store.append(b).unwrap();
    }
    let loaded = store.load().unwrap();
    assert_eq!(loaded, chain.blocks());
    let replayed = Chain::from_blocks(loaded, chain.consensus().clone()).unwrap();
    assert_eq!(replayed.state().state_hash(), chain.state().state_hash());
    assert_eq!(replayed.tip(), chain.tip());
}

#[test]
fn truncated_store_is_reported() {
    let (chain, _) = genesis_chain();
    let mut bytes = Vec::new();
    write_blocks(&mut bytes, chain.blocks()).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(read_blocks(bytes.as_slice()), Err(StoreError::Truncated(0))));
}
