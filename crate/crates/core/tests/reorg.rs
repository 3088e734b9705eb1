mod common;

use common::{Cast, T0};
use medledger::consensus::{ConsensusConfig, ConsensusKind};
use medledger::ehr::Payload;
use medledger::ledger::{ChainStore, Transaction};
use medledger::network::{Message, NodeCore, Outbound};

fn pow_node(cast: &Cast, seed: &str) -> NodeCore {
    let mut cfg = ConsensusConfig::new(ConsensusKind::PoW);
    cfg.difficulty_bits = 4;
    cfg.confirmation_depth = 1;
    NodeCore::new(common::id(seed), cfg, cast.genesis()).unwrap()
}

fn announced(outs: Vec<Outbound>) -> Vec<std::sync::Arc<medledger::ledger::Block>> {
    outs.into_iter()
        .filter_map(|o| match o {
            Outbound::Broadcast(Message::AnnounceBlock(b)) => Some(b),
            _ => None,
        })
        .collect()
}

#[test]
fn longer_branch_rewinds_confirmations_and_requeues_orphans() {
    let cast = Cast::new("reorg");
    let (mut a, mut b) = (pow_node(&cast, "reorg-a"), pow_node(&cast, "reorg-b"));
    let nonce = a.tip_state().expected_nonce(&cast.admin.address());
    let orphan = Transaction::new_signed(&cast.admin, nonce, T0 + 5, Payload::AddMedication { name: "Orphan".into(), stock: 1 });
    a.submit_transaction(orphan.clone(), T0 + 5).unwrap();
    a.mine(T0 + 10);
    assert_eq!(a.confirmed_height(), 1);
    assert!(a.committed_at(&orphan.tx_id).is_some());
    a.take_newly_confirmed();

    let mut branch = announced(b.mine(T0 + 10));
    branch.extend(announced(b.mine(T0 + 20)));
    assert_eq!(branch.len(), 2);
    a.handle_message(Message::Blocks(branch), T0 + 30);

    assert_eq!(a.tip(), b.tip());
    assert!(a.take_confirmed_rewound());
    assert!(!a.take_confirmed_rewound());
    assert_eq!(a.committed_at(&orphan.tx_id), None);
    assert!(a.find_tx(&orphan.tx_id).is_none());
    assert_eq!(a.mempool_len(), 1);
    let confirmed: Vec<_> = a.confirmed_chain().iter().map(|blk| blk.digest()).collect();
    let expected: Vec<_> = b.canonical()[..confirmed.len()].iter().map(|blk| blk.digest()).collect();
    assert_eq!(confirmed, expected);

    a.mine(T0 + 40);
    a.mine(T0 + 50);
    let (h, _) = a.find_tx(&orphan.tx_id).expect("orphaned transaction is mined again");
    assert_eq!(h, 3);
    assert!(a.committed_at(&orphan.tx_id).is_some());

    let dir = tempfile::tempdir().unwrap();
    let mut store = ChainStore::open(dir.path().join("chain.dat")).unwrap();
    for blk in b.canonical() {
        store.append(&blk).unwrap();
    }
    let chain = a.confirmed_chain();
    store.rewrite(chain.iter().map(|blk| blk.as_ref())).unwrap();
    let loaded = store.load().unwrap();
    assert_eq!(loaded.len(), chain.len());
    assert!(loaded.iter().zip(&chain).all(|(x, y)| x.digest() == y.digest()));
    let next = announced(a.mine(T0 + 60)).remove(0);
    store.append(&next).unwrap();
    assert_eq!(store.load().unwrap().len(), chain.len() + 1);
}
