use std::collections::{BTreeMap, HashSet};
use std::fmt;

use super::merkle::recomputed_merkle_root;
use super::{merkle_root, Block, BlockHeader, Transaction, CLOCK_TOLERANCE_MS};
use crate::consensus::{slot_at, verify_seal, ConsensusConfig, SealProof};
use crate::crypto::{Address, Digest, Identity};
use crate::ehr::{EhrState, Payload, Rejection};

/// Everything block validation needs to know about the parent.
#[derive(Clone, Copy)]
pub struct ParentView<'a> {
    pub header: &'a BlockHeader,
    pub digest: Digest,
    pub state: &'a EhrState,
    pub genesis_timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    ParentMismatch { expected: Digest, found: Digest },
    HeightMismatch { expected: u64, found: u64 },
    MerkleRootMismatch { expected: Digest, found: Digest },
    TooManyTransactions { count: usize, max: usize },
    DuplicateTransaction(Digest),
    TxIdMismatch(Digest),
    UnknownSigner(Digest),
    BadTxSignature(Digest),
    NonceViolation { tx: Digest, expected: u64, found: u64 },
    BadProposerSignature,
    BadSeal,
    SlotNotAdvancing,
    SlotTimestampMismatch,
    TimestampBeforeParent,
    TimestampOutOfRange { timestamp: u64, now: u64 },
    Payload { tx: Digest, rejection: Rejection },
    Genesis(&'static str),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Payload { tx, rejection } => write!(f, "tx {tx}: {rejection}"),
            other => fmt::Debug::fmt(other, f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error("transaction {tx_id} rejected: {reason}")]
    InvalidTransaction { tx_id: Digest, reason: String },
    #[error("{count} transactions exceed the block capacity of {max}")]
    TooManyTransactions { count: usize, max: usize },
}

/// Remembers `(tx_id, signature)` pairs that already verified. A signer's
/// key is bound to its address, so the pair determines the outcome.
#[derive(Default)]
pub struct SigCache(HashSet<(Digest, Vec<u8>)>);

impl SigCache {
    pub fn new() -> SigCache {
        SigCache::default()
    }

    fn check(&mut self, tx: &Transaction, state: &EhrState) -> Result<(), Violation> {
        if tx.computed_id() != tx.tx_id {
            return Err(Violation::TxIdMismatch(tx.tx_id));
        }
        let key = (tx.tx_id, tx.signature.0.clone());
        if self.0.contains(&key) {
            return Ok(());
        }
        let pk = tx
            .embedded_key()
            .or_else(|| state.public_key_of(&tx.signer))
            .ok_or(Violation::UnknownSigner(tx.tx_id))?;
        if !tx.verify_with(pk) {
            return Err(Violation::BadTxSignature(tx.tx_id));
        }
        self.0.insert(key);
        Ok(())
    }
}

/// Signature and nonce admission check against `state`, as done by the
/// mempool. `allow_future_nonce` admits nonces above the expected one.
pub fn check_transaction(
    tx: &Transaction,
    state: &EhrState,
    cache: &mut SigCache,
    allow_future_nonce: bool,
) -> Result<(), Violation> {
    cache.check(tx, state)?;
    let expected = state.expected_nonce(&tx.signer);
    if tx.nonce < expected || (!allow_future_nonce && tx.nonce != expected) {
        return Err(Violation::NonceViolation { tx: tx.tx_id, expected, found: tx.nonce });
    }
    Ok(())
}

/// Validates `block` as a child of `parent`, returning the post-state.
/// All violations are collected, in the order: linkage, height, Merkle
/// root, signatures, nonces, consensus seal, payloads.
pub fn validate_child(
    parent: ParentView<'_>,
    block: &Block,
    consensus: &ConsensusConfig,
    now: Option<u64>,
    cache: &mut SigCache,
) -> Result<EhrState, Vec<Violation>> {
    let mut violations = Vec::new();
    let header = &block.header;

    if header.parent != parent.digest {
        violations.push(Violation::ParentMismatch { expected: parent.digest, found: header.parent });
    }
    let expected_height = parent.header.height + 1;
    if header.height != expected_height {
        violations.push(Violation::HeightMismatch { expected: expected_height, found: header.height });
    }
    let root = recomputed_merkle_root(&block.transactions);
    if header.merkle_root != root {
        violations.push(Violation::MerkleRootMismatch { expected: root, found: header.merkle_root });
    }
    if block.transactions.len() > consensus.max_block_txs {
        violations.push(Violation::TooManyTransactions { count: block.transactions.len(), max: consensus.max_block_txs });
    }

    // Signatures. Keys of accounts registered earlier in the same block are
    // not in the parent state, so those are verified during the payload pass.
    let mut sig_ok = vec![false; block.transactions.len()];
    let mut seen = HashSet::new();
    for (i, tx) in block.transactions.iter().enumerate() {
        if !seen.insert(tx.tx_id) {
            violations.push(Violation::DuplicateTransaction(tx.tx_id));
            continue;
        }
        match cache.check(tx, parent.state) {
            Ok(()) => sig_ok[i] = true,
            Err(Violation::UnknownSigner(_)) => {}
            Err(v) => violations.push(v),
        }
    }

    // Nonces: strictly consecutive per signer.
    let mut next_nonce: BTreeMap<Address, u64> = BTreeMap::new();
    let mut nonce_ok = vec![false; block.transactions.len()];
    for (i, tx) in block.transactions.iter().enumerate() {
        let expected = *next_nonce.entry(tx.signer).or_insert_with(|| parent.state.expected_nonce(&tx.signer));
        if tx.nonce == expected {
            nonce_ok[i] = true;
            next_nonce.insert(tx.signer, expected + 1);
        } else {
            violations.push(Violation::NonceViolation { tx: tx.tx_id, expected, found: tx.nonce });
        }
    }

    // Consensus seal, proposer signature, slot and clock.
    if !block.signature_valid() {
        violations.push(Violation::BadProposerSignature);
    }
    if !verify_seal(consensus, header, &header.consensus_proof) {
        violations.push(Violation::BadSeal);
    }
    if let Some(slot) = header.consensus_proof.slot() {
        if parent.header.consensus_proof.slot().is_some_and(|p| slot <= p) {
            violations.push(Violation::SlotNotAdvancing);
        }
        if slot_at(consensus, parent.genesis_timestamp, header.timestamp) != Some(slot) {
            violations.push(Violation::SlotTimestampMismatch);
        }
    }
    if header.timestamp < parent.header.timestamp {
        violations.push(Violation::TimestampBeforeParent);
    }
    if let Some(now) = now {
        if header.timestamp.abs_diff(now) > CLOCK_TOLERANCE_MS {
            violations.push(Violation::TimestampOutOfRange { timestamp: header.timestamp, now });
        }
    }

    // Payloads, in block order on a scratch copy of the parent state.
    let mut state = parent.state.clone();
    for (i, tx) in block.transactions.iter().enumerate() {
        if !nonce_ok[i] {
            continue;
        }
        if !sig_ok[i] {
            match cache.check(tx, &state) {
                Ok(()) => {}
                Err(v) => {
                    if !violations.contains(&v) {
                        violations.push(v);
                    }
                    continue;
                }
            }
        }
        if let Err(rejection) = state.apply_transaction(tx) {
            violations.push(Violation::Payload { tx: tx.tx_id, rejection });
        }
    }

    if violations.is_empty() {
        Ok(state)
    } else {
        Err(violations)
    }
}

/// Checks the height-0 block and returns the genesis state.
pub fn validate_genesis(block: &Block) -> Result<EhrState, Vec<Violation>> {
    let mut violations = Vec::new();
    let h = &block.header;
    if h.height != 0 {
        violations.push(Violation::Genesis("height must be 0"));
    }
    if h.parent != Digest::ZERO {
        violations.push(Violation::Genesis("parent must be all zeros"));
    }
    if h.consensus_proof != SealProof::Genesis {
        violations.push(Violation::Genesis("seal must be the genesis marker"));
    }
    let root = recomputed_merkle_root(&block.transactions);
    if h.merkle_root != root {
        violations.push(Violation::MerkleRootMismatch { expected: root, found: h.merkle_root });
    }
    if !block.signature_valid() {
        violations.push(Violation::BadProposerSignature);
    }
    let [tx] = block.transactions.as_slice() else {
        violations.push(Violation::Genesis("exactly one genesis transaction required"));
        return Err(violations);
    };
    if !matches!(tx.payload, Payload::Genesis { .. }) {
        violations.push(Violation::Genesis("first transaction must carry the genesis payload"));
    }
    if tx.signer != h.proposer {
        violations.push(Violation::Genesis("genesis must be proposed by the admin"));
    }
    let mut state = EhrState::new();
    match tx.embedded_key() {
        Some(pk) if tx.verify_with(pk) => {}
        _ => violations.push(Violation::BadTxSignature(tx.tx_id)),
    }
    if tx.nonce != 0 {
        violations.push(Violation::NonceViolation { tx: tx.tx_id, expected: 0, found: tx.nonce });
    }
    if let Err(rejection) = state.apply_transaction(tx) {
        violations.push(Violation::Payload { tx: tx.tx_id, rejection });
    }
    if violations.is_empty() {
        Ok(state)
    } else {
        Err(violations)
    }
}

/// Assembles and signs a block on top of `parent`. Every transaction is
/// checked (signature, nonce, payload) against the evolving state; the
/// first failure aborts with the offending `tx_id`. The seal is taken as
/// given; proof-of-work callers mine afterwards and [`Block::reseal`].
pub fn build_block(
    parent: ParentView<'_>,
    txs: Vec<Transaction>,
    proposer: &Identity,
    proof: SealProof,
    timestamp: u64,
    consensus: &ConsensusConfig,
) -> Result<(Block, EhrState), BuildError> {
    if txs.len() > consensus.max_block_txs {
        return Err(BuildError::TooManyTransactions { count: txs.len(), max: consensus.max_block_txs });
    }
    let mut state = parent.state.clone();
    let mut cache = SigCache::new();
    for tx in &txs {
        let fail = |reason: String| BuildError::InvalidTransaction { tx_id: tx.tx_id, reason };
        check_transaction(tx, &state, &mut cache, false).map_err(|v| fail(v.to_string()))?;
        state.apply_transaction(tx).map_err(|r| fail(r.to_string()))?;
    }
    let header = BlockHeader {
        height: parent.header.height + 1,
        parent: parent.digest,
        merkle_root: merkle_root(&txs),
        timestamp,
        proposer: proposer.address(),
        consensus_proof: proof,
    };
    Ok((Block::new_signed(header, txs, proposer), state))
}
