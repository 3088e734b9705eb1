use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use super::{Message, Outbound};
use crate::consensus::{pow_mine, slot_at, slot_proof, ConsensusConfig, ConsensusKind, SealProof};
use crate::crypto::{Address, Digest, Identity};
use crate::ledger::{
    better_tip, check_transaction, merkle_root, validate_child, validate_genesis, Block, BlockHeader, ChainError,
    ParentView, SigCache, Transaction, Violation,
};
use crate::ehr::EhrState;

/// Cap on blocks returned for one sync request.
const MAX_SYNC_BLOCKS: usize = 1024;

/// A validated block in the local block tree, with the state after it.
#[derive(Clone)]
pub struct BlockEntry {
    pub block: Arc<Block>,
    pub state: Arc<EhrState>,
    pub height: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub txs_admitted: u64,
    pub txs_rejected: u64,
    pub blocks_proposed: u64,
    pub blocks_accepted: u64,
    pub blocks_rejected: u64,
    pub reorgs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeEvent {
    pub kind: &'static str,
    pub detail: String,
}

/// Transport-independent node logic: block tree with per-block state,
/// mempool, fork choice and confirmation tracking. Callers feed it
/// messages and clock ticks and deliver the [`Outbound`] messages it
/// returns.
pub struct NodeCore {
    identity: Identity,
    consensus: ConsensusConfig,
    genesis: Digest,
    genesis_timestamp: u64,
    blocks: HashMap<Digest, BlockEntry>,
    rejected_blocks: HashSet<Digest>,
    tip: Digest,
    mempool: BTreeMap<u64, Arc<Transaction>>,
    mempool_ids: HashMap<Digest, u64>,
    pending_nonces: BTreeSet<(Address, u64)>,
    next_seq: u64,
    seen_txs: HashSet<Digest>,
    tx_blocks: HashMap<Digest, Vec<Digest>>,
    cache: SigCache,
    confirmed: HashSet<Digest>,
    confirmed_tip: Digest,
    newly_confirmed: Vec<Arc<Block>>,
    confirmed_rewound: bool,
    commit_times: HashMap<Digest, u64>,
    events: Vec<NodeEvent>,
    stats: NodeStats,
}

impl NodeCore {
    pub fn new(identity: Identity, consensus: ConsensusConfig, genesis: Block) -> Result<NodeCore, ChainError> {
        let state = validate_genesis(&genesis).map_err(|violations| ChainError::Invalid { height: 0, violations })?;
        let digest = genesis.digest();
        let genesis_timestamp = genesis.header.timestamp;
        let mut node = NodeCore {
            identity,
            consensus,
            genesis: digest,
            genesis_timestamp,
            blocks: HashMap::new(),
            rejected_blocks: HashSet::new(),
            tip: digest,
            mempool: BTreeMap::new(),
            mempool_ids: HashMap::new(),
            pending_nonces: BTreeSet::new(),
            next_seq: 0,
            seen_txs: HashSet::new(),
            tx_blocks: HashMap::new(),
            cache: SigCache::new(),
            confirmed: HashSet::from([digest]),
            confirmed_tip: digest,
            newly_confirmed: Vec::new(),
            confirmed_rewound: false,
            commit_times: HashMap::new(),
            events: Vec::new(),
            stats: NodeStats::default(),
        };
        let block = Arc::new(genesis);
        for tx in &block.transactions {
            node.tx_blocks.entry(tx.tx_id).or_default().push(digest);
            node.commit_times.insert(tx.tx_id, genesis_timestamp);
        }
        node.blocks.insert(digest, BlockEntry { block, state: Arc::new(state), height: 0 });
        Ok(node)
    }

    /// Replays previously confirmed blocks, e.g. from the chain file. They
    /// are marked confirmed without being reported as newly confirmed.
    pub fn import(&mut self, blocks: impl IntoIterator<Item = Block>) -> Result<(), ChainError> {
        for block in blocks {
            if block.height() == 0 {
                if block.digest() != self.genesis {
                    return Err(ChainError::Invalid {
                        height: 0,
                        violations: vec![Violation::Genesis("genesis differs from the configured one")],
                    });
                }
                continue;
            }
            let height = block.height();
            let state = self.validate(&block, None).map_err(|violations| ChainError::Invalid { height, violations })?;
            let digest = block.digest();
            let timestamp = block.header.timestamp;
            self.insert(Arc::new(block), state, timestamp);
            self.mark_confirmed(digest, timestamp);
        }
        self.newly_confirmed.clear();
        self.events.clear();
        Ok(())
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn address(&self) -> Address {
        self.identity.address()
    }

    pub fn consensus(&self) -> &ConsensusConfig {
        &self.consensus
    }

    pub fn genesis(&self) -> Digest {
        self.genesis
    }

    pub fn genesis_timestamp(&self) -> u64 {
        self.genesis_timestamp
    }

    pub fn tip(&self) -> Digest {
        self.tip
    }

    pub fn tip_entry(&self) -> &BlockEntry {
        &self.blocks[&self.tip]
    }

    pub fn tip_height(&self) -> u64 {
        self.tip_entry().height
    }

    pub fn tip_state(&self) -> &Arc<EhrState> {
        &self.tip_entry().state
    }

    pub fn entry(&self, digest: &Digest) -> Option<&BlockEntry> {
        self.blocks.get(digest)
    }

    pub fn known_blocks(&self) -> impl Iterator<Item = &Digest> {
        self.blocks.keys()
    }

    pub fn confirmed_tip(&self) -> Digest {
        self.confirmed_tip
    }

    pub fn confirmed_height(&self) -> u64 {
        self.blocks[&self.confirmed_tip].height
    }

    pub fn confirmed_state(&self) -> &Arc<EhrState> {
        &self.blocks[&self.confirmed_tip].state
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    /// Time at which `tx_id` was first seen in a confirmed block.
    pub fn committed_at(&self, tx_id: &Digest) -> Option<u64> {
        self.commit_times.get(tx_id).copied()
    }

    pub fn take_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    /// Blocks confirmed since the last call, in chain order.
    pub fn take_newly_confirmed(&mut self) -> Vec<Arc<Block>> {
        std::mem::take(&mut self.newly_confirmed)
    }

    /// Whether a reorganization has discarded confirmed blocks since the
    /// last call. Persisted copies of the chain must then be rewritten.
    pub fn take_confirmed_rewound(&mut self) -> bool {
        std::mem::take(&mut self.confirmed_rewound)
    }

    /// Confirmed canonical blocks from genesis.
    pub fn confirmed_chain(&self) -> Vec<Arc<Block>> {
        let mut out = Vec::new();
        let mut cur = self.confirmed_tip;
        loop {
            let entry = &self.blocks[&cur];
            out.push(entry.block.clone());
            if entry.height == 0 {
                break;
            }
            cur = entry.block.header.parent;
        }
        out.reverse();
        out
    }

    /// Next nonce for `signer`, counting transactions waiting in the mempool.
    pub fn next_nonce(&self, signer: &Address) -> u64 {
        let mut n = self.tip_state().expected_nonce(signer);
        while self.pending_nonces.contains(&(*signer, n)) {
            n += 1;
        }
        n
    }

    /// Canonical blocks from genesis to the tip.
    pub fn canonical(&self) -> Vec<Arc<Block>> {
        self.canonical_from(0)
    }

    pub fn canonical_from(&self, from_height: u64) -> Vec<Arc<Block>> {
        let mut out = Vec::new();
        let mut cur = self.tip;
        loop {
            let entry = &self.blocks[&cur];
            if entry.height < from_height {
                break;
            }
            out.push(entry.block.clone());
            if entry.height == 0 {
                break;
            }
            cur = entry.block.header.parent;
        }
        out.reverse();
        out
    }

    fn on_canonical(&self, digest: &Digest) -> bool {
        let Some(target) = self.blocks.get(digest) else { return false };
        let mut cur = self.tip;
        loop {
            let entry = &self.blocks[&cur];
            if entry.height == target.height {
                return cur == *digest;
            }
            if entry.height < target.height {
                return false;
            }
            cur = entry.block.header.parent;
        }
    }

    /// Canonical block containing `tx_id`, if any.
    /// Tip state with the mempool applied in arrival order, skipping
    /// entries the contract would reject.
    pub fn pending_state(&self) -> EhrState {
        let mut state = (*self.tip_state().as_ref()).clone();
        let mut applied = HashSet::new();
        loop {
            let mut progress = false;
            for (&seq, tx) in &self.mempool {
                if applied.contains(&seq) || tx.nonce != state.expected_nonce(&tx.signer) {
                    continue;
                }
                if state.apply_transaction(tx).is_ok() {
                    progress = true;
                }
                applied.insert(seq);
            }
            if !progress {
                return state;
            }
        }
    }

    pub fn find_tx(&self, tx_id: &Digest) -> Option<(u64, Arc<Block>)> {
        let holders = self.tx_blocks.get(tx_id)?;
        holders.iter().find(|d| self.on_canonical(d)).map(|d| {
            let e = &self.blocks[d];
            (e.height, e.block.clone())
        })
    }

    pub fn tip_message(&self) -> Message {
        Message::Tip { height: self.tip_height(), digest: self.tip }
    }

    fn event(&mut self, kind: &'static str, detail: String) {
        self.events.push(NodeEvent { kind, detail });
    }

    fn admit(&mut self, tx: Arc<Transaction>) -> Result<bool, Violation> {
        if self.mempool_ids.contains_key(&tx.tx_id) {
            return Ok(false);
        }
        let state = self.blocks[&self.tip].state.clone();
        check_transaction(&tx, &state, &mut self.cache, true)?;
        self.insert_mempool(tx);
        self.stats.txs_admitted += 1;
        Ok(true)
    }

    fn insert_mempool(&mut self, tx: Arc<Transaction>) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.mempool_ids.insert(tx.tx_id, seq);
        self.pending_nonces.insert((tx.signer, tx.nonce));
        self.mempool.insert(seq, tx);
    }

    fn remove_mempool(&mut self, seq: u64) {
        if let Some(tx) = self.mempool.remove(&seq) {
            self.mempool_ids.remove(&tx.tx_id);
            self.pending_nonces.remove(&(tx.signer, tx.nonce));
        }
    }

    /// Locally submitted transaction: admitted and announced, or refused.
    pub fn submit_transaction(&mut self, tx: Transaction, now: u64) -> Result<Vec<Outbound>, Violation> {
        let tx = Arc::new(tx);
        self.seen_txs.insert(tx.tx_id);
        let fresh = self.admit(tx.clone())?;
        if fresh {
            self.event("submit", format!("{} at {now}", tx.tx_id));
            Ok(vec![Outbound::Broadcast(Message::AnnounceTx(tx))])
        } else {
            Ok(Vec::new())
        }
    }

    pub fn handle_message(&mut self, msg: Message, now: u64) -> Vec<Outbound> {
        match msg {
            Message::AnnounceTx(tx) => {
                if !self.seen_txs.insert(tx.tx_id) {
                    return Vec::new();
                }
                match self.admit(tx.clone()) {
                    Ok(true) => vec![Outbound::Broadcast(Message::AnnounceTx(tx))],
                    Ok(false) => Vec::new(),
                    Err(v) => {
                        self.stats.txs_rejected += 1;
                        self.event("tx_rejected", v.to_string());
                        Vec::new()
                    }
                }
            }
            Message::AnnounceBlock(block) => {
                let digest = block.digest();
                if self.blocks.contains_key(&digest) || self.rejected_blocks.contains(&digest) {
                    return Vec::new();
                }
                if !self.blocks.contains_key(&block.header.parent) {
                    return vec![Outbound::Reply(Message::RequestBlocks { from_height: self.tip_height() + 1 })];
                }
                if self.accept(block.clone(), Some(now), now) {
                    vec![Outbound::Broadcast(Message::AnnounceBlock(block))]
                } else {
                    Vec::new()
                }
            }
            Message::RequestTip => vec![Outbound::Reply(self.tip_message())],
            Message::Tip { height, digest } => {
                if self.blocks.contains_key(&digest) || !better_tip((height, digest), (self.tip_height(), self.tip)) {
                    return Vec::new();
                }
                let from_height = if height > self.tip_height() { self.tip_height() } else { self.confirmed_height() } + 1;
                vec![Outbound::Reply(Message::RequestBlocks { from_height })]
            }
            Message::RequestBlocks { from_height } => {
                let mut blocks = self.canonical_from(from_height.max(1));
                blocks.truncate(MAX_SYNC_BLOCKS);
                vec![Outbound::Reply(Message::Blocks(blocks))]
            }
            Message::Blocks(blocks) => {
                let mut out = Vec::new();
                for block in blocks {
                    let digest = block.digest();
                    if self.blocks.contains_key(&digest) {
                        continue;
                    }
                    if self.rejected_blocks.contains(&digest) {
                        break;
                    }
                    if !self.blocks.contains_key(&block.header.parent) {
                        if block.height() > 1 {
                            out.push(Outbound::Reply(Message::RequestBlocks { from_height: 1 }));
                        }
                        break;
                    }
                    if !self.accept(block, None, now) {
                        break;
                    }
                }
                out
            }
        }
    }

    fn validate(&mut self, block: &Block, clock: Option<u64>) -> Result<EhrState, Vec<Violation>> {
        let Some(parent) = self.blocks.get(&block.header.parent) else {
            return Err(vec![Violation::ParentMismatch { expected: self.tip, found: block.header.parent }]);
        };
        let view = ParentView {
            header: &parent.block.header,
            digest: block.header.parent,
            state: &parent.state,
            genesis_timestamp: self.genesis_timestamp,
        };
        validate_child(view, block, &self.consensus, clock, &mut self.cache)
    }

    fn accept(&mut self, block: Arc<Block>, clock: Option<u64>, now: u64) -> bool {
        match self.validate(&block, clock) {
            Ok(state) => {
                self.stats.blocks_accepted += 1;
                self.event("block_accepted", format!("{} h={}", block.digest(), block.height()));
                self.insert(block, state, now);
                true
            }
            Err(violations) => {
                self.stats.blocks_rejected += 1;
                self.rejected_blocks.insert(block.digest());
                self.event("block_rejected", format!("{} {:?}", block.digest(), violations.first()));
                false
            }
        }
    }

    fn insert(&mut self, block: Arc<Block>, state: EhrState, now: u64) {
        let digest = block.digest();
        let height = block.height();
        let floor = self.blocks[&self.confirmed_tip].state.clone();
        for tx in &block.transactions {
            self.tx_blocks.entry(tx.tx_id).or_default().push(digest);
            self.seen_txs.insert(tx.tx_id);
            if !self.mempool_ids.contains_key(&tx.tx_id) && tx.nonce >= floor.expected_nonce(&tx.signer) {
                self.insert_mempool(Arc::new(tx.clone()));
            }
        }
        let parent = block.header.parent;
        self.blocks.insert(digest, BlockEntry { block, state: Arc::new(state), height });
        if better_tip((height, digest), (self.tip_height(), self.tip)) {
            let old_tip = self.tip;
            self.tip = digest;
            if parent != old_tip {
                self.stats.reorgs += 1;
                self.event("reorg", format!("{old_tip} -> {digest}"));
                self.unwind(old_tip);
            }
            self.event("tip", format!("h={height} {digest}"));
            self.update_confirmation(now);
        }
    }

    /// Handles the blocks of the old branch after the tip moved to another
    /// one: their transactions return to the mempool and any confirmations
    /// among them are withdrawn.
    fn unwind(&mut self, old_tip: Digest) {
        let mut orphaned = Vec::new();
        let mut cur = old_tip;
        while !self.on_canonical(&cur) {
            orphaned.push(cur);
            cur = self.blocks[&cur].block.header.parent;
        }
        let ancestor = cur;
        let floor = self.blocks[&ancestor].state.clone();
        for d in orphaned.iter().rev() {
            if self.confirmed.remove(d) {
                self.confirmed_rewound = true;
            }
            let block = self.blocks[d].block.clone();
            for tx in &block.transactions {
                self.commit_times.remove(&tx.tx_id);
                if !self.mempool_ids.contains_key(&tx.tx_id) && tx.nonce >= floor.expected_nonce(&tx.signer) {
                    self.insert_mempool(Arc::new(tx.clone()));
                }
            }
        }
        if orphaned.contains(&self.confirmed_tip) {
            self.event("confirmed_rewound", format!("{} -> {ancestor}", self.confirmed_tip));
            self.confirmed_tip = ancestor;
            self.newly_confirmed.retain(|b| !orphaned.contains(&b.digest()));
        }
    }

    fn update_confirmation(&mut self, now: u64) {
        let mut proposers = Vec::new();
        let mut cur = self.tip;
        while !self.confirmed.contains(&cur) {
            let entry = &self.blocks[&cur];
            proposers.push(entry.block.header.proposer);
            if self.consensus.is_confirmed(&proposers) {
                self.mark_confirmed(cur, now);
                return;
            }
            cur = entry.block.header.parent;
        }
    }

    fn mark_confirmed(&mut self, digest: Digest, now: u64) {
        let mut path = Vec::new();
        let mut cur = digest;
        while !self.confirmed.contains(&cur) {
            path.push(cur);
            cur = self.blocks[&cur].block.header.parent;
        }
        for d in path.into_iter().rev() {
            self.confirmed.insert(d);
            let entry = self.blocks[&d].clone();
            for tx in &entry.block.transactions {
                self.commit_times.entry(tx.tx_id).or_insert(now);
            }
            self.event("commit", format!("h={} txs={}", entry.height, entry.block.transactions.len()));
            self.newly_confirmed.push(entry.block);
        }
        if self.blocks[&digest].height >= self.confirmed_height() {
            self.confirmed_tip = digest;
        }
        let floor = self.blocks[&self.confirmed_tip].state.clone();
        let stale: Vec<u64> = self
            .mempool
            .iter()
            .filter(|(_, tx)| tx.nonce < floor.expected_nonce(&tx.signer))
            .map(|(seq, _)| *seq)
            .collect();
        for seq in stale {
            self.remove_mempool(seq);
        }
    }

    /// Picks mempool transactions that apply cleanly on top of the tip, in
    /// arrival order with per-signer nonces consecutive. Transactions the
    /// contract rejects are evicted.
    fn select(&mut self) -> (Vec<Transaction>, EhrState) {
        let mut state = (*self.blocks[&self.tip].state).clone();
        let max = self.consensus.max_block_txs;
        let mut chosen = Vec::new();
        let mut picked = HashSet::new();
        let mut evict = Vec::new();
        loop {
            let mut progress = false;
            for (&seq, tx) in &self.mempool {
                if chosen.len() >= max {
                    break;
                }
                if picked.contains(&seq) || tx.nonce != state.expected_nonce(&tx.signer) {
                    continue;
                }
                let ok = check_transaction(tx, &state, &mut self.cache, false).is_ok() && state.apply_transaction(tx).is_ok();
                if ok {
                    chosen.push((**tx).clone());
                    progress = true;
                } else {
                    evict.push(seq);
                }
                picked.insert(seq);
            }
            if !progress || chosen.len() >= max {
                break;
            }
        }
        for seq in evict {
            self.stats.txs_rejected += 1;
            self.remove_mempool(seq);
        }
        (chosen, state)
    }

    fn propose_with(&mut self, proof: SealProof, now: u64) -> Arc<Block> {
        let (txs, state) = self.select();
        let tip = self.tip_entry();
        let mut header = BlockHeader {
            height: tip.height + 1,
            parent: self.tip,
            merkle_root: merkle_root(&txs),
            timestamp: now.max(tip.block.header.timestamp),
            proposer: self.address(),
            consensus_proof: proof,
        };
        if let SealProof::PoW { .. } = header.consensus_proof {
            let (nonce, _) = pow_mine(&header, self.consensus.difficulty_bits);
            header.consensus_proof = SealProof::PoW { nonce };
        }
        let block = Arc::new(Block::new_signed(header, txs, &self.identity));
        self.stats.blocks_proposed += 1;
        self.event("propose", format!("{} h={} txs={}", block.digest(), block.height(), block.transactions.len()));
        self.insert(block.clone(), state, now);
        block
    }

    /// Slot-based production (PoS, DPoS): seals a block when this node is
    /// the proposer for the slot containing `now`.
    pub fn propose(&mut self, now: u64) -> Option<Vec<Outbound>> {
        if self.consensus.kind == ConsensusKind::PoW {
            return None;
        }
        let slot = slot_at(&self.consensus, self.genesis_timestamp, now)?;
        let tip = self.tip_entry();
        if tip.block.header.consensus_proof.slot().is_some_and(|s| s >= slot) {
            return None;
        }
        let proof = slot_proof(&self.consensus, &self.tip, tip.height + 1, slot, &self.address())?;
        let block = self.propose_with(proof, now);
        Some(vec![Outbound::Broadcast(Message::AnnounceBlock(block))])
    }

    /// Proof-of-work production: mines a block on the current tip.
    pub fn mine(&mut self, now: u64) -> Vec<Outbound> {
        let block = self.propose_with(SealProof::PoW { nonce: 0 }, now);
        vec![Outbound::Broadcast(Message::AnnounceBlock(block))]
    }
}
