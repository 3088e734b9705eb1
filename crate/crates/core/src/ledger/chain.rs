use std::collections::HashMap;
use std::sync::Arc;

use super::validate::{validate_child, validate_genesis, ParentView, SigCache, Violation};
use super::{Block, Transaction};
use crate::consensus::ConsensusConfig;
use crate::crypto::Digest;
use crate::ehr::EhrState;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("no candidate chains")]
    NoCandidates,
    #[error("chain is empty")]
    Empty,
    #[error("block at height {height} is invalid: {violations:?}")]
    Invalid { height: u64, violations: Vec<Violation> },
}

/// A validated chain from genesis, with the state after its tip.
#[derive(Clone)]
pub struct Chain {
    consensus: ConsensusConfig,
    blocks: Vec<Block>,
    digests: Vec<Digest>,
    state: Arc<EhrState>,
    tx_index: HashMap<Digest, (u64, usize)>,
}

impl Chain {
    pub fn from_genesis(genesis: Block, consensus: ConsensusConfig) -> Result<Chain, ChainError> {
        let state = validate_genesis(&genesis).map_err(|violations| ChainError::Invalid { height: 0, violations })?;
        let mut chain = Chain {
            consensus,
            blocks: Vec::new(),
            digests: Vec::new(),
            state: Arc::new(state),
            tx_index: HashMap::new(),
        };
        chain.push(genesis);
        Ok(chain)
    }

    /// Replays and validates `blocks` from genesis. Timestamps are not
    /// compared with the local clock.
    pub fn from_blocks(blocks: Vec<Block>, consensus: ConsensusConfig) -> Result<Chain, ChainError> {
        let mut iter = blocks.into_iter();
        let genesis = iter.next().ok_or(ChainError::Empty)?;
        let mut chain = Chain::from_genesis(genesis, consensus)?;
        let mut cache = SigCache::new();
        for block in iter {
            chain.append_cached(block, None, &mut cache)?;
        }
        Ok(chain)
    }

    fn push(&mut self, block: Block) {
        let height = block.height();
        for (i, tx) in block.transactions.iter().enumerate() {
            self.tx_index.insert(tx.tx_id, (height, i));
        }
        self.digests.push(block.digest());
        self.blocks.push(block);
    }

    pub fn consensus(&self) -> &ConsensusConfig {
        &self.consensus
    }

    pub fn parent_view(&self) -> ParentView<'_> {
        ParentView {
            header: &self.tip_block().header,
            digest: self.tip(),
            state: &self.state,
            genesis_timestamp: self.genesis_timestamp(),
        }
    }

    pub fn validate_block(&self, block: &Block, now: Option<u64>) -> Result<EhrState, Vec<Violation>> {
        validate_child(self.parent_view(), block, &self.consensus, now, &mut SigCache::new())
    }

    /// Validates `block` against the tip and appends it.
    pub fn append(&mut self, block: Block, now: Option<u64>) -> Result<(), ChainError> {
        self.append_cached(block, now, &mut SigCache::new())
    }

    fn append_cached(&mut self, block: Block, now: Option<u64>, cache: &mut SigCache) -> Result<(), ChainError> {
        let height = block.height();
        let state = validate_child(self.parent_view(), &block, &self.consensus, now, cache)
            .map_err(|violations| ChainError::Invalid { height, violations })?;
        self.state = Arc::new(state);
        self.push(block);
        Ok(())
    }

    /// Appends a block already validated against this tip, with its post-state.
    pub fn append_validated(&mut self, block: Block, state: Arc<EhrState>) {
        debug_assert_eq!(block.header.parent, self.tip());
        self.state = state;
        self.push(block);
    }

    pub fn tip(&self) -> Digest {
        *self.digests.last().expect("chain holds genesis")
    }

    pub fn tip_block(&self) -> &Block {
        self.blocks.last().expect("chain holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn state(&self) -> &EhrState {
        &self.state
    }

    pub fn shared_state(&self) -> Arc<EhrState> {
        self.state.clone()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    pub fn digest_at(&self, height: u64) -> Option<Digest> {
        self.digests.get(height as usize).copied()
    }

    pub fn genesis_timestamp(&self) -> u64 {
        self.blocks[0].header.timestamp
    }

    pub fn find_tx(&self, tx_id: &Digest) -> Option<(u64, &Transaction)> {
        let &(height, i) = self.tx_index.get(tx_id)?;
        Some((height, &self.blocks[height as usize].transactions[i]))
    }

    pub fn tx_count(&self) -> usize {
        self.tx_index.len()
    }
}

/// `true` when tip `a` beats tip `b`: greater height, then lower digest.
pub fn better_tip(a: (u64, Digest), b: (u64, Digest)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Longest chain, ties broken by the lexicographically smaller tip digest.
pub fn fork_choice<'a>(candidates: &[&'a Chain]) -> Result<&'a Chain, ChainError> {
    let mut iter = candidates.iter();
    let mut best = *iter.next().ok_or(ChainError::NoCandidates)?;
    for &c in iter {
        if better_tip((c.height(), c.tip()), (best.height(), best.tip())) {
            best = c;
        }
    }
    Ok(best)
}
