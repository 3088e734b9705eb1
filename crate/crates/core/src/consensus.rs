//! Pluggable sealing rules: proof of work, proof of stake and delegated
//! proof of stake.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::crypto::{digest_parts, Address, Digest};
use crate::ledger::{BlockHeader, DEFAULT_MAX_BLOCK_TXS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConsensusKind {
    PoW,
    PoS,
    DPoS,
}

impl ConsensusKind {
    pub const ALL: [ConsensusKind; 3] = [ConsensusKind::PoW, ConsensusKind::PoS, ConsensusKind::DPoS];

    /// Nominal block interval before time compression.
    pub fn default_slot_ms(self) -> u64 {
        match self {
            ConsensusKind::PoW => 600_000,
            ConsensusKind::PoS => 60_000,
            ConsensusKind::DPoS => 30_000,
        }
    }
}

impl std::str::FromStr for ConsensusKind {
    type Err = ConsensusError;

    fn from_str(s: &str) -> Result<ConsensusKind, ConsensusError> {
        match s.to_ascii_lowercase().as_str() {
            "pow" => Ok(ConsensusKind::PoW),
            "pos" => Ok(ConsensusKind::PoS),
            "dpos" => Ok(ConsensusKind::DPoS),
            _ => Err(ConsensusError::UnknownKind(s.to_string())),
        }
    }
}

impl std::fmt::Display for ConsensusKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("unknown consensus kind {0:?}")]
    UnknownKind(String),
    #[error("proof of stake requires a positive total stake")]
    ZeroStake,
    #[error("delegated proof of stake requires at least one delegate")]
    NoDelegates,
    #[error("delegate {0} is listed twice")]
    DuplicateDelegate(Address),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    pub kind: ConsensusKind,
    #[serde(default = "default_difficulty")]
    pub difficulty_bits: u32,
    #[serde(default)]
    pub stakes: BTreeMap<Address, u64>,
    #[serde(default)]
    pub delegates: Vec<Address>,
    /// Nominal block interval; defaults per kind.
    #[serde(default)]
    pub slot_ms: Option<u64>,
    #[serde(default = "default_compression")]
    pub time_compression: f64,
    #[serde(default = "default_depth")]
    pub confirmation_depth: u64,
    #[serde(default = "default_max_txs")]
    pub max_block_txs: usize,
}

fn default_difficulty() -> u32 {
    16
}
fn default_compression() -> f64 {
    1.0
}
fn default_depth() -> u64 {
    3
}
fn default_max_txs() -> usize {
    DEFAULT_MAX_BLOCK_TXS
}

impl ConsensusConfig {
    pub fn new(kind: ConsensusKind) -> ConsensusConfig {
        ConsensusConfig {
            kind,
            difficulty_bits: default_difficulty(),
            stakes: BTreeMap::new(),
            delegates: Vec::new(),
            slot_ms: None,
            time_compression: default_compression(),
            confirmation_depth: default_depth(),
            max_block_txs: default_max_txs(),
        }
    }

    pub fn validate(&self) -> Result<(), ConsensusError> {
        if !(self.time_compression.is_finite() && self.time_compression > 0.0) {
            return Err(ConsensusError::InvalidParameter("time_compression must be positive"));
        }
        if self.slot_ms == Some(0) {
            return Err(ConsensusError::InvalidParameter("slot_ms must be positive"));
        }
        if self.max_block_txs == 0 {
            return Err(ConsensusError::InvalidParameter("max_block_txs must be positive"));
        }
        if self.confirmation_depth == 0 {
            return Err(ConsensusError::InvalidParameter("confirmation_depth must be positive"));
        }
        if self.difficulty_bits > 256 {
            return Err(ConsensusError::InvalidParameter("difficulty_bits exceeds the digest width"));
        }
        match self.kind {
            ConsensusKind::PoW => {}
            ConsensusKind::PoS => {
                if total_stake(&self.stakes) == 0 {
                    return Err(ConsensusError::ZeroStake);
                }
            }
            ConsensusKind::DPoS => {
                if self.delegates.is_empty() {
                    return Err(ConsensusError::NoDelegates);
                }
                let mut seen = BTreeSet::new();
                for d in &self.delegates {
                    if !seen.insert(d) {
                        return Err(ConsensusError::DuplicateDelegate(*d));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn nominal_slot_ms(&self) -> u64 {
        self.slot_ms.unwrap_or_else(|| self.kind.default_slot_ms())
    }

    /// Block interval after time compression, at least 1 ms.
    pub fn effective_slot_ms(&self) -> u64 {
        ((self.nominal_slot_ms() as f64 / self.time_compression).round() as u64).max(1)
    }

    /// Distinct proposers needed before a DPoS block is final.
    pub fn dpos_quorum(&self) -> usize {
        self.delegates.len() / 2 + 1
    }

    /// Whether a block is confirmed, given the proposers of that block and
    /// each of its descendants up to the tip.
    pub fn is_confirmed(&self, proposers: &[Address]) -> bool {
        match self.kind {
            ConsensusKind::DPoS => proposers.iter().collect::<BTreeSet<_>>().len() >= self.dpos_quorum(),
            _ => proposers.len() as u64 >= self.confirmation_depth,
        }
    }
}

/// Seal carried in each block header.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SealProof {
    Genesis,
    PoW { nonce: u64 },
    PoS { proposer: Address, selection_seed: Digest, slot: u64 },
    DPoS { slot_index: u64 },
}

impl SealProof {
    pub fn slot(&self) -> Option<u64> {
        match self {
            SealProof::PoS { slot, .. } => Some(*slot),
            SealProof::DPoS { slot_index } => Some(*slot_index),
            _ => None,
        }
    }

    pub fn kind(&self) -> Option<ConsensusKind> {
        match self {
            SealProof::Genesis => None,
            SealProof::PoW { .. } => Some(ConsensusKind::PoW),
            SealProof::PoS { .. } => Some(ConsensusKind::PoS),
            SealProof::DPoS { .. } => Some(ConsensusKind::DPoS),
        }
    }
}

/// Slot index containing `timestamp`, counted from genesis. `None` before
/// genesis or under proof of work.
pub fn slot_at(config: &ConsensusConfig, genesis_timestamp: u64, timestamp: u64) -> Option<u64> {
    if config.kind == ConsensusKind::PoW || timestamp < genesis_timestamp {
        return None;
    }
    Some((timestamp - genesis_timestamp) / config.effective_slot_ms())
}

/// Start time of `slot`.
pub fn slot_start(config: &ConsensusConfig, genesis_timestamp: u64, slot: u64) -> u64 {
    genesis_timestamp + slot * config.effective_slot_ms()
}

fn with_nonce(header: &BlockHeader, nonce: u64) -> BlockHeader {
    BlockHeader { consensus_proof: SealProof::PoW { nonce }, ..header.clone() }
}

pub fn pow_verify(header: &BlockHeader, nonce: u64, difficulty_bits: u32) -> bool {
    with_nonce(header, nonce).digest().leading_zero_bits() >= difficulty_bits
}

/// Sequential nonce search from 0. Returns the nonce and the number of
/// digests computed.
pub fn pow_mine(header: &BlockHeader, difficulty_bits: u32) -> (u64, u64) {
    let mut candidate = with_nonce(header, 0);
    let mut nonce = 0u64;
    loop {
        candidate.consensus_proof = SealProof::PoW { nonce };
        if candidate.digest().leading_zero_bits() >= difficulty_bits {
            return (nonce, nonce + 1);
        }
        nonce = nonce.wrapping_add(1);
    }
}

/// Nonce search over `threads` workers striding the nonce space. The
/// lowest nonce found before the workers stop is returned.
pub fn pow_mine_parallel(header: &BlockHeader, difficulty_bits: u32, threads: usize) -> u64 {
    let threads = threads.max(1) as u64;
    let found = AtomicBool::new(false);
    let best = AtomicU64::new(u64::MAX);
    thread::scope(|s| {
        for start in 0..threads {
            let (found, best) = (&found, &best);
            s.spawn(move || {
                let mut candidate = with_nonce(header, start);
                let mut nonce = start;
                while !found.load(Ordering::Relaxed) {
                    candidate.consensus_proof = SealProof::PoW { nonce };
                    if candidate.digest().leading_zero_bits() >= difficulty_bits {
                        best.fetch_min(nonce, Ordering::SeqCst);
                        found.store(true, Ordering::SeqCst);
                        return;
                    }
                    nonce = match nonce.checked_add(threads) {
                        Some(n) => n,
                        None => return,
                    };
                }
            });
        }
    });
    best.load(Ordering::SeqCst)
}

/// Proposer-selection seed for a PoS slot. The slot is mixed in so that a
/// new proposer is drawn when the selected one misses its slot.
pub fn pos_seed(parent: &Digest, height: u64, slot: u64) -> Digest {
    digest_parts(&[parent.as_bytes(), &height.to_be_bytes(), &slot.to_be_bytes()])
}

fn total_stake(stakes: &BTreeMap<Address, u64>) -> u128 {
    stakes.values().map(|&s| s as u128).sum()
}

/// Stake-weighted choice: the first 16 seed bytes, reduced modulo the total
/// stake, land in one staker's cumulative interval (address order).
pub fn pos_select(stakes: &BTreeMap<Address, u64>, seed: &Digest) -> Result<Address, ConsensusError> {
    let total = total_stake(stakes);
    if total == 0 {
        return Err(ConsensusError::ZeroStake);
    }
    let mut head = [0u8; 16];
    head.copy_from_slice(&seed.as_bytes()[..16]);
    let mut point = u128::from_be_bytes(head) % total;
    for (address, &stake) in stakes {
        let stake = stake as u128;
        if point < stake {
            return Ok(*address);
        }
        point -= stake;
    }
    unreachable!("point is below the total stake")
}

pub fn dpos_schedule(delegates: &[Address], slot_index: u64) -> Result<Address, ConsensusError> {
    if delegates.is_empty() {
        return Err(ConsensusError::NoDelegates);
    }
    Ok(delegates[(slot_index % delegates.len() as u64) as usize])
}

/// Checks that `proof` is a valid seal of `header` under `config`.
pub fn verify_seal(config: &ConsensusConfig, header: &BlockHeader, proof: &SealProof) -> bool {
    match (config.kind, proof) {
        (ConsensusKind::PoW, SealProof::PoW { nonce }) => pow_verify(header, *nonce, config.difficulty_bits),
        (ConsensusKind::PoS, SealProof::PoS { proposer, selection_seed, slot }) => {
            *selection_seed == pos_seed(&header.parent, header.height, *slot)
                && pos_select(&config.stakes, selection_seed).is_ok_and(|chosen| chosen == *proposer)
                && header.proposer == *proposer
        }
        (ConsensusKind::DPoS, SealProof::DPoS { slot_index }) => {
            dpos_schedule(&config.delegates, *slot_index).is_ok_and(|d| d == header.proposer)
        }
        _ => false,
    }
}

/// Seal that `proposer` may attach at `slot`, if it is the scheduled or
/// selected proposer there. Proof of work returns `None`; mine instead.
pub fn slot_proof(
    config: &ConsensusConfig,
    parent: &Digest,
    height: u64,
    slot: u64,
    proposer: &Address,
) -> Option<SealProof> {
    match config.kind {
        ConsensusKind::PoW => None,
        ConsensusKind::PoS => {
            let seed = pos_seed(parent, height, slot);
            (pos_select(&config.stakes, &seed).ok()? == *proposer)
                .then_some(SealProof::PoS { proposer: *proposer, selection_seed: seed, slot })
        }
        ConsensusKind::DPoS => {
            (dpos_schedule(&config.delegates, slot).ok()? == *proposer).then_some(SealProof::DPoS { slot_index: slot })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::digest;

    fn addr(b: u8) -> Address {
        Address([b; 20])
    }

    fn header(seed: u64) -> BlockHeader {
        BlockHeader {
            height: 1,
            parent: digest(&seed.to_be_bytes()),
            merkle_root: Digest::ZERO,
            timestamp: seed,
            proposer: addr(1),
            consensus_proof: SealProof::PoW { nonce: 0 },
        }
    }

    #[test]
    fn difficulty_zero_accepts_nonce_zero() {
        assert_eq!(pow_mine(&header(0), 0), (0, 1));
        assert!(pow_verify(&header(5), 12345, 0));
    }

    #[test]
    fn mined_nonce_verifies_by_recomputation() {
        let h = header(7);
        let (nonce, _) = pow_mine(&h, 8);
        let mut sealed = h.clone();
        sealed.consensus_proof = SealProof::PoW { nonce };
        let d = crate::codec::encode(&sealed);
        assert_eq!(digest(&d).as_bytes()[0], 0);
        assert!(pow_verify(&h, nonce, 8));
    }

    #[test]
    fn mean_attempts_at_difficulty_eight() {
        let runs = 100u64;
        let total: u64 = (0..runs).map(|i| pow_mine(&header(i), 8).1).sum();
        let mean = total as f64 / runs as f64;
        assert!((128.0..=512.0).contains(&mean), "mean attempts {mean}");
    }

    #[test]
    fn next_nonce_usually_fails() {
        let mut fails = 0;
        for i in 0..200 {
            let h = header(i);
            let (nonce, _) = pow_mine(&h, 8);
            if !pow_verify(&h, nonce + 1, 8) {
                fails += 1;
            }
        }
        // P(fail) = 255/256 per trial
        assert!(fails >= 194, "{fails}");
    }

    #[test]
    fn parallel_mining_verifies() {
        let h = header(99);
        let nonce = pow_mine_parallel(&h, 10, 4);
        assert!(pow_verify(&h, nonce, 10));
    }

    #[test]
    fn pos_single_staker_and_zero_stake() {
        let single = BTreeMap::from([(addr(1), 5)]);
        let with_zero = BTreeMap::from([(addr(1), 5), (addr(2), 0)]);
        for i in 0..500u64 {
            let seed = digest(&i.to_be_bytes());
            assert_eq!(pos_select(&single, &seed).unwrap(), addr(1));
            assert_eq!(pos_select(&with_zero, &seed).unwrap(), addr(1));
        }
        let none = BTreeMap::from([(addr(1), 0)]);
        assert_eq!(pos_select(&none, &Digest::ZERO), Err(ConsensusError::ZeroStake));
        assert_eq!(pos_select(&BTreeMap::new(), &Digest::ZERO), Err(ConsensusError::ZeroStake));
    }

    #[test]
    fn pos_frequency_matches_stake() {
        let stakes = BTreeMap::from([(addr(0xa), 3), (addr(0xb), 1)]);
        let n = 10_000u64;
        let a = (0..n).filter(|i| pos_select(&stakes, &digest(&i.to_be_bytes())).unwrap() == addr(0xa)).count();
        let freq = a as f64 / n as f64;
        assert!((freq - 0.75).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn pos_chi_square_over_four_stakers() {
        let stakes = BTreeMap::from([(addr(1), 1), (addr(2), 2), (addr(3), 3), (addr(4), 4)]);
        let n = 20_000u64;
        let mut counts = BTreeMap::new();
        for i in 0..n {
            *counts.entry(pos_select(&stakes, &digest(&i.to_le_bytes())).unwrap()).or_insert(0u64) += 1;
        }
        let chi2: f64 = stakes
            .iter()
            .map(|(a, &s)| {
                let expected = n as f64 * s as f64 / 10.0;
                let observed = counts[a] as f64;
                (observed - expected).powi(2) / expected
            })
            .sum();
        // critical value for 3 degrees of freedom at p = 0.01
        assert!(chi2 < 11.345, "chi2 {chi2}");
    }

    #[test]
    fn dpos_round_robin() {
        let delegates = [addr(1), addr(2), addr(3)];
        assert_eq!(dpos_schedule(&delegates, 0).unwrap(), addr(1));
        assert_eq!(dpos_schedule(&delegates, 3).unwrap(), addr(1));
        assert_eq!(dpos_schedule(&delegates, 5).unwrap(), addr(3));
        assert_eq!(dpos_schedule(&[], 0), Err(ConsensusError::NoDelegates));
    }

    #[test]
    fn verify_seal_per_kind() {
        let mut pow = ConsensusConfig::new(ConsensusKind::PoW);
        pow.difficulty_bits = 6;
        let mut h = header(3);
        let (nonce, _) = pow_mine(&h, 6);
        h.consensus_proof = SealProof::PoW { nonce };
        assert!(verify_seal(&pow, &h, &h.consensus_proof));

        let mut dpos = ConsensusConfig::new(ConsensusKind::DPoS);
        dpos.delegates = vec![addr(1), addr(2)];
        assert!(!verify_seal(&dpos, &h, &h.consensus_proof), "variant mismatch");
        let proof = SealProof::DPoS { slot_index: 2 };
        assert!(verify_seal(&dpos, &h, &proof));
        assert!(!verify_seal(&dpos, &h, &SealProof::DPoS { slot_index: 1 }));

        let mut pos = ConsensusConfig::new(ConsensusKind::PoS);
        pos.stakes = BTreeMap::from([(addr(1), 1), (addr(2), 1)]);
        let mut hits = [false; 2];
        for slot in 0..64 {
            let seed = pos_seed(&h.parent, h.height, slot);
            let chosen = pos_select(&pos.stakes, &seed).unwrap();
            let other = if chosen == addr(1) { addr(2) } else { addr(1) };
            let honest = SealProof::PoS { proposer: chosen, selection_seed: seed, slot };
            let forged = SealProof::PoS { proposer: other, selection_seed: seed, slot };
            let mut hh = h.clone();
            hh.proposer = chosen;
            assert!(verify_seal(&pos, &hh, &honest));
            hh.proposer = other;
            assert!(!verify_seal(&pos, &hh, &forged));
            hits[(chosen == addr(2)) as usize] = true;
        }
        assert_eq!(hits, [true, true]);
    }

    #[test]
    fn config_invariants() {
        assert_eq!(ConsensusConfig::new(ConsensusKind::PoS).validate(), Err(ConsensusError::ZeroStake));
        assert_eq!(ConsensusConfig::new(ConsensusKind::DPoS).validate(), Err(ConsensusError::NoDelegates));
        assert!(ConsensusConfig::new(ConsensusKind::PoW).validate().is_ok());
        let mut c = ConsensusConfig::new(ConsensusKind::PoW);
        c.time_compression = 0.0;
        assert!(c.validate().is_err());
        assert!("PoX".parse::<ConsensusKind>().is_err());
    }

    #[test]
    fn compressed_intervals() {
        let ms = |k| {
            let mut c = ConsensusConfig::new(k);
            c.time_compression = 100.0;
            c.effective_slot_ms()
        };
        assert_eq!(ms(ConsensusKind::PoW), 6000);
        assert_eq!(ms(ConsensusKind::PoS), 600);
        assert_eq!(ms(ConsensusKind::DPoS), 300);
    }

    #[test]
    fn dpos_quorum_confirmation() {
        let mut c = ConsensusConfig::new(ConsensusKind::DPoS);
        c.delegates = (1..=5).map(addr).collect();
        assert!(!c.is_confirmed(&[addr(1), addr(2), addr(1)]));
        assert!(c.is_confirmed(&[addr(1), addr(2), addr(3)]));
        let p = ConsensusConfig::new(ConsensusKind::PoS);
        assert!(!p.is_confirmed(&[addr(1), addr(1)]));
        assert!(p.is_confirmed(&[addr(1), addr(1), addr(1)]));
    }
}
