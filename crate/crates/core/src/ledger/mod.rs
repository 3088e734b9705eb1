//! Transactions, blocks, Merkle commitments, validation and fork choice.

mod chain;
mod merkle;
mod store;
mod validate;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::consensus::SealProof;
use crate::crypto::{digest, sign, verify, Address, Digest, Identity, PublicKey, Signature};
use crate::ehr::{GenesisAccount, Payload};

pub use chain::{better_tip, fork_choice, Chain, ChainError};
pub use merkle::merkle_root;
pub use store::{read_blocks, write_blocks, ChainStore, StoreError};
pub use validate::{
    build_block, check_transaction, validate_child, validate_genesis, BuildError, ParentView, SigCache, Violation,
};

/// Default cap on transactions per block.
pub const DEFAULT_MAX_BLOCK_TXS: usize = 256;
/// Accepted skew between a block's timestamp and the validator's clock.
pub const CLOCK_TOLERANCE_MS: u64 = 120_000;

#[derive(Serialize)]
struct TxBody<'a> {
    signer: &'a Address,
    nonce: u64,
    timestamp: u64,
    payload: &'a Payload,
}

/// A signed request. `tx_id` is the digest of the canonical encoding of
/// `(signer, nonce, timestamp, payload)`; the signature covers the same bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: Digest,
    pub signer: Address,
    pub nonce: u64,
    pub timestamp: u64,
    pub payload: Payload,
    pub signature: Signature,
}

impl Transaction {
    pub fn signing_bytes(signer: &Address, nonce: u64, timestamp: u64, payload: &Payload) -> Vec<u8> {
        codec::encode(&TxBody { signer, nonce, timestamp, payload })
    }

    pub fn new_signed(identity: &Identity, nonce: u64, timestamp: u64, payload: Payload) -> Transaction {
        let signer = identity.address();
        let body = Self::signing_bytes(&signer, nonce, timestamp, &payload);
        Transaction { tx_id: digest(&body), signer, nonce, timestamp, signature: sign(identity, &body), payload }
    }

    /// Assembles a transaction from a signature produced elsewhere (client-side signing).
    pub fn from_parts(signer: Address, nonce: u64, timestamp: u64, payload: Payload, signature: Signature) -> Transaction {
        let body = Self::signing_bytes(&signer, nonce, timestamp, &payload);
        Transaction { tx_id: digest(&body), signer, nonce, timestamp, payload, signature }
    }

    pub fn computed_id(&self) -> Digest {
        digest(&Self::signing_bytes(&self.signer, self.nonce, self.timestamp, &self.payload))
    }

    /// Key the signature must verify under: the payload's key for
    /// self-registration and genesis, otherwise the registered key.
    pub fn embedded_key(&self) -> Option<&PublicKey> {
        match &self.payload {
            Payload::RegisterUser { public_key, .. } => Some(public_key),
            Payload::Genesis { accounts, .. } => accounts.first().map(|a: &GenesisAccount| &a.public_key),
            _ => None,
        }
    }

    /// Checks `tx_id` and the signature against `key`.
    pub fn verify_with(&self, key: &PublicKey) -> bool {
        let body = Self::signing_bytes(&self.signer, self.nonce, self.timestamp, &self.payload);
        digest(&body) == self.tx_id && key.address() == self.signer && verify(key, &body, &self.signature)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub parent: Digest,
    pub merkle_root: Digest,
    pub timestamp: u64,
    pub proposer: Address,
    pub consensus_proof: SealProof,
}

impl BlockHeader {
    pub fn digest(&self) -> Digest {
        digest(&codec::encode(self))
    }
}

/// Header, the proposer's signature over the header encoding, and the
/// ordered transactions committed by `merkle_root`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub proposer_key: PublicKey,
    pub proposer_signature: Signature,
    pub transactions: Vec<Transaction>,
}

impl Block {
    /// Signs `header` as its proposer.
    pub fn new_signed(header: BlockHeader, transactions: Vec<Transaction>, proposer: &Identity) -> Block {
        let proposer_signature = sign(proposer, &codec::encode(&header));
        Block { header, proposer_key: proposer.public_key().clone(), proposer_signature, transactions }
    }

    pub fn digest(&self) -> Digest {
        self.header.digest()
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn signature_valid(&self) -> bool {
        self.proposer_key.address() == self.header.proposer
            && verify(&self.proposer_key, &codec::encode(&self.header), &self.proposer_signature)
    }

    /// Replaces the seal and re-signs the header.
    pub fn reseal(&mut self, proof: SealProof, proposer: &Identity) {
        self.header.consensus_proof = proof;
        self.proposer_signature = sign(proposer, &codec::encode(&self.header));
    }

    pub fn encode(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Block, codec::CodecError> {
        codec::decode(bytes)
    }
}

/// Builds the height-0 block. The admin signs a single genesis transaction
/// that registers the admin plus any pre-activated `accounts`.
pub fn genesis_block(
    admin: &Identity,
    admin_name: &str,
    accounts: Vec<GenesisAccount>,
    system_start_date: Option<chrono::NaiveDate>,
    timestamp: u64,
) -> Block {
    let mut all = vec![GenesisAccount {
        public_key: admin.public_key().clone(),
        role: crate::ehr::Role::Admin,
        profile: crate::ehr::Profile::named(admin_name),
    }];
    all.extend(accounts);
    let tx = Transaction::new_signed(admin, 0, timestamp, Payload::Genesis { accounts: all, system_start_date });
    let header = BlockHeader {
        height: 0,
        parent: Digest::ZERO,
        merkle_root: merkle_root(std::slice::from_ref(&tx)),
        timestamp,
        proposer: admin.address(),
        consensus_proof: SealProof::Genesis,
    };
    let proposer_signature = sign(admin, &codec::encode(&header));
    Block { header, proposer_key: admin.public_key().clone(), proposer_signature, transactions: vec![tx] }
}

#[cfg(test)]
mod tests;
