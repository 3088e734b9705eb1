use super::Transaction;
use crate::crypto::{digest, Digest};

fn hash_pair(left: &Digest, right: &Digest) -> Digest {
    let mut buf = [0u8; 64];
    buf[..32].copy_from_slice(&left.0);
    buf[32..].copy_from_slice(&right.0);
    digest(&buf)
}

/// Binary Merkle root over the transaction ids. Odd levels duplicate their
/// last node, a single id is its own root and the empty list commits to
/// `digest([0x00])`.
pub fn merkle_root(txs: &[Transaction]) -> Digest {
    merkle_root_of(txs.iter().map(|t| t.tx_id).collect())
}

/// Same commitment over ids recomputed from each transaction's body, so a
/// mutated body shows up as a root mismatch.
pub fn recomputed_merkle_root(txs: &[Transaction]) -> Digest {
    merkle_root_of(txs.iter().map(Transaction::computed_id).collect())
}

fn merkle_root_of(mut level: Vec<Digest>) -> Digest {
    if level.is_empty() {
        return digest(&[0x00]);
    }
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().expect("non-empty"));
        }
        level = level.chunks_exact(2).map(|p| hash_pair(&p[0], &p[1])).collect();
    }
    level[0]
}
