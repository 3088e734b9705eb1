//! Envelope encryption of record payloads.
//!
//! Each record is sealed under a fresh ChaCha20-Poly1305 key. That key is
//! wrapped once per reader with an ECIES-style construction: an ephemeral
//! secp256k1 key agrees on a shared secret with the reader's public key,
//! HKDF-SHA256 derives a key-encryption key, and the record key is sealed
//! under it.

use std::collections::BTreeMap;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use k256::ecdh::diffie_hellman;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::{Address, CryptoError, Identity, PublicKey};
use crate::codec::hex_bytes;

const WRAP_INFO: &[u8] = b"medledger/key-wrap/v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrappedKey {
    pub ephemeral_public_key: PublicKey,
    #[serde(with = "hex_bytes")]
    pub sealed_key: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncryptedRecord {
    pub owner: Address,
    #[serde(with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub nonce: Vec<u8>,
    pub wrapped_keys: BTreeMap<Address, WrappedKey>,
}

impl EncryptedRecord {
    /// Addresses able to decrypt this record.
    pub fn readers(&self) -> impl Iterator<Item = &Address> {
        self.wrapped_keys.keys()
    }

    pub fn can_decrypt(&self, address: &Address) -> bool {
        self.wrapped_keys.contains_key(address)
    }
}

fn kek(shared: &[u8], ephemeral: &PublicKey, recipient: &PublicKey) -> Key {
    let mut salt = Vec::with_capacity(66);
    salt.extend_from_slice(ephemeral.as_bytes());
    salt.extend_from_slice(recipient.as_bytes());
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut out = [0u8; 32];
    hk.expand(WRAP_INFO, &mut out).expect("32 bytes is a valid HKDF length");
    out.into()
}

fn wrap_key(record_key: &[u8; 32], recipient: &PublicKey) -> WrappedKey {
    let ephemeral = super::random_identity();
    let recipient_point = k256::PublicKey::from_sec1_bytes(recipient.as_bytes())
        .expect("public key validated on construction");
    let shared = diffie_hellman(ephemeral.secret_scalar(), recipient_point.as_affine());
    let key = kek(shared.raw_secret_bytes(), ephemeral.public_key(), recipient);
    // The key-encryption key is single-use, so a fixed nonce is sound.
    let sealed_key = ChaCha20Poly1305::new(&key)
        .encrypt(Nonce::from_slice(&[0u8; 12]), record_key.as_slice())
        .expect("sealing 32 bytes cannot fail");
    WrappedKey { ephemeral_public_key: ephemeral.public_key().clone(), sealed_key }
}

fn unwrap_key(wrapped: &WrappedKey, reader: &Identity) -> Result<[u8; 32], CryptoError> {
    let eph = k256::PublicKey::from_sec1_bytes(wrapped.ephemeral_public_key.as_bytes())
        .map_err(|_| CryptoError::DecryptionFailed)?;
    let shared = diffie_hellman(reader.secret_scalar(), eph.as_affine());
    let key = kek(shared.raw_secret_bytes(), &wrapped.ephemeral_public_key, reader.public_key());
    let plain = ChaCha20Poly1305::new(&key)
        .decrypt(Nonce::from_slice(&[0u8; 12]), wrapped.sealed_key.as_slice())
        .map_err(|_| CryptoError::DecryptionFailed)?;
    plain.try_into().map_err(|_| CryptoError::DecryptionFailed)
}

/// Encrypts `plaintext` readable by `owner` and by every key in
/// `additional_readers`. The owner is always a reader.
pub fn encrypt_to(plaintext: &[u8], owner: &PublicKey, additional_readers: &[PublicKey]) -> EncryptedRecord {
    let mut rng = rand::thread_rng();
    let mut record_key = [0u8; 32];
    rng.fill_bytes(&mut record_key);
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let ciphertext = ChaCha20Poly1305::new(&record_key.into())
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("in-memory encryption cannot fail");
    let mut wrapped_keys = BTreeMap::new();
    for pk in std::iter::once(owner).chain(additional_readers) {
        wrapped_keys.entry(pk.address()).or_insert_with(|| wrap_key(&record_key, pk));
    }
    EncryptedRecord { owner: owner.address(), ciphertext, nonce: nonce.to_vec(), wrapped_keys }
}

pub fn encrypt_record(plaintext: &[u8], owner: &Identity) -> EncryptedRecord {
    encrypt_to(plaintext, owner.public_key(), &[])
}

pub fn decrypt_record(record: &EncryptedRecord, reader: &Identity) -> Result<Vec<u8>, CryptoError> {
    let wrapped = record
        .wrapped_keys
        .get(&reader.address())
        .ok_or(CryptoError::Unauthorized(reader.address()))?;
    let key = unwrap_key(wrapped, reader)?;
    if record.nonce.len() != 12 {
        return Err(CryptoError::DecryptionFailed);
    }
    ChaCha20Poly1305::new(&key.into())
        .decrypt(Nonce::from_slice(&record.nonce), record.ciphertext.as_slice())
        .map_err(|_| CryptoError::DecryptionFailed)
}

/// Adds a wrapped key for `grantee`. Only the record owner may grant;
/// granting an existing reader returns the record unchanged.
pub fn grant_record_access(
    record: &EncryptedRecord,
    owner: &Identity,
    grantee: &PublicKey,
) -> Result<EncryptedRecord, CryptoError> {
    if owner.address() != record.owner || !record.can_decrypt(&owner.address()) {
        return Err(CryptoError::Unauthorized(owner.address()));
    }
    let mut out = record.clone();
    if out.can_decrypt(&grantee.address()) {
        return Ok(out);
    }
    let key = unwrap_key(&record.wrapped_keys[&owner.address()], owner)?;
    out.wrapped_keys.insert(grantee.address(), wrap_key(&key, grantee));
    Ok(out)
}

/// Re-encrypts the plaintext under a fresh key for the owner and every
/// remaining reader in `keep`. Data already decrypted by the removed reader
/// cannot be recalled; only the returned record is protected.
pub fn revoke_record_access(
    record: &EncryptedRecord,
    owner: &Identity,
    remaining_readers: &[PublicKey],
    revoked: &Address,
) -> Result<EncryptedRecord, CryptoError> {
    if owner.address() != record.owner {
        return Err(CryptoError::Unauthorized(owner.address()));
    }
    let plaintext = decrypt_record(record, owner)?;
    let keep: Vec<PublicKey> = remaining_readers
        .iter()
        .filter(|pk| pk.address() != *revoked && record.can_decrypt(&pk.address()))
        .cloned()
        .collect();
    Ok(encrypt_to(&plaintext, owner.public_key(), &keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_identity;

    #[test]
    fn owner_roundtrip() {
        let owner = generate_identity(b"patient").unwrap();
        let rec = encrypt_record(b"blood panel", &owner);
        assert_eq!(rec.wrapped_keys.len(), 1);
        assert!(rec.can_decrypt(&owner.address()));
        assert_eq!(decrypt_record(&rec, &owner).unwrap(), b"blood panel");
    }

    #[test]
    fn encryption_is_randomized() {
        let owner = generate_identity(b"patient").unwrap();
        let a = encrypt_record(b"same", &owner);
        let b = encrypt_record(b"same", &owner);
        assert_ne!(a.ciphertext, b.ciphertext);
        assert_ne!(a.nonce, b.nonce);
    }

    #[test]
    fn non_owner_denied() {
        let owner = generate_identity(b"patient").unwrap();
        let stranger = generate_identity(b"stranger").unwrap();
        let rec = encrypt_record(b"x", &owner);
        assert_eq!(decrypt_record(&rec, &stranger), Err(CryptoError::Unauthorized(stranger.address())));
    }

    #[test]
    fn grant_then_decrypt_and_idempotence() {
        let owner = generate_identity(b"patient").unwrap();
        let doctor = generate_identity(b"doctor").unwrap();
        let rec = encrypt_record(b"x-ray", &owner);
        let granted = grant_record_access(&rec, &owner, doctor.public_key()).unwrap();
        assert_eq!(granted.ciphertext, rec.ciphertext);
        assert_eq!(decrypt_record(&granted, &doctor).unwrap(), b"x-ray");
        let twice = grant_record_access(&granted, &owner, doctor.public_key()).unwrap();
        assert_eq!(twice.wrapped_keys.len(), 2);
        assert_eq!(twice, granted);
    }

    #[test]
    fn stranger_cannot_grant() {
        let owner = generate_identity(b"patient").unwrap();
        let stranger = generate_identity(b"stranger").unwrap();
        let rec = encrypt_record(b"x", &owner);
        assert!(matches!(
            grant_record_access(&rec, &stranger, stranger.public_key()),
            Err(CryptoError::Unauthorized(_))
        ));
    }

    #[test]
    fn revoke_reencrypts_forward() {
        let owner = generate_identity(b"patient").unwrap();
        let d1 = generate_identity(b"d1").unwrap();
        let d2 = generate_identity(b"d2").unwrap();
        let rec = encrypt_to(b"history", owner.public_key(), &[d1.public_key().clone(), d2.public_key().clone()]);
        let revoked = revoke_record_access(
            &rec,
            &owner,
            &[d1.public_key().clone(), d2.public_key().clone()],
            &d1.address(),
        )
        .unwrap();
        assert!(decrypt_record(&revoked, &d1).is_err());
        assert_eq!(decrypt_record(&revoked, &d2).unwrap(), b"history");
        assert_eq!(decrypt_record(&revoked, &owner).unwrap(), b"history");
        let readers: Vec<_> = revoked.readers().copied().collect();
        assert_eq!(readers.len(), 2);
    }

    #[test]
    fn tampered_ciphertext_fails() {
        let owner = generate_identity(b"patient").unwrap();
        let mut rec = encrypt_record(b"abc", &owner);
        rec.ciphertext[0] ^= 1;
        assert_eq!(decrypt_record(&rec, &owner), Err(CryptoError::DecryptionFailed));
    }
}
