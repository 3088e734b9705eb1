//! Hashing, identities, signatures and record envelope encryption.
//!
//! - SHA-256 everywhere a digest is needed.
//! - secp256k1 ECDSA with RFC 6979 deterministic nonces for signatures.
//! - Addresses are the last 20 bytes of the SHA-256 of the compressed
//!   public key, rendered as 40 lowercase hex characters.

mod envelope;

use std::fmt;
use std::str::FromStr;

use k256::ecdsa::signature::{Signer, Verifier};
use k256::ecdsa::{SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::codec::{hex_array, hex_bytes};

pub use envelope::{
    decrypt_record, encrypt_record, encrypt_to, grant_record_access, revoke_record_access,
    EncryptedRecord, WrappedKey,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("identity seed must not be empty")]
    EmptySeed,
    #[error("invalid public key encoding")]
    InvalidPublicKey,
    #[error("address {0} is not authorized for this record")]
    Unauthorized(Address),
    #[error("record decryption failed")]
    DecryptionFailed,
    #[error("malformed hex: {0}")]
    BadHex(String),
}

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Digest(#[serde(with = "hex_array")] pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Number of leading zero bits, used by the proof-of-work target check.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for byte in self.0 {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros();
                break;
            }
        }
        bits
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl FromStr for Digest {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.trim_start_matches("0x")).map_err(|e| CryptoError::BadHex(e.to_string()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::BadHex("digest must be 32 bytes".into()))?;
        Ok(Digest(arr))
    }
}

pub fn digest(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Digest over several byte strings, each length-prefixed so that the
/// concatenation is unambiguous.
pub fn digest_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Account address: last 20 bytes of `digest(public key)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub fn from_public_key(pk: &PublicKey) -> Address {
        let d = digest(&pk.0);
        let mut out = [0u8; 20];
        out.copy_from_slice(&d.0[12..]);
        Address(out)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", self.to_hex())
    }
}

impl FromStr for Address {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim_start_matches("0x");
        if s.len() != 40 {
            return Err(CryptoError::BadHex(format!("address must be 40 hex chars, got {}", s.len())));
        }
        let bytes = hex::decode(s).map_err(|e| CryptoError::BadHex(e.to_string()))?;
        let mut out = [0u8; 20];
        out.copy_from_slice(&bytes);
        Ok(Address(out))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        hex_array::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        hex_array::deserialize(d).map(Address)
    }
}

/// SEC1 compressed secp256k1 point (33 bytes), validated on construction.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey([u8; 33]);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<PublicKey, CryptoError> {
        let vk = VerifyingKey::from_sec1_bytes(bytes).map_err(|_| CryptoError::InvalidPublicKey)?;
        Ok(Self::from_verifying_key(&vk))
    }

    fn from_verifying_key(vk: &VerifyingKey) -> PublicKey {
        let point = vk.to_encoded_point(true);
        let mut out = [0u8; 33];
        out.copy_from_slice(point.as_bytes());
        PublicKey(out)
    }

    pub fn as_bytes(&self) -> &[u8; 33] {
        &self.0
    }

    pub fn address(&self) -> Address {
        Address::from_public_key(self)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    fn verifying_key(&self) -> VerifyingKey {
        // Validated at construction.
        VerifyingKey::from_sec1_bytes(&self.0).expect("public key validated on construction")
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl FromStr for PublicKey {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.trim_start_matches("0x")).map_err(|e| CryptoError::BadHex(e.to_string()))?;
        PublicKey::from_bytes(&bytes)
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        hex_array::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw: [u8; 33] = hex_array::deserialize(d)?;
        PublicKey::from_bytes(&raw).map_err(serde::de::Error::custom)
    }
}

/// 64-byte `r || s` ECDSA signature. Arbitrary byte strings are representable
/// so that malformed input reaches [`verify`] and is rejected there.
#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Signature(#[serde(with = "hex_bytes")] pub Vec<u8>);

impl Signature {
    pub const LEN: usize = 64;

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0))
    }
}

/// A keypair plus its derived address.
#[derive(Clone)]
pub struct Identity {
    signing_key: SigningKey,
    public_key: PublicKey,
    address: Address,
}

impl Identity {
    pub fn public_key(&self) -> &PublicKey {
        &self.public_key
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(self, message)
    }

    pub(crate) fn secret_scalar(&self) -> k256::NonZeroScalar {
        *self.signing_key.as_nonzero_scalar()
    }
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity").field("address", &self.address).finish_non_exhaustive()
    }
}

/// Deterministically derives a keypair from `seed`. The secret scalar is
/// `SHA-256(seed || counter)` for the first counter yielding a valid scalar.
pub fn generate_identity(seed: &[u8]) -> Result<Identity, CryptoError> {
    if seed.is_empty() {
        return Err(CryptoError::EmptySeed);
    }
    let mut counter: u32 = 0;
    let signing_key = loop {
        let candidate = digest_parts(&[seed, &counter.to_be_bytes()]);
        if let Ok(key) = SigningKey::from_bytes(&candidate.0.into()) {
            break key;
        }
        counter += 1;
    };
    let public_key = PublicKey::from_verifying_key(signing_key.verifying_key());
    let address = public_key.address();
    Ok(Identity { signing_key, public_key, address })
}

/// Random identity for callers that do not need reproducibility.
pub fn random_identity() -> Identity {
    let seed: [u8; 32] = rand::random();
    generate_identity(&seed).expect("non-empty seed")
}

pub fn sign(identity: &Identity, message: &[u8]) -> Signature {
    let sig: k256::ecdsa::Signature = identity.signing_key.sign(message);
    Signature(sig.to_bytes().to_vec())
}

/// Malformed signatures verify as `false`; this never panics.
pub fn verify(public_key: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    if sig.0.len() != Signature::LEN {
        return false;
    }
    let Ok(parsed) = k256::ecdsa::Signature::from_slice(&sig.0) else {
        return false;
    };
    public_key.verifying_key().verify(message, &parsed).is_ok()
}
