//! Canonical byte encoding for every signed or hashed structure.
//!
//! Fields are written in declaration order, integers are big-endian and
//! fixed-width, and byte strings, strings and sequences carry a `u64`
//! big-endian length prefix. Enum variants are tagged with a `u32` index.
//! Two implementations that follow these rules produce identical digests.

use bincode::Options;
use serde::{de::DeserializeOwned, Serialize};

/// Upper bound on a single decoded structure.
const DECODE_LIMIT: u64 = 64 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
#[error("canonical decoding failed: {0}")]
pub struct CodecError(String);

fn options() -> impl Options {
    bincode::DefaultOptions::new()
        .with_big_endian()
        .with_fixint_encoding()
        .reject_trailing_bytes()
        .with_limit(DECODE_LIMIT)
}

pub fn encode<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    options()
        .serialize(value)
        .expect("canonical encoding of in-memory values is infallible")
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    options()
        .deserialize(bytes)
        .map_err(|e| CodecError(e.to_string()))
}

/// Serde adapter for byte fields: lowercase hex in human-readable formats
/// (JSON), raw length-prefixed bytes in the canonical encoding.
pub mod hex_bytes {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, T: AsRef<[u8]>>(bytes: &T, s: S) -> Result<S::Ok, S::Error> {
        if s.is_human_readable() {
            s.serialize_str(&hex::encode(bytes.as_ref()))
        } else {
            s.serialize_bytes(bytes.as_ref())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        if d.is_human_readable() {
            let s = String::deserialize(d)?;
            hex::decode(s.trim_start_matches("0x")).map_err(D::Error::custom)
        } else {
            serde_bytes_vec(d)
        }
    }

    pub(crate) fn serde_bytes_vec<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        struct V;
        impl<'de> serde::de::Visitor<'de> for V {
            type Value = Vec<u8>;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a byte string")
            }
            fn visit_bytes<E: Error>(self, v: &[u8]) -> Result<Vec<u8>, E> {
                Ok(v.to_vec())
            }
            fn visit_byte_buf<E: Error>(self, v: Vec<u8>) -> Result<Vec<u8>, E> {
                Ok(v)
            }
        }
        d.deserialize_byte_buf(V)
    }
}

/// Same as [`hex_bytes`] but for fixed-size arrays.
pub mod hex_array {
    use serde::{de::Error, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(bytes: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        super::hex_bytes::serialize(bytes, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
        let v = super::hex_bytes::deserialize(d)?;
        let len = v.len();
        v.try_into()
            .map_err(|_| D::Error::custom(format!("expected {N} bytes, got {len}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Sample {
        a: u32,
        b: u64,
        #[serde(with = "hex_bytes")]
        c: Vec<u8>,
        d: String,
    }

    #[test]
    fn layout_is_big_endian_and_length_prefixed() {
        let s = Sample { a: 1, b: 2, c: vec![0xAA, 0xBB], d: "hi".into() };
        let bytes = encode(&s);
        let expected: Vec<u8> = [
            &[0, 0, 0, 1][..],
            &[0, 0, 0, 0, 0, 0, 0, 2],
            &[0, 0, 0, 0, 0, 0, 0, 2, 0xAA, 0xBB],
            &[0, 0, 0, 0, 0, 0, 0, 2, b'h', b'i'],
        ]
        .concat();
        assert_eq!(bytes, expected);
        assert_eq!(decode::<Sample>(&bytes).unwrap(), s);
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&7u32);
        bytes.push(0);
        assert!(decode::<u32>(&bytes).is_err());
    }

    #[test]
    fn json_uses_hex() {
        let s = Sample { a: 1, b: 2, c: vec![0xAA], d: String::new() };
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"aa\""));
        assert_eq!(serde_json::from_str::<Sample>(&json).unwrap(), s);
    }
}
