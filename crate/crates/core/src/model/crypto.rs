//! Digests and the default signature scheme.
//!
//! Signatures default to a keyed-digest mock: a signature is
//! `SHA-256("reconf/sig" || public_key || message)`. It gives attributable,
//! reproducible signatures for simulation; it is not unforgeable. Anything
//! implementing [`SignatureScheme`] can replace it.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::KeyError;

/// 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash(pub [u8; 32]);

impl Hash {
    pub const ZERO: Hash = Hash([0u8; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Hash(out))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash({}..)", &self.to_hex()[..12])
    }
}

impl fmt::Display for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Hash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Hash::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// SHA-256 of `data`.
pub fn hash_bytes(data: &[u8]) -> Hash {
    Hash(Sha256::digest(data).into())
}

/// SHA-256 over a sequence of parts, each fed verbatim.
pub fn hash_parts(parts: &[&[u8]]) -> Hash {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Hash(h.finalize().into())
}

/// Verification key. In the mock scheme this is a digest of the secret seed.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PublicKey(pub Hash);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KeyError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| KeyError::BadLength {
            expected: 32,
            got: bytes.len(),
        })?;
        Ok(PublicKey(Hash(arr)))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}..)", &self.0.to_hex()[..8])
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature(pub Hash);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &self.0.to_hex()[..8])
    }
}

/// Secret signing key (32-byte seed).
#[derive(Clone)]
pub struct SigningKey {
    seed: [u8; 32],
    public: PublicKey,
}

impl SigningKey {
    /// Malformed key material is rejected here, never at sign time.
    pub fn from_bytes(seed: &[u8]) -> Result<Self, KeyError> {
        let seed: [u8; 32] = seed.try_into().map_err(|_| KeyError::BadLength {
            expected: 32,
            got: seed.len(),
        })?;
        if seed == [0u8; 32] {
            return Err(KeyError::AllZero);
        }
        let public = PublicKey(hash_parts(&[b"reconf/pk", &seed]));
        Ok(SigningKey { seed, public })
    }

    /// Deterministic key for replica `index` of `epoch`.
    pub fn for_replica(epoch: u64, index: u32) -> Self {
        let seed = hash_parts(&[
            b"reconf/replica-key",
            &epoch.to_be_bytes(),
            &index.to_be_bytes(),
        ]);
        SigningKey::from_bytes(&seed.0).expect("derived seeds are 32 non-zero bytes")
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        MockScheme.sign(self, msg)
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKey")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

pub trait SignatureScheme {
    fn sign(&self, key: &SigningKey, msg: &[u8]) -> Signature;
    fn verify(&self, msg: &[u8], sig: &Signature, key: &PublicKey) -> bool;
}

/// Keyed-digest signatures, see the module docs.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockScheme;

impl SignatureScheme for MockScheme {
    fn sign(&self, key: &SigningKey, msg: &[u8]) -> Signature {
        let public = hash_parts(&[b"reconf/pk", &key.seed]);
        Signature(hash_parts(&[b"reconf/sig", public.as_bytes(), msg]))
    }

    fn verify(&self, msg: &[u8], sig: &Signature, key: &PublicKey) -> bool {
        hash_parts(&[b"reconf/sig", key.0.as_bytes(), msg]) == sig.0
    }
}

pub fn verify(msg: &[u8], sig: &Signature, key: &PublicKey) -> bool {
    MockScheme.verify(msg, sig, key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_digest_is_sha256_of_nothing() {
        assert_eq!(
            hash_bytes(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(hash_bytes(b"abc"), hash_bytes(b"abc"));
    }

    #[test]
    fn sign_verify_round_trip_and_tamper() {
        let k = SigningKey::for_replica(1, 1);
        let other = SigningKey::for_replica(1, 2);
        let sig = k.sign(b"hello");
        assert!(verify(b"hello", &sig, &k.public_key()));
        assert!(!verify(b"hellp", &sig, &k.public_key()));
        assert!(!verify(b"hello", &sig, &other.public_key()));
    }

    #[test]
    fn malformed_keys_rejected_at_construction() {
        assert_eq!(
            SigningKey::from_bytes(&[1u8; 31]).unwrap_err(),
            KeyError::BadLength {
                expected: 32,
                got: 31
            }
        );
        assert_eq!(
            SigningKey::from_bytes(&[0u8; 32]).unwrap_err(),
            KeyError::AllZero
        );
        assert!(PublicKey::from_bytes(&[7u8; 33]).is_err());
    }

    #[test]
    fn hash_hex_round_trip() {
        let h = hash_bytes(b"x");
        assert_eq!(Hash::from_hex(&h.to_hex()).unwrap(), h);
    }
}
