//! Canonical byte encoding for every hashed or signed record.
//!
//! Layout rules, fixed so independent implementations agree byte for byte:
//!
//! * unsigned integers: big-endian, fixed width (`u8`, `u32`, `u64`)
//! * byte strings: `u32` length prefix, then the raw bytes
//! * 32-byte digests and keys: the raw 32 bytes, no prefix
//! * sequences: `u32` element count, then each element
//! * enums: one `u8` variant tag, then the variant's fields
//! * structs: fields in declaration order
//!
//! Digests of records are domain separated: `SHA-256(tag || 0x00 || encoding)`
//! where `tag` is the ASCII record name (see [`Encode::TAG`]).

use super::crypto::{hash_parts, Hash};

pub trait Encode {
    /// Domain-separation tag used by [`Encode::digest`].
    const TAG: &'static [u8];

    fn encode(&self, out: &mut Vec<u8>);

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }

    fn digest(&self) -> Hash {
        hash_parts(&[Self::TAG, &[0u8], &self.to_bytes()])
    }
}

pub fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(
        out,
        u32::try_from(b.len()).expect("record field exceeds 4 GiB"),
    );
    out.extend_from_slice(b);
}

pub fn put_hash(out: &mut Vec<u8>, h: &Hash) {
    out.extend_from_slice(h.as_bytes());
}

pub fn put_seq<T>(out: &mut Vec<u8>, items: &[T], mut each: impl FnMut(&mut Vec<u8>, &T)) {
    put_u32(out, u32::try_from(items.len()).expect("sequence too long"));
    for it in items {
        each(out, it);
    }
}
