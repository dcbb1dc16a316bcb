//! Toy execution engine: a key-value map driven by the outer log.
//!
//! A payload `key=value` sets `key`; any other payload increments a counter
//! stored under the payload itself.

use std::collections::BTreeMap;

use crate::model::codec::{put_bytes, put_u32};
use crate::model::{crypto::hash_bytes, Hash, Transaction};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvStore {
    map: BTreeMap<Vec<u8>, Vec<u8>>,
    applied: u64,
}

impl KvStore {
    pub fn apply(&mut self, tx: &Transaction) {
        self.applied += 1;
        let p = &tx.payload;
        if let Some(i) = p.iter().position(|&b| b == b'=') {
            self.map.insert(p[..i].to_vec(), p[i + 1..].to_vec());
        } else {
            let slot = self.map.entry(p.clone()).or_default();
            let n = std::str::from_utf8(slot)
                .ok()
                .and_then(|s| s.parse::<u64>().ok())
                .unwrap_or(0);
            *slot = (n + 1).to_string().into_bytes();
        }
    }

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.map.get(key).map(Vec::as_slice)
    }

    pub fn applied(&self) -> u64 {
        self.applied
    }

    pub fn digest(&self) -> Hash {
        let mut out = Vec::new();
        put_u32(&mut out, self.map.len() as u32);
        for (k, v) in &self.map {
            put_bytes(&mut out, k);
            put_bytes(&mut out, v);
        }
        hash_bytes(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClientId;

    #[test]
    fn set_and_count() {
        let mut kv = KvStore::default();
        kv.apply(&Transaction::new(b"a=1".to_vec(), ClientId(0)));
        kv.apply(&Transaction::new(b"hit".to_vec(), ClientId(0)));
        kv.apply(&Transaction::new(b"hit".to_vec(), ClientId(1)));
        assert_eq!(kv.get(b"a"), Some(&b"1"[..]));
        assert_eq!(kv.get(b"hit"), Some(&b"2"[..]));
        assert_eq!(kv.applied(), 3);
    }
}
