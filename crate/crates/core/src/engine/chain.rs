//! Hash-linked handover certificates.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::codec::{put_seq, Encode};
use crate::model::{Done, EpochConfig, GenesisRecord, HandoverCertificate};

/// A certificate plus the Done transactions that endorsed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLink {
    pub cert: HandoverCertificate,
    pub signatures: Vec<Done>,
}

impl Encode for ChainLink {
    const TAG: &'static [u8] = b"reconf/chain-link";

    fn encode(&self, out: &mut Vec<u8>) {
        self.cert.encode(out);
        put_seq(out, &self.signatures, |o, d| {
            d.signer.encode(o);
            o.extend_from_slice(d.sig.0.as_bytes());
        });
    }
}

/// First broken link, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trust chain broken at link {index}: {reason}")]
pub struct ChainBreak {
    pub index: usize,
    pub reason: String,
}

/// Checks that the links form a chain rooted at `genesis`.
///
/// Structure is checked over the whole chain before any signature, so a
/// tampered certificate is reported where its digest stops matching.
pub fn verify_trust_chain(links: &[ChainLink], genesis: &GenesisRecord) -> Result<(), ChainBreak> {
    let brk = |index: usize, reason: String| Err(ChainBreak { index, reason });
    let mut prev_hash = genesis.digest();
    let mut prev_epoch = genesis.config.epoch;
    for (i, link) in links.iter().enumerate() {
        let c = &link.cert;
        if c.prev_cert_hash != prev_hash {
            return brk(i + 1, "previous-certificate hash mismatch".into());
        }
        if c.old_epoch != prev_epoch {
            return brk(
                i + 1,
                format!(
                    "ends epoch {} but epoch {} is current",
                    c.old_epoch, prev_epoch
                ),
            );
        }
        if c.next_config.epoch <= c.old_epoch {
            return brk(i + 1, "epochs do not increase".into());
        }
        prev_hash = c.digest();
        prev_epoch = c.next_config.epoch;
    }
    let mut old: &EpochConfig = &genesis.config;
    for (i, link) in links.iter().enumerate() {
        let signers: BTreeSet<_> = link
            .signatures
            .iter()
            .filter(|d| d.cert == link.cert && old.contains(&d.signer) && d.verify())
            .map(|d| d.signer)
            .collect();
        if signers.len() < old.attest_quorum() {
            return brk(
                i + 1,
                format!(
                    "{} valid signers, {} required",
                    signers.len(),
                    old.attest_quorum()
                ),
            );
        }
        old = &link.cert.next_config;
    }
    Ok(())
}
