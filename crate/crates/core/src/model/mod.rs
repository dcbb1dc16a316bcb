//! Domain types shared by every other module.

pub mod codec;
pub mod crypto;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ConfigViolation;
use codec::{put_bytes, put_hash, put_seq, put_u32, put_u64, put_u8, Encode};
pub use crypto::{hash_bytes, Hash, PublicKey, Signature, SigningKey};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxId(pub Hash);

impl TxId {
    pub fn of_payload(payload: &[u8]) -> Self {
        TxId(crypto::hash_parts(&[b"reconf/tx", &[0u8], payload]))
    }
}

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxId({}..)", &self.0.to_hex()[..8])
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_hex())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// A client transaction. The id is the digest of the payload alone, so a
/// resubmission of the same payload keeps its identity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub submitter: ClientId,
}

impl Transaction {
    pub fn new(payload: impl Into<Vec<u8>>, submitter: ClientId) -> Self {
        let payload = payload.into();
        Transaction {
            id: TxId::of_payload(&payload),
            payload,
            submitter,
        }
    }

    pub fn id_matches_payload(&self) -> bool {
        self.id == TxId::of_payload(&self.payload)
    }

    /// Lossy UTF-8 view of the payload, for logs and reports.
    pub fn label(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }
}

impl Encode for Transaction {
    const TAG: &'static [u8] = b"reconf/transaction";

    fn encode(&self, out: &mut Vec<u8>) {
        put_hash(out, &self.id.0);
        put_bytes(out, &self.payload);
        put_u32(out, self.submitter.0);
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EpochId(pub u64);

impl EpochId {
    pub const GENESIS: EpochId = EpochId(1);
}

impl fmt::Debug for EpochId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for EpochId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultModel {
    Crash,
    Byzantine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusKind {
    Sequencer,
    MultiLane,
}

/// `R(epoch, index)`: every epoch gets fresh replica identities.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReplicaId {
    pub epoch: EpochId,
    pub index: u32,
    pub public_key: PublicKey,
}

impl ReplicaId {
    /// Identity with the deterministic simulation key for `(epoch, index)`.
    pub fn derived(epoch: EpochId, index: u32) -> Self {
        let key = SigningKey::for_replica(epoch.0, index);
        ReplicaId {
            epoch,
            index,
            public_key: key.public_key(),
        }
    }

    pub fn signing_key(&self) -> SigningKey {
        SigningKey::for_replica(self.epoch.0, self.index)
    }
}

impl fmt::Debug for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R({},{})", self.epoch.0, self.index)
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.epoch.0, self.index)
    }
}

impl Encode for ReplicaId {
    const TAG: &'static [u8] = b"reconf/replica";

    fn encode(&self, out: &mut Vec<u8>) {
        put_u64(out, self.epoch.0);
        put_u32(out, self.index);
        put_hash(out, &self.public_key.0);
    }
}

/// Membership, failure threshold, fault model and consensus protocol of one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpochConfig {
    pub epoch: EpochId,
    pub members: Vec<ReplicaId>,
    pub f: u32,
    pub fault_model: FaultModel,
    pub consensus_kind: ConsensusKind,
}

impl EpochConfig {
    /// Members `R(epoch, i)` for `i` in `indices`, with derived keys.
    pub fn with_indices(
        epoch: EpochId,
        indices: impl IntoIterator<Item = u32>,
        f: u32,
        fault_model: FaultModel,
        consensus_kind: ConsensusKind,
    ) -> Self {
        let members = indices
            .into_iter()
            .map(|i| ReplicaId::derived(epoch, i))
            .collect();
        EpochConfig {
            epoch,
            members,
            f,
            fault_model,
            consensus_kind,
        }
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn validate(&self) -> Result<(), ConfigViolation> {
        validate_epoch_config(self)
    }

    /// Votes needed inside the reference consensus protocols.
    pub fn consensus_quorum(&self) -> usize {
        self.n() - self.f as usize
    }

    /// Smallest set guaranteed to contain a correct member.
    pub fn attest_quorum(&self) -> usize {
        self.f as usize + 1
    }

    /// Matching copies required when fetching state or log entries from this epoch.
    pub fn fetch_quorum(&self) -> usize {
        match self.fault_model {
            FaultModel::Crash => 1,
            FaultModel::Byzantine => self.f as usize + 1,
        }
    }

    pub fn member_slot(&self, id: &ReplicaId) -> Option<usize> {
        self.members.iter().position(|m| m == id)
    }

    pub fn contains(&self, id: &ReplicaId) -> bool {
        self.member_slot(id).is_some()
    }
}

impl Encode for EpochConfig {
    const TAG: &'static [u8] = b"reconf/epoch-config";

    fn encode(&self, out: &mut Vec<u8>) {
        put_u64(out, self.epoch.0);
        put_seq(out, &self.members, |o, m| m.encode(o));
        put_u32(out, self.f);
        put_u8(
            out,
            match self.fault_model {
                FaultModel::Crash => 0,
                FaultModel::Byzantine => 1,
            },
        );
        put_u8(
            out,
            match self.consensus_kind {
                ConsensusKind::Sequencer => 0,
                ConsensusKind::MultiLane => 1,
            },
        );
    }
}

/// `n >= 2f+1` under crash faults, `n >= 3f+1` under Byzantine faults, members distinct.
pub fn validate_epoch_config(cfg: &EpochConfig) -> Result<(), ConfigViolation> {
    let n = cfg.n() as u64;
    let f = u64::from(cfg.f);
    let (mult, label) = match cfg.fault_model {
        FaultModel::Crash => (2, "2f+1"),
        FaultModel::Byzantine => (3, "3f+1"),
    };
    let need = mult * f + 1;
    if n < need {
        return Err(ConfigViolation::TooFewMembers {
            n,
            bound: label,
            need,
        });
    }
    let mut seen = BTreeSet::new();
    for m in &cfg.members {
        if m.epoch != cfg.epoch {
            return Err(ConfigViolation::ForeignMember {
                member: *m,
                epoch: cfg.epoch,
            });
        }
        if !seen.insert((m.epoch, m.index)) {
            return Err(ConfigViolation::DuplicateMember { member: *m });
        }
    }
    Ok(())
}

/// Genesis anchor of the trust chain; its digest is the `prev_cert_hash` of
/// the first handover certificate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisRecord {
    pub config: EpochConfig,
}

impl Encode for GenesisRecord {
    const TAG: &'static [u8] = b"reconf/genesis";

    fn encode(&self, out: &mut Vec<u8>) {
        self.config.encode(out);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpochChange {
    pub from: EpochId,
    pub next: EpochConfig,
}

impl Encode for EpochChange {
    const TAG: &'static [u8] = b"reconf/epoch-change";

    fn encode(&self, out: &mut Vec<u8>) {
        put_u64(out, self.from.0);
        self.next.encode(out);
    }
}

/// The signed part of a `Ready`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReadyBody {
    pub from: EpochId,
    pub to: EpochId,
    pub ec_hash: Hash,
    pub signer: ReplicaId,
}

impl Encode for ReadyBody {
    const TAG: &'static [u8] = b"reconf/ready";

    fn encode(&self, out: &mut Vec<u8>) {
        put_u64(out, self.from.0);
        put_u64(out, self.to.0);
        put_hash(out, &self.ec_hash);
        self.signer.encode(out);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ready {
    pub body: ReadyBody,
    pub sig: Signature,
}

impl Ready {
    pub fn sign(body: ReadyBody, key: &SigningKey) -> Self {
        let sig = key.sign(&body.to_bytes());
        Ready { body, sig }
    }

    pub fn verify(&self) -> bool {
        crypto::verify(
            &self.body.to_bytes(),
            &self.sig,
            &self.body.signer.public_key,
        )
    }
}

/// Ends epoch `old_epoch` at inner position `h` and names its successor.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HandoverCertificate {
    pub old_epoch: EpochId,
    pub next_config: EpochConfig,
    pub h: u64,
    pub prev_cert_hash: Hash,
}

impl Encode for HandoverCertificate {
    const TAG: &'static [u8] = b"reconf/handover";

    fn encode(&self, out: &mut Vec<u8>) {
        put_u64(out, self.old_epoch.0);
        self.next_config.encode(out);
        put_u64(out, self.h);
        put_hash(out, &self.prev_cert_hash);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Done {
    pub cert: HandoverCertificate,
    pub signer: ReplicaId,
    pub sig: Signature,
}

impl Done {
    pub fn sign(cert: HandoverCertificate, signer: ReplicaId, key: &SigningKey) -> Self {
        let sig = key.sign(&cert.to_bytes());
        Done { cert, signer, sig }
    }

    pub fn verify(&self) -> bool {
        crypto::verify(&self.cert.to_bytes(), &self.sig, &self.signer.public_key)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SystemTx {
    EpochChange(EpochChange),
    Ready(Ready),
    Done(Done),
}

impl Encode for SystemTx {
    const TAG: &'static [u8] = b"reconf/system-tx";

    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            SystemTx::EpochChange(ec) => {
                put_u8(out, 0);
                ec.encode(out);
            }
            SystemTx::Ready(r) => {
                put_u8(out, 1);
                r.body.encode(out);
                put_hash(out, &r.sig.0);
            }
            SystemTx::Done(d) => {
                put_u8(out, 2);
                d.cert.encode(out);
                d.signer.encode(out);
                put_hash(out, &d.sig.0);
            }
        }
    }
}

/// What occupies one inner-log position.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryContent {
    Client {
        tx: Transaction,
    },
    System {
        tx: SystemTx,
    },
    /// Filler for a silent lane or a duplicate; never reaches the outer log.
    Noop,
}

impl EntryContent {
    pub fn client(tx: Transaction) -> Self {
        EntryContent::Client { tx }
    }

    pub fn system(tx: SystemTx) -> Self {
        EntryContent::System { tx }
    }

    /// Identity used for at-most-once decisions inside one inner log.
    pub fn dedup_key(&self) -> Option<Hash> {
        match self {
            EntryContent::Client { tx } => Some(tx.id.0),
            EntryContent::System { tx } => Some(tx.digest()),
            EntryContent::Noop => None,
        }
    }

    pub fn short(&self) -> String {
        match self {
            EntryContent::Client { tx } => format!("tx:{}", tx.label()),
            EntryContent::System {
                tx: SystemTx::EpochChange(ec),
            } => {
                format!("epoch_change:{}->{}", ec.from.0, ec.next.epoch.0)
            }
            EntryContent::System {
                tx: SystemTx::Ready(r),
            } => format!("ready:{}", r.body.signer),
            EntryContent::System {
                tx: SystemTx::Done(d),
            } => format!("done:{}", d.signer),
            EntryContent::Noop => "noop".into(),
        }
    }
}

impl Encode for EntryContent {
    const TAG: &'static [u8] = b"reconf/entry";

    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            EntryContent::Client { tx } => {
                put_u8(out, 0);
                tx.encode(out);
            }
            EntryContent::System { tx } => {
                put_u8(out, 1);
                tx.encode(out);
            }
            EntryContent::Noop => put_u8(out, 2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerLogEntry {
    pub epoch: EpochId,
    /// 1-based, contiguous within the epoch.
    pub position: u64,
    pub content: EntryContent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourcePos {
    pub epoch: EpochId,
    pub position: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OuterEntry {
    /// 1-based, contiguous across all epochs.
    pub outer_position: u64,
    pub tx: Transaction,
    pub source: SourcePos,
}

impl OuterEntry {
    /// One line of the outer-log export:
    /// `outer_position tx_id_hex source_epoch source_position`.
    pub fn export_line(&self) -> String {
        format!(
            "{} {} {} {}",
            self.outer_position, self.tx.id, self.source.epoch.0, self.source.position
        )
    }
}

impl Encode for OuterEntry {
    const TAG: &'static [u8] = b"reconf/outer-entry";

    fn encode(&self, out: &mut Vec<u8>) {
        put_u64(out, self.outer_position);
        self.tx.encode(out);
        put_u64(out, self.source.epoch.0);
        put_u64(out, self.source.position);
    }
}

/// Application validity predicate. Must be identical at every replica.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ExvalPolicy {
    #[default]
    AcceptAll,
    /// Rejects any payload containing `marker`.
    RejectMarker { marker: String },
}

impl ExvalPolicy {
    pub fn accepts(&self, tx: &Transaction) -> bool {
        match self {
            ExvalPolicy::AcceptAll => true,
            ExvalPolicy::RejectMarker { marker } => {
                let m = marker.as_bytes();
                m.is_empty() || !tx.payload.windows(m.len()).any(|w| w == m)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(model: FaultModel, n: u32, f: u32) -> EpochConfig {
        EpochConfig::with_indices(EpochId(1), 1..=n, f, model, ConsensusKind::Sequencer)
    }

    #[test]
    fn membership_bounds() {
        assert!(validate_epoch_config(&cfg(FaultModel::Byzantine, 4, 1)).is_ok());
        let err = validate_epoch_config(&cfg(FaultModel::Byzantine, 3, 1)).unwrap_err();
        assert!(err.to_string().contains("3 < 3f+1"), "{err}");
        assert!(validate_epoch_config(&cfg(FaultModel::Crash, 3, 1)).is_ok());
        let err = validate_epoch_config(&cfg(FaultModel::Crash, 2, 1)).unwrap_err();
        assert!(err.to_string().contains("2 < 2f+1"), "{err}");
    }

    #[test]
    fn duplicate_and_foreign_members_rejected() {
        let mut c = cfg(FaultModel::Crash, 3, 1);
        c.members[2] = c.members[0];
        assert!(matches!(
            c.validate(),
            Err(ConfigViolation::DuplicateMember { .. })
        ));
        let mut c = cfg(FaultModel::Crash, 3, 1);
        c.members[1] = ReplicaId::derived(EpochId(9), 2);
        assert!(matches!(
            c.validate(),
            Err(ConfigViolation::ForeignMember { .. })
        ));
    }

    #[test]
    fn tx_id_recomputable() {
        let tx = Transaction::new(b"T1".to_vec(), ClientId(0));
        assert!(tx.id_matches_payload());
        let resubmitted = Transaction::new(b"T1".to_vec(), ClientId(7));
        assert_eq!(tx.id, resubmitted.id);
    }

    #[test]
    fn ready_and_done_signatures_bind_content() {
        let signer = ReplicaId::derived(EpochId(2), 5);
        let body = ReadyBody {
            from: EpochId(1),
            to: EpochId(2),
            ec_hash: hash_bytes(b"ec"),
            signer,
        };
        let r = Ready::sign(body, &signer.signing_key());
        assert!(r.verify());
        let mut bad = r.clone();
        bad.body.ec_hash = hash_bytes(b"other");
        assert!(!bad.verify());

        let cert = HandoverCertificate {
            old_epoch: EpochId(1),
            next_config: cfg(FaultModel::Byzantine, 4, 1),
            h: 9,
            prev_cert_hash: Hash::ZERO,
        };
        let old = ReplicaId::derived(EpochId(1), 1);
        let d = Done::sign(cert, old, &old.signing_key());
        assert!(d.verify());
        let mut forged = d.clone();
        forged.cert.h = 10;
        assert!(!forged.verify());
    }

    #[test]
    fn exval_marker() {
        let p = ExvalPolicy::RejectMarker {
            marker: "invalid".into(),
        };
        assert!(p.accepts(&Transaction::new(b"T1".to_vec(), ClientId(0))));
        assert!(!p.accepts(&Transaction::new(b"T2-invalid".to_vec(), ClientId(0))));
        assert!(ExvalPolicy::AcceptAll.accepts(&Transaction::new(b"invalid".to_vec(), ClientId(0))));
    }

    proptest! {
        #[test]
        fn accepted_configs_satisfy_bounds(n in 1u32..12, f in 0u32..5, byz in any::<bool>()) {
            let model = if byz { FaultModel::Byzantine } else { FaultModel::Crash };
            let c = cfg(model, n, f);
            if c.validate().is_ok() {
                let need = if byz { 3 * f + 1 } else { 2 * f + 1 };
                prop_assert!(n >= need);
            } else {
                let need = if byz { 3 * f + 1 } else { 2 * f + 1 };
                prop_assert!(n < need);
            }
        }

        #[test]
        fn tx_id_is_a_function_of_payload(a in proptest::collection::vec(any::<u8>(), 0..64),
                                          b in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(TxId::of_payload(&a) == TxId::of_payload(&b), a == b);
        }
    }
}
