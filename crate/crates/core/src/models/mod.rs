//! The three content-privacy enforcement models behind one interface.

mod allocation;
mod content;
mod encryption;
mod lkh;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use bytes::Bytes;
use thiserror::Error;

use crate::crypto::{Crypto, CryptoCostParams, CryptoError, KeyPair, Ledgers, OpLedger};
use crate::group::{AccessDecision, ContentId, GroupId, GroupType, UserId};
use crate::netsim::{NetError, Substrate, TrafficLedger, WireSize};

pub use allocation::{AllocationModel, GroupPolicy, PolicyRule, DEFAULT_REPLICAS};
pub use content::{ChainLink, ContentKeyRecord, StoredContent};
pub use encryption::{EncGroupState, EncMemberState, EncMsg, EncryptionModel};
pub use lkh::{KeyTree, LkhMemberState, LkhModel, LkhMsg, NodeId, RekeyEntry, TreeNode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Encryption,
    Lkh,
    Allocation,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Encryption, ModelKind::Lkh, ModelKind::Allocation];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Encryption => "encryption",
            ModelKind::Lkh => "lkh",
            ModelKind::Allocation => "allocation",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "encryption" | "enc" => Ok(ModelKind::Encryption),
            "lkh" => Ok(ModelKind::Lkh),
            "allocation" | "alloc" => Ok(ModelKind::Allocation),
            other => Err(format!(
                "unknown model `{other}` (expected encryption, lkh or allocation)"
            )),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("not a member: {0}")]
    NotAMember(UserId),
    #[error("already member: {0}")]
    AlreadyMember(UserId),
    #[error("owner cannot leave")]
    OwnerCannotLeave,
    #[error("unknown content: {0}")]
    UnknownContent(ContentId),
    #[error("unknown group: {0}")]
    UnknownGroup(GroupId),
    #[error("group exists: {0}")]
    GroupExists(GroupId),
    #[error("invalid key-tree degree {0} (must be at least 2)")]
    InvalidDegree(usize),
    #[error("user id 0 is reserved")]
    ReservedUser,
    #[error("{0} does not hold the current group key")]
    StaleKeys(UserId),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Outcome of a system-mediated content read.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Access {
    Permit(Bytes),
    Deny,
}

impl Access {
    pub fn decision(&self) -> AccessDecision {
        match self {
            Access::Permit(_) => AccessDecision::Permit,
            Access::Deny => AccessDecision::Deny,
        }
    }
}

/// Common surface of the enforcement models, used by the replay checker and
/// the benchmark harness.
pub trait GroupModel {
    fn kind(&self) -> ModelKind;
    fn create_group(&mut self, group: GroupId, owner: UserId, gtype: GroupType) -> Result<(), ModelError>;
    fn publish(&mut self, group: GroupId, author: UserId, content: Bytes) -> Result<ContentId, ModelError>;
    fn join(&mut self, group: GroupId, user: UserId) -> Result<(), ModelError>;
    fn leave(&mut self, group: GroupId, user: UserId) -> Result<(), ModelError>;
    /// Reads `content` as `user`, after first processing anything pending
    /// for the user. Cost is charged to `user`.
    fn access(&mut self, group: GroupId, user: UserId, content: ContentId) -> Result<Access, ModelError>;
    /// Processes pending mailbox and Group Message List entries for `user`.
    fn sync_member(&mut self, group: GroupId, user: UserId) -> Result<(), ModelError>;
    fn op_ledger(&self, user: UserId) -> OpLedger;
    fn traffic(&self, user: UserId) -> TrafficLedger;
    fn reset_ledgers(&mut self);
    fn cost_params(&self) -> CryptoCostParams;
}

/// Builds a model with the model crypto provider.
pub fn build_model(
    kind: ModelKind,
    params: CryptoCostParams,
    degree: usize,
    seed: u64,
) -> Result<Box<dyn GroupModel + Send>, ModelError> {
    Ok(match kind {
        ModelKind::Encryption => Box::new(EncryptionModel::new(Crypto::model(), params)),
        ModelKind::Lkh => Box::new(LkhModel::new(Crypto::model(), params, degree)?),
        ModelKind::Allocation => Box::new(AllocationModel::new(params, seed)),
    })
}

/// Crypto, substrate and ledgers shared by the two cryptographic models.
pub(crate) struct CryptoRuntime<M> {
    pub crypto: Crypto,
    pub net: Substrate<M>,
    pub ledgers: Ledgers,
    pub params: CryptoCostParams,
    keypairs: BTreeMap<UserId, KeyPair>,
}

impl<M: WireSize + Clone> CryptoRuntime<M> {
    pub fn new(crypto: Crypto, params: CryptoCostParams) -> Self {
        CryptoRuntime {
            crypto,
            net: Substrate::new(),
            ledgers: Ledgers::default(),
            params,
            keypairs: BTreeMap::new(),
        }
    }

    /// The user's key pair, generated on first use. Key-pair generation is
    /// not part of any measured operation and is not charged.
    pub fn keypair(&mut self, user: UserId) -> KeyPair {
        if let Some(kp) = self.keypairs.get(&user) {
            return kp.clone();
        }
        let kp = self.crypto.gen_keypair(user);
        self.keypairs.insert(user, kp.clone());
        kp
    }

    pub fn reset(&mut self) {
        self.ledgers.clear();
        self.net.reset_traffic();
    }
}
