//! In-memory DOSN substrate: a DHT blob store with replica metadata, one
//! Private Mailbox per user, one Group Message List per group, and the
//! per-principal traffic ledgers.
//!
//! Only payload bytes are charged. DHT puts and gets carry no envelope;
//! every mailbox or GML append costs its sender [`ENVELOPE_BYTES`] on top of
//! the payload. Readers are charged payload bytes only.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::group::{GroupId, UserId};

/// Per-message envelope: sender id, sequence number and kind tag.
pub const ENVELOPE_BYTES: u64 = 24;

/// Size of a value on the wire.
pub trait WireSize {
    fn wire_size(&self) -> u64;
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlobKey(String);

impl BlobKey {
    pub fn new(key: impl Into<String>) -> Self {
        BlobKey(key.into())
    }
}

impl fmt::Display for BlobKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlobRef {
    pub key: BlobKey,
    pub size: u64,
    pub replicas: BTreeSet<UserId>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("key exists: {0}")]
    KeyExists(BlobKey),
    #[error("not found: {0}")]
    NotFound(BlobKey),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrafficLedger {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
}

impl TrafficLedger {
    fn send(&mut self, bytes: u64) {
        self.bytes_sent += bytes;
        self.messages_sent += 1;
    }

    fn receive(&mut self, bytes: u64) {
        self.bytes_received += bytes;
        self.messages_received += 1;
    }
}

impl std::ops::Sub for TrafficLedger {
    type Output = TrafficLedger;

    fn sub(self, rhs: TrafficLedger) -> TrafficLedger {
        TrafficLedger {
            bytes_sent: self.bytes_sent - rhs.bytes_sent,
            bytes_received: self.bytes_received - rhs.bytes_received,
            messages_sent: self.messages_sent - rhs.messages_sent,
            messages_received: self.messages_received - rhs.messages_received,
        }
    }
}

#[derive(Clone, Debug)]
struct StoredBlob<M> {
    blob: M,
    replicas: BTreeSet<UserId>,
}

#[derive(Clone, Debug)]
pub struct GmlEntry<M> {
    pub seq: u64,
    pub sender: UserId,
    pub blob: M,
}

/// The substrate of one simulation run, generic over the message type of
/// the enforcement model using it.
#[derive(Clone, Debug)]
pub struct Substrate<M> {
    dht: HashMap<BlobKey, StoredBlob<M>>,
    mailboxes: HashMap<UserId, VecDeque<(UserId, M)>>,
    gmls: HashMap<GroupId, Vec<GmlEntry<M>>>,
    traffic: BTreeMap<UserId, TrafficLedger>,
}

impl<M> Default for Substrate<M> {
    fn default() -> Self {
        Substrate {
            dht: HashMap::new(),
            mailboxes: HashMap::new(),
            gmls: HashMap::new(),
            traffic: BTreeMap::new(),
        }
    }
}

impl<M: WireSize + Clone> Substrate<M> {
    pub fn new() -> Self {
        Self::default()
    }

    fn ledger(&mut self, user: UserId) -> &mut TrafficLedger {
        self.traffic.entry(user).or_default()
    }

    /// Stores a new blob. An empty replica set means "any peer".
    pub fn dht_put(
        &mut self,
        key: BlobKey,
        blob: M,
        replicas: BTreeSet<UserId>,
        sender: UserId,
    ) -> Result<BlobRef, NetError> {
        if self.dht.contains_key(&key) {
            return Err(NetError::KeyExists(key));
        }
        let size = blob.wire_size();
        self.ledger(sender).send(size);
        self.dht.insert(
            key.clone(),
            StoredBlob {
                blob,
                replicas: replicas.clone(),
            },
        );
        Ok(BlobRef {
            key,
            size,
            replicas,
        })
    }

    /// Overwrites an existing blob, keeping its replica set.
    pub fn dht_replace(&mut self, key: &BlobKey, blob: M, sender: UserId) -> Result<BlobRef, NetError> {
        let size = blob.wire_size();
        let stored = self
            .dht
            .get_mut(key)
            .ok_or_else(|| NetError::NotFound(key.clone()))?;
        stored.blob = blob;
        let replicas = stored.replicas.clone();
        self.ledger(sender).send(size);
        Ok(BlobRef {
            key: key.clone(),
            size,
            replicas,
        })
    }

    pub fn dht_get(&mut self, key: &BlobKey, reader: UserId) -> Result<M, NetError> {
        let blob = self
            .dht
            .get(key)
            .map(|s| s.blob.clone())
            .ok_or_else(|| NetError::NotFound(key.clone()))?;
        self.ledger(reader).receive(blob.wire_size());
        Ok(blob)
    }

    /// Charges `sender` for a `size`-byte in-place update of `key`.
    pub fn dht_patch(&mut self, key: &BlobKey, size: u64, sender: UserId) -> Result<(), NetError> {
        if !self.dht.contains_key(key) {
            return Err(NetError::NotFound(key.clone()));
        }
        self.ledger(sender).send(size);
        Ok(())
    }

    /// Inspects a stored blob without charging anyone.
    pub fn dht_peek(&self, key: &BlobKey) -> Option<&M> {
        self.dht.get(key).map(|s| &s.blob)
    }

    pub fn dht_contains(&self, key: &BlobKey) -> bool {
        self.dht.contains_key(key)
    }

    pub fn dht_blob_ref(&self, key: &BlobKey) -> Option<BlobRef> {
        self.dht.get(key).map(|s| BlobRef {
            key: key.clone(),
            size: s.blob.wire_size(),
            replicas: s.replicas.clone(),
        })
    }

    /// Drops `from` from the replica set of `key` and, when `to` is given,
    /// copies the blob from `sender` to `to`.
    pub fn dht_move_replica(
        &mut self,
        key: &BlobKey,
        from: UserId,
        to: Option<UserId>,
        sender: UserId,
    ) -> Result<(), NetError> {
        let stored = self
            .dht
            .get_mut(key)
            .ok_or_else(|| NetError::NotFound(key.clone()))?;
        stored.replicas.remove(&from);
        let size = stored.blob.wire_size();
        if let Some(to) = to {
            stored.replicas.insert(to);
            self.ledger(sender).send(size);
            self.ledger(to).receive(size);
        }
        Ok(())
    }

    pub fn mailbox_append(&mut self, owner: UserId, blob: M, sender: UserId) {
        let size = blob.wire_size();
        self.ledger(sender).send(size + ENVELOPE_BYTES);
        self.mailboxes.entry(owner).or_default().push_back((sender, blob));
    }

    /// Removes and returns every pending entry, oldest first.
    pub fn mailbox_drain(&mut self, owner: UserId) -> Vec<(UserId, M)> {
        let entries: Vec<_> = self
            .mailboxes
            .get_mut(&owner)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default();
        if !entries.is_empty() {
            let total: u64 = entries.iter().map(|(_, b)| b.wire_size()).sum();
            let ledger = self.ledger(owner);
            ledger.bytes_received += total;
            ledger.messages_received += entries.len() as u64;
        }
        entries
    }

    pub fn mailbox_len(&self, owner: UserId) -> usize {
        self.mailboxes.get(&owner).map_or(0, |q| q.len())
    }

    /// Appends to the group's list and returns the entry's seq (from 1).
    pub fn gml_append(&mut self, group: GroupId, blob: M, sender: UserId) -> u64 {
        let size = blob.wire_size();
        self.ledger(sender).send(size + ENVELOPE_BYTES);
        let list = self.gmls.entry(group).or_default();
        let seq = list.len() as u64 + 1;
        list.push(GmlEntry { seq, sender, blob });
        seq
    }

    /// Every entry with `seq > from_seq`, in order. The reader pays for the
    /// full size of each returned entry.
    pub fn gml_read_since(&mut self, group: GroupId, from_seq: u64, reader: UserId) -> Vec<GmlEntry<M>> {
        let entries: Vec<_> = self
            .gmls
            .get(&group)
            .map(|l| l.iter().skip(from_seq as usize).cloned().collect())
            .unwrap_or_default();
        if !entries.is_empty() {
            let total: u64 = entries.iter().map(|e| e.blob.wire_size()).sum();
            let ledger = self.ledger(reader);
            ledger.bytes_received += total;
            ledger.messages_received += entries.len() as u64;
        }
        entries
    }

    pub fn gml_latest(&self, group: GroupId) -> u64 {
        self.gmls.get(&group).map_or(0, |l| l.len() as u64)
    }

    pub fn traffic(&self, user: UserId) -> TrafficLedger {
        self.traffic.get(&user).copied().unwrap_or_default()
    }

    pub fn traffic_iter(&self) -> impl Iterator<Item = (UserId, &TrafficLedger)> {
        self.traffic.iter().map(|(u, l)| (*u, l))
    }

    pub fn reset_traffic(&mut self) {
        self.traffic.clear();
    }
}
