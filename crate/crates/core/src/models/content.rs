//! Content storage shared by the Encryption- and LKH-based models: each
//! content is sealed under a fresh content key, and that key is sealed under
//! the current group key. Both blobs go to the DHT.

use std::collections::{BTreeMap, HashMap};

use bytes::Bytes;

use super::{CryptoRuntime, ModelError};
use crate::crypto::{CryptoError, KeyRef, Sealed, SealedBy, SymKey};
use crate::group::{ContentId, GroupId, UserId};
use crate::netsim::{BlobKey, WireSize};

/// The content key of one content, sealed under a group key version.
#[derive(Clone, Debug)]
pub struct ContentKeyRecord {
    pub content_key: KeyRef,
    pub group_key: KeyRef,
    pub sealed: Sealed,
}

/// Group key version `older` sealed under version `older + 1`, letting a
/// holder of any later version walk back to earlier ones.
#[derive(Clone, Debug)]
pub struct ChainLink {
    pub older: KeyRef,
    pub sealed: Sealed,
}

#[derive(Clone, Debug)]
pub enum StoredContent {
    Data(Sealed),
    Key(ContentKeyRecord),
    Chain(ChainLink),
}

impl WireSize for StoredContent {
    fn wire_size(&self) -> u64 {
        match self {
            StoredContent::Data(s) => s.canonical_size(),
            StoredContent::Key(r) => r.sealed.canonical_size(),
            StoredContent::Chain(l) => l.sealed.canonical_size(),
        }
    }
}

pub(crate) trait ContentCarrier: WireSize + Clone {
    fn from_stored(s: StoredContent) -> Self;
    fn as_stored(&self) -> Option<&StoredContent>;
}

/// Where a content lives and which group key version currently seals its key.
#[derive(Clone, Debug)]
pub(crate) struct ContentIndexEntry {
    pub data: BlobKey,
    pub key: BlobKey,
    pub group_key: KeyRef,
}

/// Versioned symmetric keys held by one principal.
#[derive(Clone, Debug, Default)]
pub(crate) struct KeyRing {
    keys: HashMap<u64, BTreeMap<u64, SymKey>>,
}

impl KeyRing {
    pub fn insert(&mut self, key: SymKey) {
        self.keys
            .entry(key.key_id())
            .or_default()
            .insert(key.version(), key);
    }

    pub fn get(&self, r: KeyRef) -> Option<&SymKey> {
        self.keys.get(&r.key_id).and_then(|v| v.get(&r.version))
    }

    pub fn holds(&self, r: KeyRef) -> bool {
        self.get(r).is_some()
    }

    /// Oldest held version of `key_id` newer than `version`.
    pub fn oldest_after(&self, key_id: u64, version: u64) -> Option<&SymKey> {
        self.keys
            .get(&key_id)
            .and_then(|v| v.range(version + 1..).next().map(|(_, k)| k))
    }

    pub fn all(&self) -> Vec<SymKey> {
        let mut out: Vec<SymKey> = self
            .keys
            .values()
            .flat_map(|v| v.values().cloned())
            .collect();
        out.sort_by_key(|k| k.key_ref());
        out
    }

    pub fn len(&self) -> usize {
        self.keys.values().map(|v| v.len()).sum()
    }
}

fn blob_keys(prefix: &str, group: GroupId, content: ContentId) -> (BlobKey, BlobKey) {
    (
        BlobKey::new(format!("{prefix}/{group}/data/{content}")),
        BlobKey::new(format!("{prefix}/{group}/key/{content}")),
    )
}

fn chain_key(prefix: &str, group: GroupId, older: KeyRef) -> BlobKey {
    BlobKey::new(format!("{prefix}/{group}/chain/{}/{}", older.key_id, older.version))
}

/// Seals and stores a new content; returns its index entry and content key.
/// Costs: one key generation and two symmetric seals for `author`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn store_content<M: ContentCarrier>(
    rt: &mut CryptoRuntime<M>,
    prefix: &str,
    group: GroupId,
    content: ContentId,
    author: UserId,
    group_key: &SymKey,
    payload: Bytes,
) -> Result<(ContentIndexEntry, SymKey), ModelError> {
    let ledger = rt.ledgers.entry(author);
    let content_key = rt.crypto.gen_sym(ledger);
    let data = rt.crypto.seal_sym(&content_key, payload, ledger);
    let sealed_key = rt.crypto.wrap_key(group_key, &content_key, ledger);
    let (data_at, key_at) = blob_keys(prefix, group, content);
    rt.net
        .dht_put(data_at.clone(), M::from_stored(StoredContent::Data(data)), Default::default(), author)?;
    let record = ContentKeyRecord {
        content_key: content_key.key_ref(),
        group_key: group_key.key_ref(),
        sealed: sealed_key,
    };
    rt.net
        .dht_put(key_at.clone(), M::from_stored(StoredContent::Key(record)), Default::default(), author)?;
    Ok((
        ContentIndexEntry {
            data: data_at,
            key: key_at,
            group_key: group_key.key_ref(),
        },
        content_key,
    ))
}

fn fetch_stored<M: ContentCarrier>(
    rt: &mut CryptoRuntime<M>,
    at: &BlobKey,
    reader: UserId,
) -> Result<StoredContent, ModelError> {
    let blob = rt.net.dht_get(at, reader)?;
    Ok(blob
        .as_stored()
        .cloned()
        .expect("content blob keys hold stored content"))
}

pub(crate) fn fetch_record<M: ContentCarrier>(
    rt: &mut CryptoRuntime<M>,
    entry: &ContentIndexEntry,
    reader: UserId,
) -> Result<ContentKeyRecord, ModelError> {
    match fetch_stored(rt, &entry.key, reader)? {
        StoredContent::Key(r) => Ok(r),
        other => unreachable!("key slot holds {other:?}"),
    }
}

fn fetch_data<M: ContentCarrier>(
    rt: &mut CryptoRuntime<M>,
    entry: &ContentIndexEntry,
    reader: UserId,
) -> Result<Sealed, ModelError> {
    match fetch_stored(rt, &entry.data, reader)? {
        StoredContent::Data(s) => Ok(s),
        other => unreachable!("data slot holds {other:?}"),
    }
}

/// Re-encrypts one content under a fresh content key whose seal uses
/// `new_group_key`. Costs for `owner`: two content-size passes (open and
/// seal), one key open, one key seal, one key generation.
pub(crate) fn rekey_content<M: ContentCarrier>(
    rt: &mut CryptoRuntime<M>,
    owner: UserId,
    entry: &mut ContentIndexEntry,
    old_group_key: &SymKey,
    new_group_key: &SymKey,
) -> Result<(), ModelError> {
    let record = fetch_record(rt, entry, owner)?;
    let data = fetch_data(rt, entry, owner)?;
    let ledger = rt.ledgers.entry(owner);
    let old_ck = rt
        .crypto
        .unwrap_key(old_group_key, record.content_key, &record.sealed, ledger)?;
    let plain = rt.crypto.open_sym(&old_ck, &data, ledger)?;
    let new_ck = rt.crypto.gen_sym(ledger);
    let new_data = rt.crypto.seal_sym(&new_ck, plain, ledger);
    let new_sealed = rt.crypto.wrap_key(new_group_key, &new_ck, ledger);
    rt.net
        .dht_replace(&entry.data, M::from_stored(StoredContent::Data(new_data)), owner)?;
    let record = ContentKeyRecord {
        content_key: new_ck.key_ref(),
        group_key: new_group_key.key_ref(),
        sealed: new_sealed,
    };
    rt.net
        .dht_replace(&entry.key, M::from_stored(StoredContent::Key(record)), owner)?;
    entry.group_key = new_group_key.key_ref();
    Ok(())
}

/// Stores `older` sealed under `newer` (one symmetric seal for `owner`).
pub(crate) fn put_chain_link<M: ContentCarrier>(
    rt: &mut CryptoRuntime<M>,
    prefix: &str,
    group: GroupId,
    owner: UserId,
    older: &SymKey,
    newer: &SymKey,
) -> Result<(), ModelError> {
    let sealed = rt.crypto.wrap_key(newer, older, rt.ledgers.entry(owner));
    let link = ChainLink {
        older: older.key_ref(),
        sealed,
    };
    rt.net.dht_put(
        chain_key(prefix, group, older.key_ref()),
        M::from_stored(StoredContent::Chain(link)),
        Default::default(),
        owner,
    )?;
    Ok(())
}

/// Finds group key `need` for `reader`: directly from the ring, or, when
/// `chained`, by walking chain links back from the oldest newer version the
/// reader holds. Keys recovered on the way are added to the ring.
#[allow(clippy::too_many_arguments)]
pub(crate) fn resolve_group_key<M: ContentCarrier>(
    rt: &mut CryptoRuntime<M>,
    ring: &mut KeyRing,
    prefix: &str,
    group: GroupId,
    reader: UserId,
    need: KeyRef,
    chained: bool,
) -> Result<Option<SymKey>, ModelError> {
    if let Some(k) = ring.get(need) {
        return Ok(Some(k.clone()));
    }
    if !chained {
        return Ok(None);
    }
    let Some(mut current) = ring.oldest_after(need.key_id, need.version).cloned() else {
        return Ok(None);
    };
    while current.version() > need.version {
        let older = KeyRef {
            key_id: need.key_id,
            version: current.version() - 1,
        };
        let at = chain_key(prefix, group, older);
        if !rt.net.dht_contains(&at) {
            return Ok(None);
        }
        let link = match fetch_stored(rt, &at, reader)? {
            StoredContent::Chain(l) => l,
            other => unreachable!("chain slot holds {other:?}"),
        };
        match rt
            .crypto
            .unwrap_key(&current, link.older, &link.sealed, rt.ledgers.entry(reader))
        {
            Ok(k) => {
                ring.insert(k.clone());
                current = k;
            }
            Err(CryptoError::WrongKey) => return Ok(None),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(current))
}

/// Fetches and opens a content with `group_key`. `None` when the key does
/// not open the content key record.
pub(crate) fn read_content<M: ContentCarrier>(
    rt: &mut CryptoRuntime<M>,
    entry: &ContentIndexEntry,
    reader: UserId,
    record: &ContentKeyRecord,
    group_key: &SymKey,
) -> Result<Option<(Bytes, SymKey)>, ModelError> {
    let ledger = rt.ledgers.entry(reader);
    let ck = match rt
        .crypto
        .unwrap_key(group_key, record.content_key, &record.sealed, ledger)
    {
        Ok(k) => k,
        Err(CryptoError::WrongKey) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let data = fetch_data(rt, entry, reader)?;
    match rt.crypto.open_sym(&ck, &data, rt.ledgers.entry(reader)) {
        Ok(plain) => Ok(Some((plain, ck))),
        Err(CryptoError::WrongKey) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Both stored blobs of a content, without charging anyone.
pub(crate) fn peek_content<M: ContentCarrier>(
    rt: &CryptoRuntime<M>,
    entry: &ContentIndexEntry,
) -> (Sealed, ContentKeyRecord) {
    let data = rt.net.dht_peek(&entry.data).and_then(|b| b.as_stored().cloned());
    let key = rt.net.dht_peek(&entry.key).and_then(|b| b.as_stored().cloned());
    match (data, key) {
        (Some(StoredContent::Data(d)), Some(StoredContent::Key(k))) => (d, k),
        _ => unreachable!("indexed content is stored"),
    }
}

pub(crate) fn sealed_sym_ref(sealed: &Sealed) -> Option<KeyRef> {
    match sealed.sealed_by() {
        SealedBy::Sym(r) => Some(r),
        SealedBy::Asym(_) => None,
    }
}
