//! Encryption-based enforcement: one symmetric group key per group, a fresh
//! content key per content, asymmetric key distribution on join and
//! per-member asymmetric redistribution on leave.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use bytes::Bytes;

use super::content::{
    fetch_record, peek_content, put_chain_link, read_content, rekey_content, resolve_group_key,
    sealed_sym_ref, store_content, ContentCarrier, ContentIndexEntry, KeyRing, StoredContent,
};
use super::{Access, CryptoRuntime, GroupModel, ModelError, ModelKind};
use crate::crypto::{Crypto, CryptoCostParams, CryptoError, KeyRef, OpLedger, Sealed, SymKey};
use crate::group::{ContentId, GroupId, GroupType, UserId};
use crate::netsim::{TrafficLedger, WireSize};

const PREFIX: &str = "enc";

#[derive(Clone, Debug)]
pub enum EncMsg {
    /// DHT: content ciphertext, content key record, or key-chain link.
    Stored(StoredContent),
    /// Mailbox: a group key version sealed under the recipient's public key.
    /// Join grants carry the GML position the joiner starts reading from.
    GroupKey {
        group: GroupId,
        key: KeyRef,
        sealed: Sealed,
        gml_cursor: Option<u64>,
    },
    /// GML: a new group key version sealed under the previous version.
    KeyUpdate { key: KeyRef, sealed: Sealed },
}

impl WireSize for EncMsg {
    fn wire_size(&self) -> u64 {
        match self {
            EncMsg::Stored(s) => s.wire_size(),
            EncMsg::GroupKey { sealed, .. } | EncMsg::KeyUpdate { sealed, .. } => {
                sealed.canonical_size()
            }
        }
    }
}

impl ContentCarrier for EncMsg {
    fn from_stored(s: StoredContent) -> Self {
        EncMsg::Stored(s)
    }

    fn as_stored(&self) -> Option<&StoredContent> {
        match self {
            EncMsg::Stored(s) => Some(s),
            _ => None,
        }
    }
}

/// Owner-side state of one group.
#[derive(Clone, Debug)]
pub struct EncGroupState {
    pub owner: UserId,
    pub gtype: GroupType,
    pub members: BTreeSet<UserId>,
    group_key: SymKey,
    contents: BTreeMap<ContentId, ContentIndexEntry>,
}

impl EncGroupState {
    pub fn group_key_ref(&self) -> KeyRef {
        self.group_key.key_ref()
    }

    pub fn content_count(&self) -> usize {
        self.contents.len()
    }

    /// Group key version currently sealing the key of `content`.
    pub fn content_version(&self, content: ContentId) -> Option<u64> {
        self.contents.get(&content).map(|e| e.group_key.version)
    }
}

/// Key material one user holds for one group.
#[derive(Clone, Debug, Default)]
pub struct EncMemberState {
    ring: KeyRing,
    gml_cursor: u64,
    /// Key updates read but sealed under keys not yet held.
    pending: Vec<(KeyRef, Sealed)>,
}

impl EncMemberState {
    pub fn holds(&self, key: KeyRef) -> bool {
        self.ring.holds(key)
    }

    pub fn keys(&self) -> Vec<SymKey> {
        self.ring.all()
    }
}

pub struct EncryptionModel {
    rt: CryptoRuntime<EncMsg>,
    groups: HashMap<GroupId, EncGroupState>,
    states: HashMap<(GroupId, UserId), EncMemberState>,
    next_content: u64,
}

impl EncryptionModel {
    pub fn new(crypto: Crypto, params: CryptoCostParams) -> Self {
        EncryptionModel {
            rt: CryptoRuntime::new(crypto, params),
            groups: HashMap::new(),
            states: HashMap::new(),
            next_content: 1,
        }
    }

    pub fn group(&self, group: GroupId) -> Option<&EncGroupState> {
        self.groups.get(&group)
    }

    pub fn member_state(&self, group: GroupId, user: UserId) -> Option<&EncMemberState> {
        self.states.get(&(group, user))
    }

    pub fn crypto(&self) -> &Crypto {
        &self.rt.crypto
    }

    /// Every key `user` ever obtained for `group`, group and content keys.
    pub fn retained_keys(&self, group: GroupId, user: UserId) -> Vec<SymKey> {
        self.states
            .get(&(group, user))
            .map(|s| s.ring.all())
            .unwrap_or_default()
    }

    /// The stored ciphertext and sealed content key of `content`.
    pub fn stored_content(&self, group: GroupId, content: ContentId) -> Option<(Sealed, Sealed)> {
        let entry = self.groups.get(&group)?.contents.get(&content)?;
        let (data, record) = peek_content(&self.rt, entry);
        Some((data, record.sealed))
    }

    fn group_mut(&mut self, group: GroupId) -> Result<&mut EncGroupState, ModelError> {
        self.groups.get_mut(&group).ok_or(ModelError::UnknownGroup(group))
    }

    fn process_mailbox(&mut self, user: UserId) -> Result<(), ModelError> {
        let pending = self.rt.net.mailbox_drain(user);
        if pending.is_empty() {
            return Ok(());
        }
        let pair = self.rt.keypair(user);
        for (_, msg) in pending {
            let EncMsg::GroupKey {
                group,
                key,
                sealed,
                gml_cursor,
            } = msg
            else {
                continue;
            };
            let wire = self
                .rt
                .crypto
                .open_asym(&pair, &sealed, self.rt.ledgers.entry(user))?;
            let k = self.rt.crypto.import_key(key, &wire)?;
            let state = self.states.entry((group, user)).or_default();
            // A returning member still reads what it missed before.
            if let Some(c) = gml_cursor.filter(|_| state.ring.len() == 0) {
                state.gml_cursor = state.gml_cursor.max(c);
            }
            state.ring.insert(k);
            self.absorb(group, user, Vec::new())?;
        }
        Ok(())
    }

    fn process_gml(&mut self, group: GroupId, user: UserId) -> Result<(), ModelError> {
        let state = self.states.entry((group, user)).or_default();
        let entries = self.rt.net.gml_read_since(group, state.gml_cursor, user);
        let mut read = Vec::new();
        for entry in entries {
            state.gml_cursor = entry.seq;
            if let EncMsg::KeyUpdate { key, sealed } = entry.blob {
                read.push((key, sealed));
            }
        }
        self.absorb(group, user, read)
    }

    /// Queues `updates` and opens whatever the user's keys reach, repeating
    /// until nothing new opens.
    fn absorb(&mut self, group: GroupId, user: UserId, updates: Vec<(KeyRef, Sealed)>) -> Result<(), ModelError> {
        let state = self.states.entry((group, user)).or_default();
        state.pending.extend(updates);
        loop {
            let mut opened = false;
            let mut waiting = Vec::with_capacity(state.pending.len());
            for (key, sealed) in std::mem::take(&mut state.pending) {
                if state.ring.holds(key) {
                    continue;
                }
                let Some(outer) = sealed_sym_ref(&sealed).and_then(|r| state.ring.get(r)).cloned() else {
                    waiting.push((key, sealed));
                    continue;
                };
                match self
                    .rt
                    .crypto
                    .unwrap_key(&outer, key, &sealed, self.rt.ledgers.entry(user))
                {
                    Ok(k) => {
                        state.ring.insert(k);
                        opened = true;
                    }
                    Err(CryptoError::WrongKey) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            state.pending = waiting;
            if !opened {
                return Ok(());
            }
        }
    }
}

impl GroupModel for EncryptionModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Encryption
    }

    fn create_group(&mut self, group: GroupId, owner: UserId, gtype: GroupType) -> Result<(), ModelError> {
        if owner == UserId::NOBODY {
            return Err(ModelError::ReservedUser);
        }
        if self.groups.contains_key(&group) {
            return Err(ModelError::GroupExists(group));
        }
        let key = self.rt.crypto.gen_sym(self.rt.ledgers.entry(owner));
        let mut owner_state = EncMemberState::default();
        owner_state.ring.insert(key.clone());
        self.states.insert((group, owner), owner_state);
        self.groups.insert(
            group,
            EncGroupState {
                owner,
                gtype,
                members: [owner].into_iter().collect(),
                group_key: key,
                contents: BTreeMap::new(),
            },
        );
        Ok(())
    }

    fn publish(&mut self, group: GroupId, author: UserId, content: Bytes) -> Result<ContentId, ModelError> {
        let g = self.groups.get(&group).ok_or(ModelError::UnknownGroup(group))?;
        if !g.members.contains(&author) {
            return Err(ModelError::NotAMember(author));
        }
        let current = g.group_key.key_ref();
        if author != g.owner {
            self.sync_member(group, author)?;
        }
        let key = self
            .states
            .get(&(group, author))
            .and_then(|s| s.ring.get(current))
            .cloned()
            .ok_or(ModelError::StaleKeys(author))?;
        let id = ContentId(self.next_content);
        self.next_content += 1;
        let (entry, content_key) = store_content(&mut self.rt, PREFIX, group, id, author, &key, content)?;
        self.states
            .entry((group, author))
            .or_default()
            .ring
            .insert(content_key);
        self.group_mut(group)?.contents.insert(id, entry);
        Ok(id)
    }

    fn join(&mut self, group: GroupId, user: UserId) -> Result<(), ModelError> {
        if user == UserId::NOBODY {
            return Err(ModelError::ReservedUser);
        }
        let g = self.groups.get(&group).ok_or(ModelError::UnknownGroup(group))?;
        if g.members.contains(&user) {
            return Err(ModelError::AlreadyMember(user));
        }
        let owner = g.owner;
        let gtype = g.gtype;
        let old_key = g.group_key.clone();
        let pk = self.rt.keypair(user).public().clone();

        let grant_key = if gtype.join_bs() {
            let ledger = self.rt.ledgers.entry(owner);
            let new_key = self.rt.crypto.refresh_sym(&old_key, ledger);
            let sealed = self.rt.crypto.wrap_key(&old_key, &new_key, ledger);
            self.rt.net.gml_append(
                group,
                EncMsg::KeyUpdate {
                    key: new_key.key_ref(),
                    sealed,
                },
                owner,
            );
            new_key
        } else {
            old_key
        };

        let wire = self.rt.crypto.export_key(&grant_key);
        let sealed = self
            .rt
            .crypto
            .seal_asym(&pk, wire, self.rt.ledgers.entry(owner))?;
        let cursor = self.rt.net.gml_latest(group);
        self.rt.net.mailbox_append(
            user,
            EncMsg::GroupKey {
                group,
                key: grant_key.key_ref(),
                sealed,
                gml_cursor: Some(cursor),
            },
            owner,
        );

        self.states
            .entry((group, owner))
            .or_default()
            .ring
            .insert(grant_key.clone());
        let g = self.group_mut(group)?;
        g.group_key = grant_key;
        g.members.insert(user);
        Ok(())
    }

    fn leave(&mut self, group: GroupId, user: UserId) -> Result<(), ModelError> {
        let g = self.groups.get(&group).ok_or(ModelError::UnknownGroup(group))?;
        if user == g.owner {
            return Err(ModelError::OwnerCannotLeave);
        }
        if !g.members.contains(&user) {
            return Err(ModelError::NotAMember(user));
        }
        let owner = g.owner;
        let gtype = g.gtype;
        let old_key = g.group_key.clone();
        let remaining: Vec<UserId> = g
            .members
            .iter()
            .copied()
            .filter(|m| *m != user && *m != owner)
            .collect();

        let new_key = self
            .rt
            .crypto
            .refresh_sym(&old_key, self.rt.ledgers.entry(owner));
        let wire = self.rt.crypto.export_key(&new_key);
        for m in remaining {
            let pk = self.rt.keypair(m).public().clone();
            let sealed = self
                .rt
                .crypto
                .seal_asym(&pk, wire.clone(), self.rt.ledgers.entry(owner))?;
            self.rt.net.mailbox_append(
                m,
                EncMsg::GroupKey {
                    group,
                    key: new_key.key_ref(),
                    sealed,
                    gml_cursor: None,
                },
                owner,
            );
        }

        if gtype == GroupType::G4 {
            put_chain_link(&mut self.rt, PREFIX, group, owner, &old_key, &new_key)?;
        }

        if gtype.leave_bs() {
            let owner_ring = self.states.get(&(group, owner)).map(|s| s.ring.clone()).unwrap_or_default();
            let mut contents = std::mem::take(&mut self.group_mut(group)?.contents);
            for entry in contents.values_mut() {
                let sealing = owner_ring
                    .get(entry.group_key)
                    .cloned()
                    .expect("owner holds every group key version");
                rekey_content(&mut self.rt, owner, entry, &sealing, &new_key)?;
            }
            self.group_mut(group)?.contents = contents;
        }

        self.states
            .entry((group, owner))
            .or_default()
            .ring
            .insert(new_key.clone());
        let g = self.group_mut(group)?;
        g.group_key = new_key;
        g.members.remove(&user);
        Ok(())
    }

    fn access(&mut self, group: GroupId, user: UserId, content: ContentId) -> Result<Access, ModelError> {
        let g = self.groups.get(&group).ok_or(ModelError::UnknownGroup(group))?;
        let entry = g
            .contents
            .get(&content)
            .cloned()
            .ok_or(ModelError::UnknownContent(content))?;
        let chained = g.gtype == GroupType::G4;
        self.sync_member(group, user)?;

        let record = fetch_record(&mut self.rt, &entry, user)?;
        let mut ring = self
            .states
            .get_mut(&(group, user))
            .map(|s| std::mem::take(&mut s.ring))
            .unwrap_or_default();
        let resolved = resolve_group_key(&mut self.rt, &mut ring, PREFIX, group, user, record.group_key, chained)?;
        let outcome = match resolved {
            Some(gk) => read_content(&mut self.rt, &entry, user, &record, &gk)?,
            None => None,
        };
        let access = match outcome {
            Some((plain, ck)) => {
                ring.insert(ck);
                Access::Permit(plain)
            }
            None => Access::Deny,
        };
        self.states.entry((group, user)).or_default().ring = ring;
        Ok(access)
    }

    fn sync_member(&mut self, group: GroupId, user: UserId) -> Result<(), ModelError> {
        let g = self.groups.get(&group).ok_or(ModelError::UnknownGroup(group))?;
        if user == g.owner {
            return Ok(());
        }
        self.process_mailbox(user)?;
        self.process_gml(group, user)
    }

    fn op_ledger(&self, user: UserId) -> OpLedger {
        self.rt.ledgers.get(user)
    }

    fn traffic(&self, user: UserId) -> TrafficLedger {
        self.rt.net.traffic(user)
    }

    fn reset_ledgers(&mut self) {
        self.rt.reset();
    }

    fn cost_params(&self) -> CryptoCostParams {
        self.rt.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::ENVELOPE_BYTES;

    const G: GroupId = GroupId(1);
    const O: UserId = UserId(1);

    fn model(gtype: GroupType, members: u64) -> EncryptionModel {
        let mut m = EncryptionModel::new(Crypto::model(), CryptoCostParams::default());
        m.create_group(G, O, gtype).unwrap();
        for u in 2..2 + members {
            m.join(G, UserId(u)).unwrap();
        }
        for u in 2..2 + members {
            m.sync_member(G, UserId(u)).unwrap();
        }
        m.reset_ledgers();
        m
    }

    #[test]
    fn create_basics() {
        let mut m = EncryptionModel::new(Crypto::model(), CryptoCostParams::default());
        m.create_group(G, O, GroupType::G4).unwrap();
        m.create_group(GroupId(2), O, GroupType::G4).unwrap();
        assert_eq!(m.group(G).unwrap().members.len(), 1);
        assert_eq!(m.op_ledger(O).keygen_count, 2);
        assert_ne!(m.group(G).unwrap().group_key_ref(), m.group(GroupId(2)).unwrap().group_key_ref());
        assert_eq!(m.create_group(G, O, GroupType::G4), Err(ModelError::GroupExists(G)));
    }

    #[test]
    fn publish_counts() {
        let mut m = model(GroupType::G4, 3);
        m.publish(G, O, Bytes::from(vec![1u8; 102_400])).unwrap();
        let l = m.op_ledger(O);
        assert_eq!((l.sym_enc_count, l.keygen_count), (2, 1));
        assert_eq!(m.traffic(O).bytes_sent, 102_400 + 32);
        assert_eq!(
            m.publish(G, UserId(99), Bytes::new()),
            Err(ModelError::NotAMember(UserId(99)))
        );
    }

    #[test]
    fn join_without_bs_is_one_asym() {
        for gtype in [GroupType::G3, GroupType::G4] {
            let mut m = model(gtype, 5);
            m.join(G, UserId(50)).unwrap();
            let l = m.op_ledger(O);
            assert_eq!((l.asym_enc_count, l.sym_enc_count, l.keygen_count), (1, 0, 0));
            assert_eq!(m.traffic(O).bytes_sent, 256 + ENVELOPE_BYTES);
            assert_eq!(m.join(G, UserId(50)), Err(ModelError::AlreadyMember(UserId(50))));
        }
    }

    #[test]
    fn join_with_bs_bytes_and_joiner_cost() {
        let mut m = model(GroupType::G2, 5);
        m.join(G, UserId(50)).unwrap();
        let l = m.op_ledger(O);
        assert_eq!((l.asym_enc_count, l.sym_enc_count, l.keygen_count), (1, 1, 1));
        let sent = m.traffic(O).bytes_sent;
        assert!((288..=360).contains(&sent), "{sent}");
        m.sync_member(G, UserId(50)).unwrap();
        assert_eq!(m.op_ledger(UserId(50)).asym_dec_count, 1);
        assert_eq!(m.traffic(UserId(50)).bytes_received, 256);
    }

    #[test]
    fn leave_redistributes_per_member() {
        let mut m = model(GroupType::G4, 10);
        m.leave(G, UserId(4)).unwrap();
        assert_eq!(m.op_ledger(O).asym_enc_count, 9);
        m.sync_member(G, UserId(5)).unwrap();
        assert_eq!(m.op_ledger(UserId(5)).asym_dec_count, 1);
        assert_eq!(m.traffic(UserId(5)).bytes_received, 256);
        assert_eq!(m.leave(G, O), Err(ModelError::OwnerCannotLeave));
        assert_eq!(m.leave(G, UserId(4)), Err(ModelError::NotAMember(UserId(4))));
    }

    #[test]
    fn leave_with_bs_rekeys_every_content() {
        let mut m = model(GroupType::G3, 4);
        for _ in 0..7 {
            m.publish(G, O, Bytes::from(vec![9u8; 1000])).unwrap();
        }
        m.reset_ledgers();
        m.leave(G, UserId(3)).unwrap();
        let l = m.op_ledger(O);
        assert_eq!(l.asym_enc_count, 3);
        assert_eq!(l.sym_enc_count, 14);
        assert_eq!(l.sym_dec_count, 14);
        assert_eq!(l.sym_bytes_processed, 7 * 2 * (1000 + 32));
        let v = m.group(G).unwrap().group_key_ref().version;
        assert!((1..=7).all(|c| m.group(G).unwrap().content_version(ContentId(c)) == Some(v)));
    }

    #[test]
    fn access_examples() {
        let mut m = model(GroupType::G2, 2);
        let before = m.publish(G, O, Bytes::from_static(b"old")).unwrap();
        m.join(G, UserId(10)).unwrap();
        let after = m.publish(G, O, Bytes::from_static(b"new")).unwrap();
        assert_eq!(m.access(G, UserId(2), before).unwrap(), Access::Permit(Bytes::from_static(b"old")));
        assert_eq!(m.access(G, UserId(10), before).unwrap(), Access::Deny);
        assert_eq!(m.access(G, UserId(10), after).unwrap(), Access::Permit(Bytes::from_static(b"new")));

        let mut m = model(GroupType::G3, 2);
        let c = m.publish(G, O, Bytes::from_static(b"x")).unwrap();
        assert!(matches!(m.access(G, UserId(3), c).unwrap(), Access::Permit(_)));
        m.leave(G, UserId(3)).unwrap();
        assert_eq!(m.access(G, UserId(3), c).unwrap(), Access::Deny);
        assert_eq!(m.access(G, UserId(3), ContentId(999)), Err(ModelError::UnknownContent(ContentId(999))));
    }

    #[test]
    fn g4_joiner_walks_key_chain() {
        let mut m = model(GroupType::G4, 3);
        let c = m.publish(G, O, Bytes::from_static(b"early")).unwrap();
        m.leave(G, UserId(2)).unwrap();
        m.leave(G, UserId(3)).unwrap();
        m.join(G, UserId(20)).unwrap();
        assert_eq!(m.access(G, UserId(20), c).unwrap(), Access::Permit(Bytes::from_static(b"early")));
        // the removed member keeps old content but nothing newer
        let late = m.publish(G, O, Bytes::from_static(b"late")).unwrap();
        assert!(matches!(m.access(G, UserId(2), c).unwrap(), Access::Permit(_)));
        assert_eq!(m.access(G, UserId(2), late).unwrap(), Access::Deny);
    }
}
