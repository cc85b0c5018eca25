//! LKH-based enforcement: a degree-d key tree per group, kept by the owner.
//! Members hold the keys on their root-to-leaf path; the root key is the
//! group key. Rekeying touches one path only.

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

const PREFIX: &str = "lkh";

/// Bytes of node id plus key version in front of every sealed tree key.
const ENTRY_HEADER_BYTES: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

/// One refreshed (or handed out) tree key, sealed for its recipients.
#[derive(Clone, Debug)]
pub struct RekeyEntry {
    pub node: NodeId,
    pub key: KeyRef,
    pub sealed: Sealed,
}

impl WireSize for RekeyEntry {
    fn wire_size(&self) -> u64 {
        ENTRY_HEADER_BYTES + self.sealed.canonical_size()
    }
}

#[derive(Clone, Debug)]
pub enum LkhMsg {
    Stored(StoredContent),
    /// Mailbox: a joiner's leaf key (asymmetric) and path keys sealed under it.
    Welcome {
        group: GroupId,
        leaf: KeyRef,
        sealed_leaf: Sealed,
        path: Vec<RekeyEntry>,
        gml_cursor: u64,
    },
    /// GML rekey message, or a mailbox note to a member whose leaf was
    /// pushed down under a new internal node.
    Rekey {
        group: GroupId,
        entries: Vec<RekeyEntry>,
    },
}

fn entries_size(entries: &[RekeyEntry]) -> u64 {
    entries.iter().map(WireSize::wire_size).sum()
}

impl WireSize for LkhMsg {
    fn wire_size(&self) -> u64 {
        match self {
            LkhMsg::Stored(s) => s.wire_size(),
            LkhMsg::Welcome {
                sealed_leaf, path, ..
            } => ENTRY_HEADER_BYTES + sealed_leaf.canonical_size() + entries_size(path),
            LkhMsg::Rekey { entries, .. } => entries_size(entries),
        }
    }
}

impl ContentCarrier for LkhMsg {
    fn from_stored(s: StoredContent) -> Self {
        LkhMsg::Stored(s)
    }

    fn as_stored(&self) -> Option<&StoredContent> {
        match self {
            LkhMsg::Stored(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub id: NodeId,
    pub key: SymKey,
    pub depth: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub member: Option<UserId>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.member.is_some()
    }
}

/// The owner's key tree. Leaves are members; the owner has no leaf.
#[derive(Clone, Debug)]
pub struct KeyTree {
    degree: usize,
    root: NodeId,
    nodes: HashMap<NodeId, TreeNode>,
    leaves: BTreeMap<UserId, NodeId>,
    /// Internal nodes with a free child slot, by (depth, id).
    vacant: BTreeSet<(usize, NodeId)>,
    /// Leaves by (depth, id); the first one is split when no slot is free.
    leaf_order: BTreeSet<(usize, NodeId)>,
    next_node: u64,
}

/// Result of placing a new leaf.
struct Placement {
    leaf: NodeId,
    /// New internal node created by a split, with the member pushed below it.
    split: Option<(NodeId, UserId)>,
}

impl KeyTree {
    fn new(degree: usize, root_key: SymKey) -> Self {
        let root = NodeId(0);
        let mut nodes = HashMap::new();
        nodes.insert(
            root,
            TreeNode {
                id: root,
                key: root_key,
                depth: 0,
                parent: None,
                children: Vec::new(),
                member: None,
            },
        );
        KeyTree {
            degree,
            root,
            nodes,
            leaves: BTreeMap::new(),
            vacant: [(0, root)].into_iter().collect(),
            leaf_order: BTreeSet::new(),
            next_node: 1,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[&self.root]
    }

    pub fn node(&self, id: NodeId) -> Option<&TreeNode> {
        self.nodes.get(&id)
    }

    pub fn leaf_of(&self, user: UserId) -> Option<NodeId> {
        self.leaves.get(&user).copied()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Maximum leaf depth.
    pub fn height(&self) -> usize {
        self.leaf_order.iter().next_back().map_or(0, |(d, _)| *d)
    }

    /// Ancestors of `id`, nearest first, ending at the root.
    pub fn ancestors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = self.nodes[&id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[&p].parent;
        }
        out
    }

    /// Checks structural invariants; returns the first violation found.
    pub fn check(&self) -> Result<(), String> {
        let mut leaf_nodes = 0;
        for node in self.nodes.values() {
            if node.children.len() > self.degree {
                return Err(format!("{:?} has {} children", node.id, node.children.len()));
            }
            if node.is_leaf() {
                leaf_nodes += 1;
                if !node.children.is_empty() {
                    return Err(format!("leaf {:?} has children", node.id));
                }
            } else if node.id != self.root && node.children.is_empty() {
                return Err(format!("internal {:?} has no children", node.id));
            }
            for c in &node.children {
                let child = self.nodes.get(c).ok_or(format!("dangling child {c:?}"))?;
                if child.parent != Some(node.id) || child.depth != node.depth + 1 {
                    return Err(format!("bad link {:?} -> {c:?}", node.id));
                }
            }
            let free = !node.is_leaf() && node.children.len() < self.degree;
            if free != self.vacant.contains(&(node.depth, node.id)) {
                return Err(format!("vacancy index wrong for {:?}", node.id));
            }
        }
        if leaf_nodes != self.leaves.len() || leaf_nodes != self.leaf_order.len() {
            return Err("leaf index out of sync".into());
        }
        Ok(())
    }

    fn alloc_id(&mut self) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        id
    }

    fn refresh_vacancy(&mut self, id: NodeId) {
        let node = &self.nodes[&id];
        let key = (node.depth, id);
        if !node.is_leaf() && node.children.len() < self.degree {
            self.vacant.insert(key);
        } else {
            self.vacant.remove(&key);
        }
    }

    fn attach(&mut self, parent: NodeId, node: TreeNode) {
        let id = node.id;
        if node.is_leaf() {
            self.leaf_order.insert((node.depth, id));
        }
        self.nodes.insert(id, node);
        self.nodes.get_mut(&parent).expect("parent exists").children.push(id);
        self.refresh_vacancy(id);
        self.refresh_vacancy(parent);
    }

    /// Places a leaf for `user` at the shallowest free position: a free
    /// child slot when one is at least as shallow as the shallowest leaf,
    /// otherwise that leaf is pushed down under a new internal node.
    fn place(&mut self, user: UserId, leaf_key: SymKey, mut internal_key: impl FnMut() -> SymKey) -> Placement {
        let slot = self.vacant.iter().next().copied();
        let splittable = self.leaf_order.iter().next().copied();
        let use_slot = match (slot, splittable) {
            (Some((sd, _)), Some((ld, _))) => sd <= ld,
            (Some(_), None) => true,
            (None, _) => false,
        };
        let (parent, split) = if use_slot {
            (slot.expect("checked").1, None)
        } else {
            let (_, old) = splittable.expect("a full tree has leaves");
            let mid = self.split(old, internal_key());
            let moved = self.nodes[&old].member.expect("split a leaf");
            (mid, Some((mid, moved)))
        };
        let leaf = self.alloc_id();
        let depth = self.nodes[&parent].depth + 1;
        self.attach(
            parent,
            TreeNode {
                id: leaf,
                key: leaf_key,
                depth,
                parent: Some(parent),
                children: Vec::new(),
                member: Some(user),
            },
        );
        self.leaves.insert(user, leaf);
        Placement { leaf, split }
    }

    /// Replaces leaf `old` by a new internal node holding `old` as its only
    /// child.
    fn split(&mut self, old: NodeId, key: SymKey) -> NodeId {
        let mid = self.alloc_id();
        let (parent, depth) = {
            let n = &self.nodes[&old];
            (n.parent.expect("leaves have parents"), n.depth)
        };
        let siblings = &mut self.nodes.get_mut(&parent).expect("parent").children;
        let pos = siblings.iter().position(|c| *c == old).expect("linked");
        siblings[pos] = mid;
        self.leaf_order.remove(&(depth, old));
        self.nodes.insert(
            mid,
            TreeNode {
                id: mid,
                key,
                depth,
                parent: Some(parent),
                children: vec![old],
                member: None,
            },
        );
        let moved = self.nodes.get_mut(&old).expect("leaf");
        moved.parent = Some(mid);
        moved.depth = depth + 1;
        self.leaf_order.insert((depth + 1, old));
        self.refresh_vacancy(mid);
        mid
    }

    /// Detaches `user`'s leaf and prunes internal nodes left childless.
    /// Returns the lowest surviving ancestor.
    fn remove(&mut self, user: UserId) -> Option<NodeId> {
        let leaf = self.leaves.remove(&user)?;
        let node = self.nodes.remove(&leaf).expect("indexed leaf");
        self.leaf_order.remove(&(node.depth, leaf));
        let mut cur = node.parent.expect("leaves have parents");
        let mut gone = leaf;
        loop {
            let n = self.nodes.get_mut(&cur).expect("ancestor");
            n.children.retain(|c| *c != gone);
            if n.children.is_empty() && n.parent.is_some() {
                let depth = n.depth;
                let parent = n.parent.expect("checked");
                self.nodes.remove(&cur);
                self.vacant.remove(&(depth, cur));
                gone = cur;
                cur = parent;
                continue;
            }
            self.refresh_vacancy(cur);
            return Some(cur);
        }
    }
}

/// Owner-side state of one group.
#[derive(Clone, Debug)]
pub struct LkhGroupState {
    pub owner: UserId,
    pub gtype: GroupType,
    pub tree: KeyTree,
    contents: BTreeMap<ContentId, ContentIndexEntry>,
}

impl LkhGroupState {
    pub fn group_key_ref(&self) -> KeyRef {
        self.tree.root().key.key_ref()
    }

    pub fn content_version(&self, content: ContentId) -> Option<u64> {
        self.contents.get(&content).map(|e| e.group_key.version)
    }
}

/// Tree keys one user holds for one group.
#[derive(Clone, Debug, Default)]
pub struct LkhMemberState {
    ring: KeyRing,
    gml_cursor: u64,
    pending: Vec<RekeyEntry>,
}

impl LkhMemberState {
    pub fn holds(&self, key: KeyRef) -> bool {
        self.ring.holds(key)
    }

    pub fn key_count(&self) -> usize {
        self.ring.len()
    }
}

pub struct LkhModel {
    rt: CryptoRuntime<LkhMsg>,
    degree: usize,
    groups: HashMap<GroupId, LkhGroupState>,
    states: HashMap<(GroupId, UserId), LkhMemberState>,
    next_content: u64,
}

impl LkhModel {
    pub fn new(crypto: Crypto, params: CryptoCostParams, degree: usize) -> Result<Self, ModelError> {
        if degree < 2 {
            return Err(ModelError::InvalidDegree(degree));
        }
        Ok(LkhModel {
            rt: CryptoRuntime::new(crypto, params),
            degree,
            groups: HashMap::new(),
            states: HashMap::new(),
            next_content: 1,
        })
    }

    pub fn group(&self, group: GroupId) -> Option<&LkhGroupState> {
        self.groups.get(&group)
    }

    pub fn member_state(&self, group: GroupId, user: UserId) -> Option<&LkhMemberState> {
        self.states.get(&(group, user))
    }

    pub fn crypto(&self) -> &Crypto {
        &self.rt.crypto
    }

    pub fn retained_keys(&self, group: GroupId, user: UserId) -> Vec<SymKey> {
        self.states
            .get(&(group, user))
            .map(|s| s.ring.all())
            .unwrap_or_default()
    }

    pub fn stored_content(&self, group: GroupId, content: ContentId) -> Option<(Sealed, Sealed)> {
        let entry = self.groups.get(&group)?.contents.get(&content)?;
        let (data, record) = peek_content(&self.rt, entry);
        Some((data, record.sealed))
    }

    fn group_mut(&mut self, group: GroupId) -> Result<&mut LkhGroupState, ModelError> {
        self.groups.get_mut(&group).ok_or(ModelError::UnknownGroup(group))
    }

    fn owner_ring_insert(&mut self, group: GroupId, owner: UserId, key: SymKey) {
        self.states.entry((group, owner)).or_default().ring.insert(key);
    }

    /// Queues `entries` and opens everything the user's keys reach, until
    /// no further entry opens. Entries sealed under keys the user does not
    /// hold stay queued; a later key may unlock them.
    fn absorb(&mut self, group: GroupId, user: UserId, entries: Vec<RekeyEntry>) -> Result<(), ModelError> {
        let state = self.states.entry((group, user)).or_default();
        state.pending.extend(entries);
        loop {
            let mut opened = false;
            let mut waiting = Vec::with_capacity(state.pending.len());
            for e in std::mem::take(&mut state.pending) {
                if state.ring.holds(e.key) {
                    continue;
                }
                let Some(outer) = sealed_sym_ref(&e.sealed).and_then(|r| state.ring.get(r)).cloned() else {
                    waiting.push(e);
                    continue;
                };
                match self
                    .rt
                    .crypto
                    .unwrap_key(&outer, e.key, &e.sealed, self.rt.ledgers.entry(user))
                {
                    Ok(k) => {
                        state.ring.insert(k);
                        opened = true;
                    }
                    Err(CryptoError::WrongKey) => {}
                    Err(err) => return Err(err.into()),
                }
            }
            state.pending = waiting;
            if !opened {
                return Ok(());
            }
        }
    }

    fn process_mailbox(&mut self, user: UserId) -> Result<(), ModelError> {
        let pending = self.rt.net.mailbox_drain(user);
        if pending.is_empty() {
            return Ok(());
        }
        let pair = self.rt.keypair(user);
        for (_, msg) in pending {
            match msg {
                LkhMsg::Welcome {
                    group,
                    leaf,
                    sealed_leaf,
                    path,
                    gml_cursor,
                } => {
                    let wire = self
                        .rt
                        .crypto
                        .open_asym(&pair, &sealed_leaf, self.rt.ledgers.entry(user))?;
                    let k = self.rt.crypto.import_key(leaf, &wire)?;
                    let state = self.states.entry((group, user)).or_default();
                    // A returning member still reads what it missed before.
                    if state.ring.len() == 0 {
                        state.gml_cursor = state.gml_cursor.max(gml_cursor);
                    }
                    state.ring.insert(k);
                    self.absorb(group, user, path)?;
                }
                LkhMsg::Rekey { group, entries } => self.absorb(group, user, entries)?,
                LkhMsg::Stored(_) => {}
            }
        }
        Ok(())
    }

    fn process_gml(&mut self, group: GroupId, user: UserId) -> Result<(), ModelError> {
        let from = self.states.entry((group, user)).or_default().gml_cursor;
        let entries = self.rt.net.gml_read_since(group, from, user);
        let mut read = Vec::new();
        for entry in entries {
            self.states.entry((group, user)).or_default().gml_cursor = entry.seq;
            if let LkhMsg::Rekey { entries, .. } = entry.blob {
                read.extend(entries);
            }
        }
        self.absorb(group, user, read)
    }
}

impl GroupModel for LkhModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Lkh
    }

    fn create_group(&mut self, group: GroupId, owner: UserId, gtype: GroupType) -> Result<(), ModelError> {
        if owner == UserId::NOBODY {
            return Err(ModelError::ReservedUser);
        }
        if self.groups.contains_key(&group) {
            return Err(ModelError::GroupExists(group));
        }
        let root_key = self.rt.crypto.gen_sym(self.rt.ledgers.entry(owner));
        self.owner_ring_insert(group, owner, root_key.clone());
        self.groups.insert(
            group,
            LkhGroupState {
                owner,
                gtype,
                tree: KeyTree::new(self.degree, root_key),
                contents: BTreeMap::new(),
            },
        );
        Ok(())
    }

    fn publish(&mut self, group: GroupId, author: UserId, content: Bytes) -> Result<ContentId, ModelError> {
        let g = self.groups.get(&group).ok_or(ModelError::UnknownGroup(group))?;
        if author != g.owner && g.tree.leaf_of(author).is_none() {
            return Err(ModelError::NotAMember(author));
        }
        let current = g.group_key_ref();
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
        if user == g.owner || g.tree.leaf_of(user).is_some() {
            return Err(ModelError::AlreadyMember(user));
        }
        let owner = g.owner;
        let refresh = g.gtype.join_bs();
        let pk = self.rt.keypair(user).public().clone();

        let rt = &mut self.rt;
        let mut g = self.groups.remove(&group).expect("checked");
        let result = (|| -> Result<(), ModelError> {
            let ledger = rt.ledgers.entry(owner);
            let leaf_key = rt.crypto.gen_sym(ledger);
            let mut fresh_mid = None;
            let placed = g.tree.place(user, leaf_key.clone(), || {
                let k = rt.crypto.gen_sym(rt.ledgers.entry(owner));
                fresh_mid = Some(k.key_ref());
                k
            });
            let ledger = rt.ledgers.entry(owner);
            let path = g.tree.ancestors(placed.leaf);

            // Refresh the path bottom-up; existing holders learn each new
            // version from the previous one. A node created by this join has
            // no previous version.
            let mut gml_entries = Vec::new();
            if refresh {
                for id in &path {
                    let node = g.tree.nodes.get_mut(id).expect("path node");
                    if Some(node.key.key_ref()) == fresh_mid {
                        continue;
                    }
                    let old = node.key.clone();
                    let new = rt.crypto.refresh_sym(&old, ledger);
                    gml_entries.push(RekeyEntry {
                        node: *id,
                        key: new.key_ref(),
                        sealed: rt.crypto.wrap_key(&old, &new, ledger),
                    });
                    node.key = new;
                }
            }

            if let Some((mid, moved)) = placed.split {
                let mid_key = g.tree.nodes[&mid].key.clone();
                let moved_leaf = g.tree.leaves[&moved];
                let moved_key = g.tree.nodes[&moved_leaf].key.clone();
                let note = RekeyEntry {
                    node: mid,
                    key: mid_key.key_ref(),
                    sealed: rt.crypto.wrap_key(&moved_key, &mid_key, ledger),
                };
                rt.net.mailbox_append(
                    moved,
                    LkhMsg::Rekey {
                        group,
                        entries: vec![note],
                    },
                    owner,
                );
            }

            if !gml_entries.is_empty() {
                rt.net.gml_append(group, LkhMsg::Rekey { group, entries: gml_entries }, owner);
            }

            let bundle: Vec<RekeyEntry> = path
                .iter()
                .map(|id| {
                    let k = &g.tree.nodes[id].key;
                    RekeyEntry {
                        node: *id,
                        key: k.key_ref(),
                        sealed: rt.crypto.wrap_key(&leaf_key, k, ledger),
                    }
                })
                .collect();
            let wire = rt.crypto.export_key(&leaf_key);
            let sealed_leaf = rt.crypto.seal_asym(&pk, wire, ledger)?;
            let cursor = rt.net.gml_latest(group);
            rt.net.mailbox_append(
                user,
                LkhMsg::Welcome {
                    group,
                    leaf: leaf_key.key_ref(),
                    sealed_leaf,
                    path: bundle,
                    gml_cursor: cursor,
                },
                owner,
            );
            Ok(())
        })();
        let root = g.tree.root().key.clone();
        self.groups.insert(group, g);
        result?;
        self.owner_ring_insert(group, owner, root);
        Ok(())
    }

    fn leave(&mut self, group: GroupId, user: UserId) -> Result<(), ModelError> {
        let g = self.groups.get(&group).ok_or(ModelError::UnknownGroup(group))?;
        if user == g.owner {
            return Err(ModelError::OwnerCannotLeave);
        }
        if g.tree.leaf_of(user).is_none() {
            return Err(ModelError::NotAMember(user));
        }
        let owner = g.owner;
        let gtype = g.gtype;
        let old_root = g.tree.root().key.clone();

        let mut g = self.groups.remove(&group).expect("checked");
        let rt = &mut self.rt;
        let lowest = g.tree.remove(user).expect("member has a leaf");
        let mut path = vec![lowest];
        path.extend(g.tree.ancestors(lowest));

        // Bottom-up: each refreshed key is sealed under the current key of
        // every child, so parents see their children's new versions.
        let ledger = rt.ledgers.entry(owner);
        let mut entries = Vec::new();
        for id in &path {
            let new = rt.crypto.refresh_sym(&g.tree.nodes[id].key, ledger);
            for c in g.tree.nodes[id].children.clone() {
                let child_key = &g.tree.nodes[&c].key;
                entries.push(RekeyEntry {
                    node: *id,
                    key: new.key_ref(),
                    sealed: rt.crypto.wrap_key(child_key, &new, ledger),
                });
            }
            g.tree.nodes.get_mut(id).expect("path node").key = new;
        }
        let new_root = g.tree.root().key.clone();
        self.groups.insert(group, g);
        if !entries.is_empty() {
            self.rt.net.gml_append(group, LkhMsg::Rekey { group, entries }, owner);
        }

        if gtype == GroupType::G4 {
            put_chain_link(&mut self.rt, PREFIX, group, owner, &old_root, &new_root)?;
        }
        if gtype.leave_bs() {
            let owner_ring = self.states.get(&(group, owner)).map(|s| s.ring.clone()).unwrap_or_default();
            let mut contents = std::mem::take(&mut self.group_mut(group)?.contents);
            for entry in contents.values_mut() {
                let sealing = owner_ring
                    .get(entry.group_key)
                    .cloned()
                    .expect("owner holds every root version");
                rekey_content(&mut self.rt, owner, entry, &sealing, &new_root)?;
            }
            self.group_mut(group)?.contents = contents;
        }
        self.owner_ring_insert(group, owner, new_root);
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
