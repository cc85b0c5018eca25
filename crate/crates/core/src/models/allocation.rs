//! Allocation-based enforcement: contents are stored in clear, guarded by
//! per-content identity-list rules, and replicated only on peers of
//! authorized users.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use bytes::Bytes;
use imbl::OrdSet;
use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Access, GroupModel, ModelError, ModelKind};
use crate::crypto::{CryptoCostParams, OpLedger};
use crate::group::{AccessDecision, ContentId, GroupId, GroupType, UserId};
use crate::netsim::{BlobKey, Substrate, TrafficLedger, WireSize};

/// Replicas placed per content unless configured otherwise.
pub const DEFAULT_REPLICAS: usize = 2;

/// Fixed part of a serialized rule or member list.
const RULE_OVERHEAD_BYTES: u64 = 64;
/// Serialized size of one identity.
const ID_BYTES: u64 = 16;

/// Identity-list rule: who may read one content.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyRule {
    pub content: ContentId,
    pub authorized: OrdSet<UserId>,
}

impl PolicyRule {
    pub fn serialized_size(&self) -> u64 {
        RULE_OVERHEAD_BYTES + ID_BYTES * self.authorized.len() as u64
    }

    pub fn permits(&self, user: UserId) -> bool {
        self.authorized.contains(&user)
    }
}

#[derive(Clone, Debug)]
pub struct GroupPolicy {
    pub group: GroupId,
    pub owner: UserId,
    pub gtype: GroupType,
    pub members: OrdSet<UserId>,
    pub rules: BTreeMap<ContentId, PolicyRule>,
    pub placements: BTreeMap<ContentId, BTreeSet<UserId>>,
}

#[derive(Clone, Debug)]
enum AllocBlob {
    Content(Bytes),
    Rule(PolicyRule),
    Members(u64),
}

impl WireSize for AllocBlob {
    fn wire_size(&self) -> u64 {
        match self {
            AllocBlob::Content(b) => b.len() as u64,
            AllocBlob::Rule(r) => r.serialized_size(),
            AllocBlob::Members(n) => RULE_OVERHEAD_BYTES + ID_BYTES * n,
        }
    }
}

fn content_key(group: GroupId, content: ContentId) -> BlobKey {
    BlobKey::new(format!("alloc/{group}/data/{content}"))
}

fn rule_key(group: GroupId, content: ContentId) -> BlobKey {
    BlobKey::new(format!("alloc/{group}/rule/{content}"))
}

fn members_key(group: GroupId) -> BlobKey {
    BlobKey::new(format!("alloc/{group}/members"))
}

pub struct AllocationModel {
    net: Substrate<AllocBlob>,
    params: CryptoCostParams,
    replicas: usize,
    rng: ChaCha8Rng,
    groups: HashMap<GroupId, GroupPolicy>,
    next_content: u64,
}

impl AllocationModel {
    pub fn new(params: CryptoCostParams, seed: u64) -> Self {
        Self::with_replicas(params, seed, DEFAULT_REPLICAS)
    }

    pub fn with_replicas(params: CryptoCostParams, seed: u64, replicas: usize) -> Self {
        AllocationModel {
            net: Substrate::new(),
            params,
            replicas,
            rng: ChaCha8Rng::seed_from_u64(seed),
            groups: HashMap::new(),
            next_content: 1,
        }
    }

    pub fn policy(&self, group: GroupId) -> Option<&GroupPolicy> {
        self.groups.get(&group)
    }

    pub fn evaluate(&self, group: GroupId, user: UserId, content: ContentId) -> Result<AccessDecision, ModelError> {
        let policy = self.groups.get(&group).ok_or(ModelError::UnknownGroup(group))?;
        let rule = policy
            .rules
            .get(&content)
            .ok_or(ModelError::UnknownContent(content))?;
        Ok(AccessDecision::from_bool(rule.permits(user)))
    }

    /// One line per rule: `content_id: id1,id2,...`.
    pub fn export_rules(&self, group: GroupId) -> String {
        let mut out = String::new();
        if let Some(policy) = self.groups.get(&group) {
            for (c, rule) in &policy.rules {
                let ids: Vec<String> = rule.authorized.iter().map(|u| u.to_string()).collect();
                let _ = writeln!(out, "{c}: {}", ids.join(","));
            }
        }
        out
    }

    /// Number of (content, replica) pairs whose holder is not authorized.
    pub fn replica_violations(&self, group: GroupId) -> usize {
        let Some(policy) = self.groups.get(&group) else {
            return 0;
        };
        policy
            .placements
            .iter()
            .map(|(c, holders)| {
                let rule = &policy.rules[c];
                holders.iter().filter(|u| !rule.permits(**u)).count()
            })
            .sum()
    }

    fn policy_mut(&mut self, group: GroupId) -> Result<&mut GroupPolicy, ModelError> {
        self.groups.get_mut(&group).ok_or(ModelError::UnknownGroup(group))
    }

    /// Applies `edit` to every rule and stores the rewritten rules.
    fn rewrite_rules(&mut self, group: GroupId, edit: impl Fn(&mut OrdSet<UserId>)) -> Result<(), ModelError> {
        let policy = self.groups.get_mut(&group).ok_or(ModelError::UnknownGroup(group))?;
        let owner = policy.owner;
        for (c, rule) in policy.rules.iter_mut() {
            edit(&mut rule.authorized);
            self.net
                .dht_replace(&rule_key(group, *c), AllocBlob::Rule(rule.clone()), owner)?;
        }
        Ok(())
    }

    /// Moves every replica held by `user` to another authorized peer.
    fn repair_replicas(&mut self, group: GroupId, user: UserId) -> Result<(), ModelError> {
        let policy = self.groups.get_mut(&group).ok_or(ModelError::UnknownGroup(group))?;
        let owner = policy.owner;
        for (c, holders) in policy.placements.iter_mut() {
            if !holders.remove(&user) {
                continue;
            }
            let rule = &policy.rules[c];
            let to = rule
                .authorized
                .iter()
                .filter(|u| !holders.contains(u))
                .copied()
                .choose(&mut self.rng);
            if let Some(to) = to {
                holders.insert(to);
            }
            self.net
                .dht_move_replica(&content_key(group, *c), user, to, owner)?;
        }
        Ok(())
    }
}

impl GroupModel for AllocationModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Allocation
    }

    fn create_group(&mut self, group: GroupId, owner: UserId, gtype: GroupType) -> Result<(), ModelError> {
        if owner == UserId::NOBODY {
            return Err(ModelError::ReservedUser);
        }
        if self.groups.contains_key(&group) {
            return Err(ModelError::GroupExists(group));
        }
        self.net
            .dht_put(members_key(group), AllocBlob::Members(1), BTreeSet::new(), owner)?;
        self.groups.insert(
            group,
            GroupPolicy {
                group,
                owner,
                gtype,
                members: OrdSet::unit(owner),
                rules: BTreeMap::new(),
                placements: BTreeMap::new(),
            },
        );
        Ok(())
    }

    fn publish(&mut self, group: GroupId, author: UserId, content: Bytes) -> Result<ContentId, ModelError> {
        let policy = self.groups.get(&group).ok_or(ModelError::UnknownGroup(group))?;
        if !policy.members.contains(&author) {
            return Err(ModelError::NotAMember(author));
        }
        let id = ContentId(self.next_content);
        self.next_content += 1;
        let rule = PolicyRule {
            content: id,
            authorized: policy.members.clone(),
        };
        let k = self.replicas.min(rule.authorized.len());
        let replicas: BTreeSet<UserId> = rule
            .authorized
            .iter()
            .copied()
            .choose_multiple(&mut self.rng, k)
            .into_iter()
            .collect();
        self.net
            .dht_put(content_key(group, id), AllocBlob::Content(content), replicas.clone(), author)?;
        self.net
            .dht_put(rule_key(group, id), AllocBlob::Rule(rule.clone()), BTreeSet::new(), author)?;
        let policy = self.policy_mut(group)?;
        policy.rules.insert(id, rule);
        policy.placements.insert(id, replicas);
        Ok(id)
    }

    fn join(&mut self, group: GroupId, user: UserId) -> Result<(), ModelError> {
        if user == UserId::NOBODY {
            return Err(ModelError::ReservedUser);
        }
        let policy = self.groups.get_mut(&group).ok_or(ModelError::UnknownGroup(group))?;
        if policy.members.insert(user).is_some() {
            return Err(ModelError::AlreadyMember(user));
        }
        let (owner, gtype) = (policy.owner, policy.gtype);
        self.net.dht_patch(&members_key(group), ID_BYTES, owner)?;
        if !gtype.join_bs() {
            self.rewrite_rules(group, |a| {
                a.insert(user);
            })?;
        }
        Ok(())
    }

    fn leave(&mut self, group: GroupId, user: UserId) -> Result<(), ModelError> {
        let policy = self.groups.get_mut(&group).ok_or(ModelError::UnknownGroup(group))?;
        if user == policy.owner {
            return Err(ModelError::OwnerCannotLeave);
        }
        if policy.members.remove(&user).is_none() {
            return Err(ModelError::NotAMember(user));
        }
        let (owner, gtype) = (policy.owner, policy.gtype);
        self.net.dht_patch(&members_key(group), ID_BYTES, owner)?;
        if gtype.leave_bs() {
            self.rewrite_rules(group, |a| {
                a.remove(&user);
            })?;
            self.repair_replicas(group, user)?;
        }
        Ok(())
    }

    fn access(&mut self, group: GroupId, user: UserId, content: ContentId) -> Result<Access, ModelError> {
        if !self.evaluate(group, user, content)?.is_permit() {
            return Ok(Access::Deny);
        }
        match self.net.dht_get(&content_key(group, content), user)? {
            AllocBlob::Content(b) => Ok(Access::Permit(b)),
            other => unreachable!("content slot holds {other:?}"),
        }
    }

    fn sync_member(&mut self, group: GroupId, _user: UserId) -> Result<(), ModelError> {
        self.groups
            .get(&group)
            .map(|_| ())
            .ok_or(ModelError::UnknownGroup(group))
    }

    fn op_ledger(&self, _user: UserId) -> OpLedger {
        OpLedger::default()
    }

    fn traffic(&self, user: UserId) -> TrafficLedger {
        self.net.traffic(user)
    }

    fn reset_ledgers(&mut self) {
        self.net.reset_traffic();
    }

    fn cost_params(&self) -> CryptoCostParams {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: GroupId = GroupId(1);
    const O: UserId = UserId(1);

    fn model(gtype: GroupType, members: u64, contents: usize) -> AllocationModel {
        let mut m = AllocationModel::new(CryptoCostParams::default(), 7);
        m.create_group(G, O, gtype).unwrap();
        for u in 2..2 + members {
            m.join(G, UserId(u)).unwrap();
        }
        for _ in 0..contents {
            m.publish(G, O, Bytes::from_static(b"hello")).unwrap();
        }
        m.reset_ledgers();
        m
    }

    #[test]
    fn create_basics() {
        let mut m = model(GroupType::G4, 0, 0);
        let p = m.policy(G).unwrap();
        assert!(p.rules.is_empty());
        assert!(p.members.contains(&O));
        assert_eq!(m.create_group(G, O, GroupType::G4), Err(ModelError::GroupExists(G)));
    }

    #[test]
    fn publish_rule_size_and_replicas() {
        let mut m = model(GroupType::G2, 99, 0);
        let c = m.publish(G, O, Bytes::from(vec![0u8; 1000])).unwrap();
        assert_eq!(m.traffic(O).bytes_sent, 1000 + 64 + 16 * 100);
        let p = m.policy(G).unwrap();
        assert_eq!(p.placements[&c].len(), DEFAULT_REPLICAS);
        assert!(p.placements[&c].iter().all(|u| p.rules[&c].permits(*u)));
        assert_eq!(m.op_ledger(O), OpLedger::default());
        assert_eq!(m.publish(G, UserId(500), Bytes::new()), Err(ModelError::NotAMember(UserId(500))));
    }

    #[test]
    fn replicas_clamp_to_authorized() {
        let mut m = model(GroupType::G4, 0, 0);
        let c = m.publish(G, O, Bytes::new()).unwrap();
        assert_eq!(m.policy(G).unwrap().placements[&c].len(), 1);
    }

    #[test]
    fn join_rewrites_depend_on_type() {
        let mut m = model(GroupType::G2, 5, 100);
        m.join(G, UserId(50)).unwrap();
        assert_eq!(m.traffic(O).bytes_sent, 16);
        assert_eq!(m.evaluate(G, UserId(50), ContentId(1)).unwrap(), AccessDecision::Deny);

        let mut m = model(GroupType::G3, 5, 100);
        m.join(G, UserId(50)).unwrap();
        assert_eq!(m.traffic(O).bytes_sent, 16 + 100 * (64 + 16 * 7));
        assert_eq!(m.evaluate(G, UserId(50), ContentId(1)).unwrap(), AccessDecision::Permit);
        assert_eq!(m.join(G, UserId(50)), Err(ModelError::AlreadyMember(UserId(50))));
    }

    #[test]
    fn leave_rewrites_and_repairs() {
        let mut m = model(GroupType::G4, 5, 50);
        m.leave(G, UserId(3)).unwrap();
        assert_eq!(m.traffic(O).bytes_sent, 16);
        assert_eq!(m.evaluate(G, UserId(3), ContentId(1)).unwrap(), AccessDecision::Permit);

        let mut m = model(GroupType::G3, 5, 50);
        m.leave(G, UserId(3)).unwrap();
        assert_eq!(m.evaluate(G, UserId(3), ContentId(1)).unwrap(), AccessDecision::Deny);
        assert_eq!(m.replica_violations(G), 0);
        assert!(m.policy(G).unwrap().placements.values().all(|h| !h.contains(&UserId(3))));
        assert_eq!(m.leave(G, O), Err(ModelError::OwnerCannotLeave));
        assert_eq!(m.leave(G, UserId(3)), Err(ModelError::NotAMember(UserId(3))));
    }

    #[test]
    fn access_reads_clear_content() {
        let mut m = model(GroupType::G3, 2, 1);
        assert_eq!(m.access(G, UserId(2), ContentId(1)).unwrap(), Access::Permit(Bytes::from_static(b"hello")));
        assert_eq!(m.traffic(UserId(2)).bytes_received, 5);
        assert_eq!(m.access(G, UserId(9), ContentId(1)).unwrap(), Access::Deny);
        assert_eq!(m.evaluate(G, O, ContentId(9)), Err(ModelError::UnknownContent(ContentId(9))));
    }

    #[test]
    fn rule_export_format() {
        let m = model(GroupType::G2, 2, 2);
        assert_eq!(m.export_rules(G), "1: 1,2,3\n2: 1,2,3\n");
    }
}
