//! Domain vocabulary, the group event history, and the membership-timeline
//! access oracle that every enforcement model is checked against.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// A DOSN user. `UserId(0)` is reserved for "nobody".
    UserId
);
id_type!(GroupId);
id_type!(ContentId);

impl UserId {
    pub const NOBODY: UserId = UserId(0);
}

/// Logical time: the sequence number of an event in a group history.
pub type Seq = u64;

/// The three group types covered by the simulator. Each type fixes whether
/// join and leave enforce backward secrecy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupType {
    /// Join with backward secrecy, leave without.
    G2,
    /// Join without backward secrecy, leave with.
    G3,
    /// Neither.
    G4,
}

impl GroupType {
    pub const ALL: [GroupType; 3] = [GroupType::G2, GroupType::G3, GroupType::G4];

    /// `(join_bs, leave_bs)`.
    pub fn secrecy_flags(self) -> (bool, bool) {
        match self {
            GroupType::G2 => (true, false),
            GroupType::G3 => (false, true),
            GroupType::G4 => (false, false),
        }
    }

    pub fn join_bs(self) -> bool {
        self.secrecy_flags().0
    }

    pub fn leave_bs(self) -> bool {
        self.secrecy_flags().1
    }
}

impl fmt::Display for GroupType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GroupType::G2 => "G2",
            GroupType::G3 => "G3",
            GroupType::G4 => "G4",
        };
        f.write_str(s)
    }
}

impl FromStr for GroupType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "G2" => Ok(GroupType::G2),
            "G3" => Ok(GroupType::G3),
            "G4" => Ok(GroupType::G4),
            other => Err(format!("unknown group type `{other}` (expected G2, G3 or G4)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessDecision {
    Permit,
    Deny,
}

impl AccessDecision {
    pub fn from_bool(permit: bool) -> Self {
        if permit {
            AccessDecision::Permit
        } else {
            AccessDecision::Deny
        }
    }

    pub fn is_permit(self) -> bool {
        self == AccessDecision::Permit
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Create { owner: UserId },
    Join { user: UserId },
    Leave { user: UserId },
    Publish { author: UserId, content: ContentId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupEvent {
    pub seq: Seq,
    pub kind: EventKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistoryError {
    #[error("time out of range")]
    TimeOutOfRange,
    #[error("unknown content")]
    UnknownContent,
    #[error("history is empty")]
    Empty,
    #[error("first event must be CREATE")]
    MissingCreate,
    #[error("duplicate CREATE at seq {0}")]
    DuplicateCreate(Seq),
    #[error("seq {seq} is not greater than previous seq {prev}")]
    NonIncreasingSeq { seq: Seq, prev: Seq },
    #[error("user {0} is already a member")]
    AlreadyMember(UserId),
    #[error("user {0} is not a member")]
    NotAMember(UserId),
    #[error("the owner cannot leave the group")]
    OwnerCannotLeave,
    #[error("content {0} was already published")]
    DuplicateContent(ContentId),
    #[error("user id 0 is reserved")]
    ReservedUser,
}

/// Ordered event log of one group; the ground truth for [`oracle_access`].
///
/// Every prefix of a `GroupHistory` satisfies the event preconditions: the
/// log starts with `Create`, joins only add non-members, leaves only remove
/// non-owner members, and publications come from current members.
#[derive(Clone, Debug)]
pub struct GroupHistory {
    group: GroupId,
    gtype: GroupType,
    owner: UserId,
    events: Vec<GroupEvent>,
    members: std::collections::BTreeSet<UserId>,
}

impl GroupHistory {
    /// Starts a history with `Create(owner)` at seq 0.
    pub fn new(group: GroupId, gtype: GroupType, owner: UserId) -> Result<Self, HistoryError> {
        Self::from_events(
            group,
            gtype,
            [GroupEvent {
                seq: 0,
                kind: EventKind::Create { owner },
            }],
        )
    }

    pub fn from_events(
        group: GroupId,
        gtype: GroupType,
        events: impl IntoIterator<Item = GroupEvent>,
    ) -> Result<Self, HistoryError> {
        let mut events = events.into_iter();
        let first = events.next().ok_or(HistoryError::Empty)?;
        let owner = match first.kind {
            EventKind::Create { owner } => owner,
            _ => return Err(HistoryError::MissingCreate),
        };
        if owner == UserId::NOBODY {
            return Err(HistoryError::ReservedUser);
        }
        let mut history = GroupHistory {
            group,
            gtype,
            owner,
            events: vec![first],
            members: [owner].into_iter().collect(),
        };
        for ev in events {
            history.push_event(ev)?;
        }
        Ok(history)
    }

    /// Appends `kind` at `last_seq + 1`.
    pub fn push(&mut self, kind: EventKind) -> Result<Seq, HistoryError> {
        let seq = self.last_seq() + 1;
        self.push_event(GroupEvent { seq, kind })?;
        Ok(seq)
    }

    pub fn push_event(&mut self, ev: GroupEvent) -> Result<(), HistoryError> {
        let prev = self.last_seq();
        if ev.seq <= prev {
            return Err(HistoryError::NonIncreasingSeq { seq: ev.seq, prev });
        }
        match ev.kind {
            EventKind::Create { .. } => return Err(HistoryError::DuplicateCreate(ev.seq)),
            EventKind::Join { user } => {
                if user == UserId::NOBODY {
                    return Err(HistoryError::ReservedUser);
                }
                if !self.members.insert(user) {
                    return Err(HistoryError::AlreadyMember(user));
                }
            }
            EventKind::Leave { user } => {
                if user == self.owner {
                    return Err(HistoryError::OwnerCannotLeave);
                }
                if !self.members.remove(&user) {
                    return Err(HistoryError::NotAMember(user));
                }
            }
            EventKind::Publish { author, content } => {
                if !self.members.contains(&author) {
                    return Err(HistoryError::NotAMember(author));
                }
                if self.publish_seq(content).is_some() {
                    return Err(HistoryError::DuplicateContent(content));
                }
            }
        }
        self.events.push(ev);
        Ok(())
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn gtype(&self) -> GroupType {
        self.gtype
    }

    pub fn owner(&self) -> UserId {
        self.owner
    }

    pub fn events(&self) -> &[GroupEvent] {
        &self.events
    }

    pub fn last_seq(&self) -> Seq {
        self.events.last().map(|e| e.seq).unwrap_or(0)
    }

    /// Members after the last event.
    pub fn current_members(&self) -> impl Iterator<Item = UserId> + '_ {
        self.members.iter().copied()
    }

    /// Every user that appears in the log, in first-appearance order.
    pub fn users(&self) -> Vec<UserId> {
        let mut seen = Vec::new();
        for ev in &self.events {
            let u = match ev.kind {
                EventKind::Create { owner } => owner,
                EventKind::Join { user } | EventKind::Leave { user } => user,
                EventKind::Publish { author, .. } => author,
            };
            if !seen.contains(&u) {
                seen.push(u);
            }
        }
        seen
    }

    pub fn contents(&self) -> Vec<ContentId> {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Publish { content, .. } => Some(content),
                _ => None,
            })
            .collect()
    }

    pub fn publish_seq(&self, content: ContentId) -> Option<Seq> {
        self.events.iter().find_map(|e| match e.kind {
            EventKind::Publish { content: c, .. } if c == content => Some(e.seq),
            _ => None,
        })
    }

    /// Prefix containing every event with `seq <= t`.
    pub fn prefix(&self, t: Seq) -> GroupHistory {
        let events: Vec<_> = self.events.iter().copied().filter(|e| e.seq <= t).collect();
        GroupHistory::from_events(self.group, self.gtype, events)
            .expect("prefix of a valid history is valid")
    }
}

/// Whether `user` belongs to the group right after the event at time `t`.
pub fn is_member(history: &GroupHistory, user: UserId, t: Seq) -> Result<bool, HistoryError> {
    if t > history.last_seq() {
        return Err(HistoryError::TimeOutOfRange);
    }
    let mut member = false;
    for ev in history.events.iter().take_while(|e| e.seq <= t) {
        match ev.kind {
            EventKind::Create { owner } if owner == user => member = true,
            EventKind::Join { user: u } if u == user => member = true,
            EventKind::Leave { user: u } if u == user => member = false,
            _ => {}
        }
    }
    Ok(member)
}

/// System-mediated access of `user` to `content` at time `t_query`, computed
/// directly from the membership timeline.
pub fn oracle_access(
    history: &GroupHistory,
    user: UserId,
    content: ContentId,
    t_query: Seq,
) -> Result<AccessDecision, HistoryError> {
    if t_query > history.last_seq() {
        return Err(HistoryError::TimeOutOfRange);
    }
    let t_pub = match history.publish_seq(content) {
        Some(t) if t <= t_query => t,
        _ => return Err(HistoryError::UnknownContent),
    };
    let permit = match history.gtype {
        GroupType::G2 => is_member(history, user, t_pub)?,
        GroupType::G3 => is_member(history, user, t_query)?,
        GroupType::G4 => {
            is_member(history, user, t_pub)?
                || history.events.iter().any(|e| {
                    e.seq > t_pub
                        && e.seq <= t_query
                        && matches!(e.kind, EventKind::Join { user: u } if u == user)
                })
        }
    };
    Ok(AccessDecision::from_bool(permit))
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario contains no events")]
    Empty,
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: invalid event: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: HistoryError,
    },
}

/// Parses the line-oriented scenario format: one event per line as
/// `seq KIND args` with kinds `CREATE owner`, `JOIN user`, `LEAVE user` and
/// `PUBLISH author content`. Blank lines and `#` comments are skipped.
pub fn parse_scenario(
    text: &str,
    group: GroupId,
    gtype: GroupType,
) -> Result<GroupHistory, ScenarioError> {
    let mut history: Option<GroupHistory> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let syntax = |message: String| ScenarioError::Syntax { line, message };
        let fields: Vec<&str> = body.split_whitespace().collect();
        let num = |i: usize| -> Result<u64, ScenarioError> {
            let f = fields
                .get(i)
                .ok_or_else(|| syntax(format!("missing field {}", i + 1)))?;
            f.parse::<u64>()
                .map_err(|_| syntax(format!("`{f}` is not a non-negative integer")))
        };
        let arity = |n: usize| -> Result<(), ScenarioError> {
            if fields.len() == n {
                Ok(())
            } else {
                Err(syntax(format!("expected {n} fields, found {}", fields.len())))
            }
        };
        let seq = num(0)?;
        let kind_name = fields
            .get(1)
            .ok_or_else(|| syntax("missing event kind".into()))?
            .to_ascii_uppercase();
        let kind = match kind_name.as_str() {
            "CREATE" => {
                arity(3)?;
                EventKind::Create { owner: UserId(num(2)?) }
            }
            "JOIN" => {
                arity(3)?;
                EventKind::Join { user: UserId(num(2)?) }
            }
            "LEAVE" => {
                arity(3)?;
                EventKind::Leave { user: UserId(num(2)?) }
            }
            "PUBLISH" => {
                arity(4)?;
                EventKind::Publish {
                    author: UserId(num(2)?),
                    content: ContentId(num(3)?),
                }
            }
            other => return Err(syntax(format!("unknown event kind `{other}`"))),
        };
        let ev = GroupEvent { seq, kind };
        let invalid = |source| ScenarioError::Invalid { line, source };
        match history.as_mut() {
            None => history = Some(GroupHistory::from_events(group, gtype, [ev]).map_err(invalid)?),
            Some(h) => h.push_event(ev).map_err(invalid)?,
        }
    }
    history.ok_or(ScenarioError::Empty)
}

/// Renders a history in the scenario format accepted by [`parse_scenario`].
pub fn format_scenario(history: &GroupHistory) -> String {
    let mut out = String::new();
    for ev in history.events() {
        let line = match ev.kind {
            EventKind::Create { owner } => format!("{} CREATE {}", ev.seq, owner),
            EventKind::Join { user } => format!("{} JOIN {}", ev.seq, user),
            EventKind::Leave { user } => format!("{} LEAVE {}", ev.seq, user),
            EventKind::Publish { author, content } => {
                format!("{} PUBLISH {} {}", ev.seq, author, content)
            }
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const O: UserId = UserId(1);
    const A: UserId = UserId(2);
    const B: UserId = UserId(3);
    const C1: ContentId = ContentId(1);

    fn history(gtype: GroupType, kinds: &[EventKind]) -> GroupHistory {
        let mut h = GroupHistory::new(GroupId(1), gtype, O).unwrap();
        for k in kinds {
            h.push(*k).unwrap();
        }
        h
    }

    #[test]
    fn flags_per_type() {
        assert_eq!(GroupType::G2.secrecy_flags(), (true, false));
        assert_eq!(GroupType::G3.secrecy_flags(), (false, true));
        assert_eq!(GroupType::G4.secrecy_flags(), (false, false));
    }

    #[test]
    fn membership_examples() {
        let h = history(GroupType::G4, &[]);
        assert!(is_member(&h, O, 0).unwrap());

        let h = history(
            GroupType::G4,
            &[EventKind::Join { user: A }, EventKind::Leave { user: A }],
        );
        assert!(!is_member(&h, A, 2).unwrap());
        assert!(is_member(&h, A, 1).unwrap());

        let h = history(GroupType::G4, &[EventKind::Join { user: A }]);
        assert!(!is_member(&h, B, 1).unwrap());
        assert_eq!(is_member(&h, A, 5), Err(HistoryError::TimeOutOfRange));
    }

    #[test]
    fn oracle_examples() {
        let pub_then_join = [
            EventKind::Publish { author: O, content: C1 },
            EventKind::Join { user: A },
        ];
        let h = history(GroupType::G2, &pub_then_join);
        assert_eq!(oracle_access(&h, A, C1, 2).unwrap(), AccessDecision::Deny);
        let h = history(GroupType::G3, &pub_then_join);
        assert_eq!(oracle_access(&h, A, C1, 2).unwrap(), AccessDecision::Permit);

        let join_pub_leave = [
            EventKind::Join { user: A },
            EventKind::Publish { author: O, content: C1 },
            EventKind::Leave { user: A },
        ];
        let h = history(GroupType::G4, &join_pub_leave);
        assert_eq!(oracle_access(&h, A, C1, 3).unwrap(), AccessDecision::Permit);
        let h = history(GroupType::G3, &join_pub_leave);
        assert_eq!(oracle_access(&h, A, C1, 3).unwrap(), AccessDecision::Deny);
        let h = history(GroupType::G2, &join_pub_leave);
        assert_eq!(oracle_access(&h, A, C1, 3).unwrap(), AccessDecision::Permit);
    }

    #[test]
    fn oracle_errors() {
        let h = history(GroupType::G4, &[EventKind::Join { user: A }]);
        assert_eq!(oracle_access(&h, A, C1, 1), Err(HistoryError::UnknownContent));
        assert_eq!(oracle_access(&h, A, C1, 9), Err(HistoryError::TimeOutOfRange));
    }

    #[test]
    fn rejoin_opens_new_interval() {
        let h = history(
            GroupType::G2,
            &[
                EventKind::Join { user: A },
                EventKind::Leave { user: A },
                EventKind::Publish { author: O, content: C1 },
                EventKind::Join { user: A },
            ],
        );
        assert_eq!(oracle_access(&h, A, C1, 4).unwrap(), AccessDecision::Deny);
        let h = GroupHistory::from_events(GroupId(1), GroupType::G4, h.events().to_vec()).unwrap();
        assert_eq!(oracle_access(&h, A, C1, 4).unwrap(), AccessDecision::Permit);
    }

    #[test]
    fn preconditions_rejected() {
        let mut h = history(GroupType::G4, &[]);
        assert_eq!(h.push(EventKind::Join { user: O }), Err(HistoryError::AlreadyMember(O)));
        assert_eq!(h.push(EventKind::Leave { user: A }), Err(HistoryError::NotAMember(A)));
        assert_eq!(h.push(EventKind::Leave { user: O }), Err(HistoryError::OwnerCannotLeave));
        assert_eq!(
            h.push(EventKind::Publish { author: A, content: C1 }),
            Err(HistoryError::NotAMember(A))
        );
        assert_eq!(
            h.push(EventKind::Create { owner: A }),
            Err(HistoryError::DuplicateCreate(1))
        );
        assert_eq!(
            h.push_event(GroupEvent { seq: 0, kind: EventKind::Join { user: A } }),
            Err(HistoryError::NonIncreasingSeq { seq: 0, prev: 0 })
        );
    }

    #[test]
    fn scenario_roundtrip_and_errors() {
        let text = "# demo\n0 CREATE 1\n3 JOIN 17\n\n4 PUBLISH 17 5\n7 LEAVE 17\n";
        let h = parse_scenario(text, GroupId(9), GroupType::G3).unwrap();
        assert_eq!(h.events().len(), 4);
        assert_eq!(h.publish_seq(ContentId(5)), Some(4));
        let again = parse_scenario(&format_scenario(&h), GroupId(9), GroupType::G3).unwrap();
        assert_eq!(again.events(), h.events());

        assert!(matches!(
            parse_scenario("  \n# nothing\n", GroupId(1), GroupType::G2),
            Err(ScenarioError::Empty)
        ));
        match parse_scenario("0 CREATE 1\n1 LEAVE 4\n", GroupId(1), GroupType::G2) {
            Err(ScenarioError::Invalid { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_scenario("0 CREATE 1\n1 DANCE 4\n", GroupId(1), GroupType::G2) {
            Err(ScenarioError::Syntax { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
