//! Drives a group history through an enforcement model and compares every
//! system-mediated read with the oracle.

use std::collections::BTreeMap;

use bytes::Bytes;
use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::group::{
    oracle_access, AccessDecision, ContentId, EventKind, GroupHistory, GroupType, HistoryError,
    Seq, UserId,
};
use crate::models::{Access, GroupModel, ModelError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub seq: Seq,
    pub user: UserId,
    pub content: ContentId,
    pub oracle: AccessDecision,
    pub model: AccessDecision,
    /// Set when the model permitted with the wrong plaintext.
    pub wrong_payload: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ReplayReport {
    pub checks: usize,
    pub divergences: Vec<Divergence>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.divergences.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("model rejected event at seq {seq}: {source}")]
    Model {
        seq: Seq,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    History(#[from] HistoryError),
}

/// Deterministic payload of a history content.
pub fn payload_for(content: ContentId) -> Bytes {
    Bytes::from(format!("content {content}"))
}

/// When to compare the model against the oracle during a replay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Checkpoints {
    /// After every event.
    EveryEvent,
    /// After every `k`-th event and after the last one.
    Every(usize),
    /// After the last event only.
    End,
}

/// Replays `history` into `model` (which must not know the group yet) and
/// checks every (user, published content) pair at each checkpoint.
pub fn replay(
    history: &GroupHistory,
    model: &mut dyn GroupModel,
    checkpoints: Checkpoints,
) -> Result<ReplayReport, ReplayError> {
    let group = history.group();
    let users = history.users();
    let mut ids: BTreeMap<ContentId, ContentId> = BTreeMap::new();
    let mut report = ReplayReport::default();
    let events = history.events();
    for (i, ev) in events.iter().enumerate() {
        let applied = match ev.kind {
            EventKind::Create { owner } => model.create_group(group, owner, history.gtype()),
            EventKind::Join { user } => model.join(group, user),
            EventKind::Leave { user } => model.leave(group, user),
            EventKind::Publish { author, content } => model
                .publish(group, author, payload_for(content))
                .map(|id| {
                    ids.insert(content, id);
                }),
        };
        applied.map_err(|source| ReplayError::Model { seq: ev.seq, source })?;

        let last = i + 1 == events.len();
        let due = match checkpoints {
            Checkpoints::EveryEvent => true,
            Checkpoints::Every(k) => last || (i + 1) % k.max(1) == 0,
            Checkpoints::End => last,
        };
        if !due {
            continue;
        }
        for (&content, &model_id) in &ids {
            for &user in &users {
                let expected = oracle_access(history, user, content, ev.seq)?;
                let got = model
                    .access(group, user, model_id)
                    .map_err(|source| ReplayError::Model { seq: ev.seq, source })?;
                report.checks += 1;
                let wrong_payload = matches!(&got, Access::Permit(b) if *b != payload_for(content));
                if got.decision() != expected || wrong_payload {
                    report.divergences.push(Divergence {
                        seq: ev.seq,
                        user,
                        content,
                        oracle: expected,
                        model: got.decision(),
                        wrong_payload,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Shape of a random history.
#[derive(Clone, Copy, Debug)]
pub struct HistoryShape {
    /// Users other than the owner that may appear.
    pub max_users: u64,
    pub max_contents: u64,
    pub events: usize,
}

impl Default for HistoryShape {
    fn default() -> Self {
        HistoryShape {
            max_users: 30,
            max_contents: 30,
            events: 80,
        }
    }
}

/// A seeded random interleaving of joins, leaves and publishes. User 1 is
/// the owner; authors are current members.
pub fn random_history(gtype: GroupType, shape: HistoryShape, seed: u64) -> GroupHistory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let owner = UserId(1);
    let mut h = GroupHistory::new(crate::group::GroupId(1), gtype, owner).expect("fresh history");
    let mut next_content = 1;
    for _ in 0..shape.events {
        let members: Vec<UserId> = h.current_members().collect();
        let roll = rng.gen_range(0..10);
        let kind = if roll < 4 {
            let outsider = (2..2 + shape.max_users)
                .map(UserId)
                .filter(|u| !members.contains(u))
                .choose(&mut rng);
            match outsider {
                Some(user) => EventKind::Join { user },
                None => continue,
            }
        } else if roll < 7 {
            match members.iter().copied().filter(|u| *u != owner).choose(&mut rng) {
                Some(user) => EventKind::Leave { user },
                None => continue,
            }
        } else {
            if next_content > shape.max_contents {
                continue;
            }
            let author = *members.iter().choose(&mut rng).expect("owner is a member");
            let content = ContentId(next_content);
            next_content += 1;
            EventKind::Publish { author, content }
        };
        h.push(kind).expect("generated events are valid");
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{Crypto, CryptoCostParams};
    use crate::group::{parse_scenario, GroupId};
    use crate::models::{build_model, EncryptionModel, ModelKind};

    #[test]
    fn random_histories_are_valid_and_seeded() {
        let a = random_history(GroupType::G4, HistoryShape::default(), 3);
        let b = random_history(GroupType::G4, HistoryShape::default(), 3);
        assert_eq!(a.events(), b.events());
        assert!(a.contents().len() <= 30);
        assert!(a.users().len() <= 31);
    }

    #[test]
    fn scripted_scenario_replays_clean() {
        let text = "0 CREATE 1\n1 JOIN 2\n2 PUBLISH 1 1\n3 JOIN 3\n4 LEAVE 2\n5 PUBLISH 3 2\n6 JOIN 2\n";
        for gtype in GroupType::ALL {
            let h = parse_scenario(text, GroupId(1), gtype).unwrap();
            for kind in ModelKind::ALL {
                let mut m = build_model(kind, CryptoCostParams::default(), 3, 1).unwrap();
                let r = replay(&h, m.as_mut(), Checkpoints::EveryEvent).unwrap();
                assert!(r.is_clean(), "{kind} {gtype}: {:?}", r.divergences);
                assert!(r.checks > 0);
            }
        }
    }

    #[test]
    fn rejoin_without_sync_keeps_earlier_keys() {
        // User 2 never reads between joining and rejoining; the key of
        // content 1 reached it only through the membership log.
        let text = "0 CREATE 1\n1 JOIN 2\n2 JOIN 3\n3 PUBLISH 1 1\n4 LEAVE 2\n5 JOIN 2\n";
        for gtype in GroupType::ALL {
            let h = parse_scenario(text, GroupId(1), gtype).unwrap();
            for kind in ModelKind::ALL {
                for d in 2..5 {
                    let mut m = build_model(kind, CryptoCostParams::default(), d, 1).unwrap();
                    let r = replay(&h, m.as_mut(), Checkpoints::End).unwrap();
                    assert!(r.is_clean(), "{kind} {gtype} d={d}: {:?}", r.divergences);
                }
            }
        }
    }

    #[test]
    fn model_rejection_is_reported_with_seq() {
        let h = parse_scenario("0 CREATE 1\n1 JOIN 2\n", GroupId(1), GroupType::G2).unwrap();
        let mut m = EncryptionModel::new(Crypto::model(), CryptoCostParams::default());
        m.create_group(GroupId(1), UserId(1), GroupType::G2).unwrap();
        let err = replay(&h, &mut m, Checkpoints::End).unwrap_err();
        assert!(matches!(err, ReplayError::Model { seq: 0, .. }));
    }
}
