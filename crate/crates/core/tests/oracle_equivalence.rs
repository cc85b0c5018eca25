use dosn_privacy::crypto::CryptoCostParams;
use dosn_privacy::group::{GroupId, GroupType, UserId};
use dosn_privacy::models::{build_model, AllocationModel, GroupModel, ModelKind};
use dosn_privacy::replay::{random_history, replay, Checkpoints, HistoryShape};
use proptest::prelude::*;

fn gtype() -> impl Strategy<Value = GroupType> {
    prop_oneof![Just(GroupType::G2), Just(GroupType::G3), Just(GroupType::G4)]
}

fn shape() -> impl Strategy<Value = HistoryShape> {
    (1u64..=30, 1u64..=30, 1usize..120).prop_map(|(max_users, max_contents, events)| HistoryShape {
        max_users,
        max_contents,
        events,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn every_model_matches_oracle(g in gtype(), s in shape(), seed in any::<u64>(), d in 2usize..6) {
        let history = random_history(g, s, seed);
        for kind in ModelKind::ALL {
            let mut model = build_model(kind, CryptoCostParams::default(), d, seed).unwrap();
            let report = replay(&history, model.as_mut(), Checkpoints::EveryEvent).unwrap();
            prop_assert!(report.is_clean(), "{kind} {g}: {:?}", &report.divergences[..report.divergences.len().min(5)]);
        }
    }

    #[test]
    fn allocation_is_crypto_free_and_replica_safe(g in gtype(), s in shape(), seed in any::<u64>()) {
        let history = random_history(g, s, seed);
        let mut model = AllocationModel::new(CryptoCostParams::default(), seed);
        replay(&history, &mut model, Checkpoints::End).unwrap();
        prop_assert_eq!(model.replica_violations(GroupId(1)), 0);
        for u in history.users() {
            prop_assert_eq!(model.op_ledger(u).total_crypto_ops(), 0);
        }
        prop_assert_eq!(model.op_ledger(UserId(1)).total_crypto_ops(), 0);
    }
}
