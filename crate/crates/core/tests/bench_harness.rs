use std::process::Command;

use bytes::Bytes;
use dosn_privacy::bench::{
    check_history, measure_point, run_category_comparison, run_sweep, write_csv, BenchError, Category, Metric,
    Operation, Role, SweepConfig,
};
use dosn_privacy::crypto::{Crypto, CryptoCostParams, OpLedger};
use dosn_privacy::group::{parse_scenario, ContentId, GroupId, GroupType, UserId};
use dosn_privacy::models::{Access, EncryptionModel, GroupModel, ModelError, ModelKind};
use dosn_privacy::netsim::TrafficLedger;

fn grid() -> SweepConfig {
    SweepConfig {
        n_list: vec![10, 50, 100, 1000],
        p_list: vec![10, 50],
        content_size: 4096,
        seed: 42,
        ..SweepConfig::default()
    }
}

fn csv_of(cfg: &SweepConfig) -> Vec<u8> {
    let mut out = Vec::new();
    write_csv(&run_sweep(cfg).unwrap(), &mut out).unwrap();
    out
}

#[test]
fn same_seed_same_csv() {
    assert_eq!(csv_of(&grid()), csv_of(&grid()));
}

#[test]
fn time_column_is_the_closed_form_of_the_counters() {
    let params = CryptoCostParams::default();
    for row in run_sweep(&grid()).unwrap() {
        let l = row.ledger;
        let expected = l.sym_bytes_processed as f64 / params.sym_throughput
            + (l.keygen_count + l.sym_enc_count + l.sym_dec_count) as f64 * params.sym_key_setup
            + l.asym_enc_count as f64 * params.asym_encrypt
            + l.asym_dec_count as f64 * params.asym_decrypt;
        assert_eq!(row.time_s.to_bits(), expected.to_bits(), "{row:?}");
    }
}

#[test]
fn owner_time_is_monotone_in_the_driving_parameter() {
    let rows = run_sweep(&SweepConfig {
        n_list: vec![10, 100, 1000],
        p_list: vec![10, 50, 100],
        ..grid()
    })
    .unwrap();
    let owner = |m: ModelKind, g: GroupType, op: Operation| {
        let mut v: Vec<_> = rows
            .iter()
            .filter(|r| r.model == m && r.gtype == g && r.op == op && r.role == Role::Owner)
            .map(|r| (r.n, r.p, r.time_s))
            .collect();
        v.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        v
    };
    for g in GroupType::ALL {
        // encryption leave grows with n at fixed p
        let v = owner(ModelKind::Encryption, g, Operation::Leave);
        for p in [10, 50, 100] {
            let series: Vec<f64> = v.iter().filter(|r| r.1 == p).map(|r| r.2).collect();
            assert!(series.windows(2).all(|w| w[0] <= w[1]), "{g} p={p}: {series:?}");
        }
    }
    for m in [ModelKind::Encryption, ModelKind::Lkh] {
        // leave with backward secrecy grows with p at fixed n
        let v = owner(m, GroupType::G3, Operation::Leave);
        for n in [10, 100, 1000] {
            let series: Vec<f64> = v.iter().filter(|r| r.0 == n).map(|r| r.2).collect();
            assert!(series.windows(2).all(|w| w[0] < w[1]), "{m} n={n}: {series:?}");
        }
        // publish is flat
        for g in GroupType::ALL {
            let v = owner(m, g, Operation::Publish);
            assert!(v.iter().all(|r| r.2 == v[0].2));
        }
    }
}

#[test]
fn roles_measure_the_expected_parties() {
    let rows = measure_point(ModelKind::Encryption, GroupType::G4, 20, 5, &grid()).unwrap();
    let get = |op, role| rows.iter().find(|r| r.op == op && r.role == role).unwrap();
    assert_eq!(get(Operation::Join, Role::Joiner).ledger.asym_dec_count, 1);
    assert_eq!(get(Operation::Join, Role::Member).ledger, OpLedger::default());
    assert_eq!(get(Operation::Leave, Role::Member).ledger.asym_dec_count, 1);
    assert_eq!(get(Operation::Leave, Role::Member).traffic.bytes_received, 256);
    assert_eq!(get(Operation::Leave, Role::Leaver).ledger, OpLedger::default());
    let reader = get(Operation::Publish, Role::Member);
    assert_eq!(reader.ledger.sym_dec_count, 2);
    assert_eq!(reader.traffic.bytes_received, 4096 + 32);
}

#[test]
fn comparison_summary_is_normalized_per_axis() {
    let base = SweepConfig {
        content_size: 1024,
        ..SweepConfig::default()
    };
    let s = run_category_comparison(Category::Passive, &base).unwrap();
    assert_eq!((s.n, s.p), (4000, 2000));
    assert_eq!(s.cells.len(), 3 * 3 * 3 * Metric::ALL.len());
    assert!(s.cells.iter().all(|c| (0.0..=1.0).contains(&c.normalized)));
    for g in GroupType::ALL {
        for op in Operation::ALL {
            let axis: Vec<_> = s
                .cells
                .iter()
                .filter(|c| c.gtype == g && c.op == op && c.metric == Metric::Time)
                .collect();
            assert_eq!(axis.len(), 3);
            let max = axis.iter().map(|c| c.normalized).fold(0.0, f64::max);
            let tie = axis.iter().all(|c| c.raw == axis[0].raw);
            assert!(tie || max == 1.0, "{g} {op}");
        }
    }
    assert_eq!(Category::Active.contents(), 8000);
    assert_eq!("normal".parse::<Category>().unwrap().contents(), 4000);
}

/// Encryption model that wrongly grants every read after a leave.
struct Leaky {
    inner: EncryptionModel,
}

impl GroupModel for Leaky {
    fn kind(&self) -> ModelKind {
        self.inner.kind()
    }
    fn create_group(&mut self, g: GroupId, o: UserId, t: GroupType) -> Result<(), ModelError> {
        self.inner.create_group(g, o, t)
    }
    fn publish(&mut self, g: GroupId, a: UserId, c: Bytes) -> Result<ContentId, ModelError> {
        self.inner.publish(g, a, c)
    }
    fn join(&mut self, g: GroupId, u: UserId) -> Result<(), ModelError> {
        self.inner.join(g, u)
    }
    fn leave(&mut self, g: GroupId, u: UserId) -> Result<(), ModelError> {
        self.inner.leave(g, u)
    }
    fn access(&mut self, g: GroupId, u: UserId, c: ContentId) -> Result<Access, ModelError> {
        match self.inner.access(g, u, c)? {
            Access::Deny => Ok(Access::Permit(Bytes::from(format!("content {c}")))),
            permit => Ok(permit),
        }
    }
    fn sync_member(&mut self, g: GroupId, u: UserId) -> Result<(), ModelError> {
        self.inner.sync_member(g, u)
    }
    fn op_ledger(&self, u: UserId) -> OpLedger {
        self.inner.op_ledger(u)
    }
    fn traffic(&self, u: UserId) -> TrafficLedger {
        self.inner.traffic(u)
    }
    fn reset_ledgers(&mut self) {
        self.inner.reset_ledgers()
    }
    fn cost_params(&self) -> CryptoCostParams {
        self.inner.cost_params()
    }
}

#[test]
fn injected_fault_is_a_divergence() {
    let h = parse_scenario("0 CREATE 1\n1 JOIN 2\n2 PUBLISH 1 1\n3 LEAVE 2\n", GroupId(1), GroupType::G3).unwrap();
    let mut honest = EncryptionModel::new(Crypto::model(), CryptoCostParams::default());
    assert!(check_history(&h, &mut honest).is_ok());
    let mut leaky = Leaky {
        inner: EncryptionModel::new(Crypto::model(), CryptoCostParams::default()),
    };
    let err = check_history(&h, &mut leaky).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let BenchError::Divergence(report) = err else {
        panic!("expected divergence");
    };
    assert_eq!(report.divergences[0].user, UserId(2));
    assert_eq!(report.divergences[0].seq, 3);
}

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

#[test]
fn cli_sweep_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let status = bench()
        .args(["sweep", "--models", "lkh,allocation", "--gtypes", "G3", "--n", "10,20", "--p", "5"])
        .args(["--content-size", "100", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 8);

    let bad = bench().args(["sweep", "--gtypes", "G9", "--out"]).arg(&out).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let missing = bench().args(["sweep"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));

    let profile = dir.path().join("ctr.profile");
    std::fs::write(&profile, "base = ctr\n").unwrap();
    let status = bench()
        .args(["sweep", "--models", "encryption", "--n", "10", "--p", "1", "--profile"])
        .arg(&profile)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn cli_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.txt");
    std::fs::write(&file, "# demo\n0 CREATE 1\n1 JOIN 2\n2 PUBLISH 2 1\n3 JOIN 3\n4 LEAVE 2\n").unwrap();
    for model in ["encryption", "lkh", "allocation"] {
        for gtype in ["G2", "G3", "G4"] {
            let out = bench()
                .args(["scenario", "--model", model, "--gtype", gtype, "--file"])
                .arg(&file)
                .output()
                .unwrap();
            assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
            assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 5);
        }
    }
    std::fs::write(&file, "0 CREATE 1\n1 JOIN 2\n2 JOIN 2\n").unwrap();
    let out = bench()
        .args(["scenario", "--model", "lkh", "--gtype", "G2", "--file"])
        .arg(&file)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}
