//! Parameter sweeps, category comparisons and scenario replays, with CSV
//! output.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use bytes::Bytes;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::crypto::{CryptoCostParams, OpLedger, ProfileError};
use crate::group::{parse_scenario, EventKind, GroupHistory, GroupId, GroupType, ScenarioError, UserId};
use crate::models::{build_model, GroupModel, ModelError, ModelKind};
use crate::netsim::TrafficLedger;
use crate::replay::{payload_for, replay, Checkpoints, ReplayError, ReplayReport};

pub const CSV_HEADER: [&str; 14] = [
    "model", "gtype", "op", "role", "n", "p", "time_s", "bytes_sent", "bytes_recv", "sym_enc",
    "sym_dec", "asym_enc", "asym_dec", "keygen",
];

const GROUP: GroupId = GroupId(1);
const OWNER: UserId = UserId(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operation {
    Publish,
    Join,
    Leave,
}

impl Operation {
    pub const ALL: [Operation; 3] = [Operation::Publish, Operation::Join, Operation::Leave];
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operation::Publish => "publish",
            Operation::Join => "join",
            Operation::Leave => "leave",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Owner,
    Joiner,
    Leaver,
    Member,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Owner => "owner",
            Role::Joiner => "joiner",
            Role::Leaver => "leaver",
            Role::Member => "member",
        })
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{} access divergence(s) from the oracle", .0.divergences.len())]
    Divergence(ReplayReport),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl BenchError {
    /// Process exit status: 2 for an oracle divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Divergence(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub models: Vec<ModelKind>,
    pub gtypes: Vec<GroupType>,
    pub n_list: Vec<usize>,
    pub p_list: Vec<usize>,
    pub degree: usize,
    pub content_size: usize,
    pub seed: u64,
    pub params: CryptoCostParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            models: ModelKind::ALL.to_vec(),
            gtypes: GroupType::ALL.to_vec(),
            n_list: vec![10, 50, 100, 1000, 10000],
            p_list: vec![10, 50, 100],
            degree: 4,
            content_size: 102_400,
            seed: 1,
            params: CryptoCostParams::default(),
        }
    }
}

impl SweepConfig {
    fn validate(&self) -> Result<(), BenchError> {
        let usage = |m: &str| Err(BenchError::Usage(m.into()));
        if self.models.is_empty() {
            return usage("no models selected");
        }
        if self.gtypes.is_empty() {
            return usage("no group types selected");
        }
        if self.n_list.is_empty() || self.p_list.is_empty() {
            return usage("empty n or p list");
        }
        if self.n_list.iter().any(|n| *n < 2) {
            return usage("n must be at least 2");
        }
        if self.degree < 2 {
            return usage("degree must be at least 2");
        }
        Ok(self.params.validate()?)
    }
}

/// One measured (model, group type, operation, role) cell of a sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub model: ModelKind,
    pub gtype: GroupType,
    pub op: Operation,
    pub role: Role,
    pub n: usize,
    pub p: usize,
    pub time_s: f64,
    pub ledger: OpLedger,
    pub traffic: TrafficLedger,
    /// Host time of the operation itself (owner rows only); not part of the
    /// CSV.
    pub wall_s: f64,
}

impl ResultRow {
    fn sort_key(&self) -> (ModelKind, GroupType, Operation, Role, usize, usize) {
        (self.model, self.gtype, self.op, self.role, self.n, self.p)
    }

    fn record(&self) -> [String; 14] {
        [
            self.model.to_string(),
            self.gtype.to_string(),
            self.op.to_string(),
            self.role.to_string(),
            self.n.to_string(),
            self.p.to_string(),
            format!("{:e}", self.time_s),
            self.traffic.bytes_sent.to_string(),
            self.traffic.bytes_received.to_string(),
            self.ledger.sym_enc_count.to_string(),
            self.ledger.sym_dec_count.to_string(),
            self.ledger.asym_enc_count.to_string(),
            self.ledger.asym_dec_count.to_string(),
            self.ledger.keygen_count.to_string(),
        ]
    }
}

/// A pre-built group ready for single-operation measurements.
struct Fixture {
    model: Box<dyn GroupModel + Send>,
    members: Vec<UserId>,
}

fn build_fixture(
    kind: ModelKind,
    gtype: GroupType,
    n: usize,
    p: usize,
    cfg: &SweepConfig,
    payload: &Bytes,
) -> Result<Fixture, BenchError> {
    let mut model = build_model(kind, cfg.params, cfg.degree, cfg.seed)?;
    model.create_group(GROUP, OWNER, gtype)?;
    let members: Vec<UserId> = (2..2 + n as u64).map(UserId).collect();
    for &u in &members {
        model.join(GROUP, u)?;
    }
    for _ in 0..p {
        model.publish(GROUP, OWNER, payload.clone())?;
    }
    Ok(Fixture { model, members })
}

/// Measures one join, one leave and one publish on a group of `n` members
/// (owner excluded) holding `p` contents.
pub fn measure_point(
    kind: ModelKind,
    gtype: GroupType,
    n: usize,
    p: usize,
    cfg: &SweepConfig,
) -> Result<Vec<ResultRow>, BenchError> {
    if n < 2 {
        return Err(BenchError::Usage("n must be at least 2".into()));
    }
    let payload = Bytes::from(vec![0x5a; cfg.content_size]);
    let Fixture { mut model, members } = build_fixture(kind, gtype, n, p, cfg, &payload)?;

    // The same users play the roles in every model for a given point.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((n as u64) << 32) ^ p as u64);
    let picked: Vec<UserId> = members.choose_multiple(&mut rng, 2).copied().collect();
    let (member, leaver) = (picked[0], picked[1]);
    let joiner = UserId(2 + n as u64);

    model.sync_member(GROUP, member)?;
    model.sync_member(GROUP, leaver)?;

    let mut rows = Vec::new();
    let params = model.cost_params();
    let mut row = |model: &dyn GroupModel, op, role, user, wall_s| {
        let ledger = model.op_ledger(user);
        rows.push(ResultRow {
            model: kind,
            gtype,
            op,
            role,
            n,
            p,
            time_s: ledger.modeled_time(&params),
            ledger,
            traffic: model.traffic(user),
            wall_s,
        });
    };

    model.reset_ledgers();
    let start = Instant::now();
    model.join(GROUP, joiner)?;
    let wall = start.elapsed().as_secs_f64();
    model.sync_member(GROUP, joiner)?;
    model.sync_member(GROUP, member)?;
    row(model.as_ref(), Operation::Join, Role::Owner, OWNER, wall);
    row(model.as_ref(), Operation::Join, Role::Joiner, joiner, 0.0);
    row(model.as_ref(), Operation::Join, Role::Member, member, 0.0);

    model.sync_member(GROUP, leaver)?;
    model.reset_ledgers();
    let start = Instant::now();
    model.leave(GROUP, leaver)?;
    let wall = start.elapsed().as_secs_f64();
    model.sync_member(GROUP, member)?;
    model.sync_member(GROUP, leaver)?;
    row(model.as_ref(), Operation::Leave, Role::Owner, OWNER, wall);
    row(model.as_ref(), Operation::Leave, Role::Leaver, leaver, 0.0);
    row(model.as_ref(), Operation::Leave, Role::Member, member, 0.0);

    model.reset_ledgers();
    let start = Instant::now();
    let content = model.publish(GROUP, OWNER, payload)?;
    let wall = start.elapsed().as_secs_f64();
    model.access(GROUP, member, content)?;
    row(model.as_ref(), Operation::Publish, Role::Owner, OWNER, wall);
    row(model.as_ref(), Operation::Publish, Role::Member, member, 0.0);

    Ok(rows)
}

/// Every (model, group type, n, p) point of `cfg`, sorted by row key.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<ResultRow>, BenchError> {
    cfg.validate()?;
    let mut points = Vec::new();
    for &m in &cfg.models {
        for &g in &cfg.gtypes {
            for &n in &cfg.n_list {
                for &p in &cfg.p_list {
                    points.push((m, g, n, p));
                }
            }
        }
    }
    let per_point: Result<Vec<Vec<ResultRow>>, BenchError> = points
        .par_iter()
        .map(|&(m, g, n, p)| measure_point(m, g, n, p, cfg))
        .collect();
    let mut rows: Vec<ResultRow> = per_point?.into_iter().flatten().collect();
    rows.sort_by_key(ResultRow::sort_key);
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn create_file(path: &Path) -> Result<std::fs::File, BenchError> {
    std::fs::File::create(path).map_err(|source| BenchError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<(), BenchError> {
    write_csv(rows, create_file(path)?)
}

/// Group activity levels compared at n = 4000.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Passive,
    Normal,
    Active,
}

impl Category {
    pub const MEMBERS: usize = 4000;

    pub fn contents(self) -> usize {
        match self {
            Category::Passive => 2000,
            Category::Normal => 4000,
            Category::Active => 8000,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Passive => "passive",
            Category::Normal => "normal",
            Category::Active => "active",
        })
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "passive" => Ok(Category::Passive),
            "normal" => Ok(Category::Normal),
            "active" => Ok(Category::Active),
            other => Err(format!("unknown category `{other}` (expected passive, normal or active)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    /// Modeled crypto time of the owner.
    Time,
    BytesSent,
    BytesRecv,
    /// Host time of the owner's operation; varies between runs.
    Wall,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Time, Metric::BytesSent, Metric::BytesRecv, Metric::Wall];

    fn of(self, row: &ResultRow) -> f64 {
        match self {
            Metric::Time => row.time_s,
            Metric::BytesSent => row.traffic.bytes_sent as f64,
            Metric::BytesRecv => row.traffic.bytes_received as f64,
            Metric::Wall => row.wall_s,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Time => "time_s",
            Metric::BytesSent => "bytes_sent",
            Metric::BytesRecv => "bytes_recv",
            Metric::Wall => "wall_s",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryCell {
    pub model: ModelKind,
    pub gtype: GroupType,
    pub op: Operation,
    pub metric: Metric,
    pub raw: f64,
    /// Min-max normalized across the models on the same (op, gtype, metric)
    /// axis; 0 when all models tie.
    pub normalized: f64,
}

#[derive(Clone, Debug)]
pub struct ScenarioSummary {
    pub category: Category,
    pub n: usize,
    pub p: usize,
    pub cells: Vec<SummaryCell>,
}

impl ScenarioSummary {
    pub fn cell(&self, model: ModelKind, gtype: GroupType, op: Operation, metric: Metric) -> Option<&SummaryCell> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.gtype == gtype && c.op == op && c.metric == metric)
    }
}

/// Owner costs of every model on the nine (operation, group type) axes for
/// one group category, normalized per axis.
pub fn run_category_comparison(category: Category, base: &SweepConfig) -> Result<ScenarioSummary, BenchError> {
    let cfg = SweepConfig {
        n_list: vec![Category::MEMBERS],
        p_list: vec![category.contents()],
        ..base.clone()
    };
    let rows: Vec<ResultRow> = run_sweep(&cfg)?
        .into_iter()
        .filter(|r| r.role == Role::Owner)
        .collect();
    let mut cells = Vec::new();
    for &gtype in &cfg.gtypes {
        for op in Operation::ALL {
            for metric in Metric::ALL {
                let axis: Vec<&ResultRow> = rows.iter().filter(|r| r.gtype == gtype && r.op == op).collect();
                let values: Vec<f64> = axis.iter().map(|r| metric.of(r)).collect();
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for (r, v) in axis.iter().zip(values) {
                    let normalized = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                    cells.push(SummaryCell {
                        model: r.model,
                        gtype,
                        op,
                        metric,
                        raw: v,
                        normalized,
                    });
                }
            }
        }
    }
    Ok(ScenarioSummary {
        category,
        n: Category::MEMBERS,
        p: category.contents(),
        cells,
    })
}

pub fn write_summary<W: Write>(summary: &ScenarioSummary, out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["category", "n", "p", "model", "gtype", "op", "metric", "raw", "normalized"])?;
    for c in &summary.cells {
        w.write_record([
            summary.category.to_string(),
            summary.n.to_string(),
            summary.p.to_string(),
            c.model.to_string(),
            c.gtype.to_string(),
            c.op.to_string(),
            c.metric.to_string(),
            format!("{:e}", c.raw),
            format!("{}", c.normalized),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn emit_summary(summary: &ScenarioSummary, path: &Path) -> Result<(), BenchError> {
    write_summary(summary, create_file(path)?)
}

/// Checks every access of `history` replayed into `model` against the
/// oracle.
pub fn check_history(history: &GroupHistory, model: &mut dyn GroupModel) -> Result<ReplayReport, BenchError> {
    let report = replay(history, model, Checkpoints::EveryEvent)?;
    if report.is_clean() {
        Ok(report)
    } else {
        Err(BenchError::Divergence(report))
    }
}

/// Replays a scenario through `kind`, failing on any oracle divergence,
/// then reports the owner-side cost of every membership and publish event.
pub fn run_scenario(text: &str, kind: ModelKind, gtype: GroupType, cfg: &SweepConfig) -> Result<Vec<ResultRow>, BenchError> {
    let history = parse_scenario(text, GROUP, gtype)?;
    let mut checked = build_model(kind, cfg.params, cfg.degree, cfg.seed)?;
    check_history(&history, checked.as_mut())?;

    let mut model = build_model(kind, cfg.params, cfg.degree, cfg.seed)?;
    let owner = history.owner();
    let mut members = 0usize;
    let mut contents = 0usize;
    let mut rows = Vec::new();
    for ev in history.events() {
        model.reset_ledgers();
        let start = Instant::now();
        let (op, user) = match ev.kind {
            EventKind::Create { owner } => {
                model.create_group(GROUP, owner, gtype)?;
                continue;
            }
            EventKind::Join { user } => {
                model.join(GROUP, user)?;
                (Operation::Join, user)
            }
            EventKind::Leave { user } => {
                model.leave(GROUP, user)?;
                (Operation::Leave, user)
            }
            EventKind::Publish { author, content } => {
                model.publish(GROUP, author, payload_for(content))?;
                (Operation::Publish, author)
            }
        };
        let wall_s = start.elapsed().as_secs_f64();
        let who = match op {
            Operation::Publish => user,
            _ => owner,
        };
        let ledger = model.op_ledger(who);
        rows.push(ResultRow {
            model: kind,
            gtype,
            op,
            role: Role::Owner,
            n: members,
            p: contents,
            time_s: ledger.modeled_time(&cfg.params),
            ledger,
            traffic: model.traffic(who),
            wall_s,
        });
        match op {
            Operation::Join => members += 1,
            Operation::Leave => members -= 1,
            Operation::Publish => contents += 1,
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SweepConfig {
        SweepConfig {
            n_list: vec![10, 20],
            p_list: vec![3],
            content_size: 1000,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn sweep_rows_and_order() {
        let rows = run_sweep(&small()).unwrap();
        assert_eq!(rows.len(), 3 * 3 * 2 * 8);
        assert!(rows.windows(2).all(|w| w[0].sort_key() < w[1].sort_key()));
    }

    #[test]
    fn empty_selection_is_usage_error() {
        let cfg = SweepConfig {
            models: vec![],
            ..small()
        };
        let err = run_sweep(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(matches!(err, BenchError::Usage(_)));
    }

    #[test]
    fn csv_header_once() {
        let rows = run_sweep(&small()).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(text.matches("model,gtype").count(), 1);
        assert_eq!(text.lines().count(), rows.len() + 1);
    }

    #[test]
    fn scenario_rows() {
        let text = "0 CREATE 1\n1 JOIN 2\n2 PUBLISH 2 1\n3 LEAVE 2\n";
        let rows = run_scenario(text, ModelKind::Encryption, GroupType::G3, &SweepConfig::default()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].ledger.sym_enc_count, 2);
        assert!(matches!(
            run_scenario("", ModelKind::Lkh, GroupType::G2, &SweepConfig::default()),
            Err(BenchError::Scenario(ScenarioError::Empty))
        ));
        let bad = run_scenario("0 CREATE 1\n1 LEAVE 5\n", ModelKind::Lkh, GroupType::G2, &SweepConfig::default());
        assert!(matches!(bad, Err(BenchError::Scenario(ScenarioError::Invalid { line: 2, .. }))));
    }
}
