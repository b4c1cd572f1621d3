//! Unified constraint queries over logs, embeddings and the formal model.
//!
//! Grammar, one query per line:
//!
//! ```text
//! <mode>: <clause> (<clause>)*
//! mode   := logs | corr | formal | auto
//! clause := field=value | field!=value | field in {v,...} | field not-in {v,...}
//!         | field=a..b | action=permit|deny | neighbors(token, k=N) | limit=N
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ClusterModel;
use crate::embedding::{EmbeddingError, EmbeddingModel, Neighbor};
use crate::formal::intervals::{
    parse_ipv4_range, protocol_number, IPV4_MAX, PORT_MAX, PROTOCOL_MAX,
};
use crate::formal::{
    Action, FirewallModel, IntervalSet, NameConstraint, PacketField, SolveOutcome, SymbolicPacket,
};
use crate::ingest::{FlowRecord, LogCorpus, Token};
use crate::parallel::{map_slice, ExecMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    Logs,
    Corr,
    Formal,
    Auto,
}

impl QueryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryMode::Logs => "logs",
            QueryMode::Corr => "corr",
            QueryMode::Formal => "formal",
            QueryMode::Auto => "auto",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryField {
    SrcIp,
    DstIp,
    FromZone,
    ToZone,
    Application,
    Protocol,
    DstPort,
    SrcRegion,
    DstRegion,
}

impl QueryField {
    pub const ALL: [QueryField; 9] = [
        QueryField::SrcIp,
        QueryField::DstIp,
        QueryField::FromZone,
        QueryField::ToZone,
        QueryField::Application,
        QueryField::Protocol,
        QueryField::DstPort,
        QueryField::SrcRegion,
        QueryField::DstRegion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QueryField::SrcIp => "src_ip",
            QueryField::DstIp => "dst_ip",
            QueryField::FromZone => "from_zone",
            QueryField::ToZone => "to_zone",
            QueryField::Application => "application",
            QueryField::Protocol => "protocol",
            QueryField::DstPort => "dst_port",
            QueryField::SrcRegion => "src_region",
            QueryField::DstRegion => "dst_region",
        }
    }

    pub fn packet_field(self) -> Option<PacketField> {
        Some(match self {
            QueryField::SrcIp => PacketField::SrcIp,
            QueryField::DstIp => PacketField::DstIp,
            QueryField::FromZone => PacketField::FromZone,
            QueryField::ToZone => PacketField::ToZone,
            QueryField::Application => PacketField::Application,
            QueryField::Protocol => PacketField::Protocol,
            QueryField::DstPort => PacketField::DstPort,
            QueryField::SrcRegion | QueryField::DstRegion => return None,
        })
    }

    fn kind(self) -> ValueKind {
        match self {
            QueryField::SrcIp | QueryField::DstIp => ValueKind::Ip,
            QueryField::Protocol => ValueKind::Protocol,
            QueryField::DstPort => ValueKind::Port,
            _ => ValueKind::Name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueKind {
    Ip,
    Protocol,
    Port,
    Name,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operator {
    Eq,
    Ne,
    In,
    NotIn,
    Range,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub field: QueryField,
    pub op: Operator,
    /// One value for `=`/`!=`, the members for `in`/`not-in`, `[lo, hi]` for ranges.
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub mode: QueryMode,
    pub constraints: Vec<Constraint>,
    pub desired_action: Option<Action>,
    pub anchor: Option<Token>,
    pub k: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{message} at position {position}")]
pub struct QueryParseError {
    /// Zero-based character offset into the query text.
    pub position: usize,
    pub message: String,
}

struct Cursor<'a> {
    chars: Vec<char>,
    pos: usize,
    _text: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor {
            chars: text.chars().collect(),
            pos: 0,
            _text: text,
        }
    }

    fn err<T>(&self, at: usize, message: impl Into<String>) -> Result<T, QueryParseError> {
        Err(QueryParseError {
            position: at,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn eat(&mut self, s: &str) -> bool {
        let n = s.chars().count();
        if self.chars.len() >= self.pos + n
            && s.chars()
                .eq(self.chars[self.pos..self.pos + n].iter().copied())
        {
            self.pos += n;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), QueryParseError> {
        self.skip_ws();
        if self.eat(s) {
            Ok(())
        } else {
            self.err(self.pos, format!("expected {s:?}"))
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    /// A bare value: everything up to whitespace or a delimiter.
    fn value(&mut self, delims: &[char]) -> (usize, String) {
        self.skip_ws();
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| !c.is_whitespace() && !delims.contains(&c))
        {
            self.pos += 1;
        }
        (start, self.chars[start..self.pos].iter().collect())
    }
}

fn parse_field(name: &str) -> Option<QueryField> {
    QueryField::ALL.into_iter().find(|f| f.name() == name)
}

fn check_value(field: QueryField, v: &str) -> Result<(), String> {
    match field.kind() {
        ValueKind::Ip => parse_ipv4_range(v).map(|_| ()),
        ValueKind::Protocol => protocol_number(v)
            .map(|_| ())
            .ok_or_else(|| format!("invalid protocol {v:?}")),
        ValueKind::Port => v
            .parse::<u16>()
            .map(|_| ())
            .map_err(|_| format!("invalid port {v:?}")),
        ValueKind::Name => {
            if v.is_empty() {
                Err("empty value".into())
            } else {
                Ok(())
            }
        }
    }
}

pub fn parse_query(text: &str) -> Result<Query, QueryParseError> {
    let mut c = Cursor::new(text);
    c.skip_ws();
    let mode_at = c.pos;
    let mode = match c.ident().as_str() {
        "logs" => QueryMode::Logs,
        "corr" => QueryMode::Corr,
        "formal" => QueryMode::Formal,
        "auto" => QueryMode::Auto,
        other => {
            return c.err(
                mode_at,
                format!("unknown mode {other:?} (expected logs, corr, formal or auto)"),
            )
        }
    };
    c.expect(":")?;
    let mut q = Query {
        mode,
        constraints: Vec::new(),
        desired_action: None,
        anchor: None,
        k: None,
        limit: None,
    };
    loop {
        c.skip_ws();
        if c.at_end() {
            break;
        }
        let at = c.pos;
        let name = c.ident();
        if name.is_empty() {
            return c.err(at, "expected a clause");
        }
        if name == "neighbors" {
            if mode != QueryMode::Corr {
                return c.err(at, "neighbors(...) is only valid in corr mode");
            }
            if q.anchor.is_some() {
                return c.err(at, "corr query takes exactly one anchor token");
            }
            c.expect("(")?;
            let (tok_at, tok) = c.value(&[',', ')']);
            let token: Token = match tok.parse() {
                Ok(t) => t,
                Err(e) => return c.err(tok_at, format!("invalid token: {e}")),
            };
            c.expect(",")?;
            c.skip_ws();
            let k_at = c.pos;
            if c.ident() != "k" {
                return c.err(k_at, "expected k=N");
            }
            c.expect("=")?;
            let (n_at, n) = c.value(&[')']);
            let k: usize = match n.parse() {
                Ok(k) if k >= 1 => k,
                _ => return c.err(n_at, "k must be a positive integer"),
            };
            c.expect(")")?;
            q.anchor = Some(token);
            q.k = Some(k);
            continue;
        }
        c.skip_ws();
        if name == "action" || name == "limit" {
            c.expect("=")?;
            let (v_at, v) = c.value(&[]);
            if name == "action" {
                if q.desired_action.is_some() {
                    return c.err(at, "action given twice");
                }
                q.desired_action = match v.as_str() {
                    "permit" => Some(Action::Permit),
                    "deny" => Some(Action::Deny),
                    _ => return c.err(v_at, "action must be permit or deny"),
                };
            } else {
                q.limit = match v.parse() {
                    Ok(n) => Some(n),
                    Err(_) => return c.err(v_at, "limit must be a non-negative integer"),
                };
            }
            continue;
        }
        let Some(field) = parse_field(&name) else {
            return c.err(at, format!("unknown field {name:?}"));
        };
        if mode == QueryMode::Corr {
            return c.err(at, "corr queries take only neighbors(...) and limit");
        }
        if mode == QueryMode::Formal && field.packet_field().is_none() {
            return c.err(at, format!("{name} is not a firewall model field"));
        }
        let op_at = c.pos;
        let op = if c.eat("!=") {
            Operator::Ne
        } else if c.eat("=") {
            Operator::Eq
        } else {
            match c.ident().as_str() {
                "in" => Operator::In,
                "not-in" => Operator::NotIn,
                _ => return c.err(op_at, "expected =, !=, in or not-in"),
            }
        };
        let mut values: Vec<(usize, String)> = Vec::new();
        let mut op = op;
        if matches!(op, Operator::In | Operator::NotIn) {
            c.expect("{")?;
            loop {
                let (v_at, v) = c.value(&[',', '}']);
                if v.is_empty() {
                    return c.err(v_at, "expected a value");
                }
                values.push((v_at, v));
                c.skip_ws();
                if c.eat(",") {
                    continue;
                }
                if c.eat("}") {
                    break;
                }
                return c.err(c.pos, "expected ',' or '}'");
            }
        } else {
            let (v_at, v) = c.value(&[]);
            if v.is_empty() {
                return c.err(v_at, "expected a value");
            }
            if let Some((lo, hi)) = v.split_once("..") {
                if op == Operator::Ne {
                    return c.err(v_at, "ranges only combine with =");
                }
                if field.kind() == ValueKind::Name {
                    return c.err(v_at, format!("{name} does not support ranges"));
                }
                op = Operator::Range;
                values.push((v_at, lo.to_string()));
                values.push((v_at + lo.chars().count() + 2, hi.to_string()));
            } else {
                values.push((v_at, v));
            }
        }
        for (v_at, v) in &values {
            if let Err(e) = check_value(field, v) {
                return c.err(*v_at, e);
            }
        }
        if op == Operator::Range {
            let lo = range_bound(field, &values[0].1, true);
            let hi = range_bound(field, &values[1].1, false);
            if lo > hi {
                return c.err(values[0].0, "empty range");
            }
        }
        q.constraints.push(Constraint {
            field,
            op,
            values: values.into_iter().map(|(_, v)| v).collect(),
        });
    }
    if mode == QueryMode::Corr && q.anchor.is_none() {
        return c.err(c.pos, "corr query needs neighbors(token, k=N)");
    }
    Ok(q)
}

fn range_bound(field: QueryField, v: &str, low: bool) -> u64 {
    match field.kind() {
        ValueKind::Ip => {
            let (lo, hi) = parse_ipv4_range(v).expect("validated");
            if low {
                lo
            } else {
                hi
            }
        }
        ValueKind::Protocol => u64::from(protocol_number(v).expect("validated")),
        _ => v.parse().expect("validated"),
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.mode.as_str())?;
        for c in &self.constraints {
            let name = c.field.name();
            match c.op {
                Operator::Eq => write!(f, " {name}={}", c.values[0])?,
                Operator::Ne => write!(f, " {name}!={}", c.values[0])?,
                Operator::In => write!(f, " {name} in {{{}}}", c.values.join(", "))?,
                Operator::NotIn => write!(f, " {name} not-in {{{}}}", c.values.join(", "))?,
                Operator::Range => write!(f, " {name}={}..{}", c.values[0], c.values[1])?,
            }
        }
        if let (Some(t), Some(k)) = (&self.anchor, self.k) {
            write!(f, " neighbors({t}, k={k})")?;
        }
        if let Some(a) = self.desired_action {
            write!(f, " action={}", a.as_str().to_ascii_lowercase())?;
        }
        if let Some(n) = self.limit {
            write!(f, " limit={n}")?;
        }
        Ok(())
    }
}

/// Values of one constraint as a numeric set, for IP, protocol and port fields.
fn numeric_set(c: &Constraint) -> IntervalSet {
    let max = match c.field.kind() {
        ValueKind::Ip => IPV4_MAX,
        ValueKind::Protocol => PROTOCOL_MAX,
        _ => PORT_MAX,
    };
    let member = |v: &str| -> (u64, u64) {
        match c.field.kind() {
            ValueKind::Ip => parse_ipv4_range(v).expect("validated"),
            ValueKind::Protocol => {
                let n = u64::from(protocol_number(v).expect("validated"));
                (n, n)
            }
            _ => {
                let n = v.parse().expect("validated");
                (n, n)
            }
        }
    };
    let set = match c.op {
        Operator::Range => IntervalSet::from_ranges(
            max,
            [(
                range_bound(c.field, &c.values[0], true),
                range_bound(c.field, &c.values[1], false),
            )],
        ),
        _ => IntervalSet::from_ranges(max, c.values.iter().map(|v| member(v))),
    };
    match c.op {
        Operator::Ne | Operator::NotIn => set.complement(),
        _ => set,
    }
}

fn record_value(rec: &FlowRecord, field: QueryField) -> Option<String> {
    match field {
        QueryField::SrcIp => Some(rec.src_ip.to_string()),
        QueryField::DstIp => Some(rec.dst_ip.to_string()),
        QueryField::FromZone => rec.from_zone.clone(),
        QueryField::ToZone => rec.to_zone.clone(),
        QueryField::Application => rec.application.clone(),
        QueryField::Protocol => rec.protocol.clone(),
        QueryField::DstPort => rec.dst_port.map(|p| p.to_string()),
        QueryField::SrcRegion => rec.src_region.clone(),
        QueryField::DstRegion => rec.dst_region.clone(),
    }
}

/// Whether a log row satisfies one constraint. A row lacking the field fails
/// positive constraints and passes negated ones.
pub fn row_satisfies(rec: &FlowRecord, c: &Constraint) -> bool {
    let negated = matches!(c.op, Operator::Ne | Operator::NotIn);
    let Some(value) = record_value(rec, c.field) else {
        return negated;
    };
    match c.field.kind() {
        ValueKind::Name => {
            let hit = c.values.contains(&value);
            hit != negated
        }
        ValueKind::Protocol => match protocol_number(&value) {
            Some(n) => numeric_set(c).contains(u64::from(n)),
            None => negated,
        },
        ValueKind::Ip => {
            let ip: Ipv4Addr = value.parse().expect("records hold IPv4 addresses");
            numeric_set(c).contains(u64::from(u32::from(ip)))
        }
        ValueKind::Port => numeric_set(c).contains(value.parse().expect("records hold ports")),
    }
}

/// Logs carry no action column: `action=permit` holds for every observed
/// row and `action=deny` for none.
pub fn row_matches(rec: &FlowRecord, q: &Query) -> bool {
    q.desired_action != Some(Action::Deny) && q.constraints.iter().all(|c| row_satisfies(rec, c))
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error(transparent)]
    Parse(#[from] QueryParseError),
    #[error("{mode} query needs the {artifact} artifact, which is not loaded")]
    MissingArtifact {
        mode: &'static str,
        artifact: &'static str,
    },
    #[error("{0} is not a firewall model field")]
    NotFormalField(&'static str),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Loaded artifacts a query may draw on.
#[derive(Clone, Copy, Default)]
pub struct Artifacts<'a> {
    pub corpus: Option<&'a LogCorpus>,
    pub embedding: Option<&'a EmbeddingModel>,
    pub clusters: Option<&'a ClusterModel>,
    pub firewall: Option<&'a FirewallModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LogSearch,
    Correlation,
    Formal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMatches {
    /// Matching row indices, capped by the query limit.
    pub rows: Vec<usize>,
    pub total: usize,
    /// Cluster id per returned row, when a cluster model is loaded.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clusters: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Matches(LogMatches),
    Neighbors(Vec<Neighbor>),
    Outcome(SolveOutcome),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub provenance: Provenance,
    /// Set when an auto query found no log rows and fell through to the solver.
    pub escalated_from: Option<Provenance>,
    pub payload: Payload,
    pub elapsed_ms: f64,
}

impl Query {
    /// Formal constraints, one conjunction per field.
    pub fn symbolic_packet(&self) -> Result<SymbolicPacket, QueryError> {
        let mut sp = SymbolicPacket::default();
        for c in &self.constraints {
            let Some(pf) = c.field.packet_field() else {
                return Err(QueryError::NotFormalField(c.field.name()));
            };
            let names = || -> NameConstraint {
                let set: BTreeSet<String> = c.values.iter().cloned().collect();
                match c.op {
                    Operator::Eq | Operator::In => NameConstraint::In(set),
                    _ => NameConstraint::NotIn(set),
                }
            };
            match pf {
                PacketField::FromZone => {
                    sp.from_zone = std::mem::take(&mut sp.from_zone).and(names())
                }
                PacketField::ToZone => sp.to_zone = std::mem::take(&mut sp.to_zone).and(names()),
                PacketField::Application => {
                    sp.application = std::mem::take(&mut sp.application).and(names())
                }
                PacketField::SrcIp => sp.src_ip = sp.src_ip.intersect(&numeric_set(c)),
                PacketField::DstIp => sp.dst_ip = sp.dst_ip.intersect(&numeric_set(c)),
                PacketField::Protocol => sp.protocol = sp.protocol.intersect(&numeric_set(c)),
                PacketField::DstPort => sp.dst_port = sp.dst_port.intersect(&numeric_set(c)),
            }
        }
        Ok(sp)
    }
}

fn search_logs(
    q: &Query,
    corpus: &LogCorpus,
    clusters: Option<&ClusterModel>,
    mode: ExecMode,
) -> LogMatches {
    let hits = map_slice(mode, &corpus.records, |r| row_matches(r, q));
    let all: Vec<usize> = hits
        .iter()
        .enumerate()
        .filter_map(|(i, &h)| h.then_some(i))
        .collect();
    let total = all.len();
    let rows: Vec<usize> = all
        .into_iter()
        .take(q.limit.unwrap_or(usize::MAX))
        .collect();
    let clusters = clusters
        .filter(|c| c.assignments.len() == corpus.row_count())
        .map(|c| rows.iter().map(|&r| c.assignments[r]).collect());
    LogMatches {
        rows,
        total,
        clusters,
    }
}

pub fn execute(
    q: &Query,
    artifacts: &Artifacts<'_>,
    mode: ExecMode,
) -> Result<QueryResult, QueryError> {
    let start = Instant::now();
    let need = |artifact: &'static str| QueryError::MissingArtifact {
        mode: q.mode.as_str(),
        artifact,
    };
    let formal = |q: &Query| -> Result<Payload, QueryError> {
        let fw = artifacts.firewall.ok_or_else(|| need("firewall"))?;
        Ok(Payload::Outcome(
            fw.solve(&q.symbolic_packet()?, q.desired_action),
        ))
    };
    let (provenance, escalated_from, payload) = match q.mode {
        QueryMode::Logs => {
            let corpus = artifacts.corpus.ok_or_else(|| need("corpus"))?;
            (
                Provenance::LogSearch,
                None,
                Payload::Matches(search_logs(q, corpus, artifacts.clusters, mode)),
            )
        }
        QueryMode::Corr => {
            let model = artifacts.embedding.ok_or_else(|| need("embedding"))?;
            let anchor = q.anchor.as_ref().expect("parser guarantees an anchor");
            let mut neighbors = model.nearest_neighbors(anchor, q.k.unwrap_or(10))?;
            if let Some(n) = q.limit {
                neighbors.truncate(n);
            }
            (Provenance::Correlation, None, Payload::Neighbors(neighbors))
        }
        QueryMode::Formal => (Provenance::Formal, None, formal(q)?),
        QueryMode::Auto => {
            let corpus = artifacts.corpus.ok_or_else(|| need("corpus"))?;
            let found = search_logs(q, corpus, artifacts.clusters, mode);
            if found.total > 0 {
                (Provenance::LogSearch, None, Payload::Matches(found))
            } else {
                (Provenance::Formal, Some(Provenance::LogSearch), formal(q)?)
            }
        }
    };
    Ok(QueryResult {
        provenance,
        escalated_from,
        payload,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessFailure {
    pub row: usize,
    /// The row's traffic restated as a formal query.
    pub constraints: String,
    pub field: PacketField,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub sampled: usize,
    pub passed: usize,
    pub failures: Vec<WitnessFailure>,
}

/// The row's zones, addresses and application as a PERMIT query.
pub fn row_query(rec: &FlowRecord) -> Query {
    let mut constraints = Vec::new();
    let mut push = |field, v: Option<String>| {
        if let Some(v) = v {
            constraints.push(Constraint {
                field,
                op: Operator::Eq,
                values: vec![v],
            });
        }
    };
    push(QueryField::FromZone, rec.from_zone.clone());
    push(QueryField::ToZone, rec.to_zone.clone());
    push(QueryField::SrcIp, Some(rec.src_ip.to_string()));
    push(QueryField::DstIp, Some(rec.dst_ip.to_string()));
    push(QueryField::Application, rec.application.clone());
    Query {
        mode: QueryMode::Formal,
        constraints,
        desired_action: Some(Action::Permit),
        anchor: None,
        k: None,
        limit: None,
    }
}

/// Checks that sampled log rows are PERMIT-satisfiable in the formal model.
pub fn witness_check(
    corpus: &LogCorpus,
    model: &FirewallModel,
    n: usize,
    seed: u64,
    mode: ExecMode,
) -> WitnessReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amount = n.min(corpus.row_count());
    let mut rows = rand::seq::index::sample(&mut rng, corpus.row_count(), amount).into_vec();
    rows.sort_unstable();
    let outcomes = map_slice(mode, &rows, |&row| {
        let rec = &corpus.records[row];
        let q = row_query(rec);
        let sp = q
            .symbolic_packet()
            .expect("row queries use firewall fields");
        if model.solve(&sp, Some(Action::Permit)).is_sat() {
            return None;
        }
        let field = model
            .first_conflicting_field(&sp, Some(Action::Permit))
            .expect("unsat has a conflicting field");
        let outside = |v: &Option<String>, domain: &[String]| {
            v.as_ref().filter(|v| !domain.contains(v)).cloned()
        };
        let out_of_domain = match field {
            PacketField::FromZone => outside(&rec.from_zone, model.zone_domain()),
            PacketField::ToZone => outside(&rec.to_zone, model.zone_domain()),
            PacketField::Application => outside(&rec.application, model.application_domain()),
            _ => None,
        };
        let explanation = match out_of_domain {
            Some(v) => format!("{field} value {v:?} is outside the configured domain"),
            None => format!("no permitted packet remains once {field} is constrained"),
        };
        Some(WitnessFailure {
            row,
            constraints: q.to_string(),
            field,
            explanation,
        })
    });
    let failures: Vec<WitnessFailure> = outcomes.into_iter().flatten().collect();
    WitnessReport {
        sampled: amount,
        passed: amount - failures.len(),
        failures,
    }
}
