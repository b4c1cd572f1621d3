//! Independent oracles shared by the integration and acceptance tests.
//!
//! The firewall oracle works over a finite universe whose cells partition
//! the packet space: 4 from-zones, 4 to-zones, 16 source blocks, 16
//! destination blocks, 4 applications and 4 services (65536 cells). Every
//! generated rule and query is a union of cells, so enumerating cells and
//! evaluating first-match directly decides every query exactly.

#![allow(dead_code)]

use std::net::Ipv4Addr;

use log2ns_core::formal::{Action, IntervalSet, NameConstraint, Packet, SymbolicPacket};
use log2ns_core::ingest::{Field, FlowRecord, LogCorpus};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Value};

pub const ZONES: [&str; 4] = ["Z0", "Z1", "Z2", "Z3"];
pub const APPS: [&str; 4] = ["A0", "A1", "A2", "A3"];
/// Number of /4 address blocks per IP field.
pub const NBLOCKS: usize = 16;
pub const SERVICES: [&str; 4] = ["S0", "S1", "S2", "S3"];
const IPV4_MAX: u64 = u32::MAX as u64;

/// `(protocol lo, protocol hi, port lo, port hi)` per service cell.
pub const SERVICE_CELLS: [(u64, u64, u64, u64); 4] = [
    (6, 6, 0, 32767),
    (6, 6, 32768, 65535),
    (0, 5, 0, 65535),
    (7, 255, 0, 65535),
];

pub fn block_range(b: usize) -> (u64, u64) {
    let lo = (b as u64) << 28;
    (lo, lo + (1 << 28) - 1)
}

pub fn block_cidr(b: usize) -> String {
    format!("{}.0.0.0/4", b << 4)
}

/// Service cells ordered by their smallest `(protocol, port)`.
pub const SERVICE_LEX_ORDER: [usize; 4] = [2, 0, 1, 3];

/// A rule field: `None` is "any".
pub type Members = Option<Vec<usize>>;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleServices {
    Any,
    AppDefault,
    Only(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct OracleRule {
    pub name: String,
    pub from: Members,
    pub to: Members,
    pub src: Members,
    pub dst: Members,
    pub apps: Members,
    pub services: OracleServices,
    pub action: Action,
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    /// Default services per application; `None` means the app declares none.
    pub defaults: Vec<Option<Vec<usize>>>,
    pub rules: Vec<OracleRule>,
    pub default_action: Action,
}

/// Cell coordinates `(from, to, src, dst, app, service)`.
pub type Cell = [usize; 6];

fn member(m: &Members, v: usize) -> bool {
    m.as_ref().is_none_or(|s| s.contains(&v))
}

impl OracleConfig {
    pub fn rule_matches(&self, r: &OracleRule, c: &Cell) -> bool {
        let svc = match &r.services {
            OracleServices::Any => true,
            OracleServices::AppDefault => self.defaults[c[4]]
                .as_ref()
                .is_none_or(|d| d.contains(&c[5])),
            OracleServices::Only(s) => s.contains(&c[5]),
        };
        member(&r.from, c[0])
            && member(&r.to, c[1])
            && member(&r.src, c[2])
            && member(&r.dst, c[3])
            && member(&r.apps, c[4])
            && svc
    }

    /// First matching rule index (or `None` for the default) and action.
    pub fn evaluate(&self, c: &Cell) -> (Option<usize>, Action) {
        for (i, r) in self.rules.iter().enumerate() {
            if self.rule_matches(r, c) {
                return (Some(i), r.action);
            }
        }
        (None, self.default_action)
    }

    pub fn to_json(&self) -> Value {
        let names = |m: &Members, table: &[&str]| -> Value {
            match m {
                None => json!("any"),
                Some(v) => json!(v.iter().map(|&i| table[i]).collect::<Vec<_>>()),
            }
        };
        // source selectors use address objects, destination selectors literal CIDRs
        let addr_names: Vec<String> = (0..NBLOCKS).map(|b| format!("b{b}")).collect();
        let addr_names: Vec<&str> = addr_names.iter().map(String::as_str).collect();
        let cidrs: Vec<String> = (0..NBLOCKS).map(block_cidr).collect();
        let cidrs: Vec<&str> = cidrs.iter().map(String::as_str).collect();
        let rules: Vec<Value> = self
            .rules
            .iter()
            .map(|r| {
                json!({
                    "name": r.name,
                    "from_zones": names(&r.from, &ZONES),
                    "to_zones": names(&r.to, &ZONES),
                    "src_addrs": names(&r.src, &addr_names),
                    "dst_addrs": names(&r.dst, &cidrs),
                    "applications": names(&r.apps, &APPS),
                    "services": match &r.services {
                        OracleServices::Any => json!("any"),
                        OracleServices::AppDefault => json!("application-default"),
                        OracleServices::Only(s) => json!(s.iter().map(|&i| SERVICES[i]).collect::<Vec<_>>()),
                    },
                    "action": if r.action == Action::Permit { "permit" } else { "deny" },
                })
            })
            .collect();
        let apps: serde_json::Map<String, Value> = APPS
            .iter()
            .zip(&self.defaults)
            .map(|(a, d)| {
                let v = match d {
                    None => json!({}),
                    Some(s) => json!({ "default_service": s.iter().map(|&i| SERVICES[i]).collect::<Vec<_>>() }),
                };
                (a.to_string(), v)
            })
            .collect();
        let objects: serde_json::Map<String, Value> = (0..NBLOCKS)
            .map(|b| (format!("b{b}"), json!(block_cidr(b))))
            .collect();
        json!({
            "zones": ZONES,
            "address_objects": objects,
            "applications": apps,
            "service_objects": {
                "S0": { "protocol": "tcp", "ports": ["0-32767"] },
                "S1": { "protocol": "tcp", "ports": ["32768-65535"] },
                "S2": { "protocol": "0-5" },
                "S3": { "protocol": "7-255" },
            },
            "rules": rules,
            "default_action": if self.default_action == Action::Permit { "permit" } else { "deny" },
        })
    }
}

/// A non-empty subset of `0..n`: either a contiguous run or a scatter.
fn random_subset(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    if rng.random_bool(0.4) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(a..n);
        return (a..=b).collect();
    }
    loop {
        let v: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        if !v.is_empty() {
            return v;
        }
    }
}

fn random_members(rng: &mut impl Rng, n: usize, p_any: f64) -> Members {
    (!rng.random_bool(p_any)).then(|| random_subset(rng, n))
}

fn random_action(rng: &mut impl Rng) -> Action {
    if rng.random_bool(0.5) {
        Action::Permit
    } else {
        Action::Deny
    }
}

/// Up to ten rules with random selectors, app defaults and default action.
pub fn random_config(rng: &mut impl Rng) -> OracleConfig {
    let defaults = (0..4)
        .map(|_| (!rng.random_bool(0.25)).then(|| random_subset(rng, 4)))
        .collect();
    let n = rng.random_range(0..=10);
    let rules = (0..n)
        .map(|i| OracleRule {
            name: format!("r{i}"),
            from: random_members(rng, 4, 0.3),
            to: random_members(rng, 4, 0.3),
            src: random_members(rng, NBLOCKS, 0.4),
            dst: random_members(rng, NBLOCKS, 0.4),
            apps: random_members(rng, 4, 0.4),
            services: match rng.random_range(0..3) {
                0 => OracleServices::Any,
                1 => OracleServices::AppDefault,
                _ => OracleServices::Only(random_subset(rng, 4)),
            },
            action: random_action(rng),
        })
        .collect();
    OracleConfig {
        defaults,
        rules,
        default_action: random_action(rng),
    }
}

/// A query aligned to the cells: each component is a set of cell indices.
#[derive(Debug, Clone)]
pub struct OracleQuery {
    pub from: Vec<usize>,
    pub to: Vec<usize>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub apps: Vec<usize>,
    pub services: Vec<usize>,
    pub desired: Option<Action>,
}

impl OracleQuery {
    pub fn admits(&self, c: &Cell) -> bool {
        self.from.contains(&c[0])
            && self.to.contains(&c[1])
            && self.src.contains(&c[2])
            && self.dst.contains(&c[3])
            && self.apps.contains(&c[4])
            && self.services.contains(&c[5])
    }
}

fn name_constraint(rng: &mut impl Rng, table: &[&str; 4]) -> (NameConstraint, Vec<usize>) {
    let set = |v: &[usize]| v.iter().map(|&i| table[i].to_string()).collect();
    match rng.random_range(0..4) {
        0 => (NameConstraint::Any, (0..4).collect()),
        1 | 2 => {
            let v = random_subset(rng, 4);
            (NameConstraint::In(set(&v)), v)
        }
        _ => {
            let v = random_subset(rng, 4);
            let keep = (0..4).filter(|i| !v.contains(i)).collect();
            (NameConstraint::NotIn(set(&v)), keep)
        }
    }
}

fn block_constraint(rng: &mut impl Rng) -> (IntervalSet, Vec<usize>) {
    let v = if rng.random_bool(0.3) {
        (0..NBLOCKS).collect()
    } else if rng.random_bool(0.05) {
        Vec::new()
    } else {
        random_subset(rng, NBLOCKS)
    };
    let set = IntervalSet::from_ranges(IPV4_MAX, v.iter().map(|&b| block_range(b)));
    (set, v)
}

/// Protocol and port constraints that select whole service cells.
fn service_constraint(rng: &mut impl Rng) -> (IntervalSet, IntervalSet, Vec<usize>) {
    let full_port = || IntervalSet::full(65535);
    let proto = |r: Vec<(u64, u64)>| IntervalSet::from_ranges(255, r);
    let port = |lo, hi| IntervalSet::from_ranges(65535, vec![(lo, hi)]);
    match rng.random_range(0..7) {
        0 => (IntervalSet::full(255), full_port(), vec![0, 1, 2, 3]),
        1 => (proto(vec![(6, 6)]), full_port(), vec![0, 1]),
        2 => (proto(vec![(6, 6)]), port(0, 32767), vec![0]),
        3 => (proto(vec![(6, 6)]), port(32768, 65535), vec![1]),
        4 => (proto(vec![(0, 5)]), full_port(), vec![2]),
        5 => (proto(vec![(0, 5), (7, 255)]), full_port(), vec![2, 3]),
        _ => (proto(vec![(7, 255)]), full_port(), vec![3]),
    }
}

pub fn random_query(rng: &mut impl Rng) -> (SymbolicPacket, OracleQuery) {
    let (from_zone, from) = name_constraint(rng, &ZONES);
    let (to_zone, to) = name_constraint(rng, &ZONES);
    let (src_ip, src) = block_constraint(rng);
    let (dst_ip, dst) = block_constraint(rng);
    let (application, apps) = name_constraint(rng, &APPS);
    let (protocol, dst_port, services) = service_constraint(rng);
    let desired = *[None, Some(Action::Permit), Some(Action::Deny)]
        .choose(rng)
        .unwrap();
    (
        SymbolicPacket {
            from_zone,
            to_zone,
            src_ip,
            dst_ip,
            application,
            protocol,
            dst_port,
        },
        OracleQuery {
            from,
            to,
            src,
            dst,
            apps,
            services,
            desired,
        },
    )
}

/// Smallest packet of a cell in field order; zone and application domains
/// are sorted name lists, so a cell index is also the domain index.
pub fn cell_min_packet(c: &Cell) -> Packet {
    let (proto, _, port, _) = SERVICE_CELLS[c[5]];
    Packet {
        from_zone: ZONES[c[0]].into(),
        to_zone: ZONES[c[1]].into(),
        src_ip: Ipv4Addr::from(block_range(c[2]).0 as u32),
        dst_ip: Ipv4Addr::from(block_range(c[3]).0 as u32),
        application: APPS[c[4]].into(),
        protocol: proto as u8,
        dst_port: port as u16,
    }
}

fn packet_key(p: &Packet) -> (usize, usize, u32, u32, usize, u8, u16) {
    let idx = |t: &[&str; 4], v: &str| t.iter().position(|x| *x == v).expect("universe name");
    (
        idx(&ZONES, &p.from_zone),
        idx(&ZONES, &p.to_zone),
        u32::from(p.src_ip),
        u32::from(p.dst_ip),
        idx(&APPS, &p.application),
        p.protocol,
        p.dst_port,
    )
}

/// The cell a concrete packet falls in.
pub fn cell_of(p: &Packet) -> Cell {
    let k = packet_key(p);
    let svc = SERVICE_CELLS
        .iter()
        .position(|&(plo, phi, qlo, qhi)| {
            (plo..=phi).contains(&u64::from(k.5)) && (qlo..=qhi).contains(&u64::from(k.6))
        })
        .expect("service cells cover every packet");
    [
        k.0,
        k.1,
        (k.2 >> 28) as usize,
        (k.3 >> 28) as usize,
        k.4,
        svc,
    ]
}

/// Exhaustive answer: the lexicographically smallest satisfying packet and
/// its first-match verdict, or `None` when unsatisfiable. Admitted cells are
/// visited in ascending order of their smallest packet, so the first hit wins.
pub fn oracle_solve(
    cfg: &OracleConfig,
    q: &OracleQuery,
) -> Option<(Packet, Option<usize>, Action)> {
    let sorted = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v
    };
    let services: Vec<usize> = SERVICE_LEX_ORDER
        .into_iter()
        .filter(|s| q.services.contains(s))
        .collect();
    let (from, to, src, dst, apps) = (
        sorted(&q.from),
        sorted(&q.to),
        sorted(&q.src),
        sorted(&q.dst),
        sorted(&q.apps),
    );
    for &f in &from {
        for &t in &to {
            for &s in &src {
                for &d in &dst {
                    for &a in &apps {
                        for &v in &services {
                            let c = [f, t, s, d, a, v];
                            let (rule, action) = cfg.evaluate(&c);
                            if q.desired.is_none_or(|want| want == action) {
                                return Some((cell_min_packet(&c), rule, action));
                            }
                        }
                    }
                }
            }
        }
    }
    None
}

/// Minimum SSE over every split of `points` into two non-empty clusters.
pub fn exhaustive_two_means(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    assert!((2..=20).contains(&n));
    let sse_of = |idx: &[usize]| -> f64 {
        let d = points[0].len();
        let mut mean = vec![0.0; d];
        for &i in idx {
            for (m, x) in mean.iter_mut().zip(&points[i]) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= idx.len() as f64;
        }
        idx.iter()
            .map(|&i| {
                points[i]
                    .iter()
                    .zip(&mean)
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum::<f64>()
            })
            .sum()
    };
    let mut best = f64::INFINITY;
    // point 0 always in the first cluster; mask picks members of the second
    for mask in 1u32..(1 << (n - 1)) {
        let (mut a, mut b) = (vec![0], Vec::new());
        for i in 1..n {
            if mask >> (i - 1) & 1 == 1 {
                b.push(i);
            } else {
                a.push(i);
            }
        }
        best = best.min(sse_of(&a) + sse_of(&b));
    }
    best
}

/// Flow rows where sources A and B see the same destination and application
/// distribution and source C sees a disjoint one.
pub fn similarity_corpus(rng: &mut impl Rng, rows: usize) -> LogCorpus {
    const A: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);
    const B: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 2);
    const C: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 3);
    let shared_dst: Vec<Ipv4Addr> = (1..=6).map(|i| Ipv4Addr::new(20, 0, 0, i)).collect();
    let other_dst: Vec<Ipv4Addr> = (1..=6).map(|i| Ipv4Addr::new(30, 0, 0, i)).collect();
    let shared_apps = ["ssl", "web-browsing", "dns"];
    let other_apps = ["smtp", "ntp", "ssh"];
    let records = (0..rows)
        .map(|_| {
            let src = [A, B, C][rng.random_range(0..3)];
            let (dsts, apps) = if src == C {
                (&other_dst, &other_apps)
            } else {
                (&shared_dst, &shared_apps)
            };
            let mut r = FlowRecord::new(src, *dsts.choose(rng).unwrap());
            r.application = Some(apps.choose(rng).unwrap().to_string());
            r
        })
        .collect();
    LogCorpus::new(
        vec![Field::SrcIp, Field::DstIp, Field::Application],
        records,
    )
}
