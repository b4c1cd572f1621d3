use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::sync::OnceLock;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{Action, FirewallConfig, SecurityRule, Selector, ServiceSelector};
use super::intervals::{self, IntervalSet, IPV4_MAX, PORT_MAX, PROTOCOL_MAX};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormalError {
    #[error("{field} value {value:?} is outside the configured domain")]
    OutOfDomain { field: PacketField, value: String },
    #[error("unknown rule {0:?}")]
    UnknownRule(String),
}

/// Packet fields in solver order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketField {
    FromZone,
    ToZone,
    SrcIp,
    DstIp,
    Application,
    Protocol,
    DstPort,
}

impl PacketField {
    pub const ALL: [PacketField; 7] = [
        PacketField::FromZone,
        PacketField::ToZone,
        PacketField::SrcIp,
        PacketField::DstIp,
        PacketField::Application,
        PacketField::Protocol,
        PacketField::DstPort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PacketField::FromZone => "from_zone",
            PacketField::ToZone => "to_zone",
            PacketField::SrcIp => "src_ip",
            PacketField::DstIp => "dst_ip",
            PacketField::Application => "application",
            PacketField::Protocol => "protocol",
            PacketField::DstPort => "dst_port",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PacketField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A concrete packet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Packet {
    pub from_zone: String,
    pub to_zone: String,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub application: String,
    pub protocol: u8,
    pub dst_port: u16,
}

/// Name-valued field constraint, closed under conjunction.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "op", content = "values", rename_all = "snake_case")]
pub enum NameConstraint {
    #[default]
    Any,
    In(BTreeSet<String>),
    NotIn(BTreeSet<String>),
}

impl NameConstraint {
    pub fn and(self, other: NameConstraint) -> NameConstraint {
        use NameConstraint::*;
        match (self, other) {
            (Any, x) | (x, Any) => x,
            (In(a), In(b)) => In(a.intersection(&b).cloned().collect()),
            (In(a), NotIn(b)) | (NotIn(b), In(a)) => In(a.difference(&b).cloned().collect()),
            (NotIn(a), NotIn(b)) => NotIn(a.union(&b).cloned().collect()),
        }
    }

    pub fn allows(&self, v: &str) -> bool {
        match self {
            NameConstraint::Any => true,
            NameConstraint::In(s) => s.contains(v),
            NameConstraint::NotIn(s) => !s.contains(v),
        }
    }

    fn to_bits(&self, domain: &[String]) -> FixedBitSet {
        let mut b = FixedBitSet::with_capacity(domain.len());
        for (i, name) in domain.iter().enumerate() {
            if self.allows(name) {
                b.insert(i);
            }
        }
        b
    }
}

/// Per-field constraints on a packet; the default is the full packet space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicPacket {
    pub from_zone: NameConstraint,
    pub to_zone: NameConstraint,
    pub src_ip: IntervalSet,
    pub dst_ip: IntervalSet,
    pub application: NameConstraint,
    pub protocol: IntervalSet,
    pub dst_port: IntervalSet,
}

impl Default for SymbolicPacket {
    fn default() -> Self {
        SymbolicPacket {
            from_zone: NameConstraint::Any,
            to_zone: NameConstraint::Any,
            src_ip: IntervalSet::full(IPV4_MAX),
            dst_ip: IntervalSet::full(IPV4_MAX),
            application: NameConstraint::Any,
            protocol: IntervalSet::full(PROTOCOL_MAX),
            dst_port: IntervalSet::full(PORT_MAX),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub action: Action,
    pub matched_rule: String,
    pub trace_lines: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<Packet>,
}

pub const DEFAULT_RULE: &str = "DEFAULT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SolveOutcome {
    Sat { verdict: Verdict },
    Unsat,
}

impl SolveOutcome {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolveOutcome::Sat { .. })
    }

    pub fn verdict(&self) -> Option<&Verdict> {
        match self {
            SolveOutcome::Sat { verdict } => Some(verdict),
            SolveOutcome::Unsat => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Dim {
    Bits(FixedBitSet),
    Ints(IntervalSet),
}

impl Dim {
    fn is_empty(&self) -> bool {
        match self {
            Dim::Bits(b) => b.is_clear(),
            Dim::Ints(s) => s.is_empty(),
        }
    }

    fn intersect(&self, other: &Dim) -> Dim {
        match (self, other) {
            (Dim::Bits(a), Dim::Bits(b)) => Dim::Bits(a.intersection(b).collect()),
            (Dim::Ints(a), Dim::Ints(b)) => Dim::Ints(a.intersect(b)),
            _ => unreachable!("field kinds agree"),
        }
    }

    fn difference(&self, other: &Dim) -> Dim {
        match (self, other) {
            (Dim::Bits(a), Dim::Bits(b)) => {
                let mut d = a.clone();
                d.difference_with(b);
                Dim::Bits(d)
            }
            (Dim::Ints(a), Dim::Ints(b)) => Dim::Ints(a.difference(b)),
            _ => unreachable!("field kinds agree"),
        }
    }

    fn min(&self) -> u64 {
        match self {
            Dim::Bits(b) => b.ones().next().expect("non-empty") as u64,
            Dim::Ints(s) => s.min().expect("non-empty"),
        }
    }

    fn contains(&self, v: u64) -> bool {
        match self {
            Dim::Bits(b) => b.contains(v as usize),
            Dim::Ints(s) => s.contains(v),
        }
    }
}

/// Packet coordinates: zone and application indices into the model's
/// sorted domains, numeric values for the rest.
pub type Point = [u64; 7];

/// Members of one box field: domain indices for zones and applications,
/// an interval set for the numeric fields.
pub enum FieldSet<'a> {
    Indices(Vec<u64>),
    Values(&'a IntervalSet),
}

/// Cartesian product of per-field sets.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PacketBox {
    dims: [Dim; 7],
}

impl PacketBox {
    fn is_empty(&self) -> bool {
        self.dims.iter().any(Dim::is_empty)
    }

    fn intersect(&self, other: &PacketBox) -> Option<PacketBox> {
        let mut dims = self.dims.clone();
        for (d, o) in dims.iter_mut().zip(&other.dims) {
            *d = d.intersect(o);
            if d.is_empty() {
                return None;
            }
        }
        Some(PacketBox { dims })
    }

    /// `self − other` as disjoint boxes.
    fn subtract(&self, other: &PacketBox, out: &mut Vec<PacketBox>) {
        if self.intersect(other).is_none() {
            out.push(self.clone());
            return;
        }
        let mut cur = self.clone();
        for i in 0..7 {
            let rest = cur.dims[i].difference(&other.dims[i]);
            if !rest.is_empty() {
                let mut piece = cur.clone();
                piece.dims[i] = rest;
                out.push(piece);
            }
            cur.dims[i] = cur.dims[i].intersect(&other.dims[i]);
        }
    }

    pub fn field(&self, f: PacketField) -> FieldSet<'_> {
        match &self.dims[f.index()] {
            Dim::Bits(b) => FieldSet::Indices(b.ones().map(|i| i as u64).collect()),
            Dim::Ints(s) => FieldSet::Values(s),
        }
    }

    pub fn intersects(&self, other: &PacketBox) -> bool {
        self.intersect(other).is_some()
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.dims.iter().zip(p).all(|(d, &v)| d.contains(v))
    }

    /// Lexicographically smallest member.
    pub fn min_point(&self) -> Point {
        let mut p = [0u64; 7];
        for (slot, d) in p.iter_mut().zip(&self.dims) {
            *slot = d.min();
        }
        p
    }
}

fn subtract_all(region: Vec<PacketBox>, cut: &[PacketBox]) -> Vec<PacketBox> {
    let mut region = region;
    for c in cut {
        let mut next = Vec::with_capacity(region.len());
        for b in &region {
            b.subtract(c, &mut next);
        }
        region = next;
        if region.is_empty() {
            break;
        }
    }
    region
}

/// Disjoint union of possibly overlapping boxes.
fn disjoint_union(boxes: Vec<PacketBox>) -> Vec<PacketBox> {
    let mut out: Vec<PacketBox> = Vec::new();
    for b in boxes {
        if b.is_empty() {
            continue;
        }
        let pieces = subtract_all(vec![b], &out);
        out.extend(pieces);
    }
    out
}

/// Readable rendering of a box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxView {
    pub from_zones: Vec<String>,
    pub to_zones: Vec<String>,
    pub src_ip: String,
    pub dst_ip: String,
    pub applications: Vec<String>,
    pub protocol: String,
    pub dst_port: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectiveRegion {
    pub rule: String,
    pub shadowed: bool,
    pub boxes: Vec<BoxView>,
}

/// Rule summary for listings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleView {
    pub index: usize,
    pub name: String,
    pub action: Action,
    pub from_zones: Vec<String>,
    pub to_zones: Vec<String>,
    pub src_addrs: String,
    pub dst_addrs: String,
    pub applications: Vec<String>,
    pub services: Vec<String>,
    pub implication: String,
    pub shadowed: bool,
}

#[derive(Debug)]
pub struct CompiledRule {
    pub rule: SecurityRule,
    guard: Vec<PacketBox>,
    region: Vec<PacketBox>,
}

impl CompiledRule {
    pub fn guard(&self) -> &[PacketBox] {
        &self.guard
    }

    pub fn region(&self) -> &[PacketBox] {
        &self.region
    }
}

/// Ordered first-match rules over finite packet domains.
#[derive(Debug)]
pub struct FirewallModel {
    config: FirewallConfig,
    zones: Vec<String>,
    apps: Vec<String>,
    rules: Vec<CompiledRule>,
    default_region: OnceLock<Vec<PacketBox>>,
}

fn any_names(domain: &[String]) -> Vec<String> {
    if domain.is_empty() {
        Vec::new()
    } else {
        vec!["any".into()]
    }
}

impl FirewallModel {
    pub fn compile(config: &FirewallConfig) -> FirewallModel {
        let zones: Vec<String> = config.zones.iter().cloned().collect();
        let apps: Vec<String> = config.applications.keys().cloned().collect();
        let mut model = FirewallModel {
            config: config.clone(),
            zones,
            apps,
            rules: Vec::with_capacity(config.rules.len()),
            default_region: OnceLock::new(),
        };
        let mut earlier: Vec<PacketBox> = Vec::new();
        for rule in &config.rules {
            let guard = model.guard_boxes(rule);
            let region = subtract_all(guard.clone(), &earlier);
            earlier.extend(guard.iter().cloned());
            model.rules.push(CompiledRule {
                rule: rule.clone(),
                guard,
                region,
            });
        }
        model
    }

    pub fn config(&self) -> &FirewallConfig {
        &self.config
    }

    pub fn zone_domain(&self) -> &[String] {
        &self.zones
    }

    pub fn application_domain(&self) -> &[String] {
        &self.apps
    }

    pub fn rules(&self) -> &[CompiledRule] {
        &self.rules
    }

    pub fn default_action(&self) -> Action {
        self.config.default_action
    }

    fn name_bits(domain: &[String], sel: &Selector<BTreeSet<String>>) -> FixedBitSet {
        let mut b = FixedBitSet::with_capacity(domain.len());
        for (i, n) in domain.iter().enumerate() {
            let hit = match sel {
                Selector::Any => true,
                Selector::Only(s) => s.contains(n),
            };
            if hit {
                b.insert(i);
            }
        }
        b
    }

    fn full_box(&self) -> PacketBox {
        let all = |n: usize| {
            let mut b = FixedBitSet::with_capacity(n);
            b.insert_range(..);
            Dim::Bits(b)
        };
        PacketBox {
            dims: [
                all(self.zones.len()),
                all(self.zones.len()),
                Dim::Ints(IntervalSet::full(IPV4_MAX)),
                Dim::Ints(IntervalSet::full(IPV4_MAX)),
                all(self.apps.len()),
                Dim::Ints(IntervalSet::full(PROTOCOL_MAX)),
                Dim::Ints(IntervalSet::full(PORT_MAX)),
            ],
        }
    }

    fn guard_boxes(&self, rule: &SecurityRule) -> Vec<PacketBox> {
        let addr = |s: &Selector<IntervalSet>| match s {
            Selector::Any => IntervalSet::full(IPV4_MAX),
            Selector::Only(set) => set.clone(),
        };
        let base = |apps: FixedBitSet, proto: IntervalSet, ports: IntervalSet| PacketBox {
            dims: [
                Dim::Bits(Self::name_bits(&self.zones, &rule.from_zones)),
                Dim::Bits(Self::name_bits(&self.zones, &rule.to_zones)),
                Dim::Ints(addr(&rule.src_addrs)),
                Dim::Ints(addr(&rule.dst_addrs)),
                Dim::Bits(apps),
                Dim::Ints(proto),
                Dim::Ints(ports),
            ],
        };
        let apps = Self::name_bits(&self.apps, &rule.applications);
        let boxes = match &rule.services {
            ServiceSelector::Any => vec![base(
                apps,
                IntervalSet::full(PROTOCOL_MAX),
                IntervalSet::full(PORT_MAX),
            )],
            ServiceSelector::Only(names) => names
                .iter()
                .map(|n| {
                    let s = &self.config.service_objects[n];
                    base(apps.clone(), s.protocol.clone(), s.ports.clone())
                })
                .collect(),
            ServiceSelector::ApplicationDefault => {
                // group applications sharing a default-service list
                let mut by_defaults: BTreeMap<Option<&Vec<String>>, FixedBitSet> = BTreeMap::new();
                for i in apps.ones() {
                    let key = self.config.applications[&self.apps[i]].as_ref();
                    by_defaults
                        .entry(key)
                        .or_insert_with(|| FixedBitSet::with_capacity(self.apps.len()))
                        .insert(i);
                }
                let mut out = Vec::new();
                for (defaults, bits) in by_defaults {
                    match defaults {
                        None => out.push(base(
                            bits,
                            IntervalSet::full(PROTOCOL_MAX),
                            IntervalSet::full(PORT_MAX),
                        )),
                        Some(names) => {
                            for n in names {
                                let s = &self.config.service_objects[n];
                                out.push(base(bits.clone(), s.protocol.clone(), s.ports.clone()));
                            }
                        }
                    }
                }
                out
            }
        };
        disjoint_union(boxes)
    }

    /// Packets matched by no rule.
    pub fn default_region(&self) -> &[PacketBox] {
        self.default_region.get_or_init(|| {
            let guards: Vec<PacketBox> = self
                .rules
                .iter()
                .flat_map(|r| r.guard.iter().cloned())
                .collect();
            subtract_all(vec![self.full_box()], &guards)
        })
    }

    pub fn rule_index(&self, name: &str) -> Result<usize, FormalError> {
        self.rules
            .iter()
            .position(|r| r.rule.name == name)
            .ok_or_else(|| FormalError::UnknownRule(name.to_string()))
    }

    fn name_index(&self, field: PacketField, v: &str) -> Result<u64, FormalError> {
        let domain = match field {
            PacketField::Application => &self.apps,
            _ => &self.zones,
        };
        domain
            .binary_search_by(|n| n.as_str().cmp(v))
            .map(|i| i as u64)
            .map_err(|_| FormalError::OutOfDomain {
                field,
                value: v.to_string(),
            })
    }

    pub fn point(&self, p: &Packet) -> Result<Point, FormalError> {
        Ok([
            self.name_index(PacketField::FromZone, &p.from_zone)?,
            self.name_index(PacketField::ToZone, &p.to_zone)?,
            u64::from(u32::from(p.src_ip)),
            u64::from(u32::from(p.dst_ip)),
            self.name_index(PacketField::Application, &p.application)?,
            u64::from(p.protocol),
            u64::from(p.dst_port),
        ])
    }

    pub fn packet(&self, p: &Point) -> Packet {
        Packet {
            from_zone: self.zones[p[0] as usize].clone(),
            to_zone: self.zones[p[1] as usize].clone(),
            src_ip: Ipv4Addr::from(p[2] as u32),
            dst_ip: Ipv4Addr::from(p[3] as u32),
            application: self.apps[p[4] as usize].clone(),
            protocol: p[5] as u8,
            dst_port: p[6] as u16,
        }
    }

    /// Trace lines when `rule` matches `p`, `None` otherwise.
    fn match_rule(&self, rule: &SecurityRule, p: &Packet) -> Option<Vec<String>> {
        let zone_ok = |s: &Selector<BTreeSet<String>>, z: &String| match s {
            Selector::Any => true,
            Selector::Only(set) => set.contains(z),
        };
        let addr_ok = |s: &Selector<IntervalSet>, a: Ipv4Addr| match s {
            Selector::Any => true,
            Selector::Only(set) => set.contains(u64::from(u32::from(a))),
        };
        if !zone_ok(&rule.from_zones, &p.from_zone)
            || !zone_ok(&rule.to_zones, &p.to_zone)
            || !addr_ok(&rule.src_addrs, p.src_ip)
            || !addr_ok(&rule.dst_addrs, p.dst_ip)
            || !zone_ok(&rule.applications, &p.application)
        {
            return None;
        }
        let service_line = match &rule.services {
            ServiceSelector::Any => "Matched service any".to_string(),
            ServiceSelector::ApplicationDefault => {
                let ok = match self.config.default_services(&p.application) {
                    None => true,
                    Some(svcs) => svcs.iter().any(|s| s.matches(p.protocol, p.dst_port)),
                };
                if !ok {
                    return None;
                }
                "Matched service application-default".to_string()
            }
            ServiceSelector::Only(names) => {
                let hit = names
                    .iter()
                    .find(|n| self.config.service_objects[*n].matches(p.protocol, p.dst_port))?;
                format!("Matched service {hit}")
            }
        };
        let mut lines = vec![
            format!("Matched security rule {}", rule.name),
            "Matched source address".to_string(),
        ];
        if rule.src_addrs.is_any() {
            lines.push("Matched address any".into());
        }
        lines.push("Matched destination address".into());
        if rule.dst_addrs.is_any() {
            lines.push("Matched address any".into());
        }
        lines.push(service_line);
        lines.push(match rule.applications {
            Selector::Any => "Matched application any".into(),
            Selector::Only(_) => format!("Matched application {}", p.application),
        });
        Some(lines)
    }

    /// First-match evaluation of a concrete packet.
    pub fn evaluate_packet(&self, p: &Packet) -> Result<Verdict, FormalError> {
        self.point(p)?;
        for r in &self.rules {
            if let Some(trace_lines) = self.match_rule(&r.rule, p) {
                return Ok(Verdict {
                    action: r.rule.action,
                    matched_rule: r.rule.name.clone(),
                    trace_lines,
                    witness: None,
                });
            }
        }
        let action = self.default_action();
        Ok(Verdict {
            action,
            matched_rule: DEFAULT_RULE.into(),
            trace_lines: vec![format!(
                "Matched default action {}",
                action.as_str().to_ascii_lowercase()
            )],
            witness: None,
        })
    }

    pub fn constraint_box(&self, q: &SymbolicPacket) -> PacketBox {
        PacketBox {
            dims: [
                Dim::Bits(q.from_zone.to_bits(&self.zones)),
                Dim::Bits(q.to_zone.to_bits(&self.zones)),
                Dim::Ints(q.src_ip.clone()),
                Dim::Ints(q.dst_ip.clone()),
                Dim::Bits(q.application.to_bits(&self.apps)),
                Dim::Ints(q.protocol.clone()),
                Dim::Ints(q.dst_port.clone()),
            ],
        }
    }

    /// Effective regions whose action is compatible with `desired`, the
    /// default region last.
    fn candidate_regions(&self, desired: Option<Action>) -> impl Iterator<Item = &[PacketBox]> {
        let ok = move |a: Action| desired.is_none_or(|d| d == a);
        let rules = self
            .rules
            .iter()
            .filter(move |r| ok(r.rule.action))
            .map(|r| r.region.as_slice());
        let default = ok(self.default_action()).then(|| self.default_region());
        rules.chain(default)
    }

    /// Finds the lexicographically smallest packet satisfying `q` whose
    /// first-match action is `desired` (any action when `None`).
    pub fn solve(&self, q: &SymbolicPacket, desired: Option<Action>) -> SolveOutcome {
        let qb = self.constraint_box(q);
        if qb.is_empty() {
            return SolveOutcome::Unsat;
        }
        let mut best: Option<Point> = None;
        for region in self.candidate_regions(desired) {
            for b in region {
                if let Some(x) = b.intersect(&qb) {
                    let m = x.min_point();
                    if best.is_none_or(|cur| m < cur) {
                        best = Some(m);
                    }
                }
            }
        }
        match best {
            None => SolveOutcome::Unsat,
            Some(point) => {
                let witness = self.packet(&point);
                let mut verdict = self
                    .evaluate_packet(&witness)
                    .expect("witness lies inside the domains");
                verdict.witness = Some(witness);
                SolveOutcome::Sat { verdict }
            }
        }
    }

    /// Applies `q` one field at a time, in solver order, to the packets with
    /// action `desired` and reports the first field that leaves nothing.
    pub fn first_conflicting_field(
        &self,
        q: &SymbolicPacket,
        desired: Option<Action>,
    ) -> Option<PacketField> {
        let qb = self.constraint_box(q);
        let mut region: Vec<PacketBox> = self
            .candidate_regions(desired)
            .flat_map(|r| r.iter().cloned())
            .collect();
        if region.is_empty() {
            return Some(PacketField::FromZone);
        }
        for f in PacketField::ALL {
            let i = f.index();
            region = region
                .into_iter()
                .filter_map(|mut b| {
                    b.dims[i] = b.dims[i].intersect(&qb.dims[i]);
                    (!b.dims[i].is_empty()).then_some(b)
                })
                .collect();
            if region.is_empty() {
                return Some(f);
            }
        }
        None
    }

    /// Index of the rule whose effective region holds `p`, `None` for the default.
    pub fn region_of(&self, p: &Point) -> Option<usize> {
        self.rules
            .iter()
            .position(|r| r.region.iter().any(|b| b.contains(p)))
    }

    pub fn view_box(&self, b: &PacketBox) -> BoxView {
        let names = |d: &Dim, domain: &[String]| match d {
            Dim::Bits(bits) if bits.count_ones(..) == domain.len() => any_names(domain),
            Dim::Bits(bits) => bits.ones().map(|i| domain[i].clone()).collect(),
            Dim::Ints(_) => unreachable!("name field"),
        };
        let ints = |d: &Dim| match d {
            Dim::Ints(s) => intervals::Display(s).to_string(),
            Dim::Bits(_) => unreachable!("numeric field"),
        };
        let protocol = match &b.dims[5] {
            Dim::Ints(s) if !s.is_full() => s
                .ranges()
                .iter()
                .map(|&(lo, hi)| {
                    if lo == hi {
                        intervals::protocol_name(lo as u8)
                    } else {
                        format!("{lo}-{hi}")
                    }
                })
                .collect::<Vec<_>>()
                .join(","),
            _ => "any".into(),
        };
        BoxView {
            from_zones: names(&b.dims[0], &self.zones),
            to_zones: names(&b.dims[1], &self.zones),
            src_ip: ints(&b.dims[2]),
            dst_ip: ints(&b.dims[3]),
            applications: names(&b.dims[4], &self.apps),
            protocol,
            dst_port: ints(&b.dims[6]),
        }
    }

    pub fn effective_region(&self, rule: &str) -> Result<EffectiveRegion, FormalError> {
        let r = &self.rules[self.rule_index(rule)?];
        Ok(EffectiveRegion {
            rule: r.rule.name.clone(),
            shadowed: r.region.is_empty(),
            boxes: r.region.iter().map(|b| self.view_box(b)).collect(),
        })
    }

    /// The rule as a guarded implication over the discrete domains.
    pub fn implication(&self, rule: &SecurityRule) -> String {
        let quoted = |s: &BTreeSet<String>| {
            s.iter()
                .map(|v| format!("'{v}'"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut terms = Vec::new();
        if let Selector::Only(s) = &rule.from_zones {
            terms.push(format!("From_Zone ∈ [{}]", quoted(s)));
        }
        if let Selector::Only(s) = &rule.to_zones {
            terms.push(format!("To_Zone ∈ [{}]", quoted(s)));
        }
        if let Selector::Only(s) = &rule.src_addrs {
            terms.push(format!("Src_IP ∈ [{}]", intervals::Display(s)));
        }
        if let Selector::Only(s) = &rule.dst_addrs {
            terms.push(format!("Dst_IP ∈ [{}]", intervals::Display(s)));
        }
        if let Selector::Only(s) = &rule.applications {
            terms.push(format!("Application ∈ [{}]", quoted(s)));
        }
        match &rule.services {
            ServiceSelector::Any => {}
            ServiceSelector::ApplicationDefault => {
                terms.push("Service ∈ application-default".into())
            }
            ServiceSelector::Only(names) => {
                let set: BTreeSet<String> = names.iter().cloned().collect();
                terms.push(format!("Service ∈ [{}]", quoted(&set)));
            }
        }
        let lhs = if terms.is_empty() {
            "true".to_string()
        } else {
            terms.join(" ∧ ")
        };
        format!("{lhs} → Action ∈ [{}]", rule.action as u8)
    }

    pub fn rule_views(&self) -> Vec<RuleView> {
        let names = |s: &Selector<BTreeSet<String>>| match s {
            Selector::Any => vec!["any".to_string()],
            Selector::Only(set) => set.iter().cloned().collect(),
        };
        let addrs = |s: &Selector<IntervalSet>| match s {
            Selector::Any => "any".to_string(),
            Selector::Only(set) => intervals::Display(set).to_string(),
        };
        self.rules
            .iter()
            .enumerate()
            .map(|(index, r)| RuleView {
                index,
                name: r.rule.name.clone(),
                action: r.rule.action,
                from_zones: names(&r.rule.from_zones),
                to_zones: names(&r.rule.to_zones),
                src_addrs: addrs(&r.rule.src_addrs),
                dst_addrs: addrs(&r.rule.dst_addrs),
                applications: names(&r.rule.applications),
                services: match &r.rule.services {
                    ServiceSelector::Any => vec!["any".into()],
                    ServiceSelector::ApplicationDefault => vec!["application-default".into()],
                    ServiceSelector::Only(v) => v.clone(),
                },
                implication: self.implication(&r.rule),
                shadowed: r.region.is_empty(),
            })
            .collect()
    }
}
