use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use super::intervals::{
    parse_ipv4_range, parse_number_range, protocol_number, IntervalSet, IPV4_MAX, PORT_MAX,
    PROTOCOL_MAX,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Json(String),
    #[error("rule {rule:?}: unresolved {kind} {name:?}")]
    Unresolved {
        rule: String,
        kind: &'static str,
        name: String,
    },
    #[error("{kind} {name:?}: unresolved member {member:?}")]
    UnresolvedMember {
        kind: &'static str,
        name: String,
        member: String,
    },
    #[error("cyclic {kind}: {}", path.join(" -> "))]
    Cycle {
        kind: &'static str,
        path: Vec<String>,
    },
    #[error("duplicate rule name {0:?}")]
    DuplicateRule(String),
    #[error("name {0:?} is both an object and a group")]
    Ambiguous(String),
    #[error("{context}: {reason}")]
    Invalid { context: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Deny = 0,
    Permit = 1,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Permit => "PERMIT",
            Action::Deny => "DENY",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Action {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "permit" | "allow" => Ok(Action::Permit),
            "deny" => Ok(Action::Deny),
            _ => Err(format!("unknown action {s:?}")),
        }
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

/// `ANY` or a concrete set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector<T> {
    Any,
    Only(T),
}

impl<T> Selector<T> {
    pub fn is_any(&self) -> bool {
        matches!(self, Selector::Any)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServiceSelector {
    Any,
    ApplicationDefault,
    Only(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceDef {
    pub protocol: IntervalSet,
    pub ports: IntervalSet,
}

impl ServiceDef {
    pub fn matches(&self, protocol: u8, port: u16) -> bool {
        self.protocol.contains(u64::from(protocol)) && self.ports.contains(u64::from(port))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecurityRule {
    pub name: String,
    pub from_zones: Selector<BTreeSet<String>>,
    pub to_zones: Selector<BTreeSet<String>>,
    pub src_addrs: Selector<IntervalSet>,
    pub dst_addrs: Selector<IntervalSet>,
    pub applications: Selector<BTreeSet<String>>,
    pub services: ServiceSelector,
    pub action: Action,
}

/// A parsed configuration with every rule reference resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirewallConfig {
    pub zones: BTreeSet<String>,
    pub address_objects: BTreeMap<String, IntervalSet>,
    pub address_groups: BTreeMap<String, Vec<String>>,
    /// Application name to its default services, if it declares any.
    pub applications: BTreeMap<String, Option<Vec<String>>>,
    pub application_groups: BTreeMap<String, Vec<String>>,
    pub service_objects: BTreeMap<String, ServiceDef>,
    pub rules: Vec<SecurityRule>,
    pub default_action: Action,
}

impl FirewallConfig {
    pub fn rule(&self, name: &str) -> Option<&SecurityRule> {
        self.rules.iter().find(|r| r.name == name)
    }

    /// Copy without the named rule.
    pub fn without_rule(&self, name: &str) -> FirewallConfig {
        let mut c = self.clone();
        c.rules.retain(|r| r.name != name);
        c
    }

    /// Default services of an application: `None` when it declares none.
    pub fn default_services(&self, app: &str) -> Option<Vec<&ServiceDef>> {
        self.applications
            .get(app)?
            .as_ref()
            .map(|names| names.iter().map(|n| &self.service_objects[n]).collect())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(Scalar),
    Many(Vec<Scalar>),
}

#[derive(Deserialize, Clone)]
#[serde(untagged)]
enum Scalar {
    Num(u64),
    Str(String),
}

impl Scalar {
    fn text(&self) -> String {
        match self {
            Scalar::Num(n) => n.to_string(),
            Scalar::Str(s) => s.clone(),
        }
    }
}

impl OneOrMany {
    fn items(&self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s.text()],
            OneOrMany::Many(v) => v.iter().map(Scalar::text).collect(),
        }
    }

    /// `None` means the literal `any`.
    fn names(&self) -> Option<Vec<String>> {
        let items = self.items();
        if items.iter().any(|s| s.eq_ignore_ascii_case("any")) {
            None
        } else {
            Some(items)
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawApp {
    #[serde(default)]
    default_service: Option<OneOrMany>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawApps {
    List(Vec<String>),
    Map(BTreeMap<String, RawApp>),
}

impl Default for RawApps {
    fn default() -> Self {
        RawApps::List(Vec::new())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawService {
    protocol: Scalar,
    #[serde(default)]
    ports: Option<OneOrMany>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    name: String,
    #[serde(default)]
    from_zones: Option<OneOrMany>,
    #[serde(default)]
    to_zones: Option<OneOrMany>,
    #[serde(default)]
    src_addrs: Option<OneOrMany>,
    #[serde(default)]
    dst_addrs: Option<OneOrMany>,
    #[serde(default)]
    applications: Option<OneOrMany>,
    #[serde(default)]
    services: Option<OneOrMany>,
    action: Action,
}

fn deny() -> Action {
    Action::Deny
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    zones: Vec<String>,
    #[serde(default)]
    address_objects: BTreeMap<String, OneOrMany>,
    #[serde(default)]
    address_groups: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    applications: RawApps,
    #[serde(default)]
    application_groups: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    service_objects: BTreeMap<String, RawService>,
    #[serde(default)]
    rules: Vec<RawRule>,
    #[serde(default = "deny")]
    default_action: Action,
}

/// Expands `name` through `groups`, collecting leaf names accepted by `is_leaf`.
fn expand_group(
    kind: &'static str,
    name: &str,
    groups: &BTreeMap<String, Vec<String>>,
    is_leaf: &dyn Fn(&str) -> bool,
    stack: &mut Vec<String>,
    out: &mut BTreeSet<String>,
) -> Result<(), ConfigError> {
    if let Some(pos) = stack.iter().position(|s| s == name) {
        let mut path = stack[pos..].to_vec();
        path.push(name.to_string());
        return Err(ConfigError::Cycle { kind, path });
    }
    stack.push(name.to_string());
    for member in &groups[name] {
        if groups.contains_key(member) {
            expand_group(kind, member, groups, is_leaf, stack, out)?;
        } else if is_leaf(member) {
            out.insert(member.clone());
        } else {
            return Err(ConfigError::UnresolvedMember {
                kind,
                name: name.to_string(),
                member: member.clone(),
            });
        }
    }
    stack.pop();
    Ok(())
}

fn invalid(context: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        context: context.into(),
        reason: reason.into(),
    }
}

fn parse_service(name: &str, raw: &RawService) -> Result<ServiceDef, ConfigError> {
    let ctx = format!("service {name:?}");
    let proto_text = raw.protocol.text();
    let protocol = if proto_text.eq_ignore_ascii_case("any") {
        IntervalSet::full(PROTOCOL_MAX)
    } else {
        let mut ranges = Vec::new();
        for part in proto_text.split(',') {
            let r = match protocol_number(part) {
                Some(n) => (u64::from(n), u64::from(n)),
                None => parse_number_range(part, PROTOCOL_MAX).map_err(|e| invalid(&ctx, e))?,
            };
            ranges.push(r);
        }
        IntervalSet::from_ranges(PROTOCOL_MAX, ranges)
    };
    let ports = match raw.ports.as_ref().and_then(OneOrMany::names) {
        None => IntervalSet::full(PORT_MAX),
        Some(items) => {
            let mut ranges = Vec::new();
            for it in items {
                ranges.push(parse_number_range(&it, PORT_MAX).map_err(|e| invalid(&ctx, e))?);
            }
            IntervalSet::from_ranges(PORT_MAX, ranges)
        }
    };
    if protocol.is_empty() || ports.is_empty() {
        return Err(invalid(ctx, "empty protocol or port set"));
    }
    Ok(ServiceDef { protocol, ports })
}

pub fn parse_config(source: &[u8]) -> Result<FirewallConfig, ConfigError> {
    let raw: RawConfig =
        serde_json::from_slice(source).map_err(|e| ConfigError::Json(e.to_string()))?;

    let zones: BTreeSet<String> = raw.zones.iter().cloned().collect();

    let mut service_objects = BTreeMap::new();
    for (name, svc) in &raw.service_objects {
        service_objects.insert(name.clone(), parse_service(name, svc)?);
    }

    let mut applications: BTreeMap<String, Option<Vec<String>>> = BTreeMap::new();
    match &raw.applications {
        RawApps::List(names) => {
            for n in names {
                applications.insert(n.clone(), None);
            }
        }
        RawApps::Map(map) => {
            for (n, app) in map {
                let defaults = match &app.default_service {
                    None => None,
                    Some(v) => {
                        let names = v.items();
                        for s in &names {
                            if !service_objects.contains_key(s) {
                                return Err(invalid(
                                    format!("application {n:?}"),
                                    format!("unknown default service {s:?}"),
                                ));
                            }
                        }
                        Some(names).filter(|v| !v.is_empty())
                    }
                };
                applications.insert(n.clone(), defaults);
            }
        }
    }

    let mut address_objects = BTreeMap::new();
    for (name, entries) in &raw.address_objects {
        let mut ranges = Vec::new();
        for e in entries.items() {
            ranges.push(
                parse_ipv4_range(&e).map_err(|r| invalid(format!("address object {name:?}"), r))?,
            );
        }
        address_objects.insert(name.clone(), IntervalSet::from_ranges(IPV4_MAX, ranges));
    }

    for name in raw.address_groups.keys() {
        if address_objects.contains_key(name) {
            return Err(ConfigError::Ambiguous(name.clone()));
        }
    }
    for name in raw.application_groups.keys() {
        if applications.contains_key(name) {
            return Err(ConfigError::Ambiguous(name.clone()));
        }
    }

    let addr_leaf = |n: &str| address_objects.contains_key(n);
    let mut addr_groups_expanded: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for name in raw.address_groups.keys() {
        let mut out = BTreeSet::new();
        expand_group(
            "address group",
            name,
            &raw.address_groups,
            &addr_leaf,
            &mut Vec::new(),
            &mut out,
        )?;
        addr_groups_expanded.insert(name.clone(), out);
    }
    let app_leaf = |n: &str| applications.contains_key(n);
    let mut app_groups_expanded: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for name in raw.application_groups.keys() {
        let mut out = BTreeSet::new();
        expand_group(
            "application group",
            name,
            &raw.application_groups,
            &app_leaf,
            &mut Vec::new(),
            &mut out,
        )?;
        app_groups_expanded.insert(name.clone(), out);
    }

    let mut seen = BTreeSet::new();
    let mut rules = Vec::with_capacity(raw.rules.len());
    for r in &raw.rules {
        if !seen.insert(r.name.clone()) {
            return Err(ConfigError::DuplicateRule(r.name.clone()));
        }
        let unresolved = |kind, name: &str| ConfigError::Unresolved {
            rule: r.name.clone(),
            kind,
            name: name.to_string(),
        };
        let zone_sel = |v: &Option<OneOrMany>| -> Result<Selector<BTreeSet<String>>, ConfigError> {
            match v.as_ref().and_then(OneOrMany::names) {
                None => Ok(Selector::Any),
                Some(names) => {
                    let mut set = BTreeSet::new();
                    for n in names {
                        if !zones.contains(&n) {
                            return Err(unresolved("zone", &n));
                        }
                        set.insert(n);
                    }
                    Ok(Selector::Only(set))
                }
            }
        };
        let addr_sel = |v: &Option<OneOrMany>| -> Result<Selector<IntervalSet>, ConfigError> {
            match v.as_ref().and_then(OneOrMany::names) {
                None => Ok(Selector::Any),
                Some(names) => {
                    let mut set = IntervalSet::empty(IPV4_MAX);
                    for n in names {
                        if let Some(s) = address_objects.get(&n) {
                            set = set.union(s);
                        } else if let Some(members) = addr_groups_expanded.get(&n) {
                            for m in members {
                                set = set.union(&address_objects[m]);
                            }
                        } else {
                            let (lo, hi) =
                                parse_ipv4_range(&n).map_err(|_| unresolved("address", &n))?;
                            set = set.union(&IntervalSet::from_ranges(IPV4_MAX, [(lo, hi)]));
                        }
                    }
                    Ok(Selector::Only(set))
                }
            }
        };
        let applications_sel = match r.applications.as_ref().and_then(OneOrMany::names) {
            None => Selector::Any,
            Some(names) => {
                let mut set = BTreeSet::new();
                for n in names {
                    if applications.contains_key(&n) {
                        set.insert(n);
                    } else if let Some(members) = app_groups_expanded.get(&n) {
                        set.extend(members.iter().cloned());
                    } else {
                        return Err(unresolved("application", &n));
                    }
                }
                Selector::Only(set)
            }
        };
        let services = match &r.services {
            None => ServiceSelector::Any,
            Some(v) => {
                let items = v.items();
                if items
                    .iter()
                    .any(|s| s.eq_ignore_ascii_case("application-default"))
                {
                    if items.len() > 1 {
                        return Err(invalid(
                            format!("rule {:?}", r.name),
                            "application-default cannot be combined with other services",
                        ));
                    }
                    ServiceSelector::ApplicationDefault
                } else if v.names().is_none() {
                    ServiceSelector::Any
                } else {
                    for s in &items {
                        if !service_objects.contains_key(s) {
                            return Err(unresolved("service", s));
                        }
                    }
                    ServiceSelector::Only(items)
                }
            }
        };
        rules.push(SecurityRule {
            name: r.name.clone(),
            from_zones: zone_sel(&r.from_zones)?,
            to_zones: zone_sel(&r.to_zones)?,
            src_addrs: addr_sel(&r.src_addrs)?,
            dst_addrs: addr_sel(&r.dst_addrs)?,
            applications: applications_sel,
            services,
            action: r.action,
        });
    }

    Ok(FirewallConfig {
        zones,
        address_objects,
        address_groups: raw.address_groups,
        applications,
        application_groups: raw.application_groups,
        service_objects,
        rules,
        default_action: raw.default_action,
    })
}
