//! Formal first-match model of a firewall policy.
//!
//! A rule's guard is a union of per-field product boxes. Rule `i` owns the
//! packets in its guard minus the guards of rules `0..i`, computed by box
//! difference. Satisfiability queries intersect those regions with the
//! query box and return the lexicographically smallest packet as witness.

pub mod config;
pub mod intervals;
pub mod model;

pub use config::{
    parse_config, Action, ConfigError, FirewallConfig, SecurityRule, Selector, ServiceDef,
    ServiceSelector,
};
pub use intervals::IntervalSet;
pub use model::{
    BoxView, CompiledRule, EffectiveRegion, FieldSet, FirewallModel, FormalError, NameConstraint,
    Packet, PacketBox, PacketField, Point, RuleView, SolveOutcome, SymbolicPacket, Verdict,
    DEFAULT_RULE,
};

pub fn compile_rules(config: &FirewallConfig) -> FirewallModel {
    FirewallModel::compile(config)
}
