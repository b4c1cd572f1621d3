//! Synthetic flow logs drawn from a firewall model.
//!
//! Each row picks a permitting rule, then a packet from that rule's
//! effective region, so every row is observed-permitted traffic whose
//! generating rule is known.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::formal::intervals::{parse_ipv4_range, protocol_name, IntervalSet};
use crate::formal::{Action, FieldSet, FirewallModel, PacketBox, PacketField, Point};
use crate::ingest::{Field, FlowRecord, LogCorpus};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("no permitting rule has a non-empty region")]
    NothingPermitted,
    #[error("unknown rule {0:?} in weights")]
    UnknownRule(String),
    #[error("invalid region table entry {0:?}")]
    BadRegion(String),
    #[error("invalid host {0:?}")]
    BadHost(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub rows: usize,
    pub seed: u64,
    /// Preferred addresses; a box draws from those it contains before
    /// falling back to a uniform member.
    pub hosts: Vec<String>,
    /// Relative frequency per permitting rule; unlisted rules weigh 1.
    pub rule_weights: BTreeMap<String, f64>,
    /// `(cidr, region)` entries, first match wins.
    pub regions: Vec<(String, String)>,
    pub default_region: String,
    pub start_time: i64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            rows: 1000,
            seed: 7,
            hosts: Vec::new(),
            rule_weights: BTreeMap::new(),
            regions: vec![
                ("10.0.0.0/8".into(), "LOCAL".into()),
                ("172.16.0.0/12".into(), "LOCAL".into()),
                ("192.168.0.0/16".into(), "LOCAL".into()),
            ],
            default_region: "US".into(),
            start_time: 1_600_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub corpus: LogCorpus,
    /// Generating rule per row.
    pub labels: Vec<String>,
}

const PREFERRED_PROTOCOLS: [u64; 3] = [6, 17, 1];
const PREFERRED_PORTS: [u64; 6] = [443, 80, 53, 123, 22, 8080];

fn pick_in(rng: &mut ChaCha8Rng, set: &IntervalSet, preferred: &[u64]) -> u64 {
    let hits: Vec<u64> = preferred
        .iter()
        .copied()
        .filter(|&v| set.contains(v))
        .collect();
    if !hits.is_empty() {
        return hits[rng.random_range(0..hits.len())];
    }
    let mut idx = rng.random_range(0..set.count());
    for &(lo, hi) in set.ranges() {
        let n = hi - lo + 1;
        if idx < n {
            return lo + idx;
        }
        idx -= n;
    }
    unreachable!("index below count")
}

pub const SYNTH_SCHEMA: [Field; 12] = [
    Field::SrcIp,
    Field::DstIp,
    Field::Protocol,
    Field::SrcPort,
    Field::DstPort,
    Field::BytesSent,
    Field::FromZone,
    Field::ToZone,
    Field::Application,
    Field::SrcRegion,
    Field::DstRegion,
    Field::Timestamp,
];

pub fn synthesize(model: &FirewallModel, spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    for name in spec.rule_weights.keys() {
        model
            .rule_index(name)
            .map_err(|_| SynthError::UnknownRule(name.clone()))?;
    }
    let mut hosts: Vec<u64> = Vec::with_capacity(spec.hosts.len());
    for h in &spec.hosts {
        let (lo, hi) = parse_ipv4_range(h).map_err(|_| SynthError::BadHost(h.clone()))?;
        if lo != hi {
            return Err(SynthError::BadHost(h.clone()));
        }
        hosts.push(lo);
    }
    let mut regions = Vec::with_capacity(spec.regions.len());
    for (cidr, name) in &spec.regions {
        let r = parse_ipv4_range(cidr).map_err(|_| SynthError::BadRegion(cidr.clone()))?;
        regions.push((r, name.clone()));
    }
    let region_of = |ip: u64| {
        regions
            .iter()
            .find(|((lo, hi), _)| (*lo..=*hi).contains(&ip))
            .map_or_else(|| spec.default_region.clone(), |(_, n)| n.clone())
    };

    let candidates: Vec<(usize, f64)> = model
        .rules()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.rule.action == Action::Permit && !r.region().is_empty())
        .map(|(i, r)| {
            (
                i,
                spec.rule_weights.get(&r.rule.name).copied().unwrap_or(1.0),
            )
        })
        .filter(|&(_, w)| w > 0.0)
        .collect();
    if candidates.is_empty() {
        return Err(SynthError::NothingPermitted);
    }
    let total: f64 = candidates.iter().map(|c| c.1).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.rows);
    let mut labels = Vec::with_capacity(spec.rows);
    for row in 0..spec.rows {
        let mut target = rng.random::<f64>() * total;
        let mut chosen = candidates[candidates.len() - 1].0;
        for &(i, w) in &candidates {
            if target < w {
                chosen = i;
                break;
            }
            target -= w;
        }
        let rule = &model.rules()[chosen];
        let b: &PacketBox = &rule.region()[rng.random_range(0..rule.region().len())];
        let p = sample_point(&mut rng, b, &hosts);
        debug_assert_eq!(model.region_of(&p), Some(chosen));
        let pkt = model.packet(&p);

        let mut rec = FlowRecord::new(pkt.src_ip, pkt.dst_ip);
        rec.protocol = Some(protocol_name(pkt.protocol).to_ascii_uppercase());
        rec.src_port = Some(rng.random_range(1024..=65535));
        rec.dst_port = Some(pkt.dst_port);
        rec.bytes_sent = Some(10u64.pow(rng.random_range(1..7)) + rng.random_range(0..1000));
        rec.from_zone = Some(pkt.from_zone);
        rec.to_zone = Some(pkt.to_zone);
        rec.application = Some(pkt.application);
        rec.src_region = Some(region_of(u64::from(u32::from(pkt.src_ip))));
        rec.dst_region = Some(region_of(u64::from(u32::from(pkt.dst_ip))));
        rec.timestamp = Some(spec.start_time + row as i64);
        records.push(rec);
        labels.push(rule.rule.name.clone());
    }
    Ok(SynthOutput {
        corpus: LogCorpus::new(SYNTH_SCHEMA.to_vec(), records),
        labels,
    })
}

fn sample_point(rng: &mut ChaCha8Rng, b: &PacketBox, hosts: &[u64]) -> Point {
    let mut p = [0u64; 7];
    for (slot, f) in p.iter_mut().zip(PacketField::ALL) {
        *slot = match b.field(f) {
            FieldSet::Indices(members) => members[rng.random_range(0..members.len())],
            FieldSet::Values(set) => {
                let preferred: &[u64] = match f {
                    PacketField::SrcIp | PacketField::DstIp => hosts,
                    PacketField::Protocol => &PREFERRED_PROTOCOLS,
                    _ => &PREFERRED_PORTS,
                };
                pick_in(rng, set, preferred)
            }
        };
    }
    p
}
