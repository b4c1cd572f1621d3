use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Union of inclusive integer intervals inside `[0, max]`, kept sorted,
/// disjoint and non-adjacent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntervalSet {
    max: u64,
    ranges: Vec<(u64, u64)>,
}

pub const IPV4_MAX: u64 = u32::MAX as u64;
pub const PROTOCOL_MAX: u64 = 255;
pub const PORT_MAX: u64 = 65_535;

impl IntervalSet {
    pub fn empty(max: u64) -> Self {
        IntervalSet {
            max,
            ranges: Vec::new(),
        }
    }

    pub fn full(max: u64) -> Self {
        IntervalSet {
            max,
            ranges: vec![(0, max)],
        }
    }

    /// Builds a set from arbitrary ranges, clamping to `max` and dropping
    /// reversed ranges.
    pub fn from_ranges(max: u64, ranges: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut rs: Vec<(u64, u64)> = ranges
            .into_iter()
            .filter(|&(lo, hi)| lo <= hi && lo <= max)
            .map(|(lo, hi)| (lo, hi.min(max)))
            .collect();
        rs.sort_unstable();
        let mut out: Vec<(u64, u64)> = Vec::with_capacity(rs.len());
        for (lo, hi) in rs {
            match out.last_mut() {
                Some(last) if lo <= last.1.saturating_add(1) => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        IntervalSet { max, ranges: out }
    }

    pub fn single(max: u64, v: u64) -> Self {
        Self::from_ranges(max, [(v, v)])
    }

    pub fn max(&self) -> u64 {
        self.max
    }

    pub fn ranges(&self) -> &[(u64, u64)] {
        &self.ranges
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.ranges == [(0, self.max)]
    }

    pub fn contains(&self, v: u64) -> bool {
        let i = self.ranges.partition_point(|&(_, hi)| hi < v);
        self.ranges.get(i).is_some_and(|&(lo, _)| lo <= v)
    }

    pub fn min(&self) -> Option<u64> {
        self.ranges.first().map(|r| r.0)
    }

    /// Number of members.
    pub fn count(&self) -> u64 {
        self.ranges.iter().map(|(lo, hi)| hi - lo + 1).sum()
    }

    pub fn union(&self, other: &Self) -> Self {
        Self::from_ranges(self.max, self.ranges.iter().chain(&other.ranges).copied())
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.ranges.len() && j < other.ranges.len() {
            let (a0, a1) = self.ranges[i];
            let (b0, b1) = other.ranges[j];
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if lo <= hi {
                out.push((lo, hi));
            }
            if a1 < b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet {
            max: self.max,
            ranges: out,
        }
    }

    pub fn complement(&self) -> Self {
        let mut out = Vec::new();
        let mut next = 0u64;
        for &(lo, hi) in &self.ranges {
            if lo > next {
                out.push((next, lo - 1));
            }
            next = hi + 1;
        }
        if next <= self.max {
            out.push((next, self.max));
        }
        IntervalSet {
            max: self.max,
            ranges: out,
        }
    }

    pub fn difference(&self, other: &Self) -> Self {
        self.intersect(&other.complement())
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.difference(other).is_empty()
    }
}

/// Parses `a.b.c.d`, `a.b.c.d/len` or `a.b.c.d-e.f.g.h` into an inclusive
/// address range.
pub fn parse_ipv4_range(text: &str) -> Result<(u64, u64), String> {
    let text = text.trim();
    let ip = |s: &str| {
        Ipv4Addr::from_str(s.trim())
            .map(|a| u64::from(u32::from(a)))
            .map_err(|_| format!("invalid IPv4 address {s:?}"))
    };
    if let Some((addr, len)) = text.split_once('/') {
        let base = ip(addr)?;
        let len: u32 = len
            .parse()
            .ok()
            .filter(|&l| l <= 32)
            .ok_or_else(|| format!("invalid prefix length in {text:?}"))?;
        let span = 1u64 << (32 - len);
        let lo = base & !(span - 1);
        return Ok((lo, lo + span - 1));
    }
    if let Some((a, b)) = text.split_once('-') {
        let (lo, hi) = (ip(a)?, ip(b)?);
        if lo > hi {
            return Err(format!("reversed range {text:?}"));
        }
        return Ok((lo, hi));
    }
    let v = ip(text)?;
    Ok((v, v))
}

/// Parses `n` or `a-b` within `[0, max]`.
pub fn parse_number_range(text: &str, max: u64) -> Result<(u64, u64), String> {
    let num = |s: &str| {
        s.trim()
            .parse::<u64>()
            .ok()
            .filter(|&v| v <= max)
            .ok_or_else(|| format!("invalid number {s:?} (allowed 0-{max})"))
    };
    let (lo, hi) = match text.split_once('-') {
        Some((a, b)) => (num(a)?, num(b)?),
        None => {
            let v = num(text)?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(format!("reversed range {text:?}"));
    }
    Ok((lo, hi))
}

/// IANA numbers for the protocol names the config and queries accept.
pub fn protocol_number(text: &str) -> Option<u8> {
    match text.trim().to_ascii_lowercase().as_str() {
        "icmp" => Some(1),
        "tcp" => Some(6),
        "udp" => Some(17),
        other => other.parse().ok(),
    }
}

pub fn protocol_name(n: u8) -> String {
    match n {
        1 => "icmp".into(),
        6 => "tcp".into(),
        17 => "udp".into(),
        _ => n.to_string(),
    }
}

pub fn ipv4_text(v: u64) -> String {
    Ipv4Addr::from(v as u32).to_string()
}

/// Human-readable rendering, addresses for IPv4-sized sets.
pub struct Display<'a>(pub &'a IntervalSet);

impl fmt::Display for Display<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0;
        if s.is_full() {
            return f.write_str("any");
        }
        let item = |v: u64| {
            if s.max == IPV4_MAX {
                ipv4_text(v)
            } else {
                v.to_string()
            }
        };
        let parts: Vec<String> = s
            .ranges
            .iter()
            .map(|&(lo, hi)| {
                if lo == hi {
                    item(lo)
                } else {
                    format!("{}-{}", item(lo), item(hi))
                }
            })
            .collect();
        f.write_str(&parts.join(","))
    }
}
