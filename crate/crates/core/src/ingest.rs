//! Flow-log ingestion: parsing, validation and tokenization.
//!
//! Two input dialects are accepted. CSV needs a header row and splits on bare
//! commas (no quoting). JSONL carries one object per line keyed by the
//! [`Field`] names. Rows that fail validation are never dropped silently; they
//! land in [`ParsedLog::rejects`] with their row index and a reason code.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::{map_slice, ExecMode};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input is not valid UTF-8: {0}")]
    Encoding(#[from] std::str::Utf8Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("field {0:?} has no token category")]
    NotTokenizable(Field),
    #[error("value for {field} contains a comma and cannot be written as CSV: {value:?}")]
    CsvUnsafe { field: Field, value: String },
    #[error("invalid token {0:?}, expected category:value")]
    InvalidToken(String),
}

/// A column of the flow-log schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    SrcIp,
    DstIp,
    Protocol,
    SrcPort,
    DstPort,
    BytesSent,
    FromZone,
    ToZone,
    Application,
    SrcRegion,
    DstRegion,
    Timestamp,
}

impl Field {
    pub const ALL: [Field; 12] = [
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

    pub fn name(self) -> &'static str {
        match self {
            Field::SrcIp => "src_ip",
            Field::DstIp => "dst_ip",
            Field::Protocol => "protocol",
            Field::SrcPort => "src_port",
            Field::DstPort => "dst_port",
            Field::BytesSent => "bytes_sent",
            Field::FromZone => "from_zone",
            Field::ToZone => "to_zone",
            Field::Application => "application",
            Field::SrcRegion => "src_region",
            Field::DstRegion => "dst_region",
            Field::Timestamp => "timestamp",
        }
    }

    /// Token category for this field, `None` for fields never tokenized.
    pub fn category(self) -> Option<TokenCategory> {
        Some(match self {
            Field::SrcIp | Field::DstIp => TokenCategory::Ip,
            Field::Protocol => TokenCategory::Proto,
            Field::SrcPort | Field::DstPort => TokenCategory::Port,
            Field::BytesSent => TokenCategory::BytesBucket,
            Field::FromZone | Field::ToZone => TokenCategory::Zone,
            Field::Application => TokenCategory::App,
            Field::SrcRegion | Field::DstRegion => TokenCategory::Region,
            Field::Timestamp => return None,
        })
    }

    /// Fields whose value may be legitimately absent in a row even when the
    /// column is part of the schema.
    fn is_optional(self) -> bool {
        matches!(
            self,
            Field::FromZone
                | Field::ToZone
                | Field::Application
                | Field::SrcRegion
                | Field::DstRegion
                | Field::Timestamp
        )
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Field::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown field {s:?}"))
    }
}

/// One observed flow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes_sent: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_zone: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_zone: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub application: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
}

impl FlowRecord {
    /// A record with only the two mandatory addresses set.
    pub fn new(src_ip: Ipv4Addr, dst_ip: Ipv4Addr) -> Self {
        FlowRecord {
            src_ip,
            dst_ip,
            protocol: None,
            src_port: None,
            dst_port: None,
            bytes_sent: None,
            from_zone: None,
            to_zone: None,
            application: None,
            src_region: None,
            dst_region: None,
            timestamp: None,
        }
    }

    /// Text form of a field value, `None` when absent.
    pub fn get(&self, field: Field) -> Option<String> {
        match field {
            Field::SrcIp => Some(self.src_ip.to_string()),
            Field::DstIp => Some(self.dst_ip.to_string()),
            Field::Protocol => self.protocol.clone(),
            Field::SrcPort => self.src_port.map(|p| p.to_string()),
            Field::DstPort => self.dst_port.map(|p| p.to_string()),
            Field::BytesSent => self.bytes_sent.map(|b| b.to_string()),
            Field::FromZone => self.from_zone.clone(),
            Field::ToZone => self.to_zone.clone(),
            Field::Application => self.application.clone(),
            Field::SrcRegion => self.src_region.clone(),
            Field::DstRegion => self.dst_region.clone(),
            Field::Timestamp => self.timestamp.map(|t| t.to_string()),
        }
    }

    pub fn has(&self, field: Field) -> bool {
        match field {
            Field::SrcIp | Field::DstIp => true,
            Field::Protocol => self.protocol.is_some(),
            Field::SrcPort => self.src_port.is_some(),
            Field::DstPort => self.dst_port.is_some(),
            Field::BytesSent => self.bytes_sent.is_some(),
            Field::FromZone => self.from_zone.is_some(),
            Field::ToZone => self.to_zone.is_some(),
            Field::Application => self.application.is_some(),
            Field::SrcRegion => self.src_region.is_some(),
            Field::DstRegion => self.dst_region.is_some(),
            Field::Timestamp => self.timestamp.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogCorpus {
    pub records: Vec<FlowRecord>,
    pub schema: Vec<Field>,
}

impl LogCorpus {
    pub fn new(schema: Vec<Field>, records: Vec<FlowRecord>) -> Self {
        LogCorpus { records, schema }
    }

    pub fn row_count(&self) -> usize {
        self.records.len()
    }

    pub fn has_field(&self, field: Field) -> bool {
        self.schema.contains(&field)
    }

    /// CSV rendering with the corpus schema as header. Absent optional values
    /// are written as empty cells.
    pub fn to_csv(&self) -> Result<String, IngestError> {
        let mut out = self
            .schema
            .iter()
            .map(|f| f.name())
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for rec in &self.records {
            let mut cells = Vec::with_capacity(self.schema.len());
            for &field in &self.schema {
                let v = rec.get(field).unwrap_or_default();
                if v.contains(',') || v.contains('\n') {
                    return Err(IngestError::CsvUnsafe { field, value: v });
                }
                cells.push(v);
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        Ok(out)
    }

    /// One JSON object per record, restricted to schema fields.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            let value = serde_json::to_value(rec).expect("FlowRecord serializes");
            let mut obj = serde_json::Map::new();
            if let serde_json::Value::Object(map) = value {
                for &field in &self.schema {
                    if let Some(v) = map.get(field.name()) {
                        obj.insert(field.name().to_string(), v.clone());
                    }
                }
            }
            out.push_str(&serde_json::Value::Object(obj).to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogFormat {
    CsvWithHeader,
    Jsonl,
}

impl FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" | "csv_with_header" => Ok(LogFormat::CsvWithHeader),
            "jsonl" => Ok(LogFormat::Jsonl),
            other => Err(format!("unknown log format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    InvalidIpv4,
    Ipv6Unsupported,
    InvalidPort,
    InvalidBytes,
    InvalidTimestamp,
    MissingValue,
    ColumnCount,
    InvalidJson,
    UnknownField,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::InvalidIpv4 => "invalid IPv4",
            RejectReason::Ipv6Unsupported => "IPv6 not supported",
            RejectReason::InvalidPort => "invalid port",
            RejectReason::InvalidBytes => "invalid bytes_sent",
            RejectReason::InvalidTimestamp => "invalid timestamp",
            RejectReason::MissingValue => "missing value",
            RejectReason::ColumnCount => "wrong column count",
            RejectReason::InvalidJson => "invalid JSON",
            RejectReason::UnknownField => "unknown field",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    /// Zero-based index among the non-blank data rows of the input.
    pub row: usize,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Serialize)]
struct RejectLine<'a> {
    row: usize,
    reason: String,
    code: RejectReason,
    detail: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub corpus: LogCorpus,
    pub rejects: Vec<Reject>,
    /// Number of data rows seen in the input.
    pub input_rows: usize,
}

impl ParsedLog {
    /// The rejects report as JSONL `{row, reason, ...}` lines.
    pub fn rejects_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rejects {
            let line = RejectLine {
                row: r.row,
                reason: r.reason.to_string(),
                code: r.reason,
                detail: &r.detail,
            };
            out.push_str(&serde_json::to_string(&line).expect("reject serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn parse_flow_log(source: &[u8], format: LogFormat) -> Result<ParsedLog, IngestError> {
    parse_flow_log_with(source, format, ExecMode::default())
}

/// Parse with an explicit execution mode. Row order is preserved either way.
pub fn parse_flow_log_with(
    source: &[u8],
    format: LogFormat,
    mode: ExecMode,
) -> Result<ParsedLog, IngestError> {
    let text = std::str::from_utf8(source)?;
    match format {
        LogFormat::CsvWithHeader => parse_csv(text, mode),
        LogFormat::Jsonl => parse_jsonl(text, mode),
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.trim().is_empty())
}

fn parse_csv(text: &str, mode: ExecMode) -> Result<ParsedLog, IngestError> {
    let mut lines = data_lines(text);
    let Some(header) = lines.next() else {
        return Ok(ParsedLog {
            corpus: LogCorpus::new(Vec::new(), Vec::new()),
            rejects: Vec::new(),
            input_rows: 0,
        });
    };
    let mut schema = Vec::new();
    for name in header.split(',') {
        let field: Field = name.trim().parse().map_err(IngestError::Schema)?;
        if schema.contains(&field) {
            return Err(IngestError::Schema(format!("duplicate column {field}")));
        }
        schema.push(field);
    }
    check_mandatory(&schema)?;

    let rows: Vec<&str> = lines.collect();
    let input_rows = rows.len();
    let parsed = map_slice(mode, &rows, |line| {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != schema.len() {
            return Err((
                RejectReason::ColumnCount,
                format!("expected {} cells, found {}", schema.len(), cells.len()),
            ));
        }
        let mut builder = RecordBuilder::default();
        for (&field, cell) in schema.iter().zip(cells) {
            builder.set(field, if cell.is_empty() { None } else { Some(cell) })?;
        }
        builder.finish()
    });
    Ok(collect_rows(schema, parsed, input_rows))
}

fn parse_jsonl(text: &str, mode: ExecMode) -> Result<ParsedLog, IngestError> {
    let rows: Vec<&str> = data_lines(text).collect();
    let input_rows = rows.len();
    let parsed = map_slice(mode, &rows, |line| {
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| (RejectReason::InvalidJson, e.to_string()))?;
        let serde_json::Value::Object(map) = value else {
            return Err((RejectReason::InvalidJson, "expected a JSON object".into()));
        };
        let mut keys = BTreeSet::new();
        let mut builder = RecordBuilder::default();
        for (key, v) in &map {
            let field: Field = key
                .parse()
                .map_err(|_| (RejectReason::UnknownField, key.clone()))?;
            let text = match v {
                serde_json::Value::Null => None,
                serde_json::Value::String(s) if s.trim().is_empty() => None,
                serde_json::Value::String(s) => Some(s.trim().to_string()),
                serde_json::Value::Number(n) => Some(n.to_string()),
                other => {
                    return Err((
                        RejectReason::InvalidJson,
                        format!("{key}: unsupported value {other}"),
                    ))
                }
            };
            builder.set(field, text.as_deref())?;
            keys.insert(field);
        }
        builder.finish().map(|rec| (rec, keys))
    });

    let schema: Vec<Field> = {
        let mut seen = BTreeSet::new();
        for (_, keys) in parsed.iter().flatten() {
            seen.extend(keys.iter().copied());
        }
        seen.into_iter().collect()
    };
    if input_rows > 0 && !schema.is_empty() {
        check_mandatory(&schema)?;
    }
    // Strict fields must be present in every row once they are part of the schema.
    let parsed = parsed
        .into_iter()
        .map(|r| {
            let (rec, keys) = r?;
            for &field in &schema {
                if !field.is_optional() && !keys.contains(&field) {
                    return Err((RejectReason::MissingValue, field.name().to_string()));
                }
            }
            Ok(rec)
        })
        .collect();
    Ok(collect_rows(schema, parsed, input_rows))
}

fn check_mandatory(schema: &[Field]) -> Result<(), IngestError> {
    for required in [Field::SrcIp, Field::DstIp] {
        if !schema.contains(&required) {
            return Err(IngestError::Schema(format!(
                "missing mandatory column {required}"
            )));
        }
    }
    Ok(())
}

fn collect_rows(
    schema: Vec<Field>,
    parsed: Vec<Result<FlowRecord, (RejectReason, String)>>,
    input_rows: usize,
) -> ParsedLog {
    let mut records = Vec::with_capacity(parsed.len());
    let mut rejects = Vec::new();
    for (row, result) in parsed.into_iter().enumerate() {
        match result {
            Ok(rec) => records.push(rec),
            Err((reason, detail)) => rejects.push(Reject {
                row,
                reason,
                detail,
            }),
        }
    }
    ParsedLog {
        corpus: LogCorpus::new(schema, records),
        rejects,
        input_rows,
    }
}

#[derive(Default)]
struct RecordBuilder {
    src_ip: Option<Ipv4Addr>,
    dst_ip: Option<Ipv4Addr>,
    pending: Vec<(Field, String)>,
}

impl RecordBuilder {
    fn set(&mut self, field: Field, value: Option<&str>) -> Result<(), (RejectReason, String)> {
        let Some(value) = value else {
            if field.is_optional() {
                return Ok(());
            }
            return Err((RejectReason::MissingValue, field.name().to_string()));
        };
        match field {
            Field::SrcIp => self.src_ip = Some(parse_ipv4(field, value)?),
            Field::DstIp => self.dst_ip = Some(parse_ipv4(field, value)?),
            _ => self.pending.push((field, value.to_string())),
        }
        Ok(())
    }

    fn finish(self) -> Result<FlowRecord, (RejectReason, String)> {
        let src = self
            .src_ip
            .ok_or((RejectReason::MissingValue, "src_ip".to_string()))?;
        let dst = self
            .dst_ip
            .ok_or((RejectReason::MissingValue, "dst_ip".to_string()))?;
        let mut rec = FlowRecord::new(src, dst);
        for (field, value) in self.pending {
            let bad = |reason| (reason, format!("{field}={value}"));
            match field {
                Field::Protocol => rec.protocol = Some(value),
                Field::SrcPort => {
                    rec.src_port = Some(value.parse().map_err(|_| bad(RejectReason::InvalidPort))?)
                }
                Field::DstPort => {
                    rec.dst_port = Some(value.parse().map_err(|_| bad(RejectReason::InvalidPort))?)
                }
                Field::BytesSent => {
                    rec.bytes_sent =
                        Some(value.parse().map_err(|_| bad(RejectReason::InvalidBytes))?)
                }
                Field::FromZone => rec.from_zone = Some(value),
                Field::ToZone => rec.to_zone = Some(value),
                Field::Application => rec.application = Some(value),
                Field::SrcRegion => rec.src_region = Some(value),
                Field::DstRegion => rec.dst_region = Some(value),
                Field::Timestamp => {
                    rec.timestamp = Some(
                        value
                            .parse()
                            .map_err(|_| bad(RejectReason::InvalidTimestamp))?,
                    )
                }
                Field::SrcIp | Field::DstIp => unreachable!("addresses are parsed eagerly"),
            }
        }
        Ok(rec)
    }
}

fn parse_ipv4(field: Field, value: &str) -> Result<Ipv4Addr, (RejectReason, String)> {
    value.parse::<Ipv4Addr>().map_err(|_| {
        let reason = if value.parse::<Ipv6Addr>().is_ok() {
            RejectReason::Ipv6Unsupported
        } else {
            RejectReason::InvalidIpv4
        };
        (reason, format!("{field}={value}"))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCategory {
    Ip,
    App,
    Proto,
    Zone,
    Region,
    Port,
    BytesBucket,
}

impl TokenCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenCategory::Ip => "ip",
            TokenCategory::App => "app",
            TokenCategory::Proto => "proto",
            TokenCategory::Zone => "zone",
            TokenCategory::Region => "region",
            TokenCategory::Port => "port",
            TokenCategory::BytesBucket => "bytes_bucket",
        }
    }
}

impl FromStr for TokenCategory {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ip" => TokenCategory::Ip,
            "app" => TokenCategory::App,
            "proto" => TokenCategory::Proto,
            "zone" => TokenCategory::Zone,
            "region" => TokenCategory::Region,
            "port" => TokenCategory::Port,
            "bytes_bucket" => TokenCategory::BytesBucket,
            _ => return Err(IngestError::InvalidToken(s.to_string())),
        })
    }
}

/// A vocabulary entry, rendered as `category:value`.
///
/// Ordering is the lexicographic order of the rendered form: no category
/// name is a prefix of another, so comparing `(category, value)` agrees with
/// comparing the strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub category: TokenCategory,
    pub value: String,
}

impl Token {
    pub fn new(category: TokenCategory, value: impl Into<String>) -> Self {
        Token {
            category,
            value: value.into(),
        }
    }
}

impl Ord for Token {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.category
            .as_str()
            .cmp(other.category.as_str())
            .then_with(|| self.value.cmp(&other.value))
    }
}

impl PartialOrd for Token {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.category.as_str(), self.value)
    }
}

impl FromStr for Token {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (cat, value) = s
            .split_once(':')
            .ok_or_else(|| IngestError::InvalidToken(s.to_string()))?;
        if value.is_empty() {
            return Err(IngestError::InvalidToken(s.to_string()));
        }
        Ok(Token::new(cat.parse()?, value))
    }
}

impl Serialize for Token {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which fields become tokens, and how byte counts are bucketed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenScheme {
    pub fields: Vec<Field>,
    #[serde(default = "default_bytes_base")]
    pub bytes_log_base: u32,
}

fn default_bytes_base() -> u32 {
    10
}

impl TokenScheme {
    pub fn new(fields: Vec<Field>) -> Result<Self, IngestError> {
        for &f in &fields {
            if f.category().is_none() {
                return Err(IngestError::NotTokenizable(f));
            }
        }
        Ok(TokenScheme {
            fields,
            bytes_log_base: default_bytes_base(),
        })
    }

    /// Every tokenizable field of a corpus schema.
    pub fn for_schema(schema: &[Field]) -> Self {
        TokenScheme {
            fields: schema
                .iter()
                .copied()
                .filter(|f| f.category().is_some())
                .collect(),
            bytes_log_base: default_bytes_base(),
        }
    }

    /// Token for one field of a record, `None` when the value is absent.
    pub fn token(&self, record: &FlowRecord, field: Field) -> Option<Token> {
        let category = field.category()?;
        let value = match field {
            Field::BytesSent => bytes_bucket(record.bytes_sent?, self.bytes_log_base).to_string(),
            _ => record.get(field)?,
        };
        Some(Token::new(category, value))
    }
}

/// `floor(log_base(bytes + 1))`, computed in integers.
pub fn bytes_bucket(bytes: u64, base: u32) -> u32 {
    let base = u128::from(base.max(2));
    let n = u128::from(bytes) + 1;
    let mut bucket = 0;
    let mut power = base;
    while power <= n {
        bucket += 1;
        power *= base;
    }
    bucket
}

pub fn tokenize_record(record: &FlowRecord, scheme: &TokenScheme) -> Vec<Token> {
    scheme
        .fields
        .iter()
        .filter_map(|&f| scheme.token(record, f))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCount {
    pub token: Token,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Descending count, then token order.
    pub frequencies: Vec<TokenCount>,
    /// Distinct present values per tokenized field, in scheme order.
    pub distinct_per_field: Vec<(Field, usize)>,
    pub total_tokens: u64,
}

pub fn corpus_stats(corpus: &LogCorpus) -> CorpusStats {
    corpus_stats_with(corpus, &TokenScheme::for_schema(&corpus.schema))
}

pub fn corpus_stats_with(corpus: &LogCorpus, scheme: &TokenScheme) -> CorpusStats {
    let mut counts: HashMap<Token, u64> = HashMap::new();
    let mut distinct: BTreeMap<Field, BTreeSet<String>> = BTreeMap::new();
    let mut total = 0u64;
    for rec in &corpus.records {
        for &field in &scheme.fields {
            if let Some(tok) = scheme.token(rec, field) {
                distinct.entry(field).or_default().insert(tok.value.clone());
                *counts.entry(tok).or_insert(0) += 1;
                total += 1;
            }
        }
    }
    let frequencies = sort_counts(counts);
    let distinct_per_field = scheme
        .fields
        .iter()
        .map(|f| (*f, distinct.get(f).map_or(0, BTreeSet::len)))
        .collect();
    CorpusStats {
        frequencies,
        distinct_per_field,
        total_tokens: total,
    }
}

pub(crate) fn sort_counts(counts: HashMap<Token, u64>) -> Vec<TokenCount> {
    let mut v: Vec<TokenCount> = counts
        .into_iter()
        .map(|(token, count)| TokenCount { token, count })
        .collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
    v
}
