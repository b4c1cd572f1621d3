//! Entity embeddings for flow-log tokens.
//!
//! Each log row is treated as a short sentence. Training pairs are not taken
//! from a sliding window: a [`PairSchema`] names which (context field, target
//! field) relations inside one row are meaningful, and only those pairs are
//! generated. The model is a skip-gram trained with hierarchical softmax over
//! a frequency-built Huffman tree.

mod huffman;
mod model;

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Field, IngestError, LogCorpus, Token, TokenCount, TokenScheme};

pub use huffman::HuffmanTree;
pub use model::{
    log_prob, log_prob_gradient, sgd_pair_step, train_skipgram_hs, EmbeddingModel, Hyperparams,
    Neighbor, PathGradient,
};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("vocabulary has {0} tokens, need at least 2 for a hierarchical softmax tree")]
    VocabularyTooSmall(usize),
    #[error("no context/target pairs to train on")]
    NoPairs,
    #[error("unknown token {0}")]
    UnknownToken(String),
    #[error("invalid pair schema: {0}")]
    InvalidSchema(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("malformed model file {file}: {reason}")]
    Format { file: String, reason: String },
    #[error(transparent)]
    Token(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense token ids. Id order is descending frequency, ties broken by token order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    frequencies: Vec<u64>,
    index: HashMap<Token, u32>,
    scheme: TokenScheme,
}

impl Vocabulary {
    pub fn build(corpus: &LogCorpus, scheme: &TokenScheme) -> Self {
        let stats = crate::ingest::corpus_stats_with(corpus, scheme);
        Self::from_counts(stats.frequencies, scheme.clone())
    }

    fn from_counts(counts: Vec<TokenCount>, scheme: TokenScheme) -> Self {
        let mut tokens = Vec::with_capacity(counts.len());
        let mut frequencies = Vec::with_capacity(counts.len());
        let mut index = HashMap::with_capacity(counts.len());
        for (id, TokenCount { token, count }) in counts.into_iter().enumerate() {
            index.insert(token.clone(), id as u32);
            tokens.push(token);
            frequencies.push(count);
        }
        Vocabulary {
            tokens,
            frequencies,
            index,
            scheme,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &Token) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn require(&self, token: &Token) -> Result<u32, EmbeddingError> {
        self.id(token)
            .ok_or_else(|| EmbeddingError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: u32) -> &Token {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequencies
    }

    pub fn scheme(&self) -> &TokenScheme {
        &self.scheme
    }

    /// `category:value<TAB>frequency`, one line per id.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (tok, freq) in self.tokens.iter().zip(&self.frequencies) {
            let _ = writeln!(out, "{tok}\t{freq}");
        }
        out
    }

    pub fn from_tsv(text: &str, scheme: TokenScheme) -> Result<Self, EmbeddingError> {
        let mut counts = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let bad = |reason: &str| EmbeddingError::Format {
                file: "vocab.tsv".into(),
                reason: format!("line {}: {reason}", n + 1),
            };
            let (tok, freq) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let count: u64 = freq.parse().map_err(|_| bad("bad frequency"))?;
            if count == 0 {
                return Err(bad("zero frequency"));
            }
            counts.push(TokenCount {
                token: tok.parse()?,
                count,
            });
        }
        Ok(Self::from_counts(counts, scheme))
    }
}

/// Which in-row field relations produce training pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSchema {
    pub entries: Vec<(Field, Field)>,
}

impl PairSchema {
    pub fn new(entries: Vec<(Field, Field)>) -> Result<Self, EmbeddingError> {
        for &(c, t) in &entries {
            if c == t {
                return Err(EmbeddingError::InvalidSchema(format!(
                    "field {c} paired with itself"
                )));
            }
        }
        Ok(PairSchema { entries })
    }

    /// Source address to destination and application, application to
    /// destination, destination region to source and application.
    pub fn flow_default() -> Self {
        PairSchema {
            entries: vec![
                (Field::SrcIp, Field::DstIp),
                (Field::SrcIp, Field::Application),
                (Field::Application, Field::DstIp),
                (Field::DstRegion, Field::SrcIp),
                (Field::DstRegion, Field::Application),
            ],
        }
    }

    pub fn validate(
        &self,
        corpus_schema: &[Field],
        scheme: &TokenScheme,
    ) -> Result<(), EmbeddingError> {
        for &(c, t) in &self.entries {
            if c == t {
                return Err(EmbeddingError::InvalidSchema(format!(
                    "field {c} paired with itself"
                )));
            }
            for f in [c, t] {
                if !corpus_schema.contains(&f) {
                    return Err(EmbeddingError::InvalidSchema(format!(
                        "field {f} is not in the corpus schema"
                    )));
                }
                if !scheme.fields.contains(&f) {
                    return Err(EmbeddingError::InvalidSchema(format!(
                        "field {f} is not tokenized by the vocabulary scheme"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextTargetPair {
    pub context_id: u32,
    pub target_id: u32,
    pub source_row: u32,
}

/// Pairs in row-major order, schema order within a row. Entries whose
/// fields are not both present in a row are skipped for that row.
pub fn generate_pairs(
    corpus: &LogCorpus,
    schema: &PairSchema,
    vocab: &Vocabulary,
) -> Result<Vec<ContextTargetPair>, EmbeddingError> {
    schema.validate(&corpus.schema, vocab.scheme())?;
    let scheme = vocab.scheme();
    let mut pairs = Vec::with_capacity(corpus.row_count() * schema.entries.len());
    for (row, rec) in corpus.records.iter().enumerate() {
        for &(cf, tf) in &schema.entries {
            let (Some(c), Some(t)) = (scheme.token(rec, cf), scheme.token(rec, tf)) else {
                continue;
            };
            pairs.push(ContextTargetPair {
                context_id: vocab.require(&c)?,
                target_id: vocab.require(&t)?,
                source_row: row as u32,
            });
        }
    }
    Ok(pairs)
}

/// Little-endian `(context, target, row)` u32 triples.
pub fn pairs_to_bytes(pairs: &[ContextTargetPair]) -> Vec<u8> {
    let mut out = Vec::with_capacity(pairs.len() * 12);
    for p in pairs {
        out.extend_from_slice(&p.context_id.to_le_bytes());
        out.extend_from_slice(&p.target_id.to_le_bytes());
        out.extend_from_slice(&p.source_row.to_le_bytes());
    }
    out
}

pub fn pairs_from_bytes(bytes: &[u8]) -> Result<Vec<ContextTargetPair>, EmbeddingError> {
    if !bytes.len().is_multiple_of(12) {
        return Err(EmbeddingError::Format {
            file: "pairs.bin".into(),
            reason: format!("length {} is not a multiple of 12", bytes.len()),
        });
    }
    let word = |c: &[u8]| u32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    Ok(bytes
        .chunks_exact(12)
        .map(|c| ContextTargetPair {
            context_id: word(&c[0..4]),
            target_id: word(&c[4..8]),
            source_row: word(&c[8..12]),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{FlowRecord, TokenCategory};
    use std::collections::BTreeSet;
    use std::net::Ipv4Addr;

    fn table2_row() -> LogCorpus {
        let mut rec = FlowRecord::new(Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(8, 8, 8, 8));
        rec.application = Some("dns".into());
        rec.dst_region = Some("US".into());
        rec.protocol = Some("UDP".into());
        LogCorpus::new(
            vec![
                Field::SrcIp,
                Field::DstIp,
                Field::Protocol,
                Field::Application,
                Field::DstRegion,
            ],
            vec![rec],
        )
    }

    #[test]
    fn vocabulary_from_one_record() {
        let corpus = table2_row();
        let scheme = TokenScheme::for_schema(&corpus.schema);
        let vocab = Vocabulary::build(&corpus, &scheme);
        assert_eq!(vocab.len(), 5);
        assert!(vocab.frequencies().iter().all(|&f| f == 1));
        // ties sorted by rendered token
        let first: Vec<String> = vocab.tokens().iter().map(ToString::to_string).collect();
        let mut sorted = first.clone();
        sorted.sort();
        assert_eq!(first, sorted);
    }

    #[test]
    fn shared_destination_counts_twice() {
        let mut corpus = table2_row();
        let mut other = corpus.records[0].clone();
        other.src_ip = Ipv4Addr::new(10, 0, 0, 2);
        corpus.records.push(other);
        let vocab = Vocabulary::build(&corpus, &TokenScheme::for_schema(&corpus.schema));
        let google = Token::new(TokenCategory::Ip, "8.8.8.8");
        let id = vocab.id(&google).unwrap();
        assert_eq!(vocab.frequencies()[id as usize], 2);
        let f = vocab.frequencies();
        assert!(
            f.windows(2).all(|w| w[0] >= w[1]),
            "ids follow descending frequency"
        );
        assert_eq!(f[vocab.len() - 1], 1);
    }

    #[test]
    fn pairs_follow_the_schema_for_one_row() {
        let corpus = table2_row();
        let vocab = Vocabulary::build(&corpus, &TokenScheme::for_schema(&corpus.schema));
        let pairs = generate_pairs(&corpus, &PairSchema::flow_default(), &vocab).unwrap();
        let rendered: Vec<(String, String)> = pairs
            .iter()
            .map(|p| {
                (
                    vocab.token(p.context_id).value.clone(),
                    vocab.token(p.target_id).value.clone(),
                )
            })
            .collect();
        let expect = [
            ("10.0.0.1", "8.8.8.8"),
            ("10.0.0.1", "dns"),
            ("dns", "8.8.8.8"),
            ("US", "10.0.0.1"),
            ("US", "dns"),
        ];
        assert_eq!(rendered.len(), expect.len());
        for ((c, t), (ec, et)) in rendered.iter().zip(expect) {
            assert_eq!((c.as_str(), t.as_str()), (ec, et));
        }
        // protocol is never a context: it is not in the schema
        assert!(pairs
            .iter()
            .all(|p| vocab.token(p.context_id).category != TokenCategory::Proto));
    }

    #[test]
    fn empty_corpus_and_bad_schemas() {
        let mut corpus = table2_row();
        corpus.records.clear();
        let vocab = Vocabulary::build(&corpus, &TokenScheme::for_schema(&corpus.schema));
        assert!(generate_pairs(&corpus, &PairSchema::flow_default(), &vocab)
            .unwrap()
            .is_empty());
        assert!(PairSchema::new(vec![(Field::SrcIp, Field::SrcIp)]).is_err());
        let missing = PairSchema::new(vec![(Field::SrcIp, Field::DstPort)]).unwrap();
        assert!(matches!(
            generate_pairs(&corpus, &missing, &vocab),
            Err(EmbeddingError::InvalidSchema(_))
        ));
    }

    #[test]
    fn pair_categories_close_over_schema() {
        // rows with and without the optional fields
        let mut corpus = table2_row();
        let mut bare = corpus.records[0].clone();
        bare.application = None;
        bare.dst_region = None;
        corpus.records.push(bare);
        let vocab = Vocabulary::build(&corpus, &TokenScheme::for_schema(&corpus.schema));
        let schema = PairSchema::flow_default();
        let pairs = generate_pairs(&corpus, &schema, &vocab).unwrap();
        // row 0 has every field, row 1 only the addresses
        assert_eq!(pairs.iter().filter(|p| p.source_row == 0).count(), 5);
        assert_eq!(pairs.iter().filter(|p| p.source_row == 1).count(), 1);
        let seen: BTreeSet<_> = pairs
            .iter()
            .map(|p| {
                (
                    vocab.token(p.context_id).category,
                    vocab.token(p.target_id).category,
                )
            })
            .collect();
        let expected: BTreeSet<_> = schema
            .entries
            .iter()
            .map(|(c, t)| (c.category().unwrap(), t.category().unwrap()))
            .collect();
        assert_eq!(seen, expected);
        assert_eq!(pairs_from_bytes(&pairs_to_bytes(&pairs)).unwrap(), pairs);
    }

    #[test]
    fn vocab_tsv_round_trip() {
        let corpus = table2_row();
        let scheme = TokenScheme::for_schema(&corpus.schema);
        let vocab = Vocabulary::build(&corpus, &scheme);
        let back = Vocabulary::from_tsv(&vocab.to_tsv(), scheme).unwrap();
        assert_eq!(back, vocab);
        assert!(vocab
            .to_tsv()
            .lines()
            .all(|l| l.contains(":") && l.contains('\t')));
    }
}
