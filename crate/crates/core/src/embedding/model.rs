use std::fs;
use std::path::Path;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ContextTargetPair, EmbeddingError, HuffmanTree, PairSchema, Vocabulary};
use crate::binmat;
use crate::ingest::{Token, TokenScheme};
use crate::parallel::ExecMode;

/// The learning rate decays linearly from its initial value down to this
/// fraction of it over the whole run.
const MIN_RATE_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            dim: 32,
            epochs: 5,
            learning_rate: 0.025,
            seed: 1,
        }
    }
}

impl Hyperparams {
    fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dim == 0 {
            return Err(EmbeddingError::InvalidHyperparams(
                "dim must be >= 1".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(EmbeddingError::InvalidHyperparams(
                "epochs must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EmbeddingError::InvalidHyperparams(
                "learning rate must be a positive finite number".into(),
            ));
        }
        Ok(())
    }

    fn rate_at(&self, step: u64, total: u64) -> f64 {
        let progress = step as f64 / total.max(1) as f64;
        self.learning_rate * (1.0 - progress).max(MIN_RATE_FRACTION)
    }
}

/// Trained skip-gram model. Row `w` of the input matrix is the embedding of
/// token `w`; the inner matrix holds one vector per Huffman inner node.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    dim: usize,
    vocab: Vocabulary,
    tree: HuffmanTree,
    input_vectors: Vec<f32>,
    inner_vectors: Vec<f32>,
    pub hyperparams: Hyperparams,
    pub pair_schema: PairSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub token: Token,
    pub similarity: f64,
}

fn sigmoid<F: Float>(x: F) -> F {
    let one = F::one();
    if x >= F::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

fn log_sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `∂ log σ(±x) / ∂x` for the branch taken at one inner node: bit 0 means
/// the sign is +1, bit 1 means −1. Both cases collapse to `1 − bit − σ(x)`.
fn branch_coefficient<F: Float>(dot: F, bit: u8) -> F {
    F::one() - F::from(bit).expect("bit fits") - sigmoid(dot)
}

fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `log p(target | context)` under the tree path `(path, code)`.
pub fn log_prob<F: Float>(context: &[F], inner: &[F], dim: usize, path: &[u32], code: &[u8]) -> F {
    path.iter().zip(code).fold(F::zero(), |acc, (&node, &bit)| {
        let u = &inner[node as usize * dim..(node as usize + 1) * dim];
        let x = dot(context, u);
        let signed = if bit == 0 { x } else { -x };
        acc + log_sigmoid(signed)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathGradient<F> {
    pub log_prob: F,
    /// Gradient with respect to the context (input) vector.
    pub context: Vec<F>,
    /// Gradient with respect to each inner vector on the path.
    pub nodes: Vec<(u32, Vec<F>)>,
}

/// Analytic gradient of [`log_prob`]. Inner nodes off the path have zero gradient.
pub fn log_prob_gradient<F: Float>(
    context: &[F],
    inner: &[F],
    dim: usize,
    path: &[u32],
    code: &[u8],
) -> PathGradient<F> {
    let mut grad_ctx = vec![F::zero(); dim];
    let mut nodes = Vec::with_capacity(path.len());
    for (&node, &bit) in path.iter().zip(code) {
        let u = &inner[node as usize * dim..(node as usize + 1) * dim];
        let coeff = branch_coefficient(dot(context, u), bit);
        for (g, &ui) in grad_ctx.iter_mut().zip(u) {
            *g = *g + coeff * ui;
        }
        nodes.push((node, context.iter().map(|&h| coeff * h).collect()));
    }
    PathGradient {
        log_prob: log_prob(context, inner, dim, path, code),
        context: grad_ctx,
        nodes,
    }
}

/// One gradient-ascent update of a single inner node. `neu1e` accumulates
/// the context-vector update using the node vector from before its own update.
fn node_step<F: Float>(h: &[F], u: &mut [F], bit: u8, alpha: F, neu1e: &mut [F]) {
    let g = branch_coefficient(dot(h, u), bit) * alpha;
    for (e, &ui) in neu1e.iter_mut().zip(u.iter()) {
        *e = *e + g * ui;
    }
    for (ui, &hi) in u.iter_mut().zip(h) {
        *ui = *ui + g * hi;
    }
}

/// One stochastic gradient-ascent step on `log p(target | context)`.
///
/// The context vector stays fixed while the path is walked, so the combined
/// update equals `alpha` times the gradient at the pre-step parameters.
#[allow(clippy::too_many_arguments)]
pub fn sgd_pair_step<F: Float>(
    input: &mut [F],
    inner: &mut [F],
    dim: usize,
    context: u32,
    path: &[u32],
    code: &[u8],
    alpha: F,
    neu1e: &mut [F],
) {
    neu1e.fill(F::zero());
    let row = context as usize * dim..(context as usize + 1) * dim;
    {
        let h = &input[row.clone()];
        for (&node, &bit) in path.iter().zip(code) {
            let u = &mut inner[node as usize * dim..(node as usize + 1) * dim];
            node_step(h, u, bit, alpha, neu1e);
        }
    }
    for (x, &e) in input[row].iter_mut().zip(neu1e.iter()) {
        *x = *x + e;
    }
}

/// Train skip-gram embeddings with hierarchical softmax.
///
/// [`ExecMode::Sequential`] is deterministic for a given seed. The parallel
/// mode runs lock-free updates over shards of the pair list and gives no
/// reproducibility guarantee.
pub fn train_skipgram_hs(
    pairs: &[ContextTargetPair],
    vocab: &Vocabulary,
    tree: &HuffmanTree,
    params: &Hyperparams,
    mode: ExecMode,
) -> Result<EmbeddingModel, EmbeddingError> {
    params.validate()?;
    if pairs.is_empty() {
        return Err(EmbeddingError::NoPairs);
    }
    let eta = vocab.len();
    if tree.leaf_count() != eta {
        return Err(EmbeddingError::InvalidHyperparams(format!(
            "tree has {} leaves but vocabulary has {eta} tokens",
            tree.leaf_count()
        )));
    }
    for p in pairs {
        for id in [p.context_id, p.target_id] {
            if id as usize >= eta {
                return Err(EmbeddingError::UnknownToken(format!("id {id}")));
            }
        }
    }
    let d = params.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let scale = 1.0 / d as f32;
    let mut input: Vec<f32> = (0..eta * d)
        .map(|_| (rng.random::<f32>() - 0.5) * scale)
        .collect();
    let mut inner = vec![0f32; (eta - 1) * d];

    if mode.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            (input, inner) = hogwild::train(pairs, tree, params, input, inner);
        }
    } else {
        let total = (params.epochs * pairs.len()) as u64;
        let mut neu1e = vec![0f32; d];
        let mut step = 0u64;
        for _ in 0..params.epochs {
            for p in pairs {
                let alpha = params.rate_at(step, total) as f32;
                sgd_pair_step(
                    &mut input,
                    &mut inner,
                    d,
                    p.context_id,
                    tree.path(p.target_id),
                    tree.code(p.target_id),
                    alpha,
                    &mut neu1e,
                );
                step += 1;
            }
        }
    }

    Ok(EmbeddingModel {
        dim: d,
        vocab: vocab.clone(),
        tree: tree.clone(),
        input_vectors: input,
        inner_vectors: inner,
        hyperparams: params.clone(),
        pair_schema: PairSchema {
            entries: Vec::new(),
        },
    })
}

#[cfg(feature = "parallel")]
mod hogwild {
    use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

    use rayon::prelude::*;

    use super::{node_step, ContextTargetPair, HuffmanTree, Hyperparams};

    fn load(m: &[AtomicU32], start: usize, out: &mut [f32]) {
        for (o, cell) in out.iter_mut().zip(&m[start..]) {
            *o = f32::from_bits(cell.load(Ordering::Relaxed));
        }
    }

    fn store(m: &[AtomicU32], start: usize, vals: &[f32]) {
        for (cell, v) in m[start..].iter().zip(vals) {
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    pub(super) fn train(
        pairs: &[ContextTargetPair],
        tree: &HuffmanTree,
        params: &Hyperparams,
        input: Vec<f32>,
        inner: Vec<f32>,
    ) -> (Vec<f32>, Vec<f32>) {
        let d = params.dim;
        let input: Vec<AtomicU32> = input
            .into_iter()
            .map(|x| AtomicU32::new(x.to_bits()))
            .collect();
        let inner: Vec<AtomicU32> = inner
            .into_iter()
            .map(|x| AtomicU32::new(x.to_bits()))
            .collect();
        let total = (params.epochs * pairs.len()) as u64;
        let done = AtomicU64::new(0);
        let shard = pairs
            .len()
            .div_ceil(rayon::current_num_threads().max(1))
            .max(1);

        pairs.par_chunks(shard).for_each(|chunk| {
            let mut h = vec![0f32; d];
            let mut u = vec![0f32; d];
            let mut neu1e = vec![0f32; d];
            for _ in 0..params.epochs {
                for p in chunk {
                    let step = done.fetch_add(1, Ordering::Relaxed);
                    let alpha = params.rate_at(step, total) as f32;
                    let row = p.context_id as usize * d;
                    load(&input, row, &mut h);
                    neu1e.fill(0.0);
                    for (&node, &bit) in tree.path(p.target_id).iter().zip(tree.code(p.target_id)) {
                        let at = node as usize * d;
                        load(&inner, at, &mut u);
                        node_step(&h, &mut u, bit, alpha, &mut neu1e);
                        store(&inner, at, &u);
                    }
                    load(&input, row, &mut h);
                    for (x, e) in h.iter_mut().zip(&neu1e) {
                        *x += e;
                    }
                    store(&input, row, &h);
                }
            }
        });

        let unwrap = |m: Vec<AtomicU32>| {
            m.into_iter()
                .map(|c| f32::from_bits(c.into_inner()))
                .collect()
        };
        (unwrap(input), unwrap(inner))
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRef {
    file: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelMetadata {
    format: String,
    dim: usize,
    vocab_size: usize,
    hyperparams: Hyperparams,
    token_scheme: TokenScheme,
    pair_schema: PairSchema,
    vocab_file: String,
    input_vectors: MatrixRef,
    inner_vectors: MatrixRef,
}

const FORMAT_TAG: &str = "log2ns-embedding/1";
const META_FILE: &str = "embedding.json";
const VOCAB_FILE: &str = "vocab.tsv";
const INPUT_FILE: &str = "input_vectors.f32";
const INNER_FILE: &str = "inner_vectors.f32";

impl EmbeddingModel {
    /// Assemble a model from explicit weights. The tree is rebuilt from the
    /// vocabulary frequencies.
    pub fn from_parts(
        vocab: Vocabulary,
        hyperparams: Hyperparams,
        pair_schema: PairSchema,
        input_vectors: Vec<f32>,
        inner_vectors: Vec<f32>,
    ) -> Result<Self, EmbeddingError> {
        let tree = HuffmanTree::build(vocab.frequencies())?;
        let d = hyperparams.dim;
        let eta = vocab.len();
        if d == 0 || input_vectors.len() != eta * d || inner_vectors.len() != (eta - 1) * d {
            return Err(EmbeddingError::Format {
                file: "weights".into(),
                reason: format!(
                    "expected {}x{d} input and {}x{d} inner weights, got {} and {} values",
                    eta,
                    eta - 1,
                    input_vectors.len(),
                    inner_vectors.len()
                ),
            });
        }
        Ok(EmbeddingModel {
            dim: d,
            vocab,
            tree,
            input_vectors,
            inner_vectors,
            hyperparams,
            pair_schema,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tree(&self) -> &HuffmanTree {
        &self.tree
    }

    pub fn input_vectors(&self) -> &[f32] {
        &self.input_vectors
    }

    pub fn inner_vectors(&self) -> &[f32] {
        &self.inner_vectors
    }

    pub fn vector(&self, id: u32) -> &[f32] {
        let d = self.dim;
        &self.input_vectors[id as usize * d..(id as usize + 1) * d]
    }

    pub fn embedding(&self, token: &Token) -> Result<&[f32], EmbeddingError> {
        Ok(self.vector(self.vocab.require(token)?))
    }

    pub fn all_finite(&self) -> bool {
        self.input_vectors
            .iter()
            .chain(&self.inner_vectors)
            .all(|x| x.is_finite())
    }

    fn probability_by_id(&self, context: u32, target: u32) -> f64 {
        let h: Vec<f64> = self.vector(context).iter().map(|&x| f64::from(x)).collect();
        let d = self.dim;
        let path = self.tree.path(target);
        let code = self.tree.code(target);
        path.iter().zip(code).fold(1.0, |acc, (&node, &bit)| {
            let u = &self.inner_vectors[node as usize * d..(node as usize + 1) * d];
            let x: f64 = h.iter().zip(u).map(|(&a, &b)| a * f64::from(b)).sum();
            acc * sigmoid(if bit == 0 { x } else { -x })
        })
    }

    /// `p(target | context)`: product of branch sigmoids along the target's path.
    pub fn hs_probability(&self, context: &Token, target: &Token) -> Result<f64, EmbeddingError> {
        let c = self.vocab.require(context)?;
        let t = self.vocab.require(target)?;
        Ok(self.probability_by_id(c, t))
    }

    /// `p(t | context)` for every vocabulary id `t`.
    pub fn target_distribution(&self, context: &Token) -> Result<Vec<f64>, EmbeddingError> {
        let c = self.vocab.require(context)?;
        Ok((0..self.vocab.len() as u32)
            .map(|t| self.probability_by_id(c, t))
            .collect())
    }

    /// Top-`k` tokens by cosine similarity of input vectors, excluding the
    /// query itself. Ties go to the smaller id.
    pub fn nearest_neighbors(
        &self,
        token: &Token,
        k: usize,
    ) -> Result<Vec<Neighbor>, EmbeddingError> {
        let q = self.vocab.require(token)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let qv = self.vector(q);
        let mut scored: Vec<(f64, u32)> = (0..self.vocab.len() as u32)
            .filter(|&id| id != q)
            .map(|id| (cosine(qv, self.vector(id)), id))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(similarity, id)| Neighbor {
                token: self.vocab.token(id).clone(),
                similarity,
            })
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<(), EmbeddingError> {
        fs::create_dir_all(dir)?;
        let eta = self.vocab.len();
        let meta = ModelMetadata {
            format: FORMAT_TAG.into(),
            dim: self.dim,
            vocab_size: eta,
            hyperparams: self.hyperparams.clone(),
            token_scheme: self.vocab.scheme().clone(),
            pair_schema: self.pair_schema.clone(),
            vocab_file: VOCAB_FILE.into(),
            input_vectors: MatrixRef {
                file: INPUT_FILE.into(),
                rows: eta,
                cols: self.dim,
            },
            inner_vectors: MatrixRef {
                file: INNER_FILE.into(),
                rows: eta - 1,
                cols: self.dim,
            },
        };
        let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        fs::write(dir.join(META_FILE), json)?;
        fs::write(dir.join(VOCAB_FILE), self.vocab.to_tsv())?;
        fs::write(
            dir.join(INPUT_FILE),
            binmat::encode_f32(&self.input_vectors),
        )?;
        fs::write(
            dir.join(INNER_FILE),
            binmat::encode_f32(&self.inner_vectors),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, EmbeddingError> {
        let meta_text = fs::read_to_string(dir.join(META_FILE))?;
        let meta: ModelMetadata =
            serde_json::from_str(&meta_text).map_err(|e| EmbeddingError::Format {
                file: META_FILE.into(),
                reason: e.to_string(),
            })?;
        if meta.format != FORMAT_TAG {
            return Err(EmbeddingError::Format {
                file: META_FILE.into(),
                reason: format!("unsupported format {:?}", meta.format),
            });
        }
        let vocab = Vocabulary::from_tsv(
            &fs::read_to_string(dir.join(&meta.vocab_file))?,
            meta.token_scheme,
        )?;
        let read_matrix = |m: &MatrixRef| -> Result<Vec<f32>, EmbeddingError> {
            let bytes = fs::read(dir.join(&m.file))?;
            binmat::decode_f32(&bytes)
                .filter(|v| v.len() == m.rows * m.cols)
                .ok_or_else(|| EmbeddingError::Format {
                    file: m.file.clone(),
                    reason: format!("expected {}x{} f32 values", m.rows, m.cols),
                })
        };
        let input = read_matrix(&meta.input_vectors)?;
        let inner = read_matrix(&meta.inner_vectors)?;
        if vocab.len() != meta.vocab_size {
            return Err(EmbeddingError::Format {
                file: meta.vocab_file,
                reason: format!("expected {} tokens, found {}", meta.vocab_size, vocab.len()),
            });
        }
        Self::from_parts(vocab, meta.hyperparams, meta.pair_schema, input, inner)
    }
}

pub(crate) fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}
