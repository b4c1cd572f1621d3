//! Row vectors, K-means and cluster digests.
//!
//! A row vector is built from the embeddings of a row's entity tokens,
//! either concatenated in field order or as a weighted average. Rows missing
//! a configured field get a zero block for it, so "field absent" behaviour
//! can itself form a cluster.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binmat;
use crate::embedding::{EmbeddingError, EmbeddingModel};
use crate::ingest::{Field, LogCorpus};
use crate::parallel::{map_range, map_slice, ExecMode};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the {distinct} distinct vectors")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("empty k range")]
    EmptyRange,
    #[error("need at least {need} vectors, got {got}")]
    TooFewVectors { need: usize, got: usize },
    #[error("vector {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("field {0} has no token category")]
    NotTokenizable(Field),
    #[error("corpus/model mismatch: {0}")]
    Mismatch(#[from] EmbeddingError),
    #[error("cluster {id} out of range for k = {k}")]
    NoSuchCluster { id: usize, k: usize },
    #[error("malformed cluster file {file}: {reason}")]
    Format { file: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VectorizeMode {
    Concat,
    WeightedAvg { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorizeConfig {
    pub fields: Vec<Field>,
    pub mode: VectorizeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowVector {
    pub row_index: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowVectors {
    pub dim: usize,
    pub rows: Vec<RowVector>,
    /// `(row, field)` for every configured field a row did not have.
    pub missing: Vec<(usize, Field)>,
}

impl RowVectors {
    pub fn points(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.vector.clone()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let flat: Vec<f32> = self
            .rows
            .iter()
            .flat_map(|r| r.vector.iter().map(|&x| x as f32))
            .collect();
        binmat::encode_f32(&flat)
    }
}

pub fn vectorize_rows(
    corpus: &LogCorpus,
    model: &EmbeddingModel,
    config: &VectorizeConfig,
    mode: ExecMode,
) -> Result<RowVectors, ClusterError> {
    let d = model.dim();
    let nf = config.fields.len();
    for &f in &config.fields {
        if f.category().is_none() {
            return Err(ClusterError::NotTokenizable(f));
        }
    }
    let weights = match &config.mode {
        VectorizeMode::Concat => None,
        VectorizeMode::WeightedAvg { weights } => {
            if weights.len() != nf {
                return Err(ClusterError::InvalidWeights(format!(
                    "{} weights for {nf} fields",
                    weights.len()
                )));
            }
            let total: f64 = weights.iter().sum();
            if total.is_nan() || total <= 0.0 || weights.iter().any(|w| !w.is_finite()) {
                return Err(ClusterError::InvalidWeights(
                    "weights must be finite with a positive sum".into(),
                ));
            }
            Some((weights.as_slice(), total))
        }
    };
    let dim = if weights.is_some() { d } else { nf * d };
    let scheme = model.vocab().scheme();

    let rows = map_slice(mode, &corpus.records, |rec| {
        let mut v = vec![0.0f64; dim];
        let mut missing = Vec::new();
        for (i, &field) in config.fields.iter().enumerate() {
            let Some(tok) = scheme.token(rec, field) else {
                missing.push(field);
                continue;
            };
            let e = model.embedding(&tok)?;
            match weights {
                None => {
                    for (dst, &x) in v[i * d..(i + 1) * d].iter_mut().zip(e) {
                        *dst = f64::from(x);
                    }
                }
                Some((w, _)) => {
                    for (dst, &x) in v.iter_mut().zip(e) {
                        *dst += w[i] * f64::from(x);
                    }
                }
            }
        }
        if let Some((_, total)) = weights {
            for x in &mut v {
                *x /= total;
            }
        }
        Ok::<_, EmbeddingError>((v, missing))
    });

    let mut out = RowVectors {
        dim,
        rows: Vec::with_capacity(rows.len()),
        missing: Vec::new(),
    };
    for (row_index, r) in rows.into_iter().enumerate() {
        let (vector, missing) = r?;
        out.missing
            .extend(missing.into_iter().map(|f| (row_index, f)));
        out.rows.push(RowVector { row_index, vector });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            seed,
            max_iter: 100,
            tol: 1e-6,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub seed: u64,
    pub dim: usize,
    /// Row-major `k × dim`.
    pub centroids: Vec<f64>,
    /// Cluster id per input vector.
    pub assignments: Vec<usize>,
    pub sse: f64,
}

impl ClusterModel {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn member_count(&self, c: usize) -> usize {
        self.assignments.iter().filter(|&&a| a == c).count()
    }
}

/// Trace of one Lloyd run, with the SSE recorded after every assignment step.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub sse: f64,
    pub sse_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(points: &[Vec<f64>]) -> Result<usize, ClusterError> {
    let dim = points.first().map_or(0, Vec::len);
    for (index, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(ClusterError::DimensionMismatch {
                index,
                got: p.len(),
                expected: dim,
            });
        }
    }
    Ok(dim)
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| (x + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Nearest centroid per point (ties to the lowest index) and its squared distance.
fn assign(points: &[Vec<f64>], centroids: &[f64], k: usize, mode: ExecMode) -> Vec<(usize, f64)> {
    let dim = centroids.len() / k;
    map_slice(mode, points, |p| {
        let mut best = (0, f64::INFINITY);
        for c in 0..k {
            let d = sq_dist(p, &centroids[c * dim..(c + 1) * dim]);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    })
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
pub fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len();
    let dim = points[0].len();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            chosen.expect("positive total has a positive weight")
        } else {
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(&points[pick]);
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &points[pick]));
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids until the largest centroid
/// shift drops below `tol` or `max_iter` updates have run. An empty cluster
/// is re-seeded to the point farthest from its current centroid.
pub fn lloyd(
    points: &[Vec<f64>],
    mut centroids: Vec<f64>,
    k: usize,
    max_iter: usize,
    tol: f64,
    mode: ExecMode,
) -> LloydRun {
    let dim = points[0].len();
    let mut history = Vec::new();
    let mut assigned = assign(points, &centroids, k, mode);
    history.push(assigned.iter().map(|a| a.1).sum());

    for _ in 0..max_iter {
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in points.iter().zip(&assigned) {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in next[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut spread: Vec<f64> = points
                .iter()
                .zip(&assigned)
                .map(|(p, &(c, _))| sq_dist(p, &next[c * dim..(c + 1) * dim]))
                .collect();
            for c in empties {
                let far =
                    spread
                        .iter()
                        .enumerate()
                        .fold(0, |best, (i, &d)| if d > spread[best] { i } else { best });
                next[c * dim..(c + 1) * dim].copy_from_slice(&points[far]);
                spread[far] = f64::NEG_INFINITY;
            }
        }
        let shift = (0..k)
            .map(|c| {
                sq_dist(
                    &centroids[c * dim..(c + 1) * dim],
                    &next[c * dim..(c + 1) * dim],
                )
            })
            .fold(0.0f64, f64::max)
            .sqrt();
        centroids = next;
        assigned = assign(points, &centroids, k, mode);
        history.push(assigned.iter().map(|a| a.1).sum());
        if shift < tol {
            break;
        }
    }

    LloydRun {
        sse: *history.last().expect("at least one assignment"),
        assignments: assigned.into_iter().map(|a| a.0).collect(),
        centroids,
        sse_history: history,
    }
}

/// Best of `params.restarts` seeded k-means++ / Lloyd runs by SSE.
pub fn kmeans_fit(
    points: &[Vec<f64>],
    params: &KMeansParams,
    mode: ExecMode,
) -> Result<ClusterModel, ClusterError> {
    if params.k == 0 {
        return Err(ClusterError::ZeroK);
    }
    let dim = check_dims(points)?;
    let distinct = distinct_count(points);
    if params.k > distinct {
        return Err(ClusterError::TooFewDistinct {
            k: params.k,
            distinct,
        });
    }
    let mut best: Option<LloydRun> = None;
    for restart in 0..params.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(restart as u64);
        let init = kmeans_plus_plus(points, params.k, &mut rng);
        let run = lloyd(points, init, params.k, params.max_iter, params.tol, mode);
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");
    Ok(ClusterModel {
        k: params.k,
        seed: params.seed,
        dim,
        centroids: run.centroids,
        assignments: run.assignments,
        sse: run.sse,
    })
}

/// Mean silhouette with Euclidean distance. Points in singleton clusters
/// score 0, and so does a one-cluster partition.
pub fn silhouette(points: &[Vec<f64>], assignments: &[usize], k: usize, mode: ExecMode) -> f64 {
    let n = points.len();
    if k < 2 || n == 0 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    let scores = map_range(mode, n, |i| {
        let own = assignments[i];
        if sizes[own] <= 1 {
            return 0.0;
        }
        let mut sums = vec![0.0f64; k];
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += sq_dist(&points[i], &points[j]).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            return 0.0;
        }
        let m = a.max(b);
        if m == 0.0 {
            0.0
        } else {
            (b - a) / m
        }
    });
    scores.iter().sum::<f64>() / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub sse: f64,
    pub silhouette: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub best_k: usize,
    pub scores: Vec<KScore>,
}

/// Grid search over `k_range`: highest mean silhouette wins, ties to the smaller k.
pub fn select_k(
    points: &[Vec<f64>],
    k_range: &[usize],
    seed: u64,
    restarts: usize,
    mode: ExecMode,
) -> Result<KSelection, ClusterError> {
    if k_range.is_empty() {
        return Err(ClusterError::EmptyRange);
    }
    let mut scores = Vec::with_capacity(k_range.len());
    for &k in k_range {
        let params = KMeansParams {
            restarts,
            ..KMeansParams::new(k, seed)
        };
        let model = kmeans_fit(points, &params, mode)?;
        let s = silhouette(points, &model.assignments, k, mode);
        scores.push(KScore {
            k,
            sse: model.sse,
            silhouette: s,
        });
    }
    let best = scores
        .iter()
        .fold(&scores[0], |best, s| {
            if s.silhouette > best.silhouette || (s.silhouette == best.silhouette && s.k < best.k) {
                s
            } else {
                best
            }
        })
        .k;
    Ok(KSelection {
        best_k: best,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueCount {
    pub value: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZonePairCount {
    pub from_zone: String,
    pub to_zone: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub member_count: usize,
    pub top_source_ips: Vec<ValueCount>,
    pub top_destination_ips: Vec<ValueCount>,
    pub top_applications: Vec<ValueCount>,
    pub top_zone_pairs: Vec<ZonePairCount>,
}

pub const DEFAULT_SUMMARY_CAP: usize = 10;

fn top_values(counts: HashMap<String, usize>, cap: usize) -> Vec<ValueCount> {
    let mut v: Vec<ValueCount> = counts
        .into_iter()
        .map(|(value, count)| ValueCount { value, count })
        .collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.value.cmp(&b.value)));
    v.truncate(cap);
    v
}

pub fn summarize_cluster(
    cluster_id: usize,
    model: &ClusterModel,
    corpus: &LogCorpus,
    cap: usize,
) -> Result<ClusterSummary, ClusterError> {
    if cluster_id >= model.k {
        return Err(ClusterError::NoSuchCluster {
            id: cluster_id,
            k: model.k,
        });
    }
    let mut src = HashMap::new();
    let mut dst = HashMap::new();
    let mut apps = HashMap::new();
    let mut zones: HashMap<(String, String), usize> = HashMap::new();
    let mut members = 0;
    for (row, rec) in corpus.records.iter().enumerate() {
        if model.assignments.get(row) != Some(&cluster_id) {
            continue;
        }
        members += 1;
        *src.entry(rec.src_ip.to_string()).or_insert(0) += 1;
        *dst.entry(rec.dst_ip.to_string()).or_insert(0) += 1;
        if let Some(app) = &rec.application {
            *apps.entry(app.clone()).or_insert(0) += 1;
        }
        if let (Some(f), Some(t)) = (&rec.from_zone, &rec.to_zone) {
            *zones.entry((f.clone(), t.clone())).or_insert(0) += 1;
        }
    }
    let mut zone_pairs: Vec<ZonePairCount> = zones
        .into_iter()
        .map(|((from_zone, to_zone), count)| ZonePairCount {
            from_zone,
            to_zone,
            count,
        })
        .collect();
    zone_pairs.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| (&a.from_zone, &a.to_zone).cmp(&(&b.from_zone, &b.to_zone)))
    });
    zone_pairs.truncate(cap);
    Ok(ClusterSummary {
        cluster_id,
        member_count: members,
        top_source_ips: top_values(src, cap),
        top_destination_ips: top_values(dst, cap),
        top_applications: top_values(apps, cap),
        top_zone_pairs: zone_pairs,
    })
}

pub fn summarize_all(model: &ClusterModel, corpus: &LogCorpus, cap: usize) -> Vec<ClusterSummary> {
    (0..model.k)
        .map(|c| summarize_cluster(c, model, corpus, cap).expect("id < k"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub row_index: usize,
    pub x: f64,
    pub y: f64,
}

/// Projection onto the top two principal directions. Each direction is
/// signed so that its largest-magnitude coordinate is positive.
pub fn project_2d(points: &[Vec<f64>]) -> Result<Vec<ProjectedPoint>, ClusterError> {
    let n = points.len();
    if n < 2 {
        return Err(ClusterError::TooFewVectors { need: 2, got: n });
    }
    let dim = check_dims(points)?;
    let mut mean = vec![0.0f64; dim];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for p in &centered {
        for i in 0..dim {
            if p[i] == 0.0 {
                continue;
            }
            for j in i..dim {
                cov[(i, j)] += p[i] * p[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let axis = |rank: usize| -> Vec<f64> {
        let Some(&col) = order.get(rank) else {
            return vec![0.0; dim];
        };
        let v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        let lead = v.iter().enumerate().fold(
            0,
            |best, (i, x)| if x.abs() > v[best].abs() { i } else { best },
        );
        if v[lead] < 0.0 {
            v.iter().map(|x| -x).collect()
        } else {
            v
        }
    };
    let (ax, ay) = (axis(0), axis(1));
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    Ok(centered
        .iter()
        .enumerate()
        .map(|(row_index, p)| ProjectedPoint {
            row_index,
            x: dot(p, &ax),
            y: dot(p, &ay),
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct ClusterDocument {
    format: String,
    k: usize,
    seed: u64,
    dim: usize,
    sse: f64,
    centroids_file: String,
    assignments: Vec<usize>,
}

const CLUSTER_FORMAT: &str = "log2ns-clusters/1";
const CLUSTER_FILE: &str = "clusters.json";
const CENTROIDS_FILE: &str = "centroids.f32";

impl ClusterModel {
    /// Writes `clusters.json` and the little-endian f32 centroid matrix.
    pub fn save(&self, dir: &Path) -> Result<(), ClusterError> {
        fs::create_dir_all(dir)?;
        let doc = ClusterDocument {
            format: CLUSTER_FORMAT.into(),
            k: self.k,
            seed: self.seed,
            dim: self.dim,
            sse: self.sse,
            centroids_file: CENTROIDS_FILE.into(),
            assignments: self.assignments.clone(),
        };
        fs::write(
            dir.join(CLUSTER_FILE),
            serde_json::to_string_pretty(&doc).expect("document serializes"),
        )?;
        let flat: Vec<f32> = self.centroids.iter().map(|&x| x as f32).collect();
        fs::write(dir.join(CENTROIDS_FILE), binmat::encode_f32(&flat))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ClusterError> {
        let bad = |file: &str, reason: String| ClusterError::Format {
            file: file.into(),
            reason,
        };
        let doc: ClusterDocument =
            serde_json::from_str(&fs::read_to_string(dir.join(CLUSTER_FILE))?)
                .map_err(|e| bad(CLUSTER_FILE, e.to_string()))?;
        if doc.format != CLUSTER_FORMAT {
            return Err(bad(
                CLUSTER_FILE,
                format!("unsupported format {:?}", doc.format),
            ));
        }
        let centroids = binmat::decode_f32(&fs::read(dir.join(&doc.centroids_file))?)
            .filter(|v| v.len() == doc.k * doc.dim)
            .ok_or_else(|| {
                bad(
                    &doc.centroids_file,
                    format!("expected {}x{} values", doc.k, doc.dim),
                )
            })?;
        if doc.assignments.iter().any(|&a| a >= doc.k) {
            return Err(bad(CLUSTER_FILE, "assignment out of range".into()));
        }
        Ok(ClusterModel {
            k: doc.k,
            seed: doc.seed,
            dim: doc.dim,
            centroids: centroids.into_iter().map(f64::from).collect(),
            assignments: doc.assignments,
            sse: doc.sse,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Hyperparams, PairSchema, Vocabulary};
    use crate::ingest::{FlowRecord, TokenScheme};
    use rand_chacha::ChaCha8Rng;
    use std::net::Ipv4Addr;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect()
    }

    fn tiny_model() -> (LogCorpus, EmbeddingModel) {
        let mut a = FlowRecord::new(Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(8, 8, 8, 8));
        a.application = Some("dns".into());
        let b = FlowRecord::new(Ipv4Addr::new(10, 0, 0, 2), Ipv4Addr::new(8, 8, 4, 4));
        let corpus = LogCorpus::new(
            vec![Field::SrcIp, Field::DstIp, Field::Application],
            vec![a, b],
        );
        let scheme = TokenScheme::for_schema(&corpus.schema);
        let vocab = Vocabulary::build(&corpus, &scheme);
        let eta = vocab.len();
        let d = 32;
        let input: Vec<f32> = (0..eta * d).map(|i| (i as f32 * 0.37).sin()).collect();
        let model = EmbeddingModel::from_parts(
            vocab,
            Hyperparams {
                dim: d,
                ..Hyperparams::default()
            },
            PairSchema::flow_default(),
            input,
            vec![0.0; (eta - 1) * d],
        )
        .unwrap();
        (corpus, model)
    }

    #[test]
    fn concat_dimension_and_missing_fields() {
        let (corpus, model) = tiny_model();
        let cfg = VectorizeConfig {
            fields: vec![Field::SrcIp, Field::DstIp, Field::Application],
            mode: VectorizeMode::Concat,
        };
        let rv = vectorize_rows(&corpus, &model, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(rv.dim, 96);
        assert!(rv.rows.iter().all(|r| r.vector.len() == 96));
        assert_eq!(rv.missing, vec![(1, Field::Application)]);
        assert!(rv.rows[1].vector[64..].iter().all(|&x| x == 0.0));
        let par = vectorize_rows(&corpus, &model, &cfg, ExecMode::Parallel).unwrap();
        assert_eq!(par, rv);
    }

    #[test]
    fn degenerate_weights_pick_first_field() {
        let (corpus, model) = tiny_model();
        let cfg = VectorizeConfig {
            fields: vec![Field::SrcIp, Field::DstIp, Field::Application],
            mode: VectorizeMode::WeightedAvg {
                weights: vec![1.0, 0.0, 0.0],
            },
        };
        let rv = vectorize_rows(&corpus, &model, &cfg, ExecMode::Sequential).unwrap();
        let tok = model
            .vocab()
            .scheme()
            .token(&corpus.records[0], Field::SrcIp)
            .unwrap();
        let e = model.embedding(&tok).unwrap();
        for (x, y) in rv.rows[0].vector.iter().zip(e) {
            assert_eq!(*x, f64::from(*y));
        }
        let bad = VectorizeConfig {
            fields: cfg.fields.clone(),
            mode: VectorizeMode::WeightedAvg {
                weights: vec![0.0, 0.0, 0.0],
            },
        };
        assert!(vectorize_rows(&corpus, &model, &bad, ExecMode::Sequential).is_err());
    }

    #[test]
    fn unknown_token_is_a_mismatch() {
        let (mut corpus, model) = tiny_model();
        corpus.records[0].dst_ip = Ipv4Addr::new(1, 2, 3, 4);
        let cfg = VectorizeConfig {
            fields: vec![Field::DstIp],
            mode: VectorizeMode::Concat,
        };
        assert!(matches!(
            vectorize_rows(&corpus, &model, &cfg, ExecMode::Sequential),
            Err(ClusterError::Mismatch(_))
        ));
    }

    #[test]
    fn k_equal_n_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 6, 3);
        let m = kmeans_fit(&pts, &KMeansParams::new(6, 4), ExecMode::Sequential).unwrap();
        assert_eq!(m.sse, 0.0);
        let mut ids = m.assignments.clone();
        ids.sort_unstable();
        assert_eq!(ids, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn too_many_clusters() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert!(matches!(
            kmeans_fit(&pts, &KMeansParams::new(3, 0), ExecMode::Sequential),
            Err(ClusterError::TooFewDistinct { k: 3, distinct: 2 })
        ));
        assert!(matches!(
            kmeans_fit(&pts, &KMeansParams::new(0, 0), ExecMode::Sequential),
            Err(ClusterError::ZeroK)
        ));
    }

    #[test]
    fn lloyd_invariants_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let n = rng.random_range(5..40);
            let k = rng.random_range(1..5);
            let pts = random_points(&mut rng, n, 3);
            let m = kmeans_fit(&pts, &KMeansParams::new(k, 5), ExecMode::Sequential).unwrap();
            let mut sse = 0.0;
            for (p, &a) in pts.iter().zip(&m.assignments) {
                let own = sq_dist(p, m.centroid(a));
                for c in 0..k {
                    let other = sq_dist(p, m.centroid(c));
                    assert!(other >= own);
                    if other == own {
                        assert!(a <= c, "ties go to the lowest index");
                    }
                }
                sse += own;
            }
            assert!((sse - m.sse).abs() <= 1e-9 * sse.max(1.0));
            let again = kmeans_fit(&pts, &KMeansParams::new(k, 5), ExecMode::Parallel).unwrap();
            assert_eq!(again, m);
        }
    }

    #[test]
    fn empty_cluster_reseeding_keeps_sse_monotone() {
        // two coincident initial centroids force an empty cluster
        let pts = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1], vec![20.0]];
        let run = lloyd(
            &pts,
            vec![0.0, 0.0, 10.0],
            3,
            100,
            1e-9,
            ExecMode::Sequential,
        );
        assert!(run.sse_history.windows(2).all(|w| w[1] <= w[0]));
        let mut used = run.assignments.clone();
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), 3);
    }

    #[test]
    fn select_k_finds_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        for center in [-10.0, 10.0] {
            for _ in 0..20 {
                pts.push(vec![
                    center + rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]);
            }
        }
        let sel = select_k(&pts, &[2, 3, 4, 5], 1, 5, ExecMode::Sequential).unwrap();
        assert_eq!(sel.best_k, 2);
        assert_eq!(sel.scores.len(), 4);
        let one = select_k(&pts, &[1], 1, 5, ExecMode::Sequential).unwrap();
        assert_eq!(one.best_k, 1);
        assert_eq!(one.scores[0].silhouette, 0.0);
        assert!(select_k(&pts, &[], 1, 5, ExecMode::Sequential).is_err());
    }

    fn row(src: [u8; 4], dst: [u8; 4], app: &str) -> FlowRecord {
        let mut r = FlowRecord::new(Ipv4Addr::from(src), Ipv4Addr::from(dst));
        r.application = Some(app.into());
        r.from_zone = Some("Trust".into());
        r.to_zone = Some("Untrust".into());
        r
    }

    #[test]
    fn dns_and_unintended_region_digests() {
        let records = vec![
            row([192, 168, 1, 254], [8, 8, 8, 8], "dns"),
            row([10, 11, 29, 222], [4, 4, 4, 4], "dns"),
            row([10, 11, 29, 6], [8, 8, 8, 8], "dns"),
            row([10, 11, 29, 5], [42, 62, 94, 2], "not-applicable"),
            row([10, 11, 29, 5], [42, 62, 94, 7], "not-applicable"),
        ];
        let corpus = LogCorpus::new(
            vec![
                Field::SrcIp,
                Field::DstIp,
                Field::FromZone,
                Field::ToZone,
                Field::Application,
            ],
            records,
        );
        let model = ClusterModel {
            k: 3,
            seed: 0,
            dim: 1,
            centroids: vec![0.0, 1.0, 2.0],
            assignments: vec![0, 0, 0, 1, 1],
            sse: 0.0,
        };
        let dns = summarize_cluster(0, &model, &corpus, DEFAULT_SUMMARY_CAP).unwrap();
        assert_eq!(dns.member_count, 3);
        let dsts: Vec<&str> = dns
            .top_destination_ips
            .iter()
            .map(|v| v.value.as_str())
            .collect();
        assert_eq!(dsts, ["8.8.8.8", "4.4.4.4"]);
        assert_eq!(
            dns.top_applications[0],
            ValueCount {
                value: "dns".into(),
                count: 3
            }
        );
        let srcs: Vec<&str> = dns
            .top_source_ips
            .iter()
            .map(|v| v.value.as_str())
            .collect();
        assert_eq!(srcs, ["10.11.29.222", "10.11.29.6", "192.168.1.254"]);

        let region = summarize_cluster(1, &model, &corpus, DEFAULT_SUMMARY_CAP).unwrap();
        assert_eq!(region.top_applications[0].value, "not-applicable");
        assert_eq!(
            region.top_source_ips[0],
            ValueCount {
                value: "10.11.29.5".into(),
                count: 2
            }
        );
        assert_eq!(region.top_zone_pairs[0].count, 2);

        let empty = summarize_cluster(2, &model, &corpus, DEFAULT_SUMMARY_CAP).unwrap();
        assert_eq!(empty.member_count, 0);
        assert!(empty.top_source_ips.is_empty() && empty.top_applications.is_empty());
        assert!(summarize_cluster(3, &model, &corpus, 10).is_err());

        let total: usize = summarize_all(&model, &corpus, 10)
            .iter()
            .map(|s| s.member_count)
            .sum();
        assert_eq!(total, corpus.row_count());
    }

    fn pairwise(points: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                out.push(sq_dist(&points[i], &points[j]).sqrt());
            }
        }
        out
    }

    #[test]
    fn projection_of_planar_data_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let flat = random_points(&mut rng, 12, 2);
        let proj = project_2d(&flat).unwrap();
        let back: Vec<Vec<f64>> = proj.iter().map(|p| vec![p.x, p.y]).collect();
        for (a, b) in pairwise(&flat).iter().zip(pairwise(&back)) {
            assert!((a - b).abs() < 1e-9);
        }
        // any affine plane in 3-D projects without distortion
        let lifted: Vec<Vec<f64>> = flat
            .iter()
            .map(|p| {
                let (x, y) = (p[0], p[1]);
                vec![0.6 * x + 1.0, 0.4 * x + 0.6 * y, 0.6 * y - 0.4 * x - 2.0]
            })
            .collect();
        let proj3 = project_2d(&lifted).unwrap();
        let back3: Vec<Vec<f64>> = proj3.iter().map(|p| vec![p.x, p.y]).collect();
        for (a, b) in pairwise(&lifted).iter().zip(pairwise(&back3)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn projection_edge_cases() {
        let same = vec![vec![1.0, 2.0, 3.0]; 4];
        assert!(project_2d(&same)
            .unwrap()
            .iter()
            .all(|p| p.x == 0.0 && p.y == 0.0));
        assert!(project_2d(&same[..1]).is_err());
    }

    #[test]
    fn persisted_model_round_trips() {
        let m = ClusterModel {
            k: 2,
            seed: 9,
            dim: 2,
            centroids: vec![0.5, -1.0, 2.25, 3.0],
            assignments: vec![0, 1, 1],
            sse: 1.5,
        };
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        assert_eq!(ClusterModel::load(dir.path()).unwrap(), m);
    }
}
