//! Seven-stage content-hashed pipeline over a [`ProjectStore`].
//!
//! Stages run in the order ingest, vocab, pairs, train, vectorize, cluster,
//! compile. Each stage key hashes the stage name, its parameters and the
//! hashes of its inputs; a stage whose key matches the stored artifact and
//! whose artifact still verifies is skipped.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binmat;
use crate::cluster::{
    kmeans_fit, project_2d, select_k, summarize_all, ClusterError, ClusterModel, ClusterSummary,
    KMeansParams, KSelection, ProjectedPoint, VectorizeConfig, VectorizeMode, DEFAULT_SUMMARY_CAP,
};
use crate::embedding::{
    generate_pairs, pairs_from_bytes, pairs_to_bytes, train_skipgram_hs, ContextTargetPair,
    EmbeddingError, EmbeddingModel, HuffmanTree, Hyperparams, PairSchema, Vocabulary,
};
use crate::formal::{compile_rules, parse_config, ConfigError, FirewallModel, RuleView};
use crate::ingest::{parse_flow_log_with, Field, IngestError, LogCorpus, LogFormat, TokenScheme};
use crate::parallel::ExecMode;
use crate::query::Artifacts;
use crate::store::{hash_bytes, ProjectStore, StoreError};
use crate::synth::{synthesize, SynthError, SynthSpec};

pub const LOGS: &str = "logs";
pub const VOCAB: &str = "vocab";
pub const PAIRS: &str = "pairs";
pub const EMBEDDING: &str = "embedding";
pub const VECTORS: &str = "vectors";
pub const CLUSTERS: &str = "clusters";
pub const FIREWALL: &str = "firewall";

/// Stage names in execution order; each stage writes the artifact of the same name.
pub const STAGES: [&str; 7] = [LOGS, VOCAB, PAIRS, EMBEDDING, VECTORS, CLUSTERS, FIREWALL];

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: StageError,
    },
    #[error("pipeline config: {0}")]
    Config(String),
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn at(stage: &'static str) -> impl Fn(StageError) -> PipelineError {
    move |source| PipelineError::Stage { stage, source }
}

fn json_err(file: &str, e: serde_json::Error) -> StageError {
    StageError::Invalid(format!("{file}: {e}"))
}

/// Where the flow logs come from: a file, or rows synthesized from the
/// firewall config.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSource {
    pub path: Option<PathBuf>,
    /// Defaults from the extension: `.jsonl` is JSONL, anything else CSV.
    pub format: Option<LogFormat>,
    pub synth: Option<SynthSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Lock-free parallel SGD; faster but not bit-reproducible.
    pub parallel: bool,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let h = Hyperparams::default();
        TrainSpec {
            dim: h.dim,
            epochs: h.epochs,
            learning_rate: h.learning_rate,
            seed: h.seed,
            parallel: false,
        }
    }
}

impl TrainSpec {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            dim: self.dim,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSpec {
    pub k: Option<usize>,
    /// Inclusive `[lo, hi]` searched by silhouette when `k` is absent.
    pub k_range: Option<[usize; 2]>,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub summary_cap: usize,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        let p = KMeansParams::new(1, 1);
        ClusterSpec {
            k: None,
            k_range: None,
            seed: p.seed,
            restarts: p.restarts,
            max_iter: p.max_iter,
            tol: p.tol,
            summary_cap: DEFAULT_SUMMARY_CAP,
        }
    }
}

impl ClusterSpec {
    pub fn with_k(k: usize) -> Self {
        ClusterSpec {
            k: Some(k),
            ..ClusterSpec::default()
        }
    }

    fn validate(&self) -> Result<(), String> {
        match (self.k, self.k_range) {
            (Some(_), Some(_)) => Err("give either cluster.k or cluster.k_range, not both".into()),
            (None, None) => Err("cluster.k or cluster.k_range is required".into()),
            (None, Some([lo, hi])) if lo == 0 || lo > hi => Err(format!(
                "cluster.k_range [{lo}, {hi}] is empty or starts at 0"
            )),
            _ => Ok(()),
        }
    }
}

/// The pipeline document. Relative paths resolve against the document's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Firewall config JSON.
    pub firewall: PathBuf,
    pub logs: LogSource,
    #[serde(default)]
    pub tokens: Option<TokenScheme>,
    #[serde(default)]
    pub pairs: Option<PairSchema>,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub vectorize: Option<VectorizeConfig>,
    pub cluster: ClusterSpec,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.firewall);
        if let Some(p) = cfg.logs.path.as_mut() {
            resolve(p);
        }
        match (&cfg.logs.path, &cfg.logs.synth) {
            (Some(_), Some(_)) => {
                return Err(PipelineError::Config(
                    "logs.path and logs.synth are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(PipelineError::Config(
                    "logs.path or logs.synth is required".into(),
                ))
            }
            _ => {}
        }
        cfg.cluster.validate().map_err(PipelineError::Config)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRun {
    pub name: String,
    pub status: StageStatus,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<StageRun>,
    /// Digest over the manifest's current `(name, hash)` pairs.
    pub digest: String,
}

/// Runs `fill` unless the stored artifact was produced from the same key.
fn run_stage<F>(
    store: &mut ProjectStore,
    name: &'static str,
    params: serde_json::Value,
    inputs: &[&str],
    external: &[&[u8]],
    fill: F,
) -> Result<StageRun, PipelineError>
where
    F: FnOnce(&Path) -> Result<(), StageError>,
{
    let params_text = params.to_string();
    let mut parts: Vec<Vec<u8>> = vec![name.as_bytes().to_vec(), params_text.into_bytes()];
    for input in inputs {
        let e = store.entry(input).map_err(|_| PipelineError::Stage {
            stage: name,
            source: StageError::Invalid(format!(
                "needs the {input} artifact; run that stage first"
            )),
        })?;
        parts.push(input.as_bytes().to_vec());
        parts.push(e.hash.clone().into_bytes());
    }
    for ext in external {
        parts.push(hash_bytes(&[ext]).into_bytes());
    }
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    let key = hash_bytes(&refs);
    if let Some(e) = store.up_to_date(name, &key) {
        return Ok(StageRun {
            name: name.into(),
            status: StageStatus::UpToDate,
            hash: e.hash.clone(),
        });
    }
    let entry = store
        .put::<_, StageError>(name, name, params, &key, fill)
        .map_err(at(name))?;
    Ok(StageRun {
        name: name.into(),
        status: StageStatus::Ran,
        hash: entry.hash,
    })
}

fn write_json<T: Serialize>(dir: &Path, file: &str, value: &T) -> Result<(), StageError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| json_err(file, e))?;
    fs::write(dir.join(file), text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, file: &str) -> Result<T, StageError> {
    serde_json::from_str(&fs::read_to_string(dir.join(file))?).map_err(|e| json_err(file, e))
}

#[derive(Serialize, Deserialize)]
struct IngestSummary {
    schema: Vec<Field>,
    input_rows: usize,
    accepted: usize,
    rejected: usize,
}

fn write_corpus(
    dir: &Path,
    corpus: &LogCorpus,
    input_rows: usize,
    rejects: &str,
) -> Result<(), StageError> {
    fs::write(dir.join("corpus.jsonl"), corpus.to_jsonl())?;
    fs::write(dir.join("rejects.jsonl"), rejects)?;
    write_json(
        dir,
        "ingest.json",
        &IngestSummary {
            schema: corpus.schema.clone(),
            input_rows,
            accepted: corpus.row_count(),
            rejected: input_rows - corpus.row_count(),
        },
    )
}

/// Parses a flow-log file into the `logs` artifact.
pub fn stage_ingest_file(
    store: &mut ProjectStore,
    source: &[u8],
    format: LogFormat,
    mode: ExecMode,
) -> Result<StageRun, PipelineError> {
    let params = serde_json::json!({ "source": "file", "format": format });
    run_stage(store, LOGS, params, &[], &[source], |dir| {
        let parsed = parse_flow_log_with(source, format, mode)?;
        if parsed.corpus.row_count() == 0 {
            return Err(StageError::Invalid(format!(
                "no valid rows among {} input rows",
                parsed.input_rows
            )));
        }
        write_corpus(
            dir,
            &parsed.corpus,
            parsed.input_rows,
            &parsed.rejects_jsonl(),
        )
    })
}

/// Synthesizes the `logs` artifact from a firewall config.
pub fn stage_ingest_synth(
    store: &mut ProjectStore,
    firewall: &[u8],
    spec: &SynthSpec,
) -> Result<StageRun, PipelineError> {
    let params = serde_json::json!({ "source": "synth", "spec": spec });
    run_stage(store, LOGS, params, &[], &[firewall], |dir| {
        let model = compile_rules(&parse_config(firewall)?);
        let out = synthesize(&model, spec)?;
        write_corpus(dir, &out.corpus, out.corpus.row_count(), "")?;
        let mut labels = out.labels.join("\n");
        labels.push('\n');
        fs::write(dir.join("labels.txt"), labels)?;
        Ok(())
    })
}

/// Builds the `vocab` artifact. `None` tokenizes every tokenizable field.
pub fn stage_vocab(
    store: &mut ProjectStore,
    scheme: Option<&TokenScheme>,
) -> Result<StageRun, PipelineError> {
    let corpus = load_corpus(store).map_err(at(VOCAB))?;
    let scheme = scheme
        .cloned()
        .unwrap_or_else(|| TokenScheme::for_schema(&corpus.schema));
    let params = serde_json::json!({ "scheme": scheme });
    run_stage(store, VOCAB, params, &[LOGS], &[], |dir| {
        let vocab = Vocabulary::build(&corpus, &scheme);
        if vocab.len() < 2 {
            return Err(EmbeddingError::VocabularyTooSmall(vocab.len()).into());
        }
        fs::write(dir.join("vocab.tsv"), vocab.to_tsv())?;
        write_json(dir, "scheme.json", &scheme)
    })
}

/// Builds the `pairs` artifact. `None` uses the default flow schema.
pub fn stage_pairs(
    store: &mut ProjectStore,
    schema: Option<&PairSchema>,
) -> Result<StageRun, PipelineError> {
    let corpus = load_corpus(store).map_err(at(PAIRS))?;
    let vocab = load_vocab(store).map_err(at(PAIRS))?;
    let schema = schema.cloned().unwrap_or_else(PairSchema::flow_default);
    let params = serde_json::json!({ "schema": schema });
    run_stage(store, PAIRS, params, &[LOGS, VOCAB], &[], |dir| {
        let pairs = generate_pairs(&corpus, &schema, &vocab)?;
        if pairs.is_empty() {
            return Err(EmbeddingError::NoPairs.into());
        }
        fs::write(dir.join("pairs.bin"), pairs_to_bytes(&pairs))?;
        write_json(dir, "schema.json", &schema)
    })
}

/// Trains the `embedding` artifact.
pub fn stage_train(store: &mut ProjectStore, spec: &TrainSpec) -> Result<StageRun, PipelineError> {
    let vocab = load_vocab(store).map_err(at(EMBEDDING))?;
    let (pairs, schema) = load_pairs(store).map_err(at(EMBEDDING))?;
    let params = serde_json::json!({ "train": spec });
    run_stage(store, EMBEDDING, params, &[VOCAB, PAIRS], &[], |dir| {
        let tree = HuffmanTree::build(vocab.frequencies())?;
        let mode = if spec.parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        };
        let mut model = train_skipgram_hs(&pairs, &vocab, &tree, &spec.hyperparams(), mode)?;
        model.pair_schema = schema;
        if !model.all_finite() {
            return Err(StageError::Invalid(
                "training diverged to non-finite weights".into(),
            ));
        }
        model.save(dir)?;
        Ok(())
    })
}

/// The pair-schema fields tokenized by the model, in first-appearance order.
pub fn default_vectorize(model: &EmbeddingModel) -> VectorizeConfig {
    let mut fields = Vec::new();
    for &(c, t) in &model.pair_schema.entries {
        for f in [c, t] {
            if !fields.contains(&f) && model.vocab().scheme().fields.contains(&f) {
                fields.push(f);
            }
        }
    }
    VectorizeConfig {
        fields,
        mode: VectorizeMode::Concat,
    }
}

#[derive(Serialize, Deserialize)]
struct VectorsMeta {
    dim: usize,
    rows: usize,
    config: VectorizeConfig,
    missing: Vec<(usize, Field)>,
}

/// Builds the per-row `vectors` artifact.
pub fn stage_vectorize(
    store: &mut ProjectStore,
    config: Option<&VectorizeConfig>,
    mode: ExecMode,
) -> Result<StageRun, PipelineError> {
    let corpus = load_corpus(store).map_err(at(VECTORS))?;
    let model = load_embedding(store).map_err(at(VECTORS))?;
    let config = config.cloned().unwrap_or_else(|| default_vectorize(&model));
    let params = serde_json::json!({ "vectorize": config });
    run_stage(store, VECTORS, params, &[LOGS, EMBEDDING], &[], |dir| {
        if config.fields.is_empty() {
            return Err(StageError::Invalid("no fields to vectorize".into()));
        }
        let rows = crate::cluster::vectorize_rows(&corpus, &model, &config, mode)?;
        fs::write(dir.join("vectors.f32"), rows.to_bytes())?;
        write_json(
            dir,
            "vectors.json",
            &VectorsMeta {
                dim: rows.dim,
                rows: rows.rows.len(),
                config: config.clone(),
                missing: rows.missing,
            },
        )
    })
}

/// Fits the `clusters` artifact, with summaries, a 2-D projection and, for
/// a k range, the silhouette table.
pub fn stage_cluster(
    store: &mut ProjectStore,
    spec: &ClusterSpec,
    mode: ExecMode,
) -> Result<StageRun, PipelineError> {
    spec.validate()
        .map_err(|m| at(CLUSTERS)(StageError::Invalid(m)))?;
    let corpus = load_corpus(store).map_err(at(CLUSTERS))?;
    let points = load_vectors(store).map_err(at(CLUSTERS))?;
    let params = serde_json::json!({ "cluster": spec });
    run_stage(store, CLUSTERS, params, &[LOGS, VECTORS], &[], |dir| {
        let mut selection: Option<KSelection> = None;
        let k = match (spec.k, spec.k_range) {
            (Some(k), _) => k,
            (None, Some([lo, hi])) => {
                let ks: Vec<usize> = (lo..=hi).collect();
                let s = select_k(&points, &ks, spec.seed, spec.restarts, mode)?;
                let best = s.best_k;
                selection = Some(s);
                best
            }
            (None, None) => unreachable!("validated"),
        };
        let params = KMeansParams {
            k,
            seed: spec.seed,
            max_iter: spec.max_iter,
            tol: spec.tol,
            restarts: spec.restarts,
        };
        let model = kmeans_fit(&points, &params, mode)?;
        model.save(dir)?;
        write_json(
            dir,
            "summaries.json",
            &summarize_all(&model, &corpus, spec.summary_cap),
        )?;
        write_json(dir, "projection.json", &project_2d(&points)?)?;
        if let Some(s) = selection {
            write_json(dir, "selection.json", &s)?;
        }
        Ok(())
    })
}

/// Validates and compiles a firewall config into the `firewall` artifact.
pub fn stage_compile(store: &mut ProjectStore, firewall: &[u8]) -> Result<StageRun, PipelineError> {
    run_stage(
        store,
        FIREWALL,
        serde_json::json!({}),
        &[],
        &[firewall],
        |dir| {
            let model = compile_rules(&parse_config(firewall)?);
            fs::write(dir.join("firewall.json"), firewall)?;
            write_json(dir, "rules.json", &model.rule_views())
        },
    )
}

fn read_input(stage: &'static str, path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|e| {
        at(stage)(StageError::Invalid(format!(
            "cannot read {}: {e}",
            path.display()
        )))
    })
}

pub fn log_format_for(path: &Path) -> LogFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => LogFormat::Jsonl,
        _ => LogFormat::CsvWithHeader,
    }
}

/// Runs every stage in order under the store lock.
pub fn run_pipeline(
    store: &mut ProjectStore,
    config: &PipelineConfig,
    mode: ExecMode,
) -> Result<PipelineReport, PipelineError> {
    let _lock = store.lock()?;
    let firewall = read_input(FIREWALL, &config.firewall)?;
    let mut stages = Vec::with_capacity(STAGES.len());
    stages.push(match (&config.logs.path, &config.logs.synth) {
        (Some(path), _) => {
            let bytes = read_input(LOGS, path)?;
            let format = config.logs.format.unwrap_or_else(|| log_format_for(path));
            stage_ingest_file(store, &bytes, format, mode)?
        }
        (None, Some(spec)) => stage_ingest_synth(store, &firewall, spec)?,
        (None, None) => {
            return Err(PipelineError::Config(
                "logs.path or logs.synth is required".into(),
            ))
        }
    });
    stages.push(stage_vocab(store, config.tokens.as_ref())?);
    stages.push(stage_pairs(store, config.pairs.as_ref())?);
    stages.push(stage_train(store, &config.train)?);
    stages.push(stage_vectorize(store, config.vectorize.as_ref(), mode)?);
    stages.push(stage_cluster(store, &config.cluster, mode)?);
    stages.push(stage_compile(store, &firewall)?);
    Ok(PipelineReport {
        stages,
        digest: store.manifest().content_digest(),
    })
}

fn artifact_dir(store: &ProjectStore, name: &str) -> Result<PathBuf, StageError> {
    store.verify(name)?;
    Ok(store.path_of(name)?)
}

pub fn load_corpus(store: &ProjectStore) -> Result<LogCorpus, StageError> {
    let dir = artifact_dir(store, LOGS)?;
    let summary: IngestSummary = read_json(&dir, "ingest.json")?;
    let parsed = parse_flow_log_with(
        &fs::read(dir.join("corpus.jsonl"))?,
        LogFormat::Jsonl,
        ExecMode::default(),
    )?;
    if !parsed.rejects.is_empty() || parsed.corpus.row_count() != summary.accepted {
        return Err(StageError::Invalid(
            "stored corpus does not reparse cleanly".into(),
        ));
    }
    Ok(LogCorpus::new(summary.schema, parsed.corpus.records))
}

pub fn load_vocab(store: &ProjectStore) -> Result<Vocabulary, StageError> {
    let dir = artifact_dir(store, VOCAB)?;
    let scheme: TokenScheme = read_json(&dir, "scheme.json")?;
    Ok(Vocabulary::from_tsv(
        &fs::read_to_string(dir.join("vocab.tsv"))?,
        scheme,
    )?)
}

pub fn load_pairs(
    store: &ProjectStore,
) -> Result<(Vec<ContextTargetPair>, PairSchema), StageError> {
    let dir = artifact_dir(store, PAIRS)?;
    let pairs = pairs_from_bytes(&fs::read(dir.join("pairs.bin"))?)?;
    Ok((pairs, read_json(&dir, "schema.json")?))
}

pub fn load_embedding(store: &ProjectStore) -> Result<EmbeddingModel, StageError> {
    Ok(EmbeddingModel::load(&artifact_dir(store, EMBEDDING)?)?)
}

pub fn load_vectors(store: &ProjectStore) -> Result<Vec<Vec<f64>>, StageError> {
    let dir = artifact_dir(store, VECTORS)?;
    let meta: VectorsMeta = read_json(&dir, "vectors.json")?;
    let flat = binmat::decode_f32(&fs::read(dir.join("vectors.f32"))?)
        .filter(|v| v.len() == meta.dim * meta.rows && meta.dim > 0)
        .ok_or_else(|| StageError::Invalid("vectors.f32 does not match vectors.json".into()))?;
    Ok(flat
        .chunks(meta.dim)
        .map(|c| c.iter().map(|&x| f64::from(x)).collect())
        .collect())
}

pub fn load_firewall(store: &ProjectStore) -> Result<FirewallModel, StageError> {
    let dir = artifact_dir(store, FIREWALL)?;
    Ok(compile_rules(&parse_config(&fs::read(
        dir.join("firewall.json"),
    )?)?))
}

/// Cluster model plus its derived documents.
#[derive(Debug, Clone)]
pub struct ClusterArtifact {
    pub model: ClusterModel,
    pub summaries: Vec<ClusterSummary>,
    pub projection: Vec<ProjectedPoint>,
    pub selection: Option<KSelection>,
}

pub fn load_clusters(store: &ProjectStore) -> Result<ClusterArtifact, StageError> {
    let dir = artifact_dir(store, CLUSTERS)?;
    let selection = if dir.join("selection.json").exists() {
        Some(read_json(&dir, "selection.json")?)
    } else {
        None
    };
    Ok(ClusterArtifact {
        model: ClusterModel::load(&dir)?,
        summaries: read_json(&dir, "summaries.json")?,
        projection: read_json(&dir, "projection.json")?,
        selection,
    })
}

/// Read-only view of the artifacts a store holds.
#[derive(Debug, Default)]
pub struct Project {
    pub corpus: Option<LogCorpus>,
    pub embedding: Option<EmbeddingModel>,
    pub clusters: Option<ClusterArtifact>,
    pub firewall: Option<FirewallModel>,
    pub rules: Option<Vec<RuleView>>,
}

/// Artifacts the HTTP service needs.
pub const SERVE_REQUIRES: [&str; 4] = [LOGS, EMBEDDING, CLUSTERS, FIREWALL];

impl Project {
    /// Loads whichever of the queryable artifacts exist; `required` names
    /// must all be present or the error lists the missing ones.
    pub fn load(store: &ProjectStore, required: &[&str]) -> Result<Self, PipelineError> {
        let missing: Vec<String> = required
            .iter()
            .filter(|n| store.entry(n).is_err())
            .map(|n| n.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(PipelineError::MissingArtifacts(missing));
        }
        let has = |n: &str| store.entry(n).is_ok();
        let mut p = Project::default();
        if has(LOGS) {
            p.corpus = Some(load_corpus(store).map_err(at(LOGS))?);
        }
        if has(EMBEDDING) {
            p.embedding = Some(load_embedding(store).map_err(at(EMBEDDING))?);
        }
        if has(CLUSTERS) {
            p.clusters = Some(load_clusters(store).map_err(at(CLUSTERS))?);
        }
        if has(FIREWALL) {
            let fw = load_firewall(store).map_err(at(FIREWALL))?;
            p.rules = Some(fw.rule_views());
            p.firewall = Some(fw);
        }
        Ok(p)
    }

    pub fn artifacts(&self) -> Artifacts<'_> {
        Artifacts {
            corpus: self.corpus.as_ref(),
            embedding: self.embedding.as_ref(),
            clusters: self.clusters.as_ref().map(|c| &c.model),
            firewall: self.firewall.as_ref(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIREWALL_JSON: &str = include_str!("../../../fixtures/firewall.json");

    const CSV: &str = "src_ip,dst_ip,protocol,dst_port,from_zone,to_zone,application,dst_region\n\
        10.11.29.5,4.4.4.4,UDP,53,Trust,Untrust,dns,US\n\
        10.11.29.6,8.8.8.8,UDP,53,Trust,Untrust,dns,US\n\
        10.11.29.5,42.62.94.2,TCP,443,Trust,Untrust,ssl,CN\n\
        10.11.29.6,42.62.94.7,TCP,443,Trust,Untrust,ssl,CN\n\
        192.168.1.254,172.16.10.4,TCP,80,Trust,Internal,web-browsing,LOCAL\n\
        192.168.1.254,172.16.10.5,TCP,80,Trust,Internal,web-browsing,LOCAL\n\
        not-an-ip,1.2.3.4,TCP,80,Trust,Internal,web-browsing,LOCAL\n";

    fn setup() -> (tempfile::TempDir, PipelineConfig) {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("flows.csv"), CSV).unwrap();
        fs::write(dir.path().join("firewall.json"), FIREWALL_JSON).unwrap();
        let toml = r#"
            firewall = "firewall.json"
            [logs]
            path = "flows.csv"
            [train]
            dim = 4
            epochs = 3
            [cluster]
            k = 2
            restarts = 3
        "#;
        let cfg = PipelineConfig::from_toml(toml, dir.path()).unwrap();
        (dir, cfg)
    }

    fn statuses(r: &PipelineReport) -> Vec<StageStatus> {
        r.stages.iter().map(|s| s.status).collect()
    }

    #[test]
    fn full_run_then_skip_then_compile_only() {
        let (dir, cfg) = setup();
        let mut store = ProjectStore::open(dir.path().join("store")).unwrap();
        let first = run_pipeline(&mut store, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(first.stages.len(), 7);
        assert!(statuses(&first).iter().all(|&s| s == StageStatus::Ran));
        assert_eq!(store.manifest().artifacts.len(), 7);

        let again = run_pipeline(&mut store, &cfg, ExecMode::Sequential).unwrap();
        assert!(statuses(&again).iter().all(|&s| s == StageStatus::UpToDate));
        assert_eq!(again.digest, first.digest);

        let edited = FIREWALL_JSON.replacen("\"BypassFW\"", "\"BypassFirewall\"", 1);
        assert_ne!(edited, FIREWALL_JSON);
        fs::write(&cfg.firewall, edited).unwrap();
        let third = run_pipeline(&mut store, &cfg, ExecMode::Sequential).unwrap();
        let ran: Vec<&str> = third
            .stages
            .iter()
            .filter(|s| s.status == StageStatus::Ran)
            .map(|s| s.name.as_str())
            .collect();
        assert_eq!(ran, [FIREWALL]);
    }

    #[test]
    fn project_loads_every_artifact() {
        let (dir, cfg) = setup();
        let mut store = ProjectStore::open(dir.path().join("store")).unwrap();
        run_pipeline(&mut store, &cfg, ExecMode::Parallel).unwrap();
        let p = Project::load(&store, &SERVE_REQUIRES).unwrap();
        assert_eq!(p.corpus.as_ref().unwrap().row_count(), 6);
        let c = p.clusters.as_ref().unwrap();
        assert_eq!(c.summaries.len(), 2);
        assert_eq!(c.projection.len(), 6);
        assert_eq!(c.model.assignments.len(), 6);
        assert_eq!(p.embedding.as_ref().unwrap().dim(), 4);
        assert_eq!(p.rules.as_ref().unwrap().len(), 5);
        let logs = store.path_of(LOGS).unwrap();
        assert_eq!(
            fs::read_to_string(logs.join("rejects.jsonl"))
                .unwrap()
                .lines()
                .count(),
            1
        );
    }

    #[test]
    fn missing_artifacts_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ProjectStore::open(dir.path()).unwrap();
        stage_compile(&mut store, FIREWALL_JSON.as_bytes()).unwrap();
        let err = Project::load(&store, &SERVE_REQUIRES).unwrap_err();
        match err {
            PipelineError::MissingArtifacts(names) => {
                assert_eq!(names, [LOGS, EMBEDDING, CLUSTERS]);
            }
            other => panic!("unexpected {other}"),
        }
        let p = Project::load(&store, &[]).unwrap();
        assert!(p.firewall.is_some() && p.corpus.is_none());
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let (dir, mut cfg) = setup();
        let mut store = ProjectStore::open(dir.path().join("store")).unwrap();
        cfg.train.dim = 0;
        let err = run_pipeline(&mut store, &cfg, ExecMode::Sequential).unwrap_err();
        assert!(
            matches!(
                err,
                PipelineError::Stage {
                    stage: EMBEDDING,
                    ..
                }
            ),
            "{err}"
        );
        assert!(store.entry(PAIRS).is_ok(), "earlier artifacts retained");
        assert!(store.lock().is_ok(), "lock released on error");

        let err = stage_vectorize(
            &mut ProjectStore::open(dir.path().join("empty")).unwrap(),
            None,
            ExecMode::Sequential,
        )
        .unwrap_err();
        assert!(err.to_string().contains("stage vectors"), "{err}");
    }

    #[test]
    fn config_validation() {
        let base = Path::new("/x");
        let bad = |t: &str| PipelineConfig::from_toml(t, base).unwrap_err().to_string();
        assert!(bad("firewall = \"f\"\n[logs]\n[cluster]\nk = 2").contains("logs.path"));
        assert!(bad("firewall = \"f\"\n[logs]\npath = \"a\"\n[cluster]\n").contains("cluster.k"));
        assert!(
            bad("firewall = \"f\"\n[logs]\npath = \"a\"\n[cluster]\nk = 2\nk_range = [2, 3]")
                .contains("not both")
        );
        assert!(
            bad("firewall = \"f\"\nbogus = 1\n[logs]\npath = \"a\"\n[cluster]\nk = 2")
                .contains("bogus")
        );
        let ok = PipelineConfig::from_toml(
            "firewall = \"/abs/f.json\"\n[logs]\npath = \"l.jsonl\"\n[cluster]\nk_range = [2, 4]",
            base,
        )
        .unwrap();
        assert_eq!(ok.firewall, Path::new("/abs/f.json"));
        assert_eq!(ok.logs.path.as_deref(), Some(Path::new("/x/l.jsonl")));
        assert_eq!(
            log_format_for(ok.logs.path.as_ref().unwrap()),
            LogFormat::Jsonl
        );
    }
}
