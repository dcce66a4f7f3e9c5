//! Stage orchestration: shared configuration, artifact writing and manifests.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{RelationIndex, TupleCorpus, DEFAULT_MIN_COUNT, INDEX_FORMAT_VERSION};
use crate::embedding::{write_embedding_file, EmbeddingGateway};
use crate::emg::{
    group_mentions, GroupingConfig, GroupingResult, GroupsDocument, DEFAULT_ALPHA_PERCENTILE, DEFAULT_BETA,
    DEFAULT_GAMMA, GROUPS_FORMAT_VERSION,
};
use crate::evaluation::{align_actants, evaluate, EvalConfig, EvalReport, GroundTruth, REPORT_FORMAT_VERSION};
use crate::graph::{
    annotate_ground_truth, apply_thresholds, assemble_network, classify_meta_actants, export_network, ExportFormat,
    NarrativeNetwork, Thresholds, DEFAULT_MARKERS, DEFAULT_UNVERIFIED_MIN, DEFAULT_VERIFIED_MIN,
    NETWORK_FORMAT_VERSION,
};
use crate::iarc::{
    all_bundles, cluster_relations, filter_valid_clusters, ClusterParams, ClusterSet, ClustersDocument,
    CLUSTERS_FORMAT_VERSION, DEFAULT_K_MAX, DEFAULT_MIN_DISPERSION,
};
use crate::synth::{generate_corpus, ground_truth, synthetic_embeddings, HiddenNarrative, SynthConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_NAME: &str = "manifest.json";

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad or missing arguments; maps to exit status 2.
    #[error("{0}")]
    Usage(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxError,
    },
}

impl PipelineError {
    fn stage(stage: &'static str) -> impl Fn(BoxError) -> Self {
        move |source| PipelineError::Stage { stage, source }
    }

    fn missing(flag: &str) -> Self {
        PipelineError::Usage(format!("missing required flag --{flag}"))
    }
}

fn boxed<E: std::error::Error + Send + Sync + 'static>(e: E) -> BoxError {
    Box::new(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Emg,
    Iarc,
    Graph,
    Eval,
    Synth,
    RunAll,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Emg => "emg",
            Stage::Iarc => "iarc",
            Stage::Graph => "graph",
            Stage::Eval => "eval",
            Stage::Synth => "synth",
            Stage::RunAll => "run-all",
        }
    }
}

/// Every path and hyperparameter a stage can use. Output locations are not
/// part of the hashed configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub tuples: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
    pub embeddings: Option<String>,
    pub ground_truth: Option<PathBuf>,
    pub model: Option<PathBuf>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
    #[serde(skip)]
    pub out_tuples: Option<PathBuf>,
    #[serde(skip)]
    pub out_embeddings: Option<PathBuf>,
    #[serde(skip)]
    pub out_answer: Option<PathBuf>,
    #[serde(skip)]
    pub out_ground_truth: Option<PathBuf>,
    #[serde(skip)]
    pub report: Option<PathBuf>,
    pub min_count: usize,
    pub gamma: usize,
    pub alpha_percentile: f64,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub k_max: usize,
    pub min_dispersion: f64,
    pub emit_centroids: bool,
    pub sim_min: f64,
    pub dispersion_min: f64,
    pub verified_min: usize,
    pub unverified_min: usize,
    pub keep_pruned: bool,
    pub format: String,
    pub markers: Vec<String>,
    pub seed: u64,
    pub n_reviews: usize,
    pub noise: f64,
    pub min_tuples_per_review: usize,
    pub max_tuples_per_review: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            tuples: None,
            index: None,
            groups: None,
            clusters: None,
            embeddings: None,
            ground_truth: None,
            model: None,
            out: None,
            out_dir: None,
            out_tuples: None,
            out_embeddings: None,
            out_answer: None,
            out_ground_truth: None,
            report: None,
            min_count: DEFAULT_MIN_COUNT,
            gamma: DEFAULT_GAMMA,
            alpha_percentile: DEFAULT_ALPHA_PERCENTILE,
            alpha: None,
            beta: DEFAULT_BETA,
            k_max: DEFAULT_K_MAX,
            min_dispersion: DEFAULT_MIN_DISPERSION,
            emit_centroids: false,
            sim_min: crate::evaluation::DEFAULT_SIM_MIN,
            dispersion_min: crate::evaluation::DEFAULT_DISPERSION_MIN,
            verified_min: DEFAULT_VERIFIED_MIN,
            unverified_min: DEFAULT_UNVERIFIED_MIN,
            keep_pruned: false,
            format: "json".into(),
            markers: DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect(),
            seed: synth.seed,
            n_reviews: synth.n_reviews,
            noise: synth.noise_rate,
            min_tuples_per_review: synth.min_tuples_per_review,
            max_tuples_per_review: synth.max_tuples_per_review,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| PipelineError::Usage(format!("invalid value {value:?} for --{key}: {e}")))
}

impl PipelineConfig {
    /// Sets one option by its flag name (without the leading dashes).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let path = || Some(PathBuf::from(value));
        match key {
            "tuples" => self.tuples = path(),
            "index" => self.index = path(),
            "groups" => self.groups = path(),
            "clusters" => self.clusters = path(),
            "embeddings" => self.embeddings = Some(value.to_string()),
            "ground-truth" => self.ground_truth = path(),
            "model" => self.model = path(),
            "out" => self.out = path(),
            "out-dir" => self.out_dir = path(),
            "out-tuples" => self.out_tuples = path(),
            "out-embeddings" => self.out_embeddings = path(),
            "out-answer" => self.out_answer = path(),
            "out-ground-truth" => self.out_ground_truth = path(),
            "report" => self.report = path(),
            "min-count" => self.min_count = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "alpha-percentile" => self.alpha_percentile = parse(key, value)?,
            "alpha" => self.alpha = Some(parse(key, value)?),
            "beta" => self.beta = parse(key, value)?,
            "k-max" => self.k_max = parse(key, value)?,
            "min-dispersion" => self.min_dispersion = parse(key, value)?,
            "emit-centroids" => self.emit_centroids = parse(key, value)?,
            "sim-min" => self.sim_min = parse(key, value)?,
            "dispersion-min" => self.dispersion_min = parse(key, value)?,
            "verified-min" => self.verified_min = parse(key, value)?,
            "unverified-min" => self.unverified_min = parse(key, value)?,
            "keep-pruned" => self.keep_pruned = parse(key, value)?,
            "format" => {
                value.parse::<ExportFormat>().map_err(|e| PipelineError::Usage(e.to_string()))?;
                self.format = value.to_string();
            }
            "markers" => {
                self.markers = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            "seed" => self.seed = parse(key, value)?,
            "n-reviews" => self.n_reviews = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "min-tuples-per-review" => self.min_tuples_per_review = parse(key, value)?,
            "max-tuples-per-review" => self.max_tuples_per_review = parse(key, value)?,
            other => return Err(PipelineError::Usage(format!("unknown option {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` document (`#` starts a comment line).
    pub fn apply_file_text(&mut self, text: &str) -> Result<(), PipelineError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            self.set(key.trim().trim_start_matches("--"), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_file_text(&text)
    }

    /// SHA-256 of the serialized effective configuration.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn grouping(&self) -> GroupingConfig {
        GroupingConfig {
            gamma: self.gamma,
            alpha_percentile: self.alpha_percentile,
            beta: self.beta,
            alpha_override: self.alpha,
        }
    }

    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            k_max: self.k_max,
            seed: self.seed,
            ..ClusterParams::default()
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            verified_min: self.verified_min,
            unverified_min: self.unverified_min,
            keep_pruned: self.keep_pruned,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_reviews: self.n_reviews,
            min_tuples_per_review: self.min_tuples_per_review,
            max_tuples_per_review: self.max_tuples_per_review,
            noise_rate: self.noise,
            seed: self.seed,
            ..SynthConfig::default()
        }
    }

    fn require<'a, T>(field: &'a Option<T>, flag: &str) -> Result<&'a T, PipelineError> {
        field.as_ref().ok_or_else(|| PipelineError::missing(flag))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a new file, refusing to replace an existing one.
pub fn write_new(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut f = OpenOptions::new().write(true).create_new(true).open(path)?;
    f.write_all(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestInput {
    pub name: String,
    pub location: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestArtifact {
    pub name: String,
    pub sha256: String,
}

/// Run record: no timestamps, so identical runs give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub formats: BTreeMap<String, u32>,
    pub inputs: Vec<ManifestInput>,
    pub artifacts: Vec<ManifestArtifact>,
}

struct Run<'a> {
    stage: Stage,
    config: &'a PipelineConfig,
    inputs: Vec<ManifestInput>,
    artifacts: Vec<ManifestArtifact>,
}

impl<'a> Run<'a> {
    fn new(stage: Stage, config: &'a PipelineConfig) -> Self {
        Self {
            stage,
            config,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    fn input(&mut self, name: &str, location: &str) {
        let sha256 = fs::read(location).ok().map(|b| sha256_hex(&b));
        self.inputs.push(ManifestInput {
            name: name.to_string(),
            location: location.to_string(),
            sha256,
        });
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
        write_new(path, bytes).map_err(|e| PipelineError::Stage {
            stage: self.stage.name(),
            source: format!("cannot write {}: {e}", path.display()).into(),
        })?;
        self.artifacts.push(ManifestArtifact {
            name: path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn finish(self, manifest_path: &Path) -> Result<Manifest, PipelineError> {
        let formats = [
            ("index", INDEX_FORMAT_VERSION),
            ("groups", GROUPS_FORMAT_VERSION),
            ("clusters", CLUSTERS_FORMAT_VERSION),
            ("network", NETWORK_FORMAT_VERSION),
            ("report", REPORT_FORMAT_VERSION),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let manifest = Manifest {
            tool: "narrative".into(),
            version: VERSION.into(),
            stage: self.stage.name().into(),
            config_hash: self.config.hash(),
            config: self.config.clone(),
            formats,
            inputs: self.inputs,
            artifacts: self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_new(manifest_path, text.as_bytes()).map_err(|e| PipelineError::Stage {
            stage: self.stage.name(),
            source: format!("cannot write {}: {e}", manifest_path.display()).into(),
        })?;
        Ok(manifest)
    }
}

/// Manifest location for a single-stage run writing `out`.
pub fn stage_manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn build_index(config: &PipelineConfig, tuples: &Path) -> Result<RelationIndex, PipelineError> {
    let err = PipelineError::stage("ingest");
    let (corpus, skipped) = TupleCorpus::load(tuples).map_err(|e| err(boxed(e)))?;
    for s in &skipped {
        log::warn!("{}:{}: skipped: {}", tuples.display(), s.line, s.reason);
    }
    let (corpus, vocab) = corpus.filter_and_dedup(config.min_count).map_err(|e| err(boxed(e)))?;
    log::info!("ingest: {} tuples, {} mentions", corpus.len(), vocab.len());
    RelationIndex::build(&corpus, vocab).map_err(|e| err(boxed(e)))
}

pub fn load_index(path: &Path) -> Result<RelationIndex, PipelineError> {
    RelationIndex::load(path).map_err(|e| PipelineError::stage("emg")(boxed(e)))
}

pub fn build_groups(config: &PipelineConfig, index: &RelationIndex) -> Result<GroupsDocument, PipelineError> {
    let (grouping, matrix) =
        group_mentions(index, &config.grouping()).map_err(|e| PipelineError::stage("emg")(boxed(e)))?;
    log::info!("emg: {} groups, alpha {}", grouping.groups().len(), matrix.alpha());
    Ok(grouping.to_document(Some(&matrix)))
}

fn read_text(stage: &'static str, path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::Stage {
        stage,
        source: format!("cannot read {}: {e}", path.display()).into(),
    })
}

pub fn load_groups(stage: &'static str, path: &Path) -> Result<GroupingResult, PipelineError> {
    let text = read_text(stage, path)?;
    let doc: GroupsDocument = serde_json::from_str(&text).map_err(|e| PipelineError::Stage {
        stage,
        source: format!("{}: {e}", path.display()).into(),
    })?;
    GroupingResult::from_document(doc).map_err(|e| PipelineError::stage(stage)(boxed(e)))
}

pub fn load_clusters(stage: &'static str, path: &Path) -> Result<ClustersDocument, PipelineError> {
    let text = read_text(stage, path)?;
    ClustersDocument::from_json(&text).map_err(|e| PipelineError::stage(stage)(boxed(e)))
}

pub fn open_embeddings(stage: &'static str, location: &str) -> Result<EmbeddingGateway, PipelineError> {
    EmbeddingGateway::open(location).map_err(|e| PipelineError::stage(stage)(boxed(e)))
}

pub fn build_clusters(
    config: &PipelineConfig,
    index: &RelationIndex,
    grouping: &GroupingResult,
    provider: &EmbeddingGateway,
) -> Result<ClustersDocument, PipelineError> {
    let params = config.cluster_params();
    let mut sets: Vec<ClusterSet<f64>> = Vec::new();
    for bundle in all_bundles(grouping, index) {
        let set = cluster_relations::<f64>(&bundle, provider, &params)
            .map_err(|e| PipelineError::stage("iarc")(boxed(e)))?;
        let set = filter_valid_clusters(set, config.min_dispersion);
        if !set.clusters.is_empty() {
            sets.push(set);
        }
    }
    log::info!("iarc: {} edges with valid clusters", sets.len());
    Ok(ClustersDocument::new(sets, config.min_dispersion, config.emit_centroids))
}

pub fn build_network(
    config: &PipelineConfig,
    grouping: &GroupingResult,
    clusters: &ClustersDocument,
    gt: Option<&GroundTruth>,
) -> Result<NarrativeNetwork, PipelineError> {
    let err = PipelineError::stage("graph");
    let mut net = assemble_network(grouping, &clusters.edges).map_err(|e| err(boxed(e)))?;
    if let Some(gt) = gt {
        let alignment = align_actants(grouping, gt).map_err(|e| err(boxed(e)))?;
        net = annotate_ground_truth(net, &alignment);
    }
    let net = apply_thresholds(net, config.thresholds());
    Ok(classify_meta_actants(net, &config.markers))
}

pub fn build_report(
    config: &PipelineConfig,
    grouping: &GroupingResult,
    clusters: &ClustersDocument,
    gt: &GroundTruth,
    provider: &EmbeddingGateway,
) -> Result<EvalReport, PipelineError> {
    let err = PipelineError::stage("eval");
    let alignment = align_actants(grouping, gt).map_err(|e| err(boxed(e)))?;
    let report = evaluate(
        gt,
        &alignment,
        &clusters.edges,
        provider,
        EvalConfig {
            sim_min: config.sim_min,
            dispersion_min: config.dispersion_min,
        },
    )
    .map_err(|e| err(boxed(e)))?;
    log::info!(
        "eval: recall {:.2}%, edge detection {:.2}%",
        report.metrics.recall_pct,
        report.metrics.edge_detection_rate_pct
    );
    Ok(report)
}

fn load_gt(stage: &'static str, path: &Path) -> Result<GroundTruth, PipelineError> {
    GroundTruth::load(path).map_err(|e| PipelineError::stage(stage)(boxed(e)))
}

fn export_format(config: &PipelineConfig) -> Result<ExportFormat, PipelineError> {
    config.format.parse().map_err(|e: crate::graph::GraphError| PipelineError::Usage(e.to_string()))
}

/// Runs one stage (or the whole chain) and returns its manifest.
pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<Manifest, PipelineError> {
    type C = PipelineConfig;
    match stage {
        Stage::Ingest => {
            let tuples = C::require(&config.tuples, "tuples")?;
            let out = C::require(&config.out, "out")?;
            let mut run = Run::new(stage, config);
            run.input("tuples", &path_str(tuples));
            let index = build_index(config, tuples)?;
            run.write(out, index.to_json().as_bytes())?;
            run.finish(&stage_manifest_path(out))
        }
        Stage::Emg => {
            let index_path = C::require(&config.index, "index")?;
            let out = C::require(&config.out, "out")?;
            config.grouping().validate().map_err(|e| PipelineError::Usage(e.to_string()))?;
            let mut run = Run::new(stage, config);
            run.input("index", &path_str(index_path));
            let index = load_index(index_path)?;
            run.write(out, &json_bytes(&build_groups(config, &index)?))?;
            run.finish(&stage_manifest_path(out))
        }
        Stage::Iarc => {
            let index_path = C::require(&config.index, "index")?;
            let groups_path = C::require(&config.groups, "groups")?;
            let embeddings = C::require(&config.embeddings, "embeddings")?;
            let out = C::require(&config.out, "out")?;
            let mut run = Run::new(stage, config);
            run.input("index", &path_str(index_path));
            run.input("groups", &path_str(groups_path));
            run.input("embeddings", embeddings);
            let index = RelationIndex::load(index_path).map_err(|e| PipelineError::stage("iarc")(boxed(e)))?;
            let grouping = load_groups("iarc", groups_path)?;
            let provider = open_embeddings("iarc", embeddings)?;
            let doc = build_clusters(config, &index, &grouping, &provider)?;
            run.write(out, &json_bytes(&doc))?;
            run.finish(&stage_manifest_path(out))
        }
        Stage::Graph => {
            let groups_path = C::require(&config.groups, "groups")?;
            let clusters_path = C::require(&config.clusters, "clusters")?;
            let out = C::require(&config.out, "out")?;
            let format = export_format(config)?;
            let mut run = Run::new(stage, config);
            run.input("groups", &path_str(groups_path));
            run.input("clusters", &path_str(clusters_path));
            let gt = match &config.ground_truth {
                Some(p) => {
                    run.input("ground-truth", &path_str(p));
                    Some(load_gt("graph", p)?)
                }
                None => None,
            };
            let grouping = load_groups("graph", groups_path)?;
            let clusters = load_clusters("graph", clusters_path)?;
            let net = build_network(config, &grouping, &clusters, gt.as_ref())?;
            run.write(out, &export_network(&net, format))?;
            run.finish(&stage_manifest_path(out))
        }
        Stage::Eval => {
            let clusters_path = C::require(&config.clusters, "clusters")?;
            let groups_path = C::require(&config.groups, "groups")?;
            let gt_path = C::require(&config.ground_truth, "ground-truth")?;
            let embeddings = C::require(&config.embeddings, "embeddings")?;
            let report_path = C::require(&config.report, "report")?;
            let mut run = Run::new(stage, config);
            run.input("clusters", &path_str(clusters_path));
            run.input("groups", &path_str(groups_path));
            run.input("ground-truth", &path_str(gt_path));
            run.input("embeddings", embeddings);
            let gt = load_gt("eval", gt_path)?;
            let grouping = load_groups("eval", groups_path)?;
            let clusters = load_clusters("eval", clusters_path)?;
            let provider = open_embeddings("eval", embeddings)?;
            let report = build_report(config, &grouping, &clusters, &gt, &provider)?;
            run.write(report_path, &json_bytes(&report))?;
            run.finish(&stage_manifest_path(report_path))
        }
        Stage::Synth => {
            let model_path = C::require(&config.model, "model")?;
            let out_tuples = C::require(&config.out_tuples, "out-tuples")?;
            let out_embeddings = C::require(&config.out_embeddings, "out-embeddings")?;
            let out_answer = C::require(&config.out_answer, "out-answer")?;
            let synth = config.synth();
            synth.validate().map_err(|e| PipelineError::Usage(e.to_string()))?;
            let mut run = Run::new(stage, config);
            run.input("model", &path_str(model_path));
            let err = PipelineError::stage("synth");
            let model = HiddenNarrative::from_json(&read_text("synth", model_path)?).map_err(|e| err(boxed(e)))?;
            let (corpus, answer) = generate_corpus(&model, &synth).map_err(|e| err(boxed(e)))?;
            let vectors = synthetic_embeddings(&model, synth.distractor_pool, synth.seed);
            let dim = vectors.first().map_or(0, |(_, v)| v.len());
            let embeddings = write_embedding_file(dim, vectors.iter().map(|(t, v)| (t.as_str(), v.as_slice())));
            run.write(out_tuples, corpus.to_jsonl().as_bytes())?;
            run.write(out_embeddings, embeddings.as_bytes())?;
            run.write(out_answer, &json_bytes(&answer))?;
            if let Some(p) = &config.out_ground_truth {
                run.write(p, &json_bytes(&ground_truth(&model)))?;
            }
            run.finish(&stage_manifest_path(out_tuples))
        }
        Stage::RunAll => run_all(config),
    }
}

/// ingest → emg → iarc → graph → eval (when a ground truth is given), all
/// written under `out_dir`.
fn run_all(config: &PipelineConfig) -> Result<Manifest, PipelineError> {
    type C = PipelineConfig;
    let tuples = C::require(&config.tuples, "tuples")?;
    let embeddings = C::require(&config.embeddings, "embeddings")?;
    let out_dir = C::require(&config.out_dir, "out-dir")?;
    config.grouping().validate().map_err(|e| PipelineError::Usage(e.to_string()))?;
    export_format(config)?;
    if out_dir.join(MANIFEST_NAME).exists() {
        return Err(PipelineError::Usage(format!(
            "{} already holds a run; artifacts are write-once",
            out_dir.display()
        )));
    }
    let mut run = Run::new(Stage::RunAll, config);
    run.input("tuples", &path_str(tuples));
    run.input("embeddings", embeddings);
    let gt = match &config.ground_truth {
        Some(p) => {
            run.input("ground-truth", &path_str(p));
            Some(load_gt("run-all", p)?)
        }
        None => None,
    };

    let index = build_index(config, tuples)?;
    run.write(&out_dir.join("index.json"), index.to_json().as_bytes())?;
    let groups_doc = build_groups(config, &index)?;
    run.write(&out_dir.join("groups.json"), &json_bytes(&groups_doc))?;
    let grouping =
        GroupingResult::from_document(groups_doc).map_err(|e| PipelineError::stage("emg")(boxed(e)))?;
    let provider = open_embeddings("iarc", embeddings)?;
    let clusters = build_clusters(config, &index, &grouping, &provider)?;
    run.write(&out_dir.join("clusters.json"), &json_bytes(&clusters))?;
    let net = build_network(config, &grouping, &clusters, gt.as_ref())?;
    run.write(&out_dir.join("network.json"), &export_network(&net, ExportFormat::Json))?;
    run.write(&out_dir.join("network.dot"), &export_network(&net, ExportFormat::Dot))?;
    if let Some(gt) = &gt {
        let report = build_report(config, &grouping, &clusters, gt, &provider)?;
        run.write(&out_dir.join("report.json"), &json_bytes(&report))?;
    }
    run.finish(&out_dir.join(MANIFEST_NAME))
}
