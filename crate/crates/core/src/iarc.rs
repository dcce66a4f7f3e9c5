//! Inter-actant relationship clustering.
//!
//! Relation phrases between two actant groups are pooled over every member
//! pair, embedded, and clustered with elbow-selected k-means on unit-normalized
//! vectors. Cluster cohesion (dispersion) is the instance-weighted mean cosine
//! similarity of the members to the cluster centroid; low-dispersion clusters are discarded.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RelationIndex;
use crate::embedding::{cosine_similarity, EmbeddingError, EmbeddingProvider};
use crate::emg::GroupingResult;
use crate::kmeans::{choose_elbow, fit_range, spread, KMeansParams};
use crate::scalar::Real;

pub const DEFAULT_MIN_DISPERSION: f64 = 0.8;
pub const DEFAULT_K_MAX: usize = 8;
pub const DEFAULT_ELBOW_THRESHOLD: f64 = 0.15;
pub const DEFAULT_TIGHT_FLOOR: f64 = 0.05;

pub const CLUSTERS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IarcError {
    #[error("unknown group label {0:?}")]
    UnknownGroup(String),
    #[error("relation bundle {from} -> {to} is empty")]
    EmptyBundle { from: String, to: String },
    #[error("embedding for {phrase:?}: {source}")]
    Embedding {
        phrase: String,
        #[source]
        source: EmbeddingError,
    },
    #[error(transparent)]
    Provider(#[from] EmbeddingError),
    #[error("invalid clustering parameters: {0}")]
    InvalidParams(String),
    #[error("clusters document: {0}")]
    Format(String),
}

/// Multiset of relation phrases from one actant group to another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationBundle {
    pub source: String,
    pub target: String,
    pub phrases: BTreeMap<String, usize>,
}

impl RelationBundle {
    pub fn total_instances(&self) -> usize {
        self.phrases.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// Union of the relation multisets over every ordered member pair `(p, q)`,
/// `p` in `source` and `q` in `target` (self-loops included when the groups coincide).
pub fn aggregate_relations(
    grouping: &GroupingResult,
    index: &RelationIndex,
    source: &str,
    target: &str,
) -> Result<RelationBundle, IarcError> {
    let src = grouping
        .group(source)
        .ok_or_else(|| IarcError::UnknownGroup(source.to_string()))?;
    let tgt = grouping
        .group(target)
        .ok_or_else(|| IarcError::UnknownGroup(target.to_string()))?;
    let mut phrases = BTreeMap::new();
    for p in &src.members {
        for q in &tgt.members {
            if let Some(rels) = index.relations(p, q) {
                for (r, &n) in rels {
                    *phrases.entry(r.phrase.clone()).or_insert(0) += n;
                }
            }
        }
    }
    Ok(RelationBundle {
        source: source.to_string(),
        target: target.to_string(),
        phrases,
    })
}

/// Every non-empty bundle between ordered group pairs, sorted by (source, target).
pub fn all_bundles(grouping: &GroupingResult, index: &RelationIndex) -> Vec<RelationBundle> {
    let mut by_pair: BTreeMap<(String, String), BTreeMap<String, usize>> = BTreeMap::new();
    for (pair, rels) in index.edges() {
        let (Some(a), Some(b)) = (grouping.group_of(&pair.subject), grouping.group_of(&pair.object))
        else {
            continue;
        };
        let phrases = by_pair
            .entry((a.label.clone(), b.label.clone()))
            .or_default();
        for (r, &n) in rels {
            *phrases.entry(r.phrase.clone()).or_insert(0) += n;
        }
    }
    by_pair
        .into_iter()
        .map(|((source, target), phrases)| RelationBundle {
            source,
            target,
            phrases,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    pub k_max: usize,
    pub seed: u64,
    /// Relative distortion improvement below which adding a cluster stops.
    pub elbow_threshold: f64,
    /// Mean squared distance to centroid (unit vectors) at which no further split is tried.
    pub tight_floor: f64,
    pub kmeans: KMeansParams,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            seed: 0,
            elbow_threshold: DEFAULT_ELBOW_THRESHOLD,
            tight_floor: DEFAULT_TIGHT_FLOOR,
            kmeans: KMeansParams::default(),
        }
    }
}

/// A semantically coherent group of relation phrases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCluster<F> {
    /// Distinct phrases, sorted.
    pub members: Vec<String>,
    /// Total phrase instances (multiplicity-weighted size).
    pub instances: usize,
    /// Weighted mean of the unit-normalized member vectors; empty when not retained.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub centroid: Vec<F>,
    /// Instance-weighted mean cosine similarity of the members to the centroid.
    pub dispersion: F,
}

/// Clusters for one ordered actant pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet<F> {
    pub source: String,
    pub target: String,
    /// Number of clusters chosen by the elbow rule (before dispersion filtering).
    pub chosen_k: usize,
    pub clusters: Vec<RelationCluster<F>>,
    /// Best distortion for k = 1, 2, ...; empty when not retained.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distortions: Vec<F>,
}

impl<F> ClusterSet<F> {
    pub fn total_instances(&self) -> usize {
        self.clusters.iter().map(|c| c.instances).sum()
    }
}

fn normalized<F: Real>(v: &[F]) -> Result<Vec<F>, EmbeddingError> {
    let norm = v.iter().map(|&x| x * x).sum::<F>().sqrt();
    if norm == F::zero() {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(v.iter().map(|&x| x / norm).collect())
}

/// Clusters a bundle's phrases using vectors from `provider`.
pub fn cluster_relations<F: Real>(
    bundle: &RelationBundle,
    provider: &dyn EmbeddingProvider,
    params: &ClusterParams,
) -> Result<ClusterSet<F>, IarcError> {
    if bundle.is_empty() {
        return Err(IarcError::EmptyBundle {
            from: bundle.source.clone(),
            to: bundle.target.clone(),
        });
    }
    let phrases: Vec<String> = bundle.phrases.keys().cloned().collect();
    let vectors = provider.embed(&phrases)?;
    let vectors: Vec<Vec<F>> = vectors.iter().map(|v| v.cast::<F>().values().to_vec()).collect();
    cluster_embedded(bundle, &vectors, params)
}

/// Clusters a bundle given one vector per distinct phrase (in the bundle's
/// sorted phrase order).
pub fn cluster_embedded<F: Real>(
    bundle: &RelationBundle,
    vectors: &[Vec<F>],
    params: &ClusterParams,
) -> Result<ClusterSet<F>, IarcError> {
    if params.k_max == 0 {
        return Err(IarcError::InvalidParams("k_max must be >= 1".into()));
    }
    if bundle.is_empty() {
        return Err(IarcError::EmptyBundle {
            from: bundle.source.clone(),
            to: bundle.target.clone(),
        });
    }
    if vectors.len() != bundle.phrases.len() {
        return Err(IarcError::InvalidParams(format!(
            "{} vectors for {} phrases",
            vectors.len(),
            bundle.phrases.len()
        )));
    }
    let phrases: Vec<(&String, usize)> = bundle.phrases.iter().map(|(p, &n)| (p, n)).collect();
    let dim = vectors[0].len();
    let mut points = Vec::with_capacity(vectors.len());
    for ((phrase, _), v) in phrases.iter().zip(vectors) {
        if v.len() != dim {
            return Err(IarcError::Embedding {
                phrase: phrase.to_string(),
                source: EmbeddingError::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                },
            });
        }
        let unit = normalized(v).map_err(|source| IarcError::Embedding {
            phrase: phrase.to_string(),
            source,
        })?;
        points.push(unit);
    }
    let weights: Vec<F> = phrases
        .iter()
        .map(|&(_, n)| F::from_usize(n).unwrap_or_else(F::one))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let fits = fit_range(&points, &weights, params.k_max, &params.kmeans, &mut rng);
    let distortions: Vec<F> = fits.iter().map(|f| f.distortion).collect();
    let spreads: Vec<F> = fits.iter().map(|f| spread(&points, f)).collect();
    let k = choose_elbow(&distortions, &spreads, params.elbow_threshold, params.tight_floor);
    let fit = &fits[k - 1];

    let mut clusters = Vec::new();
    for (c, centroid) in fit.centroids.iter().enumerate() {
        let idx: Vec<usize> = (0..points.len()).filter(|&i| fit.labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        let dispersion = if idx.len() == 1 {
            F::one()
        } else {
            let mass: F = idx.iter().map(|&i| weights[i]).sum();
            idx.iter()
                .map(|&i| weights[i] * cosine_similarity(&points[i], centroid).unwrap_or_else(|_| F::zero()))
                .sum::<F>()
                / mass
        };
        clusters.push(RelationCluster {
            members: idx.iter().map(|&i| phrases[i].0.clone()).collect(),
            instances: idx.iter().map(|&i| phrases[i].1).sum(),
            centroid: centroid.clone(),
            dispersion,
        });
    }
    clusters.sort_by(|a, b| {
        b.instances
            .cmp(&a.instances)
            .then_with(|| a.members.cmp(&b.members))
    });
    Ok(ClusterSet {
        source: bundle.source.clone(),
        target: bundle.target.clone(),
        chosen_k: clusters.len(),
        clusters,
        distortions,
    })
}

/// Keeps clusters with `dispersion >= min_dispersion`, preserving order.
pub fn filter_valid_clusters<F: Real>(set: ClusterSet<F>, min_dispersion: F) -> ClusterSet<F> {
    ClusterSet {
        clusters: set
            .clusters
            .into_iter()
            .filter(|c| c.dispersion >= min_dispersion)
            .collect(),
        ..set
    }
}

/// Serialized clustering output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersDocument {
    pub format_version: u32,
    pub min_dispersion: f64,
    pub edges: Vec<ClusterSet<f64>>,
}

impl ClustersDocument {
    /// Builds a document; centroids and distortion curves are dropped unless asked for.
    pub fn new(mut edges: Vec<ClusterSet<f64>>, min_dispersion: f64, emit_centroids: bool) -> Self {
        for set in &mut edges {
            set.distortions.clear();
            if !emit_centroids {
                for c in &mut set.clusters {
                    c.centroid.clear();
                }
            }
        }
        Self {
            format_version: CLUSTERS_FORMAT_VERSION,
            min_dispersion,
            edges,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, IarcError> {
        let doc: Self = serde_json::from_str(text).map_err(|e| IarcError::Format(e.to_string()))?;
        if doc.format_version != CLUSTERS_FORMAT_VERSION {
            return Err(IarcError::Format(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        Ok(doc)
    }
}
