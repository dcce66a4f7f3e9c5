//! Scoring an extracted network against an expert ground-truth network.
//!
//! Extracted groups are aligned to ground-truth actants by shared mention
//! strings. Each ground-truth relation label is then mapped to the relation
//! cluster (between the aligned actants) holding the member phrase most similar
//! to it, provided the cluster is cohesive enough and the similarity clears a
//! threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, EmbeddingError, EmbeddingProvider};
use crate::emg::GroupingResult;
use crate::iarc::{ClusterSet, RelationCluster};
use crate::scalar::Real;

pub const DEFAULT_SIM_MIN: f64 = 0.8;
pub const DEFAULT_DISPERSION_MIN: f64 = 0.8;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground truth: {0}")]
    InvalidGroundTruth(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("group {group:?} matches several ground-truth actants: {actants:?}")]
    Ambiguous { group: String, actants: Vec<String> },
    #[error("no ground-truth labels to evaluate")]
    NoLabels,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthActant {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEdge {
    pub source_id: String,
    pub target_id: String,
    pub labels: Vec<String>,
}

/// Expert actants (with aliases) and labelled directed edges.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub actants: Vec<GroundTruthActant>,
    pub edges: Vec<GroundTruthEdge>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<(), EvalError> {
        let mut ids = BTreeSet::new();
        for a in &self.actants {
            if !ids.insert(a.id.as_str()) {
                return Err(EvalError::InvalidGroundTruth(format!("duplicate actant id {:?}", a.id)));
            }
        }
        for e in &self.edges {
            for id in [&e.source_id, &e.target_id] {
                if !ids.contains(id.as_str()) {
                    return Err(EvalError::InvalidGroundTruth(format!(
                        "edge references unknown actant {id:?}"
                    )));
                }
            }
            if e.labels.is_empty() || e.labels.iter().any(|l| l.trim().is_empty()) {
                return Err(EvalError::InvalidGroundTruth(format!(
                    "edge {} -> {} has an empty label set or label",
                    e.source_id, e.target_id
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let gt: Self =
            serde_json::from_str(text).map_err(|e| EvalError::InvalidGroundTruth(e.to_string()))?;
        gt.validate()?;
        Ok(gt)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn label_count(&self) -> usize {
        self.edges.iter().map(|e| e.labels.len()).sum()
    }
}

/// Which ground-truth strings a group may match on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AliasPolicy {
    /// Label or any alias.
    #[default]
    LabelAndAliases,
    /// Only the ground-truth label itself (the pre-grouping baseline).
    LabelOnly,
}

/// Group label → ground-truth actant id, plus the leftovers on both sides.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub by_group: BTreeMap<String, String>,
    pub unmatched_groups: Vec<String>,
    pub unmatched_actants: Vec<String>,
}

impl Alignment {
    pub fn groups_for(&self, actant_id: &str) -> Vec<&str> {
        self.by_group
            .iter()
            .filter(|(_, id)| id.as_str() == actant_id)
            .map(|(g, _)| g.as_str())
            .collect()
    }
}

/// Aligns `(label, members)` pairs to ground-truth actants, case-insensitively.
pub fn align_labelled<'a, I>(groups: I, gt: &GroundTruth, policy: AliasPolicy) -> Result<Alignment, EvalError>
where
    I: IntoIterator<Item = (&'a str, &'a [String])>,
{
    let keys: Vec<(&str, BTreeSet<String>)> = gt
        .actants
        .iter()
        .map(|a| {
            let mut k = BTreeSet::from([a.label.to_lowercase()]);
            if policy == AliasPolicy::LabelAndAliases {
                k.extend(a.aliases.iter().map(|s| s.to_lowercase()));
            }
            (a.id.as_str(), k)
        })
        .collect();
    let mut out = Alignment::default();
    let mut matched_ids = BTreeSet::new();
    for (label, members) in groups {
        let names: BTreeSet<String> = std::iter::once(label)
            .chain(members.iter().map(String::as_str))
            .map(str::to_lowercase)
            .collect();
        let hits: Vec<&str> = keys
            .iter()
            .filter(|(_, k)| !k.is_disjoint(&names))
            .map(|(id, _)| *id)
            .collect();
        match hits.as_slice() {
            [] => out.unmatched_groups.push(label.to_string()),
            [id] => {
                matched_ids.insert(id.to_string());
                out.by_group.insert(label.to_string(), id.to_string());
            }
            _ => {
                return Err(EvalError::Ambiguous {
                    group: label.to_string(),
                    actants: hits.iter().map(|s| s.to_string()).collect(),
                })
            }
        }
    }
    out.unmatched_actants = gt
        .actants
        .iter()
        .filter(|a| !matched_ids.contains(&a.id))
        .map(|a| a.id.clone())
        .collect();
    Ok(out)
}

/// Aligns extracted groups to ground-truth actants via label or alias overlap.
pub fn align_actants(grouping: &GroupingResult, gt: &GroundTruth) -> Result<Alignment, EvalError> {
    align_actants_with(grouping, gt, AliasPolicy::LabelAndAliases)
}

pub fn align_actants_with(
    grouping: &GroupingResult,
    gt: &GroundTruth,
    policy: AliasPolicy,
) -> Result<Alignment, EvalError> {
    align_labelled(
        grouping.groups().iter().map(|g| (g.label.as_str(), g.members.as_slice())),
        gt,
        policy,
    )
}

/// Outcome for one ground-truth relation label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment<F> {
    pub label: String,
    /// Index of the mapped cluster in the candidate list, if mapped.
    pub cluster: Option<usize>,
    /// Best similarity over eligible clusters (mapped or not).
    pub similarity: Option<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingResult<F> {
    pub assignments: Vec<LabelAssignment<F>>,
}

impl<F> MappingResult<F> {
    pub fn mapped_count(&self) -> usize {
        self.assignments.iter().filter(|a| a.cluster.is_some()).count()
    }
}

/// Maps each ground-truth label to the argmax cluster of
/// `max_{r in C} cos(r, label)` among clusters with dispersion at least
/// `dispersion_min`, keeping the assignment only when that maximum reaches
/// `sim_min`. Ties go to higher dispersion, then more instances, then lower index.
pub fn map_clusters_to_ground_truth<F: Real>(
    clusters: &[RelationCluster<F>],
    gt_labels: &[String],
    provider: &dyn EmbeddingProvider,
    sim_min: F,
    dispersion_min: F,
) -> Result<MappingResult<F>, EvalError> {
    let eligible: Vec<usize> = (0..clusters.len())
        .filter(|&i| clusters[i].dispersion >= dispersion_min)
        .collect();
    if eligible.is_empty() || gt_labels.is_empty() {
        return Ok(MappingResult {
            assignments: gt_labels
                .iter()
                .map(|l| LabelAssignment {
                    label: l.clone(),
                    cluster: None,
                    similarity: None,
                })
                .collect(),
        });
    }

    let phrases: BTreeSet<&String> = eligible
        .iter()
        .flat_map(|&i| clusters[i].members.iter())
        .chain(gt_labels)
        .collect();
    let phrases: Vec<String> = phrases.into_iter().cloned().collect();
    let vectors = provider.embed(&phrases)?;
    let lookup: BTreeMap<&str, Vec<F>> = phrases
        .iter()
        .zip(&vectors)
        .map(|(p, v)| (p.as_str(), v.cast::<F>().values().to_vec()))
        .collect();

    let mut assignments = Vec::with_capacity(gt_labels.len());
    for label in gt_labels {
        let lv = &lookup[label.as_str()];
        let mut best: Option<(usize, F)> = None;
        for &ci in &eligible {
            let c = &clusters[ci];
            let mut score = F::neg_infinity();
            for m in &c.members {
                score = score.max(cosine_similarity(&lookup[m.as_str()], lv)?);
            }
            let better = match best {
                None => true,
                Some((bi, bs)) => {
                    let b = &clusters[bi];
                    score > bs
                        || (score == bs
                            && (c.dispersion > b.dispersion
                                || (c.dispersion == b.dispersion && c.instances > b.instances)))
                }
            };
            if better {
                best = Some((ci, score));
            }
        }
        let (ci, score) = best.expect("eligible clusters are non-empty");
        assignments.push(LabelAssignment {
            label: label.clone(),
            cluster: (score >= sim_min).then_some(ci),
            similarity: Some(score),
        });
    }
    Ok(MappingResult { assignments })
}

/// Mapping detail for one ground-truth edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvaluation<F> {
    pub source_id: String,
    pub target_id: String,
    /// Extracted (source group, target group) pairs aligned to this edge.
    pub extracted_pairs: Vec<(String, String)>,
    /// Total phrase instances over the aligned extracted clusters.
    pub instances: usize,
    pub mapping: MappingResult<F>,
}

impl<F> EdgeEvaluation<F> {
    pub fn detected(&self) -> bool {
        self.mapping.mapped_count() > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Mapped labels over all labels, in percent.
    pub recall_pct: f64,
    /// Edges with at least one mapped label over all edges, in percent.
    pub edge_detection_rate_pct: f64,
    /// Mean phrase instances over detected edges.
    pub avg_relationships: f64,
    /// Median phrase instances over detected edges.
    pub median_relationships: f64,
    pub labels_total: usize,
    pub labels_mapped: usize,
    pub edges_total: usize,
    pub edges_detected: usize,
}

pub fn compute_metrics<F>(edges: &[EdgeEvaluation<F>]) -> Result<EvalMetrics, EvalError> {
    let labels_total: usize = edges.iter().map(|e| e.mapping.assignments.len()).sum();
    if labels_total == 0 {
        return Err(EvalError::NoLabels);
    }
    let labels_mapped: usize = edges.iter().map(|e| e.mapping.mapped_count()).sum();
    let mut detected: Vec<usize> = edges.iter().filter(|e| e.detected()).map(|e| e.instances).collect();
    detected.sort_unstable();
    let (avg, median) = if detected.is_empty() {
        (0.0, 0.0)
    } else {
        let n = detected.len();
        let avg = detected.iter().sum::<usize>() as f64 / n as f64;
        let median = if n % 2 == 1 {
            detected[n / 2] as f64
        } else {
            (detected[n / 2 - 1] + detected[n / 2]) as f64 / 2.0
        };
        (avg, median)
    };
    Ok(EvalMetrics {
        recall_pct: 100.0 * labels_mapped as f64 / labels_total as f64,
        edge_detection_rate_pct: 100.0 * detected.len() as f64 / edges.len() as f64,
        avg_relationships: avg,
        median_relationships: median,
        labels_total,
        labels_mapped,
        edges_total: edges.len(),
        edges_detected: detected.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub sim_min: f64,
    pub dispersion_min: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sim_min: DEFAULT_SIM_MIN,
            dispersion_min: DEFAULT_DISPERSION_MIN,
        }
    }
}

/// Full evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub sim_min: f64,
    pub dispersion_min: f64,
    pub metrics: EvalMetrics,
    pub alignment: Alignment,
    pub edges: Vec<EdgeEvaluation<f64>>,
}

/// Maps every ground-truth edge against the clusters of its aligned group pairs
/// and reduces the results to metrics.
pub fn evaluate(
    gt: &GroundTruth,
    alignment: &Alignment,
    cluster_sets: &[ClusterSet<f64>],
    provider: &dyn EmbeddingProvider,
    config: EvalConfig,
) -> Result<EvalReport, EvalError> {
    gt.validate()?;
    let mut edges = Vec::with_capacity(gt.edges.len());
    for e in &gt.edges {
        let sources: BTreeSet<&str> = alignment.groups_for(&e.source_id).into_iter().collect();
        let targets: BTreeSet<&str> = alignment.groups_for(&e.target_id).into_iter().collect();
        let mut candidates: Vec<RelationCluster<f64>> = Vec::new();
        let mut pairs = Vec::new();
        let mut instances = 0;
        for set in cluster_sets {
            if sources.contains(set.source.as_str()) && targets.contains(set.target.as_str()) {
                pairs.push((set.source.clone(), set.target.clone()));
                instances += set.total_instances();
                candidates.extend(set.clusters.iter().cloned());
            }
        }
        let mapping = map_clusters_to_ground_truth(
            &candidates,
            &e.labels,
            provider,
            config.sim_min,
            config.dispersion_min,
        )?;
        edges.push(EdgeEvaluation {
            source_id: e.source_id.clone(),
            target_id: e.target_id.clone(),
            extracted_pairs: pairs,
            instances,
            mapping,
        });
    }
    let metrics = compute_metrics(&edges)?;
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        sim_min: config.sim_min,
        dispersion_min: config.dispersion_min,
        metrics,
        alignment: alignment.clone(),
        edges,
    })
}
