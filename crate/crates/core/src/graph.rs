//! The actant-relationship network: assembly, edge thresholds, meta-actant
//! classification and export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emg::GroupingResult;
use crate::evaluation::Alignment;
use crate::iarc::{ClusterSet, RelationCluster};

pub const DEFAULT_VERIFIED_MIN: usize = 5;
pub const DEFAULT_UNVERIFIED_MIN: usize = 10;
pub const DEFAULT_MARKERS: [&str; 5] = ["in", "of", "by", "from", "about"];

pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cluster set {source_label} -> {target_label} references unknown group {missing:?}")]
    UnknownGroup {
        source_label: String,
        target_label: String,
        missing: String,
    },
    #[error("duplicate cluster set for {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("unknown export format {0:?} (expected dot or json)")]
    UnknownFormat(String),
    #[error("network document: {0}")]
    Format(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Actant,
    MetaActant,
    Unclassified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkNode {
    pub label: String,
    pub members: Vec<String>,
    pub total_frequency: usize,
    pub kind: NodeKind,
    /// Aligned ground-truth actant id, when a ground truth was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEdge {
    pub source: String,
    pub target: String,
    pub clusters: Vec<RelationCluster<f64>>,
    pub instance_count: usize,
    /// Every member phrase is preposition-induced.
    #[serde(default)]
    pub ignorable: bool,
    /// Below its frequency threshold but kept for display.
    #[serde(default)]
    pub pruned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeNetwork {
    pub format_version: u32,
    /// Whether node `ground_truth` fields reflect an alignment.
    #[serde(default)]
    pub ground_truth_aligned: bool,
    pub nodes: Vec<NetworkNode>,
    pub edges: Vec<NetworkEdge>,
}

impl NarrativeNetwork {
    pub fn node(&self, label: &str) -> Option<&NetworkNode> {
        self.nodes.iter().find(|n| n.label == label)
    }

    pub fn edge(&self, source: &str, target: &str) -> Option<&NetworkEdge> {
        self.edges.iter().find(|e| e.source == source && e.target == target)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let net: Self = serde_json::from_str(text).map_err(|e| GraphError::Format(e.to_string()))?;
        if net.format_version != NETWORK_FORMAT_VERSION {
            return Err(GraphError::Format(format!(
                "unsupported format_version {}",
                net.format_version
            )));
        }
        let labels: BTreeSet<&str> = net.nodes.iter().map(|n| n.label.as_str()).collect();
        for e in &net.edges {
            for end in [&e.source, &e.target] {
                if !labels.contains(end.as_str()) {
                    return Err(GraphError::Format(format!("edge endpoint {end:?} is not a node")));
                }
            }
        }
        Ok(net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// One node per group and one edge per ordered pair with at least one cluster.
pub fn assemble_network(
    grouping: &GroupingResult,
    cluster_sets: &[ClusterSet<f64>],
) -> Result<NarrativeNetwork, GraphError> {
    let nodes: Vec<NetworkNode> = grouping
        .groups()
        .iter()
        .map(|g| NetworkNode {
            label: g.label.clone(),
            members: g.members.clone(),
            total_frequency: g.total_frequency(),
            kind: NodeKind::Unclassified,
            ground_truth: None,
        })
        .collect();
    let mut edges: BTreeMap<(String, String), NetworkEdge> = BTreeMap::new();
    for set in cluster_sets {
        for end in [&set.source, &set.target] {
            if grouping.group(end).is_none() {
                return Err(GraphError::UnknownGroup {
                    source_label: set.source.clone(),
                    target_label: set.target.clone(),
                    missing: end.clone(),
                });
            }
        }
        let key = (set.source.clone(), set.target.clone());
        if edges.contains_key(&key) {
            return Err(GraphError::DuplicateEdge(key.0, key.1));
        }
        if set.clusters.is_empty() {
            continue;
        }
        edges.insert(
            key,
            NetworkEdge {
                source: set.source.clone(),
                target: set.target.clone(),
                clusters: set.clusters.clone(),
                instance_count: set.total_instances(),
                ignorable: false,
                pruned: false,
            },
        );
    }
    Ok(NarrativeNetwork {
        format_version: NETWORK_FORMAT_VERSION,
        ground_truth_aligned: false,
        nodes,
        edges: edges.into_values().collect(),
    })
}

/// Records each node's aligned ground-truth actant.
pub fn annotate_ground_truth(mut net: NarrativeNetwork, alignment: &Alignment) -> NarrativeNetwork {
    for n in &mut net.nodes {
        n.ground_truth = alignment.by_group.get(&n.label).cloned();
    }
    net.ground_truth_aligned = true;
    net
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Thresholds {
    pub verified_min: usize,
    pub unverified_min: usize,
    pub keep_pruned: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            verified_min: DEFAULT_VERIFIED_MIN,
            unverified_min: DEFAULT_UNVERIFIED_MIN,
            keep_pruned: false,
        }
    }
}

/// Drops (or flags) low-frequency edges. An edge is verifiable when both
/// endpoints align to ground-truth actants; without an alignment every edge
/// uses `verified_min`. Nodes are untouched.
pub fn apply_thresholds(mut net: NarrativeNetwork, thresholds: Thresholds) -> NarrativeNetwork {
    let aligned: BTreeSet<String> = net
        .nodes
        .iter()
        .filter(|n| n.ground_truth.is_some())
        .map(|n| n.label.clone())
        .collect();
    let use_gt = net.ground_truth_aligned;
    let keep = |e: &NetworkEdge| {
        let verified = !use_gt || (aligned.contains(&e.source) && aligned.contains(&e.target));
        let min = if verified {
            thresholds.verified_min
        } else {
            thresholds.unverified_min
        };
        e.instance_count >= min
    };
    if thresholds.keep_pruned {
        for e in &mut net.edges {
            e.pruned = e.pruned || !keep(e);
        }
    } else {
        net.edges.retain(|e| !e.pruned && keep(e));
    }
    net
}

/// True when `phrase` starts with the whole-token sequence of `marker`.
fn starts_with_marker(phrase: &str, marker: &str) -> bool {
    let mut words = phrase.split_whitespace();
    let mut marker_words = marker.split_whitespace().peekable();
    if marker_words.peek().is_none() {
        return false;
    }
    marker_words.all(|m| words.next().is_some_and(|w| w.eq_ignore_ascii_case(m)))
}

/// Flags preposition-only edges as ignorable, then marks every node with an
/// outgoing edge and no non-ignorable incoming edge as a meta-actant. Pruned
/// edges take no part.
pub fn classify_meta_actants<S: AsRef<str>>(mut net: NarrativeNetwork, markers: &[S]) -> NarrativeNetwork {
    for e in &mut net.edges {
        e.ignorable = e.clusters.iter().flat_map(|c| &c.members).all(|p| {
            markers.iter().any(|m| starts_with_marker(p, m.as_ref()))
        }) && e.clusters.iter().any(|c| !c.members.is_empty());
    }
    let mut outgoing = BTreeSet::new();
    let mut incoming = BTreeSet::new();
    for e in net.edges.iter().filter(|e| !e.pruned) {
        outgoing.insert(e.source.clone());
        if !e.ignorable {
            incoming.insert(e.target.clone());
        }
    }
    for n in &mut net.nodes {
        n.kind = if outgoing.contains(&n.label) && !incoming.contains(&n.label) {
            NodeKind::MetaActant
        } else {
            NodeKind::Actant
        };
    }
    net
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(Self::Dot),
            "json" => Ok(Self::Json),
            other => Err(GraphError::UnknownFormat(other.to_string())),
        }
    }
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn node_class(net: &NarrativeNetwork, n: &NetworkNode) -> (&'static str, &'static str) {
    if n.kind == NodeKind::MetaActant {
        ("meta", "palegreen")
    } else if net.ground_truth_aligned && n.ground_truth.is_none() {
        ("unmatched", "lightgrey")
    } else {
        ("actant", "lightblue")
    }
}

pub fn to_dot(net: &NarrativeNetwork) -> String {
    let mut out = String::from("digraph narrative {\n  node [style=filled];\n");
    for n in &net.nodes {
        let (class, color) = node_class(net, n);
        let _ = writeln!(
            out,
            "  {} [class={}, fillcolor={}];",
            dot_quote(&n.label),
            dot_quote(class),
            dot_quote(color)
        );
    }
    for e in &net.edges {
        let mut attrs = format!("label={}", dot_quote(&e.instance_count.to_string()));
        if e.pruned {
            attrs.push_str(", style=\"dashed\"");
        }
        if e.ignorable {
            attrs.push_str(", color=\"grey\"");
        }
        let _ = writeln!(out, "  {} -> {} [{attrs}];", dot_quote(&e.source), dot_quote(&e.target));
    }
    out.push_str("}\n");
    out
}

pub fn export_network(net: &NarrativeNetwork, format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::Dot => to_dot(net).into_bytes(),
        ExportFormat::Json => {
            let mut s = net.to_json();
            s.push('\n');
            s.into_bytes()
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::MentionVocabulary;

    pub(crate) fn grouping(counts: &[(&str, usize)]) -> GroupingResult {
        let vocab = MentionVocabulary {
            min_count: 1,
            counts: counts.iter().map(|(m, c)| (m.to_string(), *c)).collect(),
        };
        GroupingResult::singletons(&vocab)
    }

    pub(crate) fn set(source: &str, target: &str, clusters: &[(&[&str], usize)]) -> ClusterSet<f64> {
        ClusterSet {
            source: source.into(),
            target: target.into(),
            chosen_k: clusters.len(),
            clusters: clusters
                .iter()
                .map(|(m, n)| RelationCluster {
                    members: m.iter().map(|s| s.to_string()).collect(),
                    instances: *n,
                    centroid: vec![],
                    dispersion: 1.0,
                })
                .collect(),
            distortions: vec![],
        }
    }

    #[test]
    fn assemble_counts_and_skips_empty_sets() {
        let g = grouping(&[("bilbo", 10), ("smaug", 5), ("ring", 3)]);
        let net = assemble_network(
            &g,
            &[set("bilbo", "smaug", &[(&["steal from"], 4), (&["fight"], 3)]), set("smaug", "ring", &[])],
        )
        .unwrap();
        assert_eq!(net.nodes.len(), 3);
        assert_eq!(net.edges.len(), 1);
        assert_eq!(net.edges[0].instance_count, 7);
        assert!(net.nodes.iter().all(|n| n.kind == NodeKind::Unclassified));
        let err = assemble_network(&g, &[set("bilbo", "gandalf", &[(&["x"], 1)])]);
        assert!(matches!(err, Err(GraphError::UnknownGroup { .. })));
    }

    #[test]
    fn thresholds_without_ground_truth() {
        let g = grouping(&[("a", 1), ("b", 1), ("c", 1)]);
        let net = assemble_network(
            &g,
            &[
                set("a", "b", &[(&["x"], 4)]),
                set("b", "c", &[(&["y"], 5)]),
                set("c", "a", &[(&["z"], 10)]),
            ],
        )
        .unwrap();
        let id = apply_thresholds(net.clone(), Thresholds { verified_min: 0, unverified_min: 0, keep_pruned: false });
        assert_eq!(id, net);
        let cut = apply_thresholds(net.clone(), Thresholds::default());
        let kept: Vec<usize> = cut.edges.iter().map(|e| e.instance_count).collect();
        assert_eq!(kept, vec![5, 10]);
        assert_eq!(cut.nodes, net.nodes);
        let flagged = apply_thresholds(net, Thresholds { keep_pruned: true, ..Thresholds::default() });
        assert_eq!(flagged.edges.iter().filter(|e| e.pruned).count(), 1);
    }

    #[test]
    fn unverified_edges_need_more_support() {
        let g = grouping(&[("bilbo", 1), ("smaug", 1), ("film", 1)]);
        let net = assemble_network(
            &g,
            &[set("bilbo", "smaug", &[(&["x"], 6)]), set("film", "bilbo", &[(&["y"], 6)])],
        )
        .unwrap();
        let alignment = Alignment {
            by_group: [("bilbo".to_string(), "b".to_string()), ("smaug".to_string(), "s".to_string())].into(),
            ..Alignment::default()
        };
        let cut = apply_thresholds(annotate_ground_truth(net, &alignment), Thresholds::default());
        assert_eq!(cut.edges.len(), 1);
        assert_eq!(cut.edges[0].source, "bilbo");
    }

    #[test]
    fn marker_matching_is_token_based() {
        assert!(starts_with_marker("in the book", "in"));
        assert!(starts_with_marker("portrayed in", "portrayed in"));
        assert!(!starts_with_marker("inside", "in"));
        assert!(!starts_with_marker("portrayed", "portrayed in"));
        assert!(!starts_with_marker("anything", ""));
    }

    #[test]
    fn bidirectional_node_is_actant() {
        let g = grouping(&[("a", 1), ("b", 1)]);
        let net = assemble_network(&g, &[set("a", "b", &[(&["x"], 1)]), set("b", "a", &[(&["y"], 1)])]).unwrap();
        let net = classify_meta_actants(net, &DEFAULT_MARKERS);
        assert!(net.nodes.iter().all(|n| n.kind == NodeKind::Actant));
    }

    #[test]
    fn dot_golden() {
        let g = grouping(&[("bilbo", 2), ("smaug", 1)]);
        let net = assemble_network(&g, &[set("bilbo", "smaug", &[(&["steal from"], 7)])]).unwrap();
        let net = classify_meta_actants(net, &DEFAULT_MARKERS);
        let expected = "digraph narrative {\n  node [style=filled];\n  \"bilbo\" [class=\"meta\", fillcolor=\"palegreen\"];\n  \"smaug\" [class=\"actant\", fillcolor=\"lightblue\"];\n  \"bilbo\" -> \"smaug\" [label=\"7\"];\n}\n";
        assert_eq!(to_dot(&net), expected);
        let empty = NarrativeNetwork {
            format_version: NETWORK_FORMAT_VERSION,
            ground_truth_aligned: false,
            nodes: vec![],
            edges: vec![],
        };
        assert_eq!(to_dot(&empty), "digraph narrative {\n  node [style=filled];\n}\n");
    }

    #[test]
    fn json_round_trip_and_format_parse() {
        let g = grouping(&[("a \"q\"", 2), ("b", 1)]);
        let net = assemble_network(&g, &[set("a \"q\"", "b", &[(&["in"], 3)])]).unwrap();
        let net = classify_meta_actants(net, &DEFAULT_MARKERS);
        let text = String::from_utf8(export_network(&net, ExportFormat::Json)).unwrap();
        assert_eq!(NarrativeNetwork::from_json(&text).unwrap(), net);
        assert!(to_dot(&net).contains("\"a \\\"q\\\"\""));
        assert!("svg".parse::<ExportFormat>().is_err());
    }
}
