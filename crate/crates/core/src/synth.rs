//! Generative story model: synthetic tuple corpora with a known answer.
//!
//! A review picks a context, then each tuple draws a subject by the context's
//! actant recall, an object among the subject's partners in that context, a
//! relation phrase from the edge's distribution and a surface alias for each
//! actant. A small fraction of tuples gets one field replaced by a distractor.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Pattern, RelationTuple, TupleCorpus};
use crate::emg::GroupingResult;
use crate::evaluation::{GroundTruth, GroundTruthActant, GroundTruthEdge};
use crate::iarc::ClusterSet;

/// Upper bound on the perturbation norm of a synthetic phrase vector.
pub const MAX_PERTURBATION: f64 = 0.1;
pub const MAX_RESAMPLES: usize = 1000;

const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid hidden narrative: {0}")]
    InvalidModel(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("context {0:?}: no sampleable actant pair after {MAX_RESAMPLES} attempts")]
    NoEdge(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenActant {
    pub id: String,
    pub alias_distribution: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenEdge {
    pub source: String,
    pub target: String,
    pub relation_distribution: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenContext {
    pub id: String,
    pub actant_recall: BTreeMap<String, f64>,
    pub edges: Vec<HiddenEdge>,
}

/// The planted story: actants with alias distributions, contexts with recall
/// and edge relation distributions, and optional phrase metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenNarrative {
    pub actants: Vec<HiddenActant>,
    pub contexts: Vec<HiddenContext>,
    pub context_weights: BTreeMap<String, f64>,
    /// Phrase → semantic cluster id; a phrase missing here is its own cluster.
    #[serde(default)]
    pub relation_clusters: BTreeMap<String, String>,
    /// Phrase → headword; defaults to the phrase's first token.
    #[serde(default)]
    pub heads: BTreeMap<String, String>,
}

fn check_distribution(name: &str, dist: &BTreeMap<String, f64>) -> Result<(), SynthError> {
    if dist.is_empty() {
        return Err(SynthError::InvalidModel(format!("{name} is empty")));
    }
    if dist.values().any(|&p| !(p.is_finite() && p >= 0.0)) {
        return Err(SynthError::InvalidModel(format!("{name} has a negative or non-finite probability")));
    }
    let total: f64 = dist.values().sum();
    if (total - 1.0).abs() > PROB_TOLERANCE {
        return Err(SynthError::InvalidModel(format!("{name} sums to {total}")));
    }
    Ok(())
}

impl HiddenNarrative {
    pub fn validate(&self) -> Result<(), SynthError> {
        let mut ids = BTreeSet::new();
        let mut aliases = BTreeSet::new();
        for a in &self.actants {
            if !ids.insert(a.id.as_str()) {
                return Err(SynthError::InvalidModel(format!("duplicate actant {:?}", a.id)));
            }
            check_distribution(&format!("alias distribution of {}", a.id), &a.alias_distribution)?;
            for alias in a.alias_distribution.keys() {
                if alias.trim().is_empty() || alias.trim() != alias || alias.to_lowercase() != *alias {
                    return Err(SynthError::InvalidModel(format!(
                        "alias {alias:?} must be non-empty, trimmed and lowercase"
                    )));
                }
                if !aliases.insert(alias.as_str()) {
                    return Err(SynthError::InvalidModel(format!("alias {alias:?} is shared by two actants")));
                }
            }
        }
        check_distribution("context_weights", &self.context_weights)?;
        let context_ids: BTreeSet<&str> = self.contexts.iter().map(|c| c.id.as_str()).collect();
        if context_ids.len() != self.contexts.len()
            || context_ids != self.context_weights.keys().map(String::as_str).collect()
        {
            return Err(SynthError::InvalidModel(
                "context ids must be unique and match context_weights".into(),
            ));
        }
        for c in &self.contexts {
            check_distribution(&format!("actant recall of {}", c.id), &c.actant_recall)?;
            if let Some(bad) = c.actant_recall.keys().find(|k| !ids.contains(k.as_str())) {
                return Err(SynthError::InvalidModel(format!("context {} recalls unknown actant {bad:?}", c.id)));
            }
            let mut pairs = BTreeSet::new();
            for e in &c.edges {
                for end in [&e.source, &e.target] {
                    if !ids.contains(end.as_str()) {
                        return Err(SynthError::InvalidModel(format!("edge references unknown actant {end:?}")));
                    }
                }
                if !pairs.insert((&e.source, &e.target)) {
                    return Err(SynthError::InvalidModel(format!(
                        "context {} lists {} -> {} twice",
                        c.id, e.source, e.target
                    )));
                }
                check_distribution(
                    &format!("relations of {} -> {} in {}", e.source, e.target, c.id),
                    &e.relation_distribution,
                )?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let model: Self = serde_json::from_str(text).map_err(|e| SynthError::InvalidModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn head_of(&self, phrase: &str) -> String {
        self.heads
            .get(phrase)
            .cloned()
            .unwrap_or_else(|| phrase.split_whitespace().next().unwrap_or(phrase).to_string())
    }

    pub fn cluster_of<'a>(&'a self, phrase: &'a str) -> &'a str {
        self.relation_clusters.get(phrase).map_or(phrase, String::as_str)
    }

    /// Every phrase that any edge can emit.
    pub fn phrases(&self) -> BTreeSet<&str> {
        self.contexts
            .iter()
            .flat_map(|c| &c.edges)
            .flat_map(|e| e.relation_distribution.keys())
            .map(String::as_str)
            .collect()
    }

    /// Ordered actant pair → phrases, merged over contexts.
    pub fn edge_phrases(&self) -> BTreeMap<(String, String), BTreeSet<String>> {
        let mut out: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
        for e in self.contexts.iter().flat_map(|c| &c.edges) {
            out.entry((e.source.clone(), e.target.clone()))
                .or_default()
                .extend(e.relation_distribution.keys().cloned());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_reviews: usize,
    pub min_tuples_per_review: usize,
    pub max_tuples_per_review: usize,
    pub noise_rate: f64,
    pub seed: u64,
    /// Size of the distractor mention and distractor phrase pools.
    pub distractor_pool: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_reviews: 3000,
            min_tuples_per_review: 3,
            max_tuples_per_review: 8,
            noise_rate: 0.05,
            seed: 7,
            distractor_pool: 40,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(SynthError::InvalidConfig(format!("noise rate {} not in [0, 1)", self.noise_rate)));
        }
        if self.min_tuples_per_review == 0 || self.min_tuples_per_review > self.max_tuples_per_review {
            return Err(SynthError::InvalidConfig("tuples per review range is empty".into()));
        }
        if self.noise_rate > 0.0 && self.distractor_pool == 0 {
            return Err(SynthError::InvalidConfig("noise needs a non-empty distractor pool".into()));
        }
        Ok(())
    }
}

pub fn distractor_mention(i: usize) -> String {
    format!("stranger{i}")
}

pub fn distractor_phrase(i: usize) -> String {
    format!("mumbles{i}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Relation,
    Subject,
    Object,
}

/// Truth behind one generated tuple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub review_id: String,
    pub sentence_id: u64,
    pub context: String,
    pub subject: String,
    pub object: String,
    pub relation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerEdge {
    pub source: String,
    pub target: String,
    pub phrases: BTreeSet<String>,
}

/// What the generator knows about its own corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub alias_owner: BTreeMap<String, String>,
    /// Emitted occurrences of each true alias.
    pub alias_mass: BTreeMap<String, usize>,
    pub edges: Vec<AnswerEdge>,
    pub records: Vec<AnswerRecord>,
}

/// Partner indices, partner sampler and the matching edges for one subject.
type Partners<'a> = (Vec<usize>, WeightedIndex<f64>, Vec<&'a HiddenEdge>);

struct ContextSampler<'a> {
    id: &'a str,
    subjects: WeightedIndex<f64>,
    /// Indexed by actant.
    partners: Vec<Option<Partners<'a>>>,
}

fn weighted(weights: impl IntoIterator<Item = f64>) -> Option<WeightedIndex<f64>> {
    WeightedIndex::new(weights).ok()
}

/// Samples a corpus and its answer key; fully determined by `config.seed`.
pub fn generate_corpus(hidden: &HiddenNarrative, config: &SynthConfig) -> Result<(TupleCorpus, AnswerKey), SynthError> {
    hidden.validate()?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let actant_pos: BTreeMap<&str, usize> =
        hidden.actants.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect();
    let alias_lists: Vec<Vec<&str>> = hidden
        .actants
        .iter()
        .map(|a| a.alias_distribution.keys().map(String::as_str).collect())
        .collect();
    let alias_samplers: Vec<WeightedIndex<f64>> = hidden
        .actants
        .iter()
        .map(|a| weighted(a.alias_distribution.values().copied()).expect("validated distribution"))
        .collect();

    let contexts: Vec<ContextSampler> = hidden
        .contexts
        .iter()
        .map(|c| {
            let recall = |i: usize| c.actant_recall.get(&hidden.actants[i].id).copied().unwrap_or(0.0);
            let subjects =
                weighted((0..hidden.actants.len()).map(recall)).expect("validated distribution");
            let partners = (0..hidden.actants.len())
                .map(|i| {
                    let edges: Vec<&HiddenEdge> = c
                        .edges
                        .iter()
                        .filter(|e| actant_pos[e.source.as_str()] == i)
                        .collect();
                    let idx: Vec<usize> = edges.iter().map(|e| actant_pos[e.target.as_str()]).collect();
                    let sampler = weighted(idx.iter().map(|&j| recall(j)))?;
                    Some((idx, sampler, edges))
                })
                .collect();
            ContextSampler { id: &c.id, subjects, partners }
        })
        .collect();
    let context_sampler = weighted(hidden.contexts.iter().map(|c| hidden.context_weights[&c.id]))
        .expect("validated distribution");

    let mut tuples = Vec::new();
    let mut records = Vec::new();
    let mut alias_mass: BTreeMap<String, usize> = BTreeMap::new();
    for r in 0..config.n_reviews {
        let review_id = format!("r{r:05}");
        let ctx = &contexts[context_sampler.sample(&mut rng)];
        let n = rng.random_range(config.min_tuples_per_review..=config.max_tuples_per_review);
        for s in 0..n {
            let mut picked = None;
            for _ in 0..MAX_RESAMPLES {
                let subj = ctx.subjects.sample(&mut rng);
                if let Some((idx, sampler, edges)) = &ctx.partners[subj] {
                    let k = sampler.sample(&mut rng);
                    picked = Some((subj, idx[k], edges[k]));
                    break;
                }
            }
            let (subj, obj, edge) = picked.ok_or_else(|| SynthError::NoEdge(ctx.id.to_string()))?;
            let phrases: Vec<&String> = edge.relation_distribution.keys().collect();
            let rel_sampler =
                weighted(edge.relation_distribution.values().copied()).expect("validated distribution");
            let relation = phrases[rel_sampler.sample(&mut rng)].clone();
            let subject_alias = alias_lists[subj][alias_samplers[subj].sample(&mut rng)].to_string();
            let object_alias = alias_lists[obj][alias_samplers[obj].sample(&mut rng)].to_string();

            let mut noise = None;
            let (mut arg1, mut rel, mut arg2) = (subject_alias, relation.clone(), object_alias);
            if config.noise_rate > 0.0 && rng.random_bool(config.noise_rate) {
                let kind = match rng.random_range(0..4) {
                    0 | 1 => NoiseKind::Relation,
                    2 => NoiseKind::Subject,
                    _ => NoiseKind::Object,
                };
                let d = rng.random_range(0..config.distractor_pool);
                match kind {
                    NoiseKind::Relation => rel = distractor_phrase(d),
                    NoiseKind::Subject => arg1 = distractor_mention(d),
                    NoiseKind::Object => arg2 = distractor_mention(d),
                }
                noise = Some(kind);
            }
            for alias in [&arg1, &arg2] {
                if hidden.actants.iter().any(|a| a.alias_distribution.contains_key(alias)) {
                    *alias_mass.entry(alias.clone()).or_insert(0) += 1;
                }
            }
            let rel_head = if noise == Some(NoiseKind::Relation) {
                rel.clone()
            } else {
                hidden.head_of(&rel)
            };
            tuples.push(RelationTuple {
                review_id: review_id.clone(),
                sentence_id: s as u64,
                arg1_head: arg1.clone(),
                arg1,
                rel_head,
                rel,
                arg2_head: arg2.clone(),
                arg2,
                pattern: Pattern::Svo,
            });
            records.push(AnswerRecord {
                review_id: review_id.clone(),
                sentence_id: s as u64,
                context: ctx.id.to_string(),
                subject: hidden.actants[subj].id.clone(),
                object: hidden.actants[obj].id.clone(),
                relation,
                noise,
            });
        }
    }

    let alias_owner = hidden
        .actants
        .iter()
        .flat_map(|a| a.alias_distribution.keys().map(move |m| (m.clone(), a.id.clone())))
        .collect();
    let edges = hidden
        .edge_phrases()
        .into_iter()
        .map(|((source, target), phrases)| AnswerEdge { source, target, phrases })
        .collect();
    Ok((
        TupleCorpus::new(tuples),
        AnswerKey {
            alias_owner,
            alias_mass,
            edges,
            records,
        },
    ))
}

fn gaussian_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Synthetic vectors: each cluster gets a one-hot basis vector, each phrase its
/// cluster's basis plus a random perturbation of norm at most
/// [`MAX_PERTURBATION`], each cluster id its exact basis vector and each
/// distractor phrase a random unit vector. Sorted by text.
pub fn synthetic_embeddings(hidden: &HiddenNarrative, distractor_pool: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let phrases = hidden.phrases();
    let clusters: BTreeSet<&str> = phrases.iter().map(|p| hidden.cluster_of(p)).collect();
    let basis_index: BTreeMap<&str, usize> = clusters.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let dim = (clusters.len() + 8).max(16);
    let basis = |c: &str| {
        let mut v = vec![0.0; dim];
        v[basis_index[c]] = 1.0;
        v
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for p in &phrases {
        let dir = gaussian_unit(&mut rng, dim);
        let radius = MAX_PERTURBATION * rng.random::<f64>();
        let v = basis(hidden.cluster_of(p)).iter().zip(dir).map(|(b, d)| b + radius * d).collect();
        out.insert(p.to_string(), v);
    }
    for c in &clusters {
        out.entry(c.to_string()).or_insert_with(|| basis(c));
    }
    for i in 0..distractor_pool {
        let v = gaussian_unit(&mut rng, dim);
        out.entry(distractor_phrase(i)).or_insert(v);
    }
    out.into_iter().collect()
}

/// The ground-truth network implied by a hidden model: each actant labelled by
/// its most probable alias, each edge labelled by its phrases' cluster ids.
pub fn ground_truth(hidden: &HiddenNarrative) -> GroundTruth {
    let label_of: BTreeMap<&str, String> = hidden
        .actants
        .iter()
        .map(|a| {
            let label = a
                .alias_distribution
                .iter()
                .fold(None::<(&String, f64)>, |best, (m, &p)| match best {
                    Some((_, bp)) if bp >= p => best,
                    _ => Some((m, p)),
                })
                .map(|(m, _)| m.clone())
                .unwrap_or_default();
            (a.id.as_str(), label)
        })
        .collect();
    GroundTruth {
        actants: hidden
            .actants
            .iter()
            .map(|a| GroundTruthActant {
                id: a.id.clone(),
                label: label_of[a.id.as_str()].clone(),
                aliases: a.alias_distribution.keys().cloned().collect(),
            })
            .collect(),
        edges: hidden
            .edge_phrases()
            .into_iter()
            .map(|((source_id, target_id), phrases)| GroundTruthEdge {
                source_id,
                target_id,
                labels: phrases
                    .iter()
                    .map(|p| hidden.cluster_of(p).to_string())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Mass-weighted share of each group's mentions owned by its majority actant.
    pub purity: f64,
    /// Mass-weighted share of each actant's aliases inside its best group.
    pub completeness: f64,
    /// Hidden edges with a surviving cluster containing one of their phrases.
    pub edge_recovery: f64,
    pub group_purity: BTreeMap<String, f64>,
    pub actant_completeness: BTreeMap<String, f64>,
    pub hidden_edges: usize,
    pub recovered_edges: usize,
}

/// Scores a grouping and its cluster sets against the answer key.
pub fn recovery_report(answer: &AnswerKey, grouping: &GroupingResult, cluster_sets: &[ClusterSet<f64>]) -> RecoveryReport {
    let mut group_purity = BTreeMap::new();
    let mut group_owner: BTreeMap<&str, Option<&str>> = BTreeMap::new();
    let (mut majority_mass, mut total_mass) = (0usize, 0usize);
    for g in grouping.groups() {
        let mut by_owner: BTreeMap<&str, usize> = BTreeMap::new();
        for (m, &f) in &g.frequencies {
            let owner = answer.alias_owner.get(m).map_or(m.as_str(), String::as_str);
            *by_owner.entry(owner).or_insert(0) += f;
        }
        let total: usize = by_owner.values().sum();
        let (owner, top) = by_owner
            .iter()
            .fold(("", 0usize), |best, (o, &n)| if n > best.1 { (o, n) } else { best });
        majority_mass += top;
        total_mass += total;
        group_purity.insert(g.label.clone(), if total == 0 { 1.0 } else { top as f64 / total as f64 });
        let owner = answer.alias_owner.values().any(|a| a == owner).then_some(owner);
        group_owner.insert(g.label.as_str(), owner);
    }

    let mut actant_mass: BTreeMap<&str, usize> = BTreeMap::new();
    let mut best_in_group: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (alias, owner) in &answer.alias_owner {
        let mass = answer.alias_mass.get(alias).copied().unwrap_or(0);
        *actant_mass.entry(owner).or_insert(0) += mass;
        if let Some(g) = grouping.group_of(alias) {
            *best_in_group.entry(owner).or_default().entry(g.label.as_str()).or_insert(0) += mass;
        }
    }
    let mut actant_completeness = BTreeMap::new();
    let (mut covered, mut actant_total) = (0usize, 0usize);
    for (&actant, &mass) in &actant_mass {
        let best = best_in_group.get(actant).and_then(|m| m.values().max().copied()).unwrap_or(0);
        covered += best;
        actant_total += mass;
        actant_completeness.insert(actant.to_string(), if mass == 0 { 1.0 } else { best as f64 / mass as f64 });
    }

    let hidden: BTreeMap<(&str, &str), &BTreeSet<String>> = answer
        .edges
        .iter()
        .map(|e| ((e.source.as_str(), e.target.as_str()), &e.phrases))
        .collect();
    let mut recovered = BTreeSet::new();
    for set in cluster_sets {
        let (Some(Some(s)), Some(Some(t))) = (
            group_owner.get(set.source.as_str()),
            group_owner.get(set.target.as_str()),
        ) else {
            continue;
        };
        if let Some(phrases) = hidden.get(&(*s, *t)) {
            if set.clusters.iter().flat_map(|c| &c.members).any(|m| phrases.contains(m)) {
                recovered.insert((*s, *t));
            }
        }
    }

    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    RecoveryReport {
        purity: ratio(majority_mass, total_mass),
        completeness: ratio(covered, actant_total),
        edge_recovery: ratio(recovered.len(), hidden.len()),
        group_purity,
        actant_completeness,
        hidden_edges: hidden.len(),
        recovered_edges: recovered.len(),
    }
}

/// Shape of a randomly planted model.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub actants: usize,
    pub min_aliases: usize,
    pub max_aliases: usize,
    pub contexts: usize,
    /// Distinct ordered actant pairs carrying relations.
    pub edges: usize,
    pub clusters_per_edge: usize,
    pub phrases_per_cluster: usize,
    /// Relation clusters shared by all edges; each edge draws `clusters_per_edge` of them.
    pub cluster_pool: usize,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            actants: 10,
            min_aliases: 2,
            max_aliases: 4,
            contexts: 5,
            edges: 20,
            clusters_per_edge: 3,
            phrases_per_cluster: 3,
            cluster_pool: 12,
        }
    }
}

fn normalized_weights<R: Rng>(rng: &mut R, keys: impl IntoIterator<Item = String>, low: f64) -> BTreeMap<String, f64> {
    let raw: Vec<(String, f64)> = keys.into_iter().map(|k| (k, rng.random_range(low..=1.0))).collect();
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    let mut out: BTreeMap<String, f64> = raw.into_iter().map(|(k, w)| (k, w / total)).collect();
    // absorb rounding so the sum is 1 within tolerance
    let drift = 1.0 - out.values().sum::<f64>();
    if let Some(v) = out.values_mut().next() {
        *v += drift;
    }
    out
}

/// Random hidden model: aliases `a{i}n{j}`, phrases `r{c}v{v}` with cluster ids
/// `rel{c}`. Every actant touches an edge, every
/// context has an edge and there are no self-loops.
pub fn planted_narrative(shape: &PlantedSpec, seed: u64) -> HiddenNarrative {
    assert!(shape.actants >= 2 && shape.contexts >= 1 && shape.min_aliases >= 1);
    assert!(shape.min_aliases <= shape.max_aliases && shape.clusters_per_edge >= 1 && shape.phrases_per_cluster >= 1);
    let max_edges = shape.actants * (shape.actants - 1);
    let n_edges = shape.edges.clamp(shape.actants.div_ceil(2).max(1), max_edges);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let actants: Vec<HiddenActant> = (0..shape.actants)
        .map(|i| {
            let n = rng.random_range(shape.min_aliases..=shape.max_aliases);
            HiddenActant {
                id: format!("actant{i}"),
                alias_distribution: normalized_weights(&mut rng, (0..n).map(|j| format!("a{i}n{j}")), 0.5),
            }
        })
        .collect();

    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    // a ring through every actant first
    for i in 0..shape.actants {
        if pairs.len() >= n_edges {
            break;
        }
        if i % 2 == 0 {
            pairs.insert((i, (i + 1) % shape.actants));
        }
    }
    while pairs.len() < n_edges {
        let s = rng.random_range(0..shape.actants);
        let t = rng.random_range(0..shape.actants);
        if s != t {
            pairs.insert((s, t));
        }
    }
    let pool = shape.cluster_pool.max(shape.clusters_per_edge);
    let mut relation_clusters = BTreeMap::new();
    for c in 0..pool {
        for v in 0..shape.phrases_per_cluster {
            relation_clusters.insert(format!("r{c}v{v}"), format!("rel{c}"));
        }
    }
    let mut edge_dists = Vec::new();
    for &(s, t) in &pairs {
        let chosen = rand::seq::index::sample(&mut rng, pool, shape.clusters_per_edge);
        let mut chosen: Vec<usize> = chosen.into_iter().collect();
        chosen.sort_unstable();
        let phrases = chosen
            .into_iter()
            .flat_map(|c| (0..shape.phrases_per_cluster).map(move |v| format!("r{c}v{v}")));
        edge_dists.push(((s, t), normalized_weights(&mut rng, phrases, 0.3)));
    }

    let mut membership: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); shape.contexts];
    for (e, _) in edge_dists.iter().enumerate() {
        membership[e % shape.contexts].insert(e);
        for members in membership.iter_mut() {
            if rng.random_bool(0.3) {
                members.insert(e);
            }
        }
    }
    let contexts: Vec<HiddenContext> = membership
        .iter()
        .enumerate()
        .map(|(c, edges)| HiddenContext {
            id: format!("context{c}"),
            actant_recall: normalized_weights(&mut rng, actants.iter().map(|a| a.id.clone()), 0.5),
            edges: edges
                .iter()
                .map(|&e| {
                    let ((s, t), dist) = &edge_dists[e];
                    HiddenEdge {
                        source: format!("actant{s}"),
                        target: format!("actant{t}"),
                        relation_distribution: dist.clone(),
                    }
                })
                .collect(),
        })
        .collect();
    let context_weights = normalized_weights(&mut rng, contexts.iter().map(|c| c.id.clone()), 0.5);
    HiddenNarrative {
        actants,
        contexts,
        context_weights,
        relation_clusters,
        heads: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MentionVocabulary;

    fn tiny() -> HiddenNarrative {
        HiddenNarrative::from_json(
            r#"{"actants":[{"id":"bilbo","alias_distribution":{"bilbo":1.0}},
                           {"id":"smaug","alias_distribution":{"smaug":1.0}}],
                "contexts":[{"id":"c","actant_recall":{"bilbo":0.5,"smaug":0.5},
                  "edges":[{"source":"bilbo","target":"smaug","relation_distribution":{"steal from":1.0}}]}],
                "context_weights":{"c":1.0}}"#,
        )
        .unwrap()
    }

    fn config(n: usize, noise: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            n_reviews: n,
            noise_rate: noise,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_single_edge_repeats_one_tuple() {
        let (corpus, answer) = generate_corpus(&tiny(), &config(20, 0.0, 1)).unwrap();
        assert!(corpus.len() >= 60);
        for t in corpus.tuples() {
            assert_eq!((t.arg1.as_str(), t.rel.as_str(), t.rel_head.as_str(), t.arg2.as_str()), ("bilbo", "steal from", "steal", "smaug"));
        }
        assert_eq!(answer.records.len(), corpus.len());
        assert_eq!(answer.alias_mass["bilbo"], corpus.len());
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let model = planted_narrative(&PlantedSpec::default(), 3);
        let a = generate_corpus(&model, &config(50, 0.1, 9)).unwrap();
        let b = generate_corpus(&model, &config(50, 0.1, 9)).unwrap();
        assert_eq!(a.0.to_jsonl(), b.0.to_jsonl());
        assert_eq!(a.1, b.1);
        let c = generate_corpus(&model, &config(50, 0.1, 10)).unwrap();
        assert_ne!(a.0.to_jsonl(), c.0.to_jsonl());
    }

    #[test]
    fn planted_model_is_valid() {
        for seed in 0..20 {
            let m = planted_narrative(&PlantedSpec::default(), seed);
            m.validate().unwrap();
            assert_eq!(m.actants.len(), 10);
            assert!(m.actants.iter().all(|a| (2..=4).contains(&a.alias_distribution.len())));
            assert!(m.contexts.iter().all(|c| !c.edges.is_empty()));
            assert!(m.contexts.iter().flat_map(|c| &c.edges).all(|e| e.source != e.target));
            let touched: BTreeSet<&str> = m
                .contexts
                .iter()
                .flat_map(|c| &c.edges)
                .flat_map(|e| [e.source.as_str(), e.target.as_str()])
                .collect();
            assert_eq!(touched.len(), 10);
        }
    }

    #[test]
    fn invalid_models_rejected() {
        let mut m = tiny();
        m.actants[1].alias_distribution = BTreeMap::from([("bilbo".into(), 1.0)]);
        assert!(m.validate().is_err());
        let mut m = tiny();
        m.context_weights.insert("c".into(), 0.9);
        assert!(m.validate().is_err());
        let mut m = tiny();
        m.contexts[0].edges[0].target = "gollum".into();
        assert!(m.validate().is_err());
        assert!(config(1, 1.0, 0).validate().is_err());
        let mut c = config(1, 0.0, 0);
        c.min_tuples_per_review = 9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn subject_without_partner_in_context_errors() {
        let mut m = tiny();
        m.contexts[0].actant_recall = BTreeMap::from([("bilbo".into(), 0.0), ("smaug".into(), 1.0)]);
        assert!(matches!(generate_corpus(&m, &config(1, 0.0, 0)), Err(SynthError::NoEdge(_))));
    }

    #[test]
    fn alias_frequencies_fit_distribution() {
        let model = HiddenNarrative::from_json(
            r#"{"actants":[{"id":"a","alias_distribution":{"x":0.5,"y":0.3,"z":0.2}},
                           {"id":"b","alias_distribution":{"w":1.0}}],
                "contexts":[{"id":"c","actant_recall":{"a":0.5,"b":0.5},
                  "edges":[{"source":"a","target":"b","relation_distribution":{"r":1.0}}]}],
                "context_weights":{"c":1.0}}"#,
        )
        .unwrap();
        let cfg = SynthConfig {
            n_reviews: 2000,
            min_tuples_per_review: 5,
            max_tuples_per_review: 5,
            noise_rate: 0.0,
            seed: 11,
            distractor_pool: 0,
        };
        let (_, answer) = generate_corpus(&model, &cfg).unwrap();
        let n: usize = ["x", "y", "z"].iter().map(|m| answer.alias_mass[*m]).sum();
        assert_eq!(n, 10_000);
        let chi2: f64 = [("x", 0.5), ("y", 0.3), ("z", 0.2)]
            .iter()
            .map(|(m, p)| {
                let e = p * n as f64;
                (answer.alias_mass[*m] as f64 - e).powi(2) / e
            })
            .sum();
        let dof = 2.0;
        assert!(chi2 < dof + 3.0 * (2.0f64 * dof).sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn embeddings_are_bounded_perturbations() {
        let model = planted_narrative(&PlantedSpec::default(), 5);
        let emb = synthetic_embeddings(&model, 10, 1);
        let map: BTreeMap<_, _> = emb.iter().cloned().collect();
        for p in model.phrases() {
            let basis = &map[model.cluster_of(p)];
            let d: f64 = map[p].iter().zip(basis).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(d <= MAX_PERTURBATION + 1e-12);
            assert!((basis.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(map.contains_key(&distractor_phrase(9)));
        assert_eq!(emb, synthetic_embeddings(&model, 10, 1));
    }

    fn grouping_of(parts: &[&[(&str, usize)]]) -> GroupingResult {
        let vocab = MentionVocabulary {
            min_count: 1,
            counts: parts.iter().flat_map(|p| p.iter()).map(|(m, c)| (m.to_string(), *c)).collect(),
        };
        GroupingResult::from_partition(
            parts.iter().map(|p| p.iter().map(|(m, _)| m.to_string()).collect()).collect(),
            &vocab,
        )
        .unwrap()
    }

    #[test]
    fn perfect_recovery_scores_one() {
        let answer = AnswerKey {
            alias_owner: [("x1", "x"), ("x2", "x"), ("y1", "y")].map(|(a, b)| (a.into(), b.into())).into(),
            alias_mass: [("x1", 5), ("x2", 5), ("y1", 5)].map(|(a, b)| (a.into(), b)).into(),
            edges: vec![AnswerEdge { source: "x".into(), target: "y".into(), phrases: ["hit".to_string()].into() }],
            records: vec![],
        };
        let g = grouping_of(&[&[("x1", 5), ("x2", 5)], &[("y1", 5)]]);
        let sets = vec![crate::graph::tests::set("x1", "y1", &[(&["hit"], 4)])];
        let r = recovery_report(&answer, &g, &sets);
        assert_eq!((r.purity, r.completeness, r.edge_recovery), (1.0, 1.0, 1.0));
    }

    #[test]
    fn one_of_ten_aliases_misgrouped() {
        let owner: BTreeMap<String, String> = (0..10).map(|i| (format!("m{i}"), "a".to_string())).collect();
        let mass = (0..10).map(|i| (format!("m{i}"), 3)).collect();
        let answer = AnswerKey { alias_owner: owner, alias_mass: mass, edges: vec![], records: vec![] };
        let main: Vec<(String, usize)> = (0..9).map(|i| (format!("m{i}"), 3)).collect();
        let main: Vec<(&str, usize)> = main.iter().map(|(m, c)| (m.as_str(), *c)).collect();
        let g = grouping_of(&[&main, &[("m9", 3)]]);
        let r = recovery_report(&answer, &g, &[]);
        assert!((r.actant_completeness["a"] - 0.9).abs() < 1e-12);
        assert_eq!(r.purity, 1.0);
    }

    #[test]
    fn ground_truth_from_model() {
        let model = planted_narrative(&PlantedSpec::default(), 2);
        let gt = ground_truth(&model);
        gt.validate().unwrap();
        assert_eq!(gt.actants.len(), 10);
        assert!(gt.edges.iter().all(|e| e.labels.len() == 3));
    }
}
