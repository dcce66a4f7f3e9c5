//! Entity mention grouping.
//!
//! Two mentions are scored as aliases when they relate to the same third
//! mentions through the same relation headwords. For mentions `i`, `j` and a
//! third mention `k`, with `T_ik` the headword set of relations from `i` to `k`:
//!
//! ```text
//! s_obj(i,j,k)  = |T_ik ∩ T_jk| / |T_jk| + |T_ik ∩ T_jk| / |T_ik|
//! s_subj(i,j,k) = |T_ki ∩ T_kj| / |T_kj| + |T_ki ∩ T_kj| / |T_ki|
//! S_ij          = Σ_{k ∉ {i,j}} s_obj(i,j,k) + s_subj(i,j,k)
//! ```
//!
//! A conditional term with an empty conditioning set contributes 0. Pairs that
//! relate to each other directly at least `gamma` times are incompatible and
//! never scored or grouped.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{MentionVocabulary, RelationIndex};
use crate::scalar::{percentile_sorted, Scalar};
use crate::union_find::UnionFind;

pub const DEFAULT_GAMMA: usize = 3;
pub const DEFAULT_ALPHA_PERCENTILE: f64 = 75.0;
pub const DEFAULT_BETA: f64 = 2.0;

pub const GROUPS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmgError {
    #[error("unknown mention {0:?}")]
    UnknownMention(String),
    #[error("third mention {0:?} must differ from the scored pair")]
    ThirdMentionCollision(String),
    #[error("scoring needs at least 3 mentions, vocabulary has {0}")]
    DegenerateVocabulary(usize),
    #[error("invalid grouping config: {0}")]
    InvalidConfig(String),
    #[error("mention {0:?} appears in more than one group")]
    OverlappingGroups(String),
    #[error("unknown group label {0:?}")]
    UnknownGroup(String),
    #[error("groups document: {0}")]
    Format(String),
}

/// Hyperparameters of the grouping step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingConfig {
    /// Direct-relation count at which two mentions are incompatible.
    pub gamma: usize,
    /// Percentile of the non-zero score distribution used as the acceptance floor.
    pub alpha_percentile: f64,
    /// Successive-score ratio at which candidate acceptance stops.
    pub beta: f64,
    /// Fixed acceptance floor, bypassing the percentile.
    pub alpha_override: Option<f64>,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            alpha_percentile: DEFAULT_ALPHA_PERCENTILE,
            beta: DEFAULT_BETA,
            alpha_override: None,
        }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<(), EmgError> {
        if self.gamma < 1 {
            return Err(EmgError::InvalidConfig("gamma must be >= 1".into()));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(EmgError::InvalidConfig("beta must be >= 1".into()));
        }
        if !(self.alpha_percentile > 0.0 && self.alpha_percentile < 100.0) {
            return Err(EmgError::InvalidConfig(
                "alpha percentile must lie in (0, 100)".into(),
            ));
        }
        if let Some(a) = self.alpha_override {
            if !(a.is_finite() && a >= 0.0) {
                return Err(EmgError::InvalidConfig("alpha must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

fn require(index: &RelationIndex, m: &str) -> Result<(), EmgError> {
    if index.vocabulary().contains(m) {
        Ok(())
    } else {
        Err(EmgError::UnknownMention(m.to_string()))
    }
}

/// True when `|R_ij| + |R_ji| >= gamma`.
pub fn incompatible(index: &RelationIndex, a: &str, b: &str, gamma: usize) -> Result<bool, EmgError> {
    require(index, a)?;
    require(index, b)?;
    Ok(direct_count(index, a, b) >= gamma)
}

fn direct_count(index: &RelationIndex, a: &str, b: &str) -> usize {
    if a == b {
        index.count(a, a)
    } else {
        index.count(a, b) + index.count(b, a)
    }
}

/// The two per-third-mention terms of the pair score.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTerms<S> {
    /// Third mention in the object role.
    pub object: S,
    /// Third mention in the subject role.
    pub subject: S,
}

/// `Pr(a|b) + Pr(b|a)` over headword sets; zero when either set is empty.
fn overlap_term<S: Scalar>(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> S {
    if a.is_empty() || b.is_empty() {
        return S::zero();
    }
    let shared = S::from_count(a.intersection(b).count());
    shared.clone() / S::from_count(b.len()) + shared / S::from_count(a.len())
}

/// Similarity contribution of third mention `k` to the pair `(i, j)`.
pub fn similarity_component<S: Scalar>(
    index: &RelationIndex,
    i: &str,
    j: &str,
    k: &str,
) -> Result<SimilarityTerms<S>, EmgError> {
    for m in [i, j, k] {
        require(index, m)?;
    }
    if k == i || k == j {
        return Err(EmgError::ThirdMentionCollision(k.to_string()));
    }
    Ok(SimilarityTerms {
        object: overlap_term(&index.headwords(i, k), &index.headwords(j, k)),
        subject: overlap_term(&index.headwords(k, i), &index.headwords(k, j)),
    })
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Symmetric pair scores (zeros omitted) and the resolved acceptance floor.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix<S> {
    scores: BTreeMap<(String, String), S>,
    alpha: S,
}

impl<S: Scalar> ScoreMatrix<S> {
    /// Builds a matrix from raw pair scores; non-positive scores are dropped.
    pub fn from_scores<I, A, B>(pairs: I, alpha: S) -> Self
    where
        I: IntoIterator<Item = (A, B, S)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let scores = pairs
            .into_iter()
            .filter(|(_, _, s)| *s > S::zero())
            .map(|(a, b, s)| (ordered(a.as_ref(), b.as_ref()), s))
            .collect();
        Self { scores, alpha }
    }

    pub fn alpha(&self) -> &S {
        &self.alpha
    }

    /// `S_ij`, zero when the pair was not scored.
    pub fn score(&self, a: &str, b: &str) -> S {
        self.scores
            .get(&ordered(a, b))
            .cloned()
            .unwrap_or_else(S::zero)
    }

    /// Stored pairs with `a < b`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &S)> {
        self.scores.iter().map(|((a, b), s)| (a.as_str(), b.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Non-zero scores in ascending order.
    pub fn sorted_scores(&self) -> Vec<S> {
        let mut v: Vec<S> = self.scores.values().cloned().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        v
    }
}

/// Computes `S_ij` for every compatible pair and resolves `alpha`.
pub fn score_matrix<S: Scalar>(
    index: &RelationIndex,
    config: &GroupingConfig,
) -> Result<ScoreMatrix<S>, EmgError> {
    config.validate()?;
    let mentions: Vec<&str> = index.vocabulary().mentions().collect();
    let n = mentions.len();
    if n < 3 {
        return Err(EmgError::DegenerateVocabulary(n));
    }
    let pos: HashMap<&str, usize> = mentions.iter().enumerate().map(|(i, m)| (*m, i)).collect();

    // Headword sets keyed by (subject, object) position, plus neighbour lists.
    let mut heads: HashMap<(usize, usize), BTreeSet<&str>> = HashMap::new();
    let mut out_nb: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut in_nb: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (pair, rels) in index.edges() {
        let (s, o) = (pos[pair.subject.as_str()], pos[pair.object.as_str()]);
        heads
            .entry((s, o))
            .or_default()
            .extend(rels.keys().map(|r| r.head.as_str()));
        out_nb[s].insert(o);
        in_nb[o].insert(s);
    }
    let empty = BTreeSet::new();
    let hw = |s: usize, o: usize| heads.get(&(s, o)).unwrap_or(&empty);

    let mut scores = BTreeMap::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if direct_count(index, mentions[i], mentions[j]) >= config.gamma {
                continue;
            }
            let mut total = S::zero();
            // Only third mentions related to both i and j can contribute.
            for &k in out_nb[i].intersection(&out_nb[j]) {
                if k != i && k != j {
                    total = total + overlap_term::<S>(hw(i, k), hw(j, k));
                }
            }
            for &k in in_nb[i].intersection(&in_nb[j]) {
                if k != i && k != j {
                    total = total + overlap_term::<S>(hw(k, i), hw(k, j));
                }
            }
            if total > S::zero() {
                scores.insert((mentions[i].to_string(), mentions[j].to_string()), total);
            }
        }
    }

    let mut matrix = ScoreMatrix {
        scores,
        alpha: S::zero(),
    };
    matrix.alpha = match config.alpha_override {
        Some(a) => S::from_param(a),
        None => percentile_sorted(&matrix.sorted_scores(), config.alpha_percentile)
            .unwrap_or_else(S::zero),
    };
    Ok(matrix)
}

/// One actant: a set of mentions labelled by its most frequent member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMentionGroup {
    pub label: String,
    pub members: Vec<String>,
    pub frequencies: BTreeMap<String, usize>,
}

impl EntityMentionGroup {
    fn new(members: Vec<String>, vocab: &MentionVocabulary) -> Self {
        let frequencies: BTreeMap<String, usize> = members
            .iter()
            .map(|m| (m.clone(), vocab.frequency(m)))
            .collect();
        let label = frequencies
            .iter()
            .max_by(|(ma, fa), (mb, fb)| fa.cmp(fb).then_with(|| mb.cmp(ma)))
            .map(|(m, _)| m.clone())
            .unwrap_or_default();
        let mut members = members;
        members.sort();
        Self {
            label,
            members,
            frequencies,
        }
    }

    pub fn total_frequency(&self) -> usize {
        self.frequencies.values().sum()
    }
}

/// The grouping function: labelled groups plus mention → group position.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupingResult {
    groups: Vec<EntityMentionGroup>,
    assignment: BTreeMap<String, usize>,
}

impl GroupingResult {
    /// Builds groups from disjoint mention sets. Groups are ordered by total
    /// frequency (descending), then label.
    pub fn from_partition(
        parts: Vec<Vec<String>>,
        vocab: &MentionVocabulary,
    ) -> Result<Self, EmgError> {
        let groups = parts
            .into_iter()
            .filter(|p| !p.is_empty())
            .map(|p| EntityMentionGroup::new(p, vocab))
            .collect();
        Self::from_groups(groups)
    }

    fn from_groups(mut groups: Vec<EntityMentionGroup>) -> Result<Self, EmgError> {
        groups.sort_by(|a, b| {
            b.total_frequency()
                .cmp(&a.total_frequency())
                .then_with(|| a.label.cmp(&b.label))
        });
        let mut assignment = BTreeMap::new();
        for (gi, g) in groups.iter().enumerate() {
            for m in &g.members {
                if assignment.insert(m.clone(), gi).is_some() {
                    return Err(EmgError::OverlappingGroups(m.clone()));
                }
            }
        }
        Ok(Self { groups, assignment })
    }

    /// Every vocabulary mention in its own group.
    pub fn singletons(vocab: &MentionVocabulary) -> Self {
        let parts = vocab.mentions().map(|m| vec![m.to_string()]).collect();
        Self::from_partition(parts, vocab).expect("singletons are disjoint")
    }

    pub fn groups(&self) -> &[EntityMentionGroup] {
        &self.groups
    }

    pub fn group(&self, label: &str) -> Option<&EntityMentionGroup> {
        self.groups.iter().find(|g| g.label == label)
    }

    pub fn group_of(&self, mention: &str) -> Option<&EntityMentionGroup> {
        self.assignment.get(mention).map(|&i| &self.groups[i])
    }

    pub fn assignment(&self) -> &BTreeMap<String, usize> {
        &self.assignment
    }

    pub fn to_document<S: Scalar>(&self, matrix: Option<&ScoreMatrix<S>>) -> GroupsDocument {
        GroupsDocument {
            format_version: GROUPS_FORMAT_VERSION,
            alpha: matrix.and_then(|m| m.alpha().to_f64()),
            groups: self.groups.clone(),
            scores: matrix
                .map(|m| {
                    m.iter()
                        .map(|(a, b, s)| PairScore {
                            a: a.to_string(),
                            b: b.to_string(),
                            score: s.to_f64().unwrap_or(f64::NAN),
                        })
                        .collect()
                })
                .unwrap_or_default(),
        }
    }

    pub fn from_document(doc: GroupsDocument) -> Result<Self, EmgError> {
        if doc.format_version != GROUPS_FORMAT_VERSION {
            return Err(EmgError::Format(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        for g in &doc.groups {
            if !g.members.contains(&g.label) {
                return Err(EmgError::Format(format!(
                    "label {:?} is not a member of its group",
                    g.label
                )));
            }
        }
        Self::from_groups(doc.groups)
    }
}

/// Serialized grouping output: groups, resolved alpha and the non-zero scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupsDocument {
    pub format_version: u32,
    pub alpha: Option<f64>,
    pub groups: Vec<EntityMentionGroup>,
    #[serde(default)]
    pub scores: Vec<PairScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub a: String,
    pub b: String,
    pub score: f64,
}

/// Ranked candidates for `mention`: descending score, then higher frequency, then name.
pub fn ranked_candidates<'a, S: Scalar>(
    matrix: &'a ScoreMatrix<S>,
    vocab: &MentionVocabulary,
    mention: &str,
) -> Vec<(&'a str, &'a S)> {
    let mut cands: Vec<(&str, &S)> = matrix
        .iter()
        .filter_map(|(a, b, s)| match (a == mention, b == mention) {
            (true, _) => Some((b, s)),
            (_, true) => Some((a, s)),
            _ => None,
        })
        .collect();
    cands.sort_by(|(ma, sa), (mb, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| vocab.frequency(mb).cmp(&vocab.frequency(ma)))
            .then_with(|| ma.cmp(mb))
    });
    cands
}

/// Candidates accepted for `mention`: scan the ranked list while scores stay at
/// or above alpha and stop before the first successive drop by a factor of at
/// least beta.
pub fn accepted_partners<'a, S: Scalar>(
    matrix: &'a ScoreMatrix<S>,
    vocab: &MentionVocabulary,
    mention: &str,
    beta: f64,
) -> Vec<(&'a str, &'a S)> {
    let beta = S::from_param(beta);
    let mut accepted: Vec<(&str, &S)> = Vec::new();
    for (cand, score) in ranked_candidates(matrix, vocab, mention) {
        if *score < *matrix.alpha() {
            break;
        }
        if let Some((_, prev)) = accepted.last() {
            if (*prev).clone() >= beta.clone() * score.clone() {
                break;
            }
        }
        accepted.push((cand, score));
    }
    accepted
}

/// Forms actant groups by merging accepted pairs, strongest first, and vetoing
/// any merge that would put an incompatible pair in one group.
pub fn form_groups<S: Scalar>(
    matrix: &ScoreMatrix<S>,
    index: &RelationIndex,
    config: &GroupingConfig,
) -> Result<GroupingResult, EmgError> {
    config.validate()?;
    let vocab = index.vocabulary();
    let mentions: Vec<&str> = vocab.mentions().collect();
    let pos: HashMap<&str, usize> = mentions.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    for (a, b, _) in matrix.iter() {
        require(index, a)?;
        require(index, b)?;
    }

    let mut accepted: Vec<(usize, usize, &S)> = Vec::new();
    for (i, m) in mentions.iter().enumerate() {
        for (cand, score) in accepted_partners(matrix, vocab, m, config.beta) {
            let j = pos[cand];
            accepted.push((i.min(j), i.max(j), score));
        }
    }
    accepted.sort_by(|(a1, b1, s1), (a2, b2, s2)| {
        s2.partial_cmp(s1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| (a1, b1).cmp(&(a2, b2)))
    });
    accepted.dedup_by(|x, y| x.0 == y.0 && x.1 == y.1);

    let mut uf = UnionFind::new(mentions.len());
    let mut members: Vec<Vec<usize>> = (0..mentions.len()).map(|i| vec![i]).collect();
    for (a, b, _) in accepted {
        let (ra, rb) = (uf.find(a), uf.find(b));
        if ra == rb {
            continue;
        }
        let clash = members[ra].iter().any(|&x| {
            members[rb]
                .iter()
                .any(|&y| direct_count(index, mentions[x], mentions[y]) >= config.gamma)
        });
        if clash {
            log::debug!("veto merge of {:?} and {:?}", mentions[a], mentions[b]);
            continue;
        }
        let root = uf.union(ra, rb);
        let other = if root == ra { rb } else { ra };
        let moved = std::mem::take(&mut members[other]);
        members[root].extend(moved);
    }

    let parts = uf
        .sets()
        .into_iter()
        .map(|set| set.into_iter().map(|i| mentions[i].to_string()).collect())
        .collect();
    GroupingResult::from_partition(parts, vocab)
}

/// Scores and groups in one call.
pub fn group_mentions(
    index: &RelationIndex,
    config: &GroupingConfig,
) -> Result<(GroupingResult, ScoreMatrix<f64>), EmgError> {
    let matrix = score_matrix::<f64>(index, config)?;
    let grouping = form_groups(&matrix, index, config)?;
    Ok((grouping, matrix))
}
