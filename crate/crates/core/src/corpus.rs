//! Relation tuple loading, frequency filtering and the directed mention-pair index.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default per-mention frequency floor.
pub const DEFAULT_MIN_COUNT: usize = 50;

/// Version tag written into serialized index documents.
pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {malformed} of {total} records are malformed (first at line {first_line}: {first_reason})")]
    TooManyMalformed {
        path: String,
        malformed: usize,
        total: usize,
        first_line: usize,
        first_reason: String,
    },
    #[error("tuple references mention {0:?} outside the vocabulary")]
    NotInVocabulary(String),
    #[error("index document: {0}")]
    Format(String),
    #[error("min_count must be at least 1")]
    InvalidFloor,
}

/// Syntactic pattern a tuple was extracted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pattern {
    #[serde(rename = "SVO")]
    Svo,
    #[serde(rename = "SVP")]
    Svp,
    #[serde(rename = "APPOS")]
    Appos,
    #[serde(rename = "SVCOP")]
    Svcop,
    #[serde(rename = "SRL")]
    Srl,
}

/// One extracted `(arg1, rel, arg2)` instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTuple {
    pub review_id: String,
    pub sentence_id: u64,
    pub arg1: String,
    pub arg1_head: String,
    pub rel: String,
    pub rel_head: String,
    pub arg2: String,
    pub arg2_head: String,
    pub pattern: Pattern,
}

impl RelationTuple {
    /// Checks field invariants and canonicalizes heads to lowercase.
    ///
    /// Heads may contain internal spaces (multi-word mentions are opaque strings).
    pub fn normalized(mut self) -> Result<Self, String> {
        for (name, value) in [("arg1", &self.arg1), ("arg2", &self.arg2), ("rel", &self.rel)] {
            if value.trim().is_empty() {
                return Err(format!("{name} is empty"));
            }
        }
        for (name, head) in [
            ("arg1_head", &mut self.arg1_head),
            ("rel_head", &mut self.rel_head),
            ("arg2_head", &mut self.arg2_head),
        ] {
            let canon = head.trim().to_lowercase();
            if canon.is_empty() {
                return Err(format!("{name} is empty"));
            }
            *head = canon;
        }
        Ok(self)
    }

    fn dedup_key(&self) -> (&str, u64, &str, &str, &str) {
        (
            &self.review_id,
            self.sentence_id,
            &self.arg1_head,
            &self.rel_head,
            &self.arg2_head,
        )
    }
}

/// A line of the tuple file that was not loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

/// Ordered tuple list plus per-mention occurrence counts (subject and object roles jointly).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TupleCorpus {
    tuples: Vec<RelationTuple>,
    mention_counts: BTreeMap<String, usize>,
}

impl TupleCorpus {
    pub fn new(tuples: Vec<RelationTuple>) -> Self {
        let mention_counts = count_mentions(&tuples);
        Self {
            tuples,
            mention_counts,
        }
    }

    pub fn tuples(&self) -> &[RelationTuple] {
        &self.tuples
    }

    pub fn mention_counts(&self) -> &BTreeMap<String, usize> {
        &self.mention_counts
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Loads a JSON-lines tuple file.
    ///
    /// Malformed lines are skipped and reported; blank lines are ignored. More
    /// than half of the records being malformed is a fatal format error.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<SkippedLine>), CorpusError> {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = fs::File::open(path).map_err(io_err)?;
        let mut tuples = Vec::new();
        let mut skipped = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<RelationTuple>(&line)
                .map_err(|e| e.to_string())
                .and_then(RelationTuple::normalized);
            match parsed {
                Ok(t) => tuples.push(t),
                Err(reason) => skipped.push(SkippedLine {
                    line: idx + 1,
                    reason,
                }),
            }
        }
        let total = tuples.len() + skipped.len();
        if skipped.len() * 2 > total {
            let first = &skipped[0];
            return Err(CorpusError::TooManyMalformed {
                path: path.display().to_string(),
                malformed: skipped.len(),
                total,
                first_line: first.line,
                first_reason: first.reason.clone(),
            });
        }
        for s in &skipped {
            log::warn!("{}:{}: skipped tuple: {}", path.display(), s.line, s.reason);
        }
        Ok((Self::new(tuples), skipped))
    }

    /// Writes the corpus as JSON lines.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.tuples {
            out.push_str(&serde_json::to_string(t).expect("tuple serializes"));
            out.push('\n');
        }
        out
    }

    /// Collapses exact duplicates and drops tuples whose subject or object head
    /// falls below `min_count`.
    ///
    /// Counting happens after de-duplication and the filter is repeated until no
    /// mention drops below the floor, so the result is a fixpoint: applying it
    /// again with the same floor changes nothing.
    pub fn filter_and_dedup(
        &self,
        min_count: usize,
    ) -> Result<(TupleCorpus, MentionVocabulary), CorpusError> {
        if min_count == 0 {
            return Err(CorpusError::InvalidFloor);
        }
        let mut seen = HashSet::new();
        let mut tuples: Vec<RelationTuple> = self
            .tuples
            .iter()
            .filter(|t| seen.insert(t.dedup_key()))
            .cloned()
            .collect();
        loop {
            let counts = count_mentions(&tuples);
            let keep = |m: &str| counts.get(m).copied().unwrap_or(0) >= min_count;
            let before = tuples.len();
            tuples.retain(|t| keep(&t.arg1_head) && keep(&t.arg2_head));
            if tuples.len() == before {
                let corpus = TupleCorpus {
                    tuples,
                    mention_counts: counts,
                };
                let vocab = MentionVocabulary {
                    min_count,
                    counts: corpus.mention_counts.clone(),
                };
                return Ok((corpus, vocab));
            }
        }
    }
}

fn count_mentions(tuples: &[RelationTuple]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for t in tuples {
        *counts.entry(t.arg1_head.clone()).or_insert(0) += 1;
        *counts.entry(t.arg2_head.clone()).or_insert(0) += 1;
    }
    counts
}

/// Mentions that survived the frequency floor, with their occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionVocabulary {
    pub min_count: usize,
    pub counts: BTreeMap<String, usize>,
}

impl MentionVocabulary {
    pub fn contains(&self, mention: &str) -> bool {
        self.counts.contains_key(mention)
    }

    pub fn frequency(&self, mention: &str) -> usize {
        self.counts.get(mention).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Mentions in lexicographic order.
    pub fn mentions(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }
}

/// A relation phrase together with its lemmatized head.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub phrase: String,
    pub head: String,
}

/// Multiset of relations observed for one ordered mention pair.
pub type RelationMultiset = BTreeMap<Relation, usize>;

/// Directed mention pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MentionPair {
    pub subject: String,
    pub object: String,
}

impl MentionPair {
    pub fn new(subject: impl Into<String>, object: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            object: object.into(),
        }
    }
}

impl fmt::Display for MentionPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.subject, self.object)
    }
}

/// Directed mention-pair → relation multiset index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationIndex {
    edges: BTreeMap<MentionPair, RelationMultiset>,
    vocabulary: MentionVocabulary,
}

impl RelationIndex {
    /// Builds the index from a corpus already filtered to `vocab`.
    pub fn build(corpus: &TupleCorpus, vocab: MentionVocabulary) -> Result<Self, CorpusError> {
        let mut edges: BTreeMap<MentionPair, RelationMultiset> = BTreeMap::new();
        for t in corpus.tuples() {
            for m in [&t.arg1_head, &t.arg2_head] {
                if !vocab.contains(m) {
                    return Err(CorpusError::NotInVocabulary(m.clone()));
                }
            }
            let rel = Relation {
                phrase: t.rel.clone(),
                head: t.rel_head.clone(),
            };
            *edges
                .entry(MentionPair::new(&t.arg1_head, &t.arg2_head))
                .or_default()
                .entry(rel)
                .or_insert(0) += 1;
        }
        Ok(Self {
            edges,
            vocabulary: vocab,
        })
    }

    pub fn vocabulary(&self) -> &MentionVocabulary {
        &self.vocabulary
    }

    pub fn relations(&self, subject: &str, object: &str) -> Option<&RelationMultiset> {
        // BTreeMap lookups need an owned key; pairs are short strings.
        self.edges.get(&MentionPair::new(subject, object))
    }

    /// `|R_ik|`: number of relation instances from `subject` to `object`.
    pub fn count(&self, subject: &str, object: &str) -> usize {
        self.relations(subject, object)
            .map(|m| m.values().sum())
            .unwrap_or(0)
    }

    /// Distinct relation heads from `subject` to `object`.
    pub fn headwords(&self, subject: &str, object: &str) -> BTreeSet<&str> {
        self.relations(subject, object)
            .map(|m| m.keys().map(|r| r.head.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&MentionPair, &RelationMultiset)> {
        self.edges.iter()
    }

    /// Total relation instances over all pairs.
    pub fn total_instances(&self) -> usize {
        self.edges.values().flat_map(|m| m.values()).sum()
    }

    pub fn to_json(&self) -> String {
        let doc = IndexDocument {
            format_version: INDEX_FORMAT_VERSION,
            vocabulary: self.vocabulary.clone(),
            edges: self
                .edges
                .iter()
                .map(|(pair, rels)| IndexEdge {
                    source: pair.subject.clone(),
                    target: pair.object.clone(),
                    relations: rels
                        .iter()
                        .map(|(r, &count)| IndexRelation {
                            phrase: r.phrase.clone(),
                            head: r.head.clone(),
                            count,
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("index serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let doc: IndexDocument =
            serde_json::from_str(text).map_err(|e| CorpusError::Format(e.to_string()))?;
        if doc.format_version != INDEX_FORMAT_VERSION {
            return Err(CorpusError::Format(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        let mut edges = BTreeMap::new();
        for e in doc.edges {
            for m in [&e.source, &e.target] {
                if !doc.vocabulary.contains(m) {
                    return Err(CorpusError::NotInVocabulary(m.clone()));
                }
            }
            let mut rels = RelationMultiset::new();
            for r in e.relations {
                if r.count == 0 {
                    return Err(CorpusError::Format(format!(
                        "zero count for {:?} on {} -> {}",
                        r.phrase, e.source, e.target
                    )));
                }
                *rels
                    .entry(Relation {
                        phrase: r.phrase,
                        head: r.head,
                    })
                    .or_insert(0) += r.count;
            }
            edges.insert(MentionPair::new(e.source, e.target), rels);
        }
        Ok(Self {
            edges,
            vocabulary: doc.vocabulary,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexDocument {
    format_version: u32,
    vocabulary: MentionVocabulary,
    edges: Vec<IndexEdge>,
}

#[derive(Serialize, Deserialize)]
struct IndexEdge {
    source: String,
    target: String,
    relations: Vec<IndexRelation>,
}

#[derive(Serialize, Deserialize)]
struct IndexRelation {
    phrase: String,
    head: String,
    count: usize,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::io::Write;

    pub(crate) fn tuple(review: &str, sentence: u64, a: &str, rel: &str, head: &str, b: &str) -> RelationTuple {
        RelationTuple {
            review_id: review.into(),
            sentence_id: sentence,
            arg1: a.into(),
            arg1_head: a.into(),
            rel: rel.into(),
            rel_head: head.into(),
            arg2: b.into(),
            arg2_head: b.into(),
            pattern: Pattern::Svo,
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const BILBO: &str = r#"{"review_id":"r1","sentence_id":0,"arg1":"bilbo","arg1_head":"bilbo","rel":"found","rel_head":"find","arg2":"ring","arg2_head":"ring","pattern":"SVO"}"#;

    #[test]
    fn load_empty_file() {
        let f = write_lines(&[]);
        let (corpus, skipped) = TupleCorpus::load(f.path()).unwrap();
        assert!(corpus.is_empty());
        assert!(skipped.is_empty());
    }

    #[test]
    fn load_single_record() {
        let f = write_lines(&[BILBO]);
        let (corpus, _) = TupleCorpus::load(f.path()).unwrap();
        assert_eq!(corpus.len(), 1);
        let expected: BTreeMap<String, usize> =
            [("bilbo".to_string(), 1), ("ring".to_string(), 1)].into();
        assert_eq!(corpus.mention_counts(), &expected);
    }

    #[test]
    fn load_skips_malformed_lines() {
        let good = |i: usize| BILBO.replace("\"sentence_id\":0", &format!("\"sentence_id\":{i}"));
        let mut lines: Vec<String> = (0..8).map(good).collect();
        lines.insert(3, "{not json".into());
        lines.insert(7, BILBO.replace("\"SVO\"", "\"XYZ\""));
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let f = write_lines(&refs);
        let (corpus, skipped) = TupleCorpus::load(f.path()).unwrap();
        assert_eq!(corpus.len(), 8);
        assert_eq!(skipped.iter().map(|s| s.line).collect::<Vec<_>>(), vec![4, 8]);
    }

    #[test]
    fn unknown_fields_ignored_and_empty_heads_rejected() {
        let extra = BILBO.replace("\"pattern\"", "\"confidence\":0.9,\"pattern\"");
        let empty = BILBO.replace("\"arg2_head\":\"ring\"", "\"arg2_head\":\" \"");
        let f = write_lines(&[&extra, &extra, &empty]);
        let (corpus, skipped) = TupleCorpus::load(f.path()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(skipped.len(), 1);
        assert!(skipped[0].reason.contains("arg2_head"));
    }

    #[test]
    fn majority_malformed_is_fatal() {
        let f = write_lines(&[BILBO, "x", "y"]);
        assert!(matches!(
            TupleCorpus::load(f.path()),
            Err(CorpusError::TooManyMalformed { malformed: 2, total: 3, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            TupleCorpus::load("/nonexistent/tuples.jsonl"),
            Err(CorpusError::Io { .. })
        ));
    }

    #[test]
    fn floor_of_one_only_dedups() {
        let corpus = TupleCorpus::new(vec![
            tuple("r1", 0, "bilbo", "found", "find", "ring"),
            tuple("r1", 0, "bilbo", "finds", "find", "ring"),
            tuple("r2", 0, "bilbo", "found", "find", "ring"),
        ]);
        let (filtered, vocab) = corpus.filter_and_dedup(1).unwrap();
        assert_eq!(filtered.len(), 2);
        assert_eq!(vocab.len(), 2);
    }

    #[test]
    fn floor_removes_rare_mentions() {
        let mut tuples = Vec::new();
        for i in 0..30 {
            tuples.push(tuple(&format!("r{i}"), 0, "bilbo", "found", "find", "ring"));
        }
        for i in 0..3 {
            tuples.push(tuple(&format!("g{i}"), 0, "gollum", "lost", "lose", "ring"));
        }
        let corpus = TupleCorpus::new(tuples);
        assert_eq!(corpus.mention_counts()["gollum"], 3);
        let (filtered, vocab) = corpus.filter_and_dedup(30).unwrap();
        assert_eq!(filtered.len(), 30);
        assert!(!vocab.contains("gollum"));
        assert!(filtered.tuples().iter().all(|t| t.arg1_head != "gollum"));
        assert!(vocab.counts.values().all(|&c| c >= 30));
    }

    #[test]
    fn zero_floor_rejected() {
        assert!(matches!(
            TupleCorpus::default().filter_and_dedup(0),
            Err(CorpusError::InvalidFloor)
        ));
    }

    #[test]
    fn index_merges_heads_and_keeps_self_loops() {
        let corpus = TupleCorpus::new(vec![
            tuple("r1", 0, "bilbo", "find", "find", "ring"),
            tuple("r2", 0, "bilbo", "found", "find", "ring"),
            tuple("r3", 0, "gollum", "hates", "hate", "gollum"),
        ]);
        let (filtered, vocab) = corpus.filter_and_dedup(1).unwrap();
        let index = RelationIndex::build(&filtered, vocab).unwrap();
        assert_eq!(index.count("bilbo", "ring"), 2);
        assert_eq!(index.headwords("bilbo", "ring"), BTreeSet::from(["find"]));
        assert_eq!(index.count("ring", "bilbo"), 0);
        assert_eq!(index.count("gollum", "gollum"), 1);
        assert_eq!(index.total_instances(), filtered.len());
    }

    #[test]
    fn empty_index() {
        let index = RelationIndex::build(&TupleCorpus::default(), MentionVocabulary::default()).unwrap();
        assert_eq!(index.edges().count(), 0);
    }

    #[test]
    fn index_rejects_unfiltered_corpus() {
        let corpus = TupleCorpus::new(vec![tuple("r1", 0, "bilbo", "find", "find", "ring")]);
        let err = RelationIndex::build(&corpus, MentionVocabulary::default()).unwrap_err();
        assert!(matches!(err, CorpusError::NotInVocabulary(_)));
    }

    #[test]
    fn index_json_round_trip() {
        let corpus = TupleCorpus::new(vec![
            tuple("r1", 0, "bilbo", "find", "find", "ring"),
            tuple("r2", 1, "gandalf", "guides", "guide", "bilbo"),
        ]);
        let (filtered, vocab) = corpus.filter_and_dedup(1).unwrap();
        let index = RelationIndex::build(&filtered, vocab).unwrap();
        let text = index.to_json();
        assert!(text.contains("\"format_version\": 1"));
        assert_eq!(RelationIndex::from_json(&text).unwrap(), index);
    }
}
