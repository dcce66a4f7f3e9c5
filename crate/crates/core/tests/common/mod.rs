//! Shared fixtures and independent reference implementations.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use narrative_core::corpus::{Pattern, RelationIndex, RelationTuple, TupleCorpus};
use num_rational::Rational64;
use proptest::prelude::*;

/// `(subject, relation head, object)` with mention and head indexes.
pub type Triple = (usize, usize, usize);

pub fn mention(i: usize) -> String {
    format!("m{i}")
}

pub fn head(h: usize) -> String {
    format!("h{h}")
}

pub fn tuples_of(triples: &[Triple]) -> Vec<RelationTuple> {
    triples
        .iter()
        .enumerate()
        .map(|(n, &(s, h, o))| RelationTuple {
            review_id: format!("review{n}"),
            sentence_id: 0,
            arg1: mention(s),
            arg1_head: mention(s),
            rel: format!("{} it", head(h)),
            rel_head: head(h),
            arg2: mention(o),
            arg2_head: mention(o),
            pattern: Pattern::Svo,
        })
        .collect()
}

pub fn index_of(triples: &[Triple]) -> RelationIndex {
    let (corpus, vocab) = TupleCorpus::new(tuples_of(triples)).filter_and_dedup(1).unwrap();
    RelationIndex::build(&corpus, vocab).unwrap()
}

/// Random triples over at most `mentions` mentions and `heads` headwords,
/// always touching at least three mentions.
pub fn triples(mentions: usize, heads: usize, max_len: usize) -> impl Strategy<Value = Vec<Triple>> {
    prop::collection::vec((0..mentions, 0..heads, 0..mentions), 3..=max_len)
        .prop_filter("needs three mentions", |t| {
            t.iter().flat_map(|&(s, _, o)| [s, o]).collect::<BTreeSet<_>>().len() >= 3
        })
}

/// Direct relation instances between two mentions, both directions.
pub fn direct(triples: &[Triple], a: usize, b: usize) -> usize {
    triples
        .iter()
        .filter(|&&(s, _, o)| (s == a && o == b) || (s == b && o == a))
        .count()
}

fn heads_between(triples: &[Triple], s: usize, o: usize) -> BTreeSet<usize> {
    triples
        .iter()
        .filter(|&&(ts, _, to)| ts == s && to == o)
        .map(|&(_, h, _)| h)
        .collect()
}

fn conditional(a: &BTreeSet<usize>, given: &BTreeSet<usize>) -> Rational64 {
    if given.is_empty() {
        return Rational64::from_integer(0);
    }
    Rational64::new(a.intersection(given).count() as i64, given.len() as i64)
}

/// Straight transcription of the pair score: sum over every third mention of
/// both conditional directions for the object-role and subject-role headword
/// sets. Incompatible pairs and zero scores are left out.
pub fn oracle_scores(triples: &[Triple], gamma: usize) -> BTreeMap<(String, String), Rational64> {
    let ms: BTreeSet<usize> = triples.iter().flat_map(|&(s, _, o)| [s, o]).collect();
    let mut out = BTreeMap::new();
    for &i in &ms {
        for &j in &ms {
            if mention(i) >= mention(j) || direct(triples, i, j) >= gamma {
                continue;
            }
            let mut total = Rational64::from_integer(0);
            for &k in ms.iter().filter(|&&k| k != i && k != j) {
                let (tik, tjk) = (heads_between(triples, i, k), heads_between(triples, j, k));
                let (tki, tkj) = (heads_between(triples, k, i), heads_between(triples, k, j));
                total += conditional(&tik, &tjk) + conditional(&tjk, &tik);
                total += conditional(&tki, &tkj) + conditional(&tkj, &tki);
            }
            if total > Rational64::from_integer(0) {
                out.insert((mention(i), mention(j)), total);
            }
        }
    }
    out
}
