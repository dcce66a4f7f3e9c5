mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{direct, index_of, mention, oracle_scores, triples, Triple};
use narrative_core::corpus::{RelationIndex, TupleCorpus};
use narrative_core::embedding::cosine_similarity;
use narrative_core::emg::{
    form_groups, group_mentions, score_matrix, similarity_component, GroupingConfig, GroupingResult,
};
use narrative_core::graph::{
    apply_thresholds, assemble_network, classify_meta_actants, NarrativeNetwork, Thresholds, DEFAULT_MARKERS,
};
use narrative_core::iarc::{ClusterSet, RelationCluster};
use narrative_core::kmeans::{fit_range, KMeansParams};
use narrative_core::synth::{generate_corpus, planted_narrative, PlantedSpec, SynthConfig};
use num_rational::Rational64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn low_alpha(gamma: usize) -> GroupingConfig {
    GroupingConfig {
        gamma,
        alpha_override: Some(0.0),
        ..GroupingConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn scores_match_oracle(t in triples(8, 5, 40), gamma in 1usize..5) {
        let index = index_of(&t);
        let config = GroupingConfig { gamma, ..GroupingConfig::default() };
        let expected = oracle_scores(&t, gamma);
        let exact = score_matrix::<Rational64>(&index, &config).unwrap();
        let got: BTreeMap<(String, String), Rational64> =
            exact.iter().map(|(a, b, s)| ((a.to_string(), b.to_string()), *s)).collect();
        prop_assert_eq!(&got, &expected);
        let float = score_matrix::<f64>(&index, &config).unwrap();
        prop_assert_eq!(float.len(), expected.len());
        for ((a, b), s) in &expected {
            let want = *s.numer() as f64 / *s.denom() as f64;
            prop_assert!((float.score(a, b) - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn scores_are_symmetric_and_non_negative(t in triples(8, 5, 40)) {
        let index = index_of(&t);
        let m = score_matrix::<f64>(&index, &GroupingConfig::default()).unwrap();
        let mentions: Vec<&str> = index.vocabulary().mentions().collect();
        for a in &mentions {
            for b in &mentions {
                prop_assert_eq!(m.score(a, b), m.score(b, a));
                prop_assert!(m.score(a, b) >= 0.0);
            }
        }
        prop_assert!(m.iter().all(|(_, _, s)| *s > 0.0));
    }

    #[test]
    fn components_stay_in_range(t in triples(6, 4, 30)) {
        let index = index_of(&t);
        let mentions: Vec<&str> = index.vocabulary().mentions().collect();
        for i in &mentions {
            for j in &mentions {
                for k in mentions.iter().filter(|k| *k != i && *k != j) {
                    let c = similarity_component::<Rational64>(&index, i, j, k).unwrap();
                    for v in [c.object, c.subject] {
                        prop_assert!(v >= Rational64::from_integer(0) && v <= Rational64::from_integer(2));
                    }
                }
            }
        }
    }

    #[test]
    fn shared_headword_never_lowers_score(
        t in triples(7, 4, 30),
        pick in (0usize..7, 0usize..7, 0usize..7),
        h in 0usize..6,
        subject_role in any::<bool>(),
    ) {
        let (i, j, k) = pick;
        prop_assume!(i != j && j != k && i != k);
        let config = GroupingConfig { gamma: 1000, ..GroupingConfig::default() };
        let mut more = t.clone();
        if subject_role {
            more.extend([(k, h, i), (k, h, j)]);
        } else {
            more.extend([(i, h, k), (j, h, k)]);
        }
        let before = oracle_scores(&t, usize::MAX);
        let after = score_matrix::<Rational64>(&index_of(&more), &config).unwrap();
        let key = if mention(i) < mention(j) { (mention(i), mention(j)) } else { (mention(j), mention(i)) };
        let old = before.get(&key).copied().unwrap_or_default();
        prop_assert!(after.score(&key.0, &key.1) >= old);
    }

    #[test]
    fn groups_never_hold_incompatible_pairs(t in triples(8, 3, 60), gamma in 1usize..4) {
        let index = index_of(&t);
        let (grouping, _) = group_mentions(&index, &low_alpha(gamma)).unwrap();
        for g in grouping.groups() {
            for a in &g.members {
                for b in &g.members {
                    if a < b {
                        let (ia, ib) = (a[1..].parse().unwrap(), b[1..].parse().unwrap());
                        prop_assert!(direct(&t, ia, ib) < gamma, "{} and {} share a group", a, b);
                    }
                }
            }
        }
    }

    #[test]
    fn grouping_partitions_vocabulary_and_labels(t in triples(8, 3, 50)) {
        let index = index_of(&t);
        let (grouping, _) = group_mentions(&index, &low_alpha(3)).unwrap();
        let mut seen = BTreeSet::new();
        for g in grouping.groups() {
            for m in &g.members {
                prop_assert!(seen.insert(m.clone()), "{} appears twice", m);
                prop_assert_eq!(grouping.group_of(m).map(|x| &x.label), Some(&g.label));
            }
            let best = g.members.iter().max_by(|a, b| {
                g.frequencies[*a].cmp(&g.frequencies[*b]).then_with(|| b.cmp(a))
            });
            prop_assert_eq!(Some(&g.label), best);
        }
        let vocab: BTreeSet<String> = index.vocabulary().mentions().map(str::to_string).collect();
        prop_assert_eq!(seen, vocab);
    }

    #[test]
    fn ingest_is_idempotent(t in triples(8, 3, 80), floor in 1usize..6) {
        let corpus = TupleCorpus::new(common::tuples_of(&t));
        let (once, v1) = corpus.filter_and_dedup(floor).unwrap();
        let (twice, v2) = once.filter_and_dedup(floor).unwrap();
        prop_assert_eq!(once.tuples(), twice.tuples());
        prop_assert_eq!(v1, v2);
    }

    #[test]
    fn index_and_groups_round_trip(t in triples(8, 4, 40)) {
        let index = index_of(&t);
        let back = RelationIndex::from_json(&index.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), index.to_json());
        let (grouping, matrix) = group_mentions(&index, &GroupingConfig::default()).unwrap();
        let doc = grouping.to_document(Some(&matrix));
        let text = serde_json::to_string(&doc).unwrap();
        let again = GroupingResult::from_document(serde_json::from_str(&text).unwrap()).unwrap();
        prop_assert_eq!(again, grouping);
    }

    #[test]
    fn cosine_symmetric_and_scale_invariant(
        a in prop::collection::vec(-10.0f64..10.0, 4),
        b in prop::collection::vec(-10.0f64..10.0, 4),
        scale in 0.01f64..100.0,
    ) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
        let ab = cosine_similarity(&a, &b).unwrap();
        prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
        let scaled: Vec<f64> = a.iter().map(|x| x * scale).collect();
        prop_assert!((cosine_similarity(&scaled, &b).unwrap() - ab).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn kmeans_distortion_non_increasing(
        pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..20),
        seed in any::<u64>(),
    ) {
        let w = vec![1.0; pts.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fits = fit_range(&pts, &w, 6, &KMeansParams::default(), &mut rng);
        for pair in fits.windows(2) {
            prop_assert!(pair[1].distortion <= pair[0].distortion);
        }
    }

    #[test]
    fn thresholds_monotone_and_meta_rule_structural(
        counts in prop::collection::vec((0usize..5, 0usize..5, 1usize..20, any::<bool>()), 0..12),
        low in 0usize..15,
        raise in 0usize..10,
    ) {
        let mentions: Vec<(String, usize)> = (0..5).map(|i| (mention(i), 10)).collect();
        let vocab = narrative_core::corpus::MentionVocabulary {
            min_count: 1,
            counts: mentions.into_iter().collect(),
        };
        let grouping = GroupingResult::singletons(&vocab);
        let mut sets: BTreeMap<(usize, usize), ClusterSet<f64>> = BTreeMap::new();
        for (s, t, n, prep) in counts {
            sets.entry((s, t)).or_insert_with(|| ClusterSet {
                source: mention(s),
                target: mention(t),
                chosen_k: 1,
                clusters: vec![RelationCluster {
                    members: vec![if prep { "in the story".into() } else { "meets".into() }],
                    instances: n,
                    centroid: vec![],
                    dispersion: 1.0,
                }],
                distortions: vec![],
            });
        }
        let sets: Vec<ClusterSet<f64>> = sets.into_values().collect();
        let net = assemble_network(&grouping, &sets).unwrap();
        let th = |v| Thresholds { verified_min: v, unverified_min: v, keep_pruned: false };
        let a = apply_thresholds(net.clone(), th(low));
        let b = apply_thresholds(net.clone(), th(low + raise));
        prop_assert!(b.edges.iter().all(|e| a.edges.contains(e)));
        prop_assert_eq!(&a.nodes, &net.nodes);
        let classified = classify_meta_actants(a, &DEFAULT_MARKERS);
        let reloaded = NarrativeNetwork::from_json(&classified.to_json()).unwrap();
        prop_assert_eq!(&classify_meta_actants(reloaded.clone(), &DEFAULT_MARKERS), &classified);
        prop_assert_eq!(reloaded, classified);
    }
}

/// Independent grouping reference: accept decisions per mention from the
/// ranked oracle scores, then transitive closure by Warshall's algorithm.
fn oracle_groups(t: &[Triple], gamma: usize, percentile: f64, beta: i64) -> BTreeSet<BTreeSet<String>> {
    let scores = oracle_scores(t, gamma);
    let mut sorted: Vec<Rational64> = scores.values().copied().collect();
    sorted.sort();
    let pos = percentile / 100.0 * (sorted.len() - 1) as f64;
    let (lo, frac) = (pos.floor() as usize, pos - pos.floor());
    let alpha = if frac == 0.0 {
        sorted[lo]
    } else {
        let f = Rational64::approximate_float(frac).unwrap();
        sorted[lo] + (sorted[lo + 1] - sorted[lo]) * f
    };
    let ms: Vec<usize> = t.iter().flat_map(|&(s, _, o)| [s, o]).collect::<BTreeSet<_>>().into_iter().collect();
    let freq = |m: usize| t.iter().map(|&(s, _, o)| (s == m) as usize + (o == m) as usize).sum::<usize>();
    let n = ms.len();
    let mut reach = vec![vec![false; n]; n];
    for (x, &i) in ms.iter().enumerate() {
        reach[x][x] = true;
        let mut ranked: Vec<(Rational64, usize, usize)> = ms
            .iter()
            .enumerate()
            .filter(|&(_, &j)| j != i)
            .filter_map(|(y, &j)| {
                let key = if mention(i) < mention(j) { (mention(i), mention(j)) } else { (mention(j), mention(i)) };
                scores.get(&key).map(|s| (*s, y, j))
            })
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(freq(b.2).cmp(&freq(a.2))).then(mention(a.2).cmp(&mention(b.2))));
        let mut prev: Option<Rational64> = None;
        for (s, y, _) in ranked {
            if s < alpha || prev.is_some_and(|p| p >= s * beta) {
                break;
            }
            reach[x][y] = true;
            reach[y][x] = true;
            prev = Some(s);
        }
    }
    for k in 0..n {
        for a in 0..n {
            for b in 0..n {
                if reach[a][k] && reach[k][b] {
                    reach[a][b] = true;
                }
            }
        }
    }
    (0..n)
        .map(|a| (0..n).filter(|&b| reach[a][b]).map(|b| mention(ms[b])).collect())
        .collect()
}

#[test]
fn two_planted_cliques_match_reference_grouping() {
    // aliases {m0,m1,m2} and {m3,m4,m5} relate to the same third parties with
    // clique-specific headwords and never to each other
    let mut t: Vec<Triple> = Vec::new();
    let (hub_x, hub_y) = (6, 7);
    for alias in 0..6 {
        let base = if alias < 3 { 0 } else { 4 };
        for rep in 0..2 {
            t.push((alias, base + rep, hub_x));
            t.push((hub_y, base + 2 + rep, alias));
        }
    }
    t.extend([(hub_x, 8, hub_y), (hub_x, 9, hub_y), (hub_y, 8, hub_x)]);
    let index = index_of(&t);
    let (grouping, _) = group_mentions(&index, &GroupingConfig::default()).unwrap();
    let got: BTreeSet<BTreeSet<String>> = grouping
        .groups()
        .iter()
        .map(|g| g.members.iter().cloned().collect())
        .collect();
    let reference = oracle_groups(&t, 3, 75.0, 2);
    assert_eq!(got, reference);
    let cliques: BTreeSet<BTreeSet<String>> = [vec![0, 1, 2], vec![3, 4, 5], vec![6], vec![7]]
        .into_iter()
        .map(|c| c.into_iter().map(mention).collect())
        .collect();
    assert_eq!(got, cliques);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grouping_matches_reference_without_vetoes(t in triples(7, 3, 30)) {
        let index = index_of(&t);
        let config = GroupingConfig { gamma: 1000, ..GroupingConfig::default() };
        let grouping = form_groups(&score_matrix::<Rational64>(&index, &config).unwrap(), &index, &config).unwrap();
        let got: BTreeSet<BTreeSet<String>> =
            grouping.groups().iter().map(|g| g.members.iter().cloned().collect()).collect();
        prop_assume!(!oracle_scores(&t, 1000).is_empty());
        prop_assert_eq!(got, oracle_groups(&t, 1000, 75.0, 2));
    }
}

#[test]
fn synth_generation_is_seed_deterministic() {
    let model = planted_narrative(&PlantedSpec::default(), 21);
    let cfg = SynthConfig { n_reviews: 300, seed: 4, ..SynthConfig::default() };
    let (a, ka) = generate_corpus(&model, &cfg).unwrap();
    let (b, kb) = generate_corpus(&model, &cfg).unwrap();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert_eq!(ka, kb);
}
