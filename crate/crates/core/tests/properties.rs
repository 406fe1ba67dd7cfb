use std::collections::BTreeSet;

use eud_core::conllu::{parse_conllu, parse_conllu_bytes, serialize_conllu, MwtRange, NodeId, Sentence, Word};
use eud_core::eval::{score_collapsed, universal_label, Metric};
use eud_core::graph::{
    check_connectivity, collapse_empty_nodes, merge_parallel_edges, split_parallel_edges, CollapsedGraph, Edge, EnhancedGraph,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LABELS: [&str; 8] = ["nsubj", "obj", "obl:in", "nmod:of", "conj:and", "acl:relcl", "ref", "advcl:if"];
const UPOS: [&str; 5] = ["NOUN", "VERB", "ADP", "PRON", "DET"];

fn label<R: Rng>(rng: &mut R) -> String {
    LABELS[rng.gen_range(0..LABELS.len())].to_string()
}

fn form<R: Rng>(rng: &mut R) -> String {
    let len = rng.gen_range(1..=6);
    (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

fn random_heads<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut heads = vec![0; n];
    for (k, &w) in order.iter().enumerate() {
        let h = rng.gen_range(0..=k);
        heads[w - 1] = if h == 0 { 0 } else { order[h - 1] };
    }
    heads
}

/// A well-formed sentence with empty nodes, token ranges and random
/// enhanced edges.
fn random_sentence(seed: u64) -> Sentence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=9);
    let heads = random_heads(n, &mut rng);
    let mut words = Vec::new();
    let mut empty = Vec::new();
    for i in 1..=n {
        let mut w = Word::new(i, form(&mut rng));
        w.lemma = form(&mut rng);
        w.upos = UPOS[rng.gen_range(0..UPOS.len())].to_string();
        w.head = Some(NodeId::word(heads[i - 1]));
        w.deprel = Some(label(&mut rng));
        if rng.gen_bool(0.3) {
            w.misc = "SpaceAfter=No".into();
        }
        words.push(w);
        for minor in 1..=rng.gen_range(0..=1usize) {
            let id = NodeId::empty(i, minor);
            let mut e = Word::new(i, form(&mut rng));
            e.id = id;
            words.push(e);
            empty.push(id);
        }
    }
    let mut mwt_ranges = Vec::new();
    let mut i = 1;
    while i < n {
        if rng.gen_bool(0.2) {
            mwt_ranges.push(MwtRange {
                start: i,
                end: i + 1,
                form: form(&mut rng),
                misc: "_".into(),
            });
            i += 2;
        } else {
            i += 1;
        }
    }
    let mut enhanced = EnhancedGraph::with_empty_nodes(n, empty);
    let nodes: Vec<NodeId> = std::iter::once(NodeId::ROOT).chain(enhanced.nodes()).collect();
    for &dep in &nodes[1..] {
        for _ in 0..rng.gen_range(0..=2) {
            let head = nodes[rng.gen_range(0..nodes.len())];
            if head != dep {
                enhanced.add_edge(Edge::new(head, dep, label(&mut rng))).unwrap();
            }
        }
    }
    Sentence {
        comments: vec![format!("# sent_id = s{seed}"), "# text = x".into()],
        words,
        mwt_ranges,
        enhanced,
    }
}

/// Random graph whose empty-node edges only point to later empty nodes,
/// so collapsing never meets a cycle.
fn random_enhanced(seed: u64) -> EnhancedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=8);
    let empty: Vec<NodeId> = (1..=n).filter(|_| rng.gen_bool(0.4)).map(|i| NodeId::empty(i, 1)).collect();
    let mut g = EnhancedGraph::with_empty_nodes(n, empty);
    let nodes: Vec<NodeId> = std::iter::once(NodeId::ROOT).chain(g.nodes()).collect();
    for &h in &nodes {
        for &d in &nodes[1..] {
            let ordered = !(h.is_empty_node() && d.is_empty_node()) || h < d;
            if h != d && ordered && rng.gen_bool(0.2) {
                g.add_edge(Edge::new(h, d, label(&mut rng))).unwrap();
            }
        }
    }
    g
}

fn random_collapsed<R: Rng>(n: usize, density: f64, rng: &mut R) -> CollapsedGraph {
    let mut g = CollapsedGraph::new(n);
    for h in 0..=n {
        for d in 1..=n {
            if h != d && rng.gen_bool(density) {
                for _ in 0..rng.gen_range(1..=3) {
                    g.add_arc(h, d, label(rng)).unwrap();
                }
            }
        }
    }
    g
}

/// Surface words reachable from the root, following edges through any
/// node.
fn reachable_words(g: &EnhancedGraph) -> BTreeSet<usize> {
    g.reachable_from_root()
        .into_iter()
        .filter(|id| !id.is_empty_node() && !id.is_root())
        .map(|id| id.major)
        .collect()
}

/// Labeled edges after splitting merged labels, as a sorted list with
/// repetitions.
fn edge_keys(g: &CollapsedGraph, universal: bool) -> Vec<(usize, usize, String)> {
    let mut keys: Vec<_> = g
        .edges()
        .flat_map(|e| {
            e.label.split('+').map(move |l| {
                let l = if universal { universal_label(l) } else { l.to_string() };
                (e.head.major, e.dep.major, l)
            })
        })
        .collect();
    keys.sort();
    keys
}

/// Size of the multiset intersection of two sorted lists.
fn common(a: &[(usize, usize, String)], b: &[(usize, usize, String)]) -> usize {
    let (mut i, mut j, mut m) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                m += 1;
                i += 1;
                j += 1;
            }
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn conllu_round_trip(seed in any::<u64>()) {
        let s = random_sentence(seed);
        let text = serialize_conllu(std::slice::from_ref(&s)).unwrap();
        let back = parse_conllu(&text).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0], &s);
        prop_assert_eq!(serialize_conllu(&back).unwrap(), text);
    }

    #[test]
    fn conllu_never_panics_on_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
        let _ = parse_conllu_bytes(&bytes);
    }

    #[test]
    fn conllu_never_panics_on_near_miss_lines(
        lines in proptest::collection::vec(
            proptest::collection::vec(
                prop_oneof![
                    Just("1".to_string()), Just("2".to_string()), Just("0".to_string()), Just("1.1".to_string()),
                    Just("1-2".to_string()), Just("_".to_string()), Just("x".to_string()), Just("0:root".to_string()),
                    Just("1:nsubj|2:obj".to_string()), Just("1.1:conj".to_string()), Just("3-1".to_string()),
                    Just("".to_string()), Just("#".to_string()), Just("9".to_string()), Just("1:".to_string()),
                ],
                8..=11,
            ),
            0..8,
        )
    ) {
        let text: String = lines.iter().map(|cols| cols.join("\t") + "\n").collect();
        if let Ok(sentences) = parse_conllu(&text) {
            // whatever parses must serialize
            let _ = serialize_conllu(&sentences);
        }
    }

    #[test]
    fn merge_then_split_is_identity(seed in any::<u64>(), n in 1usize..10, density in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_collapsed(n, density, &mut rng);
        let merged = merge_parallel_edges(&g);
        prop_assert_eq!(&split_parallel_edges(&merged), &g);
        let pairs: BTreeSet<(NodeId, NodeId)> = merged.edges().map(|e| (e.head, e.dep)).collect();
        prop_assert_eq!(pairs.len(), merged.edge_count());
        prop_assert_eq!(&merge_parallel_edges(&merged), &merged);
    }

    #[test]
    fn collapse_preserves_word_reachability(seed in any::<u64>()) {
        let g = random_enhanced(seed);
        let c = collapse_empty_nodes(&g).unwrap();
        prop_assert!(c.empty_nodes().is_empty());
        prop_assert!(c.edges().all(|e| !e.head.is_empty_node() && !e.dep.is_empty_node()));
        prop_assert_eq!(reachable_words(&c), reachable_words(&g));
        let connected_words = (1..=g.len()).all(|w| reachable_words(&g).contains(&w));
        prop_assert_eq!(check_connectivity(&c).is_connected(), connected_words);
    }

    #[test]
    fn evaluator_matches_set_oracle(seed in any::<u64>(), sentences in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gold = Vec::new();
        let mut system = Vec::new();
        for _ in 0..sentences {
            let n = rng.gen_range(1..8);
            gold.push(random_collapsed(n, 0.3, &mut rng));
            system.push(random_collapsed(n, 0.3, &mut rng));
        }
        for (metric, universal) in [(Metric::Elas, false), (Metric::Eulas, true)] {
            let r = score_collapsed(&gold, &system, metric, None).unwrap();
            let (mut g, mut s, mut m) = (0, 0, 0);
            for (a, b) in gold.iter().zip(&system) {
                let (ka, kb) = (edge_keys(a, universal), edge_keys(b, universal));
                g += ka.len();
                s += kb.len();
                m += common(&ka, &kb);
            }
            prop_assert_eq!((r.gold, r.system, r.matched), (g, s, m));

            let swapped = score_collapsed(&system, &gold, metric, None).unwrap();
            prop_assert_eq!(swapped.precision, r.recall);
            prop_assert_eq!(swapped.recall, r.precision);
            prop_assert!((swapped.f1 - r.f1).abs() < 1e-12);
        }
        let e = score_collapsed(&gold, &system, Metric::Elas, None).unwrap();
        let u = score_collapsed(&gold, &system, Metric::Eulas, None).unwrap();
        prop_assert!(u.f1 >= e.f1);
        prop_assert!(u.matched >= e.matched);
        let total: usize = gold.iter().map(|g| g.edge_count()).sum();
        if total > 0 {
            prop_assert_eq!(score_collapsed(&gold, &gold, Metric::Elas, None).unwrap().f1, 1.0);
        }
    }
}
