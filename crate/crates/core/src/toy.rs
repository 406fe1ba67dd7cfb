//! Synthetic treebanks from a small English-like grammar with relative
//! clauses, coordination, control, prepositional phrases and adverbial
//! clauses, annotated with basic trees and enhanced graphs.
//!
//! Two dialects share all words but differ in label conventions, which
//! makes per-language finetuning observable.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conllu::{NodeId, Sentence, Word};
use crate::graph::{EnhancedGraph, Edge};

/// Label conventions of a toy corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dialect {
    /// `obl:<prep>` on verbal PPs, `acl:relcl` on relative clauses.
    Alpha,
    /// `nmod:<prep>` on verbal PPs, `acl` on relative clauses.
    Beta,
}

impl Dialect {
    pub fn name(self) -> &'static str {
        match self {
            Dialect::Alpha => "alpha",
            Dialect::Beta => "beta",
        }
    }
}

/// Rates of the optional constructions, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyConfig {
    pub dialect: Dialect,
    pub relative_clause: f64,
    pub coordination: f64,
    pub control: f64,
    pub verbal_pp: f64,
    pub nominal_pp: f64,
    pub adverbial: f64,
}

impl ToyConfig {
    pub fn new(dialect: Dialect) -> Self {
        ToyConfig {
            dialect,
            relative_clause: 0.35,
            coordination: 0.3,
            control: 0.15,
            verbal_pp: 0.3,
            nominal_pp: 0.15,
            adverbial: 0.15,
        }
    }

    /// No multi-head constructions: every enhanced graph has the shape of
    /// the basic tree.
    pub fn trees_only(dialect: Dialect) -> Self {
        ToyConfig {
            dialect,
            relative_clause: 0.0,
            coordination: 0.0,
            control: 0.0,
            verbal_pp: 0.3,
            nominal_pp: 0.15,
            adverbial: 0.0,
        }
    }
}

const DETERMINERS: [&str; 2] = ["the", "a"];
const NOUNS: [&str; 10] = ["dog", "cat", "man", "woman", "child", "bird", "farmer", "teacher", "fox", "horse"];
const PLACES: [&str; 6] = ["park", "house", "garden", "city", "forest", "river"];
const PREPOSITIONS: [&str; 4] = ["in", "near", "behind", "at"];
const TRANSITIVE: [(&str, &str); 6] = [
    ("sees", "see"),
    ("likes", "like"),
    ("chases", "chase"),
    ("finds", "find"),
    ("helps", "help"),
    ("follows", "follow"),
];
const INTRANSITIVE: [(&str, &str); 5] = [
    ("sleeps", "sleep"),
    ("runs", "run"),
    ("sings", "sing"),
    ("waits", "wait"),
    ("laughs", "laugh"),
];
const INFINITIVES: [&str; 5] = ["sleep", "run", "sing", "wait", "laugh"];
const CONTROL: [(&str, &str); 2] = [("wants", "want"), ("tries", "try")];
const SUBORDINATORS: [&str; 3] = ["if", "because", "when"];

struct Builder {
    words: Vec<Word>,
    extra: Vec<Edge>,
    /// Enhanced label of each word's basic attachment, if it differs.
    enhanced_label: Vec<Option<String>>,
    /// Words whose basic edge is not part of the enhanced graph.
    skip_basic: Vec<bool>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            words: Vec::new(),
            extra: Vec::new(),
            enhanced_label: Vec::new(),
            skip_basic: Vec::new(),
        }
    }

    fn add(&mut self, form: &str, lemma: &str, upos: &str) -> usize {
        let index = self.words.len() + 1;
        let mut w = Word::new(index, form);
        w.lemma = lemma.into();
        w.upos = upos.into();
        self.words.push(w);
        self.enhanced_label.push(None);
        self.skip_basic.push(false);
        index
    }

    fn attach(&mut self, dep: usize, head: usize, deprel: &str) {
        let w = &mut self.words[dep - 1];
        w.head = Some(NodeId::word(head));
        w.deprel = Some(deprel.into());
    }

    fn attach_enhanced(&mut self, dep: usize, head: usize, deprel: &str, enhanced: String) {
        self.attach(dep, head, deprel);
        self.enhanced_label[dep - 1] = Some(enhanced);
    }

    fn extra(&mut self, head: usize, dep: usize, label: &str) {
        self.extra.push(Edge::words(head, dep, label));
    }

    fn finish(self, comments: Vec<String>) -> Sentence {
        let n = self.words.len();
        let mut graph = EnhancedGraph::new(n);
        for (i, w) in self.words.iter().enumerate() {
            if self.skip_basic[i] {
                continue;
            }
            let label = self.enhanced_label[i].clone().unwrap_or_else(|| w.deprel.clone().expect("attached"));
            graph
                .add_edge(Edge::new(w.head.expect("attached"), w.id, label))
                .expect("valid toy edge");
        }
        for e in self.extra {
            graph.add_edge(e).expect("valid toy edge");
        }
        Sentence {
            comments,
            words: self.words,
            mwt_ranges: Vec::new(),
            enhanced: graph,
        }
    }
}

struct Generator<'a> {
    config: &'a ToyConfig,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p.clamp(0.0, 1.0))
    }

    fn pick<'s>(&mut self, items: &'s [&'s str]) -> &'s str {
        items.choose(&mut self.rng).expect("nonempty")
    }

    fn pick_verb(&mut self, items: &[(&'static str, &'static str)]) -> (&'static str, &'static str) {
        *items.choose(&mut self.rng).expect("nonempty")
    }

    /// Determiner plus noun; returns the noun.
    fn noun_phrase(&mut self, b: &mut Builder, nouns: &[&str], depth: usize) -> usize {
        let det = self.pick(&DETERMINERS);
        let det = b.add(det, det, "DET");
        let form = self.pick(nouns);
        let noun = b.add(form, form, "NOUN");
        b.attach(det, noun, "det");

        if depth == 0 && self.chance(self.config.nominal_pp) {
            let (pp, prep) = self.prepositional_phrase(b);
            b.attach_enhanced(pp, noun, "nmod", format!("nmod:{}", prep));
        }
        if depth == 0 && self.chance(self.config.relative_clause) {
            self.relative_clause(b, noun);
        }
        noun
    }

    /// Preposition, determiner, place noun; returns the noun and the
    /// preposition.
    fn prepositional_phrase(&mut self, b: &mut Builder) -> (usize, String) {
        let p = self.pick(&PREPOSITIONS);
        let prep = b.add(p, p, "ADP");
        let det = self.pick(&DETERMINERS);
        let det = b.add(det, det, "DET");
        let place = self.pick(&PLACES);
        let noun = b.add(place, place, "NOUN");
        b.attach(prep, noun, "case");
        b.attach(det, noun, "det");
        (noun, p.to_owned())
    }

    fn relative_clause(&mut self, b: &mut Builder, noun: usize) {
        let rel = b.add("that", "that", "PRON");
        b.skip_basic[rel - 1] = true;
        b.extra(noun, rel, "ref");
        let relcl = match self.config.dialect {
            Dialect::Alpha => "acl:relcl",
            Dialect::Beta => "acl",
        };

        let (form, lemma) = self.pick_verb(&TRANSITIVE);
        if self.chance(0.5) {
            // subject relative: the dog that sees the cat
            let verb = b.add(form, lemma, "VERB");
            let obj = self.noun_phrase(b, &NOUNS, 1);
            b.attach(rel, verb, "nsubj");
            b.attach(obj, verb, "obj");
            b.attach(verb, noun, relcl);
            b.extra(verb, noun, "nsubj");
        } else {
            // object relative: the dog that the cat sees
            let subj = self.noun_phrase(b, &NOUNS, 1);
            let verb = b.add(form, lemma, "VERB");
            b.attach(rel, verb, "obj");
            b.attach(subj, verb, "nsubj");
            b.attach(verb, noun, relcl);
            b.extra(verb, noun, "obj");
        }
    }

    /// Verb phrase after `subj`; returns the main verb.
    fn verb_phrase(&mut self, b: &mut Builder, subj: usize, depth: usize) -> usize {
        let verb = if self.chance(self.config.control) {
            let (form, lemma) = self.pick_verb(&CONTROL);
            let verb = b.add(form, lemma, "VERB");
            let to = b.add("to", "to", "PART");
            let inf = self.pick(&INFINITIVES);
            let inf = b.add(inf, inf, "VERB");
            b.attach(to, inf, "mark");
            b.attach(inf, verb, "xcomp");
            b.extra(inf, subj, "nsubj");
            verb
        } else if self.chance(0.5) {
            let (form, lemma) = self.pick_verb(&TRANSITIVE);
            let verb = b.add(form, lemma, "VERB");
            let obj = self.noun_phrase(b, &NOUNS, depth);
            b.attach(obj, verb, "obj");
            verb
        } else {
            let (form, lemma) = self.pick_verb(&INTRANSITIVE);
            b.add(form, lemma, "VERB")
        };
        b.attach(subj, verb, "nsubj");

        if self.chance(self.config.verbal_pp) {
            let (pp, prep) = self.prepositional_phrase(b);
            let (basic, enhanced) = match self.config.dialect {
                Dialect::Alpha => ("obl", format!("obl:{}", prep)),
                Dialect::Beta => ("nmod", format!("nmod:{}", prep)),
            };
            b.attach_enhanced(pp, verb, basic, enhanced);
        }
        verb
    }

    fn clause(&mut self, b: &mut Builder, depth: usize) -> usize {
        let subj = self.noun_phrase(b, &NOUNS, depth);
        let verb = self.verb_phrase(b, subj, depth);

        if depth == 0 && self.chance(self.config.coordination) {
            let and = b.add("and", "and", "CCONJ");
            let (form, lemma) = self.pick_verb(&INTRANSITIVE);
            let second = b.add(form, lemma, "VERB");
            b.attach(and, second, "cc");
            b.attach_enhanced(second, verb, "conj", "conj:and".into());
            b.extra(second, subj, "nsubj");
        }
        verb
    }

    fn sentence(&mut self, id: String) -> Sentence {
        let mut b = Builder::new();
        let main = self.clause(&mut b, 0);
        b.attach(main, 0, "root");

        if self.chance(self.config.adverbial) {
            let s = self.pick(&SUBORDINATORS);
            let mark = b.add(s, s, "SCONJ");
            let sub = self.clause(&mut b, 1);
            b.attach(mark, sub, "mark");
            b.attach_enhanced(sub, main, "advcl", format!("advcl:{}", s));
        }

        let text = b.words.iter().map(|w| w.form.as_str()).collect::<Vec<_>>().join(" ");
        b.finish(vec![format!("# sent_id = {}", id), format!("# text = {}", text)])
    }
}

/// `count` sentences drawn with a generator seeded by `seed`.
pub fn generate(config: &ToyConfig, count: usize, seed: u64) -> Vec<Sentence> {
    let mut g = Generator {
        config,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    (0..count)
        .map(|i| g.sentence(format!("{}-{}-{}", config.dialect.name(), seed, i + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::{parse_conllu, serialize_conllu};
    use crate::graph::{check_connectivity, collapse_empty_nodes, merge_parallel_edges};
    use crate::spanning::extract_spanning_tree;

    #[test]
    fn sentences_are_valid_and_connected() {
        for dialect in [Dialect::Alpha, Dialect::Beta] {
            let corpus = generate(&ToyConfig::new(dialect), 200, 7);
            let text = serialize_conllu(&corpus).unwrap();
            assert_eq!(parse_conllu(&text).unwrap(), corpus);
            for s in &corpus {
                assert!(check_connectivity(&s.enhanced).is_connected());
                let g = merge_parallel_edges(&collapse_empty_nodes(&s.enhanced).unwrap());
                let t = extract_spanning_tree(s, &g).unwrap();
                assert!(t.is_tree());
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let c = ToyConfig::new(Dialect::Alpha);
        assert_eq!(generate(&c, 20, 3), generate(&c, 20, 3));
        assert_ne!(generate(&c, 20, 3), generate(&c, 20, 4));
    }

    #[test]
    fn relative_clauses_create_cycles() {
        let mut c = ToyConfig::new(Dialect::Alpha);
        c.relative_clause = 1.0;
        let s = &generate(&c, 1, 0)[0];
        let refs: Vec<_> = s.enhanced.edges().filter(|e| e.label == "ref").collect();
        assert!(!refs.is_empty());
        let noun = refs[0].head;
        // the relative clause verb heads its antecedent
        assert!(s.enhanced.incoming(noun).count() >= 2);
    }
}
