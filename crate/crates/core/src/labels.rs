//! De-lexicalization of enhanced relation labels (`nmod:in` becomes
//! `nmod:[case]`), re-lexicalization of decoded graphs, and the lemma
//! lexicon that supplies function-word lemmas at parse time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use crate::conllu::Sentence;
use crate::graph::{CollapsedGraph, Edge, MERGE_SEPARATOR, PATH_SEPARATOR};
use crate::spanning::SpanningTree;
use crate::{Error, NodeId, Result};

/// Relations whose dependents' lemmas appear in enhanced label subtypes.
pub const DEFAULT_DELEX_RELATIONS: [&str; 3] = ["case", "mark", "cc"];

/// Relation attaching the further words of a multi-word function
/// expression ("because of", "as well as").
pub const FIXED_RELATION: &str = "fixed";

/// One `:`-separated subtype of a label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubtypePart {
    /// `[rel]`: the lemma of the dependent's child attached via `rel`.
    Placeholder(String),
    Literal(String),
}

impl fmt::Display for SubtypePart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubtypePart::Placeholder(rel) => write!(f, "[{}]", rel),
            SubtypePart::Literal(s) => f.write_str(s),
        }
    }
}

/// A single relation label (no `+` or `>` composition) split into its
/// universal part and subtypes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DelexLabel {
    pub universal: String,
    pub parts: Vec<SubtypePart>,
}

impl DelexLabel {
    pub fn parse(label: &str) -> Self {
        let mut pieces = label.split(':');
        let universal = pieces.next().unwrap_or_default().to_owned();
        let parts = pieces
            .map(|p| match p.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                Some(rel) => SubtypePart::Placeholder(rel.to_owned()),
                None => SubtypePart::Literal(p.to_owned()),
            })
            .collect();
        DelexLabel { universal, parts }
    }

    /// Every single-relation piece of a composite label.
    pub fn parse_composite(label: &str) -> Vec<DelexLabel> {
        label
            .split([MERGE_SEPARATOR, PATH_SEPARATOR])
            .map(DelexLabel::parse)
            .collect()
    }

    pub fn has_placeholder(&self) -> bool {
        self.parts.iter().any(|p| matches!(p, SubtypePart::Placeholder(_)))
    }
}

impl fmt::Display for DelexLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.universal)?;
        for p in &self.parts {
            write!(f, ":{}", p)?;
        }
        Ok(())
    }
}

/// Universal part of every component of a (possibly composite) label.
pub fn universal_parts(label: &str) -> impl Iterator<Item = &str> {
    label
        .split(MERGE_SEPARATOR)
        .map(|c| c.split(PATH_SEPARATOR).next_back().unwrap_or(c))
        .map(|c| c.split(':').next().unwrap_or(c))
}

/// Apply `f` to every single-relation piece of a composite label and
/// reassemble it with the original separators.
fn map_components(label: &str, mut f: impl FnMut(&str) -> String) -> String {
    label
        .split(MERGE_SEPARATOR)
        .map(|merged| {
            merged
                .split(PATH_SEPARATOR)
                .map(&mut f)
                .collect::<Vec<_>>()
                .join(&PATH_SEPARATOR.to_string())
        })
        .collect::<Vec<_>>()
        .join(&MERGE_SEPARATOR.to_string())
}

/// Grammatical (non-lexical) subtypes, harvested from basic-tree DEPREL
/// values such as `acl:relcl` or `nmod:poss`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubtypeInventory(BTreeSet<String>);

impl SubtypeInventory {
    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut set = BTreeSet::new();
        for s in sentences {
            for w in s.surface_words() {
                if let Some(deprel) = &w.deprel {
                    set.extend(deprel.split(':').skip(1).map(str::to_owned));
                }
            }
        }
        SubtypeInventory(set)
    }

    pub fn from_subtypes<S: Into<String>>(subtypes: impl IntoIterator<Item = S>) -> Self {
        SubtypeInventory(subtypes.into_iter().map(Into::into).collect())
    }

    /// Add subtypes that occur only in enhanced labels, such as `xsubj`.
    pub fn with_subtypes<S: Into<String>>(mut self, subtypes: impl IntoIterator<Item = S>) -> Self {
        self.0.extend(subtypes.into_iter().map(Into::into));
        self
    }

    pub fn contains(&self, subtype: &str) -> bool {
        self.0.contains(subtype)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Most frequent lemma per (form, UPOS) and per form, from gold data.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LemmaLexicon {
    counts: BTreeMap<(String, String, String), usize>,
    by_form_upos: BTreeMap<(String, String), String>,
    by_form: BTreeMap<String, String>,
}

fn modal<K: Ord + Clone>(counts: impl Iterator<Item = (K, String, usize)>) -> BTreeMap<K, String> {
    let mut best: BTreeMap<K, (usize, String)> = BTreeMap::new();
    for (key, lemma, count) in counts {
        let entry = best.entry(key).or_insert((0, String::new()));
        // higher count wins; equal counts go to the smaller lemma
        if count > entry.0 || (count == entry.0 && lemma < entry.1) {
            *entry = (count, lemma);
        }
    }
    best.into_iter().map(|(k, (_, l))| (k, l)).collect()
}

impl LemmaLexicon {
    pub fn from_counts(counts: BTreeMap<(String, String, String), usize>) -> Self {
        let by_form_upos = modal(
            counts
                .iter()
                .map(|((f, u, l), &c)| ((f.clone(), u.clone()), l.clone(), c)),
        );
        let mut per_form: BTreeMap<(String, String), usize> = BTreeMap::new();
        for ((f, _, l), &c) in &counts {
            *per_form.entry((f.clone(), l.clone())).or_default() += c;
        }
        let by_form = modal(per_form.into_iter().map(|((f, l), c)| (f, l, c)));
        LemmaLexicon {
            counts,
            by_form_upos,
            by_form,
        }
    }

    pub fn len(&self) -> usize {
        self.by_form_upos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_form_upos.is_empty()
    }

    /// Lemma for `form`, by (form, UPOS) first and form alone second.
    pub fn lookup(&self, form: &str, upos: Option<&str>) -> Option<&str> {
        if let Some(upos) = upos.filter(|u| *u != "_") {
            if let Some(l) = self.by_form_upos.get(&(form.to_owned(), upos.to_owned())) {
                return Some(l);
            }
        }
        self.by_form.get(form).map(String::as_str)
    }

    /// Lexicon lemma, else the lowercased form.
    pub fn lemmatize(&self, form: &str, upos: Option<&str>) -> String {
        self.lookup(form, upos)
            .map(str::to_owned)
            .unwrap_or_else(|| form.to_lowercase())
    }

    /// Sorted lines `form<TAB>upos<TAB>lemma<TAB>count`.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for ((form, upos, lemma), count) in &self.counts {
            writeln!(w, "{}\t{}\t{}\t{}", form, upos, lemma, count)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Data(format!("lemma lexicon line {}: expected form, upos, lemma, count", i + 1));
            if cols.len() != 4 {
                return Err(bad());
            }
            let count: usize = cols[3].parse().map_err(|_| bad())?;
            *counts
                .entry((cols[0].to_owned(), cols[1].to_owned(), cols[2].to_owned()))
                .or_default() += count;
        }
        Ok(LemmaLexicon::from_counts(counts))
    }
}

/// Count gold (form, UPOS, lemma) triples of surface words.
pub fn build_lemma_lexicon<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> LemmaLexicon {
    let mut counts = BTreeMap::new();
    for s in sentences {
        for w in s.surface_words() {
            if w.lemma == "_" && w.form != "_" {
                continue;
            }
            *counts
                .entry((w.form.clone(), w.upos.clone(), w.lemma.clone()))
                .or_default() += 1;
        }
    }
    LemmaLexicon::from_counts(counts)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DelexStats {
    /// Subtypes rewritten to placeholders.
    pub placeholders: usize,
    /// Subtypes kept as grammatical literals.
    pub literals: usize,
    /// Lexical subtypes with no matching child, stripped.
    pub failures: usize,
}

impl std::ops::AddAssign for DelexStats {
    fn add_assign(&mut self, o: Self) {
        self.placeholders += o.placeholders;
        self.literals += o.literals;
        self.failures += o.failures;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RelexStats {
    pub placeholders: usize,
    pub resolved: usize,
    /// Placeholders without a matching child, stripped.
    pub failures: usize,
}

impl std::ops::AddAssign for RelexStats {
    fn add_assign(&mut self, o: Self) {
        self.placeholders += o.placeholders;
        self.resolved += o.resolved;
        self.failures += o.failures;
    }
}

/// Children of `node` in `graph` attached by a relation whose universal
/// part is `rel`, in ascending id order.
fn children_via<'g>(graph: &'g CollapsedGraph, node: NodeId, rel: &'g str) -> impl Iterator<Item = &'g Edge> + 'g {
    graph
        .outgoing(node)
        .filter(move |e| universal_parts(&e.label).any(|u| u == rel))
}

/// Lemma of a function word plus the lemmas of its `fixed` children,
/// joined by `_`.
fn function_lemma(graph: &CollapsedGraph, child: NodeId, lemma: impl Fn(NodeId) -> Option<String>) -> Option<String> {
    let mut parts = vec![lemma(child)?];
    let mut fixed: Vec<NodeId> = children_via(graph, child, FIXED_RELATION).map(|e| e.dep).collect();
    fixed.sort();
    fixed.dedup();
    for f in fixed {
        parts.push(lemma(f)?);
    }
    Some(parts.join("_").to_lowercase())
}

/// Rewrites lexical label subtypes to placeholders naming the relation
/// of the child that supplies the lemma.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delexicalizer {
    pub relations: Vec<String>,
    pub subtypes: SubtypeInventory,
}

impl Delexicalizer {
    pub fn new(subtypes: SubtypeInventory) -> Self {
        Delexicalizer {
            relations: DEFAULT_DELEX_RELATIONS.iter().map(|s| s.to_string()).collect(),
            subtypes,
        }
    }

    pub fn with_relations<S: Into<String>>(mut self, relations: impl IntoIterator<Item = S>) -> Self {
        self.relations = relations.into_iter().map(Into::into).collect();
        self
    }

    /// Delexicalize every label of `graph`, the collapsed gold graph of
    /// `sentence`. Gold lemmas are matched against the subtypes.
    pub fn delexicalize(&self, sentence: &Sentence, graph: &CollapsedGraph) -> (CollapsedGraph, DelexStats) {
        let mut stats = DelexStats::default();
        let out = graph.map_labels(|edge| {
            let (label, s) = self.delex_label(sentence, graph, edge);
            stats += s;
            label
        });
        (out, stats)
    }

    /// Delexicalized label of one edge of `graph`.
    pub fn delex_label(&self, sentence: &Sentence, graph: &CollapsedGraph, edge: &Edge) -> (String, DelexStats) {
        let mut stats = DelexStats::default();
        let gold_lemma = |id: NodeId| -> Option<String> {
            let w = sentence.node(id)?;
            Some(if w.lemma == "_" { w.form.to_lowercase() } else { w.lemma.clone() })
        };
        let label = map_components(&edge.label, |piece| {
            let label = DelexLabel::parse(piece);
            let parts = label
                .parts
                .into_iter()
                .filter_map(|part| {
                    let SubtypePart::Literal(sub) = part else {
                        return Some(part);
                    };
                    if self.subtypes.contains(&sub) {
                        stats.literals += 1;
                        return Some(SubtypePart::Literal(sub));
                    }
                    let target = sub.to_lowercase();
                    for rel in &self.relations {
                        let found = children_via(graph, edge.dep, rel)
                            .any(|c| function_lemma(graph, c.dep, gold_lemma).as_deref() == Some(target.as_str()));
                        if found {
                            stats.placeholders += 1;
                            return Some(SubtypePart::Placeholder(rel.clone()));
                        }
                    }
                    stats.failures += 1;
                    None
                })
                .collect();
            DelexLabel {
                universal: label.universal,
                parts,
            }
            .to_string()
        });
        (label, stats)
    }
}

/// Fill placeholders of a decoded graph with function-word lemmas. When
/// several children qualify, tree children (if `tree` is given) are
/// preferred, then the smallest id. Unresolvable placeholders are
/// dropped from the label.
pub fn relexicalize(
    sentence: &Sentence,
    graph: &CollapsedGraph,
    lexicon: &LemmaLexicon,
    tree: Option<&SpanningTree>,
) -> (CollapsedGraph, RelexStats) {
    let mut stats = RelexStats::default();
    let out = graph.map_labels(|edge| {
        let (label, s) = relex_label(sentence, graph, edge, lexicon, tree);
        stats += s;
        label
    });
    if stats.failures > 0 {
        log::debug!("W-RELEX {} placeholder(s) without a matching child", stats.failures);
    }
    (out, stats)
}

/// Re-lexicalized label of one edge of `graph`.
pub fn relex_label(
    sentence: &Sentence,
    graph: &CollapsedGraph,
    edge: &Edge,
    lexicon: &LemmaLexicon,
    tree: Option<&SpanningTree>,
) -> (String, RelexStats) {
    let mut stats = RelexStats::default();
    let lemma = |id: NodeId| -> Option<String> {
        let w = sentence.node(id)?;
        Some(lexicon.lemmatize(&w.form, Some(&w.upos)))
    };
    let in_tree = |e: &Edge| tree.is_some_and(|t| e.dep.major >= 1 && t.head(e.dep.major) == e.head.major);

    let label = map_components(&edge.label, |piece| {
        let label = DelexLabel::parse(piece);
        if !label.has_placeholder() {
            return piece.to_owned();
        }
        let parts = label
            .parts
            .into_iter()
            .filter_map(|part| {
                let SubtypePart::Placeholder(rel) = part else {
                    return Some(part);
                };
                stats.placeholders += 1;
                let child = children_via(graph, edge.dep, &rel)
                    .min_by_key(|c| (!in_tree(c), c.dep))
                    .map(|c| c.dep);
                match child.and_then(|c| function_lemma(graph, c, lemma)) {
                    Some(l) => {
                        stats.resolved += 1;
                        Some(SubtypePart::Literal(l))
                    }
                    None => {
                        stats.failures += 1;
                        None
                    }
                }
            })
            .collect();
        DelexLabel {
            universal: label.universal,
            parts,
        }
        .to_string()
    });
    (label, stats)
}

/// Outcome of delexicalizing and re-lexicalizing gold graphs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RoundTripReport {
    pub edges: usize,
    /// Edges whose delexicalized label carries a placeholder.
    pub delexicalized: usize,
    /// Of those, edges whose label is restored exactly.
    pub restored: usize,
}

impl RoundTripReport {
    /// Fraction of delexicalized edges restored exactly (1 if none).
    pub fn coverage(&self) -> f64 {
        if self.delexicalized == 0 {
            1.0
        } else {
            self.restored as f64 / self.delexicalized as f64
        }
    }
}

impl std::ops::AddAssign for RoundTripReport {
    fn add_assign(&mut self, o: Self) {
        self.edges += o.edges;
        self.delexicalized += o.delexicalized;
        self.restored += o.restored;
    }
}

/// Delexicalize each gold edge and re-lexicalize it with `lexicon`,
/// counting labels that come back unchanged.
pub fn round_trip(
    delex: &Delexicalizer,
    sentence: &Sentence,
    gold: &CollapsedGraph,
    lexicon: &LemmaLexicon,
) -> RoundTripReport {
    let mut report = RoundTripReport::default();
    for edge in gold.edges() {
        report.edges += 1;
        let (delexed, _) = delex.delex_label(sentence, gold, edge);
        if !DelexLabel::parse_composite(&delexed).iter().any(DelexLabel::has_placeholder) {
            continue;
        }
        report.delexicalized += 1;
        let candidate = Edge::new(edge.head, edge.dep, delexed);
        let (relexed, _) = relex_label(sentence, gold, &candidate, lexicon, None);
        if relexed == edge.label {
            report.restored += 1;
        }
    }
    report
}
