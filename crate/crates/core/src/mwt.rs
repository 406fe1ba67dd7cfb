//! Multi-word token expansion: a most-frequent-split lexicon from
//! training data with an ordered prefix/suffix rule engine as fallback.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::conllu::{MwtRange, Sentence, Word};
use crate::eval::EvalResult;
use crate::graph::EnhancedGraph;
use crate::NodeId;

#[derive(Debug, Error)]
pub enum MwtError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("rule application on '{0}' did not terminate")]
    LoopGuard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Modal word sequence of each multi-word token form.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MwtLexicon {
    counts: BTreeMap<String, BTreeMap<Vec<String>, usize>>,
}

impl MwtLexicon {
    pub fn add(&mut self, form: &str, words: Vec<String>, count: usize) {
        if words.len() < 2 {
            return;
        }
        *self
            .counts
            .entry(form.to_owned())
            .or_default()
            .entry(words)
            .or_default() += count;
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Most frequent split of exactly `form`; equal counts go to the
    /// lexicographically smaller split.
    pub fn get(&self, form: &str) -> Option<(&[String], usize)> {
        let splits = self.counts.get(form)?;
        let mut best: Option<(&Vec<String>, usize)> = None;
        for (words, &count) in splits {
            if best.map_or(true, |(_, c)| count > c) {
                best = Some((words, count));
            }
        }
        best.map(|(w, c)| (w.as_slice(), c))
    }

    /// Split of `form`, else of its lowercase form with the first piece
    /// re-capitalized.
    pub fn lookup(&self, form: &str) -> Option<Vec<String>> {
        if let Some((words, _)) = self.get(form) {
            return Some(words.to_vec());
        }
        let lower = form.to_lowercase();
        if lower == form {
            return None;
        }
        let (words, _) = self.get(&lower)?;
        let mut words = words.to_vec();
        if form.chars().next().is_some_and(char::is_uppercase) {
            words[0] = capitalize(&words[0]);
        }
        Some(words)
    }

    pub fn contains(&self, form: &str) -> bool {
        self.counts.contains_key(form) || self.counts.contains_key(&form.to_lowercase())
    }

    /// Lines `form<TAB>w1 w2 ...<TAB>count`, one per observed split.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (form, splits) in &self.counts {
            for (words, count) in splits {
                writeln!(w, "{}\t{}\t{}", form, words.join(" "), count)?;
            }
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self, MwtError> {
        let mut lex = MwtLexicon::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |message: &str| MwtError::Parse {
                line: i + 1,
                message: message.to_owned(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected form, words, count"));
            }
            let words: Vec<String> = cols[1].split(' ').map(str::to_owned).collect();
            if words.len() < 2 || words.iter().any(String::is_empty) {
                return Err(bad("a split needs at least two nonempty words"));
            }
            let count = cols[2].parse().map_err(|_| bad("count is not a number"))?;
            lex.add(cols[0], words, count);
        }
        Ok(lex)
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Count the word sequences of every gold multi-word token.
pub fn build_mwt_lexicon<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> MwtLexicon {
    let mut lex = MwtLexicon::default();
    for s in sentences {
        for r in &s.mwt_ranges {
            let words: Vec<String> = (r.start..=r.end)
                .filter_map(|i| s.word(i))
                .map(|w| w.form.clone())
                .collect();
            lex.add(&r.form, words, 1);
        }
    }
    lex
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RuleKind {
    Prefix,
    Suffix,
}

impl FromStr for RuleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prefix" => Ok(RuleKind::Prefix),
            "suffix" => Ok(RuleKind::Suffix),
            _ => Err(format!("unknown rule kind '{}'", s)),
        }
    }
}

/// Peel `pattern` off one end of a token and emit `replacement` for it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRule {
    pub kind: RuleKind,
    pub pattern: String,
    pub replacement: String,
    /// Characters that must remain after peeling (at least 1).
    pub min_remainder: usize,
}

impl SplitRule {
    /// The remainder after applying the rule to `form`, if it matches.
    pub fn apply<'a>(&self, form: &'a str) -> Option<&'a str> {
        let rest = match self.kind {
            RuleKind::Prefix => form.strip_prefix(self.pattern.as_str())?,
            RuleKind::Suffix => form.strip_suffix(self.pattern.as_str())?,
        };
        (rest.chars().count() >= self.min_remainder.max(1)).then_some(rest)
    }
}

/// Parse rule lines `prefix|suffix<TAB>pattern<TAB>replacement<TAB>min_remainder`.
/// Blank lines and lines starting with `#` are skipped; a replacement of
/// `_` emits the pattern itself.
pub fn parse_rules<R: BufRead>(r: R) -> Result<Vec<SplitRule>, MwtError> {
    let mut rules = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| MwtError::Parse { line: i + 1, message };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad("expected kind, pattern, replacement, min_remainder".into()));
        }
        let kind = cols[0].parse().map_err(bad)?;
        if cols[1].is_empty() {
            return Err(bad("empty pattern".into()));
        }
        let replacement = match cols[2] {
            "_" | "" => cols[1],
            r => r,
        };
        let min_remainder = cols[3]
            .parse()
            .map_err(|_| bad(format!("min_remainder '{}' is not a number", cols[3])))?;
        rules.push(SplitRule {
            kind,
            pattern: cols[1].to_owned(),
            replacement: replacement.to_owned(),
            min_remainder,
        });
    }
    Ok(rules)
}

/// Whether a token should be expanded into several words.
pub trait ExpansionDecider {
    fn should_expand(&self, form: &str) -> bool;
}

/// Expands tokens that are in the lexicon or matched by a rule.
#[derive(Clone, Debug, Default)]
pub struct LexiconDecider<'a> {
    pub lexicon: Option<&'a MwtLexicon>,
    pub rules: &'a [SplitRule],
}

impl ExpansionDecider for LexiconDecider<'_> {
    fn should_expand(&self, form: &str) -> bool {
        should_expand(form, self.lexicon.unwrap_or(&EMPTY), self.rules)
    }
}

static EMPTY: MwtLexicon = MwtLexicon {
    counts: BTreeMap::new(),
};

pub fn should_expand(form: &str, lexicon: &MwtLexicon, rules: &[SplitRule]) -> bool {
    lexicon.contains(form) || rules.iter().any(|r| r.apply(form).is_some())
}

/// Words of `form`: its lexicon split, else the pieces produced by
/// repeatedly applying the first matching rule. A token nothing applies
/// to comes back unchanged.
pub fn expand(form: &str, lexicon: &MwtLexicon, rules: &[SplitRule]) -> Result<Vec<String>, MwtError> {
    if let Some(words) = lexicon.lookup(form) {
        return Ok(words);
    }

    let mut front = Vec::new();
    let mut back = Vec::new();
    let mut rest = form;
    let limit = form.chars().count();
    let mut iterations = 0;
    while let Some((rule, remainder)) = rules.iter().find_map(|r| r.apply(rest).map(|rem| (r, rem))) {
        iterations += 1;
        if iterations > limit {
            return Err(MwtError::LoopGuard(form.to_owned()));
        }
        match rule.kind {
            RuleKind::Prefix => front.push(rule.replacement.clone()),
            RuleKind::Suffix => back.push(rule.replacement.clone()),
        }
        rest = remainder;
    }

    if front.is_empty() && back.is_empty() {
        log::warn!("no lexicon entry or rule expands '{}'", form);
        return Ok(vec![form.to_owned()]);
    }
    front.push(rest.to_owned());
    front.extend(back.into_iter().rev());
    Ok(front)
}

/// Surface tokens of a sentence: each multi-word token with its words,
/// and each remaining word on its own.
pub fn tokens(sentence: &Sentence) -> Vec<(String, Vec<String>)> {
    let mut out = Vec::new();
    let mut ranges = sentence.mwt_ranges.iter().peekable();
    let words: Vec<&Word> = sentence.surface_words().collect();
    let mut i = 1;
    while i <= words.len() {
        if let Some(r) = ranges.next_if(|r| r.start == i) {
            let forms = (r.start..=r.end.min(words.len()))
                .map(|k| words[k - 1].form.clone())
                .collect();
            out.push((r.form.clone(), forms));
            i = r.end + 1;
        } else {
            out.push((words[i - 1].form.clone(), vec![words[i - 1].form.clone()]));
            i += 1;
        }
    }
    out
}

/// Word-level precision/recall of expanding every gold token, counting
/// per-token multiset overlap between predicted and gold words.
pub fn evaluate_expansion<'a, D: ExpansionDecider>(
    sentences: impl IntoIterator<Item = &'a Sentence>,
    decider: &D,
    lexicon: &MwtLexicon,
    rules: &[SplitRule],
) -> Result<EvalResult, MwtError> {
    let (mut gold_n, mut sys_n, mut matched) = (0, 0, 0);
    for s in sentences {
        for (token, gold) in tokens(s) {
            let predicted = if decider.should_expand(&token) {
                expand(&token, lexicon, rules)?
            } else {
                vec![token.clone()]
            };
            gold_n += gold.len();
            sys_n += predicted.len();
            let mut remaining = gold.clone();
            for p in &predicted {
                if let Some(pos) = remaining.iter().position(|g| g == p) {
                    remaining.swap_remove(pos);
                    matched += 1;
                }
            }
        }
    }
    Ok(EvalResult::from_counts(gold_n, sys_n, matched))
}

/// Re-tokenize a sentence: every token (existing multi-word tokens are
/// kept as they are) the decider selects is replaced by its words under
/// a new range. Ids shift, so HEAD, DEPREL and DEPS are cleared.
pub fn expand_sentence<D: ExpansionDecider>(
    sentence: &Sentence,
    decider: &D,
    lexicon: &MwtLexicon,
    rules: &[SplitRule],
) -> Result<Sentence, MwtError> {
    let mut words = Vec::new();
    let mut ranges = Vec::new();
    let source: Vec<&Word> = sentence.surface_words().collect();
    let mut existing = sentence.mwt_ranges.iter().peekable();
    let mut i = 1;

    let push = |w: &Word, words: &mut Vec<Word>| {
        let mut w = w.clone();
        w.id = NodeId::word(words.len() + 1);
        w.head = None;
        w.deprel = None;
        words.push(w);
    };

    while i <= source.len() {
        if let Some(r) = existing.next_if(|r| r.start == i) {
            let start = words.len() + 1;
            for k in r.start..=r.end.min(source.len()) {
                push(source[k - 1], &mut words);
            }
            ranges.push(MwtRange {
                start,
                end: words.len(),
                ..r.clone()
            });
            i = r.end + 1;
            continue;
        }

        let w = source[i - 1];
        let pieces = if decider.should_expand(&w.form) {
            expand(&w.form, lexicon, rules)?
        } else {
            vec![w.form.clone()]
        };
        if pieces.len() > 1 {
            let start = words.len() + 1;
            for p in pieces {
                push(&Word::new(0, p), &mut words);
            }
            ranges.push(MwtRange {
                start,
                end: words.len(),
                form: w.form.clone(),
                misc: w.misc.clone(),
            });
        } else {
            push(w, &mut words);
        }
        i += 1;
    }

    let n = words.len();
    Ok(Sentence {
        comments: sentence.comments.clone(),
        words,
        mwt_ranges: ranges,
        enhanced: EnhancedGraph::new(n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spanish() -> MwtLexicon {
        let mut lex = MwtLexicon::default();
        lex.add("del", vec!["de".into(), "el".into()], 5);
        lex.add("al", vec!["a".into(), "el".into()], 3);
        lex.add("al", vec!["al".into(), "x".into()], 2);
        lex
    }

    fn rules(text: &str) -> Vec<SplitRule> {
        parse_rules(text.as_bytes()).unwrap()
    }

    #[test]
    fn lexicon_majority() {
        let lex = spanish();
        assert_eq!(lex.get("al").unwrap(), (&["a".to_string(), "el".to_string()][..], 3));
        assert_eq!(expand("del", &lex, &[]).unwrap(), vec!["de", "el"]);
        assert_eq!(expand("Del", &lex, &[]).unwrap(), vec!["De", "el"]);
        assert!(lex.lookup("casa").is_none());
    }

    #[test]
    fn single_suffix_rule() {
        let r = rules("suffix\t's\t's\t1\n");
        assert!(should_expand("John's", &MwtLexicon::default(), &r));
        assert_eq!(expand("John's", &MwtLexicon::default(), &r).unwrap(), vec!["John", "'s"]);
    }

    #[test]
    fn iterated_rules_keep_order() {
        let r = rules("prefix\tdel\tde\t2\nsuffix\tlo\t_\t2\nsuffix\tse\t_\t2\n");
        // "dámoselo": two suffix peels
        assert_eq!(
            expand("dámoselo", &MwtLexicon::default(), &r).unwrap(),
            vec!["dámo", "se", "lo"]
        );
        // prefix peel emits the replacement
        assert_eq!(expand("delante", &MwtLexicon::default(), &r).unwrap(), vec!["de", "ante"]);
    }

    #[test]
    fn min_remainder_blocks_rule() {
        let r = rules("suffix\tlo\t_\t3\n");
        assert!(!should_expand("alo", &MwtLexicon::default(), &r));
        assert_eq!(expand("alo", &MwtLexicon::default(), &r).unwrap(), vec!["alo"]);
    }

    #[test]
    fn no_rules_never_expand_unseen() {
        let lex = spanish();
        for f in ["casa", "el", "de"] {
            assert!(!should_expand(f, &lex, &[]));
        }
    }

    #[test]
    fn rule_file_errors() {
        assert!(parse_rules("middle\tx\ty\t1\n".as_bytes()).is_err());
        assert!(parse_rules("prefix\t\ty\t1\n".as_bytes()).is_err());
        assert!(parse_rules("prefix\tx\ty\n".as_bytes()).is_err());
        assert!(parse_rules("# comment\n\nprefix\tx\ty\t1\n".as_bytes()).is_ok());
    }

    #[test]
    fn lexicon_tsv_round_trip() {
        let lex = spanish();
        let mut buf = Vec::new();
        lex.write_tsv(&mut buf).unwrap();
        assert_eq!(MwtLexicon::read_tsv(&buf[..]).unwrap(), lex);
    }

    #[test]
    fn sentence_expansion() {
        let s = Sentence::from_forms(&["vengo", "del", "mercado"]);
        let lex = spanish();
        let decider = LexiconDecider {
            lexicon: Some(&lex),
            rules: &[],
        };
        let out = expand_sentence(&s, &decider, &lex, &[]).unwrap();
        assert_eq!(out.forms(), vec!["vengo", "de", "el", "mercado"]);
        assert_eq!(out.mwt_ranges.len(), 1);
        assert_eq!((out.mwt_ranges[0].start, out.mwt_ranges[0].end), (2, 3));
        assert_eq!(tokens(&out)[1], ("del".to_string(), vec!["de".to_string(), "el".to_string()]));

        let f1 = evaluate_expansion([&out], &decider, &lex, &[]).unwrap();
        assert_eq!(f1.f1, 1.0);
    }
}
