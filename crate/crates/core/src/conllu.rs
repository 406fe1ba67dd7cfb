//! Reading and writing CoNLL-U, including multi-word token ranges, empty
//! nodes and the DEPS column.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{Edge, EnhancedGraph, GraphError};

#[derive(Debug, Error)]
pub enum ConlluError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("cannot serialize sentence {sentence}: {message}")]
    Serialize { sentence: usize, message: String },

    #[error("input is not valid UTF-8: {0}")]
    Encoding(#[from] std::str::Utf8Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_error(line: usize, message: impl Into<String>) -> ConlluError {
    ConlluError::Parse {
        line,
        message: message.into(),
    }
}

/// Node identifier: `major` is the word index (0 is the root), `minor`
/// is non-zero for empty nodes (`major.minor`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub major: usize,
    pub minor: usize,
}

impl NodeId {
    pub const ROOT: NodeId = NodeId { major: 0, minor: 0 };

    pub const fn word(major: usize) -> Self {
        NodeId { major, minor: 0 }
    }

    pub const fn empty(major: usize, minor: usize) -> Self {
        NodeId { major, minor }
    }

    pub fn is_root(self) -> bool {
        self == Self::ROOT
    }

    pub fn is_empty_node(self) -> bool {
        self.minor > 0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.minor == 0 {
            write!(f, "{}", self.major)
        } else {
            write!(f, "{}.{}", self.major, self.minor)
        }
    }
}

impl FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let number = |part: &str| -> Result<usize, String> {
            if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(format!("invalid node id '{}'", s));
            }
            part.parse().map_err(|_| format!("invalid node id '{}'", s))
        };

        match s.split_once('.') {
            None => Ok(NodeId::word(number(s)?)),
            Some((major, minor)) => {
                let minor = number(minor)?;
                if minor == 0 {
                    return Err(format!("invalid empty node id '{}'", s));
                }
                Ok(NodeId::empty(number(major)?, minor))
            }
        }
    }
}

/// One syntactic word or empty node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub id: NodeId,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: String,
    /// Absent for empty nodes and for unannotated input.
    pub head: Option<NodeId>,
    pub deprel: Option<String>,
    pub misc: String,
}

impl Word {
    /// A bare surface word with all other columns unset.
    pub fn new(index: usize, form: impl Into<String>) -> Self {
        Word {
            id: NodeId::word(index),
            form: form.into(),
            lemma: "_".into(),
            upos: "_".into(),
            xpos: "_".into(),
            feats: "_".into(),
            head: None,
            deprel: None,
            misc: "_".into(),
        }
    }
}

/// A multi-word token spanning words `start..=end`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MwtRange {
    pub start: usize,
    pub end: usize,
    pub form: String,
    pub misc: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    /// Comment lines, verbatim including the leading `#`.
    pub comments: Vec<String>,
    /// Surface words and empty nodes in file order.
    pub words: Vec<Word>,
    pub mwt_ranges: Vec<MwtRange>,
    pub enhanced: EnhancedGraph,
}

impl Sentence {
    /// Build an unannotated sentence from word forms.
    pub fn from_forms<S: AsRef<str>>(forms: &[S]) -> Self {
        Sentence {
            comments: Vec::new(),
            words: forms
                .iter()
                .enumerate()
                .map(|(i, f)| Word::new(i + 1, f.as_ref()))
                .collect(),
            mwt_ranges: Vec::new(),
            enhanced: EnhancedGraph::new(forms.len()),
        }
    }

    /// Number of surface words.
    pub fn len(&self) -> usize {
        self.words.iter().filter(|w| !w.id.is_empty_node()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, id: NodeId) -> Option<&Word> {
        self.words
            .binary_search_by(|w| w.id.cmp(&id))
            .ok()
            .map(|i| &self.words[i])
    }

    /// Surface word by 1-based index.
    pub fn word(&self, index: usize) -> Option<&Word> {
        self.node(NodeId::word(index))
    }

    pub fn surface_words(&self) -> impl Iterator<Item = &Word> {
        self.words.iter().filter(|w| !w.id.is_empty_node())
    }

    pub fn forms(&self) -> Vec<&str> {
        self.surface_words().map(|w| w.form.as_str()).collect()
    }

    pub fn sent_id(&self) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            let rest = c.strip_prefix('#')?.trim_start();
            let value = rest.strip_prefix("sent_id")?.trim_start().strip_prefix('=')?;
            Some(value.trim())
        })
    }

    /// Sentence id for messages: the `sent_id` comment or a 1-based
    /// position.
    pub fn label(&self, position: usize) -> String {
        self.sent_id()
            .map(str::to_owned)
            .unwrap_or_else(|| format!("#{}", position + 1))
    }

    /// Drop empty nodes from the word list (after their paths were
    /// collapsed into `enhanced`).
    pub fn without_empty_nodes(&self) -> Sentence {
        Sentence {
            comments: self.comments.clone(),
            words: self.surface_words().cloned().collect(),
            mwt_ranges: self.mwt_ranges.clone(),
            enhanced: EnhancedGraph::new(self.len()),
        }
    }
}

/// Parse CoNLL-U text. Each blank-line-delimited block is a sentence.
pub fn parse_conllu(input: &str) -> Result<Vec<Sentence>, ConlluError> {
    let mut sentences = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();

    for (idx, raw) in input.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if !block.is_empty() {
                sentences.push(parse_block(&block)?);
                block.clear();
            }
        } else {
            block.push((idx + 1, line));
        }
    }
    if !block.is_empty() {
        sentences.push(parse_block(&block)?);
    }

    Ok(sentences)
}

/// Parse CoNLL-U from raw bytes, rejecting invalid UTF-8.
pub fn parse_conllu_bytes(input: &[u8]) -> Result<Vec<Sentence>, ConlluError> {
    parse_conllu(std::str::from_utf8(input)?)
}

pub fn read_conllu<R: BufRead>(mut reader: R) -> Result<Vec<Sentence>, ConlluError> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    parse_conllu_bytes(&buf)
}

fn optional(column: &str) -> Option<&str> {
    (column != "_").then_some(column)
}

fn parse_block(lines: &[(usize, &str)]) -> Result<Sentence, ConlluError> {
    let first_line = lines[0].0;
    let mut comments = Vec::new();
    let mut words = Vec::new();
    let mut mwt_ranges = Vec::new();
    // DEPS cells are resolved once all node ids are known.
    let mut deps: Vec<(usize, NodeId, &str)> = Vec::new();

    for &(line_no, line) in lines {
        if line.starts_with('#') {
            if !words.is_empty() || !mwt_ranges.is_empty() {
                return Err(parse_error(line_no, "comment inside sentence"));
            }
            comments.push(line.to_owned());
            continue;
        }

        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(parse_error(
                line_no,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }

        if let Some((start, end)) = cols[0].split_once('-') {
            let start = parse_index(start, line_no)?;
            let end = parse_index(end, line_no)?;
            if start == 0 || start > end {
                return Err(parse_error(line_no, format!("invalid token range '{}'", cols[0])));
            }
            mwt_ranges.push(MwtRange {
                start,
                end,
                form: cols[1].to_owned(),
                misc: cols[9].to_owned(),
            });
            continue;
        }

        let id: NodeId = cols[0].parse().map_err(|e: String| parse_error(line_no, e))?;
        if id.is_root() {
            return Err(parse_error(line_no, "word id 0 is reserved for the root"));
        }
        let head = match optional(cols[6]) {
            Some(h) if !id.is_empty_node() => Some(NodeId::word(parse_index(h, line_no)?)),
            Some(_) => return Err(parse_error(line_no, "empty node with a basic head")),
            None => None,
        };
        let deprel = optional(cols[7]).map(str::to_owned);
        if head.is_some() != deprel.is_some() {
            return Err(parse_error(line_no, "HEAD and DEPREL must both be present or absent"));
        }

        if let Some(cell) = optional(cols[8]) {
            deps.push((line_no, id, cell));
        }

        words.push(Word {
            id,
            form: cols[1].to_owned(),
            lemma: cols[2].to_owned(),
            upos: cols[3].to_owned(),
            xpos: cols[4].to_owned(),
            feats: cols[5].to_owned(),
            head,
            deprel,
            misc: cols[9].to_owned(),
        });
    }

    if words.is_empty() {
        return Err(parse_error(first_line, "sentence without words"));
    }

    validate_ids(&words, first_line)?;

    let n = words.iter().filter(|w| !w.id.is_empty_node()).count();
    for w in &words {
        if let Some(h) = w.head {
            if h.major > n {
                return Err(parse_error(first_line, format!("word {} has unknown head {}", w.id, h)));
            }
        }
    }

    let mut last_end = 0;
    for r in &mwt_ranges {
        if r.end > n {
            return Err(parse_error(first_line, format!("token range {}-{} exceeds sentence", r.start, r.end)));
        }
        if r.start <= last_end {
            return Err(parse_error(first_line, format!("overlapping token range {}-{}", r.start, r.end)));
        }
        last_end = r.end;
    }

    let empty_nodes = words.iter().map(|w| w.id).filter(|id| id.is_empty_node()).collect();
    let mut enhanced = EnhancedGraph::with_empty_nodes(n, empty_nodes);
    for (line_no, dep, cell) in deps {
        for entry in cell.split('|') {
            let (head, label) = entry
                .split_once(':')
                .ok_or_else(|| parse_error(line_no, format!("malformed DEPS entry '{}'", entry)))?;
            if label.is_empty() {
                return Err(parse_error(line_no, format!("DEPS entry '{}' has no label", entry)));
            }
            let head: NodeId = head.parse().map_err(|e: String| parse_error(line_no, e))?;
            enhanced
                .add_edge(Edge::new(head, dep, label))
                .map_err(|e: GraphError| parse_error(line_no, e.to_string()))?;
        }
    }

    Ok(Sentence {
        comments,
        words,
        mwt_ranges,
        enhanced,
    })
}

fn parse_index(s: &str, line: usize) -> Result<usize, ConlluError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(parse_error(line, format!("expected a numeric index, found '{}'", s)));
    }
    s.parse()
        .map_err(|_| parse_error(line, format!("index '{}' out of range", s)))
}

fn validate_ids(words: &[Word], line: usize) -> Result<(), ConlluError> {
    let mut expected_major = 1;
    for pair in words.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(parse_error(line, format!("duplicate word id {}", pair[1].id)));
        }
        if pair[0].id > pair[1].id {
            return Err(parse_error(line, format!("word id {} out of order", pair[1].id)));
        }
    }
    for w in words {
        if w.id.is_empty_node() {
            if w.id.major + 1 != expected_major {
                return Err(parse_error(line, format!("empty node {} precedes its word", w.id)));
            }
        } else {
            if w.id.major != expected_major {
                return Err(parse_error(
                    line,
                    format!("expected word {}, found {}", expected_major, w.id),
                ));
            }
            expected_major += 1;
        }
    }
    Ok(())
}

/// Serialize sentences to canonical CoNLL-U.
pub fn serialize_conllu(sentences: &[Sentence]) -> Result<String, ConlluError> {
    let mut out = String::new();
    for (idx, sentence) in sentences.iter().enumerate() {
        write_sentence(&mut out, sentence).map_err(|message| ConlluError::Serialize {
            sentence: idx + 1,
            message,
        })?;
    }
    Ok(out)
}

pub fn write_conllu<W: Write>(mut writer: W, sentences: &[Sentence]) -> Result<(), ConlluError> {
    writer.write_all(serialize_conllu(sentences)?.as_bytes())?;
    Ok(())
}

fn write_sentence(out: &mut String, s: &Sentence) -> Result<(), String> {
    use std::fmt::Write as _;

    for e in s.enhanced.edges() {
        let known = |id: NodeId| id.is_root() || s.node(id).is_some();
        if !known(e.head) || !known(e.dep) {
            return Err(format!("edge {} references a nonexistent node", e));
        }
    }

    for c in &s.comments {
        out.push_str(c);
        out.push('\n');
    }

    let mut ranges = s.mwt_ranges.iter().peekable();
    for w in &s.words {
        if !w.id.is_empty_node() {
            if let Some(r) = ranges.next_if(|r| r.start == w.id.major) {
                let _ = writeln!(
                    out,
                    "{}-{}\t{}\t_\t_\t_\t_\t_\t_\t_\t{}",
                    r.start, r.end, r.form, r.misc
                );
            }
        }

        let head = w.head.map(|h| h.to_string()).unwrap_or_else(|| "_".into());
        let deprel = w.deprel.as_deref().unwrap_or("_");

        let mut deps = String::new();
        for e in s.enhanced.incoming(w.id) {
            if !deps.is_empty() {
                deps.push('|');
            }
            let _ = write!(deps, "{}:{}", e.head, e.label);
        }
        if deps.is_empty() {
            deps.push('_');
        }

        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            w.id, w.form, w.lemma, w.upos, w.xpos, w.feats, head, deprel, deps, w.misc
        );
    }
    if ranges.next().is_some() {
        return Err("token range does not start at a surface word".into());
    }
    out.push('\n');
    Ok(())
}
