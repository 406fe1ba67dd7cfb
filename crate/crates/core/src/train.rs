//! Corpus preparation, the training loop, and two-stage training: one
//! generic model on all languages, then one finetuned model per language.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::RepairPolicy;
use crate::conllu::{read_conllu, Sentence};
use crate::decode::{parse_sentence, DecodeError, DecodeMode, DecodeOptions};
use crate::eval::{score_collapsed, EvalResult, Metric};
use crate::graph::{collapse_empty_nodes, merge_parallel_edges, split_parallel_edges, CollapsedGraph, EnhancedGraph};
use crate::labels::{build_lemma_lexicon, relexicalize, DelexStats, Delexicalizer, LemmaLexicon, RelexStats, SubtypeInventory};
use crate::scorer::{
    clip_grad_norm, load_model, save_model, GraphSupervision, ModelConfig, RAdam, RAdamConfig, TrainingExample, Vocab,
};
use crate::spanning::{extract_spanning_tree, residual_edges, SpanningTree};
use crate::{Error, NodeId, ParamSet, Result, ScoreModel};

/// Label that stands in for relations missing from the label vocabulary.
pub const FALLBACK_LABEL: &str = "dep";

/// A gold sentence with everything the trainer and evaluator need.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSentence {
    /// Surface words only.
    pub sentence: Sentence,
    /// Collapsed gold graph with the original labels.
    pub gold: CollapsedGraph,
    /// Delexicalized, merged graph: the training target.
    pub target: CollapsedGraph,
    /// Spanning tree of `target`; `None` when extraction failed.
    pub tree: Option<SpanningTree>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PrepStats {
    pub sentences: usize,
    pub extraction_failures: usize,
    pub delex: DelexStats,
}

/// Collapse, delexicalize, merge and extract the training tree.
pub fn prepare_sentence(sentence: &Sentence, delex: &Delexicalizer) -> Result<(PreparedSentence, DelexStats)> {
    let gold = collapse_empty_nodes(&sentence.enhanced)?;
    let (delexed, stats) = delex.delexicalize(sentence, &gold);
    let target = merge_parallel_edges(&delexed);
    let tree = extract_spanning_tree(sentence, &target).ok();
    Ok((
        PreparedSentence {
            sentence: sentence.without_empty_nodes(),
            gold,
            target,
            tree,
        },
        stats,
    ))
}

pub fn prepare_corpus(sentences: &[Sentence], delex: &Delexicalizer) -> Result<(Vec<PreparedSentence>, PrepStats)> {
    let mut stats = PrepStats::default();
    let mut out = Vec::with_capacity(sentences.len());
    for (i, s) in sentences.iter().enumerate() {
        let (p, d) = prepare_sentence(s, delex).map_err(|e| e.in_sentence(s.label(i)))?;
        stats.sentences += 1;
        stats.delex += d;
        if p.tree.is_none() {
            stats.extraction_failures += 1;
            log::warn!("W-EXTRACT {}: no spanning tree; using graph supervision only", s.label(i));
        }
        out.push(p);
    }
    Ok((out, stats))
}

/// Sorted label vocabulary of the targets, always containing
/// [`FALLBACK_LABEL`].
pub fn build_label_vocab(data: &[PreparedSentence]) -> Vec<String> {
    let mut labels: BTreeSet<String> = data.iter().flat_map(|p| p.target.edges().map(|e| e.label.clone())).collect();
    labels.insert(FALLBACK_LABEL.to_owned());
    labels.into_iter().collect()
}

pub fn build_vocab(data: &[PreparedSentence], config: &ModelConfig) -> Vocab {
    Vocab::from_counts(
        data.iter().flat_map(|p| p.sentence.surface_words().map(|w| w.form.as_str())),
        config.min_word_count,
        config.unk_buckets,
    )
}

/// Training targets in model index space, plus the number of labels
/// mapped to the fallback.
pub fn make_example(p: &PreparedSentence, model: &ScoreModel) -> (TrainingExample, usize) {
    let fallback = model.label_index(FALLBACK_LABEL).unwrap_or(0);
    let mut unknown = 0;
    let labeled = p
        .target
        .edges()
        .map(|e| {
            let l = model.label_index(&e.label).unwrap_or_else(|| {
                unknown += 1;
                fallback
            });
            (e.head.major, e.dep.major, l)
        })
        .collect();
    let (heads, extra) = match &p.tree {
        Some(t) => (
            Some(t.heads().to_vec()),
            residual_edges(&p.target, t)
                .iter()
                .map(|e| (e.head.major, e.dep.major))
                .collect(),
        ),
        None => (None, Vec::new()),
    };
    let example = TrainingExample {
        word_ids: model.vocab.ids(&p.sentence.forms()),
        heads,
        extra,
        labeled,
    };
    (example, unknown)
}

pub fn make_examples(data: &[PreparedSentence], model: &ScoreModel) -> Vec<TrainingExample> {
    let mut unknown = 0;
    let examples = data
        .iter()
        .map(|p| {
            let (ex, u) = make_example(p, model);
            unknown += u;
            ex
        })
        .collect();
    if unknown > 0 {
        log::warn!("{} edge label(s) missing from the label vocabulary mapped to '{}'", unknown, FALLBACK_LABEL);
    }
    examples
}

/// Scoring model plus what decoding and re-lexicalization need.
#[derive(Clone, Debug, PartialEq)]
pub struct Parser {
    pub model: ScoreModel,
    pub lemmas: LemmaLexicon,
    pub options: DecodeOptions,
}

/// Parser output for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct ParseOutput {
    /// Re-lexicalized graph with parallel edges split.
    pub graph: CollapsedGraph,
    pub tree: Option<SpanningTree>,
    pub collisions: usize,
    pub repaired: usize,
    pub relex: RelexStats,
}

/// Path of the lemma lexicon stored next to a model file.
pub fn lemma_path(model_path: &Path) -> PathBuf {
    let mut s = model_path.as_os_str().to_owned();
    s.push(".lemmas.tsv");
    PathBuf::from(s)
}

impl Parser {
    pub fn new(model: ScoreModel, lemmas: LemmaLexicon, options: DecodeOptions) -> Self {
        Parser { model, lemmas, options }
    }

    pub fn parse(&self, sentence: &Sentence) -> std::result::Result<ParseOutput, DecodeError> {
        let forms = sentence.forms();
        let parse = parse_sentence(&self.model, &forms, self.options)?;
        let (relexed, relex) = relexicalize(sentence, &parse.graph, &self.lemmas, parse.tree.as_ref());
        Ok(ParseOutput {
            graph: split_parallel_edges(&relexed),
            tree: parse.tree,
            collisions: parse.collisions,
            repaired: parse.repaired,
            relex,
        })
    }

    /// Copy of `sentence` (empty nodes dropped) with DEPS predicted and,
    /// if `overwrite_basic` is set, HEAD/DEPREL from the spanning tree.
    pub fn annotate(&self, sentence: &Sentence, overwrite_basic: bool) -> std::result::Result<(Sentence, ParseOutput), DecodeError> {
        let mut out = sentence.without_empty_nodes();
        if out.is_empty() {
            return Ok((
                out,
                ParseOutput {
                    graph: CollapsedGraph::new(0),
                    tree: None,
                    collisions: 0,
                    repaired: 0,
                    relex: RelexStats::default(),
                },
            ));
        }
        let parsed = self.parse(&out)?;
        if overwrite_basic {
            if let Some(tree) = &parsed.tree {
                for (j, w) in out.words.iter_mut().enumerate() {
                    let head = tree.head(j + 1);
                    let label = parsed
                        .graph
                        .incoming(NodeId::word(j + 1))
                        .find(|e| e.head.major == head)
                        .map(|e| e.label.clone())
                        .unwrap_or_else(|| FALLBACK_LABEL.to_owned());
                    w.head = Some(NodeId::word(head));
                    w.deprel = Some(label);
                }
            }
        }
        out.enhanced = EnhancedGraph::clone(&parsed.graph);
        Ok((out, parsed))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(&self.model, path)?;
        self.lemmas.write_tsv(BufWriter::new(File::create(lemma_path(path))?))?;
        Ok(())
    }

    /// Load a model and, when present, its lemma lexicon.
    pub fn load(path: &Path, options: DecodeOptions) -> Result<Self> {
        let model = load_model(path)?;
        let lp = lemma_path(path);
        let lemmas = if lp.exists() {
            LemmaLexicon::read_tsv(BufReader::new(File::open(lp)?))?
        } else {
            LemmaLexicon::default()
        };
        Ok(Parser { model, lemmas, options })
    }
}

/// Parse every sentence and score against the gold graphs.
pub fn evaluate(parser: &Parser, data: &[PreparedSentence], metric: Metric) -> Result<EvalResult> {
    let system: Vec<CollapsedGraph> = data
        .par_iter()
        .map(|p| parser.parse(&p.sentence).map(|o| o.graph))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Data(e.to_string()))?;
    let gold: Vec<CollapsedGraph> = data.iter().map(|p| p.gold.clone()).collect();
    let ids: Vec<String> = data.iter().enumerate().map(|(i, p)| p.sentence.label(i)).collect();
    score_collapsed(&gold, &system, metric, Some(&ids)).map_err(|e| Error::Data(e.to_string()))
}

/// Optimization settings of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub enabled: bool,
    pub epochs: usize,
    pub lr: f64,
    /// Sentences whose gradients are averaged per update.
    pub accumulation: usize,
    /// Global gradient-norm bound.
    pub clip: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            enabled: true,
            epochs: 30,
            lr: 2e-3,
            accumulation: 8,
            clip: 1.0,
        }
    }
}

/// Graph supervision matching a decoding mode.
pub fn supervision(mode: DecodeMode) -> GraphSupervision {
    match mode {
        DecodeMode::TreeGraph => GraphSupervision::Residual,
        DecodeMode::GraphFix => GraphSupervision::Full,
    }
}

/// Mean per-sentence loss without updating anything.
pub fn mean_loss(model: &ScoreModel, examples: &[TrainingExample], supervision: GraphSupervision) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let total: f64 = examples
        .par_iter()
        .map(|ex| model.loss(ex, supervision).total())
        .sum();
    total / examples.len() as f64
}

/// Minibatch trainer: shuffled epochs, gradient accumulation, global
/// norm clipping, RAdam updates.
pub struct Trainer {
    pub model: ScoreModel,
    optimizer: RAdam<f64>,
    grad: ParamSet,
    pending: usize,
    rng: ChaCha8Rng,
    stage: StageConfig,
    supervision: GraphSupervision,
}

impl Trainer {
    pub fn new(model: ScoreModel, stage: StageConfig, mode: DecodeMode, seed: u64) -> Self {
        let optimizer = RAdam::new(
            RAdamConfig {
                lr: stage.lr,
                ..RAdamConfig::default()
            },
            &model.params,
        );
        let grad = model.params.zeros_like();
        Trainer {
            model,
            optimizer,
            grad,
            pending: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stage,
            supervision: supervision(mode),
        }
    }

    pub fn supervision(&self) -> GraphSupervision {
        self.supervision
    }

    /// One pass over `examples` in shuffled order; returns the mean loss
    /// (measured before each update).
    pub fn train_epoch(&mut self, examples: &[TrainingExample]) -> f64 {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for i in order {
            total += self
                .model
                .loss_and_gradient(&examples[i], self.supervision, &mut self.grad)
                .total();
            self.pending += 1;
            if self.pending >= self.stage.accumulation.max(1) {
                self.step();
            }
        }
        if self.pending > 0 {
            self.step();
        }
        if examples.is_empty() {
            0.0
        } else {
            total / examples.len() as f64
        }
    }

    fn step(&mut self) {
        self.grad.scale(1.0 / self.pending as f64);
        clip_grad_norm(&mut self.grad, self.stage.clip);
        if self.grad.is_finite() {
            self.optimizer.update(&mut self.model.params, &self.grad);
        } else {
            log::warn!("skipping update with a non-finite gradient");
        }
        self.grad.fill_zero();
        self.pending = 0;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_elas: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageReport {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Train for `stage.epochs` epochs. With dev data the parameters of the
/// epoch with the best dev ELAS are kept (earliest on ties), otherwise
/// those of the last epoch.
pub fn train_stage(
    parser: Parser,
    train: &[PreparedSentence],
    dev: Option<&[PreparedSentence]>,
    stage: &StageConfig,
    seed: u64,
) -> Result<(Parser, StageReport)> {
    let Parser { model, lemmas, options } = parser;
    let examples = make_examples(train, &model);
    let mut trainer = Trainer::new(model, stage.clone(), options.mode, seed);
    let mut report = StageReport::default();
    let mut best: Option<(f64, ScoreModel)> = None;

    for epoch in 1..=stage.epochs {
        let loss = trainer.train_epoch(&examples);
        let dev_elas = match dev {
            Some(dev) if !dev.is_empty() => {
                let p = Parser::new(trainer.model.clone(), lemmas.clone(), options);
                let f1 = evaluate(&p, dev, Metric::Elas)?.f1;
                if best.as_ref().map_or(true, |(b, _)| f1 > *b) {
                    best = Some((f1, trainer.model.clone()));
                    report.best_epoch = epoch;
                }
                Some(f1)
            }
            _ => None,
        };
        log::info!(
            "epoch {} loss {:.4}{}",
            epoch,
            loss,
            dev_elas.map(|f| format!(" dev ELAS {:.2}", 100.0 * f)).unwrap_or_default()
        );
        report.epochs.push(EpochLog { epoch, loss, dev_elas });
    }

    let model = match best {
        Some((_, m)) => m,
        None => {
            report.best_epoch = stage.epochs;
            trainer.model
        }
    };
    Ok((Parser { model, lemmas, options }, report))
}

/// Fresh parser for `train`: vocabularies and lemma lexicon from the
/// training data.
pub fn init_parser(
    train_sentences: &[Sentence],
    prepared: &[PreparedSentence],
    config: &ModelConfig,
    options: DecodeOptions,
    seed: u64,
) -> Result<Parser> {
    let model = ScoreModel::new(
        config.clone(),
        build_vocab(prepared, config),
        build_label_vocab(prepared),
        seed,
    )?;
    Ok(Parser::new(model, build_lemma_lexicon(train_sentences), options))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageConfig {
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub dev: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub enabled: bool,
    pub epochs: usize,
    /// Finetuning learning rate as a fraction of the generic stage's.
    pub lr_ratio: f64,
    pub accumulation: usize,
    pub clip: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            enabled: true,
            epochs: 10,
            lr_ratio: 0.1,
            accumulation: 8,
            clip: 1.0,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("models")
}

/// Experiment description, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: DecodeMode,
    #[serde(default)]
    pub single_root: bool,
    #[serde(default)]
    pub repair: RepairPolicy,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Relations whose dependents' lemmas are delexicalized.
    #[serde(default)]
    pub delex_relations: Option<Vec<String>>,
    /// Grammatical subtypes beyond those seen in basic DEPREL values.
    #[serde(default)]
    pub extra_subtypes: Vec<String>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub generic: StageConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    pub language: BTreeMap<String, LanguageConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Read a config file; relative paths in it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for lang in self.language.values_mut() {
            lang.train.iter_mut().for_each(fix);
            if let Some(d) = lang.dev.as_mut() {
                fix(d);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.language.is_empty() {
            return Err(Error::Config("no [language.*] sections".into()));
        }
        for (name, lang) in &self.language {
            if lang.train.is_empty() {
                return Err(Error::Config(format!("language '{}' lists no training files", name)));
            }
        }
        if !self.generic.enabled && !self.finetune.enabled {
            return Err(Error::Config("both training stages are disabled".into()));
        }
        Ok(())
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            mode: self.mode,
            single_root: self.single_root,
            repair: self.repair,
        }
    }

    fn delexicalizer(&self, train: &[Sentence]) -> Delexicalizer {
        let subtypes = SubtypeInventory::from_sentences(train).with_subtypes(self.extra_subtypes.iter().cloned());
        let d = Delexicalizer::new(subtypes);
        match &self.delex_relations {
            Some(r) => d.with_relations(r.clone()),
            None => d,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<Sentence>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
    read_conllu(BufReader::new(file)).map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))
}

struct LanguageData {
    train: Vec<Sentence>,
    dev: Option<Vec<Sentence>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentReport {
    pub generic: Option<(PathBuf, StageReport)>,
    pub languages: BTreeMap<String, (PathBuf, StageReport)>,
    pub prep: PrepStats,
}

fn write_log(log: &mut impl Write, stage: &str, report: &StageReport) -> std::io::Result<()> {
    for e in &report.epochs {
        write!(log, "stage={} epoch={} loss={:.6}", stage, e.epoch, e.loss)?;
        if let Some(f) = e.dev_elas {
            write!(log, " dev_elas={:.4}", 100.0 * f)?;
        }
        writeln!(log)?;
    }
    writeln!(log, "stage={} best_epoch={}", stage, report.best_epoch)
}

/// Run the configured stages, writing `generic.model` and one
/// `<language>.model` per language (with lemma lexicons) plus
/// `train.log` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut data = BTreeMap::new();
    for (name, lang) in &config.language {
        let mut train = Vec::new();
        for f in &lang.train {
            train.extend(read_file(f)?);
        }
        let dev = lang.dev.as_deref().map(read_file).transpose()?;
        data.insert(name.clone(), LanguageData { train, dev });
    }

    fs::create_dir_all(&config.output_dir)?;
    let mut log = BufWriter::new(File::create(config.output_dir.join("train.log"))?);
    let options = config.decode_options();
    let mut report = ExperimentReport::default();

    let all_train: Vec<Sentence> = data.values().flat_map(|d| d.train.iter().cloned()).collect();
    let generic_delex = config.delexicalizer(&all_train);

    let generic = if config.generic.enabled {
        let (prepared, stats) = prepare_corpus(&all_train, &generic_delex)?;
        report.prep = stats;
        let dev: Vec<Sentence> = data.values().flat_map(|d| d.dev.iter().flatten().cloned()).collect();
        let (dev, _) = prepare_corpus(&dev, &generic_delex)?;
        let parser = init_parser(&all_train, &prepared, &config.model, options, config.seed)?;
        log::info!("generic stage: {} sentences, {} labels", prepared.len(), parser.model.labels.len());
        let (parser, stage) = train_stage(parser, &prepared, Some(&dev), &config.generic, config.seed)?;
        let path = config.output_dir.join("generic.model");
        parser.save(&path)?;
        write_log(&mut log, "generic", &stage)?;
        report.generic = Some((path, stage));
        Some(parser)
    } else {
        None
    };

    if config.finetune.enabled {
        for (name, lang) in &data {
            let delex = match generic {
                Some(_) => generic_delex.clone(),
                None => config.delexicalizer(&lang.train),
            };
            let (prepared, stats) = prepare_corpus(&lang.train, &delex)?;
            if generic.is_none() {
                report.prep.sentences += stats.sentences;
                report.prep.extraction_failures += stats.extraction_failures;
                report.prep.delex += stats.delex;
            }
            let dev = match &lang.dev {
                Some(d) => Some(prepare_corpus(d, &delex)?.0),
                None => None,
            };
            let stage = StageConfig {
                enabled: true,
                epochs: config.finetune.epochs,
                lr: match generic {
                    Some(_) => config.generic.lr * config.finetune.lr_ratio,
                    None => config.generic.lr,
                },
                accumulation: config.finetune.accumulation,
                clip: config.finetune.clip,
            };
            let parser = match &generic {
                Some(g) => Parser::new(g.model.clone(), build_lemma_lexicon(&lang.train), options),
                None => init_parser(&lang.train, &prepared, &config.model, options, config.seed)?,
            };
            if let Some(dev) = &dev {
                let unknown = dev
                    .iter()
                    .flat_map(|p| p.target.edges())
                    .filter(|e| parser.model.label_index(&e.label).is_none())
                    .count();
                if unknown > 0 {
                    log::warn!("{}: {} dev edge label(s) not in the training label vocabulary", name, unknown);
                }
            }
            log::info!("language {}: {} sentences", name, prepared.len());
            let (parser, stage_report) = train_stage(parser, &prepared, dev.as_deref(), &stage, config.seed)?;
            let path = config.output_dir.join(format!("{}.model", name));
            parser.save(&path)?;
            write_log(&mut log, name, &stage_report)?;
            report.languages.insert(name.clone(), (path, stage_report));
        }
    }
    log.flush()?;
    Ok(report)
}
