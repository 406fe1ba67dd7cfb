//! `eud`: train, parse, transform and evaluate enhanced UD graphs.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser as ClapParser, Subcommand, ValueEnum};
use eud_core::baseline::RepairPolicy;
use eud_core::conllu::{parse_conllu_bytes, serialize_conllu, Sentence};
use eud_core::decode::{DecodeMode, DecodeOptions};
use eud_core::eval::{evaluate_sentences, macro_average, EvalResult, Metric};
use eud_core::graph::{collapse_empty_nodes, merge_parallel_edges, split_parallel_edges, CollapsedGraph, EnhancedGraph};
use eud_core::labels::{build_lemma_lexicon, relexicalize, Delexicalizer, LemmaLexicon, RelexStats, SubtypeInventory};
use eud_core::mwt::{build_mwt_lexicon, expand_sentence, parse_rules, LexiconDecider, MwtLexicon};
use eud_core::spanning::extract_spanning_tree;
use eud_core::train::{run_experiment, ExperimentConfig, Parser};
use eud_core::NodeId;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(ClapParser)]
#[command(name = "eud", version, about = "Enhanced Universal Dependencies parsing toolkit")]
struct Cli {
    /// Worker threads for sentence-parallel work (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train generic and per-language models from a TOML config.
    Train(TrainArgs),
    /// Predict enhanced graphs (DEPS) for pre-tokenized CoNLL-U.
    Parse(ParseArgs),
    /// Score system output against gold with ELAS/EULAS.
    Eval(EvalArgs),
    /// Apply one preprocessing step file-to-file.
    Transform(TransformArgs),
    /// Build lemma and multi-word-token lexicons from training files.
    BuildLexicons(LexiconArgs),
}

#[derive(Args)]
struct TrainArgs {
    config: PathBuf,
    #[arg(long)]
    mode: Option<DecodeMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input CoNLL-U (default: stdin).
    input: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "tree-graph")]
    mode: DecodeMode,
    /// Connectivity repair in graph-fix mode.
    #[arg(long, default_value = "greedy")]
    repair: RepairPolicy,
    /// Give the root a single child in the spanning tree.
    #[arg(long)]
    single_root: bool,
    /// Replace HEAD/DEPREL by the decoded spanning tree.
    #[arg(long)]
    overwrite_basic: bool,
    /// Accepted for interface uniformity; decoding is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Elas,
    Eulas,
    Both,
}

impl MetricArg {
    fn metrics(self) -> Vec<Metric> {
        match self {
            MetricArg::Elas => vec![Metric::Elas],
            MetricArg::Eulas => vec![Metric::Eulas],
            MetricArg::Both => vec![Metric::Elas, Metric::Eulas],
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    gold: Option<PathBuf>,
    system: Option<PathBuf>,
    /// Tab-separated `language gold system` lines; reports each language
    /// and the macro average.
    #[arg(long, conflicts_with_all = ["gold", "system"])]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    metric: MetricArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Step {
    /// Replace paths through empty nodes by composite `a>b` edges.
    Collapse,
    /// Join parallel edges into one `a+b` edge (collapses first).
    Merge,
    /// Undo `merge`.
    Split,
    /// Write the extracted spanning tree into HEAD/DEPREL.
    ExtractTree,
    /// Replace function-word lemmas in labels by placeholders.
    Delex,
    /// Fill placeholders from function-word lemmas.
    Relex,
    /// Split multi-word tokens into syntactic words.
    ExpandMwt,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(value_enum)]
    step: Step,
    /// Input CoNLL-U (default: stdin).
    input: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// delex: file whose basic DEPREL subtypes are delexicalizable
    /// (default: the input).
    #[arg(long)]
    subtypes_from: Option<PathBuf>,
    /// delex: additional grammatical subtypes, e.g. `xsubj`.
    #[arg(long, value_delimiter = ',')]
    subtypes: Vec<String>,
    /// delex: relations whose dependents' lemmas are replaced.
    #[arg(long, value_delimiter = ',')]
    relations: Option<Vec<String>>,
    /// relex: lemma lexicon TSV (default: lemmas of the input).
    #[arg(long)]
    lemmas: Option<PathBuf>,
    /// expand-mwt: multi-word token lexicon TSV.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// expand-mwt: split rules file.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct LexiconArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn data(message: impl Into<String>) -> Self {
        Failure { code: EXIT_DATA, message: message.into() }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<eud_core::Error> for Failure {
    fn from(e: eud_core::Error) -> Self {
        let code = if e.is_data_error() { EXIT_DATA } else { EXIT_INTERNAL };
        Failure { code, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_error(path: &Path, e: io::Error) -> Failure {
    Failure::data(format!("{}: {}", path.display(), e))
}

fn read_input(path: Option<&Path>) -> CliResult<Vec<Sentence>> {
    let mut buf = Vec::new();
    let name = match path {
        Some(p) if p != Path::new("-") => {
            File::open(p).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| io_error(p, e))?;
            p.display().to_string()
        }
        _ => {
            io::stdin().lock().read_to_end(&mut buf).map_err(|e| Failure::data(format!("stdin: {e}")))?;
            "stdin".to_string()
        }
    };
    parse_conllu_bytes(&buf).map_err(|e| Failure::data(format!("{name}: {e}")))
}

fn write_output(path: Option<&Path>, sentences: &[Sentence]) -> CliResult {
    let text = serialize_conllu(sentences).map_err(|e| Failure::data(e.to_string()))?;
    match path {
        Some(p) if p != Path::new("-") => fs::write(p, text).map_err(|e| io_error(p, e)),
        _ => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::data(format!("stdout: {e}"))),
    }
}

fn collapse(s: &Sentence, i: usize) -> CliResult<CollapsedGraph> {
    collapse_empty_nodes(&s.enhanced).map_err(|e| Failure::from(eud_core::Error::from(e).in_sentence(s.label(i))))
}

/// `s` without empty nodes and with `graph` as its enhanced layer.
fn with_graph(s: &Sentence, graph: CollapsedGraph) -> Sentence {
    let mut out = s.without_empty_nodes();
    out.enhanced = EnhancedGraph::clone(&graph);
    out
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let mut config = ExperimentConfig::load(&args.config).map_err(|e| match e {
        eud_core::Error::Io(io) => io_error(&args.config, io),
        other => Failure::data(format!("{}: {}", args.config.display(), other)),
    })?;
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = args.output_dir {
        config.output_dir = dir;
    }
    let report = run_experiment(&config)?;
    if report.prep.extraction_failures > 0 {
        log::warn!(
            "W-EXTRACT {} of {} training sentence(s) had no spanning tree",
            report.prep.extraction_failures,
            report.prep.sentences
        );
    }
    let mut out = io::stdout().lock();
    if let Some((path, stage)) = &report.generic {
        let _ = writeln!(out, "generic\t{}\tbest_epoch={}", path.display(), stage.best_epoch);
    }
    for (lang, (path, stage)) in &report.languages {
        let _ = writeln!(out, "{}\t{}\tbest_epoch={}", lang, path.display(), stage.best_epoch);
    }
    Ok(())
}

fn cmd_parse(args: ParseArgs) -> CliResult {
    let options = DecodeOptions {
        mode: args.mode,
        single_root: args.single_root,
        repair: args.repair,
    };
    let parser = Parser::load(&args.model, options).map_err(|e| Failure::data(format!("{}: {}", args.model.display(), e)))?;
    let input = read_input(args.input.as_deref())?;
    let results: Vec<CliResult<(Sentence, RelexStats, usize)>> = {
        use rayon::prelude::*;
        input
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let (out, parsed) = parser
                    .annotate(s, args.overwrite_basic)
                    .map_err(|e| Failure::from(eud_core::Error::from(e).in_sentence(s.label(i))))?;
                if parsed.relex.failures > 0 {
                    log::warn!("W-RELEX {}: {} placeholder(s) left unresolved", s.label(i), parsed.relex.failures);
                }
                if parsed.collisions > 0 {
                    log::debug!("W-COLLIDE {}: {} extra edge(s) coincided with tree arcs", s.label(i), parsed.collisions);
                }
                if parsed.repaired > 0 {
                    log::info!("W-REPAIR {}: {} edge(s) added for connectivity", s.label(i), parsed.repaired);
                }
                Ok((out, parsed.relex, parsed.repaired))
            })
            .collect()
    };
    let mut output = Vec::with_capacity(results.len());
    let mut relex = RelexStats::default();
    let mut repaired = 0;
    for r in results {
        let (s, stats, rep) = r?;
        relex += stats;
        repaired += rep;
        output.push(s);
    }
    log::info!(
        "parsed {} sentence(s); placeholders {} resolved {}; repaired edges {}",
        output.len(),
        relex.placeholders,
        relex.resolved,
        repaired
    );
    write_output(args.output.as_deref(), &output)
}

fn evaluate_pair(gold: &Path, system: &Path, metric: Metric) -> CliResult<EvalResult> {
    let g = read_input(Some(gold))?;
    let s = read_input(Some(system))?;
    evaluate_sentences(&g, &s, metric).map_err(|e| Failure::data(e.to_string()))
}

fn read_manifest(path: &Path) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Failure::data(format!(
                "{}:{}: expected `language<TAB>gold<TAB>system`",
                path.display(),
                n + 1
            )));
        }
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        entries.push((cols[0].to_string(), resolve(cols[1]), resolve(cols[2])));
    }
    if entries.is_empty() {
        return Err(Failure::data(format!("{}: no languages listed", path.display())));
    }
    Ok(entries)
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let metrics = args.metric.metrics();
    let mut out = String::new();
    match (&args.manifest, &args.gold, &args.system) {
        (Some(manifest), _, _) => {
            let entries = read_manifest(manifest)?;
            for metric in &metrics {
                let mut f1 = Vec::new();
                for (lang, gold, system) in &entries {
                    let r = evaluate_pair(gold, system, *metric)?;
                    for line in r.key_values(metric.name()).lines() {
                        out.push_str(&format!("{lang}.{line}\n"));
                    }
                    f1.push(r.f1);
                }
                let avg = macro_average(&f1).expect("manifest is non-empty");
                out.push_str(&format!("MACRO.{}_F1={:.2}\n", metric.name(), 100.0 * avg));
            }
        }
        (None, Some(gold), Some(system)) => {
            for metric in &metrics {
                out.push_str(&evaluate_pair(gold, system, *metric)?.key_values(metric.name()));
            }
        }
        _ => return Err(Failure::usage("eval needs GOLD and SYSTEM files or --manifest")),
    }
    print!("{out}");
    Ok(())
}

fn read_lemmas(path: &Path) -> CliResult<LemmaLexicon> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    LemmaLexicon::read_tsv(BufReader::new(file)).map_err(|e| Failure::data(format!("{}: {}", path.display(), e)))
}

fn cmd_transform(args: TransformArgs) -> CliResult {
    let input = read_input(args.input.as_deref())?;
    let mut output = Vec::with_capacity(input.len());
    match args.step {
        Step::Collapse | Step::Merge | Step::Split => {
            for (i, s) in input.iter().enumerate() {
                let g = collapse(s, i)?;
                let g = match args.step {
                    Step::Merge => merge_parallel_edges(&g),
                    Step::Split => split_parallel_edges(&g),
                    _ => g,
                };
                output.push(with_graph(s, g));
            }
        }
        Step::ExtractTree => {
            let mut failures = 0;
            for (i, s) in input.iter().enumerate() {
                let g = merge_parallel_edges(&collapse(s, i)?);
                let mut out = with_graph(s, g.clone());
                match extract_spanning_tree(s, &g) {
                    Ok(tree) => {
                        for (j, w) in out.words.iter_mut().enumerate() {
                            w.head = Some(NodeId::word(tree.head(j + 1)));
                            w.deprel = Some(tree.label(j + 1).to_string());
                        }
                    }
                    Err(e) => {
                        failures += 1;
                        log::warn!("W-EXTRACT {}: {}", s.label(i), e);
                    }
                }
                output.push(out);
            }
            log::info!("extracted {} of {} tree(s)", input.len() - failures, input.len());
        }
        Step::Delex => {
            let subtypes = match &args.subtypes_from {
                Some(p) => SubtypeInventory::from_sentences(&read_input(Some(p))?),
                None => SubtypeInventory::from_sentences(&input),
            }
            .with_subtypes(args.subtypes.iter().cloned());
            let mut delex = Delexicalizer::new(subtypes);
            if let Some(r) = &args.relations {
                delex = delex.with_relations(r.clone());
            }
            let mut placeholders = 0;
            for (i, s) in input.iter().enumerate() {
                let (g, stats) = delex.delexicalize(s, &collapse(s, i)?);
                placeholders += stats.placeholders;
                output.push(with_graph(s, g));
            }
            log::info!("delexicalized {} label(s)", placeholders);
        }
        Step::Relex => {
            let lemmas = match &args.lemmas {
                Some(p) => read_lemmas(p)?,
                None => build_lemma_lexicon(&input),
            };
            let mut total = RelexStats::default();
            for (i, s) in input.iter().enumerate() {
                let (g, stats) = relexicalize(s, &collapse(s, i)?, &lemmas, None);
                if stats.failures > 0 {
                    log::warn!("W-RELEX {}: {} placeholder(s) left unresolved", s.label(i), stats.failures);
                }
                total += stats;
                output.push(with_graph(s, g));
            }
            let coverage = if total.placeholders == 0 {
                100.0
            } else {
                100.0 * total.resolved as f64 / total.placeholders as f64
            };
            eprintln!(
                "relex: {} placeholder(s), {} resolved, coverage {:.2}%",
                total.placeholders, total.resolved, coverage
            );
        }
        Step::ExpandMwt => {
            let lexicon = match &args.lexicon {
                Some(p) => {
                    let file = File::open(p).map_err(|e| io_error(p, e))?;
                    MwtLexicon::read_tsv(BufReader::new(file)).map_err(|e| Failure::data(format!("{}: {}", p.display(), e)))?
                }
                None => MwtLexicon::default(),
            };
            let rules = match &args.rules {
                Some(p) => {
                    let file = File::open(p).map_err(|e| io_error(p, e))?;
                    parse_rules(BufReader::new(file)).map_err(|e| Failure::data(format!("{}: {}", p.display(), e)))?
                }
                None => Vec::new(),
            };
            let decider = LexiconDecider {
                lexicon: Some(&lexicon),
                rules: &rules,
            };
            for (i, s) in input.iter().enumerate() {
                let out = expand_sentence(s, &decider, &lexicon, &rules)
                    .map_err(|e| Failure::from(eud_core::Error::from(e).in_sentence(s.label(i))))?;
                output.push(out);
            }
        }
    }
    write_output(args.output.as_deref(), &output)
}

fn cmd_build_lexicons(args: LexiconArgs) -> CliResult {
    let mut sentences = Vec::new();
    for p in &args.inputs {
        sentences.extend(read_input(Some(p))?);
    }
    fs::create_dir_all(&args.output_dir).map_err(|e| io_error(&args.output_dir, e))?;
    let lemmas = build_lemma_lexicon(&sentences);
    let mwt = build_mwt_lexicon(&sentences);
    let lemma_path = args.output_dir.join("lemmas.tsv");
    let mwt_path = args.output_dir.join("mwt.tsv");
    let write = |path: &Path, f: &dyn Fn(&mut BufWriter<File>) -> io::Result<()>| -> CliResult {
        let mut w = BufWriter::new(File::create(path).map_err(|e| io_error(path, e))?);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))
    };
    write(&lemma_path, &|w| lemmas.write_tsv(w))?;
    write(&mwt_path, &|w| mwt.write_tsv(w))?;
    println!("lemmas\t{}\t{}", lemma_path.display(), lemmas.len());
    println!("mwt\t{}\t{}", mwt_path.display(), mwt.len());
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::usage("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Parse(a) => cmd_parse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Transform(a) => cmd_transform(a),
        Command::BuildLexicons(a) => cmd_build_lexicons(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();

    match panic::catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
        Err(_) => {
            eprintln!("error: internal invariant violated");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
