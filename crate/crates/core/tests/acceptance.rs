//! Acceptance criteria. Each criterion prints one `PASS` or `FAIL` line;
//! the process exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use eud_core::baseline::RepairPolicy;
use eud_core::conllu::{parse_conllu, serialize_conllu, Sentence};
use eud_core::decode::{assemble, mst_decode, DecodeMode, DecodeOptions};
use eud_core::eval::{elas, evaluate_sentences, macro_average, Metric};
use eud_core::graph::{check_connectivity, collapse_empty_nodes, merge_parallel_edges, split_parallel_edges, CollapsedGraph, Edge};
use eud_core::labels::{build_lemma_lexicon, round_trip, Delexicalizer, RoundTripReport, SubtypeInventory};
use eud_core::scorer::{GraphSupervision, ModelConfig};
use eud_core::spanning::{extract_spanning_tree, residual_edges, SpanningTree};
use eud_core::toy::{generate, Dialect, ToyConfig};
use eud_core::train::{
    evaluate, init_parser, make_examples, mean_loss, prepare_corpus, run_experiment, supervision, train_stage, ExperimentConfig,
    FinetuneConfig, LanguageConfig, Parser, PreparedSentence, StageConfig, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/gold.conllu")
}

fn fixture_text() -> String {
    fs::read_to_string(fixture_path()).expect("fixture file")
}

fn fixture() -> Vec<Sentence> {
    parse_conllu(&fixture_text()).expect("fixture parses")
}

/// Named gold corpora: the hand-annotated fixture plus toy corpora in
/// both dialects.
fn gold_corpora() -> Vec<(&'static str, Vec<Sentence>)> {
    vec![
        ("fixture", fixture()),
        ("toy-alpha", generate(&ToyConfig::new(Dialect::Alpha), 1000, 11)),
        ("toy-beta", generate(&ToyConfig::new(Dialect::Beta), 1000, 12)),
    ]
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn mst_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    let mut checked = 0;
    for n in 2..=6 {
        for _ in 0..1000 {
            let scores = common::random_scores(n, &mut rng);
            let (expected, best) = common::brute_force_mst(&scores, false);
            let got = mst_decode(&scores).expect("finite scores");
            let score = common::tree_score(&scores, got.heads());
            if !got.is_tree() || got.heads() != &expected[..] || (score - best).abs() > 1e-9 {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        mismatches == 0 && elapsed < Duration::from_secs(30),
        format!("{checked} matrices, {mismatches} mismatches, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let instances = 24u64;
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let sup = common::supervisions()[(seed % 2) as usize];
        worst = worst.max(common::max_relative_error(1000 + seed, sup, seed % 4 != 3));
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst < 1e-4 && elapsed < Duration::from_secs(10),
        format!("{instances} instances, max relative error {worst:.2e}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn extraction() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (name, corpus) in gold_corpora() {
        let mut failures = Vec::new();
        let mut partition_violations = 0;
        for (i, s) in corpus.iter().enumerate() {
            let graph = merge_parallel_edges(&collapse_empty_nodes(&s.enhanced).expect("collapsible gold"));
            let tree = match extract_spanning_tree(s, &graph) {
                Ok(t) if t.is_tree() && t.len() == graph.len() => t,
                _ => {
                    failures.push(s.label(i));
                    continue;
                }
            };
            let tree_edges: BTreeSet<Edge> = tree.edges().collect();
            let residual: BTreeSet<Edge> = residual_edges(&graph, &tree).into_iter().collect();
            let all: BTreeSet<Edge> = graph.edges().cloned().collect();
            let union: BTreeSet<Edge> = tree_edges.union(&residual).cloned().collect();
            if !tree_edges.is_subset(&all) || !tree_edges.is_disjoint(&residual) || union != all {
                partition_violations += 1;
            }
        }
        let ok = corpus.len() - failures.len();
        let rate = ok as f64 / corpus.len() as f64;
        pass &= rate >= 0.999 && partition_violations == 0;
        let mut d = format!("{name} {ok}/{} trees ({:.2}%), {partition_violations} partition violations", corpus.len(), 100.0 * rate);
        if !failures.is_empty() {
            d.push_str(&format!(", exceptions: {}", failures.join(" ")));
        }
        details.push(d);
    }
    Outcome::new(pass, details.join("; "))
}

fn overfit_corpus() -> Vec<Sentence> {
    generate(&ToyConfig::new(Dialect::Alpha), 50, 1)
}

struct OverfitRun {
    parser: Parser,
    epochs: usize,
    elas: f64,
    elapsed: Duration,
}

/// Train on `corpus` until training ELAS reaches 100 or time runs out.
fn overfit(corpus: &[Sentence], mode: DecodeMode) -> OverfitRun {
    let limit = Duration::from_secs(600);
    let delex = Delexicalizer::new(SubtypeInventory::from_sentences(corpus));
    let (prep, _) = prepare_corpus(corpus, &delex).expect("toy corpus prepares");
    let config = ModelConfig { min_word_count: 1, ..ModelConfig::default() };
    let options = DecodeOptions { mode, ..DecodeOptions::default() };
    let parser = init_parser(corpus, &prep, &config, options, 0).expect("model");
    let examples = make_examples(&prep, &parser.model);
    let stage = StageConfig { accumulation: 1, ..StageConfig::default() };
    let mut trainer = Trainer::new(parser.model.clone(), stage, mode, 0);
    let start = Instant::now();
    let mut epochs = 0;
    let mut score = 0.0;
    while start.elapsed() < limit && epochs < 1000 {
        trainer.train_epoch(&examples);
        epochs += 1;
        if epochs % 5 == 0 {
            let p = Parser::new(trainer.model.clone(), parser.lemmas.clone(), options);
            score = evaluate(&p, &prep, Metric::Elas).expect("evaluation").f1;
            if score == 1.0 {
                break;
            }
        }
    }
    OverfitRun {
        parser: Parser::new(trainer.model, parser.lemmas, options),
        epochs,
        elas: 100.0 * score,
        elapsed: start.elapsed(),
    }
}

static TREE_GRAPH_MODEL: OnceLock<Parser> = OnceLock::new();

fn overfit_oracle() -> Outcome {
    let corpus = overfit_corpus();
    let tg = overfit(&corpus, DecodeMode::TreeGraph);
    // The same corpus decodes to connected graphs under gold scores, so it
    // also serves as the corpus without disconnections for graph-fix.
    let gf = overfit(&corpus, DecodeMode::GraphFix);
    let limit = Duration::from_secs(600);
    let pass = tg.elas == 100.0 && gf.elas == 100.0 && tg.elapsed < limit && gf.elapsed < limit;
    let detail = format!(
        "tree-graph ELAS {:.2} after {} epochs ({:.1}s); graph-fix ELAS {:.2} after {} epochs ({:.1}s)",
        tg.elas,
        tg.epochs,
        tg.elapsed.as_secs_f64(),
        gf.elas,
        gf.epochs,
        gf.elapsed.as_secs_f64()
    );
    let _ = TREE_GRAPH_MODEL.set(tg.parser);
    Outcome::new(pass, detail)
}

fn connectivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut assembled_failures = 0;
    let assemblies = 10_000;
    for _ in 0..assemblies {
        let n = rng.gen_range(1..=30);
        let heads = common::random_tree(n, &mut rng);
        let tree = SpanningTree::new(heads, vec!["t".to_string(); n]);
        let density = rng.gen_range(0.0..0.3);
        let mut extra = Vec::new();
        for h in 0..=n {
            for d in 1..=n {
                if h != d && rng.gen_bool(density) {
                    extra.push(Edge::words(h, d, "x"));
                }
            }
        }
        let (g, _) = assemble(&tree, &extra);
        if !check_connectivity(&g).is_connected() {
            assembled_failures += 1;
        }
    }

    let parser = TREE_GRAPH_MODEL.get_or_init(|| overfit(&overfit_corpus(), DecodeMode::TreeGraph).parser);
    let mut inputs = overfit_corpus();
    inputs.extend(generate(&ToyConfig::new(Dialect::Alpha), 250, 77));
    inputs.extend(generate(&ToyConfig::new(Dialect::Beta), 250, 78));
    let mut decoded_failures = 0;
    let mut repaired = 0;
    for s in &inputs {
        let out = parser.parse(&s.without_empty_nodes()).expect("decodes");
        if !check_connectivity(&out.graph).is_connected() {
            decoded_failures += 1;
        }
        repaired += out.repaired;
    }
    Outcome::new(
        assembled_failures == 0 && decoded_failures == 0 && repaired == 0,
        format!(
            "{assemblies} assemblies with {assembled_failures} disconnected; {} decoded outputs with {decoded_failures} disconnected, {repaired} repairs",
            inputs.len()
        ),
    )
}

/// Half plain trees, half relative-clause-heavy sentences.
fn two_regime_corpus(count: usize, seed: u64) -> Vec<Sentence> {
    let mut heavy = ToyConfig::new(Dialect::Alpha);
    heavy.relative_clause = 0.8;
    let mut out = generate(&ToyConfig::trees_only(Dialect::Alpha), count / 2, seed);
    out.extend(generate(&heavy, count - count / 2, seed + 1));
    out
}

fn directional() -> Outcome {
    let train = two_regime_corpus(150, 100);
    let dev = two_regime_corpus(100, 200);
    let delex = Delexicalizer::new(SubtypeInventory::from_sentences(&train));
    let (tp, _) = prepare_corpus(&train, &delex).expect("train prepares");
    let (dp, _) = prepare_corpus(&dev, &delex).expect("dev prepares");
    let stage = StageConfig { epochs: 8, ..StageConfig::default() };
    let mut scores = [Vec::new(), Vec::new()];
    for seed in 0..5 {
        for (k, mode) in [DecodeMode::TreeGraph, DecodeMode::GraphFix].into_iter().enumerate() {
            let options = DecodeOptions { mode, ..DecodeOptions::default() };
            let parser = init_parser(&train, &tp, &ModelConfig::default(), options, seed).expect("model");
            let (parser, _) = train_stage(parser, &tp, None, &stage, seed).expect("training");
            scores[k].push(100.0 * evaluate(&parser, &dp, Metric::Elas).expect("evaluation").f1);
        }
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    let detail = format!("tree-graph [{}], graph-fix [{}]", fmt(&scores[0]), fmt(&scores[1]));
    let (tg, gf) = (median(scores[0].clone()), median(scores[1].clone()));
    Outcome::new(tg >= gf, format!("median dev ELAS tree-graph {tg:.2} vs graph-fix {gf:.2}; {detail}"))
}

fn round_trips() -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();

    let text = fixture_text();
    let exact = serialize_conllu(&parse_conllu(&text).expect("fixture")).expect("serializes") == text;
    pass &= exact;
    let mut normalized = 0;
    let corpora = gold_corpora();
    for (_, corpus) in &corpora {
        let once = serialize_conllu(corpus).expect("serializes");
        let twice = serialize_conllu(&parse_conllu(&once).expect("reparses")).expect("serializes");
        if once == twice {
            normalized += 1;
        }
    }
    pass &= normalized == corpora.len();
    details.push(format!(
        "fixture byte-exact {exact}, {normalized}/{} normalized corpora byte-exact",
        corpora.len()
    ));

    let mut graphs = 0;
    let mut broken = 0;
    for (_, corpus) in &corpora {
        for s in corpus {
            let g = collapse_empty_nodes(&s.enhanced).expect("collapsible");
            let merged = merge_parallel_edges(&g);
            if split_parallel_edges(&merged) != g || merge_parallel_edges(&split_parallel_edges(&merged)) != merged {
                broken += 1;
            }
            graphs += 1;
        }
    }
    pass &= broken == 0;
    details.push(format!("merge/split {}/{graphs} identical", graphs - broken));

    for (name, corpus) in &corpora {
        let delex = Delexicalizer::new(SubtypeInventory::from_sentences(corpus));
        let lexicon = build_lemma_lexicon(corpus);
        let mut report = RoundTripReport::default();
        for s in corpus {
            let g = collapse_empty_nodes(&s.enhanced).expect("collapsible");
            let r = round_trip(&delex, s, &g, &lexicon);
            report.edges += r.edges;
            report.delexicalized += r.delexicalized;
            report.restored += r.restored;
        }
        if name.starts_with("toy") {
            pass &= report.coverage() >= 0.95;
        }
        details.push(format!(
            "{name} relex coverage {:.2}% ({}/{} delexicalized of {} edges)",
            100.0 * report.coverage(),
            report.restored,
            report.delexicalized,
            report.edges
        ));
    }
    Outcome::new(pass, details.join("; "))
}

/// Per-language ELAS of the reference submission on the shared-task test
/// sets, Arabic through Ukrainian.
const TABLE3_ELAS: [f64; 17] = [
    81.23, 93.63, 92.24, 91.78, 88.19, 88.38, 91.75, 91.63, 93.31, 90.23, 86.06, 91.46, 94.01, 94.96, 89.90, 65.58,
    92.78,
];
const TABLE3_AVERAGE: f64 = 89.24;

fn evaluator() -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for (name, corpus) in gold_corpora() {
        let e = evaluate_sentences(&corpus, &corpus, Metric::Elas).expect("self evaluation");
        let u = evaluate_sentences(&corpus, &corpus, Metric::Eulas).expect("self evaluation");
        let graphs: Vec<CollapsedGraph> = corpus.iter().map(|s| collapse_empty_nodes(&s.enhanced).unwrap()).collect();
        let direct = elas(&graphs, &graphs).expect("aligned");
        let ok = e.f1 == 1.0 && u.f1 == 1.0 && direct.f1 == 1.0;
        pass &= ok;
        details.push(format!("{name} self-ELAS {:.4} self-EULAS {:.4}", e.f1, u.f1));
    }
    let avg = macro_average(&TABLE3_ELAS).expect("non-empty");
    pass &= (avg - TABLE3_AVERAGE).abs() <= 0.005;
    details.push(format!("macro average {avg:.4} vs {TABLE3_AVERAGE}"));
    Outcome::new(pass, details.join("; "))
}

fn write_corpus(dir: &std::path::Path, name: &str, sentences: &[Sentence]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serialize_conllu(sentences).expect("serializes")).expect("writes");
    path
}

fn warm_start() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let alpha = generate(&ToyConfig::new(Dialect::Alpha), 100, 31);
    let beta = generate(&ToyConfig::new(Dialect::Beta), 100, 32);
    let alpha_path = write_corpus(dir.path(), "alpha.conllu", &alpha);
    let beta_path = write_corpus(dir.path(), "beta.conllu", &beta);

    let mut all = alpha.clone();
    all.extend(beta.iter().cloned());
    let delex = Delexicalizer::new(SubtypeInventory::from_sentences(&all));
    let (beta_prep, _): (Vec<PreparedSentence>, _) = prepare_corpus(&beta, &delex).expect("prepares");
    let sup: GraphSupervision = supervision(DecodeMode::TreeGraph);

    let mut deltas = Vec::new();
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let config = ExperimentConfig {
            seed,
            mode: DecodeMode::TreeGraph,
            single_root: false,
            repair: RepairPolicy::Greedy,
            output_dir: dir.path().join(format!("run{seed}")),
            delex_relations: None,
            extra_subtypes: Vec::new(),
            model: ModelConfig::default(),
            generic: StageConfig { epochs: 3, ..StageConfig::default() },
            finetune: FinetuneConfig { epochs: 1, ..FinetuneConfig::default() },
            language: [
                ("alpha".to_string(), LanguageConfig { train: vec![alpha_path.clone()], dev: None }),
                ("beta".to_string(), LanguageConfig { train: vec![beta_path.clone()], dev: None }),
            ]
            .into_iter()
            .collect(),
        };
        let report = run_experiment(&config).expect("experiment runs");
        let options = config.decode_options();
        let generic = Parser::load(&report.generic.as_ref().expect("generic stage").0, options).expect("loads");
        let tuned = Parser::load(&report.languages["beta"].0, options).expect("loads");
        let examples = make_examples(&beta_prep, &generic.model);
        let before = mean_loss(&generic.model, &examples, sup);
        let after = mean_loss(&tuned.model, &examples, sup);
        deltas.push(after - before);
        pairs.push(format!("{before:.4}->{after:.4}"));
    }
    let m = median(deltas);
    Outcome::new(
        m <= 0.0,
        format!("target-language loss stage 1 -> stage 2 per seed [{}], median change {m:.4}", pairs.join(" ")),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("MST oracle equivalence", mst_oracle),
        ("gradient correctness", gradient_check),
        ("spanning-tree extraction treeness", extraction),
        ("overfit oracle", overfit_oracle),
        ("connectivity by construction", connectivity),
        ("directional tree-graph vs graph-fix", directional),
        ("round trips", round_trips),
        ("evaluator arithmetic", evaluator),
        ("two-stage warm start", warm_start),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
