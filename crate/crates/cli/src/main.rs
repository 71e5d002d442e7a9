use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cear_core::annotate::annotate_corpus;
use cear_core::candidates::{corpus_pairs, CandidatePair};
use cear_core::corpus::{list_files, DocumentStore, IngestResult, Segmenter};
use cear_core::exec::{with_jobs, Parallelism};
use cear_core::kg::{Normalizer, DEFAULT_NORM_MIN_LENGTH};
use cear_core::ner_eval::{error_table, score_strict_in};
use cear_core::ontology::{build_lexicon, EntityKind, Lexicon, Ontology};
use cear_core::pipeline::{
    build_graph, merge_external, read_annotation_dir, read_annotation_dir_unchecked, read_jsonl, run_pipeline,
    write_annotation_dir, write_atomic, write_json, write_jsonl, PipelineConfig, ValidatorConfig, ValidatorKind,
    DEFAULT_MIN_REF, DEFAULT_ROLE_MIN_LENGTH,
};
use cear_core::validate::{
    compact_cache, read_records, validate_all, VerdictCache, DEFAULT_TEMPERATURE, DEFAULT_TOP_P,
};

#[derive(Parser, Debug)]
#[command(name = "cear", version, about = "Knowledge graph of chemical entities and their roles")]
struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Run corpus-level loops on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Add page-wise documents (.json or .txt) to a store.
    Ingest {
        /// A document file or a directory of them.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Build a gazetteer lexicon from an OBO ontology.
    Lexicon {
        #[arg(long)]
        obo: PathBuf,
        #[arg(long, value_enum, default_value_t = KindArg::Role)]
        kind: KindArg,
        #[arg(long = "min-len", default_value_t = DEFAULT_ROLE_MIN_LENGTH)]
        min_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tag every stored document with one or more lexicons.
    Annotate {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, required = true)]
        lexicon: Vec<PathBuf>,
        /// Directory of external standoff files to merge in.
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Strict-span evaluation of predicted against gold standoff files.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Check spans against stored document text.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long = "top-k", default_value_t = 8)]
        top_k: usize,
        /// Also write metrics and error tables as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Enumerate (chemical, role) pairs from annotated sentences.
    Candidates {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ask a validator about every pair, caching verdicts.
    Validate(ValidateArgs),
    /// Drop duplicate keys from a verdict cache, keeping the first record.
    CompactCache {
        #[arg(long)]
        cache: PathBuf,
    },
    /// Build the knowledge graph from confirmed verdicts.
    Build(BuildArgs),
    /// Run every stage from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. `--set min_ref=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Also print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    /// Deterministic offline validator.
    #[arg(long, conflicts_with_all = ["endpoint", "model"])]
    stub: bool,
    /// Chat-completions URL (default: $CEAR_LLM_ENDPOINT).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, required_unless_present = "stub")]
    model: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long = "top-p", default_value_t = DEFAULT_TOP_P)]
    top_p: f64,
    /// File with the system prompt template.
    #[arg(long)]
    system: Option<PathBuf>,
    /// File with the user prompt template.
    #[arg(long)]
    user: Option<PathBuf>,
    /// Concurrent validator requests.
    #[arg(long = "max-in-flight", default_value_t = 4)]
    max_in_flight: usize,
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Verdict records (JSONL).
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    obo: PathBuf,
    #[arg(long = "min-ref", default_value_t = DEFAULT_MIN_REF)]
    min_ref: usize,
    #[arg(long = "norm-min-len", default_value_t = DEFAULT_NORM_MIN_LENGTH)]
    norm_min_len: usize,
    #[arg(long)]
    out: PathBuf,
    /// Annotate every relation with its supporting text locations.
    #[arg(long = "rdf-star")]
    rdf_star: bool,
    #[arg(long)]
    html: Option<PathBuf>,
    /// minRef values for the statistics table.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 5, 10, 20, 50])]
    stats: Vec<usize>,
    /// Also write the statistics table as JSON.
    #[arg(long = "stats-json")]
    stats_json: Option<PathBuf>,
    /// Print the k most and least frequent relations.
    #[arg(long)]
    rank: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Role,
    Chemical,
    Both,
}

impl KindArg {
    fn kinds(self) -> Vec<EntityKind> {
        match self {
            KindArg::Role => vec![EntityKind::Role],
            KindArg::Chemical => vec![EntityKind::Chemical],
            KindArg::Both => vec![EntityKind::Chemical, EntityKind::Role],
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.jobs == Some(0) {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(2);
    }
    let parallelism = if cli.sequential { Parallelism::Sequential } else { Parallelism::Rayon };
    match with_jobs(cli.jobs, || dispatch(cli.command, parallelism, cli.jobs)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command, par: Parallelism, jobs: Option<usize>) -> Result<()> {
    match command {
        Command::Ingest { input, store } => ingest(&input, &store, par),
        Command::Lexicon { obo, kind, min_len, out } => lexicon(&obo, kind, min_len, &out),
        Command::Annotate { store, lexicon, external, out } => {
            annotate(&store, &lexicon, external.as_deref(), &out, par)
        }
        Command::Eval { gold, pred, store, top_k, json } => {
            eval(&gold, &pred, store.as_deref(), top_k, json.as_deref())
        }
        Command::Candidates { store, ann, out } => candidates(&store, &ann, &out, par),
        Command::Validate(args) => validate(args),
        Command::CompactCache { cache } => {
            let (kept, dropped) = compact_cache(&cache)?;
            println!("kept {kept} records, dropped {dropped}");
            Ok(())
        }
        Command::Build(args) => build(args, par),
        Command::Run { config, overrides, json } => run(&config, &overrides, jobs, json),
    }
}

fn ingest(input: &Path, store_dir: &Path, par: Parallelism) -> Result<()> {
    let store = DocumentStore::open(store_dir)?;
    let files = if input.is_dir() { list_files(input, &["json", "txt"])? } else { vec![input.to_path_buf()] };
    let (mut added, mut duplicates, mut failed) = (0, 0, 0);
    for (path, outcome) in store.ingest_paths(&files, par) {
        match outcome {
            Ok(IngestResult::Added(doc)) => {
                added += 1;
                println!("Added     {} {}", doc.checksum, path.display());
            }
            Ok(IngestResult::Duplicate(c)) => {
                duplicates += 1;
                println!("Duplicate {c} {}", path.display());
            }
            Err(e) => {
                failed += 1;
                eprintln!("Failed    {}: {e}", path.display());
            }
        }
    }
    println!("{added} added, {duplicates} duplicate, {failed} failed; store holds {} documents", store.len());
    if failed > 0 {
        bail!("{failed} file(s) could not be ingested");
    }
    Ok(())
}

fn lexicon(obo: &Path, kind: KindArg, min_len: usize, out: &Path) -> Result<()> {
    let ontology = Ontology::from_path(obo).with_context(|| format!("loading {}", obo.display()))?;
    let kinds = ontology.classify();
    let lexicon = build_lexicon(&ontology, &kinds, &kind.kinds(), min_len)?;
    for d in ontology.diagnostics.iter().chain(lexicon.diagnostics()) {
        eprintln!("diagnostic: {d}");
    }
    let (chem, role) = lexicon.entries().iter().fold((0, 0), |(c, r), e| match e.kind {
        EntityKind::Chemical => (c + 1, r),
        EntityKind::Role => (c, r + 1),
    });
    println!(
        "{} terms; {} keys ({chem} chemical, {role} role); {} diagnostics",
        ontology.terms.len(),
        lexicon.len(),
        ontology.diagnostics.len() + lexicon.diagnostics().len()
    );
    write_json(out, &lexicon.to_file())?;
    Ok(())
}

fn annotate(
    store_dir: &Path,
    lexicons: &[PathBuf],
    external: Option<&Path>,
    out: &Path,
    par: Parallelism,
) -> Result<()> {
    let store = DocumentStore::open(store_dir)?;
    let lexicons: Vec<Lexicon> = lexicons
        .iter()
        .map(|p| Lexicon::read_json(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<_>>()?;
    let refs: Vec<&Lexicon> = lexicons.iter().collect();
    let mut docs = annotate_corpus(&store.documents(), &refs, &Segmenter::default(), par);
    if let Some(dir) = external {
        docs = merge_external(docs, read_annotation_dir(dir, &store)?);
    }
    write_annotation_dir(out, &docs)?;
    let mentions: usize = docs.iter().map(|d| d.mentions.len()).sum();
    println!("{} documents, {mentions} mentions", docs.len());
    Ok(())
}

fn eval(gold: &Path, pred: &Path, store: Option<&Path>, top_k: usize, json: Option<&Path>) -> Result<()> {
    let (gold, pred) = match store {
        Some(dir) => {
            let store = DocumentStore::open(dir)?;
            (read_annotation_dir(gold, &store)?, read_annotation_dir(pred, &store)?)
        }
        None => (read_annotation_dir_unchecked(gold)?, read_annotation_dir_unchecked(pred)?),
    };
    let docs: BTreeSet<_> = gold.iter().map(|d| d.doc_checksum.clone()).collect();
    let gold: Vec<_> = gold.into_iter().flat_map(|d| d.mentions).collect();
    let pred: Vec<_> = pred.into_iter().flat_map(|d| d.mentions).collect();
    let metrics = score_strict_in(&docs, &gold, &pred)?;
    let errors = error_table(&gold, &pred, top_k);
    print!("{metrics}\n{errors}");
    if let Some(path) = json {
        write_json(path, &serde_json::json!({ "metrics": metrics, "errors": errors }))?;
    }
    Ok(())
}

fn candidates(store_dir: &Path, ann: &Path, out: &Path, par: Parallelism) -> Result<()> {
    let store = DocumentStore::open(store_dir)?;
    let docs = read_annotation_dir(ann, &store)?;
    let (sentences, pairs) = corpus_pairs(&docs, &store, &Segmenter::default(), par)?;
    write_jsonl(out, &pairs)?;
    println!("{sentences} candidate sentences, {} pairs", pairs.len());
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<()> {
    let cfg = ValidatorConfig {
        kind: if args.stub { ValidatorKind::Stub } else { ValidatorKind::Llm },
        endpoint: args.endpoint,
        model: args.model,
        temperature: args.temperature,
        top_p: args.top_p,
        system_prompt: args.system,
        user_prompt: args.user,
        max_in_flight: args.max_in_flight,
    };
    let pairs: Vec<CandidatePair> = read_jsonl(&args.pairs)?;
    let cache = VerdictCache::open(&args.cache)?;
    let before = cache.len();
    let validator = cfg.validator()?;
    let run = validate_all(&pairs, validator.as_ref(), &cache, &cfg.template()?, cfg.max_in_flight)?;
    let s = &run.summary;
    println!(
        "{} pairs: {} confirmed, {} rejected, {} ambiguous, {} transport failures; {} new verdicts",
        s.pairs,
        s.confirmed,
        s.rejected,
        s.ambiguous,
        s.transport_failures,
        cache.len() - before
    );
    if s.transport_failures > 0 {
        bail!("{} pair(s) could not be validated; rerun to retry", s.transport_failures);
    }
    Ok(())
}

fn build(args: BuildArgs, par: Parallelism) -> Result<()> {
    if args.min_ref == 0 {
        bail!("--min-ref must be at least 1");
    }
    let records = read_records(&args.cache)?;
    let ontology = Ontology::from_path(&args.obo).with_context(|| format!("loading {}", args.obo.display()))?;
    let normalizer = Normalizer::from_ontology(&ontology, args.norm_min_len)?;
    let out = build_graph(&records, &normalizer, args.min_ref, &args.stats, args.rank.unwrap_or(0), par);
    let text = if args.rdf_star { out.rdf_star() } else { out.turtle() };
    write_atomic(&args.out, text.as_bytes())?;
    if let Some(path) = &args.html {
        write_atomic(path, out.html().as_bytes())?;
    }
    if let Some(path) = &args.stats_json {
        write_json(path, &out.stats)?;
    }
    println!(
        "{} relations, {} kept at minRef {} ({} records dropped as too short)",
        out.aggregation.relations.len(),
        out.graph.relations.len(),
        args.min_ref,
        out.aggregation.dropped_short
    );
    print!("{}", out.stats);
    if args.rank.is_some() {
        print!("{}", out.ranking);
    }
    Ok(())
}

fn run(config: &Path, overrides: &[String], jobs: Option<usize>, json: bool) -> Result<()> {
    let mut cfg = PipelineConfig::load(config, overrides)?;
    if jobs.is_some() {
        cfg.jobs = jobs;
    }
    let summary = run_pipeline(&cfg)?;
    print!("{summary}");
    for e in summary.accounting_errors() {
        eprintln!("accounting: {e}");
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    }
    Ok(())
}
