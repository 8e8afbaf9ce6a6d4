//! `augcode`: extract, enrich, build scenarios, train, evaluate and search.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 environment error.

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use augcode_core::bridge::{BridgeConfig, BridgeScorer};
use augcode_core::corpus::{read_corpus_strict, write_records, CodeRecord, CorpusError, Partition, ScenarioId};
use augcode_core::engine::nbow::pairs_of;
use augcode_core::engine::{build_index, model_file, rank, tfidf_baseline, train, Encoder, Optimizer, Scorer, TrainConfig};
use augcode_core::enrichment::{enrich_corpus, read_commits, write_commits, CommitCache, CommitFetcher, EnrichmentConfig};
use augcode_core::eval::{
    distractor_eval, micro_match, render_table, search_space_eval, write_report_lines, ReportLine, UniformRandomScorer,
    DEFAULT_DISTRACTORS,
};
use augcode_core::extractor::{tokenize_nl, ExtractConfig, TokenizerConfig};
use augcode_core::pipeline::{
    extract_tree, is_corpus_file, load_model, replay, reprocess_records, tree_repo_name, ErrorClass, PipelineConfig,
    PipelineError, StageStatus,
};
use augcode_core::scenario::{build_dataset, AugmentedRecord, CommitLookup, NoCommits, ScenarioConfig};
use augcode_core::synthetic::{comment_rich_sources, separable_pairs, CommentRichSpec, SeparableSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "augcode", version, about = "Corpus augmentation and code retrieval evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose Python sources (a directory or a corpus JSONL) into corpus records.
    Extract(ExtractArgs),
    /// Attach commit messages to records through the GitHub API and a local cache.
    Enrich(EnrichArgs),
    /// Build one augmented-code scenario as (X, Y) pairs.
    BuildAcs(BuildAcsArgs),
    /// Train the bag-of-words dual encoder.
    Train(TrainArgs),
    /// Score a scenario dataset: distractor MRR, search-space MRR, micro-matching.
    Eval(EvalArgs),
    /// Rank indexed code for natural-language queries.
    Search(SearchArgs),
    /// Run extract, enrich, build-acs, train and eval from one config file.
    Replay(ReplayArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Directory of .py files, or an existing corpus .jsonl[.gz] to re-process.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Repo label for records from a directory; defaults to the directory name.
    #[arg(long)]
    repo: Option<String>,
    #[arg(long)]
    split_identifiers: bool,
    #[arg(long, default_value_t = 2000)]
    max_function_lines: usize,
}

#[derive(Args)]
struct EnrichArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    /// Never touch the network; cache misses are reported as errors.
    #[arg(long)]
    offline: bool,
    /// Write the distinct commit messages found as JSON lines.
    #[arg(long)]
    commits_out: Option<PathBuf>,
    #[arg(long, default_value = augcode_core::enrichment::DEFAULT_API_BASE)]
    api_base_url: String,
    /// Environment variable holding the API token.
    #[arg(long, default_value = augcode_core::enrichment::DEFAULT_TOKEN_ENV)]
    token_env: String,
    #[arg(long, default_value_t = 5000)]
    max_requests_per_hour: u32,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
}

#[derive(Args)]
struct BuildAcsArgs {
    #[arg(long, value_parser = parse_scenario)]
    scenario: ScenarioId,
    #[arg(long)]
    input: PathBuf,
    /// Commit cache directory or commits JSONL file.
    #[arg(long)]
    commits: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 512)]
    max_tokens: usize,
    #[arg(long)]
    split_identifiers: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Scenario dataset from build-acs.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Momentum coefficient; 0 trains with plain SGD.
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    #[arg(long, default_value_t = 0.07)]
    temperature: f64,
    #[arg(long, default_value_t = 0.0)]
    margin_offset: f64,
    #[arg(long, default_value_t = 2)]
    min_frequency: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Per-epoch loss and validation MRR as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScorerKind {
    Nbow,
    Tfidf,
    Bridge,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Distractor,
    SearchSpace,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "nbow")]
    scorer: ScorerKind,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Command launched through `sh -c` for the bridge scorer.
    #[arg(long)]
    bridge_cmd: Option<String>,
    #[arg(long, value_enum, default_value = "distractor")]
    mode: EvalMode,
    #[arg(long, default_value_t = DEFAULT_DISTRACTORS)]
    distractors: usize,
    /// Partition whose pairs are queried.
    #[arg(long, default_value = "test")]
    partition: Partition,
    /// search-space: also index these partitions (comma separated).
    #[arg(long, value_delimiter = ',')]
    extra_index: Vec<Partition>,
    /// search-space: number of queries to sample.
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write report lines here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Space {
    /// Test partition only.
    #[value(name = "1x")]
    One,
    /// Test and validation partitions.
    Full,
}

#[derive(Args)]
struct SearchArgs {
    /// Trained model; omit with --scorer tfidf.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Scenario dataset providing the index.
    #[arg(long)]
    index: PathBuf,
    #[arg(long, value_enum, default_value = "1x")]
    space: Space,
    #[arg(long, value_enum, default_value = "nbow")]
    scorer: ScorerKind,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Answer one query and exit instead of reading queries from stdin.
    #[arg(long)]
    query: Option<String>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthKind {
    /// Vocabulary-clustered (X, Y) pairs as a scenario dataset.
    Separable,
    /// A Python source tree whose comments carry the discriminative words.
    CommentRich,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(value_enum)]
    kind: SynthKind,
    /// File for separable, directory for comment-rich.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of pairs (separable) or functions (comment-rich).
    #[arg(long)]
    size: Option<usize>,
}

fn parse_scenario(s: &str) -> Result<ScenarioId, String> {
    s.parse::<ScenarioId>().map_err(|e| e.to_string())
}

struct Failure {
    code: u8,
    message: String,
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage(m: impl Into<String>) -> Failure {
    Failure { code: 1, message: m.into() }
}

fn data(m: impl std::fmt::Display) -> Failure {
    Failure { code: 2, message: m.to_string() }
}

fn env_err(m: impl std::fmt::Display) -> Failure {
    Failure { code: 3, message: m.to_string() }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e.class {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Environment => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        PipelineError::from(e).into()
    }
}

fn io_fail(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| env_err(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Outcome<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_fail(parent))?;
    }
    fs::File::create(path).map(BufWriter::new).map_err(io_fail(path))
}

fn write_corpus_file(records: &[CodeRecord], path: &Path) -> Outcome<usize> {
    let mut f = create(path)?;
    let n = write_records(records, &mut f).map_err(io_fail(path))?;
    f.flush().map_err(io_fail(path))?;
    Ok(n)
}

fn load_pairs(path: &Path) -> Outcome<Vec<AugmentedRecord>> {
    Ok(read_corpus_strict(path, None)?.into_iter().map(AugmentedRecord::from_code_record).collect())
}

fn cmd_extract(a: ExtractArgs) -> Outcome {
    let cfg = ExtractConfig {
        max_function_lines: a.max_function_lines,
        tokenizer: TokenizerConfig {
            split_identifiers: a.split_identifiers,
        },
    };
    let (records, diagnostics, files) = if is_corpus_file(&a.input) {
        let (r, d) = reprocess_records(read_corpus_strict(&a.input, None)?, &cfg);
        (r, d, 1)
    } else if a.input.is_dir() {
        let repo = a.repo.clone().unwrap_or_else(|| tree_repo_name(&a.input));
        let t = extract_tree(&a.input, &repo, &cfg)?;
        (t.records, t.diagnostics, t.files)
    } else {
        return Err(env_err(format!("{} is neither a directory nor a corpus file", a.input.display())));
    };
    for d in &diagnostics {
        eprintln!("{}:{}: {}", d.path, d.line, d.message);
    }
    let n = write_corpus_file(&records, &a.output)?;
    println!("extracted {n} functions from {files} files ({} diagnostics) -> {}", diagnostics.len(), a.output.display());
    Ok(())
}

fn cmd_enrich(a: EnrichArgs) -> Outcome {
    let mut cfg = EnrichmentConfig::new(&a.cache);
    cfg.offline = a.offline;
    cfg.api_base_url = a.api_base_url;
    cfg.token_env = a.token_env;
    cfg.max_requests_per_hour = a.max_requests_per_hour;
    cfg.workers = a.workers;
    cfg.request_timeout = Duration::from_secs(a.timeout_secs.max(1));
    let cfg = cfg.with_token_from_env();
    let fetcher = CommitFetcher::new(cfg).map_err(|e| match e {
        augcode_core::enrichment::EnrichmentError::InvalidConfig(m) => usage(m),
        other => env_err(other),
    })?;
    let corpus = read_corpus_strict(&a.input, None)?;
    let enriched = enrich_corpus(corpus, &fetcher);
    for r in &enriched.records {
        if let augcode_core::enrichment::Outcome::Error(e) = &r.result.outcome {
            eprintln!("{} {}: {e}", r.result.repo, r.result.sha);
        }
    }
    if let Some(path) = &a.commits_out {
        let mut f = create(path)?;
        write_commits(enriched.commits().values(), &mut f).map_err(io_fail(path))?;
    }
    println!("{}", enriched.summary);
    Ok(())
}

fn cmd_build_acs(a: BuildAcsArgs) -> Outcome {
    if a.max_tokens == 0 {
        return Err(usage("--max-tokens must be positive"));
    }
    let corpus = read_corpus_strict(&a.input, None)?;
    let lookup: Box<dyn CommitLookup> = match &a.commits {
        None => Box::new(NoCommits),
        Some(p) if p.is_dir() => Box::new(CommitCache::at(p)),
        Some(p) if p.is_file() => Box::new(read_commits(p).map_err(data)?),
        Some(p) => return Err(env_err(format!("commits source {} not found", p.display()))),
    };
    let cfg = ScenarioConfig {
        max_tokens: a.max_tokens,
        tokenizer: TokenizerConfig {
            split_identifiers: a.split_identifiers,
        },
    };
    let ds = build_dataset(&corpus, a.scenario, lookup.as_ref(), &cfg);
    let rows: Vec<CodeRecord> = ds.records.iter().map(AugmentedRecord::to_code_record).collect();
    write_corpus_file(&rows, &a.output)?;
    let rejected: Vec<String> = ds.summary.rejected.iter().map(|(k, n)| format!("{k:?}={n}")).collect();
    println!(
        "scenario {}: {} in, {} emitted, rejected [{}] -> {}",
        a.scenario,
        ds.summary.input,
        ds.summary.emitted,
        rejected.join(", "),
        a.output.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let cfg = TrainConfig {
        dim: a.dim,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        optimizer: if a.momentum > 0.0 {
            Optimizer::Momentum { beta: a.momentum }
        } else {
            Optimizer::Sgd
        },
        temperature: a.temperature,
        margin_offset: a.margin_offset,
        min_frequency: a.min_frequency,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let records = load_pairs(&a.input)?;
    let part = |p| records.iter().filter(|r| r.partition == p).cloned().collect::<Vec<_>>();
    let (tr, va) = (part(Partition::Train), part(Partition::Valid));
    let outcome = train(&pairs_of(&tr), &pairs_of(&va), &cfg).map_err(data)?;
    for s in &outcome.trace {
        match s.valid_mrr {
            Some(m) => eprintln!("epoch {:>3}  loss {:.5}  valid_mrr {:.4}", s.epoch, s.mean_loss, m),
            None => eprintln!("epoch {:>3}  loss {:.5}", s.epoch, s.mean_loss),
        }
    }
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_fail(parent))?;
    }
    model_file::save(&outcome.model, &a.output).map_err(env_err)?;
    if let Some(log) = &a.log {
        let mut f = create(log)?;
        for s in &outcome.trace {
            writeln!(f, "{}", serde_json::to_string(s).expect("stats serialize")).map_err(io_fail(log))?;
        }
        f.flush().map_err(io_fail(log))?;
    }
    println!("trained on {} pairs ({} valid) -> {}", tr.len(), va.len(), a.output.display());
    Ok(())
}

fn open_scorer(kind: ScorerKind, model: Option<&Path>, bridge_cmd: Option<&str>, fit_on: &[AugmentedRecord], seed: u64) -> Outcome<Box<dyn Scorer>> {
    Ok(match kind {
        ScorerKind::Nbow => {
            let path = model.ok_or_else(|| usage("--model is required for the nbow scorer"))?;
            Box::new(load_model(path)?)
        }
        ScorerKind::Tfidf => Box::new(tfidf_baseline(fit_on)),
        ScorerKind::Random => Box::new(UniformRandomScorer { seed }),
        ScorerKind::Bridge => {
            let cmd = bridge_cmd.ok_or_else(|| usage("--bridge-cmd is required for the bridge scorer"))?;
            Box::new(BridgeScorer::spawn(BridgeConfig::new(cmd)).map_err(env_err)?)
        }
    })
}

fn eval_failure(e: augcode_core::eval::EvalError) -> Failure {
    match e {
        augcode_core::eval::EvalError::Score(augcode_core::engine::ScoreError::Transient(_)) => env_err(e),
        other => data(other),
    }
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let records = load_pairs(&a.input)?;
    let scorer = open_scorer(a.scorer, a.model.as_deref(), a.bridge_cmd.as_deref(), &records, a.seed)?;
    let queries: Vec<AugmentedRecord> = records.iter().filter(|r| r.partition == a.partition).cloned().collect();
    if queries.is_empty() {
        return Err(data(format!("no {} pairs in {}", a.partition, a.input.display())));
    }
    let retrieval = match a.mode {
        EvalMode::Distractor => distractor_eval(scorer.as_ref(), &queries, a.distractors, a.seed).map_err(eval_failure)?,
        EvalMode::SearchSpace => {
            let mut index = queries.clone();
            index.extend(records.iter().filter(|r| a.extra_index.contains(&r.partition) && r.partition != a.partition).cloned());
            let qs: Vec<usize> = (0..queries.len()).collect();
            search_space_eval(scorer.as_ref(), &index, &qs, a.queries, a.seed).map_err(eval_failure)?
        }
    };
    let micro = micro_match(scorer.as_ref(), &queries).map_err(eval_failure)?;
    let lines = [ReportLine::Retrieval(retrieval), ReportLine::MicroMatch(micro)];
    match &a.output {
        Some(p) => {
            let mut f = create(p)?;
            write_report_lines(&lines, &mut f).and_then(|_| f.flush()).map_err(io_fail(p))?;
            print!("{}", render_table(&lines));
        }
        None => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            write_report_lines(&lines, &mut out).map_err(env_err)?;
            eprint!("{}", render_table(&lines));
        }
    }
    Ok(())
}

fn preview(code: &str) -> String {
    let line = code.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    let mut s: String = line.chars().take(60).collect();
    if line.chars().count() > 60 {
        s.push_str("...");
    }
    s
}

fn print_hits(out: &mut impl Write, encoder: &dyn Encoder, index: &augcode_core::engine::CodeIndex, query: &str, k: usize) -> Outcome {
    let hits = rank(encoder, index, &tokenize_nl(query).tokens, k).map_err(data)?;
    for (i, h) in hits.iter().enumerate() {
        writeln!(
            out,
            "{:>3}  {:>9.4}  {}  {}",
            i + 1,
            h.score,
            h.key,
            preview(&index.entries[h.position].display_code)
        )
        .map_err(env_err)?;
    }
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Outcome {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let records = load_pairs(&a.index)?;
    let indexed: Vec<AugmentedRecord> = records
        .into_iter()
        .filter(|r| r.partition == Partition::Test || (a.space == Space::Full && r.partition == Partition::Valid))
        .collect();
    if indexed.is_empty() {
        return Err(data("the selected search space is empty"));
    }
    let encoder: Box<dyn Encoder> = match a.scorer {
        ScorerKind::Nbow => {
            let path = a.model.as_deref().ok_or_else(|| usage("--model is required for the nbow scorer"))?;
            Box::new(load_model(path)?)
        }
        ScorerKind::Tfidf => Box::new(tfidf_baseline(&indexed)),
        _ => return Err(usage("search supports the nbow and tfidf scorers")),
    };
    let index = build_index(encoder.as_ref(), &indexed);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if let Some(q) = &a.query {
        return print_hits(&mut out, encoder.as_ref(), &index, q, a.k);
    }
    writeln!(out, "index: {} functions; empty line re-prompts, end of input exits", index.len()).map_err(env_err)?;
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        write!(out, "query> ").and_then(|_| out.flush()).map_err(env_err)?;
        let Some(line) = lines.next() else {
            writeln!(out).map_err(env_err)?;
            return Ok(());
        };
        let line = line.map_err(env_err)?;
        let q = line.trim();
        if q.is_empty() {
            continue;
        }
        print_hits(&mut out, encoder.as_ref(), &index, q, a.k)?;
    }
}

fn cmd_replay(a: ReplayArgs) -> Outcome {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(o) = a.output_dir {
        cfg.output_dir = o;
    }
    let summary = replay(&cfg)?;
    for d in &summary.diagnostics {
        eprintln!("{}:{}: {}", d.path, d.line, d.message);
    }
    for (stage, status) in &summary.stages {
        let s = match status {
            StageStatus::Ran => "ran",
            StageStatus::Skipped => "skipped (up to date)",
        };
        println!("{stage:<10} {s}");
    }
    print!("{}", render_table(&summary.reports));
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Outcome {
    match a.kind {
        SynthKind::Separable => {
            let mut spec = SeparableSpec {
                seed: a.seed,
                ..SeparableSpec::default()
            };
            if let Some(n) = a.size {
                spec.pairs = n;
            }
            let rows: Vec<CodeRecord> = separable_pairs(&spec).iter().map(AugmentedRecord::to_code_record).collect();
            let n = write_corpus_file(&rows, &a.output)?;
            println!("wrote {n} pairs -> {}", a.output.display());
        }
        SynthKind::CommentRich => {
            let mut spec = CommentRichSpec {
                seed: a.seed,
                ..CommentRichSpec::default()
            };
            if let Some(n) = a.size {
                spec.functions = n;
            }
            let files = comment_rich_sources(&spec);
            for f in &files {
                let p = a.output.join(&f.path);
                let parent = p.parent().expect("file under output dir");
                fs::create_dir_all(parent).map_err(io_fail(parent))?;
                fs::write(&p, &f.text).map_err(io_fail(&p))?;
            }
            println!("wrote {} functions in {} files -> {}", spec.functions, files.len(), a.output.display());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Extract(a) => cmd_extract(a),
        Command::Enrich(a) => cmd_enrich(a),
        Command::BuildAcs(a) => cmd_build_acs(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Search(a) => cmd_search(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("augcode: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
