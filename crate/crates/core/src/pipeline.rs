//! End-to-end runs: extract, enrich, build-acs, train, eval.
//!
//! Every stage writes its artifacts into one run directory and records
//! sha256 hashes of its inputs, configuration and outputs in
//! `manifest.json`. A stage whose recorded hashes still match is skipped.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::bridge::{BridgeConfig, BridgeScorer};
use crate::corpus::{read_corpus_strict, write_records, CodeRecord, CorpusError, Partition, ScenarioId};
use crate::engine::nbow::pairs_of;
use crate::engine::{model_file, tfidf_baseline, train, Optimizer, RetrievalModel, Scorer, TrainConfig};
use crate::enrichment::{enrich_corpus, read_commits, write_commits, CommitFetcher, EnrichmentConfig};
use crate::eval::{distractor_eval, micro_match, render_table, write_reports, ReportLine};
use crate::extractor::{decode_source, extract_functions_with, tokenize_code_with, tokenize_nl, Diagnostic, DecomposedFunction, ExtractConfig, TokenizerConfig};
use crate::scenario::{build_dataset, AugmentedRecord, NoCommits, RejectionSummary, ScenarioConfig};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const COMMITS_FILE: &str = "commits.jsonl";
pub const ACS_FILE: &str = "acs.jsonl";
pub const MODEL_FILE: &str = "model.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_FILE: &str = "report.jsonl";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// How a failure should be reported to a caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Environment,
}

#[derive(Debug, thiserror::Error)]
#[error("{}{message}", stage.map(|s| format!("stage {s}: ")).unwrap_or_default())]
pub struct PipelineError {
    pub stage: Option<&'static str>,
    pub class: ErrorClass,
    pub message: String,
}

impl PipelineError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            stage: None,
            class,
            message: message.into(),
        }
    }

    fn at(mut self, stage: &'static str) -> Self {
        self.stage = Some(stage);
        self
    }
}

fn io_err(path: &Path, e: io::Error) -> PipelineError {
    PipelineError::new(ErrorClass::Environment, format!("{}: {e}", path.display()))
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        let class = match e {
            CorpusError::Open { .. } | CorpusError::Write { .. } => ErrorClass::Environment,
            _ => ErrorClass::Data,
        };
        PipelineError::new(class, e.to_string())
    }
}

/// Source tree or an existing corpus file.
pub fn is_corpus_file(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    path.is_file() && (name.ends_with(".jsonl") || name.ends_with(".jsonl.gz") || name.ends_with(".json.gz"))
}

/// 80/10/10 split on the hash of the source key, stable across runs and machines.
pub fn partition_for(repo: &str, path: &str, func_name: &str) -> Partition {
    let digest = Sha256::digest(format!("{repo}:{path}:{func_name}").as_bytes());
    match u64::from_be_bytes(digest[..8].try_into().expect("8 bytes")) % 10 {
        0..=7 => Partition::Train,
        8 => Partition::Valid,
        _ => Partition::Test,
    }
}

pub fn record_from_function(repo: &str, path: &str, d: &DecomposedFunction, tokenizer: TokenizerConfig) -> CodeRecord {
    CodeRecord {
        repo: repo.into(),
        path: path.into(),
        url: String::new(),
        func_name: d.func_name.clone(),
        original_string: d.source.clone(),
        language: "python".into(),
        code: d.code.clone(),
        code_tokens: tokenize_code_with(&d.stripped_code, tokenizer).tokens,
        docstring: d.docstring_full.clone(),
        docstring_tokens: tokenize_nl(&d.docstring_short).tokens,
        sha: String::new(),
        partition: partition_for(repo, path, &d.func_name),
        extra: BTreeMap::new(),
    }
}

#[derive(Debug, Default)]
pub struct TreeExtraction {
    pub records: Vec<CodeRecord>,
    pub diagnostics: Vec<Diagnostic>,
    pub files: usize,
}

fn python_files(root: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files = Vec::new();
    let walker = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
    for entry in walker {
        let entry = entry.map_err(|e| PipelineError::new(ErrorClass::Environment, format!("walking {}: {e}", root.display())))?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|x| x == "py") {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

fn rel_path(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Repo label for a local tree: its directory name.
pub fn tree_repo_name(root: &Path) -> String {
    fs::canonicalize(root)
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "local".into())
}

/// Walks `.py` files in name order. Unreadable or unscannable files become
/// diagnostics; the rest are extracted.
pub fn extract_tree(root: &Path, repo: &str, cfg: &ExtractConfig) -> Result<TreeExtraction, PipelineError> {
    if !root.is_dir() {
        return Err(PipelineError::new(ErrorClass::Environment, format!("{} is not a readable directory", root.display())));
    }
    let mut out = TreeExtraction::default();
    for file in python_files(root)? {
        out.files += 1;
        let rel = rel_path(root, &file);
        let bytes = match fs::read(&file) {
            Ok(b) => b,
            Err(e) => {
                out.diagnostics.push(Diagnostic {
                    path: rel,
                    line: 0,
                    message: format!("unreadable: {e}"),
                });
                continue;
            }
        };
        let extraction = decode_source(&bytes).and_then(|text| extract_functions_with(text, &rel, cfg));
        match extraction {
            Ok(x) => {
                out.records
                    .extend(x.functions.iter().map(|d| record_from_function(repo, &rel, d, cfg.tokenizer)));
                out.diagnostics.extend(x.diagnostics);
            }
            Err(e) => out.diagnostics.push(Diagnostic {
                path: rel,
                line: match e {
                    crate::extractor::ExtractError::UnterminatedString { line } => line,
                    _ => 0,
                },
                message: format!("skipped: {e}"),
            }),
        }
    }
    Ok(out)
}

/// Re-derives `code`, `code_tokens` and `docstring_tokens` of existing
/// records from their `original_string`. Records that fail to scan are kept
/// unchanged and reported.
pub fn reprocess_records(records: Vec<CodeRecord>, cfg: &ExtractConfig) -> (Vec<CodeRecord>, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let out = records
        .into_iter()
        .map(|r| match extract_functions_with(&r.original_string, &r.path, cfg) {
            Ok(x) if !x.functions.is_empty() => {
                let d = &x.functions[0];
                CodeRecord {
                    code: d.code.clone(),
                    code_tokens: tokenize_code_with(&d.stripped_code, cfg.tokenizer).tokens,
                    docstring: d.docstring_full.clone(),
                    docstring_tokens: tokenize_nl(&d.docstring_short).tokens,
                    ..r
                }
            }
            other => {
                let why = match other {
                    Err(e) => e.to_string(),
                    _ => "no function definition found".into(),
                };
                diags.push(Diagnostic {
                    path: r.path.clone(),
                    line: 0,
                    message: format!("{}: kept as-is ({why})", r.func_name),
                });
                r
            }
        })
        .collect();
    (out, diags)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    NativeNbow,
    Tfidf,
    Bridge,
}

/// Flat run configuration, stored as one JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// A directory of `.py` files or a corpus JSONL file.
    pub input: PathBuf,
    /// Commit cache; enrichment is skipped when absent.
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub offline: bool,
    pub api_base_url: String,
    pub token_env: String,
    pub max_requests_per_hour: u32,
    pub scenario: ScenarioId,
    pub seed: u64,
    pub max_tokens: usize,
    pub split_identifiers: bool,
    pub backend: Backend,
    pub bridge_cmd: Option<String>,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Momentum coefficient; 0 means plain SGD.
    pub momentum: f64,
    pub temperature: f64,
    pub margin_offset: f64,
    pub min_frequency: usize,
    pub n_distractors: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let e = EnrichmentConfig::new("");
        Self {
            input: PathBuf::new(),
            cache_dir: None,
            output_dir: PathBuf::from("run"),
            offline: true,
            api_base_url: e.api_base_url,
            token_env: e.token_env,
            max_requests_per_hour: e.max_requests_per_hour,
            scenario: ScenarioId::DEFAULT,
            seed: t.seed,
            max_tokens: ScenarioConfig::default().max_tokens,
            split_identifiers: false,
            backend: Backend::NativeNbow,
            bridge_cmd: None,
            dim: t.dim,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.lr,
            momentum: 0.0,
            temperature: t.temperature,
            margin_offset: t.margin_offset,
            min_frequency: t.min_frequency,
            n_distractors: crate::eval::DEFAULT_DISTRACTORS,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| PipelineError::new(ErrorClass::Data, format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_relative_to(base);
        Ok(cfg)
    }

    /// Relative paths in a config file are taken relative to that file.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        fix(&mut self.output_dir);
        if let Some(c) = &mut self.cache_dir {
            fix(c);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.learning_rate,
            optimizer: if self.momentum > 0.0 {
                Optimizer::Momentum { beta: self.momentum }
            } else {
                Optimizer::Sgd
            },
            temperature: self.temperature,
            margin_offset: self.margin_offset,
            min_frequency: self.min_frequency,
            seed: self.seed,
        }
    }

    pub fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig {
            split_identifiers: self.split_identifiers,
        }
    }

    pub fn enrichment_config(&self, cache_dir: &Path) -> EnrichmentConfig {
        let mut e = EnrichmentConfig::new(cache_dir);
        e.offline = self.offline;
        e.api_base_url = self.api_base_url.clone();
        e.token_env = self.token_env.clone();
        e.max_requests_per_hour = self.max_requests_per_hour;
        e.with_token_from_env()
    }

    /// Checks paths and values before any stage runs.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let usage = |m: String| Err(PipelineError::new(ErrorClass::Usage, m));
        if self.input.as_os_str().is_empty() {
            return usage("config.input is required".into());
        }
        if !self.input.exists() {
            return Err(PipelineError::new(ErrorClass::Environment, format!("input {} does not exist", self.input.display())));
        }
        if self.output_dir.as_os_str().is_empty() {
            return usage("config.output_dir is required".into());
        }
        if self.max_tokens == 0 {
            return usage("max_tokens must be positive".into());
        }
        if self.backend == Backend::Bridge && self.bridge_cmd.as_deref().is_none_or(str::is_empty) {
            return usage("backend bridge needs bridge_cmd".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return usage("momentum must lie in [0, 1)".into());
        }
        if self.max_requests_per_hour == 0 {
            return usage("max_requests_per_hour must be positive".into());
        }
        self.train_config()
            .validate()
            .map_err(|e| PipelineError::new(ErrorClass::Usage, e.to_string()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| io_err(path, e))?))
}

/// Hash over every regular file below `root` (relative path and content), in name order.
pub fn hash_tree(root: &Path, filter: impl Fn(&Path) -> bool) -> Result<String, PipelineError> {
    let mut h = Sha256::new();
    if root.is_dir() {
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| PipelineError::new(ErrorClass::Environment, e.to_string()))?;
            if entry.file_type().is_file() && filter(entry.path()) {
                let bytes = fs::read(entry.path()).map_err(|e| io_err(entry.path(), e))?;
                h.update(rel_path(root, entry.path()).as_bytes());
                h.update([0]);
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
        }
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub config: String,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Manifest {
        fs::read_to_string(dir.join(MANIFEST_FILE))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct ReplaySummary {
    pub stages: Vec<(&'static str, StageStatus)>,
    pub reports: Vec<ReportLine>,
    pub diagnostics: Vec<Diagnostic>,
    pub rejections: Option<RejectionSummary>,
}

impl ReplaySummary {
    pub fn status(&self, stage: &str) -> Option<StageStatus> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, st)| *st)
    }
}

fn config_hash(value: serde_json::Value) -> String {
    sha256_hex(value.to_string().as_bytes())
}

struct Run<'a> {
    dir: &'a Path,
    manifest: Manifest,
    summary: ReplaySummary,
}

impl Run<'_> {
    /// Runs `body` unless the manifest shows identical inputs, config and outputs.
    fn stage(
        &mut self,
        name: &'static str,
        inputs: BTreeMap<String, String>,
        config: String,
        outputs: &[&str],
        body: impl FnOnce(&mut ReplaySummary) -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        let fresh = self.manifest.stages.get(name).is_some_and(|rec| {
            rec.inputs == inputs
                && rec.config == config
                && outputs.iter().all(|o| {
                    let p = self.dir.join(o);
                    rec.outputs.get(*o).is_some_and(|h| hash_file(&p).is_ok_and(|cur| &cur == h))
                })
        });
        if fresh {
            self.summary.stages.push((name, StageStatus::Skipped));
            return Ok(());
        }
        body(&mut self.summary).map_err(|e| e.at(name))?;
        let mut hashes = BTreeMap::new();
        for o in outputs {
            hashes.insert(o.to_string(), hash_file(&self.dir.join(o)).map_err(|e| e.at(name))?);
        }
        self.manifest.stages.insert(
            name.to_string(),
            StageRecord {
                inputs,
                config,
                outputs: hashes,
            },
        );
        self.manifest.save(self.dir).map_err(|e| e.at(name))?;
        self.summary.stages.push((name, StageStatus::Ran));
        Ok(())
    }

    fn hash(&self, file: &str) -> Result<String, PipelineError> {
        hash_file(&self.dir.join(file))
    }
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>, PipelineError> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn data(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::new(ErrorClass::Data, e.to_string())
}

fn load_acs(path: &Path) -> Result<Vec<AugmentedRecord>, PipelineError> {
    Ok(read_corpus_strict(path, None)?
        .into_iter()
        .map(AugmentedRecord::from_code_record)
        .collect())
}

fn split(records: &[AugmentedRecord], p: Partition) -> Vec<AugmentedRecord> {
    records.iter().filter(|r| r.partition == p).cloned().collect()
}

/// Runs (or resumes) the full pipeline into `cfg.output_dir`.
pub fn replay(cfg: &PipelineConfig) -> Result<ReplaySummary, PipelineError> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut run = Run {
        dir,
        manifest: Manifest::load(dir),
        summary: ReplaySummary {
            stages: Vec::new(),
            reports: Vec::new(),
            diagnostics: Vec::new(),
            rejections: None,
        },
    };
    let extract_cfg = ExtractConfig {
        tokenizer: cfg.tokenizer(),
        ..ExtractConfig::default()
    };

    // extract
    let from_corpus = is_corpus_file(&cfg.input);
    let input_hash = if from_corpus {
        hash_file(&cfg.input)?
    } else {
        hash_tree(&cfg.input, |p| p.extension().is_some_and(|x| x == "py"))?
    };
    let repo = tree_repo_name(&cfg.input);
    run.stage(
        "extract",
        BTreeMap::from([("input".into(), input_hash)]),
        config_hash(serde_json::json!({
            "from_corpus": from_corpus,
            "repo": repo,
            "split_identifiers": cfg.split_identifiers,
            "max_function_lines": extract_cfg.max_function_lines,
        })),
        &[CORPUS_FILE],
        |summary| {
            let records = if from_corpus {
                let (records, diags) = reprocess_records(read_corpus_strict(&cfg.input, None)?, &extract_cfg);
                summary.diagnostics.extend(diags);
                records
            } else {
                let t = extract_tree(&cfg.input, &repo, &extract_cfg)?;
                summary.diagnostics.extend(t.diagnostics);
                t.records
            };
            let path = dir.join(CORPUS_FILE);
            let mut f = create_file(&path)?;
            write_records(&records, &mut f).and_then(|_| f.flush()).map_err(|e| io_err(&path, e))
        },
    )?;

    // enrich
    let cache_hash = match &cfg.cache_dir {
        Some(c) => hash_tree(c, |p| p.extension().is_some_and(|x| x == "json"))?,
        None => String::new(),
    };
    let corpus_hash = run.hash(CORPUS_FILE)?;
    let enrich_config = config_hash(serde_json::json!({
        "cache_dir": cfg.cache_dir,
        "offline": cfg.offline,
        "api_base_url": cfg.api_base_url,
    }));
    let mut enrich_inputs = BTreeMap::from([("corpus".to_string(), corpus_hash.clone()), ("cache".to_string(), cache_hash)]);
    run.stage("enrich", enrich_inputs.clone(), enrich_config.clone(), &[COMMITS_FILE], |_| {
        let path = dir.join(COMMITS_FILE);
        let mut f = create_file(&path)?;
        if let Some(cache) = &cfg.cache_dir {
            let fetcher = CommitFetcher::new(cfg.enrichment_config(cache)).map_err(|e| PipelineError::new(ErrorClass::Environment, e.to_string()))?;
            let enriched = enrich_corpus(read_corpus_strict(&dir.join(CORPUS_FILE), None)?, &fetcher);
            write_commits(enriched.commits().values(), &mut f).map_err(|e| io_err(&path, e))?;
        }
        f.flush().map_err(|e| io_err(&path, e))
    })?;
    // Fetching changes the cache; record its post-run state so an unchanged rerun skips.
    if run.summary.status("enrich") == Some(StageStatus::Ran) {
        if let Some(c) = &cfg.cache_dir {
            enrich_inputs.insert("cache".into(), hash_tree(c, |p| p.extension().is_some_and(|x| x == "json"))?);
            if let Some(rec) = run.manifest.stages.get_mut("enrich") {
                rec.inputs = enrich_inputs;
            }
            run.manifest.save(dir)?;
        }
    }

    // build-acs
    let scenario_cfg = ScenarioConfig {
        max_tokens: cfg.max_tokens,
        tokenizer: cfg.tokenizer(),
    };
    let acs_inputs = BTreeMap::from([("corpus".to_string(), corpus_hash), ("commits".to_string(), run.hash(COMMITS_FILE)?)]);
    run.stage(
        "build-acs",
        acs_inputs,
        config_hash(serde_json::json!({
            "scenario": cfg.scenario,
            "max_tokens": cfg.max_tokens,
            "split_identifiers": cfg.split_identifiers,
        })),
        &[ACS_FILE],
        |summary| {
            let corpus = read_corpus_strict(&dir.join(CORPUS_FILE), None)?;
            let commits = read_commits(&dir.join(COMMITS_FILE)).map_err(data)?;
            let dataset = if commits.is_empty() {
                build_dataset(&corpus, cfg.scenario, &NoCommits, &scenario_cfg)
            } else {
                build_dataset(&corpus, cfg.scenario, &commits, &scenario_cfg)
            };
            summary.rejections = Some(dataset.summary);
            let path = dir.join(ACS_FILE);
            let mut f = create_file(&path)?;
            let rows: Vec<CodeRecord> = dataset.records.iter().map(AugmentedRecord::to_code_record).collect();
            write_records(&rows, &mut f).and_then(|_| f.flush()).map_err(|e| io_err(&path, e))
        },
    )?;

    // train
    let acs_hash = run.hash(ACS_FILE)?;
    let train_outputs: &[&str] = if cfg.backend == Backend::NativeNbow { &[MODEL_FILE, TRAIN_LOG_FILE] } else { &[] };
    run.stage(
        "train",
        BTreeMap::from([("acs".to_string(), acs_hash.clone())]),
        config_hash(serde_json::json!({"backend": cfg.backend, "train": cfg.train_config()})),
        train_outputs,
        |_| {
            if cfg.backend != Backend::NativeNbow {
                return Ok(());
            }
            let records = load_acs(&dir.join(ACS_FILE))?;
            let tr = split(&records, Partition::Train);
            let va = split(&records, Partition::Valid);
            let outcome = train(&pairs_of(&tr), &pairs_of(&va), &cfg.train_config()).map_err(data)?;
            let model_path = dir.join(MODEL_FILE);
            model_file::save(&outcome.model, &model_path).map_err(|e| PipelineError::new(ErrorClass::Environment, e.to_string()))?;
            let log_path = dir.join(TRAIN_LOG_FILE);
            let mut f = create_file(&log_path)?;
            for s in &outcome.trace {
                serde_json::to_writer(&mut f, s).map_err(|e| io_err(&log_path, e.into()))?;
                f.write_all(b"\n").map_err(|e| io_err(&log_path, e))?;
            }
            f.flush().map_err(|e| io_err(&log_path, e))
        },
    )?;

    // eval
    let mut eval_inputs = BTreeMap::from([("acs".to_string(), acs_hash)]);
    if cfg.backend == Backend::NativeNbow {
        eval_inputs.insert("model".into(), run.hash(MODEL_FILE)?);
    }
    run.stage(
        "eval",
        eval_inputs,
        config_hash(serde_json::json!({
            "backend": cfg.backend,
            "bridge_cmd": cfg.bridge_cmd,
            "n_distractors": cfg.n_distractors,
            "seed": cfg.seed,
        })),
        &[REPORT_FILE, REPORT_TABLE_FILE],
        |summary| {
            let records = load_acs(&dir.join(ACS_FILE))?;
            let test = split(&records, Partition::Test);
            if test.len() < 2 {
                return Err(data(format!("test partition has {} pairs; need at least 2", test.len())));
            }
            let reports = evaluate(cfg, dir, &records, &test)?;
            write_reports(&reports, &dir.join(REPORT_FILE)).map_err(|e| io_err(&dir.join(REPORT_FILE), e))?;
            fs::write(dir.join(REPORT_TABLE_FILE), render_table(&reports)).map_err(|e| io_err(&dir.join(REPORT_TABLE_FILE), e))?;
            summary.reports = reports;
            Ok(())
        },
    )?;
    if run.summary.reports.is_empty() {
        let text = fs::read_to_string(dir.join(REPORT_FILE)).map_err(|e| io_err(&dir.join(REPORT_FILE), e))?;
        run.summary.reports = text
            .lines()
            .map(|l| serde_json::from_str(l).map_err(data))
            .collect::<Result<_, _>>()?;
    }
    Ok(run.summary)
}

/// Builds the configured scorer. TF-IDF is fitted on the whole ACS dataset.
pub fn open_scorer(cfg: &PipelineConfig, model_path: &Path, records: &[AugmentedRecord]) -> Result<Box<dyn Scorer>, PipelineError> {
    Ok(match cfg.backend {
        Backend::NativeNbow => Box::new(load_model(model_path)?),
        Backend::Tfidf => Box::new(tfidf_baseline(records)),
        Backend::Bridge => {
            let mut b = BridgeConfig::new(cfg.bridge_cmd.clone().unwrap_or_default());
            b.handshake_timeout = Duration::from_secs(60);
            Box::new(BridgeScorer::spawn(b).map_err(|e| PipelineError::new(ErrorClass::Environment, e.to_string()))?)
        }
    })
}

pub fn load_model(path: &Path) -> Result<RetrievalModel, PipelineError> {
    model_file::load(path).map_err(|e| match e {
        crate::engine::EngineError::Io(io) => io_err(path, io),
        other => data(format!("{}: {other}", path.display())),
    })
}

fn evaluate(cfg: &PipelineConfig, dir: &Path, all: &[AugmentedRecord], test: &[AugmentedRecord]) -> Result<Vec<ReportLine>, PipelineError> {
    let scorer = open_scorer(cfg, &dir.join(MODEL_FILE), all)?;
    let eval_err = |e: crate::eval::EvalError| match e {
        crate::eval::EvalError::Score(crate::engine::ScoreError::Transient(_)) => PipelineError::new(ErrorClass::Environment, e.to_string()),
        other => data(other),
    };
    let n_distractors = cfg.n_distractors.min(test.len() - 1);
    let retrieval = distractor_eval(scorer.as_ref(), test, n_distractors, cfg.seed).map_err(eval_err)?;
    let micro = micro_match(scorer.as_ref(), test).map_err(eval_err)?;
    Ok(vec![ReportLine::Retrieval(retrieval), ReportLine::MicroMatch(micro)])
}

/// Artifact hashes of a finished run directory.
pub fn artifact_hashes(dir: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    for name in [CORPUS_FILE, COMMITS_FILE, ACS_FILE, MODEL_FILE, TRAIN_LOG_FILE, REPORT_FILE, REPORT_TABLE_FILE, MANIFEST_FILE] {
        let p = dir.join(name);
        if p.is_file() {
            out.insert(name.to_string(), hash_file(&p)?);
        }
    }
    Ok(out)
}
