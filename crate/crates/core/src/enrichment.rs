//! Commit-message enrichment over the GitHub REST API.
//!
//! Each (repo, sha) lookup goes through a per-key JSON cache file under
//! `cache_dir/<repo-sanitized>/<sha>.json`. A 404 is cached as a negative
//! entry. Transient failures are not cached.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::corpus::{is_valid_sha, CodeRecord, CommitMessage};
use crate::scenario::CommitLookup;

pub const DEFAULT_API_BASE: &str = "https://api.github.com";
pub const DEFAULT_TOKEN_ENV: &str = "GITHUB_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum EnrichmentError {
    #[error("cache directory {path}: {source}")]
    CacheDir { path: PathBuf, source: io::Error },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("commits file {path}: {message}")]
    CommitsFile { path: PathBuf, message: String },
}

#[derive(Clone)]
pub struct EnrichmentConfig {
    pub api_base_url: String,
    /// Read from the environment variable named by `token_env`.
    pub auth_token: Option<String>,
    pub token_env: String,
    pub cache_dir: PathBuf,
    pub offline: bool,
    pub max_requests_per_hour: u32,
    pub request_timeout: Duration,
    pub workers: usize,
    /// Width of the rate-limit window; one hour unless a test shrinks it.
    pub rate_window: Duration,
}

impl std::fmt::Debug for EnrichmentConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnrichmentConfig")
            .field("api_base_url", &self.api_base_url)
            .field("auth_token", &self.auth_token.as_ref().map(|_| "<redacted>"))
            .field("token_env", &self.token_env)
            .field("cache_dir", &self.cache_dir)
            .field("offline", &self.offline)
            .field("max_requests_per_hour", &self.max_requests_per_hour)
            .field("request_timeout", &self.request_timeout)
            .field("workers", &self.workers)
            .finish()
    }
}

impl EnrichmentConfig {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            api_base_url: DEFAULT_API_BASE.into(),
            auth_token: None,
            token_env: DEFAULT_TOKEN_ENV.into(),
            cache_dir: cache_dir.into(),
            offline: false,
            max_requests_per_hour: 5000,
            request_timeout: Duration::from_secs(30),
            workers: 4,
            rate_window: Duration::from_secs(3600),
        }
    }

    /// Fills `auth_token` from the configured environment variable.
    pub fn with_token_from_env(mut self) -> Self {
        self.auth_token = std::env::var(&self.token_env).ok().filter(|t| !t.is_empty());
        self
    }

    pub fn validate(&self) -> Result<(), EnrichmentError> {
        if self.max_requests_per_hour == 0 {
            return Err(EnrichmentError::InvalidConfig("max_requests_per_hour must be > 0".into()));
        }
        if self.workers == 0 {
            return Err(EnrichmentError::InvalidConfig("workers must be > 0".into()));
        }
        if !self.offline && !self.api_base_url.starts_with("http://") && !self.api_base_url.starts_with("https://") {
            return Err(EnrichmentError::InvalidConfig(format!("api_base_url {:?} is not http(s)", self.api_base_url)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    HitCache,
    Fetched,
    NotFound,
    SkippedNoSha,
    Error,
}

impl OutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::HitCache => "hit_cache",
            Self::Fetched => "fetched",
            Self::NotFound => "not_found",
            Self::SkippedNoSha => "skipped_no_sha",
            Self::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchError {
    OfflineMiss,
    RateLimited { retry_after_secs: Option<u64> },
    Transient(String),
    Protocol(String),
    Http(u16),
    InvalidInput(String),
}

impl std::fmt::Display for FetchError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::OfflineMiss => write!(f, "offline_miss"),
            Self::RateLimited {
                retry_after_secs: Some(s),
            } => write!(f, "rate_limited (retry after {s}s)"),
            Self::RateLimited { retry_after_secs: None } => write!(f, "rate_limited"),
            Self::Transient(m) => write!(f, "transient: {m}"),
            Self::Protocol(m) => write!(f, "protocol: {m}"),
            Self::Http(s) => write!(f, "http status {s}"),
            Self::InvalidInput(m) => write!(f, "invalid input: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    HitCache,
    Fetched,
    NotFound,
    SkippedNoSha,
    Error(FetchError),
}

impl Outcome {
    pub fn kind(&self) -> OutcomeKind {
        match self {
            Self::HitCache => OutcomeKind::HitCache,
            Self::Fetched => OutcomeKind::Fetched,
            Self::NotFound => OutcomeKind::NotFound,
            Self::SkippedNoSha => OutcomeKind::SkippedNoSha,
            Self::Error(_) => OutcomeKind::Error,
        }
    }
}

/// `message` is `Some` exactly for `HitCache` and `Fetched`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrichmentResult {
    pub repo: String,
    pub sha: String,
    pub outcome: Outcome,
    pub message: Option<String>,
    pub fetched_at: Option<u64>,
}

impl EnrichmentResult {
    fn bare(repo: &str, sha: &str, outcome: Outcome) -> Self {
        Self {
            repo: repo.into(),
            sha: sha.into(),
            outcome,
            message: None,
            fetched_at: None,
        }
    }

    pub fn commit(&self) -> Option<CommitMessage> {
        self.message.as_ref().map(|m| CommitMessage {
            repo: self.repo.clone(),
            sha: self.sha.clone(),
            message: m.clone(),
            fetched_at: self.fetched_at.unwrap_or(0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachedOutcome {
    Fetched,
    NotFound,
}

/// On-disk cache entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub repo: String,
    pub sha: String,
    pub outcome: CachedOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub fetched_at: u64,
}

/// `owner/name` becomes `owner__name`; anything outside `[A-Za-z0-9._-]` maps to `_`.
pub fn sanitize_repo(repo: &str) -> String {
    repo.replace('/', "__")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

pub fn is_valid_repo(repo: &str) -> bool {
    let mut parts = repo.split('/');
    let ok = |p: Option<&str>| {
        p.is_some_and(|p| !p.is_empty() && p != "." && p != ".." && p.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-')))
    };
    ok(parts.next()) && ok(parts.next()) && parts.next().is_none()
}

/// File cache keyed by (repo, sha).
#[derive(Debug, Clone)]
pub struct CommitCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl CommitCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, EnrichmentError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| EnrichmentError::CacheDir { path: dir.clone(), source })?;
        Ok(Self { dir })
    }

    /// Opens without creating; lookups on a missing directory simply miss.
    pub fn at(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, repo: &str, sha: &str) -> PathBuf {
        self.dir.join(sanitize_repo(repo)).join(format!("{}.json", sha.to_ascii_lowercase()))
    }

    /// Unreadable or corrupt entries count as misses.
    pub fn get(&self, repo: &str, sha: &str) -> Option<CacheEntry> {
        let text = fs::read_to_string(self.entry_path(repo, sha)).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        let consistent = match entry.outcome {
            CachedOutcome::Fetched => entry.message.is_some(),
            CachedOutcome::NotFound => entry.message.is_none(),
        };
        (consistent && entry.repo == repo && entry.sha.eq_ignore_ascii_case(sha)).then_some(entry)
    }

    pub fn put(&self, entry: &CacheEntry) -> io::Result<()> {
        let path = self.entry_path(&entry.repo, &entry.sha);
        let parent = path.parent().expect("entry path has a parent");
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(
            ".{}.{}.{}.tmp",
            entry.sha,
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let write = || -> io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer_pretty(&mut f, entry)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })
    }
}

impl CommitLookup for CommitCache {
    fn lookup(&self, repo: &str, sha: &str) -> Option<CommitMessage> {
        let e = self.get(repo, sha)?;
        Some(CommitMessage {
            repo: e.repo,
            sha: e.sha,
            message: e.message?,
            fetched_at: e.fetched_at,
        })
    }
}

/// At most `limit` requests in any window of width `window`.
///
/// A slot stays occupied while its request is in flight and for `window`
/// after it completes, so the cap holds for send and arrival times alike.
#[derive(Debug)]
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    next_id: u64,
    slots: VecDeque<(u64, Option<Instant>)>,
}

impl RateLimiter {
    pub fn new(limit: u32, window: Duration) -> Self {
        Self {
            limit: limit.max(1) as usize,
            window,
            next_id: 0,
            slots: VecDeque::new(),
        }
    }

    /// A slot id if the window has room, else how long to wait before retrying.
    pub fn try_acquire(&mut self, now: Instant) -> Result<u64, Duration> {
        let window = self.window;
        self.slots
            .retain(|(_, done)| !done.is_some_and(|t| now.duration_since(t) >= window));
        if self.slots.len() < self.limit {
            let id = self.next_id;
            self.next_id += 1;
            self.slots.push_back((id, None));
            return Ok(id);
        }
        let wait = self
            .slots
            .iter()
            .filter_map(|(_, done)| *done)
            .map(|t| window.saturating_sub(now.duration_since(t)))
            .min()
            .unwrap_or(Duration::from_millis(10));
        Err(wait)
    }

    pub fn complete(&mut self, id: u64, now: Instant) {
        if let Some(slot) = self.slots.iter_mut().find(|(i, _)| *i == id) {
            slot.1 = Some(now);
        }
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn is_loopback(url: &str) -> bool {
    let rest = url.split_once("://").map_or(url, |(_, r)| r);
    if rest.starts_with("[::1]") {
        return true;
    }
    let host = rest.split(['/', ':']).next().unwrap_or("");
    host == "localhost" || host.starts_with("127.")
}

/// Shared fetch state: one cache, one rate limiter, one HTTP agent.
pub struct CommitFetcher {
    cfg: EnrichmentConfig,
    cache: CommitCache,
    limiter: Mutex<RateLimiter>,
    agent: Option<ureq::Agent>,
    network_calls: AtomicUsize,
}

impl CommitFetcher {
    pub fn new(cfg: EnrichmentConfig) -> Result<Self, EnrichmentError> {
        cfg.validate()?;
        let cache = CommitCache::open(&cfg.cache_dir)?;
        let agent = (!cfg.offline).then(|| {
            let mut b = ureq::Agent::config_builder()
                .timeout_global(Some(cfg.request_timeout))
                .http_status_as_error(false)
                .user_agent("augcode/0.1");
            if is_loopback(&cfg.api_base_url) {
                b = b.proxy(None);
            }
            b.build().into()
        });
        Ok(Self {
            limiter: Mutex::new(RateLimiter::new(cfg.max_requests_per_hour, cfg.rate_window)),
            cfg,
            cache,
            agent,
            network_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EnrichmentConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &CommitCache {
        &self.cache
    }

    /// HTTP requests issued so far.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn acquire(&self) -> u64 {
        loop {
            let wait = {
                let mut l = self.limiter.lock().expect("limiter lock");
                match l.try_acquire(Instant::now()) {
                    Ok(id) => return id,
                    Err(w) => w,
                }
            };
            thread::sleep(wait.max(Duration::from_millis(1)));
        }
    }

    pub fn fetch(&self, repo: &str, sha: &str) -> EnrichmentResult {
        if sha.is_empty() {
            return EnrichmentResult::bare(repo, sha, Outcome::SkippedNoSha);
        }
        if !is_valid_repo(repo) {
            return EnrichmentResult::bare(repo, sha, Outcome::Error(FetchError::InvalidInput(format!("repo {repo:?} is not owner/name"))));
        }
        if !is_valid_sha(sha) {
            return EnrichmentResult::bare(repo, sha, Outcome::Error(FetchError::InvalidInput(format!("sha {sha:?} is not 40 hex chars"))));
        }
        if let Some(entry) = self.cache.get(repo, sha) {
            return match entry.outcome {
                CachedOutcome::Fetched => EnrichmentResult {
                    repo: repo.into(),
                    sha: sha.into(),
                    outcome: Outcome::HitCache,
                    message: entry.message,
                    fetched_at: Some(entry.fetched_at),
                },
                CachedOutcome::NotFound => EnrichmentResult::bare(repo, sha, Outcome::NotFound),
            };
        }
        let Some(agent) = &self.agent else {
            return EnrichmentResult::bare(repo, sha, Outcome::Error(FetchError::OfflineMiss));
        };
        let slot = self.acquire();
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let fetched = request(agent, &self.cfg, repo, sha);
        self.limiter.lock().expect("limiter lock").complete(slot, Instant::now());
        let fetched_at = now_unix();
        let (outcome, message) = match fetched {
            Ok(Some(message)) => (Outcome::Fetched, Some(message)),
            Ok(None) => (Outcome::NotFound, None),
            Err(e) => return EnrichmentResult::bare(repo, sha, Outcome::Error(e)),
        };
        let entry = CacheEntry {
            repo: repo.into(),
            sha: sha.to_ascii_lowercase(),
            outcome: if message.is_some() { CachedOutcome::Fetched } else { CachedOutcome::NotFound },
            message: message.clone(),
            fetched_at,
        };
        if let Err(e) = self.cache.put(&entry) {
            return EnrichmentResult::bare(repo, sha, Outcome::Error(FetchError::Transient(format!("cache write: {e}"))));
        }
        EnrichmentResult {
            repo: repo.into(),
            sha: sha.into(),
            outcome,
            message,
            fetched_at: Some(fetched_at),
        }
    }
}

#[derive(Deserialize)]
struct CommitBody {
    commit: CommitInner,
}

#[derive(Deserialize)]
struct CommitInner {
    message: String,
}

fn header<'a>(resp: &'a ureq::http::Response<ureq::Body>, name: &str) -> Option<&'a str> {
    resp.headers().get(name).and_then(|v| v.to_str().ok())
}

/// `Ok(None)` means the commit does not exist.
fn request(agent: &ureq::Agent, cfg: &EnrichmentConfig, repo: &str, sha: &str) -> Result<Option<String>, FetchError> {
    let url = format!("{}/repos/{}/commits/{}", cfg.api_base_url.trim_end_matches('/'), repo, sha);
    let mut req = agent.get(&url).header("Accept", "application/vnd.github+json");
    if let Some(token) = &cfg.auth_token {
        req = req.header("Authorization", format!("Bearer {token}"));
    }
    let mut resp = req.call().map_err(|e| FetchError::Transient(e.to_string()))?;
    let status = resp.status().as_u16();
    match status {
        200 => {
            let body = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| FetchError::Transient(format!("reading body: {e}")))?;
            let parsed: CommitBody =
                serde_json::from_str(&body).map_err(|e| FetchError::Protocol(format!("commit body: {e}")))?;
            Ok(Some(parsed.commit.message))
        }
        404 => Ok(None),
        403 | 429 => {
            let remaining = header(&resp, "x-ratelimit-remaining");
            let retry_after = header(&resp, "retry-after").and_then(|v| v.trim().parse::<u64>().ok());
            let reset = header(&resp, "x-ratelimit-reset").and_then(|v| v.trim().parse::<u64>().ok());
            if status == 429 || remaining == Some("0") || retry_after.is_some() {
                let retry_after_secs = retry_after.or_else(|| reset.map(|r| r.saturating_sub(now_unix())));
                Err(FetchError::RateLimited { retry_after_secs })
            } else {
                Err(FetchError::Http(status))
            }
        }
        500..=599 => Err(FetchError::Transient(format!("server status {status}"))),
        other => Err(FetchError::Http(other)),
    }
}

/// Convenience wrapper that builds a one-off fetcher.
pub fn fetch_commit_message(repo: &str, sha: &str, cfg: &EnrichmentConfig) -> Result<EnrichmentResult, EnrichmentError> {
    Ok(CommitFetcher::new(cfg.clone())?.fetch(repo, sha))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnrichmentSummary {
    /// Per-record outcome counts; they sum to `records`.
    pub counts: BTreeMap<OutcomeKind, usize>,
    pub records: usize,
    pub unique_keys: usize,
    pub network_calls: usize,
}

impl EnrichmentSummary {
    pub fn count(&self, kind: OutcomeKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }
}

impl std::fmt::Display for EnrichmentSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "records={} unique={} network_calls={}", self.records, self.unique_keys, self.network_calls)?;
        for (k, n) in &self.counts {
            write!(f, " {}={}", k.as_str(), n)?;
        }
        Ok(())
    }
}

pub struct EnrichedRecord {
    pub record: CodeRecord,
    pub commit: Option<CommitMessage>,
    pub result: EnrichmentResult,
}

pub struct Enriched {
    pub records: Vec<EnrichedRecord>,
    pub summary: EnrichmentSummary,
}

impl Enriched {
    /// Distinct commit messages sorted by (repo, sha).
    pub fn commits(&self) -> BTreeMap<(String, String), CommitMessage> {
        self.records
            .iter()
            .filter_map(|r| r.commit.clone())
            .map(|c| ((c.repo.clone(), c.sha.clone()), c))
            .collect()
    }
}

/// Looks up every record, fetching each distinct (repo, sha) once.
pub fn enrich_corpus<I>(records: I, fetcher: &CommitFetcher) -> Enriched
where
    I: IntoIterator<Item = CodeRecord>,
{
    let records: Vec<CodeRecord> = records.into_iter().collect();
    let calls_before = fetcher.network_calls();
    let mut slot: HashMap<(String, String), usize> = HashMap::new();
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in &records {
        if r.sha.is_empty() {
            continue;
        }
        let key = (r.repo.clone(), r.sha.to_ascii_lowercase());
        slot.entry(key.clone()).or_insert_with(|| {
            keys.push(key);
            keys.len() - 1
        });
    }

    let results: Vec<Mutex<Option<EnrichmentResult>>> = keys.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = fetcher.cfg.workers.min(keys.len()).max(1);
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((repo, sha)) = keys.get(i) else { break };
                let res = fetcher.fetch(repo, sha);
                *results[i].lock().expect("result slot") = Some(res);
            });
        }
    });
    let results: Vec<EnrichmentResult> = results
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every key fetched"))
        .collect();

    let mut summary = EnrichmentSummary {
        records: records.len(),
        unique_keys: keys.len(),
        ..EnrichmentSummary::default()
    };
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        let result = if record.sha.is_empty() {
            EnrichmentResult::bare(&record.repo, "", Outcome::SkippedNoSha)
        } else {
            let mut r = results[slot[&(record.repo.clone(), record.sha.to_ascii_lowercase())]].clone();
            r.sha = record.sha.clone();
            r
        };
        *summary.counts.entry(result.outcome.kind()).or_default() += 1;
        out.push(EnrichedRecord {
            commit: result.commit(),
            result,
            record,
        });
    }
    summary.network_calls = fetcher.network_calls() - calls_before;
    Enriched { records: out, summary }
}

#[derive(Serialize, Deserialize)]
struct CommitLine {
    repo: String,
    sha: String,
    message: String,
}

/// Writes commit messages as JSON lines without fetch timestamps.
pub fn write_commits<'a, I, W>(commits: I, mut out: W) -> io::Result<usize>
where
    I: IntoIterator<Item = &'a CommitMessage>,
    W: Write,
{
    let mut n = 0;
    for c in commits {
        let line = CommitLine {
            repo: c.repo.clone(),
            sha: c.sha.clone(),
            message: c.message.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

pub fn read_commits(path: &Path) -> Result<BTreeMap<(String, String), CommitMessage>, EnrichmentError> {
    let err = |message: String| EnrichmentError::CommitsFile {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: CommitLine = serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
        out.insert(
            (c.repo.clone(), c.sha.clone()),
            CommitMessage {
                repo: c.repo,
                sha: c.sha,
                message: c.message,
                fetched_at: 0,
            },
        );
    }
    Ok(out)
}
