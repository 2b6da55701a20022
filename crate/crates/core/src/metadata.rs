//! Repository star count and last-push time, from a REST endpoint or offline fixtures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetadataError {
    #[error("malformed repository name {0:?}, expected owner/name")]
    BadRepo(String),
    #[error("repository {0} not found")]
    NotFound(String),
    #[error("rate limited fetching {repo}; retry after {retry_after_secs}s")]
    RateLimited { repo: String, retry_after_secs: u64 },
    #[error("network error fetching {repo}: {message}")]
    Network { repo: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoMetadata {
    pub repo: String,
    pub stars: u64,
    pub pushed_at: DateTime<Utc>,
}

/// Accepts both our own cache shape and the hosting API's field names.
#[derive(Deserialize)]
struct WireMetadata {
    #[serde(alias = "stargazers_count")]
    stars: u64,
    pushed_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetadataConfig {
    pub base_url: String,
    pub token_env: String,
    /// Read `<dir>/<owner>/<name>.json` instead of the network.
    pub offline_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub max_retries: u32,
    /// Upper bound on any single rate-limit or backoff sleep.
    pub max_wait_secs: u64,
    pub timeout_secs: u64,
    pub concurrency: usize,
}

impl Default for MetadataConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.github.com".into(),
            token_env: "GITHUB_TOKEN".into(),
            offline_dir: None,
            cache_dir: None,
            max_retries: 3,
            max_wait_secs: 60,
            timeout_secs: 30,
            concurrency: 4,
        }
    }
}

fn split_repo(repo: &str) -> Result<(&str, &str), MetadataError> {
    let bad = || MetadataError::BadRepo(repo.to_string());
    let (owner, name) = repo.split_once('/').ok_or_else(bad)?;
    let ok = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && s != "..";
    if ok(owner) && ok(name) {
        Ok((owner, name))
    } else {
        Err(bad())
    }
}

pub struct MetadataClient {
    cfg: MetadataConfig,
    agent: ureq::Agent,
    requests: AtomicUsize,
    cache_lock: Mutex<()>,
}

enum Attempt {
    Done(Result<RepoMetadata, MetadataError>),
    Retry { wait_secs: u64, last: MetadataError },
}

impl MetadataClient {
    pub fn new(cfg: MetadataConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        Self { cfg, agent, requests: AtomicUsize::new(0), cache_lock: Mutex::new(()) }
    }

    /// HTTP requests issued so far (cache hits and fixtures don't count).
    pub fn network_requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn fetch(&self, repo: &str) -> Result<RepoMetadata, MetadataError> {
        let (owner, name) = split_repo(repo)?;
        if let Some(dir) = &self.cfg.offline_dir {
            let path = dir.join(owner).join(format!("{name}.json"));
            return read_metadata(&path, repo).ok_or_else(|| MetadataError::NotFound(repo.to_string()));
        }
        if let Some(hit) = self.cache_path(owner, name).and_then(|p| read_metadata(&p, repo)) {
            return Ok(hit);
        }
        let meta = self.fetch_live(repo, owner, name)?;
        self.store(owner, name, &meta);
        Ok(meta)
    }

    /// Fetches distinct repos with at most `concurrency` requests in flight.
    pub fn fetch_many(&self, repos: &[String]) -> BTreeMap<String, Result<RepoMetadata, MetadataError>> {
        let unique: Vec<&String> = repos.iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let next = AtomicUsize::new(0);
        let results = Mutex::new(BTreeMap::new());
        std::thread::scope(|s| {
            for _ in 0..self.cfg.concurrency.max(1).min(unique.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(repo) = unique.get(i) else { break };
                    let r = self.fetch(repo);
                    results.lock().unwrap().insert(repo.to_string(), r);
                });
            }
        });
        results.into_inner().unwrap()
    }

    fn cache_path(&self, owner: &str, name: &str) -> Option<PathBuf> {
        self.cfg.cache_dir.as_ref().map(|d| d.join(format!("{owner}__{name}.json")))
    }

    fn store(&self, owner: &str, name: &str, meta: &RepoMetadata) {
        let Some(path) = self.cache_path(owner, name) else { return };
        let _guard = self.cache_lock.lock().unwrap();
        // cache failures are not fatal; the next run refetches
        let _ = (|| -> std::io::Result<()> {
            fs::create_dir_all(path.parent().unwrap())?;
            let tmp = path.with_extension("json.tmp");
            fs::write(&tmp, serde_json::to_vec(meta)?)?;
            fs::rename(tmp, &path)
        })();
    }

    fn fetch_live(&self, repo: &str, owner: &str, name: &str) -> Result<RepoMetadata, MetadataError> {
        let url = format!("{}/repos/{owner}/{name}", self.cfg.base_url.trim_end_matches('/'));
        let token = std::env::var(&self.cfg.token_env).ok().filter(|t| !t.is_empty());
        let mut attempt = 0;
        loop {
            match self.attempt(repo, &url, token.as_deref()) {
                Attempt::Done(r) => return r,
                Attempt::Retry { wait_secs, last } => {
                    if attempt >= self.cfg.max_retries {
                        return Err(last);
                    }
                    attempt += 1;
                    std::thread::sleep(Duration::from_secs(wait_secs.min(self.cfg.max_wait_secs)));
                }
            }
        }
    }

    fn attempt(&self, repo: &str, url: &str, token: Option<&str>) -> Attempt {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut req = self
            .agent
            .get(url)
            .header("Accept", "application/vnd.github+json")
            .header("User-Agent", concat!("promptscope/", env!("CARGO_PKG_VERSION")));
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let network = |message: String| MetadataError::Network { repo: repo.to_string(), message };
        let mut resp = match req.call() {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Done(Err(network("timed out".into()))),
            Err(e) => return Attempt::Retry { wait_secs: 1, last: network(e.to_string()) },
        };
        let status = resp.status().as_u16();
        let header = |k: &str| resp.headers().get(k).and_then(|v| v.to_str().ok()).map(str::to_string);
        match status {
            200 => {
                let body = match resp.body_mut().read_to_string() {
                    Ok(b) => b,
                    Err(e) => return Attempt::Retry { wait_secs: 1, last: network(e.to_string()) },
                };
                Attempt::Done(
                    serde_json::from_str::<WireMetadata>(&body)
                        .map(|w| RepoMetadata { repo: repo.to_string(), stars: w.stars, pushed_at: w.pushed_at })
                        .map_err(|e| network(format!("unexpected response body: {e}"))),
                )
            }
            404 => Attempt::Done(Err(MetadataError::NotFound(repo.to_string()))),
            403 | 429
                if status == 429
                    || header("retry-after").is_some()
                    || header("x-ratelimit-remaining").as_deref() == Some("0") =>
            {
                let wait_secs = rate_limit_wait(header("retry-after"), header("x-ratelimit-reset"), Utc::now());
                Attempt::Retry {
                    wait_secs,
                    last: MetadataError::RateLimited { repo: repo.to_string(), retry_after_secs: wait_secs },
                }
            }
            s if s >= 500 => Attempt::Retry { wait_secs: 1, last: network(format!("HTTP {s}")) },
            s => Attempt::Done(Err(network(format!("HTTP {s}")))),
        }
    }
}

fn read_metadata(path: &Path, repo: &str) -> Option<RepoMetadata> {
    let raw = fs::read_to_string(path).ok()?;
    let w: WireMetadata = serde_json::from_str(&raw).ok()?;
    Some(RepoMetadata { repo: repo.to_string(), stars: w.stars, pushed_at: w.pushed_at })
}

/// Seconds to wait from `Retry-After` (seconds) or `X-RateLimit-Reset` (epoch seconds).
pub fn rate_limit_wait(retry_after: Option<String>, reset: Option<String>, now: DateTime<Utc>) -> u64 {
    if let Some(secs) = retry_after.and_then(|s| s.trim().parse::<u64>().ok()) {
        return secs;
    }
    reset.and_then(|s| s.trim().parse::<i64>().ok()).map(|epoch| (epoch - now.timestamp()).max(0) as u64).unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repo_names() {
        assert!(split_repo("acme/demo").is_ok());
        for bad in ["acme", "/demo", "acme/", "a/b/c", "../x", "a/.."] {
            assert!(split_repo(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn wait_computation() {
        let now: DateTime<Utc> = "2024-01-01T00:00:00Z".parse().unwrap();
        assert_eq!(rate_limit_wait(Some("7".into()), None, now), 7);
        let reset = (now.timestamp() + 30).to_string();
        assert_eq!(rate_limit_wait(None, Some(reset), now), 30);
        assert_eq!(rate_limit_wait(None, Some("0".into()), now), 0);
        assert_eq!(rate_limit_wait(None, None, now), 1);
    }

    #[test]
    fn offline_fixture() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("acme")).unwrap();
        fs::write(dir.path().join("acme/demo.json"), r#"{"stars":7,"pushed_at":"2024-01-01T00:00:00Z"}"#).unwrap();
        let c = MetadataClient::new(MetadataConfig { offline_dir: Some(dir.path().into()), ..Default::default() });
        assert_eq!(c.fetch("acme/demo").unwrap().stars, 7);
        assert_eq!(c.fetch("acme/other"), Err(MetadataError::NotFound("acme/other".into())));
        assert_eq!(c.network_requests(), 0);
    }
}
