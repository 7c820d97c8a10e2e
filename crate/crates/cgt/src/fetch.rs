//! Unauthenticated fetcher for public subreddit JSON listings.
//!
//! Requests go through a [`Transport`] so tests can replay recorded pages,
//! and every pause goes through a [`Sleeper`].

use std::time::Duration;

use cgt_core::corpus::{PostKind, RawPost};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ingest::hash_author;
use crate::{Error, NetworkError, Result};

pub const DEFAULT_USER_AGENT: &str = "cgt-workbench/0.1 (research corpus builder)";
pub const MIN_DELAY: Duration = Duration::from_secs(1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchConfig {
    pub base_url: String,
    pub user_agent: String,
    /// Pause before every request after the first; at least one second.
    pub delay_ms: u64,
    /// Retries for rate-limited or failed requests.
    pub max_retries: u32,
    pub page_size: usize,
    pub salt: String,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig {
            base_url: "https://www.reddit.com".into(),
            user_agent: DEFAULT_USER_AGENT.into(),
            delay_ms: 2000,
            max_retries: 3,
            page_size: 100,
            salt: String::new(),
        }
    }
}

impl FetchConfig {
    fn delay(&self) -> Duration {
        Duration::from_millis(self.delay_ms).max(MIN_DELAY)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait Transport {
    /// Issues a GET. `Err` is a transport failure with no HTTP status.
    fn get(&self, url: &str, user_agent: &str) -> std::result::Result<HttpResponse, String>;
}

pub trait Sleeper {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(Duration::from_secs(30))).build();
        UreqTransport { agent: ureq::Agent::new_with_config(config) }
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str, user_agent: &str) -> std::result::Result<HttpResponse, String> {
        let mut resp = self.agent.get(url).header("User-Agent", user_agent).call().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

fn listing_url(config: &FetchConfig, subreddit: &str, after: Option<&str>) -> String {
    let mut url = format!("{}/r/{}/new.json?limit={}", config.base_url.trim_end_matches('/'), subreddit, config.page_size);
    if let Some(a) = after {
        url.push_str("&after=");
        url.push_str(a);
    }
    url
}

/// Fetches up to `page_limit` pages of the subreddit's newest listing,
/// following `after` cursors, and normalizes each child into a [`RawPost`].
/// Rate-limited (429) and server-error responses are retried with
/// exponential backoff; other failures end the fetch with a [`NetworkError`].
pub fn fetch_public_listing(subreddit: &str, page_limit: usize, config: &FetchConfig, transport: &dyn Transport, sleeper: &dyn Sleeper) -> Result<Vec<RawPost>> {
    if subreddit.trim().is_empty() || !subreddit.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(Error::invalid("subreddit", "must be a non-empty name of letters, digits and underscores"));
    }
    let mut posts = Vec::new();
    let mut after: Option<String> = None;
    let mut first = true;
    for _ in 0..page_limit {
        let url = listing_url(config, subreddit, after.as_deref());
        if !first {
            sleeper.sleep(config.delay());
        }
        first = false;
        let body = get_with_retries(&url, config, transport, sleeper)?;
        let page: Value = serde_json::from_str(&body).map_err(|e| network_error(&url, 0, None, format!("malformed listing: {e}")))?;
        let data = &page["data"];
        let children = data["children"].as_array().ok_or_else(|| network_error(&url, 0, None, "listing has no children array"))?;
        for child in children {
            if let Some(p) = normalize(child, &config.salt) {
                posts.push(p);
            }
        }
        match data["after"].as_str() {
            Some(a) if !a.is_empty() => after = Some(a.to_string()),
            _ => break,
        }
    }
    Ok(posts)
}

fn network_error(endpoint: &str, retries: u32, status: Option<u16>, reason: impl Into<String>) -> Error {
    Error::Network(NetworkError { endpoint: endpoint.to_string(), retries, status, reason: reason.into() })
}

fn get_with_retries(url: &str, config: &FetchConfig, transport: &dyn Transport, sleeper: &dyn Sleeper) -> Result<String> {
    let mut attempt = 0;
    loop {
        let (retryable, status, reason) = match transport.get(url, &config.user_agent) {
            Ok(r) if (200..300).contains(&r.status) => return Ok(r.body),
            Ok(r) => (r.status == 429 || r.status >= 500, Some(r.status), format!("HTTP {}", r.status)),
            Err(e) => (true, None, e),
        };
        if !retryable || attempt >= config.max_retries {
            return Err(network_error(url, attempt, status, reason));
        }
        sleeper.sleep(config.delay() * 2u32.pow(attempt + 1));
        attempt += 1;
    }
}

fn normalize(child: &Value, salt: &str) -> Option<RawPost> {
    let kind = match child["kind"].as_str()? {
        "t3" => PostKind::Post,
        "t1" => PostKind::Comment,
        _ => return None,
    };
    let d = &child["data"];
    let id = d["id"].as_str().filter(|s| !s.is_empty())?.to_string();
    let text = match kind {
        PostKind::Post => {
            let title = d["title"].as_str().unwrap_or("");
            let body = d["selftext"].as_str().unwrap_or("");
            if body.is_empty() { title.to_string() } else { format!("{title}\n\n{body}") }
        }
        PostKind::Comment => d["body"].as_str().unwrap_or("").to_string(),
    };
    let parent_id = d["parent_id"].as_str().map(str::to_string);
    if kind == PostKind::Comment && parent_id.is_none() {
        return None;
    }
    Some(RawPost {
        id,
        subreddit: d["subreddit"].as_str().unwrap_or("").to_string(),
        author_ref: hash_author(salt, d["author"].as_str().unwrap_or("")),
        created_utc: d["created_utc"].as_f64().unwrap_or(0.0) as i64,
        kind,
        parent_id,
        text,
    })
}
