//! JSONL ingestion of exported post dumps.

use std::collections::HashSet;
use std::io::BufRead;

use cgt_core::corpus::{PostKind, RawPost};
use cgt_core::digest::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A line that could not be ingested. Lines are numbered from 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub posts: Vec<RawPost>,
    pub rejects: Vec<Reject>,
    /// Lines dropped because their id was already seen.
    pub duplicates: usize,
}

#[derive(Deserialize)]
struct Record {
    id: String,
    #[serde(default)]
    subreddit: String,
    #[serde(default)]
    author_hash: Option<String>,
    #[serde(default)]
    author: Option<String>,
    #[serde(default)]
    created_utc: Option<f64>,
    kind: PostKind,
    #[serde(default)]
    parent_id: Option<String>,
    text: String,
}

/// Pseudonymizes an author name. Empty names stay empty.
pub fn hash_author(salt: &str, author: &str) -> String {
    if author.is_empty() {
        return String::new();
    }
    let mut buf = Vec::with_capacity(salt.len() + author.len() + 1);
    buf.extend_from_slice(salt.as_bytes());
    buf.push(0);
    buf.extend_from_slice(author.as_bytes());
    sha256_hex(&buf)[..16].to_string()
}

/// Reads one record per line. Malformed lines are reported and skipped,
/// later duplicates of an id are dropped, and every author field is replaced
/// by its salted hash. Blank lines are ignored.
pub fn ingest_jsonl<R: BufRead>(reader: R, salt: &str) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    let mut non_blank = 0;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Ingest(format!("line {line_no}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        non_blank += 1;
        match parse_line(&line, salt) {
            Ok(post) => {
                if seen.insert(post.id.clone()) {
                    report.posts.push(post);
                } else {
                    report.duplicates += 1;
                }
            }
            Err(reason) => report.rejects.push(Reject { line: line_no, reason }),
        }
    }
    if non_blank > 0 && report.posts.is_empty() {
        return Err(Error::Ingest(format!("all {non_blank} lines rejected; first: line {}: {}", report.rejects[0].line, report.rejects[0].reason)));
    }
    Ok(report)
}

fn parse_line(line: &str, salt: &str) -> Result<RawPost, String> {
    let r: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if r.id.is_empty() {
        return Err("empty id".into());
    }
    if r.kind == PostKind::Comment && r.parent_id.as_deref().is_none_or(str::is_empty) {
        return Err(format!("comment {} has no parent_id", r.id));
    }
    let author = r.author.or(r.author_hash).unwrap_or_default();
    Ok(RawPost {
        id: r.id,
        subreddit: r.subreddit,
        author_ref: hash_author(salt, &author),
        created_utc: r.created_utc.unwrap_or(0.0) as i64,
        kind: r.kind,
        parent_id: r.parent_id.filter(|p| !p.is_empty()),
        text: r.text,
    })
}

/// Writes posts as JSONL in the input record schema.
pub fn write_posts<W: std::io::Write>(mut out: W, posts: &[RawPost]) -> std::io::Result<()> {
    for p in posts {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads posts previously written by [`write_posts`]; no hashing is applied.
pub fn read_posts<R: BufRead>(reader: R) -> Result<Vec<RawPost>> {
    let mut posts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Ingest(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        posts.push(serde_json::from_str(&line).map_err(|e| Error::Ingest(format!("line {}: {e}", i + 1)))?);
    }
    Ok(posts)
}
